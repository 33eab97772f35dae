//! Small arithmetic expression grammar used by run configurations.
//!
//! Model functions (flux `f`, diffusion `phi`, initial data `u0`, stationary
//! source `g`, mesh gradings) are given as strings over a fixed variable set,
//! e.g. `"u*(1-u)"` or `"0.8*step(x-0.3)*step(0.6-x)"`. The grammar is
//! deliberately tiny: `+ - * / ^`, parentheses, numeric literals, `pi`, and
//! the functions `max`, `min`, `abs`, `step`, `cos`, `sin`, `sqrt`.
//!
//! Two restrictions keep expressions analyzable:
//! - exponents must fold to constants (`u^2` is fine, `u^u` is rejected), so
//!   every expression has a closed-form one-sided derivative;
//! - parse depth is capped, so arbitrary input cannot overflow the stack.
//!
//! `step(y)` is 1 for y >= 0 and 0 otherwise; it exists so that piecewise
//! initial data like indicator bumps can be written directly. At kinks the
//! derivative convention is one-sided: `max`/`min` ties resolve to the first
//! argument, `abs` and `step` differentiate from the right.

use std::fmt;

use thiserror::Error;

/// Maximum nesting depth accepted by the parser.
pub const MAX_DEPTH: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdent { name: String, pos: usize },
    #[error("expression nested deeper than {MAX_DEPTH} levels")]
    TooDeep,
    #[error("exponent starting at byte {pos} does not fold to a constant")]
    NonConstantExponent { pos: usize },
    #[error("non-finite numeric literal at byte {pos}")]
    NonFiniteLiteral { pos: usize },
}

fn perr<T>(pos: usize, msg: impl Into<String>) -> Result<T, ExprError> {
    Err(ExprError::Parse { pos, msg: msg.into() })
}

/// Parsed expression over a fixed, ordered variable set.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Index into the variable list the expression was parsed with.
    Var(u8),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Base raised to a constant exponent.
    Pow(Box<Expr>, f64),
    Max(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Abs(Box<Expr>),
    Step(Box<Expr>),
    Cos(Box<Expr>),
    Sin(Box<Expr>),
    Sqrt(Box<Expr>),
}

impl Expr {
    /// Parses `src` with the given variable names (e.g. `&["u"]`, `&["x", "y"]`).
    pub fn parse(src: &str, vars: &[&str]) -> Result<Expr, ExprError> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens: &tokens, pos: 0, vars };
        let expr = p.expression(0)?;
        match p.peek() {
            (Tok::End, _) => Ok(expr),
            (_, at) => perr(at, "unexpected trailing input"),
        }
    }

    pub fn constant(value: f64) -> Expr {
        Expr::Const(value)
    }

    /// Evaluates with `vars[i]` bound to variable index `i`.
    ///
    /// Out-of-range variable indices cannot occur for parsed expressions; the
    /// slice must be at least as long as the variable set used at parse time.
    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => vars[*i as usize],
            Expr::Neg(a) => -a.eval(vars),
            Expr::Add(a, b) => a.eval(vars) + b.eval(vars),
            Expr::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Expr::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Expr::Div(a, b) => a.eval(vars) / b.eval(vars),
            Expr::Pow(a, n) => a.eval(vars).powf(*n),
            Expr::Max(a, b) => a.eval(vars).max(b.eval(vars)),
            Expr::Min(a, b) => a.eval(vars).min(b.eval(vars)),
            Expr::Abs(a) => a.eval(vars).abs(),
            Expr::Step(a) => {
                if a.eval(vars) >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Expr::Cos(a) => a.eval(vars).cos(),
            Expr::Sin(a) => a.eval(vars).sin(),
            Expr::Sqrt(a) => a.eval(vars).sqrt(),
        }
    }

    /// Folds to a constant if no variable occurs.
    pub fn fold_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            Expr::Var(_) => None,
            Expr::Neg(a) => Some(-a.fold_const()?),
            Expr::Add(a, b) => Some(a.fold_const()? + b.fold_const()?),
            Expr::Sub(a, b) => Some(a.fold_const()? - b.fold_const()?),
            Expr::Mul(a, b) => Some(a.fold_const()? * b.fold_const()?),
            Expr::Div(a, b) => Some(a.fold_const()? / b.fold_const()?),
            Expr::Pow(a, n) => Some(a.fold_const()?.powf(*n)),
            Expr::Max(a, b) => Some(a.fold_const()?.max(b.fold_const()?)),
            Expr::Min(a, b) => Some(a.fold_const()?.min(b.fold_const()?)),
            Expr::Abs(a) => Some(a.fold_const()?.abs()),
            Expr::Step(a) => Some(if a.fold_const()? >= 0.0 { 1.0 } else { 0.0 }),
            Expr::Cos(a) => Some(a.fold_const()?.cos()),
            Expr::Sin(a) => Some(a.fold_const()?.sin()),
            Expr::Sqrt(a) => Some(a.fold_const()?.sqrt()),
        }
    }

    /// One-sided derivative with respect to variable `var`.
    ///
    /// Kinks resolve as documented in the module header; in particular
    /// `max(u - c, 0)` has derivative 1 at `u = c`. `step` differentiates to
    /// zero, which is its almost-everywhere derivative.
    pub fn differentiate(&self, var: u8) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.differentiate(var)),
            Expr::Add(a, b) => add(a.differentiate(var), b.differentiate(var)),
            Expr::Sub(a, b) => sub(a.differentiate(var), b.differentiate(var)),
            Expr::Mul(a, b) => add(
                mul(a.differentiate(var), (**b).clone()),
                mul((**a).clone(), b.differentiate(var)),
            ),
            Expr::Div(a, b) => div(
                sub(
                    mul(a.differentiate(var), (**b).clone()),
                    mul((**a).clone(), b.differentiate(var)),
                ),
                Expr::Pow(b.clone(), 2.0),
            ),
            Expr::Pow(a, n) => {
                if *n == 0.0 {
                    Expr::Const(0.0)
                } else {
                    mul(
                        mul(Expr::Const(*n), Expr::Pow(a.clone(), n - 1.0)),
                        a.differentiate(var),
                    )
                }
            }
            // max/min tie -> first argument; expressed through step(a-b) which
            // is 1 at the tie.
            Expr::Max(a, b) => {
                let gate = Expr::Step(Box::new(sub((**a).clone(), (**b).clone())));
                select(gate, a.differentiate(var), b.differentiate(var))
            }
            Expr::Min(a, b) => {
                let gate = Expr::Step(Box::new(sub((**b).clone(), (**a).clone())));
                select(gate, a.differentiate(var), b.differentiate(var))
            }
            Expr::Abs(a) => {
                // 2*step(a) - 1 is +1 at a = 0 (right derivative).
                let sgn = sub(
                    mul(Expr::Const(2.0), Expr::Step(a.clone())),
                    Expr::Const(1.0),
                );
                mul(sgn, a.differentiate(var))
            }
            Expr::Step(_) => Expr::Const(0.0),
            Expr::Cos(a) => neg(mul(Expr::Sin(a.clone()), a.differentiate(var))),
            Expr::Sin(a) => mul(Expr::Cos(a.clone()), a.differentiate(var)),
            Expr::Sqrt(a) => div(
                a.differentiate(var),
                mul(Expr::Const(2.0), Expr::Sqrt(a.clone())),
            ),
        }
    }
}

// Smart constructors with trivial simplifications so derivative trees stay
// small; these are evaluated millions of times in the flux routines.

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 0.0)
}

fn is_one(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 1.0)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) {
        return b;
    }
    if is_zero(&b) {
        return a;
    }
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        return Expr::Const(x + y);
    }
    Expr::Add(Box::new(a), Box::new(b))
}

fn sub(a: Expr, b: Expr) -> Expr {
    if is_zero(&b) {
        return a;
    }
    if is_zero(&a) {
        return neg(b);
    }
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        return Expr::Const(x - y);
    }
    Expr::Sub(Box::new(a), Box::new(b))
}

fn mul(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) || is_zero(&b) {
        return Expr::Const(0.0);
    }
    if is_one(&a) {
        return b;
    }
    if is_one(&b) {
        return a;
    }
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        return Expr::Const(x * y);
    }
    Expr::Mul(Box::new(a), Box::new(b))
}

fn div(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) {
        return Expr::Const(0.0);
    }
    if is_one(&b) {
        return a;
    }
    Expr::Div(Box::new(a), Box::new(b))
}

/// `gate*da + (1-gate)*db` with `gate` in {0, 1}.
fn select(gate: Expr, da: Expr, db: Expr) -> Expr {
    if da == db {
        return da;
    }
    add(
        mul(gate.clone(), da),
        mul(sub(Expr::Const(1.0), gate), db),
    )
}

// ---------------------------------------------------------------------------
// Tokenizer and parser.

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                out.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                out.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                out.push((Tok::Slash, i));
                i += 1;
            }
            b'^' => {
                out.push((Tok::Caret, i));
                i += 1;
            }
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b',' => {
                out.push((Tok::Comma, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // Optional exponent part: e/E [+-] digits.
                if i < bytes.len()
                    && (bytes[i] == b'e' || bytes[i] == b'E')
                    && i + 1 < bytes.len()
                    && (bytes[i + 1].is_ascii_digit()
                        || ((bytes[i + 1] == b'+' || bytes[i + 1] == b'-')
                            && i + 2 < bytes.len()
                            && bytes[i + 2].is_ascii_digit()))
                {
                    i += 2;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let text = &src[start..i];
                let value: f64 = match text.parse() {
                    Ok(v) => v,
                    Err(_) => return perr(start, format!("bad numeric literal `{text}`")),
                };
                if !value.is_finite() {
                    return Err(ExprError::NonFiniteLiteral { pos: start });
                }
                out.push((Tok::Num(value), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                // Report the whole UTF-8 character, not a lone byte.
                let ch = src[i..].chars().next().unwrap_or('?');
                return perr(i, format!("unexpected character `{ch}`"));
            }
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [(Tok, usize)],
    pos: usize,
    vars: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> (Tok, usize) {
        self.tokens[self.pos.min(self.tokens.len() - 1)].clone()
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.peek();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ExprError> {
        let (t, at) = self.bump();
        if t == want {
            Ok(())
        } else {
            perr(at, format!("expected {what}"))
        }
    }

    fn expression(&mut self, depth: usize) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::TooDeep);
        }
        let mut lhs = self.term(depth + 1)?;
        loop {
            match self.peek().0 {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.term(depth + 1)?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.term(depth + 1)?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self, depth: usize) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::TooDeep);
        }
        let mut lhs = self.unary(depth + 1)?;
        loop {
            match self.peek().0 {
                Tok::Star => {
                    self.bump();
                    let rhs = self.unary(depth + 1)?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.unary(depth + 1)?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self, depth: usize) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::TooDeep);
        }
        if let (Tok::Minus, _) = self.peek() {
            self.bump();
            let inner = self.unary(depth + 1)?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power(depth + 1)
    }

    fn power(&mut self, depth: usize) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::TooDeep);
        }
        let base = self.primary(depth + 1)?;
        if let (Tok::Caret, _) = self.peek() {
            self.bump();
            let (_, exp_pos) = self.peek();
            // Exponent binds tighter than unary minus and is right-associated,
            // so `u^-2` and `u^2^3` both parse; it must fold to a constant.
            let exp_expr = self.unary(depth + 1)?;
            let exp_expr = if let (Tok::Caret, _) = self.peek() {
                // Re-parse chain: a^b^c == a^(b^c); b already consumed, so
                // fold the tail onto it.
                self.bump();
                let tail = self.unary(depth + 1)?;
                let tail = tail
                    .fold_const()
                    .ok_or(ExprError::NonConstantExponent { pos: exp_pos })?;
                Expr::Pow(Box::new(exp_expr), tail)
            } else {
                exp_expr
            };
            let n = exp_expr
                .fold_const()
                .ok_or(ExprError::NonConstantExponent { pos: exp_pos })?;
            if !n.is_finite() {
                return Err(ExprError::NonFiniteLiteral { pos: exp_pos });
            }
            return Ok(Expr::Pow(Box::new(base), n));
        }
        Ok(base)
    }

    fn primary(&mut self, depth: usize) -> Result<Expr, ExprError> {
        if depth > MAX_DEPTH {
            return Err(ExprError::TooDeep);
        }
        let (tok, at) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let inner = self.expression(depth + 1)?;
                self.expect(Tok::RParen, "closing `)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let (Tok::LParen, _) = self.peek() {
                    self.bump();
                    self.call(&name, at, depth + 1)
                } else if name == "pi" {
                    Ok(Expr::Const(std::f64::consts::PI))
                } else if let Some(idx) = self.vars.iter().position(|v| *v == name) {
                    Ok(Expr::Var(idx as u8))
                } else {
                    Err(ExprError::UnknownIdent { name, pos: at })
                }
            }
            Tok::End => perr(at, "unexpected end of input"),
            other => perr(at, format!("unexpected token {other:?}")),
        }
    }

    fn call(&mut self, name: &str, at: usize, depth: usize) -> Result<Expr, ExprError> {
        let two_arg = |p: &mut Self| -> Result<(Box<Expr>, Box<Expr>), ExprError> {
            let a = p.expression(depth + 1)?;
            p.expect(Tok::Comma, "`,` between arguments")?;
            let b = p.expression(depth + 1)?;
            p.expect(Tok::RParen, "closing `)`")?;
            Ok((Box::new(a), Box::new(b)))
        };
        let one_arg = |p: &mut Self| -> Result<Box<Expr>, ExprError> {
            let a = p.expression(depth + 1)?;
            p.expect(Tok::RParen, "closing `)`")?;
            Ok(Box::new(a))
        };
        match name {
            "max" => {
                let (a, b) = two_arg(self)?;
                Ok(Expr::Max(a, b))
            }
            "min" => {
                let (a, b) = two_arg(self)?;
                Ok(Expr::Min(a, b))
            }
            "abs" => Ok(Expr::Abs(one_arg(self)?)),
            "step" => Ok(Expr::Step(one_arg(self)?)),
            "cos" => Ok(Expr::Cos(one_arg(self)?)),
            "sin" => Ok(Expr::Sin(one_arg(self)?)),
            "sqrt" => Ok(Expr::Sqrt(one_arg(self)?)),
            _ => Err(ExprError::UnknownIdent { name: name.to_string(), pos: at }),
        }
    }
}

// ---------------------------------------------------------------------------
// Display: parenthesized just enough to re-parse to the same tree.

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    fn fmt_child(&self, child: &Expr, min_prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if child.precedence() < min_prec {
            write!(f, "({child})")
        } else {
            write!(f, "{child}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(i) => write!(f, "${i}"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                self.fmt_child(a, 3, f)
            }
            Expr::Add(a, b) => {
                self.fmt_child(a, 1, f)?;
                write!(f, " + ")?;
                self.fmt_child(b, 2, f)
            }
            Expr::Sub(a, b) => {
                self.fmt_child(a, 1, f)?;
                write!(f, " - ")?;
                self.fmt_child(b, 2, f)
            }
            Expr::Mul(a, b) => {
                self.fmt_child(a, 2, f)?;
                write!(f, "*")?;
                self.fmt_child(b, 3, f)
            }
            Expr::Div(a, b) => {
                self.fmt_child(a, 2, f)?;
                write!(f, "/")?;
                self.fmt_child(b, 3, f)
            }
            Expr::Pow(a, n) => {
                self.fmt_child(a, 5, f)?;
                if *n < 0.0 {
                    write!(f, "^({n})")
                } else {
                    write!(f, "^{n}")
                }
            }
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Abs(a) => write!(f, "abs({a})"),
            Expr::Step(a) => write!(f, "step({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
        }
    }
}

/// Renders an expression with variable indices substituted by names, suitable
/// for echoing into manifests.
pub fn render(expr: &Expr, vars: &[&str]) -> String {
    let raw = expr.to_string();
    let mut out = raw;
    for (i, name) in vars.iter().enumerate() {
        out = out.replace(&format!("${i}"), name);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(src: &str) -> Expr {
        Expr::parse(src, &["u"]).unwrap()
    }

    fn ev(src: &str, u: f64) -> f64 {
        p(src).eval(&[u])
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("1+2*3", 0.0), 7.0);
        assert_eq!(ev("(1+2)*3", 0.0), 9.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0); // right associative
        assert_eq!(ev("-u^2", 3.0), -9.0); // unary minus binds looser than ^
        assert_eq!(ev("6/3/2", 0.0), 1.0);
        assert_eq!(ev("1-2-3", 0.0), -4.0);
        assert_eq!(ev("u^-1", 4.0), 0.25);
    }

    #[test]
    fn model_expressions() {
        assert_eq!(ev("u*(1-u)", 0.6), 0.6 * 0.4);
        assert_eq!(ev("u^2/2", 0.5), 0.125);
        assert_eq!(ev("max(u-0.6, 0)", 0.8), 0.8 - 0.6);
        assert_eq!(ev("max(u-0.6, 0)", 0.4), 0.0);
        let u0 = Expr::parse("0.8*step(x-0.3)*step(0.6-x)", &["x"]).unwrap();
        assert_eq!(u0.eval(&[0.45]), 0.8);
        assert_eq!(u0.eval(&[0.2]), 0.0);
        assert_eq!(u0.eval(&[0.3]), 0.8); // step(0) = 1: both edges included
        assert_eq!(u0.eval(&[0.6]), 0.8);
        let cosine = Expr::parse("0.5 + 0.4*cos(pi*x)", &["x"]).unwrap();
        assert!((cosine.eval(&[0.0]) - 0.9).abs() < 1e-15);
        assert!((cosine.eval(&[1.0]) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn derivative_values() {
        let f = p("u*(1-u)");
        let df = f.differentiate(0);
        for u in [0.0, 0.25, 0.5, 1.0] {
            assert!((df.eval(&[u]) - (1.0 - 2.0 * u)).abs() < 1e-15);
        }
        let g = p("u^2/2");
        let dg = g.differentiate(0);
        assert_eq!(dg.eval(&[0.7]), 0.7);
    }

    #[test]
    fn kink_derivatives_are_one_sided() {
        // (u - 0.6)^+ written with max(expr, 0): derivative at the kink is the
        // first-argument branch, i.e. the right derivative 1.
        let phi = p("max(u-0.6, 0)");
        let dphi = phi.differentiate(0);
        assert_eq!(dphi.eval(&[0.6]), 1.0);
        assert_eq!(dphi.eval(&[0.59]), 0.0);
        assert_eq!(dphi.eval(&[0.61]), 1.0);
        // abs at zero takes the right derivative.
        let a = p("abs(u)");
        assert_eq!(a.differentiate(0).eval(&[0.0]), 1.0);
        // min ties also resolve to the first argument.
        let m = p("min(2*u, u)");
        assert_eq!(m.differentiate(0).eval(&[0.0]), 2.0);
    }

    #[test]
    fn parse_errors_are_reported_not_panicked() {
        for bad in [
            "", "((", "1+", "u u", "max(u)", "min(u,)", "foo(u)", "0.5 + y",
            "1e999", "u^v", "2..5", "#", ")", "u^(u)",
        ] {
            let r = Expr::parse(bad, &["u", "v"]);
            assert!(r.is_err(), "expected error for {bad:?}");
        }
        // Non-constant exponent is its own error kind.
        assert!(matches!(
            Expr::parse("u^u", &["u"]),
            Err(ExprError::NonConstantExponent { .. })
        ));
    }

    #[test]
    fn deep_nesting_is_rejected() {
        let deep = format!("{}u{}", "(".repeat(5000), ")".repeat(5000));
        assert_eq!(Expr::parse(&deep, &["u"]), Err(ExprError::TooDeep));
        // Long but shallow chains parse fine.
        let chain = vec!["u"; 4000].join("+");
        assert!(Expr::parse(&chain, &["u"]).is_ok());
    }

    #[test]
    fn display_roundtrip() {
        for src in [
            "u*(1-u)",
            "u^2/2",
            "max(u-0.6, 0)",
            "-u^2 + 3*(u - 1/(u+2))",
            "min(max(u, 0), 1)",
            "cos(pi*u) - sin(u)^2",
            "sqrt(abs(u))",
            "u^-2",
        ] {
            let e = p(src);
            let shown = render(&e, &["u"]);
            let reparsed = Expr::parse(&shown, &["u"]).unwrap();
            assert_eq!(e, reparsed, "roundtrip failed: {src} -> {shown}");
        }
    }
}
