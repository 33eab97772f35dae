//! Admissible meshes: 1D intervals (optionally graded) and uniform 2D
//! rectangle grids.
//!
//! A mesh is a set of control volumes together with the inner faces between
//! them and the faces on the domain boundary. Each inner face sigma between
//! volumes K and L carries its measure m(sigma), the center distance
//! d(x_K, x_L), and the transmissivity tau = m(sigma)/d used by the two-point
//! diffusion flux. Inner faces are oriented: `minus` is the volume on the
//! negative side along the face axis, `plus` on the positive side.
//!
//! Zero-flux problems never attach unknowns to boundary faces; they are kept
//! for diagnostics (boundary integrals) only.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh must have at least 2 volumes per direction, got {n}")]
    InvalidSize { n: usize },
    #[error("invalid domain extent: {msg}")]
    InvalidExtent { msg: String },
    #[error("invalid grading map: {msg}")]
    InvalidGrading { msg: String },
    #[error("point ({0}, {1}) lies outside the domain", point[0], point[1])]
    OutOfDomain { point: [f64; 2] },
}

/// Control volume: center, Lebesgue measure, diameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub center: [f64; 2],
    pub measure: f64,
    pub diameter: f64,
}

/// Face between two volumes, oriented from `minus` to `plus` along `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerFace {
    pub minus: usize,
    pub plus: usize,
    pub measure: f64,
    /// Distance between the two cell centers.
    pub distance: f64,
    /// m(sigma) / d(x_K, x_L).
    pub transmissivity: f64,
    /// 0 for x-normal faces, 1 for y-normal faces.
    pub axis: u8,
    pub midpoint: [f64; 2],
}

/// Face on the domain boundary with outward unit normal.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFace {
    pub volume: usize,
    pub measure: f64,
    pub normal: [f64; 2],
    pub midpoint: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Geometry {
    Interval { edges: Vec<f64> },
    Rect { nx: usize, ny: usize, dx: f64, dy: f64, lx: f64, ly: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub(crate) dim: u8,
    pub(crate) volumes: Vec<Volume>,
    pub(crate) inner: Vec<InnerFace>,
    pub(crate) boundary: Vec<BoundaryFace>,
    /// Per volume: (inner face index, +1 if the volume is the minus side).
    pub(crate) vol_faces: Vec<Vec<(usize, f64)>>,
    pub(crate) h: f64,
    pub(crate) geometry: Geometry,
}

impl Mesh {
    /// 1D mesh on (a, b) with n volumes.
    ///
    /// `grading` maps [0, 1] onto [0, 1]; edge i sits at a + (b-a)*g(i/n).
    /// It must be strictly increasing with g(0) = 0 and g(1) = 1 (within
    /// 1e-12; the first and last edges are pinned to a and b exactly).
    pub fn interval(
        a: f64,
        b: f64,
        n: usize,
        grading: Option<&dyn Fn(f64) -> f64>,
    ) -> Result<Mesh, MeshError> {
        if n < 2 {
            return Err(MeshError::InvalidSize { n });
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(MeshError::InvalidExtent {
                msg: format!("need finite a < b, got a = {a}, b = {b}"),
            });
        }
        let mut edges = Vec::with_capacity(n + 1);
        match grading {
            None => {
                for i in 0..=n {
                    edges.push(a + (b - a) * (i as f64) / (n as f64));
                }
            }
            Some(g) => {
                let g0 = g(0.0);
                let g1 = g(1.0);
                if !(g0.abs() <= 1e-12 && (g1 - 1.0).abs() <= 1e-12) {
                    return Err(MeshError::InvalidGrading {
                        msg: format!("requires g(0) = 0 and g(1) = 1, got {g0} and {g1}"),
                    });
                }
                for i in 0..=n {
                    let s = (i as f64) / (n as f64);
                    let t = g(s);
                    if !t.is_finite() {
                        return Err(MeshError::InvalidGrading {
                            msg: format!("g({s}) is not finite"),
                        });
                    }
                    edges.push(a + (b - a) * t);
                }
                edges[0] = a;
                edges[n] = b;
                for i in 0..n {
                    if edges[i + 1] <= edges[i] {
                        return Err(MeshError::InvalidGrading {
                            msg: format!(
                                "not strictly increasing between edges {i} and {}",
                                i + 1
                            ),
                        });
                    }
                }
            }
        }

        let mut volumes = Vec::with_capacity(n);
        for i in 0..n {
            let w = edges[i + 1] - edges[i];
            volumes.push(Volume {
                center: [(edges[i] + edges[i + 1]) / 2.0, 0.0],
                measure: w,
                diameter: w,
            });
        }
        let mut inner = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let d = volumes[i + 1].center[0] - volumes[i].center[0];
            inner.push(InnerFace {
                minus: i,
                plus: i + 1,
                measure: 1.0,
                distance: d,
                transmissivity: 1.0 / d,
                axis: 0,
                midpoint: [edges[i + 1], 0.0],
            });
        }
        let boundary = vec![
            BoundaryFace { volume: 0, measure: 1.0, normal: [-1.0, 0.0], midpoint: [a, 0.0] },
            BoundaryFace { volume: n - 1, measure: 1.0, normal: [1.0, 0.0], midpoint: [b, 0.0] },
        ];
        let h = volumes.iter().map(|v| v.diameter).fold(0.0, f64::max);
        Ok(Mesh::assemble(1, volumes, inner, boundary, h, Geometry::Interval { edges }))
    }

    /// Uniform rectangle grid on (0, lx) x (0, ly) with nx * ny volumes.
    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Mesh, MeshError> {
        if nx < 2 {
            return Err(MeshError::InvalidSize { n: nx });
        }
        if ny < 2 {
            return Err(MeshError::InvalidSize { n: ny });
        }
        if !(lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0) {
            return Err(MeshError::InvalidExtent {
                msg: format!("need positive extents, got lx = {lx}, ly = {ly}"),
            });
        }
        let dx = lx / nx as f64;
        let dy = ly / ny as f64;
        let idx = |i: usize, j: usize| j * nx + i;
        let mut volumes = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                volumes.push(Volume {
                    center: [(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy],
                    measure: dx * dy,
                    diameter: dx.hypot(dy),
                });
            }
        }
        let mut inner = Vec::new();
        for j in 0..ny {
            for i in 0..nx - 1 {
                inner.push(InnerFace {
                    minus: idx(i, j),
                    plus: idx(i + 1, j),
                    measure: dy,
                    distance: dx,
                    transmissivity: dy / dx,
                    axis: 0,
                    midpoint: [(i as f64 + 1.0) * dx, (j as f64 + 0.5) * dy],
                });
            }
        }
        for j in 0..ny - 1 {
            for i in 0..nx {
                inner.push(InnerFace {
                    minus: idx(i, j),
                    plus: idx(i, j + 1),
                    measure: dx,
                    distance: dy,
                    transmissivity: dx / dy,
                    axis: 1,
                    midpoint: [(i as f64 + 0.5) * dx, (j as f64 + 1.0) * dy],
                });
            }
        }
        let mut boundary = Vec::new();
        for j in 0..ny {
            let y = (j as f64 + 0.5) * dy;
            boundary.push(BoundaryFace {
                volume: idx(0, j),
                measure: dy,
                normal: [-1.0, 0.0],
                midpoint: [0.0, y],
            });
            boundary.push(BoundaryFace {
                volume: idx(nx - 1, j),
                measure: dy,
                normal: [1.0, 0.0],
                midpoint: [lx, y],
            });
        }
        for i in 0..nx {
            let x = (i as f64 + 0.5) * dx;
            boundary.push(BoundaryFace {
                volume: idx(i, 0),
                measure: dx,
                normal: [0.0, -1.0],
                midpoint: [x, 0.0],
            });
            boundary.push(BoundaryFace {
                volume: idx(i, ny - 1),
                measure: dx,
                normal: [0.0, 1.0],
                midpoint: [x, ly],
            });
        }
        let h = dx.hypot(dy);
        Ok(Mesh::assemble(
            2,
            volumes,
            inner,
            boundary,
            h,
            Geometry::Rect { nx, ny, dx, dy, lx, ly },
        ))
    }

    pub(crate) fn assemble(
        dim: u8,
        volumes: Vec<Volume>,
        inner: Vec<InnerFace>,
        boundary: Vec<BoundaryFace>,
        h: f64,
        geometry: Geometry,
    ) -> Mesh {
        let mut vol_faces = vec![Vec::new(); volumes.len()];
        for (s, face) in inner.iter().enumerate() {
            vol_faces[face.minus].push((s, 1.0));
            vol_faces[face.plus].push((s, -1.0));
        }
        Mesh { dim, volumes, inner, boundary, vol_faces, h, geometry }
    }

    pub fn dim(&self) -> u8 {
        self.dim
    }

    pub fn n_volumes(&self) -> usize {
        self.volumes.len()
    }

    pub fn volumes(&self) -> &[Volume] {
        &self.volumes
    }

    pub fn inner_faces(&self) -> &[InnerFace] {
        &self.inner
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary
    }

    /// Inner faces incident to volume k with their orientation signs.
    pub fn faces_of(&self, k: usize) -> &[(usize, f64)] {
        &self.vol_faces[k]
    }

    /// Largest volume diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn total_measure(&self) -> f64 {
        self.volumes.iter().map(|v| v.measure).sum()
    }

    /// Axis-aligned bounds of volume k as (lower corner, upper corner).
    /// The second coordinate is zero for interval meshes.
    pub fn cell_bounds(&self, k: usize) -> ([f64; 2], [f64; 2]) {
        match &self.geometry {
            Geometry::Interval { edges } => ([edges[k], 0.0], [edges[k + 1], 0.0]),
            Geometry::Rect { nx, dx, dy, .. } => {
                let i = k % nx;
                let j = k / nx;
                (
                    [i as f64 * dx, j as f64 * dy],
                    [(i + 1) as f64 * dx, (j + 1) as f64 * dy],
                )
            }
        }
    }

    /// 1D cell edges (None for 2D meshes).
    pub fn edges(&self) -> Option<&[f64]> {
        match &self.geometry {
            Geometry::Interval { edges } => Some(edges),
            Geometry::Rect { .. } => None,
        }
    }

    /// Index of the volume containing the point. Cells own their lower edges;
    /// the domain's upper boundary belongs to the last cell.
    pub fn locate(&self, p: [f64; 2]) -> Result<usize, MeshError> {
        match &self.geometry {
            Geometry::Interval { edges } => {
                let (a, b) = (edges[0], edges[edges.len() - 1]);
                let x = p[0];
                if !(x.is_finite() && x >= a && x <= b) {
                    return Err(MeshError::OutOfDomain { point: p });
                }
                if x == b {
                    return Ok(self.volumes.len() - 1);
                }
                // First edge strictly above x, minus one.
                let k = edges.partition_point(|e| *e <= x);
                Ok(k - 1)
            }
            Geometry::Rect { nx, ny, dx, dy, lx, ly } => {
                let (x, y) = (p[0], p[1]);
                if !(x.is_finite() && y.is_finite() && x >= 0.0 && x <= *lx && y >= 0.0 && y <= *ly)
                {
                    return Err(MeshError::OutOfDomain { point: p });
                }
                let i = ((x / dx) as usize).min(nx - 1);
                let j = ((y / dy) as usize).min(ny - 1);
                Ok(j * nx + i)
            }
        }
    }
}
