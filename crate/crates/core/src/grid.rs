//! Uniform grids, ghost cells and limited piecewise-linear reconstruction.
//!
//! Fields are stored as a [`Mat`] with one row per cell and one column per
//! conserved component. In 2D the row of cell `(i, j)` is `i * ny + j`,
//! with `i` running along x.
//!
//! Slopes are stored divided by the cell width, so the interface values are
//! `u⁻_{j+1/2} = u_j + ψ(r)(u_{j+1} − u_j)/2` and
//! `u⁺_{j+1/2} = u_{j+1} − ψ(r_{j+1})(u_{j+2} − u_{j+1})/2`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Mat, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid1D {
    pub n_cells: usize,
    pub a: f64,
    pub b: f64,
    pub dx: f64,
}

impl Grid1D {
    pub fn new(n_cells: usize, a: f64, b: f64) -> Result<Self> {
        if n_cells == 0 || !(b > a) {
            return Err(Error::Invalid(format!("bad 1D grid: n={n_cells}, [{a}, {b}]")));
        }
        Ok(Self { n_cells, a, b, dx: (b - a) / n_cells as f64 })
    }

    pub fn center(&self, j: usize) -> f64 {
        self.a + (j as f64 + 0.5) * self.dx
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|j| self.center(j)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub dx: f64,
    pub dy: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, x: (f64, f64), y: (f64, f64)) -> Result<Self> {
        if nx == 0 || ny == 0 || !(x.1 > x.0) || !(y.1 > y.0) {
            return Err(Error::Invalid(format!("bad 2D grid: {nx}x{ny}")));
        }
        Ok(Self { nx, ny, x, y, dx: (x.1 - x.0) / nx as f64, dy: (y.1 - y.0) / ny as f64 })
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x.0 + (i as f64 + 0.5) * self.dx, self.y.0 + (j as f64 + 0.5) * self.dy)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }
}

/// Either grid; schemes are written against this.
#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    One(Grid1D),
    Two(Grid2D),
}

impl Geometry {
    pub fn n_rows(&self) -> usize {
        match self {
            Geometry::One(g) => g.n_cells,
            Geometry::Two(g) => g.nx * g.ny,
        }
    }

    /// Cell widths per spatial direction.
    pub fn spacings(&self) -> Vec<f64> {
        match self {
            Geometry::One(g) => vec![g.dx],
            Geometry::Two(g) => vec![g.dx, g.dy],
        }
    }

    pub fn cell_volume(&self) -> f64 {
        match self {
            Geometry::One(g) => g.dx,
            Geometry::Two(g) => g.dx * g.dy,
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            Geometry::One(_) => 1,
            Geometry::Two(_) => 2,
        }
    }
}

/// Cell-averaged states, one row per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct StateField {
    pub values: Mat,
}

impl StateField {
    pub fn new(values: Mat) -> Result<Self> {
        if values.cols == 0 {
            return Err(Error::Invalid("state field needs at least one component".into()));
        }
        if !values.is_finite() {
            return Err(Error::Invalid("state field contains non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * p);
        for r in rows {
            if r.len() != p {
                return Err(Error::Shape("ragged state rows".into()));
            }
            data.extend_from_slice(r);
        }
        Self::new(Mat::from_vec(rows.len(), p, data)?)
    }

    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(Mat::from_vec(values.len(), 1, values.to_vec())?)
    }

    pub fn n_cells(&self) -> usize {
        self.values.rows
    }

    pub fn p(&self) -> usize {
        self.values.cols
    }

    pub fn cell(&self, j: usize) -> &[f64] {
        self.values.row(j)
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        (0..self.values.rows).map(|j| self.values.get(j, i)).collect()
    }

    /// Σ_j u_j^i · volume for every component.
    pub fn integral(&self, volume: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.p()];
        for j in 0..self.n_cells() {
            for (o, v) in out.iter_mut().zip(self.cell(j)) {
                *o += v * volume;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundarySpec {
    Periodic,
    /// Constant ghost states outside the left and right ends.
    Dirichlet {
        left: Vec<f64>,
        right: Vec<f64>,
    },
}

impl BoundarySpec {
    /// Dirichlet ghosts copied from the outermost cells of `field`.
    pub fn dirichlet_from_field(field: &Mat) -> Self {
        BoundarySpec::Dirichlet { left: field.row(0).to_vec(), right: field.row(field.rows - 1).to_vec() }
    }

    pub fn check(&self, p: usize) -> Result<()> {
        if let BoundarySpec::Dirichlet { left, right } = self {
            if left.len() != p || right.len() != p {
                return Err(Error::Shape(format!(
                    "Dirichlet ghosts have {} / {} components, field has {p}",
                    left.len(),
                    right.len()
                )));
            }
        }
        Ok(())
    }
}

/// Extends a 1D field by `width` ghost cells on each side.
pub fn pad_ghost(field: &StateField, bc: &BoundarySpec, width: usize) -> Result<StateField> {
    let n = field.n_cells();
    let p = field.p();
    if width == 0 {
        return Err(Error::Invalid("ghost width must be at least 1".into()));
    }
    bc.check(p)?;
    let mut out = Mat::zeros(n + 2 * width, p);
    match bc {
        BoundarySpec::Periodic => {
            if width > n {
                return Err(Error::GhostWidth { width, n_cells: n });
            }
            for r in 0..n + 2 * width {
                let src = (r + n - width) % n;
                out.row_mut(r).copy_from_slice(field.cell(src));
            }
        }
        BoundarySpec::Dirichlet { left, right } => {
            for r in 0..width {
                out.row_mut(r).copy_from_slice(left);
                out.row_mut(n + width + r).copy_from_slice(right);
            }
            for j in 0..n {
                out.row_mut(j + width).copy_from_slice(field.cell(j));
            }
        }
    }
    Ok(StateField { values: out })
}

/// Minmod-type limiter `max(0, min(r, (1+r)/2, 1))`.
pub fn minmod_psi(r: f64) -> f64 {
    if r.is_nan() {
        return 0.0;
    }
    let m = r.min((1.0 + r) / 2.0).min(1.0);
    m.max(0.0)
}

/// Limited undivided slope `ψ(r)·dr` with `r = dl/dr`; flat when `dr = 0`.
#[inline]
pub fn limited_slope(dl: f64, dr: f64) -> f64 {
    if dr == 0.0 {
        return 0.0;
    }
    minmod_psi(dl / dr) * dr
}

/// Partial derivatives of [`limited_slope`] with respect to `(dl, dr)`.
#[inline]
pub fn limited_slope_grad(dl: f64, dr: f64) -> (f64, f64) {
    if dr == 0.0 {
        return (0.0, 0.0);
    }
    let r = dl / dr;
    if !(r > 0.0) {
        (0.0, 0.0)
    } else if r < 1.0 {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    }
}

/// Index bookkeeping for one sweep direction.
///
/// `edges[e] = [j-1, j, j+1, j+2]` are rows of the *source* matrix around
/// edge `e = j+1/2`; the source is the field itself (periodic) or the field
/// with two ghost rows on each end (Dirichlet). Cell `c` receives
/// `−(F[right[c]] − F[left[c]]) / spacing`.
#[derive(Clone, Debug)]
pub struct Stencil {
    pub edges: Vec<[usize; 4]>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub spacing: f64,
    /// Edges whose flux is taken at the domain ends (a, b) for 1D Dirichlet.
    pub boundary_edges: Option<(usize, usize)>,
}

impl Stencil {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Per-edge index of the edge to its left, used by the printed wave-speed
    /// stencil. Falls back to the edge itself where no left neighbour exists.
    pub fn previous_edge(&self) -> Vec<usize> {
        match self.boundary_edges {
            Some(_) => (0..self.edges.len()).map(|e| e.saturating_sub(1)).collect(),
            None => {
                // periodic sweeps: the other edge of the cell left of `e`
                let mut prev = vec![0; self.edges.len()];
                for (&l, &r) in self.left.iter().zip(&self.right) {
                    prev[r] = l;
                }
                prev
            }
        }
    }
}

/// Builds the sweep stencils for a geometry. Returns one stencil per
/// spatial direction.
pub fn stencils(geom: &Geometry, bc: &BoundarySpec) -> Result<Vec<Stencil>> {
    match geom {
        Geometry::One(g) => Ok(vec![stencil_1d(g.n_cells, g.dx, bc)?]),
        Geometry::Two(g) => {
            if !matches!(bc, BoundarySpec::Periodic) {
                return Err(Error::Unsupported("2D grids support periodic boundaries only".into()));
            }
            let mut sx = Stencil {
                edges: Vec::with_capacity(g.nx * g.ny),
                left: vec![0; g.nx * g.ny],
                right: vec![0; g.nx * g.ny],
                spacing: g.dx,
                boundary_edges: None,
            };
            let mut sy = Stencil {
                edges: Vec::with_capacity(g.nx * g.ny),
                left: vec![0; g.nx * g.ny],
                right: vec![0; g.nx * g.ny],
                spacing: g.dy,
                boundary_edges: None,
            };
            let wx = |i: isize| ((i + g.nx as isize) % g.nx as isize) as usize;
            let wy = |j: isize| ((j + g.ny as isize) % g.ny as isize) as usize;
            for i in 0..g.nx {
                for j in 0..g.ny {
                    let ii = i as isize;
                    let jj = j as isize;
                    let e = sx.edges.len();
                    sx.edges.push([g.index(wx(ii - 1), j), g.index(i, j), g.index(wx(ii + 1), j), g.index(wx(ii + 2), j)]);
                    sx.right[g.index(i, j)] = e;
                    sx.left[g.index(wx(ii + 1), j)] = e;
                    let e = sy.edges.len();
                    sy.edges.push([g.index(i, wy(jj - 1)), g.index(i, j), g.index(i, wy(jj + 1)), g.index(i, wy(jj + 2))]);
                    sy.right[g.index(i, j)] = e;
                    sy.left[g.index(i, wy(jj + 1))] = e;
                }
            }
            Ok(vec![sx, sy])
        }
    }
}

fn stencil_1d(n: usize, dx: f64, bc: &BoundarySpec) -> Result<Stencil> {
    match bc {
        BoundarySpec::Periodic => {
            if n < 3 {
                return Err(Error::Invalid(format!("periodic reconstruction needs 3 cells, got {n}")));
            }
            let w = |j: isize| ((j + n as isize) % n as isize) as usize;
            let edges = (0..n)
                .map(|j| {
                    let j = j as isize;
                    [w(j - 1), w(j), w(j + 1), w(j + 2)]
                })
                .collect();
            let left = (0..n).map(|j| w(j as isize - 1)).collect();
            let right = (0..n).collect();
            Ok(Stencil { edges, left, right, spacing: dx, boundary_edges: None })
        }
        BoundarySpec::Dirichlet { .. } => {
            // padded rows: [gL, gL, u_0 .. u_{n-1}, gR, gR]; edge e sits
            // between padded rows e+1 and e+2
            let edges = (0..=n).map(|e| [e, e + 1, e + 2, e + 3]).collect();
            let left = (0..n).collect();
            let right = (1..=n).collect();
            Ok(Stencil { edges, left, right, spacing: dx, boundary_edges: Some((0, n)) })
        }
    }
}

/// Rows the stencil indices refer to: the field itself, or the field with
/// two ghost rows per side for Dirichlet boundaries.
pub fn stencil_source(field: &Mat, bc: &BoundarySpec) -> Result<Mat> {
    match bc {
        BoundarySpec::Periodic => Ok(field.clone()),
        BoundarySpec::Dirichlet { .. } => {
            let sf = StateField { values: field.clone() };
            Ok(pad_ghost(&sf, bc, 2)?.values)
        }
    }
}

/// Interface states `(u⁻, u⁺)` at every edge of `stencil`, one row per edge.
pub fn reconstruct_with(stencil: &Stencil, src: &Mat) -> (Mat, Mat) {
    let p = src.cols;
    let ne = stencil.n_edges();
    let mut minus = Mat::zeros(ne, p);
    let mut plus = Mat::zeros(ne, p);
    for (e, idx) in stencil.edges.iter().enumerate() {
        let (a, b, c, d) = (src.row(idx[0]), src.row(idx[1]), src.row(idx[2]), src.row(idx[3]));
        for i in 0..p {
            let d1 = b[i] - a[i];
            let d2 = c[i] - b[i];
            let d3 = d[i] - c[i];
            minus.set(e, i, b[i] + 0.5 * limited_slope(d1, d2));
            plus.set(e, i, c[i] - 0.5 * limited_slope(d2, d3));
        }
    }
    (minus, plus)
}

/// Minmod reconstruction of a 1D field: `(u⁻, u⁺)` per edge. Periodic fields
/// have `n` edges (`j+1/2`, `j = 0..n`), Dirichlet fields `n+1` (including
/// both domain ends).
pub fn reconstruct_interfaces(field: &StateField, bc: &BoundarySpec) -> Result<(Mat, Mat)> {
    bc.check(field.p())?;
    let stencil = stencil_1d(field.n_cells(), 1.0, bc)?;
    let src = stencil_source(&field.values, bc)?;
    Ok(reconstruct_with(&stencil, &src))
}
