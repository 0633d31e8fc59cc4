//! Polytopes, ellipsoids and the tightening rule that keeps an ellipsoidal
//! tube cross-section inside a halfspace.

use alloc::vec::Vec;
use thiserror::Error;

use crate::linalg::{self, Matrix, Vector};

/// Absolute tolerance for membership and definiteness checks.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("polytope does not have the simplex facet template [-I; 1']")]
    NotSimplexTemplate,
    #[error("simplex is empty (lower offsets exceed the sum bound by {excess})")]
    EmptySimplex { excess: f64 },
    #[error("vertex list is empty")]
    NoVertices,
    #[error("box has lower bound above upper bound in coordinate {0}")]
    InvertedBox(usize),
}

fn check_dim(expected: usize, found: usize) -> Result<(), GeometryError> {
    if expected == found {
        Ok(())
    } else {
        Err(GeometryError::DimensionMismatch { expected, found })
    }
}

/// `{x : Hx <= h}`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HPolytope {
    normals: Matrix,
    offsets: Vector,
}

impl HPolytope {
    pub fn new(normals: Matrix, offsets: Vector) -> Result<Self, GeometryError> {
        check_dim(normals.nrows(), offsets.len())?;
        Ok(Self { normals, offsets })
    }

    /// The whole space `R^dim` (no facets).
    pub fn full(dim: usize) -> Self {
        Self {
            normals: Matrix::zeros(0, dim),
            offsets: Vector::zeros(0),
        }
    }

    /// `{x : ||x||_inf <= radius}` as `2 dim` rows `[I; -I] x <= radius`.
    pub fn inf_ball(dim: usize, radius: f64) -> Self {
        let mut normals = Matrix::zeros(2 * dim, dim);
        for i in 0..dim {
            normals[(i, i)] = 1.0;
            normals[(dim + i, i)] = -1.0;
        }
        Self {
            normals,
            offsets: Vector::from_element(2 * dim, radius),
        }
    }

    /// Simplex template `[-I; 1'] x <= offsets` with `dim + 1` offsets.
    pub fn simplex(offsets: Vector) -> Result<Self, GeometryError> {
        if offsets.len() < 2 {
            return Err(GeometryError::NotSimplexTemplate);
        }
        Ok(Self {
            normals: simplex_template(offsets.len() - 1),
            offsets,
        })
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &Matrix {
        &self.normals
    }

    pub fn offsets(&self) -> &Vector {
        &self.offsets
    }

    pub fn row(&self, i: usize) -> Vector {
        self.normals.row(i).transpose()
    }

    /// Stacks the rows of `other` below those of `self`.
    pub fn intersect(&self, other: &HPolytope) -> Result<HPolytope, GeometryError> {
        check_dim(self.dim(), other.dim())?;
        let n = self.n_rows() + other.n_rows();
        let mut normals = Matrix::zeros(n, self.dim());
        let mut offsets = Vector::zeros(n);
        normals.rows_mut(0, self.n_rows()).copy_from(&self.normals);
        normals.rows_mut(self.n_rows(), other.n_rows()).copy_from(&other.normals);
        offsets.rows_mut(0, self.n_rows()).copy_from(&self.offsets);
        offsets.rows_mut(self.n_rows(), other.n_rows()).copy_from(&other.offsets);
        Ok(HPolytope { normals, offsets })
    }

    /// `{x : K x in self}` for a map `K` whose rows index this polytope's space.
    pub fn preimage(&self, map: &Matrix) -> Result<HPolytope, GeometryError> {
        check_dim(self.dim(), map.nrows())?;
        Ok(HPolytope {
            normals: &self.normals * map,
            offsets: self.offsets.clone(),
        })
    }

    /// Largest value of `H_i x - h_i` over all rows (negative inside).
    pub fn max_violation(&self, x: &Vector) -> Result<f64, GeometryError> {
        check_dim(self.dim(), x.len())?;
        let r = &self.normals * x - &self.offsets;
        Ok(r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self.max_violation(x) {
            Ok(v) => v <= tol,
            Err(_) => false,
        }
    }
}

pub fn contains_point(hp: &HPolytope, x: &Vector) -> bool {
    hp.contains(x, DEFAULT_TOL)
}

pub(crate) fn simplex_template(dim: usize) -> Matrix {
    let mut h = Matrix::zeros(dim + 1, dim);
    for i in 0..dim {
        h[(i, i)] = -1.0;
        h[(dim, i)] = 1.0;
    }
    h
}

/// `co{v_1, ..., v_m}`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VPolytope {
    vertices: Vec<Vector>,
}

impl VPolytope {
    pub fn new(vertices: Vec<Vector>) -> Result<Self, GeometryError> {
        let first = vertices.first().ok_or(GeometryError::NoVertices)?;
        let dim = first.len();
        for v in &vertices {
            check_dim(dim, v.len())?;
        }
        Ok(Self { vertices })
    }

    pub fn point(p: Vector) -> Self {
        Self { vertices: alloc::vec![p] }
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn vertices(&self) -> &[Vector] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Arithmetic mean of the vertex list.
    pub fn mean(&self) -> Vector {
        let mut acc = Vector::zeros(self.dim());
        for v in &self.vertices {
            acc += v;
        }
        acc / self.vertices.len() as f64
    }

    /// Image under `x -> M x`.
    pub fn map(&self, m: &Matrix) -> VPolytope {
        VPolytope {
            vertices: self.vertices.iter().map(|v| m * v).collect(),
        }
    }

    /// Largest Euclidean norm over the vertices.
    pub fn max_norm(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// A polytope carried in both representations.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolytopeSet {
    pub h: HPolytope,
    pub v: VPolytope,
}

impl PolytopeSet {
    /// Simplex `[-I; 1'] x <= offsets` with its closed-form vertices.
    pub fn simplex(offsets: Vector) -> Result<Self, GeometryError> {
        let h = HPolytope::simplex(offsets)?;
        let v = simplex_vertices(&h)?;
        Ok(Self { h, v })
    }

    pub fn from_box(b: &BoxSet) -> Result<Self, GeometryError> {
        Ok(Self {
            h: b.to_hpolytope(),
            v: VPolytope::new(b.corners())?,
        })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }
}

/// Axis-aligned box; infinite bounds are allowed and produce no facet.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxSet {
    pub lower: Vector,
    pub upper: Vector,
}

impl BoxSet {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self, GeometryError> {
        check_dim(lower.len(), upper.len())?;
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i]) {
            return Err(GeometryError::InvertedBox(i));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(dim: usize, radius: f64) -> Self {
        Self {
            lower: Vector::from_element(dim, -radius),
            upper: Vector::from_element(dim, radius),
        }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self::symmetric(dim, f64::INFINITY)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(self.upper.iter()).all(|x| x.is_finite())
    }

    pub fn to_hpolytope(&self) -> HPolytope {
        let n = self.dim();
        let mut rows: Vec<(Vector, f64)> = Vec::new();
        for i in 0..n {
            if self.upper[i].is_finite() {
                let mut r = Vector::zeros(n);
                r[i] = 1.0;
                rows.push((r, self.upper[i]));
            }
        }
        for i in 0..n {
            if self.lower[i].is_finite() {
                let mut r = Vector::zeros(n);
                r[i] = -1.0;
                rows.push((r, -self.lower[i]));
            }
        }
        let mut normals = Matrix::zeros(rows.len(), n);
        let mut offsets = Vector::zeros(rows.len());
        for (k, (r, b)) in rows.into_iter().enumerate() {
            normals.set_row(k, &r.transpose());
            offsets[k] = b;
        }
        HPolytope { normals, offsets }
    }

    /// All `2^dim` corners, first coordinate varying fastest.
    pub fn corners(&self) -> Vec<Vector> {
        box_vertices(&self.lower, &self.upper)
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| x[i] >= self.lower[i] - tol && x[i] <= self.upper[i] + tol)
    }
}

/// Corners of the box `[lower, upper]`.
pub fn box_vertices(lower: &Vector, upper: &Vector) -> Vec<Vector> {
    let n = lower.len();
    let mut out = Vec::with_capacity(1 << n);
    for mask in 0..(1usize << n) {
        let mut v = lower.clone();
        for i in 0..n {
            if mask & (1 << i) != 0 {
                v[i] = upper[i];
            }
        }
        out.push(v);
    }
    out
}

/// Closed-form vertices of `[-I; 1'] x <= (a, b)`.
///
/// Vertex 0 has every lower facet active (`x = -a`); vertex `i` replaces the
/// `i`-th lower facet by the sum facet.
pub fn simplex_vertices(hp: &HPolytope) -> Result<VPolytope, GeometryError> {
    let n = hp.dim();
    if n == 0 || hp.n_rows() != n + 1 {
        return Err(GeometryError::NotSimplexTemplate);
    }
    let template = simplex_template(n);
    if (hp.normals() - &template).amax() > 1e-12 {
        return Err(GeometryError::NotSimplexTemplate);
    }
    let lower = -hp.offsets().rows(0, n).into_owned();
    let b = hp.offsets()[n];
    let excess = lower.sum() - b;
    if excess > 0.0 {
        return Err(GeometryError::EmptySimplex { excess });
    }
    let mut vertices = Vec::with_capacity(n + 1);
    vertices.push(lower.clone());
    for i in 0..n {
        let mut v = lower.clone();
        v[i] = b - (lower.sum() - lower[i]);
        vertices.push(v);
    }
    VPolytope::new(vertices)
}

/// `E(V, beta^2) = {e : e'Ve <= beta^2}`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ellipsoid {
    shape: Matrix,
    beta2: f64,
}

impl Ellipsoid {
    pub fn new(shape: Matrix, beta2: f64) -> Result<Self, GeometryError> {
        if !linalg::is_positive_definite(&shape) || !(beta2 >= 0.0) {
            return Err(GeometryError::NotPositiveDefinite);
        }
        Ok(Self { shape, beta2 })
    }

    pub fn shape(&self) -> &Matrix {
        &self.shape
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn contains(&self, e: &Vector, tol: f64) -> bool {
        e.dot(&(&self.shape * e)) <= self.beta2 + tol
    }
}

/// A tube shape `V` with its square roots and inverse cached.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EllipsoidShape {
    v: Matrix,
    v_sqrt: Matrix,
    v_inv_sqrt: Matrix,
    v_inv: Matrix,
}

impl EllipsoidShape {
    pub fn new(v: Matrix) -> Result<Self, GeometryError> {
        if !linalg::is_positive_definite(&v) {
            return Err(GeometryError::NotPositiveDefinite);
        }
        let v = linalg::symmetrize(&v);
        let v_sqrt = linalg::sym_apply(&v, linalg::sqrt);
        let v_inv_sqrt = linalg::sym_apply(&v, |l| 1.0 / linalg::sqrt(l));
        let v_inv = linalg::sym_apply(&v, |l| 1.0 / l);
        Ok(Self {
            v,
            v_sqrt,
            v_inv_sqrt,
            v_inv,
        })
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.v
    }

    pub fn sqrt(&self) -> &Matrix {
        &self.v_sqrt
    }

    pub fn inv_sqrt(&self) -> &Matrix {
        &self.v_inv_sqrt
    }

    pub fn inverse(&self) -> &Matrix {
        &self.v_inv
    }

    /// `||x||_V`.
    pub fn norm(&self, x: &Vector) -> f64 {
        linalg::sqrt(x.dot(&(&self.v * x)).max(0.0))
    }

    /// `||V^{-1/2} a||`, the support of `E(V, 1)` in direction `a`.
    pub fn dual_norm(&self, a: &Vector) -> f64 {
        (&self.v_inv_sqrt * a).norm()
    }

    /// Slack of the halfspace `row . x <= offset` against `z + E(V, beta^2)`.
    pub fn tighten(&self, row: &Vector, offset: f64, z: &Vector, beta: f64) -> f64 {
        offset - row.dot(z) - beta * self.dual_norm(row)
    }

    /// Induced norm `max ||Mx||_V / ||x||_V`.
    pub fn induced_norm(&self, m: &Matrix) -> f64 {
        let t = &self.v_sqrt * m * &self.v_inv_sqrt;
        linalg::sqrt(linalg::max_eigenvalue(&(t.transpose() * t)).max(0.0))
    }

    /// `sqrt(lambda_max(V) / lambda_min(V))`, the condition number of `V^{1/2}`.
    pub fn sqrt_condition(&self) -> f64 {
        let e = linalg::sym_eigenvalues(&self.v);
        linalg::sqrt(e.max() / e.min())
    }
}

/// `(x'Vx)^{1/2}`.
pub fn v_norm(x: &Vector, v: &Matrix) -> Result<f64, GeometryError> {
    check_dim(v.nrows(), x.len())?;
    check_dim(v.ncols(), x.len())?;
    Ok(linalg::sqrt(x.dot(&(v * x)).max(0.0)))
}

/// `h - H.z - beta ||V^{-1/2} H'||`; nonnegative iff `z + E(V, beta^2)`
/// lies in the halfspace `H.x <= h`.
pub fn tighten_halfspace(
    row: &Vector,
    offset: f64,
    z: &Vector,
    v: &Matrix,
    beta: f64,
) -> Result<f64, GeometryError> {
    check_dim(row.len(), z.len())?;
    check_dim(v.nrows(), z.len())?;
    let shape = EllipsoidShape::new(v.clone())?;
    Ok(shape.tighten(row, offset, z, beta))
}
