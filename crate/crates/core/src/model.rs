//! Basis-function dynamics `f(x,u,theta) = f_0(x,u) + sum_i theta_i f_i(x,u)`
//! and the oracles that bound parameter and linearization errors.

use alloc::vec::Vec;
use thiserror::Error;

use crate::geometry::{BoxSet, PolytopeSet, VPolytope};
use crate::linalg::{Matrix, Vector};

/// Interval-fallback vertex enumeration is capped at `2^MAX_INTERVAL_ENTRIES`.
pub const MAX_INTERVAL_ENTRIES: usize = 14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("model cannot bound its Jacobians on the requested region")]
    UnboundedJacobian,
    #[error("Jacobian bound needs {0} uncertain entries, more than the interval fallback supports")]
    TooManyUncertainEntries(usize),
}

fn check(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { what, expected, found })
    }
}

/// How the Jacobians of the basis functions depend on `(x, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianStructure {
    /// Jacobians are affine in `(x, u)`, so error bounds are attained at
    /// the vertices of the perturbation sets.
    Affine { input_dependent: bool },
    /// Anything else; bounds come from interval arithmetic.
    General,
}

/// Entrywise bounds on `(d f_i/dx, d f_i/du)` over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBounds {
    pub dx_lower: Matrix,
    pub dx_upper: Matrix,
    pub du_lower: Matrix,
    pub du_upper: Matrix,
}

/// A vertex `(C, D)` of the first-order error set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JacobianPair {
    pub c: Matrix,
    pub d: Matrix,
}

/// Dynamics as an affine combination of known basis functions.
///
/// Basis index 0 is `f_0`; indices `1..=n_theta` multiply `theta_1..theta_n`.
pub trait BasisModel: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_theta(&self) -> usize;

    fn basis(&self, i: usize, x: &Vector, u: &Vector) -> Vector;

    /// `(d f_i/dx, d f_i/du)` at `(x, u)`.
    fn basis_jacobian(&self, i: usize, x: &Vector, u: &Vector) -> (Matrix, Matrix);

    /// Euclidean Lipschitz constant of `f_{K,i}(., 0)` on the terminal region.
    fn lipschitz(&self) -> f64;

    /// Bases that are constant vectors (estimated constant disturbances).
    fn constant_basis(&self) -> &[usize] {
        &[]
    }

    fn jacobian_structure(&self) -> JacobianStructure {
        JacobianStructure::General
    }

    /// Entrywise Jacobian bounds of basis `i` over `x_box x u_box`.
    fn basis_jacobian_bounds(&self, _i: usize, _x_box: &BoxSet, _u_box: &BoxSet) -> Option<JacobianBounds> {
        None
    }

    /// Vertex pairs `(A_j, B_j)` whose hull contains `[df/dx, df/du]` for all
    /// `(x, u, theta)` in `x_box x u_box x co(theta)`.
    fn ldi(&self, x_box: &BoxSet, u_box: &BoxSet, theta: &VPolytope) -> Result<Vec<(Matrix, Matrix)>, ModelError> {
        ldi_by_intervals(self, x_box, u_box, theta)
    }
}

/// `f_0(x,u) + sum theta_i f_i(x,u)`.
pub fn eval_dynamics<M: BasisModel + ?Sized>(
    m: &M,
    x: &Vector,
    u: &Vector,
    theta: &Vector,
) -> Result<Vector, ModelError> {
    check("state", m.n_x(), x.len())?;
    check("input", m.n_u(), u.len())?;
    check("parameter", m.n_theta(), theta.len())?;
    let mut out = m.basis(0, x, u);
    for i in 0..m.n_theta() {
        if theta[i] != 0.0 {
            out += m.basis(i + 1, x, u) * theta[i];
        }
    }
    Ok(out)
}

/// `f_K(x, v, theta) = f(x, Kx + v, theta)`.
pub fn eval_closed_loop<M: BasisModel + ?Sized>(
    m: &M,
    gain: &Matrix,
    x: &Vector,
    v: &Vector,
    theta: &Vector,
) -> Result<Vector, ModelError> {
    check("gain rows", m.n_u(), gain.nrows())?;
    check("gain columns", m.n_x(), gain.ncols())?;
    let u = gain * x + v;
    eval_dynamics(m, x, &u, theta)
}

/// `(df/dx, df/du)` at `(x, u, theta)`.
pub fn jacobians<M: BasisModel + ?Sized>(m: &M, x: &Vector, u: &Vector, theta: &Vector) -> (Matrix, Matrix) {
    let (mut jx, mut ju) = m.basis_jacobian(0, x, u);
    for i in 0..m.n_theta() {
        if theta[i] != 0.0 {
            let (ax, au) = m.basis_jacobian(i + 1, x, u);
            jx += ax * theta[i];
            ju += au * theta[i];
        }
    }
    (jx, ju)
}

/// `(Phi, B) = (df_K/dx, df_K/dv)` at `(x0, v0, theta0)`.
pub fn closed_loop_jacobians<M: BasisModel + ?Sized>(
    m: &M,
    x0: &Vector,
    v0: &Vector,
    theta0: &Vector,
    gain: &Matrix,
) -> (Matrix, Matrix) {
    let u = gain * x0 + v0;
    let (jx, ju) = jacobians(m, x0, &u, theta0);
    (jx + &ju * gain, ju)
}

/// `delta0^(q) = sum_i (theta^(q)_i - theta0_i) f_{K,i}(x0, v0)`, one per vertex.
pub fn param_disturbance_vertices<M: BasisModel + ?Sized>(
    m: &M,
    x0: &Vector,
    v0: &Vector,
    theta0: &Vector,
    theta: &VPolytope,
    gain: &Matrix,
) -> Vec<Vector> {
    let u = gain * x0 + v0;
    let basis: Vec<Vector> = (1..=m.n_theta()).map(|i| m.basis(i, x0, &u)).collect();
    theta
        .vertices()
        .iter()
        .map(|tq| {
            let mut acc = Vector::zeros(m.n_x());
            for (i, fi) in basis.iter().enumerate() {
                let d = tq[i] - theta0[i];
                if d != 0.0 {
                    acc += fi * d;
                }
            }
            acc
        })
        .collect()
}

/// Vertices `(C_j, D_j)` with `df_K/dx(x0+s, v0+v, theta) - Phi in co{C_j}`
/// and `df_K/dv(...) - B in co{D_j}` over `S x Vset x Theta`.
///
/// `v_set = None` means the input perturbation is unconstrained, which is
/// only admissible when the Jacobians do not depend on `u`.
pub fn jacobian_extreme_set<M: BasisModel + ?Sized>(
    m: &M,
    x0: &Vector,
    v0: &Vector,
    theta0: &Vector,
    s_set: &PolytopeSet,
    v_set: Option<&PolytopeSet>,
    theta: &VPolytope,
    gain: &Matrix,
) -> Result<Vec<JacobianPair>, ModelError> {
    check("state perturbation set", m.n_x(), s_set.dim())?;
    let (phi, b) = closed_loop_jacobians(m, x0, v0, theta0, gain);
    match m.jacobian_structure() {
        JacobianStructure::Affine { input_dependent } => {
            let zero_v = [Vector::zeros(m.n_u())];
            let v_vertices: &[Vector] = match (v_set, input_dependent) {
                (Some(vs), true) => vs.v.vertices(),
                (None, true) => return Err(ModelError::UnboundedJacobian),
                (_, false) => &zero_v,
            };
            let mut out: Vec<JacobianPair> = Vec::new();
            for tq in theta.vertices() {
                for s in s_set.v.vertices() {
                    for v in v_vertices {
                        let (jx, jv) = closed_loop_jacobians(m, &(x0 + s), &(v0 + v), tq, gain);
                        push_unique(&mut out, JacobianPair { c: jx - &phi, d: jv - &b });
                    }
                }
            }
            Ok(out)
        }
        JacobianStructure::General => {
            let s_box = hull_box(s_set.v.vertices());
            let x_box = BoxSet {
                lower: x0 + &s_box.lower,
                upper: x0 + &s_box.upper,
            };
            let v_box = match v_set {
                Some(vs) => hull_box(vs.v.vertices()),
                None => BoxSet::unbounded(m.n_u()),
            };
            // u = K x + v0 + v, bounded with interval arithmetic.
            let kx = interval_matvec(gain, &x_box);
            let u_box = BoxSet {
                lower: kx.lower + v0 + &v_box.lower,
                upper: kx.upper + v0 + &v_box.upper,
            };
            let (jx, ju) = summed_bounds(m, &x_box, &u_box, theta)?;
            // d f_K/dx = Jx + Ju K.
            let juk = interval_matmul_right(&ju, gain);
            let c = IntervalMatrix {
                lower: &jx.lower + &juk.lower - &phi,
                upper: &jx.upper + &juk.upper - &phi,
            };
            let d = IntervalMatrix {
                lower: &ju.lower - &b,
                upper: &ju.upper - &b,
            };
            let corners = interval_corners(&[&c, &d])?;
            Ok(corners
                .into_iter()
                .map(|mut ms| {
                    let d = ms.pop().unwrap();
                    let c = ms.pop().unwrap();
                    JacobianPair { c, d }
                })
                .collect())
        }
    }
}

fn push_unique<T: PartialEq>(out: &mut Vec<T>, item: T) {
    if !out.contains(&item) {
        out.push(item);
    }
}

/// Smallest box containing the given points.
pub fn hull_box(points: &[Vector]) -> BoxSet {
    let mut lower = points[0].clone();
    let mut upper = points[0].clone();
    for p in &points[1..] {
        for i in 0..p.len() {
            lower[i] = lower[i].min(p[i]);
            upper[i] = upper[i].max(p[i]);
        }
    }
    BoxSet { lower, upper }
}

#[derive(Debug, Clone)]
struct IntervalMatrix {
    lower: Matrix,
    upper: Matrix,
}

fn interval_mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let p = [a.0 * b.0, a.0 * b.1, a.1 * b.0, a.1 * b.1];
    let clean = |x: f64| if x.is_nan() { 0.0 } else { x };
    let lo = p.iter().copied().map(clean).fold(f64::INFINITY, f64::min);
    let hi = p.iter().copied().map(clean).fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn interval_matvec(m: &Matrix, b: &BoxSet) -> BoxSet {
    let mut lower = Vector::zeros(m.nrows());
    let mut upper = Vector::zeros(m.nrows());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let (lo, hi) = interval_mul((m[(r, c)], m[(r, c)]), (b.lower[c], b.upper[c]));
            lower[r] += lo;
            upper[r] += hi;
        }
    }
    BoxSet { lower, upper }
}

/// `[L, U] * K` for a constant matrix `K`.
fn interval_matmul_right(a: &IntervalMatrix, k: &Matrix) -> IntervalMatrix {
    let mut lower = Matrix::zeros(a.lower.nrows(), k.ncols());
    let mut upper = Matrix::zeros(a.lower.nrows(), k.ncols());
    for r in 0..a.lower.nrows() {
        for c in 0..k.ncols() {
            for j in 0..k.nrows() {
                let (lo, hi) = interval_mul((a.lower[(r, j)], a.upper[(r, j)]), (k[(j, c)], k[(j, c)]));
                lower[(r, c)] += lo;
                upper[(r, c)] += hi;
            }
        }
    }
    IntervalMatrix { lower, upper }
}

/// Bounds on `sum_i theta_i df_i` (with `theta_0 = 1`) over the boxes.
fn summed_bounds<M: BasisModel + ?Sized>(
    m: &M,
    x_box: &BoxSet,
    u_box: &BoxSet,
    theta: &VPolytope,
) -> Result<(IntervalMatrix, IntervalMatrix), ModelError> {
    let t_box = hull_box(theta.vertices());
    let (nx, nu) = (m.n_x(), m.n_u());
    let mut jx = IntervalMatrix {
        lower: Matrix::zeros(nx, nx),
        upper: Matrix::zeros(nx, nx),
    };
    let mut ju = IntervalMatrix {
        lower: Matrix::zeros(nx, nu),
        upper: Matrix::zeros(nx, nu),
    };
    for i in 0..=m.n_theta() {
        let b = m
            .basis_jacobian_bounds(i, x_box, u_box)
            .ok_or(ModelError::UnboundedJacobian)?;
        let coef = if i == 0 { (1.0, 1.0) } else { (t_box.lower[i - 1], t_box.upper[i - 1]) };
        for (acc, lo, hi) in [(&mut jx, &b.dx_lower, &b.dx_upper), (&mut ju, &b.du_lower, &b.du_upper)] {
            for idx in 0..lo.len() {
                let (l, h) = interval_mul(coef, (lo[idx], hi[idx]));
                acc.lower[idx] += l;
                acc.upper[idx] += h;
            }
        }
    }
    for mat in [&jx.lower, &jx.upper, &ju.lower, &ju.upper] {
        if mat.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::UnboundedJacobian);
        }
    }
    Ok((jx, ju))
}

/// All corner combinations of a list of interval matrices, varying only
/// the entries with nonzero width.
fn interval_corners(mats: &[&IntervalMatrix]) -> Result<Vec<Vec<Matrix>>, ModelError> {
    let mut free: Vec<(usize, usize)> = Vec::new();
    for (k, m) in mats.iter().enumerate() {
        for idx in 0..m.lower.len() {
            if m.upper[idx] > m.lower[idx] {
                free.push((k, idx));
            }
        }
    }
    if free.len() > MAX_INTERVAL_ENTRIES {
        return Err(ModelError::TooManyUncertainEntries(free.len()));
    }
    let mut out = Vec::with_capacity(1 << free.len());
    for mask in 0..(1usize << free.len()) {
        let mut ms: Vec<Matrix> = mats.iter().map(|m| m.lower.clone()).collect();
        for (bit, &(k, idx)) in free.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                ms[k][idx] = mats[k].upper[idx];
            }
        }
        out.push(ms);
    }
    Ok(out)
}

/// LDI from per-basis interval Jacobian bounds over the box hull of `theta`.
pub fn ldi_by_intervals<M: BasisModel + ?Sized>(
    m: &M,
    x_box: &BoxSet,
    u_box: &BoxSet,
    theta: &VPolytope,
) -> Result<Vec<(Matrix, Matrix)>, ModelError> {
    let (jx, ju) = summed_bounds(m, x_box, u_box, theta)?;
    let corners = interval_corners(&[&jx, &ju])?;
    Ok(corners
        .into_iter()
        .map(|mut ms| {
            let b = ms.pop().unwrap();
            let a = ms.pop().unwrap();
            (a, b)
        })
        .collect())
}

/// One basis function of [`QuadraticBasisModel`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BasisTerm {
    /// `e_row * x_state^2`.
    Quadratic { row: usize, state: usize },
    /// A fixed vector (constant disturbance direction).
    Constant(Vector),
}

/// `f_0 = Ax + Bu` plus quadratic and constant basis terms.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuadraticBasisModel {
    a: Matrix,
    b: Matrix,
    terms: Vec<BasisTerm>,
    lipschitz: f64,
    constant: Vec<usize>,
}

impl QuadraticBasisModel {
    pub fn new(a: Matrix, b: Matrix, terms: Vec<BasisTerm>, lipschitz: f64) -> Result<Self, ModelError> {
        let n = a.nrows();
        check("A columns", n, a.ncols())?;
        check("B rows", n, b.nrows())?;
        let mut constant = Vec::new();
        for (k, t) in terms.iter().enumerate() {
            match t {
                BasisTerm::Quadratic { row, state } => {
                    if *row >= n || *state >= n {
                        return Err(ModelError::DimensionMismatch {
                            what: "quadratic term index",
                            expected: n,
                            found: (*row).max(*state),
                        });
                    }
                }
                BasisTerm::Constant(v) => {
                    check("constant term", n, v.len())?;
                    constant.push(k + 1);
                }
            }
        }
        Ok(Self {
            a,
            b,
            terms,
            lipschitz,
            constant,
        })
    }

    /// Lipschitz bound of the quadratic terms on a box: `2 max |x_j|`.
    pub fn lipschitz_on(terms: &[BasisTerm], region: &BoxSet) -> f64 {
        terms
            .iter()
            .filter_map(|t| match t {
                BasisTerm::Quadratic { state, .. } => {
                    Some(2.0 * region.lower[*state].abs().max(region.upper[*state].abs()))
                }
                BasisTerm::Constant(_) => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn terms(&self) -> &[BasisTerm] {
        &self.terms
    }

    /// Exact product: theta vertices times the corners of the box over the
    /// states that enter a quadratic term.
    fn ldi_vertex_product(&self, x_box: &BoxSet, theta: &VPolytope) -> Vec<(Matrix, Matrix)> {
        let mut states: Vec<usize> = Vec::new();
        for t in &self.terms {
            if let BasisTerm::Quadratic { state, .. } = t {
                if !states.contains(state) {
                    states.push(*state);
                }
            }
        }
        let mut out: Vec<(Matrix, Matrix)> = Vec::new();
        for tq in theta.vertices() {
            for mask in 0..(1usize << states.len()) {
                let mut a = self.a.clone();
                for (k, t) in self.terms.iter().enumerate() {
                    if let BasisTerm::Quadratic { row, state } = t {
                        let bit = states.iter().position(|s| s == state).unwrap();
                        let xj = if mask & (1 << bit) != 0 { x_box.upper[*state] } else { x_box.lower[*state] };
                        a[(*row, *state)] += 2.0 * tq[k] * xj;
                    }
                }
                push_unique(&mut out, (a, self.b.clone()));
            }
        }
        out
    }

    /// Outer box on the coefficients `2 theta_i x_j` of each quadratic term.
    fn ldi_coefficient_box(&self, x_box: &BoxSet, theta: &VPolytope) -> Vec<(Matrix, Matrix)> {
        let t_box = hull_box(theta.vertices());
        let quad: Vec<(usize, usize, (f64, f64))> = self
            .terms
            .iter()
            .enumerate()
            .filter_map(|(k, t)| match t {
                BasisTerm::Quadratic { row, state } => {
                    let c = interval_mul(
                        (t_box.lower[k], t_box.upper[k]),
                        (2.0 * x_box.lower[*state], 2.0 * x_box.upper[*state]),
                    );
                    Some((*row, *state, c))
                }
                BasisTerm::Constant(_) => None,
            })
            .collect();
        let mut out: Vec<(Matrix, Matrix)> = Vec::new();
        for mask in 0..(1usize << quad.len()) {
            let mut a = self.a.clone();
            for (bit, (row, state, (lo, hi))) in quad.iter().enumerate() {
                a[(*row, *state)] += if mask & (1 << bit) != 0 { *hi } else { *lo };
            }
            push_unique(&mut out, (a, self.b.clone()));
        }
        out
    }

    fn quadratic_count(&self) -> usize {
        self.terms
            .iter()
            .filter(|t| matches!(t, BasisTerm::Quadratic { .. }))
            .count()
    }

    fn distinct_states(&self) -> usize {
        let mut states: Vec<usize> = Vec::new();
        for t in &self.terms {
            if let BasisTerm::Quadratic { state, .. } = t {
                if !states.contains(state) {
                    states.push(*state);
                }
            }
        }
        states.len()
    }
}

impl BasisModel for QuadraticBasisModel {
    fn n_x(&self) -> usize {
        self.a.nrows()
    }

    fn n_u(&self) -> usize {
        self.b.ncols()
    }

    fn n_theta(&self) -> usize {
        self.terms.len()
    }

    fn basis(&self, i: usize, x: &Vector, u: &Vector) -> Vector {
        if i == 0 {
            return &self.a * x + &self.b * u;
        }
        match &self.terms[i - 1] {
            BasisTerm::Quadratic { row, state } => {
                let mut out = Vector::zeros(self.n_x());
                out[*row] = x[*state] * x[*state];
                out
            }
            BasisTerm::Constant(v) => v.clone(),
        }
    }

    fn basis_jacobian(&self, i: usize, x: &Vector, _u: &Vector) -> (Matrix, Matrix) {
        if i == 0 {
            return (self.a.clone(), self.b.clone());
        }
        let mut jx = Matrix::zeros(self.n_x(), self.n_x());
        if let BasisTerm::Quadratic { row, state } = &self.terms[i - 1] {
            jx[(*row, *state)] = 2.0 * x[*state];
        }
        (jx, Matrix::zeros(self.n_x(), self.n_u()))
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn constant_basis(&self) -> &[usize] {
        &self.constant
    }

    fn jacobian_structure(&self) -> JacobianStructure {
        JacobianStructure::Affine { input_dependent: false }
    }

    fn basis_jacobian_bounds(&self, i: usize, x_box: &BoxSet, _u_box: &BoxSet) -> Option<JacobianBounds> {
        let (nx, nu) = (self.n_x(), self.n_u());
        if i == 0 {
            return Some(JacobianBounds {
                dx_lower: self.a.clone(),
                dx_upper: self.a.clone(),
                du_lower: self.b.clone(),
                du_upper: self.b.clone(),
            });
        }
        let mut dx_lower = Matrix::zeros(nx, nx);
        let mut dx_upper = Matrix::zeros(nx, nx);
        if let BasisTerm::Quadratic { row, state } = &self.terms[i - 1] {
            dx_lower[(*row, *state)] = 2.0 * x_box.lower[*state];
            dx_upper[(*row, *state)] = 2.0 * x_box.upper[*state];
            if !(dx_lower[(*row, *state)].is_finite() && dx_upper[(*row, *state)].is_finite()) {
                return None;
            }
        }
        Some(JacobianBounds {
            dx_lower,
            dx_upper,
            du_lower: Matrix::zeros(nx, nu),
            du_upper: Matrix::zeros(nx, nu),
        })
    }

    /// Uses whichever of the exact vertex product and the coefficient box
    /// has fewer vertices; both contain the Jacobian set.
    fn ldi(&self, x_box: &BoxSet, _u_box: &BoxSet, theta: &VPolytope) -> Result<Vec<(Matrix, Matrix)>, ModelError> {
        if !x_box.is_bounded() && self.quadratic_count() > 0 {
            return Err(ModelError::UnboundedJacobian);
        }
        let product = theta.len().saturating_mul(1usize << self.distinct_states().min(40));
        let coefficient = 1usize << self.quadratic_count().min(40);
        if product <= coefficient {
            Ok(self.ldi_vertex_product(x_box, theta))
        } else {
            Ok(self.ldi_coefficient_box(x_box, theta))
        }
    }
}
