//! Set-membership estimation of the parameter polytope.
//!
//! The facet normals are fixed; each update tightens the offsets by one LP
//! per facet over the last `N_Theta` transitions.

use alloc::collections::VecDeque;
use thiserror::Error;

use crate::conic::{ConicBackend, ConicProgram, Label, LinExpr, SolveStatus, SolverSettings};
use crate::geometry::{GeometryError, HPolytope, PolytopeSet, VPolytope};
use crate::linalg::{Matrix, Vector};
use crate::model::BasisModel;

/// Default estimation window.
pub const DEFAULT_WINDOW: usize = 5;

/// Added to every tightened offset so round-off cannot cut off the true
/// parameter.
pub const OFFSET_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("data inconsistent with the disturbance and parameter sets (facet {facet})")]
    Inconsistent { facet: usize },
    #[error("estimation LP failed on facet {facet}: {status:?}")]
    Solver { facet: usize, status: SolveStatus },
    #[error("parameter set must use the simplex facet template [-I; 1']")]
    UnsupportedTemplate,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One observed step `(x, u) -> x_next`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Transition {
    pub x: Vector,
    pub u: Vector,
    pub x_next: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate {
    set: PolytopeSet,
    theta0: Vector,
    window: VecDeque<Transition>,
    window_len: usize,
}

/// Arithmetic mean of the vertices.
pub fn nominal(vertices: &VPolytope) -> Vector {
    vertices.mean()
}

fn is_simplex_template(h: &HPolytope) -> bool {
    let n = h.dim();
    h.n_rows() == n + 1 && HPolytope::simplex(Vector::from_element(n + 1, 1.0)).is_ok_and(|t| t.normals() == h.normals())
}

impl ParamEstimate {
    pub fn new(prior: &PolytopeSet, window_len: usize) -> Result<Self, EstimatorError> {
        if !is_simplex_template(&prior.h) {
            return Err(EstimatorError::UnsupportedTemplate);
        }
        let set = PolytopeSet::simplex(prior.h.offsets().clone())?;
        Ok(Self {
            theta0: nominal(&set.v),
            set,
            window: VecDeque::with_capacity(window_len),
            window_len: window_len.max(1),
        })
    }

    pub fn set(&self) -> &PolytopeSet {
        &self.set
    }

    pub fn offsets(&self) -> &Vector {
        self.set.h.offsets()
    }

    pub fn vertices(&self) -> &VPolytope {
        &self.set.v
    }

    pub fn nominal(&self) -> &Vector {
        &self.theta0
    }

    pub fn window(&self) -> impl Iterator<Item = &Transition> {
        self.window.iter()
    }

    /// Adds a transition and tightens every facet. On any error the
    /// estimate keeps its previous offsets (the transition stays in the
    /// window).
    pub fn update<M: BasisModel + ?Sized, B: ConicBackend + ?Sized>(
        &mut self,
        backend: &B,
        model: &M,
        w: &VPolytope,
        transition: Transition,
        settings: &SolverSettings,
    ) -> Result<(), EstimatorError> {
        if self.window.len() == self.window_len {
            self.window.pop_front();
        }
        self.window.push_back(transition);
        let h_old = self.set.h.offsets().clone();
        let mut h_new = h_old.clone();
        for facet in 0..self.set.h.n_rows() {
            let cp = facet_lp(model, &self.set.h, w, self.window.iter(), facet);
            let report = backend.solve_lp(&cp, settings);
            match report.status {
                SolveStatus::Optimal { objective, .. } => {
                    h_new[facet] = (-objective + OFFSET_MARGIN).min(h_old[facet]);
                }
                SolveStatus::Infeasible => return Err(EstimatorError::Inconsistent { facet }),
                status => return Err(EstimatorError::Solver { facet, status }),
            }
        }
        self.set = PolytopeSet::simplex(h_new)?;
        self.theta0 = nominal(&self.set.v);
        Ok(())
    }
}

/// `D = [f_1 .. f_p]` and `d = f_0` at `(x, u)`.
pub fn regressors<M: BasisModel + ?Sized>(model: &M, x: &Vector, u: &Vector) -> (Matrix, Vector) {
    let p = model.n_theta();
    let mut d_mat = Matrix::zeros(model.n_x(), p);
    for i in 0..p {
        d_mat.set_column(i, &model.basis(i + 1, x, u));
    }
    (d_mat, model.basis(0, x, u))
}

/// `max H_i theta` subject to `theta in Theta_{t-1}` and
/// `x_next - D theta - d in W` for every transition in the window, with
/// `W` membership through convex weights on its vertices.
///
/// Columns: `theta`, then one weight vector per transition. The objective
/// is `-H_i theta` (minimized).
pub fn facet_lp<'a, M: BasisModel + ?Sized>(
    model: &M,
    prior: &HPolytope,
    w: &VPolytope,
    window: impl Iterator<Item = &'a Transition>,
    facet: usize,
) -> ConicProgram {
    let p = prior.dim();
    let nx = model.n_x();
    let mut cp = ConicProgram::new();
    let th = cp.add_vars("theta", p);
    let row = prior.row(facet);
    for c in 0..p {
        cp.minimize(th + c, -row[c]);
    }
    for r in 0..prior.n_rows() {
        let h = prior.row(r);
        let mut e = LinExpr::constant(prior.offsets()[r]);
        for c in 0..p {
            e.add_term(th + c, -h[c]);
        }
        cp.nonneg(Label::new("prior", r), e);
    }
    let nw = w.len();
    for (l, tr) in window.enumerate() {
        let (d_mat, d) = regressors(model, &tr.x, &tr.u);
        let lam = cp.add_vars("weights", nw);
        let mut sum = LinExpr::constant(-1.0);
        for r in 0..nw {
            sum.add_term(lam + r, 1.0);
            cp.nonneg(Label::new("weight_sign", l * nw + r), LinExpr::var(lam + r));
        }
        cp.equal(Label::new("weight_sum", l), sum);
        // res = x_next - D theta - d - sum_r lam_r w_r, |res| <= tol
        for i in 0..nx {
            let mut res = LinExpr::constant(tr.x_next[i] - d[i]);
            for c in 0..p {
                res.add_term(th + c, -d_mat[(i, c)]);
            }
            for (r, wr) in w.vertices().iter().enumerate() {
                res.add_term(lam + r, -wr[i]);
            }
            cp.equal(Label::new("residual", l * nx + i), res);
        }
    }
    cp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BasisTerm, QuadraticBasisModel};
    use nalgebra::{dmatrix, dvector};

    /// `x+ = theta x + w` written as a one-state model with `f_1 = x`.
    struct ScalarGain;

    impl BasisModel for ScalarGain {
        fn n_x(&self) -> usize {
            1
        }
        fn n_u(&self) -> usize {
            1
        }
        fn n_theta(&self) -> usize {
            1
        }
        fn basis(&self, i: usize, x: &Vector, _u: &Vector) -> Vector {
            if i == 0 {
                dvector![0.0]
            } else {
                x.clone()
            }
        }
        fn basis_jacobian(&self, i: usize, _x: &Vector, _u: &Vector) -> (Matrix, Matrix) {
            (dmatrix![if i == 0 { 0.0 } else { 1.0 }], dmatrix![0.0])
        }
        fn lipschitz(&self) -> f64 {
            1.0
        }
    }

    fn prior() -> PolytopeSet {
        PolytopeSet::simplex(dvector![0.0, 0.2]).unwrap()
    }

    fn w() -> VPolytope {
        VPolytope::new(alloc::vec![dvector![-0.01], dvector![0.01]]).unwrap()
    }

    fn tr(x: f64, xn: f64) -> Transition {
        Transition {
            x: dvector![x],
            u: dvector![0.0],
            x_next: dvector![xn],
        }
    }

    #[test]
    fn nominal_examples() {
        let interval = VPolytope::new(alloc::vec![dvector![0.09], dvector![0.10]]).unwrap();
        assert!((nominal(&interval)[0] - 0.095).abs() < 1e-15);
        let simplex = PolytopeSet::simplex(dvector![0.0, 0.0, 1.0]).unwrap();
        let m = nominal(&simplex.v);
        assert!((m[0] - 1.0 / 3.0).abs() < 1e-15 && (m[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(nominal(&VPolytope::point(dvector![0.3, -1.0])), dvector![0.3, -1.0]);
    }

    #[test]
    fn template_is_checked() {
        let est = ParamEstimate::new(&prior(), DEFAULT_WINDOW).unwrap();
        assert_eq!(est.vertices().len(), 2);
        assert!((est.nominal()[0] - 0.1).abs() < 1e-15);
        let bx = PolytopeSet::from_box(&crate::geometry::BoxSet::symmetric(1, 1.0)).unwrap();
        // Same two normals as the 1-D simplex, in the other order.
        assert_eq!(ParamEstimate::new(&bx, DEFAULT_WINDOW), Err(EstimatorError::UnsupportedTemplate));
        let two = PolytopeSet::from_box(&crate::geometry::BoxSet::symmetric(2, 1.0)).unwrap();
        assert_eq!(ParamEstimate::new(&two, 5), Err(EstimatorError::UnsupportedTemplate));
    }

    #[test]
    fn facet_lp_feasible_points() {
        let window = [tr(2.0, 0.19)];
        let h = prior().h;
        let cp = facet_lp(&ScalarGain, &h, &w(), window.iter(), 1);
        assert!(cp.is_well_formed());
        // theta = 0.1 leaves w = -0.01, the first vertex.
        assert!(cp.max_violation(&[0.1, 1.0, 0.0]).0 <= 1e-12);
        assert!(cp.max_violation(&[0.09, 0.0, 1.0]).0 <= 1e-12);
        // theta = 0.11 leaves a residual of 0.03 - 0.01 outside W.
        let (v, _) = cp.max_violation(&[0.11, 1.0, 0.0]);
        assert!(v > 0.01);
        assert_eq!(cp.objective, alloc::vec![(0, -1.0)]);
    }

    #[test]
    fn regressors_of_quadratic_model() {
        let m = QuadraticBasisModel::new(
            dmatrix![1.0, 0.0; 0.0, 1.0],
            dmatrix![0.0; 1.0],
            alloc::vec![BasisTerm::Quadratic { row: 1, state: 0 }],
            1.0,
        )
        .unwrap();
        let (d_mat, d) = regressors(&m, &dvector![2.0, 1.0], &dvector![0.5]);
        assert_eq!(d_mat, dmatrix![0.0; 4.0]);
        assert_eq!(d, dvector![2.0, 1.5]);
    }
}
