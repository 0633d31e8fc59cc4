//! The data that defines one control problem.

use thiserror::Error;

use crate::geometry::{BoxSet, GeometryError, HPolytope, PolytopeSet, VPolytope};
use crate::linalg::{self, Matrix};
use crate::model::{BasisModel, QuadraticBasisModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("{what} has dimension {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("origin is not in the interior of {0}")]
    OriginNotInterior(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Model, constraint sets, uncertainty sets and weights.
///
/// `v_set = None` means the input perturbation is unconstrained.
/// `x_hat`, `u_hat` bound the region on which the terminal LDI is valid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProblemData<M = QuadraticBasisModel> {
    pub model: M,
    pub x_set: HPolytope,
    pub u_set: HPolytope,
    pub theta0: PolytopeSet,
    pub w: VPolytope,
    pub s_set: PolytopeSet,
    pub v_set: Option<PolytopeSet>,
    pub q: Matrix,
    pub r: Matrix,
    pub horizon: usize,
    pub x_hat: BoxSet,
    pub u_hat: BoxSet,
}

impl<M: BasisModel> ProblemData<M> {
    pub fn n_x(&self) -> usize {
        self.model.n_x()
    }

    pub fn n_u(&self) -> usize {
        self.model.n_u()
    }

    pub fn n_theta(&self) -> usize {
        self.model.n_theta()
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let (nx, nu, nt) = (self.n_x(), self.n_u(), self.n_theta());
        let dims = [
            ("state set", nx, self.x_set.dim()),
            ("input set", nu, self.u_set.dim()),
            ("parameter set", nt, self.theta0.dim()),
            ("disturbance set", nx, self.w.dim()),
            ("state perturbation set", nx, self.s_set.dim()),
            ("Q", nx, self.q.nrows()),
            ("R", nu, self.r.nrows()),
            ("LDI state region", nx, self.x_hat.dim()),
            ("LDI input region", nu, self.u_hat.dim()),
        ];
        for (what, expected, found) in dims {
            if expected != found {
                return Err(ProblemError::Dimension { what, expected, found });
            }
        }
        if let Some(v) = &self.v_set {
            if v.dim() != nu {
                return Err(ProblemError::Dimension {
                    what: "input perturbation set",
                    expected: nu,
                    found: v.dim(),
                });
            }
            if v.h.offsets().iter().any(|&o| o <= 0.0) {
                return Err(ProblemError::OriginNotInterior("input perturbation set"));
            }
        }
        if !linalg::is_positive_definite(&self.q) {
            return Err(ProblemError::NotPositiveDefinite("Q"));
        }
        if !linalg::is_positive_definite(&self.r) {
            return Err(ProblemError::NotPositiveDefinite("R"));
        }
        if self.horizon == 0 {
            return Err(ProblemError::EmptyHorizon);
        }
        if self.u_set.offsets().iter().any(|&o| o <= 0.0) {
            return Err(ProblemError::OriginNotInterior("input set"));
        }
        if self.s_set.h.offsets().iter().any(|&o| o <= 0.0) {
            return Err(ProblemError::OriginNotInterior("state perturbation set"));
        }
        Ok(())
    }

    /// `X cap X_hat cap {x : Kx in U cap U_hat}` as one row set.
    pub fn aggregate_constraints(&self, gain: &Matrix) -> Result<HPolytope, ProblemError> {
        let states = self.x_set.intersect(&self.x_hat.to_hpolytope())?;
        let inputs = self.u_set.intersect(&self.u_hat.to_hpolytope())?;
        Ok(states.intersect(&inputs.preimage(gain)?)?)
    }
}
