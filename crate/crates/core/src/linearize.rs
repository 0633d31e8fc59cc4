//! Nominal rollouts and the per-step linearization records.

use alloc::vec::Vec;
use thiserror::Error;

use crate::geometry::{EllipsoidShape, VPolytope};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{self, BasisModel, JacobianPair, ModelError};
use crate::problem::ProblemData;
use crate::tube::{self, TubeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinearizeError {
    #[error("nominal rollout diverged at step {0}")]
    Diverged(usize),
    #[error("perturbation sequence has length {found}, horizon is {expected}")]
    Length { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tube(#[from] TubeError),
}

/// `x0[k+1] = f_K(x0[k], v0[k], theta0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalTrajectory {
    pub x: Vec<Vector>,
    pub v: Vec<Vector>,
    pub theta0: Vector,
    pub gain: Matrix,
}

impl NominalTrajectory {
    pub fn horizon(&self) -> usize {
        self.v.len()
    }

    /// Nominal inputs `K x0_k + v0_k`.
    pub fn inputs(&self) -> Vec<Vector> {
        self.v.iter().zip(&self.x).map(|(v, x)| &self.gain * x + v).collect()
    }
}

/// One linearization record per prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLinearization {
    pub phi: Matrix,
    pub b: Matrix,
    pub delta0: Vec<Vector>,
    pub pairs: Vec<JacobianPair>,
    pub lambda: f64,
}

pub fn rollout<M: BasisModel + ?Sized>(
    m: &M,
    gain: &Matrix,
    x_init: &Vector,
    v0: &[Vector],
    theta0: &Vector,
) -> Result<NominalTrajectory, LinearizeError> {
    let mut x = Vec::with_capacity(v0.len() + 1);
    x.push(x_init.clone());
    for (k, v) in v0.iter().enumerate() {
        let next = model::eval_closed_loop(m, gain, &x[k], v, theta0)?;
        if !linalg::all_finite(&next) {
            return Err(LinearizeError::Diverged(k + 1));
        }
        x.push(next);
    }
    Ok(NominalTrajectory {
        x,
        v: v0.to_vec(),
        theta0: theta0.clone(),
        gain: gain.clone(),
    })
}

/// `Phi_k, B_k, W0_k, W1_k, lambda_k` for `k = 0..N-1`.
pub fn linearize_trajectory<M: BasisModel>(
    pd: &ProblemData<M>,
    traj: &NominalTrajectory,
    theta: &VPolytope,
    shape: &EllipsoidShape,
    sigma: f64,
) -> Result<Vec<StepLinearization>, LinearizeError> {
    if traj.horizon() != pd.horizon {
        return Err(LinearizeError::Length {
            expected: pd.horizon,
            found: traj.horizon(),
        });
    }
    let psis = tube::psi_set(shape, pd.w.vertices(), sigma)?;
    let mut out = Vec::with_capacity(traj.horizon());
    for k in 0..traj.horizon() {
        let (x0, v0) = (&traj.x[k], &traj.v[k]);
        let (phi, b) = model::closed_loop_jacobians(&pd.model, x0, v0, &traj.theta0, &traj.gain);
        let mut delta0: Vec<Vector> = Vec::new();
        for d in model::param_disturbance_vertices(&pd.model, x0, v0, &traj.theta0, theta, &traj.gain) {
            if !delta0.contains(&d) {
                delta0.push(d);
            }
        }
        let pairs = model::jacobian_extreme_set(
            &pd.model,
            x0,
            v0,
            &traj.theta0,
            &pd.s_set,
            pd.v_set.as_ref(),
            theta,
            &traj.gain,
        )?;
        let lambda = tube::lambda_from_psis(&phi, &pairs, shape, &psis);
        out.push(StepLinearization {
            phi,
            b,
            delta0,
            pairs,
            lambda,
        });
    }
    Ok(out)
}
