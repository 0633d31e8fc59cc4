//! Offline re-checks of a closed-loop trace.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tubempc_core::controller::SolvedIterate;
use tubempc_core::geometry::simplex_vertices;
use tubempc_core::model;
use tubempc_core::ocp::COST_DECREASE_RTOL;
use tubempc_core::{HPolytope, Matrix, ProblemData, TerminalParams, VPolytope, Vector};

use crate::bench::{sample_convex, sample_disturbance, ClosedLoopTrace};
use crate::formats::FormatError;

/// Slack on set memberships evaluated from logged floating-point data.
pub const MEMBERSHIP_TOL: f64 = 1e-7;
/// Slack on the closed-loop cost-decrease inequality.
pub const COST_TOL: f64 = 1e-6;
/// Absolute slack added to the per-iteration cost-decrease tolerance.
pub const MONOTONE_ATOL: f64 = 1e-8;
/// Slack on row re-evaluation at the solver optimum.
pub const ROW_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub steps: usize,
    /// `(x_t, u_t)` outside `X x U`.
    pub constraint_violations: usize,
    /// `J_{t+1} - J_t > -stage_t + sigma_bar^2 + tol`.
    pub cost_decrease_violations: usize,
    /// Largest `J_{t+1} - J_t + stage_t - sigma_bar^2`.
    pub worst_cost_margin: f64,
    /// `J` increasing across the iterations of one step.
    pub monotone_violations: usize,
    /// Steps whose first iteration was abandoned.
    pub fallbacks: usize,
    /// Offsets of the parameter set increasing.
    pub nesting_violations: usize,
    /// True parameter outside the parameter set.
    pub consistency_violations: usize,
    /// Parameter sets whose vertex count differs from `n_theta + 1`.
    pub vertex_count_violations: usize,
    pub estimator_failures: usize,
    pub max_row_violation: f64,
    pub row_violations: usize,
    /// Monte Carlo tube samples leaving the tube or the constraints.
    pub tube_samples: usize,
    pub tube_violations: usize,
    pub worst_tube_ratio: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.constraint_violations == 0
            && self.cost_decrease_violations == 0
            && self.monotone_violations == 0
            && self.nesting_violations == 0
            && self.consistency_violations == 0
            && self.vertex_count_violations == 0
            && self.row_violations == 0
            && self.tube_violations == 0
    }
}

fn in_polytope(h: &HPolytope, x: &Vector) -> bool {
    h.max_violation(x).is_ok_and(|v| v <= MEMBERSHIP_TOL)
}

/// Vertices of the simplex `[-I; 1'] theta <= offsets`.
pub fn theta_vertices(offsets: &Vector) -> Result<VPolytope, FormatError> {
    Ok(simplex_vertices(&HPolytope::simplex(offsets.clone())?)?)
}

/// Result of re-simulating one solved program under sampled uncertainty.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TubeCheck {
    pub samples: usize,
    pub violations: usize,
    /// Largest `||e_k||_V / beta_k` seen.
    pub worst_ratio: f64,
}

/// Samples `(theta, w_0..w_{N-1})`, simulates the perturbed prediction
/// `x_{k+1} = f(x_k, K x_k + v0_k + v_k, theta) + w_k` from the plant state
/// and checks `e_k = x_k - x0_k - z_k` against `E(V, beta_k^2)` and
/// `(x_k, u_k)` against `X x U`.
pub fn tube_monte_carlo(
    pd: &ProblemData,
    params: &TerminalParams,
    it: &SolvedIterate,
    x_plant: &Vector,
    theta: &VPolytope,
    samples: usize,
    rng: &mut impl Rng,
) -> TubeCheck {
    let n = it.v0.len();
    let sol = &it.solution;
    let k_gain: &Matrix = &params.k;
    let mut out = TubeCheck {
        samples,
        ..TubeCheck::default()
    };
    for _ in 0..samples {
        let th = if rng.gen_bool(0.5) {
            theta.vertices()[rng.gen_range(0..theta.len())].clone()
        } else {
            sample_convex(theta.vertices(), rng)
        };
        let mut x = x_plant.clone();
        let mut bad = false;
        for k in 0..=n {
            let e = &x - &it.x0[k] - &sol.z[k];
            let beta = sol.beta[k];
            let en = params.shape.norm(&e);
            if beta > 1e-6 {
                out.worst_ratio = out.worst_ratio.max(en / beta);
            }
            if en > beta * (1.0 + 1e-6) + MEMBERSHIP_TOL {
                bad = true;
            }
            if k == n {
                break;
            }
            let u = k_gain * &x + &it.v0[k] + &sol.v[k];
            if !in_polytope(&pd.x_set, &x) || !in_polytope(&pd.u_set, &u) {
                bad = true;
            }
            let w = sample_disturbance(&pd.w, rng);
            match model::eval_dynamics(&pd.model, &x, &u, &th) {
                Ok(next) => x = next + w,
                Err(_) => {
                    bad = true;
                    break;
                }
            }
        }
        if bad {
            out.violations += 1;
        }
    }
    out
}

/// Checks every invariant recorded in `trace`; `tube_samples` Monte Carlo
/// samples are drawn per solved program (0 skips the tube check).
pub fn verify_trace(trace: &ClosedLoopTrace, tube_samples: usize, rng: &mut impl Rng) -> Result<VerifyReport, FormatError> {
    let pd = trace.problem.to_problem()?;
    let mut rep = VerifyReport {
        steps: trace.reports.len(),
        worst_cost_margin: f64::NEG_INFINITY,
        ..VerifyReport::default()
    };
    for (x, u) in trace.states.iter().zip(&trace.inputs) {
        if !in_polytope(&pd.x_set, x) || !in_polytope(&pd.u_set, u) {
            rep.constraint_violations += 1;
        }
    }
    let n_theta = pd.n_theta();
    let mut sets = Vec::with_capacity(trace.theta_offsets.len());
    for (t, h) in trace.theta_offsets.iter().enumerate() {
        let verts = theta_vertices(h)?;
        if verts.len() != n_theta + 1 {
            rep.vertex_count_violations += 1;
        }
        if !HPolytope::simplex(h.clone())?.contains(&trace.theta_star, MEMBERSHIP_TOL) {
            rep.consistency_violations += 1;
        }
        if t > 0 && (0..h.len()).any(|i| h[i] > trace.theta_offsets[t - 1][i]) {
            rep.nesting_violations += 1;
        }
        sets.push(verts);
    }
    rep.estimator_failures = trace.estimator_errors.iter().filter(|e| e.is_some()).count();
    for (t, r) in trace.reports.iter().enumerate() {
        if r.fallback {
            rep.fallbacks += 1;
        }
        let js: Vec<f64> = r.iterations.iter().filter_map(|i| i.j_bar).collect();
        // each program may exceed the previous cost by its row tolerance
        if js
            .windows(2)
            .any(|w| w[1] > w[0] + COST_DECREASE_RTOL * w[0].abs().max(1.0) + MONOTONE_ATOL)
        {
            rep.monotone_violations += 1;
        }
        for it in &r.iterations {
            if let Some(v) = it.row_violation {
                rep.max_row_violation = rep.max_row_violation.max(v);
                if v > ROW_TOL {
                    rep.row_violations += 1;
                }
            }
        }
        if let Some(next) = trace.reports.get(t + 1) {
            let sigma_bar = trace.design.with_theta(&sets[t]).sigma_bar();
            let margin = next.j_final - r.j_final + r.stage_cost - sigma_bar * sigma_bar;
            rep.worst_cost_margin = rep.worst_cost_margin.max(margin);
            if margin > COST_TOL {
                rep.cost_decrease_violations += 1;
            }
        }
        if tube_samples > 0 {
            if let Some(last) = &r.last {
                let params = trace.design.with_theta(&sets[t]);
                let c = tube_monte_carlo(&pd, &params, last, &r.x_plant, &sets[t], tube_samples, rng);
                rep.tube_samples += c.samples;
                rep.tube_violations += c.violations;
                rep.worst_tube_ratio = rep.worst_tube_ratio.max(c.worst_ratio);
            }
        }
    }
    if !rep.worst_cost_margin.is_finite() {
        rep.worst_cost_margin = 0.0;
    }
    Ok(rep)
}
