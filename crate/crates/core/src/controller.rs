//! Outer iterations, backtracking line search and the warm shift.

use alloc::vec::Vec;
use thiserror::Error;

use crate::conic::{ConicBackend, SolverSettings};
use crate::geometry::VPolytope;
use crate::linalg::{Matrix, Vector};
use crate::linearize::{self, LinearizeError, NominalTrajectory, StepLinearization};
use crate::model::{self, BasisModel};
use crate::ocp::{self, CostDecrease, OcpError, OcpInput, OcpMode, OcpOutcome, SizeStats, TubeSolution};
use crate::problem::ProblemData;
use crate::terminal::{TerminalHorizon, TerminalParams};

/// Largest slack accepted by [`init_feasible`].
pub const INIT_SLACK_TOL: f64 = 1e-8;

/// Relaxed re-solves attempted by [`init_feasible`].
const INIT_ROUNDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("no feasible initial perturbation sequence (max slack {max_slack:e})")]
    InitialInfeasible { max_slack: f64 },
    #[error("perturbation sequence has length {found}, horizon is {expected}")]
    Length { expected: usize, found: usize },
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControllerConfig {
    pub iter_max: usize,
    /// Stop once `max_k ||v*_k||` falls below this.
    pub tolerance: f64,
    /// Halvings tried by the line search.
    pub line_search_max: usize,
    /// Recompute `d_Theta` whenever the parameter set changes.
    pub refresh_terminal: bool,
    pub solver: SolverSettings,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            iter_max: 10,
            tolerance: 1e-3,
            line_search_max: 8,
            refresh_terminal: true,
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LineSearchOutcome {
    NotNeeded,
    /// Feasible after this many halvings.
    Recovered(usize),
    Abandoned,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationReport {
    pub j_bar: Option<f64>,
    pub v_star_norm: f64,
    pub line_search: LineSearchOutcome,
    /// Solves attempted in this iteration, the first one included.
    pub solves: usize,
    pub n_hat: Option<usize>,
    /// Worst row of the problem re-evaluated at the returned optimum.
    pub row_violation: Option<f64>,
    pub stats: SizeStats,
    pub seconds: f64,
}

/// The last program solved in a step, kept for offline checks.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolvedIterate {
    /// Nominal states `x0_0..x0_N`.
    pub x0: Vec<Vector>,
    /// Nominal perturbations `v0_0..v0_{N-1}` the program was built around.
    pub v0: Vec<Vector>,
    pub theta0: Vector,
    pub horizon: TerminalHorizon,
    pub solution: TubeSolution,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepReport {
    pub t: usize,
    pub x_plant: Vector,
    pub u: Vector,
    pub iterations: Vec<IterationReport>,
    /// `||v*|| < tolerance` was reached.
    pub converged: bool,
    pub j_final: f64,
    pub sigma_hat: f64,
    /// `||x_t||_Q^2 + ||u_t||_R^2`.
    pub stage_cost: f64,
    /// The first iteration was abandoned and the shifted sequence reused.
    pub fallback: bool,
    pub last: Option<SolvedIterate>,
}

impl StepReport {
    pub fn j_per_iteration(&self) -> Vec<Option<f64>> {
        self.iterations.iter().map(|it| it.j_bar).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PrevStep {
    j_final: f64,
    sigma_hat: f64,
    stage_cost: f64,
}

impl PrevStep {
    fn row(&self) -> CostDecrease {
        CostDecrease::FirstIteration {
            prev_j_final: self.j_final,
            stage_cost: self.stage_cost,
            sigma_hat_prev: self.sigma_hat,
        }
    }
}

/// Controller state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub config: ControllerConfig,
    design: TerminalParams,
    params: TerminalParams,
    theta: VPolytope,
    theta0: Vector,
    v0: Vec<Vector>,
    v0_old: Vec<Vector>,
    x0_old: Option<Vec<Vector>>,
    prev: Option<PrevStep>,
    t: usize,
}

struct Attempt {
    traj: NominalTrajectory,
    horizon: Option<TerminalHorizon>,
    outcome: Option<OcpOutcome>,
    row_violation: Option<f64>,
}

impl Attempt {
    fn solution(&self) -> Option<&TubeSolution> {
        self.outcome.as_ref().and_then(|o| o.solution())
    }
}

fn stage_cost(q: &Matrix, r: &Matrix, x: &Vector, u: &Vector) -> f64 {
    x.dot(&(q * x)) + u.dot(&(r * u))
}

fn blend(old: &Vector, new: &Vector, alpha: f64) -> Vector {
    old + (new - old) * alpha
}

impl Controller {
    /// `v0` must be feasible at the first plant state (see [`init_feasible`]).
    pub fn new(config: ControllerConfig, design: TerminalParams, theta: VPolytope, v0: Vec<Vector>) -> Self {
        let theta0 = theta.mean();
        let params = if config.refresh_terminal {
            design.with_theta(&theta)
        } else {
            design.clone()
        };
        Self {
            config,
            design,
            params,
            theta,
            theta0,
            v0_old: v0.clone(),
            v0,
            x0_old: None,
            prev: None,
            t: 0,
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn v0(&self) -> &[Vector] {
        &self.v0
    }

    pub fn theta(&self) -> &VPolytope {
        &self.theta
    }

    pub fn theta0(&self) -> &Vector {
        &self.theta0
    }

    pub fn params(&self) -> &TerminalParams {
        &self.params
    }

    /// Install a new parameter set and nominal parameter.
    pub fn set_parameters(&mut self, theta: VPolytope, theta0: Vector) {
        if self.config.refresh_terminal {
            self.params = self.design.with_theta(&theta);
        }
        self.theta = theta;
        self.theta0 = theta0;
    }

    fn attempt<M: BasisModel, B: ConicBackend + ?Sized>(
        &self,
        backend: &B,
        pd: &ProblemData<M>,
        x00: &Vector,
        v0: &[Vector],
        x_plant: &Vector,
        cost_decrease: CostDecrease,
    ) -> Result<Attempt, ControllerError> {
        let traj = linearize::rollout(&pd.model, &self.params.k, x00, v0, &self.theta0)?;
        let lins = match linearize::linearize_trajectory(pd, &traj, &self.theta, &self.params.shape, self.params.sigma) {
            Ok(l) => l,
            Err(LinearizeError::Diverged(_)) => return Ok(failed(traj)),
            Err(e) => return Err(e.into()),
        };
        let horizon = match ocp::terminal_horizon(&self.params, &traj) {
            Ok(h) => h,
            Err(_) => return Ok(failed(traj)),
        };
        let input = OcpInput {
            pd,
            traj: &traj,
            lins: &lins,
            params: &self.params,
            horizon,
            x_plant,
            cost_decrease,
            mode: OcpMode::Robust,
        };
        let outcome = ocp::solve(backend, &input, &self.config.solver)?;
        let row_violation = outcome.solution().map(|s| ocp::check_rows(&input, s).max_violation);
        Ok(Attempt {
            traj,
            horizon: Some(horizon),
            outcome: Some(outcome),
            row_violation,
        })
    }

    /// One time step: iterate, apply `u = K x_p + v0_0`, shift.
    pub fn step<M: BasisModel, B: ConicBackend + ?Sized>(
        &mut self,
        backend: &B,
        pd: &ProblemData<M>,
        x_plant: &Vector,
    ) -> Result<(Vector, StepReport), ControllerError> {
        let n = pd.horizon;
        if self.v0.len() != n {
            return Err(ControllerError::Length {
                expected: n,
                found: self.v0.len(),
            });
        }
        let cfg = self.config;
        let mut x00 = x_plant.clone();
        let x00_old = self.x0_old.as_ref().map_or_else(|| x_plant.clone(), |x| x[0].clone());
        let mut iterations = Vec::new();
        let mut last: Option<(f64, SolvedIterate)> = None;
        let mut v_star_norm = f64::INFINITY;
        let mut abandoned_first = false;
        let mut i = 1;

        while i <= cfg.iter_max && v_star_norm >= cfg.tolerance {
            let t_start = backend.clock();
            let row = if i == 1 {
                self.prev.map_or(CostDecrease::None, |p| p.row())
            } else {
                CostDecrease::Subsequent {
                    prev_j: last.as_ref().map(|l| l.0).expect("an earlier iteration solved"),
                }
            };
            let mut att = self.attempt(backend, pd, &x00, &self.v0, x_plant, row)?;
            let mut solves = 1;
            let mut outcome = LineSearchOutcome::NotNeeded;
            let mut stats = att.outcome.as_ref().map(|o| *o.stats()).unwrap_or_default();
            if att.solution().is_none() {
                outcome = LineSearchOutcome::Abandoned;
                let mut alpha = 1.0;
                for trial in 1..=cfg.line_search_max {
                    alpha *= 0.5;
                    if i == 1 {
                        x00 = blend(&x00_old, &x00, alpha);
                    }
                    self.v0 = self.v0_old.iter().zip(&self.v0).map(|(o, v)| blend(o, v, alpha)).collect();
                    att = self.attempt(backend, pd, &x00, &self.v0, x_plant, row)?;
                    solves += 1;
                    if let Some(o) = &att.outcome {
                        stats.solve_seconds += o.stats().solve_seconds;
                        stats.assembly_seconds += o.stats().assembly_seconds;
                    }
                    if att.solution().is_some() {
                        outcome = LineSearchOutcome::Recovered(trial);
                        break;
                    }
                }
            }
            let v_star: Vec<Vector> = match att.solution() {
                Some(sol) => {
                    last = Some((
                        sol.j_bar,
                        SolvedIterate {
                            x0: att.traj.x.clone(),
                            v0: att.traj.v.clone(),
                            theta0: self.theta0.clone(),
                            horizon: att.horizon.expect("solved attempts carry a horizon"),
                            solution: sol.clone(),
                        },
                    ));
                    sol.v.clone()
                }
                None => {
                    self.v0 = self.v0_old.clone();
                    if i == 1 {
                        abandoned_first = true;
                        if self.x0_old.is_none() {
                            return Err(ControllerError::InitialInfeasible { max_slack: f64::NAN });
                        }
                    }
                    i = cfg.iter_max;
                    (0..n).map(|_| Vector::zeros(pd.n_u())).collect()
                }
            };
            v_star_norm = v_star.iter().map(|v| v.norm()).fold(0.0, f64::max);
            iterations.push(IterationReport {
                j_bar: att.solution().map(|s| s.j_bar),
                v_star_norm,
                line_search: outcome,
                solves,
                n_hat: att.horizon.map(|h| h.n_hat),
                row_violation: att.row_violation,
                stats,
                seconds: backend.clock() - t_start,
            });
            self.v0_old = self.v0.clone();
            self.v0 = self.v0.iter().zip(&v_star).map(|(a, b)| a + b).collect();
            i += 1;
        }

        // Nominal trajectory generated by the last accepted sequence.
        if abandoned_first {
            x00 = x00_old.clone();
        }
        let x0_final = linearize::rollout(&pd.model, &self.params.k, &x00, &self.v0_old, &self.theta0)?.x;
        let (j_final, sigma_hat) = match (&last, abandoned_first, self.prev) {
            (Some((j, it)), false, _) => (*j, it.horizon.sigma_hat),
            (_, _, Some(p)) => (p.row().bound().expect("first-iteration row has a bound"), p.sigma_hat),
            _ => return Err(ControllerError::InitialInfeasible { max_slack: f64::NAN }),
        };
        if abandoned_first && last.is_none() {
            // Bookkeeping solve at the shifted sequence, kept for offline checks.
            let row = self.prev.map_or(CostDecrease::None, |p| p.row());
            let att = self.attempt(backend, pd, &x00, &self.v0_old, x_plant, row)?;
            if let (Some(sol), Some(h)) = (att.solution(), att.horizon) {
                last = Some((
                    sol.j_bar,
                    SolvedIterate {
                        x0: att.traj.x.clone(),
                        v0: att.traj.v.clone(),
                        theta0: self.theta0.clone(),
                        horizon: h,
                        solution: sol.clone(),
                    },
                ));
            }
        }

        let u = &self.params.k * x_plant + &self.v0[0];
        let stage = stage_cost(&pd.q, &pd.r, x_plant, &u);

        // Shift.
        let zero = Vector::zeros(pd.n_u());
        self.v0.remove(0);
        self.v0.push(zero.clone());
        self.v0_old.remove(0);
        self.v0_old.push(zero.clone());
        let tail = model::eval_closed_loop(&pd.model, &self.params.k, &x0_final[n], &zero, &self.theta0)
            .map_err(LinearizeError::from)?;
        let mut shifted: Vec<Vector> = x0_final[1..].to_vec();
        shifted.push(tail);
        self.x0_old = Some(shifted);
        self.prev = Some(PrevStep {
            j_final,
            sigma_hat,
            stage_cost: stage,
        });

        let report = StepReport {
            t: self.t,
            x_plant: x_plant.clone(),
            u: u.clone(),
            converged: v_star_norm < cfg.tolerance,
            iterations,
            j_final,
            sigma_hat,
            stage_cost: stage,
            fallback: abandoned_first,
            last: last.map(|l| l.1),
        };
        self.t += 1;
        Ok((u, report))
    }
}

fn failed(traj: NominalTrajectory) -> Attempt {
    Attempt {
        traj,
        horizon: None,
        outcome: None,
        row_violation: None,
    }
}

/// A perturbation sequence for which the problem is feasible at `x_init`.
///
/// Tries `v0 = 0`; otherwise minimizes a shared constraint slack and
/// re-linearizes around the relaxed optimum until a clean solve succeeds.
pub fn init_feasible<M: BasisModel, B: ConicBackend + ?Sized>(
    backend: &B,
    pd: &ProblemData<M>,
    params: &TerminalParams,
    theta: &VPolytope,
    x_init: &Vector,
    settings: &SolverSettings,
) -> Result<Vec<Vector>, ControllerError> {
    let theta0 = theta.mean();
    let mut v0: Vec<Vector> = (0..pd.horizon).map(|_| Vector::zeros(pd.n_u())).collect();
    let mut max_slack = f64::INFINITY;
    for _ in 0..INIT_ROUNDS {
        let traj = linearize::rollout(&pd.model, &params.k, x_init, &v0, &theta0)?;
        let lins: Vec<StepLinearization> = match linearize::linearize_trajectory(pd, &traj, theta, &params.shape, params.sigma) {
            Ok(l) => l,
            Err(LinearizeError::Diverged(_)) => break,
            Err(e) => return Err(e.into()),
        };
        let Ok(horizon) = ocp::terminal_horizon(params, &traj) else {
            break;
        };
        let mut input = OcpInput {
            pd,
            traj: &traj,
            lins: &lins,
            params,
            horizon,
            x_plant: x_init,
            cost_decrease: CostDecrease::None,
            mode: OcpMode::Robust,
        };
        if ocp::solve(backend, &input, settings)?.solution().is_some() {
            return Ok(v0);
        }
        input.mode = OcpMode::Relaxed;
        let relaxed = ocp::solve(backend, &input, settings)?;
        let Some(sol) = relaxed.solution() else {
            break;
        };
        max_slack = sol.slack;
        if sol.slack > INIT_SLACK_TOL {
            break;
        }
        v0 = v0.iter().zip(&sol.v).map(|(a, b)| a + b).collect();
    }
    Err(ControllerError::InitialInfeasible { max_slack })
}
