//! The online SOCP: assembly, extraction, validation and size statistics.

use alloc::vec::Vec;
use thiserror::Error;

use crate::conic::{affine_map, ConicBackend, ConicProgram, Label, LinExpr, SolveStatus, SolverSettings};
use crate::linalg::{self, Matrix, Vector};
use crate::linearize::{NominalTrajectory, StepLinearization};
use crate::model::BasisModel;
use crate::problem::ProblemData;
use crate::terminal::{self, OmegaColumns, TerminalError, TerminalHorizon, TerminalParams};

/// Largest violation of any row accepted by [`extract`].
pub const VALIDATION_TOL: f64 = 1e-6;

/// Relative slack on the cost-decrease rows.
pub const COST_DECREASE_RTOL: f64 = 1e-8;

/// Weight of `J` in the objective of the slack-relaxed variant.
const RELAXED_COST_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcpError {
    #[error("{what} has length {found}, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("solution violates {kind}[{index}] by {violation:e}")]
    ValidationFailed {
        violation: f64,
        kind: &'static str,
        index: usize,
    },
    #[error("solver returned {0:?}")]
    NotSolved(SolveStatus),
    #[error(transparent)]
    Terminal(#[from] TerminalError),
}

/// Which cost-decrease row the iteration carries.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CostDecrease {
    /// First iteration at `t = 0`: no predecessor exists.
    None,
    /// `J <= J_final(t-1) - stage(t-1) + sigma_hat^2`.
    FirstIteration {
        prev_j_final: f64,
        stage_cost: f64,
        sigma_hat_prev: f64,
    },
    /// `J <= J(i-1)`.
    Subsequent { prev_j: f64 },
}

impl CostDecrease {
    /// Upper bound on `J`, before tolerance.
    pub fn bound(&self) -> Option<f64> {
        match *self {
            CostDecrease::None => None,
            CostDecrease::FirstIteration {
                prev_j_final,
                stage_cost,
                sigma_hat_prev,
            } => Some(prev_j_final - stage_cost + sigma_hat_prev * sigma_hat_prev),
            CostDecrease::Subsequent { prev_j } => Some(prev_j),
        }
    }

    /// Bound with the numerical slack applied.
    pub fn bound_with_tol(&self) -> Option<f64> {
        self.bound().map(|b| b + COST_DECREASE_RTOL * b.abs().max(1.0))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum OcpMode {
    /// The problem as stated.
    #[default]
    Robust,
    /// One shared slack on every state, input, tube and terminal row; the
    /// objective is the slack.
    Relaxed,
    /// Disturbance, parameter and linearization error removed (`W = {0}`,
    /// `W0 = W1 = {0}`, `sigma = 0`, `d_Phi = d_Theta = 0`), same `N_hat`.
    CertaintyEquivalent,
}

/// Everything one iteration's program depends on.
#[derive(Debug, Clone, Copy)]
pub struct OcpInput<'a, M> {
    pub pd: &'a ProblemData<M>,
    pub traj: &'a NominalTrajectory,
    pub lins: &'a [StepLinearization],
    pub params: &'a TerminalParams,
    pub horizon: TerminalHorizon,
    pub x_plant: &'a Vector,
    pub cost_decrease: CostDecrease,
    pub mode: OcpMode,
}

/// `N_hat` and `sigma_hat` for a nominal trajectory.
pub fn terminal_horizon(params: &TerminalParams, traj: &NominalTrajectory) -> Result<TerminalHorizon, TerminalError> {
    let x0n = traj.x.last().expect("trajectory has at least one state");
    params.find_terminal_horizon(params.shape.norm(x0n))
}

/// Column map of an assembled program.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpLayout {
    pub horizon: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub z: usize,
    pub v: usize,
    pub beta: usize,
    /// `t_k >= ||(sqrt(lambda_k) beta_k, sigma)||`, shared across error vertices.
    pub aux: usize,
    pub l: usize,
    pub j: usize,
    pub omega: OmegaColumns,
    pub terminal_l: usize,
    pub slack: Option<usize>,
}

impl OcpLayout {
    fn z_col(&self, k: usize) -> usize {
        self.z + k * self.n_x
    }

    fn v_col(&self, k: usize) -> usize {
        self.v + k * self.n_u
    }

    fn beta_col(&self, k: usize) -> usize {
        if k <= self.horizon {
            self.beta + k
        } else {
            self.omega.beta + k - self.horizon - 1
        }
    }

    /// Solution vector for the named values; auxiliaries take their
    /// smallest admissible values.
    pub fn pack(&self, n_vars: usize, sol: &TubeSolution, lins: &[StepLinearization], sigma: f64) -> Vec<f64> {
        let mut x = alloc::vec![0.0; n_vars];
        for (k, z) in sol.z.iter().enumerate() {
            x[self.z_col(k)..self.z_col(k) + self.n_x].copy_from_slice(z.as_slice());
        }
        for (k, v) in sol.v.iter().enumerate() {
            x[self.v_col(k)..self.v_col(k) + self.n_u].copy_from_slice(v.as_slice());
        }
        for (k, b) in sol.beta.iter().enumerate() {
            x[self.beta_col(k)] = *b;
        }
        for k in 0..self.horizon {
            let b = sol.beta[k];
            x[self.aux + k] = linalg::sqrt(lins[k].lambda * b * b + sigma * sigma);
            x[self.l + k] = sol.l[k];
        }
        for k in 0..=self.omega.n_hat {
            x[self.terminal_l + k] = sol.l[self.horizon + k];
        }
        x[self.omega.r] = sol.r;
        x[self.j] = sol.j_bar;
        if let Some(s) = self.slack {
            x[s] = sol.slack;
        }
        x
    }
}

/// Named optimizer of one iteration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TubeSolution {
    /// `v_0..v_{N-1}`.
    pub v: Vec<Vector>,
    /// `z_0..z_N`.
    pub z: Vec<Vector>,
    /// `beta_0..beta_{N+N_hat}`.
    pub beta: Vec<f64>,
    /// `l_0..l_{N+N_hat}`.
    pub l: Vec<f64>,
    pub j_bar: f64,
    /// Epigraph of `||z_N||_V`.
    pub r: f64,
    /// Zero unless the program was slack-relaxed.
    pub slack: f64,
}

impl TubeSolution {
    /// `max_k ||v_k||`.
    pub fn v_norm(&self) -> f64 {
        self.v.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Rows, cones and timings of one program.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SizeStats {
    pub n_vars: usize,
    pub n_equalities: usize,
    pub n_linear_rows: usize,
    pub n_soc_blocks: usize,
    /// Sum of the cone dimensions.
    pub n_soc_rows: usize,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
}

pub fn count_constraints(cp: &ConicProgram) -> SizeStats {
    SizeStats {
        n_vars: cp.n_vars(),
        n_equalities: cp.equalities.len(),
        n_linear_rows: cp.inequalities.len(),
        n_soc_blocks: cp.socs.len(),
        n_soc_rows: cp.socs.iter().map(|(_, es)| es.len()).sum(),
        assembly_seconds: 0.0,
        solve_seconds: 0.0,
    }
}

/// Terminal record with uncertainty removed when the mode asks for it.
fn effective_params(params: &TerminalParams, mode: OcpMode) -> TerminalParams {
    let mut p = params.clone();
    if mode == OcpMode::CertaintyEquivalent {
        p.sigma = 0.0;
        p.d_phi = 0.0;
        p.d_theta = 0.0;
    }
    p
}

/// `sum_i M_i x_i + b` with each `x_i` starting at its own column.
fn lin_comb(parts: &[(&Matrix, usize)], b: Option<&Vector>, rows: usize) -> Vec<LinExpr> {
    let mut out: Vec<LinExpr> = (0..rows).map(|r| LinExpr::constant(b.map_or(0.0, |b| b[r]))).collect();
    for (m, start) in parts {
        for (e, p) in out.iter_mut().zip(affine_map(m, *start, None)) {
            e.add_scaled(&p, 1.0);
        }
    }
    out
}

fn sqrtm(m: &Matrix) -> Matrix {
    linalg::sym_apply(m, |x| linalg::sqrt(x.max(0.0)))
}

/// Build the program for one iteration.
pub fn assemble<M: BasisModel>(input: &OcpInput<M>) -> Result<(ConicProgram, OcpLayout), OcpError> {
    let pd = input.pd;
    let traj = input.traj;
    let n = pd.horizon;
    let (nx, nu) = (pd.n_x(), pd.n_u());
    for (what, expected, found) in [
        ("linearization", n, input.lins.len()),
        ("nominal inputs", n, traj.v.len()),
        ("nominal states", n + 1, traj.x.len()),
        ("plant state", nx, input.x_plant.len()),
    ] {
        if expected != found {
            return Err(OcpError::Length { what, expected, found });
        }
    }
    let mode = input.mode;
    let params = effective_params(input.params, mode);
    let shape = &params.shape;
    let vs = shape.sqrt();
    let k_gain = &params.k;
    let sigma = params.sigma;

    let mut cp = ConicProgram::new();
    let z = cp.add_vars("z", (n + 1) * nx);
    let v = cp.add_vars("v", n * nu);
    let beta = cp.add_vars("beta", n + 1);
    let aux = cp.add_vars("tube_aux", n);
    let l = cp.add_vars("l", n);
    let j = cp.add_vars("j_bar", 1);
    let slack = (mode == OcpMode::Relaxed).then(|| cp.add_vars("slack", 1));
    let zc = |k: usize| z + k * nx;
    let vc = |k: usize| v + k * nu;
    // Adds the slack to a row that must be nonnegative.
    let relax = |mut e: LinExpr| {
        if let Some(s) = slack {
            e.add_term(s, 1.0);
        }
        e
    };

    let q_sqrt = sqrtm(&pd.q);
    let r_sqrt = sqrtm(&pd.r);
    let eye = Matrix::identity(nx, nx);
    let zero_pair = crate::model::JacobianPair {
        c: Matrix::zeros(nx, nx),
        d: Matrix::zeros(nx, nu),
    };
    let zero_delta = Vector::zeros(nx);

    for k in 0..n {
        let lin = &input.lins[k];
        let (x0, v0) = (&traj.x[k], &traj.v[k]);

        // z_{k+1} = Phi z_k + B v_k
        let mut dyn_rows = affine_map(&eye, zc(k + 1), None);
        for (e, p) in dyn_rows.iter_mut().zip(lin_comb(&[(&lin.phi, zc(k)), (&lin.b, vc(k))], None, nx)) {
            e.add_scaled(&p, -1.0);
        }
        for (r, e) in dyn_rows.into_iter().enumerate() {
            cp.equal(Label::new("dynamics", k * nx + r), e);
        }

        // t_k >= ||(sqrt(lambda_k) beta_k, sigma)||
        cp.soc(
            Label::new("tube_aux", k),
            LinExpr::var(aux + k),
            alloc::vec![
                LinExpr::var(beta + k).scaled(linalg::sqrt(lin.lambda.max(0.0))),
                LinExpr::constant(sigma)
            ],
        );
        // beta_{k+1} - t_k >= ||C z + D v + delta0||_V for every (j, q)
        let head = relax(LinExpr::var(beta + k + 1).term(aux + k, -1.0));
        if mode == OcpMode::CertaintyEquivalent {
            cp.nonneg(Label::new("tube_recursion", k), head);
        } else {
            let pairs = if lin.pairs.is_empty() {
                core::slice::from_ref(&zero_pair)
            } else {
                &lin.pairs[..]
            };
            let deltas = if lin.delta0.is_empty() {
                core::slice::from_ref(&zero_delta)
            } else {
                &lin.delta0[..]
            };
            for p in pairs {
                let vc_m = vs * &p.c;
                let vd_m = vs * &p.d;
                for d in deltas {
                    let vd = vs * d;
                    let tail = lin_comb(&[(&vc_m, zc(k)), (&vd_m, vc(k))], Some(&vd), nx);
                    cp.soc(Label::new("tube_recursion", k), head.clone(), tail);
                }
            }
        }

        // l_k - c_Q beta_k >= ||(Q^{1/2}(x0+z), R^{1/2}(K(x0+z) + v0 + v))||
        let mut tail = lin_comb(&[(&q_sqrt, zc(k))], Some(&(&q_sqrt * x0)), nx);
        let rk = &r_sqrt * k_gain;
        let u0 = k_gain * x0 + v0;
        tail.extend(lin_comb(&[(&rk, zc(k)), (&r_sqrt, vc(k))], Some(&(&r_sqrt * &u0)), nu));
        cp.soc(
            Label::new("stage_cost", k),
            LinExpr::var(l + k).term(beta + k, -params.c_q),
            tail,
        );

        // Tightened rows: offset - h.(point) - ||V^{-1/2} h|| beta >= 0.
        let u_set = &pd.u_set;
        for r in 0..u_set.n_rows() {
            let h = u_set.row(r);
            let hk = k_gain.transpose() * &h;
            let mut e = LinExpr::constant(u_set.offsets()[r] - h.dot(&u0));
            for c in 0..nx {
                e.add_term(zc(k) + c, -hk[c]);
            }
            for c in 0..nu {
                e.add_term(vc(k) + c, -h[c]);
            }
            e.add_term(beta + k, -shape.dual_norm(&hk));
            cp.nonneg(Label::new("input", k * u_set.n_rows() + r), relax(e));
        }
        let x_set = &pd.x_set;
        for r in 0..x_set.n_rows() {
            let h = x_set.row(r);
            let mut e = LinExpr::constant(x_set.offsets()[r] - h.dot(x0));
            for c in 0..nx {
                e.add_term(zc(k) + c, -h[c]);
            }
            e.add_term(beta + k, -shape.dual_norm(&h));
            cp.nonneg(Label::new("state", k * x_set.n_rows() + r), relax(e));
        }
        let s_set = &pd.s_set.h;
        for r in 0..s_set.n_rows() {
            let h = s_set.row(r);
            let mut e = LinExpr::constant(s_set.offsets()[r]);
            for c in 0..nx {
                e.add_term(zc(k) + c, -h[c]);
            }
            e.add_term(beta + k, -shape.dual_norm(&h));
            cp.nonneg(Label::new("tube_set", k * s_set.n_rows() + r), relax(e));
        }
        if let Some(vset) = &pd.v_set {
            let vh = &vset.h;
            for r in 0..vh.n_rows() {
                let h = vh.row(r);
                let mut e = LinExpr::constant(vh.offsets()[r] - h.dot(v0));
                for c in 0..nu {
                    e.add_term(vc(k) + c, -h[c]);
                }
                cp.nonneg(Label::new("perturbation", k * vh.n_rows() + r), relax(e));
            }
        }
    }

    // beta_0 >= ||x0_0 + z_0 - x_p||_V
    let offset = &traj.x[0] - input.x_plant;
    cp.soc(
        Label::new("initial", 0),
        relax(LinExpr::var(beta)),
        lin_comb(&[(vs, zc(0))], Some(&(vs * offset)), nx),
    );

    // Terminal set and terminal cost.
    let omega = terminal::build_omega_blocks(&mut cp, &params, &input.horizon, zc(n), beta + n);
    if let Some(s) = slack {
        for (lab, es) in cp.socs.iter_mut() {
            if lab.kind == "omega_cap" || lab.kind == "omega_recursion" {
                es[0].add_term(s, 1.0);
            }
        }
    }
    let terminal_l = terminal::terminal_cost_blocks(&mut cp, &params, &input.horizon, &omega, beta + n);

    // J >= ||l||^2 as ||(J - 1, 2 l)|| <= J + 1.
    let mut tail = alloc::vec![LinExpr::var(j).plus(-1.0)];
    for k in 0..n {
        tail.push(LinExpr::var(l + k).scaled(2.0));
    }
    for k in 0..=omega.n_hat {
        tail.push(LinExpr::var(terminal_l + k).scaled(2.0));
    }
    cp.soc(Label::new("objective", 0), LinExpr::var(j).plus(1.0), tail);

    if let Some(b) = input.cost_decrease.bound_with_tol() {
        cp.nonneg(Label::new("cost_decrease", 0), LinExpr::constant(b).term(j, -1.0));
    }

    match slack {
        Some(s) => {
            cp.nonneg(Label::new("slack", 0), LinExpr::var(s));
            cp.minimize(s, 1.0);
            cp.minimize(j, RELAXED_COST_WEIGHT);
        }
        None => cp.minimize(j, 1.0),
    }

    let layout = OcpLayout {
        horizon: n,
        n_x: nx,
        n_u: nu,
        z,
        v,
        beta,
        aux,
        l,
        j,
        omega,
        terminal_l,
        slack,
    };
    Ok((cp, layout))
}

/// Read named values out of a primal vector and validate every row.
pub fn extract(cp: &ConicProgram, layout: &OcpLayout, x: &[f64]) -> Result<TubeSolution, OcpError> {
    if x.len() != cp.n_vars() {
        return Err(OcpError::Length {
            what: "primal vector",
            expected: cp.n_vars(),
            found: x.len(),
        });
    }
    let (viol, label) = cp.max_violation(x);
    if viol > VALIDATION_TOL {
        let label = label.unwrap_or(Label::new("unknown", 0));
        return Err(OcpError::ValidationFailed {
            violation: viol,
            kind: label.kind,
            index: label.index,
        });
    }
    let n = layout.horizon;
    let n_hat = layout.omega.n_hat;
    let vec_at = |start: usize, len: usize| Vector::from_column_slice(&x[start..start + len]);
    let sol = TubeSolution {
        v: (0..n).map(|k| vec_at(layout.v_col(k), layout.n_u)).collect(),
        z: (0..=n).map(|k| vec_at(layout.z_col(k), layout.n_x)).collect(),
        beta: (0..=n + n_hat).map(|k| x[layout.beta_col(k)]).collect(),
        l: (0..n)
            .map(|k| x[layout.l + k])
            .chain((0..=n_hat).map(|k| x[layout.terminal_l + k]))
            .collect(),
        j_bar: x[layout.j],
        r: x[layout.omega.r],
        slack: layout.slack.map_or(0.0, |s| x[s]),
    };
    if let Some(k) = sol.beta.iter().position(|&b| b < -VALIDATION_TOL) {
        return Err(OcpError::ValidationFailed {
            violation: -sol.beta[k],
            kind: "beta_sign",
            index: k,
        });
    }
    Ok(sol)
}

/// Worst row found by [`check_rows`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowCheck {
    pub max_violation: f64,
    pub kind: &'static str,
    pub index: usize,
}

/// Re-evaluates every inequality of the problem directly from its
/// definition, without going through the assembled program.
pub fn check_rows<M: BasisModel>(input: &OcpInput<M>, sol: &TubeSolution) -> RowCheck {
    let pd = input.pd;
    let traj = input.traj;
    let params = effective_params(input.params, input.mode);
    let shape = &params.shape;
    let k_gain = &params.k;
    let sigma = params.sigma;
    let n = pd.horizon;
    let n_hat = input.horizon.n_hat;
    let a = input.horizon.x0n_norm;
    let mut worst = RowCheck {
        max_violation: 0.0,
        kind: "none",
        index: 0,
    };
    let mut note = |v: f64, kind: &'static str, index: usize| {
        if v > worst.max_violation || v.is_nan() {
            worst = RowCheck {
                max_violation: if v.is_nan() { f64::INFINITY } else { v },
                kind,
                index,
            };
        }
    };

    for k in 0..n {
        let lin = &input.lins[k];
        let (x0, v0) = (&traj.x[k], &traj.v[k]);
        let (zk, vk, bk) = (&sol.z[k], &sol.v[k], sol.beta[k]);
        let dz = &sol.z[k + 1] - &lin.phi * zk - &lin.b * vk;
        note(dz.amax(), "dynamics", k);

        let base = linalg::sqrt(lin.lambda * bk * bk + sigma * sigma);
        if input.mode == OcpMode::CertaintyEquivalent {
            note(base - sol.beta[k + 1], "tube_recursion", k);
        } else {
            let pairs: Vec<(Matrix, Matrix)> = if lin.pairs.is_empty() {
                alloc::vec![(Matrix::zeros(pd.n_x(), pd.n_x()), Matrix::zeros(pd.n_x(), pd.n_u()))]
            } else {
                lin.pairs.iter().map(|p| (p.c.clone(), p.d.clone())).collect()
            };
            let deltas = if lin.delta0.is_empty() {
                alloc::vec![Vector::zeros(pd.n_x())]
            } else {
                lin.delta0.clone()
            };
            for (c, d) in &pairs {
                for d0 in &deltas {
                    let e = c * zk + d * vk + d0;
                    note(base + shape.norm(&e) - sol.beta[k + 1], "tube_recursion", k);
                }
            }
        }

        let x = x0 + zk;
        let u = k_gain * &x + v0 + vk;
        let cost = linalg::sqrt((x.dot(&(&pd.q * &x)) + u.dot(&(&pd.r * &u))).max(0.0));
        note(cost + bk * params.c_q - sol.l[k], "stage_cost", k);

        for r in 0..pd.u_set.n_rows() {
            let h = pd.u_set.row(r);
            let hk = k_gain.transpose() * &h;
            let slack = pd.u_set.offsets()[r] - h.dot(&u) - bk * shape.dual_norm(&hk);
            note(-slack, "input", k);
        }
        for r in 0..pd.x_set.n_rows() {
            let h = pd.x_set.row(r);
            note(-shape.tighten(&h, pd.x_set.offsets()[r], &x, bk), "state", k);
        }
        for r in 0..pd.s_set.h.n_rows() {
            let h = pd.s_set.h.row(r);
            note(-shape.tighten(&h, pd.s_set.h.offsets()[r], zk, bk), "tube_set", k);
        }
        if let Some(vset) = &pd.v_set {
            let p = v0 + vk;
            for r in 0..vset.h.n_rows() {
                note(vset.h.row(r).dot(&p) - vset.h.offsets()[r], "perturbation", k);
            }
        }
    }

    note(shape.norm(&(&traj.x[0] + &sol.z[0] - input.x_plant)) - sol.beta[0], "initial", 0);

    // Terminal set, with ||z_N||_V in place of its epigraph variable.
    let zn = shape.norm(&sol.z[n]);
    note(sol.beta[n] - (params.rho_hat - zn - a), "omega_cap", 0);
    let drive = params.d_phi * zn + params.d_theta * params.lipschitz * a;
    for k in 1..=n_hat {
        let prev = sol.beta[n + k - 1];
        let cur = sol.beta[n + k];
        let rhs = linalg::sqrt(params.lambda_hat * prev * prev + sigma * sigma) + params.sqrt_lambda_pow(k - 1) * drive;
        note(rhs - cur, "omega_recursion", k);
        note(cur - (params.rho_hat - params.sqrt_lambda_pow(k) * (zn + a)), "omega_cap", k);
    }
    let lhat = terminal::terminal_cost_values(&params, a, zn, &sol.beta[n..=n + n_hat]);
    for (k, lv) in lhat.iter().enumerate() {
        note(lv - sol.l[n + k], "terminal_cost", k);
    }

    let sum_sq: f64 = sol.l.iter().map(|x| x * x).sum();
    note(sum_sq - sol.j_bar, "objective", 0);
    if let Some(b) = input.cost_decrease.bound_with_tol() {
        note(sol.j_bar - b, "cost_decrease", 0);
    }
    worst
}

/// Outcome of one solve.
#[derive(Debug, Clone, PartialEq)]
pub enum OcpOutcome {
    Solved { solution: TubeSolution, stats: SizeStats },
    /// Infeasible, or any failure the caller must treat as such.
    Failed { status: SolveStatus, stats: SizeStats, reason: Option<OcpError> },
}

impl OcpOutcome {
    pub fn solution(&self) -> Option<&TubeSolution> {
        match self {
            OcpOutcome::Solved { solution, .. } => Some(solution),
            OcpOutcome::Failed { .. } => None,
        }
    }

    pub fn stats(&self) -> &SizeStats {
        match self {
            OcpOutcome::Solved { stats, .. } | OcpOutcome::Failed { stats, .. } => stats,
        }
    }
}

/// Assemble, solve and extract.
pub fn solve<M: BasisModel, B: ConicBackend + ?Sized>(
    backend: &B,
    input: &OcpInput<M>,
    settings: &SolverSettings,
) -> Result<OcpOutcome, OcpError> {
    let t0 = backend.clock();
    let (cp, layout) = assemble(input)?;
    let t1 = backend.clock();
    let report = backend.solve_socp(&cp, settings);
    let mut stats = count_constraints(&cp);
    stats.assembly_seconds = t1 - t0;
    stats.solve_seconds = report.solve_seconds;
    let x = match &report.status {
        SolveStatus::Optimal { x, .. } => x,
        status => {
            return Ok(OcpOutcome::Failed {
                status: status.clone(),
                stats,
                reason: None,
            })
        }
    };
    match extract(&cp, &layout, x.as_slice()) {
        Ok(solution) => Ok(OcpOutcome::Solved { solution, stats }),
        Err(e) => Ok(OcpOutcome::Failed {
            status: report.status.clone(),
            stats,
            reason: Some(e),
        }),
    }
}
