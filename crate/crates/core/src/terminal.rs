//! Terminal design: LDI, the cost LMI, terminal scalars, the terminal set
//! `Omega` and the terminal cost.

use alloc::vec::Vec;
use thiserror::Error;

use crate::conic::{affine_map, ConicBackend, ConicProgram, Label, LinExpr, PsdBlock, SolveStatus, SolverSettings};
use crate::geometry::{BoxSet, EllipsoidShape, GeometryError, HPolytope, VPolytope};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{BasisModel, ModelError};
use crate::problem::{ProblemData, ProblemError};

/// Upper limit of the terminal horizon search.
pub const N_HAT_MAX: usize = 64;

/// `Q, R` are inflated by this factor inside the LMI so the recovered
/// design satisfies the cost inequality strictly.
pub const LMI_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TerminalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("terminal LMI infeasible (LDI vertex {vertex:?} has no robustly stabilizing gain)")]
    LmiInfeasible { vertex: Option<usize> },
    #[error("terminal LMI solve failed: {0:?}")]
    LmiSolveFailed(SolveStatus),
    #[error("terminal design violates V >= Q + K'RK (lambda_hat = {0})")]
    LambdaHatTooLarge(f64),
    #[error("aggregate constraint set does not bound the terminal region")]
    UnboundedTerminalRegion,
    #[error("aggregate constraint row {0} excludes the origin")]
    OriginOutside(usize),
    #[error("sigma^2/(1 - lambda_hat) = {lhs} is not below rho_hat^2 = {rhs}")]
    Finiteness { lhs: f64, rhs: f64 },
    #[error("no terminal horizon up to {0} satisfies the terminal check")]
    HorizonExceeded(usize),
}

/// Vertex pairs `(A_j, B_j)` of a linear difference inclusion.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LdiModel {
    pub pairs: Vec<(Matrix, Matrix)>,
    pub x_hat: BoxSet,
    pub u_hat: BoxSet,
}

pub fn build_ldi<M: BasisModel + ?Sized>(
    m: &M,
    x_hat: &BoxSet,
    u_hat: &BoxSet,
    theta0: &VPolytope,
) -> Result<LdiModel, TerminalError> {
    Ok(LdiModel {
        pairs: m.ldi(x_hat, u_hat, theta0)?,
        x_hat: x_hat.clone(),
        u_hat: u_hat.clone(),
    })
}

/// Disturbance vertices for the LMI: `w_r + w_c^(q)` when the model has
/// constant basis terms, otherwise `w_r`.
pub fn lmi_disturbance_vertices<M: BasisModel + ?Sized>(m: &M, theta0: &VPolytope, w: &VPolytope) -> Vec<Vector> {
    let constant = m.constant_basis();
    if constant.is_empty() {
        return w.vertices().to_vec();
    }
    let zx = Vector::zeros(m.n_x());
    let zu = Vector::zeros(m.n_u());
    let mut out: Vec<Vector> = Vec::new();
    for tq in theta0.vertices() {
        let mut wc = Vector::zeros(m.n_x());
        for &i in constant {
            wc += m.basis(i, &zx, &zu) * tq[i - 1];
        }
        for wr in w.vertices() {
            let v = wr + &wc;
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    out
}

/// Result of the cost LMI.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiDesign {
    pub v: Matrix,
    pub k: Matrix,
    pub sigma: f64,
    /// `tau` as returned by the solver, before certification.
    pub tau: f64,
}

fn sym_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

/// The cost LMI with blocks `[S, tau, S, Q^{-1}, R^{-1}]` for one `(A, B, w)`.
fn cost_lmi_block(
    a: &Matrix,
    b: &Matrix,
    w: &Vector,
    q_inv: &Matrix,
    r_inv: &Matrix,
    s0: usize,
    y0: usize,
    tau: usize,
) -> PsdBlock {
    let n = a.nrows();
    let m = b.ncols();
    let s = |i: usize, j: usize| s0 + sym_index(i, j);
    let y = |r: usize, c: usize| y0 + r + c * m;
    // Block boundaries.
    let (b0, bt, b2, b3, b4) = (0, n, n + 1, 2 * n + 1, 3 * n + 1);
    let size = 3 * n + 1 + m;
    let which = |i: usize| -> (usize, usize) {
        if i < bt {
            (0, i - b0)
        } else if i == bt {
            (1, 0)
        } else if i < b3 {
            (2, i - b2)
        } else if i < b4 {
            (3, i - b3)
        } else {
            (4, i - b4)
        }
    };
    PsdBlock::from_fn(size, |i, j| {
        let (bi, ii) = which(i);
        let (bj, jj) = which(j);
        match (bi, bj) {
            (0, 0) | (2, 2) => LinExpr::var(s(ii, jj)),
            (1, 1) => LinExpr::var(tau),
            (0, 2) => {
                // ((AS + BY)')_{ii, jj} = (AS + BY)_{jj, ii}.
                let mut e = LinExpr::zero();
                for l in 0..n {
                    e.add_term(s(l, ii), a[(jj, l)]);
                }
                for l in 0..m {
                    e.add_term(y(l, ii), b[(jj, l)]);
                }
                e
            }
            (0, 3) => LinExpr::var(s(ii, jj)),
            (0, 4) => LinExpr::var(y(jj, ii)),
            (1, 2) => LinExpr::constant(w[jj]),
            (3, 3) => LinExpr::constant(q_inv[(ii, jj)]),
            (4, 4) => LinExpr::constant(r_inv[(ii, jj)]),
            _ => LinExpr::zero(),
        }
    })
}

fn cost_lmi_program(ldi: &[(Matrix, Matrix)], w: &[Vector], q: &Matrix, r: &Matrix) -> (ConicProgram, usize, usize, usize) {
    let n = q.nrows();
    let m = r.nrows();
    let q_inv = linalg::spd_inverse(&(q * (1.0 + LMI_MARGIN))).expect("Q positive definite");
    let r_inv = linalg::spd_inverse(&(r * (1.0 + LMI_MARGIN))).expect("R positive definite");
    let mut cp = ConicProgram::new();
    let s0 = cp.add_vars("S", n * (n + 1) / 2);
    let y0 = cp.add_vars("Y", m * n);
    let tau = cp.add_vars("tau", 1);
    cp.minimize(tau, 1.0);
    let zero_w = [Vector::zeros(n)];
    let ws: &[Vector] = if w.is_empty() { &zero_w } else { w };
    for (j, (a, b)) in ldi.iter().enumerate() {
        for (rr, wr) in ws.iter().enumerate() {
            cp.psd(
                Label::new("cost_lmi", j * ws.len() + rr),
                cost_lmi_block(a, b, wr, &q_inv, &r_inv, s0, y0, tau),
            );
        }
    }
    (cp, s0, y0, tau)
}

/// `min tau` subject to the cost LMI for every LDI vertex and disturbance
/// vertex; returns `V = S^{-1}`, `K = Y V` and a certified `sigma`.
pub fn solve_terminal_lmi<B: ConicBackend + ?Sized>(
    backend: &B,
    ldi: &LdiModel,
    w: &[Vector],
    q: &Matrix,
    r: &Matrix,
    settings: &SolverSettings,
) -> Result<LmiDesign, TerminalError> {
    let n = q.nrows();
    let m = r.nrows();
    let (cp, s0, y0, tau) = cost_lmi_program(&ldi.pairs, w, q, r);
    let report = backend.solve_sdp(&cp, settings);
    let x = match report.status {
        SolveStatus::Optimal { x, .. } => x,
        // weakly infeasible instances rarely get a certificate from the solver
        SolveStatus::NumericalFailure if ldi.pairs.iter().any(|(a, b)| linalg::unstabilizable(a, b)) => {
            let vertex = ldi.pairs.iter().position(|(a, b)| linalg::unstabilizable(a, b));
            return Err(TerminalError::LmiInfeasible { vertex });
        }
        SolveStatus::Infeasible => {
            let vertex = (0..ldi.pairs.len()).find(|&j| {
                let (single, ..) = cost_lmi_program(&ldi.pairs[j..=j], w, q, r);
                matches!(backend.solve_sdp(&single, settings).status, SolveStatus::Infeasible)
            });
            return Err(TerminalError::LmiInfeasible { vertex });
        }
        other => return Err(TerminalError::LmiSolveFailed(other)),
    };
    let mut s = Matrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            s[(i, j)] = x[s0 + sym_index(i, j)];
            s[(j, i)] = x[s0 + sym_index(i, j)];
        }
    }
    let y = Matrix::from_fn(m, n, |rr, c| x[y0 + rr + c * m]);
    let v = linalg::spd_inverse(&s).ok_or(TerminalError::LmiSolveFailed(SolveStatus::NumericalFailure))?;
    let k = &y * &v;
    let sigma2 = certified_sigma2(&ldi.pairs, w, &v, &k, q, r)
        .ok_or(TerminalError::LmiSolveFailed(SolveStatus::NumericalFailure))?;
    Ok(LmiDesign {
        v,
        k,
        sigma: linalg::sqrt(sigma2),
        tau: x[tau],
    })
}

/// Smallest `sigma^2` with `||Phi_j x + w||_V^2 <= ||x||_V^2 - ||x||_Qhat^2 + sigma^2`
/// for all `x`, every vertex `j` and every `w`; `None` if the homogeneous
/// part `V - Qhat - Phi'V Phi` is not positive definite for some vertex.
pub fn certified_sigma2(
    ldi: &[(Matrix, Matrix)],
    w: &[Vector],
    v: &Matrix,
    k: &Matrix,
    q: &Matrix,
    r: &Matrix,
) -> Option<f64> {
    let q_hat = q + k.transpose() * r * k;
    let mut sigma2 = 0.0f64;
    for (a, b) in ldi {
        let phi = a + b * k;
        let m = v - &q_hat - phi.transpose() * v * &phi;
        let m_inv = linalg::spd_inverse(&m)?;
        if !linalg::is_positive_definite(&m) {
            return None;
        }
        for wr in w {
            let g = phi.transpose() * v * wr;
            sigma2 = sigma2.max(wr.dot(&(v * wr)) + g.dot(&(&m_inv * &g)));
        }
    }
    Some(sigma2)
}

/// Offline design record.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TerminalParams {
    pub shape: EllipsoidShape,
    pub k: Matrix,
    pub sigma: f64,
    pub lambda_hat: f64,
    pub d_theta: f64,
    pub d_phi: f64,
    pub rho_hat: f64,
    pub gamma: f64,
    /// Euclidean Lipschitz constant supplied by the model.
    pub lipschitz2: f64,
    /// `L` in the V-norm, `L_2 cond(V^{1/2})`.
    pub lipschitz: f64,
    /// `||V^{-1/2}||_{Qhat}`.
    pub c_q: f64,
    pub h_bar: HPolytope,
    /// Closed-loop LDI vertices `A_j + B_j K`.
    pub phi_hat: Vec<Matrix>,
}

/// `N_hat` and `sigma_hat` for one value of `||x0_N||_V`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TerminalHorizon {
    pub n_hat: usize,
    pub sigma_hat: f64,
    pub x0n_norm: f64,
}

/// Scalars derived from a fixed `(V, K)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalScalars {
    pub lambda_hat: f64,
    pub d_theta: f64,
    pub d_phi: f64,
    pub gamma: f64,
    pub rho_hat: f64,
    pub c_q: f64,
}

/// Largest pairwise 1-norm distance among the vertices.
pub fn one_norm_diameter(vertices: &[Vector]) -> f64 {
    let mut d = 0.0f64;
    for (i, a) in vertices.iter().enumerate() {
        for b in &vertices[i + 1..] {
            d = d.max(linalg::one_norm(&(a - b)));
        }
    }
    d
}

pub fn terminal_scalars(
    shape: &EllipsoidShape,
    k: &Matrix,
    q: &Matrix,
    r: &Matrix,
    theta0: &VPolytope,
    phi_hat: &[Matrix],
    h_bar: &HPolytope,
) -> Result<TerminalScalars, TerminalError> {
    let q_hat = q + k.transpose() * r * k;
    let scaled = shape.inv_sqrt() * &q_hat * shape.inv_sqrt();
    let lambda_hat = 1.0 - linalg::min_eigenvalue(&scaled);
    if !(lambda_hat < 1.0) {
        return Err(TerminalError::LambdaHatTooLarge(lambda_hat));
    }
    let lambda_hat = lambda_hat.max(0.0);
    let c_q = linalg::sqrt(linalg::max_eigenvalue(&scaled).max(0.0));
    let d_theta = one_norm_diameter(theta0.vertices());
    let mut d_phi = 0.0f64;
    for (i, a) in phi_hat.iter().enumerate() {
        for b in &phi_hat[i + 1..] {
            d_phi = d_phi.max(shape.induced_norm(&(a - b)));
        }
    }
    let gamma = linalg::sqrt(1.0 / (1.0 - linalg::sqrt(lambda_hat)));
    let mut rho_hat = f64::INFINITY;
    for i in 0..h_bar.n_rows() {
        let row = h_bar.row(i);
        let h = h_bar.offsets()[i];
        let dn = shape.dual_norm(&row);
        if dn == 0.0 {
            if h < 0.0 {
                return Err(TerminalError::OriginOutside(i));
            }
            continue;
        }
        if h <= 0.0 {
            return Err(TerminalError::OriginOutside(i));
        }
        rho_hat = rho_hat.min(h / dn);
    }
    if !rho_hat.is_finite() {
        return Err(TerminalError::UnboundedTerminalRegion);
    }
    Ok(TerminalScalars {
        lambda_hat,
        d_theta,
        d_phi,
        gamma,
        rho_hat,
        c_q,
    })
}

impl TerminalParams {
    /// Assemble the record from an LMI solution.
    pub fn from_design<M: BasisModel>(
        pd: &ProblemData<M>,
        ldi: &LdiModel,
        design: &LmiDesign,
    ) -> Result<Self, TerminalError> {
        let shape = EllipsoidShape::new(design.v.clone())?;
        let h_bar = pd.aggregate_constraints(&design.k)?;
        let phi_hat: Vec<Matrix> = ldi.pairs.iter().map(|(a, b)| a + b * &design.k).collect();
        let s = terminal_scalars(&shape, &design.k, &pd.q, &pd.r, &pd.theta0.v, &phi_hat, &h_bar)?;
        let lipschitz2 = pd.model.lipschitz();
        Ok(Self {
            lipschitz: lipschitz2 * shape.sqrt_condition(),
            shape,
            k: design.k.clone(),
            sigma: design.sigma,
            lambda_hat: s.lambda_hat,
            d_theta: s.d_theta,
            d_phi: s.d_phi,
            rho_hat: s.rho_hat,
            gamma: s.gamma,
            lipschitz2,
            c_q: s.c_q,
            h_bar,
            phi_hat,
        })
    }

    /// Recompute `d_Theta` from the current parameter set.
    pub fn with_theta(&self, theta: &VPolytope) -> Self {
        let mut out = self.clone();
        out.d_theta = one_norm_diameter(theta.vertices());
        out
    }

    /// `sigma_bar = gamma sigma + gamma rho_hat (d_Phi + d_Theta L)`.
    pub fn sigma_bar(&self) -> f64 {
        self.gamma * self.sigma + self.gamma * self.rho_hat * (self.d_phi + self.d_theta * self.lipschitz)
    }

    pub fn q_hat(&self, q: &Matrix, r: &Matrix) -> Matrix {
        q + self.k.transpose() * r * &self.k
    }

    /// `lambda_hat^{k/2}`.
    pub fn sqrt_lambda_pow(&self, k: usize) -> f64 {
        linalg::powf(self.lambda_hat, k as f64 / 2.0)
    }

    /// `sigma_hat` for a given horizon and `||x0_N||_V`.
    pub fn sigma_hat(&self, n_hat: usize, x0n_norm: f64) -> f64 {
        self.gamma * self.sigma
            + self.gamma * self.sqrt_lambda_pow(n_hat) * (self.d_phi * self.rho_hat + self.d_theta * self.lipschitz * x0n_norm)
    }

    /// Whether some `(r, beta_N)` makes `Omega` nonempty, using the smallest
    /// admissible `beta` chain.
    fn omega_feasible(&self, n_hat: usize, a: f64, r: f64) -> bool {
        let drive = self.d_phi * r + self.d_theta * self.lipschitz * a;
        let mut beta = 0.0;
        if beta > self.rho_hat - r - a {
            return false;
        }
        for k in 1..=n_hat {
            beta = linalg::sqrt(self.lambda_hat * beta * beta + self.sigma * self.sigma) + self.sqrt_lambda_pow(k - 1) * drive;
            if beta > self.rho_hat - self.sqrt_lambda_pow(k) * (r + a) {
                return false;
            }
        }
        true
    }

    /// Largest feasible `r = ||z_N||_V`, or `None` if `Omega` is empty.
    pub fn omega_r_max(&self, n_hat: usize, a: f64) -> Option<f64> {
        if !self.omega_feasible(n_hat, a, 0.0) {
            return None;
        }
        let (mut lo, mut hi) = (0.0f64, (self.rho_hat - a).max(0.0));
        if self.omega_feasible(n_hat, a, hi) {
            return Some(hi);
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.omega_feasible(n_hat, a, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * (1.0 + hi) {
                break;
            }
        }
        Some(lo)
    }

    /// Maximum over `Omega` of the sufficient terminal check; `None` when
    /// `Omega` is empty.
    ///
    /// With `beta_{N+N_hat}` at its cap the `r + a` terms cancel, leaving
    /// `sqrt(lambda_hat) rho_hat + sigma + lambda_hat^{N_hat/2}(d_Phi r + d_Theta L a)`,
    /// increasing in `r`.
    pub fn terminal_check_value(&self, n_hat: usize, a: f64) -> Option<f64> {
        let r = self.omega_r_max(n_hat, a)?;
        Some(
            linalg::sqrt(self.lambda_hat) * self.rho_hat
                + self.sigma
                + self.sqrt_lambda_pow(n_hat) * (self.d_phi * r + self.d_theta * self.lipschitz * a),
        )
    }

    fn horizon_ok(&self, n_hat: usize, a: f64) -> bool {
        match self.terminal_check_value(n_hat, a) {
            None => true,
            Some(v) => v <= self.rho_hat,
        }
    }

    /// Smallest `N_hat` passing the terminal check, by doubling then bisection.
    pub fn find_terminal_horizon(&self, x0n_norm: f64) -> Result<TerminalHorizon, TerminalError> {
        let lhs = self.sigma * self.sigma / (1.0 - self.lambda_hat);
        let rhs = self.rho_hat * self.rho_hat;
        if !(lhs < rhs) {
            return Err(TerminalError::Finiteness { lhs, rhs });
        }
        let a = x0n_norm;
        let mut hi = 1;
        while !self.horizon_ok(hi, a) {
            if hi >= N_HAT_MAX {
                return Err(TerminalError::HorizonExceeded(N_HAT_MAX));
            }
            hi = (hi * 2).min(N_HAT_MAX);
        }
        let mut lo = hi / 2;
        // horizon_ok(lo) is false here unless lo == 0.
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.horizon_ok(mid, a) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(TerminalHorizon {
            n_hat: hi,
            sigma_hat: self.sigma_hat(hi, a),
            x0n_norm: a,
        })
    }
}

/// Offline design: LDI, cost LMI and terminal scalars.
pub fn design_terminal<M: BasisModel, B: ConicBackend + ?Sized>(
    backend: &B,
    pd: &ProblemData<M>,
    theta: &VPolytope,
    settings: &SolverSettings,
) -> Result<TerminalParams, TerminalError> {
    let ldi = build_ldi(&pd.model, &pd.x_hat, &pd.u_hat, theta)?;
    let w = lmi_disturbance_vertices(&pd.model, theta, &pd.w);
    let design = solve_terminal_lmi(backend, &ldi, &w, &pd.q, &pd.r, settings)?;
    let mut params = TerminalParams::from_design(pd, &ldi, &design)?;
    params.d_theta = one_norm_diameter(theta.vertices());
    Ok(params)
}

/// Columns introduced by the terminal blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OmegaColumns {
    /// Epigraph variable `r >= ||z_N||_V`.
    pub r: usize,
    /// First of `N_hat` variables `beta_{N+1..N+N_hat}`.
    pub beta: usize,
    pub n_hat: usize,
}

/// Adds `(||z_N||_V, beta_N) in Omega(x0_N)`.
///
/// `z_n` is the first column of `z_N`; `beta_n` the column of `beta_N`.
pub fn build_omega_blocks(
    cp: &mut ConicProgram,
    params: &TerminalParams,
    horizon: &TerminalHorizon,
    z_n: usize,
    beta_n: usize,
) -> OmegaColumns {
    let a = horizon.x0n_norm;
    let n_hat = horizon.n_hat;
    let r = cp.add_vars("omega_r", 1);
    let beta = cp.add_vars("omega_beta", n_hat);
    let vz = affine_map(params.shape.sqrt(), z_n, None);
    cp.soc(Label::new("omega_epigraph", 0), LinExpr::var(r), vz.clone());
    cp.soc(
        Label::new("omega_cap", 0),
        LinExpr::constant(params.rho_hat - a).term(beta_n, -1.0),
        vz.clone(),
    );
    let drive = LinExpr::var(r).scaled(params.d_phi).plus(params.d_theta * params.lipschitz * a);
    let sl = linalg::sqrt(params.lambda_hat);
    for k in 1..=n_hat {
        let prev = if k == 1 { beta_n } else { beta + k - 2 };
        let cur = beta + k - 1;
        let mut head = LinExpr::var(cur);
        head.add_scaled(&drive, -params.sqrt_lambda_pow(k - 1));
        cp.soc(
            Label::new("omega_recursion", k),
            head,
            alloc::vec![LinExpr::var(prev).scaled(sl), LinExpr::constant(params.sigma)],
        );
        let p = params.sqrt_lambda_pow(k);
        cp.soc(
            Label::new("omega_cap", k),
            LinExpr::constant(params.rho_hat - p * a).term(cur, -1.0),
            vz.iter().map(|e| e.scaled(p)).collect(),
        );
    }
    OmegaColumns { r, beta, n_hat }
}

/// Adds `l_{N+k}` for `k = 0..=N_hat` and returns the first column.
pub fn terminal_cost_blocks(
    cp: &mut ConicProgram,
    params: &TerminalParams,
    horizon: &TerminalHorizon,
    cols: &OmegaColumns,
    beta_n: usize,
) -> usize {
    let a = horizon.x0n_norm;
    let n_hat = cols.n_hat;
    let l = cp.add_vars("terminal_l", n_hat + 1);
    for k in 0..=n_hat {
        let beta_k = if k == 0 { beta_n } else { cols.beta + k - 1 };
        let p = params.sqrt_lambda_pow(k);
        let g = if k == n_hat { params.gamma } else { 1.0 };
        // l - g (p (a + r) + beta) >= 0
        let e = LinExpr::var(l + k)
            .term(cols.r, -g * p)
            .term(beta_k, -g)
            .plus(-g * p * a);
        cp.nonneg(Label::new("terminal_cost", k), e);
    }
    l
}

/// Terminal cost values `l_{N+k}` for given `(r, beta_N, ..., beta_{N+N_hat})`.
pub fn terminal_cost_values(params: &TerminalParams, a: f64, r: f64, betas: &[f64]) -> Vec<f64> {
    let n_hat = betas.len() - 1;
    (0..=n_hat)
        .map(|k| {
            let base = params.sqrt_lambda_pow(k) * (a + r) + betas[k];
            if k == n_hat {
                params.gamma * base
            } else {
                base
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn scalar_params(lambda_hat: f64, sigma: f64, rho_hat: f64, d_phi: f64, dl: f64) -> TerminalParams {
        TerminalParams {
            shape: EllipsoidShape::new(dmatrix![1.0]).unwrap(),
            k: dmatrix![0.0],
            sigma,
            lambda_hat,
            d_theta: dl,
            d_phi,
            rho_hat,
            gamma: libm::sqrt(1.0 / (1.0 - libm::sqrt(lambda_hat))),
            lipschitz2: 1.0,
            lipschitz: 1.0,
            c_q: 1.0,
            h_bar: HPolytope::inf_ball(1, rho_hat),
            phi_hat: alloc::vec![],
        }
    }

    #[test]
    fn scalar_examples() {
        // V = Qhat gives lambda_hat = 0, gamma = 1.
        let shape = EllipsoidShape::new(dmatrix![2.0]).unwrap();
        let theta = VPolytope::new(alloc::vec![dvector![-0.1], dvector![0.1]]).unwrap();
        let hb = HPolytope::new(dmatrix![1.0; -1.0], dvector![1.0, 1.0]).unwrap();
        let s = terminal_scalars(&shape, &dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0], &theta, &[], &hb).unwrap();
        assert!(s.lambda_hat.abs() < 1e-12);
        assert!((s.gamma - 1.0).abs() < 1e-7);
        assert!((s.d_theta - 0.2).abs() < 1e-15);

        let shape = EllipsoidShape::new(dmatrix![4.0]).unwrap();
        let s = terminal_scalars(&shape, &dmatrix![0.0], &dmatrix![1.0], &dmatrix![1.0], &theta, &[], &hb).unwrap();
        assert!((s.rho_hat - 2.0).abs() < 1e-12);
        assert!((s.lambda_hat - 0.75).abs() < 1e-12);

        let bad = terminal_scalars(
            &EllipsoidShape::new(dmatrix![0.5]).unwrap(),
            &dmatrix![0.0],
            &dmatrix![1.0],
            &dmatrix![1.0],
            &theta,
            &[],
            &hb,
        );
        assert!(bad.is_ok(), "V below Qhat clamps lambda_hat at zero");
    }

    #[test]
    fn undisturbed_horizon() {
        let p = scalar_params(0.25, 0.0, 2.0, 0.0, 0.0);
        let h = p.find_terminal_horizon(0.0).unwrap();
        assert_eq!(h.n_hat, 1);
        assert_eq!(h.sigma_hat, 0.0);
    }

    /// Direct evaluation of the sufficient check over a grid of `(r, beta_N)`:
    /// intermediate betas at their smallest admissible values, the last one
    /// at its cap.
    fn grid_check(p: &TerminalParams, n_hat: usize, a: f64) -> Option<f64> {
        let l = p.lambda_hat;
        let steps = 400;
        let mut best: Option<f64> = None;
        for i in 0..=steps {
            let r = p.rho_hat * i as f64 / steps as f64;
            for j in 0..=steps {
                let beta_n = p.rho_hat * j as f64 / steps as f64;
                if beta_n > p.rho_hat - (r + a) {
                    continue;
                }
                let mut b = beta_n;
                let mut ok = true;
                for k in 1..=n_hat {
                    b = libm::sqrt(l * b * b + p.sigma * p.sigma)
                        + libm::pow(l, (k - 1) as f64 / 2.0) * (r * p.d_phi + p.d_theta * p.lipschitz * a);
                    if b > p.rho_hat - libm::pow(l, k as f64 / 2.0) * (r + a) {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                let cap = p.rho_hat - libm::pow(l, n_hat as f64 / 2.0) * (r + a);
                let v = libm::sqrt(l) * cap
                    + p.sigma
                    + libm::pow(l, n_hat as f64 / 2.0) * (r * p.d_phi + p.d_theta * p.lipschitz * a)
                    + libm::pow(l, (n_hat + 1) as f64 / 2.0) * (r + a);
                best = Some(best.map_or(v, |x: f64| x.max(v)));
            }
        }
        best
    }

    #[test]
    fn horizon_matches_grid_oracle() {
        let p = scalar_params(0.25, 0.1, 2.0, 0.05, 0.02);
        let a = 1.0;
        let oracle_n = (1..=N_HAT_MAX)
            .find(|&n| grid_check(&p, n, a).is_none_or(|v| v <= p.rho_hat + 1e-9))
            .unwrap();
        let h = p.find_terminal_horizon(a).unwrap();
        assert_eq!(h.n_hat, oracle_n);
        for n in 1..6 {
            let exact = p.terminal_check_value(n, a).unwrap();
            let grid = grid_check(&p, n, a).unwrap();
            assert!(grid <= exact + 1e-12 && exact - grid < 2e-2, "n={n} exact={exact} grid={grid}");
        }
        // Monotone in the horizon.
        let mut prev = f64::INFINITY;
        for n in 1..12 {
            let v = p.terminal_check_value(n, a).unwrap();
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        let expected_sigma_hat = p.gamma * 0.1 + p.gamma * libm::pow(0.25, h.n_hat as f64 / 2.0) * (0.05 * 2.0 + 0.02);
        assert!((h.sigma_hat - expected_sigma_hat).abs() < 1e-12);
    }

    #[test]
    fn horizon_errors() {
        let p = scalar_params(0.75, 1.5, 2.0, 0.0, 0.0);
        assert!(matches!(p.find_terminal_horizon(0.0), Err(TerminalError::Finiteness { .. })));
        // Finite by the remark but never passes the sufficient check.
        let p = scalar_params(0.81, 0.5, 2.0, 0.0, 0.0);
        assert_eq!(p.find_terminal_horizon(0.0), Err(TerminalError::HorizonExceeded(N_HAT_MAX)));
    }

    #[test]
    fn omega_block_counts() {
        let p = scalar_params(0.25, 0.1, 2.0, 0.05, 0.02);
        let count = |n_hat: usize| {
            let mut cp = ConicProgram::new();
            let z = cp.add_vars("z", 1);
            let b = cp.add_vars("beta", 1);
            let h = TerminalHorizon {
                n_hat,
                sigma_hat: 0.0,
                x0n_norm: 0.3,
            };
            build_omega_blocks(&mut cp, &p, &h, z, b);
            (cp.n_vars(), cp.socs.len())
        };
        let (v0, c0) = count(0);
        for n in [1usize, 3, 7] {
            let (v, c) = count(n);
            assert_eq!(v - v0, n);
            assert_eq!(c - c0, 2 * n);
        }
        assert_eq!(count(1), (4, 4));
    }

    #[test]
    fn omega_origin_and_propagation() {
        let p = scalar_params(0.25, 0.0, 2.0, 0.05, 0.02);
        let h = TerminalHorizon {
            n_hat: 3,
            sigma_hat: 0.0,
            x0n_norm: 0.0,
        };
        let mut cp = ConicProgram::new();
        let z = cp.add_vars("z", 1);
        let b = cp.add_vars("beta", 1);
        let cols = build_omega_blocks(&mut cp, &p, &h, z, b);
        let x = alloc::vec![0.0; cp.n_vars()];
        assert_eq!(cp.max_violation(&x).0, 0.0);
        let _ = cols;

        // A feasible (r, beta_N) propagated one step stays in Omega.
        let p = scalar_params(0.25, 0.1, 2.0, 0.05, 0.02);
        let a = 0.4f64;
        let n_hat = p.find_terminal_horizon(a).unwrap().n_hat;
        let (r, beta_n) = (0.3, 0.5);
        assert!(p.omega_feasible(n_hat, a, r) && beta_n <= p.rho_hat - r - a);
        let a1 = libm::sqrt(p.lambda_hat) * a;
        let r1 = libm::sqrt(p.lambda_hat) * r;
        let beta1 = libm::sqrt(p.lambda_hat * beta_n * beta_n + p.sigma * p.sigma) + p.d_phi * r + p.d_theta * p.lipschitz * a;
        // beta_{N+1} must satisfy the cap of Omega(x0_{N+1}) and admit a chain.
        assert!(beta1 <= p.rho_hat - (r1 + a1));
    }

    #[test]
    fn terminal_cost_example() {
        let p = scalar_params(0.25, 0.1, 2.0, 0.05, 0.02);
        let mut p = p;
        p.gamma = libm::sqrt(2.0);
        let l = terminal_cost_values(&p, 0.4, 0.1, &[0.2, 0.3]);
        assert!((l[0] - 0.7).abs() < 1e-12);
        assert!((l[1] - libm::sqrt(2.0) * 0.55).abs() < 1e-12);
        assert!((l[1] - 0.7778).abs() < 1e-4);
        assert_eq!(terminal_cost_values(&p, 0.0, 0.0, &[0.0, 0.0]), alloc::vec![0.0, 0.0]);
    }

    #[test]
    fn lmi_block_structure() {
        // Plug in a known scalar solution and check the block's Schur complement.
        let (a, b) = (dmatrix![0.5], dmatrix![1.0]);
        let (cp, s0, y0, tau) = cost_lmi_program(&[(a, b)], &[dvector![0.01]], &dmatrix![1.0], &dmatrix![1.0]);
        let mut x = alloc::vec![0.0; cp.n_vars()];
        x[s0] = 0.5;
        x[y0] = -0.1;
        x[tau] = 1.0;
        let m = cp.psds[0].1.eval(&x);
        assert_eq!(m.nrows(), 5);
        assert!((m[(0, 2)] - (0.5 * 0.5 - 0.1)).abs() < 1e-15);
        assert!((m[(1, 2)] - 0.01).abs() < 1e-15);
        assert!((m[(0, 3)] - 0.5).abs() < 1e-15);
        assert!((m[(0, 4)] + 0.1).abs() < 1e-15);
    }
}
