//! Clarabel implementation of the conic backend.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT, SecondOrderConeT,
    SolverStatus, SupportedConeT, ZeroConeT,
};
use tubempc_core::conic::{Capabilities, ConicBackend, ConicProgram, LinExpr, SolveReport, SolveStatus, SolverSettings};
use tubempc_core::Vector;

/// Environment variable overriding the solver tolerance.
pub const TOL_ENV: &str = "TUBEMPC_SOLVER_TOL";

/// `AlmostSolved` answers are accepted when the returned point violates no
/// row by more than this.
const ALMOST_SOLVED_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    start: Instant,
    tol_override: Option<f64>,
    pub verbose: bool,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl ClarabelBackend {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
            tol_override: None,
            verbose: false,
        }
    }

    /// Reads the tolerance override from [`TOL_ENV`] if set and parseable.
    pub fn from_env() -> Self {
        let mut b = Self::new();
        b.tol_override = std::env::var(TOL_ENV)
            .ok()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|t| *t > 0.0);
        b
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol_override = Some(tol);
        self
    }

    pub fn effective_settings(&self, settings: &SolverSettings) -> SolverSettings {
        let mut s = *settings;
        if let Some(t) = self.tol_override {
            s.tol = t;
        }
        s
    }
}

/// Standard form `Ax + s = b`, `s in K`, as triplets.
struct Standard {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl Standard {
    /// Appends `s = e`, i.e. the row `-a` with right-hand side `c`.
    fn push(&mut self, e: &LinExpr, scale: f64) {
        let r = self.b.len();
        for &(j, a) in &e.terms {
            if a != 0.0 {
                self.rows.push(r);
                self.cols.push(j);
                self.vals.push(-a * scale);
            }
        }
        self.b.push(e.constant * scale);
    }
}

fn standard_form(cp: &ConicProgram) -> Standard {
    let mut st = Standard {
        rows: Vec::new(),
        cols: Vec::new(),
        vals: Vec::new(),
        b: Vec::new(),
        cones: Vec::new(),
    };
    if !cp.equalities.is_empty() {
        for (_, e) in &cp.equalities {
            st.push(e, 1.0);
        }
        st.cones.push(ZeroConeT(cp.equalities.len()));
    }
    if !cp.inequalities.is_empty() {
        for (_, e) in &cp.inequalities {
            st.push(e, 1.0);
        }
        st.cones.push(NonnegativeConeT(cp.inequalities.len()));
    }
    for (_, soc) in &cp.socs {
        for e in soc {
            st.push(e, 1.0);
        }
        st.cones.push(SecondOrderConeT(soc.len()));
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    for (_, psd) in &cp.psds {
        let mut k = 0;
        for j in 0..psd.n {
            for i in 0..=j {
                st.push(&psd.entries[k], if i == j { 1.0 } else { sqrt2 });
                k += 1;
            }
        }
        st.cones.push(PSDTriangleConeT(psd.n));
    }
    st
}

impl ConicBackend for ClarabelBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            lp: true,
            soc: true,
            psd: true,
        }
    }

    fn solve(&self, cp: &ConicProgram, settings: &SolverSettings) -> SolveReport {
        let started = Instant::now();
        let s = self.effective_settings(settings);
        let n = cp.n_vars();
        let failure = |status| SolveReport {
            status,
            iterations: 0,
            solve_seconds: started.elapsed().as_secs_f64(),
        };
        if n == 0 {
            return match cp.max_violation(&[]).0 <= s.tol {
                true => failure(SolveStatus::Optimal {
                    objective: 0.0,
                    x: Vector::zeros(0),
                }),
                false => failure(SolveStatus::Infeasible),
            };
        }
        let st = standard_form(cp);
        let m = st.b.len();
        let a = CscMatrix::new_from_triplets(m, n, st.rows, st.cols, st.vals);
        let p = CscMatrix::zeros((n, n));
        let mut q = vec![0.0; n];
        for &(j, c) in &cp.objective {
            q[j] += c;
        }
        let mut builder = DefaultSettingsBuilder::default();
        builder
            .verbose(self.verbose)
            .max_iter(s.max_iter)
            .tol_gap_abs(s.tol)
            .tol_gap_rel(s.tol)
            .tol_feas(s.tol)
            .tol_ktratio(s.tol.max(1e-8) * 1e-2);
        if let Some(t) = s.time_limit {
            builder.time_limit(t);
        }
        let Ok(clarabel_settings) = builder.build() else {
            return failure(SolveStatus::NumericalFailure);
        };
        let Ok(mut solver) = DefaultSolver::new(&p, &q, &a, &st.b, &st.cones, clarabel_settings) else {
            return failure(SolveStatus::NumericalFailure);
        };
        solver.solve();
        let sol = &solver.solution;
        let x = Vector::from_vec(sol.x.clone());
        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal {
                objective: cp.objective_value(x.as_slice()),
                x,
            },
            SolverStatus::AlmostSolved if cp.max_violation(x.as_slice()).0 <= ALMOST_SOLVED_TOL => SolveStatus::Optimal {
                objective: cp.objective_value(x.as_slice()),
                x,
            },
            SolverStatus::PrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible => SolveStatus::Unbounded,
            SolverStatus::MaxTime => SolveStatus::TimeLimit,
            _ => SolveStatus::NumericalFailure,
        };
        SolveReport {
            status,
            iterations: sol.iterations,
            solve_seconds: started.elapsed().as_secs_f64(),
        }
    }

    fn clock(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}
