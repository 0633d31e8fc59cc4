//! Random quadratic benchmarks, closed-loop simulation and size sweeps.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tubempc_core::controller::{init_feasible, ControllerError};
use tubempc_core::estimator::{EstimatorError, Transition, DEFAULT_WINDOW};
use tubempc_core::geometry::GeometryError;
use tubempc_core::linearize::{self, LinearizeError};
use tubempc_core::model::{self, ModelError};
use tubempc_core::ocp::{self, CostDecrease, OcpError, OcpInput, OcpMode};
use tubempc_core::terminal::{design_terminal, TerminalError};
use tubempc_core::{
    BasisTerm, BoxSet, ConicBackend, Controller, ControllerConfig, HPolytope, Matrix, ParamEstimate,
    PolytopeSet, ProblemData, QuadraticBasisModel, StepReport, TerminalParams, VPolytope, Vector,
};

use crate::formats::ProblemFile;

/// Spectral radius cap for the random state matrix.
pub const SPECTRAL_RADIUS_MAX: f64 = 1.2;
/// Half-width of the disturbance box before mapping by `B_w`.
pub const W_BOUND: f64 = 0.01;
/// Largest distance from the true parameter to a vertex of `Theta_0`.
pub const THETA_SPREAD: f64 = 0.05;
/// True parameters are drawn uniformly in `[-THETA_RANGE, THETA_RANGE]^p`.
pub const THETA_RANGE: f64 = 0.05;
pub const X_HAT_RADIUS: f64 = 1.5;
pub const S_OFFSET: f64 = 0.5;
pub const INIT_TRIES: usize = 100;
pub const MAX_REDRAWS: usize = 200;

/// What the suboptimality column divides by.
pub const BASELINE_DESCRIPTION: &str = "certainty-equivalent program at t=0: same linearization, nominal parameter and terminal horizon; disturbance, parameter and linearization error sets and sigma set to zero";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no usable instance after {0} draws")]
    NoInstance(usize),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Terminal(#[from] TerminalError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub n_x: usize,
    pub n_u: usize,
    pub n_theta: usize,
    pub n_w: usize,
    pub horizon: usize,
    pub steps: usize,
    pub seed: u64,
    pub instances: usize,
}

impl BenchmarkSpec {
    pub fn new(n_x: usize, n_u: usize, n_theta: usize) -> Self {
        Self {
            n_x,
            n_u,
            n_theta,
            n_w: n_x.min(2),
            horizon: 10,
            steps: 10,
            seed: 0,
            instances: 20,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_x == 0 || self.n_u == 0 || self.n_theta == 0 || self.n_w == 0 || self.horizon == 0 {
            return Err("dimensions and horizon must be at least 1".into());
        }
        if self.n_w > self.n_x {
            return Err(format!("n_w = {} exceeds n_x = {}", self.n_w, self.n_x));
        }
        Ok(())
    }

    /// Parses `"2,1,2;4,2,2"` into `(n_x, n_u, n_theta)` triples.
    pub fn parse_sizes(s: &str) -> Result<Vec<(usize, usize, usize)>, String> {
        s.split(';')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                let v: Vec<usize> = t
                    .split(',')
                    .map(|x| x.trim().parse::<usize>().map_err(|e| format!("bad size `{t}`: {e}")))
                    .collect::<Result<_, _>>()?;
                match v[..] {
                    [a, b, c] => Ok((a, b, c)),
                    _ => Err(format!("size `{t}` needs three entries")),
                }
            })
            .collect()
    }
}

/// Data the controller never sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub theta_star: Vector,
    /// Seed of the disturbance stream.
    pub w_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: BenchmarkSpec,
    pub seed: u64,
    pub problem: ProblemData,
    pub design: TerminalParams,
    pub truth: Truth,
    pub x_init: Vector,
    /// Feasible perturbation sequence at `x_init`.
    pub v0_init: Vec<Vector>,
    /// Draws rejected before this one (design failure or no feasible start).
    pub redraws: usize,
}

impl Instance {
    pub fn problem_file(&self) -> ProblemFile {
        let mut f = ProblemFile::from_problem(&self.problem);
        f.x_init = Some(self.x_init.iter().copied().collect());
        f.theta_true = Some(self.truth.theta_star.iter().copied().collect());
        f.seed = Some(self.truth.w_seed);
        f
    }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

pub fn spectral_radius(a: &Matrix) -> f64 {
    a.clone().complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

fn full_column_rank(m: &Matrix) -> bool {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    max > 0.0 && sv.min() > 1e-6 * max
}

/// Simplex `[-I; 1'] theta <= h` of size `s` containing `theta_star` at
/// random barycentric coordinates.
fn random_simplex_around(rng: &mut ChaCha8Rng, theta_star: &Vector, size: f64) -> Vector {
    let p = theta_star.len();
    let e: Vec<f64> = (0..=p).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    // mu[0] weights the corner, mu[i] the vertex corner + size e_i.
    let corner = Vector::from_fn(p, |i, _| theta_star[i] - size * e[i + 1] / total);
    let mut h = Vector::zeros(p + 1);
    for i in 0..p {
        h[i] = -corner[i];
    }
    h[p] = corner.sum() + size;
    h
}

/// Largest Euclidean distance from `theta` to a vertex of `set`.
pub fn max_vertex_distance(set: &VPolytope, theta: &Vector) -> f64 {
    set.vertices().iter().map(|v| (v - theta).norm()).fold(0.0, f64::max)
}

/// Draws the problem data only; no design or feasibility check.
pub fn draw_problem(spec: &BenchmarkSpec, rng: &mut ChaCha8Rng) -> Result<(ProblemData, Vector), BenchError> {
    let (nx, nu, nt) = (spec.n_x, spec.n_u, spec.n_theta);
    let mut a = gaussian(rng, nx, nx);
    let rho = spectral_radius(&a);
    if rho > SPECTRAL_RADIUS_MAX {
        a *= SPECTRAL_RADIUS_MAX / rho;
    }
    let b = gaussian(rng, nx, nu);
    let terms: Vec<BasisTerm> = (0..nt)
        .map(|i| BasisTerm::Quadratic {
            row: i % nx,
            state: rng.gen_range(0..nx),
        })
        .collect();
    let x_hat = BoxSet::symmetric(nx, X_HAT_RADIUS);
    let lipschitz = QuadraticBasisModel::lipschitz_on(&terms, &x_hat);
    let model = QuadraticBasisModel::new(a, b, terms, lipschitz)?;
    let b_w = loop {
        let m = gaussian(rng, nx, spec.n_w);
        if full_column_rank(&m) {
            break m;
        }
    };
    let w = VPolytope::new(BoxSet::symmetric(spec.n_w, W_BOUND).corners().iter().map(|c| &b_w * c).collect())?;
    let theta_star = Vector::from_fn(nt, |_, _| rng.gen_range(-THETA_RANGE..=THETA_RANGE));
    // Edge s gives a largest vertex distance of at most s*sqrt(2).
    let size = THETA_SPREAD / std::f64::consts::SQRT_2;
    let theta0 = PolytopeSet::simplex(random_simplex_around(rng, &theta_star, size))?;
    let pd = ProblemData {
        model,
        x_set: HPolytope::full(nx),
        u_set: HPolytope::inf_ball(nu, 1.0),
        theta0,
        w,
        s_set: PolytopeSet::simplex(Vector::from_element(nx + 1, S_OFFSET))?,
        v_set: None,
        q: Matrix::identity(nx, nx),
        r: Matrix::identity(nu, nu),
        horizon: spec.horizon,
        x_hat,
        u_hat: BoxSet::unbounded(nu),
    };
    Ok((pd, theta_star))
}

/// Seeded instance: redraws until the terminal design succeeds and a
/// feasible initial state is found.
pub fn generate_instance<B: ConicBackend + ?Sized>(
    backend: &B,
    spec: &BenchmarkSpec,
    seed: u64,
    config: &ControllerConfig,
) -> Result<Instance, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for redraws in 0..MAX_REDRAWS {
        let (pd, theta_star) = draw_problem(spec, &mut rng)?;
        let w_seed: u64 = rng.gen();
        let Ok(design) = design_terminal(backend, &pd, &pd.theta0.v, &config.solver) else {
            continue;
        };
        if design.find_terminal_horizon(0.0).is_err() {
            continue;
        }
        for _ in 0..INIT_TRIES {
            let x_init = Vector::from_fn(spec.n_x, |_, _| rng.gen_range(-1.0..=1.0));
            if let Ok(v0) = init_feasible(backend, &pd, &design, &pd.theta0.v, &x_init, &config.solver) {
                return Ok(Instance {
                    spec: *spec,
                    seed,
                    problem: pd,
                    design,
                    truth: Truth { theta_star, w_seed },
                    x_init,
                    v0_init: v0,
                    redraws,
                });
            }
        }
    }
    Err(BenchError::NoInstance(MAX_REDRAWS))
}

/// A point of `W`: a vertex half of the time, otherwise a random convex
/// combination of the vertices.
pub fn sample_disturbance(w: &VPolytope, rng: &mut impl Rng) -> Vector {
    let verts = w.vertices();
    if rng.gen_bool(0.5) {
        return verts[rng.gen_range(0..verts.len())].clone();
    }
    sample_convex(verts, rng)
}

pub fn sample_convex(points: &[Vector], rng: &mut impl Rng) -> Vector {
    let e: Vec<f64> = (0..points.len()).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    let mut out = Vector::zeros(points[0].len());
    for (p, ei) in points.iter().zip(&e) {
        out += p * (ei / total);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub problem: ProblemFile,
    pub design: TerminalParams,
    pub config: ControllerConfig,
    pub theta_star: Vector,
    /// `x_0 .. x_T`.
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub disturbances: Vec<Vector>,
    pub stage_costs: Vec<f64>,
    /// Offsets of `Theta_t` used at step `t`, then the final set.
    pub theta_offsets: Vec<Vector>,
    pub reports: Vec<StepReport>,
    /// Estimator failures; the set is left unchanged when one occurs.
    pub estimator_errors: Vec<Option<String>>,
}

impl ClosedLoopTrace {
    pub fn mean_stage_cost(&self) -> f64 {
        self.stage_costs.iter().sum::<f64>() / self.stage_costs.len().max(1) as f64
    }
}

/// Runs `steps` closed-loop steps against the true parameter, updating the
/// parameter set after each applied input.
pub fn simulate<B: ConicBackend + ?Sized>(
    backend: &B,
    pd: &ProblemData,
    design: &TerminalParams,
    truth: &Truth,
    x_init: &Vector,
    v0_init: Vec<Vector>,
    config: &ControllerConfig,
    steps: usize,
) -> Result<ClosedLoopTrace, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(truth.w_seed);
    let mut est = ParamEstimate::new(&pd.theta0, DEFAULT_WINDOW)?;
    let mut ctl = Controller::new(*config, design.clone(), est.vertices().clone(), v0_init);
    let mut x = x_init.clone();
    let mut trace = ClosedLoopTrace {
        problem: ProblemFile::from_problem(pd),
        design: design.clone(),
        config: *config,
        theta_star: truth.theta_star.clone(),
        states: vec![x.clone()],
        inputs: Vec::new(),
        disturbances: Vec::new(),
        stage_costs: Vec::new(),
        theta_offsets: vec![est.offsets().clone()],
        reports: Vec::new(),
        estimator_errors: Vec::new(),
    };
    trace.problem.x_init = Some(x_init.iter().copied().collect());
    trace.problem.theta_true = Some(truth.theta_star.iter().copied().collect());
    trace.problem.seed = Some(truth.w_seed);
    for _ in 0..steps {
        let (u, report) = ctl.step(backend, pd, &x)?;
        let w = sample_disturbance(&pd.w, &mut rng);
        let x_next = model::eval_dynamics(&pd.model, &x, &u, &truth.theta_star)? + &w;
        let tr = Transition {
            x: x.clone(),
            u: u.clone(),
            x_next: x_next.clone(),
        };
        let err = est.update(backend, &pd.model, &pd.w, tr, &config.solver).err();
        if err.is_none() {
            ctl.set_parameters(est.vertices().clone(), est.nominal().clone());
        }
        trace.estimator_errors.push(err.map(|e| e.to_string()));
        trace.stage_costs.push(report.stage_cost);
        trace.inputs.push(u);
        trace.disturbances.push(w);
        trace.reports.push(report);
        trace.theta_offsets.push(est.offsets().clone());
        trace.states.push(x_next.clone());
        x = x_next;
    }
    Ok(trace)
}

/// Simulates an instance with its own initial condition.
pub fn simulate_instance<B: ConicBackend + ?Sized>(
    backend: &B,
    inst: &Instance,
    config: &ControllerConfig,
    steps: usize,
) -> Result<ClosedLoopTrace, BenchError> {
    simulate(
        backend,
        &inst.problem,
        &inst.design,
        &inst.truth,
        &inst.x_init,
        inst.v0_init.clone(),
        config,
        steps,
    )
}

/// Optimal cost of the certainty-equivalent program around `(x_init, v0)`.
pub fn certainty_equivalent_cost<B: ConicBackend + ?Sized>(
    backend: &B,
    pd: &ProblemData,
    params: &TerminalParams,
    theta: &VPolytope,
    x_init: &Vector,
    v0: &[Vector],
    config: &ControllerConfig,
) -> Result<Option<f64>, BenchError> {
    let theta0 = theta.mean();
    let traj = linearize::rollout(&pd.model, &params.k, x_init, v0, &theta0)?;
    let lins = linearize::linearize_trajectory(pd, &traj, theta, &params.shape, params.sigma)?;
    let horizon = ocp::terminal_horizon(params, &traj)?;
    let input = OcpInput {
        pd,
        traj: &traj,
        lins: &lins,
        params,
        horizon,
        x_plant: x_init,
        cost_decrease: CostDecrease::None,
        mode: OcpMode::CertaintyEquivalent,
    };
    Ok(ocp::solve(backend, &input, &config.solver)?.solution().map(|s| s.j_bar))
}

/// Per-instance results of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub n_x: usize,
    pub n_u: usize,
    pub n_theta: usize,
    pub seed: u64,
    pub redraws: usize,
    pub n_vars: usize,
    pub n_soc_blocks: usize,
    pub n_soc_rows: usize,
    pub n_linear_rows: usize,
    pub n_equalities: usize,
    pub iteration_seconds: Vec<f64>,
    /// Outer iterations per step.
    pub iterations: Vec<usize>,
    /// Wall time per step, all iterations.
    pub step_seconds: Vec<f64>,
    pub suboptimality: Option<f64>,
    pub mean_stage_cost: f64,
    pub hard_failures: usize,
    pub max_row_violation: f64,
    pub error: Option<String>,
}

/// One CSV row per problem size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_x: usize,
    pub n_u: usize,
    pub n_theta: usize,
    pub n_w: usize,
    pub horizon: usize,
    pub instances: usize,
    pub failed_instances: usize,
    pub redraws: usize,
    pub n_vars: f64,
    pub soc_constraints: f64,
    pub soc_rows: f64,
    pub linear_constraints: f64,
    pub equality_constraints: f64,
    pub iter_time_mean: f64,
    pub iter_time_min: f64,
    pub iter_time_max: f64,
    pub time_to_convergence_mean: f64,
    pub iterations_mean: f64,
    pub suboptimality_mean: f64,
    pub suboptimality_min: f64,
    pub suboptimality_max: f64,
    pub realized_cost_mean: f64,
    pub hard_failures: usize,
    pub max_row_violation: f64,
    pub baseline: String,
}

fn empty_result(spec: &BenchmarkSpec, seed: u64) -> InstanceResult {
    InstanceResult {
        n_x: spec.n_x,
        n_u: spec.n_u,
        n_theta: spec.n_theta,
        seed,
        redraws: 0,
        n_vars: 0,
        n_soc_blocks: 0,
        n_soc_rows: 0,
        n_linear_rows: 0,
        n_equalities: 0,
        iteration_seconds: Vec::new(),
        iterations: Vec::new(),
        step_seconds: Vec::new(),
        suboptimality: None,
        mean_stage_cost: f64::NAN,
        hard_failures: 0,
        max_row_violation: 0.0,
        error: None,
    }
}

/// Generates, simulates and measures one instance.
pub fn run_instance<B: ConicBackend + ?Sized>(
    backend: &B,
    spec: &BenchmarkSpec,
    seed: u64,
    config: &ControllerConfig,
) -> InstanceResult {
    match generate_instance(backend, spec, seed, config) {
        Ok(inst) => measure_instance(backend, &inst, config).0,
        Err(e) => {
            let mut res = empty_result(spec, seed);
            res.error = Some(e.to_string());
            res
        }
    }
}

/// Simulates `inst.spec.steps` steps and measures the run; the trace is
/// returned unless the simulation aborted.
pub fn measure_instance<B: ConicBackend + ?Sized>(
    backend: &B,
    inst: &Instance,
    config: &ControllerConfig,
) -> (InstanceResult, Option<ClosedLoopTrace>) {
    let mut res = empty_result(&inst.spec, inst.seed);
    res.redraws = inst.redraws;
    let ce = certainty_equivalent_cost(
        backend,
        &inst.problem,
        &inst.design,
        &inst.problem.theta0.v,
        &inst.x_init,
        &inst.v0_init,
        config,
    );
    let trace = match simulate_instance(backend, inst, config, inst.spec.steps) {
        Ok(t) => t,
        Err(e) => {
            res.hard_failures += 1;
            res.error = Some(e.to_string());
            return (res, None);
        }
    };
    if let Some(first) = trace.reports.first().and_then(|r| r.iterations.first()) {
        res.n_vars = first.stats.n_vars;
        res.n_soc_blocks = first.stats.n_soc_blocks;
        res.n_soc_rows = first.stats.n_soc_rows;
        res.n_linear_rows = first.stats.n_linear_rows;
        res.n_equalities = first.stats.n_equalities;
        if let (Some(j), Ok(Some(j_ce))) = (first.j_bar, ce) {
            res.suboptimality = Some(j / j_ce - 1.0);
        }
    }
    for r in &trace.reports {
        res.iterations.push(r.iterations.len());
        res.step_seconds.push(r.iterations.iter().map(|i| i.seconds).sum());
        for it in &r.iterations {
            res.iteration_seconds.push(it.seconds);
            if let Some(v) = it.row_violation {
                res.max_row_violation = res.max_row_violation.max(v);
            }
        }
        if r.fallback {
            res.hard_failures += 1;
        }
    }
    res.mean_stage_cost = trace.mean_stage_cost();
    (res, Some(trace))
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn min_max(v: impl IntoIterator<Item = f64>) -> (f64, f64) {
    v.into_iter()
        .fold((f64::NAN, f64::NAN), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

pub fn aggregate(spec: &BenchmarkSpec, results: &[InstanceResult]) -> SweepRow {
    let ok: Vec<&InstanceResult> = results.iter().filter(|r| r.error.is_none()).collect();
    let times = || ok.iter().flat_map(|r| r.iteration_seconds.iter().copied());
    let subs = || ok.iter().filter_map(|r| r.suboptimality);
    let (tmin, tmax) = min_max(times());
    let (smin, smax) = min_max(subs());
    SweepRow {
        n_x: spec.n_x,
        n_u: spec.n_u,
        n_theta: spec.n_theta,
        n_w: spec.n_w,
        horizon: spec.horizon,
        instances: results.len(),
        failed_instances: results.len() - ok.len(),
        redraws: results.iter().map(|r| r.redraws).sum(),
        n_vars: mean(ok.iter().map(|r| r.n_vars as f64)),
        soc_constraints: mean(ok.iter().map(|r| r.n_soc_blocks as f64)),
        soc_rows: mean(ok.iter().map(|r| r.n_soc_rows as f64)),
        linear_constraints: mean(ok.iter().map(|r| r.n_linear_rows as f64)),
        equality_constraints: mean(ok.iter().map(|r| r.n_equalities as f64)),
        iter_time_mean: mean(times()),
        iter_time_min: tmin,
        iter_time_max: tmax,
        time_to_convergence_mean: mean(ok.iter().flat_map(|r| r.step_seconds.iter().copied())),
        iterations_mean: mean(ok.iter().flat_map(|r| r.iterations.iter().map(|&i| i as f64))),
        suboptimality_mean: mean(subs()),
        suboptimality_min: smin,
        suboptimality_max: smax,
        realized_cost_mean: mean(ok.iter().map(|r| r.mean_stage_cost)),
        hard_failures: results.iter().map(|r| r.hard_failures).sum(),
        max_row_violation: ok.iter().map(|r| r.max_row_violation).fold(0.0, f64::max),
        baseline: BASELINE_DESCRIPTION.to_string(),
    }
}

/// Runs every `(spec, instance)` pair on `workers` threads. Results come
/// back sorted by size, then seed.
pub fn sweep_instances<B: ConicBackend + Sync + ?Sized>(
    backend: &B,
    specs: &[BenchmarkSpec],
    config: &ControllerConfig,
    workers: usize,
) -> Vec<(usize, InstanceResult)> {
    let jobs: Vec<(usize, u64)> = specs
        .iter()
        .enumerate()
        .flat_map(|(k, s)| (0..s.instances as u64).map(move |i| (k, s.seed + i)))
        .collect();
    let next = AtomicUsize::new(0);
    let out = Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(k, seed)) = jobs.get(j) else {
                    break;
                };
                let r = run_instance(backend, &specs[k], seed, config);
                out.lock().expect("worker panicked").push((k, r));
            });
        }
    });
    let mut out = out.into_inner().expect("worker panicked");
    out.sort_by_key(|(k, r)| (*k, r.seed));
    out
}

pub fn sweep<B: ConicBackend + Sync + ?Sized>(
    backend: &B,
    specs: &[BenchmarkSpec],
    config: &ControllerConfig,
    workers: usize,
) -> (Vec<SweepRow>, Vec<InstanceResult>) {
    let all = sweep_instances(backend, specs, config, workers);
    let rows = specs
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let rs: Vec<InstanceResult> = all.iter().filter(|(kk, _)| *kk == k).map(|(_, r)| r.clone()).collect();
            aggregate(s, &rs)
        })
        .collect();
    (rows, all.into_iter().map(|(_, r)| r).collect())
}

pub fn write_csv<W: std::io::Write>(out: W, rows: &[SweepRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let mx = mean(pts.iter().map(|p| p.0));
    let my = mean(pts.iter().map(|p| p.1));
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
