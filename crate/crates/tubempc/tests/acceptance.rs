//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! `TUBEMPC_ACCEPTANCE_INSTANCES` (default 20) and `TUBEMPC_ACCEPTANCE_STEPS`
//! (default 10) shrink the benchmark part for quick local runs.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tubempc::bench::{self, BenchmarkSpec, ClosedLoopTrace, InstanceResult, BASELINE_DESCRIPTION};
use tubempc::verify::{theta_vertices, verify_trace, VerifyReport};
use tubempc::ClarabelBackend;
use tubempc_core::geometry::{BoxSet, EllipsoidShape};
use tubempc_core::model::JacobianPair;
use tubempc_core::terminal::{lmi_disturbance_vertices, solve_terminal_lmi, LdiModel, TerminalParams};
use tubempc_core::tube::compute_lambda;
use tubempc_core::{ControllerConfig, SolverSettings};

const SIZES: [(usize, usize, usize); 4] = [(2, 1, 2), (4, 2, 2), (4, 2, 4), (6, 2, 4)];
const LONG_RUN_STEPS: usize = 200;
const LONG_RUN_SEED: u64 = 1000;

struct Line {
    pass: bool,
    text: String,
}

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian(rng, n, n, 1.0);
    &g * g.transpose() + DMatrix::identity(n, n) * 0.2
}

fn sym_sqrt_inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| 1.0 / l.sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

fn vnorm2(v: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(v * x))
}

fn unit_sphere(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = g.norm();
    g / norm
}

/// One-step ellipsoid containment on random data with boundary sampling.
fn criterion_1() -> Line {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut violations, mut worst) = (0usize, f64::NEG_INFINITY);
    for inst in 0..50 {
        let n = 1 + inst % 6;
        let v = random_spd(&mut rng, n);
        let shape = EllipsoidShape::new(v.clone()).expect("spd");
        let phi = gaussian(&mut rng, n, n, 0.4);
        let pairs: Vec<JacobianPair> = (0..2)
            .map(|_| JacobianPair {
                c: gaussian(&mut rng, n, n, 0.1),
                d: DMatrix::zeros(n, 1),
            })
            .collect();
        let ws: Vec<DVector<f64>> = (0..1 + inst % 3)
            .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-0.1..0.1)))
            .collect();
        let w_max = ws.iter().map(|w| vnorm2(&v, w).sqrt()).fold(0.0, f64::max);
        let sigma = w_max * rng.gen_range(1.05..2.0) + 1e-3;
        let lambda = compute_lambda(&phi, &pairs, &shape, &ws, sigma).expect("sigma admissible");
        let beta: f64 = rng.gen_range(0.05..2.0);
        let rhs = lambda * beta * beta + sigma * sigma;
        let v_isqrt = sym_sqrt_inv(&v);
        for _ in 0..10_000 {
            let e = &v_isqrt * unit_sphere(&mut rng, n) * beta;
            let mut check = |m: &DMatrix<f64>, w: &DVector<f64>| {
                let lhs = vnorm2(&v, &(m * &e + w));
                worst = worst.max(lhs - rhs);
                if lhs > rhs + 1e-7 * rhs.max(1.0) {
                    violations += 1;
                }
            };
            for p in &pairs {
                for w in &ws {
                    check(&(&phi + &p.c), w);
                }
            }
            let t: f64 = rng.gen();
            let c = &pairs[0].c * t + &pairs[1].c * (1.0 - t);
            let k = rng.gen_range(0..ws.len());
            check(&(&phi + c), &(&ws[k] * rng.gen_range(0.0..1.0)));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Line {
        pass: violations == 0 && secs < 30.0,
        text: format!(
            "50 instances x 1e4 boundary points: {violations} violations, worst excess {worst:.3e}, {secs:.1} s"
        ),
    }
}

/// Smallest `tau` with the scalar cost LMI feasible for fixed `(s, y)`,
/// from a Schur complement on the `tau` entry.
fn scalar_tau(a: f64, b: f64, w: f64, q: f64, r: f64, s: f64, y: f64) -> Option<f64> {
    let p = a * s + b * y;
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        s, p, s, y,
        p, s, 0.0, 0.0,
        s, 0.0, 1.0 / q, 0.0,
        y, 0.0, 0.0, 1.0 / r,
    ]);
    let c = DVector::from_vec(vec![0.0, w, 0.0, 0.0]);
    let chol = m.cholesky()?;
    Some(c.dot(&chol.solve(&c)))
}

/// Grid search over `s` (log scale) and the gain `k = y / s`, then local
/// refinement around the best point.
fn scalar_tau_grid(a: f64, b: f64, w: f64, q: f64, r: f64) -> f64 {
    let mut best = (f64::INFINITY, 1.0, 0.0);
    let search = |best: &mut (f64, f64, f64), s_lo: f64, s_hi: f64, k_lo: f64, k_hi: f64| {
        let steps = 300;
        for i in 0..=steps {
            let s = (s_lo.ln() + (s_hi.ln() - s_lo.ln()) * i as f64 / steps as f64).exp();
            for j in 0..=steps {
                let k = k_lo + (k_hi - k_lo) * j as f64 / steps as f64;
                if let Some(t) = scalar_tau(a, b, w, q, r, s, k * s) {
                    if t < best.0 {
                        *best = (t, s, k);
                    }
                }
            }
        }
    };
    search(&mut best, 1e-4, 1e2, -20.0, 20.0);
    for round in 0..4 {
        let (_, s, k) = best;
        let f = 2f64.powi(-round);
        search(&mut best, s / (1.0 + f), s * (1.0 + f), k - 0.2 * f, k + 0.2 * f);
    }
    best.0
}

fn lmi_pointwise(params: &TerminalParams, w: &[DVector<f64>], q: &DMatrix<f64>, r: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> (usize, f64) {
    let v = params.shape.matrix();
    let q_hat = params.q_hat(q, r);
    let n = v.nrows();
    let sigma2 = params.sigma * params.sigma;
    let v_isqrt = params.shape.inv_sqrt();
    let (mut bad, mut worst) = (0usize, f64::NEG_INFINITY);
    let zero = [DVector::zeros(n)];
    let ws: &[DVector<f64>] = if w.is_empty() { &zero } else { w };
    for phi in &params.phi_hat {
        for wr in ws {
            for _ in 0..500 {
                let scale = 10f64.powf(rng.gen_range(-3.0..1.0)) * params.sigma.max(1e-3);
                let x = v_isqrt * unit_sphere(rng, n) * scale;
                let lhs = vnorm2(v, &(phi * &x + wr));
                let rhs = vnorm2(v, &x) - vnorm2(&q_hat, &x) + sigma2;
                worst = worst.max(lhs - rhs);
                if lhs > rhs + 1e-7 {
                    bad += 1;
                }
            }
        }
    }
    (bad, worst)
}

fn scalar_lmi_check(backend: &ClarabelBackend) -> (bool, String) {
    let cases = [(1.2, 1.0, 0.1, 1.0, 1.0), (0.8, 0.5, 0.05, 2.0, 0.5), (1.5, 2.0, 0.2, 1.0, 3.0)];
    let mut ok = true;
    let mut text = Vec::new();
    for (a, b, w, q, r) in cases {
        let ldi = LdiModel {
            pairs: vec![(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b))],
            x_hat: BoxSet::symmetric(1, 1.0),
            u_hat: BoxSet::unbounded(1),
        };
        let wv = [DVector::from_element(1, w), DVector::from_element(1, -w)];
        let qm = DMatrix::from_element(1, 1, q);
        let rm = DMatrix::from_element(1, 1, r);
        let oracle = scalar_tau_grid(a, b, w, q, r);
        match solve_terminal_lmi(backend, &ldi, &wv, &qm, &rm, &SolverSettings::default()) {
            Ok(d) => {
                let rel = (d.tau - oracle).abs() / oracle;
                ok &= rel <= 0.05;
                text.push(format!("tau {:.5} vs grid {:.5}", d.tau, oracle));
            }
            Err(e) => {
                ok = false;
                text.push(format!("solve failed: {e}"));
            }
        }
    }
    (ok, text.join(", "))
}

struct Run {
    size: (usize, usize, usize),
    result: InstanceResult,
    trace: Option<ClosedLoopTrace>,
    report: Option<VerifyReport>,
}

fn fmt_size(s: (usize, usize, usize)) -> String {
    format!("({},{},{})", s.0, s.1, s.2)
}

fn main() -> ExitCode {
    let instances = env_usize("TUBEMPC_ACCEPTANCE_INSTANCES", 20);
    let steps = env_usize("TUBEMPC_ACCEPTANCE_STEPS", 10);
    let backend = ClarabelBackend::from_env();
    let config = ControllerConfig::default();
    let mut lines: Vec<(usize, &str, Line)> = Vec::new();
    let started = Instant::now();

    lines.push((1, "tube containment", criterion_1()));

    // Benchmark runs shared by criteria 2-10.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut runs: Vec<Run> = Vec::new();
    let (mut lmi_bad, mut lmi_worst, mut designs) = (0usize, f64::NEG_INFINITY, 0usize);
    let mut generation_errors = Vec::new();
    for &(n_x, n_u, n_theta) in &SIZES {
        let mut spec = BenchmarkSpec::new(n_x, n_u, n_theta);
        spec.steps = steps;
        spec.instances = instances;
        let t0 = Instant::now();
        for seed in 0..instances as u64 {
            let inst = match bench::generate_instance(&backend, &spec, seed, &config) {
                Ok(i) => i,
                Err(e) => {
                    generation_errors.push(format!("{} seed {seed}: {e}", fmt_size((n_x, n_u, n_theta))));
                    continue;
                }
            };
            let w = lmi_disturbance_vertices(&inst.problem.model, &inst.problem.theta0.v, &inst.problem.w);
            let (bad, worst) = lmi_pointwise(&inst.design, &w, &inst.problem.q, &inst.problem.r, &mut rng);
            lmi_bad += bad;
            lmi_worst = lmi_worst.max(worst);
            designs += 1;
            let (result, trace) = bench::measure_instance(&backend, &inst, &config);
            let report = trace.as_ref().map(|t| verify_trace(t, 100, &mut rng).expect("trace re-check"));
            runs.push(Run {
                size: (n_x, n_u, n_theta),
                result,
                trace,
                report,
            });
        }
        eprintln!(
            "  {} done: {} instances in {:.0} s",
            fmt_size((n_x, n_u, n_theta)),
            instances,
            t0.elapsed().as_secs_f64()
        );
    }

    let (scalar_ok, scalar_text) = scalar_lmi_check(&backend);
    lines.push((
        2,
        "terminal LMI certificate",
        Line {
            pass: lmi_bad == 0 && designs > 0 && scalar_ok,
            text: format!(
                "{designs} designs, {lmi_bad} pointwise violations (worst excess {lmi_worst:.3e}); scalar {scalar_text}"
            ),
        },
    ));

    let small: Vec<&Run> = runs.iter().filter(|r| r.size == SIZES[0] || r.size == SIZES[1]).collect();
    let small_expected = 2 * instances;
    let hard: usize = small.iter().map(|r| r.result.hard_failures).sum();
    let aborted = small.iter().filter(|r| r.trace.is_none()).count();
    let exhausted: usize = small
        .iter()
        .filter_map(|r| r.trace.as_ref())
        .flat_map(|t| &t.reports)
        .flat_map(|s| &s.iterations)
        .filter(|i| i.j_bar.is_none())
        .count();
    lines.push((
        3,
        "recursive feasibility",
        Line {
            pass: small.len() == small_expected && hard == 0 && aborted == 0,
            text: format!(
                "{}/{small_expected} (2,1,2)+(4,2,2) runs of {steps} steps, {hard} hard failures, {aborted} aborted; \
                 {exhausted} later iterations kept the previous iterate after an exhausted line search",
                small.len()
            ),
        },
    ));

    // Criterion 4: per-step decrease on every run plus one long run.
    let decrease_bad: usize = runs.iter().filter_map(|r| r.report.as_ref()).map(|r| r.cost_decrease_violations).sum();
    let worst_margin = runs
        .iter()
        .filter_map(|r| r.report.as_ref())
        .map(|r| r.worst_cost_margin)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut long_spec = BenchmarkSpec::new(2, 1, 2);
    long_spec.steps = LONG_RUN_STEPS;
    let long = bench::generate_instance(&backend, &long_spec, LONG_RUN_SEED, &config)
        .map_err(|e| e.to_string())
        .and_then(|inst| bench::simulate_instance(&backend, &inst, &config, LONG_RUN_STEPS).map_err(|e| e.to_string()));
    let (long_ok, long_text) = match &long {
        Ok(tr) => {
            let last = tr.theta_offsets.last().expect("offsets");
            let sb_final = tr.design.with_theta(&theta_vertices(last).expect("simplex")).sigma_bar();
            let sb0 = tr.design.sigma_bar();
            let avg = tr.mean_stage_cost();
            let rep = verify_trace(tr, 0, &mut rng).expect("trace re-check");
            (
                avg <= sb_final * sb_final && rep.cost_decrease_violations == 0,
                format!(
                    "{LONG_RUN_STEPS}-step run: mean stage cost {avg:.4} <= sigma_bar^2 {:.4} (initial set {:.4}), {} decrease violations",
                    sb_final * sb_final,
                    sb0 * sb0,
                    rep.cost_decrease_violations
                ),
            )
        }
        Err(e) => (false, format!("{LONG_RUN_STEPS}-step run failed: {e}")),
    };
    lines.push((
        4,
        "cost decrease",
        Line {
            pass: decrease_bad == 0 && long_ok,
            text: format!("{decrease_bad} step violations (worst margin {worst_margin:.3e}); {long_text}"),
        },
    ));

    let reports: Vec<&VerifyReport> = runs.iter().filter_map(|r| r.report.as_ref()).collect();
    let sum = |f: fn(&VerifyReport) -> usize| reports.iter().map(|r| f(r)).sum::<usize>();
    let tube_samples = sum(|r| r.tube_samples);
    let tube_bad = sum(|r| r.tube_violations);
    let constraint_bad = sum(|r| r.constraint_violations);
    let worst_ratio = reports.iter().map(|r| r.worst_tube_ratio).fold(0.0, f64::max);
    lines.push((
        5,
        "tube soundness",
        Line {
            pass: tube_bad == 0 && constraint_bad == 0 && tube_samples > 0,
            text: format!(
                "{tube_samples} sampled trajectories over {} runs: {tube_bad} tube exits, {constraint_bad} closed-loop constraint violations, worst ||e||_V/beta {worst_ratio:.7}",
                reports.len()
            ),
        },
    ));

    let nest = sum(|r| r.nesting_violations);
    let consist = sum(|r| r.consistency_violations);
    let verts = sum(|r| r.vertex_count_violations);
    let est_fail = sum(|r| r.estimator_failures);
    lines.push((
        6,
        "set-membership estimation",
        Line {
            pass: nest == 0 && consist == 0 && verts == 0 && !reports.is_empty(),
            text: format!(
                "{} runs: {nest} nesting, {consist} consistency, {verts} vertex-count violations; {est_fail} estimator solve failures (set kept)",
                reports.len()
            ),
        },
    ));

    // Criterion 7: the sweep table.
    let mut rows = Vec::new();
    for &s in &SIZES {
        let mut spec = BenchmarkSpec::new(s.0, s.1, s.2);
        spec.steps = steps;
        spec.instances = instances;
        let rs: Vec<InstanceResult> = runs.iter().filter(|r| r.size == s).map(|r| r.result.clone()).collect();
        let mut row = bench::aggregate(&spec, &rs);
        row.failed_instances += instances - rs.len();
        rows.push(row);
    }
    println!("size      soc     vars   linear   iter s   iters/step  subopt   redraws");
    for r in &rows {
        println!(
            "{:<8} {:>7.1} {:>7.1} {:>7.1} {:>8.4} {:>10.2} {:>8.3} {:>7}",
            fmt_size((r.n_x, r.n_u, r.n_theta)),
            r.soc_constraints,
            r.n_vars,
            r.linear_constraints,
            r.iter_time_mean,
            r.iterations_mean,
            r.suboptimality_mean,
            r.redraws
        );
    }
    let complete = rows.iter().all(|r| r.failed_instances == 0) && generation_errors.is_empty();
    let slope = bench::log_log_slope(&[(2.0, rows[1].soc_constraints), (4.0, rows[2].soc_constraints)]);
    let times: Vec<f64> = rows.iter().map(|r| r.iter_time_mean).collect();
    let monotone = times.windows(2).all(|w| w[0] < w[1]);
    let small_time = times[0];
    lines.push((
        7,
        "scaling",
        Line {
            pass: complete && (slope - 2.0).abs() <= 0.5 && monotone && small_time < 0.5,
            text: format!(
                "{} sizes x {instances} instances complete: {complete}{}; SOC slope vs n_theta {slope:.3}; iteration times {:?} s monotone: {monotone}; (2,1,2) {small_time:.4} s",
                SIZES.len(),
                if generation_errors.is_empty() { String::new() } else { format!(" ({})", generation_errors.join("; ")) },
                times.iter().map(|t| (t * 1e4).round() / 1e4).collect::<Vec<_>>()
            ),
        },
    ));

    let all_iters: Vec<usize> = runs.iter().flat_map(|r| r.result.iterations.iter().copied()).collect();
    let pooled = all_iters.iter().sum::<usize>() as f64 / all_iters.len().max(1) as f64;
    let per_size: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {:.2}", fmt_size((r.n_x, r.n_u, r.n_theta)), r.iterations_mean))
        .collect();
    lines.push((
        8,
        "iteration counts",
        Line {
            pass: (2.0..=8.0).contains(&pooled),
            text: format!("pooled mean {pooled:.2} over {} steps; per size: {}", all_iters.len(), per_size.join(", ")),
        },
    ));

    let max_row = runs.iter().map(|r| r.result.max_row_violation).fold(0.0, f64::max);
    lines.push((
        9,
        "assembly soundness",
        Line {
            pass: max_row <= 1e-6,
            text: format!("max row violation {max_row:.3e} over {} runs", runs.len()),
        },
    ));

    let subs: Vec<f64> = runs.iter().filter_map(|r| r.result.suboptimality).collect();
    let negative = subs.iter().filter(|s| **s < 0.0).count();
    let min_sub = subs.iter().copied().fold(f64::INFINITY, f64::min);
    let per_size: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {:.3}", fmt_size((r.n_x, r.n_u, r.n_theta)), r.suboptimality_mean))
        .collect();
    lines.push((
        10,
        "suboptimality",
        Line {
            pass: negative == 0 && subs.len() == runs.len() && !rows.iter().any(|r| r.baseline != BASELINE_DESCRIPTION),
            text: format!(
                "{}/{} runs reported, {negative} negative, min {min_sub:.4}; means {}; baseline: {BASELINE_DESCRIPTION}",
                subs.len(),
                runs.len(),
                per_size.join(", ")
            ),
        },
    ));

    println!();
    let mut all = true;
    for (k, name, line) in &lines {
        all &= line.pass;
        println!(
            "criterion {k:>2} [{name}]: {} - {}",
            if line.pass { "PASS" } else { "FAIL" },
            line.text
        );
    }
    println!("acceptance finished in {:.0} s", started.elapsed().as_secs_f64());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
