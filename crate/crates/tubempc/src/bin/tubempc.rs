use std::error::Error;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tubempc::bench::{self, BenchmarkSpec, ClosedLoopTrace, Truth, INIT_TRIES};
use tubempc::formats::{self, JsonlWriter};
use tubempc::verify::verify_trace;
use tubempc::ClarabelBackend;
use tubempc_core::controller::init_feasible;
use tubempc_core::terminal::design_terminal;
use tubempc_core::{ControllerConfig, Vector};

type Res<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "tubempc", version, about = "Robust adaptive tube MPC for uncertain nonlinear systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the terminal ingredients of a problem.
    Design {
        problem: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Simulate the closed loop.
    Run {
        problem: PathBuf,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Seeds the disturbance stream and any drawn initial state.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
        /// Per-step reports as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Precomputed design; computed on the fly when absent.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Draw a random benchmark instance.
    Generate {
        /// `n_x,n_u,n_theta`
        #[arg(long)]
        size: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Benchmark sweep over problem sizes.
    Sweep {
        #[arg(long, default_value = "2,1,2;4,2,2;4,2,4;6,2,4")]
        sizes: String,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 10)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Per-instance results as JSON lines.
        #[arg(long)]
        details: Option<PathBuf>,
    },
    /// Re-check a closed-loop trace; exits non-zero on any violation.
    Verify {
        trace: PathBuf,
        /// Monte Carlo samples per solved program.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Res<ExitCode> {
    let backend = ClarabelBackend::from_env();
    let config = ControllerConfig::default();
    match cli.cmd {
        Cmd::Design { problem, output } => {
            let pd = formats::read_problem(&problem)?.to_problem()?;
            let params = design_terminal(&backend, &pd, &pd.theta0.v, &config.solver)?;
            formats::write_design(&output, &params)?;
            println!(
                "sigma = {:.6}  sigma_bar = {:.6}  terminal horizon = {}",
                params.sigma,
                params.sigma_bar(),
                params.find_terminal_horizon(0.0).map_or("none".into(), |h| h.n_hat.to_string())
            );
        }
        Cmd::Run {
            problem,
            steps,
            seed,
            output,
            log,
            params,
        } => {
            let file = formats::read_problem(&problem)?;
            let pd = file.to_problem()?;
            let design = match params {
                Some(p) => formats::read_design(&p)?,
                None => design_terminal(&backend, &pd, &pd.theta0.v, &config.solver)?,
            };
            let seed = seed.or(file.seed).unwrap_or(0);
            let theta_star = match &file.theta_true {
                Some(t) => Vector::from_vec(t.clone()),
                None => pd.theta0.v.mean(),
            };
            let (x_init, v0) = match &file.x_init {
                Some(x) => {
                    let x = Vector::from_vec(x.clone());
                    let v0 = init_feasible(&backend, &pd, &design, &pd.theta0.v, &x, &config.solver)?;
                    (x, v0)
                }
                None => draw_start(&backend, &pd, &design, &config, seed)?,
            };
            let truth = Truth { theta_star, w_seed: seed };
            let trace = bench::simulate(&backend, &pd, &design, &truth, &x_init, v0, &config, steps)?;
            formats::write_json(&output, &trace)?;
            if let Some(path) = log {
                let mut w = JsonlWriter::create(&path)?;
                for r in &trace.reports {
                    w.append(r)?;
                }
            }
            summarize(&trace);
        }
        Cmd::Generate {
            size,
            seed,
            output,
            params,
        } => {
            let sizes = BenchmarkSpec::parse_sizes(&size)?;
            let [(n_x, n_u, n_theta)] = sizes[..] else {
                return Err("--size takes a single n_x,n_u,n_theta triple".into());
            };
            let spec = BenchmarkSpec::new(n_x, n_u, n_theta);
            spec.validate()?;
            let inst = bench::generate_instance(&backend, &spec, seed, &config)?;
            formats::write_json(&output, &inst.problem_file())?;
            if let Some(p) = params {
                formats::write_design(&p, &inst.design)?;
            }
            println!("instance written after {} redraws", inst.redraws);
        }
        Cmd::Sweep {
            sizes,
            instances,
            steps,
            horizon,
            seed,
            workers,
            output,
            details,
        } => {
            let specs = BenchmarkSpec::parse_sizes(&sizes)?
                .into_iter()
                .map(|(a, b, c)| {
                    let mut s = BenchmarkSpec::new(a, b, c);
                    s.instances = instances;
                    s.steps = steps;
                    s.horizon = horizon;
                    s.seed = seed;
                    s.validate().map(|_| s)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let (rows, results) = bench::sweep(&backend, &specs, &config, workers);
            bench::write_csv(BufWriter::new(File::create(&output)?), &rows)?;
            if let Some(path) = details {
                let mut w = JsonlWriter::create(&path)?;
                for r in &results {
                    w.append(r)?;
                }
            }
            for r in &rows {
                println!(
                    "({},{},{})  soc {:>7.1}  vars {:>6.1}  lin {:>6.1}  iter {:.4}s  iters/step {:.2}  subopt {:.3}  failed {}",
                    r.n_x,
                    r.n_u,
                    r.n_theta,
                    r.soc_constraints,
                    r.n_vars,
                    r.linear_constraints,
                    r.iter_time_mean,
                    r.iterations_mean,
                    r.suboptimality_mean,
                    r.failed_instances
                );
            }
        }
        Cmd::Verify { trace, samples, seed } => {
            let trace: ClosedLoopTrace = formats::read_json(&trace)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rep = verify_trace(&trace, samples, &mut rng)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            if !rep.passed() {
                eprintln!("verification failed");
                return Ok(ExitCode::FAILURE);
            }
            println!("verification passed");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn draw_start(
    backend: &ClarabelBackend,
    pd: &tubempc_core::ProblemData,
    design: &tubempc_core::TerminalParams,
    config: &ControllerConfig,
    seed: u64,
) -> Res<(Vector, Vec<Vector>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for _ in 0..INIT_TRIES {
        let x = Vector::from_fn(pd.n_x(), |_, _| rng.gen_range(-1.0..=1.0));
        if let Ok(v0) = init_feasible(backend, pd, design, &pd.theta0.v, &x, &config.solver) {
            return Ok((x, v0));
        }
    }
    Err(format!("no feasible initial state in {INIT_TRIES} draws").into())
}

fn summarize(trace: &ClosedLoopTrace) {
    let iters: usize = trace.reports.iter().map(|r| r.iterations.len()).sum();
    let fallbacks = trace.reports.iter().filter(|r| r.fallback).count();
    println!(
        "{} steps  mean stage cost {:.6}  mean iterations {:.2}  fallbacks {}",
        trace.reports.len(),
        trace.mean_stage_cost(),
        iters as f64 / trace.reports.len().max(1) as f64,
        fallbacks
    );
}
