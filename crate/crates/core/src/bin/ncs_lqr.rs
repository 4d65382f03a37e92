//! Command-line front end: validate a problem file, synthesize a gain
//! schedule, simulate it, or run the exhaustive verification suite.
//!
//! Exit codes: 0 on success, 1 when validation or verification fails,
//! 2 on I/O or file-format problems.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use ncs_lqr::oracle;
use ncs_lqr::rng_util::{seeded, uniform_in};
use ncs_lqr::simulation::{self, run_monte_carlo};
use ncs_lqr::{load_config, read_schedule, write_schedule, ConfigError, GainSchedule, LoadedProblem};

#[derive(Parser)]
#[command(name = "ncs-lqr", version, about = "Delay-aware gain schedules for networked control loops")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a problem file is well formed and internally consistent.
    Validate { config: PathBuf },
    /// Run the backward recursion and write the gain schedule.
    Synthesize {
        config: PathBuf,
        /// Schedule output path.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Monte-Carlo simulate a schedule against its problem.
    Simulate {
        config: PathBuf,
        /// Schedule file produced by `synthesize`.
        #[arg(long)]
        gains: PathBuf,
        /// Override the episode count from the config.
        #[arg(long)]
        episodes: Option<usize>,
        /// Override the rng seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Write a CSV trace of the first episode here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Cross-check a schedule against independent oracles.
    Verify {
        config: PathBuf,
        /// Schedule file; synthesized in-process when omitted.
        #[arg(long)]
        gains: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = VerifyLevel::Quick)]
        level: VerifyLevel,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyLevel {
    /// Kernel-expectation and cost-identity checks.
    Quick,
    /// Quick checks plus full enumeration of the delay realizations.
    Exhaustive,
}

/// 1 = validation/verification failure, 2 = I/O or format trouble.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn check(message: impl ToString) -> Self {
        Failure {
            code: 1,
            message: message.to_string(),
        }
    }
    fn io(message: impl ToString) -> Self {
        Failure {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid { .. } => Failure::check(e),
            _ => Failure::io(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { config } => validate(&config),
        Command::Synthesize { config, output } => synthesize(&config, &output),
        Command::Simulate {
            config,
            gains,
            episodes,
            seed,
            trace,
        } => simulate(&config, &gains, episodes, seed, trace.as_deref()),
        Command::Verify {
            config,
            gains,
            level,
        } => verify(&config, gains.as_deref(), level),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn describe(loaded: &LoadedProblem) {
    let p = &loaded.problem;
    let layout = &p.dynamics.layout;
    println!(
        "plant: n={} m={}   packet: m~={} components, extended dim {}",
        p.dynamics.plant.n,
        p.dynamics.plant.m,
        layout.m_tilde,
        p.dynamics.ext_dim()
    );
    println!(
        "delays: r in {}..={}, d in {}..={}, window {}",
        p.r_chain.lo(),
        p.r_chain.hi(),
        p.d_chain.lo(),
        p.d_chain.hi(),
        layout.window()
    );
    println!(
        "horizon: k0={} N={} ({} steps)   hash {}",
        p.cost.k0,
        p.cost.n_end,
        p.cost.steps(),
        &p.problem_hash[..16]
    );
}

fn validate(config: &std::path::Path) -> Result<(), Failure> {
    let loaded = load_config(config)?;
    describe(&loaded);
    println!("ok");
    Ok(())
}

fn synthesize(config: &std::path::Path, output: &std::path::Path) -> Result<(), Failure> {
    let loaded = load_config(config)?;
    describe(&loaded);
    let out = loaded
        .problem
        .synthesizer()
        .synthesize(&loaded.problem.problem_hash)
        .map_err(Failure::check)?;
    let worst = out.max_condition.iter().cloned().fold(0.0f64, f64::max);
    println!("worst conditioning of the per-step solves: {worst:.3e}");
    let file = File::create(output).map_err(|e| Failure::io(format!("{}: {e}", output.display())))?;
    let mut writer = BufWriter::new(file);
    write_schedule(&out.schedule, &mut writer)
        .and_then(|()| writer.flush())
        .map_err(|e| Failure::io(format!("{}: {e}", output.display())))?;
    println!("schedule written to {}", output.display());
    Ok(())
}

fn load_schedule(path: &std::path::Path) -> Result<GainSchedule, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    read_schedule(&mut BufReader::new(file))
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn simulate(
    config: &std::path::Path,
    gains: &std::path::Path,
    episodes: Option<usize>,
    seed: Option<u64>,
    trace: Option<&std::path::Path>,
) -> Result<(), Failure> {
    let loaded = load_config(config)?;
    let schedule = load_schedule(gains)?;
    if !schedule.problem_hash.is_empty() && schedule.problem_hash != loaded.problem.problem_hash {
        return Err(Failure::check(format!(
            "schedule was synthesized for a different problem (hash {} vs {})",
            &schedule.problem_hash[..16],
            &loaded.problem.problem_hash[..16]
        )));
    }
    let p = &loaded.problem;
    let episodes = episodes.unwrap_or(loaded.run.episodes);
    let seed = seed.unwrap_or(loaded.run.seed);
    let summary = run_monte_carlo(
        &schedule,
        &p.dynamics,
        &p.r_chain,
        &p.d_chain,
        &p.cost,
        &loaded.init,
        episodes,
        seed,
    )
    .map_err(Failure::check)?;
    println!("episodes: {}   seed: {seed}", summary.episodes);
    println!(
        "send-time cost  J : mean {:.10e}  stderr {:.3e}",
        summary.mean_j, summary.stderr_j
    );
    println!(
        "apply-time cost J~: mean {:.10e}  stderr {:.3e}",
        summary.mean_j_tilde, summary.stderr_j_tilde
    );
    println!("predicted value   : {:.10e}", summary.predicted_value);
    if let Some(path) = trace {
        let mut rng = seeded(seed);
        let first = simulation::run_episode(
            &schedule,
            &p.dynamics,
            &p.r_chain,
            &p.d_chain,
            &p.cost,
            &loaded.init,
            &mut rng,
        )
        .map_err(Failure::check)?;
        let file = File::create(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        let mut writer = BufWriter::new(file);
        simulation::write_trace_csv(&first, &mut writer)
            .and_then(|()| writer.flush())
            .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        println!("first-episode trace written to {}", path.display());
    }
    Ok(())
}

fn verify(
    config: &std::path::Path,
    gains: Option<&std::path::Path>,
    level: VerifyLevel,
) -> Result<(), Failure> {
    let loaded = load_config(config)?;
    let p = &loaded.problem;
    let schedule = match gains {
        Some(path) => {
            let schedule = load_schedule(path)?;
            if !schedule.problem_hash.is_empty() && schedule.problem_hash != p.problem_hash {
                return Err(Failure::check("schedule hash does not match the problem"));
            }
            schedule
        }
        None => p
            .synthesizer()
            .synthesize(&p.problem_hash)
            .map_err(Failure::check)?
            .schedule,
    };
    let mut failures = 0usize;
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // kernel expectations at a random interior point and every mode
    let mut rng = seeded(0x6b65726e);
    let x_hat = DVector::from_fn(p.dynamics.ext_dim(), |_, _| uniform_in(&mut rng, -1.0, 1.0));
    let u_tilde = DVector::from_fn(p.dynamics.layout.m_tilde, |_, _| {
        uniform_in(&mut rng, -1.0, 1.0)
    });
    let mid = schedule.k_mats.len() / 2;
    let mut worst_kernel = 0.0f64;
    for r in p.r_chain.lo()..=p.r_chain.hi() {
        for d in p.d_chain.lo()..=p.d_chain.hi() {
            let dev = oracle::check_kernel_expectations(
                &p.dynamics,
                &p.r_chain,
                &p.d_chain,
                &p.cost,
                &schedule.k_mats[mid],
                r,
                d,
                &x_hat,
                &u_tilde,
            )
            .map_err(Failure::check)?;
            worst_kernel = worst_kernel
                .max(dev.packet_charge)
                .max(dev.state_cost)
                .max(dev.next_value);
        }
    }
    report(
        "kernel expectations",
        worst_kernel <= 1e-10,
        format!("worst relative deviation {worst_kernel:.3e}"),
    );

    let identity = oracle::check_cost_identity(
        &schedule,
        &p.dynamics,
        &p.r_chain,
        &p.d_chain,
        &p.cost,
        &loaded.init,
    )
    .map_err(Failure::check)?;
    report(
        "cost identity",
        identity <= 1e-10,
        format!("worst relative deviation {identity:.3e}"),
    );

    if matches!(level, VerifyLevel::Exhaustive) {
        let costs = oracle::enumerate_expected_cost(
            &schedule,
            &p.dynamics,
            &p.r_chain,
            &p.d_chain,
            &p.cost,
            &loaded.init,
        )
        .map_err(Failure::check)?;
        let predicted = simulation::initial_value(&schedule, &p.dynamics, &loaded.init)
            .map_err(Failure::check)?;
        let dev = (costs.expected_j - predicted).abs() / predicted.abs().max(1.0);
        report(
            "enumerated cost vs predicted value",
            dev <= 1e-8,
            format!("enumerated {:.10e}, predicted {predicted:.10e}", costs.expected_j),
        );
        let open = oracle::joint_open_loop_min(
            &p.dynamics,
            &p.r_chain,
            &p.d_chain,
            &p.cost,
            &loaded.init,
        )
        .map_err(Failure::check)?;
        report(
            "feedback beats the best open-loop plan",
            costs.expected_j <= open + 1e-9 * open.abs().max(1.0),
            format!("closed loop {:.10e} <= open loop {open:.10e}", costs.expected_j),
        );
    }

    if failures > 0 {
        return Err(Failure::check(format!("{failures} check(s) failed")));
    }
    println!("all checks passed");
    Ok(())
}
