//! TOML problem definitions.
//!
//! A config file carries the plant, the cost, both delay chains, an initial
//! condition, and simulation defaults. The problem hash covers only the
//! parts that determine the gain schedule (plant, cost, chains), so a
//! schedule file can be matched to a config even when the initial condition
//! or episode count changes.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::delay_model::DelayChain;
use crate::extended_dynamics::{ExtendedDynamics, PlantModel};
use crate::packet_layout::PacketLayout;
use crate::simulation::EpisodeInit;
use crate::synthesis::{CostSpec, Synthesizer};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("{section}: {problem}")]
    Invalid { section: String, problem: String },
}

fn invalid(section: &str, problem: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        section: section.to_string(),
        problem: problem.to_string(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    n: usize,
    m: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFile {
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "Q_bar")]
    q_bar: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    k0: i64,
    #[serde(rename = "N")]
    n_end: i64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    lo: usize,
    hi: usize,
    step: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitFile {
    x0: Vec<f64>,
    r0: usize,
    d_init: usize,
    #[serde(default)]
    pre_history: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunFile {
    episodes: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    plant: PlantFile,
    cost: CostFile,
    r_chain: ChainFile,
    d_chain: ChainFile,
    init: InitFile,
    #[serde(default)]
    run: RunFile,
}

/// Simulation defaults from the `[run]` section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub episodes: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            episodes: 1000,
            seed: 0,
        }
    }
}

/// The schedule-determining part of a problem.
#[derive(Debug)]
pub struct Problem {
    pub dynamics: ExtendedDynamics,
    pub r_chain: DelayChain,
    pub d_chain: DelayChain,
    pub cost: CostSpec,
    pub problem_hash: String,
}

impl Problem {
    pub fn synthesizer(&self) -> Synthesizer<'_> {
        Synthesizer {
            dynamics: &self.dynamics,
            r_chain: &self.r_chain,
            d_chain: &self.d_chain,
            cost: &self.cost,
        }
    }
}

/// A fully loaded config file.
#[derive(Debug)]
pub struct LoadedProblem {
    pub problem: Problem,
    pub init: EpisodeInit,
    pub run: RunConfig,
}

fn matrix(section: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid(
            section,
            format!("expected a {nrows}x{ncols} matrix"),
        ));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn hash_matrix(hasher_input: &mut String, label: &str, m: &DMatrix<f64>) {
    write!(hasher_input, "{label}[{}x{}]=", m.nrows(), m.ncols()).unwrap();
    for v in m.iter() {
        write!(hasher_input, "{v:.17e} ").unwrap();
    }
    hasher_input.push('\n');
}

/// Hex SHA-256 over a canonical rendering of plant, cost, and chains.
#[allow(clippy::too_many_arguments)]
pub fn problem_hash(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    q_bar: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: i64,
    n_end: i64,
    r_chain: &DelayChain,
    d_chain: &DelayChain,
) -> String {
    let mut text = String::from("ncs-lqr problem v1\n");
    hash_matrix(&mut text, "A", a);
    hash_matrix(&mut text, "B", b);
    hash_matrix(&mut text, "Q", q);
    hash_matrix(&mut text, "Q_bar", q_bar);
    hash_matrix(&mut text, "R", r);
    writeln!(text, "k0={k0} N={n_end}").unwrap();
    for (label, chain) in [("r_chain", r_chain), ("d_chain", d_chain)] {
        writeln!(text, "{label} lo={} hi={}", chain.lo(), chain.hi()).unwrap();
        hash_matrix(&mut text, label, chain.one_step_matrix());
    }
    let digest = Sha256::digest(text.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{byte:02x}").unwrap();
    }
    hex
}

fn build_chain(section: &str, file: &ChainFile) -> Result<DelayChain, ConfigError> {
    let size = file
        .hi
        .checked_sub(file.lo)
        .map(|w| w + 1)
        .ok_or_else(|| invalid(section, "lo exceeds hi"))?;
    let step = matrix(section, &file.step, size, size)?;
    DelayChain::new(file.lo, file.hi, step).map_err(|e| invalid(section, e))
}

pub fn load_config(path: &Path) -> Result<LoadedProblem, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: ConfigFile = toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.display().to_string(),
        source: Box::new(source),
    })?;
    build_problem(file)
}

fn build_problem(file: ConfigFile) -> Result<LoadedProblem, ConfigError> {
    let (n, m) = (file.plant.n, file.plant.m);
    if n == 0 || m == 0 {
        return Err(invalid("plant", "n and m must be positive"));
    }
    let a = matrix("plant.A", &file.plant.a, n, n)?;
    let b = matrix("plant.B", &file.plant.b, n, m)?;
    let q = matrix("cost.Q", &file.cost.q, n, n)?;
    let q_bar = matrix("cost.Q_bar", &file.cost.q_bar, n, n)?;
    let r = matrix("cost.R", &file.cost.r, m, m)?;
    let r_chain = build_chain("r_chain", &file.r_chain)?;
    let d_chain = build_chain("d_chain", &file.d_chain)?;
    let cost = CostSpec::new(q, q_bar, r, file.cost.k0, file.cost.n_end, n, m)
        .map_err(|e| invalid("cost", e))?;
    let layout = PacketLayout::new(m, d_chain.lo(), d_chain.hi(), r_chain.lo(), r_chain.hi())
        .map_err(|e| invalid("d_chain/r_chain", e))?;
    let plant = PlantModel::new(a, b, r_chain.hi() + 1).map_err(|e| invalid("plant", e))?;
    let problem_hash = problem_hash(
        &plant.a, &plant.b, &cost.q, &cost.q_bar, &cost.r, cost.k0, cost.n_end, &r_chain, &d_chain,
    );
    let dynamics = ExtendedDynamics::new(plant, layout);

    if file.init.x0.len() != n {
        return Err(invalid("init.x0", format!("expected {n} entries")));
    }
    let pre_history = file
        .init
        .pre_history
        .iter()
        .map(|p| {
            if p.len() != dynamics.layout.m_tilde {
                Err(invalid(
                    "init.pre_history",
                    format!("each packet needs {} entries", dynamics.layout.m_tilde),
                ))
            } else {
                Ok(DVector::from_vec(p.clone()))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let init = EpisodeInit {
        x0: DVector::from_vec(file.init.x0),
        r0: file.init.r0,
        d_init: file.init.d_init,
        pre_history,
    };
    init.validate(&dynamics, &r_chain, &d_chain)
        .map_err(|e| invalid("init", e))?;

    let run = RunConfig {
        episodes: file.run.episodes.unwrap_or(RunConfig::default().episodes),
        seed: file.run.seed.unwrap_or(RunConfig::default().seed),
    };
    Ok(LoadedProblem {
        problem: Problem {
            dynamics,
            r_chain,
            d_chain,
            cost,
            problem_hash,
        },
        init,
        run,
    })
}
