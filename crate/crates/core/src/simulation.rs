//! Closed-loop Monte-Carlo simulation of a gain schedule.
//!
//! An episode realizes both delay chains, rolls the plant forward from the
//! initial condition, and at each controller step assembles the extended
//! state exactly as the controller would: the delayed plant state x_{k-r_k},
//! the piggybacked actuator age d_{k-1-r_k}, and the controller's own log of
//! recently sent packets. Two cost functionals are accumulated:
//!
//! * `j` charges, at the send time k, every packet component that is
//!   eventually applied (the age realization decides which);
//! * `j_tilde` charges, at the apply time k, the input the actuator
//!   actually uses, regardless of when its packet was sent.
//!
//! The two differ only at the horizon edges: inputs applied inside the
//! window but sent before it, and components charged inside the window yet
//! applied after it.

use std::io::{self, Write};

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::delay_model::DelayChain;
use crate::extended_dynamics::ExtendedDynamics;
use crate::rng_util::seeded;
use crate::synthesis::{CostSpec, GainSchedule};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("initial state has dimension {got}, plant has {want}")]
    StateShape { got: usize, want: usize },
    #[error("pre-history packet {index} has width {got}, expected {want}")]
    PacketShape {
        index: usize,
        got: usize,
        want: usize,
    },
    #[error("pre-history holds {got} packets but the delay window is only {window} steps deep")]
    PacketCount { got: usize, window: usize },
    #[error("initial mode (r0={r0}, d_init={d_init}) outside chain supports")]
    ModeRange { r0: usize, d_init: usize },
    #[error("schedule has no gain for k={k}, mode (r={r}, d={d})")]
    ScheduleGap { k: i64, r: usize, d: usize },
    #[error("schedule shape mismatch: {what}")]
    ScheduleShape { what: String },
    #[error("non-finite value encountered at k={k}")]
    NonFinite { k: i64 },
    #[error(transparent)]
    Dynamics(#[from] crate::extended_dynamics::DynamicsError),
}

/// Initial condition of an episode.
///
/// `x0` is the plant state at time k0 - r0, i.e. the state the controller
/// sees at its first step. `pre_history[p-1]` is the packet sent at time
/// k0 - p; missing entries (up to the delay window depth) default to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeInit {
    pub x0: DVector<f64>,
    pub r0: usize,
    pub d_init: usize,
    pub pre_history: Vec<DVector<f64>>,
}

impl EpisodeInit {
    pub fn validate(
        &self,
        dynamics: &ExtendedDynamics,
        r_chain: &DelayChain,
        d_chain: &DelayChain,
    ) -> Result<(), SimError> {
        if self.x0.len() != dynamics.plant.n {
            return Err(SimError::StateShape {
                got: self.x0.len(),
                want: dynamics.plant.n,
            });
        }
        let window = dynamics.layout.window();
        if self.pre_history.len() > window {
            return Err(SimError::PacketCount {
                got: self.pre_history.len(),
                window,
            });
        }
        for (index, p) in self.pre_history.iter().enumerate() {
            if p.len() != dynamics.layout.m_tilde {
                return Err(SimError::PacketShape {
                    index,
                    got: p.len(),
                    want: dynamics.layout.m_tilde,
                });
            }
        }
        let r_ok = (r_chain.lo()..=r_chain.hi()).contains(&self.r0);
        let d_ok = (d_chain.lo()..=d_chain.hi()).contains(&self.d_init);
        if !r_ok || !d_ok {
            return Err(SimError::ModeRange {
                r0: self.r0,
                d_init: self.d_init,
            });
        }
        Ok(())
    }

    /// Pre-history padded with zero packets to the full window depth.
    pub fn padded_pre_history(&self, dynamics: &ExtendedDynamics) -> Vec<DVector<f64>> {
        let mut out = self.pre_history.clone();
        out.resize(
            dynamics.layout.window(),
            DVector::zeros(dynamics.layout.m_tilde),
        );
        out
    }
}

/// One realization of both delay chains.
///
/// `d_seq[t - d_start]` is the actuator age at time t, for
/// t = d_start ..= N + d_hi with d_start = k0 - 1 - r0 (the age the
/// controller's first observation reports). `r_seq[k - k0]` is the sensor
/// age at k, for k = k0 ..= N.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedSequences {
    pub d_start: i64,
    pub d_seq: Vec<usize>,
    pub r_seq: Vec<usize>,
}

impl RealizedSequences {
    pub fn d_at(&self, t: i64) -> usize {
        self.d_seq[(t - self.d_start) as usize]
    }

    pub fn r_at(&self, k: i64, k0: i64) -> usize {
        self.r_seq[(k - k0) as usize]
    }
}

/// Draws both chains for one episode. The d-chain is drawn first in full,
/// then the r-chain, so a given rng state always yields the same realization.
pub fn sample_sequences(
    r_chain: &DelayChain,
    d_chain: &DelayChain,
    init: &EpisodeInit,
    k0: i64,
    n_end: i64,
    rng: &mut ChaCha8Rng,
) -> RealizedSequences {
    let d_start = k0 - 1 - init.r0 as i64;
    let d_last = n_end + d_chain.hi() as i64;
    let mut d_seq = vec![init.d_init];
    for _ in d_start..d_last {
        let next = d_chain
            .sample_next(*d_seq.last().unwrap(), rng)
            .expect("chain value in range");
        d_seq.push(next);
    }
    let mut r_seq = vec![init.r0];
    for _ in k0..n_end {
        let next = r_chain
            .sample_next(*r_seq.last().unwrap(), rng)
            .expect("chain value in range");
        r_seq.push(next);
    }
    RealizedSequences {
        d_start,
        d_seq,
        r_seq,
    }
}

/// Full record of one episode.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub k0: i64,
    pub n_end: i64,
    /// Time of `x[0]`; equals k0 - r0.
    pub s_start: i64,
    pub seqs: RealizedSequences,
    /// Plant states x_t for t = s_start ..= N + 1.
    pub x: Vec<DVector<f64>>,
    /// Applied inputs u_t for t = s_start ..= N.
    pub u: Vec<DVector<f64>>,
    /// Packets sent by the controller, k = k0 ..= N.
    pub packets: Vec<DVector<f64>>,
    /// Extended states the controller formed, k = k0 ..= N.
    pub x_hat: Vec<DVector<f64>>,
    /// Send-time cost: stage state cost plus every eventually-applied
    /// packet component, plus the terminal cost.
    pub j: f64,
    /// Apply-time cost: stage state cost plus the applied input, plus the
    /// terminal cost.
    pub j_tilde: f64,
    pub terminal: f64,
    /// Input cost shared by both functionals.
    pub u_common: f64,
    /// Applied in-window but sent before k0 (counted only by `j_tilde`).
    pub u_inherited: f64,
    /// Charged in-window but applied after N (counted only by `j`).
    pub u_tail: f64,
}

/// Deterministically replays one episode against fixed delay realizations.
pub fn replay(
    schedule: &GainSchedule,
    dynamics: &ExtendedDynamics,
    cost: &CostSpec,
    init: &EpisodeInit,
    seqs: &RealizedSequences,
) -> Result<SimTrace, SimError> {
    let layout = &dynamics.layout;
    if schedule.ext_dim != dynamics.ext_dim() || schedule.m_tilde != layout.m_tilde {
        return Err(SimError::ScheduleShape {
            what: format!(
                "schedule built for ext_dim={}, m~={}, problem has ext_dim={}, m~={}",
                schedule.ext_dim,
                schedule.m_tilde,
                dynamics.ext_dim(),
                layout.m_tilde
            ),
        });
    }
    let (k0, n_end) = (cost.k0, cost.n_end);
    if schedule.k0 != k0 || schedule.n_end != n_end {
        return Err(SimError::ScheduleShape {
            what: format!(
                "schedule covers k={}..={}, problem needs {}..={}",
                schedule.k0, schedule.n_end, k0, n_end
            ),
        });
    }
    let s_start = k0 - init.r0 as i64;
    let window = layout.window();
    let pre = init.padded_pre_history(dynamics);
    let mut packets: Vec<DVector<f64>> = Vec::with_capacity(cost.steps());

    // packet sent at time t; pre-history before k0, controller output after
    let packet_at = |packets: &Vec<DVector<f64>>, t: i64| -> DVector<f64> {
        if t >= k0 {
            packets[(t - k0) as usize].clone()
        } else {
            let back = (k0 - 1 - t) as usize;
            if back < pre.len() {
                pre[back].clone()
            } else {
                DVector::zeros(layout.m_tilde)
            }
        }
    };
    let applied_input = |packets: &Vec<DVector<f64>>, t: i64| -> DVector<f64> {
        let age = seqs.d_at(t);
        layout.component(&packet_at(packets, t - age as i64), age)
    };

    let mut x = vec![init.x0.clone()];
    let mut u = Vec::new();
    let mut x_hat_log = Vec::new();
    // roll the plant up to k0 using inherited packets only
    for t in s_start..k0 {
        let u_t = applied_input(&packets, t);
        let x_next = &dynamics.plant.a * x.last().unwrap() + &dynamics.plant.b * &u_t;
        u.push(u_t);
        x.push(x_next);
    }

    let (mut u_common, mut u_inherited, mut u_tail) = (0.0, 0.0, 0.0);
    let mut state_cost = 0.0;
    for k in k0..=n_end {
        let r_k = seqs.r_at(k, k0);
        let x_tilde = &x[(k - r_k as i64 - s_start) as usize];
        let d_tilde = seqs.d_at(k - 1 - r_k as i64);
        let recent: Vec<DVector<f64>> = (1..=window).map(|p| packet_at(&packets, k - p as i64)).collect();
        let u_hat = layout.stack_history(&recent);
        let mut x_hat = DVector::zeros(dynamics.ext_dim());
        x_hat.rows_mut(0, dynamics.plant.n).copy_from(x_tilde);
        x_hat
            .rows_mut(dynamics.plant.n, layout.m_hat)
            .copy_from(&u_hat);
        let gain = schedule.gain_at(k, r_k, d_tilde).ok_or(SimError::ScheduleGap {
            k,
            r: r_k,
            d: d_tilde,
        })?;
        let packet = -(gain * &x_hat);
        if packet.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { k });
        }
        packets.push(packet);
        x_hat_log.push(x_hat);

        // apply, step, and charge costs
        let u_k = applied_input(&packets, k);
        let x_k = &x[(k - s_start) as usize];
        state_cost += (x_k.transpose() * &cost.q * x_k)[0];
        let applied_cost = (u_k.transpose() * &cost.r * &u_k)[0];
        if k - (seqs.d_at(k) as i64) < k0 {
            u_inherited += applied_cost;
        } else {
            u_common += applied_cost;
        }
        // send-time charges for the packet just sent
        for p in layout.d_lo..=layout.d_hi {
            if seqs.d_at(k + p as i64) == p {
                let comp = layout.component(packets.last().unwrap(), p);
                let c = (comp.transpose() * &cost.r * &comp)[0];
                if k + (p as i64) > n_end {
                    u_tail += c;
                }
                // in-window send charges equal in-window apply charges of
                // post-k0 packets, so u_common already covers them
            }
        }
        let x_next = &dynamics.plant.a * x_k + &dynamics.plant.b * &u_k;
        u.push(u_k);
        x.push(x_next);
    }

    let x_final = x.last().unwrap();
    let terminal = (x_final.transpose() * &cost.q_bar * x_final)[0];
    let j = state_cost + u_common + u_tail + terminal;
    let j_tilde = state_cost + u_common + u_inherited + terminal;
    if !j.is_finite() || !j_tilde.is_finite() {
        return Err(SimError::NonFinite { k: n_end });
    }
    Ok(SimTrace {
        k0,
        n_end,
        s_start,
        seqs: seqs.clone(),
        x,
        u,
        packets,
        x_hat: x_hat_log,
        j,
        j_tilde,
        terminal,
        u_common,
        u_inherited,
        u_tail,
    })
}

/// Samples the delay chains and replays one episode.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    schedule: &GainSchedule,
    dynamics: &ExtendedDynamics,
    r_chain: &DelayChain,
    d_chain: &DelayChain,
    cost: &CostSpec,
    init: &EpisodeInit,
    rng: &mut ChaCha8Rng,
) -> Result<SimTrace, SimError> {
    let seqs = sample_sequences(r_chain, d_chain, init, cost.k0, cost.n_end, rng);
    replay(schedule, dynamics, cost, init, &seqs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub episodes: usize,
    pub mean_j: f64,
    pub stderr_j: f64,
    pub mean_j_tilde: f64,
    pub stderr_j_tilde: f64,
    /// x^' K_{k0}(r0, d_init) x^ at the initial extended state.
    pub predicted_value: f64,
}

fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs `episodes` independent episodes from one seeded stream.
#[allow(clippy::too_many_arguments)]
pub fn run_monte_carlo(
    schedule: &GainSchedule,
    dynamics: &ExtendedDynamics,
    r_chain: &DelayChain,
    d_chain: &DelayChain,
    cost: &CostSpec,
    init: &EpisodeInit,
    episodes: usize,
    seed: u64,
) -> Result<MonteCarloSummary, SimError> {
    init.validate(dynamics, r_chain, d_chain)?;
    let mut rng = seeded(seed);
    let mut js = Vec::with_capacity(episodes);
    let mut jts = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let trace = run_episode(schedule, dynamics, r_chain, d_chain, cost, init, &mut rng)?;
        js.push(trace.j);
        jts.push(trace.j_tilde);
    }
    let (mean_j, stderr_j) = mean_stderr(&js);
    let (mean_j_tilde, stderr_j_tilde) = mean_stderr(&jts);
    Ok(MonteCarloSummary {
        episodes,
        mean_j,
        stderr_j,
        mean_j_tilde,
        stderr_j_tilde,
        predicted_value: initial_value(schedule, dynamics, init)?,
    })
}

/// Predicted cost-to-go of the initial condition under the schedule.
pub fn initial_value(
    schedule: &GainSchedule,
    dynamics: &ExtendedDynamics,
    init: &EpisodeInit,
) -> Result<f64, SimError> {
    let layout = &dynamics.layout;
    let pre = init.padded_pre_history(dynamics);
    let u_hat = layout.stack_history(&pre);
    let mut x_hat = DVector::zeros(dynamics.ext_dim());
    x_hat.rows_mut(0, dynamics.plant.n).copy_from(&init.x0);
    x_hat.rows_mut(dynamics.plant.n, layout.m_hat).copy_from(&u_hat);
    let k_mat = schedule
        .value_at(schedule.k0, init.r0, init.d_init)
        .ok_or(SimError::ScheduleGap {
            k: schedule.k0,
            r: init.r0,
            d: init.d_init,
        })?;
    Ok((x_hat.transpose() * k_mat * &x_hat)[0])
}

/// Writes one CSV row per time step: plant state, applied input, and the
/// realized ages (blank before the first controller step / after N).
pub fn write_trace_csv(trace: &SimTrace, w: &mut impl Write) -> io::Result<()> {
    let n = trace.x[0].len();
    let m = trace.u.first().map_or(0, |u| u.len());
    let mut header = vec!["k".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.push("r".to_string());
    header.push("d".to_string());
    writeln!(w, "{}", header.join(","))?;
    for (idx, x_t) in trace.x.iter().enumerate() {
        let t = trace.s_start + idx as i64;
        let mut row = vec![t.to_string()];
        row.extend(x_t.iter().map(|v| format!("{v:.17e}")));
        if idx < trace.u.len() {
            row.extend(trace.u[idx].iter().map(|v| format!("{v:.17e}")));
        } else {
            row.extend(vec![String::new(); m]);
        }
        if t >= trace.k0 && t <= trace.n_end {
            row.push(trace.seqs.r_at(t, trace.k0).to_string());
        } else {
            row.push(String::new());
        }
        if t >= trace.seqs.d_start && t <= trace.n_end {
            row.push(trace.seqs.d_at(t).to_string());
        } else {
            row.push(String::new());
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
