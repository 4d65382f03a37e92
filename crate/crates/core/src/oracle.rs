//! Exhaustive verification oracles for small instances.
//!
//! Everything here is brute force on purpose: delay realizations are
//! enumerated path by path and costs are accumulated with probabilities, so
//! the results are independent of the kernel algebra and the recursion. The
//! schedule and simulator are checked against these numbers.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::delay_model::DelayChain;
use crate::extended_dynamics::ExtendedDynamics;
use crate::simulation::{replay, EpisodeInit, RealizedSequences, SimError};
use crate::synthesis::{CostSpec, GainSchedule, ModeTable, SynthesisError, Synthesizer};

/// Hard ceiling on the number of joint delay realizations an exhaustive
/// check may visit.
pub const MAX_PATHS: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large for exhaustive checks: {what}")]
    NotTiny { what: String },
    #[error("joint path count {paths} exceeds the {MAX_PATHS} cap")]
    Blowup { paths: u128 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dynamics(#[from] crate::extended_dynamics::DynamicsError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

/// Size guard for exhaustive enumeration.
pub fn check_tiny(
    dynamics: &ExtendedDynamics,
    r_chain: &DelayChain,
    d_chain: &DelayChain,
    cost: &CostSpec,
) -> Result<(), OracleError> {
    let reject = |what: String| Err(OracleError::NotTiny { what });
    if dynamics.plant.n > 2 {
        return reject(format!("n={} > 2", dynamics.plant.n));
    }
    if dynamics.plant.m != 1 {
        return reject(format!("m={} != 1", dynamics.plant.m));
    }
    if r_chain.hi() > 1 || d_chain.hi() > 1 {
        return reject(format!(
            "delay bounds r_hi={}, d_hi={} exceed 1",
            r_chain.hi(),
            d_chain.hi()
        ));
    }
    if cost.n_end - cost.k0 > 3 {
        return reject(format!("horizon N-k0={} > 3", cost.n_end - cost.k0));
    }
    Ok(())
}

/// All positive-probability value paths of a chain: `steps` transitions from
/// `start`, returned as (values, probability) with values.len() == steps + 1.
fn chain_paths(chain: &DelayChain, start: usize, steps: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(vec![start], 1.0f64)];
    while let Some((path, prob)) = stack.pop() {
        if path.len() == steps + 1 {
            out.push((path, prob));
            continue;
        }
        let last = *path.last().unwrap();
        for next in chain.lo()..=chain.hi() {
            let p = chain.prob(last, next, 1);
            if p > 0.0 {
                let mut longer = path.clone();
                longer.push(next);
                stack.push((longer, prob * p));
            }
        }
    }
    out
}

fn joint_path_budget(
    r_chain: &DelayChain,
    d_chain: &DelayChain,
    r_steps: usize,
    d_steps: usize,
) -> Result<(), OracleError> {
    let paths = (r_chain.len() as u128).pow(r_steps as u32)
        * (d_chain.len() as u128).pow(d_steps as u32);
    if paths > MAX_PATHS {
        return Err(OracleError::Blowup { paths });
    }
    Ok(())
}

/// Visits every joint (r-path, d-path) realization with its probability.
fn for_each_realization<F>(
    r_chain: &DelayChain,
    d_chain: &DelayChain,
    cost: &CostSpec,
    init: &EpisodeInit,
    mut visit: F,
) -> Result<(), OracleError>
where
    F: FnMut(&RealizedSequences, f64) -> Result<(), OracleError>,
{
    let d_start = cost.k0 - 1 - init.r0 as i64;
    let d_steps = (cost.n_end + d_chain.hi() as i64 - d_start) as usize;
    let r_steps = (cost.n_end - cost.k0) as usize;
    joint_path_budget(r_chain, d_chain, r_steps, d_steps)?;
    let d_paths = chain_paths(d_chain, init.d_init, d_steps);
    let r_paths = chain_paths(r_chain, init.r0, r_steps);
    for (d_seq, d_prob) in &d_paths {
        for (r_seq, r_prob) in &r_paths {
            let seqs = RealizedSequences {
                d_start,
                d_seq: d_seq.clone(),
                r_seq: r_seq.clone(),
            };
            visit(&seqs, d_prob * r_prob)?;
        }
    }
    Ok(())
}

/// Expected costs of a schedule, by exhaustive enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCosts {
    pub expected_j: f64,
    pub expected_j_tilde: f64,
    /// Sanity check; must equal 1 up to rounding.
    pub total_probability: f64,
}

pub fn enumerate_expected_cost(
    schedule: &GainSchedule,
    dynamics: &ExtendedDynamics,
    r_chain: &DelayChain,
    d_chain: &DelayChain,
    cost: &CostSpec,
    init: &EpisodeInit,
) -> Result<ExpectedCosts, OracleError> {
    check_tiny(dynamics, r_chain, d_chain, cost)?;
    let mut acc = ExpectedCosts {
        expected_j: 0.0,
        expected_j_tilde: 0.0,
        total_probability: 0.0,
    };
    for_each_realization(r_chain, d_chain, cost, init, |seqs, prob| {
        let trace = replay(schedule, dynamics, cost, init, seqs)?;
        acc.expected_j += prob * trace.j;
        acc.expected_j_tilde += prob * trace.j_tilde;
        acc.total_probability += prob;
        Ok(())
    })?;
    Ok(acc)
}

/// Split of the input cost shared by (`common`) and exclusive to each of the
/// two functionals: `inherited` is only in the apply-time cost, `tail` only
/// in the send-time cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostDecomposition {
    pub common: f64,
    pub inherited: f64,
    pub tail: f64,
}

/// Verifies j~ = j + inherited - tail on every realization; returns the
/// worst absolute deviation (relative to the cost magnitude).
pub fn check_cost_identity(
    schedule: &GainSchedule,
    dynamics: &ExtendedDynamics,
    r_chain: &DelayChain,
    d_chain: &DelayChain,
    cost: &CostSpec,
    init: &EpisodeInit,
) -> Result<f64, OracleError> {
    check_tiny(dynamics, r_chain, d_chain, cost)?;
    let mut worst = 0.0f64;
    for_each_realization(r_chain, d_chain, cost, init, |seqs, _| {
        let trace = replay(schedule, dynamics, cost, init, seqs)?;
        let dec = CostDecomposition {
            common: trace.u_common,
            inherited: trace.u_inherited,
            tail: trace.u_tail,
        };
        let lhs = trace.j_tilde;
        let rhs = trace.j + dec.inherited - dec.tail;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        Ok(())
    })?;
    Ok(worst)
}

/// Minimal expected send-time cost over a single non-adaptive packet plan
/// (all packets chosen up front), by propagating the plant state affinely in
/// the stacked plan and minimizing the resulting expected quadratic with a
/// pseudo-inverse (least-norm plan when flat directions exist).
pub fn joint_open_loop_min(
    dynamics: &ExtendedDynamics,
    r_chain: &DelayChain,
    d_chain: &DelayChain,
    cost: &CostSpec,
    init: &EpisodeInit,
) -> Result<f64, OracleError> {
    check_tiny(dynamics, r_chain, d_chain, cost)?;
    let layout = &dynamics.layout;
    let (n, m, m_tilde) = (dynamics.plant.n, dynamics.plant.m, layout.m_tilde);
    let steps = cost.steps();
    let z_dim = steps * m_tilde;
    let cols = z_dim + 1; // homogeneous coordinate for constants
    let (k0, n_end) = (cost.k0, cost.n_end);
    let s_start = k0 - init.r0 as i64;
    let pre = init.padded_pre_history(dynamics);

    // row block of [z; 1] holding the component-d slice of the packet sent
    // at time t (constant from pre-history when t < k0)
    let input_rows = |t: i64, d: usize| -> DMatrix<f64> {
        let mut rows = DMatrix::zeros(m, cols);
        if t >= k0 {
            let base = (t - k0) as usize * m_tilde + layout.component_offset(d);
            for i in 0..m {
                rows[(i, base + i)] = 1.0;
            }
        } else {
            let back = (k0 - 1 - t) as usize;
            if back < pre.len() {
                let comp = layout.component(&pre[back], d);
                for i in 0..m {
                    rows[(i, z_dim)] = comp[i];
                }
                debug_assert_eq!(comp.len(), m);
            }
        }
        rows
    };

    let mut expected = DMatrix::zeros(cols, cols);
    for_each_realization(r_chain, d_chain, cost, init, |seqs, prob| {
        // x_t = coef * [z; 1]
        let mut coef = DMatrix::zeros(n, cols);
        coef.view_mut((0, z_dim), (n, 1)).copy_from(&init.x0);
        let mut quad = DMatrix::zeros(cols, cols);
        for t in s_start..=n_end {
            if t >= k0 {
                quad += coef.transpose() * &cost.q * &coef;
                for p in layout.d_lo..=layout.d_hi {
                    if seqs.d_at(t + p as i64) == p {
                        let rows = input_rows(t, p);
                        quad += rows.transpose() * &cost.r * rows;
                    }
                }
            }
            let u_rows = input_rows(t - seqs.d_at(t) as i64, seqs.d_at(t));
            coef = &dynamics.plant.a * coef + &dynamics.plant.b * u_rows;
        }
        quad += coef.transpose() * &cost.q_bar * &coef;
        expected += quad * prob;
        Ok(())
    })?;

    let g_mat = expected.view((0, 0), (z_dim, z_dim)).into_owned();
    let g_vec = expected.view((0, z_dim), (z_dim, 1)).into_owned();
    let c = expected[(z_dim, z_dim)];
    // least-norm minimizer via eigen pseudo-inverse
    let eig = g_mat.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut inv_vals = eig.eigenvalues.clone();
    for v in inv_vals.iter_mut() {
        *v = if v.abs() > 1e-12 * scale { 1.0 / *v } else { 0.0 };
    }
    let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let z_star = -(&pinv * &g_vec);
    Ok(c + 2.0 * (g_vec.transpose() * &z_star)[(0, 0)]
        + (z_star.transpose() * g_mat * z_star)[(0, 0)])
}

/// Brute-force counterparts of the three expectation kernels, evaluated at a
/// fixed extended state and packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelDeviations {
    /// Send-time packet charge vs u~' R^ u~.
    pub packet_charge: f64,
    /// Current stage state cost vs x^' Q^ x^.
    pub state_cost: f64,
    /// Next-step value vs x^' H^ x^ + 2 u~' M^ x^ + u~' O^ u~.
    pub next_value: f64,
}

/// Enumerates the conditional expectations behind the kernels at mode
/// (r, d~) and compares them to the quadratic forms; returns relative
/// deviations.
#[allow(clippy::too_many_arguments)]
pub fn check_kernel_expectations(
    dynamics: &ExtendedDynamics,
    r_chain: &DelayChain,
    d_chain: &DelayChain,
    cost: &CostSpec,
    k_next: &ModeTable,
    r: usize,
    d_t: usize,
    x_hat: &DVector<f64>,
    u_tilde: &DVector<f64>,
) -> Result<KernelDeviations, OracleError> {
    check_tiny(dynamics, r_chain, d_chain, cost)?;
    let layout = &dynamics.layout;
    let syn = Synthesizer {
        dynamics,
        r_chain,
        d_chain,
        cost,
    };
    let n = dynamics.plant.n;
    let state = crate::extended_dynamics::ExtendedState::from_vector(x_hat, n);

    // ages from the conditioning time k-1-r through k+d_hi; path[i] is the
    // age at time k-1-r+i
    let horizon = 1 + r + d_chain.hi();
    let paths = chain_paths(d_chain, d_t, horizon);
    let age_at = |path: &[usize], t_rel: i64| -> usize {
        // t_rel is relative to k; conditioning time is -1-r
        path[(t_rel + 1 + r as i64) as usize]
    };

    let (mut e1, mut e2, mut e3) = (0.0f64, 0.0f64, 0.0f64);
    for (path, prob) in &paths {
        // packet components charged when the matching age realizes
        let mut charge = 0.0;
        for p in layout.d_lo..=layout.d_hi {
            if age_at(path, p as i64) == p {
                let comp = layout.component(u_tilde, p);
                charge += (comp.transpose() * &cost.r * &comp)[0];
            }
        }
        e1 += prob * charge;

        // current plant state rebuilt from the realized recent ages
        let d_recent: Vec<usize> = (0..=r).map(|i| age_at(path, -(i as i64))).collect();
        let x_k = dynamics.reconstruct_state(&state, r, &d_recent)?;
        e2 += prob * (x_k.transpose() * &cost.q * &x_k)[0];

        // next-step value, over the next sensor age too
        for rho in r_chain.lo()..=r_chain.hi() {
            let psi = r_chain.prob(r, rho, 1);
            if psi == 0.0 {
                continue;
            }
            let next = dynamics.step(&state, r, rho, &d_recent, u_tilde)?.as_vector();
            let d_next_report = age_at(path, -(rho as i64));
            let k_mat = &k_next[rho - r_chain.lo()][d_next_report - d_chain.lo()];
            e3 += prob * psi * (next.transpose() * k_mat * &next)[0];
        }
    }

    let r_hat = syn.build_r_hat(r, d_t)?;
    let q_hat = syn.build_q_hat(&cost.q, r, d_t)?;
    let (o_hat, m_hat, h_hat) = syn.build_e3_kernels(k_next, r, d_t)?;
    let f1 = (u_tilde.transpose() * r_hat * u_tilde)[0];
    let f2 = (x_hat.transpose() * q_hat * x_hat)[0];
    let f3 = (x_hat.transpose() * &h_hat * x_hat)[0]
        + 2.0 * (u_tilde.transpose() * &m_hat * x_hat)[0]
        + (u_tilde.transpose() * &o_hat * u_tilde)[0];
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    Ok(KernelDeviations {
        packet_charge: rel(e1, f1),
        state_cost: rel(e2, f2),
        next_value: rel(e3, f3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extended_dynamics::PlantModel;
    use crate::packet_layout::PacketLayout;
    use crate::rng_util::{seeded, uniform_in};
    use crate::simulation::{initial_value, run_monte_carlo};
    use rand_chacha::ChaCha8Rng;

    struct Instance {
        dynamics: ExtendedDynamics,
        r_chain: DelayChain,
        d_chain: DelayChain,
        cost: CostSpec,
        init: EpisodeInit,
    }

    fn random_chain(hi: usize, rng: &mut ChaCha8Rng) -> DelayChain {
        let size = hi + 1;
        let mut rows = Vec::new();
        for a in 0..size {
            let reach = (a + 1).min(size - 1);
            let mut row = vec![0.0; size];
            let mut total = 0.0;
            for e in row.iter_mut().take(reach + 1) {
                *e = uniform_in(rng, 0.05, 1.0);
                total += *e;
            }
            for e in row.iter_mut() {
                *e /= total;
            }
            rows.extend(row);
        }
        DelayChain::new(0, hi, DMatrix::from_row_slice(size, size, &rows)).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
        let n = 1 + (rng.next_u64() % 2) as usize;
        let a = DMatrix::from_fn(n, n, |_, _| uniform_in(rng, -1.0, 1.2));
        let b = DMatrix::from_fn(n, 1, |_, _| uniform_in(rng, 0.4, 1.5));
        let plant = PlantModel::new(a, b, 2).unwrap();
        let layout = PacketLayout::new(1, 0, 1, 0, 1).unwrap();
        let r_chain = random_chain(1, rng);
        let d_chain = random_chain(1, rng);
        let mut q = DMatrix::from_fn(n, n, |_, _| uniform_in(rng, -0.4, 0.4));
        q = &q * q.transpose() + DMatrix::identity(n, n) * uniform_in(rng, 0.2, 1.0);
        let mut q_bar = DMatrix::from_fn(n, n, |_, _| uniform_in(rng, -0.4, 0.4));
        q_bar = &q_bar * q_bar.transpose() + DMatrix::identity(n, n) * uniform_in(rng, 0.2, 1.0);
        let r_w = DMatrix::from_element(1, 1, uniform_in(rng, 0.3, 1.5));
        let cost = CostSpec::new(q, q_bar, r_w, 0, 3, n, 1).unwrap();
        let r0 = (rng.next_u64() % 2) as usize;
        let d_init = (rng.next_u64() % 2) as usize;
        let init = EpisodeInit {
            x0: DVector::from_fn(n, |_, _| uniform_in(rng, -2.0, 2.0)),
            r0,
            d_init,
            pre_history: vec![
                DVector::from_fn(layout.m_tilde, |_, _| uniform_in(rng, -1.0, 1.0)),
                DVector::from_fn(layout.m_tilde, |_, _| uniform_in(rng, -1.0, 1.0)),
            ],
        };
        Instance {
            dynamics: ExtendedDynamics::new(plant, layout),
            r_chain,
            d_chain,
            cost,
            init,
        }
    }

    fn synthesize(inst: &Instance) -> GainSchedule {
        Synthesizer {
            dynamics: &inst.dynamics,
            r_chain: &inst.r_chain,
            d_chain: &inst.d_chain,
            cost: &inst.cost,
        }
        .synthesize("")
        .unwrap()
        .schedule
    }

    use rand_core::RngCore;

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = seeded(2);
        let inst = random_instance(&mut rng);
        let schedule = synthesize(&inst);
        let costs = enumerate_expected_cost(
            &schedule,
            &inst.dynamics,
            &inst.r_chain,
            &inst.d_chain,
            &inst.cost,
            &inst.init,
        )
        .unwrap();
        assert!((costs.total_probability - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_matches_dp_value() {
        let mut rng = seeded(4);
        for trial in 0..10 {
            let inst = random_instance(&mut rng);
            let schedule = synthesize(&inst);
            let costs = enumerate_expected_cost(
                &schedule,
                &inst.dynamics,
                &inst.r_chain,
                &inst.d_chain,
                &inst.cost,
                &inst.init,
            )
            .unwrap();
            let predicted = initial_value(&schedule, &inst.dynamics, &inst.init).unwrap();
            assert!(
                (costs.expected_j - predicted).abs() <= 1e-8 * predicted.abs().max(1.0),
                "trial {trial}: enumerated {} vs predicted {}",
                costs.expected_j,
                predicted
            );
        }
    }

    #[test]
    fn enumeration_matches_monte_carlo_exactly_when_chains_degenerate() {
        // deterministic chains: exactly one path, so the enumeration and a
        // single MC episode must agree to rounding
        let plant = PlantModel::new(
            DMatrix::from_element(1, 1, 1.05),
            DMatrix::from_element(1, 1, 0.9),
            2,
        )
        .unwrap();
        let layout = PacketLayout::new(1, 1, 1, 1, 1).unwrap();
        let dynamics = ExtendedDynamics::new(plant, layout.clone());
        let r_chain = DelayChain::deterministic(1);
        let d_chain = DelayChain::deterministic(1);
        let cost = CostSpec::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, 0.5),
            0,
            3,
            1,
            1,
        )
        .unwrap();
        let init = EpisodeInit {
            x0: DVector::from_element(1, 1.0),
            r0: 1,
            d_init: 1,
            pre_history: vec![DVector::from_element(layout.m_tilde, 0.2)],
        };
        let schedule = Synthesizer {
            dynamics: &dynamics,
            r_chain: &r_chain,
            d_chain: &d_chain,
            cost: &cost,
        }
        .synthesize("")
        .unwrap()
        .schedule;
        let costs =
            enumerate_expected_cost(&schedule, &dynamics, &r_chain, &d_chain, &cost, &init)
                .unwrap();
        let mc = run_monte_carlo(
            &schedule, &dynamics, &r_chain, &d_chain, &cost, &init, 4, 11,
        )
        .unwrap();
        assert!((costs.expected_j - mc.mean_j).abs() < 1e-12);
        assert_eq!(mc.stderr_j, 0.0);
    }

    #[test]
    fn cost_identity_holds_on_every_path() {
        let mut rng = seeded(6);
        for _ in 0..10 {
            let inst = random_instance(&mut rng);
            let schedule = synthesize(&inst);
            let worst = check_cost_identity(
                &schedule,
                &inst.dynamics,
                &inst.r_chain,
                &inst.d_chain,
                &inst.cost,
                &inst.init,
            )
            .unwrap();
            assert!(worst <= 1e-10, "worst deviation {worst}");
        }
    }

    #[test]
    fn dp_schedule_beats_open_loop_plan() {
        let mut rng = seeded(8);
        for trial in 0..10 {
            let inst = random_instance(&mut rng);
            let schedule = synthesize(&inst);
            let closed = enumerate_expected_cost(
                &schedule,
                &inst.dynamics,
                &inst.r_chain,
                &inst.d_chain,
                &inst.cost,
                &inst.init,
            )
            .unwrap()
            .expected_j;
            let open = joint_open_loop_min(
                &inst.dynamics,
                &inst.r_chain,
                &inst.d_chain,
                &inst.cost,
                &inst.init,
            )
            .unwrap();
            assert!(
                closed <= open + 1e-9 * open.abs().max(1.0),
                "trial {trial}: closed {closed} > open {open}"
            );
        }
    }

    #[test]
    fn open_loop_min_matches_dp_when_feedback_is_useless() {
        // deterministic chains with r = 0, d = 0: the controller sees the
        // current state, but the cost is deterministic, so the best open
        // loop plan achieves the DP value
        let plant = PlantModel::new(
            DMatrix::from_element(1, 1, 1.2),
            DMatrix::from_element(1, 1, 1.0),
            1,
        )
        .unwrap();
        let layout = PacketLayout::new(1, 0, 0, 0, 0).unwrap();
        let dynamics = ExtendedDynamics::new(plant, layout);
        let r_chain = DelayChain::deterministic(0);
        let d_chain = DelayChain::deterministic(0);
        let cost = CostSpec::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            0,
            3,
            1,
            1,
        )
        .unwrap();
        let init = EpisodeInit {
            x0: DVector::from_element(1, 2.0),
            r0: 0,
            d_init: 0,
            pre_history: vec![],
        };
        let schedule = Synthesizer {
            dynamics: &dynamics,
            r_chain: &r_chain,
            d_chain: &d_chain,
            cost: &cost,
        }
        .synthesize("")
        .unwrap()
        .schedule;
        let closed =
            enumerate_expected_cost(&schedule, &dynamics, &r_chain, &d_chain, &cost, &init)
                .unwrap()
                .expected_j;
        let open = joint_open_loop_min(&dynamics, &r_chain, &d_chain, &cost, &init).unwrap();
        assert!((closed - open).abs() <= 1e-9 * closed.abs().max(1.0));
    }

    #[test]
    fn kernel_expectations_match_enumeration() {
        let mut rng = seeded(10);
        for trial in 0..10 {
            let inst = random_instance(&mut rng);
            let schedule = synthesize(&inst);
            let x_hat = DVector::from_fn(inst.dynamics.ext_dim(), |_, _| {
                uniform_in(&mut rng, -1.5, 1.5)
            });
            let u_tilde = DVector::from_fn(inst.dynamics.layout.m_tilde, |_, _| {
                uniform_in(&mut rng, -1.5, 1.5)
            });
            // check at a mid-horizon step where the value table is non-trivial
            let k_next = &schedule.k_mats[2];
            for r in 0..=1 {
                for d_t in 0..=1 {
                    let dev = check_kernel_expectations(
                        &inst.dynamics,
                        &inst.r_chain,
                        &inst.d_chain,
                        &inst.cost,
                        k_next,
                        r,
                        d_t,
                        &x_hat,
                        &u_tilde,
                    )
                    .unwrap();
                    assert!(dev.packet_charge <= 1e-10, "trial {trial} E1 {dev:?}");
                    assert!(dev.state_cost <= 1e-10, "trial {trial} E2 {dev:?}");
                    assert!(dev.next_value <= 1e-10, "trial {trial} E3 {dev:?}");
                }
            }
        }
    }

    #[test]
    fn size_guard_rejects_long_horizons() {
        let mut rng = seeded(12);
        let mut inst = random_instance(&mut rng);
        inst.cost.n_end = inst.cost.k0 + 10;
        let schedule = synthesize(&inst);
        let err = enumerate_expected_cost(
            &schedule,
            &inst.dynamics,
            &inst.r_chain,
            &inst.d_chain,
            &inst.cost,
            &inst.init,
        )
        .unwrap_err();
        assert!(matches!(err, OracleError::NotTiny { .. }));
    }
}
