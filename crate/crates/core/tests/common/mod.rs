//! Shared instance generators for integration tests.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;

use ncs_lqr::rng_util::uniform_in;
use ncs_lqr::{
    CostSpec, DelayChain, EpisodeInit, ExtendedDynamics, GainSchedule, PacketLayout, PlantModel,
    Synthesizer,
};

pub struct TestInstance {
    pub dynamics: ExtendedDynamics,
    pub r_chain: DelayChain,
    pub d_chain: DelayChain,
    pub cost: CostSpec,
    pub init: EpisodeInit,
}

impl TestInstance {
    pub fn synthesizer(&self) -> Synthesizer<'_> {
        Synthesizer {
            dynamics: &self.dynamics,
            r_chain: &self.r_chain,
            d_chain: &self.d_chain,
            cost: &self.cost,
        }
    }

    pub fn synthesize(&self) -> GainSchedule {
        self.synthesizer()
            .synthesize("")
            .expect("synthesis succeeds on generated instances")
            .schedule
    }
}

/// Random one-step matrix respecting the reachability rule (a value can rise
/// by at most one per step) with every allowed entry positive.
pub fn random_chain(lo: usize, hi: usize, rng: &mut ChaCha8Rng) -> DelayChain {
    let size = hi - lo + 1;
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
    DelayChain::new(lo, hi, DMatrix::from_row_slice(size, size, &rows)).unwrap()
}

pub fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| uniform_in(rng, -0.5, 0.5));
    &g * g.transpose() + DMatrix::identity(n, n) * uniform_in(rng, 0.2, 1.0)
}

/// Random enumerable instance: n <= 2, m = 1, both delays in {0, 1},
/// horizon of four steps, random mixing chains and initial data.
pub fn random_tiny(rng: &mut ChaCha8Rng) -> TestInstance {
    let n = 1 + (rng.next_u64() % 2) as usize;
    let a = DMatrix::from_fn(n, n, |_, _| uniform_in(rng, -1.0, 1.2));
    let b = DMatrix::from_fn(n, 1, |_, _| uniform_in(rng, 0.4, 1.5));
    let plant = PlantModel::new(a, b, 2).unwrap();
    let layout = PacketLayout::new(1, 0, 1, 0, 1).unwrap();
    let r_chain = random_chain(0, 1, rng);
    let d_chain = random_chain(0, 1, rng);
    let cost = CostSpec::new(
        random_psd(n, rng),
        random_psd(n, rng),
        DMatrix::from_element(1, 1, uniform_in(rng, 0.3, 1.5)),
        0,
        3,
        n,
        1,
    )
    .unwrap();
    let init = EpisodeInit {
        x0: DVector::from_fn(n, |_, _| uniform_in(rng, -2.0, 2.0)),
        r0: (rng.next_u64() % 2) as usize,
        d_init: (rng.next_u64() % 2) as usize,
        pre_history: vec![
            DVector::from_fn(layout.m_tilde, |_, _| uniform_in(rng, -1.0, 1.0)),
            DVector::from_fn(layout.m_tilde, |_, _| uniform_in(rng, -1.0, 1.0)),
        ],
    };
    TestInstance {
        dynamics: ExtendedDynamics::new(plant, layout),
        r_chain,
        d_chain,
        cost,
        init,
    }
}

/// A fixed, well-mixing scalar instance: both chains genuinely two-state,
/// unstable plant, nonzero initial data.
pub fn mixing_instance() -> TestInstance {
    let plant = PlantModel::new(
        DMatrix::from_element(1, 1, 1.15),
        DMatrix::from_element(1, 1, 1.0),
        2,
    )
    .unwrap();
    let layout = PacketLayout::new(1, 0, 1, 0, 1).unwrap();
    let r_chain =
        DelayChain::new(0, 1, DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.5, 0.5])).unwrap();
    let d_chain =
        DelayChain::new(0, 1, DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6])).unwrap();
    let cost = CostSpec::new(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 2.0),
        DMatrix::from_element(1, 1, 0.5),
        0,
        3,
        1,
        1,
    )
    .unwrap();
    let init = EpisodeInit {
        x0: DVector::from_element(1, 1.5),
        r0: 1,
        d_init: 0,
        pre_history: vec![
            DVector::from_vec(vec![0.4, -0.3]),
            DVector::from_vec(vec![-0.1, 0.2]),
        ],
    };
    TestInstance {
        dynamics: ExtendedDynamics::new(plant, layout),
        r_chain,
        d_chain,
        cost,
        init,
    }
}
