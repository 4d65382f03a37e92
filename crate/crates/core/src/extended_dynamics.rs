//! Mode-dependent matrices for the extended state (delayed plant state
//! stacked with the packet history), extended-state stepping, and
//! reconstruction of the true plant state and applied inputs.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::packet_layout::{PacketLayout, SelectorSet};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("plant shapes inconsistent: A is {a_rows}x{a_cols}, B is {b_rows}x{b_cols}")]
    PlantShape {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error("plant matrices contain non-finite entries")]
    NonFinite,
    #[error("impossible sensor-age transition r_next={r_next} > r+1={r}+1")]
    Mode { r: usize, r_next: usize },
    #[error("delay window too short: need d_{{k-i}} for i \u{2264} {need}, got {got} values")]
    Window { need: usize, got: usize },
    #[error("input index i={i} outside 0..={r_hi}")]
    Index { i: usize, r_hi: usize },
}

/// The LTI plant x_{k+1} = A x_k + B u_k, with cached powers of A.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
    a_pow: Vec<DMatrix<f64>>,
}

impl PlantModel {
    /// `max_pow` must cover every exponent the mode matrices need (r_hi + 1).
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, max_pow: usize) -> Result<Self, DynamicsError> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || b.ncols() == 0 {
            return Err(DynamicsError::PlantShape {
                a_rows: a.nrows(),
                a_cols: a.ncols(),
                b_rows: b.nrows(),
                b_cols: b.ncols(),
            });
        }
        if a.iter().chain(b.iter()).any(|e| !e.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        let m = b.ncols();
        let mut a_pow = vec![DMatrix::identity(n, n)];
        for _ in 0..max_pow {
            a_pow.push(a_pow.last().unwrap() * &a);
        }
        Ok(PlantModel { a, b, n, m, a_pow })
    }

    /// A^i, precomputed.
    pub fn a_pow(&self, i: usize) -> &DMatrix<f64> {
        &self.a_pow[i]
    }
}

/// Extended state x^_k = [x~_k; u^_k].
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    pub x_tilde: DVector<f64>,
    pub u_hat: DVector<f64>,
}

impl ExtendedState {
    pub fn as_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.x_tilde.len() + self.u_hat.len());
        v.rows_mut(0, self.x_tilde.len()).copy_from(&self.x_tilde);
        v.rows_mut(self.x_tilde.len(), self.u_hat.len())
            .copy_from(&self.u_hat);
        v
    }

    pub fn from_vector(v: &DVector<f64>, n: usize) -> Self {
        ExtendedState {
            x_tilde: v.rows(0, n).into_owned(),
            u_hat: v.rows(n, v.len() - n).into_owned(),
        }
    }
}

/// Builder for the mode-dependent extended-state matrices and the maps
/// derived from them. Pure over immutable inputs.
#[derive(Debug, Clone)]
pub struct ExtendedDynamics {
    pub plant: PlantModel,
    pub layout: PacketLayout,
    pub selectors: SelectorSet,
}

impl ExtendedDynamics {
    pub fn new(plant: PlantModel, layout: PacketLayout) -> Self {
        let selectors = SelectorSet::new(&layout);
        ExtendedDynamics {
            plant,
            layout,
            selectors,
        }
    }

    pub fn ext_dim(&self) -> usize {
        self.plant.n + self.layout.m_hat
    }

    /// A~(r, r_next): block-diagonal of A^{1+r-r_next} and the history shift.
    pub fn a_tilde(&self, r: usize, r_next: usize) -> Result<DMatrix<f64>, DynamicsError> {
        if r_next > r + 1 {
            return Err(DynamicsError::Mode { r, r_next });
        }
        let n = self.plant.n;
        let m_hat = self.layout.m_hat;
        let mut out = DMatrix::zeros(n + m_hat, n + m_hat);
        out.view_mut((0, 0), (n, n))
            .copy_from(self.plant.a_pow(1 + r - r_next));
        out.view_mut((n, n), (m_hat, m_hat))
            .copy_from(self.selectors.shift_full());
        Ok(out)
    }

    /// A-bar_i(r_next, d): upper-right block A^{i-r_next} B I^_i(d).
    pub fn a_bar(&self, i: usize, r_next: usize, d: usize) -> Result<DMatrix<f64>, DynamicsError> {
        if i < r_next || i > self.layout.r_hi {
            return Err(DynamicsError::Index {
                i,
                r_hi: self.layout.r_hi,
            });
        }
        let n = self.plant.n;
        let m_hat = self.layout.m_hat;
        let mut out = DMatrix::zeros(n + m_hat, n + m_hat);
        let block = self.plant.a_pow(i - r_next) * &self.plant.b * self.selectors.pick_hat(i, d);
        out.view_mut((0, n), (n, m_hat)).copy_from(&block);
        Ok(out)
    }

    /// B~(r_next, d): the fresh packet's effect; its upper block is non-zero
    /// only in the mode where the packet is both received and applied now.
    pub fn b_tilde(&self, r_next: usize, d: usize) -> DMatrix<f64> {
        let n = self.plant.n;
        let m_hat = self.layout.m_hat;
        let m_tilde = self.layout.m_tilde;
        let mut out = DMatrix::zeros(n + m_hat, m_tilde);
        if r_next == 0 {
            let upper = &self.plant.b * self.selectors.pick_now(d);
            out.view_mut((0, 0), (n, m_tilde)).copy_from(&upper);
        }
        out.view_mut((n, 0), (m_hat, m_tilde))
            .copy_from(self.selectors.shift_in());
        out
    }

    /// One extended-state step under realized delays. `d_recent[i]` must hold
    /// d_{k-i} for i = 0..=r.
    pub fn step(
        &self,
        state: &ExtendedState,
        r: usize,
        r_next: usize,
        d_recent: &[usize],
        u_tilde: &DVector<f64>,
    ) -> Result<ExtendedState, DynamicsError> {
        if r_next > r + 1 {
            return Err(DynamicsError::Mode { r, r_next });
        }
        if d_recent.len() < r + 1 {
            return Err(DynamicsError::Window {
                need: r,
                got: d_recent.len(),
            });
        }
        let x = state.as_vector();
        let mut next = self.a_tilde(r, r_next)? * &x;
        for (i, &age) in d_recent.iter().enumerate().take(r + 1).skip(r_next) {
            next += self.a_bar(i, r_next, age)? * &x;
        }
        next += self.b_tilde(r_next, d_recent[0]) * u_tilde;
        Ok(ExtendedState::from_vector(&next, self.plant.n))
    }

    /// Recovers x_k = A^r x~_k + sum_{i=1..r} A^{i-1} B I^_i(d_{k-i}) u^_k.
    /// `d_recent[i]` must hold d_{k-i} for i = 1..=r (entry 0 unused).
    pub fn reconstruct_state(
        &self,
        state: &ExtendedState,
        r: usize,
        d_recent: &[usize],
    ) -> Result<DVector<f64>, DynamicsError> {
        if r > 0 && d_recent.len() < r + 1 {
            return Err(DynamicsError::Window {
                need: r,
                got: d_recent.len(),
            });
        }
        let mut x = self.plant.a_pow(r) * &state.x_tilde;
        for (i, &age) in d_recent.iter().enumerate().take(r + 1).skip(1) {
            x += self.plant.a_pow(i - 1)
                * &self.plant.b
                * self.selectors.pick_hat(i, age)
                * &state.u_hat;
        }
        Ok(x)
    }

    /// Recovers the applied input u_{k-i} from the extended state (and, for
    /// i = 0, the fresh packet).
    pub fn reconstruct_input(
        &self,
        i: usize,
        d: usize,
        u_hat: &DVector<f64>,
        u_tilde: &DVector<f64>,
    ) -> Result<DVector<f64>, DynamicsError> {
        if i > self.layout.r_hi {
            return Err(DynamicsError::Index {
                i,
                r_hi: self.layout.r_hi,
            });
        }
        let mut u = self.selectors.pick_hat(i, d) * u_hat;
        if i == 0 {
            u += self.selectors.pick_now(d) * u_tilde;
        }
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_util::{seeded, uniform_in};
    use rand_chacha::ChaCha8Rng;

    fn scalar_plant(a: f64, b: f64, max_pow: usize) -> PlantModel {
        PlantModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            max_pow,
        )
        .unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
        DVector::from_iterator(len, (0..len).map(|_| uniform_in(rng, -2.0, 2.0)))
    }

    #[test]
    fn degenerate_mode_matches_plain_plant() {
        // d:[0,0], r:[0,0]: m_hat = 0, the step is Eq-(1) with u = u~^{(0)}
        let plant = scalar_plant(0.7, 2.0, 1);
        let layout = PacketLayout::new(1, 0, 0, 0, 0).unwrap();
        let dynamics = ExtendedDynamics::new(plant, layout);
        let a_tilde = dynamics.a_tilde(0, 0).unwrap();
        assert_eq!(a_tilde, DMatrix::from_element(1, 1, 0.7));
        let b_tilde = dynamics.b_tilde(0, 0);
        assert_eq!(b_tilde, DMatrix::from_element(1, 1, 2.0));
        let state = ExtendedState {
            x_tilde: DVector::from_element(1, 3.0),
            u_hat: DVector::zeros(0),
        };
        let next = dynamics
            .step(&state, 0, 0, &[0], &DVector::from_element(1, 0.5))
            .unwrap();
        assert!((next.x_tilde[0] - (0.7 * 3.0 + 2.0 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn b_tilde_upper_block_zero_when_packet_still_in_flight() {
        let plant = scalar_plant(0.9, 1.0, 2);
        let layout = PacketLayout::new(1, 0, 1, 0, 1).unwrap();
        let dynamics = ExtendedDynamics::new(plant, layout.clone());
        for d in 0..=1 {
            let bt = dynamics.b_tilde(1, d);
            assert_eq!(
                bt.view((0, 0), (1, layout.m_tilde)).into_owned(),
                DMatrix::zeros(1, layout.m_tilde)
            );
        }
        // and for d >= 1 even with immediate reception
        let bt = dynamics.b_tilde(0, 1);
        assert_eq!(
            bt.view((0, 0), (1, layout.m_tilde)).into_owned(),
            DMatrix::zeros(1, layout.m_tilde)
        );
    }

    #[test]
    fn a_tilde_exponent_covers_catch_up() {
        let plant = scalar_plant(0.5, 1.0, 2);
        let layout = PacketLayout::new(1, 0, 0, 0, 1).unwrap();
        let dynamics = ExtendedDynamics::new(plant, layout);
        // r=1 -> r_next=0 advances the delayed state by two plant steps
        let at = dynamics.a_tilde(1, 0).unwrap();
        assert!((at[(0, 0)] - 0.25).abs() < 1e-15);
        assert!(matches!(
            dynamics.a_tilde(0, 2),
            Err(DynamicsError::Mode { .. })
        ));
    }

    #[test]
    fn zero_state_zero_packet_stays_zero() {
        let plant = scalar_plant(1.1, 0.3, 3);
        let layout = PacketLayout::new(1, 0, 1, 0, 2).unwrap();
        let dynamics = ExtendedDynamics::new(plant, layout.clone());
        let state = ExtendedState {
            x_tilde: DVector::zeros(1),
            u_hat: DVector::zeros(layout.m_hat),
        };
        let next = dynamics
            .step(&state, 1, 1, &[0, 1], &DVector::zeros(layout.m_tilde))
            .unwrap();
        assert_eq!(next.x_tilde, DVector::zeros(1));
        assert_eq!(next.u_hat, DVector::zeros(layout.m_hat));
    }

    #[test]
    fn reconstruct_state_trivial_cases() {
        let plant = scalar_plant(0.8, 1.5, 2);
        let layout = PacketLayout::new(1, 0, 1, 0, 1).unwrap();
        let dynamics = ExtendedDynamics::new(plant, layout.clone());
        let mut rng = seeded(3);
        let state = ExtendedState {
            x_tilde: rand_vec(&mut rng, 1),
            u_hat: DVector::zeros(layout.m_hat),
        };
        // r=0: empty sum
        assert_eq!(
            dynamics.reconstruct_state(&state, 0, &[]).unwrap(),
            state.x_tilde
        );
        // r=1, zero history: A * x~
        let got = dynamics.reconstruct_state(&state, 1, &[0, 0]).unwrap();
        assert!((got[0] - 0.8 * state.x_tilde[0]).abs() < 1e-15);
    }

    #[test]
    fn reconstruct_input_cases() {
        let layout = PacketLayout::new(1, 0, 1, 0, 1).unwrap();
        let plant = scalar_plant(1.0, 1.0, 2);
        let dynamics = ExtendedDynamics::new(plant, layout.clone());
        let mut rng = seeded(4);
        let log: Vec<DVector<f64>> = (0..layout.window())
            .map(|_| rand_vec(&mut rng, layout.m_tilde))
            .collect();
        let u_hat = layout.stack_history(&log);
        let fresh = rand_vec(&mut rng, layout.m_tilde);
        // i=0, d=0: the delay-0 component of the fresh packet
        let u = dynamics.reconstruct_input(0, 0, &u_hat, &fresh).unwrap();
        assert_eq!(u, layout.component(&fresh, 0));
        // i=0, d=1: a block of u^, independent of the fresh packet
        let u = dynamics.reconstruct_input(0, 1, &u_hat, &fresh).unwrap();
        assert_eq!(u, layout.component(&log[0], 1));
        let u2 = dynamics
            .reconstruct_input(0, 1, &u_hat, &DVector::zeros(layout.m_tilde))
            .unwrap();
        assert_eq!(u, u2);
        // i=1: equals the logged packet component
        for (d, pkt) in log.iter().enumerate() {
            let u = dynamics.reconstruct_input(1, d, &u_hat, &fresh).unwrap();
            assert_eq!(u, layout.component(pkt, d), "d={d}");
        }
    }

    #[test]
    fn mode_matrices_are_pure() {
        let plant = scalar_plant(0.9, 1.2, 3);
        let layout = PacketLayout::new(1, 0, 1, 0, 2).unwrap();
        let dynamics = ExtendedDynamics::new(plant, layout);
        assert_eq!(
            dynamics.a_tilde(2, 1).unwrap(),
            dynamics.a_tilde(2, 1).unwrap()
        );
        assert_eq!(
            dynamics.a_bar(1, 0, 1).unwrap(),
            dynamics.a_bar(1, 0, 1).unwrap()
        );
        assert_eq!(dynamics.b_tilde(0, 0), dynamics.b_tilde(0, 0));
    }
}
