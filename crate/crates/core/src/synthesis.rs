//! Offline gain synthesis: delay-conditioned expectation kernels and the
//! backward value recursion over the (r, d~) mode pairs.
//!
//! For each step k (from N down to k0) and each mode, the kernels R^, Q^,
//! O^, M^, H^ are exact conditional expectations over the delay chains given
//! the controller's information (the sensor age r and the piggybacked
//! actuator age d~, observed at time k-1-r). Every transition-probability
//! lookup goes through [`elapsed_phi`] with explicit time stamps, so the
//! step count is always (target time - conditioning time).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::delay_model::DelayChain;
use crate::extended_dynamics::ExtendedDynamics;

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const PSD_EIG_FLOOR: f64 = -1e-10;
pub const PD_EIG_FLOOR: f64 = 1e-10;
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("{name} is not symmetric (max asymmetry {max_dev:e})")]
    NotSymmetric { name: &'static str, max_dev: f64 },
    #[error("{name} violates its eigenvalue floor: min eigenvalue {min_eig:e} < {floor:e}")]
    EigenFloor {
        name: &'static str,
        min_eig: f64,
        floor: f64,
    },
    #[error("{name} has wrong shape {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    Shape {
        name: &'static str,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("horizon empty: k0={k0} > N={n_end}")]
    Horizon { k0: i64, n_end: i64 },
    #[error("transition query with t_from={t_from} > t_to={t_to}")]
    TimeOrder { t_from: i64, t_to: i64 },
    #[error("value table missing mode (r={r}, d={d})")]
    IncompleteTable { r: usize, d: usize },
    #[error("O^+R^ numerically singular at k={k}, mode (r={r}, d={d}): condition {condition:e} (min eig {min_eig:e})")]
    Solve {
        k: i64,
        r: usize,
        d: usize,
        condition: f64,
        min_eig: f64,
    },
    #[error(transparent)]
    Chain(#[from] crate::delay_model::ChainError),
    #[error(transparent)]
    Dynamics(#[from] crate::extended_dynamics::DynamicsError),
}

/// Quadratic cost weights and the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub k0: i64,
    pub n_end: i64,
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            dev = dev.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    dev
}

/// Smallest eigenvalue of a symmetric matrix (0 for the empty matrix).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigen().eigenvalues.min()
}

fn check_weight(
    name: &'static str,
    m: &DMatrix<f64>,
    dim: usize,
    floor: f64,
) -> Result<(), SynthesisError> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(SynthesisError::Shape {
            name,
            rows: m.nrows(),
            cols: m.ncols(),
            expected_rows: dim,
            expected_cols: dim,
        });
    }
    let dev = max_asymmetry(m);
    if dev > SYMMETRY_TOL {
        return Err(SynthesisError::NotSymmetric { name, max_dev: dev });
    }
    let min_eig = min_eigenvalue(m);
    if min_eig < floor {
        return Err(SynthesisError::EigenFloor {
            name,
            min_eig,
            floor,
        });
    }
    Ok(())
}

impl CostSpec {
    pub fn new(
        q: DMatrix<f64>,
        q_bar: DMatrix<f64>,
        r: DMatrix<f64>,
        k0: i64,
        n_end: i64,
        n: usize,
        m: usize,
    ) -> Result<Self, SynthesisError> {
        check_weight("Q", &q, n, PSD_EIG_FLOOR)?;
        check_weight("Q_bar", &q_bar, n, PSD_EIG_FLOOR)?;
        check_weight("R", &r, m, PD_EIG_FLOOR)?;
        if k0 > n_end {
            return Err(SynthesisError::Horizon { k0, n_end });
        }
        Ok(CostSpec {
            q,
            q_bar,
            r,
            k0,
            n_end,
        })
    }

    /// Number of controller decision steps, N - k0 + 1.
    pub fn steps(&self) -> usize {
        (self.n_end - self.k0 + 1) as usize
    }
}

/// Probability that the d-chain moves from `from_d` at time `t_from` to
/// `to_d` at time `t_to`. The single entry point for every Phi lookup.
pub fn elapsed_phi(
    d_chain: &DelayChain,
    from_d: usize,
    to_d: usize,
    t_from: i64,
    t_to: i64,
) -> Result<f64, SynthesisError> {
    if t_from > t_to {
        return Err(SynthesisError::TimeOrder { t_from, t_to });
    }
    Ok(d_chain.prob(from_d, to_d, (t_to - t_from) as usize))
}

/// One matrix per (r, d~) mode pair, indexed [r - r_lo][d - d_lo].
pub type ModeTable = Vec<Vec<DMatrix<f64>>>;

/// (O^, M^, H^) from one evaluation of the next-step expectation.
pub type NextStepKernels = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

/// Gain and value tables over the full (k, r, d~) cube.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub problem_hash: String,
    pub n: usize,
    pub m: usize,
    pub m_tilde: usize,
    pub ext_dim: usize,
    pub k0: i64,
    pub n_end: i64,
    pub r_lo: usize,
    pub r_hi: usize,
    pub d_lo: usize,
    pub d_hi: usize,
    /// K_k(r, d~) for k = k0..=N+1 (index k - k0).
    pub k_mats: Vec<ModeTable>,
    /// L_k(r, d~) for k = k0..=N (index k - k0).
    pub l_mats: Vec<ModeTable>,
}

impl GainSchedule {
    pub fn value_at(&self, k: i64, r: usize, d: usize) -> Option<&DMatrix<f64>> {
        if k < self.k0 || k > self.n_end + 1 || !self.mode_in_range(r, d) {
            return None;
        }
        Some(&self.k_mats[(k - self.k0) as usize][r - self.r_lo][d - self.d_lo])
    }

    pub fn gain_at(&self, k: i64, r: usize, d: usize) -> Option<&DMatrix<f64>> {
        if k < self.k0 || k > self.n_end || !self.mode_in_range(r, d) {
            return None;
        }
        Some(&self.l_mats[(k - self.k0) as usize][r - self.r_lo][d - self.d_lo])
    }

    fn mode_in_range(&self, r: usize, d: usize) -> bool {
        (self.r_lo..=self.r_hi).contains(&r) && (self.d_lo..=self.d_hi).contains(&d)
    }

    /// All-zero schedule with the given shape; open-loop baseline for tests
    /// and experiments.
    pub fn zero(
        dynamics: &ExtendedDynamics,
        r_chain: &DelayChain,
        d_chain: &DelayChain,
        k0: i64,
        n_end: i64,
    ) -> Self {
        let ext_dim = dynamics.ext_dim();
        let m_tilde = dynamics.layout.m_tilde;
        let steps = (n_end - k0 + 1) as usize;
        let mode_table = |rows, cols| -> ModeTable {
            vec![vec![DMatrix::zeros(rows, cols); d_chain.len()]; r_chain.len()]
        };
        GainSchedule {
            problem_hash: String::new(),
            n: dynamics.plant.n,
            m: dynamics.plant.m,
            m_tilde,
            ext_dim,
            k0,
            n_end,
            r_lo: r_chain.lo(),
            r_hi: r_chain.hi(),
            d_lo: d_chain.lo(),
            d_hi: d_chain.hi(),
            k_mats: vec![mode_table(ext_dim, ext_dim); steps + 1],
            l_mats: vec![mode_table(m_tilde, ext_dim); steps],
        }
    }
}

/// Per-step diagnostics from the backward recursion.
#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    pub schedule: GainSchedule,
    /// Worst condition number of O^+R^ per step k (index k - k0).
    pub max_condition: Vec<f64>,
}

/// Bundles the immutable inputs of the recursion.
pub struct Synthesizer<'a> {
    pub dynamics: &'a ExtendedDynamics,
    pub r_chain: &'a DelayChain,
    pub d_chain: &'a DelayChain,
    pub cost: &'a CostSpec,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

impl<'a> Synthesizer<'a> {
    /// Conditioning instant of the mode (r, d~): the controller last saw the
    /// actuator age at time k - 1 - r (time stamps relative to k = 0).
    fn conditioning_time(r: usize) -> i64 {
        -1 - r as i64
    }

    /// R^(r, d~): block-diagonal, one Phi-weighted copy of R per packet
    /// component; the component applied at k+p is weighted by the chance
    /// that its packet arrives with age exactly p. k-independent.
    pub fn build_r_hat(&self, r: usize, d_t: usize) -> Result<DMatrix<f64>, SynthesisError> {
        let layout = &self.dynamics.layout;
        let mut out = DMatrix::zeros(layout.m_tilde, layout.m_tilde);
        let t_cond = Self::conditioning_time(r);
        for p in layout.d_lo..=layout.d_hi {
            let w = elapsed_phi(self.d_chain, d_t, p, t_cond, p as i64)?;
            let off = layout.component_offset(p);
            out.view_mut((off, off), (layout.m, layout.m))
                .copy_from(&(&self.cost.r * w));
        }
        Ok(out)
    }

    /// Pair kernel P(r, d~, i, j, d1, d2): joint probability of the actuator
    /// ages at times k-i and k-j given the conditioning observation.
    fn pair_kernel(
        &self,
        r: usize,
        d_t: usize,
        i: usize,
        j: usize,
        d1: usize,
        d2: usize,
    ) -> Result<f64, SynthesisError> {
        let t_cond = Self::conditioning_time(r);
        let (ti, tj) = (-(i as i64), -(j as i64));
        if i > j {
            Ok(elapsed_phi(self.d_chain, d_t, d1, t_cond, ti)?
                * elapsed_phi(self.d_chain, d1, d2, ti, tj)?)
        } else if i < j {
            Ok(elapsed_phi(self.d_chain, d_t, d2, t_cond, tj)?
                * elapsed_phi(self.d_chain, d2, d1, tj, ti)?)
        } else if d1 == d2 {
            elapsed_phi(self.d_chain, d_t, d1, t_cond, ti)
        } else {
            Ok(0.0)
        }
    }

    /// Q^(r, d~) for a state weight (Q for stage terms, Q_bar for the
    /// terminal value). k-independent.
    pub fn build_q_hat(
        &self,
        weight: &DMatrix<f64>,
        r: usize,
        d_t: usize,
    ) -> Result<DMatrix<f64>, SynthesisError> {
        let dynamics = self.dynamics;
        let layout = &dynamics.layout;
        let plant = &dynamics.plant;
        let (n, m_hat) = (plant.n, layout.m_hat);
        let t_cond = Self::conditioning_time(r);
        let a_r = plant.a_pow(r);
        let mut out = DMatrix::zeros(n + m_hat, n + m_hat);

        out.view_mut((0, 0), (n, n))
            .copy_from(&(a_r.transpose() * weight * a_r));

        // expected selector for the input applied at time k-i
        let expected_pick = |i: usize| -> Result<DMatrix<f64>, SynthesisError> {
            let mut pick = DMatrix::zeros(layout.m, m_hat);
            for delta in layout.d_lo..=layout.d_hi {
                let w = elapsed_phi(self.d_chain, d_t, delta, t_cond, -(i as i64))?;
                if w != 0.0 {
                    pick += dynamics.selectors.pick_hat(i, delta) * w;
                }
            }
            Ok(pick)
        };

        let mut q12 = DMatrix::zeros(n, m_hat);
        for i in 1..=r {
            q12 += a_r.transpose() * weight * plant.a_pow(i - 1) * &plant.b * expected_pick(i)?;
        }
        out.view_mut((0, n), (n, m_hat)).copy_from(&q12);
        out.view_mut((n, 0), (m_hat, n)).copy_from(&q12.transpose());

        let mut q22 = DMatrix::zeros(m_hat, m_hat);
        for i in 1..=r {
            for j in 1..=r {
                let core = plant.b.transpose()
                    * plant.a_pow(i - 1).transpose()
                    * weight
                    * plant.a_pow(j - 1)
                    * &plant.b;
                for d1 in layout.d_lo..=layout.d_hi {
                    for d2 in layout.d_lo..=layout.d_hi {
                        let w = self.pair_kernel(r, d_t, i, j, d1, d2)?;
                        if w != 0.0 {
                            q22 += dynamics.selectors.pick_hat(i, d1).transpose()
                                * &core
                                * dynamics.selectors.pick_hat(j, d2)
                                * w;
                        }
                    }
                }
            }
        }
        out.view_mut((n, n), (m_hat, m_hat)).copy_from(&q22);
        symmetrize(&mut out);
        Ok(out)
    }

    /// Triple kernel for H^22: joint probability of the ages at times k-i,
    /// k-j and k-rho (rho <= i, j).
    #[allow(clippy::too_many_arguments)]
    fn triple_kernel(
        &self,
        r: usize,
        d_t: usize,
        i: usize,
        j: usize,
        rho: usize,
        d1: usize,
        d2: usize,
        d3: usize,
    ) -> Result<f64, SynthesisError> {
        let t_cond = Self::conditioning_time(r);
        let (ti, tj, trho) = (-(i as i64), -(j as i64), -(rho as i64));
        if i > j {
            Ok(elapsed_phi(self.d_chain, d_t, d1, t_cond, ti)?
                * elapsed_phi(self.d_chain, d1, d2, ti, tj)?
                * elapsed_phi(self.d_chain, d2, d3, tj, trho)?)
        } else if i < j {
            Ok(elapsed_phi(self.d_chain, d_t, d2, t_cond, tj)?
                * elapsed_phi(self.d_chain, d2, d1, tj, ti)?
                * elapsed_phi(self.d_chain, d1, d3, ti, trho)?)
        } else if d1 == d2 {
            Ok(elapsed_phi(self.d_chain, d_t, d1, t_cond, ti)?
                * elapsed_phi(self.d_chain, d1, d3, ti, trho)?)
        } else {
            Ok(0.0)
        }
    }

    /// O^, M^ = M^1 + M^2, H^ = H^11 + H^12 + H^12' + H^22 from the next
    /// step's value table.
    pub fn build_e3_kernels(
        &self,
        k_next: &ModeTable,
        r: usize,
        d_t: usize,
    ) -> Result<NextStepKernels, SynthesisError> {
        let dynamics = self.dynamics;
        let layout = &dynamics.layout;
        let ext_dim = dynamics.ext_dim();
        let (r_lo, r_hi) = (self.r_chain.lo(), self.r_chain.hi());
        let (d_lo, d_hi) = (self.d_chain.lo(), self.d_chain.hi());
        let t_cond = Self::conditioning_time(r);

        let value = |rho: usize, delta: usize| -> Result<&DMatrix<f64>, SynthesisError> {
            k_next
                .get(rho - r_lo)
                .and_then(|row| row.get(delta - d_lo))
                .ok_or(SynthesisError::IncompleteTable { r: rho, d: delta })
        };

        let mut o_hat = DMatrix::zeros(layout.m_tilde, layout.m_tilde);
        let mut m_hat = DMatrix::zeros(layout.m_tilde, ext_dim);
        let mut h_hat = DMatrix::zeros(ext_dim, ext_dim);

        for rho in r_lo..=r_hi.min(r + 1) {
            let psi = self.r_chain.prob(r, rho, 1);
            if psi == 0.0 {
                continue;
            }
            let a_tilde = self.dynamics.a_tilde(r, rho)?;
            let b_tildes: Vec<DMatrix<f64>> = (d_lo..=d_hi)
                .map(|d| self.dynamics.b_tilde(rho, d))
                .collect();

            // O^ and M^1: d1 = age at k-rho (the next step's d~), d2 = age at k
            for d1 in d_lo..=d_hi {
                let w1 = elapsed_phi(self.d_chain, d_t, d1, t_cond, -(rho as i64))?;
                if w1 == 0.0 {
                    continue;
                }
                // H^11 marginalizes over the age at time k
                h_hat += a_tilde.transpose() * value(rho, d1)? * &a_tilde * (psi * w1);
                for d2 in d_lo..=d_hi {
                    let w2 = elapsed_phi(self.d_chain, d1, d2, -(rho as i64), 0)?;
                    if w2 == 0.0 {
                        continue;
                    }
                    let bt = &b_tildes[d2 - d_lo];
                    let ktb = value(rho, d1)? * bt;
                    o_hat += bt.transpose() * &ktb * (psi * w1 * w2);
                    m_hat += ktb.transpose() * &a_tilde * (psi * w1 * w2);
                }
            }

            // M^2 and H^12: d1 = age at k-i, d2 = age at k-rho, d3 = age at k
            for i in rho..=r {
                for d1 in d_lo..=d_hi {
                    let w1 = elapsed_phi(self.d_chain, d_t, d1, t_cond, -(i as i64))?;
                    if w1 == 0.0 {
                        continue;
                    }
                    let a_bar = self.dynamics.a_bar(i, rho, d1)?;
                    for d2 in d_lo..=d_hi {
                        let w2 = elapsed_phi(self.d_chain, d1, d2, -(i as i64), -(rho as i64))?;
                        if w2 == 0.0 {
                            continue;
                        }
                        let k_val = value(rho, d2)?;
                        h_hat += {
                            let h12 = a_tilde.transpose() * k_val * &a_bar * (psi * w1 * w2);
                            &h12 + h12.transpose()
                        };
                        for d3 in d_lo..=d_hi {
                            let w3 = elapsed_phi(self.d_chain, d2, d3, -(rho as i64), 0)?;
                            if w3 == 0.0 {
                                continue;
                            }
                            m_hat += b_tildes[d3 - d_lo].transpose()
                                * k_val
                                * &a_bar
                                * (psi * w1 * w2 * w3);
                        }
                    }
                }
            }

            // H^22 via the triple kernel
            for i in rho..=r {
                for j in rho..=r {
                    for d1 in d_lo..=d_hi {
                        for d2 in d_lo..=d_hi {
                            let mut k_avg = DMatrix::zeros(ext_dim, ext_dim);
                            let mut any = false;
                            for d3 in d_lo..=d_hi {
                                let w = self.triple_kernel(r, d_t, i, j, rho, d1, d2, d3)?;
                                if w != 0.0 {
                                    k_avg += value(rho, d3)? * w;
                                    any = true;
                                }
                            }
                            if any {
                                h_hat += self.dynamics.a_bar(i, rho, d1)?.transpose()
                                    * k_avg
                                    * self.dynamics.a_bar(j, rho, d2)?
                                    * psi;
                            }
                        }
                    }
                }
            }
        }

        symmetrize(&mut o_hat);
        symmetrize(&mut h_hat);
        Ok((o_hat, m_hat, h_hat))
    }

    /// K_{N+1}(r, d~): the terminal value is the expected terminal state
    /// cost, i.e. Q^ built with the terminal weight.
    pub fn terminal_value(&self) -> Result<ModeTable, SynthesisError> {
        let mut table = Vec::new();
        for r in self.r_chain.lo()..=self.r_chain.hi() {
            let mut row = Vec::new();
            for d in self.d_chain.lo()..=self.d_chain.hi() {
                row.push(self.build_q_hat(&self.cost.q_bar, r, d)?);
            }
            table.push(row);
        }
        Ok(table)
    }

    /// Runs the backward recursion over the full (k, r, d~) cube.
    pub fn synthesize(&self, problem_hash: &str) -> Result<SynthesisOutput, SynthesisError> {
        let steps = self.cost.steps();
        let (r_lo, r_hi) = (self.r_chain.lo(), self.r_chain.hi());
        let (d_lo, d_hi) = (self.d_chain.lo(), self.d_chain.hi());
        let k0 = self.cost.k0;

        // k-independent kernels, one per mode
        let mut r_hat_table = Vec::new();
        let mut q_hat_table = Vec::new();
        for r in r_lo..=r_hi {
            let mut r_row = Vec::new();
            let mut q_row = Vec::new();
            for d in d_lo..=d_hi {
                r_row.push(self.build_r_hat(r, d)?);
                q_row.push(self.build_q_hat(&self.cost.q, r, d)?);
            }
            r_hat_table.push(r_row);
            q_hat_table.push(q_row);
        }

        let mut k_mats = vec![Vec::new(); steps + 1];
        let mut l_mats = vec![Vec::new(); steps];
        let mut max_condition = vec![0.0f64; steps];
        k_mats[steps] = self.terminal_value()?;

        for t in (0..steps).rev() {
            let k = k0 + t as i64;
            let mut k_table: ModeTable = Vec::new();
            let mut l_table: ModeTable = Vec::new();
            for r in r_lo..=r_hi {
                let mut k_row = Vec::new();
                let mut l_row = Vec::new();
                for d in d_lo..=d_hi {
                    let (o_hat, m_hat, h_hat) = self.build_e3_kernels(&k_mats[t + 1], r, d)?;
                    let s = &o_hat + &r_hat_table[r - r_lo][d - d_lo];
                    let eigs = s.clone().symmetric_eigen().eigenvalues;
                    let (min_eig, max_eig) = (eigs.min(), eigs.max());
                    let condition = if min_eig > 0.0 {
                        max_eig / min_eig
                    } else {
                        f64::INFINITY
                    };
                    if min_eig <= 0.0 || condition > CONDITION_LIMIT {
                        return Err(SynthesisError::Solve {
                            k,
                            r,
                            d,
                            condition,
                            min_eig,
                        });
                    }
                    max_condition[t] = max_condition[t].max(condition);
                    let chol = nalgebra::Cholesky::new(s).ok_or(SynthesisError::Solve {
                        k,
                        r,
                        d,
                        condition,
                        min_eig,
                    })?;
                    let gain = chol.solve(&m_hat);
                    let mut k_mat =
                        &h_hat + &q_hat_table[r - r_lo][d - d_lo] - m_hat.transpose() * &gain;
                    symmetrize(&mut k_mat);
                    k_row.push(k_mat);
                    l_row.push(gain);
                }
                k_table.push(k_row);
                l_table.push(l_row);
            }
            k_mats[t] = k_table;
            l_mats[t] = l_table;
        }

        let layout = &self.dynamics.layout;
        Ok(SynthesisOutput {
            schedule: GainSchedule {
                problem_hash: problem_hash.to_string(),
                n: self.dynamics.plant.n,
                m: self.dynamics.plant.m,
                m_tilde: layout.m_tilde,
                ext_dim: self.dynamics.ext_dim(),
                k0,
                n_end: self.cost.n_end,
                r_lo,
                r_hi,
                d_lo,
                d_hi,
                k_mats,
                l_mats,
            },
            max_condition,
        })
    }

    /// E1 + E2 + E3 evaluated at a fixed (x^, u~); the quantity the gain
    /// minimizes. Used by optimality checks.
    pub fn stage_value(
        &self,
        k_next: &ModeTable,
        r: usize,
        d_t: usize,
        x_hat: &DVector<f64>,
        u_tilde: &DVector<f64>,
    ) -> Result<f64, SynthesisError> {
        let r_hat = self.build_r_hat(r, d_t)?;
        let q_hat = self.build_q_hat(&self.cost.q, r, d_t)?;
        let (o_hat, m_hat, h_hat) = self.build_e3_kernels(k_next, r, d_t)?;
        let e1 = (u_tilde.transpose() * r_hat * u_tilde)[0];
        let e2 = (x_hat.transpose() * q_hat * x_hat)[0];
        let e3 = (x_hat.transpose() * &h_hat * x_hat)[0]
            + 2.0 * (u_tilde.transpose() * &m_hat * x_hat)[0]
            + (u_tilde.transpose() * &o_hat * u_tilde)[0];
        Ok(e1 + e2 + e3)
    }
}
