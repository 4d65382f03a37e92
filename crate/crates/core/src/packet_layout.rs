//! Dimension bookkeeping and selector/shift matrices for the packet vector
//! u~ and the stacked packet history u^.
//!
//! A packet u~_k stacks one m-wide candidate input per admissible delivery
//! delay, ordered from delay d_hi at the top down to d_lo at the bottom, so
//! the component for delay p sits at row offset (d_hi - p)*m. The history
//! u^_k stacks truncated copies of the last d_hi + r_hi packets: block p
//! holds the prefix of u~_{k-p} that can still matter (width m_bar(p)).
//!
//! All selectors are defined by these stacking semantics and materialized as
//! dense 0/1 matrices; the property suite in this module is normative.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("bounds violated: need m >= 1, d_lo <= d_hi, r_lo <= r_hi (got m={m}, d=[{d_lo},{d_hi}], r=[{r_lo},{r_hi}])")]
    Bounds {
        m: usize,
        d_lo: usize,
        d_hi: usize,
        r_lo: usize,
        r_hi: usize,
    },
    #[error("expected {expected} packet components of width {width}, got {got} (first bad width {bad_width})")]
    Width {
        expected: usize,
        width: usize,
        got: usize,
        bad_width: usize,
    },
}

/// All dimension arithmetic for one problem instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketLayout {
    pub m: usize,
    pub d_lo: usize,
    pub d_hi: usize,
    pub r_lo: usize,
    pub r_hi: usize,
    pub m_tilde: usize,
    /// m_bar[p-1] = width of history block p, for p = 1..=window().
    pub m_bar: Vec<usize>,
    pub m_hat: usize,
}

impl PacketLayout {
    pub fn new(
        m: usize,
        d_lo: usize,
        d_hi: usize,
        r_lo: usize,
        r_hi: usize,
    ) -> Result<Self, LayoutError> {
        if m < 1 || d_lo > d_hi || r_lo > r_hi {
            return Err(LayoutError::Bounds {
                m,
                d_lo,
                d_hi,
                r_lo,
                r_hi,
            });
        }
        let m_tilde = (d_hi - d_lo + 1) * m;
        let window = d_hi + r_hi;
        let m_bar: Vec<usize> = (1..=window)
            .map(|p| m_tilde - p.saturating_sub(r_hi + d_lo) * m)
            .collect();
        let m_hat = m_bar.iter().sum();
        Ok(PacketLayout {
            m,
            d_lo,
            d_hi,
            r_lo,
            r_hi,
            m_tilde,
            m_bar,
            m_hat,
        })
    }

    /// Number of past packets the history retains, d_hi + r_hi.
    pub fn window(&self) -> usize {
        self.d_hi + self.r_hi
    }

    /// Width of history block p. Block 0 is the fresh packet itself; blocks
    /// past the window are empty.
    pub fn m_bar(&self, p: usize) -> usize {
        if p == 0 {
            self.m_tilde
        } else if p <= self.window() {
            self.m_bar[p - 1]
        } else {
            self.m_tilde
                .saturating_sub(p.saturating_sub(self.r_hi + self.d_lo) * self.m)
        }
    }

    /// Row offset of history block p (1-based) inside u^.
    pub fn block_offset(&self, p: usize) -> usize {
        debug_assert!((1..=self.window()).contains(&p));
        self.m_bar[..p - 1].iter().sum()
    }

    /// Row offset of the delay-p component inside a packet or block prefix.
    pub fn component_offset(&self, p: usize) -> usize {
        debug_assert!(p <= self.d_hi);
        (self.d_hi - p) * self.m
    }

    /// Reads the delay-p component out of a packet vector.
    pub fn component(&self, u_tilde: &DVector<f64>, p: usize) -> DVector<f64> {
        u_tilde.rows(self.component_offset(p), self.m).into_owned()
    }

    /// Stacks components given in descending delay order (d_hi first).
    pub fn stack_packet(&self, components: &[DVector<f64>]) -> Result<DVector<f64>, LayoutError> {
        let expected = self.d_hi - self.d_lo + 1;
        let bad = components.iter().find(|c| c.len() != self.m);
        if components.len() != expected || bad.is_some() {
            return Err(LayoutError::Width {
                expected,
                width: self.m,
                got: components.len(),
                bad_width: bad.map_or(self.m, |c| c.len()),
            });
        }
        let mut out = DVector::zeros(self.m_tilde);
        for (j, c) in components.iter().enumerate() {
            out.rows_mut(j * self.m, self.m).copy_from(c);
        }
        Ok(out)
    }

    /// Inverse of [`PacketLayout::stack_packet`].
    pub fn unstack_packet(&self, u_tilde: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.d_hi - self.d_lo + 1)
            .map(|j| u_tilde.rows(j * self.m, self.m).into_owned())
            .collect()
    }

    /// Builds u^_k directly from the packet log: `packets[p-1]` = u~_{k-p},
    /// most recent first. This direct re-stacking is the semantic ground
    /// truth the shift matrices are tested against.
    pub fn stack_history(&self, packets: &[DVector<f64>]) -> DVector<f64> {
        debug_assert!(packets.len() >= self.window());
        let mut out = DVector::zeros(self.m_hat);
        for p in 1..=self.window() {
            let width = self.m_bar(p);
            out.rows_mut(self.block_offset(p), width)
                .copy_from(&packets[p - 1].rows(0, width));
        }
        out
    }
}

/// Dense 0/1 selector and shift matrices over one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorSet {
    layout: PacketLayout,
    shift_full: DMatrix<f64>,
    shift_in: DMatrix<f64>,
}

impl SelectorSet {
    pub fn new(layout: &PacketLayout) -> Self {
        let m_hat = layout.m_hat;
        let mut shift_full = DMatrix::zeros(m_hat, m_hat);
        let mut shift_in = DMatrix::zeros(m_hat, layout.m_tilde);
        for p in 1..=layout.window() {
            let width = layout.m_bar(p);
            let row0 = layout.block_offset(p);
            if p == 1 {
                // block 1 of the next history is the m_bar(1)-prefix of the
                // fresh packet
                for j in 0..width {
                    shift_in[(row0 + j, j)] = 1.0;
                }
            } else {
                // block p is the m_bar(p)-prefix of the previous block p-1
                let col0 = layout.block_offset(p - 1);
                for j in 0..width {
                    shift_full[(row0 + j, col0 + j)] = 1.0;
                }
            }
        }
        SelectorSet {
            layout: layout.clone(),
            shift_full,
            shift_in,
        }
    }

    pub fn layout(&self) -> &PacketLayout {
        &self.layout
    }

    /// T^: maps u^_k to the aged part of u^_{k+1} (m_hat x m_hat).
    pub fn shift_full(&self) -> &DMatrix<f64> {
        &self.shift_full
    }

    /// T~: maps the fresh packet u~_k into block 1 of u^_{k+1} (m_hat x m_tilde).
    pub fn shift_in(&self) -> &DMatrix<f64> {
        &self.shift_in
    }

    /// I-check_i(d): picks the delay-d component out of history block i+d
    /// (m x m_bar(i+d)). Defined for i <= r_hi, where the component is still
    /// retained in the block.
    pub fn pick_check(&self, i: usize, d: usize) -> DMatrix<f64> {
        let l = &self.layout;
        debug_assert!(i <= l.r_hi && (l.d_lo..=l.d_hi).contains(&d));
        let width = l.m_bar(i + d);
        let mut out = DMatrix::zeros(l.m, width);
        let off = l.component_offset(d);
        debug_assert!(off + l.m <= width);
        for j in 0..l.m {
            out[(j, off + j)] = 1.0;
        }
        out
    }

    /// I-bar_p: picks history block p out of u^ (m_bar(p) x m_hat); the zero
    /// matrix for p outside 1..=window.
    pub fn pick_block(&self, p: usize) -> DMatrix<f64> {
        let l = &self.layout;
        let width = l.m_bar(p);
        let mut out = DMatrix::zeros(width, l.m_hat);
        if (1..=l.window()).contains(&p) {
            let off = l.block_offset(p);
            for j in 0..width {
                out[(j, off + j)] = 1.0;
            }
        }
        out
    }

    /// I^_i(d) = I-check_i(d) * I-bar_{i+d}: reads u_{k-i} = u~_{k-i-d}^{(d)}
    /// straight out of u^_k (m x m_hat).
    pub fn pick_hat(&self, i: usize, d: usize) -> DMatrix<f64> {
        self.pick_check(i, d) * self.pick_block(i + d)
    }

    /// I~(d): reads the delay-0 component out of the fresh packet; the zero
    /// matrix unless d = 0 (m x m_tilde).
    pub fn pick_now(&self, d: usize) -> DMatrix<f64> {
        let l = &self.layout;
        let mut out = DMatrix::zeros(l.m, l.m_tilde);
        if d == 0 && l.d_lo == 0 {
            let off = l.component_offset(0);
            for j in 0..l.m {
                out[(j, off + j)] = 1.0;
            }
        }
        out
    }
}
