//! Plain-text schedule files.
//!
//! A schedule file is line-oriented: a version line, header fields, then one
//! block per (kind, k, r, d) with the matrix rows. Floats are written with
//! 17 significant digits, so a read-back schedule is bit-identical to the
//! one written.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::synthesis::{GainSchedule, ModeTable};

const MAGIC: &str = "ncs-lqr-schedule v1";

#[derive(Debug, Error)]
pub enum ScheduleIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {problem}")]
    Format { line: usize, problem: String },
    #[error("not a schedule file (expected `{MAGIC}`)")]
    BadMagic,
}

fn format_err(line: usize, problem: impl ToString) -> ScheduleIoError {
    ScheduleIoError::Format {
        line,
        problem: problem.to_string(),
    }
}

pub fn write_schedule(schedule: &GainSchedule, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(
        w,
        "hash {}",
        if schedule.problem_hash.is_empty() {
            "-"
        } else {
            &schedule.problem_hash
        }
    )?;
    writeln!(
        w,
        "dims n={} m={} m_tilde={} ext_dim={}",
        schedule.n, schedule.m, schedule.m_tilde, schedule.ext_dim
    )?;
    writeln!(w, "horizon k0={} N={}", schedule.k0, schedule.n_end)?;
    writeln!(
        w,
        "modes r={}..{} d={}..{}",
        schedule.r_lo, schedule.r_hi, schedule.d_lo, schedule.d_hi
    )?;
    let block = |kind: &str, k: i64, r: usize, d: usize, mat: &DMatrix<f64>, w: &mut dyn Write| -> std::io::Result<()> {
        writeln!(w, "{kind} k={k} r={r} d={d}")?;
        for i in 0..mat.nrows() {
            let row: Vec<String> = (0..mat.ncols()).map(|j| format!("{:.16e}", mat[(i, j)])).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    };
    for (t, table) in schedule.k_mats.iter().enumerate() {
        for (ri, row) in table.iter().enumerate() {
            for (di, mat) in row.iter().enumerate() {
                block(
                    "K",
                    schedule.k0 + t as i64,
                    schedule.r_lo + ri,
                    schedule.d_lo + di,
                    mat,
                    w,
                )?;
            }
        }
    }
    for (t, table) in schedule.l_mats.iter().enumerate() {
        for (ri, row) in table.iter().enumerate() {
            for (di, mat) in row.iter().enumerate() {
                block(
                    "L",
                    schedule.k0 + t as i64,
                    schedule.r_lo + ri,
                    schedule.d_lo + di,
                    mat,
                    w,
                )?;
            }
        }
    }
    writeln!(w, "end")
}

struct Lines<'a> {
    inner: std::io::Lines<&'a mut dyn BufRead>,
    number: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<String, ScheduleIoError> {
        self.number += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(format_err(self.number, "unexpected end of file")),
        }
    }
}

fn field<'s>(line: &'s str, number: usize, key: &str) -> Result<&'s str, ScheduleIoError> {
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')))
        .ok_or_else(|| format_err(number, format!("missing `{key}=` field")))
}

fn parse<T: std::str::FromStr>(text: &str, number: usize, what: &str) -> Result<T, ScheduleIoError> {
    text.parse()
        .map_err(|_| format_err(number, format!("cannot parse {what} from `{text}`")))
}

pub fn read_schedule(r: &mut impl BufRead) -> Result<GainSchedule, ScheduleIoError> {
    let mut lines = Lines {
        inner: (r as &mut dyn BufRead).lines(),
        number: 0,
    };
    if lines.next()? != MAGIC {
        return Err(ScheduleIoError::BadMagic);
    }
    let hash_line = lines.next()?;
    let problem_hash = hash_line
        .strip_prefix("hash ")
        .ok_or_else(|| format_err(lines.number, "expected `hash <hex>`"))?;
    let problem_hash = if problem_hash == "-" {
        String::new()
    } else {
        problem_hash.to_string()
    };
    let dims = lines.next()?;
    let ln = lines.number;
    let n: usize = parse(field(&dims, ln, "n")?, ln, "n")?;
    let m: usize = parse(field(&dims, ln, "m")?, ln, "m")?;
    let m_tilde: usize = parse(field(&dims, ln, "m_tilde")?, ln, "m_tilde")?;
    let ext_dim: usize = parse(field(&dims, ln, "ext_dim")?, ln, "ext_dim")?;
    let horizon = lines.next()?;
    let ln = lines.number;
    let k0: i64 = parse(field(&horizon, ln, "k0")?, ln, "k0")?;
    let n_end: i64 = parse(field(&horizon, ln, "N")?, ln, "N")?;
    if n_end < k0 {
        return Err(format_err(ln, format!("empty horizon {k0}..{n_end}")));
    }
    let modes = lines.next()?;
    let ln = lines.number;
    let mode_range = |key: &str| -> Result<(usize, usize), ScheduleIoError> {
        let text = field(&modes, ln, key)?;
        let (lo, hi) = text
            .split_once("..")
            .ok_or_else(|| format_err(ln, format!("bad range `{text}`")))?;
        Ok((parse(lo, ln, key)?, parse(hi, ln, key)?))
    };
    let (r_lo, r_hi) = mode_range("r")?;
    let (d_lo, d_hi) = mode_range("d")?;
    if r_lo > r_hi || d_lo > d_hi {
        return Err(format_err(ln, "inverted mode range"));
    }

    let steps = (n_end - k0 + 1) as usize;
    let empty_table =
        || -> ModeTable { vec![vec![DMatrix::zeros(0, 0); d_hi - d_lo + 1]; r_hi - r_lo + 1] };
    let mut k_mats = vec![empty_table(); steps + 1];
    let mut l_mats = vec![empty_table(); steps];

    loop {
        let line = lines.next()?;
        if line == "end" {
            break;
        }
        let ln = lines.number;
        let kind = line
            .split_whitespace()
            .next()
            .ok_or_else(|| format_err(ln, "empty block header"))?;
        let k: i64 = parse(field(&line, ln, "k")?, ln, "k")?;
        let r: usize = parse(field(&line, ln, "r")?, ln, "r")?;
        let d: usize = parse(field(&line, ln, "d")?, ln, "d")?;
        let (rows, last_k) = match kind {
            "K" => (ext_dim, n_end + 1),
            "L" => (m_tilde, n_end),
            other => return Err(format_err(ln, format!("unknown block kind `{other}`"))),
        };
        if k < k0 || k > last_k {
            return Err(format_err(ln, format!("step {k} outside schedule range")));
        }
        if !(r_lo..=r_hi).contains(&r) || !(d_lo..=d_hi).contains(&d) {
            return Err(format_err(ln, format!("mode (r={r}, d={d}) outside declared ranges")));
        }
        let mut mat = DMatrix::zeros(rows, ext_dim);
        for i in 0..rows {
            let row = lines.next()?;
            let values: Vec<&str> = row.split_whitespace().collect();
            if values.len() != ext_dim {
                return Err(format_err(
                    lines.number,
                    format!("expected {ext_dim} values, found {}", values.len()),
                ));
            }
            for (j, v) in values.iter().enumerate() {
                mat[(i, j)] = parse(v, lines.number, "matrix entry")?;
            }
        }
        let slot = match kind {
            "K" => &mut k_mats[(k - k0) as usize][r - r_lo][d - d_lo],
            _ => &mut l_mats[(k - k0) as usize][r - r_lo][d - d_lo],
        };
        *slot = mat;
    }

    for (t, table) in k_mats.iter().enumerate() {
        for row in table {
            for mat in row {
                if mat.nrows() == 0 {
                    return Err(format_err(lines.number, format!("missing K block at step {}", k0 + t as i64)));
                }
            }
        }
    }
    for (t, table) in l_mats.iter().enumerate() {
        for row in table {
            for mat in row {
                if mat.nrows() == 0 {
                    return Err(format_err(lines.number, format!("missing L block at step {}", k0 + t as i64)));
                }
            }
        }
    }

    Ok(GainSchedule {
        problem_hash,
        n,
        m,
        m_tilde,
        ext_dim,
        k0,
        n_end,
        r_lo,
        r_hi,
        d_lo,
        d_hi,
        k_mats,
        l_mats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay_model::DelayChain;
    use crate::extended_dynamics::{ExtendedDynamics, PlantModel};
    use crate::packet_layout::PacketLayout;
    use crate::rng_util::{seeded, uniform_in};
    use crate::synthesis::{CostSpec, Synthesizer};

    fn sample_schedule() -> GainSchedule {
        let mut rng = seeded(14);
        let plant = PlantModel::new(
            DMatrix::from_fn(2, 2, |_, _| uniform_in(&mut rng, -1.0, 1.0)),
            DMatrix::from_fn(2, 1, |_, _| uniform_in(&mut rng, 0.5, 1.5)),
            2,
        )
        .unwrap();
        let layout = PacketLayout::new(1, 0, 1, 0, 1).unwrap();
        let dynamics = ExtendedDynamics::new(plant, layout);
        let chain =
            DelayChain::new(0, 1, DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.3, 0.7])).unwrap();
        let cost = CostSpec::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 2.0,
            DMatrix::from_element(1, 1, 0.8),
            -1,
            2,
            2,
            1,
        )
        .unwrap();
        let mut schedule = Synthesizer {
            dynamics: &dynamics,
            r_chain: &chain,
            d_chain: &chain,
            cost: &cost,
        }
        .synthesize("deadbeef")
        .unwrap()
        .schedule;
        // exercise awkward values
        schedule.k_mats[0][0][0][(0, 1)] = f64::MIN_POSITIVE;
        schedule.k_mats[0][0][0][(1, 0)] = f64::MIN_POSITIVE;
        schedule.l_mats[0][1][1][(0, 0)] = -0.0;
        schedule
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let schedule = sample_schedule();
        let mut buf = Vec::new();
        write_schedule(&schedule, &mut buf).unwrap();
        let back = read_schedule(&mut buf.as_slice()).unwrap();
        assert_eq!(schedule, back);
        // write the read-back copy again: identical bytes
        let mut buf2 = Vec::new();
        write_schedule(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_foreign_files() {
        let err = read_schedule(&mut "something else\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ScheduleIoError::BadMagic));
    }

    #[test]
    fn truncated_file_reports_line() {
        let schedule = sample_schedule();
        let mut buf = Vec::new();
        write_schedule(&schedule, &mut buf).unwrap();
        let cut = buf.len() / 2;
        let err = read_schedule(&mut &buf[..cut]).unwrap_err();
        assert!(matches!(err, ScheduleIoError::Format { .. }));
    }

    #[test]
    fn missing_block_is_detected() {
        let schedule = sample_schedule();
        let mut buf = Vec::new();
        write_schedule(&schedule, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // drop one L block (header + one row)
        let pos = text.find("\nL k=").unwrap();
        let rest = &text[pos + 1..];
        let block_len = rest.find("\nL k=").unwrap() + 1;
        let pruned = format!("{}{}", &text[..pos + 1], &rest[block_len..]);
        let err = read_schedule(&mut pruned.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("missing L block"), "{err}");
    }

    #[test]
    fn empty_hash_round_trips() {
        let mut schedule = sample_schedule();
        schedule.problem_hash.clear();
        let mut buf = Vec::new();
        write_schedule(&schedule, &mut buf).unwrap();
        let back = read_schedule(&mut buf.as_slice()).unwrap();
        assert_eq!(back.problem_hash, "");
    }
}
