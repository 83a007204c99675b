//! Surface erosion: the outer radius `R(t) = max(R₁, R_L − ∫₀ᵗ v_e ds)` and
//! whole-cell retirement of the eroded shell.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::capsule::ValidatedCapsule;
use crate::error::{Error, Result, ValidationErrors};
use crate::grid::Side;
use crate::kernel::{ConcentrationState, StratumOperator};

/// Constant-speed erosion over `[t_start, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErosionPhase {
    pub t_start: f64,
    pub t_end: f64,
    /// Erosion speed [µm/s].
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ErosionSchedule {
    /// Piecewise-linear `(t [s], R [µm])` table, held constant after the last entry.
    Samples(Vec<(f64, f64)>),
    /// Speed phases, integrated exactly from the initial outer radius.
    Phases(Vec<ErosionPhase>),
}

impl ErosionSchedule {
    /// A schedule that never erodes.
    pub fn none() -> Self {
        ErosionSchedule::Phases(Vec::new())
    }

    /// Load-time checks independent of any capsule.
    pub fn check(&self) -> Result<()> {
        let mut errs = ValidationErrors::default();
        match self {
            ErosionSchedule::Samples(s) => {
                if s.is_empty() {
                    errs.push("erosion", "schedule has no samples");
                }
                if s.iter().any(|(t, r)| !t.is_finite() || !r.is_finite()) {
                    errs.push("erosion", "non-finite sample");
                }
                if let Some((t0, _)) = s.first() {
                    if *t0 != 0.0 {
                        errs.push("erosion", "first sample must be at t = 0");
                    }
                }
                for (i, w) in s.windows(2).enumerate() {
                    if w[1].0 <= w[0].0 {
                        errs.push(format!("erosion[{}]", i + 2), "sample times must be strictly increasing");
                    }
                    if w[1].1 > w[0].1 {
                        errs.push(format!("erosion[{}]", i + 2), "radius must be non-increasing in time");
                    }
                }
            }
            ErosionSchedule::Phases(p) => {
                for (i, ph) in p.iter().enumerate() {
                    if !(ph.t_start >= 0.0 && ph.t_end >= ph.t_start && ph.t_end.is_finite()) {
                        errs.push(format!("erosion.phase[{}]", i + 1), "phase interval must satisfy 0 ≤ t_start ≤ t_end");
                    }
                    if !(ph.speed >= 0.0 && ph.speed.is_finite()) {
                        errs.push(
                            format!("erosion.phase[{}]", i + 1),
                            "speed must be non-negative (radius must be non-increasing)",
                        );
                    }
                }
            }
        }
        errs.into_result()
    }

    /// Checks that the schedule starts at the capsule's outer radius.
    pub fn check_against(&self, capsule: &ValidatedCapsule) -> Result<()> {
        self.check()?;
        if let ErosionSchedule::Samples(s) = self {
            let r_l = capsule.total_radius();
            let r0 = s[0].1;
            if (r0 - r_l).abs() > 1e-9 * r_l {
                return Err(Error::single(
                    "erosion",
                    format!("schedule starts at R = {r0} but the capsule radius is {r_l}"),
                ));
            }
        }
        Ok(())
    }

    /// Total eroded depth `∫₀ᵗ v_e ds` for a phase schedule.
    fn eroded_depth(phases: &[ErosionPhase], t: f64) -> f64 {
        phases
            .iter()
            .map(|p| p.speed * (t.min(p.t_end) - p.t_start).max(0.0))
            .sum()
    }

    /// Reads `t_s,R_um` samples or `t_start_s,t_end_s,v_um_per_s` phases,
    /// chosen by the header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (_, header) = lines.next().ok_or_else(|| Error::Parse("erosion CSV is empty".into()))?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        let parse_row = |no: usize, line: &str, width: usize| -> Result<Vec<f64>> {
            let vals: Vec<&str> = line.split(',').map(str::trim).collect();
            if vals.len() != width {
                return Err(Error::Parse(format!("erosion CSV line {}: expected {width} columns", no + 1)));
            }
            vals.iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("erosion CSV line {}: bad number '{v}'", no + 1)))
                })
                .collect()
        };
        let schedule = match columns.as_slice() {
            ["t_s", "R_um"] => ErosionSchedule::Samples(
                lines
                    .map(|(no, l)| parse_row(no, l, 2).map(|v| (v[0], v[1])))
                    .collect::<Result<_>>()?,
            ),
            ["t_start_s", "t_end_s", "v_um_per_s"] => ErosionSchedule::Phases(
                lines
                    .map(|(no, l)| {
                        parse_row(no, l, 3).map(|v| ErosionPhase {
                            t_start: v[0],
                            t_end: v[1],
                            speed: v[2],
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
            _ => {
                return Err(Error::Parse(format!(
                    "erosion CSV header must be 't_s,R_um' or 't_start_s,t_end_s,v_um_per_s', found '{header}'"
                )))
            }
        };
        schedule.check()?;
        Ok(schedule)
    }

    pub fn from_csv_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// `R(t)` clipped below at `r_floor` (the core radius).
///
/// `r_outer` is the initial outer radius, used by phase schedules.
pub fn radius_at(schedule: &ErosionSchedule, t: f64, r_outer: f64, r_floor: f64) -> f64 {
    let r = match schedule {
        ErosionSchedule::Phases(p) => r_outer - ErosionSchedule::eroded_depth(p, t),
        ErosionSchedule::Samples(s) => {
            let i = s.partition_point(|(ts, _)| *ts <= t);
            if i == 0 {
                s[0].1
            } else if i == s.len() {
                s[i - 1].1
            } else {
                let (t0, r0) = s[i - 1];
                let (t1, r1) = s[i];
                r0 + (r1 - r0) * (t - t0) / (t1 - t0)
            }
        }
    };
    r.max(r_floor)
}

/// Result of one retirement pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Retirement {
    /// Mass released by the retired cells (and any buffer they were owed) [µg].
    pub eroded_mass: f64,
    pub retired_cells: usize,
    pub strata_removed: usize,
}

/// Retires every outermost alive cell whose inner face lies at or beyond
/// `r_now`. A cell is never partially eroded; all of its mass is released at
/// once. Cells of the physical core (`core_end` = index of its last
/// numerical stratum) are never retired.
pub fn retire_cells(
    state: &mut ConcentrationState,
    operators: &[StratumOperator],
    core_end: usize,
    r_now: f64,
) -> Retirement {
    let mut out = Retirement::default();
    loop {
        let l = state.outermost();
        if l <= core_end {
            break;
        }
        let n = state.alive[l];
        let op = &operators[l];
        if op.grid.faces[n - 1] < r_now {
            break;
        }
        out.eroded_mass += state.cells[l][n - 1] * op.grid.volumes[n - 1];
        state.cells[l][n - 1] = 0.0;
        state.alive[l] = n - 1;
        out.retired_cells += 1;
        if n == 1 {
            out.strata_removed += 1;
            let link = &mut state.links[l - 1];
            let pending = link.drain();
            match link.passive() {
                // mass owed to the surviving inner stratum is delivered now
                Side::Inner => {
                    let inner = &operators[l - 1];
                    let last = state.alive[l - 1] - 1;
                    state.cells[l - 1][last] += pending * inner.measure(last);
                }
                Side::Outer => out.eroded_mass += pending * op.mass_factor,
            }
        }
    }
    out
}
