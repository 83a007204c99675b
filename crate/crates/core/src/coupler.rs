//! Global time loop over strata with heterogeneous time steps.
//!
//! Every stratum advances with its own `dt_ℓ = k_ℓ·dt_min`. Global ticks are
//! `dt_min` long and stratum ℓ completes an update at the end of every tick
//! whose count is a multiple of `k_ℓ`. A tick runs in this order:
//!
//! 1. erosion check against `R(t_{n+1})`, retiring whole cells;
//! 2. interface fluxes for every link whose active side is due, read from
//!    the pre-tick state (the passive side's value is the one left by its
//!    last update) and mirrored into the link buffer;
//! 3. updates of the due strata, outermost first, each passive side draining
//!    its buffers;
//! 4. release accumulation;
//! 5. sampling at `output_every` boundaries.

use std::time::Instant;

use crate::capsule::{integer_ratio, SimulationConfig, ValidatedCapsule};
use crate::erosion::{radius_at, retire_cells, ErosionSchedule};
use crate::error::{Error, Result, ValidationErrors};
use crate::grid::{build_grids, cfl_max_dt, insert_fictitious_strata, stratum_d_max, GhostLink, Side, CFL_SAFETY};
use crate::kernel::{harmonic_mean, negativity_floor, ConcentrationState, StratumOperator};
use crate::release::{accumulate_release, mass_audit, ReleaseRecord};

/// Update multipliers of every stratum relative to the smallest time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub dt_min: f64,
    pub multipliers: Vec<u64>,
}

impl Schedule {
    /// True when stratum `stratum` completes an update at the end of tick
    /// `tick` (0-based).
    pub fn is_due(&self, stratum: usize, tick: u64) -> bool {
        (tick + 1) % self.multipliers[stratum] == 0
    }

    /// Ticks between instants at which every stratum is synchronised.
    pub fn sync_period(&self) -> u64 {
        fn gcd(a: u64, b: u64) -> u64 {
            if b == 0 {
                a
            } else {
                gcd(b, a % b)
            }
        }
        self.multipliers.iter().fold(1, |acc, &k| acc / gcd(acc, k) * k)
    }
}

pub fn build_schedule(capsule: &ValidatedCapsule) -> Result<Schedule> {
    let dt_min = capsule.dt_min();
    let mut errs = ValidationErrors::default();
    let multipliers = capsule
        .strata()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            integer_ratio(s.dt, dt_min).unwrap_or_else(|| {
                errs.push(format!("stratum[{}].dt", i + 1), "not an integer multiple of the smallest dt");
                1
            })
        })
        .collect();
    errs.into_result()?;
    Ok(Schedule { dt_min, multipliers })
}

/// Evaluates the interface flux on the active side and mirrors it into the
/// link buffer.
///
/// The ghost cell has the active side's size and takes the value of the
/// neighbouring cell it is embedded in. `d_hat_plus`/`d_hat_minus` are the
/// harmonic means of the two strata's D⁺ and D⁻; `weight` is the active side's
/// face weight at the interface. Returns the flux (positive inward).
#[inline]
pub fn exchange_interface(
    link: &mut GhostLink,
    inner_cell: f64,
    outer_cell: f64,
    d_hat_plus: f64,
    d_hat_minus: f64,
    weight: f64,
    dt_active: f64,
) -> f64 {
    let d = if inner_cell >= outer_cell { d_hat_plus } else { d_hat_minus };
    link.ghost = match link.active {
        Side::Inner => outer_cell,
        Side::Outer => inner_cell,
    };
    let flux = d * weight * (outer_cell - inner_cell);
    link.record(flux, dt_active);
    flux
}

/// Kernel switches, mostly for verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Apply the D⁺/D⁻ direction test. When off, D⁺ is used everywhere.
    pub directional: bool,
    /// Count faces that select D⁻ (small overhead).
    pub count_inward: bool,
    /// Evaluate the mass audit after every tick and keep the worst residual.
    pub audit_every_tick: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            directional: true,
            count_inward: false,
            audit_every_tick: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub ticks: u64,
    pub cell_updates: u64,
    /// Faces (interior and interface) that selected D⁻, when counted.
    pub inward_selections: u64,
    /// Worst per-tick audit residual, when audited.
    pub max_audit_residual: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Running,
    Completed,
    /// Erosion reached the core; the run stops.
    FullyEroded,
}

/// One row of a concentration profile dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub t: f64,
    pub r: f64,
    pub c: f64,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub record: ReleaseRecord,
    pub profiles: Vec<ProfilePoint>,
    pub stats: RunStats,
    pub status: RunStatus,
    /// Capsule actually simulated (after grading and any dt clamping).
    pub capsule: ValidatedCapsule,
    pub dt_min: f64,
    /// In-capsule mass at the end of the run.
    pub final_in_capsule: f64,
}

impl SimulationOutput {
    pub fn mass_residual(&self) -> f64 {
        mass_audit(self.final_in_capsule, &self.record)
    }
}

struct LinkCoefficients {
    d_hat_plus: f64,
    d_hat_minus: f64,
    weight: f64,
    dt_active: f64,
    active_stratum: usize,
}

pub struct Simulation {
    capsule: ValidatedCapsule,
    operators: Vec<StratumOperator>,
    links: Vec<LinkCoefficients>,
    schedule: Schedule,
    state: ConcentrationState,
    record: ReleaseRecord,
    profiles: Vec<ProfilePoint>,
    erosion: Option<ErosionSchedule>,
    lambda: f64,
    core_end: usize,
    r_outer: f64,
    r_floor: f64,
    total_ticks: u64,
    output_ticks: u64,
    profile_ticks: Option<u64>,
    countdown: Vec<u64>,
    due: Vec<bool>,
    scratch: Vec<f64>,
    neg_floor: f64,
    options: SimulationOptions,
    stats: RunStats,
    status: RunStatus,
}

/// Applies the stability policy: a hard error, or a uniform scaling of every
/// time step (which preserves all multiplier relations).
fn enforce_cfl(capsule: ValidatedCapsule, clamp: bool) -> Result<ValidatedCapsule> {
    let strata = capsule.strata();
    let mut errs = ValidationErrors::default();
    let mut factor = 1u64;
    for (i, s) in strata.iter().enumerate() {
        let bound = cfl_max_dt(s.dr, stratum_d_max(strata, i));
        if s.dt > bound * (1.0 + 1e-12) {
            if clamp {
                factor = factor.max((s.dt / (CFL_SAFETY * bound)).ceil() as u64);
            } else {
                errs.push(
                    format!("stratum[{}].dt", i + 1),
                    format!("dt = {} violates the stability bound {bound} (use --clamp-cfl to clamp)", s.dt),
                );
            }
        }
    }
    errs.into_result()?;
    if factor <= 1 {
        return Ok(capsule);
    }
    let mut spec = capsule.spec().clone();
    for s in &mut spec.strata {
        s.dt /= factor as f64;
    }
    crate::capsule::validate_capsule(&spec)
}

impl Simulation {
    pub fn new(config: &SimulationConfig) -> Result<Self> {
        Self::with_options(config, SimulationOptions::default())
    }

    pub fn with_options(config: &SimulationConfig, options: SimulationOptions) -> Result<Self> {
        let mut capsule = config.validate()?;
        if config.auto_fictitious {
            capsule = insert_fictitious_strata(&capsule, config.fictitious_max_ratio)?;
        }
        let capsule = enforce_cfl(capsule, config.clamp_cfl)?;
        let schedule = build_schedule(&capsule)?;
        let grids = build_grids(&capsule);
        let strata = capsule.strata();
        let operators: Vec<StratumOperator> = grids
            .into_iter()
            .zip(strata)
            .map(|(g, s)| StratumOperator::new(g, s, config.scheme))
            .collect();

        let mut state_links = Vec::with_capacity(strata.len().saturating_sub(1));
        let mut links = Vec::with_capacity(strata.len().saturating_sub(1));
        for i in 1..strata.len() {
            let link = GhostLink::between(&strata[i - 1], &strata[i]);
            let (active_stratum, weight) = match link.active {
                Side::Inner => (i - 1, operators[i - 1].face_weight(operators[i - 1].len())),
                Side::Outer => (i, operators[i].face_weight(0)),
            };
            links.push(LinkCoefficients {
                d_hat_plus: harmonic_mean(strata[i - 1].d_plus, strata[i].d_plus),
                d_hat_minus: harmonic_mean(strata[i - 1].d_minus(), strata[i].d_minus()),
                weight,
                dt_active: strata[active_stratum].dt,
                active_stratum,
            });
            state_links.push(link);
        }

        let cells: Vec<Vec<f64>> = strata
            .iter()
            .zip(&operators)
            .map(|(s, op)| vec![s.c_init; op.len()])
            .collect();
        let alive = cells.iter().map(Vec::len).collect();
        let state = ConcentrationState {
            cells,
            alive,
            links: state_links,
            time: 0.0,
            tick: 0,
        };
        let initial_mass: f64 = operators
            .iter()
            .zip(&state.cells)
            .map(|(op, c)| op.mass(c))
            .sum();
        let c_scale = strata.iter().map(|s| s.c_init).fold(0.0, f64::max);
        let max_cells = operators.iter().map(StratumOperator::len).max().unwrap_or(0);

        let dt_min = schedule.dt_min;
        let ticks_for = |span: f64| (span / dt_min).round() as u64;
        let core_end = capsule.physical_indices().iter().rposition(|&p| p == 0).unwrap_or(0);
        let mut sim = Self {
            lambda: capsule.lambda(),
            core_end,
            r_outer: capsule.total_radius(),
            r_floor: capsule.core_radius(),
            countdown: schedule.multipliers.clone(),
            due: vec![false; strata.len()],
            scratch: vec![0.0; max_cells + 1],
            neg_floor: negativity_floor(if c_scale > 0.0 { c_scale } else { 1.0 }),
            total_ticks: ticks_for(config.t_end),
            output_ticks: ticks_for(config.output_every).max(1),
            profile_ticks: config.profile_every.map(|p| ticks_for(p).max(1)),
            erosion: config.erosion.clone(),
            capsule,
            operators,
            links,
            schedule,
            state,
            record: ReleaseRecord::new(initial_mass),
            profiles: Vec::new(),
            options,
            stats: RunStats::default(),
            status: RunStatus::Running,
        };
        sim.record.sample(0.0);
        if sim.profile_ticks.is_some() {
            sim.sample_profile();
        }
        Ok(sim)
    }

    pub fn capsule(&self) -> &ValidatedCapsule {
        &self.capsule
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn state(&self) -> &ConcentrationState {
        &self.state
    }

    pub fn operators(&self) -> &[StratumOperator] {
        &self.operators
    }

    pub fn record(&self) -> &ReleaseRecord {
        &self.record
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn total_ticks(&self) -> u64 {
        self.total_ticks
    }

    /// Mass currently inside the capsule, including amounts parked in link
    /// buffers.
    pub fn in_capsule_mass(&self) -> f64 {
        let cells: f64 = self
            .operators
            .iter()
            .enumerate()
            .map(|(i, op)| op.mass(self.state.stratum(i)))
            .sum();
        let buffered: f64 = self
            .state
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let passive = match l.passive() {
                    Side::Inner => i,
                    Side::Outer => i + 1,
                };
                l.buffer * self.operators[passive].mass_factor
            })
            .sum();
        cells + buffered
    }

    pub fn mass_residual(&self) -> f64 {
        mass_audit(self.in_capsule_mass(), &self.record)
    }

    fn sample_profile(&mut self) {
        let t = self.state.time;
        for (i, op) in self.operators.iter().enumerate() {
            let n = self.state.alive[i];
            for (r, c) in op.grid.centers[..n].iter().zip(&self.state.cells[i][..n]) {
                self.profiles.push(ProfilePoint { t, r: *r, c: *c });
            }
        }
    }

    /// Runs to `t_end`.
    pub fn advance(&mut self) -> Result<()> {
        let remaining = self.total_ticks.saturating_sub(self.state.tick);
        self.advance_ticks(remaining)
    }

    /// Advances at most `ticks` global ticks (stops early at `t_end` or when
    /// the capsule is fully eroded).
    pub fn advance_ticks(&mut self, ticks: u64) -> Result<()> {
        let start = Instant::now();
        let end = (self.state.tick + ticks).min(self.total_ticks);
        let result = (|| {
            while self.state.tick < end && self.status == RunStatus::Running {
                self.tick()?;
            }
            Ok(())
        })();
        if self.state.tick >= self.total_ticks && self.status == RunStatus::Running {
            self.status = RunStatus::Completed;
        }
        self.stats.runtime_s += start.elapsed().as_secs_f64();
        result
    }

    fn fault(&self, stratum: usize, detail: String) -> Error {
        Error::Stability {
            tick: self.state.tick,
            time: self.state.time,
            stratum: stratum + 1,
            detail,
        }
    }

    fn tick(&mut self) -> Result<()> {
        let n = self.state.tick;
        let dt_min = self.schedule.dt_min;
        let t_next = (n + 1) as f64 * dt_min;

        // (1) erosion
        let mut eroded = 0.0;
        if let Some(schedule) = &self.erosion {
            let r_now = radius_at(schedule, t_next, self.r_outer, self.r_floor);
            let out = retire_cells(&mut self.state, &self.operators, self.core_end, r_now);
            eroded = out.eroded_mass;
            // the core itself is never retired; reaching it ends the run
            if radius_at(schedule, t_next, self.r_outer, f64::NEG_INFINITY) <= self.r_floor
                && self.state.outermost() <= self.core_end
            {
                self.status = RunStatus::FullyEroded;
            }
        }

        for (i, (cd, due)) in self.countdown.iter_mut().zip(self.due.iter_mut()).enumerate() {
            *cd -= 1;
            *due = *cd == 0;
            if *due {
                *cd = self.schedule.multipliers[i];
            }
        }

        let outermost = self.state.outermost();

        // (2) interface fluxes from the pre-tick state
        for i in 0..outermost {
            let coeffs = &self.links[i];
            if !self.due[coeffs.active_stratum] {
                continue;
            }
            let inner = self.state.cells[i][self.state.alive[i] - 1];
            let outer = self.state.cells[i + 1][0];
            if self.options.count_inward && inner < outer {
                self.stats.inward_selections += 1;
            }
            let (dp, dm) = if self.options.directional {
                (coeffs.d_hat_plus, coeffs.d_hat_minus)
            } else {
                (coeffs.d_hat_plus, coeffs.d_hat_plus)
            };
            exchange_interface(&mut self.state.links[i], inner, outer, dp, dm, coeffs.weight, coeffs.dt_active);
        }

        // (3) stratum updates, outermost first
        let mut flux_mass = 0.0;
        for l in (0..=outermost).rev() {
            if !self.due[l] {
                continue;
            }
            let alive = self.state.alive[l];
            let op = &self.operators[l];
            let inner_flux = match l.checked_sub(1).map(|i| &self.state.links[i]) {
                Some(link) if link.active == Side::Outer => link.flux,
                _ => 0.0,
            };
            let outer_flux = if l == outermost {
                let cells = &self.state.cells[l][..alive];
                let f = op
                    .robin_flux(cells, self.lambda)
                    .ok_or_else(|| self.fault(l, "boundary too permeable for this grid (dr·λ > 1)".into()))?;
                flux_mass -= f * op.dt * op.mass_factor;
                f
            } else {
                let link = &self.state.links[l];
                if link.active == Side::Inner {
                    link.flux
                } else {
                    0.0
                }
            };

            let floor = self.neg_floor;
            let cells = &mut self.state.cells[l][..alive];
            let out = match (self.options.directional, self.options.count_inward) {
                (true, false) => op.step::<true, false>(cells, &mut self.scratch, inner_flux, outer_flux, floor),
                (true, true) => op.step::<true, true>(cells, &mut self.scratch, inner_flux, outer_flux, floor),
                (false, _) => op.step::<false, false>(cells, &mut self.scratch, inner_flux, outer_flux, floor),
            };
            self.stats.inward_selections += out.inward;
            self.stats.cell_updates += alive as u64;
            self.record.decayed_mass += out.decayed;

            if l > 0 && self.state.links[l - 1].active == Side::Inner {
                let pending = self.state.links[l - 1].drain();
                self.state.cells[l][0] += pending * op.measure(0);
            }
            if l < outermost && self.state.links[l].active == Side::Outer {
                let pending = self.state.links[l].drain();
                self.state.cells[l][alive - 1] += pending * op.measure(alive - 1);
            }
            if out.below_floor || self.state.cells[l][0] < self.neg_floor || self.state.cells[l][alive - 1] < self.neg_floor
            {
                let floor = self.neg_floor;
                let (j, c) = self.state.cells[l][..alive]
                    .iter()
                    .copied()
                    .enumerate()
                    .find(|&(_, c)| c < floor)
                    .unwrap_or((0, f64::NAN));
                return Err(self.fault(l, format!("negative concentration {c:e} in cell {}", j + 1)));
            }
        }

        // (4) release
        if flux_mass != 0.0 || eroded != 0.0 {
            accumulate_release(&mut self.record, flux_mass, eroded)?;
        }

        self.state.tick = n + 1;
        self.state.time = t_next;
        self.stats.ticks += 1;

        // (5) sampling
        if self.options.audit_every_tick {
            let r = self.mass_residual();
            if r > self.stats.max_audit_residual || r.is_nan() {
                self.stats.max_audit_residual = r;
            }
        }
        let tick = self.state.tick;
        if tick % self.output_ticks == 0 || tick == self.total_ticks {
            if self.record.last().map_or(true, |s| s.t < t_next) {
                self.record.sample(t_next);
            }
        }
        if let Some(p) = self.profile_ticks {
            if tick % p == 0 {
                self.sample_profile();
            }
        }
        Ok(())
    }

    /// Consumes the simulation and returns its outputs.
    pub fn finish(self) -> SimulationOutput {
        let final_in_capsule = self.in_capsule_mass();
        SimulationOutput {
            dt_min: self.schedule.dt_min,
            record: self.record,
            profiles: self.profiles,
            stats: self.stats,
            status: self.status,
            capsule: self.capsule,
            final_in_capsule,
        }
    }
}

/// Builds, runs, and finishes a simulation.
pub fn simulate(config: &SimulationConfig) -> Result<SimulationOutput> {
    simulate_with(config, SimulationOptions::default())
}

pub fn simulate_with(config: &SimulationConfig, options: SimulationOptions) -> Result<SimulationOutput> {
    let mut sim = Simulation::with_options(config, options)?;
    sim.advance()?;
    Ok(sim.finish())
}
