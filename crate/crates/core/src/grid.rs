//! Per-stratum uniform grids, the explicit stability bound, and grading of
//! large dr jumps with fictitious strata.

use std::f64::consts::PI;

use crate::capsule::{integer_ratio, validate_capsule, StratumSpec, ValidatedCapsule, MULTIPLE_TOLERANCE};
use crate::error::{Error, Result};
use crate::kernel::harmonic_mean;

/// Safety factor applied to the stability bound when choosing time steps
/// automatically.
pub const CFL_SAFETY: f64 = 0.9;

/// Minimum number of cells in an inserted fictitious stratum.
pub const MIN_FICTITIOUS_CELLS: usize = 4;

/// Uniform cell partition of one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumGrid {
    pub stratum: usize,
    pub dr: f64,
    pub dt: f64,
    /// Cell centres `r_j`.
    pub centers: Vec<f64>,
    /// Face radii `r_{j-½}` for `j = 1..=N+1` (N + 1 entries).
    pub faces: Vec<f64>,
    /// Face areas `4π r²` (N + 1 entries).
    pub areas: Vec<f64>,
    /// Cell volumes (N entries).
    pub volumes: Vec<f64>,
}

impl StratumGrid {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn inner_radius(&self) -> f64 {
        self.faces[0]
    }

    pub fn outer_radius(&self) -> f64 {
        *self.faces.last().unwrap()
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }
}

/// Builds the uniform grid of `stratum` spanning `[r_inner, r_outer]`.
pub fn build_grid(index: usize, stratum: &StratumSpec, r_inner: f64, r_outer: f64) -> StratumGrid {
    let n = integer_ratio(r_outer - r_inner, stratum.dr)
        .or_else(|| integer_ratio(stratum.thickness, stratum.dr))
        .unwrap_or(1) as usize;
    let span = r_outer - r_inner;
    // Last face lands exactly on r_outer so neighbouring grids share it.
    let faces: Vec<f64> = (0..=n)
        .map(|f| if f == n { r_outer } else { r_inner + span * (f as f64) / (n as f64) })
        .collect();
    let centers = faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let areas = faces.iter().map(|r| 4.0 * PI * r * r).collect();
    let volumes = faces
        .windows(2)
        .map(|w| crate::capsule::shell_volume(w[0], w[1]))
        .collect();
    StratumGrid {
        stratum: index,
        dr: stratum.dr,
        dt: stratum.dt,
        centers,
        faces,
        areas,
        volumes,
    }
}

/// Grids for every stratum of a validated capsule.
pub fn build_grids(capsule: &ValidatedCapsule) -> Vec<StratumGrid> {
    capsule
        .strata()
        .iter()
        .enumerate()
        .map(|(i, s)| build_grid(i, s, capsule.inner_radius(i), capsule.outer_radius(i)))
        .collect()
}

/// Stability bound `dr²/(2·D_max)`; `+∞` for a stratum with no diffusion.
pub fn cfl_max_dt(dr: f64, d_max: f64) -> f64 {
    if d_max <= 0.0 {
        f64::INFINITY
    } else {
        dr * dr / (2.0 * d_max)
    }
}

/// Largest interface diffusivity stratum `i` can see: its own D± and the
/// harmonic means at both of its interfaces.
pub fn stratum_d_max(strata: &[StratumSpec], i: usize) -> f64 {
    let s = &strata[i];
    let mut d = s.d_plus.max(s.d_minus());
    for j in [i.checked_sub(1), Some(i + 1)].into_iter().flatten() {
        if let Some(n) = strata.get(j) {
            d = d
                .max(harmonic_mean(s.d_plus, n.d_plus))
                .max(harmonic_mean(s.d_minus(), n.d_minus()));
        }
    }
    d
}

/// Sides of a stratum interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Inner,
    Outer,
}

/// Coupling between two neighbouring strata.
///
/// The `active` side owns the interface: it evaluates the flux with a ghost
/// cell of its own size whose value is the neighbouring cell, and every mass
/// transfer it makes is mirrored into `buffer`. The passive side receives the
/// buffered amount on its next update, after which the buffer is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostLink {
    pub active: Side,
    /// Last ghost value read by the active side.
    pub ghost: f64,
    /// Flux computed for the active side's current update.
    pub flux: f64,
    /// Pending amount for the passive side, in flux·time units of the scheme.
    pub buffer: f64,
}

impl GhostLink {
    /// Active side is the one updated more often; ties go to the finer grid,
    /// then to the outer stratum.
    pub fn between(inner: &StratumSpec, outer: &StratumSpec) -> Self {
        let active = if inner.dt < outer.dt * (1.0 - MULTIPLE_TOLERANCE) {
            Side::Inner
        } else if outer.dt < inner.dt * (1.0 - MULTIPLE_TOLERANCE) {
            Side::Outer
        } else if inner.dr < outer.dr * (1.0 - MULTIPLE_TOLERANCE) {
            Side::Inner
        } else {
            Side::Outer
        };
        Self {
            active,
            ghost: 0.0,
            flux: 0.0,
            buffer: 0.0,
        }
    }

    /// Records a flux evaluated by the active side over `dt`.
    ///
    /// `flux` is positive when mass moves inward across the interface.
    #[inline]
    pub fn record(&mut self, flux: f64, dt: f64) {
        self.flux = flux;
        match self.active {
            // inner gains flux·dt, so the outer passive cell loses it
            Side::Inner => self.buffer -= flux * dt,
            Side::Outer => self.buffer += flux * dt,
        }
    }

    /// Takes the pending amount, leaving the buffer at zero.
    #[inline]
    pub fn drain(&mut self) -> f64 {
        std::mem::take(&mut self.buffer)
    }

    pub fn passive(&self) -> Side {
        match self.active {
            Side::Inner => Side::Outer,
            Side::Outer => Side::Inner,
        }
    }
}

/// Factor `q` into integers no larger than `cap`, balanced by first-fit
/// decreasing over its prime factors. Returns `None` when a prime exceeds `cap`.
fn grading_factors(q: u64, cap: u64) -> Option<Vec<u64>> {
    let mut primes = Vec::new();
    let mut n = q;
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            primes.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        primes.push(n);
    }
    if primes.iter().any(|&p| p > cap) {
        return None;
    }
    primes.sort_unstable_by(|a, b| b.cmp(a));
    let mut bins: Vec<u64> = Vec::new();
    for p in primes {
        match bins.iter_mut().find(|b| **b * p <= cap) {
            Some(b) => *b *= p,
            None => bins.push(p),
        }
    }
    bins.sort_unstable_by(|a, b| b.cmp(a));
    Some(bins)
}

struct Insertion {
    strata: Vec<StratumSpec>,
    carved: f64,
}

/// Plans the fictitious strata between `coarse` and `fine`, ordered from the
/// coarse side towards the fine side.
fn plan_grading(
    coarse: &StratumSpec,
    fine: &StratumSpec,
    coarse_parent: usize,
    dt_min: f64,
    max_ratio: f64,
    location: &str,
) -> Result<Insertion> {
    let q = integer_ratio(coarse.dr, fine.dr).ok_or_else(|| {
        Error::single(location, "dr values are not integer multiples of one another")
    })?;
    let cap = (max_ratio * (1.0 + MULTIPLE_TOLERANCE)).floor() as u64;
    let factors = grading_factors(q, cap.max(1)).ok_or_else(|| {
        Error::single(
            location,
            format!("dr ratio {q} cannot be graded with steps of at most {max_ratio}; use a larger fictitious_max_ratio"),
        )
    })?;
    let k_coarse = integer_ratio(coarse.dt, dt_min).unwrap_or(1);
    let k_fine = integer_ratio(fine.dt, dt_min).unwrap_or(1);

    let mut out = Vec::new();
    let mut carved = 0.0;
    let mut cumulative = 1u64;
    let mut prev_k = k_coarse;
    for &f in &factors[..factors.len() - 1] {
        cumulative *= f;
        let dr = coarse.dr / cumulative as f64;
        let cells_per_coarse = cumulative as usize;
        let thickness_in_coarse = MIN_FICTITIOUS_CELLS.div_ceil(cells_per_coarse).max(1);
        let thickness = coarse.dr * thickness_in_coarse as f64;

        let mut proto = coarse.clone();
        proto.dr = dr;
        proto.thickness = thickness;
        proto.fictitious = true;
        proto.parent = Some(coarse_parent + 1);
        let d_max = [coarse, fine]
            .iter()
            .map(|n| {
                proto
                    .d_plus
                    .max(proto.d_minus())
                    .max(harmonic_mean(proto.d_plus, n.d_plus))
                    .max(harmonic_mean(proto.d_minus(), n.d_minus()))
            })
            .fold(0.0, f64::max);
        let bound = CFL_SAFETY * cfl_max_dt(dr, d_max);
        let k = (1..=prev_k)
            .rev()
            .filter(|k| prev_k % k == 0)
            .filter(|&k| k_fine % k == 0 || k % k_fine == 0)
            .find(|&k| k as f64 * dt_min <= bound)
            .ok_or_else(|| {
                Error::single(
                    location,
                    format!("no admissible time step for a fictitious stratum with dr = {dr}"),
                )
            })?;
        proto.dt = k as f64 * dt_min;
        prev_k = k;
        carved += thickness;
        out.push(proto);
    }
    Ok(Insertion { strata: out, carved })
}

/// Inserts fictitious strata wherever the dr ratio across an interface
/// exceeds `max_ratio`. Inserted strata are carved from the coarser neighbour,
/// inherit its physics, and keep the original interface radii unchanged.
pub fn insert_fictitious_strata(capsule: &ValidatedCapsule, max_ratio: f64) -> Result<ValidatedCapsule> {
    if !(max_ratio >= 1.0) {
        return Err(Error::single("fictitious_max_ratio", "must be at least 1"));
    }
    let strata = capsule.strata();
    let physical = capsule.physical_indices();
    let dt_min = capsule.dt_min();
    let n = strata.len();

    // before[i]: inserted at the inner side of stratum i; after[i]: at its outer side.
    let mut before: Vec<Vec<StratumSpec>> = vec![Vec::new(); n];
    let mut after: Vec<Vec<StratumSpec>> = vec![Vec::new(); n];
    let mut carve = vec![0.0; n];
    let mut changed = false;
    for i in 1..n {
        let (a, b) = (&strata[i - 1], &strata[i]);
        let ratio = a.dr.max(b.dr) / a.dr.min(b.dr);
        if ratio <= max_ratio * (1.0 + MULTIPLE_TOLERANCE) {
            continue;
        }
        changed = true;
        let location = format!("interface[{i}]");
        if a.dr > b.dr {
            let plan = plan_grading(a, b, physical[i - 1], dt_min, max_ratio, &location)?;
            carve[i - 1] += plan.carved;
            after[i - 1] = plan.strata;
        } else {
            let plan = plan_grading(b, a, physical[i], dt_min, max_ratio, &location)?;
            carve[i] += plan.carved;
            before[i] = plan.strata.into_iter().rev().collect();
        }
    }
    if !changed {
        return Ok(capsule.clone());
    }

    let mut out = Vec::new();
    for i in 0..n {
        let mut s = strata[i].clone();
        if carve[i] > 0.0 {
            let remaining = s.thickness - carve[i];
            if remaining < s.dr * (1.0 - MULTIPLE_TOLERANCE) {
                return Err(Error::single(
                    format!("stratum[{}]", i + 1),
                    format!(
                        "stratum too thin to split at the requested grading (needs {} µm); use a larger fictitious_max_ratio",
                        carve[i] + s.dr
                    ),
                ));
            }
            let cells = (remaining / s.dr).round();
            s.thickness = cells * s.dr;
        }
        out.extend(before[i].iter().cloned());
        out.push(s);
        out.extend(after[i].iter().cloned());
    }
    let graded = crate::capsule::CapsuleSpec {
        strata: out,
        lambda: capsule.lambda(),
    };
    validate_capsule(&graded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsule::CapsuleSpec;

    fn stratum(thickness: f64, dr: f64, dt: f64) -> StratumSpec {
        StratumSpec::new(thickness, 0.5, 1.0, 0.0, 1.0, dr, dt)
    }

    #[test]
    fn core_grid_geometry() {
        let g = build_grid(0, &stratum(100.0, 1.0, 0.1), 0.0, 100.0);
        assert_eq!(g.len(), 100);
        assert_eq!(g.centers[0], 0.5);
        assert_eq!(g.areas[0], 0.0);
        // the first cell is the ball of radius r_{3/2} = 1
        let v1 = 4.0 / 3.0 * PI;
        assert!((g.volumes[0] - v1).abs() / v1 < 1e-14);
        let total = g.total_volume();
        let exact = 4.0 / 3.0 * PI * 1e6;
        assert!((total - exact).abs() / exact < 1e-12);
    }

    #[test]
    fn single_cell_is_whole_sphere() {
        let g = build_grid(0, &stratum(7.0, 7.0, 0.1), 0.0, 7.0);
        assert_eq!(g.len(), 1);
        let v = 4.0 / 3.0 * PI * 343.0;
        assert!((g.volumes[0] - v).abs() / v < 1e-15);
    }

    #[test]
    fn reference_sphere_total_mass() {
        let g = build_grid(0, &stratum(100.0, 1.0, 0.1), 0.0, 100.0);
        let mass: f64 = g.volumes.iter().map(|v| v * 1.0).sum();
        assert!((mass - 4.18879e6).abs() < 10.0, "{mass}");
    }

    #[test]
    fn thin_shell_volume_telescopes() {
        let g = build_grid(3, &stratum(0.018, 0.001, 0.01), 285.65, 285.668);
        let exact = crate::capsule::shell_volume(285.65, 285.668);
        assert!((g.total_volume() - exact).abs() / exact < 1e-12);
    }

    #[test]
    fn cfl_bounds_of_validation_grids() {
        assert_eq!(cfl_max_dt(1.0, 0.5), 1.0);
        assert!((cfl_max_dt(0.1, 0.5) - 0.01).abs() < 1e-15);
        assert!((cfl_max_dt(0.01, 0.5) - 1e-4).abs() < 1e-18);
        assert!(0.1 <= cfl_max_dt(1.0, 0.5));
        assert!(1e-3 <= cfl_max_dt(0.1, 0.5));
        assert!(1e-5 <= cfl_max_dt(0.01, 0.5));
        assert_eq!(cfl_max_dt(1.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn link_orientation() {
        let coarse = stratum(75.0, 1.0, 0.02);
        let fine = stratum(25.0, 0.1, 0.001);
        assert_eq!(GhostLink::between(&coarse, &fine).active, Side::Outer);
        assert_eq!(GhostLink::between(&fine, &coarse).active, Side::Inner);
        let same = stratum(50.0, 1.0, 0.1);
        assert_eq!(GhostLink::between(&same, &same).active, Side::Outer);
    }

    #[test]
    fn buffer_mirrors_active_side() {
        let mut link = GhostLink::between(&stratum(1.0, 1.0, 0.02), &stratum(1.0, 0.1, 0.001));
        link.record(2.0, 0.001);
        link.record(-1.0, 0.001);
        // active outer: inner passive receives +flux·dt
        assert!((link.buffer - 0.001).abs() < 1e-18);
        assert!((link.drain() - 0.001).abs() < 1e-18);
        assert_eq!(link.buffer, 0.0);
    }

    #[test]
    fn grading_factorisation() {
        assert_eq!(grading_factors(100, 10).unwrap(), vec![10, 10]);
        assert_eq!(grading_factors(8, 10).unwrap(), vec![8]);
        assert!(grading_factors(13, 10).is_none());
    }

    #[test]
    fn no_op_when_within_ratio() {
        let spec = CapsuleSpec {
            strata: vec![stratum(10.0, 1.0, 0.1), stratum(1.0, 0.1, 0.001)],
            lambda: 1.0,
        };
        let v = validate_capsule(&spec).unwrap();
        assert_eq!(insert_fictitious_strata(&v, 10.0).unwrap(), v);
    }

    #[test]
    fn one_fictitious_stratum_for_hundredfold_jump() {
        let spec = CapsuleSpec {
            strata: vec![stratum(20.0, 1.0, 0.1), stratum(1.0, 0.01, 0.0001)],
            lambda: 1.0,
        };
        let v = validate_capsule(&spec).unwrap();
        let g = insert_fictitious_strata(&v, 10.0).unwrap();
        assert_eq!(g.len(), 3);
        let drs: Vec<f64> = g.strata().iter().map(|s| s.dr).collect();
        assert!((drs[1] - 0.1).abs() < 1e-15);
        assert!((drs[0] / drs[1] - 10.0).abs() < 1e-9);
        assert!((drs[1] / drs[2] - 10.0).abs() < 1e-9);
        assert!(g.strata()[1].fictitious);
        assert_eq!(g.physical_indices(), &[0, 0, 1]);
        assert!(g.strata()[1].cell_count() >= MIN_FICTITIOUS_CELLS);
        // interface radius between the physical strata is unchanged
        assert!((g.outer_radius(1) - v.outer_radius(0)).abs() < 1e-12);
        let total_before: f64 = v.strata().iter().map(|s| s.thickness).sum();
        let total_after: f64 = g.strata().iter().map(|s| s.thickness).sum();
        assert!((total_before - total_after).abs() < 1e-12);
        assert!((g.initial_mass() - v.initial_mass()).abs() / v.initial_mass() < 1e-12);
        // stability of the inserted stratum
        let s = &g.strata()[1];
        assert!(s.dt <= CFL_SAFETY * cfl_max_dt(s.dr, 0.5));
    }

    #[test]
    fn fictitious_on_inner_side_of_coarse_outer_stratum() {
        let spec = CapsuleSpec {
            strata: vec![stratum(1.0, 0.01, 0.0001), stratum(20.0, 1.0, 0.1)],
            lambda: 0.5,
        };
        let v = validate_capsule(&spec).unwrap();
        let g = insert_fictitious_strata(&v, 10.0).unwrap();
        let drs: Vec<f64> = g.strata().iter().map(|s| s.dr).collect();
        assert_eq!(drs.len(), 3);
        assert!((drs[1] - 0.1).abs() < 1e-15);
        assert_eq!(g.physical_indices(), &[0, 1, 1]);
        assert_eq!(g.strata()[1].parent, Some(2));
        // re-validating the graded capsule is stable
        assert_eq!(validate_capsule(g.spec()).unwrap(), g);
    }

    #[test]
    fn too_thin_to_split() {
        let spec = CapsuleSpec {
            strata: vec![stratum(1.0, 1.0, 0.1), stratum(1.0, 0.01, 0.0001)],
            lambda: 1.0,
        };
        let v = validate_capsule(&spec).unwrap();
        let err = insert_fictitious_strata(&v, 10.0).unwrap_err();
        assert!(err.to_string().contains("larger fictitious_max_ratio"), "{err}");
    }
}
