//! Physical description of a capsule and of a simulation run.
//!
//! Units are fixed throughout the crate: lengths in µm, times in s, masses
//! in µg, concentrations in µg/µm³, diffusivities in µm²/s. The outer
//! mass-transfer coefficient λ enters the boundary condition
//! `∂c/∂r = −λ c`, so the product `dr·λ` is dimensionless.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::erosion::ErosionSchedule;
use crate::error::{Error, Result, ValidationErrors};

/// Relative tolerance used when checking that one floating-point step is an
/// integer multiple of another.
pub const MULTIPLE_TOLERANCE: f64 = 1e-9;

/// Returns `Some(k)` when `value ≈ k·step` for an integer `k ≥ 1`.
pub fn integer_ratio(value: f64, step: f64) -> Option<u64> {
    if !(value > 0.0 && step > 0.0) || !value.is_finite() || !step.is_finite() {
        return None;
    }
    let q = value / step;
    let k = q.round();
    if k >= 1.0 && (q - k).abs() <= MULTIPLE_TOLERANCE * k.max(1.0) {
        Some(k as u64)
    } else {
        None
    }
}

/// One concentric shell (or the core) with its physics and numerics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSpec {
    /// Thickness ΔR [µm].
    pub thickness: f64,
    /// Outward diffusivity D⁺ [µm²/s].
    pub d_plus: f64,
    /// Anisotropic factor α = D⁻/D⁺.
    pub alpha: f64,
    /// Decay / binding rate β [1/s].
    pub beta: f64,
    /// Initial concentration [µg/µm³].
    pub c_init: f64,
    /// Grid step [µm].
    pub dr: f64,
    /// Time step [s].
    pub dt: f64,
    /// Purely numerical partition of a physical stratum.
    #[serde(default)]
    pub fictitious: bool,
    /// 1-based physical stratum a fictitious partition belongs to. When absent
    /// the partition belongs to the nearest preceding physical stratum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
}

impl StratumSpec {
    /// Convenience constructor for a physical stratum.
    pub fn new(thickness: f64, d_plus: f64, alpha: f64, beta: f64, c_init: f64, dr: f64, dt: f64) -> Self {
        Self {
            thickness,
            d_plus,
            alpha,
            beta,
            c_init,
            dr,
            dt,
            fictitious: false,
            parent: None,
        }
    }

    /// Inward diffusivity D⁻ = α·D⁺. Never configured directly.
    #[inline]
    pub fn d_minus(&self) -> f64 {
        self.alpha * self.d_plus
    }

    /// Number of cells, assuming validation passed.
    pub fn cell_count(&self) -> usize {
        integer_ratio(self.thickness, self.dr).unwrap_or(1) as usize
    }

    fn same_physics(&self, other: &StratumSpec) -> bool {
        self.d_plus == other.d_plus
            && self.alpha == other.alpha
            && self.beta == other.beta
            && self.c_init == other.c_init
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapsuleSpec {
    /// Strata from the core (index 0) outwards.
    pub strata: Vec<StratumSpec>,
    /// Outer mass-transfer coefficient λ. `f64::INFINITY` selects the
    /// perfect-sink limit, capped on the grid at `dr·λ = 1`.
    pub lambda: f64,
}

/// Explicit scheme variant used by the finite-volume kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SchemeFlavor {
    /// Exact interface areas and cell volumes; discrete mass is conserved to
    /// round-off.
    #[default]
    #[serde(rename = "conservative")]
    Conservative,
    /// Literal `1/(dr·r_j²)` and `r_{j+½}²` weights.
    #[serde(rename = "paper", alias = "paper_form")]
    PaperForm,
}

impl SchemeFlavor {
    pub fn name(self) -> &'static str {
        match self {
            SchemeFlavor::Conservative => "conservative",
            SchemeFlavor::PaperForm => "paper",
        }
    }
}

impl std::str::FromStr for SchemeFlavor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conservative" => Ok(SchemeFlavor::Conservative),
            "paper" | "paper_form" => Ok(SchemeFlavor::PaperForm),
            other => Err(format!("unknown scheme '{other}' (expected conservative or paper)")),
        }
    }
}

pub const DEFAULT_FICTITIOUS_MAX_RATIO: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub capsule: CapsuleSpec,
    /// Final time [s]; rounded to a multiple of the smallest time step.
    pub t_end: f64,
    /// Fixed domain when `None`.
    pub erosion: Option<ErosionSchedule>,
    /// Release sampling interval [s].
    pub output_every: f64,
    /// Concentration-profile sampling interval [s]; no profiles when `None`.
    pub profile_every: Option<f64>,
    pub scheme: SchemeFlavor,
    /// Largest tolerated dr ratio across an interface.
    pub fictitious_max_ratio: f64,
    /// Insert fictitious strata where the ratio is exceeded; otherwise the
    /// violation is a validation error.
    pub auto_fictitious: bool,
    /// Scale every time step down instead of failing when a CFL bound is violated.
    pub clamp_cfl: bool,
}

impl SimulationConfig {
    pub fn new(capsule: CapsuleSpec, t_end: f64, output_every: f64) -> Self {
        Self {
            capsule,
            t_end,
            erosion: None,
            output_every,
            profile_every: None,
            scheme: SchemeFlavor::Conservative,
            fictitious_max_ratio: DEFAULT_FICTITIOUS_MAX_RATIO,
            auto_fictitious: true,
            clamp_cfl: false,
        }
    }

    /// Checks the run-level invariants and the capsule.
    pub fn validate(&self) -> Result<ValidatedCapsule> {
        let mut errs = ValidationErrors::default();
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            errs.push("t_end", "must be a finite non-negative time");
        }
        if !(self.output_every > 0.0 && self.output_every.is_finite()) {
            errs.push("output_every", "must be positive");
        }
        if let Some(p) = self.profile_every {
            if !(p > 0.0 && p.is_finite()) {
                errs.push("profile_every", "must be positive");
            }
        }
        if !(self.fictitious_max_ratio >= 1.0) {
            errs.push("fictitious_max_ratio", "must be at least 1");
        }
        let capsule = match validate_capsule(&self.capsule) {
            Ok(c) => Some(c),
            Err(Error::Validation(inner)) => {
                errs.0.extend(inner.0);
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(c) = &capsule {
            if !self.auto_fictitious {
                for issue in ratio_violations(c, self.fictitious_max_ratio) {
                    errs.0.push(issue);
                }
            }
            if let Some(schedule) = &self.erosion {
                if let Err(Error::Validation(inner)) = schedule.check_against(c) {
                    errs.0.extend(inner.0);
                }
            }
            check_boundary_permeability(c, self.erosion.is_some(), &mut errs);
        }
        errs.into_result()?;
        Ok(capsule.expect("validated capsule"))
    }
}

/// A capsule whose invariants have all been checked, with derived geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedCapsule {
    spec: CapsuleSpec,
    radii: Vec<f64>,
    physical: Vec<usize>,
}

impl ValidatedCapsule {
    pub fn spec(&self) -> &CapsuleSpec {
        &self.spec
    }

    pub fn strata(&self) -> &[StratumSpec] {
        &self.spec.strata
    }

    pub fn len(&self) -> usize {
        self.spec.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.strata.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.spec.lambda
    }

    /// Outer radii `R_1..R_L`.
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn inner_radius(&self, stratum: usize) -> f64 {
        if stratum == 0 {
            0.0
        } else {
            self.radii[stratum - 1]
        }
    }

    pub fn outer_radius(&self, stratum: usize) -> f64 {
        self.radii[stratum]
    }

    pub fn total_radius(&self) -> f64 {
        *self.radii.last().expect("non-empty capsule")
    }

    /// 0-based physical stratum of each numerical stratum.
    pub fn physical_indices(&self) -> &[usize] {
        &self.physical
    }

    /// Radius of the physical core (erosion floor), which may span several
    /// numerical partitions.
    pub fn core_radius(&self) -> f64 {
        let last_core = self.physical.iter().rposition(|&p| p == 0).unwrap_or(0);
        self.radii[last_core]
    }

    pub fn dt_min(&self) -> f64 {
        self.spec
            .strata
            .iter()
            .map(|s| s.dt)
            .fold(f64::INFINITY, f64::min)
    }

    /// Exact initial mass Σ c₀·(4/3)π(R_ℓ³ − R_{ℓ−1}³).
    pub fn initial_mass(&self) -> f64 {
        self.spec
            .strata
            .iter()
            .enumerate()
            .map(|(i, s)| s.c_init * shell_volume(self.inner_radius(i), self.outer_radius(i)))
            .sum()
    }
}

/// Volume of the shell between two radii, in a factored form that stays
/// accurate for very thin shells.
pub fn shell_volume(inner: f64, outer: f64) -> f64 {
    4.0 / 3.0 * PI * (outer - inner) * (outer * outer + outer * inner + inner * inner)
}

/// Prefix sums of the thicknesses: `(R_1, …, R_L)`.
pub fn derive_radii(strata: &[StratumSpec]) -> Result<Vec<f64>> {
    let mut errs = ValidationErrors::default();
    for (i, s) in strata.iter().enumerate() {
        if !(s.thickness > 0.0 && s.thickness.is_finite()) {
            errs.push(format!("stratum[{}].thickness", i + 1), "thickness must be positive");
        }
    }
    errs.into_result()?;
    let mut acc = 0.0;
    Ok(strata
        .iter()
        .map(|s| {
            acc += s.thickness;
            acc
        })
        .collect())
}

/// Checks every capsule invariant and derives radii and the physical-stratum
/// mapping. All violations are reported together.
pub fn validate_capsule(spec: &CapsuleSpec) -> Result<ValidatedCapsule> {
    let mut errs = ValidationErrors::default();
    if spec.strata.is_empty() {
        errs.push("capsule", "at least one stratum is required");
        return Err(Error::Validation(errs));
    }
    if !(spec.lambda >= 0.0) {
        errs.push("lambda", "mass-transfer coefficient must be non-negative");
    }
    for (i, s) in spec.strata.iter().enumerate() {
        let at = |field: &str| format!("stratum[{}].{field}", i + 1);
        if !(s.thickness > 0.0 && s.thickness.is_finite()) {
            errs.push(at("thickness"), "thickness must be positive");
        }
        if !(s.d_plus >= 0.0 && s.d_plus.is_finite()) {
            errs.push(at("d_plus"), "negative parameter: diffusivity must be non-negative");
        }
        if !(s.alpha >= 0.0 && s.alpha.is_finite()) {
            errs.push(at("alpha"), "negative parameter: anisotropic factor must be non-negative");
        }
        if !(s.beta >= 0.0 && s.beta.is_finite()) {
            errs.push(at("beta"), "negative parameter: decay rate must be non-negative");
        }
        if !(s.c_init >= 0.0 && s.c_init.is_finite()) {
            errs.push(at("c_init"), "negative parameter: initial concentration must be non-negative");
        }
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            errs.push(at("dt"), "time step must be positive");
        }
        if !(s.dr > 0.0 && s.dr.is_finite()) {
            errs.push(at("dr"), "grid step must be positive");
        } else if s.thickness > 0.0 && integer_ratio(s.thickness, s.dr).is_none() {
            errs.push(at("dr"), format!("dr does not divide thickness ({} / {})", s.thickness, s.dr));
        }
    }
    if spec.strata[0].fictitious {
        errs.push("stratum[1].fictitious", "the innermost stratum cannot be fictitious");
    }
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }

    let dt_min = spec.strata.iter().map(|s| s.dt).fold(f64::INFINITY, f64::min);
    let mut k = Vec::with_capacity(spec.strata.len());
    for (i, s) in spec.strata.iter().enumerate() {
        match integer_ratio(s.dt, dt_min) {
            Some(m) => k.push(m),
            None => {
                errs.push(
                    format!("stratum[{}].dt", i + 1),
                    format!("dt {} is not a multiple of the smallest time step {dt_min}", s.dt),
                );
                k.push(0);
            }
        }
    }
    for i in 1..spec.strata.len() {
        let (a, b) = (&spec.strata[i - 1], &spec.strata[i]);
        let (hi, lo) = if a.dr >= b.dr { (a.dr, b.dr) } else { (b.dr, a.dr) };
        if integer_ratio(hi, lo).is_none() {
            errs.push(
                format!("interface[{}]", i),
                format!("dr {} and {} are not integer multiples of one another", a.dr, b.dr),
            );
        }
        let (ka, kb) = (k[i - 1], k[i]);
        if ka > 0 && kb > 0 && ka.max(kb) % ka.min(kb) != 0 {
            errs.push(
                format!("interface[{}]", i),
                format!("time steps {} and {} are not nested (one must divide the other)", a.dt, b.dt),
            );
        }
    }

    let physical = physical_mapping(&spec.strata, &mut errs);
    errs.into_result()?;

    let radii = derive_radii(&spec.strata)?;
    Ok(ValidatedCapsule {
        spec: spec.clone(),
        radii,
        physical,
    })
}

pub(crate) fn physical_mapping(strata: &[StratumSpec], errs: &mut ValidationErrors) -> Vec<usize> {
    let physical_count = strata.iter().filter(|s| !s.fictitious).count();
    let mut out = Vec::with_capacity(strata.len());
    let mut current = 0usize;
    let mut seen = 0usize;
    for (i, s) in strata.iter().enumerate() {
        if !s.fictitious {
            current = seen;
            seen += 1;
            out.push(current);
            continue;
        }
        let idx = match s.parent {
            Some(p) if p >= 1 && p <= physical_count => p - 1,
            Some(p) => {
                errs.push(format!("stratum[{}].parent", i + 1), format!("no physical stratum {p}"));
                current
            }
            None => current,
        };
        out.push(idx);
    }
    // Partitions of one physical stratum must be contiguous and share physics.
    for i in 1..strata.len() {
        if out[i] < out[i - 1] {
            errs.push(format!("stratum[{}].parent", i + 1), "partitions are out of order");
        }
    }
    for (i, s) in strata.iter().enumerate() {
        if s.fictitious {
            if let Some(j) = strata
                .iter()
                .zip(&out)
                .position(|(t, &p)| !t.fictitious && p == out[i])
            {
                if !s.same_physics(&strata[j]) {
                    errs.push(
                        format!("stratum[{}]", i + 1),
                        "fictitious partition must share the physics of its parent stratum",
                    );
                }
            }
        }
    }
    out
}

/// Interfaces where the dr ratio exceeds `max_ratio`.
pub fn ratio_violations(capsule: &ValidatedCapsule, max_ratio: f64) -> Vec<crate::error::ValidationIssue> {
    let s = capsule.strata();
    (1..s.len())
        .filter_map(|i| {
            let ratio = s[i - 1].dr.max(s[i].dr) / s[i - 1].dr.min(s[i].dr);
            (ratio > max_ratio * (1.0 + MULTIPLE_TOLERANCE)).then(|| {
                crate::error::ValidationIssue::new(
                    format!("interface[{i}]"),
                    format!("dr ratio {ratio} exceeds fictitious_max_ratio {max_ratio}"),
                )
            })
        })
        .collect()
}

/// `dr·λ ≤ 1` for every stratum that can carry the outer boundary.
fn check_boundary_permeability(capsule: &ValidatedCapsule, eroding: bool, errs: &mut ValidationErrors) {
    let lambda = capsule.lambda();
    if !lambda.is_finite() {
        return;
    }
    let last = capsule.len() - 1;
    let exposed: Vec<usize> = if eroding {
        (0..=last)
            .filter(|&i| i == last || capsule.outer_radius(i) >= capsule.core_radius())
            .collect()
    } else {
        vec![last]
    };
    for i in exposed {
        let dr = capsule.strata()[i].dr;
        if dr * lambda > 1.0 {
            errs.push(
                format!("stratum[{}].dr", i + 1),
                format!("boundary too permeable for this grid (dr·λ = {} > 1)", dr * lambda),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stratum(thickness: f64, dr: f64, dt: f64) -> StratumSpec {
        StratumSpec::new(thickness, 0.5, 1.0, 0.0, 1.0, dr, dt)
    }

    #[test]
    fn radii_single_and_graded_core() {
        assert_eq!(derive_radii(&[stratum(100.0, 1.0, 0.1)]).unwrap(), vec![100.0]);
        let r = derive_radii(&[stratum(280.0, 35.0, 1.0), stratum(5.0, 0.5, 0.05), stratum(0.65, 0.005, 0.01)])
            .unwrap();
        assert_eq!(r[0], 280.0);
        assert_eq!(r[1], 285.0);
        assert!((r[2] - 285.65).abs() < 1e-12);
    }

    #[test]
    fn radii_eight_stratum_shell() {
        let mut strata = vec![stratum(285.65, 0.05, 1.0)];
        strata.extend((0..8).map(|_| stratum(0.018, 0.001, 0.01)));
        let r = derive_radii(&strata).unwrap();
        assert!((r.last().unwrap() - 285.794).abs() < 1e-10);
    }

    #[test]
    fn non_positive_thickness_names_stratum() {
        let err = derive_radii(&[stratum(1.0, 1.0, 1.0), stratum(0.0, 1.0, 1.0)]).unwrap_err();
        assert!(err.to_string().contains("stratum[2].thickness"), "{err}");
    }

    #[test]
    fn dr_must_divide_thickness() {
        let spec = CapsuleSpec {
            strata: vec![stratum(1.0, 0.3, 0.1)],
            lambda: 1.0,
        };
        let Err(Error::Validation(errs)) = validate_capsule(&spec) else {
            panic!("expected validation error")
        };
        assert!(errs.mentions("dr does not divide thickness"));
    }

    #[test]
    fn dt_sequence_multiples_of_min() {
        let spec = CapsuleSpec {
            strata: vec![stratum(280.0, 35.0, 1.0), stratum(5.0, 0.5, 0.05), stratum(0.65, 0.005, 0.01)],
            lambda: 0.05,
        };
        let v = validate_capsule(&spec).unwrap();
        assert!((v.dt_min() - 0.01).abs() < 1e-15);
        let ks: Vec<u64> = v.strata().iter().map(|s| integer_ratio(s.dt, 0.01).unwrap()).collect();
        assert_eq!(ks, vec![100, 5, 1]);
    }

    #[test]
    fn every_violation_is_reported() {
        let mut bad = stratum(1.0, 0.3, 0.1);
        bad.beta = -1.0;
        bad.alpha = -0.5;
        let spec = CapsuleSpec {
            strata: vec![bad, stratum(1.0, 1.0, 0.03)],
            lambda: -1.0,
        };
        let Err(Error::Validation(errs)) = validate_capsule(&spec) else {
            panic!()
        };
        assert!(errs.len() >= 4, "{errs}");
    }

    #[test]
    fn unnested_time_steps_rejected() {
        let spec = CapsuleSpec {
            strata: vec![stratum(1.0, 1.0, 0.02), stratum(1.0, 1.0, 0.03), stratum(1.0, 1.0, 0.01)],
            lambda: 0.0,
        };
        let Err(Error::Validation(errs)) = validate_capsule(&spec) else {
            panic!()
        };
        assert!(errs.mentions("not nested"), "{errs}");
    }

    #[test]
    fn degenerate_homogeneous_sphere_accepted() {
        let spec = CapsuleSpec {
            strata: vec![stratum(100.0, 1.0, 0.1)],
            lambda: 1.0,
        };
        let v = validate_capsule(&spec).unwrap();
        assert_eq!(v.physical_indices(), &[0]);
        let expected = 4.0 / 3.0 * PI * 1e6;
        assert!((v.initial_mass() - expected).abs() / expected < 1e-14);
    }

    #[test]
    fn fictitious_partitions_map_to_core() {
        let mut b = stratum(5.0, 0.5, 0.05);
        b.fictitious = true;
        let mut c = stratum(0.65, 0.005, 0.01);
        c.fictitious = true;
        let shell = StratumSpec::new(0.018, 1e-6, 1.0, 0.0, 2.5e-3, 0.001, 0.01);
        let spec = CapsuleSpec {
            strata: vec![stratum(280.0, 35.0, 1.0), b, c, shell],
            lambda: 0.05,
        };
        let v = validate_capsule(&spec).unwrap();
        assert_eq!(v.physical_indices(), &[0, 0, 0, 1]);
        assert!((v.core_radius() - 285.65).abs() < 1e-12);
    }

    #[test]
    fn fictitious_with_different_physics_rejected() {
        let mut b = stratum(5.0, 0.5, 0.05);
        b.fictitious = true;
        b.d_plus = 2.0;
        let spec = CapsuleSpec {
            strata: vec![stratum(280.0, 35.0, 1.0), b],
            lambda: 0.05,
        };
        assert!(validate_capsule(&spec).is_err());
    }

    #[test]
    fn boundary_permeability_checked() {
        let cfg = SimulationConfig::new(
            CapsuleSpec {
                strata: vec![stratum(100.0, 1.0, 0.1)],
                lambda: 2.0,
            },
            10.0,
            1.0,
        );
        let Err(Error::Validation(errs)) = cfg.validate() else {
            panic!()
        };
        assert!(errs.mentions("boundary too permeable"));
    }

    #[test]
    fn ratio_violation_only_without_auto_insertion() {
        let mut cfg = SimulationConfig::new(
            CapsuleSpec {
                strata: vec![stratum(10.0, 1.0, 0.1), stratum(1.0, 0.01, 0.001)],
                lambda: 1.0,
            },
            1.0,
            1.0,
        );
        assert!(cfg.validate().is_ok());
        cfg.auto_fictitious = false;
        let Err(Error::Validation(errs)) = cfg.validate() else {
            panic!()
        };
        assert!(errs.mentions("exceeds fictitious_max_ratio"));
    }
}
