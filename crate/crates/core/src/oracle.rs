//! Analytic release from a homogeneous sphere with a Robin surface, and the
//! six-configuration grid comparison harness.
//!
//! For `∂c/∂r = −λc` at `r = R` and uniform initial concentration the released
//! fraction is
//!
//! `1 − Σₙ 6·Bi²·exp(−D μₙ² t/R²) / (μₙ²(μₙ² + Bi(Bi − 1)))`
//!
//! with `Bi = λR` and `μₙ` the positive roots of `μ cot μ = 1 − Bi`, one in each
//! interval `(nπ, (n+1)π)`. The perfect sink (`Bi = ∞`) has `μₙ = (n+1)π` and
//! coefficients `6/μₙ²`.

use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;

use crate::capsule::{CapsuleSpec, SchemeFlavor, SimulationConfig, StratumSpec};
use crate::coupler::{simulate_with, SimulationOptions};
use crate::error::{Error, Result};

/// Homogeneous sphere for the analytic series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSpec {
    pub radius: f64,
    pub diffusivity: f64,
    pub lambda: f64,
    pub c0: f64,
    pub n_terms: usize,
    /// Maximum scaled eigenvalue residual (see [`eigen_residual`]).
    pub tolerance: f64,
}

impl OracleSpec {
    pub fn new(radius: f64, diffusivity: f64, lambda: f64) -> Self {
        Self {
            radius,
            diffusivity,
            lambda,
            c0: 1.0,
            n_terms: 200,
            tolerance: 1e-9,
        }
    }

    /// Homogeneous sphere described by a config: every stratum must share D⁺,
    /// c₀, and β = 0. α is ignored (the release from a uniform sphere never
    /// selects D⁻).
    pub fn from_config(config: &SimulationConfig) -> Result<Self> {
        let strata = &config.capsule.strata;
        let first = strata.first().ok_or_else(|| Error::single("capsule", "missing capsule"))?;
        if strata
            .iter()
            .any(|s| s.d_plus != first.d_plus || s.c_init != first.c_init || s.beta != 0.0)
        {
            return Err(Error::single(
                "capsule",
                "the analytic series needs a homogeneous sphere (uniform D⁺ and c0, no decay)",
            ));
        }
        let radius = strata.iter().map(|s| s.thickness).sum();
        Ok(Self {
            c0: first.c_init,
            ..Self::new(radius, first.d_plus, config.capsule.lambda)
        })
    }

    pub fn biot(&self) -> f64 {
        self.lambda * self.radius
    }

    pub fn initial_mass(&self) -> f64 {
        self.c0 * 4.0 / 3.0 * PI * self.radius.powi(3)
    }
}

/// `μ cot μ − (1 − Bi)`, decreasing on every branch interval.
fn branch_residual(mu: f64, bi: f64) -> f64 {
    mu / mu.tan() - (1.0 - bi)
}

/// Root residual in the sine form `μ cos μ − (1 − Bi) sin μ`, scaled by
/// `μ + |1 − Bi|`. Unlike the cotangent form its slope stays O(1) for large
/// roots, so it can reach round-off for every branch.
pub fn eigen_residual(mu: f64, bi: f64) -> f64 {
    (mu * mu.cos() - (1.0 - bi) * mu.sin()).abs() / (mu + (1.0 - bi).abs())
}

/// First `n` roots of `μ cot μ = 1 − Bi` by bisection, one per interval
/// `(kπ, (k+1)π)`. Empty for `Bi = 0`, where nothing is released.
pub fn eigenvalues(bi: f64, n: usize) -> Result<Vec<f64>> {
    if !(bi >= 0.0) {
        return Err(Error::single("lambda", "Biot number must be non-negative"));
    }
    if bi == 0.0 {
        return Ok(Vec::new());
    }
    if bi.is_infinite() {
        return Ok((1..=n).map(|k| k as f64 * PI).collect());
    }
    let roots = (0..n)
        .map(|k| {
            let (mut lo, mut hi) = (k as f64 * PI, (k + 1) as f64 * PI);
            loop {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break mid;
                }
                if branch_residual(mid, bi) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        })
        .collect();
    Ok(roots)
}

/// Precomputed eigen-expansion for repeated evaluation.
#[derive(Debug, Clone)]
pub struct AnalyticSeries {
    pub spec: OracleSpec,
    pub mu: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Largest scaled residual over the retained roots.
    pub max_residual: f64,
}

/// Series value with a bound on the neglected tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleValue {
    pub fraction: f64,
    pub truncation_bound: f64,
}

impl AnalyticSeries {
    pub fn new(spec: OracleSpec) -> Result<Self> {
        if spec.n_terms == 0 {
            return Err(Error::single("oracle.n_terms", "need at least one term"));
        }
        if !(spec.radius > 0.0 && spec.diffusivity >= 0.0) {
            return Err(Error::single("oracle", "radius must be positive and D non-negative"));
        }
        let bi = spec.biot();
        let mu = eigenvalues(bi, spec.n_terms)?;
        let coefficients = mu
            .iter()
            .map(|&m| {
                if bi.is_infinite() {
                    6.0 / (m * m)
                } else {
                    6.0 * bi * bi / (m * m * (m * m + bi * (bi - 1.0)))
                }
            })
            .collect();
        let max_residual = if bi.is_finite() {
            mu.iter().map(|&m| eigen_residual(m, bi)).fold(0.0, f64::max)
        } else {
            0.0
        };
        if max_residual > spec.tolerance {
            return Err(Error::Internal(format!(
                "eigenvalue residual {max_residual:e} exceeds tolerance {:e}",
                spec.tolerance
            )));
        }
        Ok(Self {
            spec,
            mu,
            coefficients,
            max_residual,
        })
    }

    pub fn evaluate(&self, t: f64) -> OracleValue {
        if t <= 0.0 || self.mu.is_empty() {
            return OracleValue {
                fraction: 0.0,
                truncation_bound: 0.0,
            };
        }
        let s = &self.spec;
        let rate = s.diffusivity * t / (s.radius * s.radius);
        let remaining: f64 = self
            .mu
            .iter()
            .zip(&self.coefficients)
            .map(|(m, c)| c * (-rate * m * m).exp())
            .sum();
        // Neglected roots satisfy μ > Nπ; once μ² ≥ Bi each coefficient is
        // at most 6/μ², giving a geometric-free tail bound.
        let n = self.mu.len() as f64;
        let mu_n = n * PI;
        let truncation_bound = if mu_n * mu_n >= s.biot() || s.biot().is_infinite() {
            6.0 / (PI * PI) * (1.0 / n + 1.0 / (n * n)) * (-rate * mu_n * mu_n).exp()
        } else {
            1.0
        };
        OracleValue {
            fraction: (1.0 - remaining).clamp(0.0, 1.0),
            truncation_bound,
        }
    }
}

/// Released fraction at time `t`.
pub fn analytic_release(spec: &OracleSpec, t: f64) -> Result<OracleValue> {
    Ok(AnalyticSeries::new(*spec)?.evaluate(t))
}

/// Physical parameters of the grid-comparison tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSphere {
    pub radius: f64,
    pub t_end: f64,
    pub c0: f64,
    pub diffusivity: f64,
    pub beta: f64,
    pub lambda: f64,
    pub alpha: f64,
    /// Sampling interval of the release curve [s].
    pub sample_every: f64,
}

impl Default for ReferenceSphere {
    fn default() -> Self {
        Self {
            radius: 100.0,
            t_end: 14400.0,
            c0: 1.0,
            diffusivity: 0.5,
            beta: 0.0,
            lambda: 1.0,
            alpha: 1.0,
            sample_every: 60.0,
        }
    }
}

impl ReferenceSphere {
    pub fn oracle(&self) -> OracleSpec {
        OracleSpec {
            c0: self.c0,
            ..OracleSpec::new(self.radius, self.diffusivity, self.lambda)
        }
    }

    fn stratum(&self, thickness: f64, dr: f64, dt: f64) -> StratumSpec {
        StratumSpec::new(thickness, self.diffusivity, self.alpha, self.beta, self.c0, dr, dt)
    }

    fn config(&self, strata: Vec<StratumSpec>, scheme: SchemeFlavor) -> SimulationConfig {
        let mut cfg = SimulationConfig::new(
            CapsuleSpec {
                strata,
                lambda: self.lambda,
            },
            self.t_end,
            self.sample_every,
        );
        cfg.scheme = scheme;
        cfg
    }

    /// Single stratum on a uniform grid.
    pub fn single(&self, dr: f64, dt: f64, scheme: SchemeFlavor) -> SimulationConfig {
        self.config(vec![self.stratum(self.radius, dr, dt)], scheme)
    }
}

/// Which suite member a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SuiteMember {
    Fine,
    Coarse,
    TenCoarse,
    TenFineVariableDt,
    CoarseFine,
    FineCoarse,
}

impl SuiteMember {
    pub const ALL: [SuiteMember; 6] = [
        SuiteMember::Fine,
        SuiteMember::Coarse,
        SuiteMember::TenCoarse,
        SuiteMember::TenFineVariableDt,
        SuiteMember::CoarseFine,
        SuiteMember::FineCoarse,
    ];

    pub fn key(self) -> &'static str {
        match self {
            SuiteMember::Fine => "fine",
            SuiteMember::Coarse => "coarse",
            SuiteMember::TenCoarse => "10-coarse",
            SuiteMember::TenFineVariableDt => "10-fine-var-dt",
            SuiteMember::CoarseFine => "coarse+fine",
            SuiteMember::FineCoarse => "fine+coarse",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.key() == key)
    }

    pub fn label(self) -> &'static str {
        match self {
            SuiteMember::Fine => "one-stratum, fine grid",
            SuiteMember::Coarse => "one-stratum, coarse grid",
            SuiteMember::TenCoarse => "10-strata, constant coarse grid",
            SuiteMember::TenFineVariableDt => "10-strata, variable-time fine grid",
            SuiteMember::CoarseFine => "2-strata, coarse-fine coupled grid",
            SuiteMember::FineCoarse => "2-strata, fine-coarse coupled grid",
        }
    }

    /// Mean relative error [%] published for this member.
    pub fn published_error_pct(self) -> f64 {
        match self {
            SuiteMember::Fine => 0.034,
            SuiteMember::Coarse => 0.376,
            SuiteMember::TenCoarse => 0.376,
            SuiteMember::TenFineVariableDt => 0.033,
            SuiteMember::CoarseFine => 0.073,
            SuiteMember::FineCoarse => 0.374,
        }
    }

    pub fn config(self, p: &ReferenceSphere, scheme: SchemeFlavor) -> SimulationConfig {
        const FINE: (f64, f64) = (0.1, 1e-3);
        const COARSE: (f64, f64) = (1.0, 0.1);
        // coupled runs use a shorter coarse step so the two sides nest cleanly
        const COUPLED_COARSE: (f64, f64) = (1.0, 0.02);
        const VARIABLE_DT: [f64; 10] = [1.0, 0.5, 0.1, 0.05, 0.1, 0.5, 1.0, 0.05, 0.05, 1.0];
        let inner = 0.75 * p.radius;
        let outer = p.radius - inner;
        let tenth = p.radius / 10.0;
        let strata = match self {
            SuiteMember::Fine => vec![p.stratum(p.radius, FINE.0, FINE.1)],
            SuiteMember::Coarse => vec![p.stratum(p.radius, COARSE.0, COARSE.1)],
            SuiteMember::TenCoarse => (0..10).map(|_| p.stratum(tenth, COARSE.0, COARSE.1)).collect(),
            SuiteMember::TenFineVariableDt => VARIABLE_DT
                .iter()
                .map(|f| p.stratum(tenth, FINE.0, FINE.1 * f))
                .collect(),
            SuiteMember::CoarseFine => vec![
                p.stratum(inner, COUPLED_COARSE.0, COUPLED_COARSE.1),
                p.stratum(outer, FINE.0, FINE.1),
            ],
            SuiteMember::FineCoarse => vec![
                p.stratum(inner, FINE.0, FINE.1),
                p.stratum(outer, COUPLED_COARSE.0, COUPLED_COARSE.1),
            ],
        };
        let mut cfg = p.config(strata, scheme);
        // the published coupled grids jump dr by 10 without grading
        cfg.auto_fictitious = false;
        cfg
    }
}

/// Reference curve for the error metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// Analytic series (default).
    Analytic,
    /// Single grid with dr = 0.01, dt = 10⁻⁵ (very long).
    PaperGrid,
}

/// Samples with a reference fraction below this are excluded from the
/// relative-error mean.
pub const MIN_REFERENCE_FRACTION: f64 = 0.01;

/// Mean and max relative error [%] of `curve` against `reference`, over
/// samples whose reference fraction is at least 1 %.
pub fn relative_errors(curve: &[(f64, f64)], reference: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    let mut count = 0usize;
    for &(t, f) in curve {
        let r = reference(t);
        if r >= MIN_REFERENCE_FRACTION {
            let e = (f - r).abs() / r;
            sum += e;
            max = max.max(e);
            count += 1;
        }
    }
    if count == 0 {
        (0.0, 0.0)
    } else {
        (100.0 * sum / count as f64, 100.0 * max)
    }
}

#[derive(Debug, Clone)]
pub struct ValidationRow {
    pub member: SuiteMember,
    pub mean_rel_err_pct: f64,
    pub max_rel_err_pct: f64,
    pub runtime_s: f64,
    /// Faces that selected D⁻ during the run.
    pub inward_selections: u64,
    /// Worst absolute deviation from the reference fraction.
    pub max_abs_err: f64,
    /// `(t, fraction)` samples.
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub reference: Reference,
    pub scheme: SchemeFlavor,
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn row(&self, member: SuiteMember) -> Option<&ValidationRow> {
        self.rows.iter().find(|r| r.member == member)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,mean_rel_err_pct,max_rel_err_pct,runtime_s\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.member.key(),
                crate::io::format_number(r.mean_rel_err_pct),
                crate::io::format_number(r.max_rel_err_pct),
                crate::io::format_number(r.runtime_s)
            ));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<38} {:>14} {:>14} {:>16} {:>10}\n",
            "configuration", "mean err [%]", "max err [%]", "published [%]", "time [s]"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<38} {:>14.4} {:>14.4} {:>16.3} {:>10.1}\n",
                r.member.label(),
                r.mean_rel_err_pct,
                r.max_rel_err_pct,
                r.member.published_error_pct(),
                r.runtime_s
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub params: ReferenceSphere,
    pub scheme: SchemeFlavor,
    pub reference: Reference,
    pub members: Vec<SuiteMember>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            params: ReferenceSphere::default(),
            scheme: SchemeFlavor::Conservative,
            reference: Reference::Analytic,
            members: SuiteMember::ALL.to_vec(),
        }
    }
}

fn run_curve(config: &SimulationConfig) -> Result<(Vec<(f64, f64)>, u64, f64)> {
    let start = Instant::now();
    let options = SimulationOptions {
        count_inward: true,
        ..SimulationOptions::default()
    };
    let out = simulate_with(config, options)?;
    let curve = out.record.samples.iter().map(|s| (s.t, s.fraction)).collect();
    Ok((curve, out.stats.inward_selections, start.elapsed().as_secs_f64()))
}

/// Runs the suite members concurrently and scores them against the reference.
pub fn run_validation_suite(options: &SuiteOptions) -> Result<ValidationReport> {
    let p = &options.params;
    let reference_curve: Option<Vec<(f64, f64)>> = match options.reference {
        Reference::Analytic => None,
        Reference::PaperGrid => Some(run_curve(&p.single(0.01, 1e-5, options.scheme))?.0),
    };
    let series = AnalyticSeries::new(p.oracle())?;
    let reference = |t: f64| -> f64 {
        match &reference_curve {
            None => series.evaluate(t).fraction,
            Some(c) => c
                .iter()
                .find(|(tr, _)| (tr - t).abs() < 1e-9 * t.max(1.0))
                .map(|(_, f)| *f)
                .unwrap_or(f64::NAN),
        }
    };
    let rows = options
        .members
        .par_iter()
        .map(|&member| {
            let (curve, inward, runtime_s) = run_curve(&member.config(p, options.scheme))?;
            let (mean, max) = relative_errors(&curve, reference);
            let max_abs_err = curve.iter().map(|&(t, f)| (f - reference(t)).abs()).fold(0.0, f64::max);
            Ok(ValidationRow {
                member,
                mean_rel_err_pct: mean,
                max_rel_err_pct: max,
                runtime_s,
                inward_selections: inward,
                max_abs_err,
                curve,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationReport {
        reference: options.reference,
        scheme: options.scheme,
        rows,
    })
}
