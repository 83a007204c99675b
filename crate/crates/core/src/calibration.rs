//! Inverse estimation of stratum parameters against release data and
//! one-at-a-time sensitivity sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capsule::{physical_mapping, SimulationConfig};
use crate::coupler::simulate;
use crate::error::{Error, Result, ValidationErrors};
use crate::release::ReleaseRecord;

/// Stratum field addressable by a parameter path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    DPlus,
    Alpha,
    Beta,
    CInit,
}

impl Field {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "d_plus" => Some(Field::DPlus),
            "alpha" => Some(Field::Alpha),
            "beta" => Some(Field::Beta),
            "c_init" => Some(Field::CInit),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Field::DPlus => "d_plus",
            Field::Alpha => "alpha",
            Field::Beta => "beta",
            Field::CInit => "c_init",
        }
    }
}

/// A parameter location: `lambda`, `<field>` (every stratum),
/// `stratum[i].<field>`, `stratum[i-j].<field>`, `stratum[i,j,…].<field>` or
/// `stratum[*].<field>`. Stratum indices are 1-based physical strata;
/// fictitious partitions follow their parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamPath {
    Lambda,
    Strata { physical: Option<Vec<usize>>, field: Field },
}

impl std::fmt::Display for ParamPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamPath::Lambda => write!(f, "lambda"),
            ParamPath::Strata { physical: None, field } => write!(f, "stratum[*].{}", field.name()),
            ParamPath::Strata {
                physical: Some(idx),
                field,
            } => {
                let list: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
                write!(f, "stratum[{}].{}", list.join(","), field.name())
            }
        }
    }
}

impl std::str::FromStr for ParamPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::single("parameter", format!("'{s}': {why}"));
        let s = s.trim();
        if s == "lambda" {
            return Ok(ParamPath::Lambda);
        }
        if let Some(field) = Field::parse(s) {
            return Ok(ParamPath::Strata { physical: None, field });
        }
        let rest = s
            .strip_prefix("stratum[")
            .ok_or_else(|| bad("expected lambda, a field name, or stratum[..].field"))?;
        let (sel, field) = rest.split_once("].").ok_or_else(|| bad("expected stratum[..].field"))?;
        let field = Field::parse(field).ok_or_else(|| bad("unknown field (d_plus, alpha, beta, c_init)"))?;
        if sel.trim() == "*" {
            return Ok(ParamPath::Strata { physical: None, field });
        }
        let mut idx = Vec::new();
        for part in sel.split(',') {
            let part = part.trim();
            let num = |v: &str| v.trim().parse::<usize>().ok().filter(|&i| i >= 1);
            if let Some((a, b)) = part.split_once('-') {
                let (a, b) = num(a).zip(num(b)).ok_or_else(|| bad("bad stratum range"))?;
                if a > b {
                    return Err(bad("empty stratum range"));
                }
                idx.extend(a..=b);
            } else {
                idx.push(num(part).ok_or_else(|| bad("stratum indices are 1-based integers"))?);
            }
        }
        idx.sort_unstable();
        idx.dedup();
        Ok(ParamPath::Strata {
            physical: Some(idx),
            field,
        })
    }
}

impl ParamPath {
    /// Numerical strata the path touches.
    fn targets(&self, config: &SimulationConfig) -> Result<Vec<usize>> {
        let ParamPath::Strata { physical, .. } = self else {
            return Ok(Vec::new());
        };
        let mut errs = ValidationErrors::default();
        let mapping = physical_mapping(&config.capsule.strata, &mut errs);
        let count = config.capsule.strata.iter().filter(|s| !s.fictitious).count();
        if let Some(idx) = physical {
            if let Some(&bad) = idx.iter().find(|&&i| i > count) {
                return Err(Error::single(
                    "parameter",
                    format!("'{self}': stratum {bad} does not exist ({count} physical strata)"),
                ));
            }
        }
        Ok((0..mapping.len())
            .filter(|&i| physical.as_ref().map_or(true, |idx| idx.contains(&(mapping[i] + 1))))
            .collect())
    }

    /// Value at the first target.
    pub fn get(&self, config: &SimulationConfig) -> Result<f64> {
        match self {
            ParamPath::Lambda => Ok(config.capsule.lambda),
            ParamPath::Strata { field, .. } => {
                let i = *self
                    .targets(config)?
                    .first()
                    .ok_or_else(|| Error::single("parameter", format!("'{self}' matches no stratum")))?;
                let s = &config.capsule.strata[i];
                Ok(match field {
                    Field::DPlus => s.d_plus,
                    Field::Alpha => s.alpha,
                    Field::Beta => s.beta,
                    Field::CInit => s.c_init,
                })
            }
        }
    }

    /// Sets every target (and the fictitious partitions of targeted strata).
    pub fn set(&self, config: &mut SimulationConfig, value: f64) -> Result<()> {
        match self {
            ParamPath::Lambda => config.capsule.lambda = value,
            ParamPath::Strata { field, .. } => {
                for i in self.targets(config)? {
                    let s = &mut config.capsule.strata[i];
                    match field {
                        Field::DPlus => s.d_plus = value,
                        Field::Alpha => s.alpha = value,
                        Field::Beta => s.beta = value,
                        Field::CInit => s.c_init = value,
                    }
                }
            }
        }
        Ok(())
    }
}

/// Unit of experimental release values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataUnit {
    /// Released mass [µg].
    #[default]
    Ug,
    /// Released fraction of the initial mass.
    Fraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    #[default]
    RmseAbsolute,
    RmseRelative,
}

/// One free parameter with its search box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParameter {
    pub path: String,
    pub lower: f64,
    pub upper: f64,
    /// Search in log space (for quantities spanning orders of magnitude).
    #[serde(default)]
    pub log: bool,
}

/// Fit settings as stored in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    #[serde(default)]
    pub data_unit: DataUnit,
    #[serde(default)]
    pub objective: ObjectiveKind,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub parameters: Vec<FreeParameter>,
}

fn default_budget() -> usize {
    200
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            data_unit: DataUnit::Ug,
            objective: ObjectiveKind::RmseAbsolute,
            budget: default_budget(),
            seed: 0,
            parameters: Vec::new(),
        }
    }
}

/// Experimental release data; times in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseData {
    pub samples: Vec<(f64, f64)>,
    pub unit: DataUnit,
}

/// RMSE between the simulated curve and the data; `Err(NoData)` for an
/// empty sample list. Zero observations are skipped by the relative metric.
pub fn curve_loss(record: &ReleaseRecord, data: &ReleaseData, kind: ObjectiveKind) -> Result<f64> {
    if data.samples.is_empty() {
        return Err(Error::NoData);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for &(t, obs) in &data.samples {
        let sim = match data.unit {
            DataUnit::Ug => record.m_total_at(t),
            DataUnit::Fraction => record.fraction_at(t),
        }
        .ok_or(Error::NoData)?;
        let d = match kind {
            ObjectiveKind::RmseAbsolute => sim - obs,
            ObjectiveKind::RmseRelative if obs != 0.0 => (sim - obs) / obs,
            ObjectiveKind::RmseRelative => continue,
        };
        sum += d * d;
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoData);
    }
    Ok((sum / count as f64).sqrt())
}

/// Simulation-backed loss. A failed simulation yields `+∞` together with
/// its diagnostic.
pub fn evaluate(config: &SimulationConfig, data: &ReleaseData, kind: ObjectiveKind) -> Result<(f64, Option<String>)> {
    if data.samples.is_empty() {
        return Err(Error::NoData);
    }
    match simulate(config) {
        Ok(out) => Ok((curve_loss(&out.record, data, kind)?, None)),
        Err(e) => Ok((f64::INFINITY, Some(e.to_string()))),
    }
}

pub fn objective(config: &SimulationConfig, data: &ReleaseData, kind: ObjectiveKind) -> Result<f64> {
    evaluate(config, data, kind).map(|(loss, _)| loss)
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    pub base: SimulationConfig,
    pub data: ReleaseData,
    pub parameters: Vec<FreeParameter>,
    pub objective: ObjectiveKind,
    pub budget: usize,
    pub seed: u64,
}

impl FitProblem {
    pub fn new(base: SimulationConfig, data: ReleaseData, settings: &FitSettings) -> Self {
        Self {
            base,
            data,
            parameters: settings.parameters.clone(),
            objective: settings.objective,
            budget: settings.budget,
            seed: settings.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    BudgetExhausted,
}

impl FitStatus {
    pub fn name(self) -> &'static str {
        match self {
            FitStatus::Converged => "converged",
            FitStatus::BudgetExhausted => "budget_exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub evaluation: usize,
    pub values: Vec<f64>,
    pub loss: f64,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub paths: Vec<String>,
    pub best: Vec<f64>,
    pub loss: f64,
    pub initial_loss: f64,
    pub config: SimulationConfig,
    pub trace: Vec<TraceEntry>,
    pub status: FitStatus,
}

/// Box transform between unit-cube coordinates and parameter values.
struct Scaling {
    lo: Vec<f64>,
    hi: Vec<f64>,
    log: Vec<bool>,
}

impl Scaling {
    fn to_value(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, &u)| {
                let u = u.clamp(0.0, 1.0);
                let v = if self.log[i] {
                    (self.lo[i].ln() + u * (self.hi[i].ln() - self.lo[i].ln())).exp()
                } else {
                    self.lo[i] + u * (self.hi[i] - self.lo[i])
                };
                v.clamp(self.lo[i], self.hi[i])
            })
            .collect()
    }

    fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &x)| {
                let x = x.clamp(self.lo[i], self.hi[i]);
                let u = if self.log[i] {
                    (x.ln() - self.lo[i].ln()) / (self.hi[i].ln() - self.lo[i].ln())
                } else {
                    (x - self.lo[i]) / (self.hi[i] - self.lo[i])
                };
                u.clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Simplex size below which the search is considered converged (unit-cube
/// coordinates).
const X_TOLERANCE: f64 = 1e-6;
/// Relative loss spread below which the search is considered converged.
const F_TOLERANCE: f64 = 1e-10;
/// Initial simplex edge in unit-cube coordinates.
const INITIAL_STEP: f64 = 0.1;

/// Bounded Nelder–Mead search over the free parameters, starting from the
/// values in the base config (clipped into the box).
pub fn fit_parameters(problem: &FitProblem) -> Result<FitResult> {
    let mut errs = ValidationErrors::default();
    let mut paths = Vec::new();
    for (i, p) in problem.parameters.iter().enumerate() {
        let at = format!("fit.parameters[{}]", i + 1);
        if !(p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper) {
            errs.push(&at, "bounds must be finite with lower < upper");
        }
        if p.log && !(p.lower > 0.0) {
            errs.push(&at, "log-scaled parameters need a positive lower bound");
        }
        match p.path.parse::<ParamPath>() {
            Ok(path) => {
                if let Err(e) = path.get(&problem.base) {
                    errs.push(&at, e.to_string());
                }
                paths.push(path);
            }
            Err(e) => errs.push(&at, e.to_string()),
        }
    }
    let n = problem.parameters.len();
    if problem.budget < n + 1 {
        errs.push("fit.budget", format!("budget {} is below dimension + 1 = {}", problem.budget, n + 1));
    }
    if problem.data.samples.is_empty() {
        return Err(Error::NoData);
    }
    errs.into_result()?;

    let scaling = Scaling {
        lo: problem.parameters.iter().map(|p| p.lower).collect(),
        hi: problem.parameters.iter().map(|p| p.upper).collect(),
        log: problem.parameters.iter().map(|p| p.log).collect(),
    };
    let apply = |values: &[f64]| -> Result<SimulationConfig> {
        let mut cfg = problem.base.clone();
        for (path, &v) in paths.iter().zip(values) {
            path.set(&mut cfg, v)?;
        }
        Ok(cfg)
    };
    let mut trace: Vec<TraceEntry> = Vec::new();
    let eval = |u: &[f64], trace: &mut Vec<TraceEntry>| -> Result<f64> {
        let values = scaling.to_value(u);
        let (loss, diagnostic) = evaluate(&apply(&values)?, &problem.data, problem.objective)?;
        trace.push(TraceEntry {
            evaluation: trace.len() + 1,
            values,
            loss,
            diagnostic,
        });
        Ok(loss)
    };

    let start_values: Vec<f64> = paths.iter().map(|p| p.get(&problem.base)).collect::<Result<_>>()?;
    let x0 = scaling.to_unit(&start_values);
    let initial_loss = eval(&x0, &mut trace)?;

    let mut status = FitStatus::Converged;
    if n > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
        let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.clone(), initial_loss)];
        for i in 0..n {
            let mut v = x0.clone();
            let step = INITIAL_STEP * rng.gen_range(0.8..1.2);
            v[i] = if v[i] + step <= 1.0 { v[i] + step } else { v[i] - step };
            let f = eval(&v, &mut trace)?;
            simplex.push((v, f));
        }
        let clip = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<_>>();
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let (best, worst) = (simplex[0].1, simplex[n].1);
            let spread = (worst - best).abs() <= F_TOLERANCE * best.abs().max(1e-300);
            let size = simplex[1..]
                .iter()
                .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if (spread && best.is_finite()) || size < X_TOLERANCE {
                break;
            }
            if trace.len() >= problem.budget {
                status = FitStatus::BudgetExhausted;
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                clip(centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect())
            };
            let xr = along(-1.0);
            let fr = eval(&xr, &mut trace)?;
            if fr < simplex[0].1 {
                if trace.len() >= problem.budget {
                    simplex[n] = (xr, fr);
                    continue;
                }
                let xe = along(-2.0);
                let fe = eval(&xe, &mut trace)?;
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                if trace.len() >= problem.budget {
                    continue;
                }
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = along(-0.5);
                    let fc = eval(&xc, &mut trace)?;
                    (xc, fc)
                } else {
                    let xc = along(0.5);
                    let fc = eval(&xc, &mut trace)?;
                    (xc, fc)
                };
                if fc < fr.min(simplex[n].1) {
                    simplex[n] = (xc, fc);
                } else {
                    let x_best = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        if trace.len() >= problem.budget {
                            break;
                        }
                        let v = clip(x_best.iter().zip(&vertex.0).map(|(b, x)| b + 0.5 * (x - b)).collect());
                        let f = eval(&v, &mut trace)?;
                        *vertex = (v, f);
                    }
                }
            }
        }
    }

    let best_entry = trace
        .iter()
        .min_by(|a, b| a.loss.total_cmp(&b.loss))
        .expect("at least one evaluation");
    let best = best_entry.values.clone();
    let loss = best_entry.loss;
    Ok(FitResult {
        paths: paths.iter().map(ToString::to_string).collect(),
        config: apply(&best)?,
        best,
        loss,
        initial_loss,
        trace,
        status,
    })
}

/// Values for a sweep, absolute or as multiples of the reference value.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepValues {
    Absolute(Vec<f64>),
    Multipliers(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: SimulationConfig,
    pub path: String,
    pub values: SweepValues,
}

#[derive(Debug, Clone)]
pub struct SweepMember {
    pub value: f64,
    /// The release curve, or the diagnostic of a failed run.
    pub outcome: std::result::Result<ReleaseRecord, String>,
}

/// One simulation per value with everything else held at the reference.
/// Failed members are reported individually.
pub fn sweep_parameter(spec: &SweepSpec) -> Result<Vec<SweepMember>> {
    let path: ParamPath = spec.path.parse()?;
    let reference = path.get(&spec.base)?;
    let values: Vec<f64> = match &spec.values {
        SweepValues::Absolute(v) => v.clone(),
        SweepValues::Multipliers(m) => m.iter().map(|m| m * reference).collect(),
    };
    if let Some(bad) = values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::single("sweep.values", format!("value {bad} is negative")));
    }
    if values.is_empty() {
        return Err(Error::single("sweep.values", "no values"));
    }
    Ok(values
        .par_iter()
        .map(|&value| {
            let outcome = (|| {
                let mut cfg = spec.base.clone();
                path.set(&mut cfg, value)?;
                simulate(&cfg).map(|o| o.record)
            })()
            .map_err(|e| e.to_string());
            SweepMember { value, outcome }
        })
        .collect())
}
