//! Config files, data ingestion, and result emission.
//!
//! Configs are TOML:
//!
//! ```toml
//! [simulation]
//! t_end = 14400.0
//! output_every = 60.0
//!
//! [capsule]
//! lambda = 1.0
//!
//! [[capsule.stratum]]
//! thickness = 100.0
//! d_plus = 0.5
//! alpha = 1.0
//! c_init = 1.0
//! dr = 1.0
//! dt = 0.1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{DataUnit, FitSettings};
use crate::capsule::{CapsuleSpec, SchemeFlavor, SimulationConfig, StratumSpec, DEFAULT_FICTITIOUS_MAX_RATIO};
use crate::coupler::ProfilePoint;
use crate::erosion::{ErosionPhase, ErosionSchedule};
use crate::error::{Error, Result, ValidationErrors};
use crate::release::ReleaseRecord;

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    simulation: Option<SimulationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    capsule: Option<CapsuleSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    erosion: Option<ErosionSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<FitSettings>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSection {
    t_end: f64,
    #[serde(default = "default_output_every")]
    output_every: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    profile_every: Option<f64>,
    #[serde(default)]
    scheme: SchemeFlavor,
    #[serde(default = "default_max_ratio")]
    fictitious_max_ratio: f64,
    #[serde(default = "default_true")]
    auto_fictitious: bool,
    #[serde(default)]
    clamp_cfl: bool,
}

fn default_output_every() -> f64 {
    60.0
}

fn default_max_ratio() -> f64 {
    DEFAULT_FICTITIOUS_MAX_RATIO
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CapsuleSection {
    lambda: f64,
    #[serde(default)]
    stratum: Vec<StratumEntry>,
}

/// A stratum as written in a file. Fictitious partitions may omit the
/// physics and inherit it from their parent.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StratumEntry {
    thickness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d_plus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c_init: Option<f64>,
    dr: f64,
    dt: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    fictitious: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ErosionSection {
    /// CSV file, relative to the config's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    /// Inline `[t_s, R_um]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    samples: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phases: Option<Vec<ErosionPhase>>,
}

/// A parsed config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDocument {
    pub simulation: SimulationConfig,
    pub fit: Option<FitSettings>,
}

fn resolve_strata(entries: Vec<StratumEntry>, errs: &mut ValidationErrors) -> Vec<StratumSpec> {
    let mut physical: Vec<StratumSpec> = Vec::new();
    let mut out = Vec::with_capacity(entries.len());
    for (i, e) in entries.into_iter().enumerate() {
        let at = |f: &str| format!("stratum[{}].{f}", i + 1);
        let inherit = if e.fictitious {
            match e.parent {
                Some(p) => physical.get(p.wrapping_sub(1)).cloned(),
                None => physical.last().cloned(),
            }
        } else {
            None
        };
        let pick = |v: Option<f64>, name: &str, get: fn(&StratumSpec) -> f64, default: Option<f64>, errs: &mut ValidationErrors| {
            v.or_else(|| inherit.as_ref().map(get)).or(default).unwrap_or_else(|| {
                errs.push(at(name), "missing value");
                f64::NAN
            })
        };
        let s = StratumSpec {
            thickness: e.thickness,
            d_plus: pick(e.d_plus, "d_plus", |s| s.d_plus, None, errs),
            alpha: pick(e.alpha, "alpha", |s| s.alpha, Some(1.0), errs),
            beta: pick(e.beta, "beta", |s| s.beta, Some(0.0), errs),
            c_init: pick(e.c_init, "c_init", |s| s.c_init, None, errs),
            dr: e.dr,
            dt: e.dt,
            fictitious: e.fictitious,
            parent: e.parent,
        };
        if !s.fictitious {
            physical.push(s.clone());
        }
        out.push(s);
    }
    out
}

/// Parses a config; relative erosion files resolve against `base_dir`.
/// The simulation part is validated.
pub fn parse_document(text: &str, base_dir: Option<&Path>) -> Result<ConfigDocument> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let capsule = file.capsule.ok_or_else(|| Error::single("capsule", "missing capsule"))?;
    let sim = file
        .simulation
        .ok_or_else(|| Error::single("simulation", "missing [simulation] section (t_end is required)"))?;
    let mut errs = ValidationErrors::default();
    let strata = resolve_strata(capsule.stratum, &mut errs);
    errs.into_result()?;
    let erosion = match file.erosion {
        None => None,
        Some(e) => Some(match (e.file, e.samples, e.phases) {
            (Some(f), None, None) => {
                let path = base_dir.map_or_else(|| PathBuf::from(&f), |d| d.join(&f));
                ErosionSchedule::from_csv_file(&path)?
            }
            (None, Some(s), None) => ErosionSchedule::Samples(s.into_iter().map(|[t, r]| (t, r)).collect()),
            (None, None, Some(p)) => ErosionSchedule::Phases(p),
            (None, None, None) => ErosionSchedule::none(),
            _ => return Err(Error::single("erosion", "give exactly one of file, samples, phases")),
        }),
    };
    let simulation = SimulationConfig {
        capsule: CapsuleSpec {
            strata,
            lambda: capsule.lambda,
        },
        t_end: sim.t_end,
        erosion,
        output_every: sim.output_every,
        profile_every: sim.profile_every,
        scheme: sim.scheme,
        fictitious_max_ratio: sim.fictitious_max_ratio,
        auto_fictitious: sim.auto_fictitious,
        clamp_cfl: sim.clamp_cfl,
    };
    simulation.validate()?;
    Ok(ConfigDocument {
        simulation,
        fit: file.fit,
    })
}

pub fn parse_config(text: &str) -> Result<SimulationConfig> {
    parse_document(text, None).map(|d| d.simulation)
}

pub fn parse_config_file(path: &Path) -> Result<ConfigDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_document(&text, path.parent()).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes a config back as TOML; erosion tables are inlined and every
/// stratum is written in full.
pub fn emit_config(config: &SimulationConfig, fit: Option<&FitSettings>) -> String {
    let file = ConfigFile {
        simulation: Some(SimulationSection {
            t_end: config.t_end,
            output_every: config.output_every,
            profile_every: config.profile_every,
            scheme: config.scheme,
            fictitious_max_ratio: config.fictitious_max_ratio,
            auto_fictitious: config.auto_fictitious,
            clamp_cfl: config.clamp_cfl,
        }),
        capsule: Some(CapsuleSection {
            lambda: config.capsule.lambda,
            stratum: config
                .capsule
                .strata
                .iter()
                .map(|s| StratumEntry {
                    thickness: s.thickness,
                    d_plus: Some(s.d_plus),
                    alpha: Some(s.alpha),
                    beta: Some(s.beta),
                    c_init: Some(s.c_init),
                    dr: s.dr,
                    dt: s.dt,
                    fictitious: s.fictitious,
                    parent: s.parent,
                })
                .collect(),
        }),
        erosion: config.erosion.as_ref().map(|e| match e {
            ErosionSchedule::Samples(s) => ErosionSection {
                samples: Some(s.iter().map(|&(t, r)| [t, r]).collect()),
                ..Default::default()
            },
            ErosionSchedule::Phases(p) => ErosionSection {
                phases: Some(p.clone()),
                ..Default::default()
            },
        }),
        fit: fit.cloned(),
    };
    toml::to_string(&file).expect("config serialises")
}

/// Shortest representation after rounding to 12 significant digits.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    let a = rounded.abs();
    if (1e-5..1e15).contains(&a) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

pub fn release_csv(record: &ReleaseRecord) -> Result<String> {
    if record.samples.is_empty() {
        return Err(Error::single("release", "empty release record"));
    }
    let mut s = String::from("t_s,m_flux_ug,m_eroded_ug,m_total_ug,fraction\n");
    for p in &record.samples {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            format_number(p.t),
            format_number(p.m_flux),
            format_number(p.m_eroded),
            format_number(p.m_total),
            format_number(p.fraction)
        ));
    }
    Ok(s)
}

pub fn profiles_csv(profiles: &[ProfilePoint]) -> String {
    let mut s = String::from("t_s,r_um,c_ug_per_um3\n");
    for p in profiles {
        s.push_str(&format!("{},{},{}\n", format_number(p.t), format_number(p.r), format_number(p.c)));
    }
    s
}

/// Long-format family of release curves, one row per sample, keyed by a
/// series label.
pub fn family_csv(series: &[(String, &ReleaseRecord)]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::single("series", "no series to write"));
    }
    let mut s = String::from("series,t_s,m_flux_ug,m_eroded_ug,m_total_ug,fraction\n");
    for (label, record) in series {
        for p in &record.samples {
            s.push_str(&format!(
                "{label},{},{},{},{},{}\n",
                format_number(p.t),
                format_number(p.m_flux),
                format_number(p.m_eroded),
                format_number(p.m_total),
                format_number(p.fraction)
            ));
        }
    }
    Ok(s)
}

/// `(t, fraction)` curve as `t_s,fraction`.
pub fn curve_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("t_s,fraction\n");
    for (t, f) in curve {
        s.push_str(&format!("{},{}\n", format_number(*t), format_number(*f)));
    }
    s
}

/// Reads `t_min,release` data and converts times to seconds.
pub fn read_release_data(text: &str, unit: DataUnit) -> Result<crate::calibration::ReleaseData> {
    let mut rows = text
        .lines()
        .map(str::trim)
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (_, header) = rows.next().ok_or(Error::NoData)?;
    if header.replace(' ', "") != "t_min,release" {
        return Err(Error::Parse(format!("data CSV header must be 't_min,release', found '{header}'")));
    }
    let mut samples = Vec::new();
    for (no, line) in rows {
        let bad = || Error::Parse(format!("data CSV line {}: expected 't_min,release'", no + 1));
        let (a, b) = line.split_once(',').ok_or_else(bad)?;
        let t: f64 = a.trim().parse().map_err(|_| bad())?;
        let m: f64 = b.trim().parse().map_err(|_| bad())?;
        samples.push((t * 60.0, m));
    }
    if samples.is_empty() {
        return Err(Error::NoData);
    }
    Ok(crate::calibration::ReleaseData { samples, unit })
}

pub fn read_release_data_file(path: &Path, unit: DataUnit) -> Result<crate::calibration::ReleaseData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_release_data(&text, unit)
}

/// Minimal SVG line chart of released fraction against time.
pub fn release_svg(series: &[(String, Vec<(f64, f64)>)]) -> Result<String> {
    if series.iter().all(|(_, c)| c.is_empty()) {
        return Err(Error::single("series", "no data to plot"));
    }
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let t_max = series
        .iter()
        .flat_map(|(_, c)| c.iter().map(|p| p.0))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let y_max = series
        .iter()
        .flat_map(|(_, c)| c.iter().map(|p| p.1))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <line x1=\"{M}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <text x=\"{xm}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"12\">t [min] (max {tm:.0})</text>\n\
         <text x=\"12\" y=\"{M}\" font-size=\"12\">max {ym}</text>\n",
        y0 = H - M,
        x1 = W - M,
        xm = W / 2.0,
        ty = H - 12.0,
        tm = t_max / 60.0,
        ym = format_number(y_max),
    );
    for (k, (label, curve)) in series.iter().enumerate() {
        let points: Vec<String> = curve
            .iter()
            .map(|(t, y)| {
                format!(
                    "{:.2},{:.2}",
                    M + t / t_max * (W - 2.0 * M),
                    H - M - y / y_max * (H - 2.0 * M)
                )
            })
            .collect();
        let colour = colours[k % colours.len()];
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{colour}\" points=\"{}\"/>\n<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{colour}\">{}</text>\n",
            points.join(" "),
            W - M - 120.0,
            M + 14.0 * k as f64,
            xml_escape(label)
        ));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Provenance of one output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub output_dir: String,
    pub wall_clock_s: f64,
    pub version: String,
    /// Resolved config as TOML.
    pub resolved_config: Option<String>,
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
