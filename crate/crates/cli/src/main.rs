use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use stratasim_core::calibration::{DataUnit, FitProblem, SweepMember, SweepSpec, SweepValues};
use stratasim_core::io::{
    curve_csv, emit_config, family_csv, format_number, profiles_csv, read_release_data_file, release_csv, release_svg,
    write_file,
};
use stratasim_core::oracle::{run_validation_suite, AnalyticSeries, Reference, SuiteMember, SuiteOptions};
use stratasim_core::{
    fit_parameters, parse_config_file, simulate, sweep_parameter, ConfigDocument, Error, OracleSpec, RunManifest,
    SchemeFlavor, SimulationConfig,
};

/// Release simulation for layered spherical capsules.
///
/// Times are in seconds, lengths in micrometres, masses in micrograms.
/// `t_end` and output intervals are rounded to the nearest multiple of the
/// smallest stratum time step.
#[derive(Parser, Debug)]
#[command(name = "stratasim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one config; writes release.csv, profiles.csv, release.svg, manifest.toml.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the six-configuration grid comparison; writes validation.csv/.txt and curves.csv.
    Validate {
        /// Score against a dr = 0.01 um, dt = 1e-5 s single grid instead of the
        /// analytic series (very long).
        #[arg(long)]
        paper_reference: bool,
        /// Subset of configurations: fine, coarse, 10-coarse, 10-fine-var-dt,
        /// coarse+fine, fine+coarse (default: all).
        #[arg(long, value_delimiter = ',')]
        members: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the [fit] parameters of a config to release data (t_min,release).
    Fit {
        config: PathBuf,
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// One run per value of a parameter path; writes a long-format sweep.csv.
    Sweep {
        config: PathBuf,
        /// lambda, beta, stratum[2].d_plus, stratum[4-9].alpha, ...
        #[arg(long)]
        param: String,
        /// Comma-separated values; `inf` is allowed for lambda.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Analytic release of the homogeneous sphere described by a config.
    Oracle {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Finite-volume flavour: conservative or paper.
    #[arg(long)]
    scheme: Option<SchemeFlavor>,
    /// Scale time steps down instead of failing on a stability violation.
    #[arg(long)]
    clamp_cfl: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Sampling interval of the release curve [s].
    #[arg(long)]
    output_every: Option<f64>,
}

impl Common {
    fn apply(&self, cfg: &mut SimulationConfig) {
        if let Some(s) = self.scheme {
            cfg.scheme = s;
        }
        if self.clamp_cfl {
            cfg.clamp_cfl = true;
        }
        if let Some(o) = self.output_every {
            cfg.output_every = o;
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation(_) | Error::Parse(_) | Error::NoData => 2,
        Error::Stability { .. } | Error::Io { .. } | Error::Internal(_) => 3,
    }
}

fn load(path: &Path, common: &Common) -> Result<ConfigDocument, Error> {
    let mut doc = parse_config_file(path)?;
    common.apply(&mut doc.simulation);
    doc.simulation.validate()?;
    Ok(doc)
}

fn write_manifest(
    common: &Common,
    config_path: Option<&Path>,
    config: Option<&SimulationConfig>,
    started: Instant,
) -> Result<(), Error> {
    let manifest = RunManifest {
        command: std::env::args().collect::<Vec<_>>().join(" "),
        config_path: config_path.map(|p| p.display().to_string()),
        output_dir: common.out.display().to_string(),
        wall_clock_s: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        resolved_config: config.map(|c| emit_config(c, None)),
    };
    write_file(&common.out.join("manifest.toml"), &manifest.to_toml())
}

fn run_simulate(config: &Path, common: &Common) -> Result<(), Error> {
    let started = Instant::now();
    let mut cfg = load(config, common)?.simulation;
    if cfg.profile_every.is_none() {
        cfg.profile_every = Some(cfg.output_every);
    }
    let out = simulate(&cfg)?;
    write_file(&common.out.join("release.csv"), &release_csv(&out.record)?)?;
    write_file(&common.out.join("profiles.csv"), &profiles_csv(&out.profiles))?;
    let curve: Vec<(f64, f64)> = out.record.samples.iter().map(|s| (s.t, s.fraction)).collect();
    write_file(
        &common.out.join("release.svg"),
        &release_svg(&[("released fraction".to_string(), curve)])?,
    )?;
    write_manifest(common, Some(config), Some(&cfg), started)?;
    let last = out.record.last().expect("initial sample");
    println!(
        "t = {} s: released {} ug of {} ug (fraction {}), mass residual {:.2e}, {} ticks in {:.2} s",
        format_number(last.t),
        format_number(last.m_total),
        format_number(out.record.initial_mass),
        format_number(last.fraction),
        out.mass_residual(),
        out.stats.ticks,
        out.stats.runtime_s
    );
    Ok(())
}

fn run_validate(paper_reference: bool, members: &[String], common: &Common) -> Result<(), Error> {
    let started = Instant::now();
    let members = members
        .iter()
        .map(|k| {
            SuiteMember::from_key(k).ok_or_else(|| Error::single("members", format!("unknown configuration '{k}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut options = SuiteOptions {
        reference: if paper_reference {
            Reference::PaperGrid
        } else {
            Reference::Analytic
        },
        scheme: common.scheme.unwrap_or_default(),
        ..Default::default()
    };
    if let Some(o) = common.output_every {
        options.params.sample_every = o;
    }
    if !members.is_empty() {
        options.members = members;
    }
    let report = run_validation_suite(&options)?;
    write_file(&common.out.join("validation.csv"), &report.to_csv())?;
    write_file(&common.out.join("validation.txt"), &report.to_table())?;
    let mut curves = String::from("series,t_s,fraction\n");
    for row in &report.rows {
        for (t, f) in &row.curve {
            curves.push_str(&format!("{},{},{}\n", row.member.key(), format_number(*t), format_number(*f)));
        }
    }
    write_file(&common.out.join("curves.csv"), &curves)?;
    write_manifest(common, None, None, started)?;
    print!("{}", report.to_table());
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn run_fit(config: &Path, data: &Path, common: &Common) -> Result<(), Error> {
    let started = Instant::now();
    let doc = load(config, common)?;
    let settings = doc
        .fit
        .ok_or_else(|| Error::single("fit", "config has no [fit] section listing free parameters"))?;
    let data = read_release_data_file(data, settings.data_unit)?;
    let problem = FitProblem::new(doc.simulation.clone(), data, &settings);
    let result = fit_parameters(&problem)?;

    let mut report = format!(
        "status = \"{}\"\nloss = {}\ninitial_loss = {}\nevaluations = {}\nobjective = \"{}\"\ndata_unit = \"{}\"\n\n[parameters]\n",
        result.status.name(),
        format_number(result.loss),
        format_number(result.initial_loss),
        result.trace.len(),
        match problem.objective {
            stratasim_core::ObjectiveKind::RmseAbsolute => "rmse_absolute",
            stratasim_core::ObjectiveKind::RmseRelative => "rmse_relative",
        },
        match settings.data_unit {
            DataUnit::Ug => "ug",
            DataUnit::Fraction => "fraction",
        },
    );
    for (p, v) in result.paths.iter().zip(&result.best) {
        report.push_str(&format!("\"{p}\" = {}\n", format_number(*v)));
    }
    write_file(&common.out.join("fit_report.toml"), &report)?;

    let mut trace = String::from("evaluation,loss");
    for p in &result.paths {
        trace.push(',');
        trace.push_str(&csv_field(p));
    }
    trace.push('\n');
    for e in &result.trace {
        trace.push_str(&format!("{},{}", e.evaluation, format_number(e.loss)));
        for v in &e.values {
            trace.push(',');
            trace.push_str(&format_number(*v));
        }
        trace.push('\n');
    }
    write_file(&common.out.join("fit_trace.csv"), &trace)?;
    write_file(
        &common.out.join("fitted.cfg"),
        &emit_config(&result.config, Some(&settings)),
    )?;
    write_manifest(common, Some(config), Some(&doc.simulation), started)?;
    print!("{report}");
    Ok(())
}

fn run_sweep(config: &Path, param: &str, values: &[f64], common: &Common) -> Result<bool, Error> {
    let started = Instant::now();
    let cfg = load(config, common)?.simulation;
    let members = sweep_parameter(&SweepSpec {
        base: cfg.clone(),
        path: param.to_string(),
        values: SweepValues::Absolute(values.to_vec()),
    })?;
    let label = |m: &SweepMember| format!("{param}={}", format_number(m.value));
    let ok: Vec<(String, &stratasim_core::ReleaseRecord)> = members
        .iter()
        .filter_map(|m| m.outcome.as_ref().ok().map(|r| (csv_field(&label(m)), r)))
        .collect();
    let mut all_ok = true;
    for m in &members {
        match &m.outcome {
            Ok(r) => println!("{}: final fraction {}", label(m), format_number(r.fraction())),
            Err(e) => {
                all_ok = false;
                eprintln!("{}: failed: {e}", label(m));
            }
        }
    }
    if !ok.is_empty() {
        write_file(&common.out.join("sweep.csv"), &family_csv(&ok)?)?;
        let curves: Vec<(String, Vec<(f64, f64)>)> = ok
            .iter()
            .map(|(l, r)| (l.clone(), r.samples.iter().map(|s| (s.t, s.fraction)).collect()))
            .collect();
        write_file(&common.out.join("sweep.svg"), &release_svg(&curves)?)?;
    }
    write_manifest(common, Some(config), Some(&cfg), started)?;
    Ok(all_ok)
}

fn run_oracle(config: &Path, common: &Common) -> Result<(), Error> {
    let started = Instant::now();
    let cfg = load(config, common)?.simulation;
    let series = AnalyticSeries::new(OracleSpec::from_config(&cfg)?)?;
    let n = (cfg.t_end / cfg.output_every).round() as usize;
    let mut curve = Vec::with_capacity(n + 1);
    let mut text = String::from("t_s,fraction,truncation_bound\n");
    for i in 0..=n {
        let t = (i as f64 * cfg.output_every).min(cfg.t_end);
        let v = series.evaluate(t);
        curve.push((t, v.fraction));
        text.push_str(&format!(
            "{},{},{}\n",
            format_number(t),
            format_number(v.fraction),
            format_number(v.truncation_bound)
        ));
    }
    write_file(&common.out.join("oracle.csv"), &text)?;
    write_file(&common.out.join("oracle_fraction.csv"), &curve_csv(&curve))?;
    write_manifest(common, Some(config), Some(&cfg), started)?;
    let (t, f) = curve.last().copied().unwrap_or((0.0, 0.0));
    println!("analytic fraction at t = {} s: {}", format_number(t), format_number(f));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Simulate { config, common } => run_simulate(config, common).map(|_| true),
        Command::Validate {
            paper_reference,
            members,
            common,
        } => run_validate(*paper_reference, members, common).map(|_| true),
        Command::Fit { config, data, common } => run_fit(config, data, common).map(|_| true),
        Command::Sweep {
            config,
            param,
            values,
            common,
        } => run_sweep(config, param, values, common),
        Command::Oracle { config, common } => run_oracle(config, common).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
