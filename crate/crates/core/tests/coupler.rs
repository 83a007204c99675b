use stratasim_core::coupler::build_schedule;
use stratasim_core::oracle::{SuiteMember, ReferenceSphere};
use stratasim_core::{
    simulate, simulate_with, CapsuleSpec, Error, RunStatus, SchemeFlavor, Simulation, SimulationConfig,
    SimulationOptions, StratumSpec,
};

fn stratum(thickness: f64, c: f64, dr: f64, dt: f64) -> StratumSpec {
    StratumSpec::new(thickness, 0.5, 1.0, 0.0, c, dr, dt)
}

fn config(strata: Vec<StratumSpec>, lambda: f64, t_end: f64) -> SimulationConfig {
    SimulationConfig::new(CapsuleSpec { strata, lambda }, t_end, 1.0)
}

#[test]
fn zero_duration_keeps_only_the_initial_sample() {
    let out = simulate(&config(vec![stratum(10.0, 1.0, 1.0, 0.1)], 1.0, 0.0)).unwrap();
    assert_eq!(out.record.samples.len(), 1);
    let s = &out.record.samples[0];
    assert_eq!((s.t, s.m_total, s.fraction), (0.0, 0.0, 0.0));
    assert_eq!(out.stats.ticks, 0);
    assert_eq!(out.status, RunStatus::Completed);
}

#[test]
fn runs_are_deterministic() {
    let cfg = config(
        vec![stratum(6.0, 1.0, 1.0, 0.1), stratum(2.0, 0.3, 0.2, 0.02)],
        0.4,
        30.0,
    );
    let a = simulate(&cfg).unwrap();
    let b = simulate(&cfg).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(a.final_in_capsule.to_bits(), b.final_in_capsule.to_bits());
}

#[test]
fn schedule_multipliers() {
    let cfg = config(
        vec![stratum(35.0, 1.0, 35.0, 1.0), stratum(1.0, 1.0, 0.5, 0.05), stratum(0.1, 1.0, 0.05, 0.01)],
        0.0,
        1.0,
    );
    let mut cfg = cfg;
    cfg.auto_fictitious = false;
    cfg.fictitious_max_ratio = 100.0;
    for s in &mut cfg.capsule.strata {
        s.d_plus = 1e-6;
    }
    let s = build_schedule(&cfg.validate().unwrap()).unwrap();
    assert_eq!(s.multipliers, vec![100, 5, 1]);
    assert_eq!(s.sync_period(), 100);
    assert!(s.is_due(2, 0) && !s.is_due(1, 3) && s.is_due(1, 4) && s.is_due(0, 99) && !s.is_due(0, 98));

    let single = config(vec![stratum(10.0, 1.0, 1.0, 0.1)], 0.0, 1.0);
    let s = build_schedule(&single.validate().unwrap()).unwrap();
    assert_eq!(s.multipliers, vec![1]);
    assert!((0..5).all(|t| s.is_due(0, t)));

    let p = ReferenceSphere::default();
    let ten = SuiteMember::TenFineVariableDt.config(&p, SchemeFlavor::Conservative);
    let s = build_schedule(&ten.validate().unwrap()).unwrap();
    assert_eq!(s.multipliers, vec![20, 10, 2, 1, 2, 10, 20, 1, 1, 20]);
    assert_eq!(s.sync_period(), 20);
}

#[test]
fn passive_buffers_are_empty_after_a_sync_point() {
    let cfg = config(
        vec![stratum(6.0, 1.0, 1.0, 0.2), stratum(2.0, 0.0, 0.2, 0.02)],
        0.5,
        100.0,
    );
    let mut sim = Simulation::new(&cfg).unwrap();
    let period = sim.schedule().sync_period();
    assert_eq!(period, 10);
    for _ in 0..20 {
        sim.advance_ticks(period - 1).unwrap();
        assert!(sim.state().links.iter().any(|l| l.buffer != 0.0));
        sim.advance_ticks(1).unwrap();
        assert!(sim.state().links.iter().all(|l| l.buffer == 0.0));
    }
    assert!(sim.mass_residual() < 1e-12);
}

#[test]
fn explicit_fictitious_split_leaves_release_unchanged() {
    let p = ReferenceSphere::default();
    let single = p.single(1.0, 0.1, SchemeFlavor::Conservative);
    let mut split = single.clone();
    let mut inner = split.capsule.strata[0].clone();
    inner.thickness = 60.0;
    let mut outer = inner.clone();
    outer.thickness = 40.0;
    outer.fictitious = true;
    outer.parent = Some(1);
    split.capsule.strata = vec![inner, outer];
    let a = simulate(&single).unwrap();
    let b = simulate(&split).unwrap();
    assert_eq!(a.record.samples.len(), b.record.samples.len());
    for (x, y) in a.record.samples.iter().zip(&b.record.samples) {
        assert!((x.fraction - y.fraction).abs() <= 1e-12, "{} vs {} at {}", x.fraction, y.fraction, x.t);
    }
}

#[test]
fn stability_violation_is_rejected_or_clamped() {
    let mut cfg = config(vec![stratum(10.0, 1.0, 1.0, 1.5)], 1.0, 30.0);
    match Simulation::new(&cfg) {
        Err(Error::Validation(errs)) => {
            assert!(errs.iter().any(|i| i.location == "stratum[1].dt"), "{errs}");
            assert!(errs.mentions("stability bound"), "{errs}");
        }
        Err(other) => panic!("expected a validation error, got {other}"),
        Ok(_) => panic!("expected a validation error"),
    }
    cfg.clamp_cfl = true;
    let out = simulate(&cfg).unwrap();
    // bound dr²/(2D) = 1 s, clamped to at most 0.9 of it by an integer factor
    assert!((out.dt_min - 0.75).abs() < 1e-12, "{}", out.dt_min);
    assert!(out.mass_residual() < 1e-12);
}

#[test]
fn negative_concentration_reports_context() {
    // dt at the stability bound overshoots in the centre cell
    let cfg = config(vec![stratum(1.0, 1.0, 1.0, 1.0), stratum(3.0, 0.0, 1.0, 1.0)], 0.0, 10.0);
    match simulate(&cfg) {
        Err(Error::Stability { tick, stratum, time, detail }) => {
            assert_eq!((tick, stratum), (0, 1));
            assert_eq!(time, 0.0);
            assert!(!detail.is_empty());
        }
        other => panic!("expected a stability fault, got {other:?}"),
    }
}

#[test]
fn direction_switch_is_inert_when_alpha_is_one() {
    let cfg = config(
        vec![stratum(5.0, 0.2, 0.5, 0.05), stratum(5.0, 1.0, 0.5, 0.05), stratum(5.0, 0.0, 0.5, 0.05)],
        0.7,
        40.0,
    );
    let a = simulate(&cfg).unwrap();
    let b = simulate_with(&cfg, SimulationOptions { directional: false, ..Default::default() }).unwrap();
    assert_eq!(a.record, b.record);
}

#[test]
fn inward_gradients_use_the_slow_diffusivity() {
    let mut cfg = config(vec![stratum(5.0, 0.0, 0.5, 0.05), stratum(5.0, 1.0, 0.5, 0.05)], 0.0, 20.0);
    for s in &mut cfg.capsule.strata {
        s.alpha = 0.1;
    }
    let options = SimulationOptions { count_inward: true, ..Default::default() };
    let slow = simulate_with(&cfg, options).unwrap();
    for s in &mut cfg.capsule.strata {
        s.alpha = 1.0;
    }
    let fast = simulate_with(&cfg, options).unwrap();
    assert!(slow.stats.inward_selections > 0);
    let centre = |o: &stratasim_core::SimulationOutput| o.final_in_capsule;
    // nothing leaves either capsule; only the distribution differs
    assert!((centre(&slow) - centre(&fast)).abs() < 1e-9 * centre(&fast));
    let mut a = Simulation::new(&cfg).unwrap();
    cfg.capsule.strata.iter_mut().for_each(|s| s.alpha = 0.1);
    let mut b = Simulation::new(&cfg).unwrap();
    a.advance_ticks(400).unwrap();
    b.advance_ticks(400).unwrap();
    assert!(b.state().stratum(0)[0] < a.state().stratum(0)[0]);
}

#[test]
fn paper_form_runs_and_tracks_the_conservative_form() {
    let p = ReferenceSphere::default();
    let a = simulate(&p.single(1.0, 0.1, SchemeFlavor::Conservative)).unwrap();
    let b = simulate(&p.single(1.0, 0.1, SchemeFlavor::PaperForm)).unwrap();
    let (fa, fb) = (a.record.fraction(), b.record.fraction());
    assert!((fa - fb).abs() < 1e-3, "{fa} vs {fb}");
}

#[test]
fn full_erosion_stops_at_the_core() {
    let mut cfg = config(vec![stratum(4.0, 1.0, 1.0, 0.1), stratum(4.0, 1.0, 1.0, 0.1)], 0.0, 100.0);
    cfg.erosion = Some(stratasim_core::ErosionSchedule::Samples(vec![(0.0, 8.0), (10.0, 3.0)]));
    let out = simulate(&cfg).unwrap();
    assert_eq!(out.status, RunStatus::FullyEroded);
    assert!(out.record.last().unwrap().t < 100.0);
    assert!(out.mass_residual() < 1e-12);
    assert!(out.record.m_eroded > 0.0);
}
