//! Benchmark inputs shared by the criterion targets.

use stratasim_core::oracle::ReferenceSphere;
use stratasim_core::{SchemeFlavor, SimulationConfig};

/// Homogeneous 100 µm sphere on a uniform grid, cut to `t_end` seconds.
pub fn homogeneous(dr: f64, dt: f64, t_end: f64, scheme: SchemeFlavor) -> SimulationConfig {
    let mut cfg = ReferenceSphere::default().single(dr, dt, scheme);
    cfg.t_end = t_end;
    cfg.output_every = t_end;
    cfg
}

/// Two strata of 75 and 25 µm, coarse inside and fine outside.
pub fn coupled(t_end: f64) -> SimulationConfig {
    let mut cfg = homogeneous(1.0, 0.02, t_end, SchemeFlavor::Conservative);
    let mut inner = cfg.capsule.strata[0].clone();
    inner.thickness = 75.0;
    let mut outer = inner.clone();
    outer.thickness = 25.0;
    outer.dr = 0.1;
    outer.dt = 1e-3;
    cfg.capsule.strata = vec![inner, outer];
    cfg.auto_fictitious = false;
    cfg
}
