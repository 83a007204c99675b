//! Explicit finite-volume update of a single stratum.
//!
//! Fluxes follow the sign convention of the three-point stencil:
//! `F_{j+½} = D̂·w_{j+½}·(C_{j+1} − C_j)`, so a positive face flux moves mass
//! inward and cell `j` changes by `dt·m_j·(F_{j+½} − F_{j−½})`.
//!
//! The two scheme flavours differ only in the face weights `w` and the cell
//! measures `m`:
//!
//! | flavour      | `w_{j+½}`        | `m_j`              | mass per flux·time |
//! |--------------|------------------|--------------------|--------------------|
//! | conservative | `A_{j+½}/dr`     | `1/V_j`            | 1                  |
//! | paper        | `r_{j+½}²/dr`    | `1/(dr·r_j²)`      | 4π                 |

use std::f64::consts::PI;

use crate::capsule::{SchemeFlavor, StratumSpec};
use crate::grid::{GhostLink, StratumGrid};

/// `2ab/(a+b)`, or zero when either coefficient vanishes.
#[inline]
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Direction-dependent diffusivity at a face between a lower cell (`c_lo`,
/// inner) and an upper cell (`c_hi`, outer).
///
/// Outward or zero gradients (`c_lo ≥ c_hi`) select D⁺, inward ones D⁻.
/// Across a stratum interface the direction-matched coefficients of both
/// strata are combined by their harmonic mean.
pub fn interface_diffusivity(c_lo: f64, c_hi: f64, lo: &StratumSpec, hi: &StratumSpec, cross_stratum: bool) -> f64 {
    let outward = c_lo >= c_hi;
    if cross_stratum {
        if outward {
            harmonic_mean(lo.d_plus, hi.d_plus)
        } else {
            harmonic_mean(lo.d_minus(), hi.d_minus())
        }
    } else if outward {
        lo.d_plus
    } else {
        lo.d_minus()
    }
}

/// Paper-form stencil flux `D̂·r_{½}²·(C_{j+1} − C_j)/dr`.
#[inline]
pub fn numerical_flux(d_hat: f64, r_half: f64, c_j: f64, c_j1: f64, dr: f64) -> f64 {
    d_hat * r_half * r_half * (c_j1 - c_j) / dr
}

/// Value of the outer ghost cell imposing `∂c/∂r = −λc`.
///
/// `λ = ∞` is accepted and maps to the perfect-sink cap `dr·λ = 1`.
/// Returns `None` when a finite `dr·λ` exceeds one.
#[inline]
pub fn robin_ghost(c_n: f64, dr: f64, lambda: f64) -> Option<f64> {
    let product = if lambda.is_infinite() { 1.0 } else { dr * lambda };
    (product <= 1.0).then(|| c_n * (1.0 - product))
}

/// Concentration field plus interface buffers and the simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationState {
    /// Cell averages per stratum; only the first `alive[ℓ]` entries are live.
    pub cells: Vec<Vec<f64>>,
    /// Alive-cell high-water mark per stratum.
    pub alive: Vec<usize>,
    /// One link per internal interface (`links[i]` joins strata `i` and `i+1`).
    pub links: Vec<GhostLink>,
    pub time: f64,
    pub tick: u64,
}

impl ConcentrationState {
    pub fn stratum(&self, i: usize) -> &[f64] {
        &self.cells[i][..self.alive[i]]
    }

    /// Index of the outermost stratum that still has cells.
    pub fn outermost(&self) -> usize {
        self.alive.iter().rposition(|&n| n > 0).unwrap_or(0)
    }

    pub fn alive_cells(&self) -> usize {
        self.alive.iter().sum()
    }
}

/// Precomputed coefficients for updating one stratum.
#[derive(Debug, Clone)]
pub struct StratumOperator {
    pub grid: StratumGrid,
    pub d_plus: f64,
    pub d_minus: f64,
    pub beta: f64,
    pub dt: f64,
    /// Face weights (N + 1).
    pub(crate) face_weight: Vec<f64>,
    /// Cell measures (N).
    pub(crate) measure: Vec<f64>,
    /// `dt·measure` (N).
    pub(crate) step_measure: Vec<f64>,
    /// Converts flux·time into mass.
    pub mass_factor: f64,
}

impl StratumOperator {
    pub fn new(grid: StratumGrid, spec: &StratumSpec, flavor: SchemeFlavor) -> Self {
        let dr = grid.dr;
        let (face_weight, measure, mass_factor): (Vec<f64>, Vec<f64>, f64) = match flavor {
            SchemeFlavor::Conservative => (
                grid.areas.iter().map(|a| a / dr).collect(),
                grid.volumes.iter().map(|v| 1.0 / v).collect(),
                1.0,
            ),
            SchemeFlavor::PaperForm => (
                grid.faces.iter().map(|r| r * r / dr).collect(),
                grid.centers.iter().map(|r| 1.0 / (dr * r * r)).collect(),
                4.0 * PI,
            ),
        };
        let dt = spec.dt;
        let step_measure = measure.iter().map(|m| dt * m).collect();
        Self {
            grid,
            d_plus: spec.d_plus,
            d_minus: spec.d_minus(),
            beta: spec.beta,
            dt,
            face_weight,
            measure,
            step_measure,
            mass_factor,
        }
    }

    pub fn len(&self) -> usize {
        self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_empty()
    }

    /// Face weight at face `f` (0 = inner face of the stratum).
    pub fn face_weight(&self, f: usize) -> f64 {
        self.face_weight[f]
    }

    pub fn measure(&self, j: usize) -> f64 {
        self.measure[j]
    }

    /// Mass held by the first `alive` cells.
    pub fn mass(&self, cells: &[f64]) -> f64 {
        cells.iter().zip(&self.grid.volumes).map(|(c, v)| c * v).sum()
    }

    /// Outer-face flux for a Robin boundary at the outer face of cell `n − 1`.
    pub fn robin_flux(&self, cells: &[f64], lambda: f64) -> Option<f64> {
        let n = cells.len();
        let c_n = cells[n - 1];
        let ghost = robin_ghost(c_n, self.grid.dr, lambda)?;
        let d = if c_n >= ghost { self.d_plus } else { self.d_minus };
        Some(d * self.face_weight[n] * (ghost - c_n))
    }

    /// Advances `cells` by one step of this stratum's `dt`.
    ///
    /// `inner_flux` and `outer_flux` are the face fluxes at the stratum's inner
    /// and outer boundary faces (zero for the centre or a passive interface).
    /// `scratch` must hold at least `cells.len() + 1` entries. Updated values
    /// below `floor` are flagged in the outcome.
    #[inline]
    pub fn step<const DIRECTIONAL: bool, const COUNT_INWARD: bool>(
        &self,
        cells: &mut [f64],
        scratch: &mut [f64],
        inner_flux: f64,
        outer_flux: f64,
        floor: f64,
    ) -> StepOutcome {
        let n = cells.len();
        let flux = &mut scratch[..n + 1];
        let weights = &self.face_weight[..n + 1];
        flux[0] = inner_flux;
        flux[n] = outer_flux;
        let (dp, dm) = (self.d_plus, self.d_minus);
        let mut inward = 0u64;
        for ((f, w), pair) in flux[1..n].iter_mut().zip(&weights[1..n]).zip(cells.windows(2)) {
            let (lo, hi) = (pair[0], pair[1]);
            let d = if DIRECTIONAL {
                if lo >= hi {
                    dp
                } else {
                    dm
                }
            } else {
                dp
            };
            if COUNT_INWARD {
                inward += (lo < hi) as u64;
            }
            *f = d * w * (hi - lo);
        }

        let measure = &self.step_measure[..n];
        let mut decayed = 0.0;
        let mut below = 0u8;
        if self.beta == 0.0 {
            for ((c, m), fw) in cells.iter_mut().zip(measure).zip(flux.windows(2)) {
                *c += m * (fw[1] - fw[0]);
                below |= (*c < floor) as u8;
            }
        } else {
            let decay = self.dt * self.beta;
            for (((c, m), fw), v) in cells.iter_mut().zip(measure).zip(flux.windows(2)).zip(&self.grid.volumes) {
                let lost = decay * *c;
                decayed += lost * v;
                *c += m * (fw[1] - fw[0]) - lost;
                below |= (*c < floor) as u8;
            }
        }
        StepOutcome {
            decayed,
            inward,
            below_floor: below != 0,
        }
    }
}

/// Side results of one stratum step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepOutcome {
    /// Mass removed by decay/binding [µg].
    pub decayed: f64,
    /// Number of interior faces that selected D⁻ (only when counted).
    pub inward: u64,
    /// Some updated value fell below the negativity floor.
    pub below_floor: bool,
}

/// Smallest allowed concentration: `−10⁻¹⁴·scale`.
pub fn negativity_floor(scale: f64) -> f64 {
    -1e-14 * scale
}

/// First cell below `floor`, if any.
pub fn find_negative(cells: &[f64], floor: f64) -> Option<(usize, f64)> {
    if cells.iter().fold(f64::INFINITY, |m, &c| m.min(c)) >= floor {
        return None;
    }
    cells.iter().copied().enumerate().find(|&(_, c)| c < floor)
}
