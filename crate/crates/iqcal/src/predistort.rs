//! Digital pre-distortion of the IF drive and the alternating secant search
//! that tunes it.
//!
//! An upconverter with in-phase/quadrature imbalance `(α, β)` leaks a mirror
//! image of its drive. Feeding it the *pre-distorted* drive
//!
//! ```text
//! z_I = x_I + (β̂/α̂)·x_Q        z_Q = x_Q / α̂
//! ```
//!
//! cancels that image exactly when the correction parameters match the
//! plant: `α̂ = α`, `β̂ = β`. The residual image-to-signal power ratio has
//! the closed form
//!
//! ```text
//! ILR = [(α−α̂)² + (β−β̂)²] / [(α+α̂)² + (β−β̂)²]
//! ```
//!
//! which near convergence behaves like `[(α−α̂)² + (β−β̂)²]/(4α̂²)`. The
//! search therefore minimizes the rescaled cost `C̃ = 4α̂²·ILR`, a separable
//! near-perfect parabola in each parameter, by alternating one-dimensional
//! secant steps: hold β̂, step α̂ through the vertex of the parabola through
//! the last two costs, then hold α̂ and step β̂, repeating until the
//! measured leakage drops below a threshold. On a noiseless quadratic cost
//! each secant step lands exactly on the vertex, so the loop converges in a
//! handful of measurements.

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;
use num_complex::Complex64;

/// Nudge applied to a stalled search parameter when a secant step cannot be
/// formed (coincident sample points) or proposes a value outside the model.
pub const STALL_PERTURBATION: f64 = 1e-3;

/// Which parameter the next calibration step will update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdatePhase {
    /// Next secant step moves α̂ at fixed β̂.
    UpdateAlpha,
    /// Next secant step moves β̂ at fixed α̂.
    UpdateBeta,
}

impl UpdatePhase {
    fn toggled(self) -> Self {
        match self {
            UpdatePhase::UpdateAlpha => UpdatePhase::UpdateBeta,
            UpdatePhase::UpdateBeta => UpdatePhase::UpdateAlpha,
        }
    }
}

/// One accepted measurement: the correction settings and the cost observed
/// there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSample {
    /// Gain correction in effect for this measurement.
    pub alpha_hat: f64,
    /// Quadrature correction in effect for this measurement.
    pub beta_hat: f64,
    /// Measured cost `C̃ = 4α̂²·ILR`.
    pub cost: f64,
}

impl CostSample {
    /// Recovers the linear image-leakage ratio this cost was computed from.
    pub fn ilr(&self) -> f64 {
        self.cost / (4.0 * self.alpha_hat * self.alpha_hat)
    }
}

/// Running state of the alternating secant search.
#[derive(Debug, Clone, PartialEq)]
pub struct PredistortState {
    /// Current gain correction; always positive.
    pub alpha_hat: f64,
    /// Current quadrature correction.
    pub beta_hat: f64,
    /// Most recent distinct previous value of `alpha_hat`.
    pub alpha_prev: f64,
    /// Most recent distinct previous value of `beta_hat`.
    pub beta_prev: f64,
    /// Every accepted measurement in order; grows by exactly one entry per
    /// recorded step.
    pub cost_history: Vec<CostSample>,
    /// Which parameter the next update step will move.
    pub phase: UpdatePhase,
}

impl PredistortState {
    /// Starts a search at the given correction settings with empty history.
    pub fn new(alpha_hat: f64, beta_hat: f64) -> Result<Self> {
        validate_correction(alpha_hat, beta_hat)?;
        Ok(Self {
            alpha_hat,
            beta_hat,
            alpha_prev: alpha_hat,
            beta_prev: beta_hat,
            cost_history: Vec::new(),
            phase: UpdatePhase::UpdateAlpha,
        })
    }

    /// Records one measurement: moves the current settings to the measured
    /// point, tracks the previous distinct values, and appends to the
    /// history.
    pub fn record(&mut self, alpha_hat: f64, beta_hat: f64, cost: f64) -> Result<()> {
        validate_correction(alpha_hat, beta_hat)?;
        if alpha_hat != self.alpha_hat {
            self.alpha_prev = self.alpha_hat;
        }
        if beta_hat != self.beta_hat {
            self.beta_prev = self.beta_hat;
        }
        self.alpha_hat = alpha_hat;
        self.beta_hat = beta_hat;
        self.cost_history.push(CostSample {
            alpha_hat,
            beta_hat,
            cost,
        });
        Ok(())
    }

    /// Proposes the next gain correction: a secant step through the two most
    /// recent costs measured at a shared β̂ with distinct α̂ values.
    ///
    /// The alternating schedule always leaves such a pair as the two latest
    /// qualifying entries; scanning the whole history additionally lets the
    /// search recover by falling back to older samples when the latest
    /// measurements happen to coincide.
    pub fn update_alpha(&self) -> Result<f64> {
        let (first, second) = self
            .qualifying_pair(|s| s.beta_hat, |s| s.alpha_hat)
            .ok_or(Error::DegenerateSecant(
                "no two costs at a shared beta correction with distinct alpha values",
            ))?;
        Ok(secant_vertex(
            first.alpha_hat,
            first.cost,
            second.alpha_hat,
            second.cost,
        ))
    }

    /// Proposes the next quadrature correction: the secant step dual to
    /// [`update_alpha`](Self::update_alpha), pairing costs at a shared α̂
    /// with distinct β̂ values.
    pub fn update_beta(&self) -> Result<f64> {
        let (first, second) = self
            .qualifying_pair(|s| s.alpha_hat, |s| s.beta_hat)
            .ok_or(Error::DegenerateSecant(
                "no two costs at a shared alpha correction with distinct beta values",
            ))?;
        Ok(secant_vertex(
            first.beta_hat,
            first.cost,
            second.beta_hat,
            second.cost,
        ))
    }

    /// Most recent pair `(older, newer)` sharing `shared` exactly while
    /// differing in `varying`, preferring the newest qualifying entries.
    fn qualifying_pair(
        &self,
        shared: impl Fn(&CostSample) -> f64,
        varying: impl Fn(&CostSample) -> f64,
    ) -> Option<(&CostSample, &CostSample)> {
        let h = &self.cost_history;
        for j in (0..h.len()).rev() {
            for i in (0..j).rev() {
                if shared(&h[i]) == shared(&h[j]) && varying(&h[i]) != varying(&h[j]) {
                    return Some((&h[i], &h[j]));
                }
            }
        }
        None
    }
}

fn validate_correction(alpha_hat: f64, beta_hat: f64) -> Result<()> {
    if !(alpha_hat > 0.0 && alpha_hat.is_finite() && beta_hat.is_finite()) {
        return Err(Error::BadCorrection {
            alpha: alpha_hat,
            beta: beta_hat,
        });
    }
    Ok(())
}

/// Vertex of the parabola through `(x0, c0)` and `(x1, c1)` with unit
/// curvature — the secant update. Exact on any cost of the form
/// `(x − a)² + const`.
fn secant_vertex(x0: f64, c0: f64, x1: f64, c1: f64) -> f64 {
    0.5 * (x0 + x1 - (c0 - c1) / (x0 - x1))
}

/// Applies the gain/quadrature correction to a complex drive:
/// `z_I = x_I + (β̂/α̂)·x_Q`, `z_Q = x_Q/α̂`.
///
/// When `(α̂, β̂)` equal the upconverter's imbalance `(α, β)`, the corrected
/// drive produces exactly zero image sideband.
pub fn predistort(x: &ComplexSignal, alpha_hat: f64, beta_hat: f64) -> Result<ComplexSignal> {
    validate_correction(alpha_hat, beta_hat)?;
    let ratio = beta_hat / alpha_hat;
    let samples = x
        .samples
        .iter()
        .map(|s| Complex64::new(s.re + ratio * s.im, s.im / alpha_hat))
        .collect();
    ComplexSignal::new(samples, x.sample_rate)
}

/// Closed-form image-leakage power ratio of a plant `(α, β)` driven through
/// the correction `(α̂, β̂)`:
/// `[(α−α̂)² + (β−β̂)²] / [(α+α̂)² + (β−β̂)²]`.
pub fn ilr_closed_form(alpha: f64, beta: f64, alpha_hat: f64, beta_hat: f64) -> Result<f64> {
    let db = beta - beta_hat;
    let num = (alpha - alpha_hat) * (alpha - alpha_hat) + db * db;
    let den = (alpha + alpha_hat) * (alpha + alpha_hat) + db * db;
    if den == 0.0 {
        return Err(Error::BadCorrection {
            alpha: alpha_hat,
            beta: beta_hat,
        });
    }
    Ok(num / den)
}

/// The minimized cost `C̃ = 4·α̂²·ILR`, scaled so its curvature in each
/// parameter is one near convergence.
pub fn cost(alpha_hat: f64, ilr_measured: f64) -> f64 {
    4.0 * alpha_hat * alpha_hat * ilr_measured
}

/// Knobs of the alternating secant search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecantSettings {
    /// First seed gain correction.
    pub alpha0: f64,
    /// Second seed gain correction; must differ from `alpha0`.
    pub alpha1: f64,
    /// First seed quadrature correction.
    pub beta0: f64,
    /// Second seed quadrature correction; must differ from `beta0`.
    pub beta1: f64,
    /// Stop once a measured leakage ratio falls to this level, in dB.
    pub threshold_db: f64,
    /// Hard cap on the number of plant measurements.
    pub max_measurements: usize,
    /// Repeated plant readings averaged per measurement (for noisy plants).
    pub n_average: usize,
}

impl Default for SecantSettings {
    fn default() -> Self {
        Self {
            alpha0: 1.00,
            alpha1: 0.99,
            beta0: 0.00,
            beta1: 0.01,
            threshold_db: -70.0,
            max_measurements: 40,
            n_average: 1,
        }
    }
}

impl SecantSettings {
    fn validate(&self) -> Result<()> {
        validate_correction(self.alpha0, self.beta0)?;
        validate_correction(self.alpha1, self.beta1)?;
        if self.alpha0 == self.alpha1 {
            return Err(Error::DegenerateSecant("seed alpha values must differ"));
        }
        if self.beta0 == self.beta1 {
            return Err(Error::DegenerateSecant("seed beta values must differ"));
        }
        if self.threshold_db.is_nan() {
            return Err(Error::InvalidScenario(
                "convergence threshold must not be NaN".into(),
            ));
        }
        if self.max_measurements == 0 || self.n_average == 0 {
            return Err(Error::InvalidScenario(
                "measurement budget and averaging count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Runs the alternating secant calibration against a plant.
///
/// The plant callback receives candidate corrections `(α̂, β̂)` and returns
/// the measured image-leakage ratio as a linear power ratio; this is the
/// seam where a full transmit–receive simulation (or hardware) plugs in.
///
/// The schedule measures the three seed points `(α̂₀,β̂₀)`, `(α̂₁,β̂₀)`,
/// `(α̂₁,β̂₁)`, then alternates: secant-update α̂ and measure, secant-update
/// β̂ and measure, … until a measurement reaches `threshold_db` or the
/// measurement budget runs out. A stalled step — coincident secant samples
/// or a proposal with non-positive gain — nudges the parameter by
/// [`STALL_PERTURBATION`] instead of giving up.
///
/// Returns the final state with the complete measurement history; the last
/// history entry tells whether the threshold was reached.
pub fn calibrate_upconversion<F>(mut plant: F, settings: &SecantSettings) -> Result<PredistortState>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    settings.validate()?;
    let threshold = 10f64.powf(settings.threshold_db / 10.0);
    let mut state = PredistortState::new(settings.alpha0, settings.beta0)?;

    let mut measure = |alpha_hat: f64, beta_hat: f64| -> Result<f64> {
        let mut acc = 0.0;
        for _ in 0..settings.n_average {
            let ilr = plant(alpha_hat, beta_hat)?;
            if !(ilr >= 0.0 && ilr.is_finite()) {
                return Err(Error::InvalidPowers {
                    image: ilr,
                    signal: 1.0,
                });
            }
            acc += ilr;
        }
        Ok(acc / settings.n_average as f64)
    };

    let seeds = [
        (settings.alpha0, settings.beta0),
        (settings.alpha1, settings.beta0),
        (settings.alpha1, settings.beta1),
    ];
    for (alpha_hat, beta_hat) in seeds {
        if state.cost_history.len() >= settings.max_measurements {
            return Ok(state);
        }
        let ilr = measure(alpha_hat, beta_hat)?;
        state.record(alpha_hat, beta_hat, cost(alpha_hat, ilr))?;
        if ilr <= threshold {
            return Ok(state);
        }
    }

    while state.cost_history.len() < settings.max_measurements {
        let (alpha_hat, beta_hat) = match state.phase {
            UpdatePhase::UpdateAlpha => {
                let proposal = match state.update_alpha() {
                    // a proposal outside the model (α̂ ≤ 0) is treated like a
                    // stall: nudge and keep searching
                    Ok(a) if a > 0.0 && a.is_finite() => a,
                    Ok(_) | Err(Error::DegenerateSecant(_)) => {
                        state.alpha_hat + STALL_PERTURBATION
                    }
                    Err(e) => return Err(e),
                };
                (proposal, state.beta_hat)
            }
            UpdatePhase::UpdateBeta => {
                let proposal = match state.update_beta() {
                    Ok(b) if b.is_finite() => b,
                    Ok(_) | Err(Error::DegenerateSecant(_)) => {
                        state.beta_hat + STALL_PERTURBATION
                    }
                    Err(e) => return Err(e),
                };
                (state.alpha_hat, proposal)
            }
        };
        let ilr = measure(alpha_hat, beta_hat)?;
        state.record(alpha_hat, beta_hat, cost(alpha_hat, ilr))?;
        state.phase = state.phase.toggled();
        if ilr <= threshold {
            break;
        }
    }
    Ok(state)
}
