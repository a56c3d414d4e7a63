//! Blind estimation of a downconverter's leakage ratio from the statistics
//! of its own output, wrapped in a scalar complex Kalman filter.
//!
//! An imbalanced downconverter folds a fraction `k_q` of each sideband into
//! the mirrored bin. When the incident sidebands are uncorrelated and
//! circular (`⟨Y_m·Y_{−m}⟩ = 0`), that folding is the *only* source of
//! correlation between the demodulated pair `(Z_m, Z_{−m})`, so `k_q` can be
//! estimated without any reference signal:
//!
//! ```text
//! k̂_p = ⟨Z_m·Z_{−m}⟩ / ⟨|Z_m + Z*_{−m}|²⟩
//! b   = −2·Im(k̂_p)            a = √(1 − b² − 4·Re(k̂_p))
//! k̂_q = (1 − a − jb)/(1 + a + jb)      G = √(a² + b²)    φ = atan2(b, a)
//! ```
//!
//! A negative radicand means the frame violated the circularity assumption
//! (or noise overwhelmed it); such frames are rejected rather than clamped,
//! because clamping would bias the filter.
//!
//! Each accepted frame's estimate is blended into a running value by a
//! one-dimensional Kalman filter over the random-walk model
//! `k_q(i+1) = k_q(i) + process noise`: precisions add, estimates blend in
//! proportion to their precisions, and the predicted variance grows by the
//! process variance `σ_p²` per frame. A cold start uses infinite prior
//! variance — represented as zero precision — so the first accepted frame
//! takes over exactly; a warm start from a previous calibration is just a
//! finite prior.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::SidebandPair;

/// One frame of demodulated sideband pairs, the unit of blind estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    /// The demodulated `(Z_m, Z*_{−m})` pairs recorded in this frame.
    pub z_pairs: Vec<SidebandPair>,
    /// Time samples each pair was demodulated over (bookkeeping for trace
    /// output; the estimator itself only uses the pair values).
    pub n_samples_per_pair: usize,
}

impl FrameObservation {
    /// Builds a frame; at least two pairs are required because the
    /// measurement variance is estimated from within-frame scatter.
    pub fn new(z_pairs: Vec<SidebandPair>, n_samples_per_pair: usize) -> Result<Self> {
        if z_pairs.len() < 2 {
            return Err(Error::DegenerateFrame(
                "a frame needs at least two sideband pairs",
            ));
        }
        if n_samples_per_pair == 0 {
            return Err(Error::DegenerateFrame(
                "pairs must be demodulated over at least one sample",
            ));
        }
        Ok(Self {
            z_pairs,
            n_samples_per_pair,
        })
    }

    /// Number of pairs in the frame.
    pub fn len(&self) -> usize {
        self.z_pairs.len()
    }

    /// Always false; frames hold at least two pairs.
    pub fn is_empty(&self) -> bool {
        self.z_pairs.is_empty()
    }
}

/// Undoes the sideband folding of a downconverter with leakage `k̂_q`
/// (up to the overall complex channel scale, which carries no image):
/// `Y_m = Z_m − k̂_q·Z*_{−m}`, `Y*_{−m} = −k̂_q*·Z_m + Z*_{−m}`.
///
/// With `k̂_q = 0` this is the identity; with `k̂_q` equal to the true
/// leakage it restores an image-free signal exactly.
pub fn reconstruct(z: &SidebandPair, k_hat: Complex64) -> SidebandPair {
    SidebandPair {
        signal: z.signal - k_hat * z.image,
        image: -k_hat.conj() * z.signal + z.image,
        offset: z.offset,
    }
}

/// Residual image-to-signal power ratio of a frame after reconstruction
/// with `k_hat` — the quantity a calibration run watches converge.
pub fn reconstructed_ilr(frame: &FrameObservation, k_hat: Complex64) -> Result<f64> {
    let mut sig = 0.0;
    let mut img = 0.0;
    for p in &frame.z_pairs {
        let y = reconstruct(p, k_hat);
        sig += y.signal.norm_sqr();
        img += y.image.norm_sqr();
    }
    if sig <= 0.0 {
        return Err(Error::InvalidPowers {
            image: img,
            signal: sig,
        });
    }
    Ok(img / sig)
}

/// Correlation statistic of one frame:
/// `k̂_p = ⟨Z_m·Z_{−m}⟩ / ⟨|Z_m + Z*_{−m}|²⟩`.
pub fn estimate_kp(frame: &FrameObservation) -> Result<Complex64> {
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    for p in &frame.z_pairs {
        // the pair stores the conjugated image amplitude Z*_{−m}
        num += p.signal * p.image.conj();
        den += (p.signal + p.image).norm_sqr();
    }
    if den <= 0.0 {
        return Err(Error::DegenerateFrame(
            "frame has zero power in the summed sidebands",
        ));
    }
    Ok(num / den)
}

/// A blind measurement of the downconverter, in all three parameterizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlindEstimate {
    /// Leakage ratio `k̂_q`.
    pub leakage: Complex64,
    /// Gain imbalance `G`.
    pub gain: f64,
    /// Phase imbalance `φ` in radians.
    pub phase: f64,
}

/// Converts a frame correlation `k̂_p` into the leakage ratio and the
/// underlying gain/phase imbalance:
/// `b = −2·Im(k̂_p)`, `a = √(1 − b² − 4·Re(k̂_p))`,
/// `k̂_q = (1 − a − jb)/(1 + a + jb)`, `G = √(a² + b²)`, `φ = atan2(b, a)`.
///
/// The radicand is mathematically nonnegative for any frame; a negative
/// value signals a violated circularity assumption and is reported as an
/// out-of-model error so the caller can reject the frame.
pub fn kp_to_kq(k_p: Complex64) -> Result<BlindEstimate> {
    let b = -2.0 * k_p.im;
    let radicand = 1.0 - b * b - 4.0 * k_p.re;
    if !(radicand >= 0.0) {
        return Err(Error::OutOfModel(radicand));
    }
    let a = radicand.sqrt();
    let leakage = Complex64::new(1.0 - a, -b) / Complex64::new(1.0 + a, b);
    Ok(BlindEstimate {
        leakage,
        gain: a.hypot(b),
        phase: b.atan2(a),
    })
}

/// Error variance of one frame's blind estimate,
/// `σ_q² = [N·(1 + σ_k²/σ_{−k}²)·(1 + σ_{−k}²/σ_k²)]^{−1}`,
/// from the number of pairs and the two reconstructed-magnitude variances.
pub fn sigma_q_sq(n: usize, var_k: f64, var_negk: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::DegenerateFrame(
            "variance formula needs at least one pair",
        ));
    }
    for v in [var_k, var_negk] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::BadVariance(v));
        }
    }
    let r = var_k / var_negk;
    Ok(1.0 / (n as f64 * (1.0 + r) * (1.0 + 1.0 / r)))
}

/// Running state of the scalar Kalman filter over the leakage ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    /// Filtered estimate after the latest accepted frame.
    pub k_filtered: Complex64,
    /// Prediction for the next frame (equals the filtered value under the
    /// random-walk model).
    pub k_predicted: Complex64,
    /// Variance of the filtered estimate.
    pub var_filtered: f64,
    /// Variance of the prediction: `var_filtered + var_process`, or infinite
    /// before any frame has been accepted on a cold start.
    pub var_predicted: f64,
    /// Random-walk variance added per frame to track a drifting mixer.
    pub var_process: f64,
    /// Frames seen, counting rejected ones.
    pub frame_index: u64,
}

/// Initializes the filter at a prior estimate `k0` with variance `var0`.
///
/// `var0 = ∞` is the canonical cold start: the prior carries zero precision,
/// so the first accepted frame's measurement takes over exactly. A finite
/// `var0` warm-starts from a previous calibration run.
pub fn init_kalman(k0: Complex64, var0: f64, var_process: f64) -> Result<KalmanState> {
    if !k0.is_finite() {
        return Err(Error::InvalidScenario(format!(
            "initial leakage estimate {k0} must be finite"
        )));
    }
    if !(var0 > 0.0) {
        return Err(Error::BadVariance(var0));
    }
    if !(var_process >= 0.0 && var_process.is_finite()) {
        return Err(Error::BadVariance(var_process));
    }
    Ok(KalmanState {
        k_filtered: k0,
        k_predicted: k0,
        var_filtered: var0,
        var_predicted: var0,
        var_process,
        frame_index: 0,
    })
}

/// What one frame did to the filter.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameOutcome {
    /// The frame produced a usable measurement that was blended in.
    Accepted {
        /// The frame's raw (unfiltered) blind estimate.
        measurement: BlindEstimate,
        /// The variance `σ_q²` assigned to that measurement.
        measurement_variance: f64,
    },
    /// The frame violated the estimator's assumptions and was skipped; the
    /// state is unchanged except for the frame counter.
    Rejected {
        /// Which assumption failed.
        reason: Error,
    },
}

fn magnitude_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

fn frame_measurement(
    frame: &FrameObservation,
    k_predicted: Complex64,
) -> Result<(BlindEstimate, f64)> {
    // magnitude scatter of the reconstructed sidebands sets the frame's
    // measurement variance (unbiased sample variances)
    let reconstructed: Vec<SidebandPair> = frame
        .z_pairs
        .iter()
        .map(|p| reconstruct(p, k_predicted))
        .collect();
    let mags_k: Vec<f64> = reconstructed.iter().map(|p| p.signal.norm()).collect();
    let mags_negk: Vec<f64> = reconstructed.iter().map(|p| p.image.norm()).collect();
    let var_q = sigma_q_sq(
        frame.len(),
        magnitude_variance(&mags_k),
        magnitude_variance(&mags_negk),
    )?;
    // the raw measurement itself comes from the uncorrected pairs
    let measurement = kp_to_kq(estimate_kp(frame)?)?;
    Ok((measurement, var_q))
}

/// Feeds one frame to the filter and returns the updated state plus what
/// happened.
///
/// An accepted frame runs the full cycle: reconstruct with the current
/// prediction to grade the frame (`σ_q²`), measure `k̂_q` blindly, add the
/// precisions, blend the estimates by precision, and grow the prediction
/// variance by `σ_p²`. A frame whose statistics violate the model (zero
/// scatter, zero summed power, negative radicand) is rejected: the estimate
/// and variances stay exactly as they were, only `frame_index` advances.
pub fn kalman_frame(state: &KalmanState, frame: &FrameObservation) -> (KalmanState, FrameOutcome) {
    let mut next = *state;
    next.frame_index += 1;
    match frame_measurement(frame, state.k_predicted) {
        Err(reason) => (next, FrameOutcome::Rejected { reason }),
        Ok((measurement, var_q)) => {
            // infinite prior variance is handled as exactly zero precision
            let prior_precision = if state.var_predicted.is_finite() {
                1.0 / state.var_predicted
            } else {
                0.0
            };
            let var_f = 1.0 / (prior_precision + 1.0 / var_q);
            let blended =
                (state.k_predicted * prior_precision + measurement.leakage / var_q) * var_f;
            next.k_filtered = blended;
            next.var_filtered = var_f;
            next.k_predicted = blended;
            next.var_predicted = var_f + state.var_process;
            (
                next,
                FrameOutcome::Accepted {
                    measurement,
                    measurement_variance: var_q,
                },
            )
        }
    }
}
