//! The analog plant under calibration: imbalanced quadrature mixers in both
//! conversion directions, their 2×2 sideband transfer matrices, a slow
//! parameter drift process, and a transmission channel with per-sideband
//! attenuation and additive noise.
//!
//! An imbalanced upconverter computes
//! `r(t) = Re{ z(t)·[cos(Ωt) + j·G·sin(Ωt + φ)] }`
//! and the matching downconverter
//! `z(t) = LPF{ r(t)·[cos(Ωt) − j·G·sin(Ωt + φ)] }`,
//! where `G` is the gain imbalance and `φ` the phase imbalance of the
//! quadrature branch. With the sum and difference coefficients
//! `J = 1 + G·e^{−jφ}` and `K = 1 − G·e^{jφ}`, the sideband pairs transform
//! as
//!
//! ```text
//! upconversion:    (c₊, c₋*)ᵀ = 1/4 · [[J*, K], [K*, J ]] · (z₊, z₋*)ᵀ
//! downconversion:  (Z₊, Z₋*)ᵀ = 1/4 · [[J,  K], [K*, J*]] · (Y₊, Y₋*)ᵀ
//! ```
//!
//! with `+` the signal side and `−` the mirrored image side. The
//! downconversion transfer factors into a unit-diagonal *leakage* matrix
//! `[[1, k_q], [k_q*, 1]]` and a diagonal *scaling* matrix
//! `diag(J/2, J*/2)`, composed with an overall 1/2; only the leakage part
//! mixes the sidebands, so calibration needs just the single complex
//! parameter `k_q = K/J*`.
//!
//! Time-domain amplitudes follow the lock-in convention of
//! [`demod_bin`](crate::signal::demod_bin): a real record `cos(ωt)` carries
//! amplitude 1/2 in its `+ω` bin. The matrix operations above are exact in
//! those units, which the unit tests verify against the time-domain mixers.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::signal::{awgn_real, bin_phase, coherent_bin, demod_bin, ComplexSignal, SidebandPair};

/// Smallest gain the drift process can reach; random walks are clamped here
/// so a drifting mixer always remains a valid mixer.
const GAIN_FLOOR: f64 = 1e-12;

/// Wraps an angle into the canonical interval `(-π, π]`.
pub(crate) fn wrap_phase(phase: f64) -> f64 {
    let r = phase.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Gain and phase imbalance of one quadrature mixer.
///
/// The invariants `G > 0` and `φ ∈ (-π, π]` always hold; constructors
/// validate or normalize. A perfect mixer has `G = 1`, `φ = 0`, making the
/// difference coefficient `K` and the leakage ratio `k_q` vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImbalanceParams {
    gain: f64,
    phase: f64,
}

impl ImbalanceParams {
    /// Builds imbalance parameters from gain `G > 0` and phase `φ` in
    /// radians (wrapped into `(-π, π]`).
    pub fn new(gain: f64, phase: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::BadGain(gain));
        }
        if !phase.is_finite() {
            return Err(Error::BadPhase(phase));
        }
        Ok(Self {
            gain,
            phase: wrap_phase(phase),
        })
    }

    /// The perfect mixer: unit gain, zero phase skew.
    pub fn ideal() -> Self {
        Self {
            gain: 1.0,
            phase: 0.0,
        }
    }

    /// Builds from the in-phase/quadrature view `α = G·cosφ`, `β = G·sinφ`.
    pub fn from_alpha_beta(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(alpha.hypot(beta), beta.atan2(alpha))
    }

    /// Inverts a leakage ratio back to gain and phase.
    ///
    /// Only leakage magnitudes below one correspond to a mixer with positive
    /// in-phase gain; anything else is rejected as outside the model.
    pub fn from_leakage(k_q: Complex64) -> Result<Self> {
        if !k_q.is_finite() || k_q.norm() >= 1.0 {
            return Err(Error::OutOfModel(k_q.norm()));
        }
        // k_q = (1 - w)/(1 + w) with w = G·e^{jφ}  ⇒  w = (1 - k_q)/(1 + k_q)
        let w = (Complex64::new(1.0, 0.0) - k_q) / (Complex64::new(1.0, 0.0) + k_q);
        Self::new(w.norm(), w.arg())
    }

    /// Gain imbalance `G`.
    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Phase imbalance `φ` in radians, within `(-π, π]`.
    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// In-phase component `α = G·cosφ`.
    pub fn alpha(&self) -> f64 {
        self.gain * self.phase.cos()
    }

    /// Quadrature component `β = G·sinφ`.
    pub fn beta(&self) -> f64 {
        self.gain * self.phase.sin()
    }

    /// Sum coefficient `J = 1 + G·e^{-jφ}`; equals 2 for a perfect mixer.
    pub fn sum_coeff(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) + Complex64::from_polar(self.gain, -self.phase)
    }

    /// Difference coefficient `K = 1 - G·e^{jφ}`; vanishes for a perfect
    /// mixer.
    pub fn diff_coeff(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) - Complex64::from_polar(self.gain, self.phase)
    }

    /// Leakage ratio `k_q = K/J* = (1 - G·e^{jφ})/(1 + G·e^{jφ})`: the
    /// fraction of the mirrored sideband a downconverter mixes into each
    /// output bin.
    ///
    /// Undefined exactly at `G = 1, φ = π`, where the denominator vanishes.
    pub fn leakage_ratio(&self) -> Result<Complex64> {
        let denom = Complex64::new(1.0, 0.0) + Complex64::from_polar(self.gain, self.phase);
        // relative to the coefficient scale 1 + G so rounding residue near
        // the exact zero at (G = 1, φ = π) is still caught
        if denom.norm() < 1e-12 * (1.0 + self.gain) {
            return Err(Error::DegenerateMixer {
                gain: self.gain,
                phase: self.phase,
            });
        }
        Ok(self.diff_coeff() / denom)
    }
}

/// A 2×2 complex transfer acting on a sideband pair
/// `(signal, conjugated image)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTransfer {
    /// Row-major matrix entries.
    pub m: [[Complex64; 2]; 2],
}

impl PairTransfer {
    /// Applies the transfer to a pair, preserving its offset.
    pub fn apply(&self, p: &SidebandPair) -> SidebandPair {
        SidebandPair {
            signal: self.m[0][0] * p.signal + self.m[0][1] * p.image,
            image: self.m[1][0] * p.signal + self.m[1][1] * p.image,
            offset: p.offset,
        }
    }

    /// Matrix product `self · rhs`.
    pub fn compose(&self, rhs: &Self) -> Self {
        let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.m[i][0] * rhs.m[0][j] + self.m[i][1] * rhs.m[1][j];
            }
        }
        Self { m }
    }

    /// Scales every entry by a real factor.
    pub fn scale(&self, s: f64) -> Self {
        let mut m = self.m;
        for row in &mut m {
            for cell in row {
                *cell *= s;
            }
        }
        Self { m }
    }
}

/// Upconversion sideband transfer `1/4·[[J*, K], [K*, J]]`, mapping baseband
/// amplitudes `(z₊, z₋*)` to RF amplitudes `(c₊, c₋*)` in lock-in units.
pub fn upconvert_transfer(imb: &ImbalanceParams) -> PairTransfer {
    let j = imb.sum_coeff();
    let k = imb.diff_coeff();
    PairTransfer {
        m: [[j.conj(), k], [k.conj(), j]],
    }
    .scale(0.25)
}

/// Downconversion sideband transfer `1/4·[[J, K], [K*, J*]]`, mapping
/// incident RF cosine amplitudes `(Y₊, Y₋*)` to baseband amplitudes
/// `(Z₊, Z₋*)`.
pub fn downconvert_transfer(imb: &ImbalanceParams) -> PairTransfer {
    let j = imb.sum_coeff();
    let k = imb.diff_coeff();
    PairTransfer {
        m: [[j, k], [k.conj(), j.conj()]],
    }
    .scale(0.25)
}

/// Unit-diagonal leakage matrix `[[1, k_q], [k_q*, 1]]` — the part of the
/// downconversion transfer that actually mixes the sidebands.
pub fn leakage_matrix(imb: &ImbalanceParams) -> Result<PairTransfer> {
    let k_q = imb.leakage_ratio()?;
    let one = Complex64::new(1.0, 0.0);
    Ok(PairTransfer {
        m: [[one, k_q], [k_q.conj(), one]],
    })
}

/// Diagonal scaling matrix `diag(J/2, J*/2)` — each channel's complex scale,
/// equal to the identity for a perfect mixer. The downconversion transfer
/// factors exactly as `1/2 · leakage_matrix · scaling_matrix`.
pub fn scaling_matrix(imb: &ImbalanceParams) -> PairTransfer {
    let j = imb.sum_coeff();
    let zero = Complex64::new(0.0, 0.0);
    PairTransfer {
        m: [[j / 2.0, zero], [zero, j.conj() / 2.0]],
    }
}

/// Applies the upconversion transfer matrix to one sideband pair.
pub fn upconvert_matrix(z_pair: &SidebandPair, imb: &ImbalanceParams) -> SidebandPair {
    upconvert_transfer(imb).apply(z_pair)
}

/// Applies the downconversion transfer matrix to one sideband pair.
pub fn downconvert_matrix(y_pair: &SidebandPair, imb: &ImbalanceParams) -> SidebandPair {
    downconvert_transfer(imb).apply(y_pair)
}

fn validate_lo(lo_freq: f64, sig: &ComplexSignal) -> Result<i64> {
    if !(lo_freq > 0.0) {
        return Err(Error::InvalidScenario(format!(
            "LO frequency {lo_freq} Hz must be positive"
        )));
    }
    let nyquist = sig.nyquist();
    if lo_freq >= nyquist {
        return Err(Error::NyquistRange {
            freq: lo_freq,
            nyquist,
        });
    }
    coherent_bin(lo_freq, sig.len(), sig.sample_rate).ok_or(Error::NonCoherent {
        freq: lo_freq,
        n: sig.len(),
        sample_rate: sig.sample_rate,
    })
}

/// Upconverts complex baseband through an imbalanced mixer, producing a real
/// RF record: `r(t) = Re{ z(t)·[cos(Ωt) + j·G·sin(Ωt + φ)] }`.
///
/// The LO must be positive, below Nyquist, and coherent over the record so
/// sideband powers stay confined to their bins.
pub fn upconvert(z: &ComplexSignal, lo_freq: f64, imb: &ImbalanceParams) -> Result<ComplexSignal> {
    if z.is_empty() {
        return Err(Error::EmptySignal);
    }
    let m_lo = validate_lo(lo_freq, z)?;
    let n = z.len();
    let (g, phi) = (imb.gain(), imb.phase());
    let samples = z
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let theta = bin_phase(m_lo, k, n);
            // Re{(zI + j·zQ)(cosθ + j·G·sin(θ+φ))} = zI·cosθ − G·zQ·sin(θ+φ)
            let r = s.re * theta.cos() - g * s.im * (theta + phi).sin();
            Complex64::new(r, 0.0)
        })
        .collect();
    ComplexSignal::new(samples, z.sample_rate)
}

/// Downconverts a real RF record through an imbalanced mixer:
/// `z(t) = LPF{ r(t)·[cos(Ωt) − j·G·sin(Ωt + φ)] }`.
///
/// The low-pass filter is an exact sideband projection: the product record
/// is decomposed on the coherent DFT grid and every bin at or above the LO
/// frequency is discarded, which removes the double-frequency terms without
/// filter-design artifacts.
pub fn downconvert(
    r: &ComplexSignal,
    lo_freq: f64,
    imb: &ImbalanceParams,
) -> Result<ComplexSignal> {
    if r.is_empty() {
        return Err(Error::EmptySignal);
    }
    if !r.is_real() {
        return Err(Error::NotReal);
    }
    let m_lo = validate_lo(lo_freq, r)?;
    let n = r.len();
    let (g, phi) = (imb.gain(), imb.phase());
    let mut buf: Vec<Complex64> = r
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let theta = bin_phase(m_lo, k, n);
            Complex64::new(s.re * theta.cos(), -g * s.re * (theta + phi).sin())
        })
        .collect();

    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (idx, bin) in buf.iter_mut().enumerate() {
        // signed bin index in (-n/2, n/2]
        let signed = if idx as i64 <= n as i64 / 2 {
            idx as i64
        } else {
            idx as i64 - n as i64
        };
        if signed.abs() >= m_lo {
            *bin = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for s in &mut buf {
        *s /= n as f64;
    }
    ComplexSignal::new(buf, r.sample_rate)
}

/// Per-step random-walk drift of a mixer's gain and phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftProcess {
    /// Standard deviation of the per-step gain increment.
    pub gain_step_std: f64,
    /// Standard deviation of the per-step phase increment, radians.
    pub phase_step_std: f64,
    /// Base seed; each step derives its own stream from this.
    pub seed: u64,
}

impl DriftProcess {
    /// Builds a drift process, validating both step deviations.
    pub fn new(gain_step_std: f64, phase_step_std: f64, seed: u64) -> Result<Self> {
        for std in [gain_step_std, phase_step_std] {
            if !(std >= 0.0 && std.is_finite()) {
                return Err(Error::BadVariance(std));
            }
        }
        Ok(Self {
            gain_step_std,
            phase_step_std,
            seed,
        })
    }
}

/// Advances a mixer's imbalance by one random-walk step.
///
/// The increments are Gaussian and fully determined by `(drift.seed,
/// step_index)`, so a drift trajectory is reproducible and can be evaluated
/// at any step without replaying the walk history sequentially. The gain is
/// clamped to stay positive; the phase re-wraps into `(-π, π]`.
pub fn drift_step(
    imb: &ImbalanceParams,
    drift: &DriftProcess,
    step_index: u64,
) -> ImbalanceParams {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::signal::derive_seed(drift.seed, step_index));
    let dg = Normal::new(0.0, drift.gain_step_std)
        .expect("validated std")
        .sample(&mut rng);
    let dp = Normal::new(0.0, drift.phase_step_std)
        .expect("validated std")
        .sample(&mut rng);
    let gain = (imb.gain() + dg).max(GAIN_FLOOR);
    ImbalanceParams::new(gain, imb.phase() + dp).expect("clamped drift parameters are valid")
}

/// Transmission channel between the two mixers: independent attenuation of
/// the two sidebands, additive real noise, and an optional carrier detuning
/// between the conversion stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Attenuation of the upper (signal) sideband in dB.
    pub atten_signal_db: f64,
    /// Attenuation of the lower (image) sideband in dB.
    pub atten_image_db: f64,
    /// Per-sample variance of the additive real noise.
    pub noise_variance: f64,
    /// Carrier frequency offset in Hz: how far the downconversion LO is
    /// detuned below the upconversion LO.
    pub cfo: f64,
}

impl ChannelParams {
    /// A transparent channel: no attenuation, no noise, no detuning.
    pub fn transparent() -> Self {
        Self {
            atten_signal_db: 0.0,
            atten_image_db: 0.0,
            noise_variance: 0.0,
            cfo: 0.0,
        }
    }

    /// Builds channel parameters, validating ranges.
    pub fn new(atten_signal_db: f64, atten_image_db: f64, noise_variance: f64, cfo: f64) -> Result<Self> {
        if !atten_signal_db.is_finite() || !atten_image_db.is_finite() {
            return Err(Error::InvalidScenario(format!(
                "attenuations must be finite, got {atten_signal_db} / {atten_image_db} dB"
            )));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::BadVariance(noise_variance));
        }
        if !cfo.is_finite() {
            return Err(Error::InvalidScenario(format!("CFO {cfo} Hz must be finite")));
        }
        Ok(Self {
            atten_signal_db,
            atten_image_db,
            noise_variance,
            cfo,
        })
    }
}

/// Passes a real RF record through the channel: attenuates the upper
/// sideband (`carrier + if_freq`) by `atten_signal_db`, the lower sideband
/// (`carrier − if_freq`) by `atten_image_db`, and adds real Gaussian noise.
///
/// Attenuation works by exact sideband decomposition: the amplitude in each
/// targeted bin is measured, and the difference between its attenuated and
/// original contribution is added back, leaving every other bin untouched.
/// With zero attenuation and zero noise the record passes through
/// bit-for-bit.
pub fn apply_channel(
    r: &ComplexSignal,
    chan: &ChannelParams,
    carrier: f64,
    if_freq: f64,
    seed: u64,
) -> Result<ComplexSignal> {
    if r.is_empty() {
        return Err(Error::EmptySignal);
    }
    if !r.is_real() {
        return Err(Error::NotReal);
    }
    if !(if_freq > 0.0 && if_freq < carrier) {
        return Err(Error::InvalidScenario(format!(
            "need 0 < if_freq < carrier, got if_freq {if_freq} Hz, carrier {carrier} Hz"
        )));
    }
    let n = r.len();
    let mut out = r.clone();
    for (freq, atten_db) in [
        (carrier + if_freq, chan.atten_signal_db),
        (carrier - if_freq, chan.atten_image_db),
    ] {
        if atten_db == 0.0 {
            continue;
        }
        let m = coherent_bin(freq, n, r.sample_rate).ok_or(Error::NonCoherent {
            freq,
            n,
            sample_rate: r.sample_rate,
        })?;
        let amp = demod_bin(r, freq)?;
        let gain = 10f64.powf(-atten_db / 20.0);
        let delta = (gain - 1.0) * amp;
        for (k, s) in out.samples.iter_mut().enumerate() {
            let theta = bin_phase(m, k, n);
            // a real record holds the conjugate amplitude at −freq, so
            // scaling both bins adds 2·Re{Δ·e^{jθ}}
            s.re += 2.0 * (delta.re * theta.cos() - delta.im * theta.sin());
        }
    }
    if chan.noise_variance > 0.0 {
        let noise = awgn_real(n, chan.noise_variance, seed, r.sample_rate)?;
        for (s, w) in out.samples.iter_mut().zip(&noise.samples) {
            s.re += w.re;
        }
    }
    Ok(out)
}
