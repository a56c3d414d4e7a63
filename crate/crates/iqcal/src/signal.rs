//! Complex-signal primitives: coherent tone synthesis, single-bin
//! demodulation (a digital lock-in), image-leakage arithmetic, and seeded
//! Gaussian noise.
//!
//! Every tone frequency used by the simulations is required to be *coherent*:
//! it must complete an integer number of cycles over the record so that its
//! power lands in exactly one DFT bin. Image levels below -100 dB are
//! unmeasurable through window leakage, and coherent binning sidesteps
//! windowing entirely. Phases on the coherent grid are computed with integer
//! arithmetic (`2π·(m·k mod n)/n`), so even million-sample records carry no
//! accumulated rounding error.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// Absolute tolerance (in cycles over the whole record) when snapping a
/// frequency to an integer DFT bin.
const BIN_SNAP_TOL: f64 = 1e-6;

/// A uniformly sampled complex record with its sample rate.
///
/// Real RF records are carried in the same type with every imaginary part
/// exactly zero; operations that require real input verify this.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    /// Complex samples in time order.
    pub samples: Vec<Complex64>,
    /// Sample rate in hertz; always positive and finite.
    pub sample_rate: f64,
}

impl ComplexSignal {
    /// Wraps a sample buffer, validating the sample rate.
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::BadSampleRate(sample_rate));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Number of samples in the record.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// True when the record holds no samples.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Half the sample rate: the edge of the representable band.
    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    /// True when every sample's imaginary part is exactly zero.
    pub fn is_real(&self) -> bool {
        self.samples.iter().all(|s| s.im == 0.0)
    }

    /// Mean squared magnitude of the record.
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }
}

/// Complex amplitudes at a mirrored bin pair.
///
/// `signal` holds the amplitude at the band's center frequency and `image`
/// holds the *conjugated* amplitude at the mirrored bin, so the pair
/// transforms linearly under the mixer matrices and Kalman reconstruction.
/// `offset` records the magnitude of the demodulation offset; the center
/// itself may sit at a negative frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SidebandPair {
    /// Complex amplitude at the center bin.
    pub signal: Complex64,
    /// Conjugated complex amplitude at the mirrored bin.
    pub image: Complex64,
    /// Magnitude of the demodulation offset in hertz; positive.
    pub offset: f64,
}

impl SidebandPair {
    /// Builds a pair, validating that the offset is positive and finite.
    pub fn new(signal: Complex64, image: Complex64, offset: f64) -> Result<Self> {
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "sideband offset {offset} Hz must be positive"
            )));
        }
        Ok(Self {
            signal,
            image,
            offset,
        })
    }
}

/// Returns the signed bin index of `freq` on the length-`n` grid at
/// `sample_rate`, or `None` when the frequency is not coherent (does not
/// complete an integer number of cycles over the record).
pub fn coherent_bin(freq: f64, n: usize, sample_rate: f64) -> Option<i64> {
    if n == 0 || !(sample_rate > 0.0) || !freq.is_finite() {
        return None;
    }
    let cycles = freq * n as f64 / sample_rate;
    let m = cycles.round();
    if (cycles - m).abs() <= BIN_SNAP_TOL {
        Some(m as i64)
    } else {
        None
    }
}

/// Phase `2π·m·k/n` reduced exactly: the product and modulus are evaluated
/// in integer arithmetic before the single float division, so the phase of
/// sample `k` on bin `m` is accurate to one ulp regardless of record length.
pub(crate) fn bin_phase(m: i64, k: usize, n: usize) -> f64 {
    debug_assert!(n > 0 && (n as u64) < (1 << 32), "bin grid too large");
    let n64 = n as u64;
    let m_mod = m.rem_euclid(n as i64) as u64;
    let idx = (m_mod * (k as u64 % n64)) % n64;
    TAU * idx as f64 / n as f64
}

/// Synthesizes `amplitude · exp(j(2π·freq·t + phase))` sampled at
/// `sample_rate` for `n_samples` points.
///
/// Frequencies on the coherent grid are rendered with the exact integer
/// phase path; non-coherent frequencies are allowed here (only demodulation
/// requires coherence) and use plain phase accumulation.
///
/// ```
/// use iqcal::signal::synth_tone;
/// let t = synth_tone(250e3, 1.0, 0.0, 1e6, 4).unwrap();
/// // quarter-rate tone: 1, j, -1, -j
/// assert!((t.samples[1].im - 1.0).abs() < 1e-15);
/// ```
pub fn synth_tone(
    freq: f64,
    amplitude: f64,
    phase: f64,
    sample_rate: f64,
    n_samples: usize,
) -> Result<ComplexSignal> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::BadSampleRate(sample_rate));
    }
    if n_samples == 0 {
        return Err(Error::EmptySignal);
    }
    let nyquist = sample_rate / 2.0;
    if !freq.is_finite() || freq.abs() >= nyquist {
        return Err(Error::NyquistRange { freq, nyquist });
    }
    let samples = match coherent_bin(freq, n_samples, sample_rate) {
        Some(m) => (0..n_samples)
            .map(|k| Complex64::from_polar(amplitude, bin_phase(m, k, n_samples) + phase))
            .collect(),
        None => {
            let w = TAU * freq / sample_rate;
            (0..n_samples)
                .map(|k| Complex64::from_polar(amplitude, w * k as f64 + phase))
                .collect()
        }
    };
    Ok(ComplexSignal {
        samples,
        sample_rate,
    })
}

/// Synthesizes the real passband tone `amplitude · cos(2π·freq·t + phase)`
/// (imaginary parts exactly zero), the drive used when exercising a
/// downconverter directly. Same frequency rules as [`synth_tone`].
///
/// Demodulating a real cosine splits its power across the ±freq bins, so
/// [`demod_bin`] at `freq` reads `amplitude/2 · e^{j·phase}`.
pub fn synth_real_tone(
    freq: f64,
    amplitude: f64,
    phase: f64,
    sample_rate: f64,
    n_samples: usize,
) -> Result<ComplexSignal> {
    let mut tone = synth_tone(freq, amplitude, phase, sample_rate, n_samples)?;
    for s in &mut tone.samples {
        *s = Complex64::new(s.re, 0.0);
    }
    Ok(tone)
}

/// Projects the record onto `exp(j·2π·freq·t)` and returns the mean: the
/// complex amplitude in that bin. For a tone synthesized at `freq` with
/// amplitude `A` and phase `θ` this returns `A·e^{jθ}` exactly.
///
/// The frequency must be coherent over the record; anything else would leak
/// power between bins and silently corrupt leakage-ratio measurements, so it
/// is rejected instead.
pub fn demod_bin(sig: &ComplexSignal, freq: f64) -> Result<Complex64> {
    let n = sig.samples.len();
    if n == 0 {
        return Err(Error::EmptySignal);
    }
    let nyquist = sig.nyquist();
    if !freq.is_finite() || freq.abs() >= nyquist {
        return Err(Error::NyquistRange { freq, nyquist });
    }
    let m = coherent_bin(freq, n, sig.sample_rate).ok_or(Error::NonCoherent {
        freq,
        n,
        sample_rate: sig.sample_rate,
    })?;
    Ok(demod_slice(&sig.samples, m, n))
}

/// Projects `samples` onto bin `m` of the length-`n` grid and returns the
/// mean. Callers are responsible for having validated coherence; this is the
/// shared inner loop of [`demod_bin`] and the block-wise pair measurements.
pub(crate) fn demod_slice(samples: &[Complex64], m: i64, n: usize) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, s) in samples.iter().enumerate() {
        // conjugate basis: multiply by e^{-j·2π·m·k/n}
        acc += s * Complex64::from_polar(1.0, -bin_phase(m, k, n));
    }
    acc / n as f64
}

/// Image-leakage ratio in dB: `10·log10(image_power / signal_power)`.
///
/// Zero image power maps to `-inf`, representing perfect suppression.
pub fn ilr_db(image_power: f64, signal_power: f64) -> Result<f64> {
    if !(image_power >= 0.0 && image_power.is_finite())
        || !(signal_power > 0.0 && signal_power.is_finite())
    {
        return Err(Error::InvalidPowers {
            image: image_power,
            signal: signal_power,
        });
    }
    Ok(10.0 * (image_power / signal_power).log10())
}

/// Derives a decorrelated child seed from a base seed and a stream index,
/// so that independent random elements of one scenario never share a stream.
///
/// Uses the SplitMix64 finalizer, whose output is equidistributed over
/// 64-bit inputs.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Circular complex white Gaussian noise: independent real and imaginary
/// parts each of variance `variance/2`, so the per-sample total variance is
/// `variance`. Deterministic for a fixed seed.
pub fn awgn(n_samples: usize, variance: f64, seed: u64, sample_rate: f64) -> Result<ComplexSignal> {
    let std = noise_std(variance, 2.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("validated std");
    let samples = (0..n_samples)
        .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    ComplexSignal::new(samples, sample_rate)
}

/// Real white Gaussian noise of per-sample variance `variance`, stored with
/// imaginary parts exactly zero. Deterministic for a fixed seed.
pub fn awgn_real(
    n_samples: usize,
    variance: f64,
    seed: u64,
    sample_rate: f64,
) -> Result<ComplexSignal> {
    let std = noise_std(variance, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("validated std");
    let samples = (0..n_samples)
        .map(|_| Complex64::new(normal.sample(&mut rng), 0.0))
        .collect();
    ComplexSignal::new(samples, sample_rate)
}

fn noise_std(variance: f64, split: f64) -> Result<f64> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::BadVariance(variance));
    }
    Ok((variance / split).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TIGHT: f64 = 1e-12;

    #[test]
    fn dc_tone_is_constant() {
        let t = synth_tone(0.0, 1.0, 0.0, 1e6, 4).unwrap();
        for s in &t.samples {
            assert_eq!(*s, Complex64::new(1.0, 0.0), "DC tone must be exactly 1");
        }
    }

    #[test]
    fn quarter_rate_tone_rotates_through_axes() {
        let t = synth_tone(250e3, 1.0, 0.0, 1e6, 4).unwrap();
        let expect = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (s, (re, im)) in t.samples.iter().zip(expect) {
            assert!(
                (s.re - re).abs() < 1e-15 && (s.im - im).abs() < 1e-15,
                "expected {re}+{im}j, got {s}"
            );
        }
    }

    #[test]
    fn single_sample_tone_carries_its_phase() {
        let t = synth_tone(100e3, 0.5, std::f64::consts::FRAC_PI_2, 1e6, 1).unwrap();
        assert!((t.samples[0] - Complex64::new(0.0, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn tones_at_or_beyond_nyquist_are_rejected() {
        assert!(matches!(
            synth_tone(5e5, 1.0, 0.0, 1e6, 16),
            Err(Error::NyquistRange { .. })
        ));
        assert!(matches!(
            synth_tone(-6e5, 1.0, 0.0, 1e6, 16),
            Err(Error::NyquistRange { .. })
        ));
    }

    #[test]
    fn matched_bin_recovers_amplitude_and_phase() {
        let t = synth_tone(12.5e3, 0.75, 1.1, 1e6, 4000).unwrap();
        let a = demod_bin(&t, 12.5e3).unwrap();
        assert!(
            (a - Complex64::from_polar(0.75, 1.1)).norm() < TIGHT,
            "matched demodulation should return the synthesis amplitude, got {a}"
        );
    }

    #[test]
    fn real_tone_splits_between_mirror_bins() {
        let t = synth_real_tone(100e3, 0.8, 0.4, 1e6, 2000).unwrap();
        assert!(t.samples.iter().all(|s| s.im == 0.0));
        let pos = demod_bin(&t, 100e3).unwrap();
        let neg = demod_bin(&t, -100e3).unwrap();
        assert!((pos - Complex64::from_polar(0.4, 0.4)).norm() < TIGHT);
        assert!((neg - Complex64::from_polar(0.4, -0.4)).norm() < TIGHT);
    }

    #[test]
    fn orthogonal_coherent_bins_read_zero() {
        let t = synth_tone(100e3, 1.0, 0.0, 1e6, 1000).unwrap();
        let a = demod_bin(&t, -100e3).unwrap();
        assert!(a.norm() < TIGHT, "mirror bin of a pure tone must be empty");
        let b = demod_bin(&t, 101e3).unwrap();
        assert!(b.norm() < TIGHT, "neighboring bin must be empty");
    }

    #[test]
    fn two_tone_sum_resolves_independently() {
        // oracle: direct DFT sums of the composite record
        let fs = 1e6;
        let n = 2000;
        let t1 = synth_tone(40e3, 0.8, 0.3, fs, n).unwrap();
        let t2 = synth_tone(-15e3, 0.2, -1.0, fs, n).unwrap();
        let sum = ComplexSignal::new(
            t1.samples
                .iter()
                .zip(&t2.samples)
                .map(|(a, b)| a + b)
                .collect(),
            fs,
        )
        .unwrap();
        for (f, amp, ph) in [(40e3, 0.8, 0.3), (-15e3, 0.2, -1.0)] {
            let got = demod_bin(&sum, f).unwrap();
            let naive: Complex64 = sum
                .samples
                .iter()
                .enumerate()
                .map(|(k, s)| s * Complex64::from_polar(1.0, -TAU * f * k as f64 / fs))
                .sum::<Complex64>()
                / n as f64;
            assert!((got - Complex64::from_polar(amp, ph)).norm() < TIGHT);
            assert!((got - naive).norm() < 1e-10, "lock-in disagrees with DFT");
        }
    }

    #[test]
    fn demod_rejects_non_coherent_frequency() {
        let t = synth_tone(100e3, 1.0, 0.0, 1e6, 1000).unwrap();
        assert!(matches!(
            demod_bin(&t, 100.5e3),
            Err(Error::NonCoherent { .. })
        ));
    }

    #[test]
    fn demod_is_linear() {
        let fs = 1e6;
        let n = 512;
        let s1 = synth_tone(62.5e3, 1.0, 0.2, fs, n).unwrap();
        let s2 = synth_tone(-125e3, 1.0, -0.7, fs, n).unwrap();
        let (a, b) = (Complex64::new(0.3, -0.4), Complex64::new(-1.2, 0.5));
        let mix = ComplexSignal::new(
            s1.samples
                .iter()
                .zip(&s2.samples)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            fs,
        )
        .unwrap();
        for f in [62.5e3, -125e3] {
            let lhs = demod_bin(&mix, f).unwrap();
            let rhs =
                a * demod_bin(&s1, f).unwrap() + b * demod_bin(&s2, f).unwrap();
            assert!((lhs - rhs).norm() < TIGHT, "demodulation must be linear");
        }
    }

    #[test]
    fn single_tone_power_matches_record_power() {
        // Parseval on one coherent bin
        let t = synth_tone(30e3, 0.6, 0.9, 1e6, 800).unwrap();
        let bin = demod_bin(&t, 30e3).unwrap().norm_sqr();
        let rec = t.mean_power();
        assert!(
            ((bin - rec) / rec).abs() < TIGHT,
            "bin power {bin} vs record power {rec}"
        );
    }

    #[test]
    fn ilr_db_arithmetic() {
        assert_eq!(ilr_db(1.0, 1.0).unwrap(), 0.0);
        assert!((ilr_db(0.001, 1.0).unwrap() + 30.0).abs() < TIGHT);
        assert_eq!(ilr_db(0.0, 1.0).unwrap(), f64::NEG_INFINITY);
        assert!(ilr_db(-1.0, 1.0).is_err());
        assert!(ilr_db(1.0, 0.0).is_err());
    }

    #[test]
    fn awgn_is_reproducible_and_seed_sensitive() {
        let a = awgn(256, 1.0, 42, 1e6).unwrap();
        let b = awgn(256, 1.0, 42, 1e6).unwrap();
        let c = awgn(256, 1.0, 43, 1e6).unwrap();
        assert_eq!(a, b, "same seed must give bitwise-identical noise");
        assert_ne!(a, c, "different seeds must differ");
    }

    #[test]
    fn awgn_moments_match_configuration() {
        let n = 1_000_000;
        let v = 0.25;
        let x = awgn(n, v, 7, 1e6).unwrap();
        let mean = x.samples.iter().sum::<Complex64>() / n as f64;
        // 5 sigma of the mean estimator, sigma = sqrt(v/n) per quadrature
        let bound = 5.0 * (v / n as f64).sqrt();
        assert!(mean.norm() < bound, "mean {mean} beyond {bound}");
        let var = x.mean_power();
        assert!(
            ((var - v) / v).abs() < 0.01,
            "empirical variance {var} should be within 1% of {v}"
        );
    }

    #[test]
    fn zero_variance_noise_is_silence() {
        let x = awgn(64, 0.0, 3, 1e6).unwrap();
        assert!(x.samples.iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn real_noise_has_exactly_zero_imaginary_parts() {
        let x = awgn_real(1024, 0.5, 11, 1e6).unwrap();
        assert!(x.is_real());
        let var = x.mean_power();
        assert!(((var - 0.5) / 0.5).abs() < 0.1);
    }

    #[test]
    fn coherent_bin_detects_grid_membership() {
        assert_eq!(coherent_bin(100e3, 1000, 1e6), Some(100));
        assert_eq!(coherent_bin(-2e3, 1000, 1e6), Some(-2));
        assert_eq!(coherent_bin(100.4e3, 1000, 1e6), None);
        assert_eq!(coherent_bin(0.0, 16, 1e6), Some(0));
    }

    #[test]
    fn bin_phase_uses_exact_integer_reduction() {
        // m*k = 15 ≡ 7 (mod 8) → phase 7/8 of a turn
        assert_eq!(bin_phase(3, 5, 8), TAU * 7.0 / 8.0);
        // negative bins wrap: -1 ≡ 7 (mod 8)
        assert_eq!(bin_phase(-1, 1, 8), TAU * 7.0 / 8.0);
    }

    #[test]
    fn derived_seeds_do_not_collide_trivially() {
        let s: Vec<u64> = (0..100).map(|i| derive_seed(1234, i)).collect();
        let mut uniq = s.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), s.len(), "child seeds must be distinct");
    }

    #[test]
    fn sideband_pair_requires_positive_offset() {
        let z = Complex64::new(1.0, 0.0);
        assert!(SidebandPair::new(z, z, 0.0).is_err());
        assert!(SidebandPair::new(z, z, 20e3).is_ok());
    }
}
