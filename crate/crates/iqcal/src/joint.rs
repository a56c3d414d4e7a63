//! Joint transmit–receive calibration: scenario descriptions and the
//! closed-loop protocols that calibrate an imbalanced upconverter *through*
//! an imbalanced downconverter.
//!
//! The catch in joint calibration is that the receive mixer folds its own
//! image on top of the transmit image being measured, and the blind
//! receive-leakage estimator is only valid on data whose mirror bins are
//! uncorrelated. Two protocols arrange that:
//!
//! * **Noise-gated** ([`run_noise_gated`]): the transmitter idles while
//!   broadband channel noise — statistically circular, hence uncorrelated
//!   across mirror bins — sounds the downconverter alone. The estimator
//!   refreshes `k̂_q` on those frames, the transmitter then fires, and the
//!   received pair is un-folded with `k̂_q` before the transmit image is
//!   read off and handed to the secant search.
//! * **Frequency offset** ([`run_cfo`]): the receive LO is detuned by `δf`,
//!   which slides the transmit signal and the transmit image onto two
//!   distinct baseband pairs whose mirror bins hold only noise. Each pair
//!   satisfies the circularity assumption with the transmitter *on*, so
//!   estimation and measurement run simultaneously and continuously, one
//!   estimator per band.
//!
//! A third, deliberately broken control ([`run_uncorrected`]) feeds the
//! estimator transmitter-on data without detuning. Its mirror bins carry the
//! fully correlated transmit image, the core estimator assumption fails, and
//! the reported leakage ratio stops tracking the true one — the behavior the
//! other two protocols exist to avoid.

use num_complex::Complex64;

use crate::blind::{
    init_kalman, kalman_frame, reconstruct, reconstructed_ilr, FrameObservation, FrameOutcome,
    KalmanState,
};
use crate::error::{Error, Result};
use crate::mixer::{apply_channel, downconvert, upconvert, ChannelParams, ImbalanceParams};
use crate::predistort::{calibrate_upconversion, predistort, PredistortState, SecantSettings};
use crate::signal::{
    coherent_bin, demod_bin, demod_slice, derive_seed, synth_real_tone, synth_tone, ComplexSignal,
    SidebandPair,
};

/// Which joint-calibration protocol a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointMethod {
    /// Gate the transmitter off and refresh the receive-leakage estimate on
    /// channel noise before each transmit measurement.
    NoiseGated,
    /// Detune the receive LO so that estimation and measurement coexist on
    /// separated bands with the transmitter running continuously.
    Cfo,
    /// Control mode: estimate on transmitter-on data without detuning,
    /// violating the circularity assumption. Expected to mistrack; kept to
    /// demonstrate why the other two protocols are necessary.
    Uncorrected,
}

impl JointMethod {
    /// Short label used in trace output.
    pub fn label(self) -> &'static str {
        match self {
            JointMethod::NoiseGated => "noise",
            JointMethod::Cfo => "cfo",
            JointMethod::Uncorrected => "uncorrected",
        }
    }
}

/// The receive-leakage estimates maintained by a joint run, one per measured
/// band. Protocols without band separation keep a single estimator and
/// report it in both slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualEstimate {
    /// Estimate for the band whose RF origin is the upconversion image.
    pub k_red: Complex64,
    /// Estimate for the band carrying the wanted signal.
    pub k_blue: Complex64,
}

/// Everything needed to run one joint calibration.
#[derive(Debug, Clone)]
pub struct JointScenario {
    /// Transmit mixer imbalance (the one being corrected).
    pub up_imb: ImbalanceParams,
    /// Receive mixer imbalance (the one being blindly estimated).
    pub down_imb: ImbalanceParams,
    /// Distinct receive imbalance seen by the red band, for modeling mixers
    /// whose imbalance varies across frequency. `None` applies `down_imb`
    /// to both bands. Only meaningful for the detuned protocol.
    pub down_imb_red: Option<ImbalanceParams>,
    /// Channel between the mixers. Its `cfo` field is the receive-LO
    /// detuning `δf` and must agree with `method`.
    pub chan: ChannelParams,
    /// Which protocol to run.
    pub method: JointMethod,
    /// Transmitter-off frames fed to the estimator before each measurement
    /// (noise-gated protocol only).
    pub noise_sampling_duration: usize,
    /// Estimator frames consumed per secant step by the continuous
    /// protocols.
    pub kalman_frames_per_step: usize,
    /// Transmit LO frequency in Hz.
    pub carrier: f64,
    /// Intermediate (baseband drive) frequency in Hz.
    pub if_freq: f64,
    /// Simulation sample rate in Hz.
    pub sample_rate: f64,
    /// Sideband pairs demodulated per frame.
    pub pairs_per_frame: usize,
    /// Samples each pair is demodulated over; one frame spans
    /// `pairs_per_frame · samples_per_pair` samples.
    pub samples_per_pair: usize,
    /// Random-walk variance added to the leakage estimate per frame.
    pub kalman_process_var: f64,
    /// Optional warm start `(k̂₀, var₀)` for the estimator; `None` cold
    /// starts with an infinite-variance prior.
    pub kalman_init: Option<(Complex64, f64)>,
    /// Secant search configuration: seed corrections, stop threshold,
    /// measurement budget.
    pub secant: SecantSettings,
    /// Base seed from which every frame's noise stream is derived.
    pub seed: u64,
}

impl JointScenario {
    /// Checks cross-field consistency without running anything.
    pub fn validate(&self) -> Result<()> {
        ChannelParams::new(
            self.chan.atten_signal_db,
            self.chan.atten_image_db,
            self.chan.noise_variance,
            self.chan.cfo,
        )?;
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::BadSampleRate(self.sample_rate));
        }
        if !(self.if_freq > 0.0 && self.carrier > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "carrier {} Hz and intermediate frequency {} Hz must be positive",
                self.carrier, self.if_freq
            )));
        }
        let top = self.carrier + self.if_freq + self.chan.cfo.abs();
        if top >= self.sample_rate / 2.0 {
            return Err(Error::NyquistRange {
                freq: top,
                nyquist: self.sample_rate / 2.0,
            });
        }
        if self.carrier - self.if_freq - self.chan.cfo.abs() <= 0.0 {
            return Err(Error::InvalidScenario(format!(
                "image sideband at carrier − IF − |δf| = {} Hz must stay above DC",
                self.carrier - self.if_freq - self.chan.cfo.abs()
            )));
        }
        match self.method {
            JointMethod::NoiseGated | JointMethod::Uncorrected => {
                if self.chan.cfo != 0.0 {
                    return Err(Error::InvalidScenario(format!(
                        "the {} protocol requires zero receive detuning, got {} Hz",
                        self.method.label(),
                        self.chan.cfo
                    )));
                }
            }
            JointMethod::Cfo => {
                if self.chan.cfo == 0.0 {
                    return Err(Error::InvalidScenario(
                        "the detuned protocol requires a nonzero receive detuning".into(),
                    ));
                }
                if self.chan.cfo.abs() == self.if_freq {
                    return Err(Error::InvalidScenario(format!(
                        "detuning of exactly ±IF ({} Hz) folds one measured band onto DC",
                        self.if_freq
                    )));
                }
            }
        }
        if self.method != JointMethod::Cfo && self.down_imb_red.is_some() {
            return Err(Error::InvalidScenario(
                "a band-specific receive imbalance needs the detuned protocol's two bands".into(),
            ));
        }
        if self.method == JointMethod::NoiseGated && self.noise_sampling_duration == 0 {
            return Err(Error::InvalidScenario(
                "the noise-gated protocol needs at least one transmitter-off frame per step"
                    .into(),
            ));
        }
        if !(1..=10_000).contains(&self.kalman_frames_per_step) {
            return Err(Error::InvalidScenario(format!(
                "estimator frames per step must lie in [1, 10000], got {}",
                self.kalman_frames_per_step
            )));
        }
        if self.pairs_per_frame < 2 || self.samples_per_pair == 0 {
            return Err(Error::InvalidScenario(format!(
                "need at least 2 pairs per frame and 1 sample per pair, got {} × {}",
                self.pairs_per_frame, self.samples_per_pair
            )));
        }
        if !(self.kalman_process_var >= 0.0 && self.kalman_process_var.is_finite()) {
            return Err(Error::BadVariance(self.kalman_process_var));
        }
        if let Some((k0, var0)) = self.kalman_init {
            if !k0.is_finite() || !(var0 > 0.0) {
                return Err(Error::InvalidScenario(format!(
                    "warm-start estimate ({k0}, variance {var0}) is not usable"
                )));
            }
        }
        // Every tone the run synthesizes or demodulates must land exactly on
        // a DFT bin, otherwise leakage smears across the measurement bands.
        let n = self.frame_len();
        for freq in [
            self.if_freq,
            self.carrier,
            self.carrier - self.chan.cfo,
            self.carrier - self.if_freq,
            self.carrier + self.if_freq,
        ] {
            require_coherent(freq, n, self.sample_rate)?;
        }
        for (center, mirror) in self.bands() {
            require_coherent(center, self.samples_per_pair, self.sample_rate)?;
            require_coherent(mirror, self.samples_per_pair, self.sample_rate)?;
        }
        Ok(())
    }

    /// Samples in one estimator frame.
    pub fn frame_len(&self) -> usize {
        self.pairs_per_frame * self.samples_per_pair
    }

    /// The `(center, mirror)` demodulation bands after downconversion: a
    /// single `(+IF, −IF)` pair without detuning; with detuning `δf` the
    /// blue (signal) band first, then the red (upconversion-image) band.
    fn bands(&self) -> Vec<(f64, f64)> {
        match self.method {
            JointMethod::NoiseGated | JointMethod::Uncorrected => {
                vec![(self.if_freq, -self.if_freq)]
            }
            JointMethod::Cfo => {
                let d = self.chan.cfo;
                vec![
                    (self.if_freq + d, -(self.if_freq + d)),
                    (-self.if_freq + d, self.if_freq - d),
                ]
            }
        }
    }

    fn kalman_start(&self) -> Result<KalmanState> {
        let (k0, var0) = self
            .kalman_init
            .unwrap_or((Complex64::new(0.0, 0.0), f64::INFINITY));
        init_kalman(k0, var0, self.kalman_process_var)
    }
}

/// One row of a joint-calibration trace: everything observable after a
/// single secant measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointIteration {
    /// 1-based measurement index.
    pub iteration: usize,
    /// Gain correction in effect for this measurement.
    pub alpha_hat: f64,
    /// Quadrature correction in effect for this measurement.
    pub beta_hat: f64,
    /// The leakage ratio the protocol measured and fed to the secant search
    /// (linear power ratio).
    pub down_ilr: f64,
    /// Transmit leakage ratio read directly off the RF record before the
    /// channel (linear power ratio): an ideal-observer tap recorded for
    /// grading only, never visible to the calibration path.
    pub true_ilr: f64,
    /// Receive-leakage estimate for the red band after this step.
    pub k_red: Complex64,
    /// Receive-leakage estimate for the blue band after this step.
    pub k_blue: Complex64,
    /// Estimator frames fully accepted during this step.
    pub frames_accepted: usize,
    /// Estimator frames rejected (in any band) during this step.
    pub frames_rejected: usize,
}

/// Complete record of one joint run.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrace {
    /// Per-measurement rows in order.
    pub iterations: Vec<JointIteration>,
    /// Final secant state: corrections and the full cost history.
    pub state: PredistortState,
    /// Final receive-leakage estimates.
    pub dual: DualEstimate,
    /// Final estimator state for the red band.
    pub kalman_red: KalmanState,
    /// Final estimator state for the blue band.
    pub kalman_blue: KalmanState,
    /// Whether the final measurement reached the secant stop threshold.
    pub converged: bool,
}

/// Checks that `freq` sits inside the open Nyquist interval and on the
/// coherent grid of an `n`-sample record.
fn require_coherent(freq: f64, n: usize, sample_rate: f64) -> Result<()> {
    let nyquist = sample_rate / 2.0;
    if !freq.is_finite() || freq.abs() >= nyquist {
        return Err(Error::NyquistRange { freq, nyquist });
    }
    coherent_bin(freq, n, sample_rate)
        .map(|_| ())
        .ok_or(Error::NonCoherent {
            freq,
            n,
            sample_rate,
        })
}

/// Splits `record` into `n_pairs` equal blocks and demodulates each
/// requested `(center, mirror)` band in every block, returning one
/// [`FrameObservation`] per band in input order.
///
/// The block length must divide the record exactly, every frequency must be
/// coherent over a *single block* and inside Nyquist, and all demodulation
/// bins across all bands must be distinct — overlapping bins would silently
/// read one band's content into another.
pub fn measure_pairs(
    record: &ComplexSignal,
    bands: &[(f64, f64)],
    n_pairs: usize,
) -> Result<Vec<FrameObservation>> {
    if record.is_empty() {
        return Err(Error::EmptySignal);
    }
    if bands.is_empty() {
        return Err(Error::InvalidScenario(
            "at least one (center, mirror) band is required".into(),
        ));
    }
    if n_pairs < 2 {
        return Err(Error::DegenerateFrame(
            "a frame needs at least two sideband pairs",
        ));
    }
    if !record.len().is_multiple_of(n_pairs) {
        return Err(Error::InvalidScenario(format!(
            "record of {} samples does not split into {} equal blocks",
            record.len(),
            n_pairs
        )));
    }
    let block = record.len() / n_pairs;
    let nyquist = record.nyquist();
    let resolve = |freq: f64| -> Result<i64> {
        if !freq.is_finite() || freq.abs() >= nyquist {
            return Err(Error::NyquistRange { freq, nyquist });
        }
        coherent_bin(freq, block, record.sample_rate).ok_or(Error::NonCoherent {
            freq,
            n: block,
            sample_rate: record.sample_rate,
        })
    };
    let mut bins = Vec::with_capacity(bands.len());
    for &(center, mirror) in bands {
        bins.push((resolve(center)?, resolve(mirror)?));
    }
    let flat: Vec<i64> = bins.iter().flat_map(|&(c, m)| [c, m]).collect();
    for (i, a) in flat.iter().enumerate() {
        if flat[i + 1..].contains(a) {
            return Err(Error::InvalidScenario(format!(
                "demodulation bins overlap: block bin {a} appears twice across the requested bands"
            )));
        }
    }
    let mut per_band: Vec<Vec<SidebandPair>> = vec![Vec::with_capacity(n_pairs); bands.len()];
    for b in 0..n_pairs {
        let slice = &record.samples[b * block..(b + 1) * block];
        for (band_idx, (&(center, _), &(m_c, m_m))) in bands.iter().zip(&bins).enumerate() {
            let signal = demod_slice(slice, m_c, block);
            let image = demod_slice(slice, m_m, block).conj();
            per_band[band_idx].push(SidebandPair::new(signal, image, center.abs())?);
        }
    }
    per_band
        .into_iter()
        .map(|pairs| FrameObservation::new(pairs, block))
        .collect()
}

/// Shared transmit-then-channel plumbing for one scenario.
struct FramePipeline<'a> {
    scn: &'a JointScenario,
    /// Receive LO: transmit carrier minus the detuning.
    lo_down: f64,
    /// Frames synthesized so far; each derives a fresh noise stream.
    noise_frames: u64,
}

impl<'a> FramePipeline<'a> {
    fn new(scn: &'a JointScenario) -> Self {
        Self {
            scn,
            lo_down: scn.carrier - scn.chan.cfo,
            noise_frames: 0,
        }
    }

    /// Synthesizes one frame of channel output, transmitter on or off.
    /// With the transmitter on, also returns the true transmit leakage
    /// ratio measured at the RF tap before the channel.
    fn transmit_frame(
        &mut self,
        alpha_hat: f64,
        beta_hat: f64,
        rf_on: bool,
    ) -> Result<(ComplexSignal, Option<f64>)> {
        let scn = self.scn;
        let n = scn.frame_len();
        let x = if rf_on {
            let drive = synth_tone(scn.if_freq, 1.0, 0.0, scn.sample_rate, n)?;
            predistort(&drive, alpha_hat, beta_hat)?
        } else {
            ComplexSignal::new(vec![Complex64::new(0.0, 0.0); n], scn.sample_rate)?
        };
        let rf = upconvert(&x, scn.carrier, &scn.up_imb)?;
        let true_ilr = if rf_on {
            let sig = demod_bin(&rf, scn.carrier + scn.if_freq)?.norm_sqr();
            let img = demod_bin(&rf, scn.carrier - scn.if_freq)?.norm_sqr();
            if sig <= 0.0 {
                return Err(Error::InvalidPowers {
                    image: img,
                    signal: sig,
                });
            }
            Some(img / sig)
        } else {
            None
        };
        let seed = derive_seed(scn.seed, self.noise_frames);
        self.noise_frames += 1;
        let received = apply_channel(&rf, &scn.chan, scn.carrier, scn.if_freq, seed)?;
        Ok((received, true_ilr))
    }

    /// Downconverts a received frame and demodulates the scenario's bands,
    /// returning one observation per band, blue first. With a band-specific
    /// receive imbalance the red band is taken from its own downconversion.
    fn observe(&self, received: &ComplexSignal) -> Result<Vec<FrameObservation>> {
        let scn = self.scn;
        let bands = scn.bands();
        match (scn.method, scn.down_imb_red) {
            (JointMethod::Cfo, Some(red_imb)) => {
                let z_blue = downconvert(received, self.lo_down, &scn.down_imb)?;
                let z_red = downconvert(received, self.lo_down, &red_imb)?;
                let mut frames = measure_pairs(&z_blue, &bands[..1], scn.pairs_per_frame)?;
                frames.extend(measure_pairs(&z_red, &bands[1..], scn.pairs_per_frame)?);
                Ok(frames)
            }
            _ => {
                let z = downconvert(received, self.lo_down, &scn.down_imb)?;
                measure_pairs(&z, &bands, scn.pairs_per_frame)
            }
        }
    }
}

/// Coherent mean of the un-folded pair components: reconstructs every pair
/// with `k_hat` and averages the signal and image slots separately.
/// Averaging amplitudes before taking powers keeps the noise floor dropping
/// with the number of pairs, which is what lets one step resolve leakage
/// far below the per-pair noise level.
fn coherent_means(pairs: &[SidebandPair], k_hat: Complex64) -> (Complex64, Complex64) {
    let mut sig = Complex64::new(0.0, 0.0);
    let mut img = Complex64::new(0.0, 0.0);
    for p in pairs {
        let y = reconstruct(p, k_hat);
        sig += y.signal;
        img += y.image;
    }
    let n = pairs.len().max(1) as f64;
    (sig / n, img / n)
}

/// Power ratio of two coherently averaged amplitudes, guarding the
/// denominator.
fn power_ratio(num: Complex64, den: Complex64) -> Result<f64> {
    let den_pow = den.norm_sqr();
    if den_pow <= 0.0 {
        return Err(Error::InvalidPowers {
            image: num.norm_sqr(),
            signal: den_pow,
        });
    }
    Ok(num.norm_sqr() / den_pow)
}

fn require_method(scn: &JointScenario, expected: JointMethod) -> Result<()> {
    scn.validate()?;
    if scn.method != expected {
        return Err(Error::InvalidScenario(format!(
            "scenario selects the '{}' protocol, not '{}'",
            scn.method.label(),
            expected.label()
        )));
    }
    Ok(())
}

fn finish_trace(
    scn: &JointScenario,
    rows: Vec<JointIteration>,
    state: PredistortState,
    kalman_red: KalmanState,
    kalman_blue: KalmanState,
) -> JointTrace {
    let threshold = 10f64.powf(scn.secant.threshold_db / 10.0);
    let converged = state
        .cost_history
        .last()
        .is_some_and(|c| c.ilr() <= threshold);
    JointTrace {
        iterations: rows,
        state,
        dual: DualEstimate {
            k_red: kalman_red.k_filtered,
            k_blue: kalman_blue.k_filtered,
        },
        kalman_red,
        kalman_blue,
        converged,
    }
}

/// Runs the scenario's selected protocol.
pub fn run_joint(scn: &JointScenario) -> Result<JointTrace> {
    match scn.method {
        JointMethod::NoiseGated => run_noise_gated(scn),
        JointMethod::Cfo => run_cfo(scn),
        JointMethod::Uncorrected => run_uncorrected(scn),
    }
}

/// Noise-gated joint calibration.
///
/// Each secant measurement alternates two phases. With the transmitter off,
/// `noise_sampling_duration` frames of pure channel noise refresh the
/// receive-leakage estimator (warm-carried across the whole run); the step
/// aborts with [`Error::AllFramesRejected`] if no frame survives. With the
/// transmitter on, one frame is measured, un-folded with the fresh `k̂_q`,
/// and its coherently averaged image/signal power ratio is handed to the
/// secant search as the cost measurement.
pub fn run_noise_gated(scn: &JointScenario) -> Result<JointTrace> {
    require_method(scn, JointMethod::NoiseGated)?;
    let mut pipe = FramePipeline::new(scn);
    let mut filter = scn.kalman_start()?;
    let mut rows: Vec<JointIteration> = Vec::new();

    let state = calibrate_upconversion(
        |alpha_hat: f64, beta_hat: f64| -> Result<f64> {
            let mut accepted = 0usize;
            let mut rejected = 0usize;
            for _ in 0..scn.noise_sampling_duration {
                let (received, _) = pipe.transmit_frame(alpha_hat, beta_hat, false)?;
                let frame = pipe.observe(&received)?.pop().expect("one band");
                let (next, outcome) = kalman_frame(&filter, &frame);
                filter = next;
                match outcome {
                    FrameOutcome::Accepted { .. } => accepted += 1,
                    FrameOutcome::Rejected { .. } => rejected += 1,
                }
            }
            if accepted == 0 {
                return Err(Error::AllFramesRejected);
            }
            let (received, true_ilr) = pipe.transmit_frame(alpha_hat, beta_hat, true)?;
            let frame = pipe.observe(&received)?.pop().expect("one band");
            let (sig, img) = coherent_means(&frame.z_pairs, filter.k_filtered);
            let ilr = power_ratio(img, sig)?;
            rows.push(JointIteration {
                iteration: rows.len() + 1,
                alpha_hat,
                beta_hat,
                down_ilr: ilr,
                true_ilr: true_ilr.expect("transmitter was on"),
                k_red: filter.k_filtered,
                k_blue: filter.k_filtered,
                frames_accepted: accepted,
                frames_rejected: rejected,
            });
            Ok(ilr)
        },
        &scn.secant,
    )?;

    Ok(finish_trace(scn, rows, state, filter, filter))
}

/// Detuned (receive-LO offset) joint calibration.
///
/// The transmitter runs continuously. Every secant measurement advances two
/// estimators — one on the blue (signal) band, one on the red
/// (upconversion-image) band — through `kalman_frames_per_step` frames, then
/// un-folds each band's collected pairs with its own final estimate and
/// reports the power ratio of the coherently averaged red and blue
/// amplitudes. A step where either band accepts no frame aborts with
/// [`Error::AllFramesRejected`].
pub fn run_cfo(scn: &JointScenario) -> Result<JointTrace> {
    require_method(scn, JointMethod::Cfo)?;
    let mut pipe = FramePipeline::new(scn);
    let mut blue = scn.kalman_start()?;
    let mut red = scn.kalman_start()?;
    let mut rows: Vec<JointIteration> = Vec::new();
    let pairs_per_step = scn.kalman_frames_per_step * scn.pairs_per_frame;

    let state = calibrate_upconversion(
        |alpha_hat: f64, beta_hat: f64| -> Result<f64> {
            let mut blue_pairs: Vec<SidebandPair> = Vec::with_capacity(pairs_per_step);
            let mut red_pairs: Vec<SidebandPair> = Vec::with_capacity(pairs_per_step);
            let mut blue_accepted = 0usize;
            let mut red_accepted = 0usize;
            let mut both_accepted = 0usize;
            let mut true_ilr = f64::NAN;
            for f in 0..scn.kalman_frames_per_step {
                let (received, tap) = pipe.transmit_frame(alpha_hat, beta_hat, true)?;
                if f == 0 {
                    true_ilr = tap.expect("transmitter was on");
                }
                let mut frames = pipe.observe(&received)?;
                let red_frame = frames.pop().expect("red band");
                let blue_frame = frames.pop().expect("blue band");
                let (next_blue, out_blue) = kalman_frame(&blue, &blue_frame);
                blue = next_blue;
                let (next_red, out_red) = kalman_frame(&red, &red_frame);
                red = next_red;
                let ok_blue = matches!(out_blue, FrameOutcome::Accepted { .. });
                let ok_red = matches!(out_red, FrameOutcome::Accepted { .. });
                blue_accepted += usize::from(ok_blue);
                red_accepted += usize::from(ok_red);
                both_accepted += usize::from(ok_blue && ok_red);
                blue_pairs.extend(blue_frame.z_pairs);
                red_pairs.extend(red_frame.z_pairs);
            }
            if blue_accepted == 0 || red_accepted == 0 {
                return Err(Error::AllFramesRejected);
            }
            let (y_blue, _) = coherent_means(&blue_pairs, blue.k_filtered);
            let (y_red, _) = coherent_means(&red_pairs, red.k_filtered);
            let ilr = power_ratio(y_red, y_blue)?;
            rows.push(JointIteration {
                iteration: rows.len() + 1,
                alpha_hat,
                beta_hat,
                down_ilr: ilr,
                true_ilr,
                k_red: red.k_filtered,
                k_blue: blue.k_filtered,
                frames_accepted: both_accepted,
                frames_rejected: scn.kalman_frames_per_step - both_accepted,
            });
            Ok(ilr)
        },
        &scn.secant,
    )?;

    Ok(finish_trace(scn, rows, state, red, blue))
}

/// Control protocol: the estimator consumes transmitter-on frames without
/// any detuning, so each pair's mirror bin carries the fully correlated
/// transmit image and the circularity assumption is violated. Structured
/// like [`run_cfo`] (continuous transmission, `kalman_frames_per_step`
/// frames per measurement) to make the comparison fair.
pub fn run_uncorrected(scn: &JointScenario) -> Result<JointTrace> {
    require_method(scn, JointMethod::Uncorrected)?;
    let mut pipe = FramePipeline::new(scn);
    let mut filter = scn.kalman_start()?;
    let mut rows: Vec<JointIteration> = Vec::new();
    let pairs_per_step = scn.kalman_frames_per_step * scn.pairs_per_frame;

    let state = calibrate_upconversion(
        |alpha_hat: f64, beta_hat: f64| -> Result<f64> {
            let mut pairs: Vec<SidebandPair> = Vec::with_capacity(pairs_per_step);
            let mut accepted = 0usize;
            let mut rejected = 0usize;
            let mut true_ilr = f64::NAN;
            for f in 0..scn.kalman_frames_per_step {
                let (received, tap) = pipe.transmit_frame(alpha_hat, beta_hat, true)?;
                if f == 0 {
                    true_ilr = tap.expect("transmitter was on");
                }
                let frame = pipe.observe(&received)?.pop().expect("one band");
                let (next, outcome) = kalman_frame(&filter, &frame);
                filter = next;
                match outcome {
                    FrameOutcome::Accepted { .. } => accepted += 1,
                    FrameOutcome::Rejected { .. } => rejected += 1,
                }
                pairs.extend(frame.z_pairs);
            }
            if accepted == 0 {
                return Err(Error::AllFramesRejected);
            }
            let (sig, img) = coherent_means(&pairs, filter.k_filtered);
            let ilr = power_ratio(img, sig)?;
            rows.push(JointIteration {
                iteration: rows.len() + 1,
                alpha_hat,
                beta_hat,
                down_ilr: ilr,
                true_ilr,
                k_red: filter.k_filtered,
                k_blue: filter.k_filtered,
                frames_accepted: accepted,
                frames_rejected: rejected,
            });
            Ok(ilr)
        },
        &scn.secant,
    )?;

    Ok(finish_trace(scn, rows, state, filter, filter))
}

/// Scenario for calibrating a downconverter alone: a pure RF tone drives the
/// imbalanced receive mixer through additive noise, and the blind estimator
/// tracks the receive leakage frame by frame.
#[derive(Debug, Clone)]
pub struct DownCalScenario {
    /// Receive mixer imbalance under estimation.
    pub down_imb: ImbalanceParams,
    /// Receive LO frequency in Hz.
    pub carrier: f64,
    /// Offset of the drive tone above the LO in Hz.
    pub if_freq: f64,
    /// Sample rate in Hz.
    pub sample_rate: f64,
    /// Cosine amplitude of the RF drive tone.
    pub drive_amplitude: f64,
    /// Per-sample variance of the additive real channel noise.
    pub noise_variance: f64,
    /// Frames to process.
    pub n_frames: usize,
    /// Sideband pairs demodulated per frame.
    pub pairs_per_frame: usize,
    /// Samples each pair is demodulated over.
    pub samples_per_pair: usize,
    /// Random-walk variance added per frame.
    pub kalman_process_var: f64,
    /// Optional warm start `(k̂₀, var₀)`; `None` cold starts.
    pub kalman_init: Option<(Complex64, f64)>,
    /// Base noise seed.
    pub seed: u64,
}

impl DownCalScenario {
    /// Checks cross-field consistency without running anything.
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::InvalidScenario(
                "at least one frame is required".into(),
            ));
        }
        if !(self.drive_amplitude > 0.0 && self.drive_amplitude.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "drive amplitude {} must be positive and finite",
                self.drive_amplitude
            )));
        }
        if self.pairs_per_frame < 2 || self.samples_per_pair == 0 {
            return Err(Error::InvalidScenario(format!(
                "need at least 2 pairs per frame and 1 sample per pair, got {} × {}",
                self.pairs_per_frame, self.samples_per_pair
            )));
        }
        if !(self.if_freq > 0.0 && self.if_freq < self.carrier) {
            return Err(Error::InvalidScenario(format!(
                "tone offset {} Hz must lie strictly between 0 and the LO {} Hz",
                self.if_freq, self.carrier
            )));
        }
        ChannelParams::new(0.0, 0.0, self.noise_variance, 0.0)?;
        if !(self.kalman_process_var >= 0.0 && self.kalman_process_var.is_finite()) {
            return Err(Error::BadVariance(self.kalman_process_var));
        }
        if let Some((k0, var0)) = self.kalman_init {
            if !k0.is_finite() || !(var0 > 0.0) {
                return Err(Error::InvalidScenario(format!(
                    "warm-start estimate ({k0}, variance {var0}) is not usable"
                )));
            }
        }
        let n = self.pairs_per_frame * self.samples_per_pair;
        for freq in [self.carrier, self.carrier + self.if_freq] {
            require_coherent(freq, n, self.sample_rate)?;
        }
        require_coherent(self.if_freq, self.samples_per_pair, self.sample_rate)?;
        Ok(())
    }
}

/// One frame of a downconversion-calibration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownCalFrame {
    /// 1-based frame index, counting rejected frames.
    pub frame: u64,
    /// Leakage ratio of this frame's pairs reconstructed with the estimate
    /// held *before* the frame: the residual an operator deploying the
    /// current estimate would see (linear power ratio).
    pub reconstructed_ilr: f64,
    /// Filtered estimate after this frame.
    pub k_hat: Complex64,
    /// Variance of the filtered estimate.
    pub var_filtered: f64,
    /// Gain imbalance recovered from `k_hat`; NaN while the estimate lies
    /// outside the physical model.
    pub gain: f64,
    /// Phase imbalance recovered from `k_hat` in radians; NaN as above.
    pub phase: f64,
    /// Whether the estimator accepted the frame.
    pub accepted: bool,
}

/// Runs a downconversion-only calibration, returning the per-frame trace and
/// the final estimator state.
pub fn run_downconversion(scn: &DownCalScenario) -> Result<(Vec<DownCalFrame>, KalmanState)> {
    scn.validate()?;
    let n = scn.pairs_per_frame * scn.samples_per_pair;
    let chan = ChannelParams::new(0.0, 0.0, scn.noise_variance, 0.0)?;
    let clean = synth_real_tone(
        scn.carrier + scn.if_freq,
        scn.drive_amplitude,
        0.0,
        scn.sample_rate,
        n,
    )?;
    let (k0, var0) = scn
        .kalman_init
        .unwrap_or((Complex64::new(0.0, 0.0), f64::INFINITY));
    let mut state = init_kalman(k0, var0, scn.kalman_process_var)?;
    let mut rows = Vec::with_capacity(scn.n_frames);
    for f in 0..scn.n_frames {
        let seed = derive_seed(scn.seed, f as u64);
        let received = apply_channel(&clean, &chan, scn.carrier, scn.if_freq, seed)?;
        let z = downconvert(&received, scn.carrier, &scn.down_imb)?;
        let frame = measure_pairs(&z, &[(scn.if_freq, -scn.if_freq)], scn.pairs_per_frame)?
            .pop()
            .expect("one band");
        let residual = reconstructed_ilr(&frame, state.k_predicted)?;
        let (next, outcome) = kalman_frame(&state, &frame);
        state = next;
        let (gain, phase) = match ImbalanceParams::from_leakage(state.k_filtered) {
            Ok(imb) => (imb.gain(), imb.phase()),
            Err(_) => (f64::NAN, f64::NAN),
        };
        rows.push(DownCalFrame {
            frame: state.frame_index,
            reconstructed_ilr: residual,
            k_hat: state.k_filtered,
            var_filtered: state.var_filtered,
            gain,
            phase,
            accepted: matches!(outcome, FrameOutcome::Accepted { .. }),
        });
    }
    Ok((rows, state))
}
