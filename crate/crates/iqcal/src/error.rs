//! Error type shared by the signal, mixer, and calibration layers.

use thiserror::Error;

/// Everything that can go wrong while synthesizing signals, running the
/// mixer models, or executing a calibration loop.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A frequency fell on or outside the open Nyquist interval.
    #[error("frequency {freq} Hz outside the open interval (-{nyquist}, {nyquist}) Hz")]
    NyquistRange { freq: f64, nyquist: f64 },

    /// A frequency does not complete an integer number of cycles over the
    /// record, which would smear its power across neighboring bins.
    #[error("frequency {freq} Hz is not coherent over {n} samples at {sample_rate} Hz")]
    NonCoherent {
        freq: f64,
        n: usize,
        sample_rate: f64,
    },

    /// Power-ratio inputs were negative, non-finite, or had zero reference.
    #[error("invalid power ratio inputs: image {image}, signal {signal}")]
    InvalidPowers { image: f64, signal: f64 },

    /// An operation requiring a real-valued record saw imaginary content.
    #[error("record is not purely real")]
    NotReal,

    /// An empty sample buffer was supplied.
    #[error("signal contains no samples")]
    EmptySignal,

    /// Sample rates must be positive and finite.
    #[error("invalid sample rate {0} Hz")]
    BadSampleRate(f64),

    /// Mixer gain imbalance must be positive and finite.
    #[error("invalid mixer gain {0}")]
    BadGain(f64),

    /// Mixer phase imbalance must be finite.
    #[error("invalid mixer phase {0} rad")]
    BadPhase(f64),

    /// A variance must be non-negative and finite.
    #[error("invalid variance {0}")]
    BadVariance(f64),

    /// Pre-distortion coefficients must be finite with a positive in-phase
    /// scale (the correction divides by it).
    #[error("invalid correction coefficients alpha={alpha}, beta={beta}")]
    BadCorrection { alpha: f64, beta: f64 },

    /// A secant update had no usable probe pair or produced a non-finite or
    /// out-of-domain parameter.
    #[error("degenerate secant update: {0}")]
    DegenerateSecant(&'static str),

    /// A leakage value has no corresponding gain/phase pair in the stable
    /// model region.
    #[error("leakage magnitude {0} outside the invertible model range")]
    OutOfModel(f64),

    /// The leakage ratio is undefined because `1 + G·e^{jφ}` vanishes.
    #[error("leakage ratio undefined at gain {gain}, phase {phase} rad")]
    DegenerateMixer { gain: f64, phase: f64 },

    /// A frame's sideband statistics cannot support an estimate; the frame
    /// should be skipped rather than trusted.
    #[error("degenerate frame: {0}")]
    DegenerateFrame(&'static str),

    /// A scenario description is internally inconsistent.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// Every observation frame in a run was rejected, so no estimate exists.
    #[error("all frames were rejected; no estimate available")]
    AllFramesRejected,
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
