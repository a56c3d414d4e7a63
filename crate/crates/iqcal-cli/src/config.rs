//! Sectioned key–value scenario configs.
//!
//! A scenario file is a flat INI-style listing: `[section]` headers, one
//! `key = value` pair per line, `#` comment lines, blank lines. Which
//! sections apply depends on `[run] kind`; every key must be consumed by
//! that kind, so a typo or a leftover from another scenario is a hard error
//! with the offending line number instead of a silently ignored setting.
//!
//! Angles cross this boundary in degrees (`phi_deg`, `kalman_init_*` aside);
//! everything inside the simulation crate is radians.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use iqcal::joint::{DownCalScenario, JointMethod, JointScenario};
use iqcal::mixer::{ChannelParams, DriftProcess, ImbalanceParams};
use iqcal::predistort::{ilr_closed_form, SecantSettings};
use iqcal::signal::coherent_bin;
use num_complex::Complex64;

/// A config problem, with the line it was found on when one is known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line in the config file, `None` for cross-field problems.
    pub line: Option<usize>,
    /// Human-readable description.
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn global(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// What a config runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// ILR degradation of a fixed correction under transmit-mixer drift.
    Drift,
    /// Blind receive-side calibration of a downconverter.
    CalDown,
    /// Secant transmit-side calibration of an upconverter.
    CalUp,
    /// Joint transmit–receive calibration through a simulated RF chain.
    CalJoint,
}

impl Kind {
    /// The name used in configs and subcommands.
    pub fn label(self) -> &'static str {
        match self {
            Kind::Drift => "drift",
            Kind::CalDown => "cal-down",
            Kind::CalUp => "cal-up",
            Kind::CalJoint => "cal-joint",
        }
    }
}

/// On-disk trace encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    /// Comma-separated rows under `# key = value` header lines.
    Csv,
    /// One JSON object per row, config object on the first line.
    Jsonl,
}

impl TraceFormat {
    /// The name used in configs.
    pub fn label(self) -> &'static str {
        match self {
            TraceFormat::Csv => "csv",
            TraceFormat::Jsonl => "jsonl",
        }
    }
}

/// Drift scenario: a transmitter calibrated once, then left drifting.
#[derive(Debug, Clone)]
pub struct DriftRun {
    /// Transmit imbalance at step 0.
    pub start: ImbalanceParams,
    /// Frozen gain correction deployed before the drift began.
    pub alpha_hat: f64,
    /// Frozen quadrature correction.
    pub beta_hat: f64,
    /// Per-step random walk on the mixer parameters.
    pub process: DriftProcess,
    /// Steps to trace.
    pub n_steps: u64,
}

/// Upconversion-only calibration scenario: the secant search drives the
/// transmit mixer while an ideal observer reads both sidebands off the RF.
#[derive(Debug, Clone)]
pub struct UpCalRun {
    /// Transmit imbalance under calibration.
    pub up_imb: ImbalanceParams,
    /// Channel between the mixer and the observer; detuning must be zero.
    pub chan: ChannelParams,
    /// Transmit LO frequency in Hz.
    pub carrier: f64,
    /// Baseband tone offset in Hz.
    pub if_freq: f64,
    /// Sample rate in Hz.
    pub sample_rate: f64,
    /// Samples per measurement record.
    pub n_samples: usize,
    /// Secant search knobs.
    pub secant: SecantSettings,
    /// Base seed for the per-measurement noise streams.
    pub seed: u64,
}

impl UpCalRun {
    /// Checks cross-field consistency without running anything.
    pub fn validate(&self) -> iqcal::Result<()> {
        if self.chan.cfo != 0.0 {
            return Err(iqcal::Error::InvalidScenario(format!(
                "upconversion calibration reads fixed sidebands and needs zero detuning, got {} Hz",
                self.chan.cfo
            )));
        }
        if self.n_samples == 0 {
            return Err(iqcal::Error::EmptySignal);
        }
        let nyquist = self.sample_rate / 2.0;
        for freq in [
            self.if_freq,
            self.carrier,
            self.carrier - self.if_freq,
            self.carrier + self.if_freq,
        ] {
            if !freq.is_finite() || freq.abs() >= nyquist || freq <= 0.0 {
                return Err(iqcal::Error::NyquistRange { freq, nyquist });
            }
            if coherent_bin(freq, self.n_samples, self.sample_rate).is_none() {
                return Err(iqcal::Error::NonCoherent {
                    freq,
                    n: self.n_samples,
                    sample_rate: self.sample_rate,
                });
            }
        }
        Ok(())
    }
}

/// The typed scenario a config resolves to.
#[derive(Debug, Clone)]
pub enum Payload {
    /// See [`DriftRun`].
    Drift(DriftRun),
    /// See [`DownCalScenario`].
    CalDown(DownCalScenario),
    /// See [`UpCalRun`].
    CalUp(UpCalRun),
    /// See [`JointScenario`].
    CalJoint(JointScenario),
}

/// A fully parsed and validated scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// Scenario kind, also selecting the trace schema.
    pub kind: Kind,
    /// Trace encoding.
    pub format: TraceFormat,
    /// Trace destination.
    pub output: PathBuf,
    /// The scenario itself.
    pub payload: Payload,
    /// Every setting the run will use, defaults filled in, as
    /// `section.key` / value pairs in section order — this is what trace
    /// headers embed.
    pub resolved: Vec<(String, String)>,
}

/// Sections a config may contain, regardless of kind.
const KNOWN_SECTIONS: &[&str] = &[
    "run",
    "up_mixer",
    "down_mixer",
    "down_mixer_red",
    "channel",
    "signal",
    "protocol",
    "secant",
    "drift",
    "down_cal",
];

/// Raw `(section, key) → (value, line)` entries; typed readers remove what
/// they consume so leftovers can be rejected.
struct RawConfig {
    entries: BTreeMap<(String, String), (String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                let name = name.trim();
                if !KNOWN_SECTIONS.contains(&name) {
                    return Err(ConfigError::at(line_no, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::at(
                    line_no,
                    format!("expected `key = value` or a `[section]` header, got `{line}`"),
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::at(line_no, "empty key or value"));
            }
            let Some(section) = section.clone() else {
                return Err(ConfigError::at(
                    line_no,
                    format!("key `{key}` appears before any [section] header"),
                ));
            };
            match entries.entry((section.clone(), key.to_string())) {
                std::collections::btree_map::Entry::Occupied(prev) => {
                    let (_, first_line) = prev.get();
                    return Err(ConfigError::at(
                        line_no,
                        format!(
                            "duplicate key `{key}` in [{section}], first set on line {first_line}"
                        ),
                    ));
                }
                std::collections::btree_map::Entry::Vacant(slot) => {
                    slot.insert((value.to_string(), line_no));
                }
            }
        }
        Ok(Self { entries })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }

    fn take_str(&mut self, section: &str, key: &str) -> Option<String> {
        self.take(section, key).map(|(v, _)| v)
    }

    fn need_str(&mut self, section: &str, key: &str) -> Result<String, ConfigError> {
        self.take_str(section, key)
            .ok_or_else(|| missing(section, key))
    }

    fn take_f64(&mut self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| bad_value(line, section, key, &v, "a number")),
        }
    }

    fn need_f64(&mut self, section: &str, key: &str) -> Result<f64, ConfigError> {
        self.take_f64(section, key)?
            .ok_or_else(|| missing(section, key))
    }

    fn take_u64(&mut self, section: &str, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<u64>()
                .map(Some)
                .map_err(|_| bad_value(line, section, key, &v, "a non-negative integer")),
        }
    }

    fn need_u64(&mut self, section: &str, key: &str) -> Result<u64, ConfigError> {
        self.take_u64(section, key)?
            .ok_or_else(|| missing(section, key))
    }

    fn take_usize(&mut self, section: &str, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| bad_value(line, section, key, &v, "a non-negative integer")),
        }
    }

    fn has_section(&self, section: &str) -> bool {
        self.entries.keys().any(|(s, _)| s == section)
    }

    /// Errors on the first (lowest-line) key nothing consumed.
    fn finish(self, kind: Kind) -> Result<(), ConfigError> {
        if let Some(((section, key), (_, line))) = self
            .entries
            .into_iter()
            .min_by_key(|(_, (_, line))| *line)
        {
            return Err(ConfigError::at(
                line,
                format!(
                    "unrecognized key `{key}` in [{section}] for a `{}` scenario",
                    kind.label()
                ),
            ));
        }
        Ok(())
    }
}

fn missing(section: &str, key: &str) -> ConfigError {
    ConfigError::global(format!("missing required key `{key}` in [{section}]"))
}

fn bad_value(line: usize, section: &str, key: &str, value: &str, wanted: &str) -> ConfigError {
    ConfigError::at(
        line,
        format!("key `{key}` in [{section}]: `{value}` is not {wanted}"),
    )
}

/// Collects the resolved `section.key = value` pairs for trace headers.
struct Resolved(Vec<(String, String)>);

impl Resolved {
    fn push(&mut self, section: &str, key: &str, value: impl fmt::Display) {
        self.0.push((format!("{section}.{key}"), value.to_string()));
    }
}

/// Wraps a simulation-crate validation failure as a config error.
fn invalid(context: &str, err: iqcal::Error) -> ConfigError {
    ConfigError::global(format!("{context}: {err}"))
}

/// Reads a mixer section: either `g`/`phi_deg` or `alpha`/`beta`, never a
/// mixture.
fn read_mixer(
    raw: &mut RawConfig,
    section: &str,
    resolved: &mut Resolved,
) -> Result<ImbalanceParams, ConfigError> {
    let g = raw.take_f64(section, "g")?;
    let phi = raw.take_f64(section, "phi_deg")?;
    let alpha = raw.take_f64(section, "alpha")?;
    let beta = raw.take_f64(section, "beta")?;
    let imb = match (g, phi, alpha, beta) {
        (Some(g), Some(phi), None, None) => ImbalanceParams::new(g, phi.to_radians()),
        (None, None, Some(a), Some(b)) => ImbalanceParams::from_alpha_beta(a, b),
        (None, None, None, None) => {
            return Err(ConfigError::global(format!(
                "section [{section}] needs either g/phi_deg or alpha/beta"
            )))
        }
        _ => {
            return Err(ConfigError::global(format!(
                "section [{section}] must set exactly one complete pair: g/phi_deg or alpha/beta"
            )))
        }
    }
    .map_err(|e| invalid(&format!("section [{section}]"), e))?;
    resolved.push(section, "g", imb.gain());
    resolved.push(section, "phi_deg", imb.phase().to_degrees());
    Ok(imb)
}

/// Reads `[channel]`, defaulting to a transparent channel. `with_cfo`
/// controls whether the `cfo` key is meaningful for this kind.
fn read_channel(
    raw: &mut RawConfig,
    resolved: &mut Resolved,
    with_cfo: bool,
) -> Result<ChannelParams, ConfigError> {
    let atten_signal = raw.take_f64("channel", "atten_signal_db")?.unwrap_or(0.0);
    let atten_image = raw.take_f64("channel", "atten_image_db")?.unwrap_or(0.0);
    let noise = raw.take_f64("channel", "noise_variance")?.unwrap_or(0.0);
    let cfo = if with_cfo {
        raw.take_f64("channel", "cfo")?.unwrap_or(0.0)
    } else {
        0.0
    };
    let chan = ChannelParams::new(atten_signal, atten_image, noise, cfo)
        .map_err(|e| invalid("section [channel]", e))?;
    resolved.push("channel", "atten_signal_db", chan.atten_signal_db);
    resolved.push("channel", "atten_image_db", chan.atten_image_db);
    resolved.push("channel", "noise_variance", chan.noise_variance);
    if with_cfo {
        resolved.push("channel", "cfo", chan.cfo);
    }
    Ok(chan)
}

/// Reads `[signal]`: rates, frequencies, and the record geometry. The frame
/// splits into `pairs_per_frame` equal demodulation blocks when pairing is
/// requested.
#[allow(clippy::type_complexity)]
fn read_signal(
    raw: &mut RawConfig,
    resolved: &mut Resolved,
    with_pairs: bool,
) -> Result<(f64, f64, f64, usize, Option<(usize, usize)>), ConfigError> {
    let sample_rate = raw.need_f64("signal", "sample_rate")?;
    let carrier = raw.need_f64("signal", "carrier")?;
    let if_freq = raw.need_f64("signal", "if_freq")?;
    let n_samples = raw
        .take_usize("signal", "n_samples")?
        .ok_or_else(|| missing("signal", "n_samples"))?;
    resolved.push("signal", "sample_rate", sample_rate);
    resolved.push("signal", "carrier", carrier);
    resolved.push("signal", "if_freq", if_freq);
    resolved.push("signal", "n_samples", n_samples);
    let pairs = if with_pairs {
        let pairs = raw
            .take_usize("signal", "pairs_per_frame")?
            .ok_or_else(|| missing("signal", "pairs_per_frame"))?;
        if pairs == 0 || n_samples % pairs != 0 {
            return Err(ConfigError::global(format!(
                "n_samples = {n_samples} does not split into pairs_per_frame = {pairs} equal blocks"
            )));
        }
        resolved.push("signal", "pairs_per_frame", pairs);
        Some((pairs, n_samples / pairs))
    } else {
        None
    };
    Ok((sample_rate, carrier, if_freq, n_samples, pairs))
}

/// Reads `[secant]`, filling unset knobs from the library defaults.
fn read_secant(raw: &mut RawConfig, resolved: &mut Resolved) -> Result<SecantSettings, ConfigError> {
    let d = SecantSettings::default();
    let s = SecantSettings {
        alpha0: raw.take_f64("secant", "alpha0")?.unwrap_or(d.alpha0),
        alpha1: raw.take_f64("secant", "alpha1")?.unwrap_or(d.alpha1),
        beta0: raw.take_f64("secant", "beta0")?.unwrap_or(d.beta0),
        beta1: raw.take_f64("secant", "beta1")?.unwrap_or(d.beta1),
        threshold_db: raw
            .take_f64("secant", "threshold_db")?
            .unwrap_or(d.threshold_db),
        max_measurements: raw
            .take_usize("secant", "max_measurements")?
            .unwrap_or(d.max_measurements),
        n_average: raw.take_usize("secant", "n_average")?.unwrap_or(d.n_average),
    };
    resolved.push("secant", "alpha0", s.alpha0);
    resolved.push("secant", "alpha1", s.alpha1);
    resolved.push("secant", "beta0", s.beta0);
    resolved.push("secant", "beta1", s.beta1);
    resolved.push("secant", "threshold_db", s.threshold_db);
    resolved.push("secant", "max_measurements", s.max_measurements);
    resolved.push("secant", "n_average", s.n_average);
    Ok(s)
}

/// Reads the estimator knobs shared by the receive-side runs: process
/// variance plus an optional warm start (`kalman_init_re/_im/_var` together).
#[allow(clippy::type_complexity)]
fn read_kalman(
    raw: &mut RawConfig,
    resolved: &mut Resolved,
) -> Result<(f64, Option<(Complex64, f64)>), ConfigError> {
    let process_var = raw
        .take_f64("protocol", "kalman_process_var")?
        .unwrap_or(0.0);
    resolved.push("protocol", "kalman_process_var", process_var);
    let re = raw.take_f64("protocol", "kalman_init_re")?;
    let im = raw.take_f64("protocol", "kalman_init_im")?;
    let var = raw.take_f64("protocol", "kalman_init_var")?;
    let init = match (re, im, var) {
        (None, None, None) => {
            resolved.push("protocol", "kalman_init", "cold");
            None
        }
        (Some(re), Some(im), Some(var)) => {
            resolved.push("protocol", "kalman_init_re", re);
            resolved.push("protocol", "kalman_init_im", im);
            resolved.push("protocol", "kalman_init_var", var);
            Some((Complex64::new(re, im), var))
        }
        _ => {
            return Err(ConfigError::global(
                "kalman_init_re, kalman_init_im, and kalman_init_var must be set together",
            ))
        }
    };
    Ok((process_var, init))
}

/// Loads and parses a scenario config from disk.
pub fn load(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::global(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

/// Parses a scenario config from text.
pub fn parse(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut raw = RawConfig::parse(text)?;
    let mut resolved = Resolved(Vec::new());

    let kind = match raw.need_str("run", "kind")?.as_str() {
        "drift" => Kind::Drift,
        "cal-down" => Kind::CalDown,
        "cal-up" => Kind::CalUp,
        "cal-joint" => Kind::CalJoint,
        other => {
            return Err(ConfigError::global(format!(
                "unknown kind `{other}`; expected drift, cal-down, cal-up, or cal-joint"
            )))
        }
    };
    let format = match raw.take_str("run", "format").as_deref() {
        None | Some("csv") => TraceFormat::Csv,
        Some("jsonl") => TraceFormat::Jsonl,
        Some(other) => {
            return Err(ConfigError::global(format!(
                "unknown format `{other}`; expected csv or jsonl"
            )))
        }
    };
    let output = PathBuf::from(raw.need_str("run", "output")?);
    resolved.push("run", "kind", kind.label());
    resolved.push("run", "format", format.label());
    resolved.push("run", "output", output.display());

    let payload = match kind {
        Kind::Drift => {
            let drift_seed = raw.need_u64("run", "drift_seed")?;
            resolved.push("run", "drift_seed", drift_seed);
            let start = read_mixer(&mut raw, "up_mixer", &mut resolved)?;
            let alpha_hat = raw.need_f64("drift", "alpha_hat")?;
            let beta_hat = raw.need_f64("drift", "beta_hat")?;
            let gain_std = raw.need_f64("drift", "gain_step_std")?;
            let phase_std = raw.need_f64("drift", "phase_step_std")?;
            let n_steps = raw.need_u64("drift", "n_steps")?;
            if n_steps == 0 {
                return Err(ConfigError::global("n_steps must be at least 1"));
            }
            let process = DriftProcess::new(gain_std, phase_std, drift_seed)
                .map_err(|e| invalid("section [drift]", e))?;
            // Rejects corrections the closed form cannot evaluate.
            ilr_closed_form(start.alpha(), start.beta(), alpha_hat, beta_hat)
                .map_err(|e| invalid("section [drift]", e))?;
            resolved.push("drift", "alpha_hat", alpha_hat);
            resolved.push("drift", "beta_hat", beta_hat);
            resolved.push("drift", "gain_step_std", gain_std);
            resolved.push("drift", "phase_step_std", phase_std);
            resolved.push("drift", "n_steps", n_steps);
            Payload::Drift(DriftRun {
                start,
                alpha_hat,
                beta_hat,
                process,
                n_steps,
            })
        }
        Kind::CalDown => {
            let noise_seed = raw.need_u64("run", "noise_seed")?;
            resolved.push("run", "noise_seed", noise_seed);
            let down_imb = read_mixer(&mut raw, "down_mixer", &mut resolved)?;
            let noise = raw.take_f64("channel", "noise_variance")?.unwrap_or(0.0);
            resolved.push("channel", "noise_variance", noise);
            let (sample_rate, carrier, if_freq, _, pairs) =
                read_signal(&mut raw, &mut resolved, true)?;
            let (pairs_per_frame, samples_per_pair) = pairs.expect("pairing requested");
            let drive_amplitude = raw
                .take_f64("down_cal", "drive_amplitude")?
                .unwrap_or(1.0);
            let n_frames = raw
                .take_usize("down_cal", "n_frames")?
                .ok_or_else(|| missing("down_cal", "n_frames"))?;
            resolved.push("down_cal", "drive_amplitude", drive_amplitude);
            resolved.push("down_cal", "n_frames", n_frames);
            let (kalman_process_var, kalman_init) = read_kalman(&mut raw, &mut resolved)?;
            let scn = DownCalScenario {
                down_imb,
                carrier,
                if_freq,
                sample_rate,
                drive_amplitude,
                noise_variance: noise,
                n_frames,
                pairs_per_frame,
                samples_per_pair,
                kalman_process_var,
                kalman_init,
                seed: noise_seed,
            };
            scn.validate().map_err(|e| invalid("scenario", e))?;
            Payload::CalDown(scn)
        }
        Kind::CalUp => {
            let noise_seed = raw.need_u64("run", "noise_seed")?;
            resolved.push("run", "noise_seed", noise_seed);
            let up_imb = read_mixer(&mut raw, "up_mixer", &mut resolved)?;
            let chan = read_channel(&mut raw, &mut resolved, false)?;
            let (sample_rate, carrier, if_freq, n_samples, _) =
                read_signal(&mut raw, &mut resolved, false)?;
            let secant = read_secant(&mut raw, &mut resolved)?;
            let run = UpCalRun {
                up_imb,
                chan,
                carrier,
                if_freq,
                sample_rate,
                n_samples,
                secant,
                seed: noise_seed,
            };
            run.validate().map_err(|e| invalid("scenario", e))?;
            Payload::CalUp(run)
        }
        Kind::CalJoint => {
            let noise_seed = raw.need_u64("run", "noise_seed")?;
            resolved.push("run", "noise_seed", noise_seed);
            let up_imb = read_mixer(&mut raw, "up_mixer", &mut resolved)?;
            let down_imb = read_mixer(&mut raw, "down_mixer", &mut resolved)?;
            let down_imb_red = if raw.has_section("down_mixer_red") {
                Some(read_mixer(&mut raw, "down_mixer_red", &mut resolved)?)
            } else {
                None
            };
            let chan = read_channel(&mut raw, &mut resolved, true)?;
            let (sample_rate, carrier, if_freq, _, pairs) =
                read_signal(&mut raw, &mut resolved, true)?;
            let (pairs_per_frame, samples_per_pair) = pairs.expect("pairing requested");
            let method = match raw.need_str("protocol", "method")?.as_str() {
                "noise" => JointMethod::NoiseGated,
                "cfo" => JointMethod::Cfo,
                "uncorrected" => JointMethod::Uncorrected,
                other => {
                    return Err(ConfigError::global(format!(
                        "unknown method `{other}`; expected noise, cfo, or uncorrected"
                    )))
                }
            };
            resolved.push("protocol", "method", method.label());
            let noise_sampling_duration = raw
                .take_usize("protocol", "noise_sampling_duration")?
                .unwrap_or(1);
            let kalman_frames_per_step = raw
                .take_usize("protocol", "kalman_frames_per_step")?
                .unwrap_or(1);
            resolved.push("protocol", "noise_sampling_duration", noise_sampling_duration);
            resolved.push("protocol", "kalman_frames_per_step", kalman_frames_per_step);
            let (kalman_process_var, kalman_init) = read_kalman(&mut raw, &mut resolved)?;
            let secant = read_secant(&mut raw, &mut resolved)?;
            let scn = JointScenario {
                up_imb,
                down_imb,
                down_imb_red,
                chan,
                method,
                noise_sampling_duration,
                kalman_frames_per_step,
                carrier,
                if_freq,
                sample_rate,
                pairs_per_frame,
                samples_per_pair,
                kalman_process_var,
                kalman_init,
                secant,
                seed: noise_seed,
            };
            scn.validate().map_err(|e| invalid("scenario", e))?;
            Payload::CalJoint(scn)
        }
    };

    raw.finish(kind)?;
    Ok(ScenarioConfig {
        kind,
        format,
        output,
        payload,
        resolved: resolved.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const JOINT: &str = "\
[run]
kind = cal-joint
output = joint.csv
noise_seed = 7

[up_mixer]
alpha = 0.923
beta = -0.0327

[down_mixer]
g = 0.961
phi_deg = 0.96

[channel]
noise_variance = 4e-5
cfo = 20e3

[signal]
sample_rate = 1e6
carrier = 300e3
if_freq = 50e3
n_samples = 6400
pairs_per_frame = 64

[protocol]
method = cfo
kalman_frames_per_step = 50

[secant]
threshold_db = -70
max_measurements = 14
";

    #[test]
    fn parses_a_joint_scenario() {
        let cfg = parse(JOINT).unwrap();
        assert_eq!(cfg.kind, Kind::CalJoint);
        assert_eq!(cfg.format, TraceFormat::Csv);
        let Payload::CalJoint(scn) = &cfg.payload else {
            panic!("wrong payload");
        };
        assert_eq!(scn.method, JointMethod::Cfo);
        assert_eq!(scn.pairs_per_frame, 64);
        assert_eq!(scn.samples_per_pair, 100);
        assert_eq!(scn.kalman_frames_per_step, 50);
        assert_eq!(scn.secant.max_measurements, 14);
        assert_eq!(scn.secant.alpha1, 0.99);
        assert_eq!(scn.seed, 7);
        assert!((scn.up_imb.alpha() - 0.923).abs() < 1e-15);
        // The resolved dump names every knob the run uses, defaults included.
        let get = |k: &str| {
            cfg.resolved
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| panic!("missing resolved key {k}"))
        };
        assert_eq!(get("run.kind"), "cal-joint");
        assert_eq!(get("run.noise_seed"), "7");
        assert_eq!(get("protocol.kalman_init"), "cold");
        assert_eq!(get("secant.n_average"), "1");
    }

    #[test]
    fn rejects_unknown_keys_with_line_numbers() {
        let text = JOINT.replace("[secant]\n", "[secant]\nwibble = 3\n");
        let err = parse(&text).unwrap_err();
        assert!(err.line.is_some());
        assert!(err.message.contains("wibble"), "{err}");
        assert!(err.message.contains("[secant]"), "{err}");

        let err = parse(&JOINT.replace("[channel]", "[chanel]")).unwrap_err();
        assert!(err.message.contains("unknown section"), "{err}");
    }

    #[test]
    fn rejects_key_errors_precisely() {
        // Duplicate key, reported at the second occurrence.
        let text = format!("{JOINT}n_average = 1\nn_average = 2\n");
        let err = parse(&text).unwrap_err();
        assert!(err.message.contains("duplicate key `n_average`"), "{err}");

        // Unparseable number, with its line.
        let text = JOINT.replace("cfo = 20e3", "cfo = twenty");
        let err = parse(&text).unwrap_err();
        assert!(err.message.contains("`twenty` is not a number"), "{err}");
        assert_eq!(err.line, Some(JOINT.lines().position(|l| l.starts_with("cfo")).unwrap() + 1));

        // Missing required key.
        let text = JOINT.replace("noise_seed = 7\n", "");
        let err = parse(&text).unwrap_err();
        assert!(err.message.contains("noise_seed"), "{err}");
    }

    #[test]
    fn mixer_parameterizations_are_exclusive() {
        let text = JOINT.replace("alpha = 0.923", "alpha = 0.923\ng = 0.961\nphi_deg = 1");
        let err = parse(&text).unwrap_err();
        assert!(err.message.contains("exactly one complete pair"), "{err}");

        let text = JOINT.replace("beta = -0.0327\n", "");
        let err = parse(&text).unwrap_err();
        assert!(err.message.contains("g/phi_deg or alpha/beta"), "{err}");
    }

    #[test]
    fn scenario_validation_runs_at_parse_time() {
        // Non-coherent IF: 50 kHz works but 50.1 kHz does not divide the
        // 100-sample block grid.
        let text = JOINT.replace("if_freq = 50e3", "if_freq = 50.1e3");
        let err = parse(&text).unwrap_err();
        assert!(err.message.contains("not coherent"), "{err}");
        assert!(err.message.contains("50100"), "{err}");

        // The noise-gated protocol cannot run over a detuned channel.
        let text = JOINT.replace("method = cfo", "method = noise");
        let err = parse(&text).unwrap_err();
        assert!(err.message.contains("zero receive detuning"), "{err}");
    }

    #[test]
    fn drift_configs_parse_with_their_own_seed() {
        let text = "\
[run]
kind = drift
output = drift.jsonl
format = jsonl
drift_seed = 13

[up_mixer]
g = 0.923
phi_deg = -2.0

[drift]
alpha_hat = 0.9231
beta_hat = -0.0322
gain_step_std = 3.2e-5
phase_step_std = 3.2e-5
n_steps = 2000
";
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.kind, Kind::Drift);
        assert_eq!(cfg.format, TraceFormat::Jsonl);
        let Payload::Drift(run) = &cfg.payload else {
            panic!("wrong payload");
        };
        assert_eq!(run.n_steps, 2000);
        assert_eq!(run.process.seed, 13);

        // A noise seed has no meaning here and must not pass silently.
        let with_noise = text.replace("drift_seed = 13", "drift_seed = 13\nnoise_seed = 1");
        let err = parse(&with_noise).unwrap_err();
        assert!(err.message.contains("noise_seed"), "{err}");
    }
}
