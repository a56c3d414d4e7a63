//! Acceptance suite: one test per delivery criterion, each ending in a
//! `PASS:` line with its headline numbers (visible with `--nocapture`).
//!
//! Criteria 1–5, 7 and 8 exercise the library directly; criterion 6 drives
//! the compiled binary on config files and grades the traces it emits, the
//! same way a user would.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_complex::Complex64;

use iqcal::blind::{
    estimate_kp, init_kalman, kalman_frame, kp_to_kq, reconstructed_ilr, FrameObservation,
    FrameOutcome,
};
use iqcal::joint::{run_downconversion, run_joint, DownCalScenario, JointMethod, JointScenario};
use iqcal::mixer::{
    downconvert, downconvert_matrix, downconvert_transfer, leakage_matrix, scaling_matrix,
    upconvert, upconvert_matrix, ChannelParams, ImbalanceParams,
};
use iqcal::predistort::{
    calibrate_upconversion, ilr_closed_form, predistort, PredistortState, SecantSettings,
};
use iqcal::signal::{
    awgn, demod_bin, derive_seed, ilr_db, synth_tone, ComplexSignal, SidebandPair,
};
use iqcal_cli::trace::{read_trace, ReadTrace};

const FS: f64 = 1e6;
const LO: f64 = 300e3;
const IF: f64 = 50e3;

fn assert_within_budget(elapsed: Duration, budget_s: u64, what: &str) {
    assert!(
        elapsed < Duration::from_secs(budget_s),
        "{what} took {elapsed:.2?}, budget is {budget_s} s"
    );
}

/// Transmit-side plant used throughout: pre-distort a unit +IF tone with
/// `(α̂, β̂)`, upconvert through the imbalanced mixer, and read the
/// image-to-signal power ratio off the RF record.
fn transmit_ilr(
    drive: &ComplexSignal,
    imb: &ImbalanceParams,
    alpha_hat: f64,
    beta_hat: f64,
) -> iqcal::Result<f64> {
    let z = predistort(drive, alpha_hat, beta_hat)?;
    let r = upconvert(&z, LO, imb)?;
    let sig = demod_bin(&r, LO + IF)?.norm_sqr();
    let img = demod_bin(&r, LO - IF)?.norm_sqr();
    Ok(img / sig)
}

#[test]
fn criterion_1_closed_form_ilr_matches_time_domain_over_grid() {
    let t = Instant::now();
    let n = 2000;
    let drive = synth_tone(IF, 1.0, 0.0, FS, n).unwrap();
    let alphas = [0.8, 0.9, 1.0, 1.1, 1.2];
    let betas = [-0.1, -0.05, 0.0, 0.05, 0.1];

    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for alpha in alphas {
        for beta in betas {
            let imb = ImbalanceParams::from_alpha_beta(alpha, beta).unwrap();
            for alpha_hat in alphas {
                for beta_hat in betas {
                    let closed = ilr_closed_form(alpha, beta, alpha_hat, beta_hat).unwrap();
                    let closed_db = ilr_db(closed, 1.0).unwrap();
                    if closed_db <= -120.0 {
                        // below the comparison floor (exact corrections null
                        // the image entirely)
                        continue;
                    }
                    let measured = transmit_ilr(&drive, &imb, alpha_hat, beta_hat).unwrap();
                    let measured_db = ilr_db(measured, 1.0).unwrap();
                    let dev = (measured_db - closed_db).abs();
                    worst = worst.max(dev);
                    assert!(
                        dev <= 0.1,
                        "α={alpha}, β={beta}, α̂={alpha_hat}, β̂={beta_hat}: \
                         closed form {closed_db:.4} dB vs time domain {measured_db:.4} dB"
                    );
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 600, "5⁴ grid minus the 25 exact corrections");
    let elapsed = t.elapsed();
    assert_within_budget(elapsed, 60, "criterion 1");
    println!(
        "PASS: criterion 1 — closed-form ILR matches the time-domain simulation \
         within 0.1 dB on {checked} grid points (worst |Δ| = {worst:.2e} dB, {elapsed:.2?})"
    );
}

#[test]
fn criterion_2_transfer_matrices_match_time_domain_and_factorization() {
    let t = Instant::now();
    let n = 4000;
    let mut mixers = Vec::new();
    for g in [0.9, 0.961, 1.0, 1.1] {
        for deg in [-5.0f64, -2.03, 0.0, 0.96, 5.0] {
            mixers.push(ImbalanceParams::new(g, deg.to_radians()).unwrap());
        }
    }
    let inputs = [
        (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)),
        (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)),
        (Complex64::new(0.7, -0.2), Complex64::new(0.1, 0.4)),
    ];

    let tone = |freq: f64, amp: Complex64| synth_tone(freq, amp.norm(), amp.arg(), FS, n).unwrap();
    let mut worst_matrix: f64 = 0.0;
    for imb in &mixers {
        // The downconversion transfer must factor exactly into the
        // unit-diagonal leakage matrix times the diagonal scaling matrix.
        let direct = downconvert_transfer(imb);
        let composed = leakage_matrix(imb)
            .unwrap()
            .compose(&scaling_matrix(imb))
            .scale(0.5);
        for i in 0..2 {
            for j in 0..2 {
                let rel = (direct.m[i][j] - composed.m[i][j]).norm()
                    / direct.m[i][j].norm().max(1e-3);
                assert!(
                    rel <= 1e-12,
                    "factorization off by {rel:.2e} at entry ({i},{j}) for G={}, φ={}",
                    imb.gain(),
                    imb.phase()
                );
            }
        }

        for (p, q) in inputs {
            // Upconversion: complex baseband pair against the matrix.
            let up = tone(IF, p);
            let z = ComplexSignal::new(
                up.samples
                    .iter()
                    .zip(&tone(-IF, q).samples)
                    .map(|(a, b)| a + b)
                    .collect(),
                FS,
            )
            .unwrap();
            let r = upconvert(&z, LO, imb).unwrap();
            let got = SidebandPair {
                signal: demod_bin(&r, LO + IF).unwrap(),
                image: demod_bin(&r, LO - IF).unwrap().conj(),
                offset: IF,
            };
            let want = upconvert_matrix(
                &SidebandPair {
                    signal: p,
                    image: q.conj(),
                    offset: IF,
                },
                imb,
            );
            let scale = want.signal.norm().max(want.image.norm()).max(1e-3);
            let dev = ((got.signal - want.signal).norm() / scale)
                .max((got.image - want.image).norm() / scale);
            worst_matrix = worst_matrix.max(dev);
            assert!(
                dev <= 1e-10,
                "upconversion mismatch {dev:.2e} at G={}, φ={}",
                imb.gain(),
                imb.phase()
            );

            // Downconversion: real two-tone RF record against the matrix.
            let rf = ComplexSignal::new(
                tone(LO + IF, p)
                    .samples
                    .iter()
                    .zip(&tone(LO - IF, q).samples)
                    .map(|(a, b)| Complex64::new(a.re + b.re, 0.0))
                    .collect(),
                FS,
            )
            .unwrap();
            let bb = downconvert(&rf, LO, imb).unwrap();
            let got = SidebandPair {
                signal: demod_bin(&bb, IF).unwrap(),
                image: demod_bin(&bb, -IF).unwrap().conj(),
                offset: IF,
            };
            let want = downconvert_matrix(
                &SidebandPair {
                    signal: p,
                    image: q.conj(),
                    offset: IF,
                },
                imb,
            );
            let scale = want.signal.norm().max(want.image.norm()).max(1e-3);
            let dev = ((got.signal - want.signal).norm() / scale)
                .max((got.image - want.image).norm() / scale);
            worst_matrix = worst_matrix.max(dev);
            assert!(
                dev <= 1e-10,
                "downconversion mismatch {dev:.2e} at G={}, φ={}",
                imb.gain(),
                imb.phase()
            );
        }
    }
    let elapsed = t.elapsed();
    println!(
        "PASS: criterion 2 — transfer factorization exact to 1e-12 and time-domain \
         mixers match the matrices to 1e-10 over {} mixers (worst {worst_matrix:.2e}, {elapsed:.2?})",
        mixers.len()
    );
}

#[test]
fn criterion_3_blind_estimate_round_trips_the_mixer() {
    let t = Instant::now();
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    // Four sideband drives whose cross-terms cancel exactly, making the
    // frame correlation noise-free.
    let drives = [(one, one), (one, -one), (i, i), (i, -i)];

    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for g in [0.9, 0.95, 1.0, 1.05, 1.1] {
        for deg in [-5.0f64, -2.5, 0.0, 2.5, 5.0] {
            let imb = ImbalanceParams::new(g, deg.to_radians()).unwrap();
            let pairs: Vec<SidebandPair> = drives
                .iter()
                .map(|(y, y_img)| {
                    downconvert_matrix(
                        &SidebandPair {
                            signal: *y,
                            image: y_img.conj(),
                            offset: IF,
                        },
                        &imb,
                    )
                })
                .collect();
            let frame = FrameObservation::new(pairs, 64).unwrap();
            let est = kp_to_kq(estimate_kp(&frame).unwrap()).unwrap();
            let dg = (est.gain - g).abs();
            let dp = (est.phase - deg.to_radians()).abs();
            let dk = (est.leakage - imb.leakage_ratio().unwrap()).norm();
            worst = worst.max(dg).max(dp).max(dk);
            assert!(
                dg <= 1e-10 && dp <= 1e-10 && dk <= 1e-10,
                "blind round trip at G={g}, φ={deg}°: ΔG={dg:.2e}, Δφ={dp:.2e}, Δk={dk:.2e}"
            );
            checked += 1;
        }
    }
    let elapsed = t.elapsed();
    println!(
        "PASS: criterion 3 — blind estimation round-trips gain, phase and leakage \
         to 1e-10 on {checked} mixers (worst {worst:.2e}, {elapsed:.2?})"
    );
}

#[test]
fn criterion_4_receive_calibration_reaches_the_noise_floor() {
    let t = Instant::now();
    // Noise sized for a -65 dB coherent floor over 500-sample pairs.
    let floor_db = -65.0;
    let samples_per_pair = 500usize;
    let noise_variance = 10f64.powf(floor_db / 10.0) * samples_per_pair as f64 / 4.0;
    let scn = DownCalScenario {
        down_imb: ImbalanceParams::new(0.961, 0.96f64.to_radians()).unwrap(),
        carrier: LO,
        if_freq: IF,
        sample_rate: FS,
        drive_amplitude: 1.0,
        noise_variance,
        n_frames: 100,
        pairs_per_frame: 64,
        samples_per_pair,
        kalman_process_var: 0.0,
        kalman_init: None,
        seed: 11,
    };
    let (frames, _) = run_downconversion(&scn).unwrap();
    assert_eq!(frames.len(), 100);
    let last = frames.last().unwrap();
    let final_db = ilr_db(last.reconstructed_ilr, 1.0).unwrap();
    assert!(
        (final_db - floor_db).abs() <= 3.0,
        "frame 100 residual {final_db:.2} dB is not within 3 dB of the {floor_db} dB floor"
    );
    let gain_err = (last.gain - 0.961).abs();
    let phase_err_deg = (last.phase.to_degrees() - 0.96).abs();
    assert!(gain_err <= 0.002, "gain error {gain_err:.2e}");
    assert!(phase_err_deg <= 0.1, "phase error {phase_err_deg:.2e}°");
    let elapsed = t.elapsed();
    assert_within_budget(elapsed, 60, "criterion 4");
    println!(
        "PASS: criterion 4 — cold-started receive calibration lands at {final_db:.2} dB \
         (floor {floor_db} dB) with gain error {gain_err:.1e} and phase error \
         {phase_err_deg:.1e}° after 100 frames ({elapsed:.2?})"
    );
}

fn cfo_joint_scenario() -> JointScenario {
    JointScenario {
        up_imb: ImbalanceParams::from_alpha_beta(0.923, -0.0327).unwrap(),
        down_imb: ImbalanceParams::new(0.961, 0.96f64.to_radians()).unwrap(),
        down_imb_red: None,
        chan: ChannelParams::new(0.0, 0.0, 4e-5, 20e3).unwrap(),
        method: JointMethod::Cfo,
        noise_sampling_duration: 1,
        kalman_frames_per_step: 50,
        carrier: LO,
        if_freq: IF,
        sample_rate: FS,
        pairs_per_frame: 64,
        samples_per_pair: 100,
        kalman_process_var: 0.0,
        kalman_init: None,
        secant: SecantSettings {
            threshold_db: -70.0,
            max_measurements: 14,
            ..SecantSettings::default()
        },
        seed: 7,
    }
}

#[test]
fn criterion_5_joint_and_transmit_calibrations_converge() {
    let t = Instant::now();

    // Joint calibration over the detuned channel drives the measured
    // transmit residual through the -60 dB requirement.
    let trace = run_joint(&cfo_joint_scenario()).unwrap();
    assert!(trace.converged, "joint run must reach its stop threshold");
    let last = trace.iterations.last().unwrap();
    let joint_db = ilr_db(last.down_ilr, 1.0).unwrap();
    assert!(
        joint_db <= -60.0,
        "converged joint residual {joint_db:.2} dB must be at or below -60 dB"
    );

    // The transmit loop alone, noise-free, reaches -70 dB within 10
    // measurements.
    let drive = synth_tone(IF, 1.0, 0.0, FS, 2000).unwrap();
    let imb = ImbalanceParams::from_alpha_beta(0.923, -0.0327).unwrap();
    let state = calibrate_upconversion(
        |a, b| transmit_ilr(&drive, &imb, a, b),
        &SecantSettings::default(),
    )
    .unwrap();
    let n_meas = state.cost_history.len();
    let tx_db = ilr_db(state.cost_history.last().unwrap().ilr(), 1.0).unwrap();
    assert!(
        n_meas <= 10 && tx_db <= -70.0,
        "noise-free transmit loop: {tx_db:.2} dB after {n_meas} measurements"
    );

    let elapsed = t.elapsed();
    assert_within_budget(elapsed, 120, "criterion 5");
    println!(
        "PASS: criterion 5 — joint detuned calibration converges at {joint_db:.2} dB \
         ({} measurements) and the noise-free transmit loop reaches {tx_db:.2} dB \
         in {n_meas} measurements ({elapsed:.2?})",
        trace.iterations.len()
    );
}

/// Writes `text` as a config in `dir`, runs `iqcal cal-joint` on it, and
/// parses the trace it emits.
fn run_joint_config(dir: &Path, name: &str, text: &str) -> ReadTrace {
    let cfg = dir.join(format!("{name}.ini"));
    std::fs::write(&cfg, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_iqcal"))
        .current_dir(dir)
        .args(["cal-joint", cfg.to_str().unwrap()])
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "{name}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    read_trace(&dir.join(format!("{name}.csv"))).expect("trace parses")
}

/// (measured, true) dB columns of a joint trace.
fn joint_columns(trace: &ReadTrace) -> (Vec<f64>, Vec<f64>) {
    (
        trace.floats("measured_ilr_db").unwrap(),
        trace.floats("true_ilr_db").unwrap(),
    )
}

const JOINT_BASE: &str = "\
[up_mixer]
alpha = 0.923
beta = -0.0327

[down_mixer]
g = 0.961
phi_deg = 0.96

[signal]
sample_rate = 1e6
carrier = 300e3
if_freq = 50e3
n_samples = 6400
pairs_per_frame = 64
";

#[test]
fn criterion_6_traces_expose_the_protocol_tradeoffs() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();

    // (a) Detuned protocol over a flat channel: the measured residual sits
    // on the diagonal within 3 dB wherever the truth is above -60 dB, and
    // the run converges.
    let flat = format!(
        "[run]\nkind = cal-joint\noutput = flat.csv\nnoise_seed = 7\n\n{JOINT_BASE}\n\
         [channel]\nnoise_variance = 4e-5\ncfo = 20e3\n\n\
         [protocol]\nmethod = cfo\nkalman_frames_per_step = 50\n\n\
         [secant]\nthreshold_db = -70\nmax_measurements = 14\n"
    );
    let trace = run_joint_config(dir, "flat", &flat);
    let (est, truth) = joint_columns(&trace);
    let mut diagonal_checked = 0usize;
    for (e, tr) in est.iter().zip(&truth) {
        if *tr >= -60.0 {
            assert!(
                (e - tr).abs() <= 3.0,
                "detuned estimate {e:.2} dB strays from truth {tr:.2} dB"
            );
            diagonal_checked += 1;
        }
    }
    let flat_final = *est.last().unwrap();
    assert!(
        flat_final <= -70.0,
        "detuned run must converge, final measurement {flat_final:.2} dB"
    );

    // (b) 3 dB of signal-path attenuation shifts every measurement by about
    // +3 dB: a persistent bias, not a transient.
    let attenuated = format!(
        "[run]\nkind = cal-joint\noutput = atten.csv\nnoise_seed = 7\n\n{JOINT_BASE}\n\
         [channel]\nnoise_variance = 4e-5\ncfo = 20e3\natten_signal_db = 3\n\n\
         [protocol]\nmethod = cfo\nkalman_frames_per_step = 50\n\n\
         [secant]\nthreshold_db = -200\nmax_measurements = 14\n"
    );
    let trace = run_joint_config(dir, "atten", &attenuated);
    let (est, truth) = joint_columns(&trace);
    assert_eq!(est.len(), 14, "threshold -200 dB is unreachable");
    let offsets: Vec<f64> = est.iter().zip(&truth).map(|(e, tr)| e - tr).collect();
    for (idx, off) in offsets.iter().enumerate() {
        assert!(
            (2.5..=3.5).contains(off),
            "row {}: attenuation offset {off:.2} dB outside [2.5, 3.5]",
            idx + 1
        );
    }

    // (c) Noise-gated protocol: tracks the truth within 3 dB while the
    // residual is above -35 dB, then decouples — some deep row diverges by
    // more than 3 dB and the run never converges.
    let gated = format!(
        "[run]\nkind = cal-joint\noutput = gated.csv\nnoise_seed = 7\n\n{JOINT_BASE}\n\
         [channel]\nnoise_variance = 4e-5\n\n\
         [protocol]\nmethod = noise\nnoise_sampling_duration = 12\n\n\
         [secant]\nthreshold_db = -70\nmax_measurements = 14\n"
    );
    // The gated scenario estimates on dedicated transmitter-off frames, so
    // it needs longer records for the same estimator budget.
    let gated = gated
        .replace("n_samples = 6400", "n_samples = 25600")
        .replace("pairs_per_frame = 64", "pairs_per_frame = 256");
    let trace = run_joint_config(dir, "gated", &gated);
    let (est, truth) = joint_columns(&trace);
    assert_eq!(est.len(), 14, "noise-gated run must exhaust its budget");
    let mut shallow_checked = 0usize;
    let mut deep_divergence: f64 = 0.0;
    for (e, tr) in est.iter().zip(&truth) {
        if *tr >= -35.0 {
            assert!(
                (e - tr).abs() <= 3.0,
                "shallow tracking broken: estimate {e:.2} dB vs truth {tr:.2} dB"
            );
            shallow_checked += 1;
        }
        if *tr <= -45.0 {
            deep_divergence = deep_divergence.max((e - tr).abs());
        }
    }
    assert!(shallow_checked >= 3, "grid must include shallow residuals");
    assert!(
        deep_divergence > 3.0,
        "noise-gated estimate must decouple below -45 dB, worst gap {deep_divergence:.2} dB"
    );

    // (d) Uncorrected single-estimator control: the claimed residual dives
    // while the true residual never improves — a false optimum more than
    // 20 dB away from reality.
    let uncorrected = format!(
        "[run]\nkind = cal-joint\noutput = uncorrected.csv\nnoise_seed = 7\n\n{JOINT_BASE}\n\
         [channel]\nnoise_variance = 4e-5\n\n\
         [protocol]\nmethod = uncorrected\nkalman_frames_per_step = 10\n\n\
         [secant]\nthreshold_db = -200\nmax_measurements = 14\n"
    );
    let trace = run_joint_config(dir, "uncorrected", &uncorrected);
    let (est, truth) = joint_columns(&trace);
    assert_eq!(est.len(), 14);
    for tr in &truth {
        assert!(
            *tr >= -30.0,
            "uncorrected loop must not actually improve the transmitter, truth {tr:.2} dB"
        );
    }
    let best_claim = est.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(
        best_claim <= -48.0,
        "the false optimum should look deep, best claim {best_claim:.2} dB"
    );
    for (e, tr) in est.iter().zip(&truth) {
        assert!(
            tr - e >= 20.0,
            "claimed residual {e:.2} dB must sit ≥ 20 dB below truth {tr:.2} dB"
        );
    }

    let elapsed = t.elapsed();
    assert_within_budget(elapsed, 300, "criterion 6");
    println!(
        "PASS: criterion 6 — emitted traces show diagonal tracking ({diagonal_checked} rows \
         within 3 dB), a persistent ≈3 dB attenuation bias, noise-gated decoupling \
         (gap {deep_divergence:.2} dB), and the uncorrected false optimum \
         ({best_claim:.1} dB claimed vs ≥ -30 dB true) ({elapsed:.2?})"
    );
}

#[test]
fn criterion_7_variance_model_matches_monte_carlo() {
    let t = Instant::now();
    let imb = ImbalanceParams::new(0.961, 0.96f64.to_radians()).unwrap();
    let k_true = imb.leakage_ratio().unwrap();
    let n_frames = 400u64;

    let mut ratios = Vec::new();
    for (n_pairs, seed0) in [(16usize, 100u64), (64, 200), (256, 300)] {
        let mut leaks: Vec<Complex64> = Vec::new();
        let mut predicted: Vec<f64> = Vec::new();
        for m in 0..n_frames {
            // Circular white drive through the imbalanced downconverter.
            let s = awgn(2 * n_pairs, 1.0, derive_seed(seed0, m), FS).unwrap();
            let pairs: Vec<SidebandPair> = s
                .samples
                .chunks(2)
                .map(|c| {
                    downconvert_matrix(
                        &SidebandPair {
                            signal: c[0],
                            image: c[1],
                            offset: IF,
                        },
                        &imb,
                    )
                })
                .collect();
            let frame = FrameObservation::new(pairs, 100).unwrap();
            // Prediction pinned at the truth so the variance model is graded
            // at its intended operating point.
            let state = init_kalman(k_true, 1.0, 0.0).unwrap();
            let (_, outcome) = kalman_frame(&state, &frame);
            if let FrameOutcome::Accepted {
                measurement,
                measurement_variance,
            } = outcome
            {
                leaks.push(measurement.leakage);
                predicted.push(measurement_variance);
            }
        }
        assert!(
            leaks.len() as u64 >= n_frames - 20,
            "white frames must almost always be accepted, got {}",
            leaks.len()
        );
        let m = leaks.len() as f64;
        let mean = leaks.iter().sum::<Complex64>() / m;
        let empirical = leaks.iter().map(|k| (k - mean).norm_sqr()).sum::<f64>() / (m - 1.0);
        let model = predicted.iter().sum::<f64>() / m;
        let ratio = empirical / model;
        assert!(
            (0.5..=2.0).contains(&ratio),
            "N = {n_pairs}: Monte-Carlo variance {empirical:.3e} vs model {model:.3e} \
             (ratio {ratio:.2}) outside a factor of 2"
        );
        ratios.push((n_pairs, ratio));
    }
    let elapsed = t.elapsed();
    assert_within_budget(elapsed, 120, "criterion 7");
    let summary: Vec<String> = ratios
        .iter()
        .map(|(n, r)| format!("N={n}: {r:.2}"))
        .collect();
    println!(
        "PASS: criterion 7 — frame-variance model matches Monte Carlo within a factor \
         of 2 ({}; {elapsed:.2?})",
        summary.join(", ")
    );
}

#[test]
fn criterion_8_structural_properties_hold() {
    let t = Instant::now();

    // One exact secant step: the normalized cost is a unit-leading-
    // coefficient parabola in each coordinate, so two samples pin its
    // vertex regardless of where they sit.
    let mut worst_vertex: f64 = 0.0;
    for target in [0.85, 0.923, 1.1] {
        for seeds in [[1.0, 0.99], [1.05, 0.97], [0.9, 1.2]] {
            let mut state = PredistortState::new(seeds[0], 0.0).unwrap();
            for alpha_hat in seeds {
                let c = (alpha_hat - target) * (alpha_hat - target);
                state.record(alpha_hat, 0.0, c).unwrap();
            }
            let dev = (state.update_alpha().unwrap() - target).abs();
            worst_vertex = worst_vertex.max(dev);
            assert!(dev <= 1e-12, "alpha vertex missed by {dev:.2e}");
        }
    }
    for target in [-0.05, -0.0327, 0.04] {
        let mut state = PredistortState::new(1.0, 0.0).unwrap();
        for beta_hat in [0.0, 0.01] {
            let c = (beta_hat - target) * (beta_hat - target);
            state.record(1.0, beta_hat, c).unwrap();
        }
        let dev = (state.update_beta().unwrap() - target).abs();
        worst_vertex = worst_vertex.max(dev);
        assert!(dev <= 1e-12, "beta vertex missed by {dev:.2e}");
    }

    // Filter update adds precisions exactly and grows the prediction by the
    // process variance.
    let imb = ImbalanceParams::new(0.961, 0.96f64.to_radians()).unwrap();
    let s = awgn(64, 1.0, 42, FS).unwrap();
    let pairs: Vec<SidebandPair> = s
        .samples
        .chunks(2)
        .map(|c| {
            downconvert_matrix(
                &SidebandPair {
                    signal: c[0],
                    image: c[1],
                    offset: IF,
                },
                &imb,
            )
        })
        .collect();
    let frame = FrameObservation::new(pairs, 100).unwrap();
    let prior_var = 1e-4;
    let process_var = 3e-7;
    let prior = init_kalman(Complex64::new(0.01, 0.0), prior_var, process_var).unwrap();
    let (next, outcome) = kalman_frame(&prior, &frame);
    let FrameOutcome::Accepted {
        measurement,
        measurement_variance,
    } = outcome
    else {
        panic!("seeded white frame must be accepted");
    };
    let var_f = 1.0 / (1.0 / prior_var + 1.0 / measurement_variance);
    assert_eq!(next.var_filtered, var_f, "precision additivity must be exact");
    assert_eq!(next.var_predicted, var_f + process_var);
    let blended = (prior.k_predicted / prior_var + measurement.leakage / measurement_variance)
        * var_f;
    assert!(
        (next.k_filtered - blended).norm() <= 1e-15,
        "filtered estimate must be the precision-weighted blend"
    );

    // Reconstruction with the true leakage nulls the image the mixer folded
    // out of an image-free drive, whatever the drive amplitudes.
    let drives = [
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, 0.5),
        Complex64::new(-0.9, 0.2),
        Complex64::new(0.2, -0.8),
        Complex64::new(1.0, 1.0),
    ];
    for g in [0.9, 0.961, 1.1] {
        for deg in [-5.0f64, 0.96, 5.0] {
            let imb = ImbalanceParams::new(g, deg.to_radians()).unwrap();
            let pairs: Vec<SidebandPair> = drives
                .iter()
                .map(|y| {
                    downconvert_matrix(
                        &SidebandPair {
                            signal: *y,
                            image: Complex64::new(0.0, 0.0),
                            offset: IF,
                        },
                        &imb,
                    )
                })
                .collect();
            let frame = FrameObservation::new(pairs, 32).unwrap();
            let residual = reconstructed_ilr(&frame, imb.leakage_ratio().unwrap()).unwrap();
            assert!(
                residual.sqrt() <= 1e-12,
                "reconstruction at the true leakage leaves {residual:.2e} at G={g}, φ={deg}°"
            );
        }
    }

    // Same seed, same bytes: the full binary path is deterministic.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("det.ini");
    std::fs::write(
        &cfg,
        "[run]\nkind = cal-down\noutput = det.csv\nnoise_seed = 9\n\n\
         [down_mixer]\ng = 0.961\nphi_deg = 0.96\n\n\
         [channel]\nnoise_variance = 1e-4\n\n\
         [signal]\nsample_rate = 1e6\ncarrier = 300e3\nif_freq = 50e3\n\
         n_samples = 160\npairs_per_frame = 4\n\n\
         [down_cal]\nn_frames = 10\n",
    )
    .unwrap();
    let mut emitted: Vec<Vec<u8>> = Vec::new();
    for _ in 0..2 {
        let out = Command::new(env!("CARGO_BIN_EXE_iqcal"))
            .current_dir(dir.path())
            .args(["cal-down", cfg.to_str().unwrap()])
            .output()
            .expect("binary runs");
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        emitted.push(std::fs::read(dir.path().join("det.csv")).unwrap());
    }
    assert_eq!(emitted[0], emitted[1], "same seed must emit identical bytes");

    let elapsed = t.elapsed();
    println!(
        "PASS: criterion 8 — secant vertex exact to 1e-12 (worst {worst_vertex:.2e}), \
         filter precisions add exactly, reconstruction at truth nulls the image, and \
         reruns are byte-identical ({elapsed:.2?})"
    );
}
