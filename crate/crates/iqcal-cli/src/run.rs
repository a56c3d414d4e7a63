//! Executes parsed scenarios and renders their traces as tables.
//!
//! Every runner maps one [`Payload`] variant onto the simulation crate and
//! flattens the result into a [`TraceTable`] with a fixed column schema:
//!
//! - `drift` — `step, true_ilr_db`
//! - `cal-down` — `frame, reconstructed_ilr_db, k_hat_re, k_hat_im,
//!   var_filtered, gain, phase_deg`
//! - `cal-up` / `cal-joint` — `iteration, alpha_hat, beta_hat,
//!   measured_ilr_db, true_ilr_db, method`, the joint trace adding the
//!   per-band leakage estimates `k_red_re, k_red_im, k_blue_re, k_blue_im`
//!   (both bands read the same estimate when the protocol tracks only one).
//!
//! Angles leave this layer in degrees; ratios leave as dB.

use iqcal::joint::{run_downconversion, run_joint, DownCalScenario, JointScenario};
use iqcal::mixer::{apply_channel, drift_step, upconvert};
use iqcal::predistort::{calibrate_upconversion, ilr_closed_form, predistort};
use iqcal::signal::{demod_bin, derive_seed, ilr_db, synth_tone};
use iqcal::{Error, Result};

use crate::config::{DriftRun, Payload, ScenarioConfig, UpCalRun};
use crate::trace::{TraceTable, Value};

/// Runs a scenario to completion and returns its trace.
pub fn execute(cfg: &ScenarioConfig) -> Result<TraceTable> {
    match &cfg.payload {
        Payload::Drift(run) => run_drift(run),
        Payload::CalDown(scn) => run_cal_down(scn),
        Payload::CalUp(run) => run_cal_up(run),
        Payload::CalJoint(scn) => run_cal_joint(scn),
    }
}

/// Evaluates the closed-form residual of a frozen correction while the
/// transmit mixer walks away from its calibrated parameters.
fn run_drift(run: &DriftRun) -> Result<TraceTable> {
    let mut imb = run.start;
    let mut rows = Vec::with_capacity(run.n_steps as usize);
    for step in 0..run.n_steps {
        let ilr = ilr_closed_form(imb.alpha(), imb.beta(), run.alpha_hat, run.beta_hat)?;
        rows.push(vec![Value::Int(step), Value::Float(ilr_db(ilr, 1.0)?)]);
        imb = drift_step(&imb, &run.process, step);
    }
    Ok(TraceTable {
        columns: vec!["step", "true_ilr_db"],
        rows,
    })
}

fn run_cal_down(scn: &DownCalScenario) -> Result<TraceTable> {
    let (frames, _) = run_downconversion(scn)?;
    let rows = frames
        .iter()
        .map(|f| {
            Ok(vec![
                Value::Int(f.frame),
                Value::Float(ilr_db(f.reconstructed_ilr, 1.0)?),
                Value::Float(f.k_hat.re),
                Value::Float(f.k_hat.im),
                Value::Float(f.var_filtered),
                Value::Float(f.gain),
                Value::Float(f.phase.to_degrees()),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceTable {
        columns: vec![
            "frame",
            "reconstructed_ilr_db",
            "k_hat_re",
            "k_hat_im",
            "var_filtered",
            "gain",
            "phase_deg",
        ],
        rows,
    })
}

/// Calibrates the upconverter alone: each secant measurement predistorts a
/// unit tone, upconverts it, and reads both sidebands off the RF — once
/// before the channel (the true residual) and once after it (what the
/// search sees).
fn run_cal_up(run: &UpCalRun) -> Result<TraceTable> {
    run.validate()?;
    let drive = synth_tone(run.if_freq, 1.0, 0.0, run.sample_rate, run.n_samples)?;
    let mut true_ilrs: Vec<f64> = Vec::new();
    let state = calibrate_upconversion(
        |alpha_hat, beta_hat| {
            let z = predistort(&drive, alpha_hat, beta_hat)?;
            let rf = upconvert(&z, run.carrier, &run.up_imb)?;
            let clean_sig = demod_bin(&rf, run.carrier + run.if_freq)?.norm_sqr();
            let clean_img = demod_bin(&rf, run.carrier - run.if_freq)?.norm_sqr();
            if clean_sig <= 0.0 {
                return Err(Error::InvalidPowers {
                    image: clean_img,
                    signal: clean_sig,
                });
            }
            true_ilrs.push(clean_img / clean_sig);
            let seed = derive_seed(run.seed, true_ilrs.len() as u64 - 1);
            let y = apply_channel(&rf, &run.chan, run.carrier, run.if_freq, seed)?;
            let sig = demod_bin(&y, run.carrier + run.if_freq)?.norm_sqr();
            let img = demod_bin(&y, run.carrier - run.if_freq)?.norm_sqr();
            if sig <= 0.0 {
                return Err(Error::InvalidPowers {
                    image: img,
                    signal: sig,
                });
            }
            Ok(img / sig)
        },
        &run.secant,
    )?;
    // With averaging, each recorded measurement spans `n_average` plant
    // calls; its true residual is the first of the group (the correction is
    // constant across the group, and without noise all repeats are equal).
    let rows = state
        .cost_history
        .iter()
        .enumerate()
        .map(|(idx, sample)| {
            Ok(vec![
                Value::Int(idx as u64 + 1),
                Value::Float(sample.alpha_hat),
                Value::Float(sample.beta_hat),
                Value::Float(ilr_db(sample.ilr(), 1.0)?),
                Value::Float(ilr_db(true_ilrs[idx * run.secant.n_average], 1.0)?),
                Value::Text("direct".to_string()),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceTable {
        columns: up_columns(),
        rows,
    })
}

fn run_cal_joint(scn: &JointScenario) -> Result<TraceTable> {
    let trace = run_joint(scn)?;
    let rows = trace
        .iterations
        .iter()
        .map(|it| {
            Ok(vec![
                Value::Int(it.iteration as u64),
                Value::Float(it.alpha_hat),
                Value::Float(it.beta_hat),
                Value::Float(ilr_db(it.down_ilr, 1.0)?),
                Value::Float(ilr_db(it.true_ilr, 1.0)?),
                Value::Text(scn.method.label().to_string()),
                Value::Float(it.k_red.re),
                Value::Float(it.k_red.im),
                Value::Float(it.k_blue.re),
                Value::Float(it.k_blue.im),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut columns = up_columns();
    columns.extend(["k_red_re", "k_red_im", "k_blue_re", "k_blue_im"]);
    Ok(TraceTable { columns, rows })
}

fn up_columns() -> Vec<&'static str> {
    vec![
        "iteration",
        "alpha_hat",
        "beta_hat",
        "measured_ilr_db",
        "true_ilr_db",
        "method",
    ]
}
