//! Writes the artifacts of each experiment into an output directory, plus a
//! manifest of the run. Nothing written here depends on wall-clock time.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::error::Result;
use crate::experiments::{
    emit_profile, run_instability_study, run_sde_recovery, run_simulation, run_state_estimation,
    ExperimentConfig, KernelRow, TABLE_STATES,
};
use crate::sde::fmt_f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Estimate,
    Recover,
    Instability,
    Profile,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Recover => "recover",
            Command::Instability => "instability",
            Command::Profile => "profile",
        }
    }
}

/// Collects the relative paths written under one output directory.
struct Sink<'a> {
    root: &'a Path,
    files: Vec<String>,
}

impl<'a> Sink<'a> {
    fn new(root: &'a Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Sink {
            root,
            files: Vec::new(),
        })
    }

    fn create(&mut self, rel: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.push(rel.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    fn json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut w = self.create(rel)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Run `command` and write its artifacts and `manifest.json` under `out`.
/// Returns the relative paths written, manifest last.
pub fn run_command(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    cfg.validate()?;
    let mut sink = Sink::new(out)?;
    match command {
        Command::Simulate => write_simulation(cfg, &mut sink)?,
        Command::Estimate => write_estimation(cfg, &mut sink)?,
        Command::Recover => write_recovery(cfg, &mut sink)?,
        Command::Instability => write_instability(cfg, &mut sink)?,
        Command::Profile => {
            let profile = emit_profile(cfg)?;
            profile.write_csv(sink.create("profile.csv")?)?;
        }
    }
    let manifest = json!({
        "command": command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "seeds": {
            "master": cfg.seed,
            "solar": cfg.solar_seed(),
            "observation": cfg.observation_seed(),
            "cv": cfg.cv_seed(),
            "ou": cfg.ou_seed(),
        },
        "hours_per_second": cfg.scenario.clock.hours_per_second,
        "files": sink.files.clone(),
        "config": cfg,
    });
    sink.json("manifest.json", &manifest)?;
    Ok(sink.files)
}

fn write_simulation(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let run = run_simulation(cfg)?;
    run.trajectory.write_csv(sink.create("trajectory.csv")?)?;
    run.solar.write_csv(sink.create("solar.csv")?)?;
    Ok(())
}

fn metric_cells(row: &KernelRow) -> Vec<String> {
    let get = |state: &str, pick: &dyn Fn(&crate::metrics::MetricReport) -> f64| {
        row.metrics(state).map(pick).unwrap_or(f64::NAN)
    };
    let mut cells = Vec::new();
    type Pick = fn(&crate::metrics::MetricReport) -> f64;
    let picks: [Pick; 3] = [|m| m.mse, |m| m.mae, |m| m.r2.unwrap_or(f64::NAN)];
    for pick in picks {
        for state in TABLE_STATES {
            cells.push(fmt_f64(get(state, &pick)));
        }
    }
    cells
}

fn write_estimation(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let run = run_state_estimation(cfg)?;
    run.trajectory.write_csv(sink.create("trajectory.csv")?)?;
    run.observations
        .write_csv(sink.create("observations.csv")?)?;

    let mut table = csv::Writer::from_writer(sink.create("table.csv")?);
    table.write_record([
        "kernel",
        "mse_omega",
        "mse_delta",
        "mae_omega",
        "mae_delta",
        "r2_omega",
        "r2_delta",
        "status",
    ])?;
    for row in &run.rows {
        let mut rec = vec![row.family.display_name().to_string()];
        rec.extend(metric_cells(row));
        rec.push(if row.failed() { "failed" } else { "ok" }.to_string());
        table.write_record(&rec)?;
    }
    table.flush()?;

    let mut long = csv::Writer::from_writer(sink.create("metrics.csv")?);
    long.write_record(["kernel", "state", "metric", "value"])?;
    for row in &run.rows {
        for (state, result) in &row.states {
            let name = row.family.display_name();
            match result {
                Ok(est) => {
                    let m = &est.metrics;
                    for (metric, v) in [
                        ("mse", m.mse),
                        ("mae", m.mae),
                        ("r2", m.r2.unwrap_or(f64::NAN)),
                    ] {
                        long.write_record([name, state, metric, &fmt_f64(v)])?;
                    }
                }
                Err(msg) => {
                    eprintln!("warning: {name} failed on {state}: {msg}");
                    for metric in ["mse", "mae", "r2"] {
                        long.write_record([name, state, metric, "NaN"])?;
                    }
                }
            }
        }
    }
    long.flush()?;

    let times = &run.trajectory.times;
    for row in &run.rows {
        for (state, result) in &row.states {
            let Ok(est) = result else { continue };
            let stem = format!("{}_{}", row.family.slug(), state);
            let truth = run
                .trajectory
                .column_by_label(state)
                .expect("estimated states are trajectory columns");
            let mut w = csv::Writer::from_writer(sink.create(&format!("predictions/{stem}.csv"))?);
            w.write_record(["t", "truth", "mean", "variance"])?;
            for i in 0..times.len() {
                w.write_record([
                    fmt_f64(times[i]),
                    fmt_f64(truth[i]),
                    fmt_f64(est.mean[i]),
                    fmt_f64(est.variance[i]),
                ])?;
            }
            w.flush()?;
            sink.json(
                &format!("cv/{stem}.json"),
                &json!({ "lambda": est.lambda, "report": &est.cv }),
            )?;
        }
    }
    Ok(())
}

fn write_recovery(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let run = run_sde_recovery(cfg)?;
    sink.json("fit.json", &run.fit)?;
    run.fit
        .write_eval_csv(&run.eval_points, &run.labels, sink.create("eval.csv")?)?;
    let mut w = csv::Writer::from_writer(sink.create("loss_trace.csv")?);
    w.write_record(["iteration", "loss"])?;
    for (i, v) in run.fit.loss_trace.iter().enumerate() {
        w.write_record([i.to_string(), fmt_f64(*v)])?;
    }
    w.flush()?;
    sink.json("summary.json", &run.summary)?;
    Ok(())
}

fn write_instability(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let run = run_instability_study(cfg)?;
    let mut w = csv::Writer::from_writer(sink.create("instability.csv")?);
    w.write_record([
        "scale",
        "max_abs_delta",
        "max_abs_omega_dev",
        "first_cycle_amplitude",
        "truncated",
        "unstable",
    ])?;
    for row in &run.rows {
        let r = &row.report;
        w.write_record([
            fmt_f64(row.scale),
            fmt_f64(r.max_abs_delta),
            fmt_f64(r.max_abs_omega_dev),
            fmt_f64(r.first_cycle_amplitude),
            r.truncated.to_string(),
            r.unstable.to_string(),
        ])?;
    }
    w.flush()?;
    for (row, traj) in run.rows.iter().zip(&run.trajectories) {
        traj.write_csv(sink.create(&format!("trajectories/scale_{}.csv", row.scale))?)?;
    }
    Ok(())
}
