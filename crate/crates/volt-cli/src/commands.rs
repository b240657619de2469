//! The four subcommands: simulate, fit, forecast, evaluate.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use volt::error::{Result, VoltError};
use volt::eval::{calibration_curve, quantile_of, TruthPath};
use volt::model::{
    fit_mt_volt, fit_volt, forecast, forecast_mt, ForecastEnsemble, MtVoltModel, VoltModel,
};
use volt::sde::{simulate_corr_sabr, simulate_joint, simulate_sabr, JointSdeParams, SabrParams};
use volt::timeseries::{load_series, to_log, TimeSeries};

use crate::artifact::ModelArtifact;
use crate::config::RunConfig;
use crate::ioutil::write_atomic;

fn fmt_float(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------- simulate

pub fn cmd_simulate(cfg: &RunConfig, out: &Path, with_vol: bool) -> Result<()> {
    let sim = &cfg.simulate;
    let mut csv = String::new();
    match sim.kind.as_str() {
        "joint" => {
            let params = JointSdeParams {
                mu_s: sim.mu_s,
                sigma: sim.sigma,
                v0: sim.v0,
                s0: sim.s0,
            };
            let (series, vol) = simulate_joint(&params, sim.n, sim.dt, sim.seed)?;
            push_series_csv(&mut csv, &series, with_vol.then_some(&vol.values));
        }
        "sabr" => {
            let params = SabrParams {
                alpha: sim.alpha,
                rho: sim.rho,
                v0: sim.v0,
                s0: sim.s0,
            };
            let (series, vol) = simulate_sabr(&params, sim.n, sim.dt, sim.seed)?;
            push_series_csv(&mut csv, &series, with_vol.then_some(&vol.values));
        }
        "corr_sabr" => {
            let p = sim.tasks;
            if p == 0 {
                return Err(VoltError::invalid_param("simulate.tasks", "must be >= 1"));
            }
            let corr = nalgebra::DMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    1.0
                } else {
                    sim.task_corr
                }
            });
            let params = SabrParams {
                alpha: sim.alpha,
                rho: sim.rho,
                v0: sim.v0,
                s0: sim.s0,
            };
            let panel = simulate_corr_sabr(p, &corr, &params, sim.n, sim.dt, sim.seed)?;
            csv.push_str("time");
            for q in 0..p {
                let _ = write!(csv, ",task_{q}");
            }
            if with_vol {
                for q in 0..p {
                    let _ = write!(csv, ",vol_{q}");
                }
            }
            csv.push('\n');
            for i in 0..sim.n {
                csv.push_str(&fmt_float(panel[0].0.times()[i]));
                for (series, _) in &panel {
                    csv.push(',');
                    csv.push_str(&fmt_float(series.values()[i]));
                }
                if with_vol {
                    for (_, vol) in &panel {
                        csv.push(',');
                        csv.push_str(&fmt_float(vol.values[i]));
                    }
                }
                csv.push('\n');
            }
        }
        other => {
            return Err(VoltError::invalid_param(
                "simulate.kind",
                format!("unknown simulator {other:?} (joint | sabr | corr_sabr)"),
            ))
        }
    }
    write_atomic(out, csv.as_bytes())?;
    println!("simulated {} rows ({}) with seed {}", cfg.simulate.n, sim.kind, sim.seed);
    println!("wrote {}", out.display());
    Ok(())
}

fn push_series_csv(csv: &mut String, series: &TimeSeries, vol: Option<&Vec<f64>>) {
    csv.push_str("time,value");
    if vol.is_some() {
        csv.push_str(",volatility");
    }
    csv.push('\n');
    for i in 0..series.len() {
        csv.push_str(&fmt_float(series.times()[i]));
        csv.push(',');
        csv.push_str(&fmt_float(series.values()[i]));
        if let Some(v) = vol {
            csv.push(',');
            csv.push_str(&fmt_float(v[i]));
        }
        csv.push('\n');
    }
}

// ---------------------------------------------------------------- fit

fn load_task(cfg: &RunConfig, data_path: &Path, column: &str) -> Result<TimeSeries> {
    let spec = cfg.data.load_spec(column);
    let series = load_series(data_path, &spec)?;
    if cfg.data.log_shift > 0.0 {
        to_log(&series, cfg.data.log_shift)
    } else {
        Ok(series)
    }
}

pub fn cmd_fit(cfg: &RunConfig, data_override: Option<&Path>, out: &Path) -> Result<()> {
    let data_path: PathBuf = match data_override {
        Some(p) => p.to_path_buf(),
        None => {
            if cfg.data.path.is_empty() {
                return Err(VoltError::invalid_param(
                    "data.path",
                    "no input CSV given (set data.path or pass --data)",
                ));
            }
            PathBuf::from(&cfg.data.path)
        }
    };
    let artifact = if cfg.multitask.tasks.is_empty() {
        let series = load_task(cfg, &data_path, &cfg.data.value_column)?;
        let model = fit_volt(&series, &cfg.model)?;
        print_single_summary(&model);
        ModelArtifact::single(model)
    } else {
        let mut panel = Vec::with_capacity(cfg.multitask.tasks.len());
        for task in &cfg.multitask.tasks {
            panel.push(load_task(cfg, &data_path, task)?);
        }
        let spec = cfg.multitask.intertask_spec(panel.len())?;
        let model = fit_mt_volt(&panel, &spec, &cfg.model)?;
        print_multi_summary(&model)?;
        ModelArtifact::multi(model)
    };
    write_atomic(out, artifact.to_json()?.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn print_single_summary(model: &VoltModel) {
    println!("fitted single-task model over {} points", model.grid.len());
    println!("  volvol sigma^2      = {:.6}", model.volvol());
    println!("  vol gp noise        = {:.3e}", model.vol_gp.noise());
    println!("  data kernel scale   = {:.6}", model.data_gp.amp());
    println!("  data noise          = {:.3e}", model.data_gp.noise());
    if let (Ok(elbo), Ok(mll_v), Ok(mll_s)) = (
        model.gpcv.elbo(),
        model.vol_gp.mll(),
        model.data_gp.mll(),
    ) {
        println!("  gpcv elbo           = {elbo:.3}");
        println!("  vol gp mll          = {mll_v:.3}");
        println!("  data gp mll         = {mll_s:.3}");
    }
}

fn print_multi_summary(model: &MtVoltModel) -> Result<()> {
    println!(
        "fitted multi-task model: {} tasks over {} points",
        model.p(),
        model.grid.len()
    );
    println!("  vol gp sigma^2      = {:.6}", model.vol_gp.sigma2());
    println!("  gpcv elbo           = {:.3}", model.gpcv.elbo()?);
    let corr = model.intertask_correlation()?;
    println!("  intertask correlation:");
    for i in 0..model.p() {
        let row: Vec<String> = (0..model.p()).map(|j| format!("{:+.3}", corr[(i, j)])).collect();
        println!("    {}", row.join(" "));
    }
    Ok(())
}

// ---------------------------------------------------------------- forecast

#[derive(Debug, Serialize, Deserialize)]
pub struct ForecastMeta {
    pub label: String,
    pub seed: u64,
    pub theta: f64,
    pub n_v: usize,
    pub n_s: usize,
    pub horizon: usize,
    /// Log-transform shift of the modeled series; truths must be shifted by
    /// the same amount before comparison.
    pub shift: f64,
    /// Row offset into the truth series where step 1 aligns.
    pub truth_offset: usize,
}

pub fn cmd_forecast(cfg: &RunConfig, model_path: &Path, out_dir: &Path) -> Result<()> {
    let artifact = ModelArtifact::load(model_path)?;
    let fan_grid = cfg.eval.grid();
    match artifact.kind.as_str() {
        "single" => {
            let model = artifact
                .single
                .ok_or_else(|| VoltError::Invalid("artifact missing single model".into()))?;
            let ens = forecast(&model, &cfg.forecast)?;
            write_ensemble(out_dir, &ens, &fan_grid)?;
            println!(
                "forecast {} paths x {} steps (seed {})",
                ens.n_paths(),
                ens.horizon(),
                cfg.forecast.seed
            );
            println!("wrote {}", out_dir.display());
        }
        "multi" => {
            let model = artifact
                .multi
                .ok_or_else(|| VoltError::Invalid("artifact missing multi model".into()))?;
            let ensembles = forecast_mt(&model, &cfg.forecast)?;
            for ens in &ensembles {
                let dir = out_dir.join(&ens.provenance.label);
                write_ensemble(&dir, ens, &fan_grid)?;
            }
            println!(
                "forecast {} tasks x {} paths x {} steps (seed {})",
                ensembles.len(),
                ensembles[0].n_paths(),
                ensembles[0].horizon(),
                cfg.forecast.seed
            );
            println!("wrote {}", out_dir.display());
        }
        other => {
            return Err(VoltError::Invalid(format!("unknown artifact kind {other:?}")));
        }
    }
    Ok(())
}

fn write_ensemble(dir: &Path, ens: &ForecastEnsemble, fan_grid: &[f64]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    // paths.csv: step, path_id, value
    let mut paths_csv = String::from("step,path_id,value\n");
    for (pid, path) in ens.paths.iter().enumerate() {
        for (step, v) in path.iter().enumerate() {
            let _ = writeln!(paths_csv, "{},{},{}", step + 1, pid, fmt_float(*v));
        }
    }
    write_atomic(&dir.join("paths.csv"), paths_csv.as_bytes())?;

    // fan.csv: step, one column per percentile
    let mut fan_csv = String::from("step");
    for p in fan_grid {
        let _ = write!(fan_csv, ",p{:02}", (p * 100.0).round() as u32);
    }
    fan_csv.push('\n');
    for step in 0..ens.horizon() {
        let samples = ens.step_values(step);
        let _ = write!(fan_csv, "{}", step + 1);
        for &p in fan_grid {
            let _ = write!(fan_csv, ",{}", fmt_float(quantile_of(&samples, p)?));
        }
        fan_csv.push('\n');
    }
    write_atomic(&dir.join("fan.csv"), fan_csv.as_bytes())?;

    let meta = ForecastMeta {
        label: ens.provenance.label.clone(),
        seed: ens.provenance.seed,
        theta: ens.provenance.theta,
        n_v: ens.provenance.n_v,
        n_s: ens.provenance.n_s,
        horizon: ens.horizon(),
        shift: ens.provenance.shift,
        truth_offset: 0,
    };
    let meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| VoltError::Invalid(format!("serialize forecast meta: {e}")))?;
    write_atomic(&dir.join("meta.json"), meta_json.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------- evaluate

/// A forecast directory: paths.csv + meta.json as written by `forecast`.
fn read_forecast_dir(dir: &Path) -> Result<(ForecastEnsemble, ForecastMeta)> {
    let meta_text = std::fs::read_to_string(dir.join("meta.json"))?;
    let meta: ForecastMeta = serde_json::from_str(&meta_text)
        .map_err(|e| VoltError::Invalid(format!("parse {}: {e}", dir.join("meta.json").display())))?;
    let mut reader = csv::Reader::from_path(dir.join("paths.csv"))?;
    let mut paths: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let step: usize = record[0].parse().map_err(|_| {
            VoltError::Invalid(format!("bad step in {}", dir.join("paths.csv").display()))
        })?;
        let pid: usize = record[1].parse().map_err(|_| {
            VoltError::Invalid(format!("bad path_id in {}", dir.join("paths.csv").display()))
        })?;
        let value: f64 = record[2].parse().map_err(|_| {
            VoltError::Invalid(format!("bad value in {}", dir.join("paths.csv").display()))
        })?;
        if paths.len() <= pid {
            paths.resize(pid + 1, Vec::new());
        }
        if paths[pid].len() + 1 != step {
            return Err(VoltError::Invalid(format!(
                "paths.csv rows out of order in {}",
                dir.display()
            )));
        }
        paths[pid].push(value);
    }
    if paths.is_empty() {
        return Err(VoltError::Invalid(format!(
            "no forecast paths found in {}",
            dir.display()
        )));
    }
    let horizon = paths[0].len();
    let ens = ForecastEnsemble {
        future_times: (1..=horizon).map(|i| i as f64).collect(),
        paths,
        log_space: false,
        provenance: volt::model::EnsembleProvenance {
            label: meta.label.clone(),
            seed: meta.seed,
            theta: meta.theta,
            n_v: meta.n_v,
            n_s: meta.n_s,
            shift: meta.shift,
        },
    };
    Ok((ens, meta))
}

/// Find forecast directories: either `root` itself or its subdirectories.
fn discover_forecasts(roots: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for root in roots {
        if root.join("paths.csv").exists() {
            dirs.push(root.clone());
            continue;
        }
        if root.is_dir() {
            let mut subs: Vec<PathBuf> = std::fs::read_dir(root)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.join("paths.csv").exists())
                .collect();
            subs.sort();
            dirs.extend(subs);
        }
    }
    if dirs.is_empty() {
        return Err(VoltError::Invalid(
            "no forecasts found (expected paths.csv under the given directories)".into(),
        ));
    }
    Ok(dirs)
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    forecast_roots: &[PathBuf],
    truth_path: &Path,
    truth_offset: Option<usize>,
    out_dir: &Path,
) -> Result<()> {
    let dirs = discover_forecasts(forecast_roots)?;
    let mut forecasts = Vec::new();
    let mut truths = Vec::new();
    for dir in &dirs {
        let (ens, meta) = read_forecast_dir(dir)?;
        // identifiers must match: the truth CSV needs this forecast's column
        let column = if meta.label.is_empty() {
            cfg.data.value_column.clone()
        } else {
            meta.label.clone()
        };
        let spec = cfg.data.load_spec(&column);
        let series = load_series(truth_path, &spec).map_err(|e| match e {
            VoltError::MissingColumn(c) => VoltError::Invalid(format!(
                "truth file {} has no column {c:?} matching forecast {}",
                truth_path.display(),
                dir.display()
            )),
            other => other,
        })?;
        let offset = truth_offset.unwrap_or(meta.truth_offset);
        let have = series.len().saturating_sub(offset);
        if have < ens.horizon() {
            return Err(VoltError::DimensionMismatch {
                context: "truth rows available vs forecast horizon",
                expected: ens.horizon(),
                got: have,
            });
        }
        // compare in the modeled (shifted) space
        let values: Vec<f64> = series.values()[offset..offset + ens.horizon()]
            .iter()
            .map(|v| v + meta.shift)
            .collect();
        truths.push(TruthPath { values });
        forecasts.push(ens);
    }

    let grid = cfg.eval.grid();
    let report = calibration_curve(&forecasts, &truths, &grid, cfg.eval.window)?;

    let mut report_csv = String::from("p,coverage,step_window\n");
    for (p, c) in report.percentiles.iter().zip(&report.coverage) {
        let _ = writeln!(
            report_csv,
            "{},{},{}-{}",
            fmt_float(*p),
            fmt_float(*c),
            report.step_window.0,
            report.step_window.1
        );
    }
    write_atomic(&out_dir.join("report.csv"), report_csv.as_bytes())?;

    let summary = serde_json::json!({
        "calibration_error": report.calibration_error,
        "nll_mean": report.nll_mean,
        "nll_se": report.nll_se,
        "mae": report.mae,
        "k": report.k,
        "step_window": format!("{}-{}", report.step_window.0, report.step_window.1),
    });
    let mut line = summary.to_string();
    line.push('\n');
    write_atomic(&out_dir.join("summary.json"), line.as_bytes())?;

    println!(
        "evaluated {} forecasts over steps {}-{}",
        report.k, report.step_window.0, report.step_window.1
    );
    println!(
        "calibration_error = {:.6}, nll = {:.4} +/- {:.4}, mae = {:.4}",
        report.calibration_error, report.nll_mean, report.nll_se, report.mae
    );
    println!("wrote {}", out_dir.display());
    Ok(())
}
