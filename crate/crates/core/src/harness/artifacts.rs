//! Orchestration of a full experiment and its CSV/JSON outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::theta_label;
use super::metrics::{err_l2, sample_polyline};
use super::run::{run_baseline, run_filter, run_truth, Experiment, FilterRun, Trajectory};
use crate::enkf::StepDiagnostics;
use crate::error::Result;
use crate::routing::ThetaSchedule;
use crate::transport::ConcentrationField;

/// Which runs to perform besides the truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunPlan {
    pub baseline: bool,
    pub thetas: Vec<ThetaSchedule>,
}

impl RunPlan {
    pub fn truth_only() -> Self {
        Self::default()
    }

    pub fn sweep(thetas: Vec<ThetaSchedule>) -> Self {
        Self { baseline: true, thetas }
    }
}

/// ERR time series, one column per model, `None` for missing points.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub times: Vec<f64>,
    pub columns: Vec<(String, Vec<Option<f64>>)>,
}

impl MetricsTable {
    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.columns.iter().find(|c| c.0 == name).map(|c| c.1.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub hash: String,
    pub seed: u64,
    pub metrics: MetricsTable,
    pub filters: Vec<FilterRun>,
    pub files: Vec<PathBuf>,
    /// Runs that failed, with their error.
    pub failures: Vec<(String, String)>,
}

#[derive(Serialize)]
struct DiagnosticsLine<'a> {
    config_sha256: &'a str,
    seed: u64,
    theta: &'a str,
    #[serde(flatten)]
    step: &'a StepDiagnostics,
}

#[derive(Serialize)]
struct FailureLine<'a> {
    config_sha256: &'a str,
    seed: u64,
    theta: &'a str,
    error: &'a str,
}

struct Writer<'a> {
    dir: &'a Path,
    stamp: String,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "{}", self.stamp)?;
        self.files.push(path);
        Ok(out)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs the truth and every run of `plan`, writing all artifacts to `dir`.
/// Only a failed truth run is an error; other failures are recorded and the
/// remaining outputs still written.
pub fn run_experiment(exp: &Experiment, plan: &RunPlan, dir: &Path) -> Result<RunArtifacts> {
    fs::create_dir_all(dir)?;
    let cfg = &exp.cfg;
    let mut w = Writer {
        dir,
        stamp: format!("# config_sha256={} seed={}", exp.hash, cfg.seed),
        files: Vec::new(),
    };
    let mut echo = w.create("config_echo.toml")?;
    echo.write_all(cfg.to_toml()?.as_bytes())?;
    echo.flush()?;

    log::info!("truth run: {} steps on {} nodes", exp.steps(), exp.grid.num_nodes());
    let truth = run_truth(exp)?;
    let mut out = w.create("wind_truth.csv")?;
    truth.wind.write_csv(&exp.grid, &mut out)?;
    out.flush()?;

    let steps = exp.steps();
    let times: Vec<f64> = (0..=steps).map(|k| exp.time(k)).collect();
    let mut columns = Vec::new();
    let mut failures = Vec::new();
    let mut models: Vec<(String, Vec<ConcentrationField>)> = vec![("truth".into(), truth.fields.clone())];

    if plan.baseline {
        log::info!("baseline run");
        match run_baseline(exp) {
            Ok(base) => {
                columns.push(("err_baseline".to_string(), errors(&truth, &base.fields, steps)));
                models.push(("baseline".into(), base.fields));
            }
            Err(e) => {
                log::error!("baseline run failed: {e}");
                columns.push(("err_baseline".to_string(), vec![None; steps + 1]));
                failures.push(("baseline".to_string(), e.to_string()));
            }
        }
    }

    let mut filters = Vec::new();
    let mut diag = w.create("diagnostics.jsonl")?;
    for (k, theta) in plan.thetas.iter().enumerate() {
        let label = theta_label(theta, k);
        log::info!("filter run theta={label}");
        let run = run_filter(exp, &truth, theta, &label);
        columns.push((format!("err_filter_theta{label}"), errors(&truth, &run.means, steps)));
        for d in &run.diagnostics {
            let line = DiagnosticsLine {
                config_sha256: &exp.hash,
                seed: cfg.seed,
                theta: &label,
                step: d,
            };
            serde_json::to_writer(&mut diag, &line).map_err(std::io::Error::from)?;
            writeln!(diag)?;
        }
        if let Some(e) = &run.error {
            let line = FailureLine {
                config_sha256: &exp.hash,
                seed: cfg.seed,
                theta: &label,
                error: e,
            };
            serde_json::to_writer(&mut diag, &line).map_err(std::io::Error::from)?;
            writeln!(diag)?;
            failures.push((format!("filter_theta{label}"), e.clone()));
        }
        write_path(&mut w, &run)?;
        models.push((format!("filter_theta{label}"), run.means.clone()));
        filters.push(run);
    }
    diag.flush()?;

    let metrics = MetricsTable { times, columns };
    write_metrics(&mut w, &metrics)?;
    for (model, fields) in &models {
        write_snapshots(&mut w, exp, model, fields)?;
        write_gamma(&mut w, exp, model, fields)?;
    }

    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        hash: exp.hash.clone(),
        seed: cfg.seed,
        metrics,
        filters,
        files: w.files,
        failures,
    })
}

fn errors(truth: &Trajectory, fields: &[ConcentrationField], steps: usize) -> Vec<Option<f64>> {
    (0..=steps)
        .map(|k| fields.get(k).and_then(|f| err_l2(&truth.fields[k].values, &f.values)))
        .collect()
}

fn write_metrics(w: &mut Writer<'_>, m: &MetricsTable) -> Result<()> {
    let mut out = w.create("metrics.csv")?;
    write!(out, "t")?;
    for (name, _) in &m.columns {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for (k, t) in m.times.iter().enumerate() {
        write!(out, "{t}")?;
        for (_, col) in &m.columns {
            write!(out, ",{}", opt(col[k]))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn write_path(w: &mut Writer<'_>, run: &FilterRun) -> Result<()> {
    let mut out = w.create(&format!("path_theta{}.csv", run.label))?;
    writeln!(out, "t,x,y,heading,sector,fallbacks,held,observed_nodes")?;
    for rec in &run.path {
        write!(out, "{},{},{}", rec.t, rec.position.x, rec.position.y)?;
        match &rec.step {
            Some(s) => {
                let nodes: Vec<String> = s.observed_nodes.iter().map(|n| n.to_string()).collect();
                writeln!(
                    out,
                    ",{},{},{},{},{}",
                    opt(s.heading),
                    s.sector,
                    s.fallbacks,
                    s.heading.is_none(),
                    nodes.join(";")
                )?;
            }
            None => writeln!(out, ",,,,,")?,
        }
    }
    out.flush()?;
    Ok(())
}

fn snapshot_steps(exp: &Experiment) -> Vec<usize> {
    let mut steps = Vec::new();
    for &t in &exp.cfg.snapshot_times {
        let k = (t / exp.cfg.dt).round();
        if k < 0.0 || k as usize > exp.steps() || (k * exp.cfg.dt - t).abs() > 1e-9 * t.abs().max(1.0) {
            log::warn!("snapshot time {t} is not a step of the run; skipped");
            continue;
        }
        if !steps.contains(&(k as usize)) {
            steps.push(k as usize);
        }
    }
    steps
}

fn write_snapshots(w: &mut Writer<'_>, exp: &Experiment, model: &str, fields: &[ConcentrationField]) -> Result<()> {
    for k in snapshot_steps(exp) {
        let Some(field) = fields.get(k) else { continue };
        let mut out = w.create(&format!("snapshot_t{}_{model}.csv", exp.time(k)))?;
        field.write_csv(&exp.grid, &mut out)?;
        out.flush()?;
    }
    Ok(())
}

fn write_gamma(w: &mut Writer<'_>, exp: &Experiment, model: &str, fields: &[ConcentrationField]) -> Result<()> {
    let mut out = w.create(&format!("gamma_{model}.csv"))?;
    writeln!(out, "t,s,value")?;
    for (k, field) in fields.iter().enumerate() {
        for (s, value) in sample_polyline(field, &exp.grid, &exp.gamma)? {
            writeln!(out, "{},{s},{}", exp.time(k), opt(value))?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{EnsembleSpread, ExperimentConfig, Release};
    use crate::geometry::Units;

    const OPEN: &str = r#"{"type": "FeatureCollection", "units": "meters", "bbox": [0, 0, 200, 200], "features": []}"#;

    fn exp(thetas: Vec<ThetaSchedule>) -> Experiment {
        let cfg = ExperimentConfig {
            units: Units::Meters,
            t_final: 2.0,
            release: Release {
                center: [100.0, 100.0],
                sigma0: 20.0,
            },
            drone_start: [60.0, 60.0],
            ensemble: EnsembleSpread {
                n: 3,
                sigma_in: 1.0,
                sigma_dir: 0.3,
            },
            thetas,
            snapshot_times: vec![0.0, 2.0, 0.5],
            ..ExperimentConfig::default()
        };
        Experiment::from_domain_text(cfg, OPEN).unwrap()
    }

    fn body(path: &Path) -> String {
        fs::read_to_string(path).unwrap()
    }

    #[test]
    fn empty_theta_list_gives_truth_and_baseline_only() {
        let e = exp(vec![]);
        let dir = tempfile::tempdir().unwrap();
        let a = run_experiment(&e, &RunPlan::sweep(vec![]), dir.path()).unwrap();
        assert_eq!(a.metrics.columns.len(), 1);
        assert_eq!(a.metrics.column("err_baseline").unwrap()[0], Some(0.0));
        let metrics = body(&dir.path().join("metrics.csv"));
        let lines: Vec<&str> = metrics.lines().collect();
        assert!(lines[0].starts_with("# config_sha256="));
        assert!(lines[0].ends_with(" seed=42"));
        assert_eq!(lines[1], "t,err_baseline");
        assert_eq!(lines[2], "0,0");
        assert_eq!(lines.len(), 5);
        for name in [
            "snapshot_t0_truth.csv",
            "snapshot_t2_baseline.csv",
            "gamma_truth.csv",
            "wind_truth.csv",
            "config_echo.toml",
        ] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        assert!(!dir.path().join("snapshot_t0.5_truth.csv").exists());
        assert!(!dir.path().join("path_theta0.csv").exists());
    }

    #[test]
    fn sweep_writes_stamped_reproducible_artifacts() {
        let e = exp(vec![ThetaSchedule::Constant(0.0), ThetaSchedule::Constant(0.2)]);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = run_experiment(&e, &RunPlan::sweep(e.cfg.thetas.clone()), d1.path()).unwrap();
        run_experiment(&e, &RunPlan::sweep(e.cfg.thetas.clone()), d2.path()).unwrap();
        assert!(a.failures.is_empty());
        for f in &a.files {
            let name = f.file_name().unwrap();
            let text = body(f);
            assert!(text.starts_with(&format!("# config_sha256={} seed=42\n", a.hash)), "{name:?}");
            if name != "config_echo.toml" {
                assert_eq!(text, body(&d2.path().join(name)), "{name:?}");
            }
        }
        let header = body(&d1.path().join("metrics.csv"));
        assert!(header.contains("t,err_baseline,err_filter_theta0,err_filter_theta0.2\n"));
        let path = body(&d1.path().join("path_theta0.2.csv"));
        let rows: Vec<&str> = path.lines().skip(2).collect();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].starts_with("0,60,60,"));
        assert!(rows[2].ends_with(",,,,,"));
        let diag = body(&d1.path().join("diagnostics.jsonl"));
        let lines: Vec<&str> = diag.lines().skip(1).collect();
        assert_eq!(lines.len(), 4);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["theta"], "0");
        assert_eq!(first["step"], 0);
        assert!(first["ins_resolves"].as_u64().unwrap() >= 3);
        let echo = body(&d1.path().join("config_echo.toml"));
        let back = ExperimentConfig::from_toml(&echo).unwrap();
        assert_eq!(back.thetas, e.cfg.thetas);
    }
}
