use std::fs;
use std::path::Path;

use serde_json::json;

use super::{MethodTrace, PredictionCurve, RunReport, SeedRun};
use crate::error::{Error, Result};

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Csv(e.into_error().into()))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn strings<const N: usize>(names: [&str; N]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn predictions_csv(curve: &PredictionCurve) -> Result<Vec<u8>> {
    let rows = (0..curve.x.len()).map(|j| {
        vec![
            num(curve.x[j]),
            num(curve.y_true[j]),
            num(curve.mean[j]),
            num(curve.band_min[j]),
            num(curve.band_max[j]),
        ]
    });
    csv_bytes(
        &strings(["x", "y_true", "y_mean", "band_min", "band_max"]),
        rows,
    )
}

fn dataset_csv(curve: &PredictionCurve) -> Result<Vec<u8>> {
    let rows = curve
        .x
        .iter()
        .zip(&curve.y_true)
        .map(|(x, y)| vec![num(*x), num(*y)]);
    csv_bytes(&strings(["x", "y"]), rows)
}

/// One row per recorded step or iteration: `step, <name>_mean, <name>_std...`.
fn params_trace_csv(run: &SeedRun) -> Result<Vec<u8>> {
    let stats_row = |step: usize, mean: &[f64], std: &[f64]| {
        let mut row = vec![step.to_string()];
        for (m, s) in mean.iter().zip(std) {
            row.push(num(*m));
            row.push(num(*s));
        }
        row
    };
    let header = |names: &[String]| {
        let mut h = vec!["step".to_string()];
        for n in names {
            h.push(format!("{n}_mean"));
            h.push(format!("{n}_std"));
        }
        h
    };
    match &run.trace {
        MethodTrace::Gd {
            param_names,
            params,
            loss_history,
            ..
        } => {
            let zeros = vec![0.0; params.len()];
            csv_bytes(
                &header(param_names),
                [stats_row(loss_history.len(), params, &zeros)],
            )
        }
        MethodTrace::Enkf(trace) => {
            let rows = std::iter::once(&trace.initial)
                .chain(&trace.records)
                .map(|r| stats_row(r.step, &r.param_mean, &r.param_std));
            csv_bytes(&header(&trace.param_names), rows)
        }
        MethodTrace::Esmda {
            param_names,
            iterations,
        } => {
            let rows = iterations
                .iter()
                .map(|it| stats_row(it.iteration, &it.param_mean, &it.param_std));
            csv_bytes(&header(param_names), rows)
        }
    }
}

fn metrics_csv(report: &RunReport) -> Result<Vec<u8>> {
    let mut rows: Vec<Vec<String>> = report
        .runs
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                num(r.train.rmse),
                num(r.train.r2),
                num(r.validation.rmse),
                num(r.validation.r2),
            ]
        })
        .collect();
    let m = &report.median;
    rows.push(vec![
        "median".into(),
        num(m.train.rmse),
        num(m.train.r2),
        num(m.validation.rmse),
        num(m.validation.r2),
    ]);
    csv_bytes(
        &strings([
            "seed",
            "train_rmse",
            "train_r2",
            "validation_rmse",
            "validation_r2",
        ]),
        rows,
    )
}

fn iterations_csv(report: &RunReport) -> Result<Option<Vec<u8>>> {
    let Some(medians) = &report.iteration_medians else {
        return Ok(None);
    };
    let mut rows = Vec::new();
    for run in &report.runs {
        if let MethodTrace::Esmda { iterations, .. } = &run.trace {
            for it in iterations {
                rows.push(vec![
                    it.iteration.to_string(),
                    run.seed.to_string(),
                    num(it.train.rmse),
                    num(it.train.r2),
                    num(it.validation.rmse),
                    num(it.validation.r2),
                ]);
            }
        }
    }
    for m in medians {
        rows.push(vec![
            m.iteration.to_string(),
            "median".into(),
            num(m.scores.train.rmse),
            num(m.scores.train.r2),
            num(m.scores.validation.rmse),
            num(m.scores.validation.r2),
        ]);
    }
    let header = strings([
        "iteration",
        "seed",
        "train_rmse",
        "train_r2",
        "validation_rmse",
        "validation_r2",
    ]);
    csv_bytes(&header, rows).map(Some)
}

/// Writes `report.json`, `metrics.csv`, `predictions.csv`, `params_trace.csv`,
/// `train.csv`, `validation.csv`, `iterations.csv` (ES-MDA) and
/// `timing.json`. Curves and traces in the CSVs belong to the first seed.
/// Everything except `timing.json` is a pure function of the run config.
pub fn emit_artifacts(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_owned(),
        source,
    })?;
    let first = &report.runs[0];
    write_file(
        &dir.join("report.json"),
        &serde_json::to_vec_pretty(report)?,
    )?;
    write_file(&dir.join("metrics.csv"), &metrics_csv(report)?)?;
    write_file(
        &dir.join("predictions.csv"),
        &predictions_csv(&first.validation_curve)?,
    )?;
    write_file(&dir.join("params_trace.csv"), &params_trace_csv(first)?)?;
    write_file(&dir.join("train.csv"), &dataset_csv(&first.train_curve)?)?;
    write_file(
        &dir.join("validation.csv"),
        &dataset_csv(&first.validation_curve)?,
    )?;
    if let Some(bytes) = iterations_csv(report)? {
        write_file(&dir.join("iterations.csv"), &bytes)?;
    }
    let timing: Vec<_> = report
        .runs
        .iter()
        .map(|r| json!({"seed": r.seed, "train_secs": r.wall_time_secs, "pretrain_secs": r.pretrain_secs}))
        .collect();
    write_file(
        &dir.join("timing.json"),
        &serde_json::to_vec_pretty(&timing)?,
    )?;
    Ok(())
}

/// `summary.csv` for a set of cells: validation and train medians per method,
/// with one row per ES-MDA iteration after the prior.
pub fn write_summary(reports: &[RunReport], path: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for r in reports {
        let mut push = |iteration: String, s: &super::MedianScores| {
            rows.push(vec![
                r.case().name().to_string(),
                r.method().name().to_string(),
                iteration,
                num(s.validation.rmse),
                num(s.validation.r2),
                num(s.train.rmse),
                num(s.train.r2),
            ]);
        };
        match &r.iteration_medians {
            Some(iters) => iters
                .iter()
                .filter(|it| it.iteration > 0)
                .for_each(|it| push(it.iteration.to_string(), &it.scores)),
            None => push(String::new(), &r.median),
        }
    }
    let header = strings([
        "case",
        "method",
        "iteration",
        "validation_rmse",
        "validation_r2",
        "train_rmse",
        "train_r2",
    ]);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_owned(),
            source,
        })?;
    }
    write_file(path, &csv_bytes(&header, rows)?)
}

#[cfg(test)]
mod tests {
    use super::super::{run_experiment, Case, Method, MethodConfig, RunConfig};
    use super::*;

    fn small(method: Method) -> RunConfig {
        let mut c = RunConfig::new(Case::Sine, method);
        c.seeds = vec![2, 5];
        c.pretrain.epochs = 100;
        if let MethodConfig::Gd(g) = &mut c.method {
            g.epochs = 30;
        }
        c
    }

    fn read(dir: &Path, name: &str) -> String {
        fs::read_to_string(dir.join(name)).unwrap()
    }

    #[test]
    fn files_and_row_counts() {
        for method in Method::ALL {
            let tmp = tempfile::tempdir().unwrap();
            let report = run_experiment(&small(method)).unwrap();
            emit_artifacts(&report, tmp.path()).unwrap();
            assert_eq!(read(tmp.path(), "predictions.csv").lines().count(), 22);
            assert_eq!(read(tmp.path(), "validation.csv").lines().count(), 22);
            assert_eq!(read(tmp.path(), "train.csv").lines().count(), 202);
            let metrics = read(tmp.path(), "metrics.csv");
            assert_eq!(metrics.lines().count(), 4);
            assert!(metrics.lines().last().unwrap().starts_with("median,"));
            let trace_rows = read(tmp.path(), "params_trace.csv").lines().count() - 1;
            let want = match method {
                Method::Gd => 1,
                Method::Enkf => 202,
                Method::Esmda => 4,
            };
            assert_eq!(trace_rows, want, "{method}");
            assert_eq!(
                tmp.path().join("iterations.csv").exists(),
                method == Method::Esmda
            );
            let json: serde_json::Value =
                serde_json::from_str(&read(tmp.path(), "report.json")).unwrap();
            assert_eq!(json["runs"].as_array().unwrap().len(), 2);
            assert!(json["runs"][0].get("wall_time_secs").is_none());
        }
    }

    #[test]
    fn gd_predictions_have_collapsed_band() {
        let tmp = tempfile::tempdir().unwrap();
        emit_artifacts(&run_experiment(&small(Method::Gd)).unwrap(), tmp.path()).unwrap();
        for line in read(tmp.path(), "predictions.csv").lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f[2], f[3]);
            assert_eq!(f[2], f[4]);
        }
    }

    #[test]
    fn rerun_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let config = small(Method::Esmda);
        emit_artifacts(&run_experiment(&config).unwrap(), a.path()).unwrap();
        emit_artifacts(&run_experiment(&config).unwrap(), b.path()).unwrap();
        for name in [
            "report.json",
            "metrics.csv",
            "predictions.csv",
            "params_trace.csv",
            "iterations.csv",
        ] {
            assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
        }
    }

    #[test]
    fn io_errors_carry_the_path() {
        let tmp = tempfile::tempdir().unwrap();
        let blocker = tmp.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let report = run_experiment(&small(Method::Gd)).unwrap();
        let err = emit_artifacts(&report, &blocker.join("sub")).unwrap_err();
        assert!(
            matches!(&err, Error::Io { path, .. } if path.ends_with("file/sub")),
            "{err}"
        );
    }
}
