//! Seeded experiments on the two benchmark cases, with metrics, medians over
//! seeds and plot-ready artifacts.

mod artifacts;
mod settings;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use artifacts::{emit_artifacts, write_summary};
pub use settings::{NetworkSettings, Settings};

use crate::data::{gen_mexican_hat, gen_sine, Dataset, Placement, Role};
use crate::enkf::{mean_prediction, predict_members, train_enkf, AssimilationTrace, EnkfConfig};
use crate::error::{Error, Result};
use crate::esmda::{train_esmda, EsmdaConfig, IterationReport};
use crate::fnn::{forward_batch, NetworkSpec, ParameterVector};
use crate::gd::{init_params, train_gd, GdConfig};
use crate::metrics::{median, Scores};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Sine,
    MexicanHat,
}

impl Case {
    pub const ALL: [Case; 2] = [Case::Sine, Case::MexicanHat];

    pub fn name(self) -> &'static str {
        match self {
            Case::Sine => "sine",
            Case::MexicanHat => "mexican_hat",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gd,
    Enkf,
    Esmda,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gd, Method::Enkf, Method::Esmda];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::Enkf => "enkf",
            Method::Esmda => "esmda",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodConfig {
    Gd(GdConfig),
    Enkf(EnkfConfig),
    Esmda(EsmdaConfig),
}

impl MethodConfig {
    pub fn method(&self) -> Method {
        match self {
            MethodConfig::Gd(_) => Method::Gd,
            MethodConfig::Enkf(_) => Method::Enkf,
            MethodConfig::Esmda(_) => Method::Esmda,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            MethodConfig::Gd(c) => c.validate(),
            MethodConfig::Enkf(c) => c.validate(),
            MethodConfig::Esmda(c) => c.validate(),
        }
    }
}

/// Network the ensemble methods start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseInit {
    /// Train with gradient descent first (same seed, `gd` settings), then
    /// assimilate the selected parameters around the trained network.
    #[default]
    GdPretrained,
    /// Random network from the GD initializer.
    Random,
}

/// Everything needed to reproduce one (case, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub case: Case,
    pub method: MethodConfig,
    pub seeds: Vec<u64>,
    /// Pretraining settings when `base` is [`BaseInit::GdPretrained`]; also the
    /// initializer scale for [`BaseInit::Random`].
    pub base: BaseInit,
    pub pretrain: GdConfig,
    pub network: NetworkSpec,
    pub placement: Placement,
    /// Seed for uniform Mexican Hat placement; unused on grids.
    pub data_seed: u64,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

impl RunConfig {
    /// Default settings for a cell.
    pub fn new(case: Case, method: Method) -> Self {
        Settings::default().run_config(case, method)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        self.method.validate()?;
        if self.method.method() != Method::Gd && self.base == BaseInit::GdPretrained {
            self.pretrain.validate()?;
        }
        Ok(())
    }

    pub fn datasets(&self) -> (Dataset, Dataset) {
        match self.case {
            Case::Sine => (gen_sine(Role::Train), gen_sine(Role::Validation)),
            Case::MexicanHat => (
                gen_mexican_hat(Role::Train, self.placement, self.data_seed),
                gen_mexican_hat(Role::Validation, self.placement, self.data_seed),
            ),
        }
    }
}

/// Point prediction with the min/max envelope over ensemble members.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionCurve {
    pub x: Vec<f64>,
    pub y_true: Vec<f64>,
    pub mean: Vec<f64>,
    pub band_min: Vec<f64>,
    pub band_max: Vec<f64>,
}

impl PredictionCurve {
    fn deterministic(data: &Dataset, prediction: Vec<f64>) -> Self {
        Self {
            x: data.xs(),
            y_true: data.flat_targets(),
            band_min: prediction.clone(),
            band_max: prediction.clone(),
            mean: prediction,
        }
    }

    fn from_members(data: &Dataset, members: &[Vec<f64>]) -> Self {
        let n = members[0].len();
        let mut band_min = vec![f64::INFINITY; n];
        let mut band_max = vec![f64::NEG_INFINITY; n];
        for row in members {
            for j in 0..n {
                band_min[j] = band_min[j].min(row[j]);
                band_max[j] = band_max[j].max(row[j]);
            }
        }
        // the averaged sum of near-identical members can land an ulp outside
        let mean = mean_prediction(members)
            .into_iter()
            .zip(band_min.iter().zip(&band_max))
            .map(|(m, (lo, hi))| m.clamp(*lo, *hi))
            .collect();
        Self {
            x: data.xs(),
            y_true: data.flat_targets(),
            mean,
            band_min,
            band_max,
        }
    }

    pub fn scores(&self) -> Result<Scores> {
        Scores::compute(&self.mean, &self.y_true)
    }
}

/// Per-iteration ensemble statistics without the member curves, which are
/// folded into `curve`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub alpha: Option<f64>,
    pub train: Scores,
    pub validation: Scores,
    pub curve: PredictionCurve,
    pub param_mean: Vec<f64>,
    pub param_std: Vec<f64>,
}

impl IterationSummary {
    fn new(report: &IterationReport, validation: &Dataset) -> Result<Self> {
        let curve = PredictionCurve::from_members(validation, &report.member_predictions);
        Ok(Self {
            iteration: report.iteration,
            alpha: report.alpha,
            train: report.train,
            validation: curve.scores()?,
            curve,
            param_mean: report.param_mean.clone(),
            param_std: report.param_std.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodTrace {
    Gd {
        loss_history: Vec<f64>,
        final_loss: f64,
        param_names: Vec<String>,
        params: Vec<f64>,
    },
    Enkf(AssimilationTrace),
    Esmda {
        param_names: Vec<String>,
        /// Iteration 0 is the prior ensemble.
        iterations: Vec<IterationSummary>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub train: Scores,
    pub validation: Scores,
    pub train_curve: PredictionCurve,
    pub validation_curve: PredictionCurve,
    pub trace: MethodTrace,
    /// Seconds spent in the training call.
    #[serde(skip)]
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub pretrain_secs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MedianScores {
    pub train: Scores,
    pub validation: Scores,
}

impl MedianScores {
    fn of<'a>(pairs: impl Iterator<Item = (&'a Scores, &'a Scores)> + Clone) -> Self {
        let med = |f: fn(&Scores) -> f64, pick: fn((&'a Scores, &'a Scores)) -> &'a Scores| {
            median(&pairs.clone().map(|p| f(pick(p))).collect::<Vec<_>>())
        };
        Self {
            train: Scores {
                rmse: med(|s| s.rmse, |p| p.0),
                r2: med(|s| s.r2, |p| p.0),
            },
            validation: Scores {
                rmse: med(|s| s.rmse, |p| p.1),
                r2: med(|s| s.r2, |p| p.1),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationMedian {
    pub iteration: usize,
    #[serde(flatten)]
    pub scores: MedianScores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub runs: Vec<SeedRun>,
    pub median: MedianScores,
    /// ES-MDA only: medians per iteration, starting from the prior.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iteration_medians: Option<Vec<IterationMedian>>,
}

impl RunReport {
    pub fn case(&self) -> Case {
        self.config.case
    }

    pub fn method(&self) -> Method {
        self.config.method.method()
    }
}

fn base_network(
    config: &RunConfig,
    seed: u64,
    train: &Dataset,
) -> Result<(ParameterVector, Option<f64>)> {
    let init = init_params(&config.network, seed, config.pretrain.init_scale);
    match config.base {
        BaseInit::Random => Ok((init, None)),
        BaseInit::GdPretrained => {
            let gd = GdConfig {
                seed,
                ..config.pretrain.clone()
            };
            let start = Instant::now();
            let out = train_gd(&config.network, &init, train, &gd)?;
            Ok((out.params, Some(start.elapsed().as_secs_f64())))
        }
    }
}

fn flat_predictions(
    spec: &NetworkSpec,
    params: &ParameterVector,
    data: &Dataset,
) -> Result<Vec<f64>> {
    Ok(forward_batch(spec, params, data.inputs())?
        .into_iter()
        .flatten()
        .collect())
}

fn run_seed(config: &RunConfig, seed: u64, train: &Dataset, val: &Dataset) -> Result<SeedRun> {
    let spec = &config.network;
    let (train_curve, validation_curve, trace, wall_time_secs, pretrain_secs) = match &config.method
    {
        MethodConfig::Gd(c) => {
            let gd = GdConfig { seed, ..c.clone() };
            let init = init_params(spec, seed, gd.init_scale);
            let start = Instant::now();
            let out = train_gd(spec, &init, train, &gd)?;
            let secs = start.elapsed().as_secs_f64();
            let layout = spec.layout();
            let trace = MethodTrace::Gd {
                loss_history: out.loss_history,
                final_loss: out.final_loss,
                param_names: (0..layout.len()).map(|i| layout.param_name(i)).collect(),
                params: out.params.values().to_vec(),
            };
            (
                PredictionCurve::deterministic(train, flat_predictions(spec, &out.params, train)?),
                PredictionCurve::deterministic(val, flat_predictions(spec, &out.params, val)?),
                trace,
                secs,
                None,
            )
        }
        MethodConfig::Enkf(c) => {
            let (base, pretrain) = base_network(config, seed, train)?;
            let cfg = EnkfConfig { seed, ..c.clone() };
            let start = Instant::now();
            let out = train_enkf(spec, &base, train, &cfg)?;
            let secs = start.elapsed().as_secs_f64();
            (
                PredictionCurve::from_members(
                    train,
                    &predict_members(spec, &out.ensemble, train.inputs())?,
                ),
                PredictionCurve::from_members(
                    val,
                    &predict_members(spec, &out.ensemble, val.inputs())?,
                ),
                MethodTrace::Enkf(out.trace),
                secs,
                pretrain,
            )
        }
        MethodConfig::Esmda(c) => {
            let (base, pretrain) = base_network(config, seed, train)?;
            let cfg = EsmdaConfig { seed, ..c.clone() };
            let start = Instant::now();
            let out = train_esmda(spec, &base, train, Some(val), &cfg)?;
            let secs = start.elapsed().as_secs_f64();
            let iterations = std::iter::once(&out.prior)
                .chain(&out.reports)
                .map(|r| IterationSummary::new(r, val))
                .collect::<Result<Vec<_>>>()?;
            (
                PredictionCurve::from_members(
                    train,
                    &predict_members(spec, &out.ensemble, train.inputs())?,
                ),
                iterations
                    .last()
                    .expect("at least one iteration")
                    .curve
                    .clone(),
                MethodTrace::Esmda {
                    param_names: out.param_names,
                    iterations,
                },
                secs,
                pretrain,
            )
        }
    };
    Ok(SeedRun {
        seed,
        train: train_curve.scores()?,
        validation: validation_curve.scores()?,
        train_curve,
        validation_curve,
        trace,
        wall_time_secs,
        pretrain_secs,
    })
}

/// Runs every seed (concurrently; each seed is independent and internally
/// deterministic) and aggregates medians. Artifacts are written when
/// `config.out_dir` is set.
pub fn run_experiment(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let (train, val) = config.datasets();
    let results: Vec<Result<SeedRun>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .seeds
            .iter()
            .map(|&seed| {
                let (train, val) = (&train, &val);
                scope.spawn(move || {
                    run_seed(config, seed, train, val).map_err(|source| Error::Seed {
                        seed,
                        source: Box::new(source),
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let median = MedianScores::of(runs.iter().map(|r| (&r.train, &r.validation)));
    let iteration_medians = match &runs[0].trace {
        MethodTrace::Esmda { iterations, .. } => Some(
            (0..iterations.len())
                .map(|k| {
                    let scores = MedianScores::of(runs.iter().map(|r| match &r.trace {
                        MethodTrace::Esmda { iterations, .. } => {
                            (&iterations[k].train, &iterations[k].validation)
                        }
                        _ => unreachable!("all seeds run the same method"),
                    }));
                    IterationMedian {
                        iteration: k,
                        scores,
                    }
                })
                .collect(),
        ),
        _ => None,
    };
    let report = RunReport {
        config: config.clone(),
        runs,
        median,
        iteration_medians,
    };
    if let Some(dir) = &config.out_dir {
        emit_artifacts(&report, dir)?;
    }
    Ok(report)
}

/// All six (case, method) cells with shared settings. Each cell writes into
/// `out/<case>/<method>/` when `out` is given.
pub fn reproduce(settings: &Settings, out: Option<&Path>) -> Result<Vec<RunReport>> {
    let mut reports = Vec::new();
    for case in Case::ALL {
        for method in Method::ALL {
            let mut config = settings.run_config(case, method);
            config.out_dir = out.map(|dir| dir.join(case.name()).join(method.name()));
            reports.push(run_experiment(&config)?);
        }
    }
    Ok(reports)
}

/// Median validation RMSE and R² per case, with one row per ES-MDA iteration.
pub fn summary_table(reports: &[RunReport]) -> String {
    let mut out = String::new();
    for case in Case::ALL {
        out.push_str(&format!(
            "{case}\n{:<22}{:>10}{:>10}\n",
            "method", "RMSE", "R2"
        ));
        for r in reports.iter().filter(|r| r.case() == case) {
            match &r.iteration_medians {
                Some(iters) => {
                    for it in iters.iter().filter(|it| it.iteration > 0) {
                        let label = format!("esmda iteration {}", it.iteration);
                        let s = it.scores.validation;
                        out.push_str(&format!("{label:<22}{:>10.4}{:>10.4}\n", s.rmse, s.r2));
                    }
                }
                None => {
                    let s = r.median.validation;
                    out.push_str(&format!(
                        "{:<22}{:>10.4}{:>10.4}\n",
                        r.method().name(),
                        s.rmse,
                        s.r2
                    ));
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(case: Case, method: Method) -> RunConfig {
        let mut c = RunConfig::new(case, method);
        c.seeds = vec![3, 1];
        c.pretrain.epochs = 200;
        if let MethodConfig::Gd(g) = &mut c.method {
            g.epochs = 50;
        }
        c
    }

    #[test]
    fn gd_report_shapes() {
        let r = run_experiment(&quick(Case::Sine, Method::Gd)).unwrap();
        assert_eq!(r.runs.len(), 2);
        let MethodTrace::Gd {
            loss_history,
            params,
            ..
        } = &r.runs[0].trace
        else {
            panic!()
        };
        assert_eq!(loss_history.len(), 50);
        assert_eq!(params.len(), 30);
        let c = &r.runs[0].validation_curve;
        assert_eq!(c.x.len(), 21);
        assert_eq!(c.band_min, c.mean);
        assert_eq!(c.band_max, c.mean);
        assert!(r.iteration_medians.is_none());
    }

    #[test]
    fn enkf_trace_covers_every_sample() {
        let mut c = quick(Case::Sine, Method::Enkf);
        if let MethodConfig::Enkf(e) = &mut c.method {
            e.passes = 2;
        }
        let r = run_experiment(&c).unwrap();
        let MethodTrace::Enkf(trace) = &r.runs[0].trace else {
            panic!()
        };
        assert_eq!(trace.records.len(), 402);
    }

    #[test]
    fn esmda_iteration_medians() {
        let r = run_experiment(&quick(Case::MexicanHat, Method::Esmda)).unwrap();
        let MethodTrace::Esmda { iterations, .. } = &r.runs[0].trace else {
            panic!()
        };
        assert_eq!(iterations.len(), 4);
        let med = r.iteration_medians.as_ref().unwrap();
        assert_eq!(med.len(), 4);
        assert_eq!(med[3].scores, r.median);
        for run in &r.runs {
            let c = &run.validation_curve;
            assert_eq!(c.x.len(), 30);
            for j in 0..c.x.len() {
                assert!(c.band_min[j] <= c.mean[j] && c.mean[j] <= c.band_max[j]);
            }
        }
    }

    #[test]
    fn medians_do_not_depend_on_seed_order() {
        let a = run_experiment(&quick(Case::Sine, Method::Esmda)).unwrap();
        let mut c = quick(Case::Sine, Method::Esmda);
        c.seeds.reverse();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.median, b.median);
        assert_eq!(a.iteration_medians, b.iteration_medians);
    }

    #[test]
    fn errors_name_the_seed() {
        let mut c = quick(Case::Sine, Method::Gd);
        if let MethodConfig::Gd(g) = &mut c.method {
            g.learning_rate = 50.0;
            g.epochs = 2000;
        }
        let err = run_experiment(&c).unwrap_err();
        assert!(matches!(err, Error::Seed { seed: 3, .. }), "{err}");
        assert_eq!(err.kind(), "divergence");
    }

    #[test]
    fn rejects_empty_seed_list() {
        let mut c = quick(Case::Sine, Method::Gd);
        c.seeds.clear();
        assert!(run_experiment(&c).is_err());
    }
}
