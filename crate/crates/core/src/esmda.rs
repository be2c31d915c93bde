//! Ensemble smoother with multiple data assimilation.
//!
//! Every iteration evaluates each member on the whole training set and applies
//! one global ensemble update against all observations, with the observation
//! error inflated by `alpha_i`. The inflation coefficients satisfy
//! `sum(1 / alpha_i) = 1`, which makes `n_i` inflated updates equivalent to a
//! single update for linear-Gaussian problems.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::enkf::{
    analysis_update, ensemble_mean, ensemble_std, init_ensemble, mean_prediction,
    perturb_observation, predict_members, Ensemble,
};
use crate::error::{Error, Result};
use crate::fnn::{NetworkSpec, ParameterVector, SegmentKind, TrainableMask};
use crate::metrics::Scores;
use crate::rng::{stream_rng, Stream};

/// Allowed deviation of `sum(1 / alpha_i)` from 1.
pub const ALPHA_SUM_TOLERANCE: f64 = 1e-12;

/// Inflation coefficients for each iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AlphaSchedule(Vec<f64>);

impl AlphaSchedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::config("alpha schedule must have at least one entry"));
        }
        if let Some(bad) = alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::config(format!(
                "alpha coefficients must be finite and > 0, got {bad}"
            )));
        }
        let sum: f64 = alphas.iter().map(|a| 1.0 / a).sum();
        if (sum - 1.0).abs() > ALPHA_SUM_TOLERANCE {
            return Err(Error::config(format!(
                "alpha schedule must satisfy sum(1/alpha) = 1, got {sum}"
            )));
        }
        Ok(Self(alphas))
    }

    /// `alpha_i = n_i` for every iteration.
    pub fn constant(n_i: usize) -> Result<Self> {
        if n_i == 0 {
            return Err(Error::config("n_i must be >= 1"));
        }
        Self::new(vec![n_i as f64; n_i])
    }

    /// Rescales positive `weights` so the schedule satisfies the constraint,
    /// keeping their ratios (e.g. `[9.33, 7, 4, 2]` for a decreasing schedule).
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if let Some(bad) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::config(format!(
                "alpha weights must be finite and > 0, got {bad}"
            )));
        }
        let s: f64 = weights.iter().map(|w| 1.0 / w).sum();
        Self::new(weights.iter().map(|w| w * s).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for AlphaSchedule {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AlphaSchedule> for Vec<f64> {
    fn from(s: AlphaSchedule) -> Self {
        s.0
    }
}

/// The constant schedule `[n_i; n_i]`.
pub fn make_alpha_schedule(n_i: usize) -> Result<Vec<f64>> {
    AlphaSchedule::constant(n_i).map(Vec::from)
}

/// How `alpha_i` scales the observation-error covariance inside the gain.
/// Perturbations always use variance `alpha_i * obs_var`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainNoiseScaling {
    #[default]
    Alpha,
    SqrtAlpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsmdaConfig {
    pub n_i: usize,
    pub n_e: usize,
    pub prior_std: f64,
    pub obs_var: f64,
    /// Defaults to the constant schedule for `n_i` when absent.
    pub alpha: Option<AlphaSchedule>,
    pub seed: u64,
    pub trainable: Vec<SegmentKind>,
    pub gain_noise_scaling: GainNoiseScaling,
}

impl Default for EsmdaConfig {
    fn default() -> Self {
        Self {
            n_i: 3,
            n_e: 50,
            prior_std: 0.1f64.sqrt(),
            obs_var: 0.1,
            alpha: None,
            seed: 0,
            trainable: vec![SegmentKind::B2],
            gain_noise_scaling: GainNoiseScaling::Alpha,
        }
    }
}

impl EsmdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_i == 0 {
            return Err(Error::config("esmda.n_i must be >= 1"));
        }
        if self.n_e < 2 {
            return Err(Error::config(format!(
                "esmda.n_e must be >= 2, got {}",
                self.n_e
            )));
        }
        if !(self.obs_var > 0.0 && self.obs_var.is_finite()) {
            return Err(Error::config(format!(
                "esmda.obs_var must be > 0, got {}",
                self.obs_var
            )));
        }
        if !(self.prior_std >= 0.0 && self.prior_std.is_finite()) {
            return Err(Error::config("esmda.prior_std must be >= 0"));
        }
        if let Some(alpha) = &self.alpha {
            if alpha.len() != self.n_i {
                return Err(Error::config(format!(
                    "esmda.alpha has {} entries but n_i = {}",
                    alpha.len(),
                    self.n_i
                )));
            }
        }
        if self.trainable.is_empty() {
            return Err(Error::config("esmda.trainable selects no parameters"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<AlphaSchedule> {
        match &self.alpha {
            Some(a) => Ok(a.clone()),
            None => AlphaSchedule::constant(self.n_i),
        }
    }
}

/// State of the ensemble after one iteration (iteration 0 is the prior).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub alpha: Option<f64>,
    pub train: Scores,
    pub validation: Option<Scores>,
    /// Member outputs on the validation inputs (training inputs when no
    /// validation set is given), one row per member.
    pub member_predictions: Vec<Vec<f64>>,
    pub param_mean: Vec<f64>,
    pub param_std: Vec<f64>,
}

impl IterationReport {
    /// Ensemble-mean curve of [`member_predictions`](Self::member_predictions).
    pub fn mean_curve(&self) -> Vec<f64> {
        mean_prediction(&self.member_predictions)
    }

    /// Mean over assimilated parameters of their ensemble std.
    pub fn mean_param_std(&self) -> f64 {
        self.param_std.iter().sum::<f64>() / self.param_std.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct EsmdaOutcome {
    pub ensemble: Ensemble,
    pub param_indices: Vec<usize>,
    pub param_names: Vec<String>,
    pub prior: IterationReport,
    /// Exactly `n_i` entries.
    pub reports: Vec<IterationReport>,
}

struct Evaluator<'a> {
    spec: &'a NetworkSpec,
    train: &'a Dataset,
    validation: Option<&'a Dataset>,
    indices: &'a [usize],
}

impl Evaluator<'_> {
    fn report(
        &self,
        iteration: usize,
        alpha: Option<f64>,
        e: &Ensemble,
    ) -> Result<IterationReport> {
        let train_preds = predict_members(self.spec, e, self.train.inputs())?;
        let train = Scores::compute(&mean_prediction(&train_preds), &self.train.flat_targets())?;
        let (validation, member_predictions) = match self.validation {
            Some(v) => {
                let preds = predict_members(self.spec, e, v.inputs())?;
                let scores = Scores::compute(&mean_prediction(&preds), &v.flat_targets())?;
                (Some(scores), preds)
            }
            None => (None, train_preds),
        };
        let mean = ensemble_mean(e);
        let std = ensemble_std(e);
        Ok(IterationReport {
            iteration,
            alpha,
            train,
            validation,
            member_predictions,
            param_mean: self.indices.iter().map(|&i| mean.values()[i]).collect(),
            param_std: self.indices.iter().map(|&i| std[i]).collect(),
        })
    }
}

/// Runs `n_i` global updates against every training observation.
pub fn train_esmda(
    spec: &NetworkSpec,
    base: &ParameterVector,
    train: &Dataset,
    validation: Option<&Dataset>,
    config: &EsmdaConfig,
) -> Result<EsmdaOutcome> {
    config.validate()?;
    if base.layout() != spec.layout() {
        return Err(Error::dim(
            "base parameters for network",
            spec.layout().len(),
            base.len(),
        ));
    }
    let schedule = config.schedule()?;
    let mask = TrainableMask::from_segments(spec.layout(), &config.trainable)?;
    let indices = mask.indices();
    let eval = Evaluator {
        spec,
        train,
        validation,
        indices: &indices,
    };
    let mut init_rng = stream_rng(config.seed, Stream::EnsembleInit);
    let mut obs_rng = stream_rng(config.seed, Stream::ObservationNoise);

    let observations = train.flat_targets();
    let mut ensemble = init_ensemble(base, config.n_e, config.prior_std, &mask, &mut init_rng)?;
    let prior = eval.report(0, None, &ensemble)?;
    let mut reports = Vec::with_capacity(config.n_i);
    for (k, &alpha) in schedule.as_slice().iter().enumerate() {
        let iteration = k + 1;
        let at_iteration = |source: Error| Error::Iteration {
            iteration,
            source: Box::new(source),
        };
        let predictions = predict_members(spec, &ensemble, train.inputs()).map_err(at_iteration)?;
        let perturbed = perturb_observation(
            &observations,
            alpha * config.obs_var,
            config.n_e,
            &mut obs_rng,
        )
        .map_err(at_iteration)?;
        let gain_inflation = match config.gain_noise_scaling {
            GainNoiseScaling::Alpha => alpha,
            GainNoiseScaling::SqrtAlpha => alpha.sqrt(),
        };
        ensemble = analysis_update(
            &ensemble,
            &predictions,
            &perturbed,
            config.obs_var,
            gain_inflation,
            &mask,
        )
        .map_err(at_iteration)?;
        reports.push(
            eval.report(iteration, Some(alpha), &ensemble)
                .map_err(at_iteration)?,
        );
    }
    Ok(EsmdaOutcome {
        ensemble,
        param_names: indices
            .iter()
            .map(|&i| spec.layout().param_name(i))
            .collect(),
        param_indices: indices,
        prior,
        reports,
    })
}
