//! Stochastic ensemble Kalman filter over network parameters.
//!
//! The state is the flat parameter vector; the forecast model is persistence
//! (optionally with additive process noise) and the observation operator is the
//! network itself. Because that operator is nonlinear, the gain is built from
//! ensemble statistics:
//!
//! ```text
//! K = C_xy (C_yy + r R)^-1,    x_i <- x_i + K (d_i - y_i)
//! ```
//!
//! where `C_xy` is the parameter/prediction cross-covariance, `C_yy` the
//! prediction covariance (both normalized by `N_e - 1`), `R = obs_var * I`,
//! `d_i` the perturbed observation for member `i` and `r` an inflation factor
//! (1 for the filter, `alpha_i` for ES-MDA).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fnn::{forward_into, Layout, NetworkSpec, ParameterVector, SegmentKind, TrainableMask};
use crate::rng::{stream_rng, Stream};

/// `N_e` realizations of the parameter vector sharing one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<ParameterVector>,
}

impl Ensemble {
    pub fn new(members: Vec<ParameterVector>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::config(format!(
                "ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        let layout = members[0].layout();
        if let Some(bad) = members.iter().find(|m| m.layout() != layout) {
            return Err(Error::dim("ensemble member", layout.len(), bad.len()));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[ParameterVector] {
        &self.members
    }

    pub fn into_members(self) -> Vec<ParameterVector> {
        self.members
    }

    pub fn n_e(&self) -> usize {
        self.members.len()
    }

    pub fn layout(&self) -> Layout {
        self.members[0].layout()
    }

    /// Members by rows, selected coordinates by columns.
    pub fn gather(&self, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_e(), indices.len(), |i, c| {
            self.members[i].values()[indices[c]]
        })
    }

    fn scatter(&mut self, indices: &[usize], states: &DMatrix<f64>) {
        for (i, member) in self.members.iter_mut().enumerate() {
            let values = member.values_mut();
            for (c, &idx) in indices.iter().enumerate() {
                values[idx] = states[(i, c)];
            }
        }
    }
}

/// Coordinatewise arithmetic mean of the members.
pub fn ensemble_mean(e: &Ensemble) -> ParameterVector {
    let mut mean = ParameterVector::zeros(e.layout());
    let n = e.n_e() as f64;
    for member in e.members() {
        for (m, v) in mean.values_mut().iter_mut().zip(member.values()) {
            *m += v;
        }
    }
    for m in mean.values_mut() {
        *m /= n;
    }
    mean
}

/// Coordinatewise sample standard deviation (`N_e - 1` normalization).
pub fn ensemble_std(e: &Ensemble) -> Vec<f64> {
    let mean = ensemble_mean(e);
    let n = e.n_e() as f64;
    let mut var = vec![0.0; mean.len()];
    for member in e.members() {
        for ((v, x), m) in var.iter_mut().zip(member.values()).zip(mean.values()) {
            *v += (x - m) * (x - m);
        }
    }
    var.into_iter().map(|v| (v / (n - 1.0)).sqrt()).collect()
}

/// Sample covariance of the masked coordinates, `d x d`.
pub fn ensemble_covariance(e: &Ensemble, mask: &TrainableMask) -> DMatrix<f64> {
    let anomalies = anomalies(&e.gather(&mask.indices()));
    anomalies.transpose() * &anomalies / (e.n_e() as f64 - 1.0)
}

/// Column anomalies, computed after shifting by the first row so that
/// identical rows give exactly zero.
fn anomalies(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let rows = m.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let shift = col[0];
        col.add_scalar_mut(-shift);
        let mean = col.sum() / rows;
        col.add_scalar_mut(-mean);
    }
    out
}

struct GainFactors {
    c_xy: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

/// Cross-covariance and factored innovation covariance, or `None` when the
/// prediction anomalies vanish.
fn gain_factors(
    states: &DMatrix<f64>,
    predictions: &DMatrix<f64>,
    noise_var: f64,
) -> Result<Option<GainFactors>> {
    let n_e = states.nrows();
    if predictions.nrows() != n_e {
        return Err(Error::dim("prediction rows", n_e, predictions.nrows()));
    }
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::config(format!(
            "observation noise variance must be > 0, got {noise_var}"
        )));
    }
    let pred_anom = anomalies(predictions);
    if pred_anom.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let state_anom = anomalies(states);
    let norm = 1.0 / (n_e as f64 - 1.0);
    let c_xy = state_anom.transpose() * &pred_anom * norm;
    let mut s = pred_anom.transpose() * &pred_anom * norm;
    for k in 0..s.nrows() {
        s[(k, k)] += noise_var;
    }
    let chol = s.cholesky().ok_or_else(|| {
        Error::LinearAlgebra(format!(
            "innovation covariance ({0}x{0}) is not positive definite",
            predictions.ncols()
        ))
    })?;
    Ok(Some(GainFactors { c_xy, chol }))
}

/// Ensemble Kalman gain `C_xy (C_yy + noise_var I)^-1`, `d x m`.
pub fn ensemble_gain(
    states: &DMatrix<f64>,
    predictions: &DMatrix<f64>,
    noise_var: f64,
) -> Result<DMatrix<f64>> {
    Ok(match gain_factors(states, predictions, noise_var)? {
        Some(f) => f.chol.solve(&f.c_xy.transpose()).transpose(),
        None => DMatrix::zeros(states.ncols(), predictions.ncols()),
    })
}

/// Stochastic ensemble analysis on raw matrices.
///
/// `states` is `N_e x d`, `predictions` and `perturbed` are `N_e x m`. The
/// observation-error covariance in the gain is `noise_var * I`. When every
/// member predicts the same value the gain is zero and `states` is untouched.
pub fn ensemble_update(
    states: &mut DMatrix<f64>,
    predictions: &DMatrix<f64>,
    perturbed: &DMatrix<f64>,
    noise_var: f64,
) -> Result<()> {
    if perturbed.shape() != predictions.shape() {
        return Err(Error::dim(
            "perturbed observations",
            predictions.ncols(),
            perturbed.ncols(),
        ));
    }
    let Some(GainFactors { c_xy, chol }) = gain_factors(states, predictions, noise_var)? else {
        return Ok(());
    };
    let innovations = perturbed - predictions;
    let weights = chol.solve(&innovations.transpose());
    *states += (c_xy * weights).transpose();
    Ok(())
}

/// Each member is `base + delta` with `delta ~ N(0, prior_std^2)` on trainable
/// coordinates; other coordinates are copied from `base`.
pub fn init_ensemble<R: Rng + ?Sized>(
    base: &ParameterVector,
    n_e: usize,
    prior_std: f64,
    mask: &TrainableMask,
    rng: &mut R,
) -> Result<Ensemble> {
    if mask.len() != base.len() {
        return Err(Error::dim("trainable mask", base.len(), mask.len()));
    }
    if !(prior_std >= 0.0 && prior_std.is_finite()) {
        return Err(Error::config(format!(
            "prior_std must be >= 0, got {prior_std}"
        )));
    }
    let members = (0..n_e)
        .map(|_| {
            let mut m = base.clone();
            for (v, &train) in m.values_mut().iter_mut().zip(mask.flags()) {
                if train {
                    *v += prior_std * rng.sample::<f64, _>(StandardNormal);
                }
            }
            m
        })
        .collect();
    Ensemble::new(members)
}

/// Persistence forecast with optional additive `N(0, process_noise_var)` noise
/// on trainable coordinates.
pub fn forecast<R: Rng + ?Sized>(
    e: &Ensemble,
    process_noise_var: f64,
    mask: &TrainableMask,
    rng: &mut R,
) -> Ensemble {
    let mut out = e.clone();
    if process_noise_var > 0.0 {
        let std = process_noise_var.sqrt();
        for member in &mut out.members {
            for (v, &train) in member.values_mut().iter_mut().zip(mask.flags()) {
                if train {
                    *v += std * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    out
}

/// `n_e` copies of `y_obs`, each with independent `N(0, obs_var)` noise.
pub fn perturb_observation<R: Rng + ?Sized>(
    y_obs: &[f64],
    obs_var: f64,
    n_e: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if !(obs_var > 0.0 && obs_var.is_finite()) {
        return Err(Error::config(format!("obs_var must be > 0, got {obs_var}")));
    }
    let std = obs_var.sqrt();
    Ok((0..n_e)
        .map(|_| {
            y_obs
                .iter()
                .map(|y| y + std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect())
}

fn rows_to_matrix(rows: &[Vec<f64>], context: &'static str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::dim(context, cols, bad.len()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Analysis step on the trainable coordinates of `e`, with gain noise
/// `inflation * obs_var * I`.
pub fn analysis_update(
    e: &Ensemble,
    predictions: &[Vec<f64>],
    perturbed_obs: &[Vec<f64>],
    obs_var: f64,
    inflation: f64,
    mask: &TrainableMask,
) -> Result<Ensemble> {
    if predictions.len() != e.n_e() {
        return Err(Error::dim("member predictions", e.n_e(), predictions.len()));
    }
    if perturbed_obs.len() != e.n_e() {
        return Err(Error::dim(
            "perturbed observations",
            e.n_e(),
            perturbed_obs.len(),
        ));
    }
    if mask.len() != e.layout().len() {
        return Err(Error::dim("trainable mask", e.layout().len(), mask.len()));
    }
    if !(inflation > 0.0 && inflation.is_finite()) {
        return Err(Error::config(format!(
            "inflation must be > 0, got {inflation}"
        )));
    }
    let pred = rows_to_matrix(predictions, "member prediction")?;
    let obs = rows_to_matrix(perturbed_obs, "perturbed observation")?;
    let indices = mask.indices();
    let mut states = e.gather(&indices);
    ensemble_update(&mut states, &pred, &obs, inflation * obs_var)?;
    let mut out = e.clone();
    out.scatter(&indices, &states);
    Ok(out)
}

/// Evaluates every member on every input; row `i` holds member `i`'s outputs
/// concatenated in input order.
pub fn predict_members(spec: &NetworkSpec, e: &Ensemble, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if e.layout() != spec.layout() {
        return Err(Error::dim(
            "ensemble for network",
            spec.layout().len(),
            e.layout().len(),
        ));
    }
    if let Some(bad) = xs.iter().find(|x| x.len() != spec.n_input()) {
        return Err(Error::dim("network input", spec.n_input(), bad.len()));
    }
    let m = spec.n_output();
    let mut hidden = vec![0.0; spec.n_hidden()];
    Ok(e.members()
        .iter()
        .map(|member| {
            let mut row = vec![0.0; xs.len() * m];
            for (x, out) in xs.iter().zip(row.chunks_mut(m)) {
                forward_into(spec, member.values(), x, &mut hidden, out);
            }
            row
        })
        .collect())
}

/// Mean over members of [`predict_members`].
pub fn mean_prediction(member_predictions: &[Vec<f64>]) -> Vec<f64> {
    let n = member_predictions.len() as f64;
    let mut mean = vec![0.0; member_predictions[0].len()];
    for row in member_predictions {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnkfConfig {
    pub n_e: usize,
    /// Standard deviation of the initial perturbation; the default is the
    /// square root of a prior variance of 0.1.
    pub prior_std: f64,
    pub obs_var: f64,
    pub process_noise_var: f64,
    pub passes: usize,
    pub seed: u64,
    pub trainable: Vec<SegmentKind>,
}

impl Default for EnkfConfig {
    fn default() -> Self {
        Self {
            n_e: 50,
            prior_std: 0.1f64.sqrt(),
            obs_var: 0.005,
            process_noise_var: 0.0,
            passes: 1,
            seed: 0,
            trainable: vec![SegmentKind::B2],
        }
    }
}

impl EnkfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_e < 2 {
            return Err(Error::config(format!(
                "enkf.n_e must be >= 2, got {}",
                self.n_e
            )));
        }
        if !(self.obs_var > 0.0 && self.obs_var.is_finite()) {
            return Err(Error::config(format!(
                "enkf.obs_var must be > 0, got {}",
                self.obs_var
            )));
        }
        if !(self.process_noise_var >= 0.0 && self.process_noise_var.is_finite()) {
            return Err(Error::config("enkf.process_noise_var must be >= 0"));
        }
        if !(self.prior_std >= 0.0 && self.prior_std.is_finite()) {
            return Err(Error::config("enkf.prior_std must be >= 0"));
        }
        if self.passes == 0 {
            return Err(Error::config("enkf.passes must be >= 1"));
        }
        if self.trainable.is_empty() {
            return Err(Error::config("enkf.trainable selects no parameters"));
        }
        Ok(())
    }
}

/// Ensemble statistics of the assimilated parameters after one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub input: Vec<f64>,
    pub observation: Vec<f64>,
    pub param_mean: Vec<f64>,
    pub param_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssimilationTrace {
    /// Layout indices of the assimilated parameters, in column order.
    pub param_indices: Vec<usize>,
    pub param_names: Vec<String>,
    /// Statistics of the initial ensemble (step 0, no observation).
    pub initial: TraceRecord,
    /// One record per analysis step.
    pub records: Vec<TraceRecord>,
}

fn record(
    step: usize,
    e: &Ensemble,
    indices: &[usize],
    input: Vec<f64>,
    observation: Vec<f64>,
) -> TraceRecord {
    let mean = ensemble_mean(e);
    let std = ensemble_std(e);
    TraceRecord {
        step,
        input,
        observation,
        param_mean: indices.iter().map(|&i| mean.values()[i]).collect(),
        param_std: indices.iter().map(|&i| std[i]).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct EnkfOutcome {
    pub ensemble: Ensemble,
    pub trace: AssimilationTrace,
}

/// Sequential assimilation of the training samples in dataset order, `passes`
/// times over.
pub fn train_enkf(
    spec: &NetworkSpec,
    base: &ParameterVector,
    data: &Dataset,
    config: &EnkfConfig,
) -> Result<EnkfOutcome> {
    config.validate()?;
    if base.layout() != spec.layout() {
        return Err(Error::dim(
            "base parameters for network",
            spec.layout().len(),
            base.len(),
        ));
    }
    let mask = TrainableMask::from_segments(spec.layout(), &config.trainable)?;
    let indices = mask.indices();
    let mut init_rng = stream_rng(config.seed, Stream::EnsembleInit);
    let mut obs_rng = stream_rng(config.seed, Stream::ObservationNoise);
    let mut noise_rng = stream_rng(config.seed, Stream::ProcessNoise);

    let mut ensemble = init_ensemble(base, config.n_e, config.prior_std, &mask, &mut init_rng)?;
    let initial = record(0, &ensemble, &indices, Vec::new(), Vec::new());
    let mut records = Vec::with_capacity(data.len() * config.passes);
    let mut step = 0;
    for _ in 0..config.passes {
        for (x, y) in data.inputs().iter().zip(data.targets()) {
            step += 1;
            let at_step = |source: Error| Error::Step {
                step,
                source: Box::new(source),
            };
            let prior = forecast(&ensemble, config.process_noise_var, &mask, &mut noise_rng);
            let predictions =
                predict_members(spec, &prior, std::slice::from_ref(x)).map_err(at_step)?;
            let perturbed = perturb_observation(y, config.obs_var, config.n_e, &mut obs_rng)
                .map_err(at_step)?;
            ensemble =
                analysis_update(&prior, &predictions, &perturbed, config.obs_var, 1.0, &mask)
                    .map_err(at_step)?;
            records.push(record(step, &ensemble, &indices, x.clone(), y.clone()));
        }
    }
    Ok(EnkfOutcome {
        ensemble,
        trace: AssimilationTrace {
            param_names: indices
                .iter()
                .map(|&i| spec.layout().param_name(i))
                .collect(),
            param_indices: indices,
            initial,
            records,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_sine, Role};
    use crate::fnn::{pack, Activation, Segments};
    use crate::gd::init_params;
    use crate::metrics::median;

    fn bias_mask(spec: &NetworkSpec) -> TrainableMask {
        TrainableMask::from_segments(spec.layout(), &[SegmentKind::B2]).unwrap()
    }

    #[test]
    fn zero_prior_std_copies_base() {
        let spec = NetworkSpec::default();
        let base = init_params(&spec, 1, 0.5);
        let e = init_ensemble(
            &base,
            10,
            0.0,
            &bias_mask(&spec),
            &mut stream_rng(0, Stream::EnsembleInit),
        )
        .unwrap();
        assert!(e.members().iter().all(|m| m == &base));
    }

    #[test]
    fn prior_spread_and_frozen_coordinates() {
        let spec = NetworkSpec::default();
        let base = init_params(&spec, 1, 0.5);
        let mask = bias_mask(&spec);
        let std = 0.1f64.sqrt();
        let e = init_ensemble(
            &base,
            50,
            std,
            &mask,
            &mut stream_rng(5, Stream::EnsembleInit),
        )
        .unwrap();
        let sd = ensemble_std(&e);
        for (i, s) in sd.iter().enumerate() {
            if mask.is_trainable(i) {
                assert!((s - std).abs() < 0.3 * std, "coordinate {i}: {s}");
            } else {
                assert!(e
                    .members()
                    .iter()
                    .all(|m| m.values()[i].to_bits() == base.values()[i].to_bits()));
            }
        }
    }

    #[test]
    fn ensemble_needs_two_members() {
        let spec = NetworkSpec::default();
        let p = ParameterVector::zeros(spec.layout());
        assert!(Ensemble::new(vec![p.clone()]).is_err());
        let other = ParameterVector::zeros(NetworkSpec::new(2, 10, 1).unwrap().layout());
        assert!(Ensemble::new(vec![p, other]).is_err());
    }

    #[test]
    fn mean_examples() {
        let spec = NetworkSpec::default();
        let v = init_params(&spec, 3, 1.0);
        let same = Ensemble::new(vec![v.clone(); 4]).unwrap();
        assert_eq!(ensemble_mean(&same), v);
        let neg =
            ParameterVector::from_values(spec.layout(), v.values().iter().map(|x| -x).collect())
                .unwrap();
        let pair = Ensemble::new(vec![v.clone(), neg]).unwrap();
        assert!(ensemble_mean(&pair).values().iter().all(|&x| x == 0.0));

        let members: Vec<_> = (0..50).map(|s| init_params(&spec, s, 1.0)).collect();
        let e = Ensemble::new(members.clone()).unwrap();
        let mean = ensemble_mean(&e);
        for i in 0..30 {
            let mut acc = 0.0;
            for m in &members {
                acc += m.values()[i];
            }
            assert!((mean.values()[i] - acc / 50.0).abs() < 1e-14);
        }
    }

    #[test]
    fn forecast_without_noise_is_identity() {
        let spec = NetworkSpec::default();
        let mask = bias_mask(&spec);
        let e = init_ensemble(
            &init_params(&spec, 1, 0.5),
            20,
            0.3,
            &mask,
            &mut stream_rng(1, Stream::EnsembleInit),
        )
        .unwrap();
        assert_eq!(
            forecast(&e, 0.0, &mask, &mut stream_rng(1, Stream::ProcessNoise)),
            e
        );
    }

    #[test]
    fn process_noise_widens_spread() {
        let spec = NetworkSpec::default();
        let mask = bias_mask(&spec);
        let base = init_params(&spec, 1, 0.5);
        let mut gains = Vec::new();
        for seed in 0..40 {
            let e = init_ensemble(
                &base,
                20,
                0.3,
                &mask,
                &mut stream_rng(seed, Stream::EnsembleInit),
            )
            .unwrap();
            let f = forecast(&e, 0.01, &mask, &mut stream_rng(seed, Stream::ProcessNoise));
            let (a, b) = (ensemble_std(&e), ensemble_std(&f));
            for i in 0..30 {
                if !mask.is_trainable(i) {
                    assert!(f
                        .members()
                        .iter()
                        .zip(e.members())
                        .all(|(x, y)| x.values()[i] == y.values()[i]));
                }
            }
            let var = |s: &[f64]| mask.indices().iter().map(|&i| s[i] * s[i]).sum::<f64>();
            gains.push(var(&b) - var(&a));
        }
        let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
        // expected increase: 10 coordinates x 0.01
        assert!(mean_gain > 0.05 && mean_gain < 0.15, "{mean_gain}");
    }

    #[test]
    fn perturbation_statistics() {
        let y = [0.25];
        let a = perturb_observation(&y, 0.005, 50, &mut stream_rng(2, Stream::ObservationNoise))
            .unwrap();
        let b = perturb_observation(
            &y,
            4.0 * 0.005,
            50,
            &mut stream_rng(2, Stream::ObservationNoise),
        )
        .unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert!(((pb[0] - 0.25) - 2.0 * (pa[0] - 0.25)).abs() < 1e-15);
        }
        let eps: Vec<f64> = a.iter().map(|p| p[0] - 0.25).collect();
        let mean = eps.iter().sum::<f64>() / 50.0;
        let var = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 49.0;
        assert!((var - 0.005).abs() < 0.5 * 0.005, "{var}");

        let many = perturb_observation(
            &y,
            0.005,
            100_000,
            &mut stream_rng(3, Stream::ObservationNoise),
        )
        .unwrap();
        let mean = many.iter().map(|p| p[0]).sum::<f64>() / 1e5;
        assert!((mean - 0.25).abs() < 1e-2 * 0.005f64.sqrt());

        assert!(
            perturb_observation(&y, 0.0, 5, &mut stream_rng(3, Stream::ObservationNoise)).is_err()
        );
    }

    /// y = b through a 1-1-1 identity network with W1 = 0, W2 = 1.
    fn scalar_identity_model(prior_mean: f64) -> (NetworkSpec, ParameterVector) {
        let spec = NetworkSpec::new(1, 1, 1)
            .unwrap()
            .with_activations(Activation::Identity, Activation::Identity);
        let base = pack(
            &spec,
            &Segments {
                w1: vec![0.0],
                w2: vec![1.0],
                b2: vec![prior_mean],
            },
        )
        .unwrap();
        (spec, base)
    }

    #[test]
    fn zero_gain_when_predictions_agree() {
        let spec = NetworkSpec::default();
        let mask = TrainableMask::all(spec.layout());
        let e = init_ensemble(
            &init_params(&spec, 1, 0.5),
            8,
            0.3,
            &mask,
            &mut stream_rng(1, Stream::EnsembleInit),
        )
        .unwrap();
        let preds = vec![vec![0.1 + 0.2]; 8];
        let obs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        assert_eq!(
            analysis_update(&e, &preds, &obs, 0.005, 1.0, &mask).unwrap(),
            e
        );
    }

    #[test]
    fn scalar_update_matches_kalman_posterior() {
        let (mu, var, r, y): (f64, f64, f64, f64) = (1.0, 0.5, 0.25, 2.0);
        let (spec, base) = scalar_identity_model(mu);
        let mask = bias_mask(&spec);
        let n_e = 100_000;
        let e = init_ensemble(
            &base,
            n_e,
            var.sqrt(),
            &mask,
            &mut stream_rng(4, Stream::EnsembleInit),
        )
        .unwrap();
        let preds = predict_members(&spec, &e, &[vec![0.7]]).unwrap();
        let obs = perturb_observation(&[y], r, n_e, &mut stream_rng(4, Stream::ObservationNoise))
            .unwrap();
        let post = analysis_update(&e, &preds, &obs, r, 1.0, &mask).unwrap();
        let idx = mask.indices()[0];
        let mean = ensemble_mean(&post).values()[idx];
        let sd = ensemble_std(&post)[idx];
        let want_mean = mu + var / (var + r) * (y - mu);
        let want_var = var * r / (var + r);
        assert!(
            ((mean - want_mean) / want_mean).abs() < 0.02,
            "{mean} vs {want_mean}"
        );
        assert!(
            ((sd * sd - want_var) / want_var).abs() < 0.02,
            "{} vs {want_var}",
            sd * sd
        );
    }

    #[test]
    fn huge_observation_noise_leaves_ensemble_in_place() {
        let spec = NetworkSpec::default();
        let mask = bias_mask(&spec);
        let e = init_ensemble(
            &init_params(&spec, 1, 0.5),
            50,
            0.3,
            &mask,
            &mut stream_rng(1, Stream::EnsembleInit),
        )
        .unwrap();
        let preds = predict_members(&spec, &e, &[vec![1.0]]).unwrap();
        // perturbations drawn at variance 1e8 would move members by O(1e-4)
        // on their own, so only the gain sees the huge variance
        let obs = vec![vec![0.8]; 50];
        let post = analysis_update(&e, &preds, &obs, 1e8, 1.0, &mask).unwrap();
        let change = post
            .members()
            .iter()
            .zip(e.members())
            .flat_map(|(a, b)| {
                a.values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| (x - y).abs())
            })
            .fold(0.0, f64::max);
        assert!(change < 1e-6, "{change}");
    }

    #[test]
    fn analysis_rejects_bad_input() {
        let spec = NetworkSpec::default();
        let mask = bias_mask(&spec);
        let e = init_ensemble(
            &init_params(&spec, 1, 0.5),
            4,
            0.3,
            &mask,
            &mut stream_rng(1, Stream::EnsembleInit),
        )
        .unwrap();
        let preds = predict_members(&spec, &e, &[vec![1.0]]).unwrap();
        let obs = vec![vec![0.0]; 4];
        assert!(analysis_update(&e, &preds[..3], &obs, 0.1, 1.0, &mask).is_err());
        assert!(analysis_update(&e, &preds, &obs, -0.1, 1.0, &mask).is_err());
        assert!(analysis_update(&e, &preds, &obs, 0.1, 0.0, &mask).is_err());
        assert!(analysis_update(&e, &preds, &vec![vec![0.0, 1.0]; 4], 0.1, 1.0, &mask).is_err());
    }

    #[test]
    fn covariance_diagnostic_matches_std() {
        let spec = NetworkSpec::default();
        let mask = bias_mask(&spec);
        let e = init_ensemble(
            &init_params(&spec, 1, 0.5),
            30,
            0.3,
            &mask,
            &mut stream_rng(1, Stream::EnsembleInit),
        )
        .unwrap();
        let cov = ensemble_covariance(&e, &mask);
        let sd = ensemble_std(&e);
        for (c, &i) in mask.indices().iter().enumerate() {
            assert!((cov[(c, c)] - sd[i] * sd[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_lengths_and_determinism() {
        let spec = NetworkSpec::default();
        let base = init_params(&spec, 1, 0.5);
        let single = Dataset::from_scalars("one", Role::Train, &[0.3], &[0.2]).unwrap();
        let out = train_enkf(&spec, &base, &single, &EnkfConfig::default()).unwrap();
        assert_eq!(out.trace.records.len(), 1);

        let data = gen_sine(Role::Train);
        let cfg = EnkfConfig {
            passes: 2,
            seed: 9,
            ..EnkfConfig::default()
        };
        let a = train_enkf(&spec, &base, &data, &cfg).unwrap();
        let b = train_enkf(&spec, &base, &data, &cfg).unwrap();
        assert_eq!(a.trace.records.len(), 402);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.ensemble, b.ensemble);
        for r in &a.trace.records {
            assert!(r.param_std.iter().all(|s| s.is_finite() && *s >= 0.0));
        }
        // frozen coordinates never move
        let mask = bias_mask(&spec);
        for m in a.ensemble.members() {
            for i in 0..30 {
                if !mask.is_trainable(i) {
                    assert_eq!(m.values()[i].to_bits(), base.values()[i].to_bits());
                }
            }
        }
    }

    #[test]
    fn assimilation_reduces_parameter_spread() {
        let spec = NetworkSpec::default();
        let data = gen_sine(Role::Train);
        let ratios: Vec<f64> = (0..5)
            .map(|seed| {
                let out = train_enkf(
                    &spec,
                    &init_params(&spec, seed, 0.5),
                    &data,
                    &EnkfConfig {
                        seed,
                        ..EnkfConfig::default()
                    },
                )
                .unwrap();
                let mean_std =
                    |r: &TraceRecord| r.param_std.iter().sum::<f64>() / r.param_std.len() as f64;
                mean_std(out.trace.records.last().unwrap()) / mean_std(&out.trace.initial)
            })
            .collect();
        assert!(median(&ratios) < 1.0);
    }

    #[test]
    fn config_invariants() {
        assert!(EnkfConfig {
            n_e: 1,
            ..EnkfConfig::default()
        }
        .validate()
        .is_err());
        assert!(EnkfConfig {
            obs_var: 0.0,
            ..EnkfConfig::default()
        }
        .validate()
        .is_err());
        assert!(EnkfConfig {
            process_noise_var: -1.0,
            ..EnkfConfig::default()
        }
        .validate()
        .is_err());
        assert!(EnkfConfig {
            passes: 0,
            ..EnkfConfig::default()
        }
        .validate()
        .is_err());
        assert!(EnkfConfig::default().validate().is_ok());
    }
}
