//! Full-batch gradient descent with backpropagation on the mean squared error.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fnn::{forward_into, NetworkSpec, ParameterVector, SegmentKind, TrainableMask};
use crate::rng::{stream_rng, Stream};

/// Standard deviation of the normal initializer for network parameters.
pub const DEFAULT_INIT_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub trainable: Vec<SegmentKind>,
    pub init_scale: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.12,
            epochs: 10_000,
            seed: 0,
            trainable: SegmentKind::ALL.to_vec(),
            init_scale: DEFAULT_INIT_SCALE,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "gd.learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("gd.epochs must be >= 1"));
        }
        if self.trainable.is_empty() {
            return Err(Error::config("gd.trainable selects no parameters"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("gd.init_scale must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Seeded `N(0, scale^2)` initialization of every network parameter.
pub fn init_params(spec: &NetworkSpec, seed: u64, scale: f64) -> ParameterVector {
    ParameterVector::random_normal(
        spec.layout(),
        scale,
        &mut stream_rng(seed, Stream::NetworkInit),
    )
}

/// `(1/N) Σ ||p_i - t_i||^2`
pub fn mse_loss(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::dim(
            "loss predictions",
            targets.len(),
            predictions.len(),
        ));
    }
    if targets.is_empty() {
        return Err(Error::dim("loss targets", 1, 0));
    }
    let mut total = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::dim("loss output vector", t.len(), p.len()));
        }
        total += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / targets.len() as f64)
}

fn check_dataset(spec: &NetworkSpec, params: &ParameterVector, data: &Dataset) -> Result<()> {
    if params.layout() != spec.layout() {
        return Err(Error::dim(
            "parameters for network",
            spec.layout().len(),
            params.len(),
        ));
    }
    let x = &data.inputs()[0];
    if x.len() != spec.n_input() {
        return Err(Error::dim("dataset input", spec.n_input(), x.len()));
    }
    let y = &data.targets()[0];
    if y.len() != spec.n_output() {
        return Err(Error::dim("dataset target", spec.n_output(), y.len()));
    }
    Ok(())
}

/// Loss and its gradient, accumulated serially in dataset order.
fn loss_and_grad(spec: &NetworkSpec, values: &[f64], data: &Dataset, grad: &mut [f64]) -> f64 {
    let (n, nh, m) = (spec.n_input(), spec.n_hidden(), spec.n_output());
    let [_, w2_seg, b2_seg] = spec.layout().segments();
    let hidden_bias = spec.bias_placement() == crate::fnn::BiasPlacement::Hidden;
    let w2 = &values[w2_seg.range()];
    let scale = 2.0 / data.len() as f64;

    grad.fill(0.0);
    let mut hidden = vec![0.0; nh];
    let mut out = vec![0.0; m];
    let mut delta_out = vec![0.0; m];
    let mut loss = 0.0;

    for (x, t) in data.inputs().iter().zip(data.targets()) {
        forward_into(spec, values, x, &mut hidden, &mut out);
        for k in 0..m {
            let r = out[k] - t[k];
            loss += r * r;
            delta_out[k] = scale * r * spec.output_activation().derivative_from_output(out[k]);
        }
        for j in 0..nh {
            let mut back = 0.0;
            for k in 0..m {
                grad[w2_seg.offset + k * nh + j] += delta_out[k] * hidden[j];
                back += delta_out[k] * w2[k * nh + j];
            }
            let delta_hidden = back * spec.hidden_activation().derivative_from_output(hidden[j]);
            for i in 0..n {
                grad[j * n + i] += delta_hidden * x[i];
            }
            grad[b2_seg.offset + j] += if hidden_bias {
                delta_hidden
            } else {
                delta_out.iter().sum::<f64>()
            };
        }
    }
    loss / data.len() as f64
}

/// Gradient of [`mse_loss`] over `data` with respect to every parameter.
pub fn grad_mse(
    spec: &NetworkSpec,
    params: &ParameterVector,
    data: &Dataset,
) -> Result<ParameterVector> {
    check_dataset(spec, params, data)?;
    let mut grad = ParameterVector::zeros(spec.layout());
    loss_and_grad(spec, params.values(), data, grad.values_mut());
    Ok(grad)
}

/// `params -= rate * grad` on trainable coordinates only.
pub fn descent_step(
    params: &mut ParameterVector,
    grad: &ParameterVector,
    rate: f64,
    mask: &TrainableMask,
) {
    for ((p, g), &train) in params
        .values_mut()
        .iter_mut()
        .zip(grad.values())
        .zip(mask.flags())
    {
        if train {
            *p -= rate * g;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GdOutcome {
    pub params: ParameterVector,
    /// Loss at the start of each epoch, before that epoch's update.
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
}

pub fn train_gd(
    spec: &NetworkSpec,
    init: &ParameterVector,
    data: &Dataset,
    config: &GdConfig,
) -> Result<GdOutcome> {
    config.validate()?;
    check_dataset(spec, init, data)?;
    let mask = TrainableMask::from_segments(spec.layout(), &config.trainable)?;

    let mut params = init.clone();
    let mut grad = ParameterVector::zeros(spec.layout());
    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let loss = loss_and_grad(spec, params.values(), data, grad.values_mut());
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        loss_history.push(loss);
        descent_step(&mut params, &grad, config.learning_rate, &mask);
    }
    let final_loss = loss_and_grad(spec, params.values(), data, grad.values_mut());
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs,
        });
    }
    Ok(GdOutcome {
        params,
        loss_history,
        final_loss,
    })
}
