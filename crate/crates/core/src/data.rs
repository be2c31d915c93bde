//! The two synthetic regression benchmarks: a sine wave on `[0, 2π]` and a
//! Mexican Hat (Ricker) wavelet on `[-5, 5]`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
}

/// Paired inputs and targets on a strictly increasing 1-D grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    name: String,
    role: Role,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        role: Role,
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::config("dataset must contain at least one sample"));
        }
        if inputs.len() != targets.len() {
            return Err(Error::dim("dataset targets", inputs.len(), targets.len()));
        }
        let n_in = inputs[0].len();
        let n_out = targets[0].len();
        if let Some(bad) = inputs.iter().find(|x| x.len() != n_in) {
            return Err(Error::dim("dataset input", n_in, bad.len()));
        }
        if let Some(bad) = targets.iter().find(|y| y.len() != n_out) {
            return Err(Error::dim("dataset target", n_out, bad.len()));
        }
        if n_in == 1 && inputs.windows(2).any(|w| w[0][0] >= w[1][0]) {
            return Err(Error::config(
                "1-D dataset inputs must be strictly increasing",
            ));
        }
        Ok(Self {
            name: name.into(),
            role,
            inputs,
            targets,
        })
    }

    /// Builds a 1-D dataset from scalar samples.
    pub fn from_scalars(
        name: impl Into<String>,
        role: Role,
        xs: &[f64],
        ys: &[f64],
    ) -> Result<Self> {
        Self::new(
            name,
            role,
            xs.iter().map(|&x| vec![x]).collect(),
            ys.iter().map(|&y| vec![y]).collect(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Targets concatenated sample by sample.
    pub fn flat_targets(&self) -> Vec<f64> {
        self.targets.iter().flatten().copied().collect()
    }

    /// First input coordinate of every sample.
    pub fn xs(&self) -> Vec<f64> {
        self.inputs.iter().map(|x| x[0]).collect()
    }
}

/// Sine targets on `x_k = k·π/100` (201 train points) or `x_k = k·π/10`
/// (21 validation points); both grids include 0 and 2π.
pub fn gen_sine(role: Role) -> Dataset {
    let divisions = match role {
        Role::Train => 200,
        Role::Validation => 20,
    };
    let xs: Vec<f64> = (0..=divisions)
        .map(|k| 2.0 * PI * k as f64 / divisions as f64)
        .collect();
    let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
    Dataset::from_scalars("sine", role, &xs, &ys).expect("sine grid is valid")
}

/// Ricker wavelet `2/(√(3σ)·π^¼) · (1 − (t/σ)²) · exp(−t²/(2σ²))`.
pub fn ricker(t: f64, sigma: f64) -> f64 {
    let norm = 2.0 / ((3.0 * sigma).sqrt() * PI.powf(0.25));
    let u = t / sigma;
    norm * (1.0 - u * u) * (-0.5 * u * u).exp()
}

/// How Mexican Hat inputs are placed inside `[-5, 5]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Evenly spaced grid including both endpoints.
    #[default]
    Grid,
    /// Sorted i.i.d. uniform draws; the seed is the run seed.
    Uniform,
}

pub const MEXICAN_HAT_HALF_WIDTH: f64 = 5.0;

/// Mexican Hat with σ = 1: 200 train points or 30 validation points.
pub fn gen_mexican_hat(role: Role, placement: Placement, seed: u64) -> Dataset {
    let n: usize = match role {
        Role::Train => 200,
        Role::Validation => 30,
    };
    let xs = match placement {
        Placement::Grid => symmetric_grid(n, MEXICAN_HAT_HALF_WIDTH),
        Placement::Uniform => {
            // Separate sub-streams for train and validation draws.
            let mut rng = stream_rng(
                seed.wrapping_mul(2).wrapping_add(role as u64),
                Stream::DataPlacement,
            );
            loop {
                let mut xs: Vec<f64> = (0..n)
                    .map(|_| rng.random_range(-MEXICAN_HAT_HALF_WIDTH..MEXICAN_HAT_HALF_WIDTH))
                    .collect();
                xs.sort_by(f64::total_cmp);
                if xs.windows(2).all(|w| w[0] < w[1]) {
                    break xs;
                }
            }
        }
    };
    let ys: Vec<f64> = xs.iter().map(|&t| ricker(t, 1.0)).collect();
    Dataset::from_scalars("mexican_hat", role, &xs, &ys).expect("mexican hat grid is valid")
}

/// `n` evenly spaced points on `[-half_width, half_width]`, computed from an
/// integer numerator so mirrored points are exact negatives.
fn symmetric_grid(n: usize, half_width: f64) -> Vec<f64> {
    let last = (n - 1) as i64;
    (0..n as i64)
        .map(|k| half_width * (2 * k - last) as f64 / last as f64)
        .collect()
}
