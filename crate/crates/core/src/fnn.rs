//! Single-hidden-layer feedforward network with a flat parameter encoding.
//!
//! All trainable parameters live in one [`ParameterVector`] laid out as
//! `(W1, W2, B2)`:
//!
//! - `W1`: hidden weights `w_ji`, row-major by hidden unit (`j * n_input + i`);
//! - `W2`: output weights `w_kj`, row-major by output unit (`k * n_hidden + j`);
//! - `B2`: `n_hidden` bias terms `b_j`.
//!
//! Where the bias terms enter is set by [`BiasPlacement`]. With the default
//! [`BiasPlacement::Hidden`],
//!
//! ```text
//! h_j = f1(sum_i w_ji x_i + b_j)
//! y_k = f2(sum_j w_kj h_j)
//! ```
//!
//! and with [`BiasPlacement::OutputDistributed`] each hidden connection carries
//! its own output-side offset, `y_k = f2(sum_j (w_kj h_j + b_j))`, with no bias
//! before `f1`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation, written in terms of the
    /// activation's output `a = f(z)`.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasPlacement {
    /// `b_j` is added to hidden unit `j` before `f1`.
    #[default]
    Hidden,
    /// `b_j` is added next to `w_kj h_j` inside the output sum.
    OutputDistributed,
}

/// Architecture of an `n - N_h - m` network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NetworkSpec {
    n_input: usize,
    n_hidden: usize,
    n_output: usize,
    hidden_activation: Activation,
    output_activation: Activation,
    bias_placement: BiasPlacement,
}

impl NetworkSpec {
    /// Network with `tanh` hidden units, identity output and hidden-side biases.
    pub fn new(n_input: usize, n_hidden: usize, n_output: usize) -> Result<Self> {
        if n_input == 0 || n_hidden == 0 || n_output == 0 {
            return Err(Error::config(format!(
                "neuron counts must be >= 1, got {n_input}-{n_hidden}-{n_output}"
            )));
        }
        Ok(Self {
            n_input,
            n_hidden,
            n_output,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
            bias_placement: BiasPlacement::Hidden,
        })
    }

    pub fn with_activations(mut self, hidden: Activation, output: Activation) -> Self {
        self.hidden_activation = hidden;
        self.output_activation = output;
        self
    }

    pub fn with_bias_placement(mut self, placement: BiasPlacement) -> Self {
        self.bias_placement = placement;
        self
    }

    pub fn n_input(&self) -> usize {
        self.n_input
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn n_output(&self) -> usize {
        self.n_output
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn bias_placement(&self) -> BiasPlacement {
        self.bias_placement
    }

    pub fn layout(&self) -> Layout {
        Layout {
            n_input: self.n_input,
            n_hidden: self.n_hidden,
            n_output: self.n_output,
        }
    }
}

impl Default for NetworkSpec {
    /// The 1-10-1 regression network used by both benchmark cases.
    fn default() -> Self {
        Self::new(1, 10, 1).expect("1-10-1 is a valid architecture")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    W1,
    W2,
    B2,
}

impl SegmentKind {
    pub const ALL: [SegmentKind; 3] = [SegmentKind::W1, SegmentKind::W2, SegmentKind::B2];

    pub fn name(self) -> &'static str {
        match self {
            SegmentKind::W1 => "W1",
            SegmentKind::W2 => "W2",
            SegmentKind::B2 => "B2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Shape of the flat parameter vector for a given architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Layout {
    n_input: usize,
    n_hidden: usize,
    n_output: usize,
}

impl Layout {
    /// `n * N_h + N_h * m + N_h`
    pub fn len(&self) -> usize {
        self.n_input * self.n_hidden + self.n_hidden * self.n_output + self.n_hidden
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segments(&self) -> [Segment; 3] {
        let w1 = self.n_input * self.n_hidden;
        let w2 = self.n_hidden * self.n_output;
        [
            Segment {
                kind: SegmentKind::W1,
                offset: 0,
                len: w1,
            },
            Segment {
                kind: SegmentKind::W2,
                offset: w1,
                len: w2,
            },
            Segment {
                kind: SegmentKind::B2,
                offset: w1 + w2,
                len: self.n_hidden,
            },
        ]
    }

    pub fn segment(&self, kind: SegmentKind) -> Segment {
        self.segments()[kind as usize]
    }

    /// Stable column name for parameter `index`, e.g. `w1_j3_i0` or `b2_j7`.
    pub fn param_name(&self, index: usize) -> String {
        let [w1, w2, b2] = self.segments();
        if w1.range().contains(&index) {
            let local = index - w1.offset;
            format!("w1_j{}_i{}", local / self.n_input, local % self.n_input)
        } else if w2.range().contains(&index) {
            let local = index - w2.offset;
            format!("w2_k{}_j{}", local / self.n_hidden, local % self.n_hidden)
        } else if b2.range().contains(&index) {
            format!("b2_j{}", index - b2.offset)
        } else {
            panic!(
                "parameter index {index} out of range for layout of length {}",
                self.len()
            )
        }
    }
}

/// Flat trainable-parameter state of one network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterVector {
    values: Vec<f64>,
    #[serde(skip)]
    layout: Layout,
}

impl ParameterVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::dim("parameter vector", layout.len(), values.len()));
        }
        Ok(Self { values, layout })
    }

    /// Every entry drawn i.i.d. from `N(0, scale^2)`.
    pub fn random_normal<R: Rng + ?Sized>(layout: Layout, scale: f64, rng: &mut R) -> Self {
        let values = (0..layout.len())
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { values, layout }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, kind: SegmentKind) -> &[f64] {
        &self.values[self.layout.segment(kind).range()]
    }

    pub fn segment_mut(&mut self, kind: SegmentKind) -> &mut [f64] {
        let range = self.layout.segment(kind).range();
        &mut self.values[range]
    }
}

/// Named weight and bias arrays, in the same row-major order as the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Segments {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub fn pack(spec: &NetworkSpec, segments: &Segments) -> Result<ParameterVector> {
    let layout = spec.layout();
    let [w1, w2, b2] = layout.segments();
    if segments.w1.len() != w1.len {
        return Err(Error::dim("W1 segment", w1.len, segments.w1.len()));
    }
    if segments.w2.len() != w2.len {
        return Err(Error::dim("W2 segment", w2.len, segments.w2.len()));
    }
    if segments.b2.len() != b2.len {
        return Err(Error::dim("B2 segment", b2.len, segments.b2.len()));
    }
    let mut values = Vec::with_capacity(layout.len());
    values.extend_from_slice(&segments.w1);
    values.extend_from_slice(&segments.w2);
    values.extend_from_slice(&segments.b2);
    Ok(ParameterVector { values, layout })
}

pub fn unpack(params: &ParameterVector) -> Segments {
    Segments {
        w1: params.segment(SegmentKind::W1).to_vec(),
        w2: params.segment(SegmentKind::W2).to_vec(),
        b2: params.segment(SegmentKind::B2).to_vec(),
    }
}

/// Which coordinates of a [`ParameterVector`] a trainer may change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrainableMask {
    flags: Vec<bool>,
}

impl TrainableMask {
    pub fn new(layout: Layout, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != layout.len() {
            return Err(Error::dim("trainable mask", layout.len(), flags.len()));
        }
        if !flags.iter().any(|&f| f) {
            return Err(Error::config("trainable mask selects no parameters"));
        }
        Ok(Self { flags })
    }

    pub fn all(layout: Layout) -> Self {
        Self {
            flags: vec![true; layout.len()],
        }
    }

    pub fn from_segments(layout: Layout, kinds: &[SegmentKind]) -> Result<Self> {
        let mut flags = vec![false; layout.len()];
        for &kind in kinds {
            for f in &mut flags[layout.segment(kind).range()] {
                *f = true;
            }
        }
        Self::new(layout, flags)
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_trainable(&self, index: usize) -> bool {
        self.flags[index]
    }

    pub fn indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

fn check_params(spec: &NetworkSpec, params: &ParameterVector) -> Result<()> {
    if params.layout != spec.layout() {
        return Err(Error::dim(
            "parameters for network",
            spec.layout().len(),
            params.len(),
        ));
    }
    Ok(())
}

/// Evaluates the network, writing hidden activations and outputs into the
/// provided buffers. Shapes are the caller's responsibility.
pub(crate) fn forward_into(
    spec: &NetworkSpec,
    values: &[f64],
    x: &[f64],
    hidden: &mut [f64],
    out: &mut [f64],
) {
    let (n, nh) = (spec.n_input, spec.n_hidden);
    let [_, w2_seg, b2_seg] = spec.layout().segments();
    let w1 = &values[..n * nh];
    let w2 = &values[w2_seg.range()];
    let b2 = &values[b2_seg.range()];
    let hidden_bias = spec.bias_placement == BiasPlacement::Hidden;

    for (j, h) in hidden.iter_mut().enumerate() {
        let row = &w1[j * n..(j + 1) * n];
        let mut z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum();
        if hidden_bias {
            z += b2[j];
        }
        *h = spec.hidden_activation.apply(z);
    }
    for (k, y) in out.iter_mut().enumerate() {
        let row = &w2[k * nh..(k + 1) * nh];
        let mut z = 0.0;
        for j in 0..nh {
            z += row[j] * hidden[j];
            if !hidden_bias {
                z += b2[j];
            }
        }
        *y = spec.output_activation.apply(z);
    }
}

pub fn forward(spec: &NetworkSpec, params: &ParameterVector, x: &[f64]) -> Result<Vec<f64>> {
    check_params(spec, params)?;
    if x.len() != spec.n_input {
        return Err(Error::dim("network input", spec.n_input, x.len()));
    }
    let mut hidden = vec![0.0; spec.n_hidden];
    let mut out = vec![0.0; spec.n_output];
    forward_into(spec, &params.values, x, &mut hidden, &mut out);
    Ok(out)
}

pub fn forward_batch(
    spec: &NetworkSpec,
    params: &ParameterVector,
    xs: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    check_params(spec, params)?;
    let mut hidden = vec![0.0; spec.n_hidden];
    xs.iter()
        .map(|x| {
            if x.len() != spec.n_input {
                return Err(Error::dim("network input", spec.n_input, x.len()));
            }
            let mut out = vec![0.0; spec.n_output];
            forward_into(spec, &params.values, x, &mut hidden, &mut out);
            Ok(out)
        })
        .collect()
}
