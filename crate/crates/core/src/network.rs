//! Dense feedforward network with manual backpropagation and
//! mean-ablation of hidden units.
//!
//! Hidden units are the players of the valuation game. They are numbered
//! layer by layer: unit `u` of hidden layer `l` has flat index
//! `sum(hidden sizes before l) + u`. Output units are never players.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Coalition, CooperativeGame, GameError};
use crate::tasks::Sample;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn mul_vec_add(&self, x: &[f64], bias: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(bias[r], |acc, (w, v)| acc + w * v)
            })
            .collect()
    }
}

/// Weights and biases of every layer. Gradients share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

pub type Gradient = Params;

impl Params {
    pub fn zeros_like(&self) -> Params {
        Params {
            weights: self
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn get(&self, idx: ParamIndex) -> f64 {
        match idx {
            ParamIndex::Weight { layer, row, col } => self.weights[layer].get(row, col),
            ParamIndex::Bias { layer, row } => self.biases[layer][row],
        }
    }

    pub fn get_mut(&mut self, idx: ParamIndex) -> &mut f64 {
        match idx {
            ParamIndex::Weight { layer, row, col } => self.weights[layer].get_mut(row, col),
            ParamIndex::Bias { layer, row } => &mut self.biases[layer][row],
        }
    }

    /// Every parameter location, layer by layer, weights before biases.
    pub fn indices(&self) -> impl Iterator<Item = ParamIndex> + '_ {
        self.weights.iter().enumerate().flat_map(|(layer, w)| {
            let rows = w.rows();
            let cols = w.cols();
            (0..rows)
                .flat_map(move |row| (0..cols).map(move |col| ParamIndex::Weight { layer, row, col }))
                .chain((0..rows).map(move |row| ParamIndex::Bias { layer, row }))
        })
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn l2_norm(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.as_slice())
            .chain(self.biases.iter().flatten())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Location of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamIndex {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
}

/// Hidden unit `unit` of hidden layer `layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub unit: usize,
}

/// Which hidden units stay live; the rest emit their recorded mean.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub keep: Coalition,
    pub means: Vec<f64>,
}

impl AblationSpec {
    pub fn new(keep: Coalition, means: Vec<f64>) -> Self {
        AblationSpec { keep, means }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    params: Params,
    /// Offset of each hidden layer's first unit in the flat neuron index.
    offsets: Vec<usize>,
}

impl DenseNet {
    /// He-initialized network with layer sizes `[input, hidden.., output]`.
    /// Biases start at zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 3 {
            return Err(Error::Shape(
                "need an input, at least one hidden layer and an output".into(),
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::Shape(format!("zero-width layer in {sizes:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Self::from_params(Params { weights, biases })
    }

    pub fn from_params(params: Params) -> Result<Self> {
        let depth = params.weights.len();
        if depth < 2 || params.biases.len() != depth {
            return Err(Error::Shape(format!(
                "{depth} weight matrices and {} bias vectors",
                params.biases.len()
            )));
        }
        for l in 0..depth {
            let w = &params.weights[l];
            if w.rows() == 0 || w.cols() == 0 {
                return Err(Error::Shape(format!("layer {l} has an empty dimension")));
            }
            if params.biases[l].len() != w.rows() {
                return Err(Error::Shape(format!(
                    "layer {l}: bias of {} for {} rows",
                    params.biases[l].len(),
                    w.rows()
                )));
            }
            if l > 0 && params.weights[l - 1].rows() != w.cols() {
                return Err(Error::Shape(format!(
                    "layer {l} expects {} inputs but layer {} emits {}",
                    w.cols(),
                    l - 1,
                    params.weights[l - 1].rows()
                )));
            }
        }
        let mut offsets = Vec::with_capacity(depth - 1);
        let mut acc = 0;
        for w in &params.weights[..depth - 1] {
            offsets.push(acc);
            acc += w.rows();
        }
        Ok(DenseNet { params, offsets })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Mutable access for in-place updates; the shape must not change.
    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.params.weights.iter().map(Matrix::rows))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.params.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.params.weights.last().expect("non-empty").rows()
    }

    pub fn hidden_layers(&self) -> usize {
        self.params.weights.len() - 1
    }

    /// Number of hidden units (players).
    pub fn n_neurons(&self) -> usize {
        self.params.weights[..self.hidden_layers()]
            .iter()
            .map(Matrix::rows)
            .sum()
    }

    pub fn output_layer(&self) -> usize {
        self.hidden_layers()
    }

    pub fn neuron_id(&self, i: usize) -> Result<NeuronId> {
        if i >= self.n_neurons() {
            return Err(Error::Precondition(format!(
                "neuron {i} outside 0..{}",
                self.n_neurons()
            )));
        }
        let layer = self.offsets.iter().rposition(|&o| o <= i).expect("offset 0 exists");
        Ok(NeuronId {
            layer,
            unit: i - self.offsets[layer],
        })
    }

    pub fn flat_index(&self, id: NeuronId) -> Result<usize> {
        if id.layer >= self.hidden_layers() || id.unit >= self.params.weights[id.layer].rows() {
            return Err(Error::Precondition(format!("no hidden unit {id:?}")));
        }
        Ok(self.offsets[id.layer] + id.unit)
    }

    pub fn neuron_index_map(&self) -> Vec<NeuronId> {
        (0..self.n_neurons())
            .map(|i| self.neuron_id(i).expect("in range"))
            .collect()
    }

    /// Incoming weight row and bias of hidden unit `i`.
    pub fn neuron_params(&self, i: usize) -> Result<Vec<ParamIndex>> {
        let NeuronId { layer, unit } = self.neuron_id(i)?;
        let cols = self.params.weights[layer].cols();
        Ok((0..cols)
            .map(|col| ParamIndex::Weight { layer, row: unit, col })
            .chain(std::iter::once(ParamIndex::Bias { layer, row: unit }))
            .collect())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input of length {} for a network expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_ablation(&self, ablation: &AblationSpec) -> Result<()> {
        let n = self.n_neurons();
        if ablation.keep.n_players() != n || ablation.means.len() != n {
            return Err(Error::Shape(format!(
                "ablation over {} players with {} means for {n} neurons",
                ablation.keep.n_players(),
                ablation.means.len()
            )));
        }
        if ablation.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Precondition("non-finite ablation mean".into()));
        }
        Ok(())
    }

    /// Post-activation output of every hidden layer, with ablated units
    /// replaced by their means.
    pub fn hidden_activations(
        &self,
        x: &[f64],
        ablation: Option<&AblationSpec>,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        if let Some(a) = ablation {
            self.check_ablation(a)?;
        }
        Ok(self.hidden_unchecked(x, ablation))
    }

    fn hidden_unchecked(&self, x: &[f64], ablation: Option<&AblationSpec>) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.hidden_layers());
        for l in 0..self.hidden_layers() {
            let input = if l == 0 { x } else { &out[l - 1] };
            let mut h = self.params.weights[l].mul_vec_add(input, &self.params.biases[l]);
            for (u, v) in h.iter_mut().enumerate() {
                *v = v.max(0.0);
                if let Some(a) = ablation {
                    let i = self.offsets[l] + u;
                    if !a.keep.contains(i) {
                        *v = a.means[i];
                    }
                }
            }
            out.push(h);
        }
        out
    }

    fn logits_unchecked(&self, x: &[f64], ablation: Option<&AblationSpec>) -> Vec<f64> {
        let hidden = self.hidden_unchecked(x, ablation);
        let last = hidden.last().expect("at least one hidden layer");
        let l = self.output_layer();
        self.params.weights[l].mul_vec_add(last, &self.params.biases[l])
    }

    pub fn forward(&self, x: &[f64], ablation: Option<&AblationSpec>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if let Some(a) = ablation {
            self.check_ablation(a)?;
        }
        Ok(self.logits_unchecked(x, ablation))
    }

    /// Predicted global class, argmax over `partition` (all classes when
    /// `None`).
    pub fn predict(
        &self,
        x: &[f64],
        ablation: Option<&AblationSpec>,
        partition: Option<Range<usize>>,
    ) -> Result<usize> {
        let logits = self.forward(x, ablation)?;
        let range = self.partition_or_all(partition)?;
        Ok(range.start + argmax(&logits[range]))
    }

    fn partition_or_all(&self, partition: Option<Range<usize>>) -> Result<Range<usize>> {
        let range = partition.unwrap_or(0..self.output_dim());
        if range.is_empty() || range.end > self.output_dim() {
            return Err(Error::Precondition(format!(
                "class partition {range:?} invalid for {} outputs",
                self.output_dim()
            )));
        }
        Ok(range)
    }

    /// Mean post-activation of every hidden unit over `data`, un-ablated.
    pub fn record_means(&self, data: &[Vec<f64>]) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::Precondition("cannot record means over no data".into()));
        }
        let mut sums = vec![0.0; self.n_neurons()];
        for x in data {
            let hidden = self.hidden_activations(x, None)?;
            for (s, v) in sums.iter_mut().zip(hidden.iter().flatten()) {
                *s += v;
            }
        }
        Ok(sums.into_iter().map(|s| s / data.len() as f64).collect())
    }

    fn check_labels(&self, labels: &[usize], range: &Range<usize>) -> Result<()> {
        if let Some(&bad) = labels.iter().find(|y| !range.contains(y)) {
            return Err(Error::Data(format!("label {bad} outside classes {range:?}")));
        }
        Ok(())
    }

    /// Mean softmax cross-entropy; with a partition, softmax runs over
    /// that slice of logits only.
    pub fn loss(
        &self,
        inputs: &[Vec<f64>],
        labels: &[usize],
        partition: Option<Range<usize>>,
    ) -> Result<f64> {
        let range = self.partition_or_all(partition)?;
        self.check_batch(inputs, labels, &range)?;
        let total: f64 = inputs
            .iter()
            .zip(labels)
            .map(|(x, &y)| {
                let logits = self.logits_unchecked(x, None);
                let slice = &logits[range.clone()];
                log_sum_exp(slice) - slice[y - range.start]
            })
            .sum();
        Ok(total / inputs.len() as f64)
    }

    fn check_batch(&self, inputs: &[Vec<f64>], labels: &[usize], range: &Range<usize>) -> Result<()> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::Data(format!(
                "batch of {} inputs and {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        for x in inputs {
            self.check_input(x)?;
        }
        self.check_labels(labels, range)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn grad(
        &self,
        inputs: &[Vec<f64>],
        labels: &[usize],
        partition: Option<Range<usize>>,
    ) -> Result<(f64, Gradient)> {
        let range = self.partition_or_all(partition)?;
        self.check_batch(inputs, labels, &range)?;
        let depth = self.params.weights.len();
        let scale = 1.0 / inputs.len() as f64;
        let mut g = self.params.zeros_like();
        let mut loss = 0.0;

        for (x, &y) in inputs.iter().zip(labels) {
            // acts[0] = x, acts[l + 1] = output of layer l
            let mut acts: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
            acts.push(x.clone());
            for l in 0..depth {
                let mut z = self.params.weights[l].mul_vec_add(&acts[l], &self.params.biases[l]);
                if l + 1 < depth {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                acts.push(z);
            }

            let logits = &acts[depth];
            let slice = &logits[range.clone()];
            let lse = log_sum_exp(slice);
            loss += lse - slice[y - range.start];
            let mut delta = vec![0.0; self.output_dim()];
            for (c, d) in range.clone().zip(delta[range.clone()].iter_mut()) {
                *d = ((logits[c] - lse).exp() - f64::from(u8::from(c == y))) * scale;
            }

            for l in (0..depth).rev() {
                let input = &acts[l];
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.biases[l][r] += d;
                    let row = &mut g.weights[l].as_mut_slice()[r * input.len()..(r + 1) * input.len()];
                    for (gw, a) in row.iter_mut().zip(input) {
                        *gw += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let w = &self.params.weights[l];
                let mut prev = vec![0.0; w.cols()];
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wv) in prev.iter_mut().zip(w.row(r)) {
                        *p += wv * d;
                    }
                }
                // ReLU derivative; acts[l] is post-activation of layer l-1.
                for (p, a) in prev.iter_mut().zip(&acts[l]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((loss * scale, g))
    }

    /// Classification accuracy on `data` under `ablation`, restricted to
    /// `partition`.
    pub fn accuracy(
        &self,
        data: &[Sample],
        ablation: Option<&AblationSpec>,
        partition: Option<Range<usize>>,
    ) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Data("accuracy over an empty set".into()));
        }
        let range = self.partition_or_all(partition)?;
        if let Some(a) = ablation {
            self.check_ablation(a)?;
        }
        for s in data {
            self.check_input(&s.x)?;
        }
        Ok(self.correct_count(data, ablation, &range) as f64 / data.len() as f64)
    }

    fn correct_count(
        &self,
        data: &[Sample],
        ablation: Option<&AblationSpec>,
        range: &Range<usize>,
    ) -> usize {
        data.par_iter()
            .with_min_len(64)
            .filter(|s| {
                let logits = self.logits_unchecked(&s.x, ablation);
                range.start + argmax(&logits[range.clone()]) == s.label
            })
            .count()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_sizes: self.layer_sizes(),
            weights: self.params.weights.iter().map(|w| w.as_slice().to_vec()).collect(),
            biases: self.params.biases.clone(),
            neuron_index_map: self
                .neuron_index_map()
                .into_iter()
                .map(|id| [id.layer, id.unit])
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let sizes = &ck.layer_sizes;
        if sizes.len() < 3 || ck.weights.len() != sizes.len() - 1 {
            return Err(Error::Shape(format!(
                "{} layer sizes with {} weight arrays",
                sizes.len(),
                ck.weights.len()
            )));
        }
        let weights = sizes
            .windows(2)
            .zip(&ck.weights)
            .map(|(pair, w)| Matrix::from_vec(pair[1], pair[0], w.clone()))
            .collect::<Result<Vec<_>>>()?;
        let net = DenseNet::from_params(Params {
            weights,
            biases: ck.biases.clone(),
        })?;
        let expected: Vec<[usize; 2]> = net
            .neuron_index_map()
            .into_iter()
            .map(|id| [id.layer, id.unit])
            .collect();
        if expected != ck.neuron_index_map {
            return Err(Error::Data("neuron index map does not match layer sizes".into()));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_checkpoint(&serde_json::from_str(text)?)
    }
}

pub const CHECKPOINT_FORMAT: &str = "snv-dense-net";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model layout: row-major weights per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub neuron_index_map: Vec<[usize; 2]>,
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Accuracy of the mean-ablated network as a cooperative game over its
/// hidden units. The network is not retrained between evaluations.
pub struct PerformanceGame<'a> {
    net: &'a DenseNet,
    data: &'a [Sample],
    means: Vec<f64>,
    partition: Range<usize>,
}

pub fn performance_oracle<'a>(
    net: &'a DenseNet,
    eval_data: &'a [Sample],
    means: Vec<f64>,
    partition: Option<Range<usize>>,
) -> Result<PerformanceGame<'a>> {
    if eval_data.is_empty() {
        return Err(Error::Precondition("oracle needs evaluation data".into()));
    }
    if means.len() != net.n_neurons() {
        return Err(Error::Shape(format!(
            "{} means for {} neurons",
            means.len(),
            net.n_neurons()
        )));
    }
    let partition = net.partition_or_all(partition)?;
    for s in eval_data {
        net.check_input(&s.x)?;
    }
    Ok(PerformanceGame {
        net,
        data: eval_data,
        means,
        partition,
    })
}

impl PerformanceGame<'_> {
    pub fn means(&self) -> &[f64] {
        &self.means
    }
}

impl CooperativeGame for PerformanceGame<'_> {
    fn n_players(&self) -> usize {
        self.net.n_neurons()
    }

    fn value(&self, coalition: &Coalition) -> std::result::Result<f64, GameError> {
        if coalition.n_players() != self.n_players() {
            return Err(GameError::evaluation(coalition, "coalition universe mismatch"));
        }
        let ablation = AblationSpec {
            keep: coalition.clone(),
            means: self.means.clone(),
        };
        let correct = self
            .net
            .correct_count(self.data, Some(&ablation), &self.partition);
        Ok(correct as f64 / self.data.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::exact_shapley;
    use crate::seed::indexed_rng;

    fn net_4_3_2() -> DenseNet {
        DenseNet::new(&[4, 3, 2], &mut indexed_rng(1, 0)).unwrap()
    }

    #[test]
    fn shapes_and_index_map() {
        let net = DenseNet::new(&[6, 5, 4, 3], &mut indexed_rng(2, 0)).unwrap();
        assert_eq!(net.n_neurons(), 9);
        assert_eq!(net.neuron_id(5).unwrap(), NeuronId { layer: 1, unit: 0 });
        assert_eq!(net.flat_index(NeuronId { layer: 1, unit: 3 }).unwrap(), 8);
        assert!(net.neuron_id(9).is_err());
        assert_eq!(net.params().len(), 6 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3);
        assert_eq!(net.layer_sizes(), vec![6, 5, 4, 3]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseNet::new(&[3, 2], &mut indexed_rng(0, 0)).is_err());
        assert!(DenseNet::new(&[3, 0, 2], &mut indexed_rng(0, 0)).is_err());
        let net = net_4_3_2();
        assert!(matches!(net.forward(&[1.0; 3], None), Err(Error::Shape(_))));
        let bad = AblationSpec::new(Coalition::full(2), vec![0.0; 2]);
        assert!(matches!(net.forward(&[1.0; 4], Some(&bad)), Err(Error::Shape(_))));
    }

    #[test]
    fn neuron_params_partition_hidden_rows() {
        let net = net_4_3_2();
        let p0 = net.neuron_params(0).unwrap();
        assert_eq!(p0.len(), 5);
        assert!(p0.iter().all(|p| matches!(
            p,
            ParamIndex::Weight { layer: 0, row: 0, .. } | ParamIndex::Bias { layer: 0, row: 0 }
        )));
        let mut all: Vec<ParamIndex> = (0..3).flat_map(|i| net.neuron_params(i).unwrap()).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
        let hidden: Vec<ParamIndex> = net
            .params()
            .indices()
            .filter(|p| match p {
                ParamIndex::Weight { layer, .. } | ParamIndex::Bias { layer, .. } => *layer == 0,
            })
            .collect();
        assert_eq!(hidden.len(), n);
        assert!(all.iter().all(|p| !matches!(
            p,
            ParamIndex::Weight { layer: 1, .. } | ParamIndex::Bias { layer: 1, .. }
        )));
    }

    #[test]
    fn keep_all_is_identity_and_keep_none_is_constant() {
        let net = DenseNet::new(&[5, 6, 4, 3], &mut indexed_rng(4, 0)).unwrap();
        let n = net.n_neurons();
        let means: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let all = AblationSpec::new(Coalition::full(n), means.clone());
        let none = AblationSpec::new(Coalition::empty(n), means);
        let mut rng = indexed_rng(4, 1);
        let mut reference: Option<Vec<f64>> = None;
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let plain = net.forward(&x, None).unwrap();
            let kept = net.forward(&x, Some(&all)).unwrap();
            assert_eq!(
                plain.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                kept.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            let constant = net.forward(&x, Some(&none)).unwrap();
            match &reference {
                Some(r) => assert_eq!(r, &constant),
                None => reference = Some(constant),
            }
        }
    }

    #[test]
    fn record_means_by_hand() {
        // unit 0 = relu(x0), unit 1 = relu(-x0) which is dead on positive data
        let params = Params {
            weights: vec![
                Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap(),
                Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap(),
            ],
            biases: vec![vec![0.0, 0.0], vec![0.0]],
        };
        let net = DenseNet::from_params(params).unwrap();
        assert_eq!(net.record_means(&[vec![1.0], vec![3.0]]).unwrap(), vec![2.0, 0.0]);
        assert_eq!(net.record_means(&[vec![1.5]]).unwrap(), vec![1.5, 0.0]);
        assert!(net.record_means(&[]).is_err());
    }

    #[test]
    fn dead_unit_ablation_changes_nothing() {
        let mut net = DenseNet::new(&[3, 4, 2], &mut indexed_rng(5, 0)).unwrap();
        // unit 2 can never fire
        for c in 0..3 {
            *net.params_mut().weights[0].get_mut(2, c) = 0.0;
        }
        net.params_mut().biases[0][2] = -1.0;
        let mut rng = indexed_rng(5, 1);
        let data: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let means = net.record_means(&data).unwrap();
        assert_eq!(means[2], 0.0);
        let mut keep = Coalition::full(4);
        keep.remove(2);
        let spec = AblationSpec::new(keep, means);
        for x in &data {
            assert_eq!(net.forward(x, None).unwrap(), net.forward(x, Some(&spec)).unwrap());
        }
    }

    #[test]
    fn zero_net_symmetric_bias_gradient() {
        let params = Params {
            weights: vec![Matrix::zeros(3, 2), Matrix::zeros(2, 3)],
            biases: vec![vec![0.0; 3], vec![0.0; 2]],
        };
        let net = DenseNet::from_params(params).unwrap();
        let (_, g) = net
            .grad(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 0], None)
            .unwrap();
        assert!((g.biases[1][0] + g.biases[1][1]).abs() < 1e-15);
        assert!(g.biases[1][0] < 0.0);
        let (_, g) = net
            .grad(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1], None)
            .unwrap();
        assert_eq!(g.biases[1], vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_example_has_tiny_gradient() {
        let params = Params {
            weights: vec![
                Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
                Matrix::from_vec(2, 1, vec![20.0, -20.0]).unwrap(),
            ],
            biases: vec![vec![0.0], vec![0.0, 0.0]],
        };
        let net = DenseNet::from_params(params).unwrap();
        let (loss, g) = net.grad(&[vec![1.0]], &[0], None).unwrap();
        assert!(loss < 1e-15);
        assert!(g.l2_norm() < 1e-3);
    }

    #[test]
    fn label_errors() {
        let net = net_4_3_2();
        assert!(matches!(net.grad(&[vec![0.0; 4]], &[2], None), Err(Error::Data(_))));
        assert!(matches!(net.grad(&[vec![0.0; 4]], &[0], Some(1..2)), Err(Error::Data(_))));
        assert!(net.grad(&[vec![0.0; 4]], &[1], Some(1..2)).is_ok());
    }

    #[test]
    fn partition_loss_ignores_other_logits() {
        let net = DenseNet::new(&[3, 4, 4], &mut indexed_rng(8, 0)).unwrap();
        let x = vec![vec![0.3, -0.2, 0.9]];
        let (_, g) = net.grad(&x, &[3], Some(2..4)).unwrap();
        assert_eq!(g.biases[1][0], 0.0);
        assert_eq!(g.biases[1][1], 0.0);
        assert!(g.biases[1][3] < 0.0);
    }

    #[test]
    fn oracle_full_coalition_is_plain_accuracy() {
        let net = DenseNet::new(&[2, 4, 2], &mut indexed_rng(9, 0)).unwrap();
        let mut rng = indexed_rng(9, 1);
        let data: Vec<Sample> = (0..40)
            .map(|i| Sample {
                x: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                label: i % 2,
            })
            .collect();
        let xs: Vec<Vec<f64>> = data.iter().map(|s| s.x.clone()).collect();
        let means = net.record_means(&xs).unwrap();
        let game = performance_oracle(&net, &data, means.clone(), None).unwrap();
        assert_eq!(
            game.value(&Coalition::full(4)).unwrap(),
            net.accuracy(&data, None, None).unwrap()
        );
        // every input maps to the same label once nothing is kept
        let empty = AblationSpec::new(Coalition::empty(4), means);
        let label = net.predict(&data[0].x, Some(&empty), None).unwrap();
        let share = data.iter().filter(|s| s.label == label).count() as f64 / 40.0;
        assert_eq!(game.value(&Coalition::empty(4)).unwrap(), share);
    }

    #[test]
    fn duplicated_units_get_equal_value() {
        // units 0 and 1 are copies; their outgoing weights split one unit's
        let w0 = vec![0.8, -0.5, 0.8, -0.5, -0.3, 0.9, 0.4, 0.4];
        let w1 = vec![0.5, 0.5, -1.0, 0.2, -0.5, -0.5, 1.0, -0.2];
        let net = DenseNet::from_params(Params {
            weights: vec![
                Matrix::from_vec(4, 2, w0).unwrap(),
                Matrix::from_vec(2, 4, w1).unwrap(),
            ],
            biases: vec![vec![0.1, 0.1, 0.0, -0.1], vec![0.0, 0.05]],
        })
        .unwrap();
        let mut rng = indexed_rng(10, 0);
        let data: Vec<Sample> = (0..60)
            .map(|_| {
                let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let label = usize::from(x[0] + 0.3 * x[1] > 0.0);
                Sample { x, label }
            })
            .collect();
        let xs: Vec<Vec<f64>> = data.iter().map(|s| s.x.clone()).collect();
        let means = net.record_means(&xs).unwrap();
        let game = performance_oracle(&net, &data, means, None).unwrap();
        let phi = exact_shapley(&game).unwrap().phi;
        assert!((phi[0] - phi[1]).abs() < 1e-9, "{phi:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = DenseNet::new(&[3, 5, 2, 4], &mut indexed_rng(11, 0)).unwrap();
        let json = net.to_json().unwrap();
        let back = DenseNet::from_json(&json).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_json().unwrap(), json);
        let mut ck = net.to_checkpoint();
        ck.neuron_index_map.swap(0, 1);
        assert!(DenseNet::from_checkpoint(&ck).is_err());
        let mut ck = net.to_checkpoint();
        ck.weights[1].pop();
        assert!(DenseNet::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }
}
