use std::ops::Range;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::game::Coalition;
use crate::network::{DenseNet, Gradient, ParamIndex, Params};

mod bits01 {
    use super::*;

    pub fn serialize<S: Serializer>(bits: &[bool], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(bits.iter().map(|&b| u8::from(b)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<bool>, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        raw.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!("mask entry {other} is not 0/1"))),
            })
            .collect()
    }
}

/// Neurons selected for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMask {
    pub task_id: usize,
    #[serde(with = "bits01")]
    bits: Vec<bool>,
}

impl TaskMask {
    pub fn new(task_id: usize, bits: Vec<bool>) -> Self {
        TaskMask { task_id, bits }
    }

    pub fn with_task_id(mut self, task_id: usize) -> Self {
        self.task_id = task_id;
        self
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_coalition(&self) -> Coalition {
        Coalition::from_flags(&self.bits)
    }
}

/// Union of all task masks so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CumulativeMask {
    #[serde(with = "bits01")]
    bits: Vec<bool>,
}

impl CumulativeMask {
    pub fn empty(n: usize) -> Self {
        CumulativeMask { bits: vec![false; n] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        CumulativeMask { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn contains(&self, other: &CumulativeMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a || !b)
    }

    pub fn to_coalition(&self) -> Coalition {
        Coalition::from_flags(&self.bits)
    }
}

pub fn union_mask(prev: &CumulativeMask, s: &TaskMask) -> Result<CumulativeMask> {
    if prev.len() != s.len() {
        return Err(Error::Shape(format!(
            "cumulative mask of {} vs task mask of {}",
            prev.len(),
            s.len()
        )));
    }
    Ok(CumulativeMask {
        bits: prev.bits.iter().zip(&s.bits).map(|(&a, &b)| a || b).collect(),
    })
}

/// Parameter-level trainability: `true` where updates are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    weights: Vec<Vec<bool>>,
    biases: Vec<Vec<bool>>,
}

impl FreezeMask {
    pub fn all_trainable(params: &Params) -> Self {
        FreezeMask {
            weights: params.weights.iter().map(|w| vec![true; w.as_slice().len()]).collect(),
            biases: params.biases.iter().map(|b| vec![true; b.len()]).collect(),
        }
    }

    pub fn all_frozen(params: &Params) -> Self {
        let mut m = Self::all_trainable(params);
        m.weights.iter_mut().flatten().for_each(|b| *b = false);
        m.biases.iter_mut().flatten().for_each(|b| *b = false);
        m
    }

    fn slot(&mut self, idx: ParamIndex, cols: usize) -> &mut bool {
        match idx {
            ParamIndex::Weight { layer, row, col } => &mut self.weights[layer][row * cols + col],
            ParamIndex::Bias { layer, row } => &mut self.biases[layer][row],
        }
    }

    pub fn freeze(&mut self, idx: ParamIndex, params: &Params) {
        let layer = match idx {
            ParamIndex::Weight { layer, .. } | ParamIndex::Bias { layer, .. } => layer,
        };
        *self.slot(idx, params.weights[layer].cols()) = false;
    }

    pub fn is_trainable(&self, idx: ParamIndex, params: &Params) -> bool {
        match idx {
            ParamIndex::Weight { layer, row, col } => {
                self.weights[layer][row * params.weights[layer].cols() + col]
            }
            ParamIndex::Bias { layer, row } => self.biases[layer][row],
        }
    }

    pub fn frozen_count(&self) -> usize {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .filter(|&&b| !b)
            .count()
    }

    /// Frozen locations, in parameter order.
    pub fn frozen_indices<'a>(&'a self, params: &'a Params) -> impl Iterator<Item = ParamIndex> + 'a {
        params.indices().filter(|&i| !self.is_trainable(i, params))
    }

    fn congruent(&self, params: &Params) -> bool {
        self.weights.len() == params.weights.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(m, w)| m.len() == w.as_slice().len())
            && self.biases.len() == params.biases.len()
            && self.biases.iter().zip(&params.biases).all(|(m, b)| m.len() == b.len())
    }
}

/// Freezes the incoming parameters of every neuron in `b`, plus the
/// output rows of every finalized class partition.
pub fn build_freeze_mask(
    b: &CumulativeMask,
    net: &DenseNet,
    finalized_partitions: &[Range<usize>],
) -> Result<FreezeMask> {
    if b.len() != net.n_neurons() {
        return Err(Error::Shape(format!(
            "mask of {} for {} neurons",
            b.len(),
            net.n_neurons()
        )));
    }
    let params = net.params();
    let mut mask = FreezeMask::all_trainable(params);
    for (i, _) in b.bits().iter().enumerate().filter(|(_, &on)| on) {
        for idx in net.neuron_params(i)? {
            mask.freeze(idx, params);
        }
    }
    let out = net.output_layer();
    let cols = params.weights[out].cols();
    for range in finalized_partitions {
        if range.end > net.output_dim() {
            return Err(Error::Shape(format!(
                "partition {range:?} beyond {} outputs",
                net.output_dim()
            )));
        }
        for row in range.clone() {
            for col in 0..cols {
                mask.freeze(ParamIndex::Weight { layer: out, row, col }, params);
            }
            mask.freeze(ParamIndex::Bias { layer: out, row }, params);
        }
    }
    Ok(mask)
}

/// `theta -= lr * grad` on trainable entries; frozen entries are not
/// touched at all.
pub fn masked_update(params: &mut Params, grad: &Gradient, mask: &FreezeMask, lr: f64) -> Result<()> {
    if !params.same_shape(grad) || !mask.congruent(params) {
        return Err(Error::Shape("parameters, gradient and mask disagree".into()));
    }
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::Precondition(format!("learning rate {lr} must be positive")));
    }
    for ((w, g), m) in params.weights.iter_mut().zip(&grad.weights).zip(&mask.weights) {
        for ((p, gv), &on) in w.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m) {
            if on {
                *p -= lr * gv;
            }
        }
    }
    for ((b, g), m) in params.biases.iter_mut().zip(&grad.biases).zip(&mask.biases) {
        for ((p, gv), &on) in b.iter_mut().zip(g).zip(m) {
            if on {
                *p -= lr * gv;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::indexed_rng;

    fn net() -> DenseNet {
        DenseNet::new(&[4, 3, 2], &mut indexed_rng(0, 0)).unwrap()
    }

    #[test]
    fn freeze_mask_examples() {
        let net = net();
        let m = build_freeze_mask(&CumulativeMask::empty(3), &net, &[]).unwrap();
        assert_eq!(m.frozen_count(), 0);
        let m = build_freeze_mask(&CumulativeMask::from_bits(vec![true; 3]), &net, &[]).unwrap();
        assert_eq!(m.frozen_count(), 15);
        let m = build_freeze_mask(&CumulativeMask::from_bits(vec![true, false, false]), &net, &[])
            .unwrap();
        assert_eq!(m.frozen_count(), 5);
        let frozen: Vec<ParamIndex> = m.frozen_indices(net.params()).collect();
        assert!(frozen.iter().all(|p| matches!(
            p,
            ParamIndex::Weight { layer: 0, row: 0, .. } | ParamIndex::Bias { layer: 0, row: 0 }
        )));
        let m = build_freeze_mask(&CumulativeMask::empty(3), &net, std::slice::from_ref(&(1..2))).unwrap();
        assert_eq!(m.frozen_count(), 4);
        assert!(build_freeze_mask(&CumulativeMask::empty(2), &net, &[]).is_err());
        assert!(build_freeze_mask(&CumulativeMask::empty(3), &net, std::slice::from_ref(&(1..3))).is_err());
    }

    #[test]
    fn masked_update_examples() {
        let net = net();
        let mut g = net.params().zeros_like();
        g.weights.iter_mut().for_each(|w| w.as_mut_slice().fill(1.0));
        g.biases.iter_mut().for_each(|b| b.fill(-1.0));

        let frozen = FreezeMask::all_frozen(net.params());
        let open = FreezeMask::all_trainable(net.params());
        let mut p = net.params().clone();
        masked_update(&mut p, &g, &frozen, 0.5).unwrap();
        assert_eq!(&p, net.params());

        let mut p = net.params().clone();
        masked_update(&mut p, &g, &open, 0.5).unwrap();
        assert_eq!(p.weights[0].get(1, 2), net.params().weights[0].get(1, 2) - 0.5);
        assert_eq!(p.biases[1][0], net.params().biases[1][0] + 0.5);

        assert!(masked_update(&mut p, &g, &open, 0.0).is_err());
        let other = DenseNet::new(&[4, 2, 2], &mut indexed_rng(0, 1)).unwrap();
        assert!(matches!(
            masked_update(&mut p, other.params(), &open, 0.1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn union_examples() {
        let b = CumulativeMask::from_bits(vec![true, false, false]);
        let s = TaskMask::new(1, vec![false, true, false]);
        assert_eq!(union_mask(&b, &s).unwrap().bits(), &[true, true, false]);
        let sub = TaskMask::new(1, vec![true, false, false]);
        assert_eq!(union_mask(&b, &sub).unwrap(), b);
        assert!(union_mask(&b, &TaskMask::new(1, vec![true])).is_err());
    }

    #[test]
    fn mask_json_is_01() {
        let m = TaskMask::new(2, vec![true, false, true]);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"task_id":2,"bits":[1,0,1]}"#);
        assert_eq!(serde_json::from_str::<TaskMask>(&json).unwrap(), m);
        assert!(serde_json::from_str::<TaskMask>(r#"{"task_id":2,"bits":[2]}"#).is_err());
    }
}
