//! Data model: feature datasets, the linear classification head and the
//! dense/ReLU feature extractor used for inverse mapping.

use crate::error::{Error, Result};
use crate::tensor::{vecmat_unchecked, Matrix, Vector};

/// Per-sample feature vectors (one row each) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    features: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
}

impl FeatureDataset {
    /// An empty dataset may have any column count; a nonempty one needs at
    /// least one feature.
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::shape(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if features.rows() > 0 && features.cols() == 0 {
            return Err(Error::invalid("feature vectors must have at least one entry"));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::invalid(format!(
                "label {label} ≥ {n_classes} at row {row}"
            )));
        }
        Ok(FeatureDataset {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn subset(&self, idx: &[usize]) -> FeatureDataset {
        FeatureDataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    pub(crate) fn check_dim(&self, f: usize, what: &str) -> Result<()> {
        if !self.is_empty() && self.dim() != f {
            return Err(Error::shape(format!(
                "{what} has {} features, expected {f}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Final affine map from feature space to class scores: `z = x W + b`,
/// `W` stored features-by-classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    weights: Matrix,
    bias: Vector,
}

impl LinearHead {
    pub fn new(weights: Matrix, bias: Vector) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::shape(format!(
                "bias has {} entries for {} classes",
                bias.len(),
                weights.cols()
            )));
        }
        if weights.cols() < 2 {
            return Err(Error::invalid(format!(
                "a head needs at least 2 classes, got {}",
                weights.cols()
            )));
        }
        if weights.rows() < 1 {
            return Err(Error::invalid("a head needs at least one feature"));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("non-finite bias entry"));
        }
        Ok(LinearHead { weights, bias })
    }

    pub fn features(&self) -> usize {
        self.weights.rows()
    }

    pub fn classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Pre-softmax scores `x W + b`.
    pub fn scores(&self, x: &[f64]) -> Result<Vector> {
        self.check_query(x)?;
        Ok(self.scores_unchecked(x))
    }

    pub(crate) fn scores_unchecked(&self, x: &[f64]) -> Vector {
        let mut z = vecmat_unchecked(x, &self.weights);
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi += bi;
        }
        z
    }

    pub(crate) fn check_query(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.features() {
            return Err(Error::shape(format!(
                "query has {} features, head expects {}",
                x.len(),
                self.features()
            )));
        }
        Ok(())
    }

    /// Same head with weights and bias multiplied by `k`.
    pub fn scaled(&self, k: f64) -> LinearHead {
        LinearHead {
            weights: self.weights.scaled(k),
            bias: self.bias.iter().map(|b| b * k).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `y = x W + b` with `W` stored input-by-output.
    Dense { weights: Matrix, bias: Vector },
    Relu,
}

impl Layer {
    pub fn dense(weights: Matrix, bias: Vector) -> Layer {
        Layer::Dense { weights, bias }
    }
}

/// Dense/ReLU feature extractor with a box-shaped input domain.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<Layer>,
    input_lo: Vector,
    input_hi: Vector,
    input_dim: usize,
    output_dim: usize,
}

impl MlpNetwork {
    pub fn new(layers: Vec<Layer>, input_lo: Vector, input_hi: Vector) -> Result<Self> {
        let mut width: Option<usize> = None;
        let mut input_dim = None;
        for (idx, layer) in layers.iter().enumerate() {
            if let Layer::Dense { weights, bias } = layer {
                if bias.len() != weights.cols() {
                    return Err(Error::shape(format!(
                        "layer {idx} has {} bias entries for {} outputs",
                        bias.len(),
                        weights.cols()
                    )));
                }
                if let Some(w) = width {
                    if w != weights.rows() {
                        return Err(Error::shape(format!(
                            "layer {idx} expects input {}, got {w}",
                            weights.rows()
                        )));
                    }
                } else {
                    input_dim = Some(weights.rows());
                }
                width = Some(weights.cols());
            }
        }
        let (Some(input_dim), Some(output_dim)) = (input_dim, width) else {
            return Err(Error::invalid("network has no dense layer"));
        };
        if input_lo.len() != input_dim || input_hi.len() != input_dim {
            return Err(Error::shape(format!(
                "input bounds have {} and {} entries, network input is {input_dim}",
                input_lo.len(),
                input_hi.len()
            )));
        }
        for (i, (lo, hi)) in input_lo.iter().zip(&input_hi).enumerate() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(format!(
                    "input bound {i}: lo {lo} must be finite and ≤ hi {hi}"
                )));
            }
        }
        Ok(MlpNetwork {
            layers,
            input_lo,
            input_hi,
            input_dim,
            output_dim,
        })
    }

    /// Network over the default `[0, 1]` box.
    pub fn with_unit_box(layers: Vec<Layer>) -> Result<Self> {
        let dim = layers
            .iter()
            .find_map(|l| match l {
                Layer::Dense { weights, .. } => Some(weights.rows()),
                Layer::Relu => None,
            })
            .unwrap_or(0);
        MlpNetwork::new(layers, vec![0.0; dim], vec![1.0; dim])
    }

    pub fn with_bounds(self, input_lo: Vector, input_hi: Vector) -> Result<Self> {
        MlpNetwork::new(self.layers, input_lo, input_hi)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn input_lo(&self) -> &[f64] {
        &self.input_lo
    }

    pub fn input_hi(&self) -> &[f64] {
        &self.input_hi
    }

    /// True when the last layer is a ReLU, so every output is nonnegative.
    pub fn ends_with_relu(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::Relu))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.input_dim
            && x
                .iter()
                .zip(self.input_lo.iter().zip(&self.input_hi))
                .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.input_lo.iter().zip(&self.input_hi)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: usize, cols: usize) -> Layer {
        Layer::dense(Matrix::zeros(rows, cols), vec![0.0; cols])
    }

    #[test]
    fn dataset_validation() {
        let m = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let ds = FeatureDataset::new(m.clone(), vec![0, 1, 0], 2).unwrap();
        assert_eq!(ds.len(), 3);
        let err = FeatureDataset::new(m.clone(), vec![0, 5, 0], 2).unwrap_err();
        assert!(err.to_string().contains("label 5 ≥ 2 at row 1"), "{err}");
        assert!(FeatureDataset::new(m, vec![], 2).is_err());
    }

    #[test]
    fn head_validation() {
        assert!(LinearHead::new(Matrix::identity(2), vec![0.0, 0.0]).is_ok());
        assert!(LinearHead::new(Matrix::identity(2), vec![0.0]).is_err());
        assert!(LinearHead::new(Matrix::zeros(2, 1), vec![0.0]).is_err());
    }

    #[test]
    fn network_dimension_chaining() {
        let net = MlpNetwork::with_unit_box(vec![dense(2, 3), Layer::Relu, dense(3, 64)]).unwrap();
        assert_eq!(net.input_dim(), 2);
        assert_eq!(net.output_dim(), 64);
        assert_eq!(net.input_hi(), &[1.0, 1.0]);
        let err = MlpNetwork::with_unit_box(vec![dense(2, 3), dense(4, 5)]).unwrap_err();
        assert!(err.to_string().contains("layer 1 expects input 4, got 3"), "{err}");
        assert!(MlpNetwork::with_unit_box(vec![Layer::Relu]).is_err());
    }

    #[test]
    fn network_bounds_must_be_ordered() {
        let err = MlpNetwork::new(vec![dense(1, 1)], vec![1.0], vec![0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }
}
