//! The task model: feature extractor F: X → Z followed by classifier C: Z → Y.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{conv_out, pool_out, Layer, Sequential, Trace};
use super::loss::{cross_entropy, cross_entropy_logit_grad, softmax};
use crate::datamodel::{str_enum, Batch, ShapeSignature};
use crate::error::{Error, Result};
use crate::scalar::{lift, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchTag {
    DigitsConvnet,
    ToyMlp,
}

str_enum!(ArchTag, "architecture", DigitsConvnet => "digits_convnet", ToyMlp => "toy_mlp");

/// Architecture registry entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ArchSpec {
    /// conv-pool-conv-pool-fc-fc-softmax with ReLU after every conv/fc.
    DigitsConvnet { conv1: usize, conv2: usize, fc: usize, kernel: usize },
    /// One linear feature layer; the classifier is tanh followed by a linear
    /// layer. Small enough for exhaustive finite-difference checks.
    ToyMlp { hidden: usize },
}

impl ArchSpec {
    /// The published digits network: 5×5 convolutions with 64 and 128
    /// channels, two 1024-wide FC layers, 10-way softmax.
    pub const fn digits() -> Self {
        ArchSpec::DigitsConvnet { conv1: 64, conv2: 128, fc: 1024, kernel: 5 }
    }

    pub fn tag(&self) -> ArchTag {
        match self {
            ArchSpec::DigitsConvnet { .. } => ArchTag::DigitsConvnet,
            ArchSpec::ToyMlp { .. } => ArchTag::ToyMlp,
        }
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag().as_str())
    }
}

impl FromStr for ArchSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.parse::<ArchTag>()? {
            ArchTag::DigitsConvnet => ArchSpec::digits(),
            ArchTag::ToyMlp => ArchSpec::ToyMlp { hidden: 8 },
        })
    }
}

/// Task parameters θ: feature-extractor parameters followed by classifier
/// parameters in one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskParams {
    pub arch: ArchSpec,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskModel {
    pub arch: ArchSpec,
    pub signature: ShapeSignature,
    features: Sequential,
    classifier: Sequential,
}

pub struct TaskTrace<T> {
    feat: Trace<T>,
    cls: Trace<T>,
}

impl<T> TaskTrace<T> {
    pub fn embedding(&self) -> &Array2<T> {
        &self.feat.output
    }

    pub fn logits(&self) -> &Array2<T> {
        &self.cls.output
    }
}

impl TaskModel {
    pub fn new(arch: ArchSpec, signature: ShapeSignature) -> Result<Self> {
        let input = signature.image;
        let classes = signature.n_classes;
        let (features, classifier) = match arch {
            ArchSpec::DigitsConvnet { conv1, conv2, fc, kernel } => {
                let c1 = conv_out(input, kernel, conv1);
                let p1 = pool_out(c1);
                if p1.height < kernel || p1.width < kernel {
                    return Err(Error::Shape(format!("{input} too small for two {kernel}x{kernel} conv stages")));
                }
                let c2 = conv_out(p1, kernel, conv2);
                let p2 = pool_out(c2);
                let features = Sequential::new(
                    input.len(),
                    vec![
                        Layer::Conv2d { input, filters: conv1, kernel },
                        Layer::Relu,
                        Layer::MaxPool2 { input: c1 },
                        Layer::Conv2d { input: p1, filters: conv2, kernel },
                        Layer::Relu,
                        Layer::MaxPool2 { input: c2 },
                        Layer::Dense { inputs: p2.len(), outputs: fc },
                        Layer::Relu,
                        Layer::Dense { inputs: fc, outputs: fc },
                        Layer::Relu,
                    ],
                )?;
                let classifier = Sequential::new(fc, vec![Layer::Dense { inputs: fc, outputs: classes }])?;
                (features, classifier)
            }
            ArchSpec::ToyMlp { hidden } => {
                let features =
                    Sequential::new(input.len(), vec![Layer::Dense { inputs: input.len(), outputs: hidden }])?;
                let classifier =
                    Sequential::new(hidden, vec![Layer::Tanh, Layer::Dense { inputs: hidden, outputs: classes }])?;
                (features, classifier)
            }
        };
        Ok(Self { arch, signature, features, classifier })
    }

    pub fn param_count(&self) -> usize {
        self.features.param_count() + self.classifier.param_count()
    }

    pub fn embedding_dim(&self) -> usize {
        self.features.output_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.signature.n_classes
    }

    pub fn features(&self) -> &Sequential {
        &self.features
    }

    pub fn classifier(&self) -> &Sequential {
        &self.classifier
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> TaskParams {
        let mut values = self.features.init_params(rng);
        values.extend(self.classifier.init_params(rng));
        TaskParams { arch: self.arch.clone(), values }
    }

    /// `(name, shape, offset)` of every parameter tensor.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let split = self.features.param_count();
        let mut out = self.features.param_layout("features");
        out.extend(
            self.classifier
                .param_layout("classifier")
                .into_iter()
                .map(|(n, s, o)| (n, s, o + split)),
        );
        out
    }

    fn split<'a, T>(&self, params: &'a [T]) -> Result<(&'a [T], &'a [T])> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} task parameters, {} expects {}",
                params.len(),
                self.arch,
                self.param_count()
            )));
        }
        Ok(params.split_at(self.features.param_count()))
    }

    /// z = F(x)
    pub fn embed<T: Scalar>(&self, params: &[T], x: Array2<T>) -> Result<Array2<T>> {
        let (pf, _) = self.split(params)?;
        self.features.apply(pf, x)
    }

    pub fn logits<T: Scalar>(&self, params: &[T], x: Array2<T>) -> Result<Array2<T>> {
        let (pf, pc) = self.split(params)?;
        let z = self.features.apply(pf, x)?;
        self.classifier.apply(pc, z)
    }

    /// Class logits from an embedding batch.
    pub fn classify<T: Scalar>(&self, params: &[T], z: Array2<T>) -> Result<Array2<T>> {
        let (_, pc) = self.split(params)?;
        self.classifier.apply(pc, z)
    }

    /// Softmax distribution ŷ over classes.
    pub fn predict(&self, params: &[f64], x: Array2<f64>) -> Result<Array2<f64>> {
        Ok(softmax(&self.logits(params, x)?))
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: Array2<T>) -> Result<TaskTrace<T>> {
        let (pf, pc) = self.split(params)?;
        let feat = self.features.forward(pf, x)?;
        let cls = self.classifier.forward(pc, feat.output.clone())?;
        Ok(TaskTrace { feat, cls })
    }

    /// Back-propagate a logit gradient plus an optional extra gradient on
    /// the embedding. Returns (parameter gradient, input gradient).
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        trace: &TaskTrace<T>,
        grad_logits: Array2<T>,
        grad_embedding: Option<&Array2<T>>,
        need_params: bool,
        need_input: bool,
    ) -> (Vec<T>, Option<Array2<T>>) {
        let (pf, pc) = params.split_at(self.features.param_count());
        let (gc, gz) = self.classifier.backward(pc, &trace.cls, grad_logits, need_params, true);
        let mut gz = gz.expect("classifier input gradient");
        if let Some(extra) = grad_embedding {
            gz += extra;
        }
        let (mut gf, gx) = self.features.backward(pf, &trace.feat, gz, need_params, need_input);
        gf.extend(gc);
        (gf, gx)
    }

    /// Mean cross-entropy of a batch.
    pub fn loss(&self, params: &[f64], batch: &Batch) -> Result<f64> {
        let p = self.predict(params, batch.images.clone())?;
        Ok(cross_entropy(&batch.onehot, &p))
    }

    /// Mean cross-entropy and its parameter gradient.
    pub fn loss_and_grad(&self, params: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let trace = self.forward(params, batch.images.clone())?;
        let probs = softmax(trace.logits());
        let loss = cross_entropy(&batch.onehot, &probs);
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "task loss", location: "loss_and_grad".into() });
        }
        let g = cross_entropy_logit_grad(&probs, &batch.onehot, 1.0 / batch.len() as f64);
        let (grad, _) = self.backward(params, &trace, g, None, true, false);
        if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "task gradient", location: format!("parameter {i}") });
        }
        Ok((loss, grad))
    }

    /// Gradient of the mean cross-entropy at generic-scalar parameters.
    pub fn grad_generic<T: Scalar>(&self, params: &[T], batch: &Batch) -> Result<Vec<T>> {
        let x = batch.images.mapv(T::from_f64);
        let trace = self.forward(params, x)?;
        let probs = softmax(trace.logits());
        let g = cross_entropy_logit_grad(&probs, &batch.onehot, 1.0 / batch.len() as f64);
        Ok(self.backward(params, &trace, g, None, true, false).0)
    }

    /// Hessian-vector product `∇²L(θ)·v` of the mean batch cross-entropy,
    /// exact up to rounding (forward-mode derivative of the gradient).
    pub fn hvp(&self, params: &[f64], batch: &Batch, v: &[f64]) -> Result<Vec<f64>> {
        let dual = lift(params, v);
        Ok(self.grad_generic(&dual, batch)?.into_iter().map(|d| d.eps).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{onehot, ImageShape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(inputs: usize, hidden: usize, classes: usize) -> TaskModel {
        let sig = ShapeSignature { image: ImageShape::new(1, inputs, 1), n_classes: classes };
        TaskModel::new(ArchSpec::ToyMlp { hidden }, sig).unwrap()
    }

    #[test]
    fn paper_digits_network_has_published_size() {
        let sig = ShapeSignature { image: ImageShape::new(32, 32, 3), n_classes: 10 };
        let m = TaskModel::new(ArchSpec::digits(), sig).unwrap();
        // conv 3·25·64+64, conv 64·25·128+128, fc 3200·1024+1024, fc 1024²+1024, softmax 1024·10+10
        assert_eq!(m.param_count(), 4_547_466);
        assert_eq!(m.embedding_dim(), 1024);
        let layout = m.param_layout();
        assert_eq!(layout.len(), 10);
        assert_eq!(layout[0].1, vec![5, 5, 3, 64]);
        assert_eq!(layout.last().unwrap().1, vec![10]);
    }

    #[test]
    fn zero_weight_features_return_the_bias() {
        let m = toy(4, 3, 2);
        let mut p = vec![0.0; m.param_count()];
        p[12..15].copy_from_slice(&[0.5, -1.0, 2.0]);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i * 4 + j) as f64);
        let z = m.embed(&p, x).unwrap();
        for row in z.rows() {
            assert_eq!(row.to_vec(), vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn identity_feature_layer_is_identity() {
        let m = toy(3, 3, 2);
        let mut p = vec![0.0; m.param_count()];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let x = Array2::from_shape_fn((2, 3), |(i, j)| 0.1 * (i + j) as f64);
        assert_eq!(m.embed(&p, x.clone()).unwrap(), x);
    }

    #[test]
    fn embedding_matches_matrix_oracle() {
        let m = toy(5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = m.init_params(&mut rng).values;
        let x = Array2::from_shape_fn((3, 5), |_| rng.gen_range(0.0..1.0));
        let z = m.embed(&p, x.clone()).unwrap();
        for n in 0..3 {
            for j in 0..4 {
                let mut acc = p[20 + j];
                for i in 0..5 {
                    acc += x[[n, i]] * p[i * 4 + j];
                }
                assert!((acc - z[[n, j]]).abs() < 1e-6);
            }
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> Batch {
        let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(0.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        Batch::new(x, labels, classes).unwrap()
    }

    #[test]
    fn task_gradient_matches_finite_differences() {
        let m = toy(4, 5, 3);
        assert!(m.param_count() <= 50);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = m.init_params(&mut rng).values;
        let b = random_batch(&mut rng, 6, 4, 3);
        let (_, g) = m.loss_and_grad(&p, &b).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let (mut a, mut c) = (p.clone(), p.clone());
            a[i] += h;
            c[i] -= h;
            let fd = (m.loss(&a, &b).unwrap() - m.loss(&c, &b).unwrap()) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(rel <= 1e-4 || (fd - g[i]).abs() < 1e-9, "param {i}: fd {fd} analytic {}", g[i]);
        }
    }

    #[test]
    fn hvp_matches_gradient_differences() {
        let m = toy(3, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = m.init_params(&mut rng).values;
        let b = random_batch(&mut rng, 5, 3, 3);
        let v: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hv = m.hvp(&p, &b, &v).unwrap();
        let h = 1e-5;
        let shifted = |s: f64| {
            let q: Vec<f64> = p.iter().zip(&v).map(|(a, b)| a + s * b).collect();
            m.loss_and_grad(&q, &b).unwrap().1
        };
        let (gp, gm) = (shifted(h), shifted(-h));
        for i in 0..p.len() {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            assert!((fd - hv[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", hv[i]);
        }
    }

    #[test]
    fn parameter_count_mismatch_is_a_shape_error() {
        let m = toy(3, 2, 2);
        let x = Array2::zeros((1, 3));
        assert!(matches!(m.embed(&[0.0; 3], x), Err(Error::Shape(_))));
        let _ = onehot(&[0], 2);
    }
}
