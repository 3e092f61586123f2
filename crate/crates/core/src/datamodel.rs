//! Shared domain types: samples, batches, domains and the hyper-parameter
//! record.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Height × width × channels of one image, stored row-major HWC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// (H, W, C, n_classes) signature every sample of a domain shares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShapeSignature {
    pub image: ImageShape,
    pub n_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Vec<f32>,
    pub label: usize,
}

impl Sample {
    pub fn new(image: Vec<f32>, label: usize, sig: &ShapeSignature) -> Result<Self> {
        if image.len() != sig.image.len() {
            return Err(Error::Shape(format!(
                "sample has {} values, expected {}",
                image.len(),
                sig.image.len()
            )));
        }
        if label >= sig.n_classes {
            return Err(Error::LabelOutOfRange { label, n_classes: sig.n_classes });
        }
        if let Some(v) = image.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { image, label })
    }
}

/// Minibatch in model-ready form: one flattened image per row.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Array2<f64>,
    pub labels: Vec<usize>,
    pub onehot: Array2<f64>,
}

impl Batch {
    pub fn new(images: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if images.nrows() == 0 {
            return Err(Error::Empty("batch"));
        }
        if images.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        let onehot = onehot(&labels, n_classes)?;
        Ok(Self { images, labels, onehot })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Expand class indices to one-hot rows.
pub fn onehot(labels: &[usize], n_classes: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), n_classes));
    for (i, &label) in labels.iter().enumerate() {
        if label >= n_classes {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        out[[i, label]] = 1.0;
    }
    Ok(out)
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DomainKind {
    Source,
    Augmented { round: usize },
    Target,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainKind::Source => f.write_str("source"),
            DomainKind::Augmented { round } => write!(f, "augmented:{round}"),
            DomainKind::Target => f.write_str("target"),
        }
    }
}

impl FromStr for DomainKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(DomainKind::Source),
            "target" => Ok(DomainKind::Target),
            _ => {
                let round = s
                    .strip_prefix("augmented:")
                    .and_then(|r| r.parse::<usize>().ok())
                    .filter(|&r| r >= 1)
                    .ok_or_else(|| Error::Unknown { what: "domain kind", name: s.into() })?;
                Ok(DomainKind::Augmented { round })
            }
        }
    }
}

/// Where an augmented sample came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOrigin {
    pub domain: String,
    pub index: usize,
}

/// Sidecar record attached to every augmented domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentProvenance {
    pub round: usize,
    pub ascent_steps: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub relax_variant: RelaxVariant,
    pub origins: Vec<SampleOrigin>,
}

/// A labelled image collection: the source, an augmentation round, or a
/// target shift. Images are stored contiguously as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub id: String,
    pub kind: DomainKind,
    pub signature: ShapeSignature,
    images: Vec<f32>,
    labels: Vec<usize>,
    pub provenance: Option<AugmentProvenance>,
}

impl Domain {
    pub fn new(
        id: impl Into<String>,
        kind: DomainKind,
        signature: ShapeSignature,
        images: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let dim = signature.image.len();
        if dim == 0 || images.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} pixel values for {} labels of {}",
                images.len(),
                labels.len(),
                signature.image
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= signature.n_classes) {
            return Err(Error::LabelOutOfRange { label, n_classes: signature.n_classes });
        }
        if let Some(v) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { id: id.into(), kind, signature, images, labels, provenance: None })
    }

    pub fn from_samples(
        id: impl Into<String>,
        kind: DomainKind,
        signature: ShapeSignature,
        samples: &[Sample],
    ) -> Result<Self> {
        let mut images = Vec::with_capacity(samples.len() * signature.image.len());
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            images.extend_from_slice(&s.image);
            labels.push(s.label);
        }
        Self::new(id, kind, signature, images, labels)
    }

    pub fn with_provenance(mut self, provenance: AugmentProvenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.signature.image.len()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.images[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample { image: self.image(i).to_vec(), label: self.labels[i] }
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Gather the given sample indices into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let d = self.dim();
        let mut images = Array2::zeros((indices.len(), d));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::Shape(format!("sample {i} of {} in {}", self.len(), self.id)));
            }
            for (dst, &src) in images.row_mut(row).iter_mut().zip(self.image(i)) {
                *dst = src as f64;
            }
            labels.push(self.labels[i]);
        }
        Batch::new(images, labels, self.signature.n_classes)
    }

    /// Contiguous slice `[start, end)` as a batch.
    pub fn range_batch(&self, start: usize, end: usize) -> Result<Batch> {
        let idx: Vec<usize> = (start..end.min(self.len())).collect();
        self.batch(&idx)
    }

    pub fn subset(&self, id: impl Into<String>, indices: &[usize]) -> Result<Domain> {
        let mut images = Vec::with_capacity(indices.len() * self.dim());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Domain::new(id, self.kind, self.signature, images, labels)
    }

    /// Replace all images, keeping labels and signature.
    pub fn map_images(&self, id: impl Into<String>, kind: DomainKind, images: Vec<f32>) -> Result<Domain> {
        Domain::new(id, kind, self.signature, images, self.labels.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaGradMode {
    FirstOrder,
    FullSecondOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxVariant {
    /// `‖x⁺ − V(x⁺)‖²`
    ReconOfXplus,
    /// `‖V(x) − V(x⁺)‖²`
    ReconDelta,
}

macro_rules! str_enum {
    ($ty:ident, $what:literal, $($variant:ident => $name:literal),+ $(,)?) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }
        impl ::std::fmt::Display for $ty {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl ::std::str::FromStr for $ty {
            type Err = $crate::error::Error;
            fn from_str(s: &str) -> $crate::error::Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err($crate::error::Error::Unknown { what: $what, name: s.to_string() }),
                }
            }
        }
    };
}
pub(crate) use str_enum;

str_enum!(MetaGradMode, "meta gradient mode", FirstOrder => "first_order", FullSecondOrder => "full_second_order");
str_enum!(RelaxVariant, "relaxation variant", ReconOfXplus => "recon_of_xplus", ReconDelta => "recon_delta");

/// Every scalar knob of the method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Weight of the semantic consistency term.
    pub alpha: f64,
    /// Weight of the relaxation term.
    pub beta: f64,
    /// Ascent step size.
    pub gamma: f64,
    /// Ascent iterations per augmented batch.
    pub t_adv: usize,
    /// Number of augmented domains.
    pub k_domains: usize,
    /// Task learning rate, shared by the inner and outer steps.
    pub eta: f64,
    /// Weight of the WAE latent divergence.
    pub lambda: f64,
    /// Gradient steps taken by meta-train.
    pub inner_steps: usize,
    pub meta_grad_mode: MetaGradMode,
    pub relax_variant: RelaxVariant,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2000.0,
            gamma: 1.0,
            t_adv: 25,
            k_domains: 3,
            eta: 1e-4,
            lambda: 1.0,
            inner_steps: 1,
            meta_grad_mode: MetaGradMode::FirstOrder,
            relax_variant: RelaxVariant::ReconOfXplus,
            seed: 0,
        }
    }
}

impl HyperParams {
    /// Check every field against its domain; returns the record unchanged.
    ///
    /// Integer fields are unsigned, so `t_adv < 0` and `k_domains < 0` are
    /// rejected when the configuration text is parsed.
    pub fn validate(self, sig: &ShapeSignature) -> Result<Self> {
        let nonneg = |field: &str, v: f64| -> Result<()> {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(field, format!("must be a finite value >= 0, got {v}")));
            }
            Ok(())
        };
        nonneg("alpha", self.alpha)?;
        nonneg("beta", self.beta)?;
        nonneg("lambda", self.lambda)?;
        nonneg("gamma", self.gamma)?;
        nonneg("eta", self.eta)?;
        if self.eta == 0.0 {
            return Err(Error::config("eta", "learning rate must be > 0"));
        }
        // gamma = 0 is only meaningful when no ascent runs at all.
        if self.gamma == 0.0 && self.t_adv > 0 {
            return Err(Error::config("gamma", "ascent step size must be > 0 when t_adv > 0"));
        }
        if self.inner_steps == 0 {
            return Err(Error::config("inner_steps", "must be >= 1"));
        }
        if sig.image.is_empty() || sig.n_classes < 2 {
            return Err(Error::Shape(format!(
                "degenerate data signature {} with {} classes",
                sig.image, sig.n_classes
            )));
        }
        Ok(self)
    }
}
