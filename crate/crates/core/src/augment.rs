//! Adversarial domain augmentation: the L_ADA objective and the iterative
//! ascent that turns source minibatches into fictitious domains.

use ndarray::Array2;
use rand::Rng;

use crate::datamodel::{onehot, AugmentProvenance, Domain, DomainKind, HyperParams, RelaxVariant, SampleOrigin};
use crate::error::{Error, Result};
use crate::nets::loss::{cross_entropy_logit_grad, cross_entropy_rows, softmax};
use crate::nets::{TaskModel, Wae, WaeParams};

/// Value returned by [`loss_const`] when a label changed. Largest finite
/// `f64`, so ordering still works and no NaN can appear downstream.
pub const INFINITY_SENTINEL: f64 = f64::MAX;

/// Semantic consistency: mean over rows of `½‖z − z⁺‖²`, or the sentinel
/// if any label differs.
pub fn loss_const(z: &Array2<f64>, z_plus: &Array2<f64>, y: &[usize], y_plus: &[usize]) -> Result<f64> {
    if z.dim() != z_plus.dim() {
        return Err(Error::Shape(format!("embeddings {:?} vs {:?}", z.dim(), z_plus.dim())));
    }
    if y != y_plus {
        return Ok(INFINITY_SENTINEL);
    }
    let n = z.nrows().max(1) as f64;
    Ok(0.5 * z.iter().zip(z_plus.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// WAE relaxation term, mean over all elements.
pub fn loss_relax(
    wae: &Wae,
    psi: &WaeParams,
    x_plus: &Array2<f64>,
    variant: RelaxVariant,
    x: &Array2<f64>,
) -> Result<f64> {
    if x.dim() != x_plus.dim() {
        return Err(Error::Shape(format!("x {:?} vs x+ {:?}", x.dim(), x_plus.dim())));
    }
    let v_plus = wae.reconstruct(psi, x_plus.clone())?;
    let reference = match variant {
        RelaxVariant::ReconOfXplus => x_plus.clone(),
        RelaxVariant::ReconDelta => wae.reconstruct(psi, x.clone())?,
    };
    Ok(v_plus.iter().zip(reference.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

/// The three terms of L_ADA and their weighted sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaTerms {
    pub task: f64,
    pub constraint: f64,
    pub relax: f64,
    pub total: f64,
}

/// `L_task(θ; x⁺) − α·L_const(F(x), F(x⁺)) + β·L_relax(ψ; x⁺)` over a batch.
#[allow(clippy::too_many_arguments)]
pub fn loss_ada(
    task: &TaskModel,
    theta: &[f64],
    wae: &Wae,
    psi: &WaeParams,
    x_plus: &Array2<f64>,
    x: &Array2<f64>,
    labels: &[usize],
    h: &HyperParams,
) -> Result<AdaTerms> {
    let y = onehot(labels, task.n_classes())?;
    let probs = task.predict(theta, x_plus.clone())?;
    let l_task = cross_entropy_rows(&y, &probs).iter().sum::<f64>() / labels.len() as f64;
    let z = task.embed(theta, x.clone())?;
    let z_plus = task.embed(theta, x_plus.clone())?;
    let l_const = loss_const(&z, &z_plus, labels, labels)?;
    let l_relax = if h.beta == 0.0 { 0.0 } else { loss_relax(wae, psi, x_plus, h.relax_variant, x)? };
    Ok(AdaTerms {
        task: l_task,
        constraint: l_const,
        relax: l_relax,
        total: l_task - h.alpha * l_const + h.beta * l_relax,
    })
}

/// Minibatch under ascent. `x` and `z = F(x)` stay fixed; `x_plus` moves.
#[derive(Clone, Debug)]
pub struct AdversarialBatch {
    pub x: Array2<f64>,
    pub z: Array2<f64>,
    pub x_plus: Array2<f64>,
    pub z_plus: Array2<f64>,
    pub labels: Vec<usize>,
    pub origins: Vec<SampleOrigin>,
    pub steps: usize,
    pub gamma: f64,
}

impl AdversarialBatch {
    /// Start an ascent at `x⁺₀ = x`.
    pub fn start(task: &TaskModel, theta: &[f64], x: Array2<f64>, labels: Vec<usize>, origins: Vec<SampleOrigin>) -> Result<Self> {
        if x.nrows() != labels.len() || labels.len() != origins.len() {
            return Err(Error::Shape("images, labels and origins differ in length".into()));
        }
        let z = task.embed(theta, x.clone())?;
        Ok(Self { x_plus: x.clone(), z_plus: z.clone(), x, z, labels, origins, steps: 0, gamma: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// L_ADA terms at the current `x⁺` and the ascent direction: row i is the
/// gradient of sample i's own L_ADA term, so step sizes do not depend on the
/// batch size.
pub fn ascent_gradient(
    task: &TaskModel,
    theta: &[f64],
    wae: &Wae,
    psi: &WaeParams,
    batch: &AdversarialBatch,
    h: &HyperParams,
) -> Result<(AdaTerms, Array2<f64>)> {
    let n = batch.len() as f64;
    let y = onehot(&batch.labels, task.n_classes())?;
    let trace = task.forward(theta, batch.x_plus.clone())?;
    let probs = softmax(trace.logits());
    let l_task = cross_entropy_rows(&y, &probs).iter().sum::<f64>() / n;
    let g_logits = cross_entropy_logit_grad(&probs, &y, 1.0);
    let z_plus = trace.embedding();
    let l_const = loss_const(&batch.z, z_plus, &batch.labels, &batch.labels)?;
    // ∂(−α·½‖z − z⁺‖²)/∂z⁺
    let g_z = (z_plus - &batch.z) * (-h.alpha);
    let (_, gx) = task.backward(theta, &trace, g_logits, Some(&g_z), false, true);
    let mut grad = gx.expect("input gradient");

    let mut l_relax = 0.0;
    if h.beta != 0.0 {
        let d = batch.x.ncols() as f64;
        let tr = wae.trace(psi, batch.x_plus.clone())?;
        let v_plus = tr.reconstruction();
        match h.relax_variant {
            RelaxVariant::ReconOfXplus => {
                let r = &batch.x_plus - v_plus;
                l_relax = r.iter().map(|v| v * v).sum::<f64>() / (n * d);
                let g = &r * (2.0 / d);
                let through_v = wae.input_vjp(psi, &tr, g.clone());
                grad.scaled_add(h.beta, &(g - through_v));
            }
            RelaxVariant::ReconDelta => {
                let v = wae.reconstruct(psi, batch.x.clone())?;
                let r = v_plus - &v;
                l_relax = r.iter().map(|v| v * v).sum::<f64>() / (n * d);
                let through_v = wae.input_vjp(psi, &tr, &r * (2.0 / d));
                grad.scaled_add(h.beta, &through_v);
            }
        }
    }
    for (i, row) in grad.rows().into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "ascent gradient", location: format!("sample {i}") });
        }
    }
    let terms = AdaTerms {
        task: l_task,
        constraint: l_const,
        relax: l_relax,
        total: l_task - h.alpha * l_const + h.beta * l_relax,
    };
    Ok((terms, grad))
}

/// One step `x⁺ ← clamp(x⁺ + γ∇L_ADA, 0, 1)`, then `z⁺` is recomputed.
pub fn ascend_step(
    task: &TaskModel,
    theta: &[f64],
    wae: &Wae,
    psi: &WaeParams,
    mut batch: AdversarialBatch,
    h: &HyperParams,
) -> Result<AdversarialBatch> {
    let (_, grad) = ascent_gradient(task, theta, wae, psi, &batch, h)?;
    batch.x_plus.scaled_add(h.gamma, &grad);
    batch.x_plus.mapv_inplace(|v| v.clamp(0.0, 1.0));
    batch.z_plus = task.embed(theta, batch.x_plus.clone())?;
    batch.steps += 1;
    batch.gamma = h.gamma;
    Ok(batch)
}

/// Run `h.t_adv` ascent steps from `x⁺₀ = x`.
pub fn ascend(
    task: &TaskModel,
    theta: &[f64],
    wae: &Wae,
    psi: &WaeParams,
    mut batch: AdversarialBatch,
    h: &HyperParams,
) -> Result<AdversarialBatch> {
    for _ in 0..h.t_adv {
        batch = ascend_step(task, theta, wae, psi, batch, h)?;
    }
    Ok(batch)
}

/// Build S⁺_k: draw `size` distinct samples uniformly from the pool
/// (source plus earlier augmented domains), perturb them in minibatches of
/// `batch_size`, and collect the results with inherited labels.
#[allow(clippy::too_many_arguments)]
pub fn generate_domain(
    task: &TaskModel,
    theta: &[f64],
    wae: &Wae,
    psi: &WaeParams,
    pool: &[&Domain],
    h: &HyperParams,
    round: usize,
    size: usize,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Domain> {
    let total: usize = pool.iter().map(|d| d.len()).sum();
    if total == 0 {
        return Err(Error::Empty("augmentation pool"));
    }
    if round == 0 {
        return Err(Error::config("round", "augmentation rounds start at 1"));
    }
    let signature = pool[0].signature;
    if let Some(d) = pool.iter().find(|d| d.signature != signature) {
        return Err(Error::Shape(format!("pool domain {} has signature {}", d.id, d.signature.image)));
    }
    let picks = rand::seq::index::sample(rng, total, size.min(total)).into_vec();
    let locate = |mut i: usize| {
        for (di, d) in pool.iter().enumerate() {
            if i < d.len() {
                return (di, i);
            }
            i -= d.len();
        }
        unreachable!("index within pool size")
    };
    let mut images = Vec::with_capacity(picks.len() * signature.image.len());
    let mut labels = Vec::with_capacity(picks.len());
    let mut origins = Vec::with_capacity(picks.len());
    for chunk in picks.chunks(batch_size.max(1)) {
        let mut x = Array2::zeros((chunk.len(), signature.image.len()));
        let mut ys = Vec::with_capacity(chunk.len());
        let mut os = Vec::with_capacity(chunk.len());
        for (row, &p) in chunk.iter().enumerate() {
            let (di, i) = locate(p);
            let d = pool[di];
            for (dst, &src) in x.row_mut(row).iter_mut().zip(d.image(i)) {
                *dst = src as f64;
            }
            ys.push(d.label(i));
            os.push(SampleOrigin { domain: d.id.clone(), index: i });
        }
        let start = AdversarialBatch::start(task, theta, x, ys, os)?;
        let done = ascend(task, theta, wae, psi, start, h)?;
        images.extend(done.x_plus.iter().map(|&v| v as f32));
        labels.extend(done.labels);
        origins.extend(done.origins);
    }
    let provenance = AugmentProvenance {
        round,
        ascent_steps: h.t_adv,
        gamma: h.gamma,
        alpha: h.alpha,
        beta: h.beta,
        relax_variant: h.relax_variant,
        origins,
    };
    Ok(Domain::new(format!("augmented-{round}"), DomainKind::Augmented { round }, signature, images, labels)?
        .with_provenance(provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{ImageShape, ShapeSignature};
    use crate::nets::layers::{Layer, Sequential};
    use crate::nets::{ArchSpec, Bandwidth, Divergence, WaeArch};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const D: usize = 5;

    fn sig() -> ShapeSignature {
        ShapeSignature { image: ImageShape::new(1, D, 1), n_classes: 3 }
    }

    fn toy(seed: u64) -> (TaskModel, Vec<f64>) {
        let m = TaskModel::new(ArchSpec::ToyMlp { hidden: 4 }, sig()).unwrap();
        let p = m.init_params(&mut ChaCha8Rng::seed_from_u64(seed)).values;
        (m, p)
    }

    fn small_wae(seed: u64) -> (Wae, WaeParams) {
        let arch = WaeArch { input_dim: D, hidden: 6, latent: 2, critic_hidden: 3, divergence: Divergence::Mmd, bandwidth: Bandwidth::Median };
        let wae = Wae::new(arch).unwrap();
        let psi = wae.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
        (wae, psi)
    }

    fn identity_wae() -> (Wae, WaeParams) {
        let arch = WaeArch { input_dim: D, hidden: D, latent: D, critic_hidden: 1, divergence: Divergence::Mmd, bandwidth: Bandwidth::Median };
        let enc = Sequential::new(D, vec![Layer::Dense { inputs: D, outputs: D }]).unwrap();
        let dec = Sequential::new(D, vec![Layer::Dense { inputs: D, outputs: D }]).unwrap();
        let mut layer = vec![0.0; D * D + D];
        for i in 0..D {
            layer[i * D + i] = 1.0;
        }
        let mut ae = layer.clone();
        ae.extend(layer);
        (Wae::from_parts(arch, enc, dec, None).unwrap(), WaeParams { autoencoder: ae, critic: vec![] })
    }

    fn inputs(seed: u64, n: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, D), || rng.gen_range(0.05..0.95))
    }

    #[test]
    fn const_loss_examples() {
        let z = ndarray::arr2(&[[1.0, 0.0]]);
        assert_eq!(loss_const(&z, &z, &[1], &[1]).unwrap(), 0.0);
        let zp = ndarray::arr2(&[[0.0, 1.0]]);
        assert_eq!(loss_const(&z, &zp, &[1], &[1]).unwrap(), 1.0);
        assert_eq!(loss_const(&z, &zp, &[1], &[2]).unwrap(), INFINITY_SENTINEL);
    }

    #[test]
    fn relax_loss_examples() {
        let (wae, psi) = identity_wae();
        let x = inputs(1, 3);
        let xp = inputs(2, 3);
        assert_eq!(loss_relax(&wae, &psi, &xp, RelaxVariant::ReconOfXplus, &x).unwrap(), 0.0);
        let (wae, psi) = small_wae(3);
        assert_eq!(loss_relax(&wae, &psi, &x, RelaxVariant::ReconDelta, &x).unwrap(), 0.0);

        // zero decoder weights, zero bias: V ≡ sigmoid(0) = 0.5
        let mut psi = psi;
        let enc_n = wae.encoder().param_count();
        psi.autoencoder[enc_n..].iter_mut().for_each(|v| *v = 0.0);
        let zeros = Array2::zeros((2, D));
        assert_eq!(loss_relax(&wae, &psi, &zeros, RelaxVariant::ReconOfXplus, &zeros).unwrap(), 0.25);
    }

    #[test]
    fn ada_reduces_to_task_loss() {
        let (task, theta) = toy(0);
        let x = inputs(5, 4);
        let labels = vec![0, 2, 1, 2];
        let batch = crate::datamodel::Batch::new(x.clone(), labels.clone(), 3).unwrap();
        let (wae, psi) = identity_wae();
        let h = HyperParams { alpha: 1.0, beta: 123.0, ..Default::default() };
        let t = loss_ada(&task, &theta, &wae, &psi, &x, &x, &labels, &h).unwrap();
        assert_eq!(t.total, task.loss(&theta, &batch).unwrap());

        let (wae, psi) = small_wae(1);
        let xp = inputs(6, 4);
        let h0 = HyperParams { alpha: 0.0, beta: 0.0, ..Default::default() };
        let t = loss_ada(&task, &theta, &wae, &psi, &xp, &x, &labels, &h0).unwrap();
        let bp = crate::datamodel::Batch::new(xp, labels, 3).unwrap();
        assert_eq!(t.total, task.loss(&theta, &bp).unwrap());
    }

    #[test]
    fn ada_is_sum_of_independent_terms() {
        let (task, theta) = toy(2);
        let (wae, psi) = small_wae(2);
        let x = inputs(7, 3);
        let xp = inputs(8, 3);
        let labels = vec![1, 1, 0];
        let h = HyperParams { alpha: 0.7, beta: 3.0, relax_variant: RelaxVariant::ReconDelta, ..Default::default() };
        let t = loss_ada(&task, &theta, &wae, &psi, &xp, &x, &labels, &h).unwrap();
        let l_task = task.loss(&theta, &crate::datamodel::Batch::new(xp.clone(), labels.clone(), 3).unwrap()).unwrap();
        let z = task.embed(&theta, x.clone()).unwrap();
        let zp = task.embed(&theta, xp.clone()).unwrap();
        let l_const = loss_const(&z, &zp, &labels, &labels).unwrap();
        let l_relax = loss_relax(&wae, &psi, &xp, h.relax_variant, &x).unwrap();
        assert!((t.total - (l_task - 0.7 * l_const + 3.0 * l_relax)).abs() < 1e-10);
    }

    #[test]
    fn ascent_gradient_matches_finite_differences() {
        for variant in [RelaxVariant::ReconOfXplus, RelaxVariant::ReconDelta] {
            let (task, theta) = toy(3);
            let (wae, psi) = small_wae(4);
            let h = HyperParams { alpha: 0.5, beta: 2.0, relax_variant: variant, ..Default::default() };
            let x = inputs(9, 3);
            let labels = vec![2, 0, 1];
            let origins = (0..3).map(|i| SampleOrigin { domain: "s".into(), index: i }).collect();
            let mut b = AdversarialBatch::start(&task, &theta, x.clone(), labels.clone(), origins).unwrap();
            b.x_plus = inputs(10, 3);
            let (_, g) = ascent_gradient(&task, &theta, &wae, &psi, &b, &h).unwrap();
            let f = |xp: &Array2<f64>| 3.0 * loss_ada(&task, &theta, &wae, &psi, xp, &x, &labels, &h).unwrap().total;
            let eps = 1e-6;
            for ((r, c), &v) in g.indexed_iter() {
                let (mut a, mut bb) = (b.x_plus.clone(), b.x_plus.clone());
                a[[r, c]] += eps;
                bb[[r, c]] -= eps;
                let fd = (f(&a) - f(&bb)) / (2.0 * eps);
                let rel = (fd - v).abs() / fd.abs().max(1e-8);
                assert!(rel <= 1e-4 || (fd - v).abs() < 1e-9, "{variant} ({r},{c}): {fd} vs {v}");
            }
        }
    }

    #[test]
    fn zero_gamma_leaves_batch_unchanged() {
        let (task, theta) = toy(0);
        let (wae, psi) = small_wae(0);
        let x = inputs(11, 2);
        let origins = (0..2).map(|i| SampleOrigin { domain: "s".into(), index: i }).collect();
        let b = AdversarialBatch::start(&task, &theta, x.clone(), vec![0, 1], origins).unwrap();
        let h = HyperParams { gamma: 0.0, ..Default::default() };
        let out = ascend_step(&task, &theta, &wae, &psi, b, &h).unwrap();
        assert_eq!(out.x_plus, x);
        assert_eq!(out.steps, 1);
    }

    /// A one-pixel image whose L_ADA is `L_task` of a linear model; the step
    /// must equal `γ·g` for the analytically known gradient g.
    #[test]
    fn single_pixel_step_moves_by_gamma_times_gradient() {
        let sig1 = ShapeSignature { image: ImageShape::new(1, 1, 1), n_classes: 2 };
        let task = TaskModel::new(ArchSpec::ToyMlp { hidden: 1 }, sig1).unwrap();
        // Dense(1→1) w=1,b=0 | Tanh, Dense(1→2) w=[1,-1], b=0
        let theta = vec![1.0, 0.0, 1.0, -1.0, 0.0, 0.0];
        let (wae, psi) = {
            let arch = WaeArch { input_dim: 1, hidden: 1, latent: 1, critic_hidden: 1, divergence: Divergence::Mmd, bandwidth: Bandwidth::Median };
            let w = Wae::new(arch).unwrap();
            let p = w.init_params(&mut ChaCha8Rng::seed_from_u64(0));
            (w, p)
        };
        let x = ndarray::arr2(&[[0.3]]);
        let h = HyperParams { alpha: 0.0, beta: 0.0, gamma: 0.05, ..Default::default() };
        let b = AdversarialBatch::start(&task, &theta, x, vec![0], vec![SampleOrigin { domain: "s".into(), index: 0 }]).unwrap();
        // logits (t, −t), t = tanh(x); L = ln(1 + e^{−2t}); dL/dx = −2(1 − p0)(1 − t²)
        let t = 0.3f64.tanh();
        let p0 = 1.0 / (1.0 + (-2.0 * t).exp());
        let g = -2.0 * (1.0 - p0) * (1.0 - t * t);
        let out = ascend_step(&task, &theta, &wae, &psi, b, &h).unwrap();
        assert!((out.x_plus[[0, 0]] - (0.3 + 0.05 * g)).abs() < 1e-15);
    }

    fn per_sample_ada(task: &TaskModel, theta: &[f64], wae: &Wae, psi: &WaeParams, b: &AdversarialBatch, h: &HyperParams) -> Vec<f64> {
        (0..b.len())
            .map(|i| {
                let row = |m: &Array2<f64>| m.slice(ndarray::s![i..i + 1, ..]).to_owned();
                loss_ada(task, theta, wae, psi, &row(&b.x_plus), &row(&b.x), &b.labels[i..i + 1], h).unwrap().total
            })
            .collect()
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn small_steps_do_not_decrease_ada(seed in 0u64..1000, beta in 0.0f64..20.0, alpha in 0.0f64..2.0) {
            let (task, theta) = toy(seed);
            let (wae, psi) = small_wae(seed + 1);
            let n = 16;
            let x = inputs(seed + 2, n);
            let labels: Vec<usize> = (0..n).map(|i| (i + seed as usize) % 3).collect();
            let origins = (0..n).map(|index| SampleOrigin { domain: "s".into(), index }).collect();
            let h = HyperParams { gamma: 1e-3, alpha, beta, ..Default::default() };
            let mut b = AdversarialBatch::start(&task, &theta, x, labels, origins).unwrap();
            let mut prev = per_sample_ada(&task, &theta, &wae, &psi, &b, &h);
            for _ in 0..5 {
                b = ascend_step(&task, &theta, &wae, &psi, b, &h).unwrap();
                let next = per_sample_ada(&task, &theta, &wae, &psi, &b, &h);
                let up = prev.iter().zip(&next).filter(|(a, b)| *b >= *a).count();
                proptest::prop_assert!(up as f64 >= 0.95 * n as f64, "{up}/{n} samples non-decreasing");
                prev = next;
            }
        }
    }

    #[test]
    fn generated_domain_inherits_labels_and_stays_in_range() {
        let (task, theta) = toy(4);
        let (wae, psi) = small_wae(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 20;
        let images: Vec<f32> = (0..n * D).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let src = Domain::new("source", DomainKind::Source, sig(), images, labels).unwrap();
        let h = HyperParams { gamma: 5.0, t_adv: 4, beta: 10.0, ..Default::default() };
        let aug = generate_domain(&task, &theta, &wae, &psi, &[&src], &h, 1, 8, 3, &mut rng).unwrap();
        assert_eq!(aug.len(), 8);
        assert_eq!(aug.kind, DomainKind::Augmented { round: 1 });
        assert!(aug.images().iter().all(|v| (0.0..=1.0).contains(v)));
        let prov = aug.provenance.as_ref().unwrap();
        for (i, o) in prov.origins.iter().enumerate() {
            assert_eq!(o.domain, "source");
            assert_eq!(aug.label(i), src.label(o.index));
        }

        // no ascent: a plain copy of the sampled items
        let h0 = HyperParams { t_adv: 0, ..h };
        let copy = generate_domain(&task, &theta, &wae, &psi, &[&src], &h0, 1, 5, 2, &mut rng).unwrap();
        for (i, o) in copy.provenance.as_ref().unwrap().origins.iter().enumerate() {
            assert_eq!(copy.image(i), src.image(o.index));
        }

        let empty = Domain::new("e", DomainKind::Source, sig(), vec![], vec![]).unwrap();
        assert!(matches!(
            generate_domain(&task, &theta, &wae, &psi, &[&empty], &h, 1, 5, 2, &mut rng),
            Err(Error::Empty(_))
        ));
    }
}
