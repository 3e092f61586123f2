//! Wasserstein auto-encoder V = G ∘ Q with a latent divergence penalty
//! (adversarial latent critic or RBF-kernel MMD) against a standard normal
//! prior. The encoder is used deterministically.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{Layer, ParamLayout, Sequential, Trace};
use super::loss::{sigmoid, softplus};
use crate::datamodel::str_enum;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    Gan,
    Mmd,
}

str_enum!(Divergence, "divergence", Gan => "gan", Mmd => "mmd");

/// RBF kernel bandwidth for the MMD penalty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance of the pooled samples.
    Median,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaeArch {
    pub input_dim: usize,
    pub hidden: usize,
    pub latent: usize,
    pub critic_hidden: usize,
    pub divergence: Divergence,
    pub bandwidth: Bandwidth,
}

impl WaeArch {
    /// Fully connected digits WAE: encoder 400-20, decoder 400-input,
    /// critic 128-1.
    pub fn digits(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: 400,
            latent: 20,
            critic_hidden: 128,
            divergence: Divergence::Gan,
            bandwidth: Bandwidth::Median,
        }
    }
}

/// WAE parameters ψ. `autoencoder` holds encoder then decoder parameters;
/// `critic` is empty for the MMD variant.
#[derive(Clone, Debug, PartialEq)]
pub struct WaeParams {
    pub autoencoder: Vec<f64>,
    pub critic: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaeLoss {
    pub recon: f64,
    pub penalty: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct Wae {
    pub arch: WaeArch,
    encoder: Sequential,
    decoder: Sequential,
    critic: Option<Sequential>,
}

pub struct WaeTrace {
    enc: Trace<f64>,
    dec: Trace<f64>,
}

impl WaeTrace {
    pub fn latent(&self) -> &Array2<f64> {
        &self.enc.output
    }

    pub fn reconstruction(&self) -> &Array2<f64> {
        &self.dec.output
    }
}

pub fn sample_prior(n: usize, latent: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, latent), || rng.sample(StandardNormal))
}

impl Wae {
    pub fn new(arch: WaeArch) -> Result<Self> {
        let (d, h, l) = (arch.input_dim, arch.hidden, arch.latent);
        let encoder = Sequential::new(
            d,
            vec![Layer::Dense { inputs: d, outputs: h }, Layer::Relu, Layer::Dense { inputs: h, outputs: l }],
        )?;
        let decoder = Sequential::new(
            l,
            vec![
                Layer::Dense { inputs: l, outputs: h },
                Layer::Relu,
                Layer::Dense { inputs: h, outputs: d },
                Layer::Sigmoid,
            ],
        )?;
        let critic = match arch.divergence {
            Divergence::Gan => Some(Sequential::new(
                l,
                vec![
                    Layer::Dense { inputs: l, outputs: arch.critic_hidden },
                    Layer::Relu,
                    Layer::Dense { inputs: arch.critic_hidden, outputs: 1 },
                ],
            )?),
            Divergence::Mmd => None,
        };
        Ok(Self { arch, encoder, decoder, critic })
    }

    /// Build from explicit stacks; used to wire hand-made auto-encoders.
    pub fn from_parts(arch: WaeArch, encoder: Sequential, decoder: Sequential, critic: Option<Sequential>) -> Result<Self> {
        if encoder.input_dim() != decoder.output_dim() || encoder.output_dim() != decoder.input_dim() {
            return Err(Error::Shape("decoder output must match encoder input".into()));
        }
        if let Some(c) = &critic {
            if c.input_dim() != encoder.output_dim() || c.output_dim() != 1 {
                return Err(Error::Shape("critic must map latent codes to one logit".into()));
            }
        }
        Ok(Self { arch, encoder, decoder, critic })
    }

    pub fn encoder(&self) -> &Sequential {
        &self.encoder
    }

    pub fn decoder(&self) -> &Sequential {
        &self.decoder
    }

    pub fn critic(&self) -> Option<&Sequential> {
        self.critic.as_ref()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> WaeParams {
        let mut autoencoder = self.encoder.init_params(rng);
        autoencoder.extend(self.decoder.init_params(rng));
        let critic = self.critic.as_ref().map(|c| c.init_params(rng)).unwrap_or_default();
        WaeParams { autoencoder, critic }
    }

    pub fn param_layout(&self) -> (ParamLayout, ParamLayout) {
        let split = self.encoder.param_count();
        let mut ae = self.encoder.param_layout("encoder");
        ae.extend(self.decoder.param_layout("decoder").into_iter().map(|(n, s, o)| (n, s, o + split)));
        let critic = self.critic.as_ref().map(|c| c.param_layout("critic")).unwrap_or_default();
        (ae, critic)
    }

    fn split<'a>(&self, psi: &'a WaeParams) -> Result<(&'a [f64], &'a [f64])> {
        let want = self.encoder.param_count() + self.decoder.param_count();
        if psi.autoencoder.len() != want {
            return Err(Error::Shape(format!("{} auto-encoder parameters, expected {want}", psi.autoencoder.len())));
        }
        let critic_want = self.critic.as_ref().map_or(0, Sequential::param_count);
        if psi.critic.len() != critic_want {
            return Err(Error::Shape(format!("{} critic parameters, expected {critic_want}", psi.critic.len())));
        }
        Ok(psi.autoencoder.split_at(self.encoder.param_count()))
    }

    /// Q(x)
    pub fn encode(&self, psi: &WaeParams, x: Array2<f64>) -> Result<Array2<f64>> {
        let (pe, _) = self.split(psi)?;
        self.encoder.apply(pe, x)
    }

    /// V(x) = G(Q(x))
    pub fn reconstruct(&self, psi: &WaeParams, x: Array2<f64>) -> Result<Array2<f64>> {
        let (pe, pd) = self.split(psi)?;
        let e = self.encoder.apply(pe, x)?;
        self.decoder.apply(pd, e)
    }

    pub fn trace(&self, psi: &WaeParams, x: Array2<f64>) -> Result<WaeTrace> {
        let (pe, pd) = self.split(psi)?;
        let enc = self.encoder.forward(pe, x)?;
        let dec = self.decoder.forward(pd, enc.output.clone())?;
        Ok(WaeTrace { enc, dec })
    }

    /// `Jᵀ g` where J is the Jacobian of V at the traced input.
    pub fn input_vjp(&self, psi: &WaeParams, trace: &WaeTrace, g: Array2<f64>) -> Array2<f64> {
        let (pe, pd) = psi.autoencoder.split_at(self.encoder.param_count());
        let (_, ge) = self.decoder.backward(pd, &trace.dec, g, false, true);
        let (_, gx) = self.encoder.backward(pe, &trace.enc, ge.expect("latent gradient"), false, true);
        gx.expect("input gradient")
    }

    fn critic_logits(&self, psi: &WaeParams, q: &Array2<f64>) -> Result<Array2<f64>> {
        let critic = self.critic.as_ref().ok_or_else(|| Error::config("divergence", "no latent critic"))?;
        critic.apply(&psi.critic, q.clone())
    }

    /// D_e(Q(x), P(e)) for encoded samples `q` and prior samples `p`.
    pub fn divergence_penalty(&self, psi: &WaeParams, q: &Array2<f64>, p: &Array2<f64>) -> Result<f64> {
        if q.nrows() == 0 || p.nrows() == 0 {
            return Err(Error::Empty("latent sample set"));
        }
        match self.arch.divergence {
            Divergence::Mmd => mmd(q, p, self.arch.bandwidth),
            Divergence::Gan => Ok(gan_penalty(&self.critic_logits(psi, q)?)),
        }
    }

    /// `‖G(Q(x)) − x‖²` (mean over elements) `+ λ·D_e(Q(x), P(e))`.
    pub fn objective(&self, psi: &WaeParams, x: &Array2<f64>, lambda: f64, prior: &Array2<f64>) -> Result<WaeLoss> {
        let tr = self.trace(psi, x.clone())?;
        let recon = mean_sq_diff(tr.reconstruction(), x);
        if lambda == 0.0 {
            return Ok(WaeLoss { recon, penalty: 0.0, total: recon });
        }
        let penalty = self.divergence_penalty(psi, tr.latent(), prior)?;
        Ok(WaeLoss { recon, penalty, total: recon + lambda * penalty })
    }

    /// Objective value and its gradient w.r.t. the auto-encoder parameters.
    /// The critic (if any) is held fixed.
    pub fn objective_grad(
        &self,
        psi: &WaeParams,
        x: &Array2<f64>,
        lambda: f64,
        prior: &Array2<f64>,
    ) -> Result<(WaeLoss, Vec<f64>)> {
        let (pe, pd) = self.split(psi)?;
        let tr = self.trace(psi, x.clone())?;
        let n_el = x.len() as f64;
        let recon = mean_sq_diff(tr.reconstruction(), x);
        let g_out = (tr.reconstruction() - x) * (2.0 / n_el);
        let (mut gd, ge) = self.decoder.backward(pd, &tr.dec, g_out, true, true);
        let mut ge = ge.expect("latent gradient");
        let mut penalty = 0.0;
        if lambda != 0.0 {
            let (pen, gq) = match self.arch.divergence {
                Divergence::Mmd => mmd_with_grad(tr.latent(), prior, self.arch.bandwidth)?,
                Divergence::Gan => {
                    let critic = self.critic.as_ref().expect("gan critic");
                    let ctr = critic.forward(&psi.critic, tr.latent().clone())?;
                    let n = ctr.output.nrows() as f64;
                    let pen = gan_penalty(&ctr.output);
                    // d/dl softplus(−l) = σ(l) − 1
                    let gl = ctr.output.mapv(|l| (sigmoid(l) - 1.0) / n);
                    let (_, gq) = critic.backward(&psi.critic, &ctr, gl, false, true);
                    (pen, gq.expect("critic input gradient"))
                }
            };
            penalty = pen;
            ge.scaled_add(lambda, &gq);
        }
        let (mut grad, _) = self.encoder.backward(pe, &tr.enc, ge, true, false);
        grad.append(&mut gd);
        let total = recon + lambda * penalty;
        if !total.is_finite() {
            return Err(Error::NonFinite { what: "WAE objective", location: "objective_grad".into() });
        }
        Ok((WaeLoss { recon, penalty, total }, grad))
    }

    /// Binary cross-entropy of the latent critic (prior samples are "real")
    /// and its gradient w.r.t. the critic parameters.
    pub fn critic_loss_grad(&self, psi: &WaeParams, q: &Array2<f64>, p: &Array2<f64>) -> Result<(f64, Vec<f64>)> {
        let critic = self.critic.as_ref().ok_or_else(|| Error::config("divergence", "no latent critic"))?;
        let (nq, np) = (q.nrows() as f64, p.nrows() as f64);
        let tq = critic.forward(&psi.critic, q.clone())?;
        let tp = critic.forward(&psi.critic, p.clone())?;
        let loss = tp.output.iter().map(|&l| softplus(-l)).sum::<f64>() / np
            + tq.output.iter().map(|&l| softplus(l)).sum::<f64>() / nq;
        let gp = tp.output.mapv(|l| (sigmoid(l) - 1.0) / np);
        let gq = tq.output.mapv(|l| sigmoid(l) / nq);
        let (g1, _) = critic.backward(&psi.critic, &tp, gp, true, false);
        let (g2, _) = critic.backward(&psi.critic, &tq, gq, true, false);
        Ok((loss, g1.iter().zip(&g2).map(|(a, b)| a + b).collect()))
    }

    /// Per-sample mean squared reconstruction error.
    pub fn reconstruction_errors(&self, psi: &WaeParams, x: &Array2<f64>) -> Result<Vec<f64>> {
        let r = self.reconstruct(psi, x.clone())?;
        let d = x.ncols() as f64;
        Ok(r.rows()
            .into_iter()
            .zip(x.rows())
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / d)
            .collect())
    }
}

fn mean_sq_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64
}

/// Non-saturating encoder penalty `mean softplus(−D(q))`.
fn gan_penalty(logits: &Array2<f64>) -> f64 {
    logits.iter().map(|&l| softplus(-l)).sum::<f64>() / logits.len() as f64
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Median pairwise distance of the pooled samples; 1.0 if it is zero.
pub fn median_bandwidth(q: &Array2<f64>, p: &Array2<f64>) -> f64 {
    let pooled: Vec<_> = q.rows().into_iter().chain(p.rows()).collect();
    let mut d = Vec::with_capacity(pooled.len() * pooled.len() / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

fn resolve_bandwidth(q: &Array2<f64>, p: &Array2<f64>, bw: Bandwidth) -> Result<f64> {
    match bw {
        Bandwidth::Median => Ok(median_bandwidth(q, p)),
        Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => Ok(s),
        Bandwidth::Fixed(s) => Err(Error::config("mmd_bandwidth", format!("must be > 0, got {s}"))),
    }
}

/// Biased (V-statistic) squared MMD with RBF kernel `exp(−‖a−b‖²/2σ²)`.
pub fn mmd(q: &Array2<f64>, p: &Array2<f64>, bw: Bandwidth) -> Result<f64> {
    Ok(mmd_with_grad(q, p, bw)?.0)
}

/// Squared MMD and its gradient w.r.t. `q` (bandwidth held fixed).
pub fn mmd_with_grad(q: &Array2<f64>, p: &Array2<f64>, bw: Bandwidth) -> Result<(f64, Array2<f64>)> {
    if q.nrows() == 0 || p.nrows() == 0 {
        return Err(Error::Empty("MMD sample set"));
    }
    if q.ncols() != p.ncols() {
        return Err(Error::Shape(format!("MMD samples of dim {} and {}", q.ncols(), p.ncols())));
    }
    let sigma = resolve_bandwidth(q, p, bw)?;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let (n, m) = (q.nrows() as f64, p.nrows() as f64);
    let mut grad = Array2::zeros(q.dim());
    let (mut kqq, mut kpp, mut kqp) = (0.0, 0.0, 0.0);
    for i in 0..q.nrows() {
        for j in 0..q.nrows() {
            let k = (-sq_dist(q.row(i), q.row(j)) * inv).exp();
            kqq += k;
            // both (i, j) and (j, i) terms depend on q_i
            let c = -2.0 * k * 2.0 * inv / (n * n);
            for t in 0..q.ncols() {
                grad[[i, t]] += c * (q[[i, t]] - q[[j, t]]);
            }
        }
        for j in 0..p.nrows() {
            let k = (-sq_dist(q.row(i), p.row(j)) * inv).exp();
            kqp += k;
            let c = 2.0 * k * 2.0 * inv / (n * m);
            for t in 0..q.ncols() {
                grad[[i, t]] += c * (q[[i, t]] - p[[j, t]]);
            }
        }
    }
    for i in 0..p.nrows() {
        for j in 0..p.nrows() {
            kpp += (-sq_dist(p.row(i), p.row(j)) * inv).exp();
        }
    }
    let value = kqq / (n * n) + kpp / (m * m) - 2.0 * kqp / (n * m);
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch(divergence: Divergence) -> WaeArch {
        WaeArch { input_dim: 6, hidden: 5, latent: 3, critic_hidden: 4, divergence, bandwidth: Bandwidth::Fixed(1.5) }
    }

    /// Identity-wired linear auto-encoder on `d` inputs.
    fn identity_wae(d: usize) -> (Wae, WaeParams) {
        let arch = WaeArch { input_dim: d, hidden: d, latent: d, critic_hidden: 1, divergence: Divergence::Mmd, bandwidth: Bandwidth::Median };
        let enc = Sequential::new(d, vec![Layer::Dense { inputs: d, outputs: d }]).unwrap();
        let dec = Sequential::new(d, vec![Layer::Dense { inputs: d, outputs: d }]).unwrap();
        let mut layer = vec![0.0; d * d + d];
        for i in 0..d {
            layer[i * d + i] = 1.0;
        }
        let mut ae = layer.clone();
        ae.extend(layer);
        (Wae::from_parts(arch, enc, dec, None).unwrap(), WaeParams { autoencoder: ae, critic: vec![] })
    }

    #[test]
    fn identity_wired_autoencoder_reconstructs_exactly() {
        let (wae, psi) = identity_wae(4);
        let x = Array2::from_shape_fn((3, 4), |(i, j)| 0.1 * (i + 2 * j) as f64);
        assert_eq!(wae.reconstruct(&psi, x.clone()).unwrap(), x);
        let prior = Array2::zeros((3, 4));
        assert_eq!(wae.objective(&psi, &x, 0.0, &prior).unwrap().total, 0.0);
    }

    #[test]
    fn zero_decoder_weights_output_decoder_bias() {
        let wae = Wae::new(small_arch(Divergence::Mmd)).unwrap();
        let mut psi = wae.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let enc_n = wae.encoder().param_count();
        let dec = &mut psi.autoencoder[enc_n..];
        dec.iter_mut().for_each(|v| *v = 0.0);
        // last dense bias, before the sigmoid
        let n = dec.len();
        dec[n - 6..].copy_from_slice(&[0.0, 1.0, -1.0, 2.0, 0.0, 0.5]);
        let x = Array2::from_elem((2, 6), 0.3);
        let r = wae.reconstruct(&psi, x).unwrap();
        for row in r.rows() {
            for (v, b) in row.iter().zip([0.0, 1.0, -1.0, 2.0, 0.0, 0.5]) {
                assert!((v - sigmoid(b)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_lambda_objective_ignores_divergence_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gan = Wae::new(small_arch(Divergence::Gan)).unwrap();
        let mmd_wae = Wae::new(small_arch(Divergence::Mmd)).unwrap();
        let psi = gan.init_params(&mut rng);
        let psi_mmd = WaeParams { autoencoder: psi.autoencoder.clone(), critic: vec![] };
        let x = Array2::from_shape_fn((4, 6), |_| rng.gen_range(0.0..1.0));
        let prior = sample_prior(4, 3, &mut rng);
        let a = gan.objective(&psi, &x, 0.0, &prior).unwrap();
        let b = mmd_wae.objective(&psi_mmd, &x, 0.0, &prior).unwrap();
        assert_eq!(a, b);
        let expect = mean_sq_diff(&gan.reconstruct(&psi, x.clone()).unwrap(), &x);
        assert_eq!(a.total, expect);
    }

    /// Direct double-loop kernel sums.
    fn mmd_oracle(q: &[Vec<f64>], p: &[Vec<f64>], sigma: f64) -> f64 {
        let k = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
            (-d / (2.0 * sigma * sigma)).exp()
        };
        let mut s = 0.0;
        for a in q {
            for b in q {
                s += k(a, b) / (q.len() * q.len()) as f64;
            }
        }
        for a in p {
            for b in p {
                s += k(a, b) / (p.len() * p.len()) as f64;
            }
        }
        for a in q {
            for b in p {
                s -= 2.0 * k(a, b) / (q.len() * p.len()) as f64;
            }
        }
        s
    }

    fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
        m.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn mmd_on_identical_sets_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = sample_prior(7, 3, &mut rng);
        assert!(mmd(&q, &q, Bandwidth::Median).unwrap().abs() < 1e-15);
        // equal encoder outputs and prior samples, checked against the oracle
        let sigma = median_bandwidth(&q, &q);
        assert!((mmd(&q, &q, Bandwidth::Median).unwrap() - mmd_oracle(&to_rows(&q), &to_rows(&q), sigma)).abs() < 1e-12);
    }

    #[test]
    fn mmd_between_distant_point_masses() {
        let q = Array2::from_elem((4, 2), 0.0);
        let p = Array2::from_elem((3, 2), 10.0);
        let sigma = 0.5;
        let v = mmd(&q, &p, Bandwidth::Fixed(sigma)).unwrap();
        let far = (-(200.0) / (2.0 * sigma * sigma)).exp();
        assert!((v - 2.0 * (1.0 - far)).abs() < 1e-12);
        assert!((v - mmd_oracle(&to_rows(&q), &to_rows(&p), sigma)).abs() < 1e-12);
    }

    #[test]
    fn mmd_matches_oracle_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = sample_prior(6, 4, &mut rng);
        let p = sample_prior(9, 4, &mut rng) + 0.5;
        let sigma = median_bandwidth(&q, &p);
        let v = mmd(&q, &p, Bandwidth::Median).unwrap();
        assert!((v - mmd_oracle(&to_rows(&q), &to_rows(&p), sigma)).abs() < 1e-12);
    }

    #[test]
    fn mmd_rejects_empty_sets() {
        let q = Array2::<f64>::zeros((0, 2));
        let p = Array2::<f64>::zeros((3, 2));
        assert!(matches!(mmd(&q, &p, Bandwidth::Median), Err(Error::Empty(_))));
    }

    #[test]
    fn zero_critic_gives_constant_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let wae = Wae::new(small_arch(Divergence::Gan)).unwrap();
        let mut psi = wae.init_params(&mut rng);
        psi.critic.iter_mut().for_each(|v| *v = 0.0);
        let last = psi.critic.len() - 1;
        psi.critic[last] = 0.7;
        let p = sample_prior(5, 3, &mut rng);
        for shift in [0.0, 3.0, -10.0] {
            let q = sample_prior(5, 3, &mut rng) + shift;
            let v = wae.divergence_penalty(&psi, &q, &p).unwrap();
            assert!((v - softplus(-0.7)).abs() < 1e-15);
        }
    }

    fn fd_check(wae: &Wae, psi: &WaeParams, x: &Array2<f64>, prior: &Array2<f64>, lambda: f64) {
        let (_, g) = wae.objective_grad(psi, x, lambda, prior).unwrap();
        let h = 1e-6;
        for i in (0..psi.autoencoder.len()).step_by(3) {
            let mut a = psi.clone();
            let mut b = psi.clone();
            a.autoencoder[i] += h;
            b.autoencoder[i] -= h;
            let fd = (wae.objective(&a, x, lambda, prior).unwrap().total
                - wae.objective(&b, x, lambda, prior).unwrap().total)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for div in [Divergence::Mmd, Divergence::Gan] {
            let wae = Wae::new(small_arch(div)).unwrap();
            let psi = wae.init_params(&mut rng);
            let x = Array2::from_shape_fn((5, 6), |_| rng.gen_range(0.0..1.0));
            let prior = sample_prior(5, 3, &mut rng);
            fd_check(&wae, &psi, &x, &prior, 0.8);
        }
    }

    #[test]
    fn input_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let wae = Wae::new(small_arch(Divergence::Mmd)).unwrap();
        let psi = wae.init_params(&mut rng);
        let x = Array2::from_shape_fn((2, 6), |_| rng.gen_range(0.0..1.0));
        let g = Array2::from_shape_fn((2, 6), |_| rng.gen_range(-1.0..1.0));
        let tr = wae.trace(&psi, x.clone()).unwrap();
        let vjp = wae.input_vjp(&psi, &tr, g.clone());
        let f = |x: &Array2<f64>| (wae.reconstruct(&psi, x.clone()).unwrap() * &g).sum();
        let h = 1e-6;
        for ((r, c), &v) in vjp.indexed_iter() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[[r, c]] += h;
            b[[r, c]] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - v).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let wae = Wae::new(small_arch(Divergence::Gan)).unwrap();
        let psi = wae.init_params(&mut rng);
        let q = sample_prior(4, 3, &mut rng) * 2.0;
        let p = sample_prior(4, 3, &mut rng);
        let (_, g) = wae.critic_loss_grad(&psi, &q, &p).unwrap();
        let h = 1e-6;
        for (i, gi) in g.iter().enumerate() {
            let (mut a, mut b) = (psi.clone(), psi.clone());
            a.critic[i] += h;
            b.critic[i] -= h;
            let fd = (wae.critic_loss_grad(&a, &q, &p).unwrap().0 - wae.critic_loss_grad(&b, &q, &p).unwrap().0) / (2.0 * h);
            assert!((fd - gi).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}
