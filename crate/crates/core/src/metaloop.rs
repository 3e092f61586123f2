//! The training pipeline: WAE pre-training and re-training, the ERM
//! trainer, and the meta-train / meta-test / meta-update loop with
//! augmentation rounds spread over the iteration budget.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::generate_domain;
use crate::datamodel::{Batch, Domain, HyperParams, MetaGradMode};
use crate::error::{Error, Result};
use crate::nets::wae::sample_prior;
use crate::nets::{TaskModel, TaskParams, Wae, WaeLoss, WaeParams};
use crate::optim::{l2_norm, Optimizer, OptimizerKind};

/// Independent random streams, one per purpose, so that e.g. augmentation
/// never shifts the minibatch order.
#[derive(Clone, Debug)]
pub struct Streams {
    pub init: ChaCha8Rng,
    pub batch: ChaCha8Rng,
    pub wae: ChaCha8Rng,
    pub augment: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |n: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n);
            rng
        };
        Self { init: stream(0), batch: stream(1), wae: stream(2), augment: stream(3) }
    }
}

/// Epoch-wise shuffled minibatch indices.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("training domain"));
        }
        if batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        Ok(Self { order: (0..n).collect(), pos: n, batch_size: batch_size.min(n) })
    }

    pub fn next(&mut self, rng: &mut impl Rng) -> Vec<usize> {
        if self.pos + self.batch_size > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch_size].to_vec();
        self.pos += self.batch_size;
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaeSchedule {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Re-training budget per round as a fraction of `epochs`.
    pub retrain_fraction: f64,
    /// Share of the source held out to measure reconstruction error.
    pub holdout_fraction: f64,
}

impl Default for WaeSchedule {
    fn default() -> Self {
        Self { epochs: 20, lr: 1e-3, batch_size: 64, retrain_fraction: 0.2, holdout_fraction: 0.1 }
    }
}

impl WaeSchedule {
    pub fn retrain_epochs(&self) -> usize {
        (self.epochs as f64 * self.retrain_fraction).ceil() as usize
    }
}

/// Outer training schedule. The outer learning rate is `HyperParams::eta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// |S⁺_k| as a fraction of |S|.
    pub domain_fraction: f64,
    pub wae: WaeSchedule,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            domain_fraction: 0.1,
            wae: WaeSchedule::default(),
        }
    }
}

impl TrainSchedule {
    /// Iteration at which each augmentation round starts: ⌊k·T/(K+1)⌋.
    pub fn round_starts(&self, k_domains: usize) -> Vec<usize> {
        (1..=k_domains).map(|k| k * self.iterations / (k_domains + 1)).collect()
    }

    pub fn domain_size(&self, source_len: usize) -> usize {
        ((source_len as f64 * self.domain_fraction).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaeTrainReport {
    pub epochs: Vec<WaeLoss>,
    /// Mean reconstruction error on the held-out source split.
    pub heldout_before: f64,
    pub heldout_after: f64,
    /// Error on the newly added domain (re-training only).
    pub added_before: Option<f64>,
    pub added_after: Option<f64>,
    pub heldout: Vec<usize>,
}

/// Mean per-element squared reconstruction error over a set of samples.
pub fn reconstruction_error(wae: &Wae, psi: &WaeParams, domain: &Domain, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for chunk in indices.chunks(256) {
        let b = domain.batch(chunk)?;
        total += wae.reconstruction_errors(psi, &b.images)?.iter().sum::<f64>();
    }
    Ok(total / indices.len() as f64)
}

fn all(d: &Domain) -> Vec<usize> {
    (0..d.len()).collect()
}

/// Train ψ on (domain, index) pairs for a number of epochs.
fn train_wae_epochs(
    wae: &Wae,
    psi: &mut WaeParams,
    data: &[(&Domain, usize)],
    epochs: usize,
    h: &HyperParams,
    sched: &WaeSchedule,
    rng: &mut impl Rng,
) -> Result<Vec<WaeLoss>> {
    let mut ae_opt = Optimizer::adam(sched.lr);
    let mut critic_opt = Optimizer::adam(sched.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(epochs);
    let mut step = 0usize;
    for _ in 0..epochs {
        order.shuffle(rng);
        let (mut sum, mut batches) = (WaeLoss { recon: 0.0, penalty: 0.0, total: 0.0 }, 0usize);
        for chunk in order.chunks(sched.batch_size.max(1)) {
            let d = chunk[0];
            let mut x = ndarray::Array2::zeros((chunk.len(), data[d].0.dim()));
            for (row, &j) in chunk.iter().enumerate() {
                let (dom, i) = data[j];
                for (dst, &v) in x.row_mut(row).iter_mut().zip(dom.image(i)) {
                    *dst = v as f64;
                }
            }
            let prior = sample_prior(chunk.len(), wae.latent_dim(), rng);
            if h.lambda != 0.0 && wae.critic().is_some() {
                let q = wae.encode(psi, x.clone())?;
                let (_, g) = wae.critic_loss_grad(psi, &q, &prior)?;
                critic_opt.step(&mut psi.critic, &g);
            }
            let (loss, g) = wae.objective_grad(psi, &x, h.lambda, &prior).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, location: format!("WAE iteration {step}") },
                e => e,
            })?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "WAE gradient", location: format!("WAE iteration {step}") });
            }
            ae_opt.step(&mut psi.autoencoder, &g);
            sum.recon += loss.recon;
            sum.penalty += loss.penalty;
            sum.total += loss.total;
            batches += 1;
            step += 1;
        }
        let n = batches.max(1) as f64;
        out.push(WaeLoss { recon: sum.recon / n, penalty: sum.penalty / n, total: sum.total / n });
    }
    Ok(out)
}

/// Fit ψ to the source (minimizing reconstruction plus λ·divergence),
/// holding out a seeded split to report reconstruction error before and
/// after.
pub fn pretrain_wae(
    wae: &Wae,
    psi_init: &WaeParams,
    source: &Domain,
    h: &HyperParams,
    sched: &WaeSchedule,
    rng: &mut impl Rng,
) -> Result<(WaeParams, WaeTrainReport)> {
    if source.is_empty() {
        return Err(Error::Empty("source domain"));
    }
    let mut perm = all(source);
    perm.shuffle(rng);
    let n_hold = if source.len() >= 2 { ((source.len() as f64 * sched.holdout_fraction) as usize).min(source.len() - 1) } else { 0 };
    let mut heldout = perm[..n_hold].to_vec();
    heldout.sort_unstable();
    let train: Vec<(&Domain, usize)> = perm[n_hold..].iter().map(|&i| (source, i)).collect();
    let mut psi = psi_init.clone();
    let before = reconstruction_error(wae, &psi, source, &heldout)?;
    let epochs = train_wae_epochs(wae, &mut psi, &train, sched.epochs, h, sched, rng)?;
    let after = reconstruction_error(wae, &psi, source, &heldout)?;
    Ok((psi, WaeTrainReport { epochs, heldout_before: before, heldout_after: after, added_before: None, added_after: None, heldout }))
}

/// Continue WAE training on S ∪ S⁺_k (minus the held-out source split) for
/// the re-training budget.
#[allow(clippy::too_many_arguments)]
pub fn retrain_wae(
    wae: &Wae,
    psi: &WaeParams,
    source: &Domain,
    heldout: &[usize],
    new_domain: &Domain,
    h: &HyperParams,
    sched: &WaeSchedule,
    rng: &mut impl Rng,
) -> Result<(WaeParams, WaeTrainReport)> {
    let mut held = vec![false; source.len()];
    for &i in heldout {
        held[i] = true;
    }
    let mut data: Vec<(&Domain, usize)> = (0..source.len()).filter(|&i| !held[i]).map(|i| (source, i)).collect();
    data.extend((0..new_domain.len()).map(|i| (new_domain, i)));
    let mut next = psi.clone();
    let before = reconstruction_error(wae, &next, source, heldout)?;
    let added_before = reconstruction_error(wae, &next, new_domain, &all(new_domain))?;
    let epochs = train_wae_epochs(wae, &mut next, &data, sched.retrain_epochs(), h, sched, rng)?;
    let after = reconstruction_error(wae, &next, source, heldout)?;
    let added_after = reconstruction_error(wae, &next, new_domain, &all(new_domain))?;
    Ok((
        next,
        WaeTrainReport {
            epochs,
            heldout_before: before,
            heldout_after: after,
            added_before: Some(added_before),
            added_after: Some(added_after),
            heldout: heldout.to_vec(),
        },
    ))
}

/// θ̂: `inner_steps` plain gradient steps of size η on the source batch.
/// θ itself is never modified.
pub fn meta_train_step(task: &TaskModel, theta: &[f64], batch: &Batch, h: &HyperParams) -> Result<Vec<f64>> {
    let mut hat = theta.to_vec();
    for _ in 0..h.inner_steps.max(1) {
        let (_, g) = task.loss_and_grad(&hat, batch)?;
        for (p, gi) in hat.iter_mut().zip(&g) {
            *p -= h.eta * gi;
        }
    }
    Ok(hat)
}

/// Mean task loss of each domain at θ̂.
pub fn meta_test_losses(task: &TaskModel, theta_hat: &[f64], augmented: &[Domain]) -> Result<Vec<f64>> {
    augmented
        .iter()
        .map(|d| {
            if d.is_empty() {
                return Err(Error::Empty("augmented domain"));
            }
            let mut total = 0.0;
            for start in (0..d.len()).step_by(256) {
                let b = d.range_batch(start, start + 256)?;
                total += task.loss(theta_hat, &b)? * b.len() as f64;
            }
            Ok(total / d.len() as f64)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaGradient {
    pub source_loss: f64,
    pub meta_test_losses: Vec<f64>,
    /// ∇θ [L(θ; S) + Σ_i L(θ̂(θ); S⁺_i)]
    pub grad: Vec<f64>,
}

/// Gradient of the combined meta objective. In `first_order` mode θ̂ is a
/// constant; in `full_second_order` mode the chain rule runs back through
/// every inner step with exact Hessian-vector products.
pub fn meta_gradient(task: &TaskModel, theta: &[f64], source: &Batch, augmented: &[Batch], h: &HyperParams) -> Result<MetaGradient> {
    let (source_loss, source_grad) = task.loss_and_grad(theta, source)?;
    if augmented.is_empty() {
        return Ok(MetaGradient { source_loss, meta_test_losses: Vec::new(), grad: source_grad });
    }
    let mut iterates = vec![theta.to_vec()];
    let mut g = source_grad.clone();
    for j in 0..h.inner_steps.max(1) {
        if j > 0 {
            g = task.loss_and_grad(&iterates[j], source)?.1;
        }
        let next: Vec<f64> = iterates[j].iter().zip(&g).map(|(p, gi)| p - h.eta * gi).collect();
        iterates.push(next);
    }
    let hat = iterates.pop().expect("inner iterate");
    let mut v = vec![0.0; theta.len()];
    let mut losses = Vec::with_capacity(augmented.len());
    for b in augmented {
        let (l, gi) = task.loss_and_grad(&hat, b)?;
        losses.push(l);
        for (a, x) in v.iter_mut().zip(&gi) {
            *a += x;
        }
    }
    if h.meta_grad_mode == MetaGradMode::FullSecondOrder {
        // dθ_{j+1}/dθ_j = I − η∇²L(θ_j)
        for th in iterates.iter().rev() {
            let hv = task.hvp(th, source, &v)?;
            for (a, x) in v.iter_mut().zip(&hv) {
                *a -= h.eta * x;
            }
        }
    }
    let grad: Vec<f64> = source_grad.iter().zip(&v).map(|(a, b)| a + b).collect();
    if let Some(i) = grad.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "meta gradient", location: format!("parameter {i}") });
    }
    Ok(MetaGradient { source_loss, meta_test_losses: losses, grad })
}

/// One meta update of θ with the outer optimizer.
pub fn meta_update(
    task: &TaskModel,
    theta: &mut [f64],
    opt: &mut Optimizer,
    source: &Batch,
    augmented: &[Batch],
    h: &HyperParams,
) -> Result<MetaGradient> {
    let mg = meta_gradient(task, theta, source, augmented, h)?;
    opt.step(theta, &mg.grad);
    Ok(mg)
}

/// Order-sensitive 64-bit digest of a parameter vector's bit patterns.
pub fn param_digest(values: &[f64]) -> u64 {
    values.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Round every parameter to the nearest `f32`, the checkpoint precision.
pub fn snap_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Set on the iteration that starts augmentation round k.
    pub round: Option<usize>,
    pub source_loss: f64,
    pub meta_test_losses: Vec<f64>,
    pub grad_norm: f64,
    /// Digest of θ after the update, hex encoded.
    pub theta_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaRoundReport {
    pub round: usize,
    pub iteration: usize,
    pub domain_size: usize,
    pub meta_train_loss: f64,
    pub meta_test_losses: Vec<f64>,
    pub combined_grad_norm: f64,
    pub wae_heldout_error: Option<f64>,
    pub wae_added_before: Option<f64>,
    pub wae_added_after: Option<f64>,
    pub wall_time: f64,
}

impl MetaRoundReport {
    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self { wall_time: 0.0, ..self.clone() } == Self { wall_time: 0.0, ..other.clone() }
    }
}

pub struct TrainState {
    pub theta: TaskParams,
    pub psi: Option<WaeParams>,
    pub iteration: usize,
    pub streams: Streams,
    pub history: Vec<IterationRecord>,
    pub rounds: Vec<MetaRoundReport>,
    pub augmented: Vec<Domain>,
    pub wae_report: Option<WaeTrainReport>,
}

/// Hooks called while training runs.
pub trait Observer {
    fn iteration(&mut self, _record: &IterationRecord) -> Result<()> {
        Ok(())
    }

    fn round(&mut self, _state: &TrainState, _report: &MetaRoundReport) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Appends one JSON record per iteration to a file.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Ok(Self { out: BufWriter::new(f) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io("writing metrics", e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io("flushing metrics", e))
    }
}

impl Observer for MetricsLog {
    fn iteration(&mut self, record: &IterationRecord) -> Result<()> {
        self.write(record)
    }
}

fn record(iteration: usize, round: Option<usize>, mg: &MetaGradient, theta: &[f64]) -> IterationRecord {
    IterationRecord {
        iteration,
        round,
        source_loss: mg.source_loss,
        meta_test_losses: mg.meta_test_losses.clone(),
        grad_norm: l2_norm(&mg.grad),
        theta_digest: format!("{:016x}", param_digest(theta)),
    }
}

/// Plain cross-entropy training on the source.
pub fn train_erm(
    task: &TaskModel,
    source: &Domain,
    h: &HyperParams,
    sched: &TrainSchedule,
    observer: &mut dyn Observer,
) -> Result<TrainState> {
    let mut streams = Streams::new(h.seed);
    let mut theta = task.init_params(&mut streams.init);
    let mut opt = Optimizer::new(sched.optimizer, h.eta);
    let mut sampler = BatchSampler::new(source.len(), sched.batch_size)?;
    let mut history = Vec::with_capacity(sched.iterations);
    for it in 0..sched.iterations {
        let batch = source.batch(&sampler.next(&mut streams.batch))?;
        let (loss, grad) = task.loss_and_grad(&theta.values, &batch)?;
        opt.step(&mut theta.values, &grad);
        let mg = MetaGradient { source_loss: loss, meta_test_losses: Vec::new(), grad };
        let rec = record(it, None, &mg, &theta.values);
        observer.iteration(&rec)?;
        history.push(rec);
    }
    snap_f32(&mut theta.values);
    Ok(TrainState {
        theta,
        psi: None,
        iteration: sched.iterations,
        streams,
        history,
        rounds: Vec::new(),
        augmented: Vec::new(),
        wae_report: None,
    })
}

/// The full pipeline. `psi` is a pre-trained WAE; if absent and K > 0 it
/// is pre-trained on the source first.
pub fn run_mada(
    task: &TaskModel,
    wae: &Wae,
    psi: Option<(WaeParams, WaeTrainReport)>,
    source: &Domain,
    h: &HyperParams,
    sched: &TrainSchedule,
    observer: &mut dyn Observer,
) -> Result<TrainState> {
    let h = h.clone().validate(&source.signature)?;
    let mut streams = Streams::new(h.seed);
    let theta = task.init_params(&mut streams.init);
    let (psi, wae_report) = match psi {
        Some((p, r)) => (Some(p), Some(r)),
        None if h.k_domains > 0 => {
            let init = wae.init_params(&mut streams.wae);
            let (p, r) = pretrain_wae(wae, &init, source, &h, &sched.wae, &mut streams.wae)?;
            (Some(p), Some(r))
        }
        None => (None, None),
    };
    let heldout = wae_report.as_ref().map(|r| r.heldout.clone()).unwrap_or_default();
    let mut state = TrainState {
        theta,
        psi,
        iteration: 0,
        streams,
        history: Vec::with_capacity(sched.iterations),
        rounds: Vec::new(),
        augmented: Vec::new(),
        wae_report,
    };
    let starts = sched.round_starts(h.k_domains);
    let mut opt = Optimizer::new(sched.optimizer, h.eta);
    let mut sampler = BatchSampler::new(source.len(), sched.batch_size)?;
    let mut aug_samplers: Vec<BatchSampler> = Vec::new();
    for it in 0..sched.iterations {
        let mut started = None;
        for (k0, _) in starts.iter().enumerate().filter(|(_, &s)| s == it) {
            let round = k0 + 1;
            let clock = Instant::now();
            let psi = state.psi.as_ref().expect("WAE parameters for augmentation");
            let pool: Vec<&Domain> = std::iter::once(source).chain(state.augmented.iter()).collect();
            let size = sched.domain_size(source.len());
            let dom = generate_domain(
                task,
                &state.theta.values,
                wae,
                psi,
                &pool,
                &h,
                round,
                size,
                sched.batch_size,
                &mut state.streams.augment,
            )?;
            let (next_psi, rep) = retrain_wae(wae, psi, source, &heldout, &dom, &h, &sched.wae, &mut state.streams.wae)?;
            state.psi = Some(next_psi);
            aug_samplers.push(BatchSampler::new(dom.len(), sched.batch_size)?);
            state.augmented.push(dom);
            started = Some((round, clock, rep));
        }
        let src = source.batch(&sampler.next(&mut state.streams.batch))?;
        let mut aug = Vec::with_capacity(state.augmented.len());
        for (d, s) in state.augmented.iter().zip(aug_samplers.iter_mut()) {
            aug.push(d.batch(&s.next(&mut state.streams.batch))?);
        }
        let mg = meta_update(task, &mut state.theta.values, &mut opt, &src, &aug, &h).map_err(|e| match e {
            Error::NonFinite { what, location } => Error::NonFinite { what, location: format!("iteration {it}, {location}") },
            e => e,
        })?;
        let rec = record(it, started.as_ref().map(|s| s.0), &mg, &state.theta.values);
        state.iteration = it + 1;
        observer.iteration(&rec)?;
        state.history.push(rec);
        if let Some((round, clock, rep)) = started {
            let report = MetaRoundReport {
                round,
                iteration: it,
                domain_size: state.augmented[round - 1].len(),
                meta_train_loss: mg.source_loss,
                meta_test_losses: mg.meta_test_losses.clone(),
                combined_grad_norm: l2_norm(&mg.grad),
                wae_heldout_error: Some(rep.heldout_after),
                wae_added_before: rep.added_before,
                wae_added_after: rep.added_after,
                wall_time: clock.elapsed().as_secs_f64(),
            };
            observer.round(&state, &report)?;
            state.rounds.push(report);
        }
    }
    snap_f32(&mut state.theta.values);
    Ok(state)
}
