//! Evaluation: accuracy, corruption-error metrics, empirical Wasserstein
//! distances between embedded domains, embedding export and few-shot
//! adaptation.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{argmax_rows, Domain, DomainKind};
use crate::error::{Error, Result};
use crate::metaloop::{snap_f32, BatchSampler};
use crate::nets::{TaskModel, TaskParams};
use crate::optim::{Optimizer, OptimizerKind};

const EVAL_CHUNK: usize = 256;

/// Fraction of samples whose arg-max prediction equals the label.
pub fn accuracy(task: &TaskModel, theta: &[f64], domain: &Domain) -> Result<f64> {
    if domain.is_empty() {
        return Err(Error::Empty("evaluation domain"));
    }
    let mut correct = 0usize;
    for start in (0..domain.len()).step_by(EVAL_CHUNK) {
        let b = domain.range_batch(start, start + EVAL_CHUNK)?;
        let pred = argmax_rows(&task.logits(theta, b.images)?);
        correct += pred.iter().zip(&b.labels).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / domain.len() as f64)
}

/// Error rates of one model: per corruption and on clean data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub entries: BTreeMap<String, f64>,
    pub clean_error: f64,
}

impl ErrorTable {
    pub fn new(entries: BTreeMap<String, f64>, clean_error: f64) -> Result<Self> {
        for (k, &v) in entries.iter().chain(std::iter::once((&"clean".to_string(), &clean_error))) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Data(format!("error rate {v} for `{k}` outside [0, 1]")));
            }
        }
        Ok(Self { entries, clean_error })
    }

    /// Table of `1 − accuracy` values.
    pub fn from_accuracies(accuracies: &BTreeMap<String, f64>, clean_accuracy: f64) -> Result<Self> {
        Self::new(accuracies.iter().map(|(k, a)| (k.clone(), 1.0 - a)).collect(), 1.0 - clean_accuracy)
    }

    fn check_keys(&self, erm: &ErrorTable) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Empty("error table"));
        }
        if !self.entries.keys().eq(erm.entries.keys()) {
            return Err(Error::Data("error tables cover different corruptions".into()));
        }
        Ok(())
    }
}

/// `(1/N) Σ_i E_i^f / E_i^ERM`
pub fn mce(f: &ErrorTable, erm: &ErrorTable) -> Result<f64> {
    f.check_keys(erm)?;
    let mut total = 0.0;
    for (k, &e) in &f.entries {
        let d = erm.entries[k];
        if d == 0.0 {
            return Err(Error::UndefinedRatio { corruption: k.clone(), reason: "baseline error is zero" });
        }
        total += e / d;
    }
    Ok(total / f.entries.len() as f64)
}

/// `(1/N) Σ_i (E_i^f − E_clean^f) / (E_i^ERM − E_clean^ERM)`
pub fn rmce(f: &ErrorTable, erm: &ErrorTable) -> Result<f64> {
    f.check_keys(erm)?;
    let mut total = 0.0;
    for (k, &e) in &f.entries {
        let d = erm.entries[k] - erm.clean_error;
        if d == 0.0 {
            return Err(Error::UndefinedRatio { corruption: k.clone(), reason: "baseline error equals its clean error" });
        }
        total += (e - f.clean_error) / d;
    }
    Ok(total / f.entries.len() as f64)
}

/// Minimum-cost perfect matching of a square cost matrix (Hungarian method
/// with potentials). Returns the column matched to each row and the total
/// cost.
pub fn assignment(cost: &Array2<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "square cost matrix");
    // 1-based arrays; index 0 is the virtual start column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    let total = col_of.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    (col_of, total)
}

/// Optimal transport cost between uniform measures on the rows and the
/// columns of `cost` (successive shortest paths on integer masses: every
/// row carries `m` units, every column absorbs `n`). Returns the expected
/// cost under the optimal plan.
pub fn transport_cost(cost: &Array2<f64>) -> f64 {
    let (n, m) = cost.dim();
    let mut supply = vec![m as u64; n];
    let mut demand = vec![n as u64; m];
    let mut flow = Array2::<u64>::zeros((n, m));
    // node potentials: rows then columns
    let mut pot = vec![0.0f64; n + m];
    let mut remaining = (n * m) as u64;
    while remaining > 0 {
        let mut dist = vec![f64::INFINITY; n + m];
        let mut prev = vec![usize::MAX; n + m];
        let mut done = vec![false; n + m];
        for i in 0..n {
            if supply[i] > 0 {
                dist[i] = 0.0;
            }
        }
        let mut target = None;
        loop {
            let mut best = None;
            for (k, &d) in dist.iter().enumerate() {
                if !done[k] && d.is_finite() && best.is_none_or(|b: usize| d < dist[b]) {
                    best = Some(k);
                }
            }
            let Some(k) = best else { break };
            done[k] = true;
            if k >= n && demand[k - n] > 0 {
                target = Some(k);
                break;
            }
            if k < n {
                for j in 0..m {
                    let nd = dist[k] + cost[[k, j]] + pot[k] - pot[n + j];
                    if !done[n + j] && nd < dist[n + j] {
                        dist[n + j] = nd;
                        prev[n + j] = k;
                    }
                }
            } else {
                let j = k - n;
                for i in 0..n {
                    if flow[[i, j]] > 0 {
                        let nd = dist[k] - cost[[i, j]] + pot[k] - pot[i];
                        if !done[i] && nd < dist[i] {
                            dist[i] = nd;
                            prev[i] = k;
                        }
                    }
                }
            }
        }
        let t = target.expect("transport problem is always feasible");
        let limit = dist[t];
        for k in 0..n + m {
            if done[k] {
                pot[k] += dist[k] - limit;
            }
        }
        // bottleneck along the path
        let mut amount = demand[t - n];
        let mut k = t;
        while prev[k] != usize::MAX {
            let p = prev[k];
            if k < n {
                amount = amount.min(flow[[k, p - n]]);
            }
            k = p;
        }
        amount = amount.min(supply[k]);
        supply[k] -= amount;
        demand[t - n] -= amount;
        let mut k = t;
        while prev[k] != usize::MAX {
            let p = prev[k];
            if k >= n {
                flow[[p, k - n]] += amount;
            } else {
                flow[[k, p - n]] -= amount;
            }
            k = p;
        }
        remaining -= amount;
    }
    let total: f64 = flow.indexed_iter().map(|((i, j), &f)| f as f64 * cost[[i, j]]).sum();
    total / (n * m) as f64
}

fn sq_cost(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        a.row(i).iter().zip(b.row(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    })
}

/// Exact 2-Wasserstein distance between the uniform empirical measures on
/// the rows of `a` and `b`.
pub fn empirical_wasserstein(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Empty("point set"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("point sets of dim {} and {}", a.ncols(), b.ncols())));
    }
    let c = sq_cost(a, b);
    let mean_cost = if a.nrows() == b.nrows() { assignment(&c).1 / a.nrows() as f64 } else { transport_cost(&c) };
    Ok(mean_cost.max(0.0).sqrt())
}

/// Embeddings of a seeded subsample of at most `n` samples.
pub fn embed_subsample(task: &TaskModel, theta: &[f64], domain: &Domain, n: usize, seed: u64) -> Result<Array2<f64>> {
    let mut idx: Vec<usize> = (0..domain.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    let mut rows = Vec::new();
    for chunk in idx.chunks(EVAL_CHUNK) {
        rows.push(task.embed(theta, domain.batch(chunk)?.images)?);
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// W2 between two domains in the embedding space of θ, over seeded
/// subsamples of `subsample` points each.
pub fn domain_distance(task: &TaskModel, theta: &[f64], a: &Domain, b: &Domain, subsample: usize, seed: u64) -> Result<f64> {
    let za = embed_subsample(task, theta, a, subsample, seed)?;
    let zb = embed_subsample(task, theta, b, subsample, seed.wrapping_add(1))?;
    empirical_wasserstein(&za, &zb)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub domain_id: String,
    pub sample_id: usize,
    pub label: usize,
    pub z: Vec<f64>,
}

/// Write `domain_id,sample_id,label,z0,…` rows. Floats use the shortest
/// representation that parses back to the same value.
pub fn export_embeddings(task: &TaskModel, theta: &[f64], domains: &[Domain], path: &Path) -> Result<usize> {
    if domains.is_empty() {
        return Err(Error::Empty("domain list"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let d = task.embedding_dim();
    let mut header = vec!["domain_id".to_string(), "sample_id".into(), "label".into()];
    header.extend((0..d).map(|i| format!("z{i}")));
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    let mut rows = 0;
    for dom in domains {
        for start in (0..dom.len()).step_by(EVAL_CHUNK) {
            let b = dom.range_batch(start, start + EVAL_CHUNK)?;
            let z = task.embed(theta, b.images)?;
            for (k, zr) in z.rows().into_iter().enumerate() {
                let mut rec = vec![dom.id.clone(), (start + k).to_string(), b.labels[k].to_string()];
                rec.extend(zr.iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
                rows += 1;
            }
        }
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(rows)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let bad = |what: &str| Error::Data(format!("{}: malformed {what}", path.display()));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
        if rec.len() < 3 {
            return Err(bad("row"));
        }
        out.push(EmbeddingRow {
            domain_id: rec[0].to_string(),
            sample_id: rec[1].parse().map_err(|_| bad("sample_id"))?,
            label: rec[2].parse().map_err(|_| bad("label"))?,
            z: rec.iter().skip(3).map(|v| v.parse().map_err(|_| bad("embedding value"))).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

/// Sorted indices of `shots` seeded samples of every class.
pub fn shot_indices(domain: &Domain, shots: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for class in 0..domain.signature.n_classes {
        let mut idx: Vec<usize> = (0..domain.len()).filter(|&i| domain.label(i) == class).collect();
        if idx.is_empty() {
            return Err(Error::MissingClass(class));
        }
        idx.shuffle(&mut rng);
        picked.extend(idx.into_iter().take(shots));
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Draw `shots` seeded samples of every class.
pub fn select_shots(domain: &Domain, shots: usize, seed: u64) -> Result<Domain> {
    let mut d = domain.subset(format!("{}-shots{shots}", domain.id), &shot_indices(domain, shots, seed)?)?;
    d.kind = DomainKind::Target;
    Ok(d)
}

/// Seeded shots per class and the remaining samples, for evaluating an
/// adapted model on images it was not tuned on.
pub fn split_shots(target: &Domain, shots: usize, seed: u64) -> Result<(Domain, Domain)> {
    let chosen = shot_indices(target, shots, seed)?;
    let rest: Vec<usize> = (0..target.len()).filter(|i| chosen.binary_search(i).is_err()).collect();
    if rest.is_empty() {
        return Err(Error::Empty("target samples left after shot selection"));
    }
    let mut picked = target.subset(format!("{}-shots{shots}", target.id), &chosen)?;
    picked.kind = DomainKind::Target;
    Ok((picked, target.subset(format!("{}-rest", target.id), &rest)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotSettings {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for FewShotSettings {
    fn default() -> Self {
        Self { iterations: 200, batch_size: 16, lr: 1e-4, optimizer: OptimizerKind::Adam, seed: 0 }
    }
}

/// Fine-tune a copy of θ on labelled target shots.
pub fn fewshot_adapt(task: &TaskModel, theta: &TaskParams, shots: &Domain, settings: &FewShotSettings) -> Result<TaskParams> {
    for class in 0..shots.signature.n_classes {
        if !shots.labels().contains(&class) {
            return Err(Error::MissingClass(class));
        }
    }
    let mut out = theta.clone();
    if settings.iterations == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut opt = Optimizer::new(settings.optimizer, settings.lr);
    let mut sampler = BatchSampler::new(shots.len(), settings.batch_size)?;
    for _ in 0..settings.iterations {
        let b = shots.batch(&sampler.next(&mut rng))?;
        let (_, g) = task.loss_and_grad(&out.values, &b)?;
        opt.step(&mut out.values, &g);
    }
    snap_f32(&mut out.values);
    Ok(out)
}

/// One evaluation result line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub run: String,
    pub seed: u64,
    pub domain: String,
    pub metric: String,
    pub value: f64,
}

/// Append records, one JSON object per line.
pub fn append_results(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{ImageShape, ShapeSignature};
    use crate::nets::ArchSpec;
    use proptest::prelude::*;
    use rand::Rng;

    fn table(pairs: &[(&str, f64)], clean: f64) -> ErrorTable {
        ErrorTable::new(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(), clean).unwrap()
    }

    #[test]
    fn metric_examples() {
        let f = table(&[("a", 0.2), ("b", 0.4)], 0.1);
        let erm = table(&[("a", 0.4), ("b", 0.4)], 0.1);
        assert_eq!(mce(&f, &f).unwrap(), 1.0);
        assert_eq!(rmce(&f, &f).unwrap(), 1.0);
        assert!((mce(&f, &erm).unwrap() - 0.75).abs() < 1e-15);
        let flat = table(&[("a", 0.1), ("b", 0.1)], 0.1);
        assert_eq!(rmce(&flat, &erm).unwrap(), 0.0);
        let zero = table(&[("a", 0.0), ("b", 0.4)], 0.0);
        assert!(matches!(mce(&f, &zero), Err(Error::UndefinedRatio { corruption, .. }) if corruption == "a"));
        let same = table(&[("a", 0.3), ("b", 0.1)], 0.1);
        assert!(matches!(rmce(&f, &same), Err(Error::UndefinedRatio { corruption, .. }) if corruption == "b"));
        assert!(ErrorTable::new(BTreeMap::from([("a".to_string(), 1.5)]), 0.0).is_err());
    }

    fn brute_force(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let n = a.nrows();
        let c = sq_cost(a, b);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| best = best.min(p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum()));
        (best / n as f64).sqrt()
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    fn points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn wasserstein_matches_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let a = points(&mut rng, 8, 2);
            let b = points(&mut rng, 8, 2);
            assert!((empirical_wasserstein(&a, &b).unwrap() - brute_force(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn wasserstein_translation_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = points(&mut rng, 12, 3);
        assert_eq!(empirical_wasserstein(&a, &a).unwrap(), 0.0);
        let t = ndarray::arr1(&[0.3, -1.2, 2.0]);
        let b = &a + &t;
        let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((empirical_wasserstein(&a, &b).unwrap() - norm).abs() < 1e-9);
    }

    #[test]
    fn transport_with_unequal_sizes() {
        // duplicating every point of b leaves the uniform measure unchanged
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = points(&mut rng, 6, 2);
        let b = points(&mut rng, 6, 2);
        let b2 = ndarray::concatenate(ndarray::Axis(0), &[b.view(), b.view()]).unwrap();
        let eq = empirical_wasserstein(&a, &b).unwrap();
        assert!((empirical_wasserstein(&a, &b2).unwrap() - eq).abs() < 1e-9);
        // a single point against a cloud: mean squared distance
        let p = ndarray::arr2(&[[0.0, 0.0]]);
        let expect = (b.rows().into_iter().map(|r| r.dot(&r)).sum::<f64>() / 6.0).sqrt();
        assert!((empirical_wasserstein(&p, &b).unwrap() - expect).abs() < 1e-12);
        // transport on equal sizes agrees with the assignment
        let c = sq_cost(&a, &b);
        assert!((transport_cost(&c) - assignment(&c).1 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_errors() {
        let a = Array2::<f64>::zeros((0, 2));
        let b = Array2::<f64>::zeros((3, 2));
        assert!(matches!(empirical_wasserstein(&a, &b), Err(Error::Empty(_))));
        assert!(matches!(empirical_wasserstein(&Array2::zeros((2, 3)), &b), Err(Error::Shape(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn wasserstein_is_a_metric(seed in any::<u64>(), n in 2usize..7, m in 2usize..7, k in 2usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = points(&mut rng, n, 2);
            let b = points(&mut rng, m, 2);
            let c = points(&mut rng, k, 2);
            let ab = empirical_wasserstein(&a, &b).unwrap();
            let ba = empirical_wasserstein(&b, &a).unwrap();
            let bc = empirical_wasserstein(&b, &c).unwrap();
            let ac = empirical_wasserstein(&a, &c).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!(ab >= 0.0);
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }

    fn sig() -> ShapeSignature {
        ShapeSignature { image: ImageShape::new(1, 3, 1), n_classes: 3 }
    }

    fn toy_domain(n: usize, seed: u64) -> Domain {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = (0..n * 3).map(|_| rng.gen_range(0.0..1.0f32)).collect();
        Domain::new(format!("t{seed}"), DomainKind::Target, sig(), images, (0..n).map(|i| i % 3).collect()).unwrap()
    }

    #[test]
    fn accuracy_of_label_leaking_model_is_one() {
        // Dense(3→3) identity | Tanh, Dense(3→3) identity: argmax follows the
        // largest input, which encodes the label
        let task = TaskModel::new(ArchSpec::ToyMlp { hidden: 3 }, sig()).unwrap();
        let mut theta = vec![0.0; task.param_count()];
        for i in 0..3 {
            theta[i * 3 + i] = 1.0;
            theta[12 + i * 3 + i] = 1.0;
        }
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let images = labels.iter().flat_map(|&y| (0..3).map(move |k| if k == y { 0.9 } else { 0.1 })).collect();
        let d = Domain::new("leak", DomainKind::Target, sig(), images, labels).unwrap();
        assert_eq!(accuracy(&task, &theta, &d).unwrap(), 1.0);
        // order invariance
        let rev: Vec<usize> = (0..30).rev().collect();
        assert_eq!(accuracy(&task, &theta, &d.subset("r", &rev).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn embeddings_round_trip_at_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let task = TaskModel::new(ArchSpec::ToyMlp { hidden: 4 }, sig()).unwrap();
        let theta = task.init_params(&mut ChaCha8Rng::seed_from_u64(0)).values;
        let doms = [toy_domain(5, 1), toy_domain(7, 2)];
        let path = dir.path().join("z.csv");
        assert_eq!(export_embeddings(&task, &theta, &doms, &path).unwrap(), 12);
        let rows = read_embeddings(&path).unwrap();
        assert_eq!(rows.len(), 12);
        assert!(rows.iter().all(|r| r.z.len() == 4));
        let z = task.embed(&theta, doms[1].range_batch(0, 7).unwrap().images).unwrap();
        for (k, r) in rows[5..].iter().enumerate() {
            assert_eq!(r.domain_id, "t2");
            assert_eq!(r.z, z.row(k).to_vec());
        }
    }

    #[test]
    fn fewshot_zero_iterations_and_missing_class() {
        let task = TaskModel::new(ArchSpec::ToyMlp { hidden: 4 }, sig()).unwrap();
        let theta = task.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let shots = select_shots(&toy_domain(30, 3), 2, 0).unwrap();
        assert_eq!(shots.len(), 6);
        let (picked, rest) = split_shots(&toy_domain(30, 3), 2, 0).unwrap();
        assert_eq!((picked.len(), rest.len()), (6, 24));
        assert_eq!(picked.images(), shots.images());
        let s0 = FewShotSettings { iterations: 0, ..Default::default() };
        assert_eq!(fewshot_adapt(&task, &theta, &shots, &s0).unwrap(), theta);
        let snapshot = theta.clone();
        let adapted = fewshot_adapt(&task, &theta, &shots, &FewShotSettings { iterations: 5, ..Default::default() }).unwrap();
        assert_eq!(theta, snapshot);
        assert_ne!(adapted, theta);
        let keep: Vec<usize> = (0..shots.len()).filter(|&i| shots.label(i) != 2).collect();
        let only01 = shots.subset("y", &keep).unwrap();
        assert!(matches!(fewshot_adapt(&task, &theta, &only01, &s0), Err(Error::MissingClass(2))));
    }
}
