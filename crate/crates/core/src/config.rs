//! Flat `key = value` run configuration with named presets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Domain, DomainKind, HyperParams, MetaGradMode, RelaxVariant, ShapeSignature};
use crate::error::{Error, Result};
use crate::eval::FewShotSettings;
use crate::ingest::{load_source, SourceOptions};
use crate::metaloop::TrainSchedule;
use crate::nets::{ArchSpec, ArchTag, Bandwidth, Divergence, WaeArch};
use crate::optim::OptimizerKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Published digits setup: full-width convnet, 10,000 iterations.
    Digits,
    /// Narrow convnet and short schedule for single-core runs.
    Desk,
}

crate::datamodel::str_enum!(Preset, "preset", Digits => "digits", Desk => "desk");

/// Every run setting. Field names are the configuration keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub hyper: HyperParams,
    pub schedule: TrainSchedule,
    pub arch: ArchSpec,
    pub wae: WaeArchConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

/// WAE settings independent of the input size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaeArchConfig {
    pub hidden: usize,
    pub latent: usize,
    pub critic_hidden: usize,
    pub divergence: Divergence,
    pub bandwidth: Bandwidth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    /// First samples of the dataset that are loaded.
    pub limit: usize,
    /// Leading samples used for training; the rest are held out.
    pub train_size: usize,
    pub image_size: usize,
    pub rgb: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub distance_subsample: usize,
    pub distance_seed: u64,
    pub shift_seed: u64,
    pub shots: usize,
    pub fewshot: FewShotSettings,
}

/// `(key, symbol, description)` of every configuration key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("preset", "", "base preset: digits | desk (must come first)"),
    ("alpha", "α", "weight of the semantic consistency term"),
    ("beta", "β", "weight of the relaxation term"),
    ("gamma", "γ", "ascent step size"),
    ("t_adv", "T_adv", "ascent steps per augmented batch"),
    ("k_domains", "K", "number of augmented domains (0 = ERM)"),
    ("eta", "η", "task learning rate (inner and outer)"),
    ("lambda", "λ", "weight of the WAE latent divergence"),
    ("inner_steps", "", "meta-train gradient steps"),
    ("meta_grad_mode", "", "first_order | full_second_order"),
    ("relax_variant", "", "recon_of_xplus | recon_delta"),
    ("seed", "", "master random seed"),
    ("iterations", "T", "total task iterations"),
    ("batch_size", "", "task minibatch size"),
    ("optimizer", "", "outer optimizer: sgd | nesterov | adam"),
    ("domain_fraction", "", "|S⁺_k| as a fraction of |S|"),
    ("wae_epochs", "", "WAE pre-training epochs"),
    ("wae_lr", "", "WAE learning rate"),
    ("wae_batch_size", "", "WAE minibatch size"),
    ("wae_retrain_fraction", "", "WAE re-training epochs per round, as a fraction of wae_epochs"),
    ("wae_holdout_fraction", "", "share of the source held out for WAE monitoring"),
    ("arch", "", "task network: digits_convnet | toy_mlp"),
    ("conv1", "", "filters of the first conv stage"),
    ("conv2", "", "filters of the second conv stage"),
    ("fc", "", "width of the fully connected layers (embedding size)"),
    ("kernel", "", "conv kernel size"),
    ("hidden", "", "toy_mlp embedding size"),
    ("wae_hidden", "", "WAE hidden width"),
    ("wae_latent", "", "WAE latent size"),
    ("wae_critic_hidden", "", "latent critic hidden width"),
    ("divergence", "D_e", "latent divergence: gan | mmd"),
    ("bandwidth", "", "MMD kernel bandwidth: median or a number"),
    ("dataset", "", "source dataset"),
    ("data_dir", "", "directory holding the vendored datasets"),
    ("limit", "", "samples loaded from the dataset"),
    ("train_size", "", "leading samples used for training"),
    ("image_size", "", "image side after resizing"),
    ("rgb", "", "duplicate gray channels to RGB"),
    ("distance_subsample", "", "embeddings per domain for Wasserstein distances"),
    ("distance_seed", "", "subsample seed for Wasserstein distances"),
    ("shift_seed", "", "seed of the synthetic shift suite"),
    ("shots", "", "labelled target samples per class for adaptation"),
    ("fewshot_iterations", "", "adaptation iterations"),
    ("fewshot_batch_size", "", "adaptation minibatch size"),
    ("fewshot_lr", "", "adaptation learning rate"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Digits)
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let digits = Self {
            preset: Preset::Digits,
            hyper: HyperParams::default(),
            schedule: TrainSchedule::default(),
            arch: ArchSpec::digits(),
            wae: WaeArchConfig { hidden: 400, latent: 20, critic_hidden: 128, divergence: Divergence::Gan, bandwidth: Bandwidth::Median },
            data: DataConfig {
                dataset: "mnist".into(),
                data_dir: "data".into(),
                limit: 10_000,
                train_size: 8_000,
                image_size: 32,
                rgb: true,
            },
            eval: EvalConfig {
                distance_subsample: 256,
                distance_seed: 0,
                shift_seed: 7,
                shots: 10,
                fewshot: FewShotSettings::default(),
            },
        };
        match p {
            Preset::Digits => digits,
            Preset::Desk => {
                let mut c = digits;
                c.preset = Preset::Desk;
                c.arch = ArchSpec::DigitsConvnet { conv1: 8, conv2: 16, fc: 64, kernel: 5 };
                c.hyper.eta = 1e-3;
                c.hyper.gamma = DESK_GAMMA;
                c.schedule.iterations = 2_000;
                c.schedule.wae.epochs = 5;
                c
            }
        }
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let h = &mut self.hyper;
        let s = &mut self.schedule;
        match key.trim() {
            "preset" => {
                let p: Preset = v.parse()?;
                if p != self.preset {
                    return Err(Error::config("preset", "must be the first setting"));
                }
            }
            "alpha" => h.alpha = parse(key, v)?,
            "beta" => h.beta = parse(key, v)?,
            "gamma" => h.gamma = parse(key, v)?,
            "t_adv" => h.t_adv = parse(key, v)?,
            "k_domains" => h.k_domains = parse(key, v)?,
            "eta" => h.eta = parse(key, v)?,
            "lambda" => h.lambda = parse(key, v)?,
            "inner_steps" => h.inner_steps = parse(key, v)?,
            "meta_grad_mode" => h.meta_grad_mode = v.parse::<MetaGradMode>()?,
            "relax_variant" => h.relax_variant = v.parse::<RelaxVariant>()?,
            "seed" => h.seed = parse(key, v)?,
            "iterations" => s.iterations = parse(key, v)?,
            "batch_size" => s.batch_size = parse(key, v)?,
            "optimizer" => s.optimizer = v.parse::<OptimizerKind>()?,
            "domain_fraction" => s.domain_fraction = parse(key, v)?,
            "wae_epochs" => s.wae.epochs = parse(key, v)?,
            "wae_lr" => s.wae.lr = parse(key, v)?,
            "wae_batch_size" => s.wae.batch_size = parse(key, v)?,
            "wae_retrain_fraction" => s.wae.retrain_fraction = parse(key, v)?,
            "wae_holdout_fraction" => s.wae.holdout_fraction = parse(key, v)?,
            "arch" => {
                self.arch = match v.parse::<ArchTag>()? {
                    ArchTag::DigitsConvnet if self.arch.tag() == ArchTag::DigitsConvnet => self.arch.clone(),
                    ArchTag::DigitsConvnet => ArchSpec::digits(),
                    ArchTag::ToyMlp => ArchSpec::ToyMlp { hidden: 8 },
                }
            }
            k @ ("conv1" | "conv2" | "fc" | "kernel") => {
                let n: usize = parse(k, v)?;
                let ArchSpec::DigitsConvnet { conv1, conv2, fc, kernel } = &mut self.arch else {
                    return Err(Error::config(k, "only applies to arch = digits_convnet"));
                };
                *match k {
                    "conv1" => conv1,
                    "conv2" => conv2,
                    "fc" => fc,
                    _ => kernel,
                } = n;
            }
            "hidden" => {
                let ArchSpec::ToyMlp { hidden } = &mut self.arch else {
                    return Err(Error::config("hidden", "only applies to arch = toy_mlp"));
                };
                *hidden = parse(key, v)?;
            }
            "wae_hidden" => self.wae.hidden = parse(key, v)?,
            "wae_latent" => self.wae.latent = parse(key, v)?,
            "wae_critic_hidden" => self.wae.critic_hidden = parse(key, v)?,
            "divergence" => self.wae.divergence = v.parse()?,
            "bandwidth" => {
                self.wae.bandwidth = match v {
                    "median" => Bandwidth::Median,
                    _ => Bandwidth::Fixed(parse(key, v)?),
                }
            }
            "dataset" => self.data.dataset = v.to_string(),
            "data_dir" => self.data.data_dir = v.into(),
            "limit" => self.data.limit = parse(key, v)?,
            "train_size" => self.data.train_size = parse(key, v)?,
            "image_size" => self.data.image_size = parse(key, v)?,
            "rgb" => self.data.rgb = parse_bool(key, v)?,
            "distance_subsample" => self.eval.distance_subsample = parse(key, v)?,
            "distance_seed" => self.eval.distance_seed = parse(key, v)?,
            "shift_seed" => self.eval.shift_seed = parse(key, v)?,
            "shots" => self.eval.shots = parse(key, v)?,
            "fewshot_iterations" => self.eval.fewshot.iterations = parse(key, v)?,
            "fewshot_batch_size" => self.eval.fewshot.batch_size = parse(key, v)?,
            "fewshot_lr" => self.eval.fewshot.lr = parse(key, v)?,
            other => return Err(Error::Unknown { what: "configuration key", name: other.to_string() }),
        }
        Ok(())
    }

    /// Parse configuration text. A leading `preset = …` line selects the
    /// base; otherwise the digits preset is used.
    pub fn parse_text(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = match pairs.first() {
            Some((k, v)) if k == "preset" => Self::preset(v.parse()?),
            _ => Self::default(),
        };
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Apply `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o, "override must have the form key=value"))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Resolved settings as `key → value`, in key-table order on output.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let h = &self.hyper;
        let s = &self.schedule;
        let mut out = vec![
            ("preset", self.preset.to_string()),
            ("alpha", h.alpha.to_string()),
            ("beta", h.beta.to_string()),
            ("gamma", h.gamma.to_string()),
            ("t_adv", h.t_adv.to_string()),
            ("k_domains", h.k_domains.to_string()),
            ("eta", h.eta.to_string()),
            ("lambda", h.lambda.to_string()),
            ("inner_steps", h.inner_steps.to_string()),
            ("meta_grad_mode", h.meta_grad_mode.to_string()),
            ("relax_variant", h.relax_variant.to_string()),
            ("seed", h.seed.to_string()),
            ("iterations", s.iterations.to_string()),
            ("batch_size", s.batch_size.to_string()),
            ("optimizer", s.optimizer.to_string()),
            ("domain_fraction", s.domain_fraction.to_string()),
            ("wae_epochs", s.wae.epochs.to_string()),
            ("wae_lr", s.wae.lr.to_string()),
            ("wae_batch_size", s.wae.batch_size.to_string()),
            ("wae_retrain_fraction", s.wae.retrain_fraction.to_string()),
            ("wae_holdout_fraction", s.wae.holdout_fraction.to_string()),
            ("arch", self.arch.tag().to_string()),
        ];
        match self.arch {
            ArchSpec::DigitsConvnet { conv1, conv2, fc, kernel } => out.extend([
                ("conv1", conv1.to_string()),
                ("conv2", conv2.to_string()),
                ("fc", fc.to_string()),
                ("kernel", kernel.to_string()),
            ]),
            ArchSpec::ToyMlp { hidden } => out.push(("hidden", hidden.to_string())),
        }
        out.extend([
            ("wae_hidden", self.wae.hidden.to_string()),
            ("wae_latent", self.wae.latent.to_string()),
            ("wae_critic_hidden", self.wae.critic_hidden.to_string()),
            ("divergence", self.wae.divergence.to_string()),
            (
                "bandwidth",
                match self.wae.bandwidth {
                    Bandwidth::Median => "median".to_string(),
                    Bandwidth::Fixed(b) => b.to_string(),
                },
            ),
            ("dataset", self.data.dataset.clone()),
            ("data_dir", self.data.data_dir.display().to_string()),
            ("limit", self.data.limit.to_string()),
            ("train_size", self.data.train_size.to_string()),
            ("image_size", self.data.image_size.to_string()),
            ("rgb", self.data.rgb.to_string()),
            ("distance_subsample", self.eval.distance_subsample.to_string()),
            ("distance_seed", self.eval.distance_seed.to_string()),
            ("shift_seed", self.eval.shift_seed.to_string()),
            ("shots", self.eval.shots.to_string()),
            ("fewshot_iterations", self.eval.fewshot.iterations.to_string()),
            ("fewshot_batch_size", self.eval.fewshot.batch_size.to_string()),
            ("fewshot_lr", self.eval.fewshot.lr.to_string()),
        ]);
        out
    }

    /// Training source and the held-out remainder of the loaded samples.
    pub fn load_data(&self) -> Result<(Domain, Domain)> {
        let all = load_source(&self.data.dataset, self.data.limit, &self.source_options())?;
        if self.data.train_size == 0 || self.data.train_size >= all.len() {
            return Err(Error::config("train_size", format!("must be in 1..{}", all.len())));
        }
        let train: Vec<usize> = (0..self.data.train_size).collect();
        let rest: Vec<usize> = (self.data.train_size..all.len()).collect();
        let mut heldout = all.subset(format!("{}-heldout", self.data.dataset), &rest)?;
        heldout.kind = DomainKind::Target;
        Ok((all.subset(self.data.dataset.clone(), &train)?, heldout))
    }

    pub fn source_options(&self) -> SourceOptions {
        SourceOptions { data_dir: self.data.data_dir.clone(), size: self.data.image_size, rgb: self.data.rgb }
    }

    pub fn wae_arch(&self, input_dim: usize) -> WaeArch {
        WaeArch {
            input_dim,
            hidden: self.wae.hidden,
            latent: self.wae.latent,
            critic_hidden: self.wae.critic_hidden,
            divergence: self.wae.divergence,
            bandwidth: self.wae.bandwidth,
        }
    }

    /// Check every field that has a restricted domain.
    pub fn validate(&self, sig: &ShapeSignature) -> Result<()> {
        self.hyper.clone().validate(sig)?;
        if self.schedule.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.schedule.domain_fraction > 0.0 && self.schedule.domain_fraction.is_finite()) {
            return Err(Error::config("domain_fraction", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.schedule.wae.holdout_fraction) {
            return Err(Error::config("wae_holdout_fraction", "must be in [0, 1)"));
        }
        if self.data.train_size == 0 || self.data.train_size >= self.data.limit {
            return Err(Error::config("train_size", format!("must be in 1..{}", self.data.limit)));
        }
        if self.eval.fewshot.batch_size == 0 {
            return Err(Error::config("fewshot_batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

/// Desk-preset ascent step, sized so that the relaxation gradient under
/// β = 2000 does not saturate pixels within a few steps.
pub const DESK_GAMMA: f64 = 0.01;

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `key = value`"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
