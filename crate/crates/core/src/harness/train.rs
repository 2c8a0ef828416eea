use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::dataset::{generate_split, Split};
use super::grade::GRADES;
use super::metrics::{accuracy, macro_auc, macro_f1};
use super::model::{ModelConfig, ToyNet};
use super::protocol::{build_protocol, Protocol};
use super::synth::{default_domains, DomainSpec, SyntheticSample};
use crate::error::{ensure, Error, Result};
use crate::module::{named_parameters, zero_grad};
use crate::numerics::loss::{cross_entropy, softmax_rows};
use crate::numerics::norm::Mode;
use crate::numerics::optim::{adamw_step, step_lr, AdamWConfig, OptimizerState};
use crate::numerics::tensor::Tensor;
use crate::rng::{fnv1a, stream};

/// Learning rate used when only the plug-in branches are trained.
pub const LOW_RANK_LR: f64 = 5e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Protocol,
    pub domains: Vec<DomainSpec>,
    /// Held-out domains (DG) or training domains (SDG); one run each.
    pub pivots: Vec<String>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    /// Epochs between learning-rate halvings.
    pub lr_period: usize,
    /// Freeze the host network and train the branches at [`LOW_RANK_LR`].
    pub low_rank: bool,
    pub n_train: usize,
    pub n_test: usize,
    pub data_seed: u64,
    pub threads: usize,
    /// Random horizontal and vertical flips of training images.
    pub augment: bool,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let domains = default_domains();
        Self {
            mode: Protocol::Dg,
            pivots: domains.iter().map(|d| d.id.clone()).collect(),
            domains,
            seeds: (0..5).collect(),
            epochs: 50,
            batch_size: 32,
            optim: AdamWConfig::default(),
            lr_period: 100,
            low_rank: false,
            n_train: 600,
            n_test: 200,
            data_seed: 2024,
            threads: 1,
            augment: true,
            model: ModelConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 2, Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        ensure!(!self.seeds.is_empty(), Error::Config("seeds must not be empty".into()));
        ensure!(!self.pivots.is_empty(), Error::Config("held_out must name at least one domain".into()));
        ensure!(self.lr_period > 0, Error::Config("lr_period must be positive".into()));
        ensure!(self.n_train >= 2 && self.n_test >= 1, Error::Config("n_train must be >= 2 and n_test >= 1".into()));
        for d in &self.domains {
            d.validate()?;
        }
        let ids = self.domain_ids();
        for p in &self.pivots {
            let split = build_protocol(&ids, self.mode, p)?;
            if self.mode == Protocol::Dg {
                ensure!(
                    split.train.len() >= 2,
                    Error::Config(format!("DG needs at least two training domains, got {}", split.train.len()))
                );
            }
        }
        self.model.block.validate()
    }

    pub fn domain_ids(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.id.clone()).collect()
    }

    pub fn cell_name(&self) -> String {
        match self.model.cell {
            None => "plain".into(),
            Some((p, f)) => format!("{p}+{f}"),
        }
    }
}

/// Generated samples for every domain split.
#[derive(Clone, Debug, Default)]
pub struct DataBank {
    splits: HashMap<(String, Split), Vec<SyntheticSample>>,
}

impl DataBank {
    pub fn generate(config: &RunConfig) -> Result<Self> {
        let mut splits = HashMap::new();
        for (i, d) in config.domains.iter().enumerate() {
            for (split, n) in [(Split::Train, config.n_train), (Split::Test, config.n_test)] {
                let samples = generate_split(config.data_seed, d, i, split, n, config.model.image_size, config.threads)?;
                splits.insert((d.id.clone(), split), samples);
            }
        }
        Ok(Self { splits })
    }

    pub fn insert(&mut self, domain: &str, split: Split, samples: Vec<SyntheticSample>) {
        self.splits.insert((domain.to_string(), split), samples);
    }

    pub fn get(&self, domain: &str, split: Split) -> Result<&[SyntheticSample]> {
        self.splits
            .get(&(domain.to_string(), split))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("no {} data for domain `{domain}`", split.name())))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub run_id: String,
    pub seed: u64,
    pub protocol: Protocol,
    pub held_out: String,
    pub epoch: usize,
    pub split: String,
    pub acc: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub run_id: String,
    pub seed: u64,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub metrics: Vec<MetricRow>,
    pub losses: Vec<LossRow>,
}

impl MetricsReport {
    pub fn extend(&mut self, other: MetricsReport) {
        self.metrics.extend(other.metrics);
        self.losses.extend(other.losses);
    }

    pub fn metrics_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run_id", "seed", "protocol", "held_out", "epoch", "split", "acc", "macro_f1", "macro_auc"])?;
        for r in &self.metrics {
            w.write_record([
                r.run_id.clone(),
                r.seed.to_string(),
                r.protocol.to_string(),
                r.held_out.clone(),
                r.epoch.to_string(),
                r.split.clone(),
                format!("{:.6}", r.acc),
                format!("{:.6}", r.macro_f1),
                format!("{:.6}", r.macro_auc),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Contract(format!("csv buffer: {e}")))
    }

    pub fn loss_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run_id", "seed", "epoch", "loss"])?;
        for r in &self.losses {
            w.write_record([r.run_id.clone(), r.seed.to_string(), r.epoch.to_string(), format!("{:.9}", r.loss)])?;
        }
        w.into_inner().map_err(|e| Error::Contract(format!("csv buffer: {e}")))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = dir.join("metrics.csv");
        std::fs::write(&m, self.metrics_csv()?).map_err(|e| Error::io(&m, e))?;
        let l = dir.join("loss.csv");
        std::fs::write(&l, self.loss_csv()?).map_err(|e| Error::io(&l, e))
    }

    /// Mean test accuracy over seeds for one held-out domain.
    pub fn mean_acc(&self, held_out: &str) -> Option<f64> {
        let accs: Vec<f64> = self
            .metrics
            .iter()
            .filter(|r| r.held_out == held_out && r.split.starts_with("test"))
            .map(|r| r.acc)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

/// Stacks sample images into an `[N, 3, S, S]` tensor.
pub fn batch_tensor(samples: &[&SyntheticSample]) -> Result<Tensor> {
    flipped_batch(samples, &[])
}

/// Like [`batch_tensor`]; `flips[i] = (vertical, horizontal)` mirrors
/// sample `i`. Every channel of every image is standardized to zero mean
/// and unit variance.
pub fn flipped_batch(samples: &[&SyntheticSample], flips: &[(bool, bool)]) -> Result<Tensor> {
    let size = samples.first().map_or(0, |s| s.size);
    let mut data = Vec::with_capacity(samples.len() * 3 * size * size);
    for (i, s) in samples.iter().enumerate() {
        let (fv, fh) = flips.get(i).copied().unwrap_or_default();
        for plane in s.image.chunks(size * size) {
            let mean = plane.iter().sum::<f64>() / plane.len() as f64;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane.len() as f64;
            let inv = 1.0 / (var + INPUT_EPS).sqrt();
            for y in 0..size {
                let sy = if fv { size - 1 - y } else { y };
                let row = &plane[sy * size..(sy + 1) * size];
                let norm = |v: &f64| (v - mean) * inv;
                if fh {
                    data.extend(row.iter().rev().map(norm));
                } else {
                    data.extend(row.iter().map(norm));
                }
            }
        }
    }
    Tensor::new(&[samples.len(), 3, size, size], data)
}

const INPUT_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub acc: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
}

pub fn evaluate(model: &ToyNet, samples: &[SyntheticSample], batch_size: usize) -> Result<Evaluation> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut scores = Vec::with_capacity(samples.len() * GRADES);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SyntheticSample> = chunk.iter().collect();
        let logits = model.forward(&batch_tensor(&refs)?, Mode::Eval)?.detach();
        let classes = logits.shape()[1];
        let probs = softmax_rows(&logits.data(), classes);
        for row in probs.chunks(classes) {
            let best = (0..classes).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            preds.push(best);
        }
        scores.extend(probs);
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.grade as usize).collect();
    let classes = scores.len() / labels.len().max(1);
    Ok(Evaluation {
        acc: accuracy(&preds, &labels)?,
        macro_f1: macro_f1(&preds, &labels, classes)?,
        macro_auc: macro_auc(&scores, &labels, classes)?.value,
    })
}

/// Trained model and its metrics for one (pivot, seed) pair.
pub struct RunOutcome {
    pub model: ToyNet,
    pub report: MetricsReport,
}

pub fn train_one(config: &RunConfig, bank: &DataBank, pivot: &str, seed: u64) -> Result<RunOutcome> {
    let split = build_protocol(&config.domain_ids(), config.mode, pivot)?;
    let mut train: Vec<&SyntheticSample> = Vec::new();
    for d in &split.train {
        train.extend(bank.get(d, Split::Train)?);
    }
    let run_id = format!("{}-{}-{pivot}-s{seed}", config.cell_name(), config.mode);
    let model = ToyNet::new(&config.model, seed)?;
    let named = if config.low_rank {
        let host: Vec<String> = model.host_parameters().into_iter().map(|(n, _)| n).collect();
        named_parameters(&model).into_iter().filter(|(n, _)| !host.contains(n)).collect()
    } else {
        named_parameters(&model)
    };
    let (names, params): (Vec<String>, Vec<Tensor>) = named.into_iter().unzip();
    let base_lr = if config.low_rank { LOW_RANK_LR } else { config.optim.lr };
    let mut opt = OptimizerState::new(config.optim, &params);
    let mut shuffle = stream(seed ^ fnv1a(pivot) ^ 0x5EED);
    let mut report = MetricsReport::default();
    for epoch in 0..config.epochs {
        opt.config.lr = step_lr(epoch, base_lr, config.lr_period);
        train.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in train.chunks(config.batch_size).enumerate() {
            // batch statistics need at least two samples
            if chunk.len() < 2 {
                continue;
            }
            let flips: Vec<(bool, bool)> = if config.augment {
                chunk.iter().map(|_| (shuffle.random_bool(0.5), shuffle.random_bool(0.5))).collect()
            } else {
                Vec::new()
            };
            let x = flipped_batch(chunk, &flips)?;
            let labels: Vec<usize> = chunk.iter().map(|s| s.grade as usize).collect();
            zero_grad(&model);
            let loss = cross_entropy(&model.forward(&x, Mode::Train)?, &labels)?;
            let value = loss.item();
            ensure!(
                value.is_finite(),
                Error::Numeric(format!("{run_id}: non-finite loss {value} at epoch {epoch}, batch {b}"))
            );
            loss.backward()
                .map_err(|e| Error::Numeric(format!("{run_id}: epoch {epoch}, batch {b}: {e}")))?;
            adamw_step(&params, &names, &mut opt)?;
            total += value;
            batches += 1;
        }
        report.losses.push(LossRow {
            run_id: run_id.clone(),
            seed,
            epoch,
            loss: total / batches.max(1) as f64,
        });
    }
    for d in &split.test {
        let e = evaluate(&model, bank.get(d, Split::Test)?, config.batch_size)?;
        report.metrics.push(MetricRow {
            run_id: run_id.clone(),
            seed,
            protocol: config.mode,
            held_out: pivot.to_string(),
            epoch: config.epochs,
            split: format!("test:{d}"),
            acc: e.acc,
            macro_f1: e.macro_f1,
            macro_auc: e.macro_auc,
        });
    }
    Ok(RunOutcome { model, report })
}

/// Every pivot and seed of `config`, in order.
pub fn train(config: &RunConfig, bank: &DataBank) -> Result<MetricsReport> {
    config.validate()?;
    let mut report = MetricsReport::default();
    for pivot in &config.pivots {
        for &seed in &config.seeds {
            report.extend(train_one(config, bank, pivot, seed)?.report);
        }
    }
    Ok(report)
}
