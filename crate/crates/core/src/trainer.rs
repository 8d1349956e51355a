//! Mini-batch Adam training with early stopping, evaluation, and the λ sweep.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::Span;
use crate::corpus::Instance;
use crate::error::{Error, Result};
use crate::layers::{EncoderMode, FeatureConfig, GateControl};
use crate::metrics::{skip_stats, span_f1, EvalReport};
use crate::model::{LossBreakdown, ModelConfig, ModelParams, Tagger};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lr: f64,
    pub hidden_dim: usize,
    pub pos_dim: usize,
    pub pct_dim: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub mode: EncoderMode,
    pub constrained_decoding: bool,
    /// Stop as soon as dev F1 reaches this value.
    pub target_f1: Option<f64>,
    /// Dimension of the seeded random word vectors used when no embedding
    /// file is given.
    pub random_embedding_dim: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 0.001,
            hidden_dim: 50,
            pos_dim: 25,
            pct_dim: 5,
            lambda: 0.1,
            batch_size: 16,
            max_epochs: 100,
            patience: 25,
            grad_clip_norm: 5.0,
            seed: 1,
            mode: EncoderMode::Skip,
            constrained_decoding: false,
            target_f1: None,
            random_embedding_dim: 50,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::InvalidConfig {
        key: key.to_string(),
        message: format!("`{value}`: {e}"),
    })
}

impl TrainingConfig {
    /// Set one field by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr" => self.lr = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "pos_dim" => self.pos_dim = parse_value(key, value)?,
            "pct_dim" => self.pct_dim = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "grad_clip_norm" => self.grad_clip_norm = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "mode" => self.mode = parse_value(key, value)?,
            "constrained_decoding" => self.constrained_decoding = parse_value(key, value)?,
            "target_f1" => {
                self.target_f1 = match value {
                    "none" | "" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "random_embedding_dim" => self.random_embedding_dim = parse_value(key, value)?,
            other => return Err(Error::UnknownConfigKey(other.to_string())),
        }
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::InvalidConfig {
                key: format!("line {}", i + 1),
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(s, "pos_dim = {}", self.pos_dim);
        let _ = writeln!(s, "pct_dim = {}", self.pct_dim);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "grad_clip_norm = {}", self.grad_clip_norm);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "constrained_decoding = {}", self.constrained_decoding);
        match self.target_f1 {
            Some(f) => {
                let _ = writeln!(s, "target_f1 = {f}");
            }
            None => {
                let _ = writeln!(s, "target_f1 = none");
            }
        }
        let _ = writeln!(s, "random_embedding_dim = {}", self.random_embedding_dim);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::InvalidConfig {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be > 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be > 0");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm", "must be > 0");
        }
        if self.random_embedding_dim == 0 {
            return bad("random_embedding_dim", "must be > 0");
        }
        self.feature_config(1).validate()
    }

    pub fn feature_config(&self, word_dim: usize) -> FeatureConfig {
        FeatureConfig {
            word_dim,
            pos_dim: self.pos_dim,
            pct_dim: self.pct_dim,
            hidden_dim: self.hidden_dim,
        }
    }

    pub fn model_config(&self, word_dim: usize) -> ModelConfig {
        ModelConfig {
            features: self.feature_config(word_dim),
            mode: self.mode,
            lambda: self.lambda,
            seed: self.seed,
            constrained_decoding: self.constrained_decoding,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(lr: f64, like: &ModelParams) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// Rescale so the global L2 norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale_assign(max_norm / norm);
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_crf: f64,
    pub train_skip: f64,
    pub dev_f1: f64,
    pub dev_tokens_skipped: usize,
    pub dev_tokens: usize,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Tagger with the best-dev parameters.
    pub tagger: Tagger,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

/// Span F1 of `tagger` on `instances`, with skip statistics in skip mode.
pub fn evaluate(tagger: &Tagger, instances: &[Instance]) -> Result<EvalReport> {
    let preds = instances
        .par_iter()
        .map(|i| tagger.predict(i))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<Vec<Span>> = instances.iter().map(Instance::gold_spans).collect();
    let pred: Vec<Vec<Span>> = preds.iter().map(|p| p.spans.clone()).collect();
    let mut report = span_f1(&gold, &pred)?;
    if tagger.config.mode == EncoderMode::Skip {
        let traces: Vec<_> = preds
            .iter()
            .map(|p| p.trace.clone().expect("skip mode trace"))
            .collect();
        let golds: Vec<_> = instances.iter().map(|i| i.gold.clone()).collect();
        let tokens: Vec<_> = instances.iter().map(|i| i.tokens.clone()).collect();
        report.skip = Some(skip_stats(&traces, &golds, &tokens)?);
    }
    Ok(report)
}

/// Summed loss and gradients of a batch. Items run in parallel; the sum is
/// taken in batch order so the result does not depend on the thread count.
pub fn batch_gradients(
    tagger: &Tagger,
    batch: &[&Instance],
    control: &GateControl,
) -> Result<(LossBreakdown, ModelParams)> {
    let parts = batch
        .par_iter()
        .map(|i| tagger.loss_and_grads(i, control))
        .collect::<Result<Vec<_>>>()?;
    let mut loss = LossBreakdown::default();
    let mut grads = tagger.params.zeros_like();
    for (l, g) in &parts {
        loss.total += l.total;
        loss.crf += l.crf;
        loss.skip += l.skip;
        loss.remained += l.remained;
        loss.tokens += l.tokens;
        grads.add_assign(g);
    }
    Ok((loss, grads))
}

pub fn train(cfg: &TrainingConfig, tagger: Tagger, train_set: &[Instance], dev: &[Instance]) -> Result<TrainOutcome> {
    train_with_control(cfg, tagger, train_set, dev, &GateControl::Learned, |_| {})
}

/// Training loop with an explicit gate policy for the loss and a per-epoch
/// callback. An empty dev set selects on the training set.
pub fn train_with_control(
    cfg: &TrainingConfig,
    mut tagger: Tagger,
    train_set: &[Instance],
    dev: &[Instance],
    control: &GateControl,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let dev = if dev.is_empty() { train_set } else { dev };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_5407);
    let mut adam = Adam::new(cfg.lr, &tagger.params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, tagger.params.clone());
    let mut stale = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = batch_gradients(&tagger, &batch, control)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("batch loss {}", loss.total),
                });
            }
            grads.scale_assign(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: "non-finite gradient".into(),
                });
            }
            clip_global_norm(&mut grads, cfg.grad_clip_norm);
            adam.step(&mut tagger.params, &grads);
            sums.total += loss.total;
            sums.crf += loss.crf;
            sums.skip += loss.skip;
        }
        if !tagger.params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: "non-finite parameters".into(),
            });
        }
        let report = evaluate(&tagger, dev)?;
        let n = train_set.len() as f64;
        let f1 = report.overall.f1;
        let improved = f1 > best.0;
        if improved {
            best = (f1, epoch, tagger.params.clone());
            stale = 0;
        } else {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss: sums.total / n,
            train_crf: sums.crf / n,
            train_skip: sums.skip / n,
            dev_f1: f1,
            dev_tokens_skipped: report.skip.as_ref().map_or(0, |s| s.tokens_skipped),
            dev_tokens: dev.iter().map(Instance::len).sum(),
            improved,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (crf {:.4}, skip {:.3}) dev F1 {:.4}",
            record.train_loss,
            record.train_crf,
            record.train_skip,
            f1
        );
        on_epoch(&record);
        history.push(record);
        if cfg.target_f1.is_some_and(|t| f1 >= t) || stale >= cfg.patience {
            break;
        }
    }
    let (best_dev_f1, best_epoch, params) = best;
    tagger.params = params;
    Ok(TrainOutcome {
        tagger,
        history,
        best_epoch,
        best_dev_f1,
    })
}

/// Values `start, start + step, …, end`, computed from integer step counts.
pub fn lambda_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() || end < start || start < 0.0 {
        return Err(Error::InvalidConfig {
            key: "grid".into(),
            message: format!("empty or invalid grid {start}..{end} step {step}"),
        });
    }
    let n = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|i| {
            let v = start + i as f64 * step;
            (v * 1e10).round() / 1e10
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    /// `None` for the plain-mode baseline.
    pub lambda: Option<f64>,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SweepRow {
    pub fn new(label: impl Into<String>, lambda: Option<f64>, scores: Vec<f64>) -> Self {
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let std = if scores.len() < 2 {
            0.0
        } else {
            (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        SweepRow {
            label: label.into(),
            lambda,
            scores,
            mean,
            std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Index into `rows` of the highest mean.
    pub best: usize,
    /// Index into `rows` of the median mean (lower middle for even counts).
    pub median: usize,
    pub baseline: Option<SweepRow>,
}

impl SweepReport {
    pub fn from_rows(rows: Vec<SweepRow>, baseline: Option<SweepRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidConfig {
                key: "grid".into(),
                message: "no sweep settings".into(),
            });
        }
        let mut by_mean: Vec<usize> = (0..rows.len()).collect();
        by_mean.sort_by(|&a, &b| rows[a].mean.total_cmp(&rows[b].mean).then(a.cmp(&b)));
        let best = rows
            .iter()
            .enumerate()
            .fold(0, |bi, (i, r)| if r.mean > rows[bi].mean { i } else { bi });
        let median = by_mean[(rows.len() - 1) / 2];
        Ok(SweepReport {
            rows,
            best,
            median,
            baseline,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>5} {:>9} {:>9}", "setting", "runs", "mean F1", "std");
        let line = |s: &mut String, r: &SweepRow, mark: &str| {
            let _ = writeln!(
                s,
                "{:<12} {:>5} {:>9.2} {:>9.2} {}",
                r.label,
                r.scores.len(),
                100.0 * r.mean,
                100.0 * r.std,
                mark
            );
        };
        if let Some(b) = &self.baseline {
            line(&mut s, b, "");
        }
        for (i, r) in self.rows.iter().enumerate() {
            let mark = match (i == self.best, i == self.median) {
                (true, true) => "best median",
                (true, false) => "best",
                (false, true) => "median",
                _ => "",
            };
            line(&mut s, r, mark);
        }
        let b = &self.rows[self.best];
        let m = &self.rows[self.median];
        let _ = writeln!(s, "best: {} {:.2} ± {:.2}", b.label, 100.0 * b.mean, 100.0 * b.std);
        let _ = writeln!(s, "median: {} {:.2} ± {:.2}", m.label, 100.0 * m.mean, 100.0 * m.std);
        s
    }
}

/// Run `runner(lambda, seed)` for every grid value and `runs` seeds
/// (`base_seed + r`, shared across λ). Runs execute in parallel.
pub fn sweep<F>(grid: &[f64], runs: usize, base_seed: u64, runner: F) -> Result<SweepReport>
where
    F: Fn(f64, u64) -> Result<f64> + Sync,
{
    if grid.is_empty() || runs == 0 {
        return Err(Error::InvalidConfig {
            key: "grid".into(),
            message: "sweep needs at least one setting and one run".into(),
        });
    }
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| (0..runs as u64).map(move |r| (g, r)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(g, r)| runner(grid[g], base_seed + r))
        .collect::<Result<Vec<f64>>>()?;
    let rows = grid
        .iter()
        .enumerate()
        .map(|(g, &l)| SweepRow::new(format!("λ={l:.2}"), Some(l), scores[g * runs..(g + 1) * runs].to_vec()))
        .collect();
    SweepReport::from_rows(rows, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_fifty_values() {
        let g = lambda_grid(0.02, 1.0, 0.02).unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 0.02);
        assert_eq!(g[2], 0.06);
        assert_eq!(*g.last().unwrap(), 1.0);
    }

    #[test]
    fn bad_grids() {
        assert!(lambda_grid(0.5, 0.1, 0.02).is_err());
        assert!(lambda_grid(0.1, 0.5, 0.0).is_err());
    }

    #[test]
    fn single_run_has_zero_std() {
        let r = sweep(&[0.1, 0.2], 1, 0, |l, _| Ok(l)).unwrap();
        assert!(r.rows.iter().all(|row| row.std == 0.0));
        assert_eq!(r.best, 1);
    }

    #[test]
    fn median_is_lower_middle_row() {
        let rows = [0.3, 0.1, 0.4, 0.2]
            .iter()
            .map(|&m| SweepRow::new(format!("{m}"), Some(m), vec![m]))
            .collect();
        let r = SweepReport::from_rows(rows, None).unwrap();
        assert_eq!(r.best, 2);
        assert_eq!(r.median, 3);
    }

    #[test]
    fn sample_std() {
        let row = SweepRow::new("x", None, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(row.mean, 2.5);
        assert!((row.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let cfg = TrainingConfig::parse("# comment\nlambda = 0.3\nmode = plain\n").unwrap();
        assert_eq!(cfg.lambda, 0.3);
        assert_eq!(cfg.mode, EncoderMode::Plain);
        assert_eq!(TrainingConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(matches!(TrainingConfig::parse("nope = 1"), Err(Error::UnknownConfigKey(k)) if k == "nope"));
        assert!(matches!(
            TrainingConfig::parse("lr = -1"),
            Err(Error::InvalidConfig { .. })
        ));
        assert!(matches!(
            TrainingConfig::parse("lr = abc"),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut p = ModelParams::init(&FeatureConfig::new(3), 4, 3, 1);
        p.scale_assign(100.0);
        let before = clip_global_norm(&mut p, 5.0);
        assert!(before > 5.0);
        assert!(p.global_norm() <= 5.0 + 1e-9);
    }
}
