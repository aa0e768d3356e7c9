//! The Adam training loop and post-training diagnostics.

use crate::data::{batches, DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::eval::ScoreMatrix;
use crate::model::{inference_scores, predict_primitives, total_loss, CscNet, Direction, LossConfig};
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, Parameterized, Real};
use crate::semantics::SemanticSpace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub mean_loss: f64,
}

/// Trains in place and returns one log entry per epoch.
///
/// `on_epoch` sees each entry as it is produced. A non-finite batch loss
/// or gradient aborts with its epoch and batch index before any update is
/// applied.
pub fn train<T: Real>(
    model: &mut CscNet<T>,
    split: &DatasetSplit,
    space: &SemanticSpace,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be >= 1".into()));
    }
    let mut state = AdamState::new(model, cfg.adam);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (mut sum, mut count) = (0.0, 0usize);
        for (b, batch) in batches(split, cfg.batch_size, cfg.seed, epoch as u64)?.iter().enumerate() {
            let mut g = Graph::new();
            let losses = total_loss(&mut g, model, batch, space, &split.catalog, &cfg.loss)?;
            let loss = g.scalar(losses.total)?.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            g.backward(losses.total)?;
            model.zero_grads();
            model.accumulate_grads(&g);
            if model.params().iter().any(|p| p.grad.iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            adam_step(model, &mut state)?;
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let entry = EpochLog {
            epoch,
            mean_loss: sum / count as f64,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// `epoch,mean_loss` CSV.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for e in log {
        out.push_str(&format!("{},{}\n", e.epoch, e.mean_loss));
    }
    out
}

/// Fraction of samples whose attribute and object are each predicted
/// correctly by the first-stage heads.
pub fn primitive_accuracy<T: Real>(model: &CscNet<T>, samples: &[Sample], space: &SemanticSpace) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let phis: Vec<&[f64]> = samples.iter().map(|s| s.feature.as_slice()).collect();
    let preds = predict_primitives(model, &phis, space)?;
    let n = samples.len() as f64;
    let attr = samples.iter().zip(&preds).filter(|(s, p)| s.attr == p.0).count() as f64 / n;
    let obj = samples.iter().zip(&preds).filter(|(s, p)| s.obj == p.1).count() as f64 / n;
    Ok((attr, obj))
}

/// Mean first-stage primitive scores, split by true and other classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreStats {
    pub mean_all: f64,
    pub mean_true: f64,
    pub mean_other: f64,
}

/// Statistics over the attribute head of A2O and the object head of O2A.
pub fn primitive_score_stats<T: Real>(model: &CscNet<T>, samples: &[Sample], space: &SemanticSpace) -> Result<ScoreStats> {
    let br = model.config.branches;
    let (mut all, mut n_all, mut tru, mut n_tru, mut other, mut n_other) = (0.0, 0usize, 0.0, 0usize, 0.0, 0usize);
    for chunk in samples.chunks(256) {
        let mut g = Graph::inference();
        let phi = model.features(&mut g, chunk.iter().map(|s| s.feature.as_slice()))?;
        let mut heads = Vec::new();
        if br.a2o {
            let c = model.cascade(&mut g, phi, space, Direction::AttrToObj, None)?;
            heads.push((c.primitive, chunk.iter().map(|s| s.attr).collect::<Vec<_>>()));
        }
        if br.o2a {
            let c = model.cascade(&mut g, phi, space, Direction::ObjToAttr, None)?;
            heads.push((c.primitive, chunk.iter().map(|s| s.obj).collect()));
        }
        for (v, truth) in heads {
            let (_, k) = g.shape(v)?;
            for (row, &t) in g.value(v)?.chunks(k).zip(&truth) {
                for (i, s) in row.iter().enumerate() {
                    let s = s.to_f64().unwrap_or(f64::NAN);
                    all += s;
                    n_all += 1;
                    if i == t {
                        tru += s;
                        n_tru += 1;
                    } else {
                        other += s;
                        n_other += 1;
                    }
                }
            }
        }
    }
    if n_all == 0 {
        return Err(Error::InvalidArgument("no cascade branch or no samples".into()));
    }
    let div = |a: f64, n: usize| if n == 0 { 0.0 } else { a / n as f64 };
    Ok(ScoreStats {
        mean_all: div(all, n_all),
        mean_true: div(tru, n_tru),
        mean_other: div(other, n_other),
    })
}

/// Fused scores of every test sample against the full catalog.
pub fn score_test_split<T: Real>(model: &CscNet<T>, split: &DatasetSplit, space: &SemanticSpace, beta: f64) -> Result<ScoreMatrix> {
    let phis: Vec<&[f64]> = split.test.iter().map(|s| s.feature.as_slice()).collect();
    let rows = inference_scores(model, &phis, space, &split.catalog, beta)?;
    let truths = split
        .test
        .iter()
        .map(|s| split.pair_index(s).ok_or_else(|| Error::Dataset("test pair missing from catalog".into())))
        .collect::<Result<Vec<_>>>()?;
    let unseen = split.catalog.seen_mask().iter().map(|s| !s).collect();
    ScoreMatrix::from_rows(&rows, truths, unseen)
}

/// Top-1 accuracy over the full catalog at zero bias, for unseen-pair
/// test samples only.
pub fn unseen_top1(sm: &ScoreMatrix) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (i, &t) in sm.truths().iter().enumerate() {
        if sm.unseen_mask()[t] {
            n += 1;
            if crate::model::argmax(sm.row(i)) == t {
                hit += 1;
            }
        }
    }
    if n == 0 { 0.0 } else { hit as f64 / n as f64 }
}
