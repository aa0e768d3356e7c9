//! Generalized seen/unseen evaluation with a calibration-bias sweep.
//!
//! A scalar bias is added to every unseen pair's score; sweeping it trades
//! seen accuracy for unseen accuracy. The report keeps the best seen and
//! unseen accuracies on that curve, the best harmonic mean, and the area
//! under the seen-vs-unseen curve.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::argmax;

/// Default number of uniform grid biases.
pub const DEFAULT_BIASES: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Vec<f64>,
    n_pairs: usize,
    truths: Vec<usize>,
    unseen_mask: Vec<bool>,
}

impl ScoreMatrix {
    /// `scores` is row-major, one row of `unseen_mask.len()` per truth.
    pub fn new(scores: Vec<f64>, truths: Vec<usize>, unseen_mask: Vec<bool>) -> Result<Self> {
        let n_pairs = unseen_mask.len();
        if n_pairs == 0 {
            return Err(Error::Eval("score matrix has no pairs".into()));
        }
        if scores.len() != truths.len() * n_pairs {
            return Err(Error::Eval(format!(
                "{} scores for {} samples x {n_pairs} pairs",
                scores.len(),
                truths.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Eval(format!("non-finite score at sample {}, pair {}", i / n_pairs, i % n_pairs)));
        }
        if let Some(i) = truths.iter().position(|&t| t >= n_pairs) {
            return Err(Error::Eval(format!("sample {i} truth {} out of range", truths[i])));
        }
        Ok(ScoreMatrix {
            scores,
            n_pairs,
            truths,
            unseen_mask,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], truths: Vec<usize>, unseen_mask: Vec<bool>) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| r.len() != unseen_mask.len()) {
            return Err(Error::Eval(format!("row {i} has {} scores, expected {}", rows[i].len(), unseen_mask.len())));
        }
        Self::new(rows.concat(), truths, unseen_mask)
    }

    pub fn n_samples(&self) -> usize {
        self.truths.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.n_pairs..(i + 1) * self.n_pairs]
    }

    pub fn truths(&self) -> &[usize] {
        &self.truths
    }

    pub fn unseen_mask(&self) -> &[bool] {
        &self.unseen_mask
    }

    /// `max score − min score` over the whole matrix.
    pub fn span(&self) -> f64 {
        let (lo, hi) = self
            .scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if lo.is_finite() { hi - lo } else { 0.0 }
    }

    fn group_sizes(&self) -> Result<(usize, usize)> {
        let unseen = self.truths.iter().filter(|&&t| self.unseen_mask[t]).count();
        let seen = self.truths.len() - unseen;
        if seen == 0 {
            return Err(Error::Eval("no test sample of a seen pair".into()));
        }
        if unseen == 0 {
            return Err(Error::Eval("no test sample of an unseen pair".into()));
        }
        Ok((seen, unseen))
    }
}

/// Seen and unseen accuracy with `bias` added to unseen-pair scores.
pub fn accuracy_at_bias(sm: &ScoreMatrix, bias: f64) -> Result<(f64, f64)> {
    let (n_seen, n_unseen) = sm.group_sizes()?;
    let mut row = vec![0.0; sm.n_pairs];
    let (mut hit_seen, mut hit_unseen) = (0usize, 0usize);
    for (i, &t) in sm.truths.iter().enumerate() {
        for ((r, &s), &u) in row.iter_mut().zip(sm.row(i)).zip(&sm.unseen_mask) {
            *r = if u { s + bias } else { s };
        }
        if argmax(&row) == t {
            if sm.unseen_mask[t] {
                hit_unseen += 1;
            } else {
                hit_seen += 1;
            }
        }
    }
    Ok((hit_seen as f64 / n_seen as f64, hit_unseen as f64 / n_unseen as f64))
}

/// The sweep: `n_biases` uniform points over `[−Δ, Δ]` plus `±(Δ + 1)`,
/// ascending. `Δ + 1` always pushes every unseen score past every seen one.
pub fn bias_grid(sm: &ScoreMatrix, n_biases: usize) -> Result<Vec<f64>> {
    if n_biases < 2 {
        return Err(Error::Eval(format!("need at least 2 biases, got {n_biases}")));
    }
    let delta = sm.span();
    let mut grid = Vec::with_capacity(n_biases + 2);
    grid.push(-(delta + 1.0));
    grid.extend((0..n_biases).map(|i| -delta + 2.0 * delta * i as f64 / (n_biases - 1) as f64));
    grid.push(delta + 1.0);
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub bias: f64,
    pub seen_acc: f64,
    pub unseen_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub seen: f64,
    pub unseen: f64,
    pub hm: f64,
    pub auc: f64,
    pub curve: Vec<CurvePoint>,
}

pub fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u > 0.0 { 2.0 * s * u / (s + u) } else { 0.0 }
}

/// Trapezoidal area of seen accuracy over unseen accuracy. Points sharing
/// an unseen accuracy collapse to their best seen accuracy.
pub fn curve_auc(curve: &[CurvePoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.unseen_acc, p.seen_acc)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.dedup_by(|later, kept| later.0 == kept.0);
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

pub fn evaluate(sm: &ScoreMatrix, n_biases: usize) -> Result<EvalReport> {
    let grid = bias_grid(sm, n_biases)?;
    let curve = grid
        .into_iter()
        .map(|bias| {
            let (seen_acc, unseen_acc) = accuracy_at_bias(sm, bias)?;
            Ok(CurvePoint {
                bias,
                seen_acc,
                unseen_acc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max = |f: fn(&CurvePoint) -> f64| curve.iter().map(f).fold(0.0, f64::max);
    Ok(EvalReport {
        seen: max(|p| p.seen_acc),
        unseen: max(|p| p.unseen_acc),
        hm: curve.iter().map(|p| harmonic_mean(p.seen_acc, p.unseen_acc)).fold(0.0, f64::max),
        auc: curve_auc(&curve),
        curve,
    })
}

impl EvalReport {
    /// `bias,seen_acc,unseen_acc` rows.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("bias,seen_acc,unseen_acc\n");
        for p in &self.curve {
            let _ = writeln!(out, "{},{},{}", p.bias, p.seen_acc, p.unseen_acc);
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "seen={:.4} unseen={:.4} hm={:.4} auc={:.4}",
            self.seen, self.unseen, self.hm, self.auc
        )
    }
}
