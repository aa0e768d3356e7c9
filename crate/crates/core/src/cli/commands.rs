use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{Profile, RunConfig};
use crate::data::{self, generate_synthetic_dataset, load_dataset, write_dataset, DatasetSplit, Sample, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, ScoreMatrix};
use crate::model::{checkpoint, inference_parts, total_loss, Branches, ClassifierKind, CscNet, Dims, LossConfig, ModelConfig};
use crate::numerics::{grad_check_with, GradCheckConfig, GradCheckReport, Real, Var};
use crate::semantics::{generate_synthetic_embeddings, load_embeddings, write_embeddings, SemanticSpace};
use crate::train::{log_csv, primitive_accuracy, train, EpochLog};

pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const BETA_SWEEP_FILE: &str = "beta_sweep.csv";

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// Embeddings and split for a run, with the split's content hash.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub space: SemanticSpace,
    pub split: DatasetSplit,
    pub hash: String,
}

impl Inputs {
    pub fn model_config(&self, cfg: &RunConfig) -> ModelConfig {
        cfg.model_config(self.split.feature_dim())
    }
}

/// Loads files when configured, otherwise generates the synthetic split.
pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let (space, split) = match (&cfg.embeddings, &cfg.features, &cfg.labels) {
        (Some(e), Some(f), Some(l)) => {
            let space = load_embeddings(e)?;
            let split = load_dataset(f, l, &space)?;
            (space, split)
        }
        _ => {
            let spec = cfg.synth_spec();
            let space = generate_synthetic_embeddings(spec.n_attrs, spec.n_objs, cfg.semantic_dim, cfg.data_seed)?;
            let split = generate_synthetic_dataset(&spec, &space)?;
            (space, split)
        }
    };
    if space.dim() != cfg.semantic_dim {
        return Err(Error::Config(format!(
            "embeddings have dim {}, config d = {}",
            space.dim(),
            cfg.semantic_dim
        )));
    }
    let hash = data::fingerprint(&split, &space);
    Ok(Inputs { space, split, hash })
}

#[derive(Debug, Clone)]
pub struct GenDataSummary {
    pub embeddings: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub n_seen: usize,
    pub n_unseen: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub hash: String,
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<GenDataSummary> {
    let synthetic = RunConfig {
        embeddings: None,
        features: None,
        labels: None,
        ..cfg.clone()
    };
    let inputs = load_inputs(&synthetic)?;
    ensure_dir(out)?;
    let embeddings = out.join(EMBEDDINGS_FILE);
    let (features, labels) = (out.join(FEATURES_FILE), out.join(LABELS_FILE));
    write_embeddings(&inputs.space, &embeddings)?;
    write_dataset(&inputs.split, &inputs.space, &features, &labels)?;
    Ok(GenDataSummary {
        embeddings,
        features,
        labels,
        n_seen: inputs.split.catalog.n_seen(),
        n_unseen: inputs.split.catalog.n_unseen(),
        n_train: inputs.split.train.len(),
        n_test: inputs.split.test.len(),
        hash: inputs.hash,
    })
}

/// A trained model, held at 64-bit whatever the training profile.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: CscNet<f64>,
    pub log: Vec<EpochLog>,
    /// Checkpoint of the model as trained.
    pub checkpoint: Vec<u8>,
}

fn fit_as<T: Real>(cfg: &RunConfig, inputs: &Inputs, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<Trained> {
    let mc = inputs.model_config(cfg);
    let mut model = CscNet::<T>::new(mc, cfg.seed)?;
    let log = train(&mut model, &inputs.split, &inputs.space, &cfg.train_config(), on_epoch)?;
    let bytes = checkpoint::encode(&model);
    Ok(Trained {
        model: checkpoint::decode(&bytes, mc)?,
        log,
        checkpoint: bytes,
    })
}

pub fn fit(cfg: &RunConfig, inputs: &Inputs, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<Trained> {
    cfg.validate()?;
    match cfg.profile {
        Profile::F32 => fit_as::<f32>(cfg, inputs, on_epoch),
        Profile::F64 => fit_as::<f64>(cfg, inputs, on_epoch),
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub log: Vec<EpochLog>,
    pub train_attr_acc: f64,
    pub train_obj_acc: f64,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainSummary> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let trained = fit(cfg, &inputs, on_epoch)?;
    let (train_attr_acc, train_obj_acc) = if cfg.branches.any_cascade() {
        primitive_accuracy(&trained.model, &inputs.split.train, &inputs.space)?
    } else {
        (f64::NAN, f64::NAN)
    };
    ensure_dir(out)?;
    let checkpoint = write(cfg.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE)), &trained.checkpoint)?;
    let log_path = write(out.join(TRAIN_LOG_FILE), log_csv(&trained.log))?;
    Ok(TrainSummary {
        log: trained.log,
        train_attr_acc,
        train_obj_acc,
        checkpoint,
        log_path,
    })
}

fn checkpoint_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE))
}

/// Scores the test split once per beta, running the network a single time.
pub fn score_betas(model: &CscNet<f64>, inputs: &Inputs, betas: &[f64]) -> Result<Vec<ScoreMatrix>> {
    let split = &inputs.split;
    let phis: Vec<&[f64]> = split.test.iter().map(|s| s.feature.as_slice()).collect();
    let mut parts = Vec::with_capacity(phis.len());
    for chunk in phis.chunks(256) {
        parts.extend(inference_parts(model, chunk, &inputs.space, &split.catalog)?);
    }
    let truths: Vec<usize> = split
        .test
        .iter()
        .map(|s| split.pair_index(s).ok_or_else(|| Error::Dataset("test pair missing from catalog".into())))
        .collect::<Result<_>>()?;
    let unseen: Vec<bool> = split.catalog.seen_mask().iter().map(|s| !s).collect();
    betas
        .iter()
        .map(|&beta| {
            let rows = parts.iter().map(|p| p.fuse(&split.catalog, beta)).collect::<Result<Vec<_>>>()?;
            ScoreMatrix::from_rows(&rows, truths.clone(), unseen.clone())
        })
        .collect()
}

pub fn evaluate_model(model: &CscNet<f64>, inputs: &Inputs, beta: f64, n_biases: usize) -> Result<EvalReport> {
    let sm = score_betas(model, inputs, &[beta])?.pop().expect("one beta");
    evaluate(&sm, n_biases)
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let model = checkpoint::load::<f64>(checkpoint_path(cfg, out), inputs.model_config(cfg))?;
    let report = evaluate_model(&model, &inputs, cfg.beta, cfg.n_biases)?;
    ensure_dir(out)?;
    write(out.join(CURVE_FILE), report.curve_csv())?;
    write(out.join(SUMMARY_FILE), format!("{}\n", report.summary()))?;
    Ok(report)
}

pub fn beta_sweep_csv(rows: &[(f64, EvalReport)]) -> String {
    let mut out = String::from("beta,auc,hm,seen,unseen\n");
    for (b, r) in rows {
        let _ = writeln!(out, "{b},{},{},{},{}", r.auc, r.hm, r.seen, r.unseen);
    }
    out
}

pub fn cmd_beta_sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<(f64, EvalReport)>> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let model = checkpoint::load::<f64>(checkpoint_path(cfg, out), inputs.model_config(cfg))?;
    let matrices = score_betas(&model, &inputs, &cfg.betas)?;
    let rows = cfg
        .betas
        .iter()
        .zip(&matrices)
        .map(|(&b, sm)| Ok((b, evaluate(sm, cfg.n_biases)?)))
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(out)?;
    write(out.join(BETA_SWEEP_FILE), beta_sweep_csv(&rows))?;
    Ok(rows)
}

/// Branch and classifier settings of one ablation row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub branches: Branches,
    pub primitive_classifier: ClassifierKind,
    pub composition_classifier: ClassifierKind,
}

/// Branch ablations on the base classifiers, then the four classifier
/// placements with every branch on.
pub fn ablation_variants(base: &RunConfig) -> Vec<Variant> {
    use ClassifierKind::{NonParametric as Np, Parametric as P};
    let branch = |name, a2o, o2a| Variant {
        name,
        branches: Branches {
            a2o,
            o2a,
            composition: true,
        },
        primitive_classifier: base.primitive_classifier,
        composition_classifier: base.composition_classifier,
    };
    let placement = |name, primitive_classifier, composition_classifier| Variant {
        name,
        branches: Branches::ALL,
        primitive_classifier,
        composition_classifier,
    };
    vec![
        branch("composition", false, false),
        branch("+a2o", true, false),
        branch("+o2a", false, true),
        branch("+a2o+o2a", true, true),
        placement("M1", Np, Np),
        placement("M2", P, P),
        placement("M3", Np, P),
        placement("M4", P, Np),
    ]
}

impl Variant {
    pub fn apply(&self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut c = base.clone();
        c.seed = seed;
        c.branches = self.branches;
        c.primitive_classifier = self.primitive_classifier;
        c.composition_classifier = self.composition_classifier;
        if !self.branches.any_cascade() {
            c.beta = 0.0;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub dataset_hash: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Mean `(auc, hm, seen, unseen)` of a variant over its seeds.
    pub fn mean(&self, variant: &str) -> Option<(f64, f64, f64, f64)> {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.variant == variant).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let m = |f: fn(&EvalReport) -> f64| rows.iter().map(|r| f(&r.report)).sum::<f64>() / n;
        Some((m(|r| r.auc), m(|r| r.hm), m(|r| r.seen), m(|r| r.unseen)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,dataset_hash,auc,hm,seen,unseen\n");
        for r in &self.rows {
            let p = &r.report;
            let _ = writeln!(out, "{},{},{},{},{},{},{}", r.variant, r.seed, r.dataset_hash, p.auc, p.hm, p.seen, p.unseen);
        }
        let mut names: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.variant) {
                names.push(r.variant);
            }
        }
        for name in names {
            let (auc, hm, seen, unseen) = self.mean(name).expect("variant has rows");
            let _ = writeln!(out, "{name},mean,{},{auc},{hm},{seen},{unseen}", self.rows[0].dataset_hash);
        }
        out
    }
}

/// Trains and evaluates every variant on every seed over one dataset.
/// Variants with identical settings are trained once.
pub fn run_ablation(cfg: &RunConfig, inputs: &Inputs) -> Result<AblationTable> {
    cfg.validate()?;
    let variants = ablation_variants(cfg);
    let seeds: Vec<u64> = (0..cfg.ablation_seeds as u64).map(|i| cfg.seed + i).collect();
    let key = |v: &Variant| format!("{:?}/{}/{}", v.branches, v.primitive_classifier, v.composition_classifier);

    let mut jobs: Vec<(String, Variant, u64)> = Vec::new();
    for v in &variants {
        for &s in &seeds {
            if !jobs.iter().any(|(k, _, js)| *k == key(v) && *js == s) {
                jobs.push((key(v), *v, s));
            }
        }
    }
    let results: Vec<((String, u64), EvalReport)> = jobs
        .par_iter()
        .map(|(k, v, s)| {
            let c = v.apply(cfg, *s);
            let trained = fit(&c, inputs, &mut |_| {})?;
            let report = evaluate_model(&trained.model, inputs, c.beta, c.n_biases)?;
            Ok(((k.clone(), *s), report))
        })
        .collect::<Result<_>>()?;
    let results: HashMap<(String, u64), EvalReport> = results.into_iter().collect();

    let mut rows = Vec::new();
    for v in &variants {
        for &s in &seeds {
            rows.push(AblationRow {
                variant: v.name,
                seed: s,
                dataset_hash: inputs.hash.clone(),
                report: results[&(key(v), s)].clone(),
            });
        }
    }
    Ok(AblationTable { rows })
}

pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<AblationTable> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let table = run_ablation(cfg, &inputs)?;
    ensure_dir(out)?;
    write(out.join(ABLATION_FILE), table.to_csv())?;
    Ok(table)
}

/// Loss terms checked by [`cmd_grad_check`], in order.
pub const GRAD_CHECK_TERMS: [&str; 8] = [
    "L_a",
    "L_o",
    "L_a2o",
    "L_o2a",
    "L_c",
    "L_total(alpha=0)",
    "L_total(alpha=1)",
    "L_total(alpha=4)",
];

#[derive(Debug, Clone)]
pub struct GradCheckSummary {
    pub checks: Vec<(&'static str, GradCheckReport)>,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, r)| r.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max)
    }
}

/// Tiny-model inputs for gradient checks: 3 attributes, 4 objects,
/// `d_x = d = hidden = 8`.
pub fn grad_check_inputs(seed: u64) -> Result<(SemanticSpace, DatasetSplit, Dims)> {
    let spec = SynthSpec {
        n_attrs: 3,
        n_objs: 4,
        d_x: 8,
        samples_per_pair: 4,
        seen_fraction: 0.75,
        test_seen_fraction: 0.25,
        seed,
        ..SynthSpec::default()
    };
    let space = generate_synthetic_embeddings(3, 4, 8, seed)?;
    let split = generate_synthetic_dataset(&spec, &space)?;
    let dims = Dims {
        feature: 8,
        semantic: 8,
        visual: 8,
        composition: 8,
        hidden: 8,
    };
    Ok((space, split, dims))
}

/// Gradient checks of every loss term at 64-bit on a tiny model.
///
/// `corrupt` names a parameter block whose analytic gradient is shifted
/// before comparison, to exercise the failure path.
pub fn cmd_grad_check(cfg: &RunConfig, corrupt: Option<&str>) -> Result<GradCheckSummary> {
    let (space, split, dims) = grad_check_inputs(cfg.data_seed)?;
    let mc = ModelConfig {
        dims,
        branches: Branches::ALL,
        primitive_classifier: cfg.primitive_classifier,
        composition_classifier: cfg.composition_classifier,
        temperature: cfg.temperature,
    };
    if let Some(block) = corrupt {
        let probe = CscNet::<f64>::new(mc, cfg.seed)?;
        if !crate::numerics::Parameterized::params(&probe).iter().any(|p| p.name() == block) {
            return Err(Error::Config(format!("no parameter block named `{block}`")));
        }
    }
    let batch: Vec<&Sample> = split.train.iter().step_by(split.train.len() / 2).take(2).collect();
    let mut checks = Vec::new();
    for (i, &term) in GRAD_CHECK_TERMS.iter().enumerate() {
        let alpha = match i {
            5 => 0.0,
            6 => 1.0,
            _ => 4.0,
        };
        let lc = LossConfig {
            alpha,
            mode: cfg.loss_mode,
            teacher_forcing: cfg.teacher_forcing,
        };
        let mut model = CscNet::<f64>::new(mc, cfg.seed)?;
        let f = |g: &mut crate::numerics::Graph<f64>, m: &CscNet<f64>| -> Result<Var> {
            let l = total_loss(g, m, &batch, &space, &split.catalog, &lc)?;
            let pick = match i {
                0 => l.attr,
                1 => l.obj,
                2 => l.a2o,
                3 => l.o2a,
                4 => l.composition,
                _ => Some(l.total),
            };
            pick.ok_or_else(|| Error::InvalidArgument(format!("{term} not computed")))
        };
        let tamper = |name: &str, grad: &mut [f64]| {
            if Some(name) == corrupt {
                grad.iter_mut().for_each(|g| *g += 1.0);
            }
        };
        let report = grad_check_with(&mut model, f, GradCheckConfig::default(), tamper)?;
        checks.push((term, report));
    }
    Ok(GradCheckSummary { checks })
}
