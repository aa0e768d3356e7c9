//! The cascaded network: attribute→object and object→attribute cascades,
//! the composition branch, their losses and the fused inference score.

pub mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::numerics::{lit, Graph, Mlp, Param, Parameterized, Real, Var, COSINE_EPS};
use crate::semantics::{candidate_embeddings, CompositionCatalog, SemanticSpace};

/// Clamp used inside every log.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassifierKind {
    /// Sigmoid of a learned score over `Concat(visual, semantic)`.
    Parametric,
    /// Softmax over temperature-scaled cosine similarity.
    NonParametric,
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parametric" | "param" => Ok(ClassifierKind::Parametric),
            "nonparametric" | "nonparam" => Ok(ClassifierKind::NonParametric),
            _ => Err(Error::Config(format!("unknown classifier `{s}` (parametric | nonparametric)"))),
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassifierKind::Parametric => "parametric",
            ClassifierKind::NonParametric => "nonparametric",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Branches {
    pub a2o: bool,
    pub o2a: bool,
    pub composition: bool,
}

impl Branches {
    pub const ALL: Branches = Branches {
        a2o: true,
        o2a: true,
        composition: true,
    };

    pub fn any_cascade(&self) -> bool {
        self.a2o || self.o2a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    /// Input feature width.
    pub feature: usize,
    /// Semantic embedding width.
    pub semantic: usize,
    /// Primitive visual embedding width.
    pub visual: usize,
    /// Composition embedding width.
    pub composition: usize,
    /// Hidden width of every two-layer MLP.
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub dims: Dims,
    pub branches: Branches,
    pub primitive_classifier: ClassifierKind,
    pub composition_classifier: ClassifierKind,
    pub temperature: f64,
}

impl ModelConfig {
    pub fn new(dims: Dims) -> Self {
        ModelConfig {
            dims,
            branches: Branches::ALL,
            primitive_classifier: ClassifierKind::Parametric,
            composition_classifier: ClassifierKind::NonParametric,
            temperature: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if [d.feature, d.semantic, d.visual, d.composition, d.hidden].contains(&0) {
            return Err(Error::Config(format!("all dims must be positive: {d:?}")));
        }
        if !(self.branches.any_cascade() || self.branches.composition) {
            return Err(Error::Config("at least one branch must be enabled".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.primitive_classifier == ClassifierKind::NonParametric && d.visual != d.semantic {
            return Err(Error::Config(format!(
                "nonparametric primitive heads need visual dim == semantic dim, got d_v={} d={}",
                d.visual, d.semantic
            )));
        }
        Ok(())
    }
}

/// All trainable networks. No two share a parameter.
#[derive(Debug)]
pub struct CscNet<T> {
    pub config: ModelConfig,
    pub e_a: Mlp<T>,
    pub e_o: Mlp<T>,
    pub e_a2o: Mlp<T>,
    pub e_o2a: Mlp<T>,
    pub e_c: Mlp<T>,
    pub scorer_a: Mlp<T>,
    pub scorer_o: Mlp<T>,
    pub scorer_a2o: Mlp<T>,
    pub scorer_o2a: Mlp<T>,
    pub composer: Mlp<T>,
    /// Present only when the composition branch uses a parametric head.
    pub scorer_c: Option<Mlp<T>>,
}

/// Names of the networks in checkpoint order.
pub const NETWORK_NAMES: [&str; 11] = [
    "e_a", "e_o", "e_a2o", "e_o2a", "e_c", "scorer_a", "scorer_o", "scorer_a2o", "scorer_o2a", "composer", "scorer_c",
];

impl<T: Real> CscNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.dims;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = d.hidden;
        let scorer_in = d.visual + d.semantic;
        Ok(CscNet {
            e_a: Mlp::new("e_a", d.feature, h, d.visual, &mut rng)?,
            e_o: Mlp::new("e_o", d.feature, h, d.visual, &mut rng)?,
            e_a2o: Mlp::new("e_a2o", d.feature + d.semantic, h, d.visual, &mut rng)?,
            e_o2a: Mlp::new("e_o2a", d.feature + d.semantic, h, d.visual, &mut rng)?,
            e_c: Mlp::new("e_c", d.feature, h, d.composition, &mut rng)?,
            scorer_a: Mlp::new("scorer_a", scorer_in, h, 1, &mut rng)?,
            scorer_o: Mlp::new("scorer_o", scorer_in, h, 1, &mut rng)?,
            scorer_a2o: Mlp::new("scorer_a2o", scorer_in, h, 1, &mut rng)?,
            scorer_o2a: Mlp::new("scorer_o2a", scorer_in, h, 1, &mut rng)?,
            composer: Mlp::new("composer", 2 * d.semantic, h, d.composition, &mut rng)?,
            scorer_c: match config.composition_classifier {
                ClassifierKind::Parametric => Some(Mlp::new("scorer_c", 2 * d.composition, h, 1, &mut rng)?),
                ClassifierKind::NonParametric => None,
            },
            config,
        })
    }

    pub fn networks(&self) -> Vec<&Mlp<T>> {
        let mut v = vec![
            &self.e_a,
            &self.e_o,
            &self.e_a2o,
            &self.e_o2a,
            &self.e_c,
            &self.scorer_a,
            &self.scorer_o,
            &self.scorer_a2o,
            &self.scorer_o2a,
            &self.composer,
        ];
        v.extend(self.scorer_c.as_ref());
        v
    }

    pub fn networks_mut(&mut self) -> Vec<&mut Mlp<T>> {
        let mut v = vec![
            &mut self.e_a,
            &mut self.e_o,
            &mut self.e_a2o,
            &mut self.e_o2a,
            &mut self.e_c,
            &mut self.scorer_a,
            &mut self.scorer_o,
            &mut self.scorer_a2o,
            &mut self.scorer_o2a,
            &mut self.composer,
        ];
        v.extend(self.scorer_c.as_mut());
        v
    }

    fn check_space(&self, space: &SemanticSpace) -> Result<()> {
        if space.dim() != self.config.dims.semantic {
            return Err(Error::dim("model", format!("semantic dim {}", self.config.dims.semantic), space.dim()));
        }
        Ok(())
    }

    /// Builds the `B × d_x` feature input from rows.
    pub fn features<'a, I>(&self, g: &mut Graph<T>, rows: I) -> Result<Var>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let width = self.config.dims.feature;
        let mut n = 0;
        let mut vals = Vec::new();
        for r in rows {
            if r.len() != width {
                return Err(Error::dim("features", format!("width {width}"), format!("width {}", r.len())));
            }
            vals.extend(r.iter().map(|&v| lit::<T>(v)));
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        g.constant(n, width, vals)
    }

    fn primitive_head(&self, g: &mut Graph<T>, scorer: &Mlp<T>, v: Var, table: Var) -> Result<Var> {
        match self.config.primitive_classifier {
            ClassifierKind::Parametric => param_cls(g, scorer, v, table),
            ClassifierKind::NonParametric => non_param_cls(g, v, table, self.config.temperature),
        }
    }

    /// One cascade over a batch.
    ///
    /// With `condition_on` set, the second stage is conditioned on those
    /// ids instead of the first stage's argmax.
    pub fn cascade(
        &self,
        g: &mut Graph<T>,
        phi: Var,
        space: &SemanticSpace,
        direction: Direction,
        condition_on: Option<&[usize]>,
    ) -> Result<CascadeVars> {
        self.check_space(space)?;
        let attrs = space.attr_const(g)?;
        let objs = space.obj_const(g)?;
        let (first, first_scorer, second, second_scorer, first_table, second_table) = match direction {
            Direction::AttrToObj => (&self.e_a, &self.scorer_a, &self.e_a2o, &self.scorer_a2o, attrs, objs),
            Direction::ObjToAttr => (&self.e_o, &self.scorer_o, &self.e_o2a, &self.scorer_o2a, objs, attrs),
        };
        let v1 = first.forward(g, phi)?;
        let primitive = self.primitive_head(g, first_scorer, v1, first_table)?;
        let (rows, k) = g.shape(primitive)?;
        let predicted: Vec<usize> = g.value(primitive)?.chunks(k).map(argmax).collect();
        let ids = match condition_on {
            Some(ids) if ids.len() != rows => return Err(Error::dim("cascade", rows, ids.len())),
            Some(ids) => ids.to_vec(),
            None => predicted.clone(),
        };
        let gathered = g.gather_rows(first_table, &ids)?;
        // hard conditioning: the looked-up embedding carries no gradient
        let prior = g.detach(gathered)?;
        let x = g.concat_cols(phi, prior)?;
        let v2 = second.forward(g, x)?;
        let conditioned = self.primitive_head(g, second_scorer, v2, second_table)?;
        Ok(CascadeVars {
            primitive,
            predicted,
            conditioned,
        })
    }

    /// Composition probabilities (or scores, for a parametric head) over
    /// the catalog, `B × |catalog|`.
    pub fn composition(&self, g: &mut Graph<T>, phi: Var, space: &SemanticSpace, catalog: &CompositionCatalog) -> Result<Var> {
        self.check_space(space)?;
        let vc = self.e_c.forward(g, phi)?;
        let cands = candidate_embeddings(g, space, catalog, &self.composer)?;
        match (&self.scorer_c, self.config.composition_classifier) {
            (Some(scorer), ClassifierKind::Parametric) => param_cls(g, scorer, vc, cands),
            _ => non_param_cls(g, vc, cands, self.config.temperature),
        }
    }
}

impl<T: Real> Clone for CscNet<T> {
    fn clone(&self) -> Self {
        CscNet {
            config: self.config,
            e_a: self.e_a.clone(),
            e_o: self.e_o.clone(),
            e_a2o: self.e_a2o.clone(),
            e_o2a: self.e_o2a.clone(),
            e_c: self.e_c.clone(),
            scorer_a: self.scorer_a.clone(),
            scorer_o: self.scorer_o.clone(),
            scorer_a2o: self.scorer_a2o.clone(),
            scorer_o2a: self.scorer_o2a.clone(),
            composer: self.composer.clone(),
            scorer_c: self.scorer_c.clone(),
        }
    }
}

impl<T> Parameterized<T> for CscNet<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for net in [
            &self.e_a,
            &self.e_o,
            &self.e_a2o,
            &self.e_o2a,
            &self.e_c,
            &self.scorer_a,
            &self.scorer_o,
            &self.scorer_a2o,
            &self.scorer_o2a,
            &self.composer,
        ]
        .into_iter()
        .chain(self.scorer_c.as_ref())
        {
            v.extend(net.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for net in [
            &mut self.e_a,
            &mut self.e_o,
            &mut self.e_a2o,
            &mut self.e_o2a,
            &mut self.e_c,
            &mut self.scorer_a,
            &mut self.scorer_o,
            &mut self.scorer_a2o,
            &mut self.scorer_o2a,
            &mut self.composer,
        ]
        .into_iter()
        .chain(self.scorer_c.as_mut())
        {
            v.extend(net.params_mut());
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AttrToObj,
    ObjToAttr,
}

/// Graph handles produced by one cascade.
#[derive(Debug, Clone)]
pub struct CascadeVars {
    /// `B × k1` scores for the first primitive.
    pub primitive: Var,
    /// Argmax of each row of `primitive`.
    pub predicted: Vec<usize>,
    /// `B × k2` scores for the second primitive.
    pub conditioned: Var,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// `sigmoid(scorer(Concat(v_b, S_k)))` for every batch row `b` and class row `k`.
pub fn param_cls<T: Real>(g: &mut Graph<T>, scorer: &Mlp<T>, v: Var, table: Var) -> Result<Var> {
    let (b, dv) = g.shape(v)?;
    let (k, d) = g.shape(table)?;
    if k == 0 {
        return Err(Error::InvalidArgument("param_cls: no classes".into()));
    }
    if dv + d != scorer.input_dim() || scorer.output_dim() != 1 {
        return Err(Error::dim(
            "param_cls",
            format!("scorer {}->1", dv + d),
            format!("scorer {}->{}", scorer.input_dim(), scorer.output_dim()),
        ));
    }
    let pairs = g.pair_concat(v, table)?;
    let raw = scorer.forward(g, pairs)?;
    let raw = g.reshape(raw, b, k)?;
    g.sigmoid(raw)
}

/// Row-wise softmax of `cos(v_b, S_k) / temperature`.
pub fn non_param_cls<T: Real>(g: &mut Graph<T>, v: Var, table: Var, temperature: f64) -> Result<Var> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let (k, _) = g.shape(table)?;
    if k == 0 {
        return Err(Error::InvalidArgument("non_param_cls: no candidates".into()));
    }
    if g.value(v)?.iter().chain(g.value(table)?).any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non_param_cls: non-finite input".into()));
    }
    let cos = g.cosine_rows(v, table, lit(COSINE_EPS))?;
    let logits = g.scale(cos, lit(1.0 / temperature))?;
    g.softmax_rows(logits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Binary cross-entropy over every class.
    #[default]
    FullBce,
    /// Only `−log score_true`.
    PositiveOnly,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full_bce" => Ok(LossMode::FullBce),
            "positive_only" => Ok(LossMode::PositiveOnly),
            _ => Err(Error::Config(format!("unknown loss mode `{s}` (full | positive_only)"))),
        }
    }
}

/// Batch-mean primitive loss for independent sigmoid scores.
pub fn branch_loss<T: Real>(g: &mut Graph<T>, scores: Var, truth: &[usize], mode: LossMode) -> Result<Var> {
    let per_row = g.bce_rows(scores, truth, mode == LossMode::PositiveOnly, lit(LOG_EPS))?;
    g.mean(per_row)
}

/// Batch-mean `−log p_true` for a probability distribution per row.
pub fn composition_loss<T: Real>(g: &mut Graph<T>, probs: Var, truth: &[usize]) -> Result<Var> {
    let per_row = g.nll_rows(probs, truth, lit(LOG_EPS))?;
    g.mean(per_row)
}

fn head_loss<T: Real>(g: &mut Graph<T>, kind: ClassifierKind, scores: Var, truth: &[usize], mode: LossMode) -> Result<Var> {
    match kind {
        ClassifierKind::Parametric => branch_loss(g, scores, truth, mode),
        ClassifierKind::NonParametric => composition_loss(g, scores, truth),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub mode: LossMode,
    /// Condition second stages on ground truth instead of predictions.
    pub teacher_forcing: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 4.0,
            mode: LossMode::FullBce,
            teacher_forcing: false,
        }
    }
}

/// Loss terms of one batch; disabled branches are `None`.
#[derive(Debug, Clone)]
pub struct Losses {
    pub attr: Option<Var>,
    pub obj: Option<Var>,
    pub a2o: Option<Var>,
    pub o2a: Option<Var>,
    pub composition: Option<Var>,
    pub total: Var,
    pub cascades: (Option<CascadeVars>, Option<CascadeVars>),
}

/// `α(L_a + L_o + L_a2o + L_o2a) + L_c`, each averaged over the batch.
///
/// The composition term ranks against the catalog's seen pairs only; a
/// sample whose pair is unseen is rejected.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    model: &CscNet<T>,
    batch: &[&Sample],
    space: &SemanticSpace,
    catalog: &CompositionCatalog,
    cfg: &LossConfig,
) -> Result<Losses> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if cfg.alpha.is_nan() || cfg.alpha < 0.0 {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", cfg.alpha)));
    }
    let train_cat = catalog.seen_only()?;
    let mut pair_ids = Vec::with_capacity(batch.len());
    for (i, s) in batch.iter().enumerate() {
        let seen = catalog.index_of(s.attr, s.obj).map(|k| catalog.is_seen(k)).unwrap_or(false);
        if !seen {
            return Err(Error::InvalidArgument(format!(
                "batch sample {i} has unseen pair ({}, {})",
                s.attr, s.obj
            )));
        }
        pair_ids.push(train_cat.index_of(s.attr, s.obj).expect("seen pair in seen catalog"));
    }
    let attrs: Vec<usize> = batch.iter().map(|s| s.attr).collect();
    let objs: Vec<usize> = batch.iter().map(|s| s.obj).collect();
    let phi = model.features(g, batch.iter().map(|s| s.feature.as_slice()))?;
    let kind = model.config.primitive_classifier;
    let br = model.config.branches;

    let mut cascade_terms = Vec::new();
    let (mut la, mut lo, mut la2o, mut lo2a, mut a2o_vars, mut o2a_vars) = (None, None, None, None, None, None);
    if br.a2o {
        let force = cfg.teacher_forcing.then_some(attrs.as_slice());
        let c = model.cascade(g, phi, space, Direction::AttrToObj, force)?;
        let l1 = head_loss(g, kind, c.primitive, &attrs, cfg.mode)?;
        let l2 = head_loss(g, kind, c.conditioned, &objs, cfg.mode)?;
        la = Some(l1);
        la2o = Some(l2);
        cascade_terms.extend([l1, l2]);
        a2o_vars = Some(c);
    }
    if br.o2a {
        let force = cfg.teacher_forcing.then_some(objs.as_slice());
        let c = model.cascade(g, phi, space, Direction::ObjToAttr, force)?;
        let l1 = head_loss(g, kind, c.primitive, &objs, cfg.mode)?;
        let l2 = head_loss(g, kind, c.conditioned, &attrs, cfg.mode)?;
        lo = Some(l1);
        lo2a = Some(l2);
        cascade_terms.extend([l1, l2]);
        o2a_vars = Some(c);
    }
    let lc = if br.composition {
        let probs = model.composition(g, phi, space, &train_cat)?;
        Some(head_loss(g, model.config.composition_classifier, probs, &pair_ids, cfg.mode)?)
    } else {
        None
    };

    let mut total: Option<Var> = None;
    if let Some((&first, rest)) = cascade_terms.split_first() {
        let mut s = first;
        for &t in rest {
            s = g.add(s, t)?;
        }
        total = Some(g.scale(s, lit(cfg.alpha))?);
    }
    if let Some(c) = lc {
        total = Some(match total {
            Some(t) => g.add(t, c)?,
            None => c,
        });
    }
    Ok(Losses {
        attr: la,
        obj: lo,
        a2o: la2o,
        o2a: lo2a,
        composition: lc,
        total: total.expect("at least one branch enabled"),
        cascades: (a2o_vars, o2a_vars),
    })
}

/// Values of one cascade for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    pub primitive_scores: Vec<f64>,
    pub predicted_id: usize,
    pub conditioned_scores: Vec<f64>,
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()
}

fn branch_output<T: Real>(model: &CscNet<T>, phi: &[f64], space: &SemanticSpace, dir: Direction) -> Result<BranchOutput> {
    let mut g = Graph::inference();
    let x = model.features(&mut g, [phi])?;
    let c = model.cascade(&mut g, x, space, dir, None)?;
    Ok(BranchOutput {
        primitive_scores: to_f64(g.value(c.primitive)?),
        predicted_id: c.predicted[0],
        conditioned_scores: to_f64(g.value(c.conditioned)?),
    })
}

/// Attribute scores, predicted attribute, and object scores given it.
pub fn forward_a2o<T: Real>(model: &CscNet<T>, phi: &[f64], space: &SemanticSpace) -> Result<BranchOutput> {
    branch_output(model, phi, space, Direction::AttrToObj)
}

/// Object scores, predicted object, and attribute scores given it.
pub fn forward_o2a<T: Real>(model: &CscNet<T>, phi: &[f64], space: &SemanticSpace) -> Result<BranchOutput> {
    branch_output(model, phi, space, Direction::ObjToAttr)
}

/// Composition distribution over the catalog for one sample.
pub fn forward_composition<T: Real>(model: &CscNet<T>, phi: &[f64], space: &SemanticSpace, catalog: &CompositionCatalog) -> Result<Vec<f64>> {
    let mut g = Graph::inference();
    let x = model.features(&mut g, [phi])?;
    let p = model.composition(&mut g, x, space, catalog)?;
    Ok(to_f64(g.value(p)?))
}

/// Per-sample branch outputs that the fused score is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceParts {
    pub attr: Option<Vec<f64>>,
    pub obj_given_attr: Option<Vec<f64>>,
    pub obj: Option<Vec<f64>>,
    pub attr_given_obj: Option<Vec<f64>>,
    pub composition: Option<Vec<f64>>,
}

impl InferenceParts {
    /// `β·cascade + (1 − β)·composition` for every catalog pair.
    pub fn fuse(&self, catalog: &CompositionCatalog, beta: f64) -> Result<Vec<f64>> {
        check_beta(beta)?;
        Ok(catalog
            .pairs()
            .iter()
            .enumerate()
            .map(|(k, &(a, o))| {
                let mut cascade = 0.0;
                if let (Some(pa), Some(po)) = (&self.attr, &self.obj_given_attr) {
                    cascade += pa[a] * po[o];
                }
                if let (Some(po), Some(pa)) = (&self.obj, &self.attr_given_obj) {
                    cascade += po[o] * pa[a];
                }
                let comp = self.composition.as_ref().map_or(0.0, |c| c[k]);
                beta * cascade + (1.0 - beta) * comp
            })
            .collect())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

/// Branch outputs for a batch of feature rows, without recording gradients.
pub fn inference_parts<T: Real>(
    model: &CscNet<T>,
    phis: &[&[f64]],
    space: &SemanticSpace,
    catalog: &CompositionCatalog,
) -> Result<Vec<InferenceParts>> {
    let mut g = Graph::inference();
    let x = model.features(&mut g, phis.iter().copied())?;
    let br = model.config.branches;
    let rows = |g: &Graph<T>, v: Var| -> Result<Vec<Vec<f64>>> {
        let (_, k) = g.shape(v)?;
        Ok(g.value(v)?.chunks(k).map(to_f64).collect())
    };
    let split = |o: Option<Vec<Vec<f64>>>, i: usize| o.as_ref().map(|r| r[i].clone());

    let (mut pa, mut poa, mut po, mut pao, mut pc) = (None, None, None, None, None);
    if br.a2o {
        let c = model.cascade(&mut g, x, space, Direction::AttrToObj, None)?;
        pa = Some(rows(&g, c.primitive)?);
        poa = Some(rows(&g, c.conditioned)?);
    }
    if br.o2a {
        let c = model.cascade(&mut g, x, space, Direction::ObjToAttr, None)?;
        po = Some(rows(&g, c.primitive)?);
        pao = Some(rows(&g, c.conditioned)?);
    }
    if br.composition {
        let p = model.composition(&mut g, x, space, catalog)?;
        pc = Some(rows(&g, p)?);
    }
    Ok((0..phis.len())
        .map(|i| InferenceParts {
            attr: split(pa.clone(), i),
            obj_given_attr: split(poa.clone(), i),
            obj: split(po.clone(), i),
            attr_given_obj: split(pao.clone(), i),
            composition: split(pc.clone(), i),
        })
        .collect())
}

/// Fused per-pair score for one feature row.
pub fn inference_score<T: Real>(
    model: &CscNet<T>,
    phi: &[f64],
    space: &SemanticSpace,
    catalog: &CompositionCatalog,
    beta: f64,
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let parts = inference_parts(model, &[phi], space, catalog)?;
    parts[0].fuse(catalog, beta)
}

/// Fused per-pair scores for many rows, evaluated in chunks.
pub fn inference_scores<T: Real>(
    model: &CscNet<T>,
    phis: &[&[f64]],
    space: &SemanticSpace,
    catalog: &CompositionCatalog,
    beta: f64,
) -> Result<Vec<Vec<f64>>> {
    check_beta(beta)?;
    let mut out = Vec::with_capacity(phis.len());
    for chunk in phis.chunks(256) {
        for p in inference_parts(model, chunk, space, catalog)? {
            out.push(p.fuse(catalog, beta)?);
        }
    }
    Ok(out)
}

/// First-stage attribute and object predictions for each row.
///
/// Uses the A2O attribute head and the O2A object head; when a cascade is
/// disabled the other cascade's conditioned head stands in.
pub fn predict_primitives<T: Real>(model: &CscNet<T>, phis: &[&[f64]], space: &SemanticSpace) -> Result<Vec<(usize, usize)>> {
    let br = model.config.branches;
    if !br.any_cascade() {
        return Err(Error::InvalidArgument("no cascade branch enabled".into()));
    }
    let mut out = Vec::with_capacity(phis.len());
    for chunk in phis.chunks(256) {
        let mut g = Graph::inference();
        let x = model.features(&mut g, chunk.iter().copied())?;
        let a2o = if br.a2o { Some(model.cascade(&mut g, x, space, Direction::AttrToObj, None)?) } else { None };
        let o2a = if br.o2a { Some(model.cascade(&mut g, x, space, Direction::ObjToAttr, None)?) } else { None };
        let argmax_rows = |g: &Graph<T>, v: Var| -> Result<Vec<usize>> {
            let (_, k) = g.shape(v)?;
            Ok(g.value(v)?.chunks(k).map(argmax).collect())
        };
        let attrs = match (&a2o, &o2a) {
            (Some(c), _) => c.predicted.clone(),
            (None, Some(c)) => argmax_rows(&g, c.conditioned)?,
            _ => unreachable!(),
        };
        let objs = match (&o2a, &a2o) {
            (Some(c), _) => c.predicted.clone(),
            (None, Some(c)) => argmax_rows(&g, c.conditioned)?,
            _ => unreachable!(),
        };
        out.extend(attrs.into_iter().zip(objs));
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
