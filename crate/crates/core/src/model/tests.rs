use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{grad_check, sigmoid, GradCheckConfig};
use crate::semantics::generate_synthetic_embeddings;

fn dims(d_x: usize, d: usize, hidden: usize) -> Dims {
    Dims {
        feature: d_x,
        semantic: d,
        visual: d,
        composition: d,
        hidden,
    }
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn basis(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    v
}

fn consts(g: &mut Graph<f64>, rows: usize, cols: usize, v: &[f64]) -> Var {
    g.constant(rows, cols, v.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn random_phi(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn param_cls_zero_scorer_is_one_half() {
    let mut g = Graph::new();
    let scorer = Mlp::<f64>::zeros("s", 5, 4, 1).unwrap();
    let v = consts(&mut g, 1, 2, &[0.3, -0.4]);
    let t = consts(&mut g, 4, 3, &[0.1; 12]);
    let s = param_cls(&mut g, &scorer, v, t).unwrap();
    assert_eq!(g.value(s).unwrap(), &[0.5; 4]);
}

#[test]
fn param_cls_single_class_is_sigmoid_of_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scorer = Mlp::<f64>::new("s", 4, 3, 1, &mut rng).unwrap();
    let mut g = Graph::new();
    let v = consts(&mut g, 1, 2, &[0.5, -1.0]);
    let t = consts(&mut g, 1, 2, &[0.25, 0.75]);
    let s = param_cls(&mut g, &scorer, v, t).unwrap();
    let x = consts(&mut g, 1, 4, &[0.5, -1.0, 0.25, 0.75]);
    let raw = scorer.forward(&mut g, x).unwrap();
    assert_eq!(g.value(s).unwrap(), &[sigmoid(g.scalar(raw).unwrap())]);
}

fn mlp_oracle(net: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let (h, i, o) = (net.hidden_dim(), net.input_dim(), net.output_dim());
    let hid: Vec<f64> = (0..h)
        .map(|j| ((0..i).map(|c| net.w1.value[j * i + c] * x[c]).sum::<f64>() + net.b1.value[j]).max(0.0))
        .collect();
    (0..o)
        .map(|r| (0..h).map(|j| net.w2.value[r * h + j] * hid[j]).sum::<f64>() + net.b2.value[r])
        .collect()
}

#[test]
fn param_cls_matches_per_row_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scorer = Mlp::<f64>::new("s", 8, 6, 1, &mut rng).unwrap();
    let v = random_phi(&mut rng, 4);
    let table = random_phi(&mut rng, 12);
    let mut g = Graph::new();
    let (vv, tv) = (consts(&mut g, 1, 4, &v), consts(&mut g, 3, 4, &table));
    let s = param_cls(&mut g, &scorer, vv, tv).unwrap();
    let expect: Vec<f64> = (0..3)
        .map(|k| {
            let x: Vec<f64> = v.iter().chain(&table[k * 4..(k + 1) * 4]).copied().collect();
            sigmoid(mlp_oracle(&scorer, &x)[0])
        })
        .collect();
    assert!(close(g.value(s).unwrap(), &expect, 1e-14));
}

#[test]
fn param_cls_rejects_empty_and_mismatched() {
    let scorer = Mlp::<f64>::zeros("s", 5, 2, 1).unwrap();
    let mut g = Graph::new();
    let v = consts(&mut g, 1, 2, &[0.0; 2]);
    let empty = g.constant(0, 3, vec![]).unwrap();
    assert!(param_cls(&mut g, &scorer, v, empty).is_err());
    let wrong = consts(&mut g, 2, 4, &[0.0; 8]);
    assert!(param_cls(&mut g, &scorer, v, wrong).is_err());
}

#[test]
fn non_param_cls_examples() {
    let mut g = Graph::new();
    let v = consts(&mut g, 1, 2, &[0.6, 0.8]);
    let same = consts(&mut g, 3, 2, &[0.6, 0.8, 0.6, 0.8, 0.6, 0.8]);
    let p = non_param_cls(&mut g, v, same, 0.05).unwrap();
    assert!(close(g.value(p).unwrap(), &[1.0 / 3.0; 3], 1e-12));

    let v = consts(&mut g, 1, 2, &[1.0, 0.0]);
    let opp = consts(&mut g, 2, 2, &[1.0, 0.0, -1.0, 0.0]);
    let p = non_param_cls(&mut g, v, opp, 1.0).unwrap();
    let e = std::f64::consts::E;
    let hand = [e / (e + 1.0 / e), (1.0 / e) / (e + 1.0 / e)];
    let got = g.value(p).unwrap();
    assert!(close(got, &hand, 1e-12));
    assert!((got[0] - 0.8808).abs() < 5e-5 && (got[1] - 0.1192).abs() < 5e-5);

    let one = consts(&mut g, 1, 2, &[0.3, 0.1]);
    let p = non_param_cls(&mut g, v, one, 0.05).unwrap();
    assert_eq!(g.value(p).unwrap(), &[1.0]);
}

#[test]
fn non_param_cls_rejects_bad_input() {
    let mut g = Graph::new();
    let v = consts(&mut g, 1, 2, &[f64::NAN, 0.0]);
    let t = consts(&mut g, 1, 2, &[1.0, 0.0]);
    assert!(non_param_cls(&mut g, v, t, 0.05).is_err());
    let v = consts(&mut g, 1, 2, &[1.0, 0.0]);
    assert!(non_param_cls(&mut g, v, t, 0.0).is_err());
}

fn zero_scorers(model: &mut CscNet<f64>) {
    let d = model.config.dims;
    for s in [&mut model.scorer_a, &mut model.scorer_o, &mut model.scorer_a2o, &mut model.scorer_o2a] {
        *s = Mlp::zeros("z", d.visual + d.semantic, d.hidden, 1).unwrap();
    }
}

#[test]
fn zero_scorers_tie_to_lowest_index() {
    let space = generate_synthetic_embeddings(3, 4, 4, 0).unwrap();
    let mut model = CscNet::<f64>::new(ModelConfig::new(dims(5, 4, 6)), 0).unwrap();
    zero_scorers(&mut model);
    let phi = [0.1, -0.2, 0.3, 0.4, 0.5];
    for out in [forward_a2o(&model, &phi, &space).unwrap(), forward_o2a(&model, &phi, &space).unwrap()] {
        assert_eq!(out.predicted_id, 0);
        assert!(out.primitive_scores.iter().chain(&out.conditioned_scores).all(|&s| s == 0.5));
    }
}

fn single_class_space(attrs: usize, objs: usize) -> SemanticSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    SemanticSpace::new(names("a", attrs), random_phi(&mut rng, attrs * 3), names("o", objs), random_phi(&mut rng, objs * 3), 3)
        .unwrap()
}

#[test]
fn single_primitive_always_predicted() {
    let model = CscNet::<f64>::new(ModelConfig::new(dims(4, 3, 5)), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (p1, p2) = (random_phi(&mut rng, 4), random_phi(&mut rng, 4));

    let space = single_class_space(1, 3);
    let (a, b) = (forward_a2o(&model, &p1, &space).unwrap(), forward_a2o(&model, &p2, &space).unwrap());
    assert_eq!((a.predicted_id, b.predicted_id), (0, 0));
    assert_ne!(a.conditioned_scores, b.conditioned_scores);

    let space = single_class_space(3, 1);
    let (a, b) = (forward_o2a(&model, &p1, &space).unwrap(), forward_o2a(&model, &p2, &space).unwrap());
    assert_eq!((a.predicted_id, b.predicted_id), (0, 0));
    assert_ne!(a.conditioned_scores, b.conditioned_scores);
}

/// Scorer whose score for class row `s` is `relu(s[2])`.
fn third_component_scorer(d_v: usize, d: usize) -> Mlp<f64> {
    let mut w1 = vec![0.0; d * (d_v + d)];
    for j in 0..d {
        w1[j * (d_v + d) + d_v + j] = 1.0;
    }
    let mut w2 = vec![0.0; d];
    w2[2] = 1.0;
    Mlp::from_parts("probe", d_v + d, d, 1, w1, vec![0.0; d], w2, vec![0.0]).unwrap()
}

fn probe(direction: Direction) {
    let model_dims = dims(4, 3, 8);
    let mut model = CscNet::<f64>::new(ModelConfig::new(model_dims), 11).unwrap();
    let other: Vec<f64> = vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
    let (attr_table, obj_table) = match direction {
        Direction::AttrToObj => {
            model.scorer_a = third_component_scorer(3, 3);
            (basis(3), other)
        }
        Direction::ObjToAttr => {
            model.scorer_o = third_component_scorer(3, 3);
            (other, basis(3))
        }
    };
    let space = SemanticSpace::new(names("a", 3), attr_table, names("o", 3), obj_table, 3).unwrap();
    let run = |space: &SemanticSpace| match direction {
        Direction::AttrToObj => forward_a2o(&model, &[0.2, -0.1, 0.4, 0.3], space).unwrap(),
        Direction::ObjToAttr => forward_o2a(&model, &[0.2, -0.1, 0.4, 0.3], space).unwrap(),
    };
    let set = |space: &mut SemanticSpace, i: usize, row: &[f64]| match direction {
        Direction::AttrToObj => space.set_attr_row(i, row).unwrap(),
        Direction::ObjToAttr => space.set_obj_row(i, row).unwrap(),
    };

    let base = run(&space);
    assert_eq!(base.predicted_id, 2);

    let mut off = space.clone();
    set(&mut off, 1, &[1.0, 1.0, 0.2]);
    let out = run(&off);
    assert_eq!(out.predicted_id, 2);
    assert_eq!(out.conditioned_scores, base.conditioned_scores);

    let mut on = space.clone();
    set(&mut on, 2, &[0.3, 0.0, 1.0]);
    let out = run(&on);
    assert_eq!(out.predicted_id, 2);
    assert_ne!(out.conditioned_scores, base.conditioned_scores);
}

#[test]
fn a2o_conditioning_consumes_only_predicted_row() {
    probe(Direction::AttrToObj);
}

#[test]
fn o2a_conditioning_consumes_only_predicted_row() {
    probe(Direction::ObjToAttr);
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

#[test]
fn composition_distribution_properties() {
    let space = generate_synthetic_embeddings(3, 3, 4, 5).unwrap();
    let full = CompositionCatalog::full(3, 3).unwrap();
    let mut model = CscNet::<f64>::new(ModelConfig::new(dims(5, 4, 8)), 5).unwrap();
    let phi = [0.3, 0.1, -0.7, 0.2, 0.9];

    let p = forward_composition(&model, &phi, &space, &full).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);

    let one = CompositionCatalog::new(vec![(1, 2)], vec![true], 3, 3).unwrap();
    assert_eq!(forward_composition(&model, &phi, &space, &one).unwrap(), vec![1.0]);

    model.config.temperature = 0.1;
    let h1 = entropy(&forward_composition(&model, &phi, &space, &full).unwrap());
    model.config.temperature = 0.2;
    let h2 = entropy(&forward_composition(&model, &phi, &space, &full).unwrap());
    assert!(h2 > h1, "{h1} !< {h2}");
}

#[test]
#[allow(clippy::approx_constant)]
fn branch_loss_examples() {
    let mut g = Graph::new();
    let s = consts(&mut g, 1, 1, &[0.5]);
    let l = branch_loss(&mut g, s, &[0], LossMode::FullBce).unwrap();
    assert!((g.scalar(l).unwrap() - 0.5f64.ln().abs()).abs() < 1e-12);
    assert!((g.scalar(l).unwrap() - 0.6931).abs() < 1e-4);

    let e = LOG_EPS;
    let s = consts(&mut g, 1, 3, &[1.0 - e, e, e]);
    let l = branch_loss(&mut g, s, &[0], LossMode::FullBce).unwrap();
    assert!(g.scalar(l).unwrap() < 1e-6);

    let s = consts(&mut g, 1, 2, &[0.5, 0.5]);
    let l = branch_loss(&mut g, s, &[1], LossMode::FullBce).unwrap();
    assert!((g.scalar(l).unwrap() - 2f64.ln()).abs() < 1e-12);

    let s = consts(&mut g, 1, 3, &[0.0, 1.0, 1.0]);
    let l = branch_loss(&mut g, s, &[0], LossMode::FullBce).unwrap();
    assert!(g.scalar(l).unwrap().is_finite());

    let s = consts(&mut g, 1, 3, &[0.25, 0.9, 0.9]);
    let l = branch_loss(&mut g, s, &[0], LossMode::PositiveOnly).unwrap();
    assert!((g.scalar(l).unwrap() + 0.25f64.ln()).abs() < 1e-12);
}

#[test]
fn composition_loss_examples() {
    let mut g = Graph::new();
    let p = consts(&mut g, 1, 4, &[0.25; 4]);
    let l = composition_loss(&mut g, p, &[2]).unwrap();
    assert!((g.scalar(l).unwrap() - 4f64.ln()).abs() < 1e-12);
    assert!((g.scalar(l).unwrap() - 1.3863).abs() < 1e-4);

    let p = consts(&mut g, 1, 3, &[0.0, 1.0, 0.0]);
    let l = composition_loss(&mut g, p, &[1]).unwrap();
    assert_eq!(g.scalar(l).unwrap(), 0.0);

    let t = (-2.0f64).exp();
    let p = consts(&mut g, 1, 2, &[t, 1.0 - t]);
    let l = composition_loss(&mut g, p, &[0]).unwrap();
    assert!((g.scalar(l).unwrap() - 2.0).abs() < 1e-12);

    assert!(composition_loss(&mut g, p, &[2]).is_err());
}

struct Fixture {
    space: SemanticSpace,
    catalog: CompositionCatalog,
    samples: Vec<Sample>,
    model: CscNet<f64>,
}

fn fixture(config: impl FnOnce(&mut ModelConfig)) -> Fixture {
    let space = generate_synthetic_embeddings(3, 3, 4, 21).unwrap();
    let pairs = CompositionCatalog::full(3, 3).unwrap().pairs().to_vec();
    let seen: Vec<bool> = pairs.iter().map(|&(a, o)| (a + o) % 3 != 2).collect();
    let catalog = CompositionCatalog::new(pairs.clone(), seen, 3, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let samples = pairs
        .iter()
        .enumerate()
        .filter(|(k, _)| catalog.is_seen(*k))
        .map(|(_, &(attr, obj))| Sample {
            feature: random_phi(&mut rng, 6),
            attr,
            obj,
        })
        .collect();
    let mut cfg = ModelConfig::new(dims(6, 4, 5));
    config(&mut cfg);
    let model = CscNet::new(cfg, 21).unwrap();
    Fixture {
        space,
        catalog,
        samples,
        model,
    }
}

impl Fixture {
    fn batch(&self) -> Vec<&Sample> {
        self.samples.iter().collect()
    }

    fn total(&self, batch: &[&Sample], cfg: &LossConfig) -> f64 {
        let mut g = Graph::new();
        let l = total_loss(&mut g, &self.model, batch, &self.space, &self.catalog, cfg).unwrap();
        g.scalar(l.total).unwrap()
    }
}

fn bce(scores: &[f64], t: usize) -> f64 {
    let c = |s: f64| s.clamp(LOG_EPS, 1.0 - LOG_EPS);
    let neg: f64 = scores.iter().enumerate().filter(|(i, _)| *i != t).map(|(_, &s)| -(1.0 - c(s)).ln()).sum();
    (-c(scores[t]).ln() + neg) / scores.len() as f64
}

#[test]
fn alpha_zero_is_composition_loss() {
    let f = fixture(|_| {});
    let batch = f.batch();
    let total = f.total(&batch, &LossConfig { alpha: 0.0, ..LossConfig::default() });
    let seen = f.catalog.seen_only().unwrap();
    let hand: f64 = batch
        .iter()
        .map(|s| {
            let p = forward_composition(&f.model, &s.feature, &f.space, &seen).unwrap();
            -p[seen.index_of(s.attr, s.obj).unwrap()].ln()
        })
        .sum::<f64>()
        / batch.len() as f64;
    assert!((total - hand).abs() < 1e-12, "{total} vs {hand}");
}

#[test]
fn alpha_four_recomposes_from_separate_losses() {
    let f = fixture(|_| {});
    let batch = f.batch();
    let total = f.total(&batch, &LossConfig::default());
    let seen = f.catalog.seen_only().unwrap();
    let n = batch.len() as f64;
    let (mut cascade, mut comp) = (0.0, 0.0);
    for s in &batch {
        let a2o = forward_a2o(&f.model, &s.feature, &f.space).unwrap();
        let o2a = forward_o2a(&f.model, &s.feature, &f.space).unwrap();
        cascade += bce(&a2o.primitive_scores, s.attr)
            + bce(&a2o.conditioned_scores, s.obj)
            + bce(&o2a.primitive_scores, s.obj)
            + bce(&o2a.conditioned_scores, s.attr);
        let p = forward_composition(&f.model, &s.feature, &f.space, &seen).unwrap();
        comp -= p[seen.index_of(s.attr, s.obj).unwrap()].ln();
    }
    let hand = 4.0 * cascade / n + comp / n;
    assert!((total - hand).abs() < 1e-10, "{total} vs {hand}");
}

#[test]
fn total_loss_is_linear_in_alpha() {
    let f = fixture(|_| {});
    let batch = f.batch();
    let at = |alpha| f.total(&batch, &LossConfig { alpha, ..LossConfig::default() });
    let (l0, l1, l4) = (at(0.0), at(1.0), at(4.0));
    assert!((l4 - (l0 + 4.0 * (l1 - l0))).abs() < 1e-9);
}

#[test]
fn duplicated_sample_matches_single() {
    let f = fixture(|_| {});
    let s = &f.samples[0];
    let cfg = LossConfig::default();
    assert!((f.total(&[s, s], &cfg) - f.total(&[s], &cfg)).abs() < 1e-12);
}

#[test]
fn unseen_pair_in_batch_is_rejected() {
    let f = fixture(|_| {});
    let bad = Sample {
        feature: vec![0.0; 6],
        attr: 0,
        obj: 2,
    };
    assert!(!f.catalog.is_seen(f.catalog.index_of(0, 2).unwrap()));
    let mut g = Graph::new();
    let err = total_loss(&mut g, &f.model, &[&f.samples[0], &bad], &f.space, &f.catalog, &LossConfig::default()).unwrap_err();
    assert!(err.to_string().contains("sample 1"), "{err}");
}

#[test]
fn disabled_branches_drop_their_terms() {
    let f = fixture(|c| {
        c.branches = Branches {
            a2o: true,
            o2a: false,
            composition: false,
        }
    });
    let mut g = Graph::new();
    let l = total_loss(&mut g, &f.model, &f.batch(), &f.space, &f.catalog, &LossConfig::default()).unwrap();
    assert!(l.obj.is_none() && l.o2a.is_none() && l.composition.is_none());
    let hand = 4.0 * (g.scalar(l.attr.unwrap()).unwrap() + g.scalar(l.a2o.unwrap()).unwrap());
    assert!((g.scalar(l.total).unwrap() - hand).abs() < 1e-12);
}

#[test]
fn teacher_forcing_conditions_on_truth() {
    let f = fixture(|_| {});
    let batch = f.batch();
    let mut g = Graph::new();
    let cfg = LossConfig {
        teacher_forcing: true,
        ..LossConfig::default()
    };
    let l = total_loss(&mut g, &f.model, &batch, &f.space, &f.catalog, &cfg).unwrap();
    let a2o = l.cascades.0.unwrap();
    let mut g2 = Graph::new();
    let phi = f.model.features(&mut g2, batch.iter().map(|s| s.feature.as_slice())).unwrap();
    let truth: Vec<usize> = batch.iter().map(|s| s.attr).collect();
    let forced = f.model.cascade(&mut g2, phi, &f.space, Direction::AttrToObj, Some(&truth)).unwrap();
    assert_eq!(g.value(a2o.conditioned).unwrap(), g2.value(forced.conditioned).unwrap());
}

fn parts_for(f: &Fixture, phi: &[f64]) -> (BranchOutput, BranchOutput, Vec<f64>) {
    (
        forward_a2o(&f.model, phi, &f.space).unwrap(),
        forward_o2a(&f.model, phi, &f.space).unwrap(),
        forward_composition(&f.model, phi, &f.space, &f.catalog).unwrap(),
    )
}

#[test]
fn beta_endpoints() {
    let f = fixture(|_| {});
    let phi = &f.samples[2].feature;
    let (a2o, o2a, comp) = parts_for(&f, phi);
    let s0 = inference_score(&f.model, phi, &f.space, &f.catalog, 0.0).unwrap();
    assert!(close(&s0, &comp, 1e-12));
    let s1 = inference_score(&f.model, phi, &f.space, &f.catalog, 1.0).unwrap();
    let cascade: Vec<f64> = f
        .catalog
        .pairs()
        .iter()
        .map(|&(a, o)| a2o.primitive_scores[a] * a2o.conditioned_scores[o] + o2a.primitive_scores[o] * o2a.conditioned_scores[a])
        .collect();
    assert!(close(&s1, &cascade, 1e-12));
}

#[test]
fn beta_half_hand_blend() {
    let parts = InferenceParts {
        attr: Some(vec![0.9, 0.2]),
        obj_given_attr: Some(vec![0.6, 0.3]),
        obj: Some(vec![0.7, 0.4]),
        attr_given_obj: Some(vec![0.8, 0.1]),
        composition: Some(vec![0.4, 0.3, 0.2, 0.1]),
    };
    let cat = CompositionCatalog::full(2, 2).unwrap();
    // (0,0): 0.9·0.6 + 0.7·0.8 = 1.10;  (0,1): 0.9·0.3 + 0.4·0.8 = 0.59
    // (1,0): 0.2·0.6 + 0.7·0.1 = 0.19;  (1,1): 0.2·0.3 + 0.4·0.1 = 0.10
    let hand = [0.5 * 1.10 + 0.2, 0.5 * 0.59 + 0.15, 0.5 * 0.19 + 0.1, 0.5 * 0.10 + 0.05];
    assert!(close(&parts.fuse(&cat, 0.5).unwrap(), &hand, 1e-12));
}

#[test]
fn inference_is_linear_in_beta_and_rejects_bad_beta() {
    let f = fixture(|_| {});
    let phi = &f.samples[4].feature;
    let at = |b| inference_score(&f.model, phi, &f.space, &f.catalog, b).unwrap();
    let (s0, s1, s3) = (at(0.0), at(1.0), at(0.3));
    let interp: Vec<f64> = s0.iter().zip(&s1).map(|(a, b)| 0.7 * a + 0.3 * b).collect();
    assert!(close(&s3, &interp, 1e-9));
    for b in [-0.1, 1.5, f64::NAN] {
        assert!(inference_score(&f.model, phi, &f.space, &f.catalog, b).is_err());
    }
}

#[test]
fn batched_scores_match_single() {
    let f = fixture(|_| {});
    let phis: Vec<&[f64]> = f.samples.iter().map(|s| s.feature.as_slice()).collect();
    let batched = inference_scores(&f.model, &phis, &f.space, &f.catalog, 0.4).unwrap();
    for (phi, row) in phis.iter().zip(&batched) {
        assert!(close(row, &inference_score(&f.model, phi, &f.space, &f.catalog, 0.4).unwrap(), 1e-12));
    }
}

#[test]
fn total_loss_gradient_checks() {
    for tweak in [
        (|_: &mut ModelConfig| {}) as fn(&mut ModelConfig),
        |c| c.primitive_classifier = ClassifierKind::NonParametric,
        |c| c.composition_classifier = ClassifierKind::Parametric,
    ] {
        let mut f = fixture(tweak);
        let batch: Vec<Sample> = f.samples.iter().take(4).cloned().collect();
        let (space, catalog) = (f.space.clone(), f.catalog.clone());
        let report = grad_check(
            &mut f.model,
            |g, m| {
                let refs: Vec<&Sample> = batch.iter().collect();
                Ok(total_loss(g, m, &refs, &space, &catalog, &LossConfig::default())?.total)
            },
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed, "{:?}: worst {} at {}: {}", f.model.config, report.worst_block, report.worst_index, report.max_rel_error);
    }
}

#[test]
fn networks_share_no_parameters() {
    let model = CscNet::<f64>::new(ModelConfig::new(dims(6, 4, 5)), 0).unwrap();
    let mut ids: Vec<_> = model.params().iter().map(|p| p.id()).collect();
    let n = ids.len();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), n);
    assert_eq!(model.networks().len(), 10);
    assert_eq!(model.e_a2o.input_dim(), 10);
    assert_eq!(model.scorer_a.input_dim(), 8);
}

#[test]
fn config_validation() {
    let mut c = ModelConfig::new(dims(6, 4, 5));
    c.dims.visual = 3;
    assert!(c.validate().is_ok());
    c.primitive_classifier = ClassifierKind::NonParametric;
    assert!(c.validate().is_err());
    let mut c = ModelConfig::new(dims(6, 4, 5));
    c.branches = Branches {
        a2o: false,
        o2a: false,
        composition: false,
    };
    assert!(c.validate().is_err());
}

proptest! {
    #[test]
    fn argmax_survives_monotone_transform(v in proptest::collection::vec(-5.0f64..5.0, 1..12)) {
        let t: Vec<f64> = v.iter().map(|x| (2.0 * x).exp() + 3.0).collect();
        prop_assert_eq!(argmax(&v), argmax(&t));
    }

    #[test]
    fn param_cls_stays_in_open_interval(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scorer = Mlp::<f64>::new("s", 6, 4, 1, &mut rng).unwrap();
        let mut g = Graph::new();
        let v = consts(&mut g, 2, 3, &random_phi(&mut rng, 6));
        let t = consts(&mut g, 5, 3, &random_phi(&mut rng, 15));
        let s = param_cls(&mut g, &scorer, v, t).unwrap();
        prop_assert!(g.value(s).unwrap().iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn non_param_cls_sums_to_one(seed in 0u64..500, temp in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let v = consts(&mut g, 1, 4, &random_phi(&mut rng, 4));
        let t = consts(&mut g, 6, 4, &random_phi(&mut rng, 24));
        let p = non_param_cls(&mut g, v, t, temp).unwrap();
        prop_assert!((g.value(p).unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}

