//! Samples, seen/unseen splits, the synthetic compositional generator and
//! the on-disk feature/label formats.
//!
//! Features file (binary, little-endian): the 12 bytes `czsl-feat v1`,
//! then `u64` sample count and `u64` width, then row-major `f32` values.
//! Labels file (text): one `attr_name obj_name split` line per feature
//! row, with `split` one of `train`, `test_seen`, `test_unseen`.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::semantics::{CompositionCatalog, SemanticSpace};

pub const FEATURES_MAGIC: &[u8; 12] = b"czsl-feat v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Precomputed image feature.
    pub feature: Vec<f64>,
    pub attr: usize,
    pub obj: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub catalog: CompositionCatalog,
    pub n_attrs: usize,
    pub n_objs: usize,
}

impl DatasetSplit {
    /// Validates every split invariant.
    pub fn new(train: Vec<Sample>, test: Vec<Sample>, catalog: CompositionCatalog, n_attrs: usize, n_objs: usize) -> Result<Self> {
        let split = DatasetSplit {
            train,
            test,
            catalog,
            n_attrs,
            n_objs,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn feature_dim(&self) -> usize {
        self.train.first().map_or(0, |s| s.feature.len())
    }

    /// Catalog index of a sample's pair.
    pub fn pair_index(&self, s: &Sample) -> Option<usize> {
        self.catalog.index_of(s.attr, s.obj)
    }

    pub fn is_unseen(&self, s: &Sample) -> bool {
        self.pair_index(s).is_some_and(|k| !self.catalog.is_seen(k))
    }

    fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Dataset("train split is empty".into()));
        }
        let width = self.feature_dim();
        for (group, samples) in [("train", &self.train), ("test", &self.test)] {
            for (i, s) in samples.iter().enumerate() {
                if s.feature.len() != width {
                    return Err(Error::Dataset(format!(
                        "{group} sample {i} has width {}, expected {width}",
                        s.feature.len()
                    )));
                }
                if s.feature.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Dataset(format!("{group} sample {i} has a non-finite feature")));
                }
                let k = self.pair_index(s).ok_or_else(|| {
                    Error::Dataset(format!("{group} sample {i} pair ({}, {}) not in catalog", s.attr, s.obj))
                })?;
                if group == "train" && !self.catalog.is_seen(k) {
                    return Err(Error::Dataset(format!(
                        "train sample {i} has unseen pair ({}, {})",
                        s.attr, s.obj
                    )));
                }
            }
        }
        if !self.test.iter().any(|s| !self.is_unseen(s)) {
            return Err(Error::Dataset("test split has no seen-pair sample".into()));
        }
        if !self.test.iter().any(|s| self.is_unseen(s)) {
            return Err(Error::Dataset("test split has no unseen-pair sample".into()));
        }
        coverage_gap(&self.catalog, self.n_attrs, self.n_objs).map_or(Ok(()), |(kind, id)| {
            Err(Error::Dataset(format!("{kind} {id} appears in no seen pair")))
        })
    }
}

/// First primitive not covered by a seen pair, as `("attribute" | "object", id)`.
fn coverage_gap(catalog: &CompositionCatalog, n_attrs: usize, n_objs: usize) -> Option<(&'static str, usize)> {
    let mut attrs = vec![false; n_attrs];
    let mut objs = vec![false; n_objs];
    for (k, &(a, o)) in catalog.pairs().iter().enumerate() {
        if catalog.is_seen(k) {
            attrs[a] = true;
            objs[o] = true;
        }
    }
    if let Some(a) = attrs.iter().position(|c| !c) {
        return Some(("attribute", a));
    }
    objs.iter().position(|c| !c).map(|o| ("object", o))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_attrs: usize,
    pub n_objs: usize,
    pub d_x: usize,
    pub samples_per_pair: usize,
    pub seen_fraction: f64,
    /// Fraction of each seen pair's samples held out as `test_seen`.
    pub test_seen_fraction: f64,
    pub noise_sigma: f64,
    pub entanglement: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_attrs: 5,
            n_objs: 5,
            d_x: 32,
            samples_per_pair: 30,
            seen_fraction: 0.8,
            test_seen_fraction: 0.2,
            noise_sigma: 0.1,
            entanglement: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.seen_fraction > 0.0 && self.seen_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("seen_fraction must lie in (0, 1), got {}", self.seen_fraction)));
        }
        if !(self.test_seen_fraction > 0.0 && self.test_seen_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "test_seen_fraction must lie in (0, 1), got {}",
                self.test_seen_fraction
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(0.0..=1.0).contains(&self.entanglement) {
            return Err(Error::InvalidArgument(format!("entanglement must lie in [0, 1], got {}", self.entanglement)));
        }
        if self.d_x == 0 || self.samples_per_pair == 0 {
            return Err(Error::InvalidArgument("d_x and samples_per_pair must be positive".into()));
        }
        Ok(())
    }
}

/// Synthetic split whose features are built from the semantic rows.
///
/// Pair `(a, o)` has prototype `W_a·u_a + W_o·u_o + e·W_x·(u_a ⊙ u_o)`
/// with seeded Gaussian maps, and samples are the prototype plus
/// `N(0, σ²)` noise. Feature values are rounded to `f32` so the split
/// survives a trip through the features file unchanged.
pub fn generate_synthetic_dataset(spec: &SynthSpec, space: &SemanticSpace) -> Result<DatasetSplit> {
    spec.validate()?;
    if space.n_attrs() != spec.n_attrs || space.n_objs() != spec.n_objs {
        return Err(Error::InvalidArgument(format!(
            "spec wants {}x{} primitives, semantic space has {}x{}",
            spec.n_attrs,
            spec.n_objs,
            space.n_attrs(),
            space.n_objs()
        )));
    }
    let (n, m, d, dx) = (spec.n_attrs, spec.n_objs, space.dim(), spec.d_x);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let catalog = choose_unseen(n, m, spec.seen_fraction, &mut rng, space)?;

    let scale = 1.0 / (d as f64).sqrt();
    let mut gauss = |len: usize, s: f64| -> Vec<f64> {
        (0..len).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); s * z }).collect::<Vec<f64>>()
    };
    let w_a = gauss(dx * d, scale);
    let w_o = gauss(dx * d, scale);
    let w_x = gauss(dx * d, 1.0);
    let apply = |w: &[f64], u: &[f64]| -> Vec<f64> {
        (0..dx).map(|r| w[r * d..(r + 1) * d].iter().zip(u).map(|(a, b)| a * b).sum()).collect()
    };

    let n_test_seen = ((spec.samples_per_pair as f64) * spec.test_seen_fraction).round() as usize;
    if n_test_seen == 0 || n_test_seen >= spec.samples_per_pair {
        return Err(Error::InvalidArgument(format!(
            "samples_per_pair={} with test_seen_fraction={} leaves an empty train or test_seen share",
            spec.samples_per_pair, spec.test_seen_fraction
        )));
    }
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (k, &(a, o)) in catalog.pairs().iter().enumerate() {
        let (ua, uo) = (space.attr_row(a), space.obj_row(o));
        let prod: Vec<f64> = ua.iter().zip(uo).map(|(x, y)| x * y).collect();
        let (pa, po, px) = (apply(&w_a, ua), apply(&w_o, uo), apply(&w_x, &prod));
        let proto: Vec<f64> = (0..dx).map(|i| pa[i] + po[i] + spec.entanglement * px[i]).collect();
        for i in 0..spec.samples_per_pair {
            let feature: Vec<f64> = proto
                .iter()
                .map(|&p| {
                    let z = if spec.noise_sigma > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
                    (p + z) as f32 as f64
                })
                .collect();
            let s = Sample { feature, attr: a, obj: o };
            if catalog.is_seen(k) && i >= n_test_seen {
                train.push(s);
            } else {
                test.push(s);
            }
        }
    }
    DatasetSplit::new(train, test, catalog, n, m)
}

/// Marks pairs unseen at random while every primitive keeps a seen pair.
fn choose_unseen(n: usize, m: usize, seen_fraction: f64, rng: &mut ChaCha8Rng, space: &SemanticSpace) -> Result<CompositionCatalog> {
    let total = n * m;
    let n_seen = ((total as f64) * seen_fraction).round() as usize;
    let n_unseen = total.saturating_sub(n_seen);
    if n_unseen == 0 {
        return Err(Error::Dataset(format!(
            "seen_fraction {seen_fraction} over {total} pairs leaves no unseen pair"
        )));
    }
    let full = CompositionCatalog::full(n, m)?;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    let mut seen = vec![true; total];
    let mut attr_cover = vec![m; n];
    let mut obj_cover = vec![n; m];
    let mut marked = 0;
    let mut blocked = None;
    for &k in &order {
        if marked == n_unseen {
            break;
        }
        let (a, o) = full.pairs()[k];
        if attr_cover[a] > 1 && obj_cover[o] > 1 {
            seen[k] = false;
            attr_cover[a] -= 1;
            obj_cover[o] -= 1;
            marked += 1;
        } else if blocked.is_none() {
            blocked = Some(if attr_cover[a] <= 1 {
                format!("attribute `{}`", space.attr_names()[a])
            } else {
                format!("object `{}`", space.obj_names()[o])
            });
        }
    }
    if marked < n_unseen {
        return Err(Error::Dataset(format!(
            "seen_fraction {seen_fraction} cannot keep every primitive seen: {} would be left uncovered",
            blocked.unwrap_or_else(|| "a primitive".into())
        )));
    }
    CompositionCatalog::new(full.pairs().to_vec(), seen, n, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SplitTag {
    Train,
    TestSeen,
    TestUnseen,
}

impl SplitTag {
    fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::TestSeen => "test_seen",
            SplitTag::TestUnseen => "test_unseen",
        }
    }
}

/// Features file bytes: train rows, then test rows.
pub fn encode_features(split: &DatasetSplit) -> Vec<u8> {
    let rows: Vec<&Sample> = split.train.iter().chain(&split.test).collect();
    let width = split.feature_dim();
    let mut out = Vec::with_capacity(28 + rows.len() * width * 4);
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    out.extend_from_slice(&(width as u64).to_le_bytes());
    for s in rows {
        for &v in &s.feature {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn encode_labels(split: &DatasetSplit, space: &SemanticSpace) -> String {
    let mut out = String::new();
    let rows = split
        .train
        .iter()
        .map(|s| (s, SplitTag::Train))
        .chain(split.test.iter().map(|s| {
            let tag = if split.is_unseen(s) { SplitTag::TestUnseen } else { SplitTag::TestSeen };
            (s, tag)
        }));
    for (s, tag) in rows {
        let _ = writeln!(out, "{} {} {}", space.attr_names()[s.attr], space.obj_names()[s.obj], tag.as_str());
    }
    out
}

/// Hex SHA-256 over the features and labels encodings.
pub fn fingerprint(split: &DatasetSplit, space: &SemanticSpace) -> String {
    let mut h = Sha256::new();
    h.update(encode_features(split));
    h.update(encode_labels(split, space).as_bytes());
    hex::encode(h.finalize())
}

pub fn write_dataset(split: &DatasetSplit, space: &SemanticSpace, features: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let (fp, lp) = (features.as_ref(), labels.as_ref());
    fs::write(fp, encode_features(split)).map_err(|e| Error::io(fp, e))?;
    fs::write(lp, encode_labels(split, space)).map_err(|e| Error::io(lp, e))
}

pub fn decode_features(bytes: &[u8]) -> Result<(usize, Vec<Vec<f64>>)> {
    if bytes.len() < 28 || &bytes[..12] != FEATURES_MAGIC {
        return Err(Error::Dataset("features file lacks `czsl-feat v1` header".into()));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let width = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
    let expected = count
        .checked_mul(width)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(28))
        .ok_or_else(|| Error::Dataset("features header overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Dataset(format!(
            "features file is {} bytes, header implies {expected} ({count} rows x {width})",
            bytes.len()
        )));
    }
    if width == 0 {
        return Err(Error::Dataset("feature width is zero".into()));
    }
    let rows = bytes[28..]
        .chunks_exact(4 * width)
        .map(|row| row.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect())
        .collect();
    Ok((width, rows))
}

/// Parses labels for `features` rows and rebuilds the split.
///
/// The catalog holds every pair that occurs, sorted by `(attr, obj)`;
/// pairs with train samples are seen.
pub fn decode_dataset(features: Vec<Vec<f64>>, labels: &str, space: &SemanticSpace) -> Result<DatasetSplit> {
    let mut parsed = Vec::new();
    for (i, line) in labels.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::Dataset(format!("labels line {}: expected `attr obj split`, got {line:?}", i + 1)));
        }
        let a = space
            .attr_id(f[0])
            .ok_or_else(|| Error::Dataset(format!("labels line {}: unknown attribute `{}`", i + 1, f[0])))?;
        let o = space
            .obj_id(f[1])
            .ok_or_else(|| Error::Dataset(format!("labels line {}: unknown object `{}`", i + 1, f[1])))?;
        let tag = match f[2] {
            "train" => SplitTag::Train,
            "test_seen" => SplitTag::TestSeen,
            "test_unseen" => SplitTag::TestUnseen,
            other => return Err(Error::Dataset(format!("labels line {}: unknown split `{other}`", i + 1))),
        };
        parsed.push((a, o, tag));
    }
    if parsed.len() != features.len() {
        return Err(Error::Dataset(format!(
            "{} label lines for {} feature rows",
            parsed.len(),
            features.len()
        )));
    }

    let train_pairs: HashSet<(usize, usize)> = parsed.iter().filter(|p| p.2 == SplitTag::Train).map(|p| (p.0, p.1)).collect();
    let unseen_pairs: HashSet<(usize, usize)> = parsed.iter().filter(|p| p.2 == SplitTag::TestUnseen).map(|p| (p.0, p.1)).collect();
    let mut train_idx = 0;
    for &(a, o, tag) in &parsed {
        let pair = (a, o);
        let name = || format!("({} {})", space.attr_names()[a], space.obj_names()[o]);
        match tag {
            SplitTag::Train if unseen_pairs.contains(&pair) => {
                return Err(Error::Dataset(format!(
                    "train sample {train_idx} has unseen pair {}",
                    name()
                )));
            }
            SplitTag::TestSeen if !train_pairs.contains(&pair) => {
                return Err(Error::Dataset(format!("test_seen pair {} has no train sample", name())));
            }
            _ => {}
        }
        if tag == SplitTag::Train {
            train_idx += 1;
        }
    }

    let all: BTreeSet<(usize, usize)> = parsed.iter().map(|p| (p.0, p.1)).collect();
    let pairs: Vec<_> = all.into_iter().collect();
    let seen = pairs.iter().map(|p| train_pairs.contains(p)).collect();
    let catalog = CompositionCatalog::new(pairs, seen, space.n_attrs(), space.n_objs())?;

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (feature, (attr, obj, tag)) in features.into_iter().zip(parsed) {
        let s = Sample { feature, attr, obj };
        if tag == SplitTag::Train {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    DatasetSplit::new(train, test, catalog, space.n_attrs(), space.n_objs())
}

pub fn load_dataset(features: impl AsRef<Path>, labels: impl AsRef<Path>, space: &SemanticSpace) -> Result<DatasetSplit> {
    let (fp, lp) = (features.as_ref(), labels.as_ref());
    let bytes = fs::read(fp).map_err(|e| Error::io(fp, e))?;
    let text = fs::read_to_string(lp).map_err(|e| Error::io(lp, e))?;
    let (_, rows) = decode_features(&bytes)?;
    decode_dataset(rows, &text, space)
}

/// Train samples in an order that depends only on `(seed, epoch)`.
pub fn batches(split: &DatasetSplit, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<&Sample>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    if split.train.is_empty() {
        return Err(Error::Dataset("train split is empty".into()));
    }
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_add(1));
    order.shuffle(&mut rng);
    Ok(order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| &split.train[i]).collect())
        .collect())
}
