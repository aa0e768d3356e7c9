//! Attribute and object embedding tables, the composition catalog, and
//! the Compose network that maps a primitive pair to one embedding.
//!
//! Embedding files are plain UTF-8 text:
//!
//! ```text
//! czsl-emb v1 dim=3
//! [attributes]
//! ripe 0.1 0.2 0.3
//! green 0.3 0.1 0.0
//! [objects]
//! apple 1 0 0
//! banana 0 1 0
//! ```
//!
//! Rows are L2-normalized on load.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{lit, Graph, Mlp, Real, Var};

pub const EMBEDDING_HEADER: &str = "czsl-emb v1";

/// Max cosine between any two generated rows.
pub const SYNTHETIC_COSINE_CAP: f64 = 0.95;
const SYNTHETIC_MAX_RETRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSpace {
    attr_names: Vec<String>,
    obj_names: Vec<String>,
    s_attr: Vec<f64>,
    s_obj: Vec<f64>,
    dim: usize,
}

impl SemanticSpace {
    /// Validates and L2-normalizes the given row-major tables.
    ///
    /// Single-class tables are accepted here; the file loader and the
    /// synthetic generator both require at least two rows per table.
    pub fn new(attr_names: Vec<String>, s_attr: Vec<f64>, obj_names: Vec<String>, s_obj: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Embedding("dimension must be positive".into()));
        }
        for (section, names, table) in [("attributes", &attr_names, &s_attr), ("objects", &obj_names, &s_obj)] {
            if names.is_empty() {
                return Err(Error::Embedding(format!("[{section}] section is empty")));
            }
            if table.len() != names.len() * dim {
                return Err(Error::Embedding(format!(
                    "[{section}] table has {} values, expected {} rows of dim {dim}",
                    table.len(),
                    names.len()
                )));
            }
            let mut seen = HashSet::new();
            for (i, name) in names.iter().enumerate() {
                if name.is_empty() || name.chars().any(char::is_whitespace) {
                    return Err(Error::Embedding(format!("[{section}] invalid name {name:?}")));
                }
                if !seen.insert(name.as_str()) {
                    return Err(Error::Embedding(format!("[{section}] duplicate name `{name}`")));
                }
                let row = &table[i * dim..(i + 1) * dim];
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Embedding(format!("[{section}] row `{name}` is not finite")));
                }
                if row.iter().all(|&v| v == 0.0) {
                    return Err(Error::Embedding(format!("[{section}] row `{name}` is all zeros")));
                }
            }
        }
        let mut s_attr = s_attr;
        let mut s_obj = s_obj;
        normalize_rows(&mut s_attr, dim);
        normalize_rows(&mut s_obj, dim);
        Ok(SemanticSpace {
            attr_names,
            obj_names,
            s_attr,
            s_obj,
            dim,
        })
    }

    pub fn n_attrs(&self) -> usize {
        self.attr_names.len()
    }

    pub fn n_objs(&self) -> usize {
        self.obj_names.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn attr_names(&self) -> &[String] {
        &self.attr_names
    }

    pub fn obj_names(&self) -> &[String] {
        &self.obj_names
    }

    /// Row-major `n × d` attribute table.
    pub fn attr_table(&self) -> &[f64] {
        &self.s_attr
    }

    /// Row-major `m × d` object table.
    pub fn obj_table(&self) -> &[f64] {
        &self.s_obj
    }

    pub fn attr_row(&self, i: usize) -> &[f64] {
        &self.s_attr[i * self.dim..(i + 1) * self.dim]
    }

    pub fn obj_row(&self, j: usize) -> &[f64] {
        &self.s_obj[j * self.dim..(j + 1) * self.dim]
    }

    /// Replaces one row, renormalizing it. Used for perturbation probes.
    pub fn set_attr_row(&mut self, i: usize, row: &[f64]) -> Result<()> {
        set_row(&mut self.s_attr, self.dim, i, row)
    }

    pub fn set_obj_row(&mut self, j: usize, row: &[f64]) -> Result<()> {
        set_row(&mut self.s_obj, self.dim, j, row)
    }

    pub fn attr_id(&self, name: &str) -> Option<usize> {
        self.attr_names.iter().position(|n| n == name)
    }

    pub fn obj_id(&self, name: &str) -> Option<usize> {
        self.obj_names.iter().position(|n| n == name)
    }

    /// Attribute table as a graph constant.
    pub fn attr_const<T: Real>(&self, g: &mut Graph<T>) -> Result<Var> {
        g.constant(self.n_attrs(), self.dim, self.s_attr.iter().map(|&v| lit(v)).collect())
    }

    pub fn obj_const<T: Real>(&self, g: &mut Graph<T>) -> Result<Var> {
        g.constant(self.n_objs(), self.dim, self.s_obj.iter().map(|&v| lit(v)).collect())
    }

    /// Serializes in the embedding file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{EMBEDDING_HEADER} dim={}", self.dim);
        for (section, names, table) in [("attributes", &self.attr_names, &self.s_attr), ("objects", &self.obj_names, &self.s_obj)] {
            let _ = writeln!(out, "[{section}]");
            for (i, name) in names.iter().enumerate() {
                out.push_str(name);
                for v in &table[i * self.dim..(i + 1) * self.dim] {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Embedding("empty file".into()))?;
        let dim = parse_header(header.trim())?;

        #[derive(PartialEq)]
        enum Section {
            None,
            Attrs,
            Objs,
        }
        let mut section = Section::None;
        let mut seen_sections = (false, false);
        let (mut attr_names, mut s_attr, mut obj_names, mut s_obj) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (lineno, raw) in lines {
            let line = raw.trim();
            match line {
                "[attributes]" => {
                    if seen_sections.0 {
                        return Err(Error::Embedding("duplicate [attributes] section".into()));
                    }
                    seen_sections.0 = true;
                    section = Section::Attrs;
                    continue;
                }
                "[objects]" => {
                    if seen_sections.1 {
                        return Err(Error::Embedding("duplicate [objects] section".into()));
                    }
                    seen_sections.1 = true;
                    section = Section::Objs;
                    continue;
                }
                _ => {}
            }
            let mut fields = line.split_whitespace();
            let name = fields.next().unwrap_or_default().to_string();
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Embedding(format!("line {}: row `{name}`: bad number {f:?}", lineno + 1)))
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::Embedding(format!(
                    "line {}: row `{name}` has {} values, expected dim={dim}",
                    lineno + 1,
                    values.len()
                )));
            }
            let (names, table) = match section {
                Section::Attrs => (&mut attr_names, &mut s_attr),
                Section::Objs => (&mut obj_names, &mut s_obj),
                Section::None => {
                    return Err(Error::Embedding(format!("line {}: row `{name}` outside any section", lineno + 1)));
                }
            };
            names.push(name);
            table.extend(values);
        }
        for (section, names) in [("attributes", &attr_names), ("objects", &obj_names)] {
            if names.is_empty() {
                return Err(Error::Embedding(format!("[{section}] section is empty or missing")));
            }
            if names.len() < 2 {
                return Err(Error::Embedding(format!("[{section}] needs at least 2 rows, got 1")));
            }
        }
        SemanticSpace::new(attr_names, s_attr, obj_names, s_obj, dim)
    }
}

fn parse_header(line: &str) -> Result<usize> {
    let rest = line
        .strip_prefix(EMBEDDING_HEADER)
        .ok_or_else(|| Error::Embedding(format!("missing `{EMBEDDING_HEADER}` header, got {line:?}")))?;
    let dim = rest
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse::<usize>().ok())
        .ok_or_else(|| Error::Embedding(format!("malformed header {line:?}")))?;
    if dim == 0 {
        return Err(Error::Embedding("dim must be positive".into()));
    }
    Ok(dim)
}

fn normalize_rows(table: &mut [f64], dim: usize) {
    for row in table.chunks_mut(dim) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
}

fn set_row(table: &mut [f64], dim: usize, i: usize, row: &[f64]) -> Result<()> {
    if row.len() != dim || (i + 1) * dim > table.len() {
        return Err(Error::dim("set_row", dim, row.len()));
    }
    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::Embedding("replacement row must be finite and non-zero".into()));
    }
    for (d, v) in table[i * dim..(i + 1) * dim].iter_mut().zip(row) {
        *d = v / n;
    }
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<SemanticSpace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SemanticSpace::parse(&text)
}

pub fn write_embeddings(space: &SemanticSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, space.to_text()).map_err(|e| Error::io(path, e))
}

/// Seeded Gaussian rows, normalized, with every pair of rows across both
/// tables below [`SYNTHETIC_COSINE_CAP`].
pub fn generate_synthetic_embeddings(n: usize, m: usize, dim: usize, seed: u64) -> Result<SemanticSpace> {
    if n < 2 || m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 attributes and 2 objects, got n={n}, m={m}"
        )));
    }
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("embedding dim must be >= 2, got {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n + m);
    while rows.len() < n + m {
        let mut tries = 0;
        let row = loop {
            let mut r: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter_mut().for_each(|v| *v /= norm);
            let ok = rows
                .iter()
                .all(|o| o.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() < SYNTHETIC_COSINE_CAP);
            if ok {
                break r;
            }
            tries += 1;
            if tries >= SYNTHETIC_MAX_RETRIES {
                return Err(Error::InvalidArgument(format!(
                    "could not place {} rows under cosine cap {SYNTHETIC_COSINE_CAP} in dim {dim}",
                    n + m
                )));
            }
        };
        rows.push(row);
    }
    let s_attr = rows[..n].concat();
    let s_obj = rows[n..].concat();
    SemanticSpace::new(
        (0..n).map(|i| format!("attr{i}")).collect(),
        s_attr,
        (0..m).map(|j| format!("obj{j}")).collect(),
        s_obj,
        dim,
    )
}

/// Candidate `(attribute, object)` pairs with their seen flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionCatalog {
    pairs: Vec<(usize, usize)>,
    seen: Vec<bool>,
    index: HashMap<(usize, usize), usize>,
}

impl CompositionCatalog {
    pub fn new(pairs: Vec<(usize, usize)>, seen: Vec<bool>, n_attrs: usize, n_objs: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("composition catalog is empty".into()));
        }
        if pairs.len() != seen.len() {
            return Err(Error::dim("CompositionCatalog", pairs.len(), seen.len()));
        }
        let mut index = HashMap::with_capacity(pairs.len());
        for (k, &(a, o)) in pairs.iter().enumerate() {
            if a >= n_attrs || o >= n_objs {
                return Err(Error::InvalidArgument(format!(
                    "pair ({a}, {o}) out of range for {n_attrs} attributes and {n_objs} objects"
                )));
            }
            if index.insert((a, o), k).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate pair ({a}, {o})")));
            }
        }
        Ok(CompositionCatalog { pairs, seen, index })
    }

    /// Every `(a, o)` in row-major order, all marked seen.
    pub fn full(n_attrs: usize, n_objs: usize) -> Result<Self> {
        let pairs: Vec<_> = (0..n_attrs).flat_map(|a| (0..n_objs).map(move |o| (a, o))).collect();
        let seen = vec![true; pairs.len()];
        Self::new(pairs, seen, n_attrs, n_objs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn seen_mask(&self) -> &[bool] {
        &self.seen
    }

    pub fn is_seen(&self, k: usize) -> bool {
        self.seen[k]
    }

    pub fn index_of(&self, attr: usize, obj: usize) -> Option<usize> {
        self.index.get(&(attr, obj)).copied()
    }

    pub fn n_seen(&self) -> usize {
        self.seen.iter().filter(|&&s| s).count()
    }

    pub fn n_unseen(&self) -> usize {
        self.len() - self.n_seen()
    }

    /// The seen pairs only, in catalog order.
    pub fn seen_only(&self) -> Result<Self> {
        let pairs: Vec<_> = self.pairs.iter().zip(&self.seen).filter(|(_, &s)| s).map(|(p, _)| *p).collect();
        let n = pairs.len();
        let n_attrs = pairs.iter().map(|p| p.0 + 1).max().unwrap_or(0);
        let n_objs = pairs.iter().map(|p| p.1 + 1).max().unwrap_or(0);
        Self::new(pairs, vec![true; n], n_attrs, n_objs)
    }

    pub fn validate_for(&self, space: &SemanticSpace) -> Result<()> {
        match self.pairs.iter().find(|&&(a, o)| a >= space.n_attrs() || o >= space.n_objs()) {
            Some(&(a, o)) => Err(Error::InvalidArgument(format!("pair ({a}, {o}) not in semantic space"))),
            None => Ok(()),
        }
    }
}

/// `composer(Concat(s_a, s_o))` for row vectors (or batches of rows).
pub fn compose_embedding<T: Real>(g: &mut Graph<T>, s_a: Var, s_o: Var, composer: &Mlp<T>) -> Result<Var> {
    let (_, da) = g.shape(s_a)?;
    let (_, dob) = g.shape(s_o)?;
    if da + dob != composer.input_dim() {
        return Err(Error::dim(
            "compose_embedding",
            format!("composer input width {}", composer.input_dim()),
            format!("{da} + {dob}"),
        ));
    }
    let x = g.concat_cols(s_a, s_o)?;
    composer.forward(g, x)
}

/// Composed embedding for every catalog pair, one row each in catalog order.
pub fn candidate_embeddings<T: Real>(
    g: &mut Graph<T>,
    space: &SemanticSpace,
    catalog: &CompositionCatalog,
    composer: &Mlp<T>,
) -> Result<Var> {
    catalog.validate_for(space)?;
    let attrs = space.attr_const(g)?;
    let objs = space.obj_const(g)?;
    let a_ids: Vec<usize> = catalog.pairs().iter().map(|p| p.0).collect();
    let o_ids: Vec<usize> = catalog.pairs().iter().map(|p| p.1).collect();
    let sa = g.gather_rows(attrs, &a_ids)?;
    let so = g.gather_rows(objs, &o_ids)?;
    compose_embedding(g, sa, so, composer)
}
