//! Two-class ground truth on block scale-free graphs, and a Gibbs sampler.
//!
//! Variables are split at random into equal blocks; each block gets its own
//! preferential-attachment graph. Class 1 drops the edges of one block and
//! class 2 those of another, so the true difference is exactly the union of
//! the two removed blocks' edges.

use std::collections::BTreeSet;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EdgeKey, EdgeKind, Group, MixedDataset, ParameterPair, ParameterSet, VariableSchema};
use crate::pseudolik::{conditional_categorical, conditional_gaussian, Observation};

pub const WEIGHT_RANGE: (f64, f64) = (0.5, 0.8);
/// Probability that a growth step links two already connected nodes.
pub const P_LINK_EXISTING: f64 = 0.3;
/// Added to the dominant diagonal of each class's `beta`.
pub const DIAG_MARGIN: f64 = 1e-4;
/// Extra diagonal added once if the first factorization fails.
pub const DIAG_RETRY: f64 = 1e-2;

/// Grows an undirected simple graph on `n_nodes` nodes by preferential
/// attachment, starting from the edge `{0, 1}`. Each step either links two
/// distinct connected nodes (probability 0.3) or attaches an isolated node
/// to a connected one (0.7); connected nodes are picked proportionally to
/// their degree. A step that would duplicate an edge is dropped. Growth stops
/// as soon as no isolated node remains.
pub fn generate_scale_free(n_nodes: usize, seed: u64) -> Vec<(usize, usize)> {
    scale_free_with(n_nodes, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn scale_free_with(n_nodes: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    assert!(n_nodes >= 2, "a scale-free graph needs at least two nodes");
    let mut degree = vec![0usize; n_nodes];
    let mut edges = BTreeSet::new();
    let mut add = |a: usize, b: usize, degree: &mut Vec<usize>| {
        let e = (a.min(b), a.max(b));
        if edges.insert(e) {
            degree[a] += 1;
            degree[b] += 1;
        }
    };
    add(0, 1, &mut degree);
    let mut isolated: Vec<usize> = (2..n_nodes).collect();
    while !isolated.is_empty() {
        let by_degree = WeightedIndex::new(&degree).expect("some node is connected");
        if rng.random::<f64>() < P_LINK_EXISTING {
            let a = by_degree.sample(rng);
            let mut others = degree.clone();
            others[a] = 0;
            if others.iter().all(|&d| d == 0) {
                continue;
            }
            let b = WeightedIndex::new(&others).expect("positive weight").sample(rng);
            add(a, b, &mut degree);
        } else {
            let k = rng.random_range(0..isolated.len());
            let a = isolated.swap_remove(k);
            let b = by_degree.sample(rng);
            add(a, b, &mut degree);
        }
    }
    edges.into_iter().collect()
}

/// A simulated two-class model and the structure it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub schema: VariableSchema,
    /// Model indices of each block, ascending.
    pub blocks: Vec<Vec<usize>>,
    /// Every block edge with its weight, in key order.
    pub union_edges: Vec<(EdgeKey, f64)>,
    pub class_edges: [BTreeSet<EdgeKey>; 2],
    pub params: ParameterPair,
    /// Block dropped from class 1 and from class 2.
    pub removed_blocks: (usize, usize),
}

impl GroundTruth {
    /// Edges present in exactly one class.
    pub fn diff_edges(&self) -> BTreeSet<EdgeKey> {
        self.class_edges[0].symmetric_difference(&self.class_edges[1]).copied().collect()
    }

    pub fn block_edges(&self, block: usize) -> BTreeSet<EdgeKey> {
        let members: BTreeSet<usize> = self.blocks[block].iter().copied().collect();
        self.union_edges.iter().map(|(k, _)| *k).filter(|k| members.contains(&k.i) && members.contains(&k.j)).collect()
    }

    /// Writes one class's edges as `var1 var2 edge_type weight`, where
    /// `weight` is the drawn `w` (before signs and level patterns).
    pub fn write_class_tsv<W: Write>(&self, group: Group, w: W) -> Result<()> {
        self.write_edges(w, &self.class_edges[group.index()])
    }

    pub fn write_diff_tsv<W: Write>(&self, w: W) -> Result<()> {
        self.write_edges(w, &self.diff_edges())
    }

    fn write_edges<W: Write>(&self, mut w: W, keys: &BTreeSet<EdgeKey>) -> Result<()> {
        writeln!(w, "var1\tvar2\tedge_type\tweight")?;
        for (k, wt) in self.union_edges.iter().filter(|(k, _)| keys.contains(k)) {
            writeln!(w, "{}\t{}\t{}\t{}", self.schema.name(k.i), self.schema.name(k.j), k.kind, wt)?;
        }
        Ok(())
    }
}

/// Builds a ground truth over `p` continuous and `q` categorical variables
/// (all with `levels` levels) split into `n_blocks` equal blocks.
pub fn build_truth(p: usize, q: usize, levels: usize, n_blocks: usize, seed: u64) -> Result<GroundTruth> {
    let schema = VariableSchema::synthetic(p, q, levels)?;
    build_truth_for(schema, n_blocks, seed)
}

pub fn build_truth_for(schema: VariableSchema, n_blocks: usize, seed: u64) -> Result<GroundTruth> {
    let n = schema.n_vars();
    if n_blocks < 2 {
        return Err(Error::Generation("need at least two blocks".into()));
    }
    if !n.is_multiple_of(n_blocks) {
        return Err(Error::Generation(format!("{n} variables cannot be split into {n_blocks} equal blocks")));
    }
    let size = n / n_blocks;
    if size < 2 {
        return Err(Error::Generation(format!("blocks of {size} variable cannot hold an edge")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let blocks: Vec<Vec<usize>> = perm
        .chunks(size)
        .map(|c| {
            let mut b = c.to_vec();
            b.sort_unstable();
            b
        })
        .collect();

    let p = schema.p();
    let mut union_edges = Vec::new();
    let mut block_of_edge = Vec::new();
    for (bi, block) in blocks.iter().enumerate() {
        for (a, b) in scale_free_with(size, &mut rng) {
            let w = rng.random_range(WEIGHT_RANGE.0..=WEIGHT_RANGE.1);
            union_edges.push((EdgeKey::new(block[a], block[b], p), w));
            block_of_edge.push(bi);
        }
    }
    let removed1 = rng.random_range(0..n_blocks);
    let mut removed2 = rng.random_range(0..n_blocks - 1);
    if removed2 >= removed1 {
        removed2 += 1;
    }

    let layout = schema.layout().clone();
    let mut theta = [ParameterSet::empty(layout.clone()), ParameterSet::empty(layout.clone())];
    let mut class_edges = [BTreeSet::new(), BTreeSet::new()];
    let mut order: Vec<usize> = (0..union_edges.len()).collect();
    order.sort_by_key(|&e| union_edges[e].0);
    for &e in &order {
        let (key, w) = union_edges[e];
        let values = edge_block(&key, w, &schema, &mut rng);
        for (c, removed) in [removed1, removed2].into_iter().enumerate() {
            if block_of_edge[e] != removed {
                theta[c].set_edge_values(&key, &values);
                class_edges[c].insert(key);
            }
        }
    }
    for t in &mut theta {
        set_dominant_diagonal(t)?;
    }
    union_edges.sort_by_key(|(k, _)| *k);
    let [t1, t2] = theta;
    Ok(GroundTruth {
        schema,
        blocks,
        union_edges,
        class_edges,
        params: ParameterPair::new(t1, t2)?,
        removed_blocks: (removed1, removed2),
    })
}

/// Row-major block values for an edge of weight `w`.
fn edge_block(key: &EdgeKey, w: f64, schema: &VariableSchema, rng: &mut impl Rng) -> Vec<f64> {
    let layout = schema.layout();
    let (_, b) = key.local(schema.p());
    match key.kind {
        EdgeKind::Cc => vec![if rng.random::<bool>() { w } else { -w }],
        EdgeKind::Cd => {
            let base = [-w, -0.5 * w, 0.5 * w, w];
            let l = layout.levels[b];
            if l == base.len() {
                let mut v = base.to_vec();
                v.shuffle(rng);
                v
            } else {
                (0..l).map(|_| base[rng.random_range(0..base.len())]).collect()
            }
        }
        EdgeKind::Dd => {
            let (a, b) = key.local(schema.p());
            let (rows, cols) = (layout.levels[a], layout.levels[b]);
            // One `w` per column, spreading the marked rows as evenly as the
            // shape allows; a permutation pattern when square.
            let mut marked: Vec<usize> = if rows >= cols {
                rand::seq::index::sample(rng, rows, cols).into_vec()
            } else {
                let mut m: Vec<usize> = (0..cols).map(|k| k % rows).collect();
                m.shuffle(rng);
                m
            };
            marked.truncate(cols);
            let mut v = vec![-w; rows * cols];
            for (c, &r) in marked.iter().enumerate() {
                v[r * cols + c] = w;
            }
            v
        }
    }
}

/// Sets every `beta_ss` to the largest absolute row sum (at least 1) plus a
/// margin, then confirms positive definiteness by Cholesky.
fn set_dominant_diagonal(theta: &mut ParameterSet) -> Result<()> {
    let p = theta.layout.p;
    let mut dominant: f64 = 1.0;
    for s in 0..p {
        let row: f64 = (0..p).filter(|&t| t != s).map(|t| theta.beta[[s, t]].abs()).sum();
        dominant = dominant.max(row);
    }
    for margin in [DIAG_MARGIN, DIAG_MARGIN + DIAG_RETRY] {
        for s in 0..p {
            theta.beta[[s, s]] = dominant + margin;
        }
        if cholesky_ok(&theta.beta) {
            return Ok(());
        }
    }
    Err(Error::Generation("beta is not positive definite; try another seed".into()))
}

/// True when `m` (symmetric) has a Cholesky factor with a positive diagonal.
pub fn cholesky_ok(m: &ndarray::Array2<f64>) -> bool {
    let n = m.nrows();
    let mut l = ndarray::Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = m[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d.is_nan() || d <= 0.0 {
            return false;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut v = m[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / d;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self { burn_in: 1000, thin: 100 }
    }
}

/// Draws `n_per_class` rows per class, class 1 first, each class from its
/// own systematic-scan chain (scan in schema declaration order). A row is
/// kept every `thin` sweeps after `burn_in` sweeps.
pub fn gibbs_sample(
    params: &ParameterPair,
    schema: &VariableSchema,
    n_per_class: usize,
    cfg: GibbsConfig,
    seed: u64,
) -> Result<MixedDataset> {
    if cfg.thin == 0 {
        return Err(Error::Config("thin must be at least 1".into()));
    }
    if params.layout() != schema.layout() {
        return Err(Error::Parameters("parameters do not match the schema".into()));
    }
    let (p, q) = (schema.p(), schema.q());
    let chains: Vec<(Vec<f64>, Vec<usize>)> = [0usize, 1]
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            run_chain(params.get(c), schema, n_per_class, cfg, &mut rng)
        })
        .into();
    let n = 2 * n_per_class;
    let mut x = ndarray::Array2::zeros((n, p));
    let mut y = ndarray::Array2::zeros((n, q));
    for (c, (xs, ys)) in chains.iter().enumerate() {
        for i in 0..n_per_class {
            let row = c * n_per_class + i;
            for s in 0..p {
                x[[row, s]] = xs[i * p + s];
            }
            for r in 0..q {
                y[[row, r]] = ys[i * q + r];
            }
        }
    }
    let groups = (0..n).map(|i| Group::from_index(i / n_per_class.max(1))).collect();
    MixedDataset::new(schema.clone(), x, y, groups)
}

/// Returns the kept rows flattened row-major.
fn run_chain(
    theta: &ParameterSet,
    schema: &VariableSchema,
    n_keep: usize,
    cfg: GibbsConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<usize>) {
    let (p, q) = (schema.p(), schema.q());
    let scan: Vec<usize> =
        schema.entries().iter().map(|v| schema.index_of(&v.name).expect("declared variable")).collect();
    let mut x = vec![0.0; p];
    let mut y: Vec<usize> = (0..q).map(|r| rng.random_range(0..schema.levels(r))).collect();
    let mut xs = Vec::with_capacity(n_keep * p);
    let mut ys = Vec::with_capacity(n_keep * q);
    let sweeps = cfg.burn_in + n_keep * cfg.thin;
    for sweep in 1..=sweeps {
        for &v in &scan {
            if v < p {
                let (mean, var) = conditional_gaussian(theta, Observation { x: &x, y: &y }, v);
                let z: f64 = StandardNormal.sample(rng);
                x[v] = mean + var.sqrt() * z;
            } else {
                let r = v - p;
                let probs = conditional_categorical(theta, Observation { x: &x, y: &y }, r);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut level = probs.len() - 1;
                for (l, pr) in probs.iter().enumerate() {
                    acc += pr;
                    if u < acc {
                        level = l;
                        break;
                    }
                }
                y[r] = level;
            }
        }
        if sweep > cfg.burn_in && (sweep - cfg.burn_in).is_multiple_of(cfg.thin) {
            xs.extend_from_slice(&x);
            ys.extend_from_slice(&y);
        }
    }
    (xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_simple(edges: &[(usize, usize)]) -> bool {
        let set: BTreeSet<_> = edges.iter().collect();
        set.len() == edges.len() && edges.iter().all(|(a, b)| a < b)
    }

    #[test]
    fn two_nodes_give_one_edge() {
        assert_eq!(generate_scale_free(2, 7), vec![(0, 1)]);
    }

    #[test]
    fn growth_covers_every_node() {
        for seed in 0..50 {
            let edges = generate_scale_free(20, seed);
            assert!(is_simple(&edges));
            let mut deg = [0; 20];
            for (a, b) in &edges {
                deg[*a] += 1;
                deg[*b] += 1;
            }
            assert!(deg.iter().all(|&d| d >= 1));
            assert!(edges.len() >= 19);
        }
    }

    #[test]
    fn full_scale_truth() {
        let t = build_truth(50, 50, 4, 5, 3).unwrap();
        assert_eq!(t.blocks.len(), 5);
        assert!(t.blocks.iter().all(|b| b.len() == 20));
        let (r1, r2) = t.removed_blocks;
        assert_ne!(r1, r2);
        let diff = t.diff_edges();
        let removed: BTreeSet<_> = t.block_edges(r1).union(&t.block_edges(r2)).copied().collect();
        assert_eq!(diff, removed);
        for key in t.class_edges[0].intersection(&t.class_edges[1]) {
            assert_eq!(t.params.get(0).edge_values(key), t.params.get(1).edge_values(key));
        }
        assert!(t.union_edges.iter().all(|(_, w)| (0.5..=0.8).contains(w)));
        for c in 0..2 {
            assert!(cholesky_ok(&t.params.get(c).beta().to_owned()));
        }
    }

    #[test]
    fn block_patterns() {
        let t = build_truth(4, 4, 4, 2, 11).unwrap();
        for (key, w) in &t.union_edges {
            let c = if t.class_edges[0].contains(key) { 0 } else { 1 };
            let mut v = t.params.get(c).edge_values(key);
            match key.kind {
                EdgeKind::Cc => assert_eq!(v[0].abs(), *w),
                EdgeKind::Cd => {
                    v.sort_by(f64::total_cmp);
                    assert_eq!(v, vec![-w, -0.5 * w, 0.5 * w, *w]);
                }
                EdgeKind::Dd => {
                    for col in 0..4 {
                        let marked = (0..4).filter(|r| v[r * 4 + col] == *w).count();
                        assert_eq!(marked, 1);
                    }
                    for row in 0..4 {
                        let marked = (0..4).filter(|c| v[row * 4 + c] == *w).count();
                        assert_eq!(marked, 1);
                    }
                }
            }
        }
    }

    #[test]
    fn divisibility_is_checked() {
        assert!(build_truth(50, 50, 4, 7, 1).is_err());
    }

    #[test]
    fn cholesky_detects_indefinite() {
        let m = ndarray::array![[1.0, 2.0], [2.0, 1.0]];
        assert!(!cholesky_ok(&m));
        assert!(cholesky_ok(&ndarray::array![[2.0, 1.0], [1.0, 2.0]]));
    }
}
