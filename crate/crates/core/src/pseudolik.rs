//! Negative log pseudolikelihood of the pairwise mixed MRF and its gradient.
//!
//! Each continuous variable is Gaussian given the rest, with precision
//! `beta_ss` and mean `(alpha_s - sum_{t != s} beta_st x_t + sum_j
//! rho_sj(y_j)) / beta_ss`. The sign follows the energy `-1/2 beta_st x_s x_t`,
//! so a positive `beta_st` means a negative conditional association. Each
//! categorical variable is multinomial given the rest, with logits
//! `phi_rr(l,l) + sum_s rho_sr(l) x_s + sum_{j != r} phi_rj(l, y_j)`.
//!
//! The objective for a pair of classes is
//! `f = -(1/N) sum_n log PL(obs_n; Theta^(group_n))` with `N` the total
//! number of observations over both classes.

use ndarray::{s, Array1, Array2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Group, Layout, MixedDataset, ParameterPair, ParameterSet, VariableSchema};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Same block structure as the [`ParameterPair`] it differentiates.
pub type Gradient = ParameterPair;

/// One observation: continuous values and 0-based categorical levels.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub x: &'a [f64],
    pub y: &'a [usize],
}

/// Conditional distribution of continuous `s` given the rest of `row`:
/// returns `(mean, variance)`.
pub fn conditional_gaussian(theta: &ParameterSet, row: Observation<'_>, s: usize) -> (f64, f64) {
    let layout = theta.layout();
    let beta = theta.beta();
    let rho = theta.rho();
    let mut eta = theta.alpha()[s];
    for (t, &xt) in row.x.iter().enumerate() {
        if t != s {
            eta -= beta[[s, t]] * xt;
        }
    }
    for (j, &yj) in row.y.iter().enumerate() {
        eta += rho[[s, layout.offsets[j] + yj]];
    }
    let prec = beta[[s, s]];
    (eta / prec, 1.0 / prec)
}

/// Conditional level probabilities of categorical `r` given the rest of
/// `row`. Uses max-subtraction so large logits do not overflow.
pub fn conditional_categorical(theta: &ParameterSet, row: Observation<'_>, r: usize) -> Vec<f64> {
    let logits = categorical_logits(theta, row, r);
    softmax(&logits)
}

pub(crate) fn categorical_logits(theta: &ParameterSet, row: Observation<'_>, r: usize) -> Vec<f64> {
    let layout = theta.layout();
    let rho = theta.rho();
    let phi = theta.phi();
    layout
        .block(r)
        .map(|c| {
            let mut v = phi[[c, c]];
            for (s, &xs) in row.x.iter().enumerate() {
                v += rho[[s, c]] * xs;
            }
            for (j, &yj) in row.y.iter().enumerate() {
                if j != r {
                    v += phi[[c, layout.offsets[j] + yj]];
                }
            }
            v
        })
        .collect()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// The observations of one class in design-matrix form.
#[derive(Debug, Clone)]
pub struct GroupBlock {
    x: Array2<f64>,
    y: Array2<usize>,
    onehot: Array2<f64>,
}

impl GroupBlock {
    pub fn new(layout: &Layout, x: Array2<f64>, y: Array2<usize>) -> Self {
        let mut onehot = Array2::zeros((y.nrows(), layout.total_levels));
        for ((i, r), &v) in y.indexed_iter() {
            onehot[[i, layout.offsets[r] + v]] = 1.0;
        }
        Self { x, y, onehot }
    }

    pub fn from_dataset(data: &MixedDataset, group: Group) -> Self {
        let rows = data.group_rows(group);
        Self::new(data.schema().layout(), data.x().select(Axis(0), &rows), data.y().select(Axis(0), &rows))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Splits the rows into at most `k` contiguous chunks.
    fn chunks(&self, layout: &Layout, k: usize) -> Vec<GroupBlock> {
        let n = self.n();
        let k = k.clamp(1, n.max(1));
        let size = n.div_ceil(k).max(1);
        (0..n)
            .step_by(size)
            .map(|start| {
                let end = (start + size).min(n);
                GroupBlock::new(
                    layout,
                    self.x.slice(s![start..end, ..]).to_owned(),
                    self.y.slice(s![start..end, ..]).to_owned(),
                )
            })
            .collect()
    }
}

/// Per-variable sums of negative log conditional likelihoods.
struct Terms {
    cont: Array1<f64>,
    cat: Array1<f64>,
}

impl Terms {
    fn total(&self) -> f64 {
        self.cont.sum() + self.cat.sum()
    }

    fn check(&self, names: &[String]) -> Result<f64> {
        let total = self.total();
        if total.is_finite() {
            return Ok(total);
        }
        let bad = self.cont.iter().chain(self.cat.iter()).position(|v| !v.is_finite()).unwrap_or(0);
        Err(Error::NonFinite { variable: names[bad].clone() })
    }
}

/// Sum over the rows of `block` of the negative log pseudolikelihood, and
/// optionally the gradient of that sum.
fn group_terms(theta: &ParameterSet, block: &GroupBlock, want_grad: bool) -> (Terms, Option<ParameterSet>) {
    let layout = theta.layout();
    let p = layout.p;
    let x = &block.x;
    let onehot = &block.onehot;

    let mut beta_off = theta.beta.clone();
    beta_off.diag_mut().fill(0.0);
    let prec = theta.beta.diag().to_owned();

    // eta[n,s] = alpha_s - sum_{t != s} beta_st x_t + sum_j rho_sj(y_j)
    let mut eta = onehot.dot(&theta.rho.t()) - x.dot(&beta_off);
    eta += &theta.alpha;
    // resid = beta_ss x_s - eta_s
    let mut resid = x * &prec;
    resid -= &eta;

    let half_log_prec = prec.mapv(|b| 0.5 * b.ln());
    let mut cont = Array1::zeros(p);
    Zip::from(&mut cont).and(resid.columns()).and(&prec).and(&half_log_prec).for_each(|acc, col, &b, &hl| {
        let n = col.len() as f64;
        *acc = n * (HALF_LN_2PI - hl) + col.iter().map(|r| r * r).sum::<f64>() / (2.0 * b);
    });

    let mut phi_off = theta.phi.clone();
    phi_off.diag_mut().fill(0.0);
    let mut logits = x.dot(&theta.rho) + onehot.dot(&phi_off);
    logits += &theta.phi.diag();

    let q = layout.q();
    let mut cat = Array1::zeros(q);
    // logits become (softmax - onehot) in place when a gradient is wanted
    for (mut lrow, yrow) in logits.rows_mut().into_iter().zip(block.y.rows()) {
        for r in 0..q {
            let range = layout.block(r);
            let mut seg = lrow.slice_mut(s![range.clone()]);
            let m = seg.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let z: f64 = seg.iter().map(|&l| (l - m).exp()).sum();
            let lse = m + z.ln();
            let observed = yrow[r];
            cat[r] += lse - seg[observed];
            if want_grad {
                seg.mapv_inplace(|l| (l - lse).exp());
                seg[observed] -= 1.0;
            }
        }
    }
    let terms = Terms { cont, cat };
    if !want_grad {
        return (terms, None);
    }
    let g_cat = logits;

    // d nll / d eta
    let mut g_cont = resid.clone();
    Zip::from(g_cont.columns_mut()).and(&prec).for_each(|mut col, &b| col.mapv_inplace(|r| -r / b));

    let mut grad = ParameterSet::zeros(theta.layout.clone());
    grad.alpha = g_cont.sum_axis(Axis(0));

    let xtg = x.t().dot(&g_cont);
    grad.beta = -(&xtg + &xtg.t());
    for s_ in 0..p {
        let b = prec[s_];
        let d: f64 = resid
            .column(s_)
            .iter()
            .zip(x.column(s_))
            .map(|(&r, &xs)| -0.5 / b + r * xs / b - r * r / (2.0 * b * b))
            .sum();
        grad.beta[[s_, s_]] = d;
    }

    grad.rho = g_cont.t().dot(onehot) + x.t().dot(&g_cat);

    let m = g_cat.t().dot(onehot);
    let mut gphi = &m + &m.t();
    for r in 0..q {
        let range = layout.block(r);
        gphi.slice_mut(s![range.clone(), range]).fill(0.0);
    }
    let colsum = g_cat.sum_axis(Axis(0));
    gphi.diag_mut().assign(&colsum);
    grad.phi = gphi;

    (terms, Some(grad))
}

/// Unnormalized pseudolikelihood sums for a single class.
///
/// Holds the class's design matrices so repeated evaluations (as in an
/// optimizer loop) do not rebuild the one-hot encoding.
#[derive(Debug, Clone)]
pub struct GroupObjective {
    chunks: Vec<GroupBlock>,
    names: Vec<String>,
    n: usize,
}

impl GroupObjective {
    /// With `workers > 1` the rows are split into that many chunks that are
    /// evaluated in parallel.
    pub fn new(schema: &VariableSchema, block: GroupBlock, workers: usize) -> Self {
        let n = block.n();
        let chunks = if workers > 1 { block.chunks(schema.layout(), workers) } else { vec![block] };
        let names = (0..schema.n_vars()).map(|i| schema.name(i).to_string()).collect();
        Self { chunks, names, n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sum over rows of the negative log pseudolikelihood.
    pub fn value_sum(&self, theta: &ParameterSet) -> Result<f64> {
        let parts: Vec<Terms> = self.map_chunks(|c| group_terms(theta, c, false).0);
        let terms = self.reduce_terms(parts);
        terms.check(&self.names)
    }

    /// Sum over rows, and the gradient of that sum.
    pub fn value_grad_sum(&self, theta: &ParameterSet) -> Result<(f64, ParameterSet)> {
        let parts = self.map_chunks(|c| group_terms(theta, c, true));
        let mut terms = Vec::with_capacity(parts.len());
        let mut grad: Option<ParameterSet> = None;
        for (t, g) in parts {
            terms.push(t);
            let g = g.expect("gradient requested");
            grad = Some(match grad {
                None => g,
                Some(acc) => ParameterSet::lin_comb(1.0, &acc, 1.0, &g),
            });
        }
        let value = self.reduce_terms(terms).check(&self.names)?;
        Ok((value, grad.expect("at least one chunk")))
    }

    fn map_chunks<T: Send>(&self, f: impl Fn(&GroupBlock) -> T + Sync + Send) -> Vec<T> {
        if self.chunks.len() == 1 {
            vec![f(&self.chunks[0])]
        } else {
            // collect preserves chunk order, so the reduction below is fixed
            self.chunks.par_iter().map(f).collect()
        }
    }

    fn reduce_terms(&self, parts: Vec<Terms>) -> Terms {
        let mut it = parts.into_iter();
        let mut acc = it.next().expect("at least one chunk");
        for t in it {
            acc.cont += &t.cont;
            acc.cat += &t.cat;
        }
        acc
    }
}

/// The two-class objective `f(Theta) = f_1(Theta^(1)) + f_2(Theta^(2))`.
#[derive(Debug, Clone)]
pub struct PseudoLikelihood {
    schema: VariableSchema,
    groups: [GroupObjective; 2],
    n_total: usize,
}

impl PseudoLikelihood {
    pub fn new(data: &MixedDataset) -> Result<Self> {
        Self::with_workers(data, 1)
    }

    /// With `workers > 1` each class's rows are split into that many chunks
    /// evaluated in parallel and summed in chunk order, which is
    /// deterministic for a fixed worker count.
    pub fn with_workers(data: &MixedDataset, workers: usize) -> Result<Self> {
        data.require_two_groups()?;
        let make = |g| GroupObjective::new(data.schema(), GroupBlock::from_dataset(data, g), workers);
        Ok(Self { schema: data.schema().clone(), groups: [make(Group::One), make(Group::Two)], n_total: data.n() })
    }

    pub fn schema(&self) -> &VariableSchema {
        &self.schema
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// `f_m(Theta^(m))`, already divided by the total observation count.
    pub fn group_value(&self, group: Group, theta: &ParameterSet) -> Result<f64> {
        let g = &self.groups[group.index()];
        Ok(g.value_sum(theta)? / self.n_total as f64)
    }

    pub fn value(&self, pair: &ParameterPair) -> Result<f64> {
        Ok(self.group_value(Group::One, &pair.theta1)? + self.group_value(Group::Two, &pair.theta2)?)
    }

    pub fn value_and_gradient(&self, pair: &ParameterPair) -> Result<(f64, Gradient)> {
        let scale = 1.0 / self.n_total as f64;
        let (v1, g1) = self.groups[0].value_grad_sum(&pair.theta1)?;
        let (v2, g2) = self.groups[1].value_grad_sum(&pair.theta2)?;
        let grad = ParameterPair { theta1: g1.scaled(scale), theta2: g2.scaled(scale) };
        Ok(((v1 + v2) * scale, grad))
    }
}

/// `f(Theta)` for `data`, each observation scored with its own class's
/// parameters.
pub fn neg_log_pseudolik(pair: &ParameterPair, data: &MixedDataset) -> Result<f64> {
    PseudoLikelihood::new(data)?.value(pair)
}

/// Exact gradient of [`neg_log_pseudolik`].
pub fn grad_neg_log_pseudolik(pair: &ParameterPair, data: &MixedDataset) -> Result<Gradient> {
    Ok(PseudoLikelihood::new(data)?.value_and_gradient(pair)?.1)
}
