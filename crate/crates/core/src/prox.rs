//! Proximal operator of the fused sparse penalty.
//!
//! The penalty is block-separable over edges. For an edge with class blocks
//! `v1`, `v2` and proximal centers `a1`, `a2` the subproblem is
//!
//! ```text
//! L/2 |v1 - a1|^2 + L/2 |v2 - a2|^2 + lam (|v1| + |v2|) + lam_diff |v1 - v2|
//! ```
//!
//! with absolute values for cc edges and Euclidean/Frobenius norms for cd
//! and dd edges. Scalar (cc) edges use exact coordinate minimization with
//! a refit along the diagonal `v1 = v2` whenever the weights collapse.
//! Vector edges check the closed-form solutions on the kinks (fused, one
//! block zero, both zero) and otherwise solve the smooth stationarity
//! equations by Newton on a smoothed objective in the span of the two
//! centers.
//! Intercepts, categorical node potentials and conditional precisions are
//! not penalized; precisions are clamped to [`EPS_DIAG`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{EdgeKey, EdgeKind, ParameterPair, ParameterSet, PenaltyConfig, EPS_DIAG};

/// Stopping rules for the inner solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxConfig {
    /// Relative step length that ends the Newton iteration of a vector
    /// block.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// RMSD between successive sweeps that ends the scalar alternation.
    pub alt_rmsd_tol: f64,
    pub alt_max_iter: usize,
    /// Distance below which two scalar weights count as collapsed.
    pub collapse_tol: f64,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self { inner_tol: 1e-8, inner_max_iter: 100, alt_rmsd_tol: 1e-5, alt_max_iter: 50, collapse_tol: 1e-9 }
    }
}

/// Which inner loop stopped on its iteration cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProxIssue {
    InnerIterationCap,
    AlternationCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProxWarning {
    pub edge: EdgeKey,
    pub issue: ProxIssue,
}

/// Value of the fused penalty at `pair`.
pub fn penalty(pair: &ParameterPair, pen: &PenaltyConfig) -> f64 {
    pair.layout()
        .edge_keys()
        .iter()
        .map(|k| {
            let (lam, lam_diff) = pen.for_kind(k.kind);
            lam * (pair.theta1.edge_norm(k) + pair.theta2.edge_norm(k)) + lam_diff * pair.edge_diff_norm(k)
        })
        .sum()
}

/// Value of the single-class sparsity penalty (difference weights unused).
pub fn penalty_single(theta: &ParameterSet, pen: &PenaltyConfig) -> f64 {
    theta.layout().edge_keys().iter().map(|k| pen.for_kind(k.kind).0 * theta.edge_norm(k)).sum()
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `v (1 - t / |v|)_+`
fn group_soft(v: &[f64], t: f64) -> Vec<f64> {
    let n = norm(v);
    if n <= t {
        vec![0.0; v.len()]
    } else {
        let k = 1.0 - t / n;
        v.iter().map(|x| x * k).collect()
    }
}

fn pair_objective(v1: &[f64], v2: &[f64], a1: &[f64], a2: &[f64], l: f64, lam: f64, lam_diff: f64) -> f64 {
    let quad = dist(v1, a1).powi(2) + dist(v2, a2).powi(2);
    0.5 * l * quad + lam * (norm(v1) + norm(v2)) + lam_diff * dist(v1, v2)
}

/// Exact minimizer of `L/2 (b - a)^2 + lam |b| + lam_diff |b - c|`.
fn scalar_step(a: f64, c: f64, l: f64, lam: f64, lam_diff: f64) -> f64 {
    let obj = |b: f64| 0.5 * l * (b - a) * (b - a) + lam * b.abs() + lam_diff * (b - c).abs();
    // kinks first so that ties resolve to them
    let mut best = 0.0;
    let mut best_val = obj(0.0);
    let mut consider = |b: f64| {
        let v = obj(b);
        if v < best_val {
            best = b;
            best_val = v;
        }
    };
    consider(c);
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            let b = a - (lam * s1 + lam_diff * s2) / l;
            if b * s1 > 0.0 && (b - c) * s2 > 0.0 {
                consider(b);
            }
        }
    }
    best
}

/// Prox of one cc edge. Returns the two weights and whether the
/// alternation hit its cap.
pub fn prox_cc(a1: f64, a2: f64, l: f64, lam: f64, lam_diff: f64, cfg: &ProxConfig) -> ((f64, f64), bool) {
    let t = lam / l;
    if lam_diff == 0.0 {
        return ((soft(a1, t), soft(a2, t)), false);
    }
    let (mut b1, mut b2) = (soft(a1, t), soft(a2, t));
    let mut capped = false;
    for _round in 0..4 {
        let mut converged = false;
        for _ in 0..cfg.alt_max_iter {
            let n1 = scalar_step(a1, b2, l, lam, lam_diff);
            let n2 = scalar_step(a2, n1, l, lam, lam_diff);
            let change = (((n1 - b1).powi(2) + (n2 - b2).powi(2)) / 2.0).sqrt();
            (b1, b2) = (n1, n2);
            if change < cfg.alt_rmsd_tol {
                converged = true;
                break;
            }
        }
        capped |= !converged;
        if (b1 - b2).abs() > cfg.collapse_tol {
            break;
        }
        // collapsed: refit the common value, then make sure alternation
        // cannot improve on it
        let v = soft(0.5 * (a1 + a2), t);
        let n1 = scalar_step(a1, v, l, lam, lam_diff);
        let n2 = scalar_step(a2, n1, l, lam, lam_diff);
        (b1, b2) = (v, v);
        if n1 == v && n2 == v {
            break;
        }
    }
    ((b1, b2), capped)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of `span{a1, a2}`. The minimizer of the block problem
/// lies in this span: reflections fixing it leave the objective unchanged
/// and the minimizer is unique.
fn span_basis(a1: &[f64], a2: &[f64]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(2);
    for a in [a1, a2] {
        let mut r = a.to_vec();
        // two Gram-Schmidt passes keep the basis orthogonal to rounding
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&r, b);
                r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = norm(&r);
        if n > 1e-12 * norm(a) && n > 0.0 {
            basis.push(r.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Solves `H x = b` for a small symmetric positive definite `H` (row-major,
/// `n x n`) by Cholesky factorization in place. False if `H` is not
/// numerically positive definite.
fn solve_spd(h: &mut [f64], b: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = h[j * n + j];
        for k in 0..j {
            d -= h[j * n + k] * h[j * n + k];
        }
        if d.is_nan() || d <= 0.0 {
            return false;
        }
        let d = d.sqrt();
        h[j * n + j] = d;
        for i in j + 1..n {
            let mut v = h[i * n + j];
            for k in 0..j {
                v -= h[i * n + k] * h[j * n + k];
            }
            h[i * n + j] = v / d;
        }
    }
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= h[i * n + k] * b[k];
        }
        b[i] = v / h[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= h[k * n + i] * b[k];
        }
        b[i] = v / h[i * n + i];
    }
    true
}

/// Minimizes the block objective with every norm replaced by
/// `sqrt(|z|^2 + eps^2)`, by damped Newton, for a decreasing sequence of
/// `eps`. Each smoothed problem is smooth and strongly convex, so Newton
/// needs no care near the kinks. Returns the final point and whether some
/// stage hit the iteration cap.
fn smoothed_newton(
    x1: &[f64],
    x2: &[f64],
    l: f64,
    lam: f64,
    lam_diff: f64,
    cfg: &ProxConfig,
) -> (Vec<f64>, Vec<f64>, bool) {
    let k = x1.len();
    let n = 2 * k;
    let scale = 1.0 + norm(x1) + norm(x2);
    let smooth_obj = |z: &[f64], eps: f64| {
        let sn = |v: &mut dyn Iterator<Item = f64>| (v.map(|x| x * x).sum::<f64>() + eps * eps).sqrt();
        let (v1, v2) = z.split_at(k);
        0.5 * l * (dist(v1, x1).powi(2) + dist(v2, x2).powi(2))
            + lam * (sn(&mut v1.iter().copied()) + sn(&mut v2.iter().copied()))
            + lam_diff * sn(&mut v1.iter().zip(v2).map(|(a, b)| a - b))
    };
    let mut z: Vec<f64> = x1.iter().chain(x2).copied().collect();
    let mut capped = false;
    let mut eps = 0.1 * scale;
    while eps > 1e-14 * scale {
        let mut converged = false;
        for _ in 0..cfg.inner_max_iter {
            let (v1, v2) = z.split_at(k);
            let d: Vec<f64> = v1.iter().zip(v2).map(|(a, b)| a - b).collect();
            let s1 = (norm(v1).powi(2) + eps * eps).sqrt();
            let s2 = (norm(v2).powi(2) + eps * eps).sqrt();
            let sd = (norm(&d).powi(2) + eps * eps).sqrt();
            let mut g = vec![0.0; n];
            let mut h = vec![0.0; n * n];
            for i in 0..k {
                g[i] = l * (v1[i] - x1[i]) + lam * v1[i] / s1 + lam_diff * d[i] / sd;
                g[k + i] = l * (v2[i] - x2[i]) + lam * v2[i] / s2 - lam_diff * d[i] / sd;
                for j in 0..k {
                    let id = if i == j { 1.0 } else { 0.0 };
                    let hd = lam_diff * (id / sd - d[i] * d[j] / sd.powi(3));
                    h[i * n + j] = l * id + lam * (id / s1 - v1[i] * v1[j] / s1.powi(3)) + hd;
                    h[(k + i) * n + k + j] = l * id + lam * (id / s2 - v2[i] * v2[j] / s2.powi(3)) + hd;
                    h[i * n + k + j] = -hd;
                    h[(k + i) * n + j] = -hd;
                }
            }
            let mut step: Vec<f64> = g.iter().map(|x| -x).collect();
            if !solve_spd(&mut h, &mut step, n) {
                step = g.iter().map(|x| -x / l).collect();
            }
            let slope = dot(&g, &step);
            let f0 = smooth_obj(&z, eps);
            let mut t = 1.0;
            let mut cand: Vec<f64>;
            loop {
                cand = z.iter().zip(&step).map(|(a, b)| a + t * b).collect();
                if smooth_obj(&cand, eps) <= f0 + 1e-4 * t * slope || t < 1e-10 {
                    break;
                }
                t *= 0.5;
            }
            let moved = t * norm(&step);
            z = cand;
            if moved <= cfg.inner_tol * (1.0 + norm(&z)) {
                converged = true;
                break;
            }
        }
        capped |= !converged;
        eps *= 0.1;
    }
    let v2 = z.split_off(k);
    (z, v2, capped)
}

/// Joint minimizer in coordinates of an orthonormal basis of the centers'
/// span.
fn group_reduced(
    x1: &[f64],
    x2: &[f64],
    l: f64,
    lam: f64,
    lam_diff: f64,
    cfg: &ProxConfig,
) -> (Vec<f64>, Vec<f64>, bool) {
    let k = x1.len();
    let zero = vec![0.0; k];
    let obj = |v1: &[f64], v2: &[f64]| pair_objective(v1, v2, x1, x2, l, lam, lam_diff);

    // both blocks fused to a common nonzero value
    let mean: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| 0.5 * (a + b)).collect();
    let fused = group_soft(&mean, lam / l);
    if norm(&fused) > 0.0 && 0.5 * l * dist(x1, x2) <= lam_diff {
        return (fused.clone(), fused, false);
    }
    // exactly one block zero: the other sees both penalties as one norm
    let only2 = group_soft(x2, (lam + lam_diff) / l);
    let only1 = group_soft(x1, (lam + lam_diff) / l);
    let one_zero_ok = |x: &[f64], other: &[f64]| {
        let no = norm(other);
        no > 0.0 && {
            let r: Vec<f64> = x.iter().zip(other).map(|(a, o)| l * a + lam_diff * o / no).collect();
            norm(&r) <= lam
        }
    };
    if one_zero_ok(x1, &only2) {
        return (zero, only2, false);
    }
    if one_zero_ok(x2, &only1) {
        return (only1, zero, false);
    }
    // both zero: optimal iff some |w| <= lam_diff has |L x1 - w| <= lam and
    // |L x2 + w| <= lam; w = 0 and the clipped midpoint settle most cases
    let half: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| 0.5 * l * (a - b)).collect();
    let nh = norm(&half);
    let clipped: Vec<f64> = if nh > lam_diff { half.iter().map(|x| x * lam_diff / nh).collect() } else { half };
    let slack = 1.0 + 1e-12;
    let origin_ok = |w: &[f64]| {
        let r1: Vec<f64> = x1.iter().zip(w).map(|(a, b)| l * a - b).collect();
        let r2: Vec<f64> = x2.iter().zip(w).map(|(a, b)| l * a + b).collect();
        norm(&r1) <= lam * slack && norm(&r2) <= lam * slack
    };
    if origin_ok(&zero) || origin_ok(&clipped) {
        return (zero.clone(), zero, false);
    }

    // otherwise the minimizer is in the smooth region, or at the origin
    // without a cheap certificate; keep the best feasible point
    let (n1, n2, capped) = smoothed_newton(x1, x2, l, lam, lam_diff, cfg);
    let mut best = (zero.clone(), zero.clone());
    let mut best_val = obj(&zero, &zero);
    for (c1, c2) in [(fused.clone(), fused), (zero.clone(), only2), (only1, zero)] {
        let v = obj(&c1, &c2);
        if v < best_val {
            best_val = v;
            best = (c1, c2);
        }
    }
    if obj(&n1, &n2) < best_val {
        return (n1, n2, capped);
    }
    (best.0, best.1, false)
}

/// Prox of one cd or dd edge (blocks flattened). Returns the two blocks and
/// whether the smoothed Newton iteration hit its cap.
pub fn prox_group(
    a1: &[f64],
    a2: &[f64],
    l: f64,
    lam: f64,
    lam_diff: f64,
    cfg: &ProxConfig,
) -> (Vec<f64>, Vec<f64>, Option<ProxIssue>) {
    let t = lam / l;
    if lam_diff == 0.0 {
        return (group_soft(a1, t), group_soft(a2, t), None);
    }
    if lam == 0.0 {
        // the mean is unpenalized and the half-difference is group-thresholded
        let diff: Vec<f64> = a1.iter().zip(a2).map(|(x, y)| x - y).collect();
        let d = group_soft(&diff, 2.0 * lam_diff / l);
        let v1 = a1.iter().zip(a2).zip(&d).map(|((x, y), e)| 0.5 * (x + y + e)).collect();
        let v2 = a1.iter().zip(a2).zip(&d).map(|((x, y), e)| 0.5 * (x + y - e)).collect();
        return (v1, v2, None);
    }
    let basis = span_basis(a1, a2);
    if basis.is_empty() {
        return (vec![0.0; a1.len()], vec![0.0; a1.len()], None);
    }
    let coords = |a: &[f64]| basis.iter().map(|b| dot(a, b)).collect::<Vec<f64>>();
    let (y1, y2, capped) = group_reduced(&coords(a1), &coords(a2), l, lam, lam_diff, cfg);
    let expand = |y: &[f64]| {
        let mut v = vec![0.0; a1.len()];
        for (c, b) in y.iter().zip(&basis) {
            v.iter_mut().zip(b).for_each(|(x, e)| *x += c * e);
        }
        v
    };
    (expand(&y1), expand(&y2), capped.then_some(ProxIssue::InnerIterationCap))
}

/// One edge's prox output: both blocks and any solver issue.
type EdgeSolution = (EdgeKey, Vec<f64>, Vec<f64>, Option<ProxIssue>);

/// Applies the prox with step `1/L` to `center` (already `Lambda - grad/L`).
pub fn prox_full(
    center: &ParameterPair,
    l: f64,
    pen: &PenaltyConfig,
    cfg: &ProxConfig,
) -> (ParameterPair, Vec<ProxWarning>) {
    let mut out = center.clone();
    for theta in [&mut out.theta1, &mut out.theta2] {
        theta.beta.diag_mut().mapv_inplace(|b| b.max(EPS_DIAG));
    }
    let keys = center.layout().edge_keys();
    let solved: Vec<EdgeSolution> = keys
        .par_iter()
        .with_min_len(64)
        .map(|k| {
            let (lam, lam_diff) = pen.for_kind(k.kind);
            let a1 = center.theta1.edge_values(k);
            let a2 = center.theta2.edge_values(k);
            match k.kind {
                EdgeKind::Cc => {
                    let ((b1, b2), capped) = prox_cc(a1[0], a2[0], l, lam, lam_diff, cfg);
                    (*k, vec![b1], vec![b2], capped.then_some(ProxIssue::AlternationCap))
                }
                _ => {
                    let (v1, v2, issue) = prox_group(&a1, &a2, l, lam, lam_diff, cfg);
                    (*k, v1, v2, issue)
                }
            }
        })
        .collect();
    let mut warnings = Vec::new();
    for (k, v1, v2, issue) in solved {
        out.theta1.set_edge_values(&k, &v1);
        out.theta2.set_edge_values(&k, &v2);
        if let Some(issue) = issue {
            warnings.push(ProxWarning { edge: k, issue });
        }
    }
    (out, warnings)
}

/// Single-class prox: soft-thresholds every edge block by its sparsity
/// weight and clamps the precisions.
pub fn prox_single(center: &ParameterSet, l: f64, pen: &PenaltyConfig) -> ParameterSet {
    let mut out = center.clone();
    out.beta.diag_mut().mapv_inplace(|b| b.max(EPS_DIAG));
    for k in center.layout().edge_keys() {
        let t = pen.for_kind(k.kind).0 / l;
        let v = group_soft(&center.edge_values(&k), t);
        out.set_edge_values(&k, &v);
    }
    out
}
