//! Brute-force reference computations for the `fmgm` test suites.
//!
//! Nothing here calls into the estimator code paths it is used to check:
//! the pseudolikelihood is re-derived observation by observation, gradients
//! come from central differences, prox results are certified by random and
//! grid search, and positive definiteness by a full eigendecomposition.
//! Only `fmgm`'s data types are shared.

use std::sync::Arc;

use fmgm::model::{Group, Layout, MixedDataset, ParameterPair, ParameterSet, VariableSchema};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Negative log pseudolikelihood of one observation under one class's
/// parameters, written out term by term.
pub fn naive_observation_nll(theta: &ParameterSet, x: &[f64], y: &[usize]) -> f64 {
    let layout = theta.layout();
    let (alpha, beta, rho, phi) = (theta.alpha(), theta.beta(), theta.rho(), theta.phi());
    let p = x.len();
    let q = y.len();
    let col = |j: usize, level: usize| layout.offsets[j] + level;
    let mut nll = 0.0;
    for s in 0..p {
        let mut num = alpha[s];
        for t in 0..p {
            if t != s {
                num -= beta[[s, t]] * x[t];
            }
        }
        for j in 0..q {
            num += rho[[s, col(j, y[j])]];
        }
        let prec = beta[[s, s]];
        let mean = num / prec;
        let var = 1.0 / prec;
        let d = x[s] - mean;
        nll += 0.5 * (2.0 * std::f64::consts::PI * var).ln() + d * d / (2.0 * var);
    }
    for r in 0..q {
        let mut logits = Vec::new();
        for l in 0..layout.levels[r] {
            let mut v = phi[[col(r, l), col(r, l)]];
            for s in 0..p {
                v += rho[[s, col(r, l)]] * x[s];
            }
            for j in 0..q {
                if j != r {
                    v += phi[[col(r, l), col(j, y[j])]];
                }
            }
            logits.push(v);
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        nll += lse - logits[y[r]];
    }
    nll
}

/// `-(1/N) sum_n log PL`, looping over observations.
pub fn naive_neg_log_pseudolik(pair: &ParameterPair, data: &MixedDataset) -> f64 {
    let mut total = 0.0;
    for i in 0..data.n() {
        let theta = match data.groups()[i] {
            Group::One => &pair.theta1,
            Group::Two => &pair.theta2,
        };
        let x: Vec<f64> = data.row_x(i).to_vec();
        let y: Vec<usize> = data.row_y(i).to_vec();
        total += naive_observation_nll(theta, &x, &y);
    }
    total / data.n() as f64
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Finite-difference gradient of the naive pseudolikelihood, in the flat
/// coordinate order of [`ParameterSet::to_flat`] (class 1 then class 2).
pub fn oracle_fd_gradient(pair: &ParameterPair, data: &MixedDataset, step: f64) -> Vec<f64> {
    let layout = pair.layout().clone();
    let mut flat = pair.theta1.to_flat();
    let n1 = flat.len();
    flat.extend(pair.theta2.to_flat());
    let f = |v: &[f64]| {
        let t1 = ParameterSet::from_flat(layout.clone(), &v[..n1]).unwrap();
        let t2 = ParameterSet::from_flat(layout.clone(), &v[n1..]).unwrap();
        naive_neg_log_pseudolik(&ParameterPair { theta1: t1, theta2: t2 }, data)
    };
    fd_gradient(f, &flat, step)
}

/// Closed-form minimizer of
/// `L/2 (b1-a1)^2 + L/2 (b2-a2)^2 + lam (|b1|+|b2|) + lam_diff |b1-b2|`:
/// fuse the two points first, then soft-threshold each.
pub fn fused_lasso_two_point(a1: f64, a2: f64, l: f64, lam: f64, lam_diff: f64) -> (f64, f64) {
    let (f1, f2) = if (a1 - a2).abs() <= 2.0 * lam_diff / l {
        let m = 0.5 * (a1 + a2);
        (m, m)
    } else {
        let shift = (lam_diff / l) * (a1 - a2).signum();
        (a1 - shift, a2 + shift)
    };
    let soft = |v: f64| v.signum() * (v.abs() - lam / l).max(0.0);
    (soft(f1), soft(f2))
}

/// Objective of the coupled two-block prox problem for flattened blocks.
pub fn fused_block_objective(v1: &[f64], v2: &[f64], a1: &[f64], a2: &[f64], l: f64, lam: f64, lam_diff: f64) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let quad: f64 = v1.iter().zip(a1).chain(v2.iter().zip(a2)).map(|(v, a)| (v - a) * (v - a)).sum();
    0.5 * l * quad
        + lam * (norm(&mut v1.iter().copied()) + norm(&mut v2.iter().copied()))
        + lam_diff * norm(&mut v1.iter().zip(v2).map(|(a, b)| a - b))
}

/// Budgeted random + local grid search for the minimum of `objective` over
/// `R^dim`. `hints` are evaluated first (they typically include the origin
/// and the unpenalized point). Returns the best point and its value, an
/// upper bound on the true minimum.
pub fn oracle_prox_search(
    objective: impl Fn(&[f64]) -> f64,
    dim: usize,
    hints: &[Vec<f64>],
    radius: f64,
    budget: usize,
    seed: u64,
) -> (Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = vec![0.0; dim];
    let mut best_val = objective(&best);
    let mut spent = 1;
    for h in hints {
        let v = objective(h);
        spent += 1;
        if v < best_val {
            best_val = v;
            best = h.clone();
        }
    }
    // global random phase, then shrinking local perturbations around the
    // incumbent, then a coordinate grid polish
    let global = budget / 4;
    while spent < global {
        let cand: Vec<f64> = (0..dim).map(|_| rng.random_range(-radius..radius)).collect();
        let v = objective(&cand);
        spent += 1;
        if v < best_val {
            best_val = v;
            best = cand;
        }
    }
    let mut scale = radius / 4.0;
    let local_end = budget - budget / 8;
    let mut since = 0;
    while spent < local_end {
        let cand: Vec<f64> = best.iter().map(|b| b + scale * rng.random_range(-1.0..1.0)).collect();
        let v = objective(&cand);
        spent += 1;
        since += 1;
        if v < best_val {
            best_val = v;
            best = cand;
            since = 0;
        } else if since > 200 {
            scale = (scale * 0.5).max(1e-9);
            since = 0;
        }
    }
    let mut step = scale.max(1e-6);
    while spent < budget && step > 1e-12 {
        let mut improved = false;
        for i in 0..dim {
            for dir in [-1.0, 1.0] {
                let mut cand = best.clone();
                cand[i] += dir * step;
                let v = objective(&cand);
                spent += 1;
                if v < best_val {
                    best_val = v;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best, best_val)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    dm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Random parameters with unit-scale entries and precisions in `[1, 2]`.
pub fn random_parameter_set(layout: &Arc<Layout>, scale: f64, rng: &mut impl Rng) -> ParameterSet {
    let (p, t) = (layout.p, layout.total_levels);
    let mut u = || scale * rng.random_range(-1.0..1.0);
    let alpha = Array1::from_shape_fn(p, |_| u());
    let mut beta = Array2::zeros((p, p));
    for s in 0..p {
        for r in s + 1..p {
            let v = u();
            beta[[s, r]] = v;
            beta[[r, s]] = v;
        }
    }
    let rho = Array2::from_shape_fn((p, t), |_| u());
    let mut phi = Array2::zeros((t, t));
    for a in 0..t {
        phi[[a, a]] = u();
        for b in a + 1..t {
            if layout.owner(a) != layout.owner(b) {
                let v = u();
                phi[[a, b]] = v;
                phi[[b, a]] = v;
            }
        }
    }
    for s in 0..p {
        beta[[s, s]] = 1.0 + rng.random_range(0.0..1.0);
    }
    ParameterSet::new(layout.clone(), alpha, beta, rho, phi).expect("valid random parameters")
}

pub fn random_pair(layout: &Arc<Layout>, scale: f64, rng: &mut impl Rng) -> ParameterPair {
    let a = random_parameter_set(layout, scale, rng);
    let b = random_parameter_set(layout, scale, rng);
    ParameterPair::new(a, b).unwrap()
}

/// Random two-class dataset with standard-normal continuous values and
/// uniform levels, alternating class labels.
pub fn random_dataset(schema: &VariableSchema, n: usize, rng: &mut impl Rng) -> MixedDataset {
    let (p, q) = (schema.p(), schema.q());
    let x = Array2::from_shape_fn((n, p), |_| {
        // Box-Muller keeps this independent of the library's samplers
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    });
    let y = Array2::from_shape_fn((n, q), |(_, r)| rng.random_range(0..schema.levels(r)));
    let groups = (0..n).map(|i| if i % 2 == 0 { Group::One } else { Group::Two }).collect();
    MixedDataset::new(schema.clone(), x, y, groups).unwrap()
}

/// Maximum degree of a uniformly random simple graph with `n` nodes and `m`
/// edges.
pub fn erdos_renyi_max_degree(n: usize, m: usize, rng: &mut impl Rng) -> usize {
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    // partial Fisher-Yates
    let m = m.min(pairs.len());
    for k in 0..m {
        let pick = rng.random_range(k..pairs.len());
        pairs.swap(k, pick);
    }
    let mut deg = vec![0usize; n];
    for &(i, j) in &pairs[..m] {
        deg[i] += 1;
        deg[j] += 1;
    }
    deg.into_iter().max().unwrap_or(0)
}

/// Accuracy, precision, recall, F1 and MCC written out longhand, with
/// undefined ratios set to 0.
pub fn naive_rates(tp: u64, fp: u64, fn_: u64, tn: u64) -> [f64; 5] {
    let safe = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let (tp, fp, fn_, tn) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
    let precision = safe(tp, tp + fp);
    let recall = safe(tp, tp + fn_);
    let f1 = if tp == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let mcc = safe(tp * tn - fp * fn_, (tp + fp).sqrt() * (tp + fn_).sqrt() * (tn + fp).sqrt() * (tn + fn_).sqrt());
    [safe(tp + tn, tp + fp + fn_ + tn), precision, recall, f1, mcc]
}

/// Plain RMSD between two equal-length vectors.
pub fn rmsd(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_is_exact_on_linear_functions() {
        let w = [1.5, -2.0, 0.25];
        let f = |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 3.0;
        let g = fd_gradient(f, &[0.3, 0.1, -4.0], 1e-3);
        for (gi, wi) in g.iter().zip(&w) {
            assert!((gi - wi).abs() < 1e-10);
        }
    }

    #[test]
    fn fd_error_shrinks_with_step() {
        let f = |x: &[f64]| x[0].exp();
        let exact = 1f64.exp();
        let e1 = (fd_gradient(f, &[1.0], 1e-2)[0] - exact).abs();
        let e2 = (fd_gradient(f, &[1.0], 5e-3)[0] - exact).abs();
        // second order: halving the step cuts the error about fourfold
        assert!(e2 < e1 / 3.0);
    }

    #[test]
    fn prox_search_finds_unpenalized_center() {
        let a = [0.4, -0.7, 1.1];
        let f = |v: &[f64]| fused_block_objective(v, &[0.0; 3], &a, &[0.0; 3], 2.0, 0.0, 0.0);
        let (best, val) = oracle_prox_search(f, 3, &[], 2.0, 100_000, 1);
        assert!(val < 1e-8, "{val}");
        for (b, c) in best.iter().zip(&a) {
            assert!((b - c).abs() < 1e-4);
        }
    }

    #[test]
    fn prox_search_diagonal_example_prefers_origin() {
        // L = 5, lam = lam' = 0.8, both centers at 0.1
        let obj = |v: &[f64]| fused_block_objective(&v[..1], &v[1..], &[0.1], &[0.1], 5.0, 0.8, 0.8);
        let (best, val) = oracle_prox_search(obj, 2, &[vec![0.1, 0.1]], 1.0, 200_000, 3);
        assert!(val >= obj(&[0.0, 0.0]) - 1e-15);
        assert!(best.iter().all(|v| v.abs() < 1e-6), "{best:?}");
        assert!(obj(&[0.0, 0.0]) < obj(&[0.1, 0.1]));
    }

    #[test]
    fn closed_form_agrees_with_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..500 {
            let a1 = rng.random_range(-2.0..2.0);
            let a2 = rng.random_range(-2.0..2.0);
            let l = rng.random_range(0.5..4.0);
            let lam = rng.random_range(0.0..1.0);
            let lam_diff = rng.random_range(0.0..1.0);
            let obj = |v: &[f64]| fused_block_objective(&v[..1], &v[1..], &[a1], &[a2], l, lam, lam_diff);
            let (b1, b2) = fused_lasso_two_point(a1, a2, l, lam, lam_diff);
            let (_, val) = oracle_prox_search(obj, 2, &[vec![a1, a2]], 3.0, 4_000, k);
            assert!(obj(&[b1, b2]) <= val + 1e-9, "instance {k}");
        }
    }
}
