//! Monotone accelerated proximal gradient with backtracking.
//!
//! The driver is generic over [`Composite`] so the same loop fits the joint
//! two-class model and a single class on its own.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Group, MixedDataset, ParameterPair, ParameterSet, PenaltyConfig, EPS_DIAG};
use crate::prox::{self, ProxConfig, ProxWarning};
use crate::pseudolik::{GroupBlock, GroupObjective, PseudoLikelihood};

/// Largest step constant tried before the line search gives up.
pub const MAX_LIPSCHITZ: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub l0: f64,
    pub eta: f64,
    /// Multiplier applied to the previous step constant before each line
    /// search.
    pub shrink: f64,
    pub rmsd_tol: f64,
    pub consecutive_required: usize,
    pub max_iter: usize,
    /// Row chunks for the gradient; results are reproducible for a fixed
    /// value.
    pub workers: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { l0: 1.0, eta: 2.0, shrink: 0.9, rmsd_tol: 1e-5, consecutive_required: 3, max_iter: 2000, workers: 1 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.l0 > 0.0
            && self.eta > 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.rmsd_tol > 0.0
            && self.consecutive_required >= 1
            && self.max_iter >= 1
            && self.workers >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

/// Vector-space operations the driver needs on an iterate.
pub trait Iterate: Clone + Send + Sync {
    fn axpby(a: f64, x: &Self, b: f64, y: &Self) -> Self;
    /// Inner product over free coordinates.
    fn inner(&self, other: &Self) -> f64;
    fn n_coords(&self) -> usize;
    /// Raises every conditional precision to at least [`EPS_DIAG`].
    fn clamp_precisions(&mut self);
}

impl Iterate for ParameterSet {
    fn axpby(a: f64, x: &Self, b: f64, y: &Self) -> Self {
        ParameterSet::lin_comb(a, x, b, y)
    }

    fn inner(&self, other: &Self) -> f64 {
        self.dot(other)
    }

    fn n_coords(&self) -> usize {
        ParameterSet::n_coords(self)
    }

    fn clamp_precisions(&mut self) {
        self.beta.diag_mut().mapv_inplace(|b| b.max(EPS_DIAG));
    }
}

impl Iterate for ParameterPair {
    fn axpby(a: f64, x: &Self, b: f64, y: &Self) -> Self {
        ParameterPair::lin_comb(a, x, b, y)
    }

    fn inner(&self, other: &Self) -> f64 {
        self.dot(other)
    }

    fn n_coords(&self) -> usize {
        ParameterPair::n_coords(self)
    }

    fn clamp_precisions(&mut self) {
        self.theta1.clamp_precisions();
        self.theta2.clamp_precisions();
    }
}

/// `F = f + g` with smooth `f` and a penalty `g` with a computable prox.
pub trait Composite: Sync {
    type Point: Iterate;

    fn smooth(&self, x: &Self::Point) -> Result<f64>;
    fn smooth_grad(&self, x: &Self::Point) -> Result<(f64, Self::Point)>;
    fn penalty(&self, x: &Self::Point) -> f64;
    /// `argmin_y g(y) + L/2 |y - center|^2`
    fn prox(&self, center: &Self::Point, l: f64) -> (Self::Point, Vec<ProxWarning>);
}

/// The joint two-class objective.
pub struct FusedProblem {
    pub pl: PseudoLikelihood,
    pub pen: PenaltyConfig,
    pub prox_cfg: ProxConfig,
}

impl Composite for FusedProblem {
    type Point = ParameterPair;

    fn smooth(&self, x: &ParameterPair) -> Result<f64> {
        self.pl.value(x)
    }

    fn smooth_grad(&self, x: &ParameterPair) -> Result<(f64, ParameterPair)> {
        self.pl.value_and_gradient(x)
    }

    fn penalty(&self, x: &ParameterPair) -> f64 {
        prox::penalty(x, &self.pen)
    }

    fn prox(&self, center: &ParameterPair, l: f64) -> (ParameterPair, Vec<ProxWarning>) {
        prox::prox_full(center, l, &self.pen, &self.prox_cfg)
    }
}

/// One class with sparsity penalties only. The pseudolikelihood sum is
/// divided by `denominator`.
pub struct SingleGroupProblem {
    pub objective: GroupObjective,
    pub denominator: f64,
    pub pen: PenaltyConfig,
}

impl Composite for SingleGroupProblem {
    type Point = ParameterSet;

    fn smooth(&self, x: &ParameterSet) -> Result<f64> {
        Ok(self.objective.value_sum(x)? / self.denominator)
    }

    fn smooth_grad(&self, x: &ParameterSet) -> Result<(f64, ParameterSet)> {
        let (v, g) = self.objective.value_grad_sum(x)?;
        Ok((v / self.denominator, g.scaled(1.0 / self.denominator)))
    }

    fn penalty(&self, x: &ParameterSet) -> f64 {
        prox::penalty_single(x, &self.pen)
    }

    fn prox(&self, center: &ParameterSet, l: f64) -> (ParameterSet, Vec<ProxWarning>) {
        (prox::prox_single(center, l, &self.pen), Vec::new())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult<P> {
    pub theta: P,
    /// `F` at the accepted iterate, starting with the initial point.
    pub objective_trace: Vec<f64>,
    /// RMSD between each candidate and the previous iterate.
    pub rmsd_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_l: f64,
    /// Inner prox loops that stopped on their caps, over the whole run.
    pub prox_warnings: usize,
}

impl<P> FitResult<P> {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial value")
    }
}

/// Outcome of one line search.
pub struct Step<P> {
    pub l: f64,
    pub candidate: P,
    pub smooth_value: f64,
    pub warnings: Vec<ProxWarning>,
}

/// `t_{k+1}` of the momentum sequence.
pub fn next_momentum(t: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
}

/// Finds the smallest `shrink * l_prev * eta^i` whose prox step satisfies
/// the quadratic majorization at `lambda`.
pub fn backtrack<C: Composite>(
    problem: &C,
    lambda: &C::Point,
    f_lambda: f64,
    grad: &C::Point,
    l_prev: f64,
    cfg: &OptimizerConfig,
) -> Result<Step<C::Point>> {
    let mut l = cfg.shrink * l_prev;
    // absorbs rounding in f when the step is already tiny
    let slack = 1e-12 * (1.0 + f_lambda.abs());
    loop {
        let center = C::Point::axpby(1.0, lambda, -1.0 / l, grad);
        let (candidate, warnings) = problem.prox(&center, l);
        let d = C::Point::axpby(1.0, &candidate, -1.0, lambda);
        let bound = f_lambda + d.inner(grad) + 0.5 * l * d.inner(&d);
        match problem.smooth(&candidate) {
            Ok(f) if f <= bound + slack => {
                return Ok(Step { l, candidate, smooth_value: f, warnings });
            }
            Ok(_) | Err(Error::NonFinite { .. }) => {}
            Err(e) => return Err(e),
        }
        l *= cfg.eta;
        if l > MAX_LIPSCHITZ {
            return Err(Error::LipschitzOverflow(l));
        }
    }
}

fn rmsd<P: Iterate>(a: &P, b: &P) -> f64 {
    let d = P::axpby(1.0, a, -1.0, b);
    (d.inner(&d) / a.n_coords() as f64).sqrt()
}

/// Runs the monotone accelerated proximal gradient method from `init`.
pub fn minimize<C: Composite>(problem: &C, init: C::Point, cfg: &OptimizerConfig) -> Result<FitResult<C::Point>> {
    cfg.validate()?;
    let mut theta_prev = init;
    theta_prev.clamp_precisions();
    let mut f_prev = problem.smooth(&theta_prev)? + problem.penalty(&theta_prev);
    let mut objective_trace = vec![f_prev];
    let mut rmsd_trace = Vec::new();
    let mut lambda = theta_prev.clone();
    let mut t = 1.0;
    let mut l = cfg.l0 / cfg.shrink;
    let mut streak = 0;
    let mut prox_warnings = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let (f_lambda, grad) = problem.smooth_grad(&lambda)?;
        let step = backtrack(problem, &lambda, f_lambda, &grad, l, cfg)?;
        l = step.l;
        prox_warnings += step.warnings.len();
        let k = step.candidate;
        let f_k = step.smooth_value + problem.penalty(&k);

        // monotone acceptance; ties keep the new candidate
        let (theta, f_theta) = if f_k <= f_prev { (k.clone(), f_k) } else { (theta_prev.clone(), f_prev) };
        let t_next = next_momentum(t);
        let toward_k = C::Point::axpby(t / t_next, &k, -t / t_next, &theta);
        let inertia = C::Point::axpby((t - 1.0) / t_next, &theta, -(t - 1.0) / t_next, &theta_prev);
        lambda = C::Point::axpby(1.0, &theta, 1.0, &C::Point::axpby(1.0, &toward_k, 1.0, &inertia));
        // the extrapolated point can leave the domain; project it back
        lambda.clamp_precisions();
        t = t_next;

        // measured on the candidate: a rejected step leaves theta unchanged,
        // which would otherwise read as convergence
        let change = rmsd(&k, &theta_prev);
        log::debug!("iter {iterations}: F = {f_theta:.10e}, L = {l:.3e}, rmsd = {change:.3e}");
        rmsd_trace.push(change);
        objective_trace.push(f_theta);
        theta_prev = theta;
        f_prev = f_theta;
        streak = if change < cfg.rmsd_tol { streak + 1 } else { 0 };
        if streak >= cfg.consecutive_required {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("optimizer stopped after {iterations} iterations without converging");
    }
    if prox_warnings > 0 {
        log::warn!("{prox_warnings} prox block solves stopped on an iteration cap");
    }
    Ok(FitResult { theta: theta_prev, objective_trace, rmsd_trace, iterations, converged, final_l: l, prox_warnings })
}

/// Fits the fused two-class model from the empty model.
pub fn fit(
    data: &MixedDataset,
    pen: &PenaltyConfig,
    ocfg: &OptimizerConfig,
    pcfg: &ProxConfig,
) -> Result<FitResult<ParameterPair>> {
    let init = ParameterPair::empty(data.schema().layout().clone());
    fit_from(data, init, pen, ocfg, pcfg)
}

pub fn fit_from(
    data: &MixedDataset,
    init: ParameterPair,
    pen: &PenaltyConfig,
    ocfg: &OptimizerConfig,
    pcfg: &ProxConfig,
) -> Result<FitResult<ParameterPair>> {
    pen.validate()?;
    if init.layout() != data.schema().layout() {
        return Err(Error::Parameters("initial parameters do not match the schema".into()));
    }
    let problem = FusedProblem { pl: PseudoLikelihood::with_workers(data, ocfg.workers)?, pen: *pen, prox_cfg: *pcfg };
    minimize(&problem, init, ocfg)
}

/// Fits one class alone with the sparsity weights of `pen`. The objective
/// is normalized by `denominator`, or by the class size when `None`.
pub fn fit_single_group(
    data: &MixedDataset,
    group: Group,
    pen: &PenaltyConfig,
    denominator: Option<f64>,
    ocfg: &OptimizerConfig,
) -> Result<FitResult<ParameterSet>> {
    let init = ParameterSet::empty(data.schema().layout().clone());
    fit_single_group_from(data, group, init, pen, denominator, ocfg)
}

pub fn fit_single_group_from(
    data: &MixedDataset,
    group: Group,
    init: ParameterSet,
    pen: &PenaltyConfig,
    denominator: Option<f64>,
    ocfg: &OptimizerConfig,
) -> Result<FitResult<ParameterSet>> {
    pen.validate()?;
    if init.layout() != data.schema().layout() {
        return Err(Error::Parameters("initial parameters do not match the schema".into()));
    }
    let block = GroupBlock::from_dataset(data, group);
    if block.n() == 0 {
        return Err(Error::Dataset(format!("group {} has no observations", group.label())));
    }
    let denominator = denominator.unwrap_or(block.n() as f64);
    let problem = SingleGroupProblem {
        objective: GroupObjective::new(data.schema(), block, ocfg.workers),
        denominator,
        pen: *pen,
    };
    minimize(&problem, init, ocfg)
}

/// RMSD between `theta` and one prox-gradient step from it; zero exactly at
/// a minimizer.
pub fn fixed_point_residual<C: Composite>(problem: &C, theta: &C::Point, l: f64) -> Result<f64> {
    let (_, grad) = problem.smooth_grad(theta)?;
    let center = C::Point::axpby(1.0, theta, -1.0 / l, &grad);
    let (next, _) = problem.prox(&center, l);
    Ok(rmsd(&next, theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `f(x) = c/2 (x - m)^2` on a scalar, no penalty.
    struct Quadratic {
        c: f64,
        m: f64,
    }

    #[derive(Clone)]
    struct Scalar(f64);

    impl Iterate for Scalar {
        fn axpby(a: f64, x: &Self, b: f64, y: &Self) -> Self {
            Scalar(a * x.0 + b * y.0)
        }
        fn inner(&self, other: &Self) -> f64 {
            self.0 * other.0
        }
        fn n_coords(&self) -> usize {
            1
        }
        fn clamp_precisions(&mut self) {}
    }

    impl Composite for Quadratic {
        type Point = Scalar;
        fn smooth(&self, x: &Scalar) -> Result<f64> {
            Ok(0.5 * self.c * (x.0 - self.m).powi(2))
        }
        fn smooth_grad(&self, x: &Scalar) -> Result<(f64, Scalar)> {
            Ok((self.smooth(x)?, Scalar(self.c * (x.0 - self.m))))
        }
        fn penalty(&self, _: &Scalar) -> f64 {
            0.0
        }
        fn prox(&self, center: &Scalar, _: f64) -> (Scalar, Vec<ProxWarning>) {
            (center.clone(), Vec::new())
        }
    }

    #[test]
    fn momentum_sequence() {
        assert_eq!(next_momentum(1.0), 0.5 * (1.0 + 5f64.sqrt()));
        assert!((next_momentum(1.0) - 1.6180339887).abs() < 1e-10);
    }

    #[test]
    fn backtracking_accepts_first_step_at_least_curvature() {
        let q = Quadratic { c: 1.0, m: 3.0 };
        let cfg = OptimizerConfig::default();
        let x = Scalar(0.0);
        let (f, g) = q.smooth_grad(&x).unwrap();
        // starting from 0.9 * 0.5 the ladder is 0.45, 0.9, 1.8
        let step = backtrack(&q, &x, f, &g, 0.5, &cfg).unwrap();
        assert_eq!(step.l, 1.8);
        let step = backtrack(&q, &x, f, &g, 10.0, &cfg).unwrap();
        assert_eq!(step.l, 9.0);
    }

    #[test]
    fn quadratic_is_solved() {
        let q = Quadratic { c: 4.0, m: -1.5 };
        let res = minimize(&q, Scalar(2.0), &OptimizerConfig::default()).unwrap();
        assert!(res.converged);
        assert!((res.theta.0 + 1.5).abs() < 1e-5);
        assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = OptimizerConfig { eta: 1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
