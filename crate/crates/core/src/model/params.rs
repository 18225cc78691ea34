use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::schema::{EdgeKey, EdgeKind, Layout};
use crate::error::{Error, Result};

/// Lower bound enforced on every conditional precision `beta_ss`.
pub const EPS_DIAG: f64 = 1e-6;

/// Parameters of one class's pairwise Markov random field.
///
/// * `alpha` (p): continuous node potentials.
/// * `beta` (p x p, symmetric): off-diagonal entries are cc edge weights,
///   diagonal entries are the conditional precisions.
/// * `rho` (p x total_levels): row `s`, block of categorical `j` holds the
///   `L_j`-vector of the cd edge `(s, j)`.
/// * `phi` (total_levels x total_levels, symmetric): off-diagonal blocks are
///   the dd edge matrices; diagonal blocks hold categorical node potentials
///   on their diagonal and zeros elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub(crate) layout: Arc<Layout>,
    pub(crate) alpha: Array1<f64>,
    pub(crate) beta: Array2<f64>,
    pub(crate) rho: Array2<f64>,
    pub(crate) phi: Array2<f64>,
}

impl ParameterSet {
    /// Checked constructor; enforces every structural invariant.
    pub fn new(
        layout: Arc<Layout>,
        alpha: Array1<f64>,
        beta: Array2<f64>,
        rho: Array2<f64>,
        phi: Array2<f64>,
    ) -> Result<Self> {
        let (p, t) = (layout.p, layout.total_levels);
        let bad = |msg: String| Err(Error::Parameters(msg));
        if alpha.len() != p || beta.dim() != (p, p) || rho.dim() != (p, t) || phi.dim() != (t, t) {
            return bad(format!(
                "shape mismatch: alpha {}, beta {:?}, rho {:?}, phi {:?} for p={p}, levels={t}",
                alpha.len(),
                beta.dim(),
                rho.dim(),
                phi.dim()
            ));
        }
        if !(alpha.iter().all(|v| v.is_finite())
            && beta.iter().all(|v| v.is_finite())
            && rho.iter().all(|v| v.is_finite())
            && phi.iter().all(|v| v.is_finite()))
        {
            return bad("parameters must be finite".into());
        }
        for s in 0..p {
            if beta[[s, s]] < EPS_DIAG {
                return bad(format!("beta[{s},{s}] = {} is below {EPS_DIAG:e}", beta[[s, s]]));
            }
            for u in s + 1..p {
                if beta[[s, u]] != beta[[u, s]] {
                    return bad(format!("beta is not symmetric at ({s},{u})"));
                }
            }
        }
        for a in 0..t {
            for b in a + 1..t {
                if phi[[a, b]] != phi[[b, a]] {
                    return bad(format!("phi is not symmetric at ({a},{b})"));
                }
                if layout.owner(a) == layout.owner(b) && phi[[a, b]] != 0.0 {
                    return bad(format!("phi self-block of categorical {} must be diagonal", layout.owner(a)));
                }
            }
        }
        Ok(Self { layout, alpha, beta, rho, phi })
    }

    /// All-zero parameters with unit conditional precisions.
    pub fn empty(layout: Arc<Layout>) -> Self {
        let (p, t) = (layout.p, layout.total_levels);
        Self {
            alpha: Array1::zeros(p),
            beta: Array2::eye(p),
            rho: Array2::zeros((p, t)),
            phi: Array2::zeros((t, t)),
            layout,
        }
    }

    /// All-zero arrays, including the diagonal of `beta`. Used for gradients
    /// and differences, which are not themselves valid parameters.
    pub(crate) fn zeros(layout: Arc<Layout>) -> Self {
        let (p, t) = (layout.p, layout.total_levels);
        Self {
            alpha: Array1::zeros(p),
            beta: Array2::zeros((p, p)),
            rho: Array2::zeros((p, t)),
            phi: Array2::zeros((t, t)),
            layout,
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn alpha(&self) -> ArrayView1<'_, f64> {
        self.alpha.view()
    }

    pub fn beta(&self) -> ArrayView2<'_, f64> {
        self.beta.view()
    }

    pub fn rho(&self) -> ArrayView2<'_, f64> {
        self.rho.view()
    }

    pub fn phi(&self) -> ArrayView2<'_, f64> {
        self.phi.view()
    }

    /// `rho_sj` as an `L_j`-vector.
    pub fn rho_block(&self, s: usize, j: usize) -> ArrayView1<'_, f64> {
        self.rho.slice(s![s, self.layout.block(j)])
    }

    /// `phi_rj` as an `L_r x L_j` matrix.
    pub fn phi_block(&self, r: usize, j: usize) -> ArrayView2<'_, f64> {
        self.phi.slice(s![self.layout.block(r), self.layout.block(j)])
    }

    /// Entries of the edge block for `key`, flattened in row-major order.
    pub fn edge_values(&self, key: &EdgeKey) -> Vec<f64> {
        let (a, b) = key.local(self.layout.p);
        match key.kind {
            EdgeKind::Cc => vec![self.beta[[a, b]]],
            EdgeKind::Cd => self.rho_block(a, b).to_vec(),
            EdgeKind::Dd => self.phi_block(a, b).iter().copied().collect(),
        }
    }

    /// Overwrites an edge block from row-major values, keeping `beta` and
    /// `phi` symmetric.
    pub(crate) fn set_edge_values(&mut self, key: &EdgeKey, values: &[f64]) {
        let (a, b) = key.local(self.layout.p);
        match key.kind {
            EdgeKind::Cc => {
                self.beta[[a, b]] = values[0];
                self.beta[[b, a]] = values[0];
            }
            EdgeKind::Cd => {
                let off = self.layout.offsets[b];
                for (l, &v) in values.iter().enumerate() {
                    self.rho[[a, off + l]] = v;
                }
            }
            EdgeKind::Dd => {
                let (oa, ob) = (self.layout.offsets[a], self.layout.offsets[b]);
                let width = self.layout.levels[b];
                for (k, &v) in values.iter().enumerate() {
                    let (u, w) = (oa + k / width, ob + k % width);
                    self.phi[[u, w]] = v;
                    self.phi[[w, u]] = v;
                }
            }
        }
    }

    /// True when some entry of the edge block is exactly nonzero.
    pub fn edge_is_nonzero(&self, key: &EdgeKey) -> bool {
        let (a, b) = key.local(self.layout.p);
        match key.kind {
            EdgeKind::Cc => self.beta[[a, b]] != 0.0,
            EdgeKind::Cd => self.rho_block(a, b).iter().any(|&v| v != 0.0),
            EdgeKind::Dd => self.phi_block(a, b).iter().any(|&v| v != 0.0),
        }
    }

    /// Euclidean (Frobenius) norm of an edge block.
    pub fn edge_norm(&self, key: &EdgeKey) -> f64 {
        self.edge_values(key).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Number of free coordinates: symmetric entries are counted once and
    /// the structural zeros of the `phi` self-blocks are not counted.
    pub fn n_coords(&self) -> usize {
        let l = &self.layout;
        let (p, t) = (l.p, l.total_levels);
        let dd: usize =
            (0..l.q()).flat_map(|r| (r + 1..l.q()).map(move |j| (r, j))).map(|(r, j)| l.levels[r] * l.levels[j]).sum();
        p + p * (p + 1) / 2 + p * t + t + dd
    }

    /// Inner product over free coordinates.
    pub fn dot(&self, other: &Self) -> f64 {
        let sym = |a: &Array2<f64>, b: &Array2<f64>| {
            let full: f64 = Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + x * y);
            let diag: f64 = a.diag().iter().zip(b.diag()).map(|(x, y)| x * y).sum();
            0.5 * (full + diag)
        };
        self.alpha.dot(&other.alpha)
            + sym(&self.beta, &other.beta)
            + Zip::from(&self.rho).and(&other.rho).fold(0.0, |acc, x, y| acc + x * y)
            + sym(&self.phi, &other.phi)
    }

    /// `a * x + b * y`, coordinate-wise.
    pub fn lin_comb(a: f64, x: &Self, b: f64, y: &Self) -> Self {
        let f = |u: &f64, v: &f64| a * u + b * v;
        Self {
            layout: x.layout.clone(),
            alpha: Zip::from(&x.alpha).and(&y.alpha).map_collect(f),
            beta: Zip::from(&x.beta).and(&y.beta).map_collect(f),
            rho: Zip::from(&x.rho).and(&y.rho).map_collect(f),
            phi: Zip::from(&x.phi).and(&y.phi).map_collect(f),
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            layout: self.layout.clone(),
            alpha: &self.alpha * k,
            beta: &self.beta * k,
            rho: &self.rho * k,
            phi: &self.phi * k,
        }
    }

    /// Free coordinates in a fixed order: alpha, upper triangle of beta
    /// (diagonal included), rho, the phi diagonal, then the upper
    /// off-diagonal phi blocks.
    pub fn to_flat(&self) -> Vec<f64> {
        let l = &self.layout;
        let mut out = Vec::with_capacity(self.n_coords());
        out.extend(self.alpha.iter());
        for s in 0..l.p {
            for t in s..l.p {
                out.push(self.beta[[s, t]]);
            }
        }
        out.extend(self.rho.iter());
        out.extend(self.phi.diag().iter());
        for a in 0..l.total_levels {
            for b in a + 1..l.total_levels {
                if l.owner(a) != l.owner(b) {
                    out.push(self.phi[[a, b]]);
                }
            }
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat). The result is not validated.
    pub fn from_flat(layout: Arc<Layout>, flat: &[f64]) -> Result<Self> {
        let mut out = Self::zeros(layout);
        if flat.len() != out.n_coords() {
            return Err(Error::Parameters(format!("expected {} coordinates, got {}", out.n_coords(), flat.len())));
        }
        let l = out.layout.clone();
        let mut it = flat.iter().copied();
        let mut next = || it.next().unwrap();
        for s in 0..l.p {
            out.alpha[s] = next();
        }
        for s in 0..l.p {
            for t in s..l.p {
                let v = next();
                out.beta[[s, t]] = v;
                out.beta[[t, s]] = v;
            }
        }
        for v in out.rho.iter_mut() {
            *v = next();
        }
        for a in 0..l.total_levels {
            out.phi[[a, a]] = next();
        }
        for a in 0..l.total_levels {
            for b in a + 1..l.total_levels {
                if l.owner(a) != l.owner(b) {
                    let v = next();
                    out.phi[[a, b]] = v;
                    out.phi[[b, a]] = v;
                }
            }
        }
        Ok(out)
    }

    /// Re-runs the invariant checks of [`ParameterSet::new`].
    pub fn validate(&self) -> Result<()> {
        Self::new(self.layout.clone(), self.alpha.clone(), self.beta.clone(), self.rho.clone(), self.phi.clone())
            .map(|_| ())
    }
}

/// The two class-specific parameter sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPair {
    pub theta1: ParameterSet,
    pub theta2: ParameterSet,
}

impl ParameterPair {
    pub fn new(theta1: ParameterSet, theta2: ParameterSet) -> Result<Self> {
        if theta1.layout != theta2.layout {
            return Err(Error::Parameters("the two classes have different shapes".into()));
        }
        Ok(Self { theta1, theta2 })
    }

    pub fn empty(layout: Arc<Layout>) -> Self {
        Self { theta1: ParameterSet::empty(layout.clone()), theta2: ParameterSet::empty(layout) }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        self.theta1.layout()
    }

    pub fn get(&self, group: usize) -> &ParameterSet {
        match group {
            0 => &self.theta1,
            1 => &self.theta2,
            _ => panic!("group index {group} out of range"),
        }
    }

    pub fn swapped(&self) -> Self {
        Self { theta1: self.theta2.clone(), theta2: self.theta1.clone() }
    }

    /// True when the two classes' blocks for `key` are not bitwise equal.
    pub fn edge_differs(&self, key: &EdgeKey) -> bool {
        self.theta1.edge_values(key) != self.theta2.edge_values(key)
    }

    /// Norm of the class-1 minus class-2 block.
    pub fn edge_diff_norm(&self, key: &EdgeKey) -> f64 {
        self.theta1
            .edge_values(key)
            .iter()
            .zip(self.theta2.edge_values(key))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn n_coords(&self) -> usize {
        2 * self.theta1.n_coords()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.theta1.dot(&other.theta1) + self.theta2.dot(&other.theta2)
    }

    pub fn lin_comb(a: f64, x: &Self, b: f64, y: &Self) -> Self {
        Self {
            theta1: ParameterSet::lin_comb(a, &x.theta1, b, &y.theta1),
            theta2: ParameterSet::lin_comb(a, &x.theta2, b, &y.theta2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.theta1.validate()?;
        self.theta2.validate()
    }
}

/// The six penalty weights: three sparsity weights by edge type and three
/// weights on the between-class differences.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda_cc: f64,
    pub lambda_cd: f64,
    pub lambda_dd: f64,
    pub lambda_diff_cc: f64,
    pub lambda_diff_cd: f64,
    pub lambda_diff_dd: f64,
}

impl PenaltyConfig {
    pub const NAMES: [&'static str; 6] =
        ["lambda_cc", "lambda_cd", "lambda_dd", "lambda_diff_cc", "lambda_diff_cd", "lambda_diff_dd"];

    pub fn new(values: [f64; 6]) -> Result<Self> {
        let pen = Self::from_array(values);
        pen.validate()?;
        Ok(pen)
    }

    /// All six weights set to `lambda`.
    pub fn uniform(lambda: f64) -> Self {
        Self::from_array([lambda; 6])
    }

    /// Network weights `lambda`, difference weights `lambda_diff`.
    pub fn split(lambda: f64, lambda_diff: f64) -> Self {
        Self::from_array([lambda, lambda, lambda, lambda_diff, lambda_diff, lambda_diff])
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            lambda_cc: v[0],
            lambda_cd: v[1],
            lambda_dd: v[2],
            lambda_diff_cc: v[3],
            lambda_diff_cd: v[4],
            lambda_diff_dd: v[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.lambda_cc, self.lambda_cd, self.lambda_dd, self.lambda_diff_cc, self.lambda_diff_cd, self.lambda_diff_dd]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.to_array()) {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `(lambda, lambda_diff)` for an edge type.
    pub fn for_kind(&self, kind: EdgeKind) -> (f64, f64) {
        match kind {
            EdgeKind::Cc => (self.lambda_cc, self.lambda_diff_cc),
            EdgeKind::Cd => (self.lambda_cd, self.lambda_diff_cd),
            EdgeKind::Dd => (self.lambda_dd, self.lambda_diff_dd),
        }
    }

    /// Multiplies every weight by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * factor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn layout() -> Arc<Layout> {
        Arc::new(Layout::new(2, vec![2, 3]))
    }

    #[test]
    fn constructor_rejects_asymmetry_and_small_diagonal() {
        let l = layout();
        let base = ParameterSet::empty(l.clone());
        let mut beta = base.beta.clone();
        beta[[0, 1]] = 0.3;
        assert!(
            ParameterSet::new(l.clone(), base.alpha.clone(), beta.clone(), base.rho.clone(), base.phi.clone()).is_err()
        );
        beta[[1, 0]] = 0.3;
        assert!(
            ParameterSet::new(l.clone(), base.alpha.clone(), beta.clone(), base.rho.clone(), base.phi.clone()).is_ok()
        );
        beta[[1, 1]] = 1e-7;
        assert!(ParameterSet::new(l.clone(), base.alpha.clone(), beta, base.rho.clone(), base.phi.clone()).is_err());

        let mut phi = base.phi.clone();
        phi[[0, 1]] = 0.5;
        phi[[1, 0]] = 0.5;
        // both columns belong to categorical 0: off-diagonal of a self-block
        assert!(ParameterSet::new(l, base.alpha.clone(), base.beta.clone(), base.rho.clone(), phi).is_err());
    }

    #[test]
    fn flat_round_trip_and_dot() {
        let l = layout();
        let mut x = ParameterSet::empty(l.clone());
        x.alpha = array![1.0, 2.0];
        x.beta[[0, 1]] = 0.5;
        x.beta[[1, 0]] = 0.5;
        x.rho[[1, 4]] = -1.0;
        x.phi[[0, 3]] = 2.0;
        x.phi[[3, 0]] = 2.0;
        x.phi[[2, 2]] = 0.25;
        let flat = x.to_flat();
        assert_eq!(flat.len(), x.n_coords());
        // 2 alpha + 3 beta + 10 rho + 5 phi diag + 6 dd entries
        assert_eq!(x.n_coords(), 26);
        let back = ParameterSet::from_flat(l, &flat).unwrap();
        assert_eq!(back, x);
        let sq: f64 = flat.iter().map(|v| v * v).sum();
        assert!((x.dot(&x) - sq).abs() < 1e-12);
    }

    #[test]
    fn penalty_config_validation() {
        assert!(PenaltyConfig::new([0.0, 1.0, 2.0, 0.0, 0.0, 0.0]).is_ok());
        assert!(PenaltyConfig::new([0.0, -1.0, 2.0, 0.0, 0.0, 0.0]).is_err());
        assert!(PenaltyConfig::new([f64::NAN, 1.0, 2.0, 0.0, 0.0, 0.0]).is_err());
    }
}
