//! Construction of the implicit weighted fully connected network: regression
//! weights through a symmetric edge function, partial-correlation weights via
//! the precision matrix of (Y, X_S), and ANOVA interaction-sum-of-squares
//! weights for categorical designs.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::ActiveSet;

/// Which quantity the edge function is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightFamily {
    /// f on post-selection regression coefficients.
    FOnBeta,
    /// f on (raw or transformed) partial correlations.
    FOnRho,
    /// interaction sum of squares over total sum of squares.
    AnovaSs,
}

/// Identifier of the edge function.
#[derive(Clone)]
pub enum WeightFn {
    /// f1(x, y) = sqrt(2(1-x^2)) + sqrt(2(1-y^2)) on [0,1]^2.
    F1,
    /// f2(x, y) = sqrt(x^2 + y^2).
    F2,
    /// A user-registered symmetric nonnegative C^2 function.
    Custom(Arc<CustomWeight>),
}

impl fmt::Debug for WeightFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFn::F1 => write!(f, "F1"),
            WeightFn::F2 => write!(f, "F2"),
            WeightFn::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

impl WeightFn {
    pub fn id(&self) -> &'static str {
        match self {
            WeightFn::F1 => "f1",
            WeightFn::F2 => "f2",
            WeightFn::Custom(_) => "custom",
        }
    }

    /// Evaluate the edge function without domain checking.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            WeightFn::F1 => f1_unchecked(x, y),
            WeightFn::F2 => f2(x, y),
            WeightFn::Custom(c) => (c.f)(x, y),
        }
    }

    /// Partial derivative with respect to the first argument.
    pub fn d1(&self, x: f64, y: f64) -> f64 {
        match self {
            WeightFn::F1 => {
                let x = clamp_rho(x);
                -std::f64::consts::SQRT_2 * x / (1.0 - x * x).sqrt()
            }
            WeightFn::F2 => {
                let r = (x * x + y * y).sqrt();
                if r == 0.0 {
                    0.0
                } else {
                    x / r
                }
            }
            WeightFn::Custom(c) => {
                let h = fd_step(x);
                ((c.f)(x + h, y) - (c.f)(x - h, y)) / (2.0 * h)
            }
        }
    }

    /// Second partial derivative with respect to the first argument.
    pub fn d11(&self, x: f64, y: f64) -> f64 {
        match self {
            WeightFn::F1 => {
                let x = clamp_rho(x);
                -std::f64::consts::SQRT_2 / (1.0 - x * x).powf(1.5)
            }
            WeightFn::F2 => {
                let r2 = x * x + y * y;
                if r2 == 0.0 {
                    0.0
                } else {
                    y * y / r2.powf(1.5)
                }
            }
            WeightFn::Custom(c) => {
                let h = fd_step(x).sqrt().max(1e-5);
                ((c.f)(x + h, y) - 2.0 * (c.f)(x, y) + (c.f)(x - h, y)) / (h * h)
            }
        }
    }

    /// Mixed partial derivative d^2 f / dx dy.
    pub fn d12(&self, x: f64, y: f64) -> f64 {
        match self {
            WeightFn::F1 => 0.0,
            WeightFn::F2 => {
                let r2 = x * x + y * y;
                if r2 == 0.0 {
                    0.0
                } else {
                    -x * y / r2.powf(1.5)
                }
            }
            WeightFn::Custom(c) => {
                let hx = fd_step(x).sqrt().max(1e-5);
                let hy = fd_step(y).sqrt().max(1e-5);
                ((c.f)(x + hx, y + hy) - (c.f)(x + hx, y - hy) - (c.f)(x - hx, y + hy)
                    + (c.f)(x - hx, y - hy))
                    / (4.0 * hx * hy)
            }
        }
    }
}

fn fd_step(x: f64) -> f64 {
    1e-6f64.max(1e-6 * x.abs())
}

/// Values of rho exactly at 1 make the f1 gradient singular; they are pulled
/// back by 1e-9 before any derivative is evaluated (distortion < 1e-4).
pub fn clamp_rho(x: f64) -> f64 {
    x.clamp(-(1.0 - 1e-9), 1.0 - 1e-9)
}

pub struct CustomWeight {
    pub name: String,
    pub f: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

/// Register a custom edge function. The probes assert symmetry,
/// nonnegativity, f(x,x) = 0, and smoothness of second differences on a grid
/// of interior points.
pub fn register_custom_weight<F>(name: &str, f: F) -> Result<WeightFn>
where
    F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
{
    let probes: Vec<f64> = (1..=9).map(|i| 0.1 * i as f64).collect();
    for &x in &probes {
        for &y in &probes {
            let v = f(x, y);
            if !v.is_finite() {
                return Err(Error::CustomWeightRejected(format!(
                    "f({x}, {y}) is not finite"
                )));
            }
            if v < 0.0 {
                return Err(Error::CustomWeightRejected(format!(
                    "f({x}, {y}) = {v} is negative"
                )));
            }
            if (v - f(y, x)).abs() > 1e-10 * (1.0 + v.abs()) {
                return Err(Error::CustomWeightRejected(format!(
                    "asymmetric at ({x}, {y}): {v} vs {}",
                    f(y, x)
                )));
            }
        }
        if f(x, x).abs() > 1e-8 {
            return Err(Error::CustomWeightRejected(format!(
                "f(x, x) = {} at x = {x}; the zero-on-diagonal contract requires f(x, x) = 0",
                f(x, x)
            )));
        }
    }
    // second-difference smoothness probe: halving the step must roughly
    // quarter the second-difference error of a C^2 function
    for &x in &[0.25, 0.5, 0.75] {
        for &y in &[0.3, 0.6] {
            let d2 = |h: f64| (f(x + h, y) - 2.0 * f(x, y) + f(x - h, y)) / (h * h);
            let coarse = d2(1e-3);
            let fine = d2(5e-4);
            if !(coarse.is_finite() && fine.is_finite())
                || (coarse - fine).abs() > 1e-2 * (1.0 + coarse.abs())
            {
                return Err(Error::CustomWeightRejected(format!(
                    "second derivative unstable near ({x}, {y}): {coarse} vs {fine}"
                )));
            }
        }
    }
    Ok(WeightFn::Custom(Arc::new(CustomWeight {
        name: name.to_string(),
        f: Box::new(f),
    })))
}

/// f1(x, y) = sqrt(2(1-x^2)) + sqrt(2(1-y^2)), defined on [0,1]^2.
pub fn f1(x: f64, y: f64) -> Result<f64> {
    for v in [x, y] {
        if !(-1e-12..=1.0 + 1e-12).contains(&v) {
            return Err(Error::Domain(format!("f1 input {v} outside [0, 1]")));
        }
    }
    Ok(f1_unchecked(x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)))
}

fn f1_unchecked(x: f64, y: f64) -> f64 {
    (2.0 * (1.0 - x * x)).max(0.0).sqrt() + (2.0 * (1.0 - y * y)).max(0.0).sqrt()
}

/// f2(x, y) = sqrt(x^2 + y^2).
pub fn f2(x: f64, y: f64) -> f64 {
    x.hypot(y)
}

/// The implicit weighted fully connected network over an active set.
#[derive(Debug, Clone)]
pub struct ImplicitNetwork {
    pub vertices: ActiveSet,
    /// Symmetric q x q nonnegative weights with zero diagonal.
    pub w: DMatrix<f64>,
    pub weight_family: WeightFamily,
    pub f_id: String,
}

impl ImplicitNetwork {
    pub fn q(&self) -> usize {
        self.w.nrows()
    }

    fn check_invariants(&self) -> Result<()> {
        let q = self.w.nrows();
        if self.w.ncols() != q || q != self.vertices.q_hat {
            return Err(Error::DimensionMismatch(format!(
                "weight matrix {}x{} over {} vertices",
                self.w.nrows(),
                self.w.ncols(),
                self.vertices.q_hat
            )));
        }
        for i in 0..q {
            if self.w[(i, i)] != 0.0 {
                return Err(Error::Domain("nonzero diagonal weight".into()));
            }
            for j in 0..q {
                let wij = self.w[(i, j)];
                if wij < 0.0 || !wij.is_finite() {
                    return Err(Error::Domain(format!("weight w[{i},{j}] = {wij}")));
                }
                if (wij - self.w[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Domain("asymmetric weight matrix".into()));
                }
            }
        }
        Ok(())
    }

    /// Edge list rows (i, j, weight) for i < j, using vertex names.
    pub fn edge_list(&self, names: &[String]) -> Vec<(String, String, f64)> {
        let mut edges = Vec::new();
        for i in 0..self.q() {
            for j in (i + 1)..self.q() {
                edges.push((
                    names[self.vertices.indices[i]].clone(),
                    names[self.vertices.indices[j]].clone(),
                    self.w[(i, j)],
                ));
            }
        }
        edges
    }

    /// Dense-matrix JSON block with the weight family and function recorded.
    pub fn to_json(&self, names: &[String]) -> serde_json::Value {
        let q = self.q();
        let rows: Vec<Vec<f64>> = (0..q)
            .map(|i| (0..q).map(|j| self.w[(i, j)]).collect())
            .collect();
        serde_json::json!({
            "vertices": self.vertices.indices.iter().map(|&j| names[j].clone()).collect::<Vec<_>>(),
            "weight_family": format!("{:?}", self.weight_family),
            "f_id": self.f_id,
            "w": rows,
        })
    }
}

/// Partial correlations of Y with each active predictor, controlling the
/// rest, together with the precision matrix they came from.
#[derive(Debug, Clone)]
pub struct PartialCorrelations {
    /// rho_{i|-i} in [-1, 1].
    pub rho_raw: DVector<f64>,
    /// transformed rho_i = (1 + rho_{i|-i}) / 2 in [0, 1].
    pub rho: DVector<f64>,
    /// precision matrix of (Y, X_S), (q+1) x (q+1).
    pub gamma: DMatrix<f64>,
    /// 1/n-scaled sample covariance of the centered (Y, X_S) rows.
    pub sigma: DMatrix<f64>,
    /// centered joint data rows, kept for fourth-moment estimation.
    pub centered: DMatrix<f64>,
}

/// Compute partial correlations from response and active-column predictor
/// rows. The joint sample covariance uses 1/n scaling on centered columns.
pub fn partial_correlations(y: &DVector<f64>, xs: &DMatrix<f64>) -> Result<PartialCorrelations> {
    let n = y.len();
    let q = xs.ncols();
    if xs.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "y has {n} rows, X_S has {}",
            xs.nrows()
        )));
    }
    if n < q + 2 {
        return Err(Error::TooFewRows(format!(
            "{n} rows cannot estimate a {}x{} joint covariance",
            q + 1,
            q + 1
        )));
    }
    let m = q + 1;
    let mut z = DMatrix::zeros(n, m);
    z.column_mut(0).copy_from(y);
    z.view_mut((0, 1), (n, q)).copy_from(xs);
    for j in 0..m {
        let mean = z.column(j).iter().sum::<f64>() / n as f64;
        for i in 0..n {
            z[(i, j)] -= mean;
        }
    }
    let sigma = z.transpose() * &z / n as f64;

    let svd = sigma.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-12 * smax {
        return Err(Error::SingularCovariance {
            condition: if smin > 0.0 { smax / smin } else { f64::INFINITY },
        });
    }
    let gamma = sigma
        .clone()
        .try_inverse()
        .ok_or(Error::SingularCovariance {
            condition: smax / smin,
        })?;

    let rho_raw = DVector::from_fn(q, |i, _| {
        -gamma[(0, i + 1)] / (gamma[(0, 0)] * gamma[(i + 1, i + 1)]).sqrt()
    });
    let rho = rho_raw.map(|r| (1.0 + r) / 2.0);
    Ok(PartialCorrelations {
        rho_raw,
        rho,
        gamma,
        sigma,
        centered: z,
    })
}

/// Build the network W_ij = f(values_i, values_j) with zero diagonal.
pub fn build_network(
    values: &[f64],
    f: &WeightFn,
    family: WeightFamily,
    vertices: ActiveSet,
) -> Result<ImplicitNetwork> {
    let q = values.len();
    if q < 2 {
        return Err(Error::InvalidConfig(format!(
            "network needs at least 2 vertices, got {q}"
        )));
    }
    if q != vertices.q_hat {
        return Err(Error::DimensionMismatch(format!(
            "{q} values over {} vertices",
            vertices.q_hat
        )));
    }
    if matches!(f, WeightFn::F1) {
        for &v in values {
            if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                return Err(Error::Domain(format!("f1 value {v} outside [0, 1]")));
            }
        }
    }
    let mut w = DMatrix::zeros(q, q);
    for i in 0..q {
        for j in (i + 1)..q {
            let wij = f.eval(values[i], values[j]);
            if !wij.is_finite() || wij < 0.0 {
                return Err(Error::Domain(format!(
                    "f({}, {}) = {wij}",
                    values[i], values[j]
                )));
            }
            w[(i, j)] = wij;
            w[(j, i)] = wij;
        }
    }
    let net = ImplicitNetwork {
        vertices,
        w,
        weight_family: family,
        f_id: f.id().to_string(),
    };
    net.check_invariants()?;
    Ok(net)
}

/// Which per-vertex quantity the edge function is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueSource {
    /// post-selection OLS coefficients
    Beta,
    /// transformed partial correlations (1 + rho_raw) / 2 in [0, 1]
    RhoTransformed,
    /// raw partial correlations rho_{i|-i} in [-1, 1]
    RhoRaw,
}

/// Full recipe for building (and re-building, under resampling) a network
/// from inference-half rows.
#[derive(Debug, Clone)]
pub struct NetworkRecipe {
    pub f: WeightFn,
    pub source: ValueSource,
}

impl NetworkRecipe {
    pub fn family(&self) -> WeightFamily {
        match self.source {
            ValueSource::Beta => WeightFamily::FOnBeta,
            _ => WeightFamily::FOnRho,
        }
    }

    /// Compute the per-vertex values from response and active-column rows.
    pub fn values(&self, y: &DVector<f64>, xs: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self.source {
            ValueSource::Beta => {
                let n = xs.nrows();
                let q = xs.ncols();
                if n <= q {
                    return Err(Error::TooFewRows(format!(
                        "{n} rows for {q} coefficients"
                    )));
                }
                let xtx = xs.transpose() * xs;
                let beta = xtx
                    .try_inverse()
                    .ok_or(Error::RankDeficient { min_singular: 0.0 })?
                    * xs.transpose()
                    * y;
                Ok(beta.iter().copied().collect())
            }
            ValueSource::RhoTransformed => {
                let pc = partial_correlations(y, xs)?;
                Ok(pc.rho.iter().copied().collect())
            }
            ValueSource::RhoRaw => {
                let pc = partial_correlations(y, xs)?;
                Ok(pc.rho_raw.iter().copied().collect())
            }
        }
    }
}

/// Categorical factor matrix: n rows, p factors, each cell a 0-based level.
#[derive(Debug, Clone)]
pub struct FactorMatrix {
    pub levels: Vec<Vec<usize>>,
    pub n_levels: Vec<usize>,
    pub names: Vec<String>,
}

impl FactorMatrix {
    pub fn new(columns: Vec<Vec<usize>>, names: Vec<String>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidConfig("no factors".into()));
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch("ragged factor columns".into()));
        }
        let n_levels: Vec<usize> = columns
            .iter()
            .map(|c| c.iter().max().map(|&m| m + 1).unwrap_or(0))
            .collect();
        if n_levels.iter().any(|&l| l < 2) {
            return Err(Error::InvalidConfig(
                "every factor needs at least 2 levels".into(),
            ));
        }
        Ok(Self {
            levels: columns,
            n_levels,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.levels[0].len()
    }

    pub fn p(&self) -> usize {
        self.levels.len()
    }
}

/// Pairwise interaction-sum-of-squares weights W_ij = SS_ij / TSS for a
/// balanced two-way layout of every factor pair.
pub fn anova_weights(y: &[f64], factors: &FactorMatrix) -> Result<ImplicitNetwork> {
    let n = factors.n();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} responses for {} factor rows",
            y.len(),
            n
        )));
    }
    let p = factors.p();
    if p < 2 {
        return Err(Error::InvalidConfig("need at least two factors".into()));
    }
    let grand = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - grand) * (v - grand)).sum();
    if tss <= 0.0 {
        return Err(Error::ZeroTss);
    }

    let mut w = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let ri = factors.n_levels[i];
            let rj = factors.n_levels[j];
            let mut cell_sum = vec![0.0; ri * rj];
            let mut cell_count = vec![0usize; ri * rj];
            let mut row_sum = vec![0.0; ri];
            let mut row_count = vec![0usize; ri];
            let mut col_sum = vec![0.0; rj];
            let mut col_count = vec![0usize; rj];
            for l in 0..n {
                let a = factors.levels[i][l];
                let b = factors.levels[j][l];
                cell_sum[a * rj + b] += y[l];
                cell_count[a * rj + b] += 1;
                row_sum[a] += y[l];
                row_count[a] += 1;
                col_sum[b] += y[l];
                col_count[b] += 1;
            }
            let replicates = cell_count[0];
            if replicates == 0 || cell_count.iter().any(|&c| c != replicates) {
                return Err(Error::UnbalancedDesign {
                    i: i + 1,
                    j: j + 1,
                    counts: cell_count,
                });
            }
            let mut ss = 0.0;
            for a in 0..ri {
                for b in 0..rj {
                    let cell_mean = cell_sum[a * rj + b] / replicates as f64;
                    let dev = cell_mean - row_sum[a] / row_count[a] as f64
                        - col_sum[b] / col_count[b] as f64
                        + grand;
                    ss += dev * dev;
                }
            }
            ss *= replicates as f64;
            let wij = (ss / tss).clamp(0.0, 1.0);
            w[(i, j)] = wij;
            w[(j, i)] = wij;
        }
    }
    let vertices = ActiveSet::new((0..p).collect(), None)?;
    let net = ImplicitNetwork {
        vertices,
        w,
        weight_family: WeightFamily::AnovaSs,
        f_id: "anova_ss".to_string(),
    };
    net.check_invariants()?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn f1_boundary_and_interior_values() {
        assert_abs_diff_eq!(f1(1.0, 1.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            f1(0.0, 0.0).unwrap(),
            2.0 * std::f64::consts::SQRT_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(f1(0.5, 0.5).unwrap(), 2.0 * 1.5f64.sqrt(), epsilon = 1e-12);
        assert!(f1(1.2, 0.0).is_err());
        assert!(f1(-0.2, 0.0).is_err());
    }

    #[test]
    fn f2_values_and_symmetry() {
        assert_abs_diff_eq!(f2(0.0, 0.0), 0.0);
        assert_abs_diff_eq!(f2(3.0, 4.0), 5.0, epsilon = 1e-12);
        for i in 0..20 {
            let x = -1.0 + 0.1 * i as f64;
            let y = 0.37 * i as f64 - 0.9;
            assert_abs_diff_eq!(f2(x, y), f2(y, x), epsilon = 1e-15);
        }
    }

    #[test]
    fn corrected_f1_f2_identity() {
        // f1^2 = 4 - 2 f2^2 + 4 sqrt(1 - f2^2 - (f2^2(x^2,y^2) - f2^4(x,y)) / 2)
        let mut x = 0.0;
        while x <= 1.0 {
            let mut y = 0.0;
            while y <= 1.0 {
                let lhs = f1(x, y).unwrap().powi(2);
                let f2sq = f2(x, y).powi(2);
                let inner = 1.0 - f2sq - (f2(x * x, y * y).powi(2) - f2sq * f2sq) / 2.0;
                let rhs = 4.0 - 2.0 * f2sq + 4.0 * inner.max(0.0).sqrt();
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
                y += 0.05;
            }
            x += 0.05;
        }
    }

    #[test]
    fn partial_correlations_match_analytic_three_by_three_oracle() {
        // population Sigma for Y = X1 + X2 + eps with unit variances:
        // Sigma = [[3,1,1],[1,1,0],[1,0,1]], Gamma = [[1,-1,-1],[-1,2,1],[-1,1,2]]
        // computed by hand-inverting the 3x3 before this module was written
        let sigma: DMatrix<f64> =
            DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let gamma = sigma.clone().try_inverse().unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, -1.0, -1.0, 2.0, 1.0, -1.0, 1.0, 2.0]);
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(gamma[(i, j)], expect[(i, j)], epsilon = 1e-12);
            }
        }
        let rho1 = -gamma[(0, 1)] / (gamma[(0, 0)] * gamma[(1, 1)]).sqrt();
        assert_abs_diff_eq!(rho1, 1.0 / 2.0f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!((1.0 + rho1) / 2.0, 0.8535533905932737, epsilon = 1e-12);
    }

    #[test]
    fn single_predictor_partial_equals_plain_correlation() {
        let mut rng = crate::rng::RngStream::new(21, 0).rng();
        use rand_distr::{Distribution, StandardNormal};
        let n = 500;
        let x = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            0.8 * x[(i, 0)] + 0.5 * e
        });
        let pc = partial_correlations(&y, &x).unwrap();
        let ys: Vec<f64> = y.iter().copied().collect();
        let xs_: Vec<f64> = x.column(0).iter().copied().collect();
        let plain = crate::stats::correlation(&ys, &xs_);
        assert_abs_diff_eq!(pc.rho_raw[0], plain, epsilon = 1e-10);
    }

    #[test]
    fn singular_covariance_is_reported() {
        let n = 30;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { i as f64 } else { 3.0 * i as f64 });
        let y = DVector::from_fn(n, |i, _| i as f64);
        let err = partial_correlations(&y, &x).unwrap_err();
        assert!(matches!(err, Error::SingularCovariance { .. }));
    }

    #[test]
    fn build_network_uniform_values_under_f2() {
        let active = ActiveSet::new(vec![0, 1, 2], None).unwrap();
        let net = build_network(&[1.0, 1.0, 1.0], &WeightFn::F2, WeightFamily::FOnBeta, active)
            .unwrap();
        for i in 0..3 {
            assert_eq!(net.w[(i, i)], 0.0);
            for j in 0..3 {
                if i != j {
                    assert_abs_diff_eq!(net.w[(i, j)], std::f64::consts::SQRT_2, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn build_network_f1_at_rho_one_is_zero_matrix() {
        let active = ActiveSet::new(vec![0, 1, 2, 3], None).unwrap();
        let net = build_network(
            &[1.0, 1.0, 1.0, 1.0],
            &WeightFn::F1,
            WeightFamily::FOnRho,
            active,
        )
        .unwrap();
        assert!(net.w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn custom_weight_symmetry_violation_rejected() {
        let err = register_custom_weight("lopsided", |x, y| (x - y).max(0.0)).unwrap_err();
        assert!(matches!(err, Error::CustomWeightRejected(_)));
    }

    #[test]
    fn custom_weight_accepts_squared_distance() {
        let f = register_custom_weight("sqdist", |x, y| (x - y) * (x - y)).unwrap();
        assert_abs_diff_eq!(f.eval(0.2, 0.7), 0.25, epsilon = 1e-12);
        // derivatives against closed forms
        assert_abs_diff_eq!(f.d1(0.2, 0.7), 2.0 * (0.2 - 0.7), epsilon = 1e-5);
        assert_abs_diff_eq!(f.d11(0.2, 0.7), 2.0, epsilon = 1e-3);
        assert_abs_diff_eq!(f.d12(0.2, 0.7), -2.0, epsilon = 1e-3);
    }

    #[test]
    fn anova_zero_interaction_for_additive_response() {
        // 2x2 balanced, y = a + b (purely additive)
        let a = vec![0, 0, 1, 1];
        let b = vec![0, 1, 0, 1];
        let y = vec![0.0, 1.0, 2.0, 3.0];
        let f = FactorMatrix::new(vec![a, b], vec!["A".into(), "B".into()]).unwrap();
        let net = anova_weights(&y, &f).unwrap();
        assert_abs_diff_eq!(net.w[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn anova_pure_interaction_weight_is_one() {
        // hand ANOVA decomposition: cell means (+1,-1,-1,+1), no main effects,
        // one replicate per cell gives SS_12 = TSS = 4
        let a = vec![0, 0, 1, 1];
        let b = vec![0, 1, 0, 1];
        let y = vec![1.0, -1.0, -1.0, 1.0];
        let f = FactorMatrix::new(vec![a, b], vec!["A".into(), "B".into()]).unwrap();
        let net = anova_weights(&y, &f).unwrap();
        assert_abs_diff_eq!(net.w[(0, 1)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn anova_constant_response_errors() {
        let a = vec![0, 0, 1, 1];
        let b = vec![0, 1, 0, 1];
        let y = vec![2.0, 2.0, 2.0, 2.0];
        let f = FactorMatrix::new(vec![a, b], vec!["A".into(), "B".into()]).unwrap();
        assert!(matches!(anova_weights(&y, &f).unwrap_err(), Error::ZeroTss));
    }

    #[test]
    fn anova_unbalanced_design_reports_cells() {
        let a = vec![0, 0, 1, 1, 1];
        let b = vec![0, 1, 0, 1, 1];
        let y = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let f = FactorMatrix::new(vec![a, b], vec!["A".into(), "B".into()]).unwrap();
        let err = anova_weights(&y, &f).unwrap_err();
        assert!(matches!(err, Error::UnbalancedDesign { i: 1, j: 2, .. }));
    }

    #[test]
    fn anova_weights_stay_in_unit_interval() {
        let mut rng = crate::rng::RngStream::new(33, 0).rng();
        use rand::Rng;
        // 3x2x2 balanced full factorial with 2 replicates
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut c = Vec::new();
        let mut y = Vec::new();
        for ai in 0..3usize {
            for bi in 0..2usize {
                for ci in 0..2usize {
                    for _ in 0..2 {
                        a.push(ai);
                        b.push(bi);
                        c.push(ci);
                        y.push(
                            ai as f64 - bi as f64 * ci as f64
                                + rng.random_range(-0.5..0.5),
                        );
                    }
                }
            }
        }
        let f = FactorMatrix::new(vec![a, b, c], vec!["A".into(), "B".into(), "C".into()])
            .unwrap();
        let net = anova_weights(&y, &f).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(net.w[(i, j)] >= 0.0 && net.w[(i, j)] <= 1.0);
            }
        }
    }
}
