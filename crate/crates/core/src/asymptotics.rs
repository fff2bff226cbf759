//! Closed-form limiting covariance machinery: elimination matrix, vec and
//! half-vec operators, gradient matrices of the degree and clustering maps,
//! the partial-correlation gradient, the fourth-moment matrix, and the
//! plug-in covariance sandwiches.
//!
//! Convention: every covariance returned here is for sqrt(n/2) * (estimate -
//! truth), the scale the limit theorems are stated in. Gradient matrices are
//! true Jacobians (row = output component, column = input component); the
//! sandwiches are J * Sigma * J', which is what the Monte Carlo and
//! finite-difference oracles verify.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::{
    penalty_derivative, penalty_second_derivative, PenaltyConfig, PostSelectionFit,
};
use crate::weights::{clamp_rho, PartialCorrelations, WeightFn};

/// Refuse plug-in fourth-moment assembly above this active-set size unless
/// the caller raises the limit; the bootstrap estimator is the intended path
/// for larger networks.
pub const DEFAULT_PLUGIN_Q_LIMIT: usize = 25;

/// Binary operator mapping vec of a symmetric m x m matrix to its
/// column-stacked lower triangle.
#[derive(Debug, Clone)]
pub struct EliminationMatrix {
    pub k: DMatrix<f64>,
    pub m: usize,
}

/// 0-based position of entry (i, j), i >= j, in the column-stacked lower
/// triangle of an m x m matrix.
pub fn vech_pos(i: usize, j: usize, m: usize) -> usize {
    debug_assert!(i >= j && i < m);
    j * m + i - j * (j + 1) / 2
}

/// Column-stacked vectorization.
pub fn vec_of(msrc: &DMatrix<f64>) -> DVector<f64> {
    let (r, c) = msrc.shape();
    DVector::from_iterator(r * c, msrc.iter().copied())
}

/// Half-vectorization (lower triangle, column-stacked).
pub fn vech_of(msrc: &DMatrix<f64>) -> DVector<f64> {
    let m = msrc.nrows();
    let mut out = DVector::zeros(m * (m + 1) / 2);
    for j in 0..m {
        for i in j..m {
            out[vech_pos(i, j, m)] = msrc[(i, j)];
        }
    }
    out
}

/// Rebuild a symmetric m x m matrix from its half-vectorization.
pub fn sym_from_vech(v: &DVector<f64>, m: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m, m);
    for j in 0..m {
        for i in j..m {
            let x = v[vech_pos(i, j, m)];
            out[(i, j)] = x;
            out[(j, i)] = x;
        }
    }
    out
}

/// The elimination matrix K with v(M) = K vec(M).
pub fn elimination_matrix(m: usize) -> EliminationMatrix {
    let rows = m * (m + 1) / 2;
    let mut k = DMatrix::zeros(rows, m * m);
    for j in 0..m {
        for i in j..m {
            k[(vech_pos(i, j, m), j * m + i)] = 1.0;
        }
    }
    EliminationMatrix { k, m }
}

/// Kronecker product A (x) B.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for p in 0..br {
                for q in 0..bc {
                    out[(i * br + p, j * bc + q)] = aij * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Jacobian of the degree-centrality map: entry (j, k) is dD_j / dv_k.
///
/// Values at the f1 boundary |v| = 1 are pulled back by 1e-9 first.
pub fn grad_l_d(values: &[f64], f: &WeightFn) -> Result<DMatrix<f64>> {
    let q = values.len();
    if q < 2 {
        return Err(Error::InvalidConfig("gradient needs q >= 2".into()));
    }
    let v: Vec<f64> = clamp_values(values, f);
    let mut l = DMatrix::zeros(q, q);
    for j in 0..q {
        let mut diag = 0.0;
        for r in 0..q {
            if r == j {
                continue;
            }
            diag += f.d1(v[j], v[r]);
            // dD_j / dv_r for r != j: the (j, r) pair is the only term
            l[(j, r)] = f.d1(v[r], v[j]);
        }
        l[(j, j)] = diag;
    }
    Ok(l)
}

/// Jacobian of the clustering-coefficient map: entry (j, k) is dC_j / dv_k.
/// Zero diagonal; for a symmetric edge function each unordered pair
/// contributes through both of its ordered copies.
pub fn grad_l_c(values: &[f64], f: &WeightFn) -> Result<DMatrix<f64>> {
    let q = values.len();
    if q < 3 {
        return Err(Error::InvalidConfig(
            "clustering gradient needs q >= 3".into(),
        ));
    }
    let v = clamp_values(values, f);
    let denom = ((q - 1) * (q - 2)) as f64;
    let mut l = DMatrix::zeros(q, q);
    for j in 0..q {
        for k in 0..q {
            if k == j {
                continue;
            }
            let mut s = 0.0;
            for u in 0..q {
                if u == j || u == k {
                    continue;
                }
                s += f.d1(v[k], v[u]);
            }
            l[(j, k)] = 2.0 * s / denom;
        }
    }
    Ok(l)
}

/// Hessian tensor of the degree map: slice i is the symmetric matrix of
/// second partials of D_i.
pub fn hessian_d(values: &[f64], f: &WeightFn) -> Result<Vec<DMatrix<f64>>> {
    let q = values.len();
    if q < 2 {
        return Err(Error::InvalidConfig("hessian needs q >= 2".into()));
    }
    let v = clamp_values(values, f);
    let mut out = Vec::with_capacity(q);
    for i in 0..q {
        let mut h = DMatrix::zeros(q, q);
        let mut dii = 0.0;
        for r in 0..q {
            if r == i {
                continue;
            }
            dii += f.d11(v[i], v[r]);
            h[(i, r)] = f.d12(v[i], v[r]);
            h[(r, i)] = h[(i, r)];
            h[(r, r)] = f.d11(v[r], v[i]);
        }
        h[(i, i)] = dii;
        out.push(h);
    }
    Ok(out)
}

/// Hessian tensor of the clustering map.
pub fn hessian_c(values: &[f64], f: &WeightFn) -> Result<Vec<DMatrix<f64>>> {
    let q = values.len();
    if q < 3 {
        return Err(Error::InvalidConfig("hessian needs q >= 3".into()));
    }
    let v = clamp_values(values, f);
    let denom = ((q - 1) * (q - 2)) as f64;
    let mut out = Vec::with_capacity(q);
    for i in 0..q {
        let mut h = DMatrix::zeros(q, q);
        for j in 0..q {
            if j == i {
                continue;
            }
            let mut djj = 0.0;
            for u in 0..q {
                if u == i || u == j {
                    continue;
                }
                djj += f.d11(v[j], v[u]);
                if u > j {
                    let mixed = 2.0 * f.d12(v[j], v[u]) / denom;
                    h[(j, u)] = mixed;
                    h[(u, j)] = mixed;
                }
            }
            h[(j, j)] = 2.0 * djj / denom;
        }
        out.push(h);
    }
    Ok(out)
}

fn clamp_values(values: &[f64], f: &WeightFn) -> Vec<f64> {
    match f {
        WeightFn::F1 => values.iter().map(|&x| clamp_rho(x)).collect(),
        _ => values.to_vec(),
    }
}

/// Jacobian of the map v(Gamma) -> transformed partial correlations.
///
/// rho_raw_i = -gamma_{1,i+1} / sqrt(gamma_11 gamma_{i+1,i+1}) and
/// rho_i = (1 + rho_raw_i) / 2; the transform contributes the factor 1/2.
/// Row i has exactly three nonzero entries, at the half-vec positions of
/// gamma_11, gamma_{i+1,1}, and gamma_{i+1,i+1}.
pub fn grad_h(gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = gamma.nrows();
    if gamma.ncols() != m || m < 2 {
        return Err(Error::DimensionMismatch(format!(
            "precision matrix {}x{}",
            gamma.nrows(),
            gamma.ncols()
        )));
    }
    if nalgebra::Cholesky::new(gamma.clone()).is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    let q = m - 1;
    let t = m * (m + 1) / 2;
    let a = gamma[(0, 0)];
    let mut out = DMatrix::zeros(q, t);
    for i in 0..q {
        let g = gamma[(i + 1, 0)];
        let d = gamma[(i + 1, i + 1)];
        out[(i, vech_pos(0, 0, m))] = g / (4.0 * a.powf(1.5) * d.sqrt());
        out[(i, vech_pos(i + 1, 0, m))] = -1.0 / (2.0 * (a * d).sqrt());
        out[(i, vech_pos(i + 1, i + 1, m))] = g / (4.0 * a.sqrt() * d.powf(1.5));
    }
    Ok(out)
}

/// Empirical fourth-moment matrix
/// Delta = (1/n) sum_i vec(z_i z_i') vec(z_i z_i')' - vec(Sigma) vec(Sigma)'
/// over the rows as given (callers pass centered rows).
pub fn delta_s(rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = rows.nrows();
    let m = rows.ncols();
    if n < 2 {
        return Err(Error::TooFewRows("delta_s needs at least 2 rows".into()));
    }
    let mm = m * m;
    let mut acc = DMatrix::zeros(mm, mm);
    let mut mean_vec = DVector::zeros(mm);
    let mut zz = DVector::zeros(mm);
    for r in 0..n {
        for j in 0..m {
            let zj = rows[(r, j)];
            for i in 0..m {
                zz[j * m + i] = zj * rows[(r, i)];
            }
        }
        acc.ger(1.0 / n as f64, &zz, &zz, 1.0);
        mean_vec.axpy(1.0 / n as f64, &zz, 1.0);
    }
    acc.ger(-1.0, &mean_vec, &mean_vec, 1.0);
    // symmetrize away accumulation noise
    let sym = (&acc + acc.transpose()) * 0.5;
    Ok(sym)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceTarget {
    Beta,
    Rho,
    Degree,
    Clustering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceMethod {
    Plugin,
    Bootstrap,
    MonteCarloOracle,
}

pub const SCALE_NOTE: &str = "covariance of sqrt(n/2) * (estimate - truth)";

/// A symmetric PSD covariance estimate in the sqrt(n/2) scale convention.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub target: CovarianceTarget,
    pub sigma: DMatrix<f64>,
    pub method: CovarianceMethod,
    /// human-readable note on the scale convention
    pub scale: &'static str,
}

impl CovarianceEstimate {
    pub fn new(
        target: CovarianceTarget,
        sigma: DMatrix<f64>,
        method: CovarianceMethod,
    ) -> Result<Self> {
        let q = sigma.nrows();
        if sigma.ncols() != q {
            return Err(Error::DimensionMismatch("covariance not square".into()));
        }
        for i in 0..q {
            for j in 0..q {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-8 * (1.0 + sigma[(i, i)].abs()) {
                    return Err(Error::DimensionMismatch("covariance not symmetric".into()));
                }
            }
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        let max_eig = eig.eigenvalues.max().max(1.0);
        if min_eig < -1e-8 * max_eig {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            target,
            sigma: sym,
            method,
            scale: SCALE_NOTE,
        })
    }

    pub fn q(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let q = self.q();
        let rows: Vec<Vec<f64>> = (0..q)
            .map(|i| (0..q).map(|j| self.sigma[(i, j)]).collect())
            .collect();
        serde_json::json!({
            "target": format!("{:?}", self.target),
            "method": format!("{:?}", self.method),
            "scale": self.scale,
            "sigma": rows,
        })
    }
}

/// Plug-in covariance of the transformed partial correlations:
/// grad_h . K . L . Delta . L . K' . grad_h' with L = -Gamma (x) Gamma,
/// evaluated at the sample estimates.
pub fn cov_rho(
    pc: &PartialCorrelations,
    delta: &DMatrix<f64>,
    elim: &EliminationMatrix,
    q_limit: Option<usize>,
) -> Result<CovarianceEstimate> {
    let m = pc.gamma.nrows();
    let q = m - 1;
    let limit = q_limit.unwrap_or(DEFAULT_PLUGIN_Q_LIMIT);
    if q > limit {
        return Err(Error::PluginDimension { q, limit });
    }
    if elim.m != m {
        return Err(Error::DimensionMismatch(format!(
            "elimination matrix for m = {}, precision is {}x{}",
            elim.m, m, m
        )));
    }
    if delta.nrows() != m * m || delta.ncols() != m * m {
        return Err(Error::DimensionMismatch(format!(
            "delta is {}x{}, expected {}x{}",
            delta.nrows(),
            delta.ncols(),
            m * m,
            m * m
        )));
    }
    let gh = grad_h(&pc.gamma)?;
    let l = -kron(&pc.gamma, &pc.gamma);
    // order the products smallest-first: (q x t)(t x m^2) then (q x m^2)(m^2 x m^2)
    let a = &gh * &elim.k;
    let b = &a * &l;
    let sigma = &b * delta * b.transpose();
    CovarianceEstimate::new(CovarianceTarget::Rho, sigma, CovarianceMethod::Plugin)
}

/// Plug-in covariance of an NWM vector on a beta-weighted network:
/// sigma2 * J V-hat^-1 J' with V-hat^-1 estimated by n_rows * xtx_inv.
pub fn cov_nwm_beta(
    fit: &PostSelectionFit,
    l: &DMatrix<f64>,
    target: CovarianceTarget,
) -> Result<CovarianceEstimate> {
    let q = fit.beta_hat.len();
    if l.nrows() != q || l.ncols() != q {
        return Err(Error::DimensionMismatch(format!(
            "gradient is {}x{}, fit has q = {}",
            l.nrows(),
            l.ncols(),
            q
        )));
    }
    let v_inv = fit.xtx_inv.clone() * fit.n_rows as f64;
    let sigma = l * v_inv * l.transpose() * fit.sigma2_hat;
    CovarianceEstimate::new(target, sigma, CovarianceMethod::Plugin)
}

/// Plug-in covariance of an NWM vector on a rho-weighted network:
/// J Delta(rho) J' around the partial-correlation sandwich.
pub fn cov_nwm_rho(
    cov_values: &CovarianceEstimate,
    l: &DMatrix<f64>,
    target: CovarianceTarget,
) -> Result<CovarianceEstimate> {
    if cov_values.target != CovarianceTarget::Rho {
        return Err(Error::InvalidConfig(
            "cov_nwm_rho needs a rho-target covariance".into(),
        ));
    }
    let q = cov_values.q();
    if l.nrows() != q || l.ncols() != q {
        return Err(Error::DimensionMismatch(format!(
            "gradient is {}x{}, rho covariance has q = {}",
            l.nrows(),
            l.ncols(),
            q
        )));
    }
    let sigma = l * &cov_values.sigma * l.transpose();
    CovarianceEstimate::new(target, sigma, CovarianceMethod::Plugin)
}

/// Regularization bias diagnostics for single-sample (non-split) estimation:
/// the bias vector B = -[c'(L + H'c)]' and the sandwich covariance
/// sigma2 M Sigma_beta M' with M = L + H'c and
/// Sigma_beta = (V + Sigma_p)^-1 V (V + Sigma_p)^-1.
///
/// Evaluated at the observed beta-hat (the mean-value point is unobservable),
/// so the output is approximate and reported as a diagnostic only.
pub fn prop12_bias_diagnostics(
    beta_hat: &[f64],
    cfg: &PenaltyConfig,
    lambda: f64,
    l: &DMatrix<f64>,
    hessians: &[DMatrix<f64>],
    v_s: &DMatrix<f64>,
    sigma2: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = beta_hat.len();
    if l.nrows() != q || hessians.len() != q || v_s.nrows() != q {
        return Err(Error::DimensionMismatch(
            "bias diagnostics dimensions disagree".into(),
        ));
    }
    let mut b = DVector::zeros(q);
    let mut sig_p = DMatrix::zeros(q, q);
    for j in 0..q {
        let theta = beta_hat[j].abs();
        b[j] = penalty_derivative(cfg.family, theta, lambda, cfg.a)? * beta_hat[j].signum();
        sig_p[(j, j)] = penalty_second_derivative(cfg.family, theta, lambda, cfg.a, j)?;
    }
    let v_plus = v_s + &sig_p;
    let v_plus_inv = v_plus
        .clone()
        .try_inverse()
        .ok_or(Error::RankDeficient { min_singular: 0.0 })?;
    let c = &v_plus_inv * b;

    // contract the Hessian tensor along the metric index: (H'c)_{jk} = sum_i c_i H_i[j,k]
    let mut hc = DMatrix::zeros(q, q);
    for (i, h) in hessians.iter().enumerate() {
        hc += h * c[i];
    }
    let m_mat = l + &hc;
    let bias = -(m_mat.transpose() * &c);
    let sigma_beta = &v_plus_inv * v_s * &v_plus_inv;
    let cov = &m_mat * sigma_beta * m_mat.transpose() * sigma2;
    Ok((bias, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn elimination_unrolls_two_by_two() {
        let elim = elimination_matrix(2);
        assert_eq!(elim.k.shape(), (3, 4));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let v = &elim.k * vec_of(&m);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 4.0]);
    }

    #[test]
    fn elimination_shape_for_m_three() {
        assert_eq!(elimination_matrix(3).k.shape(), (6, 9));
    }

    #[test]
    fn elimination_of_identity_has_m_ones() {
        let m = 5;
        let elim = elimination_matrix(m);
        let v = &elim.k * vec_of(&DMatrix::identity(m, m));
        assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), m);
        assert_eq!(v.iter().filter(|&&x| x == 0.0).count(), v.len() - m);
    }

    #[test]
    fn vech_equals_k_vec_for_random_symmetric() {
        let mut rng = RngStream::new(4, 0).rng();
        for m in 2..7 {
            let elim = elimination_matrix(m);
            let mut a = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..=i {
                    let x: f64 = rng.random_range(-2.0..2.0);
                    a[(i, j)] = x;
                    a[(j, i)] = x;
                }
            }
            let lhs = vech_of(&a);
            let rhs = &elim.k * vec_of(&a);
            for i in 0..lhs.len() {
                assert_eq!(lhs[i], rhs[i]);
            }
            let back = sym_from_vech(&lhs, m);
            assert_eq!(back, a);
        }
    }

    #[test]
    fn grad_l_d_f1_closed_forms() {
        // off-diagonal column k is -sqrt(2) rho_k / sqrt(1 - rho_k^2)
        let rho = [0.0, 1.0 / 2.0f64.sqrt(), 0.3];
        let l = grad_l_d(&rho, &WeightFn::F1).unwrap();
        assert_abs_diff_eq!(l[(1, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[(2, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[(0, 1)], -std::f64::consts::SQRT_2, epsilon = 1e-9);
        assert_abs_diff_eq!(l[(2, 1)], -std::f64::consts::SQRT_2, epsilon = 1e-9);
        // diagonal is (q-1) * (-sqrt2 rho_j / sqrt(1-rho_j^2))
        assert_abs_diff_eq!(l[(1, 1)], -2.0 * std::f64::consts::SQRT_2, epsilon = 1e-8);
        assert_abs_diff_eq!(l[(0, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn grad_l_c_is_zero_diagonal_and_zero_at_rho_zero() {
        let rho = [0.0, 0.0, 0.0, 0.0];
        let l = grad_l_c(&rho, &WeightFn::F1).unwrap();
        assert!(l.iter().all(|&x| x.abs() < 1e-12));
        let rho = [0.2, 0.5, 0.7, 0.9];
        let l = grad_l_c(&rho, &WeightFn::F1).unwrap();
        for j in 0..4 {
            assert_eq!(l[(j, j)], 0.0);
        }
    }

    fn degree_map(values: &[f64], f: &WeightFn) -> Vec<f64> {
        let q = values.len();
        (0..q)
            .map(|i| {
                (0..q)
                    .filter(|&j| j != i)
                    .map(|j| f.eval(values[i], values[j]))
                    .sum()
            })
            .collect()
    }

    fn clustering_map(values: &[f64], f: &WeightFn) -> Vec<f64> {
        let q = values.len();
        let denom = ((q - 1) * (q - 2)) as f64;
        (0..q)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..q {
                    for k in 0..q {
                        if j != k && j != i && k != i {
                            s += f.eval(values[j], values[k]);
                        }
                    }
                }
                s / denom
            })
            .collect()
    }

    fn fd_jacobian(values: &[f64], map: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
        let q = values.len();
        let out_dim = map(values).len();
        let mut j = DMatrix::zeros(out_dim, q);
        for k in 0..q {
            let h = 1e-6f64.max(1e-6 * values[k].abs());
            let mut plus = values.to_vec();
            let mut minus = values.to_vec();
            plus[k] += h;
            minus[k] -= h;
            let fp = map(&plus);
            let fm = map(&minus);
            for i in 0..out_dim {
                j[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        j
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(6, 0).rng();
        for f in [WeightFn::F1, WeightFn::F2] {
            for _ in 0..20 {
                let q = rng.random_range(3..7);
                let values: Vec<f64> = (0..q).map(|_| rng.random_range(0.05..0.95)).collect();
                let ld = grad_l_d(&values, &f).unwrap();
                let lc = grad_l_c(&values, &f).unwrap();
                let fd_d = fd_jacobian(&values, |v| degree_map(v, &f));
                let fd_c = fd_jacobian(&values, |v| clustering_map(v, &f));
                for i in 0..q {
                    for j in 0..q {
                        let scale_d = 1.0 + fd_d[(i, j)].abs();
                        assert!(
                            (ld[(i, j)] - fd_d[(i, j)]).abs() / scale_d < 1e-6,
                            "L_D mismatch at ({i},{j}): {} vs {}",
                            ld[(i, j)],
                            fd_d[(i, j)]
                        );
                        let scale_c = 1.0 + fd_c[(i, j)].abs();
                        assert!(
                            (lc[(i, j)] - fd_c[(i, j)]).abs() / scale_c < 1e-6,
                            "L_C mismatch at ({i},{j}): {} vs {}",
                            lc[(i, j)],
                            fd_c[(i, j)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hessians_match_finite_differences_of_gradients() {
        let mut rng = RngStream::new(7, 0).rng();
        for f in [WeightFn::F1, WeightFn::F2] {
            let q = 4;
            let values: Vec<f64> = (0..q).map(|_| rng.random_range(0.1..0.9)).collect();
            let hd = hessian_d(&values, &f).unwrap();
            let hc = hessian_c(&values, &f).unwrap();
            for k in 0..q {
                let h = 1e-6;
                let mut plus = values.clone();
                let mut minus = values.clone();
                plus[k] += h;
                minus[k] -= h;
                let ld_p = grad_l_d(&plus, &f).unwrap();
                let ld_m = grad_l_d(&minus, &f).unwrap();
                let lc_p = grad_l_c(&plus, &f).unwrap();
                let lc_m = grad_l_c(&minus, &f).unwrap();
                for i in 0..q {
                    for j in 0..q {
                        let fd = (ld_p[(i, j)] - ld_m[(i, j)]) / (2.0 * h);
                        let got = hd[i][(j, k)];
                        assert!(
                            (got - fd).abs() / (1.0 + fd.abs()) < 1e-5,
                            "H_D mismatch i={i} j={j} k={k}: {got} vs {fd}"
                        );
                        let fd = (lc_p[(i, j)] - lc_m[(i, j)]) / (2.0 * h);
                        let got = hc[i][(j, k)];
                        assert!(
                            (got - fd).abs() / (1.0 + fd.abs()) < 1e-5,
                            "H_C mismatch i={i} j={j} k={k}: {got} vs {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn grad_h_support_pattern_and_fd() {
        // the 3x3 oracle precision from Y = X1 + X2 + eps
        let gamma: DMatrix<f64> =
            DMatrix::from_row_slice(3, 3, &[1.0, -1.0, -1.0, -1.0, 2.0, 1.0, -1.0, 1.0, 2.0]);
        let gh = grad_h(&gamma).unwrap();
        assert_eq!(gh.shape(), (2, 6));
        // nonzeros only at positions of gamma_11, gamma_{i+1,1}, gamma_{i+1,i+1}
        let m = 3;
        for i in 0..2usize {
            let allowed = [
                vech_pos(0, 0, m),
                vech_pos(i + 1, 0, m),
                vech_pos(i + 1, i + 1, m),
            ];
            for t in 0..6 {
                if !allowed.contains(&t) {
                    assert_eq!(gh[(i, t)], 0.0, "row {i} position {t}");
                }
            }
        }
        for (name, g) in [("oracle", gamma), ("identity", DMatrix::identity(3, 3))] {
            let gh = grad_h(&g).unwrap();
            let v0 = vech_of(&g);
            let map = |v: &DVector<f64>| -> DVector<f64> {
                let gm = sym_from_vech(v, 3);
                DVector::from_fn(2, |i, _| {
                    let raw = -gm[(0, i + 1)] / (gm[(0, 0)] * gm[(i + 1, i + 1)]).sqrt();
                    (1.0 + raw) / 2.0
                })
            };
            for t in 0..6 {
                let h = 1e-6;
                let mut vp = v0.clone();
                let mut vm = v0.clone();
                vp[t] += h;
                vm[t] -= h;
                let fp = map(&vp);
                let fm = map(&vm);
                for i in 0..2 {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    assert!(
                        (gh[(i, t)] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                        "{name}: row {i} pos {t}: {} vs {fd}",
                        gh[(i, t)]
                    );
                }
            }
        }
    }

    #[test]
    fn delta_s_constant_rows_vanish() {
        let rows = DMatrix::from_fn(10, 3, |_, j| j as f64 + 1.0);
        let d = delta_s(&rows).unwrap();
        assert!(d.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn delta_s_is_symmetric() {
        let mut rng = RngStream::new(8, 0).rng();
        let rows = DMatrix::from_fn(50, 3, |_, _| StandardNormal.sample(&mut rng));
        let d = delta_s(&rows).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert_abs_diff_eq!(d[(i, j)], d[(j, i)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cov_rho_is_symmetric_psd_and_guards_dimension() {
        let mut rng = RngStream::new(9, 0).rng();
        let n = 400;
        let x = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, 0)] + 0.5 * x[(i, 1)] + e
        });
        let pc = crate::weights::partial_correlations(&y, &x).unwrap();
        let delta = delta_s(&pc.centered).unwrap();
        let elim = elimination_matrix(3);
        let cov = cov_rho(&pc, &delta, &elim, None).unwrap();
        assert_eq!(cov.q(), 2);
        let eig = cov.sigma.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() > -1e-8);

        let err = cov_rho(&pc, &delta, &elim, Some(1)).unwrap_err();
        assert!(matches!(err, Error::PluginDimension { q: 2, limit: 1 }));
    }

    #[test]
    fn cov_nwm_beta_identity_gradient_recovers_ols_covariance() {
        let fit = PostSelectionFit {
            beta_hat: DVector::from_vec(vec![1.0, 2.0]),
            sigma2_hat: 1.7,
            se: DVector::from_vec(vec![0.1, 0.1]),
            xtx_inv: DMatrix::from_row_slice(2, 2, &[0.02, 0.005, 0.005, 0.03]),
            n_rows: 50,
        };
        let l = DMatrix::identity(2, 2);
        let cov = cov_nwm_beta(&fit, &l, CovarianceTarget::Degree).unwrap();
        let expect = fit.xtx_inv.clone() * 50.0 * 1.7;
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(cov.sigma[(i, j)], expect[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn prop12_flat_penalty_region_reduces_to_plain_sandwich() {
        // a*lambda below min |beta|: derivative and curvature vanish
        let beta = [2.0, -3.0, 2.5];
        let cfg = PenaltyConfig::scad();
        let lambda = 0.1; // a*lambda = 0.37 < 2.0
        let f = WeightFn::F2;
        let l = grad_l_d(&beta, &f).unwrap();
        let h = hessian_d(&beta, &f).unwrap();
        let v_s: DMatrix<f64> =
            DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 1.0, 0.0, 0.1, 0.0, 1.0]);
        let (bias, cov) = prop12_bias_diagnostics(&beta, &cfg, lambda, &l, &h, &v_s, 1.3).unwrap();
        assert!(bias.iter().all(|&x| x == 0.0));
        let v_inv = v_s.try_inverse().unwrap();
        let expect = &l * v_inv * l.transpose() * 1.3;
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(cov[(i, j)], expect[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn prop12_zero_gradient_weight_gives_zero_bias() {
        let f =
            crate::weights::register_custom_weight("sqdist", |x, y| (x - y) * (x - y)).unwrap();
        // equal values: d1 f = 0 at x = y for the squared-distance function
        let beta = [0.5, 0.5, 0.5];
        let l = grad_l_d(&beta, &f).unwrap();
        let h = hessian_d(&beta, &f).unwrap();
        let cfg = PenaltyConfig::scad();
        let v_s = DMatrix::identity(3, 3);
        let (bias, _) = prop12_bias_diagnostics(&beta, &cfg, 0.05, &l, &h, &v_s, 1.0).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(bias[i], 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn prop12_errors_at_penalty_kink() {
        let cfg = PenaltyConfig::scad();
        let lambda = 0.5;
        let beta = [lambda, 2.0]; // |beta_0| exactly at the kink
        let f = WeightFn::F2;
        let l = grad_l_d(&beta, &f).unwrap();
        let h = hessian_d(&beta, &f).unwrap();
        let v_s = DMatrix::identity(2, 2);
        let err = prop12_bias_diagnostics(&beta, &cfg, lambda, &l, &h, &v_s, 1.0).unwrap_err();
        assert!(matches!(err, Error::PenaltyKink { index: 0, .. }));
    }
}
