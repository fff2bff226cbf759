//! Model-estimated post-selection resampling: bootstrap covariance estimates
//! of NWM vectors on the inference half, with the selected support held
//! fixed. Rows of (y, x_S) are resampled jointly with replacement.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::asymptotics::{CovarianceEstimate, CovarianceMethod, CovarianceTarget};
use crate::error::{Error, Result};
use crate::nwm::{clustering_coefficient, degree_centrality, NwmKind};
use crate::penalty::ActiveSet;
use crate::rng::RngStream;
use crate::weights::{build_network, NetworkRecipe};

pub const RESAMPLE_RETRIES: usize = 50;

#[derive(Debug, Clone, Copy)]
pub struct BootstrapConfig {
    /// replicate count
    pub b: usize,
    pub rng: RngStream,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            b: 500,
            rng: RngStream::new(0, 0),
        }
    }
}

fn rows_all_identical(y: &DVector<f64>, xs: &DMatrix<f64>) -> bool {
    let n = y.len();
    (1..n).all(|i| {
        y[i] == y[0] && (0..xs.ncols()).all(|j| xs[(i, j)] == xs[(0, j)])
    })
}

fn nwm_of_resample(
    y: &DVector<f64>,
    xs: &DMatrix<f64>,
    idx: &[usize],
    kind: NwmKind,
    recipe: &NetworkRecipe,
    vertices: &ActiveSet,
) -> Result<DVector<f64>> {
    let yb = DVector::from_iterator(idx.len(), idx.iter().map(|&r| y[r]));
    let xb = DMatrix::from_fn(idx.len(), xs.ncols(), |i, j| xs[(idx[i], j)]);
    let values = recipe.values(&yb, &xb)?;
    let net = build_network(&values, &recipe.f, recipe.family(), vertices.clone())?;
    let v = match kind {
        NwmKind::Degree => degree_centrality(&net, false)?,
        NwmKind::Clustering => clustering_coefficient(&net)?,
    };
    Ok(v.values)
}

/// Bootstrap covariance of one NWM vector, rescaled by the row count to the
/// sqrt(n/2) convention. A resample whose joint covariance is singular is
/// redrawn, up to [`RESAMPLE_RETRIES`] times per replicate.
pub fn mepsrs_covariance(
    y: &DVector<f64>,
    xs: &DMatrix<f64>,
    kind: NwmKind,
    recipe: &NetworkRecipe,
    vertices: &ActiveSet,
    cfg: &BootstrapConfig,
) -> Result<CovarianceEstimate> {
    let reps = bootstrap_replicates(y, xs, &[kind], recipe, vertices, cfg)?;
    covariance_from_replicates(&reps[0], y.len(), kind)
}

/// Run the resampling loop once, computing the NWM vector for every kind in
/// `kinds` on each resample. Returns one replicate matrix per kind (each
/// column a replicate). Replicates use stream `cfg.rng.child(j)` and the
/// reduction order is fixed by j, so results are thread-count independent.
pub fn bootstrap_replicates(
    y: &DVector<f64>,
    xs: &DMatrix<f64>,
    kinds: &[NwmKind],
    recipe: &NetworkRecipe,
    vertices: &ActiveSet,
    cfg: &BootstrapConfig,
) -> Result<Vec<DMatrix<f64>>> {
    let n = y.len();
    let q = xs.ncols();
    if cfg.b < 2 {
        return Err(Error::InvalidConfig(format!(
            "bootstrap needs B >= 2, got {}",
            cfg.b
        )));
    }
    if n < q + 2 {
        return Err(Error::TooFewRows(format!(
            "{n} rows cannot bootstrap a {q}-vertex network"
        )));
    }

    if rows_all_identical(y, xs) {
        // degenerate input: every resample is the same dataset, so the
        // bootstrap distribution has no variance
        return Ok(kinds.iter().map(|_| DMatrix::zeros(q, cfg.b)).collect());
    }

    let results: Vec<Result<Vec<DVector<f64>>>> = (0..cfg.b)
        .into_par_iter()
        .map(|j| {
            let mut rng = cfg.rng.child(j as u64).rng();
            let mut idx = vec![0usize; n];
            for attempt in 0..=RESAMPLE_RETRIES {
                for slot in idx.iter_mut() {
                    *slot = rng.random_range(0..n);
                }
                let mut out = Vec::with_capacity(kinds.len());
                let mut failed = false;
                for &kind in kinds {
                    match nwm_of_resample(y, xs, &idx, kind, recipe, vertices) {
                        Ok(v) => out.push(v),
                        Err(Error::SingularCovariance { .. })
                        | Err(Error::RankDeficient { .. }) => {
                            failed = true;
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                }
                if !failed {
                    return Ok(out);
                }
                if attempt == RESAMPLE_RETRIES {
                    return Err(Error::BootstrapSingular {
                        replicate: j,
                        retries: RESAMPLE_RETRIES,
                    });
                }
            }
            unreachable!()
        })
        .collect();

    let mut per_kind: Vec<DMatrix<f64>> = kinds.iter().map(|_| DMatrix::zeros(q, cfg.b)).collect();
    for (j, r) in results.into_iter().enumerate() {
        let vectors = r?;
        for (k, v) in vectors.into_iter().enumerate() {
            per_kind[k].column_mut(j).copy_from(&v);
        }
    }
    Ok(per_kind)
}

/// Outer-product average of the replicate deviations, rescaled by `n_rows`.
pub fn covariance_from_replicates(
    replicates: &DMatrix<f64>,
    n_rows: usize,
    kind: NwmKind,
) -> Result<CovarianceEstimate> {
    let q = replicates.nrows();
    let b = replicates.ncols();
    let mut mean = DVector::zeros(q);
    for j in 0..b {
        mean.axpy(1.0 / b as f64, &replicates.column(j).clone_owned(), 1.0);
    }
    let mut sigma = DMatrix::zeros(q, q);
    for j in 0..b {
        let dev = replicates.column(j) - &mean;
        sigma.ger(1.0 / b as f64, &dev, &dev, 1.0);
    }
    sigma *= n_rows as f64;
    let target = match kind {
        NwmKind::Degree => CovarianceTarget::Degree,
        NwmKind::Clustering => CovarianceTarget::Clustering,
    };
    CovarianceEstimate::new(target, sigma, CovarianceMethod::Bootstrap)
}
