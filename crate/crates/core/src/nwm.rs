//! Network-wide metrics: weighted degree centrality and clustering
//! coefficient on an implicit network.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::ActiveSet;
use crate::weights::ImplicitNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NwmKind {
    Degree,
    Clustering,
}

/// Per-vertex metric values over a network.
#[derive(Debug, Clone)]
pub struct NwmVector {
    pub kind: NwmKind,
    pub values: DVector<f64>,
    pub vertices: ActiveSet,
}

impl NwmVector {
    /// CSV rows (vertex name, metric kind, value).
    pub fn to_csv_rows(&self, names: &[String]) -> Vec<(String, String, f64)> {
        let kind = match self.kind {
            NwmKind::Degree => "degree",
            NwmKind::Clustering => "clustering",
        };
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (names[self.vertices.indices[i]].clone(), kind.to_string(), v))
            .collect()
    }
}

/// Degree centrality D_i = sum_{j != i} w_ij. With `standardized` the sum is
/// divided by q-1.
pub fn degree_centrality(net: &ImplicitNetwork, standardized: bool) -> Result<NwmVector> {
    let q = net.q();
    if q < 2 {
        return Err(Error::InvalidConfig(
            "degree centrality needs at least 2 vertices".into(),
        ));
    }
    let scale = if standardized { (q - 1) as f64 } else { 1.0 };
    let values = DVector::from_fn(q, |i, _| net.w.row(i).sum() / scale);
    Ok(NwmVector {
        kind: NwmKind::Degree,
        values,
        vertices: net.vertices.clone(),
    })
}

/// Clustering coefficient
/// C_i = sum over ordered pairs (j, k), j != k, both != i, of
/// w_jk / ((q-1)(q-2)); each undirected edge therefore contributes twice,
/// which makes the uniform-weight graph score exactly 1.
pub fn clustering_coefficient(net: &ImplicitNetwork) -> Result<NwmVector> {
    let q = net.q();
    if q < 3 {
        return Err(Error::InvalidConfig(
            "clustering coefficient needs at least 3 vertices".into(),
        ));
    }
    // ordered-pair sum over (j, k) with j != k and both != i: drop row i and
    // column i from the full off-diagonal total
    let total: f64 = net.w.sum();
    let denom = ((q - 1) * (q - 2)) as f64;
    let values = DVector::from_fn(q, |i, _| {
        (total - net.w.row(i).sum() - net.w.column(i).sum()) / denom
    });
    Ok(NwmVector {
        kind: NwmKind::Clustering,
        values,
        vertices: net.vertices.clone(),
    })
}

/// Check the algebraic identity
/// C_i = (sum_{u != k} w_uk - 2 D_i) / ((q-1)(q-2)) entrywise at 1e-10.
/// Returns the maximum deviation alongside the verdict.
pub fn centrality_identity_check(net: &ImplicitNetwork) -> Result<(bool, f64)> {
    let q = net.q();
    if q < 3 {
        return Err(Error::InvalidConfig(
            "identity check needs at least 3 vertices".into(),
        ));
    }
    let degree = degree_centrality(net, false)?;
    let clustering = clustering_coefficient(net)?;
    let total: f64 = net.w.sum();
    let denom = ((q - 1) * (q - 2)) as f64;
    let mut max_dev: f64 = 0.0;
    for i in 0..q {
        let rhs = (total - 2.0 * degree.values[i]) / denom;
        max_dev = max_dev.max((clustering.values[i] - rhs).abs());
    }
    Ok((max_dev <= 1e-10, max_dev))
}
