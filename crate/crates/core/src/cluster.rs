//! Cluster detection: sequential testing-based grouping of predictors by
//! statistically indistinguishable NWM values, ICC-based choice of the
//! cluster count, and the modified K-means / spectral baselines.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::asymptotics::CovarianceEstimate;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nwm::{NwmKind, NwmVector};
use crate::rng::RngStream;
use crate::stats::{correlation, normal_quantile};

/// One pairwise hypothesis-test record from the sequential procedure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestDecision {
    /// dataset column index of the anchor vertex
    pub anchor: usize,
    /// dataset column index of the compared vertex
    pub vertex: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
}

/// Ordered list of detected clusters over dataset column indices.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClusterResult {
    /// cluster 1 first (highest-NWM anchor); may contain empty clusters when
    /// the vertex pool is exhausted before K is reached
    pub clusters: Vec<Vec<usize>>,
    pub unassigned: Vec<usize>,
    /// anchor vertex per cluster (None for an empty cluster)
    pub anchors: Vec<Option<usize>>,
    pub decisions: Vec<TestDecision>,
}

impl ClusterResult {
    /// Partition sanity: clusters pairwise disjoint, anchors inside their
    /// clusters, no overlap with the unassigned remainder.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (k, c) in self.clusters.iter().enumerate() {
            for &v in c {
                if !seen.insert(v) {
                    return Err(Error::Other(format!("vertex {v} appears twice")));
                }
            }
            if let Some(Some(a)) = self.anchors.get(k) {
                if !c.contains(a) {
                    return Err(Error::Other(format!("anchor {a} outside cluster {k}")));
                }
            }
        }
        for &v in &self.unassigned {
            if !seen.insert(v) {
                return Err(Error::Other(format!(
                    "vertex {v} both clustered and unassigned"
                )));
            }
        }
        Ok(())
    }

    pub fn nonempty_clusters(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.clusters.iter().filter(|c| !c.is_empty())
    }

    pub fn to_json(&self, names: &[String]) -> serde_json::Value {
        serde_json::json!({
            "clusters": self.clusters.iter().map(|c| {
                c.iter().map(|&v| names[v].clone()).collect::<Vec<_>>()
            }).collect::<Vec<_>>(),
            "unassigned": self.unassigned.iter().map(|&v| names[v].clone()).collect::<Vec<_>>(),
            "anchors": self.anchors.iter().map(|a| a.map(|v| names[v].clone())).collect::<Vec<_>>(),
            "decisions": self.decisions.iter().map(|d| serde_json::json!({
                "anchor": names[d.anchor].clone(),
                "vertex": names[d.vertex].clone(),
                "statistic": d.statistic,
                "threshold": d.threshold,
                "reject": d.reject,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Covariance source for the sequential tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovMethodChoice {
    Plugin,
    Bootstrap,
}

/// Configuration of the sequential testing procedure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeqTestConfig {
    /// desired number of clusters
    pub k: usize,
    /// cluster radius tau >= 0
    pub tau: f64,
    /// per-test significance level
    pub alpha: f64,
    /// Bonferroni-adjust across the comparisons remaining at each step
    pub bonferroni: bool,
    pub nwm_kind: NwmKind,
    pub cov_method: CovMethodChoice,
}

impl Default for SeqTestConfig {
    fn default() -> Self {
        Self {
            k: 3,
            tau: 0.0,
            alpha: 0.05,
            bonferroni: true,
            nwm_kind: NwmKind::Degree,
            cov_method: CovMethodChoice::Bootstrap,
        }
    }
}

impl SeqTestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if self.tau < 0.0 {
            return Err(Error::InvalidConfig(format!("tau = {} negative", self.tau)));
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha = {} outside (0, 1)",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Sequential testing-based clustering. Anchors at the largest remaining NWM
/// value (ties to the lowest vertex index), tests every remaining vertex j
/// with t = (|D_a - D_j| - tau) / se(D_a - D_j), and keeps the non-rejected
/// ones in the anchor's cluster. `n_eff` is the inference-half row count that
/// converts the sqrt(n/2)-scale covariance into standard errors.
pub fn sequential_cluster(
    nwm: &NwmVector,
    cov: &CovarianceEstimate,
    cfg: &SeqTestConfig,
    n_eff: usize,
) -> Result<ClusterResult> {
    cfg.validate()?;
    let q = nwm.values.len();
    if cov.q() != q {
        return Err(Error::DimensionMismatch(format!(
            "NWM has {q} vertices, covariance {}",
            cov.q()
        )));
    }
    if n_eff == 0 {
        return Err(Error::InvalidConfig("n_eff must be positive".into()));
    }

    let mut remaining: Vec<usize> = (0..q).collect();
    let mut clusters = Vec::with_capacity(cfg.k);
    let mut anchors = Vec::with_capacity(cfg.k);
    let mut decisions = Vec::new();

    for _k in 0..cfg.k {
        if remaining.is_empty() {
            clusters.push(Vec::new());
            anchors.push(None);
            continue;
        }
        // argmax with ties broken by lowest index (remaining is ascending)
        let mut anchor = remaining[0];
        for &j in &remaining {
            if nwm.values[j] > nwm.values[anchor] {
                anchor = j;
            }
        }
        let m = remaining.len() - 1;
        let level = if cfg.bonferroni && m > 0 {
            cfg.alpha / m as f64
        } else {
            cfg.alpha
        };
        // the statistic is folded; the size-level critical value is the
        // two-sided normal quantile
        let crit = normal_quantile(1.0 - (level / 2.0).clamp(1e-300, 0.5));

        let mut cluster = vec![anchor];
        let mut next = Vec::new();
        for &j in &remaining {
            if j == anchor {
                continue;
            }
            let var = (cov.sigma[(anchor, anchor)] + cov.sigma[(j, j)]
                - 2.0 * cov.sigma[(anchor, j)])
                / n_eff as f64;
            let se = var.max(0.0).sqrt().max(1e-300);
            let stat = ((nwm.values[anchor] - nwm.values[j]).abs() - cfg.tau) / se;
            let reject = stat > crit;
            decisions.push(TestDecision {
                anchor: nwm.vertices.indices[anchor],
                vertex: nwm.vertices.indices[j],
                statistic: stat,
                threshold: crit,
                reject,
            });
            if reject {
                next.push(j);
            } else {
                cluster.push(j);
            }
        }
        cluster.sort_unstable();
        anchors.push(Some(nwm.vertices.indices[anchor]));
        clusters.push(
            cluster
                .into_iter()
                .map(|v| nwm.vertices.indices[v])
                .collect(),
        );
        remaining = next;
    }

    let result = ClusterResult {
        clusters,
        unassigned: remaining
            .into_iter()
            .map(|v| nwm.vertices.indices[v])
            .collect(),
        anchors,
        decisions,
    };
    result.check_invariants()?;
    Ok(result)
}

/// One-way ANOVA intra-cluster correlation of `values` grouped by `groups`:
/// (MSB - MSW) / (MSB + (mbar - 1) MSW) with mbar the average group size.
/// Returns None when no within-group degrees of freedom exist.
pub fn icc(values: &DVector<f64>, groups: &[Vec<usize>], index_of: &[usize]) -> Option<f64> {
    let g = groups.len();
    if g < 2 {
        return None;
    }
    let n: usize = groups.iter().map(|c| c.len()).sum();
    if n <= g {
        return None; // singletons only: no within-group variance to speak of
    }
    let value_at = |v: usize| -> f64 {
        let local = index_of[v];
        values[local]
    };
    let grand: f64 = groups
        .iter()
        .flat_map(|c| c.iter().map(|&v| value_at(v)))
        .sum::<f64>()
        / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for c in groups {
        let mean = c.iter().map(|&v| value_at(v)).sum::<f64>() / c.len() as f64;
        ssb += c.len() as f64 * (mean - grand) * (mean - grand);
        for &v in c {
            let d = value_at(v) - mean;
            ssw += d * d;
        }
    }
    let msb = ssb / (g - 1) as f64;
    let msw = ssw / (n - g) as f64;
    let mbar = n as f64 / g as f64;
    if msw <= 1e-300 {
        return Some(if msb > 0.0 { 1.0 } else { 0.0 });
    }
    Some((msb - msw) / (msb + (mbar - 1.0) * msw))
}

/// Choose the cluster count by maximizing the one-way ANOVA ICC of the NWM
/// values over K = 2..=k_max runs of the sequential procedure. Ties go to
/// the smaller K.
pub fn choose_k_icc(
    nwm: &NwmVector,
    cov: &CovarianceEstimate,
    cfg: &SeqTestConfig,
    k_max: usize,
    n_eff: usize,
) -> Result<usize> {
    let q = nwm.values.len();
    if k_max + 1 > q {
        return Err(Error::InvalidConfig(format!(
            "k_max = {k_max} exceeds q - 1 = {}",
            q - 1
        )));
    }
    // map dataset index -> local position once
    let max_idx = nwm.vertices.indices.iter().max().copied().unwrap_or(0);
    let mut index_of = vec![usize::MAX; max_idx + 1];
    for (local, &v) in nwm.vertices.indices.iter().enumerate() {
        index_of[v] = local;
    }

    let mut best: Option<(usize, f64)> = None;
    for k in 2..=k_max {
        let run_cfg = SeqTestConfig { k, ..cfg.clone() };
        let result = sequential_cluster(nwm, cov, &run_cfg, n_eff)?;
        let groups: Vec<Vec<usize>> = result.nonempty_clusters().cloned().collect();
        let Some(score) = icc(&nwm.values, &groups, &index_of) else {
            continue;
        };
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((k, score)),
        }
    }
    best.map(|(k, _)| k).ok_or(Error::NoGroupingStructure)
}

// ---------------------------------------------------------------------------
// unsupervised baselines
// ---------------------------------------------------------------------------

struct KmeansFit {
    assignment: Vec<usize>,
    inertia: f64,
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

fn lloyd_once(points: &[DVector<f64>], k: usize, rng: &mut impl Rng) -> KmeansFit {
    let n = points.len();
    // k-means++ seeding
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut u: f64 = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        };
        centers.push(points[next].clone());
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(&points[i], centers.last().unwrap()));
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        // recompute centers; an emptied cluster grabs the farthest point
        let dim = points[0].len();
        let mut sums = vec![DVector::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sums[assignment[i]] += p;
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centers[assignment[a]])
                            .partial_cmp(&sq_dist(&points[b], &centers[assignment[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centers[c] = points[far].clone();
                changed = true;
            } else {
                centers[c] = &sums[c] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .enumerate()
        .map(|(i, p)| sq_dist(p, &centers[assignment[i]]))
        .sum();
    KmeansFit {
        assignment,
        inertia,
    }
}

fn kmeans_restarts(
    points: &[DVector<f64>],
    k: usize,
    restarts: usize,
    rng: RngStream,
) -> KmeansFit {
    let mut best: Option<KmeansFit> = None;
    for r in 0..restarts {
        let mut rr = rng.child(r as u64).rng();
        let fit = lloyd_once(points, k, &mut rr);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    best.unwrap()
}

/// Order clusters by descending mean |correlation with y| and report them as
/// a ClusterResult, the representative (max |corr|) member as the anchor.
fn order_by_response_association(
    d: &Dataset,
    assignment: &[usize],
    k: usize,
) -> ClusterResult {
    let y: Vec<f64> = d.y.iter().copied().collect();
    let abs_corr: Vec<f64> = (0..d.p())
        .map(|j| {
            let col: Vec<f64> = d.x.column(j).iter().copied().collect();
            correlation(&y, &col).abs()
        })
        .collect();
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (j, &c) in assignment.iter().enumerate() {
        clusters[c].push(j);
    }
    let mut order: Vec<usize> = (0..k).collect();
    let mean_assoc = |c: &Vec<usize>| -> f64 {
        if c.is_empty() {
            return f64::NEG_INFINITY;
        }
        c.iter().map(|&j| abs_corr[j]).sum::<f64>() / c.len() as f64
    };
    order.sort_by(|&a, &b| {
        mean_assoc(&clusters[b])
            .partial_cmp(&mean_assoc(&clusters[a]))
            .unwrap()
            .then(a.cmp(&b))
    });
    let ordered: Vec<Vec<usize>> = order.iter().map(|&c| clusters[c].clone()).collect();
    let anchors = ordered
        .iter()
        .map(|c| {
            c.iter()
                .copied()
                .max_by(|&a, &b| abs_corr[a].partial_cmp(&abs_corr[b]).unwrap())
        })
        .collect();
    ClusterResult {
        clusters: ordered,
        unassigned: Vec::new(),
        anchors,
        decisions: Vec::new(),
    }
}

/// K-means over predictors: transpose X to p observations of length n and run
/// Lloyd's algorithm with k-means++ seeding, 25 restarts, 300 iterations.
pub fn modified_kmeans(d: &Dataset, k: usize, rng: RngStream) -> Result<ClusterResult> {
    if k > d.p() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} exceeds p = {}",
            d.p()
        )));
    }
    let points: Vec<DVector<f64>> = (0..d.p()).map(|j| d.x.column(j).clone_owned()).collect();
    let fit = kmeans_restarts(&points, k, 25, rng);
    let result = order_by_response_association(d, &fit.assignment, k);
    result.check_invariants()?;
    Ok(result)
}

/// Spectral clustering over predictors: similarity |corr(X_i, X_j)|,
/// unnormalized Laplacian L = G - M, bottom-k eigenvectors, K-means on the
/// eigenvector rows.
pub fn modified_spectral(d: &Dataset, k: usize, rng: RngStream) -> Result<ClusterResult> {
    let p = d.p();
    if k > p {
        return Err(Error::InvalidConfig(format!("k = {k} exceeds p = {p}")));
    }
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|j| d.x.column(j).iter().copied().collect())
        .collect();
    let mut sim = DMatrix::zeros(p, p);
    for i in 0..p {
        sim[(i, i)] = 1.0;
        for j in (i + 1)..p {
            let c = correlation(&cols[i], &cols[j]).abs();
            sim[(i, j)] = c;
            sim[(j, i)] = c;
        }
    }
    let mut lap = -sim.clone();
    for i in 0..p {
        lap[(i, i)] += sim.row(i).sum();
    }
    let eig = lap.symmetric_eigen();
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let rows: Vec<DVector<f64>> = (0..p)
        .map(|i| DVector::from_fn(k, |c, _| eig.eigenvectors[(i, idx[c])]))
        .collect();
    let fit = kmeans_restarts(&rows, k, 25, rng);
    let result = order_by_response_association(d, &fit.assignment, k);
    result.check_invariants()?;
    Ok(result)
}
