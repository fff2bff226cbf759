//! The end-to-end single-split pipeline (split, select, refit, network, NWM,
//! covariance, cluster) and its multiple-split aggregation by vote counting.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    cov_nwm_beta, cov_nwm_rho, cov_rho, delta_s, elimination_matrix, grad_l_c, grad_l_d,
    CovarianceEstimate, CovarianceTarget,
};
use crate::bootstrap::{mepsrs_covariance, BootstrapConfig};
use crate::cluster::{sequential_cluster, ClusterResult, CovMethodChoice, SeqTestConfig};
use crate::data::{split_half, Dataset, SplitPair};
use crate::error::{Error, Result};
use crate::nwm::{clustering_coefficient, degree_centrality, NwmKind, NwmVector};
use crate::penalty::{refit_ols, two_step_select, ActiveSet, PenaltyConfig, PostSelectionFit};
use crate::rng::RngStream;
use crate::weights::{build_network, partial_correlations, ImplicitNetwork, NetworkRecipe};

/// Everything one pipeline run needs to know.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub penalty: PenaltyConfig,
    /// level of the second-stage selection t-tests
    pub select_alpha: f64,
    pub recipe: NetworkRecipe,
    pub seq: SeqTestConfig,
    /// bootstrap replicate count when seq.cov_method is Bootstrap
    pub bootstrap_b: usize,
    /// plug-in dimension guard override (None = default limit of 25)
    pub plugin_q_limit: Option<usize>,
}

impl PipelineConfig {
    pub fn default_with(recipe: NetworkRecipe) -> Self {
        Self {
            penalty: PenaltyConfig::scad(),
            select_alpha: 0.05,
            recipe,
            seq: SeqTestConfig::default(),
            bootstrap_b: 500,
            plugin_q_limit: None,
        }
    }
}

/// Output of one split's full pipeline run.
#[derive(Debug, Clone)]
pub struct SplitRun {
    pub split: SplitPair,
    pub active: ActiveSet,
    pub fit: PostSelectionFit,
    pub values: Vec<f64>,
    pub network: ImplicitNetwork,
    pub nwm: NwmVector,
    pub cov: CovarianceEstimate,
    pub clusters: ClusterResult,
}

fn plugin_covariance(
    y2: &DVector<f64>,
    x2: &DMatrix<f64>,
    fit: &PostSelectionFit,
    values: &[f64],
    cfg: &PipelineConfig,
) -> Result<CovarianceEstimate> {
    let target = match cfg.seq.nwm_kind {
        NwmKind::Degree => CovarianceTarget::Degree,
        NwmKind::Clustering => CovarianceTarget::Clustering,
    };
    let l = match cfg.seq.nwm_kind {
        NwmKind::Degree => grad_l_d(values, &cfg.recipe.f)?,
        NwmKind::Clustering => grad_l_c(values, &cfg.recipe.f)?,
    };
    match cfg.recipe.source {
        crate::weights::ValueSource::Beta => cov_nwm_beta(fit, &l, target),
        _ => {
            let pc = partial_correlations(y2, x2)?;
            let delta = delta_s(&pc.centered)?;
            let elim = elimination_matrix(pc.gamma.nrows());
            let cov_values = cov_rho(&pc, &delta, &elim, cfg.plugin_q_limit)?;
            cov_nwm_rho(&cov_values, &l, target)
        }
    }
}

/// Run the full pipeline on one split. Deterministic given `rng`.
pub fn run_split(
    d: &Dataset,
    split: &SplitPair,
    cfg: &PipelineConfig,
    rng: RngStream,
) -> Result<SplitRun> {
    let active = two_step_select(d, split, &cfg.penalty, cfg.select_alpha, rng.child(0))?;
    let fit = refit_ols(d, &split.d2, &active)?;
    let (y2, x2) = d.restrict(&split.d2, &active.indices);
    let values = match cfg.recipe.source {
        crate::weights::ValueSource::Beta => fit.beta_hat.iter().copied().collect::<Vec<f64>>(),
        _ => cfg.recipe.values(&y2, &x2)?,
    };
    let network = build_network(&values, &cfg.recipe.f, cfg.recipe.family(), active.clone())?;
    let nwm = match cfg.seq.nwm_kind {
        NwmKind::Degree => degree_centrality(&network, false)?,
        NwmKind::Clustering => clustering_coefficient(&network)?,
    };
    let cov = match cfg.seq.cov_method {
        CovMethodChoice::Bootstrap => {
            let bcfg = BootstrapConfig {
                b: cfg.bootstrap_b,
                rng: rng.child(1),
            };
            mepsrs_covariance(&y2, &x2, cfg.seq.nwm_kind, &cfg.recipe, &active, &bcfg)?
        }
        CovMethodChoice::Plugin => plugin_covariance(&y2, &x2, &fit, &values, cfg)?,
    };
    let clusters = sequential_cluster(&nwm, &cov, &cfg.seq, split.d2.len())?;
    Ok(SplitRun {
        split: split.clone(),
        active,
        fit,
        values,
        network,
        nwm,
        cov,
        clusters,
    })
}

/// Per-variable vote record across splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoteRow {
    pub variable: usize,
    /// how many splits selected the variable at all
    pub selected: usize,
    /// appearance count per cluster rank
    pub per_rank: Vec<usize>,
    /// the rank the variable was assigned to, if any
    pub assigned: Option<usize>,
}

/// Aggregate of M split runs.
#[derive(Debug)]
pub struct MultiSplitResult {
    pub result: ClusterResult,
    pub votes: Vec<VoteRow>,
    pub m_requested: usize,
    pub m_successful: usize,
    pub failures: Vec<(usize, String)>,
    pub runs: Vec<Option<SplitRun>>,
}

/// Run the pipeline on `m` independent splits and assign each variable to the
/// cluster rank where its appearance count exceeds `vote_threshold * m`.
/// Splits whose sub-stages fail are skipped and reported.
pub fn multiple_split_cluster(
    d: &Dataset,
    m: usize,
    vote_threshold: f64,
    cfg: &PipelineConfig,
    rng: RngStream,
) -> Result<MultiSplitResult> {
    if m < 1 {
        return Err(Error::InvalidConfig("need at least one split".into()));
    }
    if !(0.0 < vote_threshold && vote_threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "vote threshold {vote_threshold} outside (0, 1]"
        )));
    }
    let runs: Vec<std::result::Result<SplitRun, String>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let stream = rng.child(i as u64);
            let split = split_half(d.n(), stream.child(100)).map_err(|e| e.to_string())?;
            run_split(d, &split, cfg, stream.child(200)).map_err(|e| e.to_string())
        })
        .collect();

    let k = cfg.seq.k;
    let p = d.p();
    let mut per_rank = vec![vec![0usize; k]; p];
    let mut selected = vec![0usize; p];
    let mut anchor_votes = vec![std::collections::BTreeMap::<usize, usize>::new(); k];
    let mut failures = Vec::new();
    let mut kept: Vec<Option<SplitRun>> = Vec::with_capacity(m);
    let mut m_successful = 0usize;
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok(run) => {
                m_successful += 1;
                for &v in &run.active.indices {
                    selected[v] += 1;
                }
                for (rank, cluster) in run.clusters.clusters.iter().enumerate() {
                    for &v in cluster {
                        per_rank[v][rank] += 1;
                    }
                    if let Some(Some(a)) = run.clusters.anchors.get(rank) {
                        *anchor_votes[rank].entry(*a).or_insert(0) += 1;
                    }
                }
                kept.push(Some(run));
            }
            Err(e) => {
                failures.push((i, e));
                kept.push(None);
            }
        }
    }
    if m_successful == 0 {
        let (_, first) = failures.first().cloned().unwrap_or((0, "no runs".into()));
        return Err(Error::Other(format!("every split failed; first: {first}")));
    }

    let required = vote_threshold * m as f64;
    let mut clusters = vec![Vec::new(); k];
    let mut votes = Vec::with_capacity(p);
    let mut unassigned = Vec::new();
    for v in 0..p {
        let mut assigned = None;
        // a rank must strictly exceed the threshold; the best-supported rank
        // wins, ties to the smaller rank
        let mut best_rank = None;
        let mut best_count = 0usize;
        for (rank, &count) in per_rank[v].iter().enumerate() {
            if count as f64 - required > 1e-9 && count > best_count {
                best_rank = Some(rank);
                best_count = count;
            }
        }
        if let Some(rank) = best_rank {
            clusters[rank].push(v);
            assigned = Some(rank);
        } else if 2 * selected[v] >= m && selected[v] > 0 {
            // selected at least half the time but never settled in a cluster
            unassigned.push(v);
        }
        votes.push(VoteRow {
            variable: v,
            selected: selected[v],
            per_rank: per_rank[v].clone(),
            assigned,
        });
    }
    let anchors: Vec<Option<usize>> = (0..k)
        .map(|rank| {
            anchor_votes[rank]
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&v, _)| v)
                .filter(|v| clusters[rank].contains(v))
        })
        .collect();

    let result = ClusterResult {
        clusters,
        unassigned,
        anchors,
        decisions: Vec::new(),
    };
    result.check_invariants()?;
    Ok(MultiSplitResult {
        result,
        votes,
        m_requested: m,
        m_successful,
        failures,
        runs: kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate, SimDesign};
    use crate::weights::{ValueSource, WeightFn};

    fn pipeline_cfg() -> PipelineConfig {
        PipelineConfig {
            penalty: PenaltyConfig::scad(),
            select_alpha: 0.05,
            recipe: NetworkRecipe {
                f: WeightFn::F1,
                source: ValueSource::RhoTransformed,
            },
            seq: SeqTestConfig {
                k: 3,
                cov_method: CovMethodChoice::Plugin,
                ..Default::default()
            },
            bootstrap_b: 100,
            plugin_q_limit: None,
        }
    }

    fn strong_design(seed: u64) -> Dataset {
        let design = SimDesign {
            n: 200,
            p: 9,
            beta: vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 2.0, 2.0, 2.0],
            sigma2: 1.0,
            r_w: 0.0,
            r_b: 0.0,
            group_map: vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8]],
            seed,
        };
        generate(&design, RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn single_split_pipeline_runs_end_to_end() {
        let d = strong_design(50);
        let split = split_half(d.n(), RngStream::new(50, 1)).unwrap();
        let run = run_split(&d, &split, &pipeline_cfg(), RngStream::new(50, 2)).unwrap();
        assert!(run.active.q_hat >= 3);
        assert_eq!(run.nwm.values.len(), run.active.q_hat);
        assert_eq!(run.cov.q(), run.active.q_hat);
        run.clusters.check_invariants().unwrap();
    }

    #[test]
    fn multiple_split_with_one_split_matches_single_run() {
        let d = strong_design(51);
        let cfg = pipeline_cfg();
        let ms = multiple_split_cluster(&d, 1, 0.5, &cfg, RngStream::new(51, 3)).unwrap();
        assert_eq!(ms.m_successful, 1);
        let run = ms.runs[0].as_ref().unwrap();
        // aggregated clusters must equal the single run's clusters as sets
        for (agg, single) in ms.result.clusters.iter().zip(&run.clusters.clusters) {
            let mut s = single.clone();
            s.sort_unstable();
            assert_eq!(agg, &s);
        }
    }

    #[test]
    fn vote_threshold_assignment_rules() {
        // synthetic vote check through the public API: 20 splits of a strong
        // design should put each variable in its cluster well above 60%
        let d = strong_design(52);
        let cfg = pipeline_cfg();
        let ms = multiple_split_cluster(&d, 10, 0.6, &cfg, RngStream::new(52, 4)).unwrap();
        assert!(ms.m_successful >= 8, "failures: {:?}", ms.failures);
        // the beta = 2 group has the largest partial correlations; under the
        // decreasing f1 weight its degrees are smallest, so it lands in the
        // last cluster rank
        ms.result.check_invariants().unwrap();
        let all_assigned: usize = ms.result.clusters.iter().map(|c| c.len()).sum();
        assert!(all_assigned >= 6, "clusters {:?}", ms.result.clusters);
    }

    #[test]
    fn determinism_across_thread_counts() {
        let d = strong_design(53);
        let cfg = pipeline_cfg();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1
            .install(|| multiple_split_cluster(&d, 6, 0.5, &cfg, RngStream::new(53, 5)))
            .unwrap();
        let b = pool4
            .install(|| multiple_split_cluster(&d, 6, 0.5, &cfg, RngStream::new(53, 5)))
            .unwrap();
        assert_eq!(a.result.clusters, b.result.clusters);
        assert_eq!(a.result.unassigned, b.result.unassigned);
    }
}
