//! Synthetic attributed graphs with a planted sensitive-group bias and
//! injected anomalies.
//!
//! Nodes get a sensitive group `s ~ Bernoulli(minority_ratio)` and a latent
//! community. Each edge draw picks a source uniformly, a target group that
//! matches the source's group with probability `homophily`, and (with
//! probability `cluster_affinity`) a target in the source's community.
//! Attributes are `community base + bias_strength · s · u + noise` for a
//! fixed unit direction `u`. Anomalies are split between planted cliques
//! (structural) and attribute swaps (contextual).
//!
//! Every stage draws from its own ChaCha stream of the run seed, so turning
//! a stage off leaves the others untouched.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{build_csr, AttributedGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_nodes: usize,
    pub n_attrs: usize,
    /// Expected share of nodes with `s = 1`.
    pub minority_ratio: f64,
    /// Expected share of edges joining nodes of the same group.
    pub homophily: f64,
    pub avg_degree: f64,
    /// Length of the attribute shift applied to the minority group.
    pub bias_strength: f64,
    pub anomaly_ratio: f64,
    /// 0.5 spreads anomalies proportionally over the groups; 1.0 puts all of
    /// them in the minority group, 0.0 all in the majority group.
    pub anomaly_group_skew: f64,
    pub structural_fraction: f64,
    pub clique_size: usize,
    pub seed: u64,
    pub n_clusters: usize,
    /// Probability that an edge stays inside the source's community.
    pub cluster_affinity: f64,
    /// Standard deviation of the community centres.
    pub cluster_scale: f64,
    /// Standard deviation of the per-node attribute noise.
    pub attr_noise: f64,
    /// Candidates examined per contextual anomaly.
    pub context_pool_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_nodes: 2000,
            n_attrs: 32,
            minority_ratio: 0.15,
            homophily: 0.8,
            avg_degree: 10.0,
            bias_strength: 1.0,
            anomaly_ratio: 0.08,
            anomaly_group_skew: 0.7,
            structural_fraction: 0.5,
            clique_size: 10,
            seed: 0,
            n_clusters: 5,
            cluster_affinity: 0.9,
            cluster_scale: 0.25,
            attr_noise: 0.125,
            context_pool_size: 50,
        }
    }
}

fn in_range(field: &str, v: f64, lo: f64, hi: f64, lo_open: bool, hi_open: bool) -> Result<()> {
    let ok = v.is_finite()
        && (if lo_open { v > lo } else { v >= lo })
        && (if hi_open { v < hi } else { v <= hi });
    if ok {
        Ok(())
    } else {
        let l = if lo_open { '(' } else { '[' };
        let h = if hi_open { ')' } else { ']' };
        Err(Error::config(
            field,
            format!("{v} is outside {l}{lo}, {hi}{h}"),
        ))
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::config("n_nodes", "need at least 2 nodes"));
        }
        if self.n_attrs == 0 {
            return Err(Error::config("n_attrs", "need at least one attribute"));
        }
        in_range("minority_ratio", self.minority_ratio, 0.0, 0.5, true, false)?;
        in_range("homophily", self.homophily, 0.0, 1.0, false, false)?;
        in_range(
            "avg_degree",
            self.avg_degree,
            0.0,
            f64::INFINITY,
            true,
            true,
        )?;
        in_range(
            "bias_strength",
            self.bias_strength,
            0.0,
            f64::INFINITY,
            false,
            true,
        )?;
        in_range("anomaly_ratio", self.anomaly_ratio, 0.0, 0.5, true, true)?;
        in_range(
            "anomaly_group_skew",
            self.anomaly_group_skew,
            0.0,
            1.0,
            false,
            false,
        )?;
        in_range(
            "structural_fraction",
            self.structural_fraction,
            0.0,
            1.0,
            false,
            false,
        )?;
        in_range(
            "cluster_affinity",
            self.cluster_affinity,
            0.0,
            1.0,
            false,
            false,
        )?;
        in_range(
            "cluster_scale",
            self.cluster_scale,
            0.0,
            f64::INFINITY,
            false,
            true,
        )?;
        in_range(
            "attr_noise",
            self.attr_noise,
            0.0,
            f64::INFINITY,
            false,
            true,
        )?;
        if self.clique_size < 3 {
            return Err(Error::config("clique_size", "must be at least 3"));
        }
        if self.clique_size > self.n_nodes {
            return Err(Error::config("clique_size", "exceeds n_nodes"));
        }
        if self.n_clusters == 0 {
            return Err(Error::config("n_clusters", "must be at least 1"));
        }
        if self.context_pool_size < 2 {
            return Err(Error::config("context_pool_size", "must be at least 2"));
        }
        if self.avg_degree >= self.n_nodes as f64 {
            return Err(Error::config("avg_degree", "must be below n_nodes"));
        }
        Ok(())
    }

    pub fn anomaly_count(&self) -> usize {
        (self.anomaly_ratio * self.n_nodes as f64).round() as usize
    }

    /// Probability that one anomaly is placed in the minority group.
    pub fn minority_anomaly_probability(&self, minority_share: f64) -> f64 {
        let k = self.anomaly_group_skew;
        if k <= 0.5 {
            2.0 * k * minority_share
        } else {
            minority_share + (2.0 * k - 1.0) * (1.0 - minority_share)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub structural_anomaly_ids: Vec<usize>,
    pub contextual_anomaly_ids: Vec<usize>,
    /// Anomaly counts indexed by sensitive value.
    pub per_group_anomaly_counts: [usize; 2],
}

impl InjectionReport {
    pub fn total(&self) -> usize {
        self.structural_anomaly_ids.len() + self.contextual_anomaly_ids.len()
    }
}

mod stream {
    pub const GROUPS: u64 = 1;
    pub const COMMUNITIES: u64 = 2;
    pub const EDGES: u64 = 3;
    pub const ATTRIBUTES: u64 = 4;
    pub const SELECTION: u64 = 5;
    pub const CONTEXTUAL: u64 = 6;
}

/// Independent generator for one stage of a seeded run.
pub fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng
}

pub fn generate_graph(cfg: &GeneratorConfig) -> Result<(AttributedGraph, InjectionReport)> {
    cfg.validate()?;
    let n = cfg.n_nodes;

    let mut rng = stage_rng(cfg.seed, stream::GROUPS);
    let sensitive: Vec<u8> = (0..n)
        .map(|_| u8::from(rng.random_bool(cfg.minority_ratio)))
        .collect();

    let mut rng = stage_rng(cfg.seed, stream::COMMUNITIES);
    let community: Vec<usize> = (0..n)
        .map(|_| rng.random_range(0..cfg.n_clusters))
        .collect();

    let edges = sample_edges(cfg, &sensitive, &community);

    let mut rng = stage_rng(cfg.seed, stream::ATTRIBUTES);
    let d = cfg.n_attrs;
    let mut direction: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);
    let centres: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|_| {
            (0..d)
                .map(|_| cfg.cluster_scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let shift = cfg.bias_strength * f64::from(sensitive[i]);
        for k in 0..d {
            let noise: f64 = rng.sample(StandardNormal);
            data.push(centres[community[i]][k] + shift * direction[k] + cfg.attr_noise * noise);
        }
    }
    let attributes = Tensor::from_vec(n, d, data)?;

    // anomaly selection with group skew
    let total = cfg.anomaly_count();
    let minority: Vec<usize> = (0..n).filter(|&i| sensitive[i] == 1).collect();
    let majority: Vec<usize> = (0..n).filter(|&i| sensitive[i] == 0).collect();
    let mut rng = stage_rng(cfg.seed, stream::SELECTION);
    let share = minority.len() as f64 / n as f64;
    let p_min = cfg.minority_anomaly_probability(share).clamp(0.0, 1.0);
    let drawn = Binomial::new(total as u64, p_min)
        .map_err(|e| Error::config("anomaly_group_skew", e.to_string()))?
        .sample(&mut rng) as usize;
    let mut from_min = drawn.min(minority.len());
    let from_maj = (total - from_min).min(majority.len());
    from_min = (total - from_maj).min(minority.len());
    if from_min + from_maj < total {
        return Err(Error::config("anomaly_ratio", "more anomalies than nodes"));
    }
    let mut chosen: Vec<usize> = index::sample(&mut rng, minority.len(), from_min)
        .into_iter()
        .map(|k| minority[k])
        .chain(
            index::sample(&mut rng, majority.len(), from_maj)
                .into_iter()
                .map(|k| majority[k]),
        )
        .collect();
    chosen.shuffle(&mut rng);

    let wanted_struct = (cfg.structural_fraction * total as f64).round() as usize;
    let n_struct = wanted_struct / cfg.clique_size * cfg.clique_size;
    let (struct_ids, ctx_ids) = chosen.split_at(n_struct);

    let mut edges = edges;
    plant_cliques(&mut edges, struct_ids, cfg.clique_size)?;
    let adjacency = build_csr(&edges, n)?;

    let mut rng = stage_rng(cfg.seed, stream::CONTEXTUAL);
    let attributes = swap_attributes(&attributes, ctx_ids, cfg.context_pool_size, &mut rng)?;

    let mut labels = vec![0u8; n];
    for &i in &chosen {
        labels[i] = 1;
    }
    let mut counts = [0usize; 2];
    for &i in &chosen {
        counts[usize::from(sensitive[i])] += 1;
    }
    let report = InjectionReport {
        structural_anomaly_ids: struct_ids.to_vec(),
        contextual_anomaly_ids: ctx_ids.to_vec(),
        per_group_anomaly_counts: counts,
    };
    let graph = AttributedGraph::new(adjacency, attributes, sensitive, Some(labels))?;
    Ok((graph, report))
}

fn sample_edges(
    cfg: &GeneratorConfig,
    sensitive: &[u8],
    community: &[usize],
) -> Vec<(usize, usize)> {
    let n = cfg.n_nodes;
    let mut rng = stage_rng(cfg.seed, stream::EDGES);
    let mut by_group: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut by_group_comm: Vec<[Vec<usize>; 2]> = vec![[Vec::new(), Vec::new()]; cfg.n_clusters];
    for i in 0..n {
        let g = usize::from(sensitive[i]);
        by_group[g].push(i);
        by_group_comm[community[i]][g].push(i);
    }
    let draws = (n as f64 * cfg.avg_degree / 2.0).round() as usize;
    let mut edges = Vec::with_capacity(draws);
    for _ in 0..draws {
        let u = rng.random_range(0..n);
        let own = usize::from(sensitive[u]);
        let mut target_group = if rng.random_bool(cfg.homophily) {
            own
        } else {
            1 - own
        };
        if by_group[target_group].is_empty() {
            target_group = own;
        }
        let local = &by_group_comm[community[u]][target_group];
        let pool = if !local.is_empty() && rng.random_bool(cfg.cluster_affinity) {
            local
        } else {
            &by_group[target_group]
        };
        let v = pool[rng.random_range(0..pool.len())];
        if u != v {
            edges.push((u, v));
        }
    }
    edges
}

/// Connects each consecutive run of `clique_size` ids into a clique.
fn plant_cliques(edges: &mut Vec<(usize, usize)>, ids: &[usize], clique_size: usize) -> Result<()> {
    if clique_size < 2 || !ids.len().is_multiple_of(clique_size) {
        return Err(Error::Precondition(format!(
            "{} clique members do not split into cliques of {clique_size}",
            ids.len()
        )));
    }
    for clique in ids.chunks(clique_size) {
        for (a, &i) in clique.iter().enumerate() {
            for &j in &clique[a + 1..] {
                edges.push((i, j));
            }
        }
    }
    Ok(())
}

/// Replaces each listed node's attributes by the farthest of `pool_size`
/// random candidates, measured against the unmodified attributes.
fn swap_attributes(
    original: &Tensor,
    ids: &[usize],
    pool_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let n = original.rows();
    if pool_size < 2 {
        return Err(Error::Precondition("pool_size must be at least 2".into()));
    }
    let mut out = original.clone();
    let d = original.cols();
    for &i in ids {
        let pool = pool_size.min(n - 1);
        let mut best = (f64::NEG_INFINITY, i);
        for k in index::sample(rng, n - 1, pool) {
            let j = if k >= i { k + 1 } else { k };
            let dist: f64 = original
                .row_slice(i)
                .iter()
                .zip(original.row_slice(j))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            if dist > best.0 {
                best = (dist, j);
            }
        }
        let src = original.row_slice(best.1).to_vec();
        out.data_mut()[i * d..(i + 1) * d].copy_from_slice(&src);
    }
    Ok(out)
}

fn unlabelled_choice(
    g: &AttributedGraph,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let free: Vec<usize> = (0..g.n_nodes())
        .filter(|&i| g.labels().is_none_or(|y| y[i] == 0))
        .collect();
    if count > free.len() {
        return Err(Error::Precondition(format!(
            "need {count} nodes but only {} are unlabelled",
            free.len()
        )));
    }
    Ok(index::sample(rng, free.len(), count)
        .into_iter()
        .map(|k| free[k])
        .collect())
}

fn mark(g: AttributedGraph, ids: &[usize]) -> Result<AttributedGraph> {
    let mut y = g
        .labels()
        .map_or_else(|| vec![0u8; g.n_nodes()], <[u8]>::to_vec);
    for &i in ids {
        y[i] = 1;
    }
    g.with_labels(Some(y))
}

/// Picks `count` unlabelled nodes, wires them into `count / clique_size`
/// cliques and labels them anomalous.
pub fn inject_structural_anomalies(
    g: &AttributedGraph,
    count: usize,
    clique_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(AttributedGraph, Vec<usize>)> {
    if count > g.n_nodes() {
        return Err(Error::Precondition(format!(
            "{count} clique members requested from {} nodes",
            g.n_nodes()
        )));
    }
    let ids = unlabelled_choice(g, count, rng)?;
    let mut edges = g.edges();
    plant_cliques(&mut edges, &ids, clique_size)?;
    let adjacency = build_csr(&edges, g.n_nodes())?;
    let out = AttributedGraph::new(
        adjacency,
        g.attributes().clone(),
        g.sensitive().to_vec(),
        g.labels().map(<[u8]>::to_vec),
    )?;
    Ok((mark(out, &ids)?, ids))
}

/// Picks `count` unlabelled nodes, swaps in far-away attribute rows and
/// labels them anomalous.
pub fn inject_contextual_anomalies(
    g: &AttributedGraph,
    count: usize,
    pool_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(AttributedGraph, Vec<usize>)> {
    if pool_size < 2 {
        return Err(Error::Precondition("pool_size must be at least 2".into()));
    }
    let ids = unlabelled_choice(g, count, rng)?;
    let attributes = swap_attributes(g.attributes(), &ids, pool_size, rng)?;
    let out = AttributedGraph::new(
        g.adjacency().clone(),
        attributes,
        g.sensitive().to_vec(),
        g.labels().map(<[u8]>::to_vec),
    )?;
    Ok((mark(out, &ids)?, ids))
}

/// Share of edges joining two nodes of the same group.
pub fn realized_homophily(g: &AttributedGraph) -> f64 {
    let edges = g.edges();
    if edges.is_empty() {
        return 0.0;
    }
    let s = g.sensitive();
    edges.iter().filter(|&&(i, j)| s[i] == s[j]).count() as f64 / edges.len() as f64
}
