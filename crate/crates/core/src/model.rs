//! Model parameters and seeded samplers for block-model graphs and
//! two-type Poisson branching trees.

use rand::distributions::Distribution;
use rand::seq::index::sample as index_sample;
use rand::Rng as _;
use rand_distr::{Binomial, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

/// Default cap on materialized tree size; exceeding it is a reported error.
pub const DEFAULT_TREE_NODE_CAP: usize = 10_000_000;

/// All scalar model quantities.
///
/// Native coordinates are `(n, rho, b, mu, nu)` with the derived edge rates
/// `a = b + mu sqrt(b)` and `c = b + nu sqrt(b)`; a pair of vertices is
/// connected with probability `a/n`, `c/n`, or `b/n` according to whether
/// both lie in the first cluster, both in the second, or one in each.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: u64,
    pub rho: f64,
    pub b: f64,
    pub mu: f64,
    pub nu: f64,
    /// First-cluster edge rate, `b + mu sqrt(b)`.
    pub a: f64,
    /// Second-cluster edge rate, `b + nu sqrt(b)`.
    pub c: f64,
    /// Prior log-odds `phi = log(rho / (1 - rho)) / 2`.
    pub phi: f64,
    /// Additive recursion coefficient
    /// `theta = rho (mu - nu)^2 / 8 + (1 - 2 rho) nu^2 / 4`.
    pub theta: f64,
    /// Multiplicative recursion coefficient `lambda = rho (mu + nu)^2 / 8`.
    pub lambda: f64,
    /// Expected degree of a first-cluster vertex, `rho a + (1 - rho) b`.
    pub d_plus: f64,
    /// Expected degree of a second-cluster vertex, `rho b + (1 - rho) c`.
    pub d_minus: f64,
}

impl ModelParams {
    /// Mean of the two expected degrees.
    pub fn d_bar(&self) -> f64 {
        0.5 * (self.d_plus + self.d_minus)
    }

    /// Whether the parameters are in the symmetric regime `rho = 1/2`,
    /// `mu = nu` (equivalently `a = c`).
    pub fn is_symmetric(&self) -> bool {
        (self.rho - 0.5).abs() < 1e-12 && (self.mu - self.nu).abs() < 1e-12
    }

    /// Swaps the cluster roles: `rho -> 1 - rho`, `mu <-> nu`.
    ///
    /// The recursion map `theta + lambda h(v, phi)` is invariant under this
    /// swap, which lets every density-evolution evaluation run with
    /// `rho <= 1/2` (where `theta >= 0`).
    pub fn swapped(&self) -> ModelParams {
        derive_params(self.n, 1.0 - self.rho, self.b, self.nu, self.mu)
            .expect("swapping valid parameters preserves validity")
    }

    /// The canonical form used by density evolution: `rho <= 1/2`.
    pub fn canonical(&self) -> ModelParams {
        if self.rho > 0.5 {
            self.swapped()
        } else {
            *self
        }
    }
}

/// Derives the full parameter record from `(n, rho, b, mu, nu)`.
pub fn derive_params(n: u64, rho: f64, b: f64, mu: f64, nu: f64) -> Result<ModelParams> {
    if n < 1 {
        return Err(Error::EmptyGraph);
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::RhoOutOfRange(rho));
    }
    if !(b > 0.0) {
        return Err(Error::NonPositiveB(b));
    }
    let sqrt_b = b.sqrt();
    let a = b + mu * sqrt_b;
    let c = b + nu * sqrt_b;
    for (name, value) in [("a", a), ("c", c)] {
        if value < 0.0 {
            return Err(Error::NegativeEdgeRate { name, value });
        }
    }
    for (name, value) in [("a", a), ("b", b), ("c", c)] {
        if value > n as f64 {
            return Err(Error::EdgeRateExceedsN { name, value, n });
        }
    }
    let rho_bar = 1.0 - rho;
    Ok(ModelParams {
        n,
        rho,
        b,
        mu,
        nu,
        a,
        c,
        phi: 0.5 * (rho / rho_bar).ln(),
        theta: rho * (mu - nu).powi(2) / 8.0 + (1.0 - 2.0 * rho) * nu * nu / 4.0,
        lambda: rho * (mu + nu).powi(2) / 8.0,
        d_plus: rho * a + rho_bar * b,
        d_minus: rho * b + rho_bar * c,
    })
}

/// Derives parameters from the raw rates `(a, b, c)` instead of `(mu, nu)`.
pub fn derive_params_from_rates(n: u64, rho: f64, a: f64, b: f64, c: f64) -> Result<ModelParams> {
    if !(b > 0.0) {
        return Err(Error::NonPositiveB(b));
    }
    let sqrt_b = b.sqrt();
    derive_params(n, rho, b, (a - b) / sqrt_b, (c - b) / sqrt_b)
}

/// An undirected graph with ground-truth labels.
///
/// Adjacency is stored in CSR form with each neighbor list sorted
/// ascending, so traversal order (and therefore every downstream
/// floating-point reduction) is deterministic.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    offsets: Vec<usize>,
    adj: Vec<u32>,
    /// Ground-truth labels, one `+1`/`-1` entry per vertex.
    pub sigma: Vec<i8>,
    m: usize,
}

impl LabeledGraph {
    /// Builds a graph from an undirected edge list.
    ///
    /// Rejects self-loops, duplicate edges, out-of-range endpoints, and
    /// label vectors of the wrong length.
    pub fn from_edges(n: usize, sigma: Vec<i8>, edges: &[(u32, u32)]) -> Result<LabeledGraph> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        if sigma.len() != n {
            return Err(Error::LengthMismatch(sigma.len(), n));
        }
        if let Some(bad) = sigma.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::MalformedGraph(format!("label {bad} is not +1/-1")));
        }
        let mut degrees = vec![0usize; n];
        for &(u, v) in edges {
            if u == v {
                return Err(Error::MalformedGraph(format!("self-loop at {u}")));
            }
            if u as usize >= n || v as usize >= n {
                return Err(Error::MalformedGraph(format!(
                    "edge ({u}, {v}) outside 0..{n}"
                )));
            }
            degrees[u as usize] += 1;
            degrees[v as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degrees[i];
        }
        let mut adj = vec![0u32; offsets[n]];
        let mut cursor = offsets.clone();
        for &(u, v) in edges {
            adj[cursor[u as usize]] = v;
            cursor[u as usize] += 1;
            adj[cursor[v as usize]] = u;
            cursor[v as usize] += 1;
        }
        for i in 0..n {
            let slice = &mut adj[offsets[i]..offsets[i + 1]];
            slice.sort_unstable();
            if slice.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::MalformedGraph(format!(
                    "duplicate edge incident to {i}"
                )));
            }
        }
        Ok(LabeledGraph {
            offsets,
            adj,
            sigma,
            m: edges.len(),
        })
    }

    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    /// Undirected edge count.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.adj[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    /// Offset of vertex `u`'s neighbor slice inside the flat directed-edge
    /// array (used by the message-passing kernels).
    pub fn slot_range(&self, u: usize) -> std::ops::Range<usize> {
        self.offsets[u]..self.offsets[u + 1]
    }

    pub fn edge_list(&self) -> Vec<(u32, u32)> {
        let mut edges = Vec::with_capacity(self.m);
        for u in 0..self.n() {
            for &v in self.neighbors(u) {
                if (u as u32) < v {
                    edges.push((u as u32, v));
                }
            }
        }
        edges
    }

    /// Serializes to the documented JSON debug form
    /// `{n, m, sigma, edges: [[u, v], ...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.n(),
            "m": self.m(),
            "sigma": self.sigma,
            "edges": self.edge_list(),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<LabeledGraph> {
        #[derive(Deserialize)]
        struct GraphJson {
            n: usize,
            sigma: Vec<i8>,
            edges: Vec<(u32, u32)>,
        }
        let g: GraphJson = serde_json::from_value(value.clone())?;
        LabeledGraph::from_edges(g.n, g.sigma, &g.edges)
    }
}

/// Threshold below which edges are drawn pair by pair; above it, per-block
/// edge counts are drawn from the exact binomial and placed uniformly.
const PAIRWISE_SAMPLING_LIMIT: u64 = 1000;

/// Samples a labeled block-model graph.
///
/// Labels are independent `+1` with probability `rho`; each unordered pair
/// is connected independently with probability `a/n`, `c/n`, or `b/n` by
/// label pair. For `n <= 1000` this is literal pairwise Bernoulli sampling.
/// For larger `n`, the number of edges in each of the three label blocks is
/// drawn from the exact `Binomial(#pairs, rate/n)` law and that many
/// distinct pairs are placed uniformly at random (redrawing collisions),
/// which also yields independent pairs conditioned on the count.
pub fn sample_sbm(params: &ModelParams, seed: u64) -> Result<LabeledGraph> {
    let n = params.n as usize;
    let mut rng = rng_from_seed(seed);
    let mut sigma = vec![0i8; n];
    for s in sigma.iter_mut() {
        *s = if rng.gen::<f64>() < params.rho { 1 } else { -1 };
    }
    let mut edges: Vec<(u32, u32)> = Vec::new();
    if params.n <= PAIRWISE_SAMPLING_LIMIT {
        for u in 0..n {
            for v in (u + 1)..n {
                let rate = match (sigma[u], sigma[v]) {
                    (1, 1) => params.a,
                    (-1, -1) => params.c,
                    _ => params.b,
                };
                if rng.gen::<f64>() < rate / params.n as f64 {
                    edges.push((u as u32, v as u32));
                }
            }
        }
    } else {
        let plus: Vec<u32> = (0..n as u32).filter(|&i| sigma[i as usize] == 1).collect();
        let minus: Vec<u32> = (0..n as u32).filter(|&i| sigma[i as usize] == -1).collect();
        sample_within_block(&plus, params.a / params.n as f64, &mut rng, &mut edges);
        sample_within_block(&minus, params.c / params.n as f64, &mut rng, &mut edges);
        sample_cross_block(&plus, &minus, params.b / params.n as f64, &mut rng, &mut edges);
    }
    LabeledGraph::from_edges(n, sigma, &edges)
}

fn sample_within_block(ids: &[u32], p: f64, rng: &mut Rng, edges: &mut Vec<(u32, u32)>) {
    let k = ids.len() as u64;
    if k < 2 || p <= 0.0 {
        return;
    }
    let pairs = k * (k - 1) / 2;
    let count = Binomial::new(pairs, p.min(1.0))
        .expect("valid binomial")
        .sample(rng);
    let mut chosen: HashSet<(u32, u32)> = HashSet::with_capacity(count as usize);
    while (chosen.len() as u64) < count {
        let i = rng.gen_range(0..ids.len());
        let j = rng.gen_range(0..ids.len());
        if i == j {
            continue;
        }
        let (u, v) = (ids[i].min(ids[j]), ids[i].max(ids[j]));
        if chosen.insert((u, v)) {
            edges.push((u, v));
        }
    }
}

fn sample_cross_block(
    left: &[u32],
    right: &[u32],
    p: f64,
    rng: &mut Rng,
    edges: &mut Vec<(u32, u32)>,
) {
    if left.is_empty() || right.is_empty() || p <= 0.0 {
        return;
    }
    let pairs = left.len() as u64 * right.len() as u64;
    let count = Binomial::new(pairs, p.min(1.0))
        .expect("valid binomial")
        .sample(rng);
    let mut chosen: HashSet<(u32, u32)> = HashSet::with_capacity(count as usize);
    while (chosen.len() as u64) < count {
        let u = left[rng.gen_range(0..left.len())];
        let v = right[rng.gen_range(0..right.len())];
        if chosen.insert((u, v)) {
            edges.push((u, v));
        }
    }
}

/// A rooted two-type branching tree in breadth-first layout.
///
/// Children of a node occupy a contiguous index range and each depth level
/// is contiguous, so bottom-up sweeps are simple slice walks.
#[derive(Debug, Clone)]
pub struct GwTree {
    parents: Vec<u32>,
    tau: Vec<i8>,
    tau_tilde: Option<Vec<i8>>,
    child_start: Vec<u32>,
    level_offsets: Vec<u32>,
    sampled_depth: u32,
}

impl GwTree {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        false // there is always a root
    }

    /// Depth the sampler was asked to materialize (the tree itself may have
    /// died out earlier).
    pub fn sampled_depth(&self) -> u32 {
        self.sampled_depth
    }

    /// Deepest level that actually contains nodes.
    pub fn depth(&self) -> u32 {
        self.level_offsets.len() as u32 - 2
    }

    pub fn tau(&self, i: usize) -> i8 {
        self.tau[i]
    }

    pub fn taus(&self) -> &[i8] {
        &self.tau
    }

    pub fn tau_tilde(&self) -> Option<&[i8]> {
        self.tau_tilde.as_deref()
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        if i == 0 {
            None
        } else {
            Some(self.parents[i] as usize)
        }
    }

    pub fn children(&self, i: usize) -> std::ops::Range<usize> {
        self.child_start[i] as usize..self.child_start[i + 1] as usize
    }

    /// Index range of the nodes at exactly depth `d` (empty if the tree died
    /// out earlier).
    pub fn level(&self, d: u32) -> std::ops::Range<usize> {
        let d = d as usize;
        if d + 1 >= self.level_offsets.len() {
            return 0..0;
        }
        self.level_offsets[d] as usize..self.level_offsets[d + 1] as usize
    }

    pub fn node_depth(&self, i: usize) -> u32 {
        match self.level_offsets.binary_search(&(i as u32)) {
            Ok(d) => {
                // `i` is the first node of some level; find the level whose
                // range actually contains it (offsets can repeat when a
                // level is empty).
                let mut d = d;
                while d + 1 < self.level_offsets.len() && self.level_offsets[d + 1] as usize <= i {
                    d += 1;
                }
                d as u32
            }
            Err(d) => d as u32 - 1,
        }
    }

    /// Serializes to the documented JSON debug form.
    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = (0..self.len())
            .map(|i| {
                serde_json::json!({
                    "parent": self.parent(i),
                    "tau": self.tau[i],
                    "tau_tilde": self.tau_tilde.as_ref().map(|t| t[i]),
                    "depth": self.node_depth(i),
                })
            })
            .collect();
        serde_json::json!({
            "sampled_depth": self.sampled_depth,
            "nodes": nodes,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<GwTree> {
        #[derive(Deserialize)]
        struct NodeJson {
            parent: Option<u32>,
            tau: i8,
            tau_tilde: Option<i8>,
        }
        #[derive(Deserialize)]
        struct TreeJson {
            sampled_depth: u32,
            nodes: Vec<NodeJson>,
        }
        let t: TreeJson = serde_json::from_value(value.clone())?;
        if t.nodes.is_empty() || t.nodes[0].parent.is_some() {
            return Err(Error::MalformedGraph(
                "tree json must start with a parentless root".into(),
            ));
        }
        let taus: Vec<i8> = t.nodes.iter().map(|n| n.tau).collect();
        let parents: Vec<Option<usize>> = t.nodes.iter().map(|n| n.parent.map(|p| p as usize)).collect();
        let tilde_count = t.nodes.iter().filter(|n| n.tau_tilde.is_some()).count();
        let tau_tilde = if tilde_count == 0 {
            None
        } else if tilde_count == t.nodes.len() {
            Some(t.nodes.iter().map(|n| n.tau_tilde.unwrap()).collect())
        } else {
            return Err(Error::MalformedGraph(
                "tau_tilde must be present for all nodes or none".into(),
            ));
        };
        let mut tree = GwTree::from_parents(parents, taus, t.sampled_depth)?;
        tree.tau_tilde = tau_tilde;
        Ok(tree)
    }

    /// Builds a tree from parent pointers (parents must precede children).
    pub fn from_parents(
        parents: Vec<Option<usize>>,
        taus: Vec<i8>,
        sampled_depth: u32,
    ) -> Result<GwTree> {
        let n = parents.len();
        if n == 0 || taus.len() != n {
            return Err(Error::LengthMismatch(taus.len(), n));
        }
        let mut depth = vec![0u32; n];
        let mut child_count = vec![0u32; n];
        for i in 1..n {
            let p = parents[i].ok_or_else(|| {
                Error::MalformedGraph(format!("node {i} has no parent"))
            })?;
            if p >= i {
                return Err(Error::MalformedGraph(
                    "parents must precede children in index order".into(),
                ));
            }
            depth[i] = depth[p] + 1;
            child_count[p] += 1;
        }
        if depth.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::MalformedGraph(
                "nodes must be laid out level by level".into(),
            ));
        }
        for i in 2..n {
            if depth[i] == depth[i - 1] && parents[i] < parents[i - 1] {
                return Err(Error::MalformedGraph(
                    "children must be grouped by parent within each level".into(),
                ));
            }
        }
        let max_depth = *depth.last().unwrap_or(&0);
        // In a level-ordered layout the children of node i form a contiguous
        // block starting right after the blocks of nodes 0..i; the first
        // child block begins at index 1 (after the root).
        let mut child_start = vec![1u32; n + 1];
        for i in 0..n {
            child_start[i + 1] = child_start[i] + child_count[i];
        }
        let mut level_offsets = vec![0u32; max_depth as usize + 2];
        for &d in &depth {
            level_offsets[d as usize + 1] += 1;
        }
        for d in 0..(level_offsets.len() - 1) {
            level_offsets[d + 1] += level_offsets[d];
        }
        Ok(GwTree {
            parents: parents
                .iter()
                .map(|p| p.map(|x| x as u32).unwrap_or(u32::MAX))
                .collect(),
            tau: taus,
            tau_tilde: None,
            child_start,
            level_offsets,
            sampled_depth: sampled_depth.max(max_depth),
        })
    }
}

/// Samples a two-type Poisson branching tree to the given depth with the
/// default node cap.
///
/// A `+` node spawns `Pois(rho a)` children labeled `+` and
/// `Pois((1-rho) b)` children labeled `-`; a `-` node spawns `Pois(rho b)`
/// and `Pois((1-rho) c)`. The root label is drawn `+` with probability
/// `rho` unless fixed by `root_label`.
pub fn sample_gw_tree(
    params: &ModelParams,
    depth: u32,
    root_label: Option<i8>,
    seed: u64,
) -> Result<GwTree> {
    sample_gw_tree_with_cap(params, depth, root_label, seed, DEFAULT_TREE_NODE_CAP)
}

/// [`sample_gw_tree`] with an explicit node cap.
pub fn sample_gw_tree_with_cap(
    params: &ModelParams,
    depth: u32,
    root_label: Option<i8>,
    seed: u64,
    node_cap: usize,
) -> Result<GwTree> {
    let mut rng = rng_from_seed(seed);
    let root = match root_label {
        Some(l) => l,
        None => {
            if rng.gen::<f64>() < params.rho {
                1
            } else {
                -1
            }
        }
    };
    let offspring = OffspringLaw::new(params);
    let mut parents: Vec<u32> = vec![u32::MAX];
    let mut tau: Vec<i8> = vec![root];
    // child_start[i] is pushed when node i is processed; nodes of the final
    // level are padded afterwards.
    let mut child_start: Vec<u32> = Vec::new();
    let mut level_offsets: Vec<u32> = vec![0, 1];
    let mut level_start = 0usize;
    for d in 0..depth {
        let level_end = tau.len();
        for i in level_start..level_end {
            child_start.push(tau.len() as u32);
            let (l, m) = offspring.sample(tau[i], &mut rng);
            if tau.len() + l as usize + m as usize > node_cap {
                return Err(Error::TreeTooLarge {
                    cap: node_cap,
                    depth: d + 1,
                });
            }
            for _ in 0..l {
                parents.push(i as u32);
                tau.push(1);
            }
            for _ in 0..m {
                parents.push(i as u32);
                tau.push(-1);
            }
        }
        if tau.len() == level_end {
            break; // extinct
        }
        level_offsets.push(tau.len() as u32);
        level_start = level_end;
    }
    // Nodes of the last materialized level have no recorded children.
    while child_start.len() < tau.len() + 1 {
        child_start.push(tau.len() as u32);
    }
    Ok(GwTree {
        parents,
        tau,
        tau_tilde: None,
        child_start,
        level_offsets,
        sampled_depth: depth,
    })
}

/// Poisson offspring rates per (parent label, child label).
pub struct OffspringLaw {
    plus_parent: (Poisson<f64>, Poisson<f64>),
    minus_parent: (Poisson<f64>, Poisson<f64>),
    zero_plus: (bool, bool),
    zero_minus: (bool, bool),
}

impl OffspringLaw {
    pub fn new(params: &ModelParams) -> OffspringLaw {
        let rho = params.rho;
        let rho_bar = 1.0 - rho;
        let rates = [
            rho * params.a,
            rho_bar * params.b,
            rho * params.b,
            rho_bar * params.c,
        ];
        let mk = |r: f64| Poisson::new(r.max(f64::MIN_POSITIVE)).expect("positive rate");
        OffspringLaw {
            plus_parent: (mk(rates[0]), mk(rates[1])),
            minus_parent: (mk(rates[2]), mk(rates[3])),
            zero_plus: (rates[0] == 0.0, rates[1] == 0.0),
            zero_minus: (rates[2] == 0.0, rates[3] == 0.0),
        }
    }

    /// Draws `(plus_children, minus_children)` for a node with label `tau`.
    pub fn sample(&self, tau: i8, rng: &mut Rng) -> (u64, u64) {
        let ((dp, dm), (zp, zm)) = if tau == 1 {
            (&self.plus_parent, self.zero_plus)
        } else {
            (&self.minus_parent, self.zero_minus)
        };
        let l = if zp { 0 } else { dp.sample(rng) as u64 };
        let m = if zm { 0 } else { dm.sample(rng) as u64 };
        (l, m)
    }
}

/// Attaches independently flipped labels: `tau_tilde = tau` with probability
/// `1 - alpha`, else `-tau`.
pub fn attach_noisy_labels(mut tree: GwTree, alpha: f64, seed: u64) -> Result<GwTree> {
    if !(0.0..=0.5).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let mut rng = rng_from_seed(seed);
    let tilde = tree
        .tau
        .iter()
        .map(|&t| if rng.gen::<f64>() < alpha { -t } else { t })
        .collect();
    tree.tau_tilde = Some(tilde);
    Ok(tree)
}

/// Picks `k` distinct vertex ids uniformly (deterministic given the rng).
pub fn sample_distinct(n: usize, k: usize, rng: &mut Rng) -> Vec<u32> {
    let mut ids: Vec<u32> = index_sample(rng, n, k.min(n))
        .into_iter()
        .map(|i| i as u32)
        .collect();
    ids.sort_unstable();
    ids
}
