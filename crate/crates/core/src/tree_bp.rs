//! Exact likelihood-ratio recursions on branching trees.
//!
//! For a node `i` with children `j`, every boundary regime satisfies the
//! same bottom-up recursion
//!
//! ```text
//! value_i^{s+1} = (-d_+ + d_-)/2 + sum_j F(value_j^s)
//! ```
//!
//! and differs only in the level-0 initialization at the depth-`t`
//! boundary: `+/-inf` by the true label when the boundary is observed
//! exactly, `0` when it is hidden, and `+/- log((1-alpha)/alpha)/2` by the
//! noisy label when an `alpha`-noisy version is observed. The root's
//! level-`t` value is half the log likelihood ratio of the observation
//! given the root label, with no approximation.
//!
//! Monte-Carlo error estimation does not materialize trees: the recursion
//! is evaluated while sampling, and levels 0 and 1 collapse to closed
//! forms in the offspring counts, so a depth-`t` tree costs the size of
//! its depth-`(t-1)` interior. Tree structure and label noise are drawn
//! from separate seeded streams, which keeps the sampled forest identical
//! across noise levels.

use rand::Rng as _;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_bp::{f_transfer, message_base};
use crate::model::{GwTree, LabeledGraph, ModelParams, OffspringLaw, DEFAULT_TREE_NODE_CAP};
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// What the estimator observes at the depth-`t` boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundaryRegime {
    /// True labels revealed at the boundary.
    Exact,
    /// Only the tree structure is observed.
    Hidden,
    /// An independently flipped copy of the boundary labels is revealed;
    /// `alpha = 0` routes to [`BoundaryRegime::Exact`] (its analytic
    /// limit), `alpha = 1/2` coincides with [`BoundaryRegime::Hidden`].
    Noisy { alpha: f64 },
}

/// Per-node recursion values for one regime.
///
/// `values[i]` is node `i`'s level-`(t - depth(i))` value; index 0 (the
/// root) holds the level-`t` log likelihood ratio. Only nodes of depth at
/// most `t` are included.
#[derive(Debug, Clone)]
pub struct TreeBeliefs {
    pub regime: BoundaryRegime,
    pub t: u32,
    pub values: Vec<f64>,
}

fn boundary_init(tree: &GwTree, regime: BoundaryRegime, i: usize) -> Result<f64> {
    Ok(match regime {
        BoundaryRegime::Exact => {
            if tree.tau(i) == 1 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        }
        BoundaryRegime::Hidden => 0.0,
        BoundaryRegime::Noisy { alpha } => {
            let tilde = tree.tau_tilde().ok_or(Error::MissingNoisyLabels)?;
            let c = 0.5 * ((1.0 - alpha) / alpha).ln();
            tilde[i] as f64 * c
        }
    })
}

fn validate_regime(regime: BoundaryRegime) -> Result<BoundaryRegime> {
    if let BoundaryRegime::Noisy { alpha } = regime {
        if !(0.0..=0.5).contains(&alpha) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
        if alpha == 0.0 {
            return Ok(BoundaryRegime::Exact);
        }
    }
    Ok(regime)
}

/// Evaluates the recursion bottom-up on a materialized tree.
pub fn belief_table(
    tree: &GwTree,
    params: &ModelParams,
    t: u32,
    regime: BoundaryRegime,
) -> Result<TreeBeliefs> {
    let regime = validate_regime(regime)?;
    if tree.sampled_depth() < t {
        return Err(Error::TreeTooShallow {
            depth: tree.sampled_depth(),
            t,
        });
    }
    let boundary = tree.level(t);
    let n_upto = if boundary.is_empty() && t > tree.depth() {
        tree.len()
    } else {
        boundary.end
    };
    let mut values = vec![0.0f64; n_upto];
    for i in boundary {
        values[i] = boundary_init(tree, regime, i)?;
    }
    let base = message_base(params);
    for d in (0..t).rev() {
        for i in tree.level(d) {
            let mut acc = base;
            for j in tree.children(i) {
                acc += f_transfer(values[j], params);
            }
            values[i] = acc;
        }
    }
    Ok(TreeBeliefs { regime, t, values })
}

/// The root's level-`t` log likelihood ratio (half the log ratio of the
/// observation probability under root label `+` versus `-`).
pub fn exact_llr(
    tree: &GwTree,
    params: &ModelParams,
    t: u32,
    regime: BoundaryRegime,
) -> Result<f64> {
    Ok(belief_table(tree, params, t, regime)?.values[0])
}

/// Largest number of free (summed-over) labels the brute-force oracle
/// accepts.
const BRUTE_FORCE_LABEL_CAP: usize = 20;

/// Brute-force likelihood-ratio oracle: sums the exact joint probability
/// of the observation over every assignment of the unobserved labels.
///
/// Offspring probabilities are evaluated in log space with exact integer
/// factorials. Feasible only for small trees; the evaluated recursion must
/// agree with this to floating-point accuracy.
pub fn brute_force_llr(
    tree: &GwTree,
    params: &ModelParams,
    t: u32,
    regime: BoundaryRegime,
) -> Result<f64> {
    let regime = validate_regime(regime)?;
    if tree.sampled_depth() < t {
        return Err(Error::TreeTooShallow {
            depth: tree.sampled_depth(),
            t,
        });
    }
    let boundary = tree.level(t);
    let n_upto = if boundary.is_empty() && t > tree.depth() {
        tree.len()
    } else {
        boundary.end
    };
    let node_depth: Vec<u32> = (0..n_upto).map(|i| tree.node_depth(i)).collect();
    // Free labels: everything except the root, and except the boundary in
    // the exact regime.
    let free: Vec<usize> = (1..n_upto)
        .filter(|&i| match regime {
            BoundaryRegime::Exact => node_depth[i] < t,
            _ => true,
        })
        .collect();
    if free.len() > BRUTE_FORCE_LABEL_CAP {
        return Err(Error::BruteForceTooLarge {
            cap: BRUTE_FORCE_LABEL_CAP,
            got: free.len(),
        });
    }
    let tilde = match regime {
        BoundaryRegime::Noisy { .. } => Some(
            tree.tau_tilde()
                .ok_or(Error::MissingNoisyLabels)?
                .to_vec(),
        ),
        _ => None,
    };

    let rho = params.rho;
    let rho_bar = 1.0 - rho;
    let ln_rate = |parent: i8, child: i8| -> f64 {
        match (parent, child) {
            (1, 1) => (rho * params.a).ln(),
            (1, -1) => (rho_bar * params.b).ln(),
            (-1, 1) => (rho * params.b).ln(),
            _ => (rho_bar * params.c).ln(),
        }
    };
    let ln_factorial = |n: usize| -> f64 {
        (1..=n).map(|k| (k as f64).ln()).sum()
    };

    let mut labels: Vec<i8> = (0..n_upto)
        .map(|i| match regime {
            BoundaryRegime::Exact if node_depth[i] == t => tree.tau(i),
            _ => tree.tau(i), // placeholder; free labels overwritten below
        })
        .collect();

    let mut log_terms_plus: Vec<f64> = Vec::new();
    let mut log_terms_minus: Vec<f64> = Vec::new();
    for root_label in [1i8, -1i8] {
        labels[0] = root_label;
        let sink = if root_label == 1 {
            &mut log_terms_plus
        } else {
            &mut log_terms_minus
        };
        for mask in 0u64..(1u64 << free.len()) {
            for (bit, &i) in free.iter().enumerate() {
                labels[i] = if mask >> bit & 1 == 1 { 1 } else { -1 };
            }
            let mut lw = 0.0f64;
            for i in 0..n_upto {
                if node_depth[i] < t {
                    // Offspring factor: exp(-d_tau) * prod(rates) / N!.
                    let d = if labels[i] == 1 {
                        params.d_plus
                    } else {
                        params.d_minus
                    };
                    lw -= d;
                    let children = tree.children(i);
                    lw -= ln_factorial(children.len());
                    for j in children {
                        lw += ln_rate(labels[i], labels[j]);
                    }
                } else if let (BoundaryRegime::Noisy { alpha }, Some(tilde)) = (regime, &tilde) {
                    lw += if labels[i] == tilde[i] {
                        (1.0 - alpha).ln()
                    } else {
                        alpha.ln()
                    };
                }
            }
            sink.push(lw);
        }
    }
    Ok(0.5 * (log_sum_exp(&log_terms_plus) - log_sum_exp(&log_terms_minus)))
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

/// Converts an acyclic graph into a tree rooted at `root` (BFS order).
///
/// The conversion is complete — every vertex and edge is materialized — so
/// the result is valid for evaluation at any depth.
pub fn tree_from_graph(graph: &LabeledGraph, root: u32) -> Result<GwTree> {
    let n = graph.n();
    let mut order: Vec<u32> = Vec::with_capacity(n);
    let mut parent_of: Vec<Option<usize>> = Vec::with_capacity(n);
    let mut position = vec![usize::MAX; n];
    order.push(root);
    parent_of.push(None);
    position[root as usize] = 0;
    let mut head = 0usize;
    while head < order.len() {
        let v = order[head];
        for &w in graph.neighbors(v as usize) {
            if position[w as usize] == usize::MAX {
                position[w as usize] = order.len();
                order.push(w);
                parent_of.push(Some(head));
            } else if parent_of[head] != Some(position[w as usize]) {
                return Err(Error::MalformedGraph(
                    "graph contains a cycle; not a tree".into(),
                ));
            }
        }
        head += 1;
    }
    if order.len() != n {
        return Err(Error::MalformedGraph(
            "graph is disconnected; not a tree".into(),
        ));
    }
    let taus: Vec<i8> = order.iter().map(|&v| graph.sigma[v as usize]).collect();
    GwTree::from_parents(parent_of, taus, u32::MAX)
}

/// Monte-Carlo estimates of the three boundary-regime error probabilities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TreeErrorReport {
    /// Exact-boundary MAP error.
    pub p_star: f64,
    /// Hidden-boundary MAP error.
    pub q_star: f64,
    /// Noisy-boundary MAP error at `alpha`.
    pub q_tilde: f64,
    pub alpha: f64,
    pub se_p_star: f64,
    pub se_q_star: f64,
    pub se_q_tilde: f64,
    pub trials: u64,
}

/// Fused sampler-evaluator context.
struct LlrSampler<'a> {
    params: &'a ModelParams,
    offspring: OffspringLaw,
    base: f64,
    f_plus_inf: f64,
    f_minus_inf: f64,
    f_zero: f64,
    alpha: f64,
    f_c_alpha: f64,
    f_neg_c_alpha: f64,
    node_cap: u64,
}

impl<'a> LlrSampler<'a> {
    fn new(params: &'a ModelParams, alpha: f64) -> LlrSampler<'a> {
        let c_alpha = 0.5 * ((1.0 - alpha) / alpha).ln();
        LlrSampler {
            params,
            offspring: OffspringLaw::new(params),
            base: message_base(params),
            f_plus_inf: f_transfer(f64::INFINITY, params),
            f_minus_inf: f_transfer(f64::NEG_INFINITY, params),
            f_zero: f_transfer(0.0, params),
            alpha,
            f_c_alpha: f_transfer(c_alpha, params),
            f_neg_c_alpha: f_transfer(-c_alpha, params),
            node_cap: DEFAULT_TREE_NODE_CAP as u64,
        }
    }

    fn binomial(n: u64, p: f64, rng: &mut Rng) -> u64 {
        if n == 0 || p <= 0.0 {
            return 0;
        }
        if p >= 1.0 {
            return n;
        }
        Binomial::new(n, p).expect("valid binomial").sample(rng)
    }

    /// Samples a subtree of a node with label `tau` and evaluates its
    /// level-`s` values `(exact, hidden, noisy)` for `s >= 1`.
    fn eval(
        &self,
        tau: i8,
        s: u32,
        tree_rng: &mut Rng,
        noise_rng: &mut Rng,
        budget: &mut u64,
    ) -> Result<(f64, f64, f64)> {
        let (l, m) = self.offspring.sample(tau, tree_rng);
        if *budget < l + m {
            return Err(Error::TreeTooLarge {
                cap: self.node_cap as usize,
                depth: s,
            });
        }
        *budget -= l + m;
        if s == 1 {
            // Level-0 children contribute closed forms: exact boundaries
            // send F(+/-inf) by true label, hidden send F(0), noisy send
            // F(+/-c_alpha) with binomially many flips.
            let exact =
                self.base + l as f64 * self.f_plus_inf + m as f64 * self.f_minus_inf;
            let hidden = self.base + (l + m) as f64 * self.f_zero;
            let keep_plus = Self::binomial(l, 1.0 - self.alpha, noise_rng);
            let flip_plus = Self::binomial(m, self.alpha, noise_rng);
            let tilde_plus = keep_plus + flip_plus;
            let noisy = self.base
                + tilde_plus as f64 * self.f_c_alpha
                + (l + m - tilde_plus) as f64 * self.f_neg_c_alpha;
            return Ok((exact, hidden, noisy));
        }
        let mut exact = self.base;
        let mut hidden = self.base;
        let mut noisy = self.base;
        for _ in 0..l {
            let (e, h, nz) = self.eval(1, s - 1, tree_rng, noise_rng, budget)?;
            exact += f_transfer(e, self.params);
            hidden += f_transfer(h, self.params);
            noisy += f_transfer(nz, self.params);
        }
        for _ in 0..m {
            let (e, h, nz) = self.eval(-1, s - 1, tree_rng, noise_rng, budget)?;
            exact += f_transfer(e, self.params);
            hidden += f_transfer(h, self.params);
            noisy += f_transfer(nz, self.params);
        }
        Ok((exact, hidden, noisy))
    }

    /// Root LLR triple for a tree with the given root label.
    fn root_llrs(
        &self,
        root: i8,
        t: u32,
        tree_rng: &mut Rng,
        noise_rng: &mut Rng,
    ) -> Result<(f64, f64, f64)> {
        if t == 0 {
            // The root itself is the boundary.
            let exact = if root == 1 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            let c_alpha = 0.5 * ((1.0 - self.alpha) / self.alpha).ln();
            let flipped = noise_rng.gen::<f64>() < self.alpha;
            let tilde = if flipped { -root } else { root };
            return Ok((exact, 0.0, tilde as f64 * c_alpha));
        }
        let mut budget = self.node_cap;
        self.eval(root, t, tree_rng, noise_rng, &mut budget)
    }
}

/// Estimates the MAP error probabilities `p*` (exact boundary), `q*`
/// (hidden boundary), and `q~(alpha)` (noisy boundary) by sampling
/// `trials` trees with root label drawn from `(rho, 1-rho)`, thresholding
/// each regime's root LLR at `-phi`, and averaging the error indicators.
///
/// All three regimes are evaluated on the same sampled tree; reported
/// standard errors are binomial.
pub fn estimate_tree_errors(
    params: &ModelParams,
    t: u32,
    alpha: f64,
    trials: u64,
    seed: u64,
) -> Result<TreeErrorReport> {
    if trials < 1 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if !(0.0..=0.5).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let sampler = LlrSampler::new(params, alpha);
    let threshold = -params.phi;
    let counts = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<(u64, u64, u64)> {
            let mut tree_rng = rng_from_seed(derive_seed(seed, 2 * i));
            let mut noise_rng = rng_from_seed(derive_seed(seed, 2 * i + 1));
            let root: i8 = if tree_rng.gen::<f64>() < params.rho {
                1
            } else {
                -1
            };
            let (e, h, nz) = sampler.root_llrs(root, t, &mut tree_rng, &mut noise_rng)?;
            let decide = |llr: f64| -> i8 {
                if llr >= threshold {
                    1
                } else {
                    -1
                }
            };
            Ok((
                (decide(e) != root) as u64,
                (decide(h) != root) as u64,
                (decide(nz) != root) as u64,
            ))
        })
        .try_reduce(
            || (0, 0, 0),
            |a, b| Ok((a.0 + b.0, a.1 + b.1, a.2 + b.2)),
        )?;
    let n = trials as f64;
    let rate = |c: u64| c as f64 / n;
    let se = |p: f64| (p * (1.0 - p) / n).sqrt();
    let (p_star, q_star, q_tilde) = (rate(counts.0), rate(counts.1), rate(counts.2));
    Ok(TreeErrorReport {
        p_star,
        q_star,
        q_tilde,
        alpha,
        se_p_star: se(p_star),
        se_q_star: se(q_star),
        se_q_tilde: se(q_tilde),
        trials,
    })
}

/// Samples root LLR values for one regime, conditioned on the root label.
pub fn llr_samples(
    params: &ModelParams,
    t: u32,
    regime: BoundaryRegime,
    root_label: i8,
    trials: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    let regime = validate_regime(regime)?;
    let alpha = match regime {
        BoundaryRegime::Noisy { alpha } => alpha,
        _ => 0.25, // unused by the selected regime
    };
    let sampler = LlrSampler::new(params, alpha);
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut tree_rng = rng_from_seed(derive_seed(seed, 2 * i));
            let mut noise_rng = rng_from_seed(derive_seed(seed, 2 * i + 1));
            let (e, h, nz) =
                sampler.root_llrs(root_label, t, &mut tree_rng, &mut noise_rng)?;
            Ok(match regime {
                BoundaryRegime::Exact => e,
                BoundaryRegime::Hidden => h,
                BoundaryRegime::Noisy { .. } => nz,
            })
        })
        .collect()
}

/// Monte-Carlo check of the change-of-measure identity
/// `E[g(LLR) | root = -] = E[g(LLR) e^{-2 LLR} | root = +]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChangeOfMeasureReport {
    /// Mean of `e^{-2 Gamma}` over `+`-rooted trees; exactly 1 in
    /// expectation.
    pub exp_mean: f64,
    pub exp_se: f64,
    /// `|exp_mean - 1| / exp_se`.
    pub exp_deviation_sigmas: f64,
    /// Direct estimate of `E[tanh(Gamma + phi) | root = -]`.
    pub tanh_direct: f64,
    /// Transformed estimate `E[tanh(Gamma + phi) e^{-2 Gamma} | root = +]`.
    pub tanh_transformed: f64,
    pub tanh_combined_se: f64,
    /// `|tanh_direct - tanh_transformed| / tanh_combined_se`.
    pub tanh_deviation_sigmas: f64,
    pub trials: u64,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

fn deviation(diff: f64, se: f64) -> f64 {
    if se == 0.0 {
        if diff.abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff.abs() / se
    }
}

/// Estimates both sides of the change-of-measure identity with hidden-
/// boundary LLR samples conditioned on each root label.
pub fn change_of_measure_check(
    params: &ModelParams,
    t: u32,
    trials: u64,
    seed: u64,
) -> Result<ChangeOfMeasureReport> {
    let plus = llr_samples(
        params,
        t,
        BoundaryRegime::Hidden,
        1,
        trials,
        derive_seed(seed, 1),
    )?;
    let minus = llr_samples(
        params,
        t,
        BoundaryRegime::Hidden,
        -1,
        trials,
        derive_seed(seed, 2),
    )?;
    let exp_terms: Vec<f64> = plus.iter().map(|&z| (-2.0 * z).exp()).collect();
    let (exp_mean, exp_se) = mean_and_se(&exp_terms);
    let direct_terms: Vec<f64> = minus.iter().map(|&y| (y + params.phi).tanh()).collect();
    let transformed_terms: Vec<f64> = plus
        .iter()
        .map(|&z| (z + params.phi).tanh() * (-2.0 * z).exp())
        .collect();
    let (tanh_direct, se_d) = mean_and_se(&direct_terms);
    let (tanh_transformed, se_t) = mean_and_se(&transformed_terms);
    let combined = (se_d * se_d + se_t * se_t).sqrt();
    Ok(ChangeOfMeasureReport {
        exp_mean,
        exp_se,
        exp_deviation_sigmas: deviation(exp_mean - 1.0, exp_se),
        tanh_direct,
        tanh_transformed,
        tanh_combined_se: combined,
        tanh_deviation_sigmas: deviation(tanh_direct - tanh_transformed, combined),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{attach_noisy_labels, derive_params, sample_gw_tree};

    fn params(rho: f64, b: f64, mu: f64, nu: f64) -> ModelParams {
        derive_params(100_000, rho, b, mu, nu).unwrap()
    }

    /// Small random trees for oracle comparisons: resample until the node
    /// count is within the brute-force budget. Only viable for offspring
    /// rates of order one.
    fn small_tree(p: &ModelParams, depth: u32, max_nodes: usize, seed: u64) -> GwTree {
        for s in 0..10_000 {
            let t = sample_gw_tree(p, depth, None, derive_seed(seed, s)).unwrap();
            if t.len() <= max_nodes && t.len() > 1 {
                return t;
            }
        }
        panic!("no tree within {max_nodes} nodes after 10000 draws; rates too large");
    }

    #[test]
    fn hidden_level_zero_is_zero() {
        let p = params(0.5, 16.0, 3.0, 0.0);
        let t = sample_gw_tree(&p, 0, None, 1).unwrap();
        assert_eq!(exact_llr(&t, &p, 0, BoundaryRegime::Hidden).unwrap(), 0.0);
    }

    #[test]
    fn noisy_half_equals_hidden() {
        let p = params(0.4, 9.0, 2.0, 1.0);
        let tree = attach_noisy_labels(sample_gw_tree(&p, 2, None, 3).unwrap(), 0.5, 4).unwrap();
        let hidden = belief_table(&tree, &p, 2, BoundaryRegime::Hidden).unwrap();
        let noisy = belief_table(&tree, &p, 2, BoundaryRegime::Noisy { alpha: 0.5 }).unwrap();
        assert_eq!(hidden.values, noisy.values);
    }

    #[test]
    fn noisy_zero_routes_to_exact() {
        let p = params(0.4, 9.0, 2.0, 1.0);
        let tree = attach_noisy_labels(sample_gw_tree(&p, 2, None, 5).unwrap(), 0.0, 6).unwrap();
        let exact = exact_llr(&tree, &p, 2, BoundaryRegime::Exact).unwrap();
        let noisy = exact_llr(&tree, &p, 2, BoundaryRegime::Noisy { alpha: 0.0 }).unwrap();
        assert_eq!(exact, noisy);
    }

    #[test]
    fn depth_shortfall_is_rejected() {
        let p = params(0.5, 9.0, 1.0, 0.0);
        let tree = sample_gw_tree(&p, 1, None, 2).unwrap();
        assert!(matches!(
            exact_llr(&tree, &p, 2, BoundaryRegime::Hidden),
            Err(Error::TreeTooShallow { .. })
        ));
    }

    #[test]
    fn noisy_requires_noisy_labels() {
        let p = params(0.5, 9.0, 1.0, 0.0);
        let tree = sample_gw_tree(&p, 1, None, 2).unwrap();
        assert!(matches!(
            exact_llr(&tree, &p, 1, BoundaryRegime::Noisy { alpha: 0.2 }),
            Err(Error::MissingNoisyLabels)
        ));
        assert!(matches!(
            exact_llr(&tree, &p, 1, BoundaryRegime::Noisy { alpha: 0.7 }),
            Err(Error::AlphaOutOfRange(_))
        ));
    }

    #[test]
    fn exact_boundary_values_are_the_only_infinite_ones() {
        let p = params(0.3, 16.0, 2.0, -0.5);
        let tree = sample_gw_tree(&p, 2, None, 9).unwrap();
        let table = belief_table(&tree, &p, 2, BoundaryRegime::Exact).unwrap();
        for i in 0..table.values.len() {
            let d = tree.node_depth(i);
            if d == 2 {
                assert!(table.values[i].is_infinite());
            } else {
                assert!(table.values[i].is_finite(), "node {i} at depth {d}");
            }
        }
        let hidden = belief_table(&tree, &p, 2, BoundaryRegime::Hidden).unwrap();
        assert!(hidden.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_node_brute_force_is_zero_in_hidden_regime() {
        let p = params(0.5, 16.0, 3.0, 0.0);
        let tree = sample_gw_tree(&p, 0, None, 1).unwrap();
        assert_eq!(
            brute_force_llr(&tree, &p, 0, BoundaryRegime::Hidden).unwrap(),
            0.0
        );
    }

    #[test]
    fn one_child_exact_boundary_matches_closed_form() {
        // Root with a single + child at the boundary, t = 1:
        // LLR = (-d_+ + d_-)/2 + log(a/b)/2.
        let p = params(0.4, 16.0, 2.0, 1.0);
        let tree = GwTree::from_parents(vec![None, Some(0)], vec![1, 1], 1).unwrap();
        let want = message_base(&p) + 0.5 * (p.a / p.b).ln();
        let brute = brute_force_llr(&tree, &p, 1, BoundaryRegime::Exact).unwrap();
        let exact = exact_llr(&tree, &p, 1, BoundaryRegime::Exact).unwrap();
        assert!((brute - want).abs() < 1e-12, "{brute} vs {want}");
        assert!((exact - want).abs() < 1e-12);
    }

    #[test]
    fn recursion_matches_brute_force_on_random_small_trees() {
        // Order-one offspring rates so that 6-node depth-2 trees are common.
        let plist = [
            params(0.5, 1.44, 0.9, 0.0),
            params(0.3, 1.0, 0.8, 0.4),
            params(0.6, 1.21, 0.3, -0.4),
        ];
        let mut checked = 0usize;
        for (pi, p) in plist.iter().enumerate() {
            for k in 0..34 {
                let tree = small_tree(p, 2, 6, (pi * 100 + k) as u64);
                let tree = attach_noisy_labels(tree, 0.25, k as u64 + 7).unwrap();
                for regime in [
                    BoundaryRegime::Exact,
                    BoundaryRegime::Hidden,
                    BoundaryRegime::Noisy { alpha: 0.25 },
                ] {
                    let fast = exact_llr(&tree, p, 2, regime).unwrap();
                    let brute = brute_force_llr(&tree, p, 2, regime).unwrap();
                    if fast.is_infinite() {
                        assert_eq!(fast, brute);
                    } else {
                        let scale = fast.abs().max(1.0);
                        assert!(
                            (fast - brute).abs() / scale < 1e-10,
                            "regime {regime:?}: {fast} vs {brute}"
                        );
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked >= 300);
    }

    #[test]
    fn brute_force_cap_is_enforced() {
        let p = params(0.5, 100.0, 0.0, 0.0);
        let tree = sample_gw_tree(&p, 2, None, 1).unwrap();
        assert!(tree.len() > 21);
        assert!(matches!(
            brute_force_llr(&tree, &p, 2, BoundaryRegime::Hidden),
            Err(Error::BruteForceTooLarge { .. })
        ));
    }

    #[test]
    fn fused_sampler_agrees_with_materialized_evaluation() {
        // Same distribution, different code paths: compare q* from the
        // fused sampler against explicit tree materialization.
        let p = params(0.5, 16.0, 3.0, 0.0);
        let t = 2u32;
        let trials = 30_000u64;
        let fused = estimate_tree_errors(&p, t, 0.25, trials, 404).unwrap();
        let mut errors = 0u64;
        for i in 0..trials {
            let tree = sample_gw_tree(&p, t, None, derive_seed(909, i)).unwrap();
            let llr = exact_llr(&tree, &p, t, BoundaryRegime::Hidden).unwrap();
            let decision: i8 = if llr >= -p.phi { 1 } else { -1 };
            if decision != tree.tau(0) {
                errors += 1;
            }
        }
        let materialized = errors as f64 / trials as f64;
        let combined =
            (fused.se_q_star.powi(2) + materialized * (1.0 - materialized) / trials as f64)
                .sqrt();
        assert!(
            (fused.q_star - materialized).abs() < 4.0 * combined,
            "fused {} vs materialized {materialized}",
            fused.q_star
        );
    }

    #[test]
    fn equal_degrees_make_the_hidden_problem_trivial() {
        // rho mu = (1 - rho) nu: d_+ = d_- and q* collapses to min(rho, 1-rho).
        let p = params(0.3, 64.0, 3.5, 1.5);
        assert!((p.d_plus - p.d_minus).abs() < 1e-9);
        let report = estimate_tree_errors(&p, 2, 0.25, 20_000, 5).unwrap();
        assert!(
            (report.q_star - 0.3).abs() < 3.0 * report.se_q_star.max(1e-4),
            "q* = {} (se {})",
            report.q_star,
            report.se_q_star
        );
    }

    #[test]
    fn information_ordering_of_the_three_regimes() {
        let p = params(0.5, 32.0, 3.0, 0.0);
        let r = estimate_tree_errors(&p, 2, 0.25, 40_000, 6).unwrap();
        let slack = |a: f64, b: f64| 3.0 * (a * a + b * b).sqrt();
        assert!(
            r.p_star <= r.q_tilde + slack(r.se_p_star, r.se_q_tilde),
            "p* {} vs q~ {}",
            r.p_star,
            r.q_tilde
        );
        assert!(
            r.q_tilde <= r.q_star + slack(r.se_q_tilde, r.se_q_star),
            "q~ {} vs q* {}",
            r.q_tilde,
            r.q_star
        );
        assert!(r.p_star > 0.0 && r.q_star < 0.5);
    }

    #[test]
    fn noisy_endpoints_match_exact_and_hidden() {
        let p = params(0.5, 32.0, 3.0, 0.0);
        let at_zero = estimate_tree_errors(&p, 2, 0.0, 5_000, 7).unwrap();
        assert_eq!(at_zero.p_star, at_zero.q_tilde);
        let at_half = estimate_tree_errors(&p, 2, 0.5, 5_000, 7).unwrap();
        assert_eq!(at_half.q_star, at_half.q_tilde);
        // Same master seed samples the same forest regardless of alpha.
        assert_eq!(at_zero.q_star, at_half.q_star);
        assert_eq!(at_zero.p_star, at_half.p_star);
    }

    #[test]
    fn tree_error_cross_checks_density_evolution() {
        // q*(t = 2) vs the Gaussian predictor at v_2, b = 64. The
        // predictor is a base-rate limit: the residual finite-degree
        // correction at b = 64 measures +0.025 (cross-checked against an
        // exact Poisson computation at t = 1 and an independent
        // simulation), so the tolerance floor sits above it.
        use crate::density_evolution::{predicted_misclassification, trajectory, TrajectoryKind};
        let p = params(0.5, 64.0, 4.0, 0.0);
        let traj = trajectory(&p, TrajectoryKind::V, None, 3, 1e-13).unwrap();
        let v2 = traj.value_at(2).unwrap();
        let predicted = predicted_misclassification(v2, p.rho).unwrap();
        let r = estimate_tree_errors(&p, 2, 0.25, 60_000, 8).unwrap();
        let tol = (3.0 * r.se_q_star).max(0.035);
        assert!(
            (r.q_star - predicted).abs() < tol,
            "q* = {} vs predicted {predicted} (tol {tol})",
            r.q_star
        );
        assert!(
            r.q_star > predicted,
            "the finite-degree correction is an excess error"
        );
    }

    #[test]
    fn change_of_measure_holds() {
        let p = params(0.5, 32.0, 3.0, 0.0);
        let report = change_of_measure_check(&p, 2, 40_000, 9).unwrap();
        assert!(
            report.exp_deviation_sigmas < 3.0,
            "E[e^(-2 Gamma)] = {} ({} sigmas)",
            report.exp_mean,
            report.exp_deviation_sigmas
        );
        assert!(
            report.tanh_deviation_sigmas < 3.0,
            "direct {} vs transformed {} ({} sigmas)",
            report.tanh_direct,
            report.tanh_transformed,
            report.tanh_deviation_sigmas
        );
    }

    #[test]
    fn change_of_measure_at_depth_zero_is_exact() {
        let p = params(0.4, 16.0, 2.0, 0.0);
        let report = change_of_measure_check(&p, 0, 100, 10).unwrap();
        assert_eq!(report.exp_mean, 1.0);
        assert_eq!(report.exp_deviation_sigmas, 0.0);
        assert_eq!(report.tanh_deviation_sigmas, 0.0);
    }

    #[test]
    fn graph_conversion_round_trips_acyclic_structures() {
        let p = params(0.5, 9.0, 2.0, 0.0);
        let tree = sample_gw_tree(&p, 3, None, 11).unwrap();
        // Convert tree -> graph -> tree (rooted at 0) and compare LLRs.
        let mut edges = Vec::new();
        for i in 0..tree.len() {
            for c in tree.children(i) {
                edges.push((i as u32, c as u32));
            }
        }
        let graph =
            LabeledGraph::from_edges(tree.len(), tree.taus().to_vec(), &edges).unwrap();
        let back = tree_from_graph(&graph, 0).unwrap();
        for t in 0..=tree.depth() {
            let a = exact_llr(&tree, &p, t, BoundaryRegime::Hidden).unwrap();
            let b = exact_llr(&back, &p, t, BoundaryRegime::Hidden).unwrap();
            assert!((a - b).abs() < 1e-12, "depth {t}: {a} vs {b}");
        }
        // A cycle is rejected.
        let cyc = LabeledGraph::from_edges(3, vec![1, 1, -1], &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert!(tree_from_graph(&cyc, 0).is_err());
    }
}
