//! Hierarchical binomial model with logistic link and Gaussian increments.
//!
//! Leaves carry binomial data. Along every edge the latent log-odds take a
//! Gaussian step whose variance is shared by all children of the same parent
//! and drawn from an exponential prior; the root log-odds have a flat prior.
//! Only leaf log-odds and the variances are sampled. Internal log-odds are
//! integrated out by Gaussian message passing, with each node state caching
//! the upward message of its subtree.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Exp1, Gamma};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use super::quad;
use crate::error::{DcError, Result};
use crate::particle::DcRng;
use crate::tree::{NodeId, Topology, TreeModel};

/// Relative tolerance of every level of the nested quadrature oracle.
pub const QUADRATURE_REL_TOL: f64 = 1e-7;
/// Absolute tolerance of the oracle, relative to an integrand scaled to be
/// of order one near the data.
pub const QUADRATURE_ABS_TOL: f64 = 1e-18;

/// `c · N(θ; μ, 1/precision)` with `log c = log_scale`; zero precision is flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMessage {
    pub precision: f64,
    pub precision_times_mean: f64,
    pub log_scale: f64,
}

impl GaussianMessage {
    pub fn flat(log_scale: f64) -> Self {
        Self { precision: 0.0, precision_times_mean: 0.0, log_scale }
    }

    pub fn mean(&self) -> f64 {
        self.precision_times_mean / self.precision
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }

    pub fn is_flat(&self) -> bool {
        self.precision == 0.0
    }
}

/// What a child contributes to its parent's message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChildInput {
    /// Sampled leaf log-odds, substituted directly into the edge factor.
    Leaf(f64),
    /// Upward message of an internal child.
    Message(GaussianMessage),
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * d * d / var
}

/// Message to a parent with edge variance `sigma2`, together with the log
/// normalizer produced by multiplying the children's Gaussian factors.
pub fn hier_upward_message_parts(children: &[ChildInput], sigma2: f64) -> Result<(GaussianMessage, f64)> {
    if !(sigma2 > 0.0) {
        return Err(DcError::NonPositiveVariance(sigma2));
    }
    let mut inherited = 0.0;
    let mut acc: Option<(f64, f64)> = None;
    let mut local = 0.0;
    for c in children {
        let (mu, var) = match *c {
            ChildInput::Leaf(theta) => (theta, sigma2),
            ChildInput::Message(m) => {
                inherited += m.log_scale;
                if m.is_flat() {
                    continue;
                }
                (m.mean(), m.variance() + sigma2)
            }
        };
        acc = Some(match acc {
            None => (mu, var),
            Some((m0, v0)) => {
                local += log_normal_pdf(m0, mu, v0 + var);
                let v = 1.0 / (1.0 / v0 + 1.0 / var);
                (v * (m0 / v0 + mu / var), v)
            }
        });
    }
    let msg = match acc {
        None => GaussianMessage::flat(inherited),
        Some((mu, v)) => GaussianMessage { precision: 1.0 / v, precision_times_mean: mu / v, log_scale: inherited + local },
    };
    Ok((msg, local))
}

/// Upward message `m_t(θ) = Π_c ∫ m_c(θ_c) N(θ_c; θ, σ²) dθ_c`.
pub fn hier_upward_message(children: &[ChildInput], sigma2: f64) -> Result<GaussianMessage> {
    hier_upward_message_parts(children, sigma2).map(|(m, _)| m)
}

/// `log ∫ m(θ) dθ` under the flat root prior.
pub fn integrate_root(msg: &GaussianMessage) -> Result<f64> {
    if msg.is_flat() {
        return Err(DcError::RootImproperPosterior);
    }
    Ok(msg.log_scale)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `(log p, log(1-p))` for `p = logistic(θ)`.
pub fn log_p_q(theta: f64) -> (f64, f64) {
    (-softplus(-theta), -softplus(theta))
}

/// Binomial log mass of `m` successes in `trials` at log-odds `θ`.
pub fn log_binomial(m: u64, trials: u64, theta: f64) -> f64 {
    let (lp, lq) = log_p_q(theta);
    let (m, t) = (m as f64, trials as f64);
    ln_gamma(t + 1.0) - ln_gamma(m + 1.0) - ln_gamma(t - m + 1.0) + m * lp + (t - m) * lq
}

/// Draws `θ = logit(p)` with `p ~ Beta(1+m, 1+M-m)` and returns it with its
/// log density.
pub fn hier_leaf_proposal(m: u64, trials: u64, rng: &mut DcRng) -> (f64, f64) {
    let g1: f64 = rng.sample(Gamma::new(1.0 + m as f64, 1.0).expect("positive shape"));
    let g2: f64 = rng.sample(Gamma::new(1.0 + (trials - m) as f64, 1.0).expect("positive shape"));
    let theta = g1.ln() - g2.ln();
    (theta, leaf_proposal_log_density(m, trials, theta))
}

/// Log density of the leaf proposal at `θ`, Jacobian included.
pub fn leaf_proposal_log_density(m: u64, trials: u64, theta: f64) -> f64 {
    let (lp, lq) = log_p_q(theta);
    let (a, b) = (1.0 + m as f64, 1.0 + (trials - m) as f64);
    (a - 1.0) * lp + (b - 1.0) * lq - ln_beta(a, b) + lp + lq
}

/// Leaf-level target: binomial likelihood times the standard logistic density.
pub fn leaf_log_gamma(m: u64, trials: u64, theta: f64) -> f64 {
    let (lp, lq) = log_p_q(theta);
    log_binomial(m, trials, theta) + lp + lq
}

/// Per-node payload of the hierarchy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HierKind {
    Leaf { successes: u64, trials: u64 },
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierNode {
    pub label: String,
    pub kind: HierKind,
}

/// Sampled values of one subtree. Children are shared, not copied, when
/// populations are resampled or merged.
#[derive(Debug, Clone, PartialEq)]
pub struct HierState {
    pub node: NodeId,
    /// Leaf log-odds, or the variance shared by the node's out-edges.
    pub value: f64,
    /// Upward message (internal nodes only).
    pub message: Option<GaussianMessage>,
    /// Log normalizer created at this node by the message product.
    pub local_log_scale: f64,
    /// Number of sampled values in the subtree.
    pub size: usize,
    pub children: Vec<Arc<HierState>>,
}

/// The tree, its data, and the leaf/variance samplers.
#[derive(Debug, Clone)]
pub struct HierarchicalBinomial {
    topology: Topology,
    nodes: Vec<HierNode>,
}

impl HierarchicalBinomial {
    pub fn new(children: Vec<Vec<NodeId>>, root: NodeId, nodes: Vec<HierNode>) -> Result<Self> {
        let topology = Topology::new(children, root)?;
        if nodes.len() != topology.len() {
            return Err(DcError::DimensionMismatch { expected: topology.len(), found: nodes.len() });
        }
        let mut proper = false;
        for v in 0..topology.len() {
            match (&nodes[v].kind, topology.is_leaf(v)) {
                (HierKind::Leaf { successes, trials }, true) => {
                    if successes > trials {
                        return Err(DcError::MalformedTree {
                            node: v,
                            reason: format!("{successes} successes out of {trials} trials"),
                        });
                    }
                    proper |= *successes != 0 && successes != trials;
                }
                (HierKind::Internal, false) => {}
                _ => {
                    return Err(DcError::MalformedTree { node: v, reason: "data kind does not match position".into() });
                }
            }
        }
        if !proper {
            return Err(DcError::ProprietyViolation);
        }
        Ok(Self { topology, nodes })
    }

    /// Builds the tree from root-to-leaf label paths; the root is labelled
    /// `root_label` and every distinct prefix becomes one node.
    pub fn from_paths(root_label: &str, leaves: &[(Vec<String>, u64, u64)]) -> Result<Self> {
        let mut nodes = vec![HierNode { label: root_label.to_string(), kind: HierKind::Internal }];
        let mut children: Vec<Vec<NodeId>> = vec![Vec::new()];
        let mut index: HashMap<Vec<String>, NodeId> = HashMap::new();
        for (path, m, trials) in leaves {
            if path.is_empty() {
                return Err(DcError::MalformedTree { node: 0, reason: "empty leaf path".into() });
            }
            let mut parent = 0;
            for depth in 1..=path.len() {
                let key = path[..depth].to_vec();
                let is_leaf = depth == path.len();
                parent = match index.get(&key) {
                    Some(&id) => {
                        if is_leaf || matches!(nodes[id].kind, HierKind::Leaf { .. }) {
                            return Err(DcError::MalformedTree { node: id, reason: format!("duplicate path {key:?}") });
                        }
                        id
                    }
                    None => {
                        let id = nodes.len();
                        let kind = if is_leaf {
                            HierKind::Leaf { successes: *m, trials: *trials }
                        } else {
                            HierKind::Internal
                        };
                        nodes.push(HierNode { label: key.join("/"), kind });
                        children.push(Vec::new());
                        children[parent].push(id);
                        index.insert(key, id);
                        id
                    }
                };
            }
        }
        Self::new(children, 0, nodes)
    }

    pub fn node(&self, v: NodeId) -> &HierNode {
        &self.nodes[v]
    }

    pub fn nodes(&self) -> &[HierNode] {
        &self.nodes
    }

    pub fn find(&self, label: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.label == label)
    }

    /// The subtree rooted at `top` as a model of its own.
    pub fn subtree_model(&self, top: NodeId) -> Result<Self> {
        let ids = self.topology.subtree(top);
        let mut remap = HashMap::new();
        for (new, &old) in ids.iter().enumerate() {
            remap.insert(old, new);
        }
        let children = ids
            .iter()
            .map(|&old| self.topology.children(old).iter().map(|c| remap[c]).collect())
            .collect();
        let nodes = ids.iter().map(|&old| self.nodes[old].clone()).collect();
        Self::new(children, remap[&top], nodes)
    }

    fn leaf_data(&self, v: NodeId) -> (u64, u64) {
        match self.nodes[v].kind {
            HierKind::Leaf { successes, trials } => (successes, trials),
            HierKind::Internal => unreachable!("internal node {v} has no data"),
        }
    }

    /// Total trials over all leaves.
    pub fn total_trials(&self) -> u64 {
        self.nodes
            .iter()
            .map(|n| match n.kind {
                HierKind::Leaf { trials, .. } => trials,
                HierKind::Internal => 0,
            })
            .sum()
    }

    /// Number of nodes at each depth.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.topology.levels()];
        for v in 0..self.topology.len() {
            out[self.topology.depth(v)] += 1;
        }
        out
    }

    /// Builds the state of `node` from child states and its own value.
    pub fn assemble(&self, node: NodeId, value: f64, children: Vec<Arc<HierState>>) -> Result<HierState> {
        if self.topology.is_leaf(node) {
            return Ok(HierState { node, value, message: None, local_log_scale: 0.0, size: 1, children });
        }
        let inputs: Vec<ChildInput> = children
            .iter()
            .map(|c| match c.message {
                Some(m) => ChildInput::Message(m),
                None => ChildInput::Leaf(c.value),
            })
            .collect();
        let (msg, local) = hier_upward_message_parts(&inputs, value)?;
        let size = 1 + children.iter().map(|c| c.size).sum::<usize>();
        Ok(HierState { node, value, message: Some(msg), local_log_scale: local, size, children })
    }

    /// Log of the full-model unnormalized posterior at a root state.
    pub fn log_posterior(&self, root_state: &HierState) -> Result<f64> {
        let mut total = 0.0;
        let mut stack = vec![root_state];
        while let Some(s) = stack.pop() {
            match s.message {
                None => {
                    let (m, t) = self.leaf_data(s.node);
                    total += log_binomial(m, t, s.value);
                }
                Some(_) => {
                    total -= s.value;
                    stack.extend(s.children.iter().map(|c| c.as_ref()));
                }
            }
        }
        match root_state.message {
            Some(m) => Ok(total + integrate_root(&m)?),
            None => {
                let (lp, lq) = log_p_q(root_state.value);
                Ok(total + lp + lq)
            }
        }
    }

    /// Posterior mean and variance of `θ_target` given all sampled values.
    pub fn conditional_theta(&self, root_state: &HierState, target: NodeId) -> Result<(f64, f64)> {
        let path = self.topology.path(target);
        let mut s = root_state;
        let root_msg = match s.message {
            None => return Ok((s.value, 0.0)),
            Some(m) => m,
        };
        if root_msg.is_flat() {
            return Err(DcError::RootImproperPosterior);
        }
        let (mut b_prec, mut b_h) = (root_msg.precision, root_msg.precision_times_mean);
        for &k in path {
            let sigma2 = s.value;
            let child = s.children[k as usize].as_ref();
            let (mu_c, var_c, up) = match child.message {
                None => (child.value, sigma2, None),
                Some(m) => (m.mean(), m.variance() + sigma2, Some(m)),
            };
            let cav_prec = b_prec - 1.0 / var_c;
            let cav_h = b_h - mu_c / var_c;
            let (down_prec, down_h) = if cav_prec <= 1e-300 {
                (0.0, 0.0)
            } else {
                let v = 1.0 / cav_prec + sigma2;
                (1.0 / v, cav_h / cav_prec / v)
            };
            match up {
                None => return Ok((child.value, 0.0)),
                Some(m) => {
                    b_prec = m.precision + down_prec;
                    b_h = m.precision_times_mean + down_h;
                }
            }
            s = child;
        }
        Ok((b_h / b_prec, 1.0 / b_prec))
    }

    /// Sampled value (leaf log-odds or variance) of `target` in a root state.
    pub fn value_at(&self, root_state: &HierState, target: NodeId) -> f64 {
        let mut s = root_state;
        for &k in self.topology.path(target) {
            s = s.children[k as usize].as_ref();
        }
        s.value
    }

    /// Variables of the model in post-order: leaves contribute log-odds,
    /// internal nodes their variance.
    pub fn continuous_dims(&self) -> usize {
        self.topology.len()
    }

    /// `log Z` by nested adaptive quadrature over every sampled value, with
    /// internal log-odds integrated by message passing. Only for trees with
    /// at most three sampled values.
    pub fn quadrature_log_z(&self) -> Result<f64> {
        let order: Vec<NodeId> = self.topology.post_order().to_vec();
        if order.len() > 3 {
            return Err(DcError::TooLarge(format!("{} continuous dimensions", order.len())));
        }
        let point = vec![0.0; self.topology.len()];
        let mut guesses = vec![0.0; self.topology.len()];
        for &v in &order {
            guesses[v] = if self.topology.is_leaf(v) {
                let (m, t) = self.leaf_data(v);
                ((m as f64 + 0.5) / (t as f64 - m as f64 + 0.5)).ln()
            } else {
                1.0
            };
        }
        let shift = self.log_gamma_at(&guesses)?;
        let value = self.nested(&order, 0, &point, shift)?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(DcError::QuadratureNonFinite);
        }
        Ok(shift + value.ln())
    }

    fn log_gamma_at(&self, values: &[f64]) -> Result<f64> {
        let mut built: Vec<Option<Arc<HierState>>> = vec![None; self.topology.len()];
        for &v in self.topology.post_order() {
            let kids = self.topology.children(v).iter().map(|&c| built[c].take().expect("child first")).collect();
            built[v] = Some(Arc::new(self.assemble(v, values[v], kids)?));
        }
        let root = built[self.topology.root()].take().expect("root built");
        self.log_posterior(&root)
    }

    /// Integrates the remaining coordinates `order[depth..]`. Variances are
    /// integrated over their square root, which removes the `σ → 0`
    /// singularity of the Gaussian factors.
    fn nested(&self, order: &[NodeId], depth: usize, point: &[f64], shift: f64) -> Result<f64> {
        if depth == order.len() {
            return Ok((self.log_gamma_at(point)? - shift).exp());
        }
        let v = order[depth];
        let is_variance = !self.topology.is_leaf(v);
        let (lo, hi, mut breaks) = if is_variance {
            (0.0, 60f64.sqrt(), vec![0.5, 1.0, 2.0, 3.0])
        } else {
            let (m, t) = self.leaf_data(v);
            let mle = ((m as f64 + 0.5) / (t as f64 - m as f64 + 0.5)).ln();
            (-30.0, 30.0, vec![mle])
        };
        if !is_variance {
            breaks.extend(order[..depth].iter().filter(|&&u| self.topology.is_leaf(u)).map(|&u| point[u]));
        }
        let failed = std::cell::Cell::new(false);
        let mut local = point.to_vec();
        let local = std::cell::RefCell::new(&mut local);
        let q = quad::integrate_with_breaks(
            |x| {
                if is_variance && x <= 0.0 {
                    return 0.0;
                }
                let mut p = local.borrow_mut();
                p[v] = if is_variance { x * x } else { x };
                let jacobian = if is_variance { 2.0 * x } else { 1.0 };
                let inner = self.nested(order, depth + 1, &p[..], shift);
                inner.map(|val| jacobian * val).unwrap_or_else(|_| {
                    failed.set(true);
                    0.0
                })
            },
            lo,
            hi,
            &breaks,
            QUADRATURE_ABS_TOL,
            QUADRATURE_REL_TOL,
        );
        if failed.get() {
            return Err(DcError::QuadratureNonFinite);
        }
        Ok(q?.value)
    }
}

impl HierarchicalBinomial {
    /// Draws the variance of internal `node` for one tuple of child states and
    /// returns the assembled state with its incremental log weight.
    pub fn internal_step(
        &self,
        node: NodeId,
        children: &[&Arc<HierState>],
        rng: &mut DcRng,
    ) -> Result<(Arc<HierState>, f64)> {
        if self.topology.is_leaf(node) {
            return Err(DcError::MalformedTree { node, reason: "leaf has no variance to draw".into() });
        }
        let state = self.propose(node, children, rng)?;
        let w = self.log_increment(node, &state);
        Ok((state, w))
    }
}

impl TreeModel for HierarchicalBinomial {
    type State = Arc<HierState>;

    fn topology(&self) -> &Topology {
        &self.topology
    }

    fn log_gamma(&self, node: NodeId, state: &Self::State) -> f64 {
        if self.topology.is_leaf(node) {
            let (m, t) = self.leaf_data(node);
            return leaf_log_gamma(m, t, state.value);
        }
        let mut total = state.message.map_or(0.0, |m| m.log_scale);
        let mut stack: Vec<&HierState> = vec![state.as_ref()];
        while let Some(s) = stack.pop() {
            if s.message.is_none() {
                let (m, t) = self.leaf_data(s.node);
                total += log_binomial(m, t, s.value);
            } else {
                total -= s.value;
                stack.extend(s.children.iter().map(|c| c.as_ref()));
            }
        }
        total
    }

    fn propose(&self, node: NodeId, children: &[&Self::State], rng: &mut DcRng) -> Result<Self::State> {
        if self.topology.is_leaf(node) {
            let (m, t) = self.leaf_data(node);
            let (theta, _) = hier_leaf_proposal(m, t, rng);
            return Ok(Arc::new(self.assemble(node, theta, Vec::new())?));
        }
        let sigma2: f64 = rng.sample(Exp1);
        let kids = children.iter().map(|c| Arc::clone(c)).collect();
        Ok(Arc::new(self.assemble(node, sigma2, kids)?))
    }

    fn log_increment(&self, node: NodeId, state: &Self::State) -> f64 {
        if self.topology.is_leaf(node) {
            let (m, t) = self.leaf_data(node);
            return leaf_log_gamma(m, t, state.value) - leaf_proposal_log_density(m, t, state.value);
        }
        let leaf_terms: f64 = state
            .children
            .iter()
            .filter(|c| c.message.is_none())
            .map(|c| {
                let (lp, lq) = log_p_q(c.value);
                lp + lq
            })
            .sum();
        state.local_log_scale - leaf_terms
    }

    fn incremental_dim(&self, _node: NodeId) -> usize {
        1
    }

    fn state_dim(&self, _node: NodeId, state: &Self::State) -> usize {
        state.size
    }

    fn site_count(&self, node: NodeId) -> usize {
        self.topology.subtree(node).len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_weight_is_minus_log_trials_plus_one() {
        let mut rng = crate::particle::SeedPath::new(9).rng();
        for (m, t) in [(0u64, 0u64), (3, 10), (10, 10), (0, 7)] {
            let (theta, lq) = hier_leaf_proposal(m, t, &mut rng);
            let w = leaf_log_gamma(m, t, theta) - lq;
            assert!((w + ((t + 1) as f64).ln()).abs() < 1e-10, "m={m} t={t} w={w}");
        }
    }

    #[test]
    fn single_gaussian_factor_has_unit_mass() {
        let (msg, local) = hier_upward_message_parts(&[ChildInput::Leaf(0.7)], 2.0).unwrap();
        assert_eq!(local, 0.0);
        assert!((msg.mean() - 0.7).abs() < 1e-15);
        assert!((msg.variance() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn flat_child_propagates_its_scale() {
        let msg = hier_upward_message(&[ChildInput::Message(GaussianMessage::flat(-3.5))], 1.0).unwrap();
        assert!(msg.is_flat());
        assert_eq!(msg.log_scale, -3.5);
    }

    #[test]
    fn variance_must_be_positive() {
        assert_eq!(hier_upward_message(&[ChildInput::Leaf(0.0)], 0.0), Err(DcError::NonPositiveVariance(0.0)));
    }
}
