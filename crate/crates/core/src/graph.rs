//! Contract adjacency graphs, hop distances, and the Lipschitz-based loss bounds.
//!
//! For losses that are `β`-Lipschitz in hop distance, with `c⋆` the lowest-loss
//! contract,
//!
//! ```text
//! max_c ℓ(c) ≤ ℓ(c⋆) + β · diam(G)
//! |R(q) − R(q̃)| ≤ (ℓ(c⋆) + β · diam(G)) · ‖q − q̃‖₁
//! ```

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::ContractSet;
use crate::risk::{service_risk, BoundCheck, ContractLossVector};
use crate::scalar::{l1_distance, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjacencyRule {
    /// Contracts whose first `k` key parts agree are adjacent.
    SharedPrefix(usize),
    CompleteGraph,
    ExplicitEdges(Vec<(usize, usize)>),
}

impl AdjacencyRule {
    /// Contracts sharing every key part except the last are adjacent.
    pub fn default_for(set: &ContractSet) -> Self {
        let key_len = set.contracts().first().map_or(1, |c| c.key.parts().len());
        AdjacencyRule::SharedPrefix(key_len.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractGraph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
    dist: Vec<Vec<Option<usize>>>,
    diameter: usize,
}

pub fn build_graph(set: &ContractSet, rule: &AdjacencyRule) -> Result<ContractGraph> {
    let m = set.len();
    let edges: Vec<(usize, usize)> = match rule {
        AdjacencyRule::SharedPrefix(k) => {
            let keys: Vec<_> = set.contracts().iter().map(|c| &c.key).collect();
            let mut edges = Vec::new();
            for u in 0..m {
                for v in u + 1..m {
                    if keys[u].parts().len() >= *k && keys[u].prefix(*k) == keys[v].prefix(*k) {
                        edges.push((u, v));
                    }
                }
            }
            edges
        }
        AdjacencyRule::CompleteGraph => (0..m).flat_map(|u| (u + 1..m).map(move |v| (u, v))).collect(),
        AdjacencyRule::ExplicitEdges(list) => list.clone(),
    };
    ContractGraph::from_edges(m, &edges)
}

impl ContractGraph {
    /// Undirected graph on `m` nodes; self-loops are ignored.
    pub fn from_edges(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if m == 0 {
            return Err(Error::Input("contract graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            if u >= m || v >= m {
                return Err(Error::Input(format!("edge ({u}, {v}) references a node outside 0..{m}")));
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        let mut adj = vec![Vec::new(); m];
        for &(u, v) in &set {
            adj[u].push(v);
            adj[v].push(u);
        }
        let dist: Vec<Vec<Option<usize>>> = (0..m).map(|s| bfs(&adj, s)).collect();
        let diameter = dist.iter().flatten().flatten().copied().max().unwrap_or(0);
        Ok(Self {
            m,
            edges: set,
            dist,
            diameter,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Hop distance, `None` across components.
    pub fn dist(&self, u: usize, v: usize) -> Option<usize> {
        self.dist[u][v]
    }

    /// Largest finite distance.
    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn is_connected(&self) -> bool {
        self.dist[0].iter().all(Option::is_some)
    }

    /// One `u v` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        for (u, v) in self.edges() {
            writeln!(w, "{u} {v}")?;
        }
        Ok(())
    }
}

fn bfs(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].expect("queued nodes are labelled");
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Smallest `β` with `|ℓ(u) − ℓ(v)| ≤ β · dist(u, v)` over all connected pairs.
pub fn lipschitz_beta<T: Scalar>(graph: &ContractGraph, lv: &ContractLossVector<T>) -> Result<T> {
    if lv.len() != graph.m() {
        return Err(Error::Shape(format!("{} losses for {} contracts", lv.len(), graph.m())));
    }
    let l = lv.losses();
    let mut beta = T::zero();
    for u in 0..graph.m() {
        for v in u + 1..graph.m() {
            if let Some(d) = graph.dist(u, v) {
                beta = beta.max((l[u] - l[v]).abs() / T::of(d as f64));
            }
        }
    }
    Ok(beta)
}

/// [`lipschitz_beta`] over the contracts that have a loss, still measuring
/// distance in the full graph. `None` when no connected pair is observed.
pub fn lipschitz_beta_observed<T: Scalar>(graph: &ContractGraph, losses: &[Option<T>]) -> Result<Option<T>> {
    if losses.len() != graph.m() {
        return Err(Error::Shape(format!("{} losses for {} contracts", losses.len(), graph.m())));
    }
    let mut beta = None;
    for u in 0..graph.m() {
        for v in u + 1..graph.m() {
            if let (Some(a), Some(b), Some(d)) = (losses[u], losses[v], graph.dist(u, v)) {
                let ratio = (a - b).abs() / T::of(d as f64);
                beta = Some(beta.map_or(ratio, |x: T| x.max(ratio)));
            }
        }
    }
    Ok(beta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphBoundReport<T> {
    pub c_star: usize,
    pub beta: T,
    pub diameter: usize,
    pub max_loss_bound_lhs: T,
    pub max_loss_bound_rhs: T,
    pub risk_bound_lhs: T,
    pub risk_bound_rhs: T,
    pub holds_max_loss: bool,
    pub holds_risk: bool,
    pub holds_pair: bool,
}

pub fn graph_bounds<T: Scalar>(
    graph: &ContractGraph,
    lv: &ContractLossVector<T>,
    q: &[T],
    q_tilde: &[T],
) -> Result<GraphBoundReport<T>> {
    graph_bounds_scaled(graph, lv, q, q_tilde, T::one())
}

/// [`graph_bounds`] with both right-hand sides multiplied by `rhs_scale`.
pub fn graph_bounds_scaled<T: Scalar>(
    graph: &ContractGraph,
    lv: &ContractLossVector<T>,
    q: &[T],
    q_tilde: &[T],
    rhs_scale: T,
) -> Result<GraphBoundReport<T>> {
    if !graph.is_connected() {
        return Err(Error::DiameterUndefined);
    }
    let beta = lipschitz_beta(graph, lv)?;
    let losses = lv.losses();
    let c_star = (0..losses.len())
        .min_by(|&a, &b| losses[a].partial_cmp(&losses[b]).expect("losses are not NaN"))
        .expect("graph has at least one node");
    let ceiling = losses[c_star] + beta * T::of(graph.diameter() as f64);
    let max_loss = BoundCheck::evaluate(lv.max_loss(), rhs_scale * ceiling);
    let risk_lhs = (service_risk(lv, q)? - service_risk(lv, q_tilde)?).abs();
    let risk = BoundCheck::evaluate(risk_lhs, rhs_scale * ceiling * l1_distance(q, q_tilde));
    Ok(GraphBoundReport {
        c_star,
        beta,
        diameter: graph.diameter(),
        max_loss_bound_lhs: max_loss.lhs,
        max_loss_bound_rhs: max_loss.rhs,
        risk_bound_lhs: risk.lhs,
        risk_bound_rhs: risk.rhs,
        holds_max_loss: max_loss.holds,
        holds_risk: risk.holds,
        holds_pair: max_loss.holds && risk.holds,
    })
}
