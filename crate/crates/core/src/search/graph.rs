//! The weak graph. A node is a local shape; the global shape and the prime
//! mesh are fixed by the problem. Edges are multi-axis collectives described
//! only by the prime sizes they move.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use crate::collectives::OpKind;
use crate::mesh::{prime_factors, Mesh};

pub type Node = Vec<u64>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind")]
pub enum WeakOp {
    AllGather { dim: usize, factors: Vec<u64> },
    DynSlice { dim: usize, factors: Vec<u64> },
    AllToAll { from: usize, to: usize, factors: Vec<u64> },
}

impl WeakOp {
    pub fn kind(&self) -> OpKind {
        match self {
            WeakOp::AllGather { .. } => OpKind::AllGather,
            WeakOp::DynSlice { .. } => OpKind::DynSlice,
            WeakOp::AllToAll { .. } => OpKind::AllToAll,
        }
    }

    /// Prime sizes moved, sorted.
    pub fn factors(&self) -> &[u64] {
        match self {
            WeakOp::AllGather { factors, .. } | WeakOp::DynSlice { factors, .. } | WeakOp::AllToAll { factors, .. } => {
                factors
            }
        }
    }

    pub fn product(&self) -> u64 {
        self.factors().iter().product()
    }

    /// The node reached from `node`, without any applicability check.
    pub fn apply(&self, node: &[u64]) -> Node {
        let mut out = node.to_vec();
        let n = self.product();
        match self {
            WeakOp::AllGather { dim, .. } => out[*dim] *= n,
            WeakOp::DynSlice { dim, .. } => out[*dim] /= n,
            WeakOp::AllToAll { from, to, .. } => {
                out[*from] *= n;
                out[*to] /= n;
            }
        }
        out
    }
}

impl fmt::Display for WeakOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fs = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        match self {
            WeakOp::AllGather { dim, factors } => write!(f, "allGather({dim}, {{{}}})", fs(factors)),
            WeakOp::DynSlice { dim, factors } => write!(f, "dynSlice({dim}, {{{}}})", fs(factors)),
            WeakOp::AllToAll { from, to, factors } => write!(f, "allToAll({from}, {to}, {{{}}})", fs(factors)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakEdge {
    pub op: WeakOp,
    pub weight: u64,
    pub target: Node,
}

/// Removes `sub` from the sorted multiset `set`; `None` if not contained.
fn multiset_minus(set: &[u64], sub: &[u64]) -> Option<Vec<u64>> {
    let mut rest = set.to_vec();
    for x in sub {
        let k = rest.iter().position(|y| y == x)?;
        rest.remove(k);
    }
    Some(rest)
}

/// All distinct nonempty sub-multisets of a sorted multiset, each sorted.
pub fn sub_multisets(sorted: &[u64]) -> Vec<Vec<u64>> {
    let mut groups: Vec<(u64, usize)> = Vec::new();
    for &x in sorted {
        match groups.last_mut() {
            Some((p, c)) if *p == x => *c += 1,
            _ => groups.push((x, 1)),
        }
    }
    let mut out = Vec::new();
    let mut counts = vec![0usize; groups.len()];
    loop {
        let mut k = 0;
        while k < groups.len() && counts[k] == groups[k].1 {
            counts[k] = 0;
            k += 1;
        }
        if k == groups.len() {
            break;
        }
        counts[k] += 1;
        out.push(
            groups
                .iter()
                .zip(&counts)
                .flat_map(|(&(p, _), &c)| std::iter::repeat_n(p, c))
                .collect(),
        );
    }
    out
}

/// The bounded weak graph of one problem.
#[derive(Debug, Clone)]
pub struct WeakGraph {
    global: Vec<u64>,
    mesh_factors: Vec<u64>,
    bound: u64,
    max_used: Option<usize>,
}

impl WeakGraph {
    /// `mesh` must be prime. `max_used` caps how many mesh factors a node
    /// may partition with.
    pub fn new(mesh: &Mesh, global: Vec<u64>, bound: u64, max_used: Option<usize>) -> Self {
        debug_assert!(mesh.is_prime());
        let mut mesh_factors: Vec<u64> = mesh.axes().iter().map(|a| a.size).collect();
        mesh_factors.sort_unstable();
        WeakGraph {
            global,
            mesh_factors,
            bound,
            max_used,
        }
    }

    pub fn global(&self) -> &[u64] {
        &self.global
    }

    pub fn bound(&self) -> u64 {
        self.bound
    }

    pub fn mesh_factors(&self) -> &[u64] {
        &self.mesh_factors
    }

    pub fn dim_factors(&self, node: &[u64], dim: usize) -> Vec<u64> {
        prime_factors(self.global[dim] / node[dim])
    }

    /// Mesh factors partitioning some dimension of `node`, sorted.
    pub fn used(&self, node: &[u64]) -> Vec<u64> {
        let mut used: Vec<u64> = (0..node.len()).flat_map(|i| self.dim_factors(node, i)).collect();
        used.sort_unstable();
        used
    }

    pub fn unused(&self, node: &[u64]) -> Option<Vec<u64>> {
        multiset_minus(&self.mesh_factors, &self.used(node))
    }

    pub fn localsize(node: &[u64]) -> u64 {
        node.iter().product()
    }

    /// True for shapes some well-formed type has, within the bound and cap.
    pub fn contains(&self, node: &[u64]) -> bool {
        node.len() == self.global.len()
            && node.iter().zip(&self.global).all(|(&t, &g)| t > 0 && g % t == 0)
            && Self::localsize(node) <= self.bound
            && self.unused(node).is_some()
            && self.max_used.is_none_or(|cap| self.used(node).len() <= cap)
    }

    /// One-op successors within the graph, in a fixed order.
    pub fn successors(&self, node: &[u64]) -> Vec<WeakEdge> {
        let rank = node.len();
        let size = Self::localsize(node);
        let unused = self.unused(node).unwrap_or_default();
        let mut out = Vec::new();
        let mut push = |op: WeakOp, weight: u64| {
            let target = op.apply(node);
            if self.contains(&target) {
                out.push(WeakEdge { op, weight, target });
            }
        };
        for i in 0..rank {
            let dim_factors = self.dim_factors(node, i);
            for f in sub_multisets(&dim_factors) {
                let n: u64 = f.iter().product();
                push(WeakOp::AllGather { dim: i, factors: f }, size * n);
            }
            for f in sub_multisets(&unused) {
                if node[i].is_multiple_of(f.iter().product::<u64>()) {
                    push(WeakOp::DynSlice { dim: i, factors: f }, 0);
                }
            }
            for j in (0..rank).filter(|&j| j != i) {
                for f in sub_multisets(&dim_factors) {
                    if node[j].is_multiple_of(f.iter().product::<u64>()) {
                        push(
                            WeakOp::AllToAll {
                                from: i,
                                to: j,
                                factors: f.clone(),
                            },
                            size,
                        );
                    }
                }
            }
        }
        out
    }
}

/// A path in the weak graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WeakPath {
    pub nodes: Vec<Node>,
    pub ops: Vec<WeakOp>,
    pub cost: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchFailure {
    NoPath,
    TooLarge { settled: usize },
}

type Dist = (u64, usize);

/// Shortest-path distances from one source, with the edges lying on some
/// cheapest path to the target.
pub struct ShortestPaths {
    source: Node,
    target: Node,
    dist: HashMap<Node, Dist>,
    tight: HashMap<Node, Vec<WeakEdge>>,
    pub settled: usize,
}

/// Uniform-cost search ordered by (cost, op count). Stops once the target
/// is settled, then keeps only edges that lie on a cheapest path.
pub fn shortest_paths(
    graph: &WeakGraph,
    source: &[u64],
    target: &[u64],
    node_limit: usize,
) -> Result<ShortestPaths, SearchFailure> {
    if !graph.contains(source) || !graph.contains(target) {
        return Err(SearchFailure::NoPath);
    }
    let mut dist: HashMap<Node, Dist> = HashMap::new();
    let mut done: HashSet<Node> = HashSet::new();
    let mut order: Vec<Node> = Vec::new();
    let mut heap = BinaryHeap::new();
    dist.insert(source.to_vec(), (0, 0));
    heap.push(Reverse((0u64, 0usize, source.to_vec())));
    let mut reached = false;
    while let Some(Reverse((c, k, node))) = heap.pop() {
        if done.contains(&node) || dist.get(&node) != Some(&(c, k)) {
            continue;
        }
        done.insert(node.clone());
        order.push(node.clone());
        if done.len() > node_limit {
            return Err(SearchFailure::TooLarge { settled: done.len() });
        }
        if node == target {
            reached = true;
            break;
        }
        for e in graph.successors(&node) {
            let d = (c + e.weight, k + 1);
            if done.contains(&e.target) {
                continue;
            }
            if dist.get(&e.target).is_none_or(|&old| d < old) {
                dist.insert(e.target.clone(), d);
                heap.push(Reverse((d.0, d.1, e.target)));
            }
        }
    }
    if !reached {
        return Err(SearchFailure::NoPath);
    }
    // Edges between settled nodes that are tight for (cost, op count).
    let mut incoming: HashMap<Node, Vec<(Node, WeakEdge)>> = HashMap::new();
    for u in &order {
        let du = dist[u];
        for e in graph.successors(u) {
            if done.contains(&e.target) && dist[&e.target] == (du.0 + e.weight, du.1 + 1) {
                incoming.entry(e.target.clone()).or_default().push((u.clone(), e));
            }
        }
    }
    let mut useful: HashSet<Node> = HashSet::new();
    let mut stack = vec![target.to_vec()];
    let mut tight: HashMap<Node, Vec<WeakEdge>> = HashMap::new();
    useful.insert(target.to_vec());
    while let Some(v) = stack.pop() {
        for (u, e) in incoming.get(&v).into_iter().flatten() {
            tight.entry(u.clone()).or_default().push(e.clone());
            if useful.insert(u.clone()) {
                stack.push(u.clone());
            }
        }
    }
    for edges in tight.values_mut() {
        edges.sort_by(|a, b| a.target.cmp(&b.target).then_with(|| a.op.cmp(&b.op)));
    }
    Ok(ShortestPaths {
        source: source.to_vec(),
        target: target.to_vec(),
        settled: done.len(),
        dist,
        tight,
    })
}

impl ShortestPaths {
    pub fn cost(&self) -> u64 {
        self.dist[&self.target].0
    }

    fn path_of(&self, edges: &[&WeakEdge]) -> WeakPath {
        let mut nodes = vec![self.source.clone()];
        nodes.extend(edges.iter().map(|e| e.target.clone()));
        WeakPath {
            nodes,
            ops: edges.iter().map(|e| e.op.clone()).collect(),
            cost: edges.iter().map(|e| e.weight).sum(),
        }
    }

    /// The cheapest path with fewest ops whose node sequence is
    /// lexicographically smallest.
    pub fn best(&self) -> WeakPath {
        let mut edges = Vec::new();
        let mut cur = &self.source;
        while cur != &self.target {
            let e = &self.tight[cur][0];
            edges.push(e);
            cur = &e.target;
        }
        self.path_of(&edges)
    }

    /// Up to `limit` cheapest paths in lexicographic order of node sequences.
    pub fn enumerate(&self, limit: usize) -> Vec<WeakPath> {
        let mut out = Vec::new();
        let mut stack: Vec<&WeakEdge> = Vec::new();
        self.walk(&self.source, &mut stack, &mut out, limit);
        out
    }

    fn walk<'a>(&'a self, cur: &Node, stack: &mut Vec<&'a WeakEdge>, out: &mut Vec<WeakPath>, limit: usize) {
        if out.len() >= limit {
            return;
        }
        if cur == &self.target {
            out.push(self.path_of(stack));
            return;
        }
        for e in self.tight.get(cur).into_iter().flatten() {
            stack.push(e);
            self.walk(&e.target, stack, out, limit);
            stack.pop();
        }
    }
}
