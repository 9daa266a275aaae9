//! Sum-product network structures over basis kernels.
//!
//! A structure is a rooted DAG with four node kinds:
//!
//! * `sum` — selects exactly one child per expanded path,
//! * `product` — weighted entrywise combination of all children; carries a
//!   learnable nonnegative weight and a regularizer exponent `p`,
//! * `combiner` — weightless entrywise combination of all children,
//! * `leaf` — names a basis kernel.
//!
//! Expanding every choice at the sum nodes yields the set of *paths*
//! (induced trees). Each path `m` evaluates to the entrywise product of its
//! leaf kernels and is weighted by
//!
//! ```text
//! g_m = prod_{l=1..N_m} prod_{n=1..N_{m_l}} beta_{m_l^n}^(1 / (N_m * N_{m_l}))
//! ```
//!
//! where layer `l` groups the path's product nodes by the number of sum
//! nodes strictly above them, `N_m` is the number of layers and `N_{m_l}`
//! the number of product nodes in layer `l`. The exponents of every path
//! sum to one, so scaling all weights on a path scales `g_m` linearly.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default limit on the number of expanded paths.
pub const DEFAULT_PATH_CAP: usize = 10_000;

/// Exact exponent attached to one product-node occurrence on a path.
pub type Exponent = Ratio<i64>;

pub type NodeId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Sum,
    Product,
    Combiner,
    Leaf,
}

/// One node of the structure document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpnNode {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeId>,
    /// Basis kernel name; leaves only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    /// Regularizer exponent `p`; product nodes only, must be positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

/// Validated structure graph. Node order follows the source document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Document", into = "Document")]
pub struct SpnGraph {
    nodes: Vec<SpnNode>,
    root: NodeId,
    #[serde(skip)]
    index: BTreeMap<NodeId, usize>,
}

/// Raw serialized form of a structure graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Document {
    root: NodeId,
    nodes: Vec<SpnNode>,
}

impl From<SpnGraph> for Document {
    fn from(g: SpnGraph) -> Self {
        Document {
            root: g.root,
            nodes: g.nodes,
        }
    }
}

impl TryFrom<Document> for SpnGraph {
    type Error = Error;

    fn try_from(doc: Document) -> Result<SpnGraph> {
        SpnGraph::new(doc.nodes, doc.root)
    }
}

impl SpnGraph {
    /// Builds and validates a graph from a node list and a root id.
    pub fn new(nodes: Vec<SpnNode>, root: NodeId) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(Error::DuplicateNodeId(node.id.clone()));
            }
        }
        let graph = SpnGraph { nodes, root, index };
        graph.validate()?;
        Ok(graph)
    }

    /// Parses a JSON structure document.
    pub fn parse(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text)?;
        doc.try_into()
    }

    /// Serializes back to the JSON document form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("structure serialization cannot fail")
    }

    pub fn root(&self) -> &NodeId {
        &self.root
    }

    pub fn nodes(&self) -> &[SpnNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&SpnNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    /// Ids of all product nodes, in document order.
    pub fn product_ids(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Product)
            .map(|n| n.id.clone())
            .collect()
    }

    /// Names of all basis kernels referenced by leaves.
    pub fn kernel_refs(&self) -> BTreeSet<String> {
        self.nodes
            .iter()
            .filter_map(|n| n.kernel.clone())
            .collect()
    }

    /// Checks that every leaf kernel reference names a known kernel.
    pub fn check_kernel_refs(&self, known: &BTreeSet<String>) -> Result<()> {
        for node in &self.nodes {
            if let Some(kernel) = &node.kernel {
                if !known.contains(kernel) {
                    return Err(Error::UnknownKernelRef {
                        node: node.id.clone(),
                        kernel: kernel.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn idx(&self, id: &str) -> usize {
        self.index[id]
    }

    fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidDocument("empty node list".into()));
        }
        if !self.index.contains_key(&self.root) {
            return Err(Error::UnknownRoot(self.root.clone()));
        }
        for node in &self.nodes {
            match node.kind {
                NodeKind::Leaf => {
                    if !node.children.is_empty() || node.kernel.is_none() {
                        return Err(Error::MalformedLeaf(node.id.clone()));
                    }
                }
                _ => {
                    if node.children.is_empty() {
                        return Err(Error::EmptyChildren(node.id.clone()));
                    }
                    if node.kernel.is_some() {
                        return Err(Error::KernelOnInternal(node.id.clone()));
                    }
                }
            }
            match node.p {
                Some(p) if node.kind != NodeKind::Product => {
                    let _ = p;
                    return Err(Error::WeightOnNonProduct(node.id.clone()));
                }
                Some(p) if !p.is_finite() || p <= 0.0 => {
                    return Err(Error::NonpositiveExponent {
                        node: node.id.clone(),
                        p,
                    });
                }
                _ => {}
            }
            for child in &node.children {
                if !self.index.contains_key(child) {
                    return Err(Error::UnknownChild {
                        parent: node.id.clone(),
                        child: child.clone(),
                    });
                }
            }
        }
        self.check_acyclic_reachable()
    }

    fn check_acyclic_reachable(&self) -> Result<()> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.nodes.len()];
        let mut stack = vec![(self.idx(&self.root), 0usize)];
        state[self.idx(&self.root)] = 1;
        while let Some(&mut (node, ref mut child)) = stack.last_mut() {
            let children = &self.nodes[node].children;
            if *child < children.len() {
                let next = self.idx(&children[*child]);
                *child += 1;
                match state[next] {
                    0 => {
                        state[next] = 1;
                        stack.push((next, 0));
                    }
                    1 => return Err(Error::CycleDetected(self.nodes[next].id.clone())),
                    _ => {}
                }
            } else {
                state[node] = 2;
                stack.pop();
            }
        }
        if let Some(i) = state.iter().position(|&s| s == 0) {
            return Err(Error::UnreachableNode(self.nodes[i].id.clone()));
        }
        Ok(())
    }
}

/// One product-node occurrence on a path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathMember {
    pub node: NodeId,
    /// 1-based layer index: the number of sum nodes strictly above the
    /// occurrence in the path's induced tree.
    pub layer: usize,
    /// 1-based position within the layer, in traversal order.
    pub ordinal: usize,
}

/// One expanded path (induced tree) of a structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// Index into the owning [`PathTable`].
    pub id: usize,
    /// Weighted product-node occurrences, in traversal order.
    pub members: Vec<PathMember>,
    /// Exponent of each member, aligned with `members`:
    /// `1 / (n_layers * layer_counts[layer - 1])`.
    pub exponents: Vec<Exponent>,
    /// Leaf kernel names with multiplicity, in traversal order.
    pub leaves: Vec<String>,
    /// Number of layers `N_m` (0 when the path has no product node).
    pub n_layers: usize,
    /// Product-node count per layer, `layer_counts[l - 1] = N_{m_l}`.
    pub layer_counts: Vec<usize>,
}

impl Path {
    /// Sum of exponents; exactly 1 for any path with at least one member.
    pub fn exponent_sum(&self) -> Exponent {
        self.exponents.iter().sum()
    }
}

/// All paths of a structure plus per-node aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTable {
    pub paths: Vec<Path>,
    /// Paths on which each product node occurs at least once.
    pub node_to_paths: BTreeMap<NodeId, Vec<usize>>,
    /// Per-unit-penalty regularizer coefficient of each product node:
    /// the exact sum of the node's exponents over all of its path
    /// occurrences. Multiply by the penalty strength to obtain `c_v`.
    pub reg_coeff: BTreeMap<NodeId, Exponent>,
}

impl PathTable {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    fn from_paths(mut paths: Vec<Path>) -> Self {
        let mut node_to_paths: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        let mut reg_coeff: BTreeMap<NodeId, Exponent> = BTreeMap::new();
        for (id, path) in paths.iter_mut().enumerate() {
            path.id = id;
            for (member, exp) in path.members.iter().zip(&path.exponents) {
                let entry = node_to_paths.entry(member.node.clone()).or_default();
                if entry.last() != Some(&id) {
                    entry.push(id);
                }
                *reg_coeff
                    .entry(member.node.clone())
                    .or_insert_with(|| Ratio::new(0, 1)) += *exp;
            }
        }
        PathTable {
            paths,
            node_to_paths,
            reg_coeff,
        }
    }
}

/// Intermediate expansion state: member occurrences as (node index, sum depth)
/// plus leaf node indices.
#[derive(Debug, Clone, Default)]
struct Partial {
    members: Vec<(usize, usize)>,
    leaves: Vec<usize>,
}

impl Partial {
    fn merge(&self, other: &Partial) -> Partial {
        let mut out = self.clone();
        out.members.extend_from_slice(&other.members);
        out.leaves.extend_from_slice(&other.leaves);
        out
    }
}

/// Expands every sum-node choice of `graph` into a [`PathTable`].
///
/// Paths appear in lexicographic order of the child choices taken at sum
/// nodes, visited depth-first with earlier children varying slowest, so
/// identical documents always produce identical tables. Fails if the
/// expansion exceeds `cap` paths or if a path places a product node outside
/// the contiguous layer range `1..=N_m`.
pub fn enumerate_paths(graph: &SpnGraph, cap: usize) -> Result<PathTable> {
    let mut counts: Vec<Option<u128>> = vec![None; graph.nodes.len()];
    let total = count_paths(graph, graph.idx(graph.root()), &mut counts);
    if total > cap as u128 {
        return Err(Error::PathCapExceeded { cap });
    }

    let partials = expand(graph, graph.idx(graph.root()), 0);
    debug_assert_eq!(partials.len() as u128, total);

    let mut paths = Vec::with_capacity(partials.len());
    for partial in &partials {
        paths.push(finish_path(graph, partial)?);
    }
    Ok(PathTable::from_paths(paths))
}

fn count_paths(graph: &SpnGraph, node: usize, memo: &mut Vec<Option<u128>>) -> u128 {
    if let Some(c) = memo[node] {
        return c;
    }
    let n = &graph.nodes[node];
    let count = match n.kind {
        NodeKind::Leaf => 1,
        NodeKind::Sum => n
            .children
            .iter()
            .map(|c| count_paths(graph, graph.idx(c), memo))
            .fold(0u128, u128::saturating_add),
        NodeKind::Product | NodeKind::Combiner => n
            .children
            .iter()
            .map(|c| count_paths(graph, graph.idx(c), memo))
            .fold(1u128, u128::saturating_mul),
    };
    memo[node] = Some(count);
    count
}

fn expand(graph: &SpnGraph, node: usize, sums_above: usize) -> Vec<Partial> {
    let n = &graph.nodes[node];
    match n.kind {
        NodeKind::Leaf => vec![Partial {
            members: Vec::new(),
            leaves: vec![node],
        }],
        NodeKind::Sum => {
            let mut out = Vec::new();
            for child in &n.children {
                out.extend(expand(graph, graph.idx(child), sums_above + 1));
            }
            out
        }
        NodeKind::Product | NodeKind::Combiner => {
            let mut acc = vec![Partial::default()];
            if n.kind == NodeKind::Product {
                acc[0].members.push((node, sums_above));
            }
            for child in &n.children {
                let expanded = expand(graph, graph.idx(child), sums_above);
                let mut next = Vec::with_capacity(acc.len() * expanded.len());
                for left in &acc {
                    for right in &expanded {
                        next.push(left.merge(right));
                    }
                }
                acc = next;
            }
            acc
        }
    }
}

fn finish_path(graph: &SpnGraph, partial: &Partial) -> Result<Path> {
    let n_layers = partial.members.iter().map(|&(_, d)| d).max().unwrap_or(0);
    let mut layer_counts = vec![0usize; n_layers];
    for &(node, depth) in &partial.members {
        if depth == 0 || depth > n_layers {
            return Err(Error::NonAlternatingStructure {
                node: graph.nodes[node].id.clone(),
                depth,
                missing: 0,
            });
        }
        layer_counts[depth - 1] += 1;
    }
    if let Some(missing) = layer_counts.iter().position(|&c| c == 0) {
        let &(node, depth) = partial
            .members
            .iter()
            .min_by_key(|&&(_, d)| d)
            .expect("empty layers imply at least one member");
        return Err(Error::NonAlternatingStructure {
            node: graph.nodes[node].id.clone(),
            depth,
            missing: missing + 1,
        });
    }

    let mut seen_per_layer = vec![0usize; n_layers];
    let mut members = Vec::with_capacity(partial.members.len());
    let mut exponents = Vec::with_capacity(partial.members.len());
    for &(node, depth) in &partial.members {
        seen_per_layer[depth - 1] += 1;
        members.push(PathMember {
            node: graph.nodes[node].id.clone(),
            layer: depth,
            ordinal: seen_per_layer[depth - 1],
        });
        exponents.push(Ratio::new(
            1,
            (n_layers as i64) * (layer_counts[depth - 1] as i64),
        ));
    }
    Ok(Path {
        id: 0,
        members,
        exponents,
        leaves: partial
            .leaves
            .iter()
            .map(|&i| graph.nodes[i].kernel.clone().expect("leaf carries kernel"))
            .collect(),
        n_layers,
        layer_counts,
    })
}

/// Result of removing zero-weight product nodes.
#[derive(Debug, Clone)]
pub struct Pruned {
    pub graph: SpnGraph,
    pub table: PathTable,
    /// Previous path ids that survived, in order; `table.paths[k]`
    /// corresponds to the old path `kept[k]`.
    pub kept: Vec<usize>,
    /// Product nodes that were removed, in document order.
    pub removed: Vec<NodeId>,
}

/// Removes every product node whose weight is at or below `threshold`,
/// together with all paths through it, and rebuilds the graph restricted to
/// the surviving paths. Removal cascades: a sum node loses the dead choice,
/// while a product or combiner node dies with any of its children. Applying
/// the operation twice with the same weights equals applying it once.
pub fn prune_zero_nodes(
    graph: &SpnGraph,
    table: &PathTable,
    betas: &BTreeMap<NodeId, f64>,
    threshold: f64,
) -> Result<Pruned> {
    let removed_set: BTreeSet<&NodeId> = betas
        .iter()
        .filter(|&(id, &b)| b <= threshold && graph.node(id).is_some())
        .map(|(id, _)| id)
        .collect();

    let mut dead = vec![false; graph.nodes.len()];
    let order = postorder(graph);
    for node in order {
        let n = &graph.nodes[node];
        dead[node] = match n.kind {
            NodeKind::Leaf => false,
            NodeKind::Sum => n.children.iter().all(|c| dead[graph.idx(c)]),
            NodeKind::Product | NodeKind::Combiner => {
                removed_set.contains(&n.id) || n.children.iter().any(|c| dead[graph.idx(c)])
            }
        };
    }
    if dead[graph.idx(graph.root())] {
        return Err(Error::EmptyModel);
    }

    // Restrict children to live nodes, then drop everything unreachable.
    let mut reachable = vec![false; graph.nodes.len()];
    let mut stack = vec![graph.idx(graph.root())];
    while let Some(node) = stack.pop() {
        if reachable[node] || dead[node] {
            continue;
        }
        reachable[node] = true;
        for child in &graph.nodes[node].children {
            let c = graph.idx(child);
            if !dead[c] {
                stack.push(c);
            }
        }
    }
    let nodes: Vec<SpnNode> = graph
        .nodes
        .iter()
        .enumerate()
        .filter(|&(i, _)| reachable[i])
        .map(|(_, n)| {
            let mut n = n.clone();
            n.children.retain(|c| !dead[graph.idx(c)]);
            n
        })
        .collect();
    let new_graph = SpnGraph::new(nodes, graph.root().clone())?;

    let mut kept = Vec::new();
    let mut paths = Vec::new();
    for path in &table.paths {
        if path
            .members
            .iter()
            .all(|m| !removed_set.contains(&m.node))
        {
            kept.push(path.id);
            paths.push(path.clone());
        }
    }
    Ok(Pruned {
        graph: new_graph,
        table: PathTable::from_paths(paths),
        kept,
        removed: graph
            .nodes
            .iter()
            .filter(|n| removed_set.contains(&n.id))
            .map(|n| n.id.clone())
            .collect(),
    })
}

fn postorder(graph: &SpnGraph) -> Vec<usize> {
    let mut state = vec![0u8; graph.nodes.len()];
    let mut order = Vec::with_capacity(graph.nodes.len());
    for start in 0..graph.nodes.len() {
        if state[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        state[start] = 1;
        while let Some(&mut (node, ref mut child)) = stack.last_mut() {
            let children = &graph.nodes[node].children;
            if *child < children.len() {
                let next = graph.idx(&children[*child]);
                *child += 1;
                if state[next] == 0 {
                    state[next] = 1;
                    stack.push((next, 0));
                }
            } else {
                state[node] = 2;
                order.push(node);
                stack.pop();
            }
        }
    }
    order
}
