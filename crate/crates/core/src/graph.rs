//! Directed static graphs: construction, Barabási–Albert generation,
//! connected components, induced subgraphs, the symmetric normalized
//! Laplacian and random edge removal.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;

pub type NodeId = usize;

/// Directed graph over dense node ids `0..node_count`.
///
/// Edges are kept sorted; there are no self-loops and no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticGraph {
    node_count: usize,
    edges: Vec<(NodeId, NodeId)>,
    out_adj: Vec<Vec<NodeId>>,
    in_adj: Vec<Vec<NodeId>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeProfile {
    pub in_degree: Vec<usize>,
    pub out_degree: Vec<usize>,
}

/// A graph extracted from a parent, with `nodes[local] = parent id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub graph: StaticGraph,
    pub nodes: Vec<NodeId>,
}

impl StaticGraph {
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            for node in [u, v] {
                if node >= node_count {
                    return Err(Error::UnknownNode { node, node_count });
                }
            }
            if u == v {
                return Err(Error::InvalidParameter(format!("self-loop on node {u}")));
            }
            set.insert((u, v));
        }
        Ok(Self::from_sorted(node_count, set.into_iter().collect()))
    }

    /// Build from undirected pairs, storing both directions.
    pub fn undirected(node_count: usize, pairs: impl IntoIterator<Item = (NodeId, NodeId)>) -> Result<Self> {
        Self::new(node_count, pairs.into_iter().flat_map(|(u, v)| [(u, v), (v, u)]))
    }

    fn from_sorted(node_count: usize, edges: Vec<(NodeId, NodeId)>) -> Self {
        let mut out_adj = vec![Vec::new(); node_count];
        let mut in_adj = vec![Vec::new(); node_count];
        for &(u, v) in &edges {
            out_adj[u].push(v);
            in_adj[v].push(u);
        }
        for list in in_adj.iter_mut() {
            list.sort_unstable();
        }
        Self {
            node_count,
            edges,
            out_adj,
            in_adj,
        }
    }

    pub fn empty(node_count: usize) -> Self {
        Self::from_sorted(node_count, Vec::new())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn out_neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.out_adj[node]
    }

    pub fn in_neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.in_adj[node]
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        u < self.node_count && self.out_adj[u].binary_search(&v).is_ok()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node < self.node_count
    }

    /// Index of edge `(u, v)` in [`StaticGraph::edges`].
    pub fn edge_index(&self, u: NodeId, v: NodeId) -> Option<usize> {
        self.edges.binary_search(&(u, v)).ok()
    }

    /// Unordered pairs `(min, max)` for every edge in either direction.
    pub fn undirected_edges(&self) -> Vec<(NodeId, NodeId)> {
        let set: BTreeSet<_> = self.edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        set.into_iter().collect()
    }

    pub fn degrees(&self) -> DegreeProfile {
        DegreeProfile {
            in_degree: self.in_adj.iter().map(Vec::len).collect(),
            out_degree: self.out_adj.iter().map(Vec::len).collect(),
        }
    }

    /// Adjacency of the symmetrized graph, 0/1 entries.
    pub fn symmetric_adjacency(&self) -> Array2<f64> {
        let n = self.node_count;
        let mut a = Array2::zeros((n, n));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }

    /// `I - D^{-1/2} A D^{-1/2}` over the symmetrized adjacency.
    ///
    /// Isolated nodes get a zero off-diagonal row and a unit diagonal.
    pub fn symmetric_normalized_laplacian(&self) -> Array2<f64> {
        let n = self.node_count;
        let a = self.symmetric_adjacency();
        let inv_sqrt: Vec<f64> = a
            .rows()
            .into_iter()
            .map(|row| {
                let d = row.sum();
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let mut l = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                l[[i, j]] = -inv_sqrt[i] * a[[i, j]] * inv_sqrt[j];
            }
            l[[i, i]] = 1.0;
        }
        l
    }

    /// Subgraph induced by `nodes`, relabelled densely in the given order.
    pub fn induced_subgraph(&self, nodes: &[NodeId]) -> Result<Subgraph> {
        let mut local = vec![usize::MAX; self.node_count];
        for (i, &node) in nodes.iter().enumerate() {
            if node >= self.node_count {
                return Err(Error::UnknownNode {
                    node,
                    node_count: self.node_count,
                });
            }
            if local[node] != usize::MAX {
                return Err(Error::InvalidParameter(format!("node {node} listed twice")));
            }
            local[node] = i;
        }
        let mut edges = Vec::new();
        for (i, &u) in nodes.iter().enumerate() {
            for &v in &self.out_adj[u] {
                let j = local[v];
                if j != usize::MAX {
                    edges.push((i, j));
                }
            }
        }
        edges.sort_unstable();
        Ok(Subgraph {
            graph: Self::from_sorted(nodes.len(), edges),
            nodes: nodes.to_vec(),
        })
    }

    /// Largest weakly connected component; ties go to the component with
    /// the smallest node id.
    pub fn largest_connected_component(&self) -> Result<Subgraph> {
        if self.node_count == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut component = vec![usize::MAX; self.node_count];
        let mut best: Vec<NodeId> = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.node_count {
            if component[start] != usize::MAX {
                continue;
            }
            let mut members = vec![start];
            component[start] = start;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in self.out_adj[u].iter().chain(&self.in_adj[u]) {
                    if component[v] == usize::MAX {
                        component[v] = start;
                        members.push(v);
                        queue.push_back(v);
                    }
                }
            }
            if members.len() > best.len() {
                best = members;
            }
        }
        best.sort_unstable();
        self.induced_subgraph(&best)
    }

    /// Remove `floor(fraction * |undirected edges|)` undirected edges chosen
    /// uniformly at random (both directions go together).
    pub fn drop_edges(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidParameter(format!(
                "drop fraction {fraction} not in [0, 1)"
            )));
        }
        let mut pairs = self.undirected_edges();
        let remove = (fraction * pairs.len() as f64).floor() as usize;
        if remove == 0 {
            return Ok(self.clone());
        }
        let mut rng = seed::rng(seed);
        pairs.shuffle(&mut rng);
        let dropped: BTreeSet<_> = pairs[..remove].iter().copied().collect();
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|&(u, v)| !dropped.contains(&(u.min(v), u.max(v))))
            .collect();
        Ok(Self::from_sorted(self.node_count, edges))
    }

    pub fn load_edge_list(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut edges = Vec::new();
        let mut max_node = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let mut fields = trimmed.split('\t');
            let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err(format!("expected `src<TAB>dst`, got {trimmed:?}")));
            };
            let u: NodeId = a.trim().parse().map_err(|e| parse_err(format!("bad src: {e}")))?;
            let v: NodeId = b.trim().parse().map_err(|e| parse_err(format!("bad dst: {e}")))?;
            if u == v {
                return Err(parse_err(format!("self-loop on node {u}")));
            }
            max_node = Some(max_node.unwrap_or(0).max(u).max(v));
            edges.push((u, v));
        }
        Self::new(max_node.map_or(0, |m| m + 1), edges)
    }

    /// Writes one `src<TAB>dst` line per edge. A `# nodes N` header keeps
    /// trailing isolated nodes.
    pub fn save_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("# nodes {}\n", self.node_count));
        for &(u, v) in &self.edges {
            out.push_str(&format!("{u}\t{v}\n"));
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads the `# nodes N` header if present; otherwise as [`Self::load_edge_list`].
    pub fn load(path: &Path) -> Result<Self> {
        let g = Self::load_edge_list(path)?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let declared = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# nodes "))
            .and_then(|n| n.trim().parse::<usize>().ok());
        match declared {
            Some(n) if n > g.node_count => Ok(Self::from_sorted(n, g.edges)),
            _ => Ok(g),
        }
    }
}

/// Barabási–Albert preferential attachment, stored as symmetric directed pairs.
///
/// Starts from `m` unconnected nodes; each new node attaches to `m` distinct
/// existing nodes with probability proportional to their current degree.
pub fn ba_generate(n: usize, m: usize, seed: u64) -> Result<StaticGraph> {
    if m < 1 || n <= m {
        return Err(Error::InvalidParameter(format!(
            "Barabasi-Albert needs n > m >= 1, got n={n}, m={m}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut pairs = Vec::with_capacity((n - m) * m);
    // every endpoint appears once per incident edge
    let mut repeated: Vec<NodeId> = Vec::with_capacity(2 * (n - m) * m);
    let mut targets: Vec<NodeId> = (0..m).collect();
    for source in m..n {
        for &t in &targets {
            pairs.push((source, t));
        }
        repeated.extend(targets.iter().copied());
        repeated.extend(std::iter::repeat(source).take(m));
        let mut chosen = BTreeSet::new();
        while chosen.len() < m {
            chosen.insert(repeated[rng.gen_range(0..repeated.len())]);
        }
        targets = chosen.into_iter().collect();
    }
    StaticGraph::undirected(n, pairs)
}
