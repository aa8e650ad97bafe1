//! The chest abnormality prior-knowledge graph.
//!
//! Every finding category is a node. Categories attached to the same organ or
//! tissue group are fully connected to each other, and one extra global node
//! (always the last index) is connected to every category. The graph is read
//! from a small TOML document so alternative groupings can be dropped in
//! without touching code:
//!
//! ```toml
//! groups = ["lung", "pleura"]
//! extra_edges = [["opacity", "effusion"]]
//!
//! [[categories]]
//! name = "opacity"
//! group = "lung"
//!
//! [[categories]]
//! name = "effusion"
//! group = "pleura"
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The shipped graph definition (20 categories plus the global node).
pub const DEFAULT_GRAPH_SPEC: &str = include_str!("../data/chest_graph.toml");

/// Display name used for the global node in dumps.
pub const GLOBAL_NODE_NAME: &str = "global";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph definition is not valid TOML: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("graph definition could not be serialized: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("graph definition has no categories")]
    EmptyCategories,
    #[error("category #{index} has an invalid name {name:?} (must be non-empty lowercase)")]
    InvalidName { index: usize, name: String },
    #[error("duplicate category {0:?}")]
    DuplicateCategory(String),
    #[error("category {category:?} references undeclared group {group:?}")]
    UnknownGroup { category: String, group: String },
    #[error("extra edge references unknown category {0:?}")]
    UnknownEdgeEndpoint(String),
    #[error("extra edge connects {0:?} to itself")]
    SelfLoop(String),
    #[error("node index {index} out of range for a graph of {count} nodes")]
    NodeOutOfRange { index: usize, count: usize },
}

/// One finding category (a non-global graph node).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingCategory {
    pub id: usize,
    pub name: String,
    pub group: Option<String>,
}

/// Serialized form of a graph definition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    /// When present, every category group must be listed here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<String>>,
    #[serde(default)]
    pub extra_edges: Vec<(String, String)>,
    pub categories: Vec<CategorySpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl GraphSpec {
    pub fn from_toml(text: &str) -> Result<Self, GraphError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, GraphError> {
        Ok(toml::to_string(self)?)
    }
}

/// Dense symmetric 0/1 adjacency over `n` nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    /// Builds an undirected adjacency from an edge list. Self-loops are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adj = Self::empty(n);
        for (a, b) in edges {
            adj.connect(a, b);
        }
        adj
    }

    fn connect(&mut self, a: usize, b: usize) {
        if a != b {
            self.bits[a * self.n + b] = true;
            self.bits[b * self.n + a] = true;
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.bits[a * self.n + b]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.bits[node * self.n..(node + 1) * self.n]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count() / 2
    }

    /// Undirected edges with `a < b`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.n {
            for b in a + 1..self.n {
                if self.contains(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Rows of 0.0/1.0 values.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| if self.contains(i, j) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect()
    }
}

/// Validated chest abnormality graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ChestGraph {
    categories: Vec<FindingCategory>,
    global_node: usize,
    adjacency: Adjacency,
    groups: BTreeMap<String, Vec<usize>>,
    extra_edges: Vec<(usize, usize)>,
    declared_groups: Option<Vec<String>>,
    by_name: HashMap<String, usize>,
}

impl ChestGraph {
    /// Loads the shipped 20-category graph.
    pub fn default_graph() -> Self {
        Self::from_toml(DEFAULT_GRAPH_SPEC).expect("shipped graph definition is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, GraphError> {
        Self::from_spec(&GraphSpec::from_toml(text)?)
    }

    pub fn from_spec(spec: &GraphSpec) -> Result<Self, GraphError> {
        if spec.categories.is_empty() {
            return Err(GraphError::EmptyCategories);
        }
        let declared: Option<BTreeSet<&str>> = spec
            .groups
            .as_ref()
            .map(|g| g.iter().map(String::as_str).collect());

        let mut categories = Vec::with_capacity(spec.categories.len());
        let mut by_name = HashMap::new();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (index, cat) in spec.categories.iter().enumerate() {
            let name = cat.name.trim();
            if name.is_empty() || name != cat.name || name.to_lowercase() != name {
                return Err(GraphError::InvalidName {
                    index,
                    name: cat.name.clone(),
                });
            }
            if by_name.insert(name.to_string(), index).is_some() {
                return Err(GraphError::DuplicateCategory(name.to_string()));
            }
            if let Some(group) = &cat.group {
                if let Some(declared) = &declared {
                    if !declared.contains(group.as_str()) {
                        return Err(GraphError::UnknownGroup {
                            category: name.to_string(),
                            group: group.clone(),
                        });
                    }
                }
                groups.entry(group.clone()).or_default().push(index);
            }
            categories.push(FindingCategory {
                id: index,
                name: name.to_string(),
                group: cat.group.clone(),
            });
        }

        let global_node = categories.len();
        let mut adjacency = Adjacency::empty(global_node + 1);
        for members in groups.values() {
            for (k, &a) in members.iter().enumerate() {
                for &b in &members[k + 1..] {
                    adjacency.connect(a, b);
                }
            }
        }
        for id in 0..global_node {
            adjacency.connect(id, global_node);
        }
        let mut extra_edges = Vec::with_capacity(spec.extra_edges.len());
        for (a, b) in &spec.extra_edges {
            let ia = *by_name
                .get(a.as_str())
                .ok_or_else(|| GraphError::UnknownEdgeEndpoint(a.clone()))?;
            let ib = *by_name
                .get(b.as_str())
                .ok_or_else(|| GraphError::UnknownEdgeEndpoint(b.clone()))?;
            if ia == ib {
                return Err(GraphError::SelfLoop(a.clone()));
            }
            adjacency.connect(ia, ib);
            extra_edges.push((ia, ib));
        }

        Ok(Self {
            categories,
            global_node,
            adjacency,
            groups,
            extra_edges,
            declared_groups: spec.groups.clone(),
            by_name,
        })
    }

    /// Reconstructs a spec that reloads to an identical graph.
    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            groups: self.declared_groups.clone(),
            extra_edges: self
                .extra_edges
                .iter()
                .map(|&(a, b)| {
                    (
                        self.categories[a].name.clone(),
                        self.categories[b].name.clone(),
                    )
                })
                .collect(),
            categories: self
                .categories
                .iter()
                .map(|c| CategorySpec {
                    name: c.name.clone(),
                    group: c.group.clone(),
                })
                .collect(),
        }
    }

    pub fn categories(&self) -> &[FindingCategory] {
        &self.categories
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    /// Categories plus the global node.
    pub fn node_count(&self) -> usize {
        self.categories.len() + 1
    }

    pub fn global_node(&self) -> usize {
        self.global_node
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn groups(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.groups
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn contains_category(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn node_name(&self, node: usize) -> Result<&str, GraphError> {
        if node == self.global_node {
            Ok(GLOBAL_NODE_NAME)
        } else {
            self.categories
                .get(node)
                .map(|c| c.name.as_str())
                .ok_or(GraphError::NodeOutOfRange {
                    index: node,
                    count: self.node_count(),
                })
        }
    }

    pub fn neighbors(&self, node: usize) -> Result<BTreeSet<usize>, GraphError> {
        let n = self.node_count();
        if node >= n {
            return Err(GraphError::NodeOutOfRange {
                index: node,
                count: n,
            });
        }
        Ok((0..n).filter(|&j| self.adjacency.contains(node, j)).collect())
    }
}

/// Which normalization of the adjacency feeds the graph convolution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PropagationKind {
    /// `D̃^-1/2 (A + I) D̃^-1/2`, with `D̃` the degree matrix of `A + I`.
    #[default]
    Renormalized,
    /// `I - D^-1/2 A D^-1/2` (isolated nodes keep a zero row outside the diagonal).
    Laplacian,
}

/// Dense square propagation matrix `Â`, rows indexed like the graph nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix {
    n: usize,
    values: Vec<f64>,
}

impl PropagationMatrix {
    pub fn from_adjacency(adj: &Adjacency, kind: PropagationKind) -> Self {
        let n = adj.len();
        let mut values = vec![0.0; n * n];
        match kind {
            PropagationKind::Renormalized => {
                let inv_sqrt: Vec<f64> = (0..n)
                    .map(|i| 1.0 / ((adj.degree(i) + 1) as f64).sqrt())
                    .collect();
                for i in 0..n {
                    for j in 0..n {
                        if i == j || adj.contains(i, j) {
                            values[i * n + j] = inv_sqrt[i] * inv_sqrt[j];
                        }
                    }
                }
            }
            PropagationKind::Laplacian => {
                let inv_sqrt: Vec<f64> = (0..n)
                    .map(|i| match adj.degree(i) {
                        0 => 0.0,
                        d => 1.0 / (d as f64).sqrt(),
                    })
                    .collect();
                for i in 0..n {
                    values[i * n + i] = 1.0;
                    for j in 0..n {
                        if adj.contains(i, j) {
                            values[i * n + j] = -inv_sqrt[i] * inv_sqrt[j];
                        }
                    }
                }
            }
        }
        Self { n, values }
    }

    /// Builds a matrix from explicit row-major values.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        Self {
            n,
            values: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.values
            .chunks(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Largest absolute eigenvalue estimated by power iteration.
    ///
    /// `‖Âx‖` for a unit vector in the dominant eigenspace equals `|λ_max|`
    /// even when `λ` and `-λ` are both present, so the estimate converges for
    /// any symmetric matrix.
    pub fn spectral_radius(&self, max_iters: usize, tol: f64) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let mut x: Vec<f64> = (0..self.n).map(|i| 1.0 + 0.37 * i as f64).collect();
        normalize(&mut x);
        let mut estimate = 0.0;
        for _ in 0..max_iters {
            let mut y = self.mul_vec(&x);
            let norm = normalize(&mut y);
            if norm == 0.0 {
                return 0.0;
            }
            let converged = (norm - estimate).abs() <= tol * norm.max(1.0);
            estimate = norm;
            x = y;
            if converged {
                break;
            }
        }
        estimate
    }
}

fn normalize(x: &mut [f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
    norm
}

/// `Â` for a loaded graph with the default renormalization.
pub fn normalized_propagation(graph: &ChestGraph) -> PropagationMatrix {
    PropagationMatrix::from_adjacency(graph.adjacency(), PropagationKind::Renormalized)
}

/// Output layout of [`dump_graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    /// The propagation matrix, one row per line.
    Matrix,
    /// One line per undirected edge: `i j name_i name_j weight`.
    Edges,
}

/// Text dump of the graph with 6-decimal fixed formatting.
pub fn dump_graph(graph: &ChestGraph, prop: &PropagationMatrix, format: DumpFormat) -> String {
    let mut out = String::new();
    match format {
        DumpFormat::Matrix => {
            for row in prop.to_rows() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                out.push_str(&cells.join(" "));
                out.push('\n');
            }
        }
        DumpFormat::Edges => {
            for (a, b) in graph.adjacency().edges() {
                // Indices come from the graph itself, so names always resolve.
                let na = graph.node_name(a).unwrap_or("?");
                let nb = graph.node_name(b).unwrap_or("?");
                out.push_str(&format!("{a}\t{b}\t{na}\t{nb}\t{:.6}\n", prop.get(a, b)));
            }
        }
    }
    out
}

impl fmt::Display for FindingCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}
