//! Undirected interference graphs with self-edges, two-hop expansion and
//! greedy coloring.
//!
//! Neighbor lists are kept in ascending index order (the ego unit included);
//! this order defines the "i-th neighbor" for all permutation bookkeeping in
//! donor matching, so it must be stable across calls.

use crate::error::{NsiError, Result};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

/// Immutable undirected graph over `[N]` units. Self-edges are always present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    n_units: usize,
    /// Sorted ascending, includes the unit itself.
    neighbors: Vec<Vec<usize>>,
}

/// Kind of regular graph to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularGraphKind {
    Ring,
    Circulant,
}

/// A proper coloring of a graph. Colors are 1-based, i.e. in `[num_colors]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    pub num_colors: usize,
    pub assignment: Vec<usize>,
}

impl NetworkGraph {
    /// Builds a graph from an edge iterator. Edges are symmetrized and
    /// self-edges are added for every unit.
    pub fn from_edges<I>(n_units: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n_units == 0 {
            return Err(NsiError::input("graph must have at least one unit"));
        }
        let mut sets: Vec<BTreeSet<usize>> = (0..n_units).map(|n| BTreeSet::from([n])).collect();
        for (i, j) in edges {
            if i >= n_units || j >= n_units {
                return Err(NsiError::input(format!(
                    "edge ({i}, {j}) out of range for {n_units} units"
                )));
            }
            sets[i].insert(j);
            sets[j].insert(i);
        }
        Ok(NetworkGraph {
            n_units,
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    /// Neighborhood `N(n)` including `n`, ascending.
    pub fn neighbors(&self, n: usize) -> Result<&[usize]> {
        self.neighbors
            .get(n)
            .map(Vec::as_slice)
            .ok_or_else(|| NsiError::input(format!("unit {n} out of range (N = {})", self.n_units)))
    }

    /// Non-self degree of unit `n`.
    pub fn degree(&self, n: usize) -> usize {
        self.neighbors[n].len() - 1
    }

    /// Maximum non-self degree over all units.
    pub fn max_degree(&self) -> usize {
        (0..self.n_units).map(|n| self.degree(n)).max().unwrap_or(0)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n_units && self.neighbors[i].binary_search(&j).is_ok()
    }

    /// All non-self edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n_units {
            for &j in &self.neighbors[i] {
                if j > i {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// The graph `G'` obtained by adding an edge between every pair of units
    /// at distance two. The original edge set is preserved.
    pub fn two_hop(&self) -> NetworkGraph {
        let mut sets: Vec<BTreeSet<usize>> = self
            .neighbors
            .iter()
            .map(|ns| ns.iter().copied().collect())
            .collect();
        for i in 0..self.n_units {
            for &j in &self.neighbors[i] {
                for &k in &self.neighbors[j] {
                    sets[i].insert(k);
                }
            }
        }
        NetworkGraph {
            n_units: self.n_units,
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    /// Greedy proper coloring: units visited in ascending index order, each
    /// assigned the smallest color not used by an already-colored neighbor.
    /// Self-edges are ignored. Uses at most `max_degree + 1` colors.
    pub fn greedy_color(&self) -> Coloring {
        let mut assignment = vec![0usize; self.n_units];
        let mut num_colors = 0;
        for n in 0..self.n_units {
            let used: BTreeSet<usize> = self.neighbors[n]
                .iter()
                .filter(|&&j| j != n && assignment[j] != 0)
                .map(|&j| assignment[j])
                .collect();
            let color = (1..).find(|c| !used.contains(c)).unwrap();
            assignment[n] = color;
            num_colors = num_colors.max(color);
        }
        Coloring {
            num_colors,
            assignment,
        }
    }

    /// BFS distance between two units, ignoring self-edges. `None` if
    /// disconnected.
    pub fn distance(&self, from: usize, to: usize) -> Option<usize> {
        if from == to {
            return Some(0);
        }
        let mut dist = vec![usize::MAX; self.n_units];
        dist[from] = 0;
        let mut queue = std::collections::VecDeque::from([from]);
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    if j == to {
                        return Some(dist[j]);
                    }
                    queue.push_back(j);
                }
            }
        }
        None
    }

    /// Parses the edge-list text format: one `i j` pair per line, 0-based,
    /// whitespace-separated. Blank lines and `#` comments are ignored.
    /// Self-edges are implied. The number of units is `max index + 1` unless
    /// a larger `n_units` is given.
    pub fn parse_edge_list(text: &str, n_units: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        let mut max_idx = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok()).ok_or_else(|| {
                    NsiError::input(format!("edge list line {}: expected `i j`", lineno + 1))
                })
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            if it.next().is_some() {
                return Err(NsiError::input(format!(
                    "edge list line {}: trailing tokens",
                    lineno + 1
                )));
            }
            max_idx = max_idx.max(i).max(j);
            edges.push((i, j));
        }
        let n = match n_units {
            Some(n) => n,
            None if edges.is_empty() => {
                return Err(NsiError::input("edge list is empty and no unit count given"))
            }
            None => max_idx + 1,
        };
        NetworkGraph::from_edges(n, edges)
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_edge_list(&text, None)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (i, j) in self.edges() {
            writeln!(out, "{i} {j}").unwrap();
        }
        out
    }
}

impl Coloring {
    /// Checks properness with respect to `g` (self-edges ignored).
    pub fn is_proper(&self, g: &NetworkGraph) -> bool {
        g.edges()
            .iter()
            .all(|&(i, j)| self.assignment[i] != self.assignment[j])
    }
}

/// Generates a regular graph. `ring` is the cycle graph (degree 2);
/// `circulant` connects each unit to offsets `1..=degree/2` in both
/// directions, so `degree` must be even.
pub fn make_regular_graph(
    kind: RegularGraphKind,
    n_units: usize,
    degree: usize,
) -> Result<NetworkGraph> {
    if degree >= n_units {
        return Err(NsiError::input(format!(
            "degree {degree} must be smaller than n_units {n_units}"
        )));
    }
    match kind {
        RegularGraphKind::Ring => {
            if degree != 2 {
                return Err(NsiError::input("ring graphs have degree 2"));
            }
            make_regular_graph(RegularGraphKind::Circulant, n_units, 2)
        }
        RegularGraphKind::Circulant => {
            if degree % 2 != 0 || degree == 0 {
                return Err(NsiError::input(format!(
                    "circulant construction needs a positive even degree, got {degree}"
                )));
            }
            let mut edges = Vec::new();
            for i in 0..n_units {
                for off in 1..=degree / 2 {
                    edges.push((i, (i + off) % n_units));
                }
            }
            NetworkGraph::from_edges(n_units, edges)
        }
    }
}
