use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

pub const DEFAULT_ER_RETRIES: usize = 100;

/// Undirected simple graph on agents `0..m`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
    connected: bool,
}

impl Graph {
    /// Builds a graph from unordered pairs. Self-loops, out-of-range
    /// endpoints and duplicate pairs are rejected.
    pub fn new(m: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("graph needs at least one node"));
        }
        let mut edges = BTreeSet::new();
        for (i, j) in pairs {
            if i == j {
                return Err(Error::invalid(format!("self-loop at node {i}")));
            }
            if i >= m || j >= m {
                return Err(Error::invalid(format!("edge ({i},{j}) out of range for m = {m}")));
            }
            if !edges.insert((i.min(j), i.max(j))) {
                return Err(Error::invalid(format!("duplicate edge ({i},{j})")));
            }
        }
        let mut g = Graph {
            m,
            edges,
            connected: false,
        };
        g.connected = g.bfs_reach(0) == m;
        Ok(g)
    }

    pub fn complete(m: usize) -> Self {
        let pairs: Vec<_> = (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i, j))).collect();
        Graph::new(m, pairs).expect("complete graph is valid")
    }

    pub fn path(m: usize) -> Self {
        Graph::new(m, (1..m).map(|i| (i - 1, i))).expect("path graph is valid")
    }

    pub fn ring(m: usize) -> Self {
        if m < 3 {
            return Graph::path(m);
        }
        Graph::new(m, (0..m).map(|i| (i, (i + 1) % m))).expect("ring graph is valid")
    }

    pub fn num_nodes(&self) -> usize {
        self.m
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.m];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    fn bfs_reach(&self, start: usize) -> usize {
        let adj = self.neighbors();
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count
    }

    /// Plain-text edge list: first line `m`, then one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.m);
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (first_no, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing node count".into(),
        })?;
        let m: usize = first.parse().map_err(|_| Error::Parse {
            line: first_no,
            message: format!("expected node count, got {first:?}"),
        })?;
        let mut pairs = Vec::new();
        for (no, line) in lines {
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse {
                    line: no,
                    message: format!("expected `i j`, got {line:?}"),
                })
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Parse {
                    line: no,
                    message: format!("trailing tokens in {line:?}"),
                });
            }
            pairs.push((i, j));
        }
        Graph::new(m, pairs)
    }
}

/// Erdős–Rényi `G(m, p_c)`, resampled until connected.
pub fn erdos_renyi(m: usize, p_c: f64, rng: &mut RngStream, max_retries: usize) -> Result<Graph> {
    if m == 0 {
        return Err(Error::invalid("erdos_renyi: m must be >= 1"));
    }
    if !(0.0..=1.0).contains(&p_c) {
        return Err(Error::invalid(format!("erdos_renyi: p_c = {p_c} outside [0, 1]")));
    }
    for _ in 0..max_retries.max(1) {
        let mut pairs = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                if rng.uniform() < p_c {
                    pairs.push((i, j));
                }
            }
        }
        let g = Graph::new(m, pairs)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::TopologyGeneration {
        m,
        p_c,
        retries: max_retries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Lane, Purpose};

    fn topo_rng(seed: u64) -> RngStream {
        RngStream::new(seed, Lane::global(Purpose::Topology))
    }

    #[test]
    fn full_probability_gives_complete_graph() {
        let g = erdos_renyi(4, 1.0, &mut topo_rng(1), DEFAULT_ER_RETRIES).unwrap();
        assert_eq!(g.num_edges(), 6);
        assert!(g.is_connected());
    }

    #[test]
    fn zero_probability_fails() {
        let err = erdos_renyi(3, 0.0, &mut topo_rng(1), 10).unwrap_err();
        assert!(matches!(err, Error::TopologyGeneration { retries: 10, .. }));
    }

    #[test]
    fn single_node_is_connected() {
        let g = erdos_renyi(1, 0.0, &mut topo_rng(1), 1).unwrap();
        assert_eq!(g.num_edges(), 0);
        assert!(g.is_connected());
    }

    #[test]
    fn er_graph_connectivity_matches_independent_traversal() {
        let g = erdos_renyi(9, 0.3, &mut topo_rng(2023), DEFAULT_ER_RETRIES).unwrap();
        // depth-first traversal over the raw edge set, separate from the BFS used at construction
        let edges: Vec<_> = g.edges().collect();
        let mut seen = [false; 9];
        let mut stack = vec![0usize];
        while let Some(u) = stack.pop() {
            if seen[u] {
                continue;
            }
            seen[u] = true;
            for &(a, b) in &edges {
                if a == u && !seen[b] {
                    stack.push(b);
                }
                if b == u && !seen[a] {
                    stack.push(a);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn invalid_probability_rejected() {
        assert!(erdos_renyi(3, 1.5, &mut topo_rng(1), 1).is_err());
        assert!(erdos_renyi(3, -0.1, &mut topo_rng(1), 1).is_err());
    }

    #[test]
    fn construction_rejects_bad_edges() {
        assert!(Graph::new(3, [(0, 0)]).is_err());
        assert!(Graph::new(3, [(0, 1), (1, 0)]).is_err());
        assert!(Graph::new(3, [(0, 3)]).is_err());
        assert!(!Graph::new(3, [(0, 1)]).unwrap().is_connected());
    }

    #[test]
    fn edge_list_roundtrip_and_errors() {
        let g = erdos_renyi(7, 0.5, &mut topo_rng(5), DEFAULT_ER_RETRIES).unwrap();
        let back = Graph::from_edge_list(&g.to_edge_list()).unwrap();
        assert_eq!(g, back);

        let err = Graph::from_edge_list("3\n0 1\n1 x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        assert!(Graph::from_edge_list("").is_err());
    }
}
