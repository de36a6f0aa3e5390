//! Undirected weighted graphs (the communication topology and the support of
//! every SDDM matrix in the crate) and directed networks for flow problems.

mod generate;

pub use generate::{generate_random_network, RandomNetwork};

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};

/// Undirected graph with strictly positive edge weights.
///
/// Neighbor lists are kept sorted by node id so that every traversal and
/// every reduction over neighbors happens in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    pub fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (idx, &(i, j, w)) in edges.iter().enumerate() {
            if i >= n || j >= n {
                return Err(Error::Structure(format!(
                    "edge {idx} ({i}, {j}) references a node outside 0..{n}"
                )));
            }
            if i == j {
                return Err(Error::Structure(format!(
                    "edge {idx} is a self-loop on node {i}"
                )));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Structure(format!(
                    "edge {idx} ({i}, {j}) has non-positive weight {w}"
                )));
            }
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        for (k, list) in adj.iter_mut().enumerate() {
            list.sort_by_key(|&(j, _)| j);
            if let Some(win) = list.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::Structure(format!(
                    "duplicate edge between {k} and {}",
                    win[0].0
                )));
            }
        }
        Ok(Self { n, edges, adj })
    }

    /// Builds the graph and additionally rejects disconnected inputs.
    pub fn new_connected(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let g = Self::new(n, edges)?;
        g.validate_connected()?;
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Neighbors of `k` with edge weights, sorted by id.
    pub fn neighbors(&self, k: usize) -> &[(usize, f64)] {
        &self.adj[k]
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && self.adj[i].binary_search_by_key(&j, |&(v, _)| v).is_ok()
    }

    pub fn degree(&self, k: usize) -> usize {
        self.adj[k].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn weight_range(&self) -> Option<(f64, f64)> {
        self.edges.iter().fold(None, |acc, &(_, _, w)| match acc {
            None => Some((w, w)),
            Some((lo, hi)) => Some((lo.min(w), hi.max(w))),
        })
    }

    /// Same topology with every weight set to one.
    pub fn unit_weights(&self) -> Self {
        let edges = self.edges.iter().map(|&(i, j, _)| (i, j, 1.0)).collect();
        Self::new(self.n, edges).expect("topology already validated")
    }

    /// Hop distances from `src`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        dist[src] = Some(0);
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &(v, _) in &self.adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() <= 1
    }

    pub fn validate_connected(&self) -> Result<()> {
        match self.component_count() {
            0 | 1 => Ok(()),
            components => Err(Error::Disconnected { components }),
        }
    }

    /// The ball `{v : dist(k, v) <= radius}`, sorted by id and including `k`.
    pub fn r_hop_neighborhood(&self, k: usize, radius: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        let mut queue = VecDeque::new();
        dist[k] = 0;
        queue.push_back(k);
        let mut ball = vec![k];
        while let Some(u) = queue.pop_front() {
            if dist[u] == radius {
                continue;
            }
            for &(v, _) in &self.adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    ball.push(v);
                    queue.push_back(v);
                }
            }
        }
        ball.sort_unstable();
        ball
    }

    /// Upper bound on the size of any `radius`-hop ball:
    /// `min{n, (d_max^(radius+1) - 1) / (d_max - 1)}`.
    pub fn ball_size_bound(&self, radius: usize) -> usize {
        let dmax = self.max_degree();
        let geometric = match dmax {
            0 => 1.0,
            1 => (radius + 1) as f64,
            d => {
                let d = d as f64;
                (d.powi(radius as i32 + 1) - 1.0) / (d - 1.0)
            }
        };
        if geometric >= self.n as f64 {
            self.n
        } else {
            geometric as usize
        }
    }

    /// Double-sweep BFS estimate of the diameter. Returns the endpoints and
    /// their distance; the estimate is a lower bound on the true diameter and
    /// exact on trees.
    pub fn diameter_estimate(&self) -> (usize, usize, usize) {
        if self.n == 0 {
            return (0, 0, 0);
        }
        let farthest = |src: usize| {
            self.bfs_distances(src)
                .iter()
                .enumerate()
                .filter_map(|(v, d)| d.map(|d| (v, d)))
                // ties go to the lowest id
                .fold(
                    (src, 0),
                    |best, (v, d)| if d > best.1 { (v, d) } else { best },
                )
        };
        let (u, _) = farthest(0);
        let (v, d) = farthest(u);
        (u, v, d)
    }

    /// Grounding node: the lowest-index node of maximum degree.
    pub fn grounding_node(&self) -> usize {
        let dmax = self.max_degree();
        (0..self.n).find(|&k| self.degree(k) == dmax).unwrap_or(0)
    }
}

/// Directed network with `n` nodes and an ordered list of arcs.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedNetwork {
    n: usize,
    arcs: Vec<(usize, usize)>,
    /// Per node: (arc index, +1 if the arc leaves the node, -1 if it enters).
    incident: Vec<Vec<(usize, f64)>>,
}

impl DirectedNetwork {
    pub fn new(n: usize, arcs: Vec<(usize, usize)>) -> Result<Self> {
        let mut incident = vec![Vec::new(); n];
        for (e, &(s, t)) in arcs.iter().enumerate() {
            if s >= n || t >= n {
                return Err(Error::Structure(format!(
                    "arc {e} ({s}, {t}) references a node outside 0..{n}"
                )));
            }
            if s == t {
                return Err(Error::Structure(format!(
                    "arc {e} is a self-loop on node {s}"
                )));
            }
            incident[s].push((e, 1.0));
            incident[t].push((e, -1.0));
        }
        Ok(Self { n, arcs, incident })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    /// Incidence entries of node `k`: (arc index, sign), in arc order.
    pub fn incident(&self, k: usize) -> &[(usize, f64)] {
        &self.incident[k]
    }

    /// Dense node-arc incidence matrix (+1 at the source, -1 at the destination).
    pub fn incidence_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut a = nalgebra::DMatrix::zeros(self.n, self.arcs.len());
        for (e, &(s, t)) in self.arcs.iter().enumerate() {
            a[(s, e)] = 1.0;
            a[(t, e)] = -1.0;
        }
        a
    }

    /// `A x` for a flow vector `x`.
    pub fn apply_incidence(&self, x: &[f64]) -> Vec<f64> {
        self.incident
            .iter()
            .map(|inc| inc.iter().map(|&(e, sgn)| sgn * x[e]).sum())
            .collect()
    }

    /// Underlying undirected graph; `weights[e]` is assigned to arc `e` and
    /// antiparallel arcs are merged by summing their weights.
    pub fn underlying_graph(&self, weights: &[f64]) -> Result<WeightedGraph> {
        if weights.len() != self.arcs.len() {
            return Err(Error::param(format!(
                "expected {} arc weights, got {}",
                self.arcs.len(),
                weights.len()
            )));
        }
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (&(s, t), &w) in self.arcs.iter().zip(weights) {
            *merged.entry((s.min(t), s.max(t))).or_insert(0.0) += w;
        }
        WeightedGraph::new(
            self.n,
            merged.into_iter().map(|((i, j), w)| (i, j, w)).collect(),
        )
    }

    /// Underlying graph with unit arc weights (its Laplacian is `A Aᵀ`).
    pub fn unweighted_graph(&self) -> WeightedGraph {
        self.underlying_graph(&vec![1.0; self.arcs.len()])
            .expect("arcs already validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> WeightedGraph {
        WeightedGraph::new(3, vec![(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn rejects_self_loops_and_bad_weights() {
        assert!(WeightedGraph::new(2, vec![(0, 0, 1.0)]).is_err());
        assert!(WeightedGraph::new(2, vec![(0, 1, 0.0)]).is_err());
        assert!(WeightedGraph::new(2, vec![(0, 1, -1.0)]).is_err());
        assert!(WeightedGraph::new(2, vec![(0, 1, 1.0), (1, 0, 2.0)]).is_err());
        assert!(WeightedGraph::new(2, vec![(0, 2, 1.0)]).is_err());
    }

    #[test]
    fn disconnected_is_reported() {
        let g = WeightedGraph::new(4, vec![(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert!(matches!(
            g.validate_connected(),
            Err(Error::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn neighborhoods_on_path() {
        let g = path3();
        assert_eq!(g.r_hop_neighborhood(0, 0), vec![0]);
        assert_eq!(g.r_hop_neighborhood(0, 1), vec![0, 1]);
        assert_eq!(g.r_hop_neighborhood(0, 2), vec![0, 1, 2]);
        assert_eq!(g.r_hop_neighborhood(1, 1), vec![0, 1, 2]);
    }

    #[test]
    fn ball_bound_formula() {
        let g = path3();
        // d_max = 2: (2^(r+1) - 1) / 1
        assert_eq!(g.ball_size_bound(0), 1);
        assert_eq!(g.ball_size_bound(1), 3);
        assert_eq!(g.ball_size_bound(5), 3);
    }

    #[test]
    fn diameter_of_path() {
        let g = WeightedGraph::new(5, (0..4).map(|i| (i, i + 1, 1.0)).collect()).unwrap();
        let (u, v, d) = g.diameter_estimate();
        assert_eq!(d, 4);
        assert_eq!((u.min(v), u.max(v)), (0, 4));
    }

    #[test]
    fn grounding_node_is_lowest_max_degree() {
        let g = WeightedGraph::new(4, vec![(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        assert_eq!(g.grounding_node(), 1);
    }

    #[test]
    fn incidence_columns() {
        let net = DirectedNetwork::new(3, vec![(0, 1), (2, 1)]).unwrap();
        let a = net.incidence_dense();
        for e in 0..2 {
            let col = a.column(e);
            assert_eq!(col.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(col.iter().filter(|&&v| v == -1.0).count(), 1);
            assert_eq!(col.iter().filter(|&&v| v == 0.0).count(), 1);
        }
        assert_eq!(net.apply_incidence(&[1.0, 2.0]), vec![1.0, -3.0, 2.0]);
    }

    #[test]
    fn antiparallel_arcs_merge() {
        let net = DirectedNetwork::new(2, vec![(0, 1), (1, 0)]).unwrap();
        let g = net.unweighted_graph();
        assert_eq!(g.edges(), &[(0, 1, 2.0)]);
    }
}
