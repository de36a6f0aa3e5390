use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DirectedNetwork, WeightedGraph};
use crate::error::{Error, Result};

/// A generated instance: topology, an orientation of every edge, and a
/// unit source/sink supply placed at the ends of an estimated diameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomNetwork {
    pub graph: WeightedGraph,
    pub network: DirectedNetwork,
    pub supply: Vec<f64>,
    pub seed: u64,
}

/// Above this many node pairs the extra edges are drawn by rejection
/// sampling instead of from an explicit complement list.
const ENUMERATION_LIMIT: usize = 1 << 20;

/// Draws a connected graph with `n` nodes and `m` edges.
///
/// The stream is ChaCha8 seeded with `seed` via `SeedableRng::seed_from_u64`.
/// A uniformly random recursive spanning tree is built on a shuffled node
/// order, then `m - (n - 1)` further distinct edges are added uniformly from
/// the remaining pairs. Each edge is oriented by a fair coin and weighted
/// uniformly in `weight_range`. The supply is `+1` at one end of a
/// double-sweep BFS diameter pair and `-1` at the other.
pub fn generate_random_network(
    n: usize,
    m: usize,
    seed: u64,
    weight_range: (f64, f64),
) -> Result<RandomNetwork> {
    let (w_lo, w_hi) = weight_range;
    if n < 2 {
        return Err(Error::param(format!(
            "need at least two nodes, got n = {n}"
        )));
    }
    let max_edges = n * (n - 1) / 2;
    if m < n - 1 || m > max_edges {
        return Err(Error::param(format!(
            "m = {m} is infeasible for n = {n}; need {} <= m <= {max_edges}",
            n - 1
        )));
    }
    if !(w_lo.is_finite() && w_hi.is_finite() && w_lo > 0.0 && w_lo <= w_hi) {
        return Err(Error::param(format!(
            "weight range ({w_lo}, {w_hi}) must satisfy 0 < lo <= hi < inf"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let key = |i: usize, j: usize| (i.min(j), i.max(j));
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(m);
    let mut present: HashSet<(usize, usize)> = HashSet::with_capacity(m);
    for pos in 1..n {
        let parent = order[rng.random_range(0..pos)];
        let e = key(order[pos], parent);
        present.insert(e);
        pairs.push(e);
    }

    let extra = m - (n - 1);
    if extra > 0 {
        if max_edges <= ENUMERATION_LIMIT {
            let complement: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|e| !present.contains(e))
                .collect();
            let picked = rand::seq::index::sample(&mut rng, complement.len(), extra);
            let mut picked: Vec<usize> = picked.into_iter().collect();
            picked.sort_unstable();
            pairs.extend(picked.into_iter().map(|idx| complement[idx]));
        } else {
            while pairs.len() < m {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                if i == j {
                    continue;
                }
                let e = key(i, j);
                if present.insert(e) {
                    pairs.push(e);
                }
            }
        }
    }

    let mut edges = Vec::with_capacity(m);
    let mut arcs = Vec::with_capacity(m);
    for &(i, j) in &pairs {
        let w = if w_hi > w_lo {
            rng.random_range(w_lo..=w_hi)
        } else {
            w_lo
        };
        edges.push((i, j, w));
        arcs.push(if rng.random_bool(0.5) { (i, j) } else { (j, i) });
    }
    let graph = WeightedGraph::new_connected(n, edges)?;
    let network = DirectedNetwork::new(n, arcs)?;

    let (source, sink, _) = graph.diameter_estimate();
    let mut supply = vec![0.0; n];
    supply[source] = 1.0;
    supply[sink] = -1.0;

    Ok(RandomNetwork {
        graph,
        network,
        supply,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge() {
        let net = generate_random_network(2, 1, 0, (1.0, 1.0)).unwrap();
        assert_eq!(net.graph.edge_count(), 1);
        let mut b = net.supply.clone();
        b.sort_by(f64::total_cmp);
        assert_eq!(b, vec![-1.0, 1.0]);
    }

    #[test]
    fn infeasible_sizes_rejected() {
        assert!(generate_random_network(5, 3, 0, (1.0, 1.0)).is_err());
        assert!(generate_random_network(5, 11, 0, (1.0, 1.0)).is_err());
        assert!(generate_random_network(1, 0, 0, (1.0, 1.0)).is_err());
        assert!(generate_random_network(5, 5, 0, (0.0, 1.0)).is_err());
    }

    #[test]
    fn complete_graph_is_reachable() {
        let net = generate_random_network(6, 15, 3, (0.5, 2.0)).unwrap();
        assert_eq!(net.graph.edge_count(), 15);
        assert_eq!(net.graph.max_degree(), 5);
    }

    #[test]
    fn canonical_sized_instances() {
        for &(n, m) in &[(30, 70), (90, 200)] {
            for seed in 0..3 {
                let net = generate_random_network(n, m, seed, (1.0, 1.0)).unwrap();
                assert_eq!(net.graph.node_count(), n);
                assert_eq!(net.graph.edge_count(), m);
                assert!(net.graph.is_connected());
                assert_eq!(net.supply.iter().sum::<f64>(), 0.0);
                let (u, v, d) = net.graph.diameter_estimate();
                assert_eq!(net.supply[u], 1.0);
                assert_eq!(net.supply[v], -1.0);
                assert!(d >= 2);
            }
        }
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let a = generate_random_network(40, 90, 11, (1.0, 10.0)).unwrap();
        let b = generate_random_network(40, 90, 11, (1.0, 10.0)).unwrap();
        assert_eq!(a, b);
        let c = generate_random_network(40, 90, 12, (1.0, 10.0)).unwrap();
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn rejection_path_for_large_sparse_graphs() {
        let net = generate_random_network(2000, 2100, 1, (1.0, 1.0)).unwrap();
        assert_eq!(net.graph.edge_count(), 2100);
        assert!(net.graph.is_connected());
    }
}
