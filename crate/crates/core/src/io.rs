//! File formats: Matrix Market (coordinate, real, symmetric) for SDDM
//! matrices, the network JSON document, and plain-text vectors.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DirectedNetwork, RandomNetwork, WeightedGraph};
use crate::matrix::SplitMatrix;

/// Parses a Matrix Market coordinate matrix into its standard splitting.
/// `symmetric` storage is expanded; `general` storage must be symmetric.
pub fn read_matrix_market_str(text: &str) -> Result<SplitMatrix> {
    let coo = nalgebra_sparse::io::load_coo_from_matrix_market_str::<f64>(text)
        .map_err(|e| Error::Parse(format!("matrix market: {e}")))?;
    if coo.nrows() != coo.ncols() {
        return Err(Error::Structure(format!(
            "matrix is {}x{}, not square",
            coo.nrows(),
            coo.ncols()
        )));
    }
    let entries: Vec<(usize, usize, f64)> =
        coo.triplet_iter().map(|(i, j, &v)| (i, j, v)).collect();
    SplitMatrix::from_triplets(coo.nrows(), &entries)
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SplitMatrix> {
    read_matrix_market_str(&std::fs::read_to_string(path)?)
}

/// Writes `M = D - A` as `coordinate real symmetric` (lower triangle, 1-based).
pub fn write_matrix_market_str(m: &SplitMatrix) -> String {
    let n = m.dim();
    let mut lower: Vec<(usize, usize, f64)> = Vec::with_capacity(n + m.nnz_offdiag() / 2);
    for k in 0..n {
        lower.push((k, k, m.diag()[k]));
        for &(j, v) in m.row(k) {
            if j < k {
                lower.push((k, j, -v));
            }
        }
    }
    // column-major order, as is customary for the format
    lower.sort_by_key(|&(i, j, _)| (j, i));
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix coordinate real symmetric\n");
    let _ = writeln!(out, "{n} {n} {}", lower.len());
    for (i, j, v) in lower {
        let _ = writeln!(out, "{} {} {:e}", i + 1, j + 1, v);
    }
    out
}

pub fn write_matrix_market(m: &SplitMatrix, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_matrix_market_str(m))?;
    Ok(())
}

/// Whitespace-separated reals (comments start with `%` or `#`).
pub fn read_vector_str(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(|l| l.split(['%', '#']).next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::Parse(format!("not a number: {tok:?}")))
        })
        .collect()
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    read_vector_str(&std::fs::read_to_string(path)?)
}

/// One value per line, full round-trip precision.
pub fn write_vector_str(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}\n")).collect()
}

/// The network document: `{n, edges: [[i, j, w]], arcs: [[src, dst]], b}`,
/// 0-based node ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub arcs: Vec<(usize, usize)>,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl NetworkFile {
    pub fn from_network(net: &RandomNetwork) -> Self {
        Self {
            n: net.graph.node_count(),
            edges: net.graph.edges().to_vec(),
            arcs: net.network.arcs().to_vec(),
            b: net.supply.clone(),
            seed: Some(net.seed),
        }
    }

    /// Validates the document (including connectivity) and rebuilds the
    /// in-memory network.
    pub fn into_network(self) -> Result<RandomNetwork> {
        if self.b.len() != self.n {
            return Err(Error::Structure(format!(
                "supply has {} entries for {} nodes",
                self.b.len(),
                self.n
            )));
        }
        let graph = WeightedGraph::new_connected(self.n, self.edges)?;
        let network = DirectedNetwork::new(self.n, self.arcs)?;
        Ok(RandomNetwork {
            graph,
            network,
            supply: self.b,
            seed: self.seed.unwrap_or(0),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_random_network;
    use crate::matrix::{ground, laplacian};

    #[test]
    fn matrix_market_round_trip() {
        let net = generate_random_network(12, 20, 5, (0.5, 3.0)).unwrap();
        let m = ground(&laplacian(&net.graph), 3).unwrap().matrix;
        let text = write_matrix_market_str(&m);
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real symmetric"));
        let back = read_matrix_market_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn reads_general_storage() {
        let text =
            "%%MatrixMarket matrix coordinate real general\n2 2 4\n1 1 2\n1 2 -1\n2 1 -1\n2 2 3\n";
        let m = read_matrix_market_str(text).unwrap();
        assert_eq!(m.diag(), &[2.0, 3.0]);
        assert_eq!(m.row(0), &[(1, 1.0)]);
    }

    #[test]
    fn rejects_positive_offdiagonal() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n2 2 3\n1 1 2\n2 1 1\n2 2 3\n";
        assert!(read_matrix_market_str(text).is_err());
    }

    #[test]
    fn vectors_parse() {
        assert_eq!(
            read_vector_str("1 2\n# c\n3e-1 % x\n").unwrap(),
            vec![1.0, 2.0, 0.3]
        );
        assert!(read_vector_str("1 x").is_err());
        let v = vec![0.1, -2.5e-7, 3.0];
        assert_eq!(read_vector_str(&write_vector_str(&v)).unwrap(), v);
    }

    #[test]
    fn network_json_round_trip() {
        let net = generate_random_network(10, 15, 2, (1.0, 2.0)).unwrap();
        let doc = NetworkFile::from_network(&net);
        let back = NetworkFile::from_json(&doc.to_json().unwrap())
            .unwrap()
            .into_network()
            .unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn network_json_disconnected_rejected() {
        let doc = NetworkFile {
            n: 4,
            edges: vec![(0, 1, 1.0), (2, 3, 1.0)],
            arcs: vec![(0, 1), (2, 3)],
            b: vec![1.0, -1.0, 0.0, 0.0],
            seed: None,
        };
        assert!(doc.into_network().is_err());
    }
}
