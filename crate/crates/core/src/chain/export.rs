use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_exact_chain, InverseChain};
use crate::error::{Error, Result};
use crate::io::{read_matrix_market, write_matrix_market};
use crate::matrix::SplitMatrix;

/// `manifest.json` written next to the per-level `level_<i>.mtx` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainManifest {
    pub d: usize,
    pub epsilons: Vec<f64>,
    pub kappa: Option<f64>,
    pub seed: Option<u64>,
}

/// Writes every materialized level `M_i` (or only `M_0` for implicit
/// chains) plus the manifest into `dir`.
pub fn export_chain(
    chain: &InverseChain,
    dir: impl AsRef<Path>,
    kappa: Option<f64>,
    seed: Option<u64>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_matrix_market(chain.base(), dir.join("level_0.mtx"))?;
    if chain.is_materialized() {
        for i in 1..=chain.depth() {
            let m = chain.level_matrix_dense(i).unwrap();
            // entries below this are rounding residue of cancelled paths
            let cleaned = m.map(|v| if v.abs() < 1e-300 { 0.0 } else { v });
            write_matrix_market(
                &SplitMatrix::from_dense(&cleaned)?,
                dir.join(format!("level_{i}.mtx")),
            )?;
        }
    }
    let manifest = ChainManifest {
        d: chain.depth(),
        epsilons: chain.epsilons().to_vec(),
        kappa,
        seed,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Rebuilds the exact chain from `level_0.mtx` and the manifest.
pub fn import_chain(dir: impl AsRef<Path>) -> Result<(InverseChain, ChainManifest)> {
    let dir = dir.as_ref();
    let manifest: ChainManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.epsilons.len() != manifest.d + 1 {
        return Err(Error::Parse(format!(
            "manifest lists {} budgets for d = {}",
            manifest.epsilons.len(),
            manifest.d
        )));
    }
    let m0 = read_matrix_market(dir.join("level_0.mtx"))?;
    let chain = build_exact_chain(&m0, manifest.d)?.with_epsilons(manifest.epsilons.clone())?;
    Ok((chain, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_random_network;
    use crate::matrix::{ground, laplacian};

    #[test]
    fn export_then_import() {
        let net = generate_random_network(8, 12, 4, (1.0, 2.0)).unwrap();
        let m = ground(&laplacian(&net.graph), 0).unwrap().matrix;
        let chain = build_exact_chain(&m, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_chain(&chain, dir.path(), Some(12.5), Some(4)).unwrap();
        for i in 0..=3 {
            assert!(dir.path().join(format!("level_{i}.mtx")).exists());
        }
        let lvl2 = read_matrix_market(dir.path().join("level_2.mtx")).unwrap();
        let diff = lvl2.to_dense() - chain.level_matrix_dense(2).unwrap();
        assert!(diff.abs().max() < 1e-14);
        let (back, manifest) = import_chain(dir.path()).unwrap();
        assert_eq!(manifest.d, 3);
        assert_eq!(manifest.seed, Some(4));
        assert_eq!(back.epsilons(), chain.epsilons());
        assert_eq!(back.base(), chain.base());
    }
}
