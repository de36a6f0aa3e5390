//! Distributed SDDM solves for approximate Newton methods in network flow.
//!
//! The crate is layered bottom-up:
//!
//! * [`graph`], [`matrix`], [`spectral`], [`io`]: graphs, standard splittings,
//!   condition numbers and file formats.
//! * [`chain`]: inverse approximated chains and the centralized crude and
//!   exact solvers used as references.
//! * [`sim`]: a synchronous message-passing executor with locality audits and
//!   message accounting.
//! * [`dist`]: the per-node programs of the R-hop solver.
//! * [`netflow`]: the dual of the min-cost flow problem.
//! * [`optim`]: gradient, Newton and approximate Newton loops with run traces.
//! * [`bench`]: TOML-driven experiments that write one trace per method.
//! * [`verify`]: oracle suites behind `sddmflow verify`.

pub mod bench;
pub mod chain;
pub mod dist;
pub mod error;
pub mod graph;
pub mod io;
pub mod matrix;
pub mod netflow;
pub mod optim;
pub mod sim;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{generate_random_network, DirectedNetwork, RandomNetwork, WeightedGraph};
pub use matrix::{ground, is_sddm, laplacian, Grounded, SplitMatrix};
pub use spectral::{spectral_summary, SpectralMode, SpectralSummary};

// The book's listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/splittings.md")]
    mod splittings {}
    #[doc = include_str!("../../../book/src/chains.md")]
    mod chains {}
    #[doc = include_str!("../../../book/src/distributed.md")]
    mod distributed {}
    #[doc = include_str!("../../../book/src/netflow.md")]
    mod netflow {}
    #[doc = include_str!("../../../book/src/newton.md")]
    mod newton {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
