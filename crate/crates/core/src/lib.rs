pub mod algorithms;
pub mod compression;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod problem;
pub mod rng;
pub mod topology;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/topology.md")]
    struct Topology;
    #[doc = include_str!("../../../book/src/compression.md")]
    struct Compression;
    #[doc = include_str!("../../../book/src/problem.md")]
    struct Problem;
    #[doc = include_str!("../../../book/src/oracle.md")]
    struct Oracle;
    #[doc = include_str!("../../../book/src/algorithms.md")]
    struct Algorithms;
    #[doc = include_str!("../../../book/src/parameters.md")]
    struct Parameters;
    #[doc = include_str!("../../../book/src/harness.md")]
    struct Harness;
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    struct Reproducibility;
}
