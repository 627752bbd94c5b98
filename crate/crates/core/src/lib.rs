//! Self-guided belief propagation for binary pairwise (Ising) models.
//!
//! The crate tracks a belief-propagation fixed point while the pairwise
//! couplings are switched on gradually, starting from the independent model
//! where BP is exact. Around that driver it provides the pieces needed to
//! evaluate it:
//!
//! - [`graph`]: graphs, Ising models, seeded model generators, coupling scaling.
//! - [`model_io`]: the `ising v1` text format.
//! - [`bp`]: messages, the sum-product update, damping, convergence, pseudomarginals.
//! - [`homotopy`]: the self-guided driver, adaptive step control, spline warm starts.
//! - [`bethe`]: Bethe free energy, its coupling-scale derivative, restart-based minimum.
//! - [`exact`]: brute-force enumeration and variable elimination.
//! - [`gibbs`]: single-site heat-bath sampler.
//! - [`harness`]: seeded benchmark batches, metrics and CSV output.
//!
//! ```
//! use sbp::graph::{build_grid, sample_model, DistSpec};
//! use sbp::homotopy::{run_sbp, SbpConfig};
//!
//! let graph = build_grid(3, 3).unwrap();
//! let model = sample_model(&graph, DistSpec::Constant(0.2), DistSpec::Uniform(0.0, 1.0), 7).unwrap();
//! let (beliefs, trace) = run_sbp(&model, &SbpConfig::default()).unwrap();
//! assert_eq!(beliefs.singles.len(), 9);
//! assert_eq!(trace.zetas[0], 0.0);
//! ```

pub mod bethe;
pub mod bp;
pub mod error;
pub mod exact;
pub mod gibbs;
pub mod graph;
pub mod harness;
pub mod homotopy;
pub mod model_io;
pub mod rng;
pub mod spline;

pub use error::{Error, Result};
