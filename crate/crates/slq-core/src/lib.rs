//! Open-loop linear-quadratic stochastic control on spectral Galerkin
//! models.
//!
//! The crate discretises the controlled evolution equation
//! `dx = [(A + A1)x + Bu + b] ds + [Cx + Du + sigma] dW` on a finite
//! eigenbasis of the self-adjoint generator `A`, drives it over an exact
//! binary-tree model of the driving noise (or a Monte Carlo ensemble), and
//! solves the open-loop quadratic cost minimisation and its two-player
//! Nash-game extension by operator-equation methods: every object the solver
//! touches — states, adjoints, controls — is an adapted process on the tree,
//! and the optimality systems are solved by Krylov iteration on the control
//! space itself.
//!
//! Everything is generic over the scalar type through [`Scalar`]; the `*64`
//! aliases at the crate root fix `f64` for the common case.

pub mod backward;
pub mod error;
pub mod forward;
pub mod game;
pub mod instances;
pub mod krylov;
pub mod linalg;
pub mod lq;
pub mod mc;
pub mod model;
pub mod scalar;
pub mod tree;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar for the concrete aliases below.
pub type Real = f64;

pub type Mat64 = linalg::Mat<Real>;
pub type TreeSpace64 = tree::TreeSpace<Real>;
pub type TimeGrid64 = tree::TimeGrid<Real>;
pub type NodeArray64 = tree::NodeArray<Real>;
pub type AdaptedProcess64 = tree::AdaptedProcess<Real>;
pub type SpectralOperator64 = model::SpectralOperator<Real>;
pub type CoeffTable64 = model::CoeffTable<Real>;
pub type TerminalTable64 = model::TerminalTable<Real>;
pub type CoefficientSet64 = model::CoefficientSet<Real>;
pub type WeightSet64 = model::WeightSet<Real>;
pub type LqOptions64 = model::LqOptions<Real>;
pub type LqProblemSpec64 = model::LqProblemSpec<Real>;
pub type PlayerWeights64 = game::PlayerWeights<Real>;
pub type GameDynamics64 = game::GameDynamics<Real>;
pub type GameSpec64 = game::GameSpec<Real>;
pub type NashCandidate64 = game::NashCandidate<Real>;
pub type NashVerification64 = game::NashVerification<Real>;
pub type McEnsemble64 = mc::McEnsemble<Real>;
pub type McProblem64 = mc::McProblem<Real>;
pub type McControl64 = mc::McControl<Real>;
pub type McPaths64 = mc::McPaths<Real>;
