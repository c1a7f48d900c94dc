//! Nonconforming finite elements for the Stokes problem on 2D triangulations.
//!
//! The crate discretizes the stationary Stokes equations with Crouzeix-Raviart
//! velocities and piecewise constant pressures and offers two right-hand
//! sides: the classical one, and a modified one obtained by smoothing the
//! test functions into divergence-preserving conforming fields. The modified
//! scheme keeps the velocity error independent of the pressure.
//!
//! Module map:
//! - [`mesh`]: triangulations of the unit square, bisection and barycentric
//!   refinement, text serialization.
//! - [`quad`]: Gauss rules on segments and triangles.
//! - [`sparse`]: compressed sparse rows plus thin wrappers over direct solvers.
//! - [`fespace`]: the velocity and pressure spaces and field evaluation.
//! - [`smoothing`]: the smoothing operator, elementwise Stokes corrections,
//!   and its sparse matrix representation.
//! - [`assembly`]: stiffness, divergence, and load vectors.
//! - [`solver`]: saddle-point and divergence-free reduced solvers, pressure
//!   recovery from inter-element jumps.
//! - [`analysis`]: interpolation, error norms, convergence rates.
//! - [`experiments`]: the convergence studies exposed by the `stokes-cr`
//!   binary.

pub mod analysis;
pub mod assembly;
pub mod experiments;
pub mod fespace;
pub mod mesh;
pub mod quad;
pub mod smoothing;
pub mod solver;
pub mod sparse;

/// Errors shared across the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Text mesh input that cannot be parsed or describes an invalid mesh.
    MeshFormat(String),
    /// Bisection was requested on a mesh without refinement-edge markers.
    MissingRefinementEdges,
    /// Simultaneous bisection of all marked edges would create hanging nodes.
    IncompatibleMarking { edge: usize },
    /// A basis function was restricted to an element not adjacent to its edge.
    NotAdjacent { edge: usize, tri: usize },
    /// An elementwise Stokes correction was asked to match a divergence with
    /// nonzero mean, which no zero-trace field can do.
    NonzeroLocalMean { tri: usize, integral: f64 },
    /// The classical load is not defined: the line part of the functional
    /// charges mesh edges, where broken test functions have no trace.
    StandardLoadUndefined { x: f64 },
    /// A direct factorization failed.
    Singular(&'static str),
    /// An experiment configuration that the runners reject.
    InvalidConfig(String),
    /// Independent solution paths disagreed beyond their shared tolerance.
    Inconsistent(String),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::MeshFormat(msg) => write!(f, "malformed mesh: {msg}"),
            Error::MissingRefinementEdges => {
                write!(f, "mesh carries no refinement-edge markers")
            }
            Error::IncompatibleMarking { edge } => {
                write!(f, "refinement-edge markers disagree across edge {edge}")
            }
            Error::NotAdjacent { edge, tri } => {
                write!(f, "triangle {tri} is not adjacent to edge {edge}")
            }
            Error::NonzeroLocalMean { tri, integral } => {
                write!(
                    f,
                    "local divergence load on triangle {tri} has mean {integral:e}; \
                     the elementwise Stokes correction needs a mean-zero load"
                )
            }
            Error::StandardLoadUndefined { x } => {
                write!(
                    f,
                    "line load on x1 = {x} lies on mesh edges; the classical \
                     functional is undefined there (use the modified scheme)"
                )
            }
            Error::Singular(what) => write!(f, "factorization failed: {what}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Inconsistent(msg) => write!(f, "cross-check failed: {msg}"),
        }
    }
}

impl std::error::Error for Error {}
