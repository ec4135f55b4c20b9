//! Crate-wide error type.

/// One record per nonlinear iteration: `(iter, residual, damping)`.
///
/// Serialized by the harness as the `iter,residual,damping` CSV columns.
pub type ConvergenceRecord = (usize, f64, f64);

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mesh size h = {0} outside the supported range (0, 0.25]")]
    MeshSize(f64),

    #[error("hole boundary comes within {0:.3e} of the cell boundary; shrink the hole or refine h")]
    HoleNearBoundary(f64),

    #[error("hole area {0:.3e} outside (0, 1); the inclusion must be a proper subset of the cell")]
    HoleArea(f64),

    #[error("hole polygon is self-intersecting")]
    PolygonNotSimple,

    #[error("hole polygon must be positively oriented (counterclockwise)")]
    PolygonOrientation,

    #[error("hole polygon needs at least 3 vertices, got {0}")]
    PolygonTooSmall(usize),

    #[error("hole under-resolved at h = {h}: {detail}")]
    HoleUnderResolved { h: f64, detail: String },

    #[error("ring stitching failed: {0}")]
    RingStitch(String),

    #[error("tiling requires n >= 3 so an interior perforated cell exists, got n = {0}")]
    TilingTooCoarse(u32),

    #[error(
        "surface data has discrete mean {0:.3e}; a pure-Neumann cell problem needs \
         mean-zero boundary flux"
    )]
    Incompatible(f64),

    #[error("linear solve failed to converge: residual {residual:.3e} after {iters} iterations")]
    LinearSolve { residual: f64, iters: usize },

    #[error(
        "nonlinear solve stalled: residual {residual:.3e} after {iters} iterations \
         (see convergence log)"
    )]
    NonConvergence {
        residual: f64,
        iters: usize,
        log: Vec<ConvergenceRecord>,
    },

    #[error("periodic pairing failed: {0}")]
    Pairing(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("table lookup before any table was built")]
    TableMissing,

    #[error(
        "effective-map tabulation failed at grid node xi=({xi1:.3}, {xi2:.3}), u={u:.3}: {source}"
    )]
    TableNode {
        xi1: f64,
        xi2: f64,
        u: f64,
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
