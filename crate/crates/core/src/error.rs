use thiserror::Error;

use crate::dynamics::PhaseState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid action parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical blow-up at t = {time}: {state:?}")]
    BlowUp { time: f64, state: PhaseState },

    #[error("degenerate tangent vector (norm {norm})")]
    DegenerateTangent { norm: f64 },

    #[error("shell sampler acceptance {acceptance:e} after {proposals} proposals; box mis-sized")]
    SamplerBox { proposals: u64, acceptance: f64 },

    #[error("histogram edges must be strictly increasing with at least two entries")]
    BadEdges,

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("need at least {needed} chaotic records above the cut-off, found {found}")]
    TooFewChaotic { needed: usize, found: usize },

    #[error("singular least-squares design: {0}")]
    Singular(String),

    #[error("grid too small: boundary magnitude {ratio:e} of peak exceeds {limit:e}")]
    GridTooSmall { ratio: f64, limit: f64 },

    #[error("point ({x}, {y}) outside the grid")]
    OutsideGrid { x: f64, y: f64 },

    #[error("{what} did not converge: {detail}")]
    NoConvergence { what: &'static str, detail: String },

    #[error("caustic: fluctuation determinant {det:e} is not positive")]
    Caustic { det: f64 },

    #[error("underdetermined fit: {data} data for {params} parameters")]
    Underdetermined { data: usize, params: usize },

    #[error("parse error: {0}")]
    Parse(String),
}
