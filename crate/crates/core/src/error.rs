use thiserror::Error;

/// Errors raised by the numerical and combinatorial routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field specification key `{key}`: {message}")]
    FieldSpec { key: String, message: String },

    #[error(
        "mollifier kernel width {required:.3e} is below the resolvable floor {floor:.3e}; \
         the coefficient grid would need refinement by a factor of {refinement:.1}"
    )]
    MollifierBudget {
        required: f64,
        floor: f64,
        refinement: f64,
    },

    #[error("mesh quality: {0}")]
    MeshQuality(String),

    #[error("mesh of radius {mesh_radius} does not cover B({radius})")]
    MeshCoverage { mesh_radius: f64, radius: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("linear solve did not converge (relative residual {residual:.3e})")]
    NonConvergent { residual: f64 },

    #[error("energy forms disagree: euclidean {euclidean:.17e}, riemannian {riemannian:.17e}")]
    FormMismatch { euclidean: f64, riemannian: f64 },

    #[error("field `{0}` has no well-defined boundary traces; mollify it first")]
    NoTraces(String),

    #[error("eigensolver: {0}")]
    Eigen(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("radius grid too coarse: {points_per_octave:.2} points per octave, need at least {required}")]
    CoarseGrid {
        points_per_octave: f64,
        required: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user input rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::FieldSpec { .. }
                | Error::NoTraces(_)
                | Error::CoarseGrid { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
