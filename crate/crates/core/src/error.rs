use thiserror::Error;

use crate::lp::LpStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("scenario parse error at `{key}`: {reason}")]
    Parse { key: String, reason: String },

    #[error("policy induces {classes} recurrent classes; the chain is not unichain")]
    NotUnichain { classes: usize },

    #[error("no positive-SNR policy exists: the channel never leaves the zero-gain state")]
    NoPositiveSnrPolicy,

    #[error("feasible policy set of user {user} is empty: constraints unsatisfiable")]
    InfeasiblePolytope { user: usize },

    #[error("IINE premise violated: maximal time-average SNR is {value:e}, must be > 0")]
    IinePremiseViolated { value: f64 },

    #[error("lexicographic stage {stage} ended with status {status:?}")]
    StageFailed { stage: usize, status: LpStatus },

    #[error("linear program ended with status {0:?}")]
    Lp(LpStatus),

    #[error("naive expectation over {users} users refused (limit {limit})")]
    TooManyUsers { users: usize, limit: usize },

    #[error("profile has {got} measures but the game has {expected} users")]
    ProfileSize { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
