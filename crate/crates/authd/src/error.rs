use thiserror::Error;

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("need {needed} more gestures (have {have}, enrollment floor is {floor})")]
    InsufficientSamples { have: usize, floor: usize, needed: usize },
    #[error("user {user:?} is not enrolled for {kind}")]
    NotEnrolled { user: String, kind: String },
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("chunk rejected: {0}")]
    BadChunk(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] touchguard_core::Error),
}

impl AuthError {
    pub fn insufficient(have: usize, floor: usize) -> Self {
        AuthError::InsufficientSamples { have, floor, needed: floor - have }
    }
}

pub type Result<T, E = AuthError> = std::result::Result<T, E>;
