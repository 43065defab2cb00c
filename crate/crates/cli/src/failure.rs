use std::fmt;

/// Error classes with stable exit codes.
#[derive(Debug)]
pub enum Failure {
    Internal(String),
    Input(String),
    Dependency(String),
    MissingArtifact(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Self::Internal(_) => 1,
            Self::Input(_) => 2,
            Self::Dependency(_) => 3,
            Self::MissingArtifact(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (class, msg) = match self {
            Self::Internal(m) => ("internal error", m),
            Self::Input(m) => ("input error", m),
            Self::Dependency(m) => ("dependency error", m),
            Self::MissingArtifact(m) => ("missing artifact", m),
        };
        write!(f, "{class}: {msg}")
    }
}

pub type Result<T> = std::result::Result<T, Failure>;

pub fn internal(e: impl fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

pub fn input(e: impl fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}
