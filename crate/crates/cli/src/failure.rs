use karma_core::Error;

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    NotConverged(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::NotConverged(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    pub fn message(&self) -> String {
        let e = match self {
            Failure::Config(e) | Failure::NotConverged(e) | Failure::Runtime(e) => e,
        };
        format!("{e:#}")
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Validation(_) | Error::Range(_) | Error::Arity { .. } => {
                Failure::Config(e.into())
            }
            Error::NotConverged { .. } => Failure::NotConverged(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub fn config_error(msg: impl std::fmt::Display) -> Failure {
    Failure::Config(anyhow::anyhow!("{msg}"))
}
