use std::fmt;

/// Exit code for bad configs, bad arguments and unusable inputs.
pub const EXIT_CONFIG: i32 = 1;
/// Exit code for failures after a run has started, divergence included.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            error: error.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Tags an error with the phase it happened in.
pub trait Phase<T> {
    fn setup(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Phase<T> for Result<T, E> {
    fn setup(self) -> Result<T, Failure> {
        self.map_err(Failure::config)
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(Failure::runtime)
    }
}

pub fn config_error(msg: impl fmt::Display) -> Failure {
    Failure::config(anyhow::anyhow!("{msg}"))
}
