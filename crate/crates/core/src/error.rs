use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation is only defined for the other rate kind.
    #[error("mode error: {0}")]
    Mode(String),

    /// A score ratio was requested where the marginal vanishes or the edge is not a transition.
    #[error("support error: {0}")]
    Support(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    /// A theorem hypothesis is not certified for this run.
    #[error("hypothesis error: {0}")]
    Hypothesis(String),

    #[error("kernel error: {0}")]
    Kernel(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn mode(msg: impl Into<String>) -> Self {
        Error::Mode(msg.into())
    }

    pub(crate) fn support(msg: impl Into<String>) -> Self {
        Error::Support(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for the command-line driver.
    ///
    /// 1 is reserved for bound or hypothesis failures, 2 for usage and
    /// configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Hypothesis(_) => 1,
            Error::Numeric(_) | Error::Support(_) => 3,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
