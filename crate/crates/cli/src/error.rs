use esperiod::cascade::CascadeError;
use esperiod::es::EsError;
use esperiod::finder::FinderError;
use esperiod::flow::FlowError;
use esperiod::lognorm::LognormError;
use esperiod::planar::PlanarError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("certificate rejected: {0}")]
    Rejected(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Io { .. } => 2,
            Self::Numerical(_) => 3,
            Self::Rejected(_) => 4,
            Self::Inconclusive(_) => 5,
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::InvalidSystem(_)
            | FlowError::InvalidConfig(_)
            | FlowError::Dimension { .. }
            | FlowError::Interval { .. } => Self::Config(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<LognormError> for CliError {
    fn from(e: LognormError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<FinderError> for CliError {
    fn from(e: FinderError) -> Self {
        match e {
            FinderError::Flow(f) => f.into(),
            FinderError::Lognorm(l) => l.into(),
            FinderError::InvalidArgument(_) => Self::Config(e.to_string()),
            FinderError::NotConverged { .. } => Self::Inconclusive(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<EsError> for CliError {
    fn from(e: EsError) -> Self {
        match e {
            EsError::InvalidParams(_) | EsError::MapSpec(_) | EsError::NotEven { .. } => Self::Config(e.to_string()),
            EsError::Precondition(_) | EsError::SigmaNonPositive { .. } => Self::Rejected(e.to_string()),
            EsError::Flow(f) => f.into(),
            EsError::Finder(f) => f.into(),
            EsError::Lognorm(l) => l.into(),
            EsError::Inconsistent(_) => Self::Numerical(e.to_string()),
        }
    }
}

impl From<PlanarError> for CliError {
    fn from(e: PlanarError) -> Self {
        match e {
            PlanarError::Flow(f) => f.into(),
            PlanarError::Finder(f) => f.into(),
            PlanarError::InvalidSystem(_) | PlanarError::OutOfBounds { .. } | PlanarError::OmegaSign { .. } => {
                Self::Config(e.to_string())
            }
            PlanarError::LiftFailure(_) => Self::Numerical(e.to_string()),
        }
    }
}

impl From<CascadeError> for CliError {
    fn from(e: CascadeError) -> Self {
        match e {
            CascadeError::Flow(f) => f.into(),
            CascadeError::Finder(f) => f.into(),
            CascadeError::InvalidParams(_) => Self::Config(e.to_string()),
            CascadeError::NoCycle(_) => Self::Numerical(e.to_string()),
        }
    }
}
