use thiserror::Error;

/// Errors surfaced by the scheduling library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedError {
    #[error("service chain {chain} contains a cycle")]
    CycleDetected { chain: u32 },
    #[error("edge ({from}, {to}) in chain {chain} references an unknown service")]
    DanglingEdge { chain: u32, from: u32, to: u32 },
    #[error("service chain {chain} has no services")]
    EmptyChain { chain: u32 },
    #[error("edge ({from}, {to}) in chain {chain} runs against numerical service order")]
    OrderViolation { chain: u32, from: u32, to: u32 },
    #[error("service {service} is not part of chain {chain}")]
    UnknownService { chain: u32, service: u32 },
    #[error("unknown chain {0}")]
    UnknownChain(u32),

    #[error("unstable queue: arrival rate {lambda} >= service rate {mu}")]
    UnstableQueue { lambda: f64, mu: f64 },
    #[error("service rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("no path between cloud {from} and cloud {to}")]
    NoPath { from: usize, to: usize },
    #[error("unknown cloud node {0}")]
    UnknownNode(usize),
    #[error("no catalog type offers {memory_gb} GB and {cores} cores")]
    NoFeasibleType { memory_gb: f64, cores: u32 },
    #[error("cloud node {0} has no free VM slot")]
    NodeFull(usize),
    #[error("machine {0} still hosts services")]
    MachineBusy(usize),
    #[error("unknown machine {0}")]
    UnknownMachine(usize),
    #[error("machine {machine} lacks capacity for the requested demand")]
    InsufficientCapacity { machine: usize },
    #[error("no machine can host the service and every cloud node is full")]
    NoCapacity,

    #[error("service ({instance}, {service}) is still serving a request")]
    NotIdle { instance: u64, service: u32 },
    #[error("service ({instance}, {service}) is not buffered")]
    NotBuffered { instance: u64, service: u32 },
    #[error("ready queue is empty")]
    EmptyQueue,

    #[error("unknown policy `{0}` (expected fws, lfff, mfff, lfdt or mfdt)")]
    UnknownPolicy(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid value at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl SchedError {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        SchedError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for SchedError {
    fn from(err: std::io::Error) -> Self {
        SchedError::Io(err.to_string())
    }
}

pub type Result<T, E = SchedError> = std::result::Result<T, E>;
