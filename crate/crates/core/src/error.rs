use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or parameter block did not have the expected length.
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A value that must stay finite became NaN or infinite.
    NonFinite { what: &'static str },
    InvalidConfig(String),
    ActionOutOfRange {
        agent: usize,
        action: usize,
        n_actions: usize,
    },
    /// `step` was called on a state that already terminated.
    Terminated,
    /// A terminal-only query was made on a running episode.
    NotTerminal,
    EmptyBatch,
    /// The shifted team reward fed to the adversary reward was negative.
    NegativeShiftedReward(f64),
    /// Training produced a non-finite loss.
    Divergence { stage: &'static str, detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                what,
                expected,
                found,
            } => write!(f, "shape mismatch for {what}: expected {expected}, found {found}"),
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::ActionOutOfRange {
                agent,
                action,
                n_actions,
            } => write!(
                f,
                "agent {agent} chose action {action}, but only {n_actions} actions exist"
            ),
            Error::Terminated => write!(f, "episode already terminated"),
            Error::NotTerminal => write!(f, "episode has not terminated"),
            Error::EmptyBatch => write!(f, "empty training batch"),
            Error::NegativeShiftedReward(r) => write!(
                f,
                "shifted team reward {r} is negative; the reward floor is mis-configured"
            ),
            Error::Divergence { stage, detail } => write!(f, "{stage} diverged: {detail}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            found,
        })
    }
}
