use thiserror::Error;

/// Unified error type for chain construction, analysis, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// An attribute or scalar input violated a positivity/finiteness rule.
    #[error("invalid attribute: {0}")]
    InvalidAttribute(String),

    /// A quantity was evaluated outside its declared domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Structural problem in a chain or catalog document.
    #[error("schema error: {0}")]
    Schema(String),

    /// A stage probability is exactly zero, so the criticality factorization
    /// degenerates.
    #[error("singular chain: {0}")]
    SingularChain(String),

    /// A stage has no interactor able to play its required role.
    #[error("empty stage: {0}")]
    EmptyStage(String),

    /// Mediator capacity must strictly exceed the item inertia.
    #[error("inertia order violated: capacity {capacity} must exceed item inertia {item_inertia}")]
    InertiaOrder { capacity: f64, item_inertia: f64 },

    /// Scatter kernel parameters produced an invalid contraction ratio.
    #[error("kernel error: {0}")]
    Kernel(String),

    /// No forwarding mediator has positive strength at the requested enthalpy.
    #[error("no active forwarding mediator: {0}")]
    NoForwarding(String),

    /// The forwarding window or its parameters admit no transport.
    #[error("degenerate forwarding: {0}")]
    DegenerateForwarding(String),

    /// A random walk failed to leave the forwarding window within the step cap.
    #[error("kernel stall: item exceeded {max_steps} forwarding steps")]
    KernelStall { max_steps: u64 },

    /// A selection exceeds the catalog budget.
    #[error("budget exceeded: {0}")]
    Budget(String),

    /// The exhaustive search space is larger than the enumeration limit.
    #[error("search space too large: {size} selections exceed limit {limit}")]
    SpaceTooLarge { size: u128, limit: u128 },

    /// Iterative numerics failed to reach the requested accuracy.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Coarse classification used by callers that map errors to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: schema, domain, or chain-structure problems.
    Validation,
    /// Runtime numeric failure on otherwise valid input.
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::KernelStall { .. } | Error::Numeric(_) => ErrorKind::Numeric,
            _ => ErrorKind::Validation,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_split_validation_from_numeric() {
        assert_eq!(Error::Domain("x".into()).kind(), ErrorKind::Validation);
        assert_eq!(Error::Schema("x".into()).kind(), ErrorKind::Validation);
        assert_eq!(
            Error::SpaceTooLarge { size: 1, limit: 0 }.kind(),
            ErrorKind::Validation
        );
        assert_eq!(Error::Numeric("x".into()).kind(), ErrorKind::Numeric);
        assert_eq!(
            Error::KernelStall { max_steps: 1 }.kind(),
            ErrorKind::Numeric
        );
    }

    #[test]
    fn messages_name_the_offending_quantities() {
        let e = Error::InertiaOrder {
            capacity: 0.5,
            item_inertia: 1.0,
        };
        let msg = e.to_string();
        assert!(msg.contains("0.5") && msg.contains("1"));
    }
}
