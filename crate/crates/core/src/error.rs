use crate::grid::{Rect, Site};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("site ({}, {}) lies outside region {region}", site.x, site.y)]
    SiteOutsideRegion { site: Site, region: Rect },

    #[error("invalid rectangle bounds: x0={x0} x1={x1} y0={y0} y1={y1}")]
    InvalidRect { x0: i32, x1: i32, y0: i32, y1: i32 },

    #[error("{name} must lie in [0, 1], got {value}")]
    InvalidProbability { name: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("geometry violation: {0}")]
    Geometry(String),

    #[error("configuration region {found} does not match expected region {expected}")]
    RegionMismatch { expected: Rect, found: Rect },

    #[error("lazy evaluation exceeded its budget of {budget} memoized states")]
    EvaluationBudget { budget: usize },

    #[error("coupling order violated at site ({}, {}) at time {time}", site.x, site.y)]
    OrderViolation { site: Site, time: f64 },

    #[error("enhancement field and clock stream disagree on the first ring of site ({}, {})", site.x, site.y)]
    SeedMismatch { site: Site },

    #[error("oracle budget exceeded: {0}")]
    OracleBudget(String),

    #[error("event `{0}` is not increasing")]
    NotIncreasing(String),

    #[error("sampling budget exhausted after {replicas} replicas")]
    BudgetExhausted { replicas: u64 },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidProbability { name, value })
    }
}
