//! Adaptive conditional neural processes for probabilistic forecasting under
//! regime shifts, together with the data pipeline, baselines and metrics used
//! to evaluate them.

pub mod detect;
pub mod error;
pub mod fixture;
pub mod load;
pub mod metrics;
pub mod models;
pub mod numeric;
pub mod synth;
pub mod toy;
pub mod training;

pub use error::{Error, Result};

/// Normal or extreme operating regime of a point or day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Normal,
    Extreme,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Normal => "normal",
            Regime::Extreme => "extreme",
        }
    }

    pub fn is_extreme(self) -> bool {
        self == Regime::Extreme
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" | "0" => Ok(Regime::Normal),
            "extreme" | "1" => Ok(Regime::Extreme),
            other => Err(Error::data(format!("unknown regime label `{other}`"))),
        }
    }
}
