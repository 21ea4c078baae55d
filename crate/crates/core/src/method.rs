use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Rationale-producing method. `Random` only tags baseline rationales;
/// `FullText` trains a classifier without masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "limitedink")]
    LimitedInk,
    SparseN,
    SparseC,
    SparseIb,
    FullText,
    Random,
}

impl Method {
    pub const TRAINABLE: [Method; 5] = [
        Method::LimitedInk,
        Method::SparseN,
        Method::SparseC,
        Method::SparseIb,
        Method::FullText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::LimitedInk => "limitedink",
            Method::SparseN => "sparse_n",
            Method::SparseC => "sparse_c",
            Method::SparseIb => "sparse_ib",
            Method::FullText => "full_text",
            Method::Random => "random",
        }
    }

    pub fn is_baseline_penalty(self) -> bool {
        matches!(self, Method::SparseN | Method::SparseC | Method::SparseIb)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "limitedink" => Ok(Method::LimitedInk),
            "sparse_n" => Ok(Method::SparseN),
            "sparse_c" => Ok(Method::SparseC),
            "sparse_ib" => Ok(Method::SparseIb),
            "full_text" => Ok(Method::FullText),
            "random" => Ok(Method::Random),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Length level as an integer percentage, e.g. `0.3 -> 30`.
pub fn level_percent(level: f64) -> u32 {
    (level * 100.0).round() as u32
}

/// The five length levels of a sweep.
pub const LENGTH_LEVELS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
