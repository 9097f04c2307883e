use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Detector class. Unswapped images (synthetic or not) are `Real`; swapped
/// images are `Fake`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Real,
    Fake,
}

/// Output index of the real class.
pub const REAL_CLASS: usize = 0;
/// Output index of the fake (swapped) class.
pub const FAKE_CLASS: usize = 1;

impl Class {
    pub fn index(self) -> usize {
        match self {
            Class::Real => REAL_CLASS,
            Class::Fake => FAKE_CLASS,
        }
    }

    pub fn from_index(i: usize) -> Option<Class> {
        match i {
            REAL_CLASS => Some(Class::Real),
            FAKE_CLASS => Some(Class::Fake),
            _ => None,
        }
    }

    pub fn flipped(self) -> Class {
        match self {
            Class::Real => Class::Fake,
            Class::Fake => Class::Real,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Real => "real",
            Class::Fake => "fake",
        }
    }

    /// Argmax of a `(p_real, p_fake)` pair; ties go to `Fake`.
    pub fn from_probabilities(p: [f64; 2]) -> Class {
        if p[REAL_CLASS] > p[FAKE_CLASS] {
            Class::Real
        } else {
            Class::Fake
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" | "0" => Ok(Class::Real),
            "fake" | "1" => Ok(Class::Fake),
            other => Err(Error::validation(format!("unknown class label `{other}`"))),
        }
    }
}
