use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ParamError;

/// A transition `lower → upper`, optionally observed as an `n`-photon
/// process at frequency `(E_upper - E_lower) / n`.
///
/// Text form: `f01`, `f12`, `f02/2`, `f03/3`; levels above 9 use a dash,
/// e.g. `f3-10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TransitionLabel {
    pub lower: usize,
    pub upper: usize,
    pub photons: u32,
}

impl TransitionLabel {
    pub const fn new(lower: usize, upper: usize) -> Self {
        Self {
            lower,
            upper,
            photons: 1,
        }
    }

    pub const fn multi_photon(lower: usize, upper: usize, photons: u32) -> Self {
        Self {
            lower,
            upper,
            photons,
        }
    }

    pub fn frequency(&self, energies: &[f64]) -> f64 {
        (energies[self.upper] - energies[self.lower]) / self.photons as f64
    }

    /// Highest level index the label refers to.
    pub fn top(&self) -> usize {
        self.upper.max(self.lower)
    }
}

impl fmt::Display for TransitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lower < 10 && self.upper < 10 {
            write!(f, "f{}{}", self.lower, self.upper)?;
        } else {
            write!(f, "f{}-{}", self.lower, self.upper)?;
        }
        if self.photons > 1 {
            write!(f, "/{}", self.photons)?;
        }
        Ok(())
    }
}

impl FromStr for TransitionLabel {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParamError::Label(s.to_string());
        let body = s.trim();
        let body = body.strip_prefix('f').unwrap_or(body);
        let (levels, photons) = match body.split_once('/') {
            Some((l, p)) => (l, p.parse::<u32>().map_err(|_| bad())?),
            None => (body, 1),
        };
        let (lower, upper) = if let Some((a, b)) = levels.split_once("->") {
            (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)
        } else if let Some((a, b)) = levels.split_once('-') {
            (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)
        } else if levels.len() == 2 && levels.bytes().all(|b| b.is_ascii_digit()) {
            let d = levels.as_bytes();
            ((d[0] - b'0') as usize, (d[1] - b'0') as usize)
        } else {
            return Err(bad());
        };
        if upper <= lower || photons == 0 {
            return Err(bad());
        }
        Ok(Self {
            lower,
            upper,
            photons,
        })
    }
}

impl TryFrom<String> for TransitionLabel {
    type Error = ParamError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<TransitionLabel> for String {
    fn from(value: TransitionLabel) -> Self {
        value.to_string()
    }
}

/// All single-photon pairs among `n_levels`, then `f02/2` and `f03/3`
/// where those levels exist.
pub fn default_labels(n_levels: usize) -> Vec<TransitionLabel> {
    let mut labels = Vec::new();
    for i in 0..n_levels {
        for j in (i + 1)..n_levels {
            labels.push(TransitionLabel::new(i, j));
        }
    }
    for k in 2..=3u32 {
        if (k as usize) < n_levels {
            labels.push(TransitionLabel::multi_photon(0, k as usize, k));
        }
    }
    labels
}
