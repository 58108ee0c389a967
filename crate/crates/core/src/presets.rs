use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Language families with hand-tuned learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LanguageFamily {
    Indian,
    Celtic,
    SouthAfrican,
}

impl LanguageFamily {
    pub const ALL: [LanguageFamily; 3] = [Self::Indian, Self::Celtic, Self::SouthAfrican];

    /// Learning rate for morphology pretraining.
    pub fn morphology_lr(self) -> f64 {
        match self {
            Self::Indian => 1e-4,
            Self::Celtic => 2e-3,
            Self::SouthAfrican => 4e-3,
        }
    }

    /// Learning rate for unsupervised cognate training.
    pub fn detector_lr(self) -> f64 {
        match self {
            Self::Indian => 1e-2,
            Self::Celtic => 1e-1,
            Self::SouthAfrican => 1e-2,
        }
    }
}

impl fmt::Display for LanguageFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Indian => "indian",
            Self::Celtic => "celtic",
            Self::SouthAfrican => "south-african",
        })
    }
}

impl FromStr for LanguageFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "indian" => Ok(Self::Indian),
            "celtic" => Ok(Self::Celtic),
            "south-african" | "southafrican" | "south_african" => Ok(Self::SouthAfrican),
            other => Err(Error::Input(format!("unknown language family {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_tuned_rates() {
        let morph: Vec<f64> = LanguageFamily::ALL.iter().map(|f| f.morphology_lr()).collect();
        let det: Vec<f64> = LanguageFamily::ALL.iter().map(|f| f.detector_lr()).collect();
        assert_eq!(morph, vec![1e-4, 2e-3, 4e-3]);
        assert_eq!(det, vec![1e-2, 1e-1, 1e-2]);
    }

    #[test]
    fn parse_round_trip() {
        for f in LanguageFamily::ALL {
            assert_eq!(f.to_string().parse::<LanguageFamily>().unwrap(), f);
        }
        assert!("klingon".parse::<LanguageFamily>().is_err());
    }
}
