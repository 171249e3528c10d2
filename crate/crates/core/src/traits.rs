//! Five-Factor trait identifiers and per-transcript score records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Plausible raw-score interval for the instrument scales we ingest.
pub const RAW_SCORE_RANGE: (f64, f64) = (0.0, 250.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraitId {
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    Neuroticism,
}

impl TraitId {
    pub const ALL: [TraitId; 5] = [
        TraitId::Openness,
        TraitId::Conscientiousness,
        TraitId::Extraversion,
        TraitId::Agreeableness,
        TraitId::Neuroticism,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TraitId::Openness => "openness",
            TraitId::Conscientiousness => "conscientiousness",
            TraitId::Extraversion => "extraversion",
            TraitId::Agreeableness => "agreeableness",
            TraitId::Neuroticism => "neuroticism",
        }
    }

    pub fn letter(self) -> char {
        match self {
            TraitId::Openness => 'O',
            TraitId::Conscientiousness => 'C',
            TraitId::Extraversion => 'E',
            TraitId::Agreeableness => 'A',
            TraitId::Neuroticism => 'N',
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TraitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TraitId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        TraitId::ALL
            .into_iter()
            .find(|t| t.name() == lower || t.letter().to_ascii_lowercase().to_string() == lower)
            .ok_or_else(|| Error::invalid(format!("unknown trait {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreScale {
    Raw,
    Standardized,
}

/// One value per trait plus the scale those values live on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraitScores {
    pub scale: ScoreScale,
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub neuroticism: f64,
}

impl TraitScores {
    pub fn new(scale: ScoreScale, values: [f64; 5]) -> Self {
        TraitScores {
            scale,
            openness: values[0],
            conscientiousness: values[1],
            extraversion: values[2],
            agreeableness: values[3],
            neuroticism: values[4],
        }
    }

    pub fn get(&self, t: TraitId) -> f64 {
        match t {
            TraitId::Openness => self.openness,
            TraitId::Conscientiousness => self.conscientiousness,
            TraitId::Extraversion => self.extraversion,
            TraitId::Agreeableness => self.agreeableness,
            TraitId::Neuroticism => self.neuroticism,
        }
    }

    pub fn set(&mut self, t: TraitId, v: f64) {
        match t {
            TraitId::Openness => self.openness = v,
            TraitId::Conscientiousness => self.conscientiousness = v,
            TraitId::Extraversion => self.extraversion = v,
            TraitId::Agreeableness => self.agreeableness = v,
            TraitId::Neuroticism => self.neuroticism = v,
        }
    }

    /// Returns the traits whose value violates the scale's invariant.
    pub fn violations(&self) -> Vec<TraitId> {
        TraitId::ALL
            .into_iter()
            .filter(|&t| {
                let v = self.get(t);
                match self.scale {
                    ScoreScale::Raw => !(RAW_SCORE_RANGE.0..=RAW_SCORE_RANGE.1).contains(&v),
                    ScoreScale::Standardized => !v.is_finite(),
                }
            })
            .collect()
    }
}
