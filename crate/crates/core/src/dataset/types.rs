//! Domain records shared across the crate.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A retrieval request: the user behind it, the user's primary language, and
/// a dense feature vector (context plus interest signals).
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: u64,
    pub user_id: u64,
    /// Categorical label in `0..n_languages`.
    pub primary_language: u16,
    pub features: Vec<f64>,
}

/// A retrievable item with its language, feature vector, and a non-negative
/// popularity statistic (e.g. audience size).
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub candidate_id: u64,
    pub language: u16,
    pub features: Vec<f64>,
    pub popularity: f64,
}

/// Where a labeled example came from. The label is implied by the source:
/// explicit positives are engagements, the other two kinds are negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// Observed engagement on served traffic.
    ExplicitPositive,
    /// Served but not engaged.
    ImplicitNegative,
    /// Drawn by a negative sampler, never served.
    SampledNegative,
}

impl Provenance {
    pub fn implies_positive_label(self) -> bool {
        matches!(self, Provenance::ExplicitPositive)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::ExplicitPositive => "explicit_positive",
            Provenance::ImplicitNegative => "implicit_negative",
            Provenance::SampledNegative => "sampled_negative",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit_positive" => Ok(Provenance::ExplicitPositive),
            "implicit_negative" => Ok(Provenance::ImplicitNegative),
            "sampled_negative" => Ok(Provenance::SampledNegative),
            other => Err(Error::config(format!("unknown provenance {other:?}"))),
        }
    }
}

/// One labeled (query, candidate) example with an importance weight in (0, 1].
///
/// Construct through the provenance-specific constructors (or the checked
/// [`Interaction::from_parts`]) so the label always matches the provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub query_id: u64,
    pub candidate_id: u64,
    pub label: bool,
    pub provenance: Provenance,
    pub weight: f64,
}

impl Interaction {
    pub fn explicit_positive(query_id: u64, candidate_id: u64) -> Self {
        Interaction {
            query_id,
            candidate_id,
            label: true,
            provenance: Provenance::ExplicitPositive,
            weight: 1.0,
        }
    }

    pub fn implicit_negative(query_id: u64, candidate_id: u64) -> Self {
        Interaction {
            query_id,
            candidate_id,
            label: false,
            provenance: Provenance::ImplicitNegative,
            weight: 1.0,
        }
    }

    pub fn sampled_negative(query_id: u64, candidate_id: u64, weight: f64) -> Result<Self> {
        let it = Interaction {
            query_id,
            candidate_id,
            label: false,
            provenance: Provenance::SampledNegative,
            weight,
        };
        it.validate()?;
        Ok(it)
    }

    /// Builds an interaction from raw parts, enforcing the label/provenance
    /// coupling and the weight range.
    pub fn from_parts(
        query_id: u64,
        candidate_id: u64,
        label: bool,
        provenance: Provenance,
        weight: f64,
    ) -> Result<Self> {
        let it = Interaction {
            query_id,
            candidate_id,
            label,
            provenance,
            weight,
        };
        it.validate()?;
        Ok(it)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label != self.provenance.implies_positive_label() {
            return Err(Error::Provenance(format!(
                "label {} contradicts provenance {}",
                self.label as u8, self.provenance
            )));
        }
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(Error::config(format!(
                "interaction weight must lie in (0, 1], got {}",
                self.weight
            )));
        }
        Ok(())
    }

    /// Label as a float target for loss functions.
    pub fn target(&self) -> f64 {
        if self.label {
            1.0
        } else {
            0.0
        }
    }

    /// Reassigns the importance weight, preserving all invariants.
    pub fn with_weight(mut self, weight: f64) -> Result<Self> {
        self.weight = weight;
        self.validate()?;
        Ok(self)
    }
}
