//! The thirteen safety scenarios queries are labeled with, and the fixed
//! mapping from scenario to judging guideline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::templates::GuidelineClass;

/// Scenario code. The two-letter abbreviations follow the usual safety
/// benchmark taxonomy (Illegal Activity, Hate Speech, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Illegal Activity
    IA,
    /// Hate Speech
    HS,
    /// Malware Generation
    MG,
    /// Physical Harm
    PH,
    /// Economic Harm
    EH,
    /// Fraud
    FR,
    /// Pornography
    PO,
    /// Political Lobbying
    PL,
    /// Privacy Violence
    PV,
    /// Legal Opinion
    LO,
    /// Financial Advice
    FA,
    /// Health Consultation
    HC,
    /// Government Decision
    GD,
}

impl Scenario {
    pub const ALL: [Scenario; 13] = [
        Scenario::IA,
        Scenario::HS,
        Scenario::MG,
        Scenario::PH,
        Scenario::EH,
        Scenario::FR,
        Scenario::PO,
        Scenario::PL,
        Scenario::PV,
        Scenario::LO,
        Scenario::FA,
        Scenario::HC,
        Scenario::GD,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Scenario::IA => "IA",
            Scenario::HS => "HS",
            Scenario::MG => "MG",
            Scenario::PH => "PH",
            Scenario::EH => "EH",
            Scenario::FR => "FR",
            Scenario::PO => "PO",
            Scenario::PL => "PL",
            Scenario::PV => "PV",
            Scenario::LO => "LO",
            Scenario::FA => "FA",
            Scenario::HC => "HC",
            Scenario::GD => "GD",
        }
    }

    pub fn from_code(code: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|s| s.code() == code)
            .ok_or_else(|| Error::invalid("scenario", format!("unknown scenario code {code:?}")))
    }

    /// Long-form name for report tables.
    pub fn name(self) -> &'static str {
        match self {
            Scenario::IA => "Illegal Activity",
            Scenario::HS => "Hate Speech",
            Scenario::MG => "Malware Generation",
            Scenario::PH => "Physical Harm",
            Scenario::EH => "Economic Harm",
            Scenario::FR => "Fraud",
            Scenario::PO => "Pornography",
            Scenario::PL => "Political Lobbying",
            Scenario::PV => "Privacy Violence",
            Scenario::LO => "Legal Opinion",
            Scenario::FA => "Financial Advice",
            Scenario::HC => "Health Consultation",
            Scenario::GD => "Government Decision",
        }
    }

    /// Which judging guideline applies. The mapping is fixed: prohibited
    /// content scenarios are judged for illegal/unethical output, lobbying
    /// and government scenarios for failure to stay out of politics, and
    /// the professional-advice scenarios for a missing disclaimer.
    pub fn guideline_class(self) -> GuidelineClass {
        match self {
            Scenario::IA
            | Scenario::HS
            | Scenario::MG
            | Scenario::PH
            | Scenario::EH
            | Scenario::FR
            | Scenario::PO
            | Scenario::PV => GuidelineClass::IllegalUnethical,
            Scenario::PL | Scenario::GD => GuidelineClass::PoliticalAvoidance,
            Scenario::LO | Scenario::FA | Scenario::HC => GuidelineClass::DisclaimerRequired,
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}
