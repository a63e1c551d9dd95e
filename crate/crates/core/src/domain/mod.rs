//! Shared vocabulary: imaging modalities, languages, answers, tooth notation,
//! arch regions, location descriptors and the diagnostic task registry.

mod answer;
mod location;
mod registry;
mod tooth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use answer::{Answer, Prediction};
pub use location::{LocationDescriptor, LocationSet, LocationVocabulary, DESCRIPTOR_COUNT};
pub use registry::{
    validate_registry, AnswerMode, LabelDef, RegistryConfig, RegistryError, TaskCategory, TaskConfig, TaskRegistry,
    TaskSpec,
};
pub use tooth::{region_of_fdi, region_of_tooth, ArchRegion, Horizontal, ToothNumber, Vertical, VerticalRule};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("unknown modality code {0:?} (expected one of LAT, PAN, INF, INL, INR, UPP, LOW)")]
    UnknownModality(String),
    #[error("unknown language {0:?} (expected EN or ZH)")]
    UnknownLanguage(String),
    #[error("invalid FDI tooth number {value}: {reason}")]
    InvalidTooth { value: String, reason: &'static str },
    #[error("location descriptor index {0} is outside the 9-descriptor vocabulary")]
    DescriptorOutOfRange(u8),
    #[error("location vocabulary for {lang} has {found} entries, expected 9")]
    VocabularySize { lang: Language, found: usize },
    #[error("location vocabulary for {lang} repeats descriptor {descriptor:?}")]
    VocabularyDuplicate { lang: Language, descriptor: String },
}

/// The seven 2D imaging modalities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    /// Lateral cephalogram.
    #[serde(rename = "LAT")]
    Lat,
    /// Panoramic radiograph.
    #[serde(rename = "PAN")]
    Pan,
    /// Intraoral frontal view.
    #[serde(rename = "INF")]
    Inf,
    /// Intraoral left view.
    #[serde(rename = "INL")]
    Inl,
    /// Intraoral right view.
    #[serde(rename = "INR")]
    Inr,
    /// Upper occlusal (arch) view.
    #[serde(rename = "UPP")]
    Upp,
    /// Lower occlusal (arch) view.
    #[serde(rename = "LOW")]
    Low,
}

impl Modality {
    pub const ALL: [Modality; 7] =
        [Modality::Lat, Modality::Pan, Modality::Inf, Modality::Inl, Modality::Inr, Modality::Upp, Modality::Low];

    pub fn code(self) -> &'static str {
        match self {
            Modality::Lat => "LAT",
            Modality::Pan => "PAN",
            Modality::Inf => "INF",
            Modality::Inl => "INL",
            Modality::Inr => "INR",
            Modality::Upp => "UPP",
            Modality::Low => "LOW",
        }
    }

    pub fn is_intraoral(self) -> bool {
        !matches!(self, Modality::Lat | Modality::Pan)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Modality {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DomainError::UnknownModality(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "ZH")]
    Zh,
}

impl Language {
    pub const ALL: [Language; 2] = [Language::En, Language::Zh];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "EN",
            Language::Zh => "ZH",
        }
    }

    pub fn other(self) -> Language {
        match self {
            Language::En => Language::Zh,
            Language::Zh => Language::En,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EN" => Ok(Language::En),
            "ZH" => Ok(Language::Zh),
            _ => Err(DomainError::UnknownLanguage(s.to_string())),
        }
    }
}

/// Sentinel answer an expert or model gives when the image cannot settle the question.
pub const INDETERMINATE_EN: &str = "The answer is indeterminate from current imaging";
pub const INDETERMINATE_ZH: &str = "根据当前影像无法确定答案";

pub fn indeterminate_sentinel(lang: Language) -> &'static str {
    match lang {
        Language::En => INDETERMINATE_EN,
        Language::Zh => INDETERMINATE_ZH,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_codes_are_unique_and_parse_back() {
        let mut codes: Vec<_> = Modality::ALL.iter().map(|m| m.code()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 7);
        for m in Modality::ALL {
            assert_eq!(m.code().parse::<Modality>().unwrap(), m);
        }
        assert!("CBCT".parse::<Modality>().is_err());
    }

    #[test]
    fn language_serde_uses_codes() {
        assert_eq!(serde_json::to_string(&Language::Zh).unwrap(), "\"ZH\"");
        assert_eq!("en".parse::<Language>().unwrap(), Language::En);
    }
}
