use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ArchRegion, DomainError, Language};

pub const DESCRIPTOR_COUNT: usize = 9;

/// Index into the nine-entry location vocabulary.
///
/// Slots 0..6 are the arch-grid cells in [`ArchRegion::index`] order; the
/// remaining slots are vocabulary-defined (by default: upper arch, lower
/// arch, whole dentition).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct LocationDescriptor(u8);

impl LocationDescriptor {
    pub fn new(index: u8) -> Result<Self, DomainError> {
        if (index as usize) < DESCRIPTOR_COUNT {
            Ok(LocationDescriptor(index))
        } else {
            Err(DomainError::DescriptorOutOfRange(index))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn from_region(region: ArchRegion) -> Self {
        LocationDescriptor(region.index())
    }

    pub fn all() -> impl Iterator<Item = LocationDescriptor> {
        (0..DESCRIPTOR_COUNT as u8).map(LocationDescriptor)
    }
}

impl TryFrom<u8> for LocationDescriptor {
    type Error = DomainError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        LocationDescriptor::new(v)
    }
}

impl From<LocationDescriptor> for u8 {
    fn from(d: LocationDescriptor) -> u8 {
        d.0
    }
}

/// A set of location descriptors, stored as a 9-bit mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct LocationSet(u16);

impl LocationSet {
    pub const FULL_MASK: u16 = (1 << DESCRIPTOR_COUNT) - 1;

    pub fn new() -> Self {
        LocationSet(0)
    }

    /// Build from a raw mask; bits above the vocabulary are rejected.
    pub fn from_mask(mask: u16) -> Result<Self, DomainError> {
        if mask & !Self::FULL_MASK != 0 {
            let bit = (mask & !Self::FULL_MASK).trailing_zeros() as u8;
            return Err(DomainError::DescriptorOutOfRange(bit));
        }
        Ok(LocationSet(mask))
    }

    pub fn mask(self) -> u16 {
        self.0
    }

    pub fn insert(&mut self, d: LocationDescriptor) {
        self.0 |= 1 << d.0;
    }

    pub fn contains(self, d: LocationDescriptor) -> bool {
        self.0 & (1 << d.0) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.iter().count()
    }

    pub fn iter(self) -> impl Iterator<Item = LocationDescriptor> {
        LocationDescriptor::all().filter(move |d| self.contains(*d))
    }

    pub fn is_subset(self, other: LocationSet) -> bool {
        self.iter().all(|d| other.contains(d))
    }
}

impl FromIterator<LocationDescriptor> for LocationSet {
    fn from_iter<I: IntoIterator<Item = LocationDescriptor>>(iter: I) -> Self {
        let mut s = LocationSet::new();
        for d in iter {
            s.insert(d);
        }
        s
    }
}

impl TryFrom<Vec<u8>> for LocationSet {
    type Error = DomainError;

    fn try_from(v: Vec<u8>) -> Result<Self, Self::Error> {
        v.into_iter().map(LocationDescriptor::new).collect()
    }
}

impl From<LocationSet> for Vec<u8> {
    fn from(s: LocationSet) -> Vec<u8> {
        s.iter().map(u8::from).collect()
    }
}

/// Surface strings for the nine descriptors, one list per language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocationVocabulary {
    en: Vec<String>,
    zh: Vec<String>,
}

const DEFAULT_EN: &str = include_str!("../../config/locations.en.txt");
const DEFAULT_ZH: &str = include_str!("../../config/locations.zh.txt");

impl LocationVocabulary {
    pub fn new(en: Vec<String>, zh: Vec<String>) -> Result<Self, DomainError> {
        for (lang, list) in [(Language::En, &en), (Language::Zh, &zh)] {
            if list.len() != DESCRIPTOR_COUNT {
                return Err(DomainError::VocabularySize { lang, found: list.len() });
            }
            let mut seen = HashSet::new();
            for s in list {
                if !seen.insert(s.as_str()) {
                    return Err(DomainError::VocabularyDuplicate { lang, descriptor: s.clone() });
                }
            }
        }
        Ok(LocationVocabulary { en, zh })
    }

    /// Parse one-descriptor-per-line files (blank lines and `#` comments skipped).
    pub fn from_lines(en: &str, zh: &str) -> Result<Self, DomainError> {
        let lines = |s: &str| {
            s.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect::<Vec<_>>()
        };
        Self::new(lines(en), lines(zh))
    }

    pub fn surfaces(&self, lang: Language) -> &[String] {
        match lang {
            Language::En => &self.en,
            Language::Zh => &self.zh,
        }
    }

    pub fn surface(&self, d: LocationDescriptor, lang: Language) -> &str {
        &self.surfaces(lang)[d.0 as usize]
    }

    /// Descriptor whose surface form in `lang` is exactly `s`.
    pub fn lookup(&self, s: &str, lang: Language) -> Option<LocationDescriptor> {
        self.surfaces(lang).iter().position(|x| x == s).map(|i| LocationDescriptor(i as u8))
    }

    pub fn describe(&self, set: LocationSet, lang: Language) -> Vec<&str> {
        set.iter().map(|d| self.surface(d, lang)).collect()
    }
}

impl Default for LocationVocabulary {
    fn default() -> Self {
        Self::from_lines(DEFAULT_EN, DEFAULT_ZH).expect("shipped location vocabulary is valid")
    }
}

impl fmt::Display for LocationDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}
