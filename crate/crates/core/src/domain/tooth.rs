use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DomainError;

/// A tooth in FDI two-digit notation: quadrant digit then position digit.
///
/// Quadrants 1-4 are permanent teeth (positions 1-8), quadrants 5-8 are
/// deciduous teeth (positions 1-5).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ToothNumber(u8);

impl ToothNumber {
    pub fn new(fdi: u8) -> Result<Self, DomainError> {
        let invalid = |reason| DomainError::InvalidTooth { value: fdi.to_string(), reason };
        if !(10..=99).contains(&fdi) {
            return Err(invalid("expected a two-digit number"));
        }
        let (quadrant, position) = (fdi / 10, fdi % 10);
        if !(1..=8).contains(&quadrant) {
            return Err(invalid("quadrant digit must be 1-8"));
        }
        let max_position = if quadrant <= 4 { 8 } else { 5 };
        if position == 0 || position > max_position {
            return Err(invalid(if quadrant <= 4 {
                "permanent position digit must be 1-8"
            } else {
                "deciduous position digit must be 1-5"
            }));
        }
        Ok(ToothNumber(fdi))
    }

    pub fn fdi(self) -> u8 {
        self.0
    }

    pub fn quadrant(self) -> u8 {
        self.0 / 10
    }

    pub fn position(self) -> u8 {
        self.0 % 10
    }

    pub fn is_deciduous(self) -> bool {
        self.quadrant() >= 5
    }

    /// The same tooth on the opposite side of the midline.
    pub fn mirror(self) -> ToothNumber {
        let q = self.quadrant();
        let mirrored = match q {
            1 | 3 | 5 | 7 => q + 1,
            _ => q - 1,
        };
        ToothNumber(mirrored * 10 + self.position())
    }

    /// Every valid FDI number, ascending.
    pub fn all() -> impl Iterator<Item = ToothNumber> {
        (10u8..=99).filter_map(|n| ToothNumber::new(n).ok())
    }
}

impl TryFrom<u8> for ToothNumber {
    type Error = DomainError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        ToothNumber::new(value)
    }
}

impl From<ToothNumber> for u8 {
    fn from(t: ToothNumber) -> u8 {
        t.0
    }
}

impl FromStr for ToothNumber {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.len() != 2 || !t.bytes().all(|b| b.is_ascii_digit()) {
            return Err(DomainError::InvalidTooth { value: s.to_string(), reason: "expected two decimal digits" });
        }
        ToothNumber::new(t.parse().expect("two ascii digits"))
    }
}

impl fmt::Display for ToothNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vertical {
    Upper,
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizontal {
    RightPosterior,
    Anterior,
    LeftPosterior,
}

/// One cell of the 2x3 arch grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArchRegion {
    pub vertical: Vertical,
    pub horizontal: Horizontal,
}

impl ArchRegion {
    pub const ALL: [ArchRegion; 6] = [
        ArchRegion::new(Vertical::Upper, Horizontal::RightPosterior),
        ArchRegion::new(Vertical::Upper, Horizontal::Anterior),
        ArchRegion::new(Vertical::Upper, Horizontal::LeftPosterior),
        ArchRegion::new(Vertical::Lower, Horizontal::RightPosterior),
        ArchRegion::new(Vertical::Lower, Horizontal::Anterior),
        ArchRegion::new(Vertical::Lower, Horizontal::LeftPosterior),
    ];

    pub const fn new(vertical: Vertical, horizontal: Horizontal) -> Self {
        ArchRegion { vertical, horizontal }
    }

    /// Row-major index 0..6, matching the first six descriptor slots.
    pub fn index(self) -> u8 {
        let row = match self.vertical {
            Vertical::Upper => 0,
            Vertical::Lower => 3,
        };
        let col = match self.horizontal {
            Horizontal::RightPosterior => 0,
            Horizontal::Anterior => 1,
            Horizontal::LeftPosterior => 2,
        };
        row + col
    }
}

/// How the upper/lower split is read off the tooth number.
///
/// `FdiQuadrant` follows the chart: quadrants 1, 2, 5, 6 are maxillary.
/// `Inverted` swaps the rows, for image sources stored upside down.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerticalRule {
    #[default]
    FdiQuadrant,
    Inverted,
}

/// Arch region of a tooth. Positions 1-3 (incisors and canine) are anterior.
pub fn region_of_tooth(tooth: ToothNumber, rule: VerticalRule) -> ArchRegion {
    let q = tooth.quadrant();
    let upper = matches!(q, 1 | 2 | 5 | 6);
    let vertical = match (upper, rule) {
        (true, VerticalRule::FdiQuadrant) | (false, VerticalRule::Inverted) => Vertical::Upper,
        _ => Vertical::Lower,
    };
    let horizontal = if tooth.position() <= 3 {
        Horizontal::Anterior
    } else if matches!(q, 1 | 4 | 5 | 8) {
        Horizontal::RightPosterior
    } else {
        Horizontal::LeftPosterior
    };
    ArchRegion { vertical, horizontal }
}

/// [`region_of_tooth`] over a raw FDI number, rejecting invalid digits.
pub fn region_of_fdi(fdi: u8, rule: VerticalRule) -> Result<ArchRegion, DomainError> {
    Ok(region_of_tooth(ToothNumber::new(fdi)?, rule))
}
