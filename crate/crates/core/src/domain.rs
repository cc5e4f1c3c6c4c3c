//! Rating-scale vocabulary.
//!
//! Agency ratings come on a 21-notch scale. Models here predict one of nine
//! aggregated classes, each carrying an integer target on the 0..=8 scale
//! (Aaa = 0, C = 8). A continuous model output is turned back into a class by
//! [`discretize`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of aggregated rating classes.
pub const N_CLASSES: usize = 9;

/// One notch of the 21-grade agency scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Notch {
    Aaa,
    Aa1,
    Aa2,
    Aa3,
    A1,
    A2,
    A3,
    Baa1,
    Baa2,
    Baa3,
    Ba1,
    Ba2,
    Ba3,
    B1,
    B2,
    B3,
    Caa1,
    Caa2,
    Caa3,
    Ca,
    C,
}

impl Notch {
    pub const ALL: [Notch; 21] = [
        Notch::Aaa,
        Notch::Aa1,
        Notch::Aa2,
        Notch::Aa3,
        Notch::A1,
        Notch::A2,
        Notch::A3,
        Notch::Baa1,
        Notch::Baa2,
        Notch::Baa3,
        Notch::Ba1,
        Notch::Ba2,
        Notch::Ba3,
        Notch::B1,
        Notch::B2,
        Notch::B3,
        Notch::Caa1,
        Notch::Caa2,
        Notch::Caa3,
        Notch::Ca,
        Notch::C,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Notch::Aaa => "Aaa",
            Notch::Aa1 => "Aa1",
            Notch::Aa2 => "Aa2",
            Notch::Aa3 => "Aa3",
            Notch::A1 => "A1",
            Notch::A2 => "A2",
            Notch::A3 => "A3",
            Notch::Baa1 => "Baa1",
            Notch::Baa2 => "Baa2",
            Notch::Baa3 => "Baa3",
            Notch::Ba1 => "Ba1",
            Notch::Ba2 => "Ba2",
            Notch::Ba3 => "Ba3",
            Notch::B1 => "B1",
            Notch::B2 => "B2",
            Notch::B3 => "B3",
            Notch::Caa1 => "Caa1",
            Notch::Caa2 => "Caa2",
            Notch::Caa3 => "Caa3",
            Notch::Ca => "Ca",
            Notch::C => "C",
        }
    }

    /// Strips the numeric modifier; Aaa, Ca and C map to themselves.
    pub fn aggregate(self) -> RatingClass {
        use Notch::*;
        match self {
            Aaa => RatingClass::Aaa,
            Aa1 | Aa2 | Aa3 => RatingClass::Aa,
            A1 | A2 | A3 => RatingClass::A,
            Baa1 | Baa2 | Baa3 => RatingClass::Baa,
            Ba1 | Ba2 | Ba3 => RatingClass::Ba,
            B1 | B2 | B3 => RatingClass::B,
            Caa1 | Caa2 | Caa3 => RatingClass::Caa,
            Ca => RatingClass::Ca,
            C => RatingClass::C,
        }
    }

    /// Notches aggregating into `class`, best first.
    pub fn of_class(class: RatingClass) -> impl Iterator<Item = Notch> {
        Notch::ALL
            .into_iter()
            .filter(move |n| n.aggregate() == class)
    }
}

impl FromStr for Notch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Notch::ALL
            .into_iter()
            .find(|n| n.code() == s)
            .ok_or_else(|| Error::UnknownRating {
                value: s.to_string(),
            })
    }
}

impl fmt::Display for Notch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

pub fn aggregate_notch(notch: Notch) -> RatingClass {
    notch.aggregate()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grade {
    Investment,
    Speculative,
}

/// Aggregated rating class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RatingClass {
    Aaa,
    Aa,
    A,
    Baa,
    Ba,
    B,
    Caa,
    Ca,
    C,
}

impl RatingClass {
    /// All classes in target order.
    pub const ALL: [RatingClass; N_CLASSES] = [
        RatingClass::Aaa,
        RatingClass::Aa,
        RatingClass::A,
        RatingClass::Baa,
        RatingClass::Ba,
        RatingClass::B,
        RatingClass::Caa,
        RatingClass::Ca,
        RatingClass::C,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RatingClass::Aaa => "Aaa",
            RatingClass::Aa => "Aa",
            RatingClass::A => "A",
            RatingClass::Baa => "Baa",
            RatingClass::Ba => "Ba",
            RatingClass::B => "B",
            RatingClass::Caa => "Caa",
            RatingClass::Ca => "Ca",
            RatingClass::C => "C",
        }
    }

    pub fn target(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_target(target: u8) -> Option<RatingClass> {
        RatingClass::ALL.get(target as usize).copied()
    }

    pub fn grade(self) -> Grade {
        if self <= RatingClass::Baa {
            Grade::Investment
        } else {
            Grade::Speculative
        }
    }
}

impl FromStr for RatingClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RatingClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownRating {
                value: s.to_string(),
            })
    }
}

impl fmt::Display for RatingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for RatingClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for RatingClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn class_to_target(class: RatingClass) -> u8 {
    class.target()
}

/// Inverse of [`class_to_target`]; `None` outside 0..=8.
pub fn target_to_class(target: u8) -> Option<RatingClass> {
    RatingClass::from_target(target)
}

/// A rating label as it appears in a data file: either a notch or an
/// already-aggregated class. The original form is kept so files round-trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Notch(Notch),
    Class(RatingClass),
}

impl Label {
    pub fn class(self) -> RatingClass {
        match self {
            Label::Notch(n) => n.aggregate(),
            Label::Class(c) => c,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Label::Notch(n) => n.code(),
            Label::Class(c) => c.name(),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    /// Codes shared by both scales (Aaa, Ca, C) parse as notches; they
    /// aggregate to themselves so the choice is immaterial.
    fn from_str(s: &str) -> Result<Self> {
        if let Ok(n) = s.parse::<Notch>() {
            return Ok(Label::Notch(n));
        }
        s.parse::<RatingClass>().map(Label::Class)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Maps a continuous score on the 0..=8 scale to a class: clamp to [0, 8],
/// then round to the nearest integer with ties away from zero.
pub fn discretize(score: f64) -> Result<RatingClass> {
    if !score.is_finite() {
        return Err(Error::Numeric(format!(
            "cannot discretize non-finite score {score}"
        )));
    }
    let rounded = score.clamp(0.0, (N_CLASSES - 1) as f64).round();
    Ok(RatingClass::ALL[rounded as usize])
}
