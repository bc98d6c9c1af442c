use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Sentiment orientation of a document: negative, neutral or positive.
///
/// Serialized as the integers `-1`, `0`, `1`. Models use the class indices
/// `0`, `1`, `2` for the same three values, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Negative,
    Neutral,
    Positive,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("label {0} is outside {{-1, 0, +1}}")]
pub struct PolarityError(pub i64);

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Negative, Polarity::Neutral, Polarity::Positive];

    pub fn value(self) -> i8 {
        match self {
            Polarity::Negative => -1,
            Polarity::Neutral => 0,
            Polarity::Positive => 1,
        }
    }

    pub fn from_value(v: i64) -> Result<Self, PolarityError> {
        match v {
            -1 => Ok(Polarity::Negative),
            0 => Ok(Polarity::Neutral),
            1 => Ok(Polarity::Positive),
            other => Err(PolarityError(other)),
        }
    }

    /// Class index used by the classifiers: `{0: -1, 1: 0, 2: +1}`.
    pub fn class_index(self) -> usize {
        (self.value() + 1) as usize
    }

    pub fn from_class_index(idx: usize) -> Option<Self> {
        Self::ALL.get(idx).copied()
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarity::Positive => f.write_str("+1"),
            other => write!(f, "{}", other.value()),
        }
    }
}

impl FromStr for Polarity {
    type Err = PolarityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: i64 = s.trim().trim_start_matches('+').parse().map_err(|_| PolarityError(i64::MIN))?;
        Polarity::from_value(v)
    }
}

impl Serialize for Polarity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_i8(self.value())
    }
}

impl<'de> Deserialize<'de> for Polarity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PolarityVisitor;

        impl Visitor<'_> for PolarityVisitor {
            type Value = Polarity;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("one of -1, 0, 1")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Polarity, E> {
                Polarity::from_value(v).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Polarity, E> {
                Polarity::from_value(v.min(i64::MAX as u64) as i64).map_err(E::custom)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Polarity, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_i8(PolarityVisitor)
    }
}
