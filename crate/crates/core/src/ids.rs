//! Wikidata identifiers and the QID-or-NIL link label.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A Wikidata item identifier (`Q` followed by digits), stored by its number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Qid(pub u64);

impl fmt::Display for Qid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseIdError(pub String);

impl fmt::Display for ParseIdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}` is not a QID or NIL", self.0)
    }
}

impl std::error::Error for ParseIdError {}

impl FromStr for Qid {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix('Q').ok_or_else(|| ParseIdError(s.to_string()))?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseIdError(s.to_string()));
        }
        digits
            .parse()
            .map(Qid)
            .map_err(|_| ParseIdError(s.to_string()))
    }
}

impl Serialize for Qid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Qid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A link target: either a KB entity or `NIL` (entity absent from the KB).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Link {
    Entity(Qid),
    Nil,
}

impl Link {
    pub fn is_nil(&self) -> bool {
        matches!(self, Link::Nil)
    }

    pub fn qid(&self) -> Option<Qid> {
        match self {
            Link::Entity(q) => Some(*q),
            Link::Nil => None,
        }
    }

    /// Tie-break order used everywhere: ascending QID number, NIL after any QID.
    pub fn tie_order(&self, other: &Link) -> Ordering {
        match (self, other) {
            (Link::Entity(a), Link::Entity(b)) => a.cmp(b),
            (Link::Entity(_), Link::Nil) => Ordering::Less,
            (Link::Nil, Link::Entity(_)) => Ordering::Greater,
            (Link::Nil, Link::Nil) => Ordering::Equal,
        }
    }
}

impl From<Qid> for Link {
    fn from(q: Qid) -> Self {
        Link::Entity(q)
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Link::Entity(q) => q.fmt(f),
            Link::Nil => f.write_str("NIL"),
        }
    }
}

impl FromStr for Link {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "NIL" {
            Ok(Link::Nil)
        } else {
            s.parse().map(Link::Entity)
        }
    }
}

impl Serialize for Link {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Link {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
