//! Document-scoped identifiers and byte spans.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Record kind encoded in an [`Id`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IdKind {
    Entity,
    Hyperedge,
    Edge,
    Cluster,
    Item,
}

impl IdKind {
    fn tag(self) -> char {
        match self {
            IdKind::Entity => 'v',
            IdKind::Hyperedge => 'h',
            IdKind::Edge => 'e',
            IdKind::Cluster => 'c',
            IdKind::Item => 'k',
        }
    }

    fn from_tag(c: char) -> Option<Self> {
        Some(match c {
            'v' => IdKind::Entity,
            'h' => IdKind::Hyperedge,
            'e' => IdKind::Edge,
            'c' => IdKind::Cluster,
            'k' => IdKind::Item,
            _ => return None,
        })
    }
}

/// Identifier of the form `{doc_id}:{kind}{counter}`, e.g. `doc1:h12`.
///
/// Ordering is by document id, then kind, then numeric counter, so `doc:h9`
/// sorts before `doc:h10`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Id {
    doc: String,
    kind: IdKind,
    counter: u32,
}

impl Id {
    pub fn new(doc: impl Into<String>, kind: IdKind, counter: u32) -> Self {
        Id {
            doc: doc.into(),
            kind,
            counter,
        }
    }

    pub fn doc(&self) -> &str {
        &self.doc
    }

    pub fn kind(&self) -> IdKind {
        self.kind
    }

    pub fn counter(&self) -> u32 {
        self.counter
    }
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}{}", self.doc, self.kind.tag(), self.counter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed id `{0}`")]
pub struct ParseIdError(pub String);

impl FromStr for Id {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseIdError(s.to_string());
        let (doc, rest) = s.rsplit_once(':').ok_or_else(bad)?;
        let mut chars = rest.chars();
        let kind = chars.next().and_then(IdKind::from_tag).ok_or_else(bad)?;
        let digits = chars.as_str();
        if doc.is_empty() || digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let counter = digits.parse().map_err(|_| bad())?;
        Ok(Id::new(doc, kind, counter))
    }
}

impl Serialize for Id {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Id {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open byte range `[start, end)` into a document's canonical text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn shift(&self, by: usize) -> Span {
        Span::new(self.start + by, self.end + by)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_display_parse() {
        let id = Id::new("doc:a", IdKind::Hyperedge, 12);
        assert_eq!(id.to_string(), "doc:a:h12");
        assert_eq!("doc:a:h12".parse::<Id>().unwrap(), id);
        assert!("doc".parse::<Id>().is_err());
        assert!("doc:x1".parse::<Id>().is_err());
        assert!("doc:h".parse::<Id>().is_err());
        assert!(":h1".parse::<Id>().is_err());
    }

    #[test]
    fn id_order_is_numeric() {
        let a = Id::new("d", IdKind::Hyperedge, 9);
        let b = Id::new("d", IdKind::Hyperedge, 10);
        assert!(a < b);
    }

    #[test]
    fn id_serde_as_string() {
        let id = Id::new("d1", IdKind::Entity, 3);
        let json = serde_json::to_string(&id).unwrap();
        assert_eq!(json, "\"d1:v3\"");
        let back: Id = serde_json::from_str(&json).unwrap();
        assert_eq!(back, id);
    }
}
