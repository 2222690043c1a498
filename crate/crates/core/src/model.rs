//! Core domain types shared by every stage.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;

macro_rules! text_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self, Error> {
                let id = id.into();
                if id.is_empty() || id.chars().any(char::is_whitespace) {
                    return Err(Error::InvalidId(id));
                }
                Ok(Self(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;

            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl TryFrom<&str> for $name {
            type Error = Error;

            fn try_from(value: &str) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(value: $name) -> String {
                value.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

text_id!(
    /// Query identifier: a non-empty token without whitespace.
    QueryId
);
text_id!(
    /// Passage identifier: a non-empty token without whitespace.
    PassageId
);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: QueryId,
    pub text: String,
}

impl Query {
    /// Fails if `text` is blank.
    pub fn new(id: QueryId, text: impl Into<String>) -> Result<Self, Error> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Param(format!("query {id} has empty text")));
        }
        Ok(Self { id, text })
    }
}

/// A corpus row. Empty text is allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: PassageId,
    pub text: String,
}

impl Passage {
    pub fn new(id: PassageId, text: impl Into<String>) -> Self {
        Self { id, text: text.into() }
    }
}

/// In-memory corpus keyed by passage id.
pub type Corpus = BTreeMap<PassageId, Passage>;

/// One entry of a ranked list. `rank` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub passage_id: PassageId,
    pub score: f64,
    pub rank: usize,
}

impl Candidate {
    pub fn new(passage_id: PassageId, score: f64, rank: usize) -> Self {
        Self {
            passage_id,
            score,
            rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: QueryId,
    pub entries: Vec<Candidate>,
}

impl RankedList {
    pub fn new(query_id: QueryId, entries: Vec<Candidate>) -> Self {
        Self { query_id, entries }
    }

    pub fn empty(query_id: QueryId) -> Self {
        Self::new(query_id, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn passage_ids(&self) -> impl Iterator<Item = &PassageId> {
        self.entries.iter().map(|c| &c.passage_id)
    }

    pub fn validate(&self) -> Result<(), Violation> {
        validate_ranked_list(self)
    }
}

/// The first invariant a [`RankedList`] breaks.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Violation {
    #[error("duplicate passage {passage_id} at rank {rank}")]
    DuplicateId { passage_id: PassageId, rank: usize },
    #[error("position {position} carries rank {found}")]
    RankMismatch { position: usize, found: usize },
    #[error("non-finite score at rank {rank}")]
    NonFiniteScore { rank: usize },
    #[error("score increase at rank {rank}")]
    ScoreIncrease { rank: usize },
}

/// Checks the ranked-list invariants in entry order and reports the first failure.
pub fn validate_ranked_list(list: &RankedList) -> Result<(), Violation> {
    let mut seen = std::collections::HashSet::with_capacity(list.entries.len());
    let mut prev_score = f64::INFINITY;
    for (i, c) in list.entries.iter().enumerate() {
        let position = i + 1;
        if !seen.insert(&c.passage_id) {
            return Err(Violation::DuplicateId {
                passage_id: c.passage_id.clone(),
                rank: position,
            });
        }
        if c.rank != position {
            return Err(Violation::RankMismatch {
                position,
                found: c.rank,
            });
        }
        if !c.score.is_finite() {
            return Err(Violation::NonFiniteScore { rank: position });
        }
        if c.score > prev_score {
            return Err(Violation::ScoreIncrease { rank: position });
        }
        prev_score = c.score;
    }
    Ok(())
}

/// Graded relevance judgments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    judgments: BTreeMap<QueryId, BTreeMap<PassageId, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a grade. Returns the previous grade when the pair already had a different one.
    pub fn insert(&mut self, query: QueryId, passage: PassageId, grade: u32) -> Option<u32> {
        let slot = self.judgments.entry(query).or_default();
        match slot.get(&passage) {
            Some(&old) if old != grade => Some(old),
            Some(_) => None,
            None => {
                slot.insert(passage, grade);
                None
            }
        }
    }

    pub fn grade(&self, query: &QueryId, passage: &PassageId) -> Option<u32> {
        self.judgments.get(query)?.get(passage).copied()
    }

    pub fn for_query(&self, query: &QueryId) -> Option<&BTreeMap<PassageId, u32>> {
        self.judgments.get(query)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &QueryId> {
        self.judgments.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&QueryId, &PassageId, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, m)| m.iter().map(move |(p, g)| (q, p, *g)))
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
