//! Index values, results and the level-wise minimum-cardinality search shared
//! by the model-based and data-driven indices.

use std::fmt;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linsys::AttackSignal;

/// Value of a security index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IndexValue {
    Finite(usize),
    /// No feasible component set exists.
    Infinite,
    /// The search was capped at this cardinality without finding a feasible set.
    Exceeds(usize),
}

impl IndexValue {
    pub fn finite(&self) -> Option<usize> {
        match self {
            IndexValue::Finite(v) => Some(*v),
            _ => None,
        }
    }

    /// `self <= other` where that is decidable. Capped values only compare
    /// when the bound settles it.
    pub fn le(&self, other: &IndexValue) -> Option<bool> {
        use IndexValue::*;
        match (self, other) {
            (Finite(a), Finite(b)) => Some(a <= b),
            (_, Infinite) => Some(true),
            (Infinite, _) => Some(false),
            (Finite(a), Exceeds(b)) => (a <= b).then_some(true),
            (Exceeds(a), Finite(b)) => (b <= a).then_some(false),
            (Exceeds(_), Exceeds(_)) => None,
        }
    }
}

impl fmt::Display for IndexValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexValue::Finite(v) => write!(f, "{v}"),
            IndexValue::Infinite => write!(f, "inf"),
            IndexValue::Exceeds(k) => write!(f, ">{k}"),
        }
    }
}

impl Serialize for IndexValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            IndexValue::Finite(v) => s.serialize_u64(*v as u64),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl std::str::FromStr for IndexValue {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "inf" {
            Ok(IndexValue::Infinite)
        } else if let Some(k) = s.strip_prefix('>') {
            k.parse().map(IndexValue::Exceeds).map_err(|_| Error::Parse(format!("bad index value {s:?}")))
        } else {
            s.parse().map(IndexValue::Finite).map_err(|_| Error::Parse(format!("bad index value {s:?}")))
        }
    }
}

/// Outcome of an index computation for one component.
#[derive(Clone, Debug)]
pub struct IndexResult {
    pub component: usize,
    pub value: IndexValue,
    /// Minimizing component set (0-based, sorted); `None` unless finite.
    pub witness_set: Option<Vec<usize>>,
    pub witness_attack: Option<AttackSignal>,
    /// Wall-clock seconds.
    pub elapsed: f64,
}

/// Lexicographic level-wise search for the smallest `gamma ∋ target` with
/// `feasible(gamma)`. Levels run `1..=min(cap, count)`; within a level the
/// candidates are evaluated in parallel and the lexicographically first
/// feasible one wins.
pub fn level_search<F>(count: usize, target: usize, cap: Option<usize>, feasible: F) -> Result<(IndexValue, Option<Vec<usize>>)>
where
    F: Fn(&[usize]) -> Result<bool> + Sync,
{
    if target >= count {
        return Err(Error::NotAComponent(target));
    }
    let top = cap.unwrap_or(count).min(count);
    let others: Vec<usize> = (0..count).filter(|&j| j != target).collect();
    for q in 1..=top {
        let mut level: Vec<Vec<usize>> = others
            .iter()
            .copied()
            .combinations(q - 1)
            .map(|mut g| {
                g.push(target);
                g.sort_unstable();
                g
            })
            .collect();
        level.sort();
        let hit = level
            .par_iter()
            .map(|g| feasible(g).map(|ok| ok.then(|| g.clone())))
            .find_first(|r| !matches!(r, Ok(None)));
        match hit {
            Some(Ok(Some(g))) => return Ok((IndexValue::Finite(q), Some(g))),
            Some(Err(e)) => return Err(e),
            _ => {}
        }
    }
    if top < count {
        Ok((IndexValue::Exceeds(top), None))
    } else {
        Ok((IndexValue::Infinite, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_lexicographically_first_minimum() {
        // feasible iff gamma contains both 1 and (3 or 4)
        let (v, g) = level_search(5, 1, None, |g| Ok(g.contains(&1) && (g.contains(&3) || g.contains(&4)))).unwrap();
        assert_eq!(v, IndexValue::Finite(2));
        assert_eq!(g.unwrap(), vec![1, 3]);
    }

    #[test]
    fn infinite_and_capped() {
        let (v, g) = level_search(4, 0, None, |_| Ok(false)).unwrap();
        assert_eq!((v, g), (IndexValue::Infinite, None));
        let (v, _) = level_search(4, 0, Some(2), |g| Ok(g.len() == 4)).unwrap();
        assert_eq!(v, IndexValue::Exceeds(2));
    }

    #[test]
    fn value_formatting() {
        assert_eq!(IndexValue::Infinite.to_string(), "inf");
        assert_eq!(IndexValue::Exceeds(4).to_string(), ">4");
        assert_eq!(serde_json::to_string(&IndexValue::Finite(3)).unwrap(), "3");
        assert_eq!(serde_json::to_string(&IndexValue::Infinite).unwrap(), "\"inf\"");
        assert_eq!("inf".parse::<IndexValue>().unwrap(), IndexValue::Infinite);
        assert_eq!(">6".parse::<IndexValue>().unwrap(), IndexValue::Exceeds(6));
    }

    #[test]
    fn ordering_with_caps() {
        use IndexValue::*;
        assert_eq!(Finite(2).le(&Finite(3)), Some(true));
        assert_eq!(Finite(2).le(&Infinite), Some(true));
        assert_eq!(Infinite.le(&Finite(3)), Some(false));
        assert_eq!(Exceeds(4).le(&Finite(3)), Some(false));
        assert_eq!(Exceeds(4).le(&Finite(6)), None);
    }
}
