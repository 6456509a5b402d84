use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Class labels with multiplicities.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelMultiset {
    counts: BTreeMap<usize, usize>,
}

impl LabelMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: usize) {
        *self.counts.entry(label).or_insert(0) += 1;
    }

    pub fn count(&self, label: usize) -> usize {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    pub fn contains(&self, label: usize) -> bool {
        self.counts.contains_key(&label)
    }

    /// Removes one instance; returns whether the label was present.
    pub fn remove_one(&mut self, label: usize) -> bool {
        match self.counts.get_mut(&label) {
            Some(c) if *c > 1 => {
                *c -= 1;
                true
            }
            Some(_) => {
                self.counts.remove(&label);
                true
            }
            None => false,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `(label, multiplicity)` pairs in label order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.counts.iter().map(|(&l, &c)| (l, c))
    }

    /// Labels with repetition, in label order.
    pub fn to_vec(&self) -> Vec<usize> {
        self.iter()
            .flat_map(|(l, c)| std::iter::repeat_n(l, c))
            .collect()
    }

    pub fn has_duplicates(&self) -> bool {
        self.counts.values().any(|&c| c > 1)
    }
}

impl FromIterator<usize> for LabelMultiset {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut m = LabelMultiset::new();
        for l in iter {
            m.insert(l);
        }
        m
    }
}

impl fmt::Display for LabelMultiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (l, c)) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{l}:{c}")?;
        }
        write!(f, "}}")
    }
}
