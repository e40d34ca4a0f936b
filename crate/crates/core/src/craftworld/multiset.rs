use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Counted bag of item ids. Zero counts are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Multiset(BTreeMap<String, u32>);

impl Multiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, item: &str) -> u32 {
        self.0.get(item).copied().unwrap_or(0)
    }

    pub fn add(&mut self, item: &str, n: u32) {
        if n > 0 {
            *self.0.entry(item.to_string()).or_insert(0) += n;
        }
    }

    /// Remove `n` copies. Returns false and leaves the set untouched when
    /// fewer than `n` are present.
    pub fn remove(&mut self, item: &str, n: u32) -> bool {
        let have = self.count(item);
        if have < n {
            return false;
        }
        if have == n {
            self.0.remove(item);
        } else if n > 0 {
            self.0.insert(item.to_string(), have - n);
        }
        true
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn total(&self) -> u32 {
        self.0.values().sum()
    }

    /// Signed per-item difference `self - before`, zero entries dropped.
    pub fn diff(&self, before: &Multiset) -> BTreeMap<String, i64> {
        let mut out = BTreeMap::new();
        for key in self.0.keys().chain(before.0.keys()) {
            let d = i64::from(self.count(key)) - i64::from(before.count(key));
            if d != 0 {
                out.insert(key.clone(), d);
            }
        }
        out
    }
}

impl<S: Into<String>> FromIterator<(S, u32)> for Multiset {
    fn from_iter<I: IntoIterator<Item = (S, u32)>>(iter: I) -> Self {
        let mut m = Multiset::new();
        for (k, n) in iter {
            m.add(&k.into(), n);
        }
        m
    }
}

impl fmt::Display for Multiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("nothing");
        }
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{v} {k}")).collect();
        f.write_str(&parts.join(", "))
    }
}
