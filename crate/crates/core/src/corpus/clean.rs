use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use super::Corpus;

/// Returns `true` for lines that should be rejected.
pub type LinePredicate = Arc<dyn Fn(&str) -> bool + Send + Sync>;

/// Line-level cleaning rules. The `reject` hook is where an external
/// language-ID filter plugs in; it is off by default.
#[derive(Clone)]
pub struct CleaningConfig {
    pub drop_repetitive: bool,
    pub drop_duplicates: bool,
    pub reject: Option<LinePredicate>,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            drop_repetitive: true,
            drop_duplicates: true,
            reject: None,
        }
    }
}

impl fmt::Debug for CleaningConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CleaningConfig")
            .field("drop_repetitive", &self.drop_repetitive)
            .field("drop_duplicates", &self.drop_duplicates)
            .field("reject", &self.reject.as_ref().map(|_| "<predicate>"))
            .finish()
    }
}

/// A line is repetitive when its non-whitespace characters have at most two
/// distinct values, or a single character makes up more than 80% of them.
/// Whitespace-only lines count as repetitive.
pub fn is_repetitive(line: &str) -> bool {
    let mut counts: HashMap<char, usize> = HashMap::new();
    let mut total = 0usize;
    for c in line.chars().filter(|c| !c.is_whitespace()) {
        *counts.entry(c).or_default() += 1;
        total += 1;
    }
    if counts.len() <= 2 {
        return true;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    max * 5 > total * 4
}

pub fn clean_lines(corpus: &Corpus, rules: &CleaningConfig) -> Corpus {
    let mut seen: HashSet<&str> = HashSet::new();
    let mut kept = Vec::new();
    for line in corpus.lines() {
        if rules.drop_repetitive && is_repetitive(line) {
            continue;
        }
        if let Some(reject) = &rules.reject {
            if reject(line) {
                continue;
            }
        }
        if rules.drop_duplicates && !seen.insert(line.as_str()) {
            continue;
        }
        kept.push(line.clone());
    }
    corpus.with_lines(kept)
}
