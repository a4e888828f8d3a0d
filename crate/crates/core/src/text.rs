//! Word-level text helpers shared by candidate scoring and caption comparison.

use std::collections::{BTreeMap, BTreeSet};

/// Lowercased alphanumeric words, in order of appearance.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

pub fn word_set(text: &str) -> BTreeSet<String> {
    words(text).into_iter().collect()
}

pub fn term_frequencies(text: &str) -> BTreeMap<String, u64> {
    let mut tf = BTreeMap::new();
    for w in words(text) {
        *tf.entry(w).or_insert(0) += 1;
    }
    tf
}

/// |a ∩ b| / |a ∪ b|, with 0 for two empty sets.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_split_on_punctuation_and_lowercase() {
        assert_eq!(words("The Cat, sat!"), vec!["the", "cat", "sat"]);
        assert_eq!(words("  "), Vec::<String>::new());
        assert_eq!(words("Émile's café"), vec!["émile", "s", "café"]);
    }

    #[test]
    fn jaccard_basic() {
        let a = word_set("the cat sat");
        let b = word_set("the cat");
        assert_eq!(jaccard(&a, &b), 2.0 / 3.0);
        assert_eq!(jaccard(&word_set(""), &word_set("")), 0.0);
    }
}
