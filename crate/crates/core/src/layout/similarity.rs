use serde::{Deserialize, Serialize};

use crate::text;

pub const MU_COS: f64 = 1.0;
pub const MU_JAC: f64 = 1.0;
pub const MU_EDIT: f64 = 0.01;

/// Similarity terms between a frame description and a reconstructed caption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionError {
    pub cos: f64,
    pub jac: f64,
    /// Character-level Levenshtein distance divided by the longer length.
    pub edit: f64,
    pub e_rec: f64,
}

fn cosine_tf(a: &str, b: &str) -> f64 {
    let ta = text::term_frequencies(a);
    let tb = text::term_frequencies(b);
    let dot: u64 = ta.iter().filter_map(|(w, &x)| tb.get(w).map(|&y| x * y)).sum();
    let na: u64 = ta.values().map(|x| x * x).sum();
    let nb: u64 = tb.values().map(|x| x * x).sum();
    if na == 0 || nb == 0 {
        return 0.0;
    }
    // sqrt of the integer product keeps identical inputs at exactly 1.
    (dot as f64 / ((na * nb) as f64).sqrt()).clamp(0.0, 1.0)
}

/// `e_rec = 1 - (μ1·cos + μ2·jac - μ3·edit)`; identical texts give −1.
pub fn reconstruction_error(original: &str, reconstructed: &str) -> ReconstructionError {
    let cos = cosine_tf(original, reconstructed);
    let jac = text::jaccard(&text::word_set(original), &text::word_set(reconstructed));
    let longest = original.chars().count().max(reconstructed.chars().count());
    let edit = if longest == 0 {
        0.0
    } else {
        strsim::levenshtein(original, reconstructed) as f64 / longest as f64
    };
    let e_rec = 1.0 - (MU_COS * cos + MU_JAC * jac - MU_EDIT * edit);
    ReconstructionError { cos, jac, edit, e_rec }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Independent scalar recomputation: whitespace-split after stripping
    /// punctuation, hash maps, and a full DP table for Levenshtein.
    fn oracle(a: &str, b: &str) -> (f64, f64, f64, f64) {
        let norm = |s: &str| -> Vec<String> {
            s.chars()
                .map(|c| if c.is_alphanumeric() { c.to_lowercase().next().unwrap() } else { ' ' })
                .collect::<String>()
                .split(' ')
                .filter(|w| !w.is_empty())
                .map(String::from)
                .collect()
        };
        let (wa, wb) = (norm(a), norm(b));
        let mut ca: HashMap<&str, f64> = HashMap::new();
        let mut cb: HashMap<&str, f64> = HashMap::new();
        wa.iter().for_each(|w| *ca.entry(w).or_default() += 1.0);
        wb.iter().for_each(|w| *cb.entry(w).or_default() += 1.0);
        let dot: f64 = ca.iter().map(|(w, x)| x * cb.get(w).copied().unwrap_or(0.0)).sum();
        let n = |m: &HashMap<&str, f64>| m.values().map(|x| x * x).sum::<f64>().sqrt();
        let cos = dot / (n(&ca) * n(&cb));
        let inter = ca.keys().filter(|k| cb.contains_key(*k)).count() as f64;
        let uni = (ca.len() + cb.len()) as f64 - inter;
        let jac = inter / uni;
        let (x, y): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        let mut d = vec![vec![0usize; y.len() + 1]; x.len() + 1];
        for i in 0..=x.len() {
            d[i][0] = i;
        }
        for j in 0..=y.len() {
            d[0][j] = j;
        }
        for i in 1..=x.len() {
            for j in 1..=y.len() {
                let sub = d[i - 1][j - 1] + usize::from(x[i - 1] != y[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        let edit = d[x.len()][y.len()] as f64 / x.len().max(y.len()) as f64;
        (cos, jac, edit, 1.0 - (cos + jac - 0.01 * edit))
    }

    #[test]
    fn identical_texts_give_minus_one() {
        for t in ["the cat sat", "a knight at the middle-center. background: castle", "x x x y"] {
            let r = reconstruction_error(t, t);
            assert_eq!((r.cos, r.jac, r.edit, r.e_rec), (1.0, 1.0, 0.0, -1.0));
        }
    }

    #[test]
    fn disjoint_vocabulary() {
        let r = reconstruction_error("abc def", "xyz uvw");
        assert_eq!((r.cos, r.jac), (0.0, 0.0));
        assert!(r.edit <= 1.0);
        assert!((1.0..=1.01).contains(&r.e_rec));
    }

    #[test]
    fn cat_sat_against_oracle() {
        let r = reconstruction_error("the cat sat", "the cat");
        assert_eq!(r.jac, 2.0 / 3.0);
        let (cos, jac, edit, e) = oracle("the cat sat", "the cat");
        assert!((r.cos - cos).abs() < 1e-12);
        assert!((r.jac - jac).abs() < 1e-12);
        assert_eq!(edit, 4.0 / 11.0);
        assert!((r.edit - edit).abs() < 1e-12);
        assert!((r.e_rec - e).abs() < 1e-12);
    }

    fn sentence() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!["the", "cat", "sat", "on", "mat", "dog", "Ran", "é"]), 1..8)
            .prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn matches_oracle(a in sentence(), b in sentence()) {
            let r = reconstruction_error(&a, &b);
            let (cos, jac, edit, e) = oracle(&a, &b);
            prop_assert!((r.cos - cos).abs() < 1e-12);
            prop_assert!((r.jac - jac).abs() < 1e-12);
            prop_assert!((r.edit - edit).abs() < 1e-12);
            prop_assert!((r.e_rec - e).abs() < 1e-12);
        }

        #[test]
        fn perturbation_never_beats_identity(a in sentence(), b in sentence()) {
            prop_assert!(reconstruction_error(&a, &b).e_rec >= -1.0);
            if a != b {
                prop_assert!(reconstruction_error(&a, &b).e_rec > -1.0);
            }
        }

        #[test]
        fn symmetric(a in sentence(), b in sentence()) {
            prop_assert_eq!(reconstruction_error(&a, &b).e_rec, reconstruction_error(&b, &a).e_rec);
        }
    }
}
