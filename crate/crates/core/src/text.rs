//! Description normalization and a TF-IDF cosine index.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having", "he",
    "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "itself", "just", "may", "me", "might", "more", "most", "must", "my", "myself", "no", "nor", "not", "now", "of",
    "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "shall",
    "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then",
    "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "upon", "us", "using",
    "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with",
    "would", "you", "your", "yours", "yourself", "yourselves",
];

fn stemmer() -> &'static Stemmer {
    static S: OnceLock<Stemmer> = OnceLock::new();
    S.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Lowercase, split on non-alphanumerics, drop stopwords, stem.
pub fn normalize_text(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && STOPWORDS.binary_search(t).is_err())
        .map(|t| stemmer().stem(t).into_owned())
        .filter(|t| !t.is_empty())
        .collect()
}

fn term_counts(tokens: &[String]) -> BTreeMap<String, u32> {
    let mut tf = BTreeMap::new();
    for t in tokens {
        *tf.entry(t.clone()).or_insert(0) += 1;
    }
    tf
}

/// Incrementally maintained document index. Two indexes over the same
/// documents compare equal regardless of insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextIndex {
    docs: BTreeMap<String, BTreeMap<String, u32>>,
    df: BTreeMap<String, u32>,
}

impl TextIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut idx = TextIndex::new();
        for (id, text) in docs {
            idx.insert(id, text);
        }
        idx
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn insert(&mut self, id: &str, text: &str) {
        self.remove(id);
        let tf = term_counts(&normalize_text(text));
        for term in tf.keys() {
            *self.df.entry(term.clone()).or_insert(0) += 1;
        }
        self.docs.insert(id.to_string(), tf);
    }

    pub fn remove(&mut self, id: &str) {
        if let Some(tf) = self.docs.remove(id) {
            for term in tf.keys() {
                let n = self.df.get_mut(term).expect("df tracks every indexed term");
                *n -= 1;
                if *n == 0 {
                    self.df.remove(term);
                }
            }
        }
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    fn weights(&self, tf: &BTreeMap<String, u32>) -> BTreeMap<String, f64> {
        tf.iter().map(|(t, &c)| (t.clone(), (1.0 + (c as f64).ln()) * self.idf(t))).collect()
    }

    fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
        let dot: f64 = a.iter().filter_map(|(t, w)| b.get(t).map(|v| w * v)).sum();
        let na = a.values().map(|w| w * w).sum::<f64>().sqrt();
        let nb = b.values().map(|w| w * w).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            (dot / (na * nb)).clamp(0.0, 1.0)
        }
    }

    /// Cosine similarity of two texts under this index's idf weights.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let wa = self.weights(&term_counts(&normalize_text(a)));
        let wb = self.weights(&term_counts(&normalize_text(b)));
        Self::cosine(&wa, &wb)
    }

    /// Scores every indexed document against `query`, best first, ties by id.
    pub fn query(&self, query: &str) -> Vec<(String, f64)> {
        let q = self.weights(&term_counts(&normalize_text(query)));
        let mut scored: Vec<(String, f64)> =
            self.docs.iter().map(|(id, tf)| (id.clone(), Self::cosine(&q, &self.weights(tf)))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_are_sorted_for_binary_search() {
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn normalization_stems_and_drops_stopwords() {
        assert_eq!(normalize_text("Early-Adopter MODEL for the customers!"), ["earli", "adopt", "model", "custom"]);
        assert!(normalize_text("the and of").is_empty());
    }

    #[test]
    fn identical_text_scores_one_and_disjoint_zero() {
        let idx = TextIndex::build([("a", "credit risk scoring"), ("b", "marketing promotion survey")]);
        let hits = idx.query("credit risk scoring");
        assert_eq!(hits[0].0, "a");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(hits[1].1, 0.0);
    }

    #[test]
    fn removal_restores_previous_state() {
        let mut idx = TextIndex::build([("a", "credit risk")]);
        let before = idx.clone();
        idx.insert("b", "risk of churn");
        idx.remove("b");
        assert_eq!(idx, before);
    }
}
