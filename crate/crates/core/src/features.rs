//! TF-IDF vectorization.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::sync::OnceLock;

use crate::corpus::{Dataset, Document};
use crate::error::{Error, Result};

const STOP_WORDS_EN: &str = include_str!("../data/stop_words_en.txt");

pub fn stop_words() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| STOP_WORDS_EN.lines().map(str::trim).filter(|w| !w.is_empty()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorizerConfig {
    pub min_df: usize,
    pub max_terms: usize,
    pub min_token_len: usize,
    pub remove_stop_words: bool,
}

impl Default for VectorizerConfig {
    fn default() -> Self {
        VectorizerConfig { min_df: 2, max_terms: 3000, min_token_len: 2, remove_stop_words: true }
    }
}

/// Lowercased alphanumeric runs of at least `min_len` characters.
pub fn tokenize(text: &str, min_len: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= min_len && !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub term: String,
    pub document_frequency: usize,
    pub idf: f64,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    terms: Vec<Term>,
    lookup: HashMap<String, u32>,
    config: VectorizerConfig,
}

/// Sparse TF-IDF vector, entries sorted by term index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    /// Sorts by index and sums duplicate indices.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => entries.push((i, v)),
            }
        }
        FeatureVector { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |e| e.0)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.entries.last().map(|e| e.0)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .filter_map(|&(i, v)| dense.get(i as usize).map(|w| w * v))
            .sum()
    }
}

impl Vocabulary {
    pub fn build(dataset: &Dataset) -> Result<Vocabulary> {
        Self::build_with(dataset.documents(), VectorizerConfig::default())
    }

    /// Keeps terms with `df >= min_df` that are not stop words, ranked by total
    /// term frequency (ties by term), capped at `max_terms`.
    pub fn build_with(documents: &[Document], config: VectorizerConfig) -> Result<Vocabulary> {
        let n_docs = documents.len();
        let mut tf: HashMap<String, usize> = HashMap::new();
        let mut df: HashMap<String, usize> = HashMap::new();
        for doc in documents {
            let tokens = tokenize(&doc.text(), config.min_token_len);
            let mut seen = HashSet::new();
            for tok in tokens {
                if config.remove_stop_words && stop_words().contains(tok.as_str()) {
                    continue;
                }
                *tf.entry(tok.clone()).or_default() += 1;
                if seen.insert(tok.clone()) {
                    *df.entry(tok).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(String, usize, usize)> = df
            .into_iter()
            .filter(|(_, d)| *d >= config.min_df)
            .map(|(t, d)| {
                let total = tf[&t];
                (t, d, total)
            })
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        kept.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(config.max_terms);

        let terms: Vec<Term> = kept
            .into_iter()
            .map(|(term, d, _)| Term {
                term,
                document_frequency: d,
                idf: ((1.0 + n_docs as f64) / (1.0 + d as f64)).ln() + 1.0,
            })
            .collect();
        let lookup = terms.iter().enumerate().map(|(i, t)| (t.term.clone(), i as u32)).collect();
        Ok(Vocabulary { terms, lookup, config })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<u32> {
        self.lookup.get(term).copied()
    }

    /// Raw term counts times idf, L2-normalized. Out-of-vocabulary tokens are
    /// ignored; a document without known terms maps to the zero vector.
    pub fn vectorize_text(&self, text: &str) -> FeatureVector {
        let mut counts: HashMap<u32, f64> = HashMap::new();
        for tok in tokenize(text, self.config.min_token_len) {
            if let Some(&i) = self.lookup.get(&tok) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let pairs: Vec<(u32, f64)> =
            counts.into_iter().map(|(i, c)| (i, c * self.terms[i as usize].idf)).collect();
        let mut v = FeatureVector::from_pairs(pairs);
        let norm = v.norm();
        if norm > 0.0 {
            for e in &mut v.entries {
                e.1 /= norm;
            }
        }
        v
    }

    pub fn vectorize(&self, document: &Document) -> FeatureVector {
        self.vectorize_text(&document.text())
    }

    pub fn vectorize_all(&self, dataset: &Dataset) -> Vec<FeatureVector> {
        dataset.documents().iter().map(|d| self.vectorize(d)).collect()
    }

    /// Debug dump as `term,df,idf`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["term", "df", "idf"])?;
        for t in &self.terms {
            w.write_record([t.term.clone(), t.document_frequency.to_string(), format!("{:.6}", t.idf)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use proptest::prelude::*;

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: i.to_string(),
                title: t.to_string(),
                abstract_text: String::new(),
                gold_label: Label::Irrelevant,
            })
            .collect()
    }

    fn plain() -> VectorizerConfig {
        VectorizerConfig { min_token_len: 1, remove_stop_words: false, ..Default::default() }
    }

    #[test]
    fn min_df_drops_singletons() {
        let v = Vocabulary::build_with(&docs(&["a b b", "b c", "c"]), plain()).unwrap();
        let got: Vec<(&str, usize)> =
            v.terms().iter().map(|t| (t.term.as_str(), t.document_frequency)).collect();
        assert_eq!(got, vec![("b", 2), ("c", 2)]);
        assert!(v.index_of("a").is_none());
    }

    #[test]
    fn cap_keeps_most_frequent() {
        // 4000 qualifying terms; term i occurs 2 + i/100 times over two docs.
        let mut a = String::new();
        let mut b = String::new();
        for i in 0..4000 {
            let w = format!("w{i} ");
            a.push_str(&w.repeat(1 + i / 100));
            b.push_str(&w);
        }
        let v = Vocabulary::build_with(&docs(&[&a, &b]), VectorizerConfig::default()).unwrap();
        assert_eq!(v.len(), 3000);
        assert!(v.index_of("w3999").is_some());
        assert!(v.index_of("w1000").is_some());
        assert!(v.index_of("w999").is_none());
    }

    #[test]
    fn idf_of_term_in_every_doc_is_one() {
        let v = Vocabulary::build_with(&docs(&["xx yy", "xx zz"]), VectorizerConfig::default()).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v.terms()[0].idf - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stop_words_are_removed() {
        let v = Vocabulary::build_with(&docs(&["the cell the", "cell the"]), VectorizerConfig::default())
            .unwrap();
        assert!(v.index_of("the").is_none());
        assert!(v.index_of("cell").is_some());
    }

    #[test]
    fn all_empty_documents_is_error() {
        assert!(matches!(
            Vocabulary::build_with(&docs(&["", "  "]), VectorizerConfig::default()),
            Err(Error::EmptyVocabulary)
        ));
    }

    #[test]
    fn oov_only_gives_zero_vector() {
        let v = Vocabulary::build_with(&docs(&["a b b", "b c", "c"]), plain()).unwrap();
        assert!(v.vectorize_text("q r s").is_zero());
    }

    #[test]
    fn weights_are_tf_times_idf_normalized() {
        let v = Vocabulary::build_with(&docs(&["a b b", "b c", "c"]), plain()).unwrap();
        let idf_b = v.terms()[v.index_of("b").unwrap() as usize].idf;
        let idf_c = v.terms()[v.index_of("c").unwrap() as usize].idf;
        let (wb, wc) = (2.0 * idf_b, idf_c);
        let norm = (wb * wb + wc * wc).sqrt();
        let fv = v.vectorize_text("b b c");
        assert!((fv.get(v.index_of("b").unwrap()) - wb / norm).abs() < 1e-12);
        assert!((fv.get(v.index_of("c").unwrap()) - wc / norm).abs() < 1e-12);
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Hello, WORLD-x 42b", 2), vec!["hello", "world", "42b"]);
    }

    proptest! {
        #[test]
        fn norm_is_zero_or_one(words in proptest::collection::vec("[a-e]{1,2}", 0..20)) {
            let v = Vocabulary::build_with(
                &docs(&["a b c d e aa bb", "a b c d e aa bb cc"]),
                plain(),
            ).unwrap();
            let fv = v.vectorize_text(&words.join(" "));
            let n = fv.norm();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
            prop_assert!(fv.entries().iter().all(|&(i, w)| w >= 0.0 && (i as usize) < v.len()));
        }
    }
}
