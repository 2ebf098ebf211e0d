//! Screening datasets: loading, validation, synthetic generation and seed sets.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// Position of a document inside its [`Dataset`].
pub type DocIdx = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Relevant,
    Irrelevant,
}

impl Label {
    pub fn is_relevant(self) -> bool {
        self == Label::Relevant
    }

    pub fn as_digit(self) -> u8 {
        match self {
            Label::Relevant => 1,
            Label::Irrelevant => 0,
        }
    }

    pub fn from_digit(s: &str) -> Option<Label> {
        match s.trim() {
            "1" => Some(Label::Relevant),
            "0" => Some(Label::Irrelevant),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_digit())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub abstract_text: String,
    pub gold_label: Label,
}

impl Document {
    /// Text fed to the vectorizer.
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }
}

/// An immutable screening collection with gold labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    documents: Vec<Document>,
    n_relevant: usize,
    index: HashMap<String, DocIdx>,
    /// Rank of each document when ids are sorted ascending; used as tie-breaker.
    id_rank: Vec<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, documents: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if index.insert(doc.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate document id `{}`", doc.id)));
            }
        }
        let n_relevant = documents.iter().filter(|d| d.gold_label.is_relevant()).count();
        if n_relevant == 0 {
            return Err(Error::Validation("dataset contains no relevant documents".into()));
        }
        let mut order: Vec<DocIdx> = (0..documents.len()).collect();
        order.sort_by(|&a, &b| documents[a].id.cmp(&documents[b].id));
        let mut id_rank = vec![0; documents.len()];
        for (rank, &i) in order.iter().enumerate() {
            id_rank[i] = rank;
        }
        Ok(Dataset { name: name.into(), documents, n_relevant, index, id_rank })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, idx: DocIdx) -> &Document {
        &self.documents[idx]
    }

    pub fn n_total(&self) -> usize {
        self.documents.len()
    }

    pub fn n_relevant(&self) -> usize {
        self.n_relevant
    }

    pub fn n_irrelevant(&self) -> usize {
        self.documents.len() - self.n_relevant
    }

    pub fn index_of(&self, id: &str) -> Option<DocIdx> {
        self.index.get(id).copied()
    }

    pub fn id_rank(&self, idx: DocIdx) -> usize {
        self.id_rank[idx]
    }

    pub fn gold(&self, idx: DocIdx) -> Label {
        self.documents[idx].gold_label
    }

    pub fn relevant_indices(&self) -> Vec<DocIdx> {
        (0..self.n_total()).filter(|&i| self.gold(i).is_relevant()).collect()
    }

    pub fn irrelevant_indices(&self) -> Vec<DocIdx> {
        (0..self.n_total()).filter(|&i| !self.gold(i).is_relevant()).collect()
    }

    /// Writes the dataset in `synergy_csv` layout.
    pub fn write_synergy_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "title", "abstract", "label_included"])?;
        for d in &self.documents {
            w.write_record([
                d.id.as_str(),
                d.title.as_str(),
                d.abstract_text.as_str(),
                &d.gold_label.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// `id,title,abstract,label_included`
    SynergyCsv,
    /// Directory holding `docids.txt`, `qrels.txt` and `docs.csv`.
    ClefTrec,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synergy_csv" => Ok(DatasetFormat::SynergyCsv),
            "clef_trec" => Ok(DatasetFormat::ClefTrec),
            other => Err(Error::Argument(format!("unknown dataset format `{other}`"))),
        }
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    match format {
        DatasetFormat::SynergyCsv => {
            let file = std::fs::File::open(path)?;
            read_synergy_csv(dataset_name(path), file)
        }
        DatasetFormat::ClefTrec => load_clef_trec(
            dataset_name(path),
            &path.join("docids.txt"),
            &path.join("qrels.txt"),
            &path.join("docs.csv"),
        ),
    }
}

pub fn read_synergy_csv<R: std::io::Read>(name: impl Into<String>, input: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(input);
    let headers = reader.headers()?.clone();
    let expected = ["id", "title", "abstract", "label_included"];
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut docs = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let label = Label::from_digit(&record[3]).ok_or_else(|| Error::Parse {
            line,
            message: format!("label_included must be 0 or 1, got `{}`", &record[3]),
        })?;
        let id = record[0].trim();
        if id.is_empty() {
            return Err(Error::Parse { line, message: "empty id".into() });
        }
        docs.push(Document {
            id: id.to_string(),
            title: record[1].to_string(),
            abstract_text: record[2].to_string(),
            gold_label: label,
        });
    }
    Dataset::new(name, docs)
}

/// One CLEF topic: docid list, `topic 0 docid relevance` qrels, and a
/// `docid,title,abstract` companion CSV. Documents missing from the companion
/// file keep empty text.
pub fn load_clef_trec(
    name: impl Into<String>,
    docids: &Path,
    qrels: &Path,
    texts: &Path,
) -> Result<Dataset> {
    let mut judgments: HashMap<String, Label> = HashMap::new();
    for (i, line) in std::fs::read_to_string(qrels)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("qrels row needs 4 fields, got {}", parts.len()),
            });
        }
        let label = Label::from_digit(parts[3]).ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("relevance must be 0 or 1, got `{}`", parts[3]),
        })?;
        judgments.insert(parts[2].to_string(), label);
    }

    let mut text_of: HashMap<String, (String, String)> = HashMap::new();
    let mut reader = csv::Reader::from_path(texts)?;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse { line: row + 2, message: e.to_string() })?;
        if record.len() < 3 {
            return Err(Error::Parse { line: row + 2, message: "expected docid,title,abstract".into() });
        }
        text_of.insert(record[0].trim().to_string(), (record[1].to_string(), record[2].to_string()));
    }

    let mut docs = Vec::new();
    for (i, line) in std::fs::read_to_string(docids)?.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        let gold_label = *judgments.get(id).ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("docid `{id}` has no qrels judgment"),
        })?;
        let (title, abstract_text) = text_of.remove(id).unwrap_or_default();
        docs.push(Document { id: id.to_string(), title, abstract_text, gold_label });
    }
    Dataset::new(name, docs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_total: usize,
    pub n_relevant: usize,
    pub vocab_size: usize,
    pub separation: f64,
    pub rng_seed: u64,
}

/// Two-topic multinomial mixture. Every document draws tokens from a Zipfian
/// background topic; relevant documents replace each token with a draw from
/// a signal topic with probability `separation`.
pub fn generate_synthetic(spec: SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec { n_total, n_relevant, vocab_size, separation, rng_seed } = spec;
    if n_relevant == 0 || n_relevant >= n_total {
        return Err(Error::Argument(format!(
            "need 0 < n_relevant < n_total, got {n_relevant} and {n_total}"
        )));
    }
    if vocab_size < 10 {
        return Err(Error::Argument(format!("vocab_size must be >= 10, got {vocab_size}")));
    }
    if !(0.0..=1.0).contains(&separation) {
        return Err(Error::Argument(format!("separation must lie in [0, 1], got {separation}")));
    }
    let mut rng = rng::stream(rng_seed, "synthetic", 0);

    let terms: Vec<String> = (0..vocab_size).map(|i| format!("term{i:05}")).collect();
    let mut background_order: Vec<usize> = (0..vocab_size).collect();
    background_order.shuffle(&mut rng);
    let mut background_weights = vec![0.0; vocab_size];
    for (rank, &t) in background_order.iter().enumerate() {
        background_weights[t] = 1.0 / (rank as f64 + 1.0);
    }
    let background = WeightedIndex::new(&background_weights).expect("positive weights");

    let n_signal = (vocab_size / 10).max(5);
    let mut signal_terms: Vec<usize> = (0..vocab_size).collect();
    signal_terms.shuffle(&mut rng);
    signal_terms.truncate(n_signal);
    let signal_weights: Vec<f64> = (0..n_signal).map(|r| 1.0 / (r as f64 + 1.0).sqrt()).collect();
    let signal = WeightedIndex::new(&signal_weights).expect("positive weights");

    let mut is_relevant = vec![false; n_total];
    for slot in is_relevant.iter_mut().take(n_relevant) {
        *slot = true;
    }
    is_relevant.shuffle(&mut rng);

    let mut docs = Vec::with_capacity(n_total);
    for (i, &relevant) in is_relevant.iter().enumerate() {
        let len = rng.gen_range(30..=90);
        let tokens: Vec<&str> = (0..len)
            .map(|_| {
                let t = if relevant && rng.gen::<f64>() < separation {
                    signal_terms[signal.sample(&mut rng)]
                } else {
                    background.sample(&mut rng)
                };
                terms[t].as_str()
            })
            .collect();
        let split = len.min(10);
        docs.push(Document {
            id: format!("syn{i:06}"),
            title: tokens[..split].join(" "),
            abstract_text: tokens[split..].join(" "),
            gold_label: if relevant { Label::Relevant } else { Label::Irrelevant },
        });
    }
    Dataset::new(
        format!("synthetic_{n_total}_{n_relevant}_{vocab_size}_{separation}_{rng_seed}"),
        docs,
    )
}

pub const SEED_RELEVANT: usize = 5;
pub const SEED_IRRELEVANT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSet {
    pub relevant_ids: Vec<String>,
    pub irrelevant_ids: Vec<String>,
    pub seed_index: usize,
}

impl SeedSet {
    /// Resolves ids to indices, checking membership and gold labels.
    pub fn resolve(&self, dataset: &Dataset) -> Result<(Vec<DocIdx>, Vec<DocIdx>)> {
        let lookup = |ids: &[String], want: Label| -> Result<Vec<DocIdx>> {
            ids.iter()
                .map(|id| {
                    let idx = dataset.index_of(id).ok_or_else(|| {
                        Error::Validation(format!("seed document `{id}` is not in the dataset"))
                    })?;
                    if dataset.gold(idx) != want {
                        return Err(Error::Validation(format!(
                            "seed document `{id}` is not gold {want:?}"
                        )));
                    }
                    Ok(idx)
                })
                .collect()
        };
        let pos = lookup(&self.relevant_ids, Label::Relevant)?;
        let neg = lookup(&self.irrelevant_ids, Label::Irrelevant)?;
        let distinct: HashSet<DocIdx> = pos.iter().chain(&neg).copied().collect();
        if distinct.len() != pos.len() + neg.len() {
            return Err(Error::Validation("seed set repeats a document".into()));
        }
        Ok((pos, neg))
    }

    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.relevant_ids.iter().chain(&self.irrelevant_ids)
    }
}

/// Seed set `i` depends only on `(dataset, rng_seed, i)`, so every method run
/// with the same master seed starts from the same documents.
pub fn draw_seed_set(dataset: &Dataset, rng_seed: u64, seed_index: usize) -> Result<SeedSet> {
    if dataset.n_relevant() < SEED_RELEVANT || dataset.n_irrelevant() < SEED_IRRELEVANT {
        return Err(Error::Validation(format!(
            "seed sets need {SEED_RELEVANT} relevant and {SEED_IRRELEVANT} irrelevant documents, \
             dataset `{}` has {} and {}",
            dataset.name(),
            dataset.n_relevant(),
            dataset.n_irrelevant()
        )));
    }
    let mut rng = rng::stream(rng_seed, "seed_set", seed_index as u64);
    let rel = dataset.relevant_indices();
    let irr = dataset.irrelevant_indices();
    let pick = |pool: &[DocIdx], k: usize, rng: &mut rng::Rng| -> Vec<String> {
        pool.choose_multiple(rng, k).map(|&i| dataset.document(i).id.clone()).collect()
    };
    let relevant_ids = pick(&rel, SEED_RELEVANT, &mut rng);
    let irrelevant_ids = pick(&irr, SEED_IRRELEVANT, &mut rng);
    Ok(SeedSet { relevant_ids, irrelevant_ids, seed_index })
}

pub fn draw_seed_sets(dataset: &Dataset, count: usize, rng_seed: u64) -> Result<Vec<SeedSet>> {
    (0..count).map(|i| draw_seed_set(dataset, rng_seed, i)).collect()
}
