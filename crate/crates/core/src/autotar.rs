//! Single-learner continuous active learning in the AutoTAR style, plus
//! uniform random selection over the same state.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng as _;

use crate::corpus::{Dataset, DocIdx, Label, SeedSet};
use crate::ensemble::grow_batch;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::learners::{self, LearnerKind, TrainingSet};
use crate::rng::{self, Rng};

/// Unlabeled documents drawn as temporary negatives on every retrain.
pub const ASSUMED_IRRELEVANT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Ranked,
    Random,
}

pub struct AutoTar<'a> {
    dataset: &'a Dataset,
    features: &'a [FeatureVector],
    labels: Vec<Option<Label>>,
    unlabeled: Vec<DocIdx>,
    slot: Vec<usize>,
    n_pos: usize,
    review_count: usize,
    batch_size: usize,
    pending: VecDeque<DocIdx>,
    selection: Selection,
    last_scores: Option<Vec<f64>>,
    rng: Rng,
}

impl<'a> AutoTar<'a> {
    /// Starts from the same 5+5 seed set the committee uses; seeds count as reviewed.
    pub fn new(
        dataset: &'a Dataset,
        features: &'a [FeatureVector],
        seed_set: &SeedSet,
        rng_seed: u64,
        selection: Selection,
    ) -> Result<AutoTar<'a>> {
        if features.len() != dataset.n_total() {
            return Err(Error::Validation("feature matrix does not match dataset".into()));
        }
        let (pos, neg) = seed_set.resolve(dataset)?;
        let n = dataset.n_total();
        let mut s = AutoTar {
            dataset,
            features,
            labels: vec![None; n],
            unlabeled: (0..n).collect(),
            slot: (0..n).collect(),
            n_pos: 0,
            review_count: 0,
            batch_size: 1,
            pending: VecDeque::new(),
            selection,
            last_scores: None,
            rng: rng::stream(rng_seed, "autotar", 0),
        };
        for d in pos {
            s.record(d, Label::Relevant);
        }
        for d in neg {
            s.record(d, Label::Irrelevant);
        }
        Ok(s)
    }

    fn record(&mut self, doc: DocIdx, label: Label) {
        self.labels[doc] = Some(label);
        let at = self.slot[doc];
        let last = *self.unlabeled.last().expect("unlabeled non-empty");
        self.unlabeled.swap_remove(at);
        if last != doc {
            self.slot[last] = at;
        }
        self.n_pos += usize::from(label.is_relevant());
        self.review_count += 1;
    }

    pub fn review_count(&self) -> usize {
        self.review_count
    }

    pub fn n_found(&self) -> usize {
        self.n_pos
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn selection(&self) -> Selection {
        self.selection
    }

    pub fn label(&self, doc: DocIdx) -> Option<Label> {
        self.labels[doc]
    }

    pub fn labeled_pos(&self) -> Vec<DocIdx> {
        self.with_label(Label::Relevant)
    }

    pub fn labeled_neg(&self) -> Vec<DocIdx> {
        self.with_label(Label::Irrelevant)
    }

    fn with_label(&self, l: Label) -> Vec<DocIdx> {
        (0..self.labels.len()).filter(|&d| self.labels[d] == Some(l)).collect()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    /// Switches to uniform sampling over the remaining unlabeled documents.
    pub fn switch_to_random(&mut self) {
        self.selection = Selection::Random;
        self.pending.clear();
    }

    /// Trains on the labeled set plus up to 100 unlabeled documents taken as
    /// irrelevant, and returns the top `b` unlabeled documents. `b` grows for
    /// the next call.
    pub fn next_batch(&mut self) -> Result<Vec<DocIdx>> {
        if self.unlabeled.is_empty() {
            return Err(Error::Exhausted);
        }
        let features = self.features;
        let mut training = TrainingSet::default();
        for (d, l) in self.labels.iter().enumerate() {
            match l {
                Some(Label::Relevant) => training.positives.push(&features[d]),
                Some(Label::Irrelevant) => training.negatives.push(&features[d]),
                None => {}
            }
        }
        let m = ASSUMED_IRRELEVANT.min(self.unlabeled.len());
        let mut sample: Vec<DocIdx> =
            index::sample(&mut self.rng, self.unlabeled.len(), m).into_iter().map(|i| self.unlabeled[i]).collect();
        sample.sort_unstable();
        training.negatives.extend(sample.iter().map(|&d| &features[d]));
        let model = learners::train_learner(LearnerKind::LogisticRegression, &training, &mut self.rng)?;
        let scores: Vec<f64> = (0..features.len()).map(|d| model.score(d, &features[d])).collect();
        let candidates: Vec<learners::RelevanceScore> =
            self.unlabeled.iter().map(|&d| learners::RelevanceScore { doc: d, score: scores[d] }).collect();
        let dataset = self.dataset;
        let ranked = learners::rank(candidates, |d| dataset.id_rank(d));
        let batch: Vec<DocIdx> = ranked.iter().take(self.batch_size).map(|s| s.doc).collect();
        self.last_scores = Some(scores);
        self.batch_size = grow_batch(self.batch_size);
        Ok(batch)
    }

    pub fn propose(&mut self) -> Result<DocIdx> {
        if self.unlabeled.is_empty() {
            return Err(Error::Exhausted);
        }
        match self.selection {
            Selection::Random => {
                if let Some(&d) = self.pending.front() {
                    return Ok(d);
                }
                let d = self.unlabeled[self.rng.gen_range(0..self.unlabeled.len())];
                self.pending.push_back(d);
                Ok(d)
            }
            Selection::Ranked => {
                if self.pending.is_empty() {
                    self.pending = self.next_batch()?.into();
                }
                Ok(self.pending[0])
            }
        }
    }

    pub fn apply_label(&mut self, doc: DocIdx, label: Label) -> Result<()> {
        if self.labels[doc].is_some() {
            return Err(Error::Contract(format!("document {doc} is already labeled")));
        }
        if self.pending.front() != Some(&doc) {
            return Err(Error::Contract(format!("document {doc} was not proposed")));
        }
        self.pending.pop_front();
        self.record(doc, label);
        Ok(())
    }

    /// Model scores of the labeled and unlabeled documents from the last
    /// retrain, for the score-sum recall estimate.
    pub fn score_split(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let scores = self.last_scores.as_ref()?;
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for (d, &s) in scores.iter().enumerate() {
            if self.labels[d].is_some() {
                labeled.push(s);
            } else {
                unlabeled.push(s);
            }
        }
        Some((labeled, unlabeled))
    }
}
