//! Committee continuous active learning.
//!
//! Every member keeps a private labeled/unlabeled split and its own model. A
//! randomly chosen member proposes the head of its pending batch; when that
//! document already carries a label from another member, the label is copied
//! over without asking the reviewer and another member is drawn. The number of
//! members holding each relevant document gives the capture frequencies.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng as _;

use crate::corpus::{Dataset, DocIdx, Label, SeedSet};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::learners::{self, LearnerKind, Model, TrainingSet};
use crate::rng::{self, Rng};

/// `f[k-1]` = relevant documents held by exactly `k` members.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureFrequencies {
    f: Vec<u64>,
    n: u64,
}

impl CaptureFrequencies {
    pub fn new(f: Vec<u64>) -> Result<Self> {
        if f.is_empty() {
            return Err(Error::Argument("need at least one frequency".into()));
        }
        let n = f.iter().sum();
        Ok(CaptureFrequencies { f, n })
    }

    /// Checks the stated `n` against the frequencies.
    pub fn with_n(f: Vec<u64>, n: u64) -> Result<Self> {
        let freq = Self::new(f)?;
        if freq.n != n {
            return Err(Error::Validation(format!("frequencies sum to {}, but n = {n}", freq.n)));
        }
        Ok(freq)
    }

    /// Builds frequencies from a capture matrix (one row per relevant document,
    /// one column per member).
    pub fn from_matrix(rows: &[Vec<bool>]) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if c == 0 || rows.iter().any(|r| r.len() != c) {
            return Err(Error::Argument("capture matrix must be rectangular with >= 1 column".into()));
        }
        let mut f = vec![0; c];
        for row in rows {
            let k = row.iter().filter(|&&b| b).count();
            if k == 0 {
                return Err(Error::Validation("matrix row with no capture".into()));
            }
            f[k - 1] += 1;
        }
        Self::new(f)
    }

    /// Frequency of documents seen by exactly `k` members, `k` in `1..=C`.
    pub fn get(&self, k: usize) -> u64 {
        if k == 0 || k > self.f.len() {
            0
        } else {
            self.f[k - 1]
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.f
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn committee_size(&self) -> usize {
        self.f.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mark {
    Unlabeled,
    Positive,
    Negative,
}

#[derive(Debug, Clone)]
pub struct MemberState {
    pub member_id: usize,
    pub kind: LearnerKind,
    marks: Vec<Mark>,
    n_unlabeled: usize,
    pending_batch: VecDeque<DocIdx>,
    batch_size: usize,
    retrains: usize,
    rng: Rng,
}

impl MemberState {
    pub fn labeled_pos(&self) -> Vec<DocIdx> {
        self.collect(Mark::Positive)
    }

    pub fn labeled_neg(&self) -> Vec<DocIdx> {
        self.collect(Mark::Negative)
    }

    pub fn unlabeled(&self) -> Vec<DocIdx> {
        self.collect(Mark::Unlabeled)
    }

    pub fn n_unlabeled(&self) -> usize {
        self.n_unlabeled
    }

    pub fn holds_positive(&self, doc: DocIdx) -> bool {
        self.marks[doc] == Mark::Positive
    }

    pub fn pending_batch(&self) -> &VecDeque<DocIdx> {
        &self.pending_batch
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn retrains(&self) -> usize {
        self.retrains
    }

    fn collect(&self, m: Mark) -> Vec<DocIdx> {
        self.marks.iter().enumerate().filter(|(_, &x)| x == m).map(|(i, _)| i).collect()
    }

    fn set(&mut self, doc: DocIdx, label: Label) {
        if self.marks[doc] == Mark::Unlabeled {
            self.n_unlabeled -= 1;
        }
        self.marks[doc] = if label.is_relevant() { Mark::Positive } else { Mark::Negative };
    }
}

/// AutoTAR-style batch growth: `b + ceil(b / 10)`.
pub fn grow_batch(b: usize) -> usize {
    b + b.div_ceil(10)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Proposal {
    pub member_id: usize,
    pub doc: DocIdx,
}

/// One labeled event as seen by a member: a human review or a transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureEvent {
    pub review_count: usize,
    pub member_id: usize,
    pub doc: DocIdx,
    pub label: Label,
    pub transferred: bool,
}

pub struct Committee<'a> {
    dataset: &'a Dataset,
    features: &'a [FeatureVector],
    members: Vec<MemberState>,
    global: Vec<Option<Label>>,
    n_global_pos: usize,
    n_global_labeled: usize,
    review_count: usize,
    outstanding: Option<Proposal>,
    events: Vec<CaptureEvent>,
    rng: Rng,
}

impl<'a> Committee<'a> {
    pub fn new(
        dataset: &'a Dataset,
        features: &'a [FeatureVector],
        kinds: &[LearnerKind],
        seed_set: &SeedSet,
        rng_seed: u64,
    ) -> Result<Committee<'a>> {
        if features.len() != dataset.n_total() {
            return Err(Error::Validation("feature matrix does not match dataset".into()));
        }
        let (pos, neg) = seed_set.resolve(dataset)?;
        if kinds.is_empty() || kinds.len() > pos.len() || kinds.len() > neg.len() {
            return Err(Error::Validation(format!(
                "committee of {} needs one relevant and one irrelevant seed per member",
                kinds.len()
            )));
        }
        let n = dataset.n_total();
        let mut committee = Committee {
            dataset,
            features,
            members: Vec::with_capacity(kinds.len()),
            global: vec![None; n],
            n_global_pos: 0,
            n_global_labeled: 0,
            review_count: 0,
            outstanding: None,
            events: Vec::new(),
            rng: rng::stream(rng_seed, "committee", 0),
        };
        for (&d, label) in pos.iter().map(|d| (d, Label::Relevant)).chain(neg.iter().map(|d| (d, Label::Irrelevant))) {
            committee.global[d] = Some(label);
            committee.n_global_labeled += 1;
            committee.n_global_pos += usize::from(label.is_relevant());
            committee.review_count += 1;
        }
        for (i, &kind) in kinds.iter().enumerate() {
            let mut m = MemberState {
                member_id: i,
                kind,
                marks: vec![Mark::Unlabeled; n],
                n_unlabeled: n,
                pending_batch: VecDeque::new(),
                batch_size: 1,
                retrains: 0,
                rng: rng::stream(rng_seed, "member", i as u64),
            };
            m.set(pos[i], Label::Relevant);
            m.set(neg[i], Label::Irrelevant);
            committee.events.push(CaptureEvent { review_count: 0, member_id: i, doc: pos[i], label: Label::Relevant, transferred: false });
            committee.events.push(CaptureEvent { review_count: 0, member_id: i, doc: neg[i], label: Label::Irrelevant, transferred: false });
            committee.members.push(m);
        }
        for i in 0..committee.members.len() {
            committee.train_and_fill(i)?;
        }
        Ok(committee)
    }

    pub fn members(&self) -> &[MemberState] {
        &self.members
    }

    pub fn review_count(&self) -> usize {
        self.review_count
    }

    pub fn n_found(&self) -> usize {
        self.n_global_pos
    }

    pub fn n_labeled(&self) -> usize {
        self.n_global_labeled
    }

    pub fn global_label(&self, doc: DocIdx) -> Option<Label> {
        self.global[doc]
    }

    pub fn global_pos(&self) -> Vec<DocIdx> {
        (0..self.global.len()).filter(|&d| self.global[d] == Some(Label::Relevant)).collect()
    }

    pub fn global_neg(&self) -> Vec<DocIdx> {
        (0..self.global.len()).filter(|&d| self.global[d] == Some(Label::Irrelevant)).collect()
    }

    pub fn events(&self) -> &[CaptureEvent] {
        &self.events
    }

    pub fn is_exhausted(&self) -> bool {
        self.n_global_labeled == self.global.len()
    }

    /// Retrains member `i` on its balanced labeled sets and refills its batch
    /// with the top of its ranking over its own unlabeled documents.
    fn train_and_fill(&mut self, i: usize) -> Result<()> {
        let features = self.features;
        let dataset = self.dataset;
        let member = &mut self.members[i];
        if member.retrains > 0 {
            member.batch_size = grow_batch(member.batch_size);
        }
        member.retrains += 1;
        let mut training = TrainingSet::default();
        let mut unlabeled = Vec::with_capacity(member.n_unlabeled);
        for (d, m) in member.marks.iter().enumerate() {
            match m {
                Mark::Positive => training.positives.push(&features[d]),
                Mark::Negative => training.negatives.push(&features[d]),
                Mark::Unlabeled => unlabeled.push((d, &features[d])),
            }
        }
        let model: Model = if member.kind == LearnerKind::RandomRanker {
            learners::train_learner(member.kind, &training, &mut member.rng)?
        } else {
            let balanced = learners::balance_dynamic_resample(&training, &mut member.rng)?;
            learners::train_learner(member.kind, &balanced, &mut member.rng)?
        };
        let ranked = learners::rank(learners::score_unlabeled(&model, &unlabeled), |d| dataset.id_rank(d));
        member.pending_batch = ranked.iter().take(member.batch_size).map(|s| s.doc).collect();
        Ok(())
    }

    /// Draws members until one offers a document nobody has labeled yet.
    pub fn propose_next_document(&mut self) -> Result<Proposal> {
        if let Some(p) = self.outstanding {
            return Ok(p);
        }
        loop {
            if self.is_exhausted() {
                return Err(Error::Exhausted);
            }
            let i = self.rng.gen_range(0..self.members.len());
            if self.members[i].n_unlabeled == 0 {
                continue;
            }
            if self.members[i].pending_batch.is_empty() {
                self.train_and_fill(i)?;
            }
            let Some(doc) = self.members[i].pending_batch.pop_front() else {
                continue;
            };
            match self.global[doc] {
                Some(label) => {
                    self.members[i].set(doc, label);
                    self.events.push(CaptureEvent {
                        review_count: self.review_count,
                        member_id: i,
                        doc,
                        label,
                        transferred: true,
                    });
                }
                None => {
                    let p = Proposal { member_id: i, doc };
                    self.outstanding = Some(p);
                    return Ok(p);
                }
            }
        }
    }

    /// Records the reviewer's decision on the outstanding proposal.
    pub fn apply_label(&mut self, member_id: usize, doc: DocIdx, label: Label) -> Result<()> {
        if self.global[doc].is_some() {
            return Err(Error::Contract(format!("document {doc} is already labeled")));
        }
        if self.outstanding != Some(Proposal { member_id, doc }) {
            return Err(Error::Contract(format!("document {doc} was not proposed by member {member_id}")));
        }
        self.outstanding = None;
        self.global[doc] = Some(label);
        self.n_global_labeled += 1;
        self.n_global_pos += usize::from(label.is_relevant());
        self.review_count += 1;
        self.members[member_id].set(doc, label);
        self.events.push(CaptureEvent { review_count: self.review_count, member_id, doc, label, transferred: false });
        if self.members[member_id].pending_batch.is_empty() && self.members[member_id].n_unlabeled > 0 {
            self.train_and_fill(member_id)?;
        }
        Ok(())
    }

    pub fn capture_frequencies(&self) -> CaptureFrequencies {
        let mut f = vec![0u64; self.members.len()];
        for d in 0..self.global.len() {
            if self.global[d] == Some(Label::Relevant) {
                let k = self.members.iter().filter(|m| m.holds_positive(d)).count();
                if k > 0 {
                    f[k - 1] += 1;
                }
            }
        }
        CaptureFrequencies { f, n: self.n_global_pos as u64 }
    }
}

/// Rebuilds capture frequencies from a capture log (reviews and transfers).
pub fn replay_capture_log(events: &[CaptureEvent], committee_size: usize, up_to_review: usize) -> Result<CaptureFrequencies> {
    use std::collections::BTreeMap;
    let mut held: BTreeMap<DocIdx, Vec<bool>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.review_count <= up_to_review) {
        if e.member_id >= committee_size {
            return Err(Error::Validation(format!("member {} outside committee of {committee_size}", e.member_id)));
        }
        if e.label.is_relevant() {
            held.entry(e.doc).or_insert_with(|| vec![false; committee_size])[e.member_id] = true;
        }
    }
    if held.is_empty() {
        return CaptureFrequencies::new(vec![0; committee_size]);
    }
    CaptureFrequencies::from_matrix(&held.into_values().collect::<Vec<_>>())
}

/// Capture log CSV: `review_count,member_id,doc_id,label,event`.
pub fn write_capture_log<W: Write>(dataset: &Dataset, events: &[CaptureEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["review_count", "member_id", "doc_id", "label", "event"])?;
    for e in events {
        w.write_record([
            e.review_count.to_string(),
            e.member_id.to_string(),
            dataset.document(e.doc).id.clone(),
            e.label.to_string(),
            if e.transferred { "transfer".into() } else { "review".to_string() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_capture_log<R: std::io::Read>(dataset: &Dataset, input: R) -> Result<Vec<CaptureEvent>> {
    let mut r = csv::Reader::from_reader(input);
    let mut events = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let parse_err = |m: &str| Error::Parse { line, message: m.to_string() };
        if rec.len() != 5 {
            return Err(parse_err("expected 5 fields"));
        }
        let doc = dataset.index_of(&rec[2]).ok_or_else(|| parse_err("unknown doc_id"))?;
        events.push(CaptureEvent {
            review_count: rec[0].parse().map_err(|_| parse_err("bad review_count"))?,
            member_id: rec[1].parse().map_err(|_| parse_err("bad member_id"))?,
            doc,
            label: Label::from_digit(&rec[3]).ok_or_else(|| parse_err("bad label"))?,
            transferred: match &rec[4] {
                "transfer" => true,
                "review" => false,
                _ => return Err(parse_err("event must be review or transfer")),
            },
        });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{draw_seed_set, generate_synthetic, SyntheticSpec};
    use crate::features::Vocabulary;

    #[test]
    fn frequencies_from_matrix() {
        let f = CaptureFrequencies::from_matrix(&[vec![true, true], vec![true, false], vec![false, true]]).unwrap();
        assert_eq!(f.counts(), &[2, 1]);
        assert_eq!(f.n(), 3);
    }

    #[test]
    fn with_n_checks_sum() {
        assert!(CaptureFrequencies::with_n(vec![40, 33, 17, 2, 0], 92).is_ok());
        assert!(CaptureFrequencies::with_n(vec![40, 33, 17, 2, 0], 91).is_err());
    }

    #[test]
    fn batch_growth() {
        assert_eq!(grow_batch(1), 2);
        assert_eq!(grow_batch(10), 11);
        assert_eq!(grow_batch(11), 13);
    }

    fn fixture() -> (Dataset, Vec<FeatureVector>) {
        let ds = generate_synthetic(SyntheticSpec { n_total: 300, n_relevant: 30, vocab_size: 200, separation: 0.7, rng_seed: 5 }).unwrap();
        let fv = Vocabulary::build(&ds).unwrap().vectorize_all(&ds);
        (ds, fv)
    }

    #[test]
    fn initial_state() {
        let (ds, fv) = fixture();
        let seeds = draw_seed_set(&ds, 1, 0).unwrap();
        let c = Committee::new(&ds, &fv, &LearnerKind::COMMITTEE, &seeds, 9).unwrap();
        let f = c.capture_frequencies();
        assert_eq!(f.counts(), &[5, 0, 0, 0, 0]);
        assert_eq!(f.n(), 5);
        assert_eq!(c.global_pos().len(), 5);
        assert_eq!(c.global_neg().len(), 5);
        assert_eq!(c.review_count(), 10);
        for m in c.members() {
            assert_eq!(m.batch_size(), 1);
            assert_eq!(m.pending_batch().len(), 1);
        }
        let again = Committee::new(&ds, &fv, &LearnerKind::COMMITTEE, &seeds, 9).unwrap();
        let batches = |c: &Committee| c.members().iter().map(|m| m.pending_batch().clone()).collect::<Vec<_>>();
        assert_eq!(batches(&c), batches(&again));
    }

    #[test]
    fn seed_mismatch_rejected() {
        let (ds, fv) = fixture();
        let mut seeds = draw_seed_set(&ds, 1, 0).unwrap();
        seeds.relevant_ids[0] = seeds.irrelevant_ids[0].clone();
        assert!(Committee::new(&ds, &fv, &LearnerKind::COMMITTEE, &seeds, 9).is_err());
    }

    #[test]
    fn reviews_and_transfers_keep_invariants() {
        let (ds, fv) = fixture();
        let seeds = draw_seed_set(&ds, 1, 1).unwrap();
        let mut c = Committee::new(&ds, &fv, &LearnerKind::COMMITTEE, &seeds, 3).unwrap();
        let mut last_reviews = c.review_count();
        let mut transfers_seen = 0;
        loop {
            let before_events = c.events().len();
            let p = match c.propose_next_document() {
                Ok(p) => p,
                Err(Error::Exhausted) => break,
                Err(e) => panic!("{e}"),
            };
            transfers_seen += c.events()[before_events..].iter().filter(|e| e.transferred).count();
            assert_eq!(c.review_count(), last_reviews, "transfers must not consume reviews");
            let n_before = c.capture_frequencies().n();
            let label = ds.gold(p.doc);
            c.apply_label(p.member_id, p.doc, label).unwrap();
            assert_eq!(c.review_count(), last_reviews + 1);
            last_reviews = c.review_count();
            let f = c.capture_frequencies();
            assert_eq!(f.counts().iter().sum::<u64>(), f.n());
            assert_eq!(f.n(), n_before + u64::from(label.is_relevant()));
            // union of member positives equals the global positive set
            let mut union: Vec<DocIdx> = c.members().iter().flat_map(|m| m.labeled_pos()).collect();
            union.sort_unstable();
            union.dedup();
            assert_eq!(union, c.global_pos());
            for m in c.members() {
                assert_eq!(m.labeled_pos().len() + m.labeled_neg().len() + m.unlabeled().len(), ds.n_total());
                assert!(m.pending_batch().iter().all(|d| m.unlabeled().contains(d)));
            }
            if c.review_count() > 120 {
                break;
            }
        }
        assert!(transfers_seen > 0);
        let replay = replay_capture_log(c.events(), 5, usize::MAX).unwrap();
        assert_eq!(replay, c.capture_frequencies());
    }

    #[test]
    fn double_label_is_contract_error() {
        let (ds, fv) = fixture();
        let seeds = draw_seed_set(&ds, 1, 0).unwrap();
        let mut c = Committee::new(&ds, &fv, &LearnerKind::COMMITTEE, &seeds, 1).unwrap();
        let p = c.propose_next_document().unwrap();
        c.apply_label(p.member_id, p.doc, ds.gold(p.doc)).unwrap();
        assert!(matches!(c.apply_label(p.member_id, p.doc, ds.gold(p.doc)), Err(Error::Contract(_))));
    }

    #[test]
    fn single_member_returns_batch_head() {
        let (ds, fv) = fixture();
        let seeds = draw_seed_set(&ds, 1, 0).unwrap();
        let mut c = Committee::new(&ds, &fv, &[LearnerKind::LogisticRegression], &seeds, 1).unwrap();
        let head = *c.members()[0].pending_batch().front().unwrap();
        let p = c.propose_next_document().unwrap();
        assert_eq!((p.member_id, p.doc), (0, head));
    }

    #[test]
    fn runs_to_exhaustion() {
        let ds = generate_synthetic(SyntheticSpec { n_total: 60, n_relevant: 12, vocab_size: 40, separation: 0.6, rng_seed: 2 }).unwrap();
        let fv = Vocabulary::build(&ds).unwrap().vectorize_all(&ds);
        let seeds = draw_seed_set(&ds, 1, 0).unwrap();
        let mut c = Committee::new(&ds, &fv, &LearnerKind::COMMITTEE, &seeds, 4).unwrap();
        while let Ok(p) = c.propose_next_document() {
            c.apply_label(p.member_id, p.doc, ds.gold(p.doc)).unwrap();
        }
        assert!(c.is_exhausted());
        assert_eq!(c.review_count(), 60);
        assert!(matches!(c.propose_next_document(), Err(Error::Exhausted)));
        assert_eq!(c.capture_frequencies().n(), 12);
    }
}
