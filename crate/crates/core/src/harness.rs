//! Simulation runs, metrics, aggregation and result files.
//!
//! A run screens a dataset to exhaustion with the gold labels as reviewer,
//! evaluating every configured stopping rule at fixed checkpoints and
//! recording where each one first fired. Metrics are computed afterwards from
//! the trace, so a rule that fires early can still be scored.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autotar::{AutoTar, Selection};
use crate::corpus::{self, Dataset, DatasetFormat, DocIdx, Label, SeedSet, SyntheticSpec};
use crate::criteria::{self, Checkpoint, CmhHybrid, HybridPhase, Latch, Mode, Rule, StopAfterK, StoppingDecision};
use crate::ensemble::{CaptureFrequencies, Committee};
use crate::error::{Error, Result};
use crate::estimators::{self, Estimate};
use crate::features::{FeatureVector, Vocabulary};
use crate::learners::LearnerKind;
use crate::rng;

// ---------------------------------------------------------------------------
// Configuration

fn default_targets() -> Vec<f64> {
    vec![0.7, 0.8, 0.9, 0.95, 1.0]
}
fn default_hybrid_targets() -> Vec<f64> {
    vec![0.95]
}
fn default_stop_after_k() -> usize {
    200
}
fn default_ten() -> usize {
    10
}
fn default_alpha() -> f64 {
    criteria::DEFAULT_ALPHA
}
fn default_reference() -> f64 {
    0.95
}
fn default_seed_sets() -> usize {
    5
}
fn default_methods() -> Vec<String> {
    vec!["ensemble".into(), "autotar".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriteriaSettings {
    #[serde(default = "default_targets")]
    pub targets: Vec<f64>,
    #[serde(default = "default_stop_after_k")]
    pub stop_after_k: usize,
    #[serde(default = "default_ten")]
    pub budget_k: usize,
    #[serde(default = "default_ten")]
    pub target_k: usize,
    #[serde(default = "default_alpha")]
    pub cmh_alpha: f64,
    #[serde(default = "default_hybrid_targets")]
    pub hybrid_targets: Vec<f64>,
    /// Recall target used to score rules that have none of their own.
    #[serde(default = "default_reference")]
    pub reference_target: f64,
    /// Restricts evaluation to these rule names when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<Vec<String>>,
}

impl Default for CriteriaSettings {
    fn default() -> Self {
        CriteriaSettings {
            targets: default_targets(),
            stop_after_k: default_stop_after_k(),
            budget_k: 10,
            target_k: 10,
            cmh_alpha: default_alpha(),
            hybrid_targets: default_hybrid_targets(),
            reference_target: default_reference(),
            rules: None,
        }
    }
}

impl CriteriaSettings {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |t: f64| t > 0.0 && t <= 1.0;
        if self.targets.iter().chain(&self.hybrid_targets).chain([&self.reference_target]).any(|&t| !in_unit(t)) {
            return Err(Error::Config("recall targets must lie in (0, 1]".into()));
        }
        if self.stop_after_k == 0 || self.budget_k == 0 || self.target_k == 0 {
            return Err(Error::Config("k parameters must be >= 1".into()));
        }
        if !(self.cmh_alpha > 0.0 && self.cmh_alpha < 1.0) {
            return Err(Error::Config("cmh_alpha must lie in (0, 1)".into()));
        }
        if let Some(rules) = &self.rules {
            for r in rules {
                r.parse::<Rule>()?;
            }
        }
        Ok(())
    }

    fn allows(&self, rule: Rule) -> bool {
        self.rules.as_ref().map_or(true, |rs| rs.iter().any(|r| r == rule.name()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticEntry {
    pub n_total: usize,
    pub n_relevant: usize,
    pub vocab_size: usize,
    pub separation: f64,
    pub rng_seed: u64,
}

impl From<&SyntheticEntry> for SyntheticSpec {
    fn from(s: &SyntheticEntry) -> Self {
        SyntheticSpec {
            n_total: s.n_total,
            n_relevant: s.n_relevant,
            vocab_size: s.vocab_size,
            separation: s.separation,
            rng_seed: s.rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticEntry>,
}

impl DatasetEntry {
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        let ds = match (&self.path, &self.synthetic) {
            (Some(p), None) => {
                let format: DatasetFormat = self.format.as_deref().unwrap_or("synergy_csv").parse()?;
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                corpus::load_dataset(&path, format)?
            }
            (None, Some(s)) => corpus::generate_synthetic(s.into())?,
            _ => return Err(Error::Config("a dataset needs exactly one of `path` or `synthetic`".into())),
        };
        Ok(match &self.name {
            Some(n) => Dataset::new(n.clone(), ds.documents().to_vec())?,
            None => ds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    #[serde(default = "default_seed_sets")]
    pub seed_sets: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub criteria: CriteriaSettings,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.criteria.validate()?;
        for m in &cfg.methods {
            m.parse::<MethodKind>()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> Result<String> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }

    /// One spec per method, with the hybrid rule expanded over its targets.
    pub fn method_specs(&self) -> Result<Vec<MethodSpec>> {
        let mut out = Vec::new();
        for m in &self.methods {
            match m.parse::<MethodKind>()? {
                MethodKind::CmhHybrid => out.extend(self.criteria.hybrid_targets.iter().map(|&t| MethodSpec::CmhHybrid { tau: t })),
                MethodKind::Target => out.push(MethodSpec::Target { k: self.criteria.target_k }),
                MethodKind::Ensemble => out.push(MethodSpec::Ensemble),
                MethodKind::AutoTar => out.push(MethodSpec::AutoTar),
                MethodKind::Random => out.push(MethodSpec::Random),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Ensemble,
    AutoTar,
    Random,
    Target,
    CmhHybrid,
}

impl FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ensemble" => MethodKind::Ensemble,
            "autotar" => MethodKind::AutoTar,
            "random" => MethodKind::Random,
            "target" => MethodKind::Target,
            "cmh_hybrid" => MethodKind::CmhHybrid,
            _ => return Err(Error::Config(format!("unknown method `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodSpec {
    Ensemble,
    AutoTar,
    Random,
    Target { k: usize },
    CmhHybrid { tau: f64 },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Ensemble => "ensemble",
            MethodSpec::AutoTar => "autotar",
            MethodSpec::Random => "random",
            MethodSpec::Target { .. } => "target",
            MethodSpec::CmhHybrid { .. } => "cmh_hybrid",
        }
    }

    /// Unique label used for directories and seeding.
    pub fn label(&self) -> String {
        match self {
            MethodSpec::CmhHybrid { tau } => format!("cmh_hybrid-{tau}"),
            m => m.name().to_string(),
        }
    }

    fn rules(&self, s: &CriteriaSettings) -> Vec<RuleKey> {
        let mut keys = Vec::new();
        let targeted = |rule: Rule, keys: &mut Vec<RuleKey>| {
            keys.extend(s.targets.iter().map(|&t| RuleKey { rule, target: Some(t) }));
        };
        let heuristics = [Rule::Knee, Rule::Budget, Rule::Half, Rule::Rule2399, Rule::StopAfterK];
        match self {
            MethodSpec::Ensemble => {
                for r in [
                    Rule::Chao1987(Mode::Conservative),
                    Rule::Chao1987(Mode::Optimistic),
                    Rule::Rivest(Mode::Conservative),
                    Rule::Rivest(Mode::Optimistic),
                ] {
                    targeted(r, &mut keys);
                }
                keys.extend(heuristics.map(|rule| RuleKey { rule, target: None }));
            }
            MethodSpec::AutoTar => {
                targeted(Rule::QuantOptimistic, &mut keys);
                targeted(Rule::CmhStandoff, &mut keys);
                keys.extend(heuristics.map(|rule| RuleKey { rule, target: None }));
            }
            MethodSpec::Random => keys.extend(heuristics.map(|rule| RuleKey { rule, target: None })),
            MethodSpec::Target { .. } => keys.push(RuleKey { rule: Rule::Target, target: None }),
            MethodSpec::CmhHybrid { tau } => keys.push(RuleKey { rule: Rule::CmhHybrid, target: Some(*tau) }),
        }
        keys.retain(|k| s.allows(k.rule));
        keys
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

// ---------------------------------------------------------------------------
// Traces

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleKey {
    pub rule: Rule,
    pub target: Option<f64>,
}

impl Serialize for Rule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Rule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Rule, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewRecord {
    pub review_count: usize,
    pub doc_id: String,
    pub label: Label,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub review_count: usize,
    pub rule: String,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Firing {
    pub rule: Rule,
    pub target: Option<f64>,
    pub review_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub dataset: String,
    pub method: String,
    pub label: String,
    pub seed_index: usize,
    pub rng_seed: u64,
    pub n_total: usize,
    pub n_relevant: usize,
    pub seed_relevant_ids: Vec<String>,
    pub seed_irrelevant_ids: Vec<String>,
    pub evaluated: Vec<RuleKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switched_to_random_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub meta: RunMeta,
    pub reviews: Vec<ReviewRecord>,
    /// `(review_count, found_relevant)` at every checkpoint.
    pub checkpoints: Vec<(usize, usize)>,
    pub estimates: Vec<EstimateRecord>,
    /// Committee capture frequencies per checkpoint.
    pub frequencies: Vec<(usize, Vec<u64>)>,
    pub firings: Vec<Firing>,
}

impl RunTrace {
    /// Relevant documents found after the first `review_count` reviews.
    pub fn found_at(&self, review_count: usize) -> usize {
        self.reviews.iter().take_while(|r| r.review_count <= review_count).filter(|r| r.label.is_relevant()).count()
    }

    pub fn total_reviews(&self) -> usize {
        self.reviews.last().map_or(0, |r| r.review_count)
    }

    pub fn firing(&self, key: &RuleKey) -> Option<&Firing> {
        self.firings.iter().find(|f| f.rule == key.rule && f.target == key.target)
    }

    /// Review count at which `found / n_relevant` first reaches `recall`.
    pub fn reviews_to_recall(&self, recall: f64) -> Option<usize> {
        let need = (recall * self.meta.n_relevant as f64 - 1e-9).ceil().max(0.0) as usize;
        let mut found = 0;
        if need == 0 {
            return Some(0);
        }
        for r in &self.reviews {
            found += usize::from(r.label.is_relevant());
            if found >= need {
                return Some(r.review_count);
            }
        }
        None
    }

    /// WSS at the first point the given recall is reached.
    pub fn wss_at_recall(&self, recall: f64) -> Option<f64> {
        let at = self.reviews_to_recall(recall)?;
        Some(metrics_at(self.meta.n_total, self.meta.n_relevant, at, self.found_at(at), recall).wss)
    }
}

// ---------------------------------------------------------------------------
// Run engine

struct Recorder<'a> {
    dataset: &'a Dataset,
    settings: &'a CriteriaSettings,
    trace: RunTrace,
    reviewed: usize,
    found: usize,
    checkpoint: Option<Checkpoint>,
    latches: Vec<(RuleKey, Latch)>,
    stop_after: StopAfterK,
}

#[derive(Default)]
struct CheckpointInputs {
    chao: Option<Estimate>,
    rivest: Option<Estimate>,
    frequencies: Option<CaptureFrequencies>,
    quant: Option<(Vec<f64>, Vec<f64>)>,
}

impl<'a> Recorder<'a> {
    fn new(dataset: &'a Dataset, settings: &'a CriteriaSettings, meta: RunMeta) -> Result<Self> {
        let latches = meta.evaluated.iter().map(|k| (*k, Latch::default())).collect();
        Ok(Recorder {
            dataset,
            settings,
            trace: RunTrace {
                meta,
                reviews: Vec::new(),
                checkpoints: Vec::new(),
                estimates: Vec::new(),
                frequencies: Vec::new(),
                firings: Vec::new(),
            },
            reviewed: 0,
            found: 0,
            checkpoint: None,
            latches,
            stop_after: StopAfterK::new(settings.stop_after_k)?,
        })
    }

    /// Logs one human decision; returns true when a checkpoint is due.
    fn review(&mut self, doc: DocIdx, label: Label, source: &str) -> bool {
        self.reviewed += 1;
        self.found += usize::from(label.is_relevant());
        self.trace.reviews.push(ReviewRecord {
            review_count: self.reviewed,
            doc_id: self.dataset.document(doc).id.clone(),
            label,
            source: source.to_string(),
        });
        if source != "seed" {
            let d = self.stop_after.observe(label.is_relevant(), self.reviewed);
            self.decide(Rule::StopAfterK, None, d);
        }
        self.reviewed % criteria::CHECKPOINT_EVERY == 0
    }

    fn seeds(&mut self, seeds: &SeedSet) -> Result<()> {
        let (pos, neg) = seeds.resolve(self.dataset)?;
        for d in pos {
            self.review(d, Label::Relevant, "seed");
        }
        for d in neg {
            self.review(d, Label::Irrelevant, "seed");
        }
        Ok(())
    }

    fn decide(&mut self, rule: Rule, target: Option<f64>, d: StoppingDecision) {
        if !d.triggered {
            return;
        }
        if let Some((_, latch)) = self.latches.iter_mut().find(|(k, _)| k.rule == rule && k.target == target) {
            if !latch.fired() {
                latch.update(d);
                let at = d.at_review_count.unwrap_or(self.reviewed);
                self.trace.firings.push(Firing { rule, target, review_count: at });
                // per-review rules get a snapshot of their own so every firing has a checkpoint row
                if at == self.reviewed && self.trace.checkpoints.last().map(|c| c.0) != Some(at) && at % criteria::CHECKPOINT_EVERY != 0 {
                    self.trace.checkpoints.push((at, self.found));
                }
            }
        }
    }

    fn fire(&mut self, rule: Rule, target: Option<f64>) {
        let at = self.reviewed;
        self.decide(rule, target, StoppingDecision::fire(at));
    }

    fn current(&self) -> &Checkpoint {
        self.checkpoint.as_ref().expect("checkpoint taken")
    }

    fn checkpoint(&mut self, inputs: CheckpointInputs) -> Result<()> {
        let (l, lp) = (self.reviewed, self.found);
        match &mut self.checkpoint {
            Some(cp) => cp.advance(l, lp),
            None => self.checkpoint = Some(Checkpoint::new(l, lp, Vec::new())?),
        }
        if self.trace.checkpoints.last().map(|c| c.0) != Some(l) {
            self.trace.checkpoints.push((l, lp));
        }
        if let Some(f) = &inputs.frequencies {
            self.trace.frequencies.push((l, f.counts().to_vec()));
        }
        for (name, est) in [("chao1987", &inputs.chao), ("rivest", &inputs.rivest)] {
            if let Some(e) = est {
                self.trace.estimates.push(EstimateRecord {
                    review_count: l,
                    rule: name.into(),
                    point: e.point,
                    ci_low: e.ci_low,
                    ci_high: e.ci_high,
                });
            }
        }
        if let Some((lab, unl)) = &inputs.quant {
            if let Ok(r) = estimators::quant_recall(lab, unl) {
                let point = if r > 0.0 { lp as f64 / r } else { f64::INFINITY };
                self.trace.estimates.push(EstimateRecord { review_count: l, rule: "quant".into(), point, ci_low: point, ci_high: point });
            }
        }

        let d_size = self.dataset.n_total();
        let keys: Vec<RuleKey> = self.latches.iter().filter(|(_, l)| !l.fired()).map(|(k, _)| *k).collect();
        for key in keys {
            let cp = self.current();
            let decision = match (key.rule, key.target) {
                (Rule::Chao1987(mode), Some(t)) => inputs.chao.map(|e| criteria::estimator_criterion(&e, lp, l, t, mode)),
                (Rule::Rivest(mode), Some(t)) => inputs.rivest.map(|e| criteria::estimator_criterion(&e, lp, l, t, mode)),
                (Rule::QuantOptimistic, Some(t)) => match &inputs.quant {
                    Some((lab, unl)) => criteria::quant_optimistic(lab, unl, l, t).ok(),
                    None => None,
                },
                (Rule::CmhStandoff, Some(t)) => Some(criteria::cmh_standoff(cp, d_size, t, self.settings.cmh_alpha)?),
                (Rule::Knee, None) => Some(criteria::knee_criterion(cp)),
                (Rule::Budget, None) => Some(criteria::budget_criterion(cp, d_size, self.settings.budget_k)),
                (Rule::Half, None) => Some(criteria::half_criterion(l, d_size)),
                (Rule::Rule2399, None) => Some(criteria::rule2399_criterion(l, lp)),
                _ => None,
            };
            if let Some(d) = decision {
                self.decide(key.rule, key.target, d);
            }
        }
        Ok(())
    }

    fn at_checkpoint(&self) -> bool {
        self.checkpoint.as_ref().map(|c| c.review_count) == Some(self.reviewed)
    }

    fn finish(mut self, final_inputs: impl FnOnce() -> CheckpointInputs) -> Result<RunTrace> {
        if !self.at_checkpoint() {
            self.checkpoint(final_inputs())?;
        }
        Ok(self.trace)
    }
}

fn committee_inputs(c: &Committee<'_>) -> CheckpointInputs {
    let freq = c.capture_frequencies();
    CheckpointInputs {
        chao: Some(estimators::chao1987_interval(&freq)),
        rivest: estimators::rivest_interval(&freq).ok(),
        frequencies: Some(freq),
        quant: None,
    }
}

fn autotar_inputs(a: &AutoTar<'_>) -> CheckpointInputs {
    CheckpointInputs { quant: a.score_split(), ..Default::default() }
}

/// Screens `dataset` to exhaustion with `method`, evaluating every rule the
/// method supports at checkpoints of ten reviews.
pub fn run_simulation(
    dataset: &Dataset,
    features: &[FeatureVector],
    method: MethodSpec,
    seed_set: &SeedSet,
    rng_seed: u64,
    settings: &CriteriaSettings,
) -> Result<RunTrace> {
    settings.validate()?;
    if features.len() != dataset.n_total() {
        return Err(Error::Validation("feature matrix does not match dataset".into()));
    }
    seed_set.resolve(dataset)?;
    if let MethodSpec::Target { k } = method {
        let available = dataset.n_relevant().saturating_sub(seed_set.relevant_ids.len());
        if available < k {
            return Err(Error::Config(format!("target method needs {k} relevant documents outside the seed set, found {available}")));
        }
    }
    if let MethodSpec::CmhHybrid { tau } = method {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config("hybrid target must lie in (0, 1]".into()));
        }
    }
    let meta = RunMeta {
        dataset: dataset.name().to_string(),
        method: method.name().to_string(),
        label: method.label(),
        seed_index: seed_set.seed_index,
        rng_seed,
        n_total: dataset.n_total(),
        n_relevant: dataset.n_relevant(),
        seed_relevant_ids: seed_set.relevant_ids.clone(),
        seed_irrelevant_ids: seed_set.irrelevant_ids.clone(),
        evaluated: method.rules(settings),
        switched_to_random_at: None,
    };
    let mut rec = Recorder::new(dataset, settings, meta)?;
    rec.seeds(seed_set)?;

    match method {
        MethodSpec::Ensemble => {
            let mut c = Committee::new(dataset, features, &LearnerKind::COMMITTEE, seed_set, rng_seed)?;
            rec.checkpoint(committee_inputs(&c))?;
            loop {
                let p = match c.propose_next_document() {
                    Ok(p) => p,
                    Err(Error::Exhausted) => break,
                    Err(e) => return Err(e),
                };
                let label = dataset.gold(p.doc);
                c.apply_label(p.member_id, p.doc, label)?;
                if rec.review(p.doc, label, &format!("m{}", p.member_id)) {
                    rec.checkpoint(committee_inputs(&c))?;
                }
            }
            rec.finish(|| committee_inputs(&c))
        }
        MethodSpec::AutoTar | MethodSpec::Random => {
            let (selection, source) = match method {
                MethodSpec::AutoTar => (Selection::Ranked, "autotar"),
                _ => (Selection::Random, "random"),
            };
            let mut a = AutoTar::new(dataset, features, seed_set, rng_seed, selection)?;
            rec.checkpoint(autotar_inputs(&a))?;
            loop {
                let doc = match a.propose() {
                    Ok(d) => d,
                    Err(Error::Exhausted) => break,
                    Err(e) => return Err(e),
                };
                let label = dataset.gold(doc);
                a.apply_label(doc, label)?;
                if rec.review(doc, label, source) {
                    rec.checkpoint(autotar_inputs(&a))?;
                }
            }
            rec.finish(|| autotar_inputs(&a))
        }
        MethodSpec::Target { k } => run_target(dataset, features, seed_set, rng_seed, k, rec),
        MethodSpec::CmhHybrid { tau } => {
            let mut a = AutoTar::new(dataset, features, seed_set, rng_seed, Selection::Ranked)?;
            let mut hybrid = CmhHybrid::new(tau);
            let step = |rec: &mut Recorder, a: &mut AutoTar, hybrid: &mut CmhHybrid| -> Result<()> {
                rec.checkpoint(CheckpointInputs::default())?;
                let before = hybrid.phase;
                match hybrid.check(rec.current(), dataset.n_total())? {
                    HybridPhase::Sampling { .. } if before == HybridPhase::Standoff => {
                        a.switch_to_random();
                        rec.trace.meta.switched_to_random_at = Some(rec.reviewed);
                    }
                    HybridPhase::Stopped { .. } if !matches!(before, HybridPhase::Stopped { .. }) => {
                        rec.fire(Rule::CmhHybrid, Some(tau));
                    }
                    _ => {}
                }
                Ok(())
            };
            step(&mut rec, &mut a, &mut hybrid)?;
            loop {
                let doc = match a.propose() {
                    Ok(d) => d,
                    Err(Error::Exhausted) => break,
                    Err(e) => return Err(e),
                };
                let label = dataset.gold(doc);
                a.apply_label(doc, label)?;
                let source = if a.selection() == Selection::Random { "random" } else { "autotar" };
                if rec.review(doc, label, source) {
                    step(&mut rec, &mut a, &mut hybrid)?;
                }
            }
            if !rec.at_checkpoint() {
                step(&mut rec, &mut a, &mut hybrid)?;
            }
            Ok(rec.trace)
        }
    }
}

/// Phase 1 of the target method: documents outside the seed set drawn
/// uniformly without replacement until `k` of them are relevant.
pub fn target_phase_one(dataset: &Dataset, seed_set: &SeedSet, rng_seed: u64, k: usize) -> Result<Vec<DocIdx>> {
    let (pos, neg) = seed_set.resolve(dataset)?;
    let seeds: HashSet<DocIdx> = pos.iter().chain(&neg).copied().collect();
    let mut pool: Vec<DocIdx> = (0..dataset.n_total()).filter(|d| !seeds.contains(d)).collect();
    let mut srng = rng::stream(rng_seed, "target_sample", 0);
    pool.shuffle(&mut srng);
    let mut found = 0;
    let mut out = Vec::new();
    for d in pool {
        if found == k {
            break;
        }
        found += usize::from(dataset.gold(d).is_relevant());
        out.push(d);
    }
    Ok(out)
}

/// Random sample until `k` relevant documents are found, then AutoTAR from
/// the seed set until every one of them is found again. Documents already
/// judged in the sample are not charged a second time.
fn run_target(
    dataset: &Dataset,
    features: &[FeatureVector],
    seed_set: &SeedSet,
    rng_seed: u64,
    k: usize,
    mut rec: Recorder<'_>,
) -> Result<RunTrace> {
    let mut reviewed: Vec<bool> = vec![false; dataset.n_total()];
    for d in rec.trace.meta.seed_relevant_ids.iter().chain(&rec.trace.meta.seed_irrelevant_ids) {
        reviewed[dataset.index_of(d).expect("seed resolved")] = true;
    }
    rec.checkpoint(CheckpointInputs::default())?;
    let mut targets = Vec::new();
    for d in target_phase_one(dataset, seed_set, rng_seed, k)? {
        let label = dataset.gold(d);
        reviewed[d] = true;
        if label.is_relevant() {
            targets.push(d);
        }
        if rec.review(d, label, "target_sample") {
            rec.checkpoint(CheckpointInputs::default())?;
        }
    }

    let mut a = AutoTar::new(dataset, features, seed_set, rng_seed, Selection::Ranked)?;
    let mut done = false;
    loop {
        let doc = match a.propose() {
            Ok(d) => d,
            Err(Error::Exhausted) => break,
            Err(e) => return Err(e),
        };
        let label = dataset.gold(doc);
        a.apply_label(doc, label)?;
        let due = if reviewed[doc] {
            false
        } else {
            reviewed[doc] = true;
            rec.review(doc, label, "autotar")
        };
        if !done && targets.iter().all(|&t| a.label(t).is_some()) {
            done = true;
            rec.fire(Rule::Target, None);
        }
        if due {
            rec.checkpoint(CheckpointInputs::default())?;
        }
    }
    rec.finish(CheckpointInputs::default)
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub effort: f64,
    pub recall: f64,
    pub recall_error: f64,
    pub wss: f64,
    pub loss_er: f64,
    pub target_met: bool,
}

pub fn metrics_at(n_total: usize, n_relevant: usize, reviewed: usize, found: usize, target: f64) -> Metrics {
    let d = n_total as f64;
    let recall = found as f64 / n_relevant as f64;
    let unreviewed = (n_total - reviewed) as f64;
    let effort_term = (100.0 / d).powi(2) * (reviewed as f64 / (found as f64 + 100.0)).powi(2);
    Metrics {
        effort: reviewed as f64 / d,
        recall,
        recall_error: (recall - target).abs() / target,
        wss: unreviewed / d - (1.0 - recall),
        loss_er: (1.0 - recall).powi(2) + effort_term,
        target_met: found as f64 >= target * n_relevant as f64 - 1e-9,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub method: String,
    pub seed_index: usize,
    pub rule: String,
    pub target: Option<f64>,
    pub review_count: usize,
    pub effort: f64,
    pub recall: f64,
    pub recall_error: f64,
    pub wss: f64,
    pub loss_er: f64,
    pub target_met: bool,
    pub triggered: bool,
}

/// Metrics at the rule's firing point, or at exhaustion when it never fired.
pub fn compute_metrics(trace: &RunTrace, key: &RuleKey, reference_target: f64) -> MetricRow {
    let firing = trace.firing(key);
    let at = firing.map_or(trace.total_reviews(), |f| f.review_count);
    let target = key.target.unwrap_or(reference_target);
    let m = metrics_at(trace.meta.n_total, trace.meta.n_relevant, at, trace.found_at(at), target);
    MetricRow {
        dataset: trace.meta.dataset.clone(),
        method: trace.meta.label.clone(),
        seed_index: trace.meta.seed_index,
        rule: key.rule.name().to_string(),
        target: key.target,
        review_count: at,
        effort: m.effort,
        recall: m.recall,
        recall_error: m.recall_error,
        wss: m.wss,
        loss_er: m.loss_er,
        target_met: m.target_met,
        triggered: firing.is_some(),
    }
}

pub fn trace_metrics(trace: &RunTrace, reference_target: f64) -> Vec<MetricRow> {
    trace.meta.evaluated.iter().map(|k| compute_metrics(trace, k, reference_target)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub rule: String,
    pub target: Option<f64>,
    pub runs: usize,
    pub effort_mean: f64,
    pub effort_sd: f64,
    pub recall_mean: f64,
    pub recall_sd: f64,
    pub wss_mean: f64,
    pub wss_sd: f64,
    pub loss_er_mean: f64,
    pub loss_er_sd: f64,
    pub recall_error_mean: f64,
    pub recall_error_sd: f64,
    pub target_met_pct: f64,
    pub triggered_pct: f64,
}

/// Mean and sample standard deviation; values are sorted first so the result
/// does not depend on row order.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn target_key(t: Option<f64>) -> i64 {
    t.map_or(-1, |t| (t * 1e6).round() as i64)
}

/// Groups by method, rule and target (sorted), one summary row per group.
pub fn aggregate_results(rows: &[MetricRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String, i64), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method.clone(), r.rule.clone(), target_key(r.target))).or_default().push(r);
    }
    groups
        .into_values()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let col = |f: fn(&MetricRow) -> f64| mean_sd(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            let pct = |f: fn(&MetricRow) -> bool| 100.0 * g.iter().filter(|r| f(r)).count() as f64 / g.len() as f64;
            let (effort_mean, effort_sd) = col(|r| r.effort);
            let (recall_mean, recall_sd) = col(|r| r.recall);
            let (wss_mean, wss_sd) = col(|r| r.wss);
            let (loss_er_mean, loss_er_sd) = col(|r| r.loss_er);
            let (recall_error_mean, recall_error_sd) = col(|r| r.recall_error);
            AggregateRow {
                method: g[0].method.clone(),
                rule: g[0].rule.clone(),
                target: g[0].target,
                runs: g.len(),
                effort_mean,
                effort_sd,
                recall_mean,
                recall_sd,
                wss_mean,
                wss_sd,
                loss_er_mean,
                loss_er_sd,
                recall_error_mean,
                recall_error_sd,
                target_met_pct: pct(|r| r.target_met),
                triggered_pct: pct(|r| r.triggered),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Files

fn fmt_target(t: Option<f64>) -> String {
    t.map_or_else(String::new, |t| t.to_string())
}

fn parse_target(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| Error::Parse { line: 0, message: format!("bad target `{s}`") })
    }
}

pub fn write_trace_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["review_count", "doc_id", "label", "source_id"])?;
    for r in &trace.reviews {
        w.write_record([r.review_count.to_string(), r.doc_id.clone(), r.label.to_string(), r.source.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `trace.csv`, `estimates.csv`, `firings.csv`, `curve.csv`,
/// `frequencies.csv` and `run.json` into `dir`.
pub fn write_run(trace: &RunTrace, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trace_csv(trace, &dir.join("trace.csv"))?;

    let mut w = csv::Writer::from_path(dir.join("estimates.csv"))?;
    w.write_record(["review_count", "rule", "point", "ci_low", "ci_high"])?;
    for e in &trace.estimates {
        w.write_record([e.review_count.to_string(), e.rule.clone(), e.point.to_string(), e.ci_low.to_string(), e.ci_high.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("firings.csv"))?;
    w.write_record(["rule", "target", "review_count"])?;
    for f in &trace.firings {
        w.write_record([f.rule.name().to_string(), fmt_target(f.target), f.review_count.to_string()])?;
    }
    w.flush()?;

    write_curve(trace, &dir.join("curve.csv"))?;

    let mut w = csv::Writer::from_path(dir.join("frequencies.csv"))?;
    let c = trace.frequencies.first().map_or(0, |f| f.1.len());
    let mut header = vec!["review_count".to_string()];
    header.extend((1..=c).map(|k| format!("f{k}")));
    header.push("n".into());
    w.write_record(&header)?;
    for (at, f) in &trace.frequencies {
        let mut row = vec![at.to_string()];
        row.extend(f.iter().map(u64::to_string));
        row.push(f.iter().sum::<u64>().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;

    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&trace.meta)? + "\n")?;
    Ok(())
}

/// Per-checkpoint recall curve: `review_count,found_relevant,recall,effort,wss`.
pub fn write_curve(trace: &RunTrace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["review_count", "found_relevant", "recall", "effort", "wss"])?;
    for &(l, lp) in &trace.checkpoints {
        let m = metrics_at(trace.meta.n_total, trace.meta.n_relevant, l, lp, 1.0);
        w.write_record([l.to_string(), lp.to_string(), m.recall.to_string(), m.effort.to_string(), m.wss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn records(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .enumerate()
        .map(|(i, rec)| rec.map(|rec| (i + 2, rec)).map_err(|e| Error::Parse { line: i + 2, message: e.to_string() }))
        .collect()
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse { line, message: format!("bad field {i}") })
}

/// Reads a run directory written by [`write_run`].
pub fn load_run(dir: &Path) -> Result<RunTrace> {
    let meta: RunMeta = serde_json::from_str(&fs::read_to_string(dir.join("run.json"))?)?;
    let mut reviews = Vec::new();
    for (line, rec) in records(&dir.join("trace.csv"))? {
        reviews.push(ReviewRecord {
            review_count: field(&rec, 0, line)?,
            doc_id: rec.get(1).unwrap_or_default().to_string(),
            label: Label::from_digit(rec.get(2).unwrap_or_default()).ok_or(Error::Parse { line, message: "bad label".into() })?,
            source: rec.get(3).unwrap_or_default().to_string(),
        });
    }
    let mut estimates = Vec::new();
    for (line, rec) in records(&dir.join("estimates.csv"))? {
        estimates.push(EstimateRecord {
            review_count: field(&rec, 0, line)?,
            rule: rec.get(1).unwrap_or_default().to_string(),
            point: field(&rec, 2, line)?,
            ci_low: field(&rec, 3, line)?,
            ci_high: field(&rec, 4, line)?,
        });
    }
    let mut firings = Vec::new();
    for (line, rec) in records(&dir.join("firings.csv"))? {
        firings.push(Firing {
            rule: rec.get(0).unwrap_or_default().parse()?,
            target: parse_target(rec.get(1).unwrap_or_default())?,
            review_count: field(&rec, 2, line)?,
        });
    }
    let mut checkpoints = Vec::new();
    for (line, rec) in records(&dir.join("curve.csv"))? {
        checkpoints.push((field(&rec, 0, line)?, field(&rec, 1, line)?));
    }
    let mut frequencies = Vec::new();
    for (line, rec) in records(&dir.join("frequencies.csv"))? {
        let at = field(&rec, 0, line)?;
        let f = (1..rec.len() - 1).map(|i| field(&rec, i, line)).collect::<Result<Vec<u64>>>()?;
        frequencies.push((at, f));
    }
    Ok(RunTrace { meta, reviews, checkpoints, estimates, frequencies, firings })
}

pub fn write_metric_rows(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "dataset", "method", "seed_index", "rule", "target", "review_count", "effort", "recall", "recall_error", "wss",
        "loss_er", "target_met", "triggered",
    ])?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.method.clone(),
            r.seed_index.to_string(),
            r.rule.clone(),
            fmt_target(r.target),
            r.review_count.to_string(),
            r.effort.to_string(),
            r.recall.to_string(),
            r.recall_error.to_string(),
            r.wss.to_string(),
            r.loss_er.to_string(),
            r.target_met.to_string(),
            r.triggered.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate(rows: &[AggregateRow], csv_path: &Path, json_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record([
        "method", "rule", "target", "runs", "effort_mean", "effort_sd", "recall_mean", "recall_sd", "wss_mean", "wss_sd",
        "loss_er_mean", "loss_er_sd", "recall_error_mean", "recall_error_sd", "target_met_pct", "triggered_pct",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.rule.clone(),
            fmt_target(r.target),
            r.runs.to_string(),
            r.effort_mean.to_string(),
            r.effort_sd.to_string(),
            r.recall_mean.to_string(),
            r.recall_sd.to_string(),
            r.wss_mean.to_string(),
            r.wss_sd.to_string(),
            r.loss_er_mean.to_string(),
            r.loss_er_sd.to_string(),
            r.recall_error_mean.to_string(),
            r.recall_error_sd.to_string(),
            r.target_met_pct.to_string(),
            r.triggered_pct.to_string(),
        ])?;
    }
    w.flush()?;
    fs::write(json_path, serde_json::to_string_pretty(rows)? + "\n")?;
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

pub fn run_dir(root: &Path, dataset: &str, label: &str, seed_index: usize) -> PathBuf {
    root.join("runs").join(sanitize(dataset)).join(sanitize(label)).join(format!("seed{seed_index:03}"))
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join("run.json").is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    if dir.is_dir() {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                find_runs(&p, out)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<MetricRow>,
    pub aggregate: Vec<AggregateRow>,
}

/// Scores every run under `input` and writes `runs.csv`, `aggregate.csv`,
/// `aggregate.json` and `curves/*.csv` into `out`.
pub fn report(input: &Path, out: &Path, reference_target: f64) -> Result<Report> {
    let mut dirs = Vec::new();
    find_runs(input, &mut dirs)?;
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Argument(format!("no runs found under {}", input.display())));
    }
    fs::create_dir_all(out.join("curves"))?;
    let mut rows = Vec::new();
    for d in &dirs {
        let t = load_run(d)?;
        let name = format!("{}__{}__seed{:03}.csv", sanitize(&t.meta.dataset), sanitize(&t.meta.label), t.meta.seed_index);
        write_curve(&t, &out.join("curves").join(name))?;
        rows.extend(trace_metrics(&t, reference_target));
    }
    rows.sort_by(|a, b| {
        (&a.dataset, &a.method, &a.rule, target_key(a.target), a.seed_index)
            .cmp(&(&b.dataset, &b.method, &b.rule, target_key(b.target), b.seed_index))
    });
    let aggregate = aggregate_results(&rows);
    write_metric_rows(&rows, &out.join("runs.csv"))?;
    write_aggregate(&aggregate, &out.join("aggregate.csv"), &out.join("aggregate.json"))?;
    Ok(Report { rows, aggregate })
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    config_hash: String,
    config: &'a Config,
    runs: Vec<String>,
}

/// Per-run generator seed; depends only on the master seed, dataset, method
/// and seed index.
pub fn run_seed(master: u64, dataset: &str, method: &MethodSpec, seed_index: usize) -> u64 {
    rng::derive_seed(master, &format!("run/{dataset}/{}", method.label()), seed_index as u64)
}

/// Featurizes a dataset with the default vectorizer.
pub fn featurize(dataset: &Dataset) -> Result<Vec<FeatureVector>> {
    Ok(Vocabulary::build(dataset)?.vectorize_all(dataset))
}

/// Runs datasets × methods × seed sets, then writes the report and a manifest.
/// `base` resolves relative dataset paths. Parallel and sequential execution
/// write identical files.
pub fn run_benchmark(config: &Config, base: &Path, out: &Path, parallel: bool) -> Result<Report> {
    if config.datasets.is_empty() {
        return Err(Error::Argument("benchmark needs at least one dataset".into()));
    }
    if config.methods.is_empty() || config.seed_sets == 0 {
        return Err(Error::Argument("benchmark needs at least one method and one seed set".into()));
    }
    config.criteria.validate()?;
    let methods = config.method_specs()?;
    let mut prepared = Vec::new();
    for entry in &config.datasets {
        let ds = entry.load(base)?;
        let fv = featurize(&ds)?;
        let seeds = corpus::draw_seed_sets(&ds, config.seed_sets, config.seed)?;
        prepared.push((ds, fv, seeds));
    }
    let names: HashSet<&str> = prepared.iter().map(|p| p.0.name()).collect();
    if names.len() != prepared.len() {
        return Err(Error::Config("dataset names must be unique".into()));
    }
    let mut jobs = Vec::new();
    for (di, (_, _, seeds)) in prepared.iter().enumerate() {
        for m in &methods {
            for s in 0..seeds.len() {
                jobs.push((di, *m, s));
            }
        }
    }
    let run_one = |&(di, m, s): &(usize, MethodSpec, usize)| -> Result<String> {
        let (ds, fv, seeds) = &prepared[di];
        let rng_seed = run_seed(config.seed, ds.name(), &m, s);
        let trace = run_simulation(ds, fv, m, &seeds[s], rng_seed, &config.criteria)?;
        let dir = run_dir(out, ds.name(), &m.label(), s);
        write_run(&trace, &dir)?;
        Ok(dir.strip_prefix(out).unwrap_or(&dir).display().to_string())
    };
    let written: Vec<String> = if parallel {
        jobs.par_iter().map(run_one).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run_one).collect::<Result<_>>()?
    };
    let report = report(&out.join("runs"), out, config.criteria.reference_target)?;
    let manifest = Manifest { config_hash: config.hash()?, config, runs: written };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{draw_seed_set, generate_synthetic};

    #[test]
    fn metric_examples() {
        let m = metrics_at(100, 10, 20, 10, 0.95);
        assert!((m.effort - 0.2).abs() < 1e-12);
        assert_eq!(m.recall, 1.0);
        assert!((m.wss - 0.8).abs() < 1e-12);

        let m = metrics_at(1000, 100, 200, 90, 0.95);
        assert!((m.loss_er - (0.01 + 0.01 * (200.0f64 / 190.0).powi(2))).abs() < 1e-12);
        assert!((m.loss_er - 0.02108).abs() < 1e-5);
        assert!(!m.target_met);

        let m = metrics_at(1000, 1000, 1000, 959, 0.95);
        assert!((m.recall_error - 0.009 / 0.95).abs() < 1e-12);
        assert!((m.recall_error - 0.00947).abs() < 1e-5);

        let m = metrics_at(500, 20, 500, 20, 1.0);
        assert_eq!((m.recall, m.wss, m.effort), (1.0, 0.0, 1.0));
    }

    #[test]
    fn aggregation_examples() {
        let row = |recall: f64| MetricRow {
            dataset: "d".into(),
            method: "m".into(),
            seed_index: 0,
            rule: "r".into(),
            target: Some(0.95),
            review_count: 10,
            effort: 0.5,
            recall,
            recall_error: 0.0,
            wss: 0.1,
            loss_er: 0.0,
            target_met: recall >= 0.95,
            triggered: true,
        };
        let a = aggregate_results(&[row(0.9)]);
        assert_eq!(a[0].recall_sd, 0.0);
        let a = aggregate_results(&[row(0.9), row(1.0)]);
        assert!((a[0].recall_mean - 0.95).abs() < 1e-12);
        assert!((a[0].recall_sd - 0.070710678).abs() < 1e-8);
        assert_eq!(a[0].target_met_pct, 50.0);
        let b = aggregate_results(&[row(1.0), row(0.9)]);
        assert_eq!(a, b);
        assert!(aggregate_results(&[]).is_empty());
    }

    #[test]
    fn config_parsing() {
        let cfg = Config::from_toml(
            r#"
            seed = 7
            methods = ["ensemble", "cmh_hybrid"]
            [criteria]
            hybrid_targets = [0.9, 0.95]
            [[datasets]]
            synthetic = { n_total = 100, n_relevant = 10, vocab_size = 50, separation = 1.0, rng_seed = 1 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed_sets, 5);
        assert_eq!(cfg.method_specs().unwrap().len(), 3);
        assert_eq!(cfg.hash().unwrap().len(), 64);
        assert!(Config::from_toml("seed = 1\nmethods = [\"nope\"]").is_err());
        assert!(Config::from_toml("seed = 1\nbogus = 3").is_err());
        assert!(Config::from_toml("seed = 1\n[criteria]\ntargets = [1.5]").is_err());
    }

    fn small() -> (Dataset, Vec<FeatureVector>) {
        let ds = generate_synthetic(SyntheticSpec { n_total: 150, n_relevant: 20, vocab_size: 80, separation: 0.8, rng_seed: 4 }).unwrap();
        let fv = featurize(&ds).unwrap();
        (ds, fv)
    }

    #[test]
    fn every_method_runs_to_exhaustion() {
        let (ds, fv) = small();
        let seeds = draw_seed_set(&ds, 1, 0).unwrap();
        let settings = CriteriaSettings::default();
        for m in [
            MethodSpec::Ensemble,
            MethodSpec::AutoTar,
            MethodSpec::Random,
            MethodSpec::Target { k: 10 },
            MethodSpec::CmhHybrid { tau: 0.95 },
        ] {
            let t = run_simulation(&ds, &fv, m, &seeds, 3, &settings).unwrap();
            assert_eq!(t.total_reviews(), ds.n_total(), "{m}");
            assert!(t.reviews.windows(2).all(|w| w[0].review_count + 1 == w[1].review_count));
            let ids: HashSet<&str> = t.reviews.iter().map(|r| r.doc_id.as_str()).collect();
            assert_eq!(ids.len(), ds.n_total());
            for f in &t.firings {
                assert!(t.checkpoints.iter().any(|c| c.0 == f.review_count), "{m} {f:?}");
            }
            assert!(t.checkpoints.windows(2).all(|w| w[0].0 < w[1].0));
            assert_eq!(t.checkpoints.last().unwrap().0, ds.n_total());
            for row in trace_metrics(&t, 0.95) {
                assert!((0.0..=1.0).contains(&row.effort) && (0.0..=1.0).contains(&row.recall));
                assert!((row.wss + (1.0 - row.recall) - (1.0 - row.effort)).abs() < 1e-12);
                if !row.triggered {
                    assert_eq!((row.recall, row.wss, row.effort), (1.0, 0.0, 1.0));
                }
            }
        }
    }

    #[test]
    fn target_method_needs_enough_relevant() {
        let (ds, fv) = small();
        let seeds = draw_seed_set(&ds, 1, 0).unwrap();
        let r = run_simulation(&ds, &fv, MethodSpec::Target { k: 16 }, &seeds, 3, &CriteriaSettings::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn run_files_round_trip() {
        let (ds, fv) = small();
        let seeds = draw_seed_set(&ds, 1, 0).unwrap();
        let t = run_simulation(&ds, &fv, MethodSpec::Ensemble, &seeds, 3, &CriteriaSettings::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run(&t, dir.path()).unwrap();
        let back = load_run(dir.path()).unwrap();
        assert_eq!(back.meta, t.meta);
        assert_eq!(back.reviews, t.reviews);
        assert_eq!(back.firings, t.firings);
        assert_eq!(back.checkpoints, t.checkpoints);
        assert_eq!(back.frequencies, t.frequencies);
        assert_eq!(back.estimates.len(), t.estimates.len());
    }
}
