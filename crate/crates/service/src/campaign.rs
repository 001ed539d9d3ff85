//! In-memory campaign state and its operations.
//!
//! The durable state is the config, the manifest and three append-only
//! logs (batches, annotations, exclusions); per-image counts, reservations
//! and annotator ledgers are derived from them. Every time-dependent
//! operation takes `now_ms` so tests can drive a simulated clock.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use softlabel_core::export::{export_rows, render, ExportFilter, ExportFormat};
use softlabel_core::gatekeeper::{score_iteration, update_status, AnnotatorLedger, AnnotatorStatus, Iteration};
use softlabel_core::planner::{estimate_workload, WorkloadInputs};
use softlabel_core::{AnnotationRecord, Method};

use crate::error::{Result, ServiceError};
use crate::model::{validate_manifest, BatchItem, CampaignConfig, DatasetManifestEntry, SubsetTag, TaskBatch};
use crate::store::{CampaignDir, Exclusion, Snapshot};

/// Agreement level at which an image counts towards `p̂_c`.
pub const CONSISTENCY_THRESHOLD: f64 = 0.95;

/// Consensus share assumed for the remaining-work estimate before any
/// image has reached `a_cons` annotations.
pub const PRIOR_CONSENSUS_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnknownImage,
    ClassOutOfRange,
    StaleBatch,
    NotInBatch,
    AnnotatorExcluded,
    Duplicate,
    ProposalMismatch,
    Cooldown,
    ImageComplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// Position of the record in the submitted list.
    pub index: usize,
    pub image_id: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

/// Where an annotation-target image stands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageState {
    /// Fewer than `a_cons` annotations.
    Pending,
    /// The first `a_cons` disagreed; collecting up to `a_full`.
    Escalated,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageProgress {
    pub annotations: usize,
    pub state: ImageState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub status: AnnotatorStatus,
    pub accepted: usize,
    /// Sum over batches of the time from issue to the last accepted record.
    pub active_hours: f64,
    pub annotations_per_hour: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub campaign_id: String,
    pub n_images: usize,
    pub total_annotations: usize,
    pub images: BTreeMap<String, ImageProgress>,
    pub images_complete: usize,
    pub images_escalated: usize,
    /// Share of images with at least `a_cons` annotations whose answers are
    /// at least 95 % consistent; `None` until such an image exists.
    pub consensus_fraction: Option<f64>,
    pub annotators: BTreeMap<String, AnnotatorProgress>,
    pub expected_total_annotations: f64,
    pub remaining_annotations: f64,
    /// Remaining annotations over the combined rate of active annotators.
    pub estimated_remaining_hours: Option<f64>,
}

#[derive(Debug, Clone)]
struct BatchState {
    batch: TaskBatch,
    items: HashMap<String, Option<usize>>,
    submitted: BTreeSet<String>,
    last_submit_ms: Option<u64>,
}

#[derive(Debug)]
pub struct Campaign {
    config: CampaignConfig,
    manifest: BTreeMap<String, DatasetManifestEntry>,
    records: Vec<AnnotationRecord>,
    batches: BTreeMap<String, BatchState>,
    batch_seq: u64,
    ledgers: BTreeMap<String, AnnotatorLedger>,
    excluded: BTreeSet<String>,
    per_image: HashMap<String, Vec<usize>>,
    last_annotated: HashMap<(String, String), u64>,
    last_issued: HashMap<(String, String), u64>,
    accepted_keys: HashSet<(String, String, String)>,
    dir: Option<CampaignDir>,
}

impl Campaign {
    /// A campaign without persistence.
    pub fn in_memory(config: CampaignConfig, manifest: Vec<DatasetManifestEntry>) -> Result<Self> {
        validate_new(&config, &manifest)?;
        Ok(Self::empty(config, manifest, None))
    }

    /// Validates and persists a new campaign below `store_dir`.
    pub fn create(
        store_dir: &std::path::Path,
        config: CampaignConfig,
        manifest: Vec<DatasetManifestEntry>,
    ) -> Result<Self> {
        validate_new(&config, &manifest)?;
        let dir = CampaignDir::create(store_dir, &config, &manifest)?;
        Ok(Self::empty(config, manifest, Some(dir)))
    }

    /// Reopens a persisted campaign by replaying its logs.
    pub fn open(root: impl Into<std::path::PathBuf>) -> Result<Self> {
        let (dir, snapshot) = CampaignDir::open(root)?;
        let mut campaign = Self::replay(snapshot)?;
        campaign.dir = Some(dir);
        Ok(campaign)
    }

    /// Rebuilds the derived state from a snapshot.
    pub fn replay(snapshot: Snapshot) -> Result<Self> {
        let Snapshot { config, manifest, batches, records, exclusions } = snapshot;
        config.validate()?;
        validate_manifest(&manifest, config.k)?;
        let mut campaign = Self::empty(config, manifest, None);
        for batch in batches {
            campaign.register_batch(batch);
        }
        // exclusions are interleaved by time: a record after an exclusion
        // cannot exist, so applying them after the records is equivalent
        for record in records {
            campaign.apply_record(record)?;
        }
        for ex in exclusions {
            campaign.apply_exclusion(&ex.annotator_id, &ex.reason);
        }
        Ok(campaign)
    }

    fn empty(config: CampaignConfig, manifest: Vec<DatasetManifestEntry>, dir: Option<CampaignDir>) -> Self {
        Self {
            manifest: manifest.into_iter().map(|e| (e.image_id.clone(), e)).collect(),
            config,
            records: Vec::new(),
            batches: BTreeMap::new(),
            batch_seq: 0,
            ledgers: BTreeMap::new(),
            excluded: BTreeSet::new(),
            per_image: HashMap::new(),
            last_annotated: HashMap::new(),
            last_issued: HashMap::new(),
            accepted_keys: HashSet::new(),
            dir,
        }
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn manifest(&self) -> impl Iterator<Item = &DatasetManifestEntry> {
        self.manifest.values()
    }

    pub fn excluded_annotators(&self) -> &BTreeSet<String> {
        &self.excluded
    }

    pub fn ledger(&self, annotator_id: &str) -> Option<&AnnotatorLedger> {
        self.ledgers.get(annotator_id)
    }

    fn status(&self, annotator_id: &str) -> AnnotatorStatus {
        if self.excluded.contains(annotator_id) {
            return AnnotatorStatus::Excluded;
        }
        match (&self.config.gate, self.ledgers.get(annotator_id)) {
            (None, _) => AnnotatorStatus::Qualified,
            (Some(_), Some(l)) => l.status,
            (Some(_), None) => AnnotatorStatus::Training,
        }
    }

    /// Records of `image_id` by annotators still in good standing, in log order.
    fn kept_records(&self, image_id: &str) -> impl Iterator<Item = &AnnotationRecord> {
        self.per_image
            .get(image_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
            .filter(|r| !self.excluded.contains(&r.annotator_id))
    }

    fn image_state(&self, image_id: &str) -> (usize, ImageState) {
        let classes: Vec<usize> = self.kept_records(image_id).map(|r| r.chosen_class).collect();
        let n = classes.len();
        let (a_cons, a_full) = (self.config.a_cons, self.config.a_full);
        let state = if n < a_cons {
            ImageState::Pending
        } else if agreement(&classes[..a_cons], self.config.k) >= self.config.agreement_threshold - 1e-12 || n >= a_full
        {
            ImageState::Complete
        } else {
            ImageState::Escalated
        };
        (n, state)
    }

    fn target(&self, state: ImageState) -> usize {
        match state {
            ImageState::Pending => self.config.a_cons,
            ImageState::Escalated => self.config.a_full,
            ImageState::Complete => 0,
        }
    }

    fn is_live(&self, b: &BatchState, now_ms: u64) -> bool {
        now_ms <= b.batch.issued_at_ms.saturating_add(self.config.batch_ttl_ms())
    }

    /// Items issued in live batches and not yet submitted, per image.
    fn reservations(&self, now_ms: u64) -> HashMap<&str, usize> {
        let mut out: HashMap<&str, usize> = HashMap::new();
        for b in self.batches.values() {
            if b.batch.gold || !self.is_live(b, now_ms) || self.excluded.contains(&b.batch.annotator_id) {
                continue;
            }
            for item in &b.batch.items {
                if !b.submitted.contains(&item.image_id) {
                    *out.entry(item.image_id.as_str()).or_default() += 1;
                }
            }
        }
        out
    }

    fn cooled_down(&self, annotator_id: &str, image_id: &str, now_ms: u64) -> bool {
        let key = (annotator_id.to_string(), image_id.to_string());
        let cd = self.config.cooldown_ms();
        [self.last_annotated.get(&key), self.last_issued.get(&key)]
            .into_iter()
            .flatten()
            .all(|&t| now_ms >= t.saturating_add(cd))
    }

    /// Issues the next batch for `annotator_id`, or `None` when nothing is
    /// currently eligible.
    pub fn next_batch(&mut self, annotator_id: &str, now_ms: u64, size: Option<usize>) -> Result<Option<TaskBatch>> {
        if annotator_id.is_empty() {
            return Err(ServiceError::InvalidConfig("annotator id must be non-empty".into()));
        }
        let size = size.unwrap_or(self.config.batch_size).max(1);
        let batch = match self.status(annotator_id) {
            AnnotatorStatus::Excluded => return Err(ServiceError::AnnotatorExcluded(annotator_id.to_string())),
            AnnotatorStatus::Training => self.gold_items(annotator_id, now_ms, size),
            AnnotatorStatus::Qualified => self.annotate_items(annotator_id, now_ms, size),
        };
        let (items, gold, with_proposals) = batch;
        if items.is_empty() {
            return Ok(None);
        }
        let batch = TaskBatch {
            batch_id: format!("{}-b{:06}", self.config.campaign_id, self.batch_seq + 1),
            annotator_id: annotator_id.to_string(),
            items,
            issued_at_ms: now_ms,
            gold,
            with_proposals,
        };
        if let Some(dir) = &self.dir {
            dir.append_batch(&batch)?;
        }
        self.register_batch(batch.clone());
        Ok(Some(batch))
    }

    fn gold_items(&self, annotator_id: &str, now_ms: u64, size: usize) -> (Vec<BatchItem>, bool, bool) {
        let with_proposals = self.config.use_proposals && {
            let its = self.ledgers.get(annotator_id).map(|l| l.iterations.as_slice()).unwrap_or(&[]);
            let with = its.iter().filter(|it| it.with_proposals).count();
            with < its.len() - with
        };
        let mut eligible: Vec<(usize, &DatasetManifestEntry)> = self
            .manifest
            .values()
            .filter(|e| e.subset_tag == SubsetTag::Gold)
            .filter(|e| self.cooled_down(annotator_id, &e.image_id, now_ms))
            .map(|e| {
                let seen = self.kept_records(&e.image_id).filter(|r| r.annotator_id == annotator_id).count();
                (seen, e)
            })
            .collect();
        eligible.sort_by(|a, b| (a.0, &a.1.image_id).cmp(&(b.0, &b.1.image_id)));
        let items = eligible
            .into_iter()
            .take(size)
            .map(|(_, e)| BatchItem {
                image_id: e.image_id.clone(),
                uri: e.uri.clone(),
                proposal: if with_proposals { e.proposal } else { None },
            })
            .collect();
        (items, true, with_proposals)
    }

    fn annotate_items(&self, annotator_id: &str, now_ms: u64, size: usize) -> (Vec<BatchItem>, bool, bool) {
        let reserved = self.reservations(now_ms);
        let mut eligible: Vec<(usize, &DatasetManifestEntry)> = Vec::new();
        for e in self.manifest.values().filter(|e| e.subset_tag == SubsetTag::Annotate) {
            let (n, state) = self.image_state(&e.image_id);
            let open = self.target(state).saturating_sub(n + reserved.get(e.image_id.as_str()).copied().unwrap_or(0));
            if open > 0 && self.cooled_down(annotator_id, &e.image_id, now_ms) {
                eligible.push((n, e));
            }
        }
        eligible.sort_by(|a, b| (a.0, &a.1.image_id).cmp(&(b.0, &b.1.image_id)));

        let use_proposals = self.config.use_proposals;
        let chosen: Vec<&DatasetManifestEntry> = if use_proposals {
            // fill from the most common pending proposal class, then top up
            // with whatever else is eligible
            let mut by_class: BTreeMap<Option<usize>, usize> = BTreeMap::new();
            for (_, e) in &eligible {
                *by_class.entry(e.proposal).or_default() += 1;
            }
            let lead = by_class
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.is_none().cmp(&a.0.is_none())).then(b.0.cmp(a.0)))
                .map(|(c, _)| *c);
            let (mut first, rest): (Vec<_>, Vec<_>) =
                eligible.iter().map(|(_, e)| *e).partition(|e| Some(e.proposal) == lead);
            first.truncate(size);
            let room = size - first.len();
            first.extend(rest.into_iter().take(room));
            first
        } else {
            eligible.iter().map(|(_, e)| *e).take(size).collect()
        };
        let items = chosen
            .into_iter()
            .map(|e| BatchItem {
                image_id: e.image_id.clone(),
                uri: e.uri.clone(),
                proposal: if use_proposals { e.proposal } else { None },
            })
            .collect();
        (items, false, use_proposals)
    }

    fn register_batch(&mut self, batch: TaskBatch) {
        for item in &batch.items {
            let key = (batch.annotator_id.clone(), item.image_id.clone());
            let t = self.last_issued.entry(key).or_insert(batch.issued_at_ms);
            *t = (*t).max(batch.issued_at_ms);
        }
        self.batch_seq += 1;
        let items = batch.items.iter().map(|i| (i.image_id.clone(), i.proposal)).collect();
        self.batches.insert(
            batch.batch_id.clone(),
            BatchState { batch, items, submitted: BTreeSet::new(), last_submit_ms: None },
        );
    }

    fn check(&self, rec: &AnnotationRecord, now_ms: u64) -> std::result::Result<(), RejectReason> {
        use RejectReason::*;
        if !self.manifest.contains_key(&rec.image_id) {
            return Err(UnknownImage);
        }
        if rec.chosen_class >= self.config.k {
            return Err(ClassOutOfRange);
        }
        let b = self.batches.get(&rec.batch_id).ok_or(StaleBatch)?;
        if b.batch.annotator_id != rec.annotator_id || !self.is_live(b, now_ms) {
            return Err(StaleBatch);
        }
        let shown = b.items.get(&rec.image_id).ok_or(NotInBatch)?;
        if self.excluded.contains(&rec.annotator_id) {
            return Err(AnnotatorExcluded);
        }
        let key = (rec.batch_id.clone(), rec.image_id.clone(), rec.annotator_id.clone());
        if self.accepted_keys.contains(&key) {
            return Err(Duplicate);
        }
        if rec.proposal_shown != *shown {
            return Err(ProposalMismatch);
        }
        let pair = (rec.annotator_id.clone(), rec.image_id.clone());
        if let Some(&t) = self.last_annotated.get(&pair) {
            if now_ms < t.saturating_add(self.config.cooldown_ms()) {
                return Err(Cooldown);
            }
        }
        if !b.batch.gold && self.image_state(&rec.image_id).1 == ImageState::Complete {
            return Err(ImageComplete);
        }
        Ok(())
    }

    /// Validates and appends records. Accepted records are stamped with
    /// `now_ms`, the service clock being authoritative for cooldowns.
    pub fn submit(&mut self, records: Vec<AnnotationRecord>, now_ms: u64) -> Result<SubmitResponse> {
        let start = self.records.len();
        let mut rejected = Vec::new();
        let mut ledger_changes = BTreeSet::new();
        for (index, mut rec) in records.into_iter().enumerate() {
            match self.check(&rec, now_ms) {
                Ok(()) => {
                    rec.timestamp_ms = now_ms;
                    if let Some(aid) = self.apply_record(rec)? {
                        ledger_changes.insert(aid);
                    }
                }
                Err(reason) => rejected.push(Rejection { index, image_id: rec.image_id, reason }),
            }
        }
        if let Some(dir) = &self.dir {
            if let Err(e) = dir.append_records(&self.records[start..]) {
                // keep memory consistent with disk
                self.rollback_to(start)?;
                return Err(e);
            }
            for aid in &ledger_changes {
                dir.write_ledger(&self.ledgers[aid])?;
            }
        }
        Ok(SubmitResponse { accepted: self.records.len() - start, rejected })
    }

    fn rollback_to(&mut self, len: usize) -> Result<()> {
        let exclusions = self
            .excluded
            .iter()
            .map(|a| Exclusion {
                annotator_id: a.clone(),
                reason: self.ledgers.get(a).and_then(|l| l.exclusion_reason.clone()).unwrap_or_default(),
                at_ms: 0,
            })
            .collect();
        let snapshot = Snapshot {
            config: self.config.clone(),
            manifest: self.manifest.values().cloned().collect(),
            batches: self.batches.values().map(|b| b.batch.clone()).collect(),
            records: self.records[..len].to_vec(),
            exclusions,
        };
        let dir = self.dir.take();
        *self = Self::replay(snapshot)?;
        self.dir = dir;
        Ok(())
    }

    /// Adds an accepted record to the derived state; returns the annotator
    /// whose ledger changed, if a gold batch was completed.
    fn apply_record(&mut self, rec: AnnotationRecord) -> Result<Option<String>> {
        let idx = self.records.len();
        self.per_image.entry(rec.image_id.clone()).or_default().push(idx);
        let pair = (rec.annotator_id.clone(), rec.image_id.clone());
        let t = self.last_annotated.entry(pair).or_insert(rec.timestamp_ms);
        *t = (*t).max(rec.timestamp_ms);
        self.accepted_keys.insert((rec.batch_id.clone(), rec.image_id.clone(), rec.annotator_id.clone()));
        let mut completed_gold = None;
        if let Some(b) = self.batches.get_mut(&rec.batch_id) {
            b.submitted.insert(rec.image_id.clone());
            b.last_submit_ms = Some(b.last_submit_ms.map_or(rec.timestamp_ms, |t| t.max(rec.timestamp_ms)));
            if b.batch.gold && b.submitted.len() == b.batch.items.len() {
                completed_gold = Some(rec.batch_id.clone());
            }
        }
        self.records.push(rec);
        match completed_gold {
            Some(batch_id) => self.score_gold_batch(&batch_id).map(Some),
            None => Ok(None),
        }
    }

    fn score_gold_batch(&mut self, batch_id: &str) -> Result<String> {
        let b = &self.batches[batch_id];
        let aid = b.batch.annotator_id.clone();
        let recs: Vec<AnnotationRecord> = self.records.iter().filter(|r| r.batch_id == batch_id).cloned().collect();
        let gold: BTreeMap<String, usize> = recs
            .iter()
            .filter_map(|r| Some((r.image_id.clone(), self.manifest.get(&r.image_id)?.gold_label?)))
            .collect();
        let scores = score_iteration(&recs, &gold, self.config.k)?;
        let minutes = (b.last_submit_ms.unwrap_or(b.batch.issued_at_ms) - b.batch.issued_at_ms) as f64 / 60_000.0;
        let iteration = Iteration {
            iteration_id: batch_id.to_string(),
            with_proposals: b.batch.with_proposals,
            macro_f1: scores.macro_f1,
            macro_accuracy: scores.macro_accuracy,
            minutes_spent: minutes,
        };
        let gate = self.config.effective_gate().unwrap_or_default();
        let ledger = self.ledgers.remove(&aid).unwrap_or_else(|| AnnotatorLedger::new(&aid));
        self.ledgers.insert(aid.clone(), update_status(ledger, iteration, &gate)?);
        Ok(aid)
    }

    fn apply_exclusion(&mut self, annotator_id: &str, reason: &str) {
        let ledger = self.ledgers.remove(annotator_id).unwrap_or_else(|| AnnotatorLedger::new(annotator_id));
        self.ledgers.insert(annotator_id.to_string(), ledger.exclude(reason));
        self.excluded.insert(annotator_id.to_string());
    }

    /// Operator action: excludes the annotator and drops all of their
    /// records, training iterations included, from every later aggregate.
    pub fn exclude(&mut self, annotator_id: &str, reason: &str, now_ms: u64) -> Result<AnnotatorLedger> {
        if !self.excluded.contains(annotator_id) {
            let ex = Exclusion { annotator_id: annotator_id.to_string(), reason: reason.to_string(), at_ms: now_ms };
            if let Some(dir) = &self.dir {
                dir.append_exclusion(&ex)?;
            }
            self.apply_exclusion(annotator_id, reason);
            if let Some(dir) = &self.dir {
                dir.write_ledger(&self.ledgers[annotator_id])?;
            }
        }
        Ok(self.ledgers[annotator_id].clone())
    }

    /// Ledger of an annotator seen by this campaign.
    pub fn annotator(&self, annotator_id: &str) -> Result<AnnotatorLedger> {
        if let Some(l) = self.ledgers.get(annotator_id) {
            let mut l = l.clone();
            l.status = self.status(annotator_id);
            return Ok(l);
        }
        let known = self.batches.values().any(|b| b.batch.annotator_id == annotator_id);
        if !known {
            return Err(ServiceError::UnknownAnnotator(annotator_id.to_string()));
        }
        let mut l = AnnotatorLedger::new(annotator_id);
        l.status = self.status(annotator_id);
        Ok(l)
    }

    /// Every annotator that was issued a batch, in id order.
    pub fn annotators(&self) -> Vec<AnnotatorLedger> {
        let ids: BTreeSet<&str> = self
            .batches
            .values()
            .map(|b| b.batch.annotator_id.as_str())
            .chain(self.ledgers.keys().map(String::as_str))
            .collect();
        ids.into_iter().filter_map(|id| self.annotator(id).ok()).collect()
    }

    pub fn progress(&self) -> Progress {
        let mut images = BTreeMap::new();
        let (mut complete, mut escalated, mut total) = (0, 0, 0);
        let (mut consistent, mut judged) = (0usize, 0usize);
        for e in self.manifest.values().filter(|e| e.subset_tag == SubsetTag::Annotate) {
            let (n, state) = self.image_state(&e.image_id);
            total += n;
            match state {
                ImageState::Complete => complete += 1,
                ImageState::Escalated => escalated += 1,
                ImageState::Pending => {}
            }
            if n >= self.config.a_cons {
                judged += 1;
                let classes: Vec<usize> = self.kept_records(&e.image_id).map(|r| r.chosen_class).collect();
                if agreement(&classes, self.config.k) >= CONSISTENCY_THRESHOLD - 1e-12 {
                    consistent += 1;
                }
            }
            images.insert(e.image_id.clone(), ImageProgress { annotations: n, state });
        }
        let consensus_fraction = (judged > 0).then(|| consistent as f64 / judged as f64);

        let mut annotators: BTreeMap<String, AnnotatorProgress> = BTreeMap::new();
        for b in self.batches.values() {
            let entry = annotators.entry(b.batch.annotator_id.clone()).or_insert(AnnotatorProgress {
                status: self.status(&b.batch.annotator_id),
                accepted: 0,
                active_hours: 0.0,
                annotations_per_hour: None,
            });
            entry.accepted += b.submitted.len();
            if let Some(last) = b.last_submit_ms {
                entry.active_hours += (last - b.batch.issued_at_ms) as f64 / 3_600_000.0;
            }
        }
        for a in annotators.values_mut() {
            a.annotations_per_hour = (a.active_hours > 0.0).then(|| a.accepted as f64 / a.active_hours);
        }
        let rate: f64 = annotators
            .values()
            .filter(|a| a.status != AnnotatorStatus::Excluded)
            .filter_map(|a| a.annotations_per_hour)
            .sum();

        let n_images = images.len();
        let expected = estimate_workload(&WorkloadInputs {
            n_images: n_images as u64,
            consensus_fraction: consensus_fraction.unwrap_or(PRIOR_CONSENSUS_FRACTION),
            annotations_consensus: self.config.a_cons as u32,
            annotations_full: self.config.a_full as u32,
            annotations_per_hour: 1.0,
        })
        .map(|w| w.expected_annotations)
        .unwrap_or(0.0);
        let remaining = if complete == n_images { 0.0 } else { (expected - total as f64).max(0.0) };
        Progress {
            campaign_id: self.config.campaign_id.clone(),
            n_images,
            total_annotations: total,
            images,
            images_complete: complete,
            images_escalated: escalated,
            consensus_fraction,
            annotators,
            expected_total_annotations: expected,
            remaining_annotations: remaining,
            estimated_remaining_hours: (rate > 0.0).then(|| remaining / rate),
        }
    }

    /// Soft-label table over the annotation-target images, with excluded
    /// annotators' records dropped before aggregation.
    pub fn export(&self, method: Method, format: ExportFormat) -> Result<String> {
        if method.requires_proposals() && !self.config.use_proposals {
            return Err(ServiceError::InvalidConfig(format!(
                "{method} needs proposals but campaign {} does not use them",
                self.config.campaign_id
            )));
        }
        let filter = ExportFilter {
            images: Some(
                self.manifest
                    .values()
                    .filter(|e| e.subset_tag == SubsetTag::Annotate)
                    .map(|e| e.image_id.clone())
                    .collect(),
            ),
            excluded_annotators: self.excluded.clone(),
        };
        let rows = export_rows(&self.records, self.config.k, &self.config.postprocess, method, &filter)?;
        Ok(render(&rows, self.config.k, format)?)
    }
}

fn validate_new(config: &CampaignConfig, manifest: &[DatasetManifestEntry]) -> Result<()> {
    config.validate()?;
    if manifest.is_empty() {
        return Err(ServiceError::InvalidManifest { line: 0, message: "manifest is empty".into() });
    }
    validate_manifest(manifest, config.k)?;
    if config.gate.is_some() && !manifest.iter().any(|e| e.subset_tag == SubsetTag::Gold) {
        return Err(ServiceError::InvalidConfig("gating enabled but manifest has no GOLD rows".into()));
    }
    Ok(())
}

/// Share of the most common answer.
fn agreement(classes: &[usize], k: usize) -> f64 {
    if classes.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; k];
    for &c in classes {
        counts[c] += 1;
    }
    *counts.iter().max().unwrap() as f64 / classes.len() as f64
}
