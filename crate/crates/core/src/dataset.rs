//! Disengagement datasets: `(o, a, d)` records, persistence, and construction
//! of fixed-horizon training sequences.
//!
//! A record with `disengaged = true` marks the step at which the monitor
//! revoked autonomy; it closes the current engaged segment of its episode.
//! Training windows that reach such a record are extended to the full
//! horizon with disengaged labels and actions drawn from the dataset, so
//! disengagement is treated as absorbing.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Action, DisengagementCause, Observation};

pub const DATASET_FORMAT: &str = "land-dataset.v1";

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub episode_id: u64,
    pub step_index: u64,
    pub observation: Observation,
    pub action: Action,
    pub disengaged: bool,
    pub progress_m: f64,
    /// Which policy was driving ("land", "bc", "scripted", "random", ...).
    pub policy_tag: String,
    /// Who or what disengaged; `None` on engaged records.
    pub cause: Option<DisengagementCause>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub observation: Observation,
    pub actions: Vec<Action>,
    pub labels: Vec<bool>,
    /// Number of trailing entries synthesized by the extension rule.
    pub padded_from: usize,
}

impl SequenceSample {
    pub fn has_disengagement(&self) -> bool {
        self.labels.iter().any(|&d| d)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    records: Vec<StepRecord>,
    last_step: HashMap<u64, u64>,
    engaged_actions: Vec<Action>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, StepRecord> {
        self.records.iter()
    }

    pub fn disengagement_count(&self) -> usize {
        self.records.iter().filter(|r| r.disengaged).count()
    }

    /// Actions of engaged records; the pool used to pad extended windows.
    pub fn action_pool(&self) -> &[Action] {
        &self.engaged_actions
    }

    /// Largest episode id present, if any.
    pub fn max_episode_id(&self) -> Option<u64> {
        self.last_step.keys().copied().max()
    }

    pub fn record_step(&mut self, record: StepRecord) -> Result<()> {
        let last = self.records.last();
        if let Some(&prev_step) = self.last_step.get(&record.episode_id) {
            let prev = last.expect("episode map implies records");
            if prev.episode_id != record.episode_id {
                return Err(Error::InvalidRecord(format!(
                    "episode {} is not contiguous (current episode is {})",
                    record.episode_id, prev.episode_id
                )));
            }
            if record.step_index <= prev_step {
                return Err(Error::InvalidRecord(format!(
                    "episode {} step {} does not follow step {}",
                    record.episode_id, record.step_index, prev_step
                )));
            }
            if record.disengaged && prev.disengaged {
                return Err(Error::InvalidRecord(format!(
                    "episode {} step {}: consecutive disengaged records",
                    record.episode_id, record.step_index
                )));
            }
        }
        if !record.progress_m.is_finite() || !record.action.delta_heading().is_finite() {
            return Err(Error::InvalidRecord("non-finite field".into()));
        }
        self.last_step.insert(record.episode_id, record.step_index);
        if !record.disengaged {
            self.engaged_actions.push(record.action);
        }
        self.records.push(record);
        Ok(())
    }

    /// Appends every record of `other`, renumbering its episodes after ours.
    pub fn merge(&mut self, other: &Dataset) -> Result<()> {
        let offset = self.max_episode_id().map_or(0, |m| m + 1);
        let base = other.records.iter().map(|r| r.episode_id).min().unwrap_or(0);
        for r in &other.records {
            let mut r = r.clone();
            r.episode_id = r.episode_id - base + offset;
            self.record_step(r)?;
        }
        Ok(())
    }

    fn same_episode_next(&self, i: usize) -> Option<usize> {
        let next = i + 1;
        (next < self.records.len() && self.records[next].episode_id == self.records[i].episode_id)
            .then_some(next)
    }

    /// Builds the `horizon`-step training window starting at `start`.
    pub fn sample_sequence<R: Rng + ?Sized>(
        &self,
        start: usize,
        horizon: usize,
        rng: &mut R,
    ) -> Result<SequenceSample> {
        if start >= self.records.len() {
            return Err(Error::IndexOutOfRange {
                index: start,
                len: self.records.len(),
            });
        }
        let mut actions = Vec::with_capacity(horizon);
        let mut labels = Vec::with_capacity(horizon);
        let mut cursor = Some(start);
        let mut padded_from = 0;
        for offset in 0..horizon {
            let Some(i) = cursor else {
                return Err(Error::TruncatedWindow(start));
            };
            let r = &self.records[i];
            if r.disengaged {
                if self.engaged_actions.is_empty() {
                    return Err(Error::InsufficientClass(
                        "no engaged actions to pad a disengaged window".into(),
                    ));
                }
                for _ in offset..horizon {
                    let k = rng.gen_range(0..self.engaged_actions.len());
                    actions.push(self.engaged_actions[k]);
                    labels.push(true);
                }
                padded_from = horizon - offset;
                break;
            }
            actions.push(r.action);
            labels.push(false);
            cursor = self.same_episode_next(i);
        }
        Ok(SequenceSample {
            observation: self.records[start].observation.clone(),
            actions,
            labels,
            padded_from,
        })
    }

    pub fn sequence_index(&self, horizon: usize) -> SequenceIndex {
        SequenceIndex::build(self, horizon)
    }

    /// Rebalanced minibatch: `batch/2` windows overlapping a disengagement
    /// followed by `batch/2` disengagement-free windows.
    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        batch: usize,
        horizon: usize,
        rng: &mut R,
    ) -> Result<Vec<SequenceSample>> {
        self.sequence_index(horizon).sample_minibatch(self, batch, rng)
    }
}

/// Start indices split by whether their window overlaps a disengagement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceIndex {
    pub horizon: usize,
    /// Starts within `horizon` steps before (or at) a disengagement record.
    pub positive: Vec<usize>,
    /// Starts followed by at least `horizon` engaged records in the episode.
    pub negative: Vec<usize>,
}

impl SequenceIndex {
    pub fn build(dataset: &Dataset, horizon: usize) -> Self {
        let records = &dataset.records;
        let mut positive = Vec::new();
        let mut negative = Vec::new();
        // Walk backwards tracking the distance to the next disengagement and
        // the length of the engaged run ahead, both within the episode.
        let mut to_disengagement: Option<usize> = None;
        let mut engaged_run = 0usize;
        for i in (0..records.len()).rev() {
            let continues = i + 1 < records.len() && records[i + 1].episode_id == records[i].episode_id;
            if !continues {
                to_disengagement = None;
                engaged_run = 0;
            }
            if records[i].disengaged {
                to_disengagement = Some(0);
                engaged_run = 0;
            } else {
                to_disengagement = to_disengagement.map(|d| d + 1);
                engaged_run += 1;
            }
            match to_disengagement {
                Some(d) if d < horizon => positive.push(i),
                _ => {
                    if engaged_run >= horizon {
                        negative.push(i);
                    }
                }
            }
        }
        positive.reverse();
        negative.reverse();
        SequenceIndex {
            horizon,
            positive,
            negative,
        }
    }

    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        dataset: &Dataset,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<SequenceSample>> {
        if batch == 0 || batch % 2 != 0 {
            return Err(Error::OddBatch(batch));
        }
        if self.positive.is_empty() {
            return Err(Error::InsufficientClass(
                "no window overlaps a disengagement".into(),
            ));
        }
        if self.negative.is_empty() {
            return Err(Error::InsufficientClass(
                "no disengagement-free window of full horizon".into(),
            ));
        }
        let half = batch / 2;
        let mut out = Vec::with_capacity(batch);
        for pool in [&self.positive, &self.negative] {
            for _ in 0..half {
                let start = pool[rng.gen_range(0..pool.len())];
                out.push(dataset.sample_sequence(start, self.horizon, rng)?);
            }
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    records: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    episode_id: u64,
    step_index: u64,
    observation: String,
    action: f64,
    disengaged: bool,
    progress_m: f64,
    policy_tag: String,
    cause: Option<DisengagementCause>,
}

impl Dataset {
    /// Writes the dataset as newline-delimited JSON with a format header.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = Header {
            format: DATASET_FORMAT.into(),
            records: self.records.len(),
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for r in &self.records {
            let wire = WireRecord {
                episode_id: r.episode_id,
                step_index: r.step_index,
                observation: r.observation.to_digits(),
                action: r.action.delta_heading(),
                disengaged: r.disengaged,
                progress_m: r.progress_m,
                policy_tag: r.policy_tag.clone(),
                cause: r.cause,
            };
            writeln!(out, "{}", serde_json::to_string(&wire)?)?;
        }
        out.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }

    pub fn read_from<R: BufRead>(reader: R, path: &Path) -> Result<Dataset> {
        let malformed = |line: usize, message: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| malformed(1, "missing header".into()))?
            .map_err(|e| Error::io(path, e))?;
        let header: Header =
            serde_json::from_str(&header_line).map_err(|e| malformed(1, e.to_string()))?;
        if header.format != DATASET_FORMAT {
            return Err(Error::Version {
                expected: DATASET_FORMAT.into(),
                found: header.format,
            });
        }
        let mut dataset = Dataset::new();
        for (k, line) in lines.enumerate() {
            let line_no = k + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            let wire: WireRecord =
                serde_json::from_str(&line).map_err(|e| malformed(line_no, e.to_string()))?;
            let observation = Observation::from_digits(&wire.observation)
                .map_err(|e| malformed(line_no, e.to_string()))?;
            if wire.action.abs() > crate::sim::MAX_HEADING_CHANGE {
                return Err(malformed(line_no, format!("action {} out of bounds", wire.action)));
            }
            dataset
                .record_step(StepRecord {
                    episode_id: wire.episode_id,
                    step_index: wire.step_index,
                    observation,
                    action: Action::new(wire.action),
                    disengaged: wire.disengaged,
                    progress_m: wire.progress_m,
                    policy_tag: wire.policy_tag,
                    cause: wire.cause,
                })
                .map_err(|e| malformed(line_no, e.to_string()))?;
        }
        if dataset.len() != header.records {
            return Err(malformed(
                dataset.len() + 1,
                format!("header declares {} records, found {}", header.records, dataset.len()),
            ));
        }
        Ok(dataset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::TerrainClass;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(episode: u64, step: u64, action: f64, disengaged: bool) -> StepRecord {
        StepRecord {
            episode_id: episode,
            step_index: step,
            observation: Observation::filled(TerrainClass::Sidewalk),
            action: Action::new(action),
            disengaged,
            progress_m: step as f64 * 0.5,
            policy_tag: "test".into(),
            cause: disengaged.then_some(DisengagementCause::Street),
        }
    }

    /// Episode 0: 20 engaged steps then a disengagement at step 20, then 20
    /// more engaged steps.
    fn fixture() -> Dataset {
        let mut d = Dataset::new();
        for s in 0..41 {
            let a = (s % 9) as f64 * 0.1 - 0.4;
            d.record_step(rec(0, s, a, s == 20)).unwrap();
        }
        d
    }

    #[test]
    fn append_preserves_order() {
        let mut d = Dataset::new();
        for s in 0..3 {
            d.record_step(rec(1, s, 0.1 * s as f64, false)).unwrap();
        }
        assert_eq!(d.len(), 3);
        assert!(d.iter().map(|r| r.step_index).eq(0..3));
    }

    #[test]
    fn duplicate_step_rejected() {
        let mut d = Dataset::new();
        d.record_step(rec(1, 4, 0.0, false)).unwrap();
        assert!(matches!(
            d.record_step(rec(1, 4, 0.0, false)),
            Err(Error::InvalidRecord(_))
        ));
        assert!(d.record_step(rec(1, 3, 0.0, false)).is_err());
    }

    #[test]
    fn consecutive_disengagements_rejected() {
        let mut d = Dataset::new();
        d.record_step(rec(1, 0, 0.0, true)).unwrap();
        assert!(d.record_step(rec(1, 1, 0.0, true)).is_err());
    }

    #[test]
    fn fully_engaged_window() {
        let d = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = d.sample_sequence(2, 8, &mut rng).unwrap();
        assert_eq!(s.labels, vec![false; 8]);
        assert_eq!(s.padded_from, 0);
        let expected: Vec<_> = (2..10).map(|i| d.records()[i].action).collect();
        assert_eq!(s.actions, expected);
    }

    #[test]
    fn extension_at_offset_two() {
        let d = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = d.sample_sequence(18, 8, &mut rng).unwrap();
        assert_eq!(s.labels, [false, false, true, true, true, true, true, true]);
        assert_eq!(s.padded_from, 6);
        assert_eq!(s.actions[..2], [d.records()[18].action, d.records()[19].action]);
        for a in &s.actions[2..] {
            assert!(d.action_pool().contains(a));
        }
    }

    #[test]
    fn padding_is_reproducible() {
        let d = fixture();
        let a = d.sample_sequence(15, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = d.sample_sequence(15, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_and_truncated() {
        let d = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            d.sample_sequence(41, 8, &mut rng),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            d.sample_sequence(38, 8, &mut rng),
            Err(Error::TruncatedWindow(38))
        ));
    }

    #[test]
    fn index_classes() {
        let d = fixture();
        let idx = d.sequence_index(8);
        assert_eq!(idx.positive, (13..=20).collect::<Vec<_>>());
        let mut negative: Vec<usize> = (0..=12).collect();
        negative.extend(21..=33);
        assert_eq!(idx.negative, negative);
    }

    #[test]
    fn minibatch_is_balanced() {
        let d = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = d.sample_minibatch(8, 8, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        assert_eq!(batch.iter().filter(|s| s.has_disengagement()).count(), 4);
        assert!(batch[..4].iter().all(|s| s.has_disengagement()));
    }

    #[test]
    fn minibatch_without_disengagements() {
        let mut d = Dataset::new();
        for s in 0..30 {
            d.record_step(rec(0, s, 0.0, false)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            d.sample_minibatch(8, 8, &mut rng),
            Err(Error::InsufficientClass(_))
        ));
        assert!(matches!(d.sample_minibatch(7, 8, &mut rng), Err(Error::OddBatch(7))));
    }

    #[test]
    fn minibatch_deterministic() {
        let d = fixture();
        let a = d.sample_minibatch(8, 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = d.sample_minibatch(8, 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let d = fixture();
        let p1 = dir.path().join("a.ndjson");
        let p2 = dir.path().join("b.ndjson");
        d.save(&p1).unwrap();
        let back = Dataset::load(&p1).unwrap();
        assert_eq!(back, d);
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.ndjson");
        Dataset::new().save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(Dataset::load(&p).unwrap().is_empty());
    }

    #[test]
    fn corrupted_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ndjson");
        fixture().save(&p).unwrap();
        let mut lines: Vec<String> = std::fs::read_to_string(&p)
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        lines[5] = lines[5].replace("\"action\"", "\"acton\"");
        std::fs::write(&p, lines.join("\n") + "\n").unwrap();
        match Dataset::load(&p) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.ndjson");
        std::fs::write(&p, "{\"format\":\"land-dataset.v0\",\"records\":0}\n").unwrap();
        assert!(matches!(Dataset::load(&p), Err(Error::Version { .. })));
    }
}
