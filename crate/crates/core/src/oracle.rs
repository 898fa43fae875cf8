//! The label source through which every human inspection flows.
//!
//! A [`LabelSource`] answers "is this pair a match?" from one of three
//! backends: the pair's ground truth (simulation), a fixed transcript, or an
//! interactive [`LabelQueue`] drained by a human through the labeling API.
//! Every answer is cached, so a pair is charged at most once, and can be
//! appended to a journal file that restores the cache after a restart.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InstancePair, Label};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Sampling,
    Verification,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    GroundTruth,
    Interactive,
    Scripted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub value: String,
}

/// A pending question for the human.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub pair_id: String,
    pub metric: f64,
    pub left: Vec<Field>,
    pub right: Vec<Field>,
    pub phase: Phase,
}

/// Supplies the record fields shown next to a pair.
pub trait PairViewer: Send + Sync {
    fn view(&self, pair: &InstancePair) -> (Vec<Field>, Vec<Field>);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnswerOutcome {
    Accepted,
    /// The pair was answered before; the new answer is ignored.
    Duplicate,
    /// The pair was never requested.
    Unknown,
}

#[derive(Default)]
struct QueueState {
    pending: VecDeque<LabelRequest>,
    answers: HashMap<String, Label>,
    closed: Option<String>,
}

/// Request queue shared between a blocked solver and the answering side.
#[derive(Default)]
pub struct LabelQueue {
    state: Mutex<QueueState>,
    changed: Condvar,
}

impl LabelQueue {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Oldest unanswered requests, at most `limit`.
    pub fn pending(&self, limit: usize) -> Vec<LabelRequest> {
        self.lock().pending.iter().take(limit).cloned().collect()
    }

    pub fn pending_len(&self) -> usize {
        self.lock().pending.len()
    }

    pub fn answer(&self, pair_id: &str, label: Label) -> AnswerOutcome {
        let mut state = self.lock();
        if state.answers.contains_key(pair_id) {
            return AnswerOutcome::Duplicate;
        }
        let Some(at) = state.pending.iter().position(|r| r.pair_id == pair_id) else {
            return AnswerOutcome::Unknown;
        };
        state.pending.remove(at);
        state.answers.insert(pair_id.to_string(), label);
        drop(state);
        self.changed.notify_all();
        AnswerOutcome::Accepted
    }

    /// Marks the session aborted; blocked and future requests fail.
    pub fn close(&self, reason: impl Into<String>) {
        self.lock().closed = Some(reason.into());
        self.changed.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed.is_some()
    }

    /// Queues `requests` and blocks until all are answered, reporting each
    /// answer to `on_answer` as it arrives.
    fn request(
        &self,
        requests: Vec<LabelRequest>,
        mut on_answer: impl FnMut(&str, Label) -> Result<()>,
    ) -> Result<Vec<Label>> {
        let ids: Vec<String> = requests.iter().map(|r| r.pair_id.clone()).collect();
        let mut reported = vec![false; ids.len()];
        let mut state = self.lock();
        for r in requests {
            if !state.answers.contains_key(&r.pair_id) && !state.pending.iter().any(|p| p.pair_id == r.pair_id) {
                state.pending.push_back(r);
            }
        }
        self.changed.notify_all();
        loop {
            if let Some(reason) = &state.closed {
                return Err(Error::Aborted(reason.clone()));
            }
            let fresh: Vec<(usize, Label)> = ids
                .iter()
                .enumerate()
                .filter(|(i, _)| !reported[*i])
                .filter_map(|(i, id)| state.answers.get(id).map(|l| (i, *l)))
                .collect();
            if !fresh.is_empty() {
                drop(state);
                for (i, label) in fresh {
                    reported[i] = true;
                    on_answer(&ids[i], label)?;
                }
                state = self.lock();
                continue;
            }
            if reported.iter().all(|&r| r) {
                return Ok(ids.iter().map(|id| state.answers[id]).collect());
            }
            state = self.changed.wait(state).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Blocks until a request is pending or the queue is closed, up to `timeout`.
    pub fn wait_for_pending(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut state = self.lock();
        while state.pending.is_empty() && state.closed.is_none() {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            state = self
                .changed
                .wait_timeout(state, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        !state.pending.is_empty()
    }
}

enum Backend {
    GroundTruth,
    Scripted(HashMap<String, Label>),
    Interactive(Arc<LabelQueue>),
}

/// Solver progress as reported to observers of an interactive session.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Progress {
    pub phase: Option<Phase>,
    /// Current human region as half-open subset bounds.
    pub bounds: Option<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HumanCost {
    pub count: usize,
    pub fraction: f64,
}

struct SourceState {
    // Ordered, so `asked_ids` needs no sort.
    cache: BTreeMap<String, Label>,
    journal: Option<BufWriter<File>>,
    waiting: Duration,
    progress: Progress,
}

pub struct LabelSource {
    backend: Backend,
    workload_len: usize,
    viewer: Option<Arc<dyn PairViewer>>,
    journal_path: Option<PathBuf>,
    state: Mutex<SourceState>,
}

impl std::fmt::Debug for LabelSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LabelSource")
            .field("kind", &self.kind())
            .field("asked", &self.asked_count())
            .finish()
    }
}

impl LabelSource {
    fn with_backend(backend: Backend, workload_len: usize) -> Self {
        Self {
            backend,
            workload_len,
            viewer: None,
            journal_path: None,
            state: Mutex::new(SourceState {
                cache: BTreeMap::new(),
                journal: None,
                waiting: Duration::ZERO,
                progress: Progress::default(),
            }),
        }
    }

    /// Answers from each pair's ground truth, as a perfect human would.
    pub fn ground_truth(workload_len: usize) -> Self {
        Self::with_backend(Backend::GroundTruth, workload_len)
    }

    /// Replays a fixed transcript; answers are looked up by pair id.
    pub fn scripted(transcript: impl IntoIterator<Item = (String, Label)>, workload_len: usize) -> Self {
        Self::with_backend(Backend::Scripted(transcript.into_iter().collect()), workload_len)
    }

    pub fn interactive(queue: Arc<LabelQueue>, workload_len: usize) -> Self {
        Self::with_backend(Backend::Interactive(queue), workload_len)
    }

    pub fn with_viewer(mut self, viewer: Arc<dyn PairViewer>) -> Self {
        self.viewer = Some(viewer);
        self
    }

    /// Restores answers recorded in `path` and appends new ones to it.
    pub fn with_journal(mut self, path: &Path) -> Result<Self> {
        let replayed = if path.exists() { read_journal(path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        {
            let state = self.state.get_mut().unwrap_or_else(|e| e.into_inner());
            for (id, label) in replayed {
                state.cache.entry(id).or_insert(label);
            }
            state.journal = Some(BufWriter::new(file));
        }
        self.journal_path = Some(path.to_path_buf());
        Ok(self)
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal_path.as_deref()
    }

    pub fn kind(&self) -> SourceKind {
        match self.backend {
            Backend::GroundTruth => SourceKind::GroundTruth,
            Backend::Scripted(_) => SourceKind::Scripted,
            Backend::Interactive(_) => SourceKind::Interactive,
        }
    }

    fn lock(&self) -> MutexGuard<'_, SourceState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn ask(&self, pair: &InstancePair, phase: Phase) -> Result<Label> {
        Ok(self.ask_batch(&[pair], phase)?[0])
    }

    /// Labels every pair; only pairs not seen before are charged. An
    /// interactive source queues all new pairs at once and blocks until
    /// each is answered.
    pub fn ask_batch(&self, pairs: &[&InstancePair], phase: Phase) -> Result<Vec<Label>> {
        let mut fresh: Vec<&InstancePair> = {
            let state = self.lock();
            pairs.iter().copied().filter(|p| !state.cache.contains_key(&p.id)).collect()
        };
        if !fresh.is_empty() {
            let mut seen = HashSet::with_capacity(fresh.len());
            fresh.retain(|p| seen.insert(p.id.as_str()));
            self.lock().progress.phase = Some(phase);
            let started = Instant::now();
            let answers = self.resolve(&fresh, phase);
            let waited = started.elapsed();
            let answers = answers?;
            let mut state = self.lock();
            state.waiting += waited;
            let stamp = unix_now();
            for (pair, label) in fresh.iter().zip(answers) {
                if state.cache.insert(pair.id.clone(), label).is_none() {
                    if let Some(journal) = state.journal.as_mut() {
                        append_journal(journal, &pair.id, label, stamp)?;
                    }
                }
            }
            if let Some(journal) = state.journal.as_mut() {
                journal.flush()?;
            }
        }
        let state = self.lock();
        Ok(pairs.iter().map(|p| state.cache[&p.id]).collect())
    }

    fn resolve(&self, pairs: &[&InstancePair], phase: Phase) -> Result<Vec<Label>> {
        match &self.backend {
            Backend::GroundTruth => pairs
                .iter()
                .map(|p| p.truth.ok_or_else(|| Error::contract(&p.id, "ground truth missing")))
                .collect(),
            Backend::Scripted(transcript) => pairs
                .iter()
                .map(|p| {
                    transcript
                        .get(&p.id)
                        .copied()
                        .ok_or_else(|| Error::Aborted(format!("transcript has no answer for `{}`", p.id)))
                })
                .collect(),
            Backend::Interactive(queue) => {
                let requests = pairs
                    .iter()
                    .map(|p| {
                        let (left, right) = self.viewer.as_ref().map(|v| v.view(p)).unwrap_or_default();
                        LabelRequest {
                            pair_id: p.id.clone(),
                            metric: p.metric,
                            left,
                            right,
                            phase,
                        }
                    })
                    .collect();
                queue.request(requests, |id, label| self.record(id, label))
            }
        }
    }

    /// Caches and journals one answer unless it is already known.
    fn record(&self, id: &str, label: Label) -> Result<()> {
        let mut state = self.lock();
        if state.cache.contains_key(id) {
            return Ok(());
        }
        state.cache.insert(id.to_string(), label);
        if let Some(journal) = state.journal.as_mut() {
            append_journal(journal, id, label, unix_now())?;
            journal.flush()?;
        }
        Ok(())
    }

    /// Cached label, without asking.
    pub fn known(&self, id: &str) -> Option<Label> {
        self.lock().cache.get(id).copied()
    }

    pub fn asked_count(&self) -> usize {
        self.lock().cache.len()
    }

    pub fn asked_ids(&self) -> Vec<String> {
        self.lock().cache.keys().cloned().collect()
    }

    pub fn human_cost(&self) -> HumanCost {
        let count = self.asked_count();
        HumanCost {
            count,
            fraction: if self.workload_len == 0 {
                0.0
            } else {
                count as f64 / self.workload_len as f64
            },
        }
    }

    /// Time spent waiting on the backend for answers.
    pub fn waiting_time(&self) -> Duration {
        self.lock().waiting
    }

    pub fn set_bounds(&self, lower: usize, upper: usize) {
        self.lock().progress.bounds = Some((lower, upper));
    }

    pub fn progress(&self) -> Progress {
        self.lock().progress.clone()
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn append_journal(journal: &mut BufWriter<File>, id: &str, label: Label, stamp: u64) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([id, &label.to_string(), &stamp.to_string()])?;
    let line = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    journal.write_all(&line)?;
    Ok(())
}

/// Reads `pair_id,label,timestamp` lines; the first answer for a pair wins.
pub fn read_journal(path: &Path) -> Result<Vec<(String, Label)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: row + 1,
            reason: e.to_string(),
        })?;
        let (Some(id), Some(label)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::Parse {
                line: row + 1,
                reason: "expected `pair_id,label,timestamp`".into(),
            });
        };
        let label = label.parse().map_err(|_| Error::Parse {
            line: row + 1,
            reason: format!("bad label `{label}`"),
        })?;
        out.push((id.to_string(), label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn pair(id: &str, truth: Option<Label>) -> InstancePair {
        InstancePair::new(id, 0.5, truth)
    }

    #[test]
    fn repeated_asks_are_free() {
        let s = LabelSource::ground_truth(10);
        let p = pair("a", Some(Label::Match));
        assert_eq!(s.ask(&p, Phase::Sampling).unwrap(), Label::Match);
        assert_eq!(s.ask(&p, Phase::Verification).unwrap(), Label::Match);
        assert_eq!(s.asked_count(), 1);
    }

    #[test]
    fn ground_truth_requires_truth() {
        let s = LabelSource::ground_truth(1);
        assert!(matches!(s.ask(&pair("x", None), Phase::Sampling), Err(Error::Contract { .. })));
        assert_eq!(s.asked_count(), 0);
    }

    #[test]
    fn scripted_answers_by_id() {
        let transcript: Vec<(String, Label)> = (0..5)
            .map(|i| (format!("p{i}"), Label::from_bool(i % 2 == 0)))
            .collect();
        let s = LabelSource::scripted(transcript.clone(), 5);
        let pairs: Vec<InstancePair> = [3, 0, 4, 1, 2].iter().map(|i| pair(&format!("p{i}"), None)).collect();
        for p in &pairs {
            let expected = transcript.iter().find(|(id, _)| *id == p.id).unwrap().1;
            assert_eq!(s.ask(p, Phase::Sampling).unwrap(), expected);
        }
        assert!(matches!(s.ask(&pair("zz", None), Phase::Sampling), Err(Error::Aborted(_))));
    }

    #[test]
    fn batch_accounting() {
        let s = LabelSource::ground_truth(100);
        assert!(s.ask_batch(&[], Phase::Sampling).unwrap().is_empty());
        assert_eq!(s.human_cost().count, 0);
        let pairs: Vec<InstancePair> = (0..5).map(|i| pair(&format!("p{i}"), Some(Label::from_bool(i < 2)))).collect();
        let refs: Vec<&InstancePair> = pairs.iter().collect();
        s.ask_batch(&refs[..3], Phase::Sampling).unwrap();
        assert_eq!(s.asked_count(), 3);
        let all = s.ask_batch(&refs, Phase::Verification).unwrap();
        assert_eq!(s.asked_count(), 5);
        let single: Vec<Label> = pairs.iter().map(|p| s.ask(p, Phase::Sampling).unwrap()).collect();
        assert_eq!(all, single);
    }

    #[test]
    fn human_cost_fraction() {
        let s = LabelSource::ground_truth(10_000);
        assert_eq!(s.human_cost(), HumanCost { count: 0, fraction: 0.0 });
        let pairs: Vec<InstancePair> = (0..700).map(|i| pair(&format!("p{i}"), Some(Label::Unmatch))).collect();
        let refs: Vec<&InstancePair> = pairs.iter().collect();
        s.ask_batch(&refs, Phase::Sampling).unwrap();
        assert_eq!(s.human_cost().count, 700);
        assert!((s.human_cost().fraction - 0.07).abs() < 1e-12);

        let s = LabelSource::ground_truth(700);
        s.ask_batch(&refs, Phase::Sampling).unwrap();
        assert_eq!(s.human_cost().fraction, 1.0);
    }

    #[test]
    fn interactive_blocks_until_answered() {
        let queue = LabelQueue::new();
        let source = Arc::new(LabelSource::interactive(queue.clone(), 3));
        let worker = {
            let source = source.clone();
            thread::spawn(move || {
                let pairs = [pair("a", None), pair("b", None)];
                let refs: Vec<&InstancePair> = pairs.iter().collect();
                source.ask_batch(&refs, Phase::Verification)
            })
        };
        assert!(queue.wait_for_pending(Duration::from_secs(5)));
        while queue.pending_len() < 2 {
            thread::sleep(Duration::from_millis(1));
        }
        let pending = queue.pending(10);
        assert_eq!(pending.len(), 2);
        assert_eq!(pending[0].phase, Phase::Verification);
        assert_eq!(queue.answer("zzz", Label::Match), AnswerOutcome::Unknown);
        assert_eq!(queue.answer("b", Label::Match), AnswerOutcome::Accepted);
        assert_eq!(queue.answer("b", Label::Unmatch), AnswerOutcome::Duplicate);
        assert_eq!(queue.answer("a", Label::Unmatch), AnswerOutcome::Accepted);
        let labels = worker.join().unwrap().unwrap();
        assert_eq!(labels, vec![Label::Unmatch, Label::Match]);
        assert_eq!(source.asked_count(), 2);
    }

    #[test]
    fn closing_aborts_waiting_solver() {
        let queue = LabelQueue::new();
        let source = Arc::new(LabelSource::interactive(queue.clone(), 1));
        let worker = {
            let source = source.clone();
            thread::spawn(move || source.ask(&pair("a", None), Phase::Sampling))
        };
        assert!(queue.wait_for_pending(Duration::from_secs(5)));
        queue.close("user quit");
        assert!(matches!(worker.join().unwrap(), Err(Error::Aborted(_))));
        assert_eq!(source.asked_count(), 0);
    }

    #[test]
    fn journal_restores_cache() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.csv");
        let pairs: Vec<InstancePair> = ["x,1", "y"].iter().map(|id| pair(id, Some(Label::Match))).collect();
        {
            let s = LabelSource::ground_truth(2).with_journal(&path).unwrap();
            s.ask(&pairs[0], Phase::Sampling).unwrap();
            s.ask(&pairs[0], Phase::Sampling).unwrap();
            s.ask(&pairs[1], Phase::Sampling).unwrap();
        }
        let lines = std::fs::read_to_string(&path).unwrap();
        assert_eq!(lines.lines().count(), 2);
        // A scripted source with an empty transcript can only answer from the journal.
        let s = LabelSource::scripted(Vec::new(), 2).with_journal(&path).unwrap();
        assert_eq!(s.asked_count(), 2);
        assert_eq!(s.ask(&pairs[0], Phase::Sampling).unwrap(), Label::Match);
        assert_eq!(read_journal(&path).unwrap().len(), 2);
    }

    #[test]
    fn interactive_answers_are_journaled_as_they_arrive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.csv");
        let queue = LabelQueue::new();
        let source = Arc::new(LabelSource::interactive(queue.clone(), 3).with_journal(&path).unwrap());
        let worker = {
            let source = source.clone();
            thread::spawn(move || {
                let pairs = [pair("a", None), pair("b", None), pair("c", None)];
                let refs: Vec<&InstancePair> = pairs.iter().collect();
                source.ask_batch(&refs, Phase::Verification)
            })
        };
        while queue.pending_len() < 3 {
            thread::sleep(Duration::from_millis(1));
        }
        assert_eq!(queue.answer("b", Label::Match), AnswerOutcome::Accepted);
        while source.asked_count() < 1 {
            thread::sleep(Duration::from_millis(1));
        }
        // Killed mid-batch: the one answer given survives.
        queue.close("killed");
        assert!(worker.join().unwrap().is_err());
        assert_eq!(read_journal(&path).unwrap(), vec![("b".to_string(), Label::Match)]);
        let resumed = LabelSource::interactive(LabelQueue::new(), 3).with_journal(&path).unwrap();
        assert_eq!(resumed.known("b"), Some(Label::Match));
    }
}
