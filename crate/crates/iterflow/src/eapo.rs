//! Trajectory batches to training corpus: discounted rewards, per-round
//! decomposition, group-normalized advantages, adaptive downsampling, and
//! the clipped sequence-level surrogate evaluated on externally supplied
//! likelihood ratios. No gradients here — the pipeline stops at the corpus
//! so the artifact stays trainer-agnostic.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::Termination;
use crate::orchestrator::RolloutBatch;
use crate::policy::{PolicyProvider, PolicyRequest};
use crate::template::{render_workspace, PromptTemplate};

pub const DEFAULT_GAMMA: f64 = 0.995;
pub const DEFAULT_EPSILON: f64 = 0.2;
pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EapoError {
    #[error("gamma must lie in (0, 1], got {0}")]
    BadGamma(f64),
    #[error("trajectory {0} is unjudged: gold answer unavailable")]
    Unjudged(String),
    #[error("judgement unavailable: {0}")]
    JudgementUnavailable(String),
    #[error("judge emitted an unrecognized verdict: '{0}'")]
    BadVerdict(String),
    #[error("corpus i/o failure after {written} records: {source}")]
    Io { written: usize, source: std::io::Error },
    #[error("corpus parse failure: {0}")]
    Parse(String),
}

/// How terminal correctness is decided.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    ExactMatch,
    LlmJudge { endpoint: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardSpec {
    pub gamma: f64,
    pub judge: JudgeKind,
}

impl RewardSpec {
    pub fn new(gamma: f64, judge: JudgeKind) -> Result<Self, EapoError> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(EapoError::BadGamma(gamma));
        }
        Ok(Self { gamma, judge })
    }
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA, judge: JudgeKind::ExactMatch }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub question_id: String,
    pub rollout_id: u32,
    pub round: u32,
    pub group_id: String,
    pub prompt: String,
    pub completion: String,
    pub reward: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mu_r: f64,
    pub sigma_r: f64,
}

/// All per-round samples from the G rollouts of one question — the unit
/// over which advantages are normalized.
#[derive(Debug, Clone)]
pub struct SampleGroup {
    pub question_id: String,
    pub samples: Vec<TrainingSample>,
    pub stats: Option<GroupStats>,
}

/// Normalizes an answer for strict comparison: case-fold, trim, collapse
/// whitespace, strip terminal punctuation.
fn normalize_answer(s: &str) -> String {
    let lowered = s.trim().to_lowercase();
    let collapsed: String = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | '!' | '?' | ',' | ';' | ':'))
        .to_string()
}

/// Answer judge backed by a text-generation provider.
pub struct LlmJudge {
    pub provider: Arc<dyn PolicyProvider>,
    /// Template with `{question}`, `{answer}`, `{gold}` placeholders.
    pub template: String,
}

pub const DEFAULT_JUDGE_TEMPLATE: &str = "You are grading an answer.\n\
    Question: {question}\nReference answer: {gold}\nCandidate answer: {answer}\n\
    Reply with exactly one word: correct or incorrect.";

impl LlmJudge {
    pub fn judge(&self, question: &str, answer: &str, gold: &str) -> Result<bool, EapoError> {
        let prompt = self
            .template
            .replace("{question}", question)
            .replace("{answer}", answer)
            .replace("{gold}", gold);
        let resp = self
            .provider
            .complete(&PolicyRequest::from_prompt(prompt, 0.0, None))
            .map_err(|e| EapoError::JudgementUnavailable(e.to_string()))?;
        match resp.content.trim().to_lowercase().as_str() {
            "correct" => Ok(true),
            "incorrect" => Ok(false),
            other => Err(EapoError::BadVerdict(other.to_string())),
        }
    }
}

/// Runtime judge: the exact-match comparator or an LLM-backed verdict.
pub enum Judge {
    ExactMatch,
    Llm(LlmJudge),
}

impl Judge {
    pub fn verdict(&self, question: &str, answer: &str, gold: &str) -> Result<bool, EapoError> {
        match self {
            Judge::ExactMatch => Ok(normalize_answer(answer) == normalize_answer(gold)),
            Judge::Llm(j) => j.judge(question, answer, gold),
        }
    }
}

/// Binary terminal reward: 1.0 if the judge deems the answer correct.
pub fn terminal_reward(answer: &str, gold: &str, judge: &Judge) -> Result<f64, EapoError> {
    terminal_reward_for(" ", answer, gold, judge)
}

pub fn terminal_reward_for(
    question: &str,
    answer: &str,
    gold: &str,
    judge: &Judge,
) -> Result<f64, EapoError> {
    Ok(if judge.verdict(question, answer, gold)? { 1.0 } else { 0.0 })
}

/// Geometrically discounted per-round rewards: element t (1-based) equals
/// `gamma^(T-t) * r_terminal`. Computed by the backward recurrence
/// `r_t = gamma * r_{t+1}`, which therefore holds exactly.
pub fn discounted_rewards(t_len: usize, r_terminal: f64, gamma: f64) -> Vec<f64> {
    assert!(t_len >= 1, "trajectory length must be at least 1");
    let mut rewards = vec![0.0; t_len];
    rewards[t_len - 1] = r_terminal;
    for t in (0..t_len - 1).rev() {
        rewards[t] = gamma * rewards[t + 1];
    }
    rewards
}

/// Judges every trajectory of a batch against the question's gold answer.
/// Failed-parse trajectories are judged like any other (their forced or
/// diagnostic answers simply lose), so keeping them contributes R_T = 0.
pub fn judge_batch(batch: &RolloutBatch, judge: &Judge) -> Result<Vec<f64>, EapoError> {
    let gold = batch
        .question
        .gold_answer
        .as_deref()
        .ok_or_else(|| EapoError::Unjudged(batch.question.id.clone()))?;
    batch
        .trajectories
        .iter()
        .map(|t| terminal_reward_for(&batch.question.text, &t.final_answer, gold, judge))
        .collect()
}

/// Decomposes a judged batch into one training sample per round, with
/// rewards per the geometric discounting scheme. `terminal_rewards` must
/// align with `batch.trajectories`.
pub fn decompose(
    batch: &RolloutBatch,
    terminal_rewards: &[f64],
    spec: &RewardSpec,
    template: &PromptTemplate,
    keep_failed: bool,
) -> Result<SampleGroup, EapoError> {
    if terminal_rewards.len() != batch.trajectories.len() {
        return Err(EapoError::Unjudged(batch.question.id.clone()));
    }
    let mut samples = Vec::new();
    for (trajectory, &r_terminal) in batch.trajectories.iter().zip(terminal_rewards) {
        if trajectory.termination == Termination::Failed && !keep_failed {
            continue;
        }
        let t_len = trajectory.length();
        if t_len == 0 {
            continue;
        }
        let rewards = discounted_rewards(t_len, r_terminal, spec.gamma);
        for (idx, round) in trajectory.rounds.iter().enumerate() {
            let prompt = match &round.workspace {
                Some(ws) => render_workspace(ws, template),
                None => String::new(),
            };
            samples.push(TrainingSample {
                question_id: batch.question.id.clone(),
                rollout_id: trajectory.rollout_id,
                round: (idx + 1) as u32,
                group_id: batch.question.id.clone(),
                prompt,
                completion: round.decision.raw.clone(),
                reward: rewards[idx],
                advantage: 0.0,
            });
        }
    }
    Ok(SampleGroup { question_id: batch.question.id.clone(), samples, stats: None })
}

/// Group-relative standardization: advantage = (r - mu) / sigma with the
/// population standard deviation over all samples in the group. A
/// zero-variance group gets all-zero advantages.
pub fn normalize_advantages(mut group: SampleGroup) -> SampleGroup {
    let n = group.samples.len();
    if n == 0 {
        return group;
    }
    let mu = group.samples.iter().map(|s| s.reward).sum::<f64>() / n as f64;
    let var =
        group.samples.iter().map(|s| (s.reward - mu).powi(2)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    for s in &mut group.samples {
        s.advantage = if sigma > 0.0 { (s.reward - mu) / sigma } else { 0.0 };
    }
    group.stats = Some(GroupStats { mu_r: mu, sigma_r: sigma });
    group
}

/// Indices kept by adaptive downsampling: the largest multiple of
/// `dp_size`, with removals drawn uniformly at random under `seed`.
/// Returned indices are sorted. Deterministic per seed.
pub fn downsample_indices(len: usize, dp_size: usize, seed: u64) -> Vec<usize> {
    assert!(dp_size >= 1, "dp_size must be at least 1");
    let keep = (len / dp_size) * dp_size;
    if keep == 0 {
        eprintln!(
            "warning: corpus of {len} samples is smaller than dp_size {dp_size}; whole batch dropped"
        );
        return Vec::new();
    }
    let drop_count = len - keep;
    if drop_count == 0 {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropped = rand::seq::index::sample(&mut rng, len, drop_count).into_vec();
    dropped.sort_unstable();
    let mut out = Vec::with_capacity(keep);
    let mut drop_iter = dropped.into_iter().peekable();
    for i in 0..len {
        if drop_iter.peek() == Some(&i) {
            drop_iter.next();
        } else {
            out.push(i);
        }
    }
    out
}

/// Trims the corpus to the largest multiple of the data-parallel width.
pub fn downsample(
    corpus: Vec<TrainingSample>,
    dp_size: usize,
    seed: u64,
) -> Vec<TrainingSample> {
    let keep = downsample_indices(corpus.len(), dp_size, seed);
    let mut keep_iter = keep.into_iter().peekable();
    corpus
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| {
            if keep_iter.peek() == Some(&i) {
                keep_iter.next();
                Some(s)
            } else {
                None
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SurrogateInput {
    /// Sequence likelihood ratio, finite and positive.
    pub rho: f64,
    pub advantage: f64,
    /// Clip range, > 0.
    pub epsilon: f64,
}

/// The clipped sequence-level surrogate term:
/// `min(rho * A, clip(rho, 1-eps, 1+eps) * A)`.
pub fn surrogate_term(input: SurrogateInput) -> f64 {
    debug_assert!(input.rho.is_finite() && input.rho > 0.0);
    debug_assert!(input.epsilon > 0.0);
    let clipped = input.rho.clamp(1.0 - input.epsilon, 1.0 + input.epsilon);
    (input.rho * input.advantage).min(clipped * input.advantage)
}

/// Self-describing corpus header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub schema_version: u32,
    pub gamma: f64,
    pub dp_size: usize,
    pub seed: u64,
    pub template_id: String,
}

/// Writes groups as line-delimited JSON behind a header record. Field
/// order is stable, so identical inputs re-emit byte-identical files.
pub fn emit_corpus(
    groups: &[SampleGroup],
    header: &CorpusHeader,
    sink: &mut dyn Write,
) -> Result<usize, EapoError> {
    let mut written = 0usize;
    let mut write_line = |line: String, written: &mut usize| -> Result<(), EapoError> {
        sink.write_all(line.as_bytes())
            .and_then(|_| sink.write_all(b"\n"))
            .map_err(|e| EapoError::Io { written: *written, source: e })
    };
    write_line(serde_json::to_string(header).expect("header serializes"), &mut written)?;
    for group in groups {
        for sample in &group.samples {
            write_line(serde_json::to_string(sample).expect("sample serializes"), &mut written)?;
            written += 1;
        }
    }
    Ok(written)
}

/// Reads back a corpus emitted by `emit_corpus`.
pub fn read_corpus(
    source: &mut dyn BufRead,
) -> Result<(CorpusHeader, Vec<TrainingSample>), EapoError> {
    let mut lines = source.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| EapoError::Parse("empty corpus file".into()))?
        .map_err(|e| EapoError::Parse(e.to_string()))?;
    let header: CorpusHeader =
        serde_json::from_str(&header_line).map_err(|e| EapoError::Parse(e.to_string()))?;
    let mut samples = Vec::new();
    for line in lines {
        let line = line.map_err(|e| EapoError::Parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(serde_json::from_str(&line).map_err(|e| EapoError::Parse(e.to_string()))?);
    }
    Ok((header, samples))
}

/// Fraction of rollouts a question was answered correctly — the
/// difficulty-calibration signal used for dataset curation.
pub fn success_rate(terminal_rewards: &[f64]) -> f64 {
    if terminal_rewards.is_empty() {
        return 0.0;
    }
    terminal_rewards.iter().sum::<f64>() / terminal_rewards.len() as f64
}
