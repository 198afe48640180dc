//! Command-line surface: episode runs, rollout batches, corpus building,
//! the interaction-scaling sweep, and complexity accounting.
//!
//! Exit codes: 0 success, 2 config error, 3 backend unavailable,
//! 4 partial failures present.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};

use iterflow::config::Config;
use iterflow::eapo::{
    decompose, downsample, emit_corpus, judge_batch, normalize_advantages, CorpusHeader, Judge,
    JudgeKind, LlmJudge, RewardSpec, SampleGroup, CORPUS_SCHEMA_VERSION, DEFAULT_JUDGE_TEMPLATE,
};
use iterflow::mdp::{Question, Termination};
use iterflow::metrics::{account, scaling_sweep, summarize_run};
use iterflow::orchestrator::{
    run_episode, run_mono_episode, run_rollouts, EpisodeConfig, Paradigm, RolloutBatch,
};
use iterflow::policy::{HttpPolicy, PolicyProvider, ReplayPolicy};
use iterflow::store::{read_trajectory_dir, write_trajectory_file};
use iterflow::template::resolve_template;
use iterflow::tools::fixture::{FixtureCorpus, FixtureEnv};
use iterflow::tools::live::{LiveEnv, ReaderClient, SandboxClient, SearchClient};
use iterflow::tools::ToolEnvironment;

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "iterflow", about = "Bounded-workspace research runtime and corpus pipeline")]
struct Cli {
    /// Path to a TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode for a question (inline text or a questions file).
    Run {
        #[arg(long)]
        question: String,
        #[arg(long, default_value = "iter")]
        paradigm: String,
        #[arg(long, default_value_t = 32)]
        t_max: u32,
        #[arg(long, default_value = "fixture")]
        env: String,
        #[arg(long, default_value = "default-v1")]
        template: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replay raw decisions from a JSON file instead of a live backend.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        compact: bool,
    },
    /// Run G rollouts per question over a questions file.
    Batch {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long, default_value_t = 8)]
        g: u32,
        #[arg(long, default_value_t = 32)]
        t_max: u32,
        #[arg(long, default_value = "fixture")]
        env: String,
        #[arg(long, default_value = "default-v1")]
        template: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        compact: bool,
    },
    /// Build a training corpus from stored trajectories.
    Corpus {
        #[arg(long, name = "in")]
        r#in: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        dp_size: Option<usize>,
        #[arg(long, default_value = "exact")]
        judge: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interaction-scaling sweep over a questions file.
    Sweep {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long, value_delimiter = ',')]
        t_max_list: Option<Vec<u32>>,
        #[arg(long, default_value = "fixture")]
        env: String,
        #[arg(long, default_value = "default-v1")]
        template: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Complexity accounting over stored trajectories.
    Account {
        #[arg(long, name = "in")]
        r#in: PathBuf,
        #[arg(long)]
        limit: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn load_questions(path: &Path) -> Result<Vec<Question>, String> {
    #[derive(serde::Deserialize)]
    struct Row {
        id: String,
        text: String,
        #[serde(default)]
        gold_answer: Option<String>,
    }
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: Row = serde_json::from_str(line).map_err(|e| e.to_string())?;
        out.push(Question::new(row.id, row.text, row.gold_answer).map_err(|e| e.to_string())?);
    }
    if out.is_empty() {
        return Err("questions file is empty".into());
    }
    Ok(out)
}

fn build_policy(
    cfg: &Config,
    script: Option<&Path>,
) -> Result<Arc<dyn PolicyProvider>, String> {
    if let Some(path) = script {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let outputs: Vec<String> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        return Ok(Arc::new(ReplayPolicy::new(outputs)));
    }
    if cfg.backend.url.is_empty() {
        return Err("no policy backend configured: set ITERFLOW_BACKEND_URL, \
                    [backend].url in the config file, or pass --script"
            .into());
    }
    Ok(Arc::new(HttpPolicy::new(
        cfg.backend.url.clone(),
        cfg.backend.key.clone(),
        cfg.backend.model.clone(),
    )))
}

fn build_env(cfg: &Config, mode: &str) -> Result<Box<dyn ToolEnvironment>, String> {
    match mode {
        "fixture" => {
            let corpus = match &cfg.tools.fixture_dir {
                Some(dir) => FixtureCorpus::from_dir(Path::new(dir)).map_err(|e| e.to_string())?,
                None => FixtureCorpus::default(),
            };
            Ok(Box::new(
                FixtureEnv::new(corpus).with_response_cap(cfg.budgets.response_chars),
            ))
        }
        "live" => {
            let summarizer: Arc<dyn PolicyProvider> = Arc::new(HttpPolicy::new(
                cfg.backend.url.clone(),
                cfg.backend.key.clone(),
                cfg.backend.model.clone(),
            ));
            let mut env = LiveEnv::new(
                SearchClient::new(cfg.tools.search_url.clone(), cfg.tools.search_key.clone()),
                ReaderClient::new(cfg.tools.reader_url.clone(), cfg.tools.reader_key.clone()),
                SandboxClient::new(cfg.tools.sandbox_url.clone()),
                summarizer,
            );
            env.response_cap = cfg.budgets.response_chars;
            Ok(Box::new(env))
        }
        other => Err(format!("unknown env mode '{other}' (expected fixture|live)")),
    }
}

fn episode_config(
    cfg: &Config,
    template_id: &str,
    t_max: u32,
    seed: u64,
    paradigm: Paradigm,
) -> Result<EpisodeConfig, String> {
    let template = resolve_template(template_id).map_err(|e| e.to_string())?;
    let mut ec = EpisodeConfig::new(template).with_t_max(t_max);
    ec.paradigm = paradigm;
    ec.seed = seed;
    ec.temperature = cfg.backend.temperature;
    ec.report_budget = cfg.budgets.report_chars;
    ec.context_limit = cfg.budgets.context_limit;
    ec.tool_deadline = Duration::from_millis(cfg.tools.deadline_ms);
    Ok(ec)
}

fn parse_inline_question(spec: &str) -> Result<Question, String> {
    let path = Path::new(spec);
    if path.exists() {
        return load_questions(path).map(|mut qs| qs.remove(0));
    }
    Question::new("q0", spec, None).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match Config::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };

    match cli.command {
        Command::Run { question, paradigm, t_max, env, template, seed, out, script, compact } => {
            let question = match parse_inline_question(&question) {
                Ok(q) => q,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let paradigm = match paradigm.as_str() {
                "iter" => Paradigm::Iterative,
                "mono" => Paradigm::Mono,
                other => return fail(EXIT_CONFIG, format!("unknown paradigm '{other}'")),
            };
            let policy = match build_policy(&cfg, script.as_deref()) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_BACKEND, e),
            };
            let toolenv = match build_env(&cfg, &env) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let ec = match episode_config(&cfg, &template, t_max, seed, paradigm) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let trajectory = match paradigm {
                Paradigm::Iterative => run_episode(question, policy.as_ref(), toolenv.as_ref(), &ec),
                Paradigm::Mono => run_mono_episode(question, policy.as_ref(), toolenv.as_ref(), &ec),
            };
            println!(
                "termination={:?} rounds={} answer={}",
                trajectory.termination,
                trajectory.length(),
                trajectory.final_answer
            );
            if let Some(dir) = out {
                if let Err(e) = write_trajectory_file(&dir, &trajectory, compact) {
                    return fail(EXIT_CONFIG, e);
                }
            }
            if trajectory.termination == Termination::Failed {
                return ExitCode::from(EXIT_PARTIAL);
            }
            ExitCode::SUCCESS
        }

        Command::Batch { questions, g, t_max, env, template, seed, out, script, compact } => {
            let questions = match load_questions(&questions) {
                Ok(q) => q,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let policy = match build_policy(&cfg, script.as_deref()) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_BACKEND, e),
            };
            let toolenv = match build_env(&cfg, &env) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let ec = match episode_config(&cfg, &template, t_max, seed, Paradigm::Iterative) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let mut failures = 0usize;
            for question in questions {
                let batch = run_rollouts(question, policy.as_ref(), toolenv.as_ref(), &ec, g);
                for t in &batch.trajectories {
                    if t.termination == Termination::Failed {
                        failures += 1;
                    }
                    if let Err(e) = write_trajectory_file(&out, t, compact) {
                        return fail(EXIT_CONFIG, e);
                    }
                }
                println!(
                    "question={} rollouts={} avg_turns={:.2}",
                    batch.question.id,
                    batch.g,
                    batch.trajectories.iter().map(|t| t.length() as f64).sum::<f64>()
                        / batch.g as f64
                );
            }
            if failures > 0 {
                eprintln!("{failures} rollout(s) failed");
                return ExitCode::from(EXIT_PARTIAL);
            }
            ExitCode::SUCCESS
        }

        Command::Corpus { r#in, gamma, dp_size, judge, seed, out } => {
            let gamma = gamma.unwrap_or(cfg.eapo.gamma);
            let dp_size = dp_size.unwrap_or(cfg.eapo.dp_size);
            let judge_kind = match judge.as_str() {
                "exact" => JudgeKind::ExactMatch,
                "llm" => JudgeKind::LlmJudge { endpoint: cfg.backend.url.clone() },
                other => return fail(EXIT_CONFIG, format!("unknown judge '{other}'")),
            };
            let spec = match RewardSpec::new(gamma, judge_kind.clone()) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let judge = match &judge_kind {
                JudgeKind::ExactMatch => Judge::ExactMatch,
                JudgeKind::LlmJudge { endpoint } => {
                    if endpoint.is_empty() {
                        return fail(EXIT_BACKEND, "llm judge requires a configured backend url");
                    }
                    Judge::Llm(LlmJudge {
                        provider: Arc::new(HttpPolicy::new(
                            endpoint.clone(),
                            cfg.backend.key.clone(),
                            cfg.backend.model.clone(),
                        )),
                        template: DEFAULT_JUDGE_TEMPLATE.into(),
                    })
                }
            };
            let trajectories = match read_trajectory_dir(&r#in) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            if trajectories.is_empty() {
                return fail(EXIT_CONFIG, "no trajectories found");
            }
            let template_id = trajectories[0].template_id.clone();
            let template = match resolve_template(&template_id) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            // group trajectories by question into rollout batches
            let mut batches: Vec<RolloutBatch> = Vec::new();
            for t in trajectories {
                match batches.iter_mut().find(|b| b.question.id == t.question.id) {
                    Some(b) => {
                        b.trajectories.push(t);
                        b.g += 1;
                    }
                    None => batches.push(RolloutBatch {
                        question: t.question.clone(),
                        g: 1,
                        trajectories: vec![t],
                    }),
                }
            }
            let mut groups: Vec<SampleGroup> = Vec::new();
            for batch in &batches {
                let rewards = match judge_batch(batch, &judge) {
                    Ok(r) => r,
                    Err(e) => return fail(EXIT_BACKEND, e),
                };
                let group =
                    match decompose(batch, &rewards, &spec, &template, cfg.eapo.keep_failed) {
                        Ok(g) => g,
                        Err(e) => return fail(EXIT_CONFIG, e),
                    };
                groups.push(normalize_advantages(group));
            }
            // downsample the pooled corpus, then re-group for emission
            let pooled: Vec<_> = groups.into_iter().flat_map(|g| g.samples).collect();
            let kept = downsample(pooled, dp_size, seed);
            let mut regrouped: Vec<SampleGroup> = Vec::new();
            for s in kept {
                match regrouped.iter_mut().find(|g| g.question_id == s.group_id) {
                    Some(g) => g.samples.push(s),
                    None => regrouped.push(SampleGroup {
                        question_id: s.group_id.clone(),
                        samples: vec![s],
                        stats: None,
                    }),
                }
            }
            let header = CorpusHeader {
                schema_version: CORPUS_SCHEMA_VERSION,
                gamma,
                dp_size,
                seed,
                template_id,
            };
            let mut file = match std::fs::File::create(&out) {
                Ok(f) => f,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            match emit_corpus(&regrouped, &header, &mut file) {
                Ok(n) => {
                    println!("wrote {n} samples to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_PARTIAL, e),
            }
        }

        Command::Sweep { questions, t_max_list, env, template, seed, out, script } => {
            let questions = match load_questions(&questions) {
                Ok(q) => q,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let t_max_list = t_max_list.unwrap_or_else(|| cfg.sweep.t_max_list.clone());
            let policy = match build_policy(&cfg, script.as_deref()) {
                Ok(p) => p,
                Err(e) => return fail(EXIT_BACKEND, e),
            };
            let toolenv = match build_env(&cfg, &env) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let ec = match episode_config(&cfg, &template, 32, seed, Paradigm::Iterative) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let results = match scaling_sweep(
                &questions,
                policy.as_ref(),
                toolenv.as_ref(),
                &t_max_list,
                &ec,
                &Judge::ExactMatch,
                cfg.sweep.workers,
            ) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_BACKEND, e),
            };
            let body = results
                .iter()
                .map(|r| serde_json::to_string(r).expect("result serializes"))
                .collect::<Vec<_>>()
                .join("\n");
            if let Err(e) = std::fs::write(&out, body + "\n") {
                return fail(EXIT_CONFIG, e);
            }
            for r in &results {
                println!(
                    "t_max={} accuracy={:.3} average_turns={:.2}",
                    r.t_max, r.accuracy, r.average_turns
                );
            }
            ExitCode::SUCCESS
        }

        Command::Account { r#in, limit, out } => {
            let trajectories = match read_trajectory_dir(&r#in) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            if trajectories.is_empty() {
                return fail(EXIT_CONFIG, "no trajectories found");
            }
            let correct: Vec<bool> = trajectories
                .iter()
                .map(|t| match (&t.question.gold_answer, &t.final_answer) {
                    (Some(gold), answer) => {
                        Judge::ExactMatch.verdict(&t.question.text, answer, gold).unwrap_or(false)
                    }
                    _ => false,
                })
                .collect();
            let summary = summarize_run(&trajectories, &correct);
            let ledgers: Vec<_> = trajectories.iter().map(|t| account(t, limit)).collect();
            let mut lines = vec![serde_json::to_string(&summary).expect("summary serializes")];
            lines.extend(
                ledgers.iter().map(|l| serde_json::to_string(l).expect("ledger serializes")),
            );
            if let Err(e) = std::fs::write(&out, lines.join("\n") + "\n") {
                return fail(EXIT_CONFIG, e);
            }
            println!(
                "trajectories={} avg_turns={:.2} avg_rendered={:.0}",
                trajectories.len(),
                summary.avg_turns,
                summary.avg_rendered_chars
            );
            ExitCode::SUCCESS
        }
    }
}
