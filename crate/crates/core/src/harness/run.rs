use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{LoadedInputs, RunConfig};
use super::store::{read_json, write_atomic, write_json, write_jsonl, Manifest, PromptInfo, RunDir, TIMING_FILE, MANIFEST_FILE};
use super::{HarnessError, EXIT_BACKEND, EXIT_OK, EXIT_VALIDATION};
use crate::metrics::{evaluate, EvalResult, MetricError};
use crate::scoring::{
    baseline_context, continuations, predict_with_context, template_context, PredictError, Prediction,
    ScoringBackend,
};
use crate::task::FixedChoiceTask;
use crate::template::{prompt_token_length, shared_token_count, PromptTemplate, BASELINE_PROMPT_ID};

/// Why a (prompt, task) pair could not be evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCause {
    pub kind: String,
    pub message: String,
}

impl FailureCause {
    fn from_predict(e: &PredictError) -> Self {
        let kind = match e {
            _ if e.is_backend_failure() => "backend_unavailable",
            PredictError::Template(_) => "template",
            PredictError::Task(_) => "task",
            PredictError::Score(_) => "score",
        };
        Self {
            kind: kind.into(),
            message: e.to_string(),
        }
    }

    pub fn is_backend_failure(&self) -> bool {
        self.kind == "backend_unavailable"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PairOutcome {
    Ok {
        predictions: Vec<Prediction>,
        results: Vec<EvalResult>,
    },
    Failed {
        error: FailureCause,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub prompt_id: String,
    pub task_id: String,
    #[serde(flatten)]
    pub outcome: PairOutcome,
}

impl PairRecord {
    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, PairOutcome::Ok { .. })
    }
}

/// Everything a finished `eval` produced.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config_hash: String,
    pub run_dir: RunDir,
    /// ordered by (prompt_id, task_id)
    pub pairs: Vec<PairRecord>,
    /// pairs loaded from a previous invocation instead of being scored
    pub resumed: usize,
    pub elapsed_ms: u128,
}

impl RunRecord {
    pub fn failures(&self) -> impl Iterator<Item = (&PairRecord, &FailureCause)> {
        self.pairs.iter().filter_map(|p| match &p.outcome {
            PairOutcome::Failed { error } => Some((p, error)),
            PairOutcome::Ok { .. } => None,
        })
    }

    pub fn results(&self) -> impl Iterator<Item = &EvalResult> {
        self.pairs.iter().flat_map(|p| match &p.outcome {
            PairOutcome::Ok { results, .. } => results.as_slice(),
            PairOutcome::Failed { .. } => &[],
        })
    }

    pub fn exit_code(&self) -> i32 {
        let mut code = EXIT_OK;
        for (_, cause) in self.failures() {
            if cause.is_backend_failure() {
                return EXIT_BACKEND;
            }
            code = EXIT_VALIDATION;
        }
        code
    }
}

#[derive(Clone, Copy)]
enum Entrant<'a> {
    Template(&'a PromptTemplate),
    Baseline,
}

impl Entrant<'_> {
    fn id(&self) -> &str {
        match self {
            Entrant::Template(t) => &t.id,
            Entrant::Baseline => BASELINE_PROMPT_ID,
        }
    }
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    prompt_id: &'a str,
    task_id: &'a str,
    #[serde(flatten)]
    prediction: &'a Prediction,
}

#[derive(Serialize)]
struct FailureRow<'a> {
    prompt_id: &'a str,
    task_id: &'a str,
    #[serde(flatten)]
    error: &'a FailureCause,
}

fn evaluate_pair(
    backend: &dyn ScoringBackend,
    entrant: Entrant<'_>,
    task: &FixedChoiceTask,
    inputs: &LoadedInputs,
    config: &RunConfig,
) -> PairOutcome {
    let predictions = (|| -> Result<Vec<Prediction>, PredictError> {
        let predictions: Vec<Result<Prediction, PredictError>> = match entrant {
            Entrant::Template(template) => {
                let rule = inputs.rules.lookup(template.category, task.category)?;
                rule.check_covers(template)?;
                let format = config.choice_format.format_for(template);
                let conts = continuations(task, format, config.mcq_target)?;
                task.examples()
                    .par_iter()
                    .map(|ex| {
                        let context = template_context(template, rule, task, ex, format)?;
                        Ok(predict_with_context(backend, &context, &conts, ex)?)
                    })
                    .collect()
            }
            Entrant::Baseline => {
                let conts = task.choices().to_vec();
                task.examples()
                    .par_iter()
                    .map(|ex| Ok(predict_with_context(backend, &baseline_context(ex), &conts, ex)?))
                    .collect()
            }
        };
        // the first failing example in file order decides the recorded cause
        predictions.into_iter().collect()
    })();
    let predictions = match predictions {
        Ok(p) => p,
        Err(e) => {
            return PairOutcome::Failed {
                error: FailureCause::from_predict(&e),
            }
        }
    };
    let results = config
        .decision
        .decisions()
        .into_iter()
        .map(|d| evaluate(entrant.id(), task, &predictions, d))
        .collect::<Result<Vec<_>, MetricError>>();
    match results {
        Ok(results) => PairOutcome::Ok { predictions, results },
        Err(e) => PairOutcome::Failed {
            error: FailureCause {
                kind: "metric".into(),
                message: e.to_string(),
            },
        },
    }
}

fn prompt_infos(inputs: &LoadedInputs) -> Vec<PromptInfo> {
    let vocab = inputs.prompts.training_vocab();
    inputs
        .prompts
        .iter()
        .map(|t| PromptInfo {
            prompt_id: t.id.clone(),
            source_task: t.source_task.clone(),
            category: t.category,
            attributes: t.attributes,
            length: prompt_token_length(t),
            shared_tokens: shared_token_count(t, &vocab),
        })
        .collect()
}

/// Run directory a config evaluates into.
pub fn run_dir_for(config: &RunConfig) -> Result<RunDir, HarnessError> {
    let inputs = LoadedInputs::load(config)?;
    Ok(RunDir::new(&config.out_dir, &config.run_name, &inputs.config_hash(config)))
}

/// Evaluates the full matrix, resuming from any completed pair files in the
/// run directory.
pub fn run_eval(config: &RunConfig) -> Result<RunRecord, HarnessError> {
    let started = Instant::now();
    let inputs = LoadedInputs::load(config)?;
    let config_hash = inputs.config_hash(config);
    let run_dir = RunDir::new(&config.out_dir, &config.run_name, &config_hash);
    std::fs::create_dir_all(run_dir.pairs_dir()).map_err(|e| HarnessError::io(&run_dir.pairs_dir(), e))?;
    let backend = config.backend.build(inputs.corpus.as_deref())?;

    let mut entrants: Vec<Entrant<'_>> = inputs.prompts.iter().map(Entrant::Template).collect();
    if config.include_baseline {
        entrants.push(Entrant::Baseline);
    }
    let manifest = Manifest {
        run_name: config.run_name.clone(),
        config_hash: config_hash.clone(),
        backend: backend.describe(),
        decisions: config.decision.decisions(),
        primary_decision: config.decision.primary(),
        prompt_ids: entrants.iter().map(|e| e.id().to_string()).collect(),
        task_ids: inputs.tasks.iter().map(|t| t.id.clone()).collect(),
        analysis: config.analysis.clone(),
    };
    write_json(&run_dir.path.join(MANIFEST_FILE), &manifest)?;
    write_jsonl(&run_dir.prompts_file(), &prompt_infos(&inputs))?;

    let matrix: Vec<(Entrant<'_>, &FixedChoiceTask)> = entrants
        .iter()
        .flat_map(|e| inputs.tasks.iter().map(move |t| (*e, t)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;

    let outcomes: Vec<Result<(PairRecord, Option<u128>), HarnessError>> = pool.install(|| {
        matrix
            .par_iter()
            .map(|(entrant, task)| {
                let path = run_dir.pair_file(entrant.id(), &task.id);
                if path.is_file() {
                    let previous: PairRecord = read_json(&path)?;
                    if previous.is_ok() && previous.prompt_id == entrant.id() && previous.task_id == task.id {
                        return Ok((previous, None));
                    }
                }
                let t0 = Instant::now();
                let record = PairRecord {
                    prompt_id: entrant.id().to_string(),
                    task_id: task.id.clone(),
                    outcome: evaluate_pair(backend.as_ref(), *entrant, task, &inputs, config),
                };
                if record.is_ok() {
                    let mut text = serde_json::to_string(&record).expect("pair record serializes");
                    text.push('\n');
                    write_atomic(&path, text.as_bytes())?;
                } else if path.exists() {
                    std::fs::remove_file(&path).map_err(|e| HarnessError::io(&path, e))?;
                }
                Ok((record, Some(t0.elapsed().as_millis())))
            })
            .collect()
    });

    let mut pairs = Vec::with_capacity(outcomes.len());
    let mut timing = BTreeMap::new();
    let mut resumed = 0;
    for outcome in outcomes {
        let (record, ms) = outcome?;
        match ms {
            Some(ms) => {
                timing.insert(format!("{}/{}", record.prompt_id, record.task_id), ms);
            }
            None => resumed += 1,
        }
        pairs.push(record);
    }
    pairs.sort_by(|a, b| (&a.prompt_id, &a.task_id).cmp(&(&b.prompt_id, &b.task_id)));

    let mut results: Vec<&EvalResult> = Vec::new();
    let mut prediction_rows = Vec::new();
    let mut failure_rows = Vec::new();
    for p in &pairs {
        match &p.outcome {
            PairOutcome::Ok {
                predictions,
                results: r,
            } => {
                results.extend(r);
                prediction_rows.extend(predictions.iter().map(|prediction| PredictionRow {
                    prompt_id: &p.prompt_id,
                    task_id: &p.task_id,
                    prediction,
                }));
            }
            PairOutcome::Failed { error } => failure_rows.push(FailureRow {
                prompt_id: &p.prompt_id,
                task_id: &p.task_id,
                error,
            }),
        }
    }
    results.sort_by(|a, b| (&a.prompt_id, &a.task_id, a.decision).cmp(&(&b.prompt_id, &b.task_id, b.decision)));
    write_jsonl(&run_dir.metrics_file(), &results)?;
    write_jsonl(&run_dir.predictions_file(), &prediction_rows)?;
    write_jsonl(&run_dir.failures_file(), &failure_rows)?;

    let elapsed_ms = started.elapsed().as_millis();
    let timing_doc = serde_json::json!({
        "elapsed_ms": elapsed_ms,
        "parallelism": config.parallelism,
        "resumed_pairs": resumed,
        "pair_ms": timing,
    });
    write_json(&run_dir.path.join(TIMING_FILE), &timing_doc)?;

    for (p, cause) in pairs.iter().filter_map(|p| match &p.outcome {
        PairOutcome::Failed { error } => Some((p, error)),
        _ => None,
    }) {
        log::warn!("pair {}/{} failed: {}", p.prompt_id, p.task_id, cause.message);
    }

    Ok(RunRecord {
        config_hash,
        run_dir,
        pairs,
        resumed,
        elapsed_ms,
    })
}
