//! Shared fixture builder and independent reference implementations for the
//! integration tests. Nothing here calls into the library's scoring,
//! rendering or metric code.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const SEED_CORPUS: &str = include_str!("../../data/seed_corpus.txt");

pub struct FixturePrompt {
    pub id: &'static str,
    pub category: &'static str,
    pub body: &'static str,
    pub has_choices: bool,
    pub is_mcq: bool,
    pub is_training_prompt: bool,
    pub has_extra_text: bool,
}

pub const PROMPTS: [FixturePrompt; 5] = [
    FixturePrompt {
        id: "wic_generalized",
        category: "Entailment",
        body: "Sentence A: {{premise}} Sentence B: {{hypothesis}} \"{{domain}}\" has a similar meaning in sentences A and B. {{choice_string}}?",
        has_choices: true,
        is_mcq: false,
        is_training_prompt: true,
        has_extra_text: true,
    },
    FixturePrompt {
        id: "implies_mcq",
        category: "Entailment",
        body: "{{premise}} Question: does this imply \"{{ hypothesis }}\"? {{choice_string}} Answer:",
        has_choices: true,
        is_mcq: true,
        is_training_prompt: false,
        has_extra_text: false,
    },
    FixturePrompt {
        id: "topic_extra",
        category: "Classification",
        body: "Read the following text about {{domain}}: {{premise}} The topic is",
        has_choices: false,
        is_mcq: false,
        is_training_prompt: true,
        has_extra_text: true,
    },
    FixturePrompt {
        id: "qa_pick",
        category: "QA",
        body: "Question: {{premise}} Pick one of {{choice_string}}. Answer:",
        has_choices: true,
        is_mcq: false,
        is_training_prompt: false,
        has_extra_text: false,
    },
    FixturePrompt {
        id: "summary_plain",
        category: "Classification",
        body: "{{premise}} In summary, this text is about",
        has_choices: false,
        is_mcq: false,
        is_training_prompt: false,
        has_extra_text: false,
    },
];

pub struct FixtureTask {
    pub id: &'static str,
    pub category: &'static str,
    pub choices: &'static [&'static str],
    /// task field -> placeholder
    pub field_map: &'static [(&'static str, &'static str)],
    /// placeholder -> literal
    pub extra_text: &'static [(&'static str, &'static str)],
}

pub const TASKS: [FixtureTask; 3] = [
    FixtureTask {
        id: "entail",
        category: "Entailment",
        choices: &["yes", "no", "maybe"],
        field_map: &[("premise", "premise"), ("hypothesis", "hypothesis")],
        extra_text: &[("domain", "meaning")],
    },
    FixtureTask {
        id: "topic",
        category: "Classification",
        choices: &["sports", "politics", "science", "music"],
        field_map: &[("text", "premise")],
        extra_text: &[("hypothesis", "this text"), ("domain", "news")],
    },
    FixtureTask {
        id: "colour_qa",
        category: "QA",
        choices: &["red", "blue"],
        field_map: &[("question", "premise")],
        extra_text: &[("hypothesis", "the answer"), ("domain", "colours")],
    },
];

const WORDS: &[&str] = &[
    "the", "team", "won", "a", "vote", "on", "new", "energy", "law", "band", "played", "loud", "music", "cells",
    "divide", "quickly", "sky", "is", "clear", "today", "players", "scored", "late", "in", "match", "senate",
    "passed", "budget", "rocks", "form", "under", "pressure", "song", "reached", "top", "chart",
];

fn sentence(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    let text = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ");
    format!("{}{}.", text[..1].to_uppercase(), &text[1..])
}

/// Example records of one task: (id, fields in record order, gold).
pub fn examples(task: &FixtureTask, n: usize, seed: u64) -> Vec<(String, Vec<(String, String)>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let fields: Vec<(String, String)> = task
                .field_map
                .iter()
                .map(|(f, _)| (f.to_string(), sentence(&mut rng, 3, 9)))
                .collect();
            let gold = rng.gen_range(0..task.choices.len());
            (format!("{}-{i:03}", task.id), fields, gold)
        })
        .collect()
}

pub fn task_jsonl(task: &FixtureTask, n: usize, seed: u64) -> String {
    let mut out = json!({"id": task.id, "category": task.category, "choices": task.choices}).to_string();
    out.push('\n');
    for (id, fields, gold) in examples(task, n, seed) {
        let fields: serde_json::Map<String, Value> = fields.into_iter().map(|(k, v)| (k, Value::String(v))).collect();
        out.push_str(&json!({"id": id, "fields": fields, "gold_index": gold}).to_string());
        out.push('\n');
    }
    out
}

pub fn prompts_jsonl() -> String {
    PROMPTS
        .iter()
        .map(|p| {
            json!({
                "id": p.id,
                "source_task": "fixture",
                "category": p.category,
                "body": p.body,
                "attributes": {
                    "has_choices": p.has_choices,
                    "is_mcq": p.is_mcq,
                    "is_training_prompt": p.is_training_prompt,
                    "has_extra_text": p.has_extra_text,
                }
            })
            .to_string()
                + "\n"
        })
        .collect()
}

/// One rule per (template category, task category), keyed on the task side.
pub fn rules_json() -> String {
    let mut rules = Vec::new();
    for template_category in ["Classification", "Entailment", "QA"] {
        for task in &TASKS {
            let field_map: serde_json::Map<String, Value> =
                task.field_map.iter().map(|(f, p)| (f.to_string(), json!(p))).collect();
            let extra: serde_json::Map<String, Value> =
                task.extra_text.iter().map(|(p, t)| (p.to_string(), json!(t))).collect();
            rules.push(json!({
                "template_category": template_category,
                "task_category": task.category,
                "field_map": field_map,
                "extra_text": extra,
            }));
        }
    }
    serde_json::to_string_pretty(&json!({ "rules": rules })).unwrap()
}

pub const EXAMPLES_PER_TASK: usize = 20;

/// Writes prompts, rules and tasks into `dir` and returns the task paths in
/// fixture order.
pub fn write_inputs(dir: &Path) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("prompts.jsonl"), prompts_jsonl()).unwrap();
    std::fs::write(dir.join("rules.json"), rules_json()).unwrap();
    TASKS
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let p = dir.join(format!("{}.jsonl", t.id));
            std::fs::write(&p, task_jsonl(t, EXAMPLES_PER_TASK, 1000 + i as u64)).unwrap();
            p
        })
        .collect()
}

/// Writes a run config referencing the fixture inputs; returns its path.
pub fn write_config(dir: &Path, name: &str, tasks: &[PathBuf], extra: Value) -> PathBuf {
    let mut config = json!({
        "run_name": "fixture",
        "prompts": dir.join("prompts.jsonl"),
        "tasks": tasks,
        "rules": dir.join("rules.json"),
        "backend": {"kind": "ngram_toy"},
        "decision": "both",
        "out_dir": dir.join("runs"),
        "parallelism": 1,
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut config, extra) {
        base.extend(more);
    }
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

// ---------------------------------------------------------------------------
// Reference implementations
// ---------------------------------------------------------------------------

/// Overlapping occurrences of `needle` in `hay`.
fn occurrences(hay: &[u8], needle: &[u8]) -> u64 {
    hay.windows(needle.len()).filter(|w| *w == needle).count() as u64
}

/// Add-k log-probabilities of `continuation` after `context` under a
/// two-byte history, by scanning the corpus for every query.
pub fn brute_force_logprobs(corpus: &[u8], context: &str, continuation: &str, k: f64) -> Vec<f64> {
    let mut text = context.as_bytes().to_vec();
    let mut out = Vec::new();
    for &b in continuation.as_bytes() {
        let history: &[u8] = &text[text.len().saturating_sub(2)..];
        let mut gram = history.to_vec();
        gram.push(b);
        let c_hb = occurrences(corpus, &gram);
        // a history only counts where some byte follows it
        let c_h = if history.is_empty() {
            corpus.len() as u64
        } else {
            occurrences(&corpus[..corpus.len() - 1], history)
        };
        out.push(((c_hb as f64 + k) / (c_h as f64 + k * 256.0)).ln());
        text.push(b);
    }
    out
}

pub fn reference_choice_string(choices: &[&str], mcq: bool) -> String {
    if mcq {
        return choices
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}) {}", (b'A' + i as u8) as char, c))
            .collect::<Vec<_>>()
            .join(" ");
    }
    let quoted: Vec<String> = choices.iter().map(|c| format!("\"{c}\"")).collect();
    match quoted.len() {
        1 => quoted[0].clone(),
        n => format!("{} or {}", quoted[..n - 1].join(", "), quoted[n - 1]),
    }
}

/// Plain string substitution renderer.
pub fn reference_render(prompt: &FixturePrompt, task: &FixtureTask, fields: &[(String, String)]) -> String {
    let mut body = prompt.body.replace("{{ ", "{{").replace(" }}", "}}");
    for (field, placeholder) in task.field_map {
        let value = &fields.iter().find(|(f, _)| f == field).unwrap().1;
        body = body.replace(&format!("{{{{{placeholder}}}}}"), value);
    }
    for (placeholder, text) in task.extra_text {
        let fill = if prompt.has_extra_text { *text } else { "" };
        body = body.replace(&format!("{{{{{placeholder}}}}}"), fill);
    }
    let choice_string = if prompt.has_choices {
        reference_choice_string(task.choices, prompt.is_mcq)
    } else {
        String::new()
    };
    body.replace("{{choice_string}}", &choice_string)
}

/// First index of the maximum.
pub fn reference_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePrediction {
    pub example_id: String,
    pub eq1: usize,
    pub eq2: usize,
    pub logprobs: Vec<Vec<f64>>,
}

pub fn reference_predict(corpus: &[u8], context: &str, continuations: &[&str], id: &str) -> ReferencePrediction {
    let logprobs: Vec<Vec<f64>> = continuations
        .iter()
        .map(|c| brute_force_logprobs(corpus, context, c, 1.0))
        .collect();
    let sums: Vec<f64> = logprobs.iter().map(|l| l.iter().sum()).collect();
    let means: Vec<f64> = logprobs
        .iter()
        .zip(&sums)
        .map(|(l, s)| s / l.len() as f64)
        .collect();
    ReferencePrediction {
        example_id: id.to_string(),
        eq1: reference_argmax(&sums),
        eq2: reference_argmax(&means),
        logprobs,
    }
}

pub type Q = Ratio<i128>;

pub fn reference_accuracy(pairs: &[(usize, usize)]) -> Q {
    let correct = pairs.iter().filter(|(g, p)| g == p).count();
    Q::new(correct as i128, pairs.len() as i128)
}

/// Macro-F1 through per-class precision and recall (F1 = 0 when P + R = 0).
pub fn reference_macro_f1(pairs: &[(usize, usize)], classes: usize) -> Q {
    let mut total = Q::from_integer(0);
    for c in 0..classes {
        let tp = pairs.iter().filter(|&&(g, p)| g == c && p == c).count() as i128;
        let predicted = pairs.iter().filter(|&&(_, p)| p == c).count() as i128;
        let gold = pairs.iter().filter(|&&(g, _)| g == c).count() as i128;
        let precision = if predicted == 0 { Q::from_integer(0) } else { Q::new(tp, predicted) };
        let recall = if gold == 0 { Q::from_integer(0) } else { Q::new(tp, gold) };
        let denom = precision + recall;
        if denom != Q::from_integer(0) {
            total += Q::from_integer(2) * precision * recall / denom;
        }
    }
    total / Q::from_integer(classes as i128)
}

/// Average-tie fractional ranks (1 = highest value) by pairwise counting.
pub fn reference_ranks(values: &BTreeMap<String, Q>) -> BTreeMap<String, Q> {
    values
        .iter()
        .map(|(k, v)| {
            let greater = values.values().filter(|w| *w > v).count() as i128;
            let equal = values.values().filter(|w| *w == v).count() as i128;
            (k.clone(), Q::from_integer(greater) + Q::new(equal + 1, 2))
        })
        .collect()
}

/// Everything the oracle expects from a fixture run: per (prompt, task),
/// the predictions.
pub fn reference_matrix(
    corpus: &[u8],
    include_baseline: bool,
) -> BTreeMap<(String, String), Vec<(ReferencePrediction, usize)>> {
    let mut out = BTreeMap::new();
    for (ti, task) in TASKS.iter().enumerate() {
        let exs = examples(task, EXAMPLES_PER_TASK, 1000 + ti as u64);
        for prompt in &PROMPTS {
            let preds = exs
                .iter()
                .map(|(id, fields, gold)| {
                    let context = format!("{} ", reference_render(prompt, task, fields));
                    (reference_predict(corpus, &context, task.choices, id), *gold)
                })
                .collect();
            out.insert((prompt.id.to_string(), task.id.to_string()), preds);
        }
        if include_baseline {
            let preds = exs
                .iter()
                .map(|(id, fields, gold)| {
                    let joined: Vec<&str> = fields.iter().map(|(_, v)| v.as_str()).collect();
                    let context = format!("{} ", joined.join(" "));
                    (reference_predict(corpus, &context, task.choices, id), *gold)
                })
                .collect();
            out.insert(("no_prompt".to_string(), task.id.to_string()), preds);
        }
    }
    out
}

pub fn read_dir_files(dir: &Path, prefix: &str) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().to_string();
        if name.starts_with(prefix) && entry.path().is_file() {
            out.insert(name, std::fs::read(entry.path()).unwrap());
        }
    }
    out
}
