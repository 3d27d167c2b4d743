//! Fixed-choice tasks: one constant ordered choice set shared by every example.
//!
//! On disk a task is JSON Lines: a header record `{"id", "category", "choices"}`
//! followed by one `{"id", "fields", "gold_index"}` record per example.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::Category;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("example `{example}` has gold index {gold_index} but the task has {choices} choices")]
    BadGoldIndex {
        example: String,
        gold_index: usize,
        choices: usize,
    },
    #[error("duplicate choice `{0}`")]
    DuplicateChoice(String),
    #[error("task has no choices")]
    EmptyChoiceSet,
    #[error("task needs at least two choices, found {0}")]
    TooFewChoices(usize),
    #[error("choice {0} is an empty string")]
    EmptyChoice(usize),
    #[error("malformed record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("{0} choices cannot be lettered (limit 26)")]
    TooManyChoices(usize),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// One input instance: named text fields and the index of the gold choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub fields: IndexMap<String, String>,
    pub gold_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TaskHeader {
    id: String,
    category: Category,
    choices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedChoiceTask {
    pub id: String,
    pub category: Category,
    choices: Vec<String>,
    examples: Vec<Example>,
}

impl FixedChoiceTask {
    pub fn new(
        id: impl Into<String>,
        category: Category,
        choices: Vec<String>,
        examples: Vec<Example>,
    ) -> Result<Self, TaskError> {
        validate_choices(&choices)?;
        for ex in &examples {
            validate_example(ex, choices.len()).map_err(|e| match e {
                TaskError::MalformedRecord { message, .. } => TaskError::MalformedRecord { line: 0, message },
                other => other,
            })?;
        }
        Ok(Self {
            id: id.into(),
            category,
            choices,
            examples,
        })
    }

    pub fn choices(&self) -> &[String] {
        &self.choices
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn num_choices(&self) -> usize {
        self.choices.len()
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, TaskError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let (line, header) = lines.next().ok_or(TaskError::MalformedRecord {
            line: 1,
            message: "missing header record".into(),
        })?;
        let header: TaskHeader = serde_json::from_str(header).map_err(|e| TaskError::MalformedRecord {
            line,
            message: e.to_string(),
        })?;
        validate_choices(&header.choices)?;
        let c = header.choices.len();
        let mut examples = Vec::new();
        for (line, raw) in lines {
            let ex: Example = serde_json::from_str(raw).map_err(|e| TaskError::MalformedRecord {
                line,
                message: e.to_string(),
            })?;
            validate_example(&ex, c).map_err(|e| match e {
                TaskError::MalformedRecord { message, .. } => TaskError::MalformedRecord { line, message },
                other => other,
            })?;
            examples.push(ex);
        }
        Ok(Self {
            id: header.id,
            category: header.category,
            choices: header.choices,
            examples,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let header = TaskHeader {
            id: self.id.clone(),
            category: self.category,
            choices: self.choices.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(ex).expect("example serializes"));
            out.push('\n');
        }
        out
    }
}

fn validate_choices(choices: &[String]) -> Result<(), TaskError> {
    match choices.len() {
        0 => return Err(TaskError::EmptyChoiceSet),
        1 => return Err(TaskError::TooFewChoices(1)),
        _ => {}
    }
    let mut seen = HashSet::new();
    for (i, c) in choices.iter().enumerate() {
        if c.is_empty() {
            return Err(TaskError::EmptyChoice(i));
        }
        if !seen.insert(c.as_str()) {
            return Err(TaskError::DuplicateChoice(c.clone()));
        }
    }
    Ok(())
}

fn validate_example(ex: &Example, num_choices: usize) -> Result<(), TaskError> {
    if ex.gold_index >= num_choices {
        return Err(TaskError::BadGoldIndex {
            example: ex.id.clone(),
            gold_index: ex.gold_index,
            choices: num_choices,
        });
    }
    if ex.fields.is_empty() {
        return Err(TaskError::MalformedRecord {
            line: 0,
            message: format!("example `{}` has no fields", ex.id),
        });
    }
    Ok(())
}

pub fn load_task(path: &Path) -> Result<FixedChoiceTask, TaskError> {
    let text = fs::read_to_string(path).map_err(|e| TaskError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    FixedChoiceTask::parse_jsonl(&text)
}

pub fn save_task(task: &FixedChoiceTask, path: &Path) -> Result<(), TaskError> {
    fs::write(path, task.to_jsonl()).map_err(|e| TaskError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// How the choice set is presented inside a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceFormat {
    /// `"A", "B" or "C"`
    Plain,
    /// `A) yes B) no C) maybe`
    McqLetters,
}

/// Letter label for choice `index` (`A`..`Z`).
pub fn mcq_letter(index: usize) -> Result<char, TaskError> {
    if index >= 26 {
        return Err(TaskError::TooManyChoices(index + 1));
    }
    Ok((b'A' + index as u8) as char)
}

pub fn format_choice_string<S: AsRef<str>>(choices: &[S], format: ChoiceFormat) -> Result<String, TaskError> {
    match format {
        ChoiceFormat::Plain => {
            let quoted: Vec<String> = choices.iter().map(|c| format!("\"{}\"", c.as_ref())).collect();
            Ok(match quoted.split_last() {
                None => String::new(),
                Some((only, [])) => only.clone(),
                Some((last, init)) => format!("{} or {}", init.join(", "), last),
            })
        }
        ChoiceFormat::McqLetters => {
            if choices.len() > 26 {
                return Err(TaskError::TooManyChoices(choices.len()));
            }
            let parts = choices
                .iter()
                .enumerate()
                .map(|(i, c)| Ok(format!("{}) {}", mcq_letter(i)?, c.as_ref())))
                .collect::<Result<Vec<_>, TaskError>>()?;
            Ok(parts.join(" "))
        }
    }
}
