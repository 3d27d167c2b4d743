//! Generalized prompt templates: parsing, validation, alignment and rendering.
//!
//! A template body is free text with `{{name}}` placeholders (inner whitespace
//! is allowed and trimmed). Only four names exist: `premise`, `hypothesis`,
//! `domain` and `choice_string`. Task fields are routed into placeholders by an
//! [`AlignmentRule`] chosen by the (template category, task category) pair,
//! which may also fill a placeholder with a fixed piece of task-specific text.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::Example;

/// Prompt id reserved for the no-template baseline entrant.
pub const BASELINE_PROMPT_ID: &str = "no_prompt";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("unknown placeholder `{{{{{0}}}}}`")]
    UnknownPlaceholder(String),
    #[error("malformed placeholder syntax at byte {0}")]
    MalformedPlaceholder(usize),
    #[error("duplicate template id `{0}`")]
    DuplicateId(String),
    #[error("template `{0}` has no literal text outside its placeholders")]
    EmptyBody(String),
    #[error("template `{id}`: {reason}")]
    InvalidAttributes { id: String, reason: String },
    #[error("template id `{0}` is reserved")]
    ReservedId(String),
    #[error("malformed template record: {0}")]
    MalformedRecord(String),
    #[error("example `{example}` lacks field `{field}`")]
    MissingField { example: String, field: String },
    #[error("placeholder `{placeholder}` is not covered by the alignment rule")]
    UncoveredPlaceholder { placeholder: String },
    #[error("template `{0}` requires a nonempty choice string")]
    MissingChoiceString(String),
    #[error("template `{0}` has no choice_string placeholder but a choice string was given")]
    UnexpectedChoiceString(String),
    #[error("invalid alignment rule {template_category}->{task_category}: {reason}")]
    InvalidRule {
        template_category: Category,
        task_category: Category,
        reason: String,
    },
    #[error("no alignment rule for template category {0} and task category {1}")]
    NoAlignmentRule(Category, Category),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// The three standardized prompt/task categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(alias = "classification", alias = "CLASSIFICATION")]
    Classification,
    #[serde(alias = "entailment", alias = "ENTAILMENT")]
    Entailment,
    #[serde(rename = "QA", alias = "qa", alias = "Qa", alias = "QuestionAnswering")]
    Qa,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Classification => "Classification",
            Category::Entailment => "Entailment",
            Category::Qa => "QA",
        })
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "classification" => Ok(Category::Classification),
            "entailment" => Ok(Category::Entailment),
            "qa" | "questionanswering" => Ok(Category::Qa),
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Placeholder {
    Premise,
    Hypothesis,
    Domain,
    ChoiceString,
}

impl Placeholder {
    pub const ALL: [Placeholder; 4] = [
        Placeholder::Premise,
        Placeholder::Hypothesis,
        Placeholder::Domain,
        Placeholder::ChoiceString,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Premise => "premise",
            Placeholder::Hypothesis => "hypothesis",
            Placeholder::Domain => "domain",
            Placeholder::ChoiceString => "choice_string",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Boolean prompt properties used as ablation axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttributeSet {
    pub has_choices: bool,
    pub is_mcq: bool,
    pub is_training_prompt: bool,
    pub has_extra_text: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Slot(Placeholder),
}

/// Splits a body into literal runs and placeholders.
pub fn parse_body(body: &str) -> Result<Vec<Segment>, TemplateError> {
    let mut segments = Vec::new();
    let mut rest = body;
    let mut offset = 0;
    loop {
        let open = rest.find("{{");
        let stray_close = rest.find("}}");
        match (open, stray_close) {
            (None, None) => {
                if !rest.is_empty() {
                    segments.push(Segment::Literal(rest.to_string()));
                }
                return Ok(segments);
            }
            (None, Some(close)) => return Err(TemplateError::MalformedPlaceholder(offset + close)),
            (Some(open), Some(close)) if close < open => {
                return Err(TemplateError::MalformedPlaceholder(offset + close))
            }
            (Some(open), _) => {
                if open > 0 {
                    segments.push(Segment::Literal(rest[..open].to_string()));
                }
                let after = &rest[open + 2..];
                let close = after
                    .find("}}")
                    .ok_or(TemplateError::MalformedPlaceholder(offset + open))?;
                let name = after[..close].trim();
                let slot = Placeholder::from_name(name)
                    .ok_or_else(|| TemplateError::UnknownPlaceholder(name.to_string()))?;
                segments.push(Segment::Slot(slot));
                let consumed = open + 2 + close + 2;
                offset += consumed;
                rest = &rest[consumed..];
            }
        }
    }
}

/// Raw on-disk form of a template (one JSON Lines record).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub id: String,
    pub source_task: String,
    pub category: Category,
    pub body: String,
    pub attributes: AttributeSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: String,
    pub source_task: String,
    pub category: Category,
    pub body: String,
    pub attributes: AttributeSet,
    segments: Vec<Segment>,
    placeholders: BTreeSet<Placeholder>,
}

impl PromptTemplate {
    pub fn from_record(record: TemplateRecord) -> Result<Self, TemplateError> {
        let TemplateRecord {
            id,
            source_task,
            category,
            body,
            attributes,
        } = record;
        if id == BASELINE_PROMPT_ID {
            return Err(TemplateError::ReservedId(id));
        }
        let segments = parse_body(&body)?;
        let literal_empty = segments.iter().all(|s| match s {
            Segment::Literal(text) => text.trim().is_empty(),
            Segment::Slot(_) => true,
        });
        if literal_empty {
            return Err(TemplateError::EmptyBody(id));
        }
        let placeholders: BTreeSet<Placeholder> = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(p) => Some(*p),
                Segment::Literal(_) => None,
            })
            .collect();
        let has_slot = placeholders.contains(&Placeholder::ChoiceString);
        if attributes.is_mcq && !attributes.has_choices {
            return Err(TemplateError::InvalidAttributes {
                id,
                reason: "is_mcq requires has_choices".into(),
            });
        }
        if attributes.has_choices != has_slot {
            return Err(TemplateError::InvalidAttributes {
                id,
                reason: format!(
                    "has_choices is {} but the body {} a choice_string placeholder",
                    attributes.has_choices,
                    if has_slot { "contains" } else { "lacks" }
                ),
            });
        }
        Ok(Self {
            id,
            source_task,
            category,
            body,
            attributes,
            segments,
            placeholders,
        })
    }

    pub fn to_record(&self) -> TemplateRecord {
        TemplateRecord {
            id: self.id.clone(),
            source_task: self.source_task.clone(),
            category: self.category,
            body: self.body.clone(),
            attributes: self.attributes,
        }
    }

    /// The set of placeholders the body requires.
    pub fn placeholders(&self) -> &BTreeSet<Placeholder> {
        &self.placeholders
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Body text with every placeholder replaced by a single space.
    pub fn literal_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Literal(text) => text.as_str(),
                Segment::Slot(_) => " ",
            })
            .collect()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("template record serializes")
    }
}

/// Parses one JSON Lines record into a validated template.
pub fn parse_template(raw: &str) -> Result<PromptTemplate, TemplateError> {
    let record: TemplateRecord =
        serde_json::from_str(raw).map_err(|e| TemplateError::MalformedRecord(e.to_string()))?;
    PromptTemplate::from_record(record)
}

/// An ordered collection of templates with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptSet {
    templates: Vec<PromptTemplate>,
}

impl PromptSet {
    pub fn new(templates: Vec<PromptTemplate>) -> Result<Self, TemplateError> {
        let mut seen = BTreeSet::new();
        for t in &templates {
            if !seen.insert(t.id.as_str()) {
                return Err(TemplateError::DuplicateId(t.id.clone()));
            }
        }
        Ok(Self { templates })
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, TemplateError> {
        let templates = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(parse_template)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(templates)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.templates {
            out.push_str(&t.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn get(&self, id: &str) -> Option<&PromptTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PromptTemplate> {
        self.templates.iter()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Vocabulary of all training-prompt bodies.
    pub fn training_vocab(&self) -> BTreeSet<String> {
        self.templates
            .iter()
            .filter(|t| t.attributes.is_training_prompt)
            .flat_map(|t| literal_tokens(&t.literal_text()))
            .collect()
    }
}

/// Routes task fields into template placeholders for one category pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRule {
    pub template_category: Category,
    pub task_category: Category,
    /// task field name -> placeholder name
    #[serde(default)]
    pub field_map: IndexMap<String, String>,
    /// placeholder name -> literal fill text
    #[serde(default)]
    pub extra_text: IndexMap<String, String>,
}

impl AlignmentRule {
    /// Maps each non-choice placeholder from the task field of the same name.
    pub fn identity(template_category: Category, task_category: Category) -> Self {
        let field_map = [Placeholder::Premise, Placeholder::Hypothesis, Placeholder::Domain]
            .into_iter()
            .map(|p| (p.name().to_string(), p.name().to_string()))
            .collect();
        Self {
            template_category,
            task_category,
            field_map,
            extra_text: IndexMap::new(),
        }
    }

    fn invalid(&self, reason: String) -> TemplateError {
        TemplateError::InvalidRule {
            template_category: self.template_category,
            task_category: self.task_category,
            reason,
        }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let mut targets = BTreeSet::new();
        for (field, target) in &self.field_map {
            match Placeholder::from_name(target) {
                None => return Err(self.invalid(format!("field `{field}` maps to unknown placeholder `{target}`"))),
                Some(Placeholder::ChoiceString) => {
                    return Err(self.invalid("choice_string cannot be mapped from a task field".into()))
                }
                Some(p) => {
                    if !targets.insert(p) {
                        return Err(self.invalid(format!("placeholder `{p}` is mapped from more than one field")));
                    }
                }
            }
        }
        for key in self.extra_text.keys() {
            match Placeholder::from_name(key) {
                None => return Err(self.invalid(format!("extra text for unknown placeholder `{key}`"))),
                Some(Placeholder::ChoiceString) => {
                    return Err(self.invalid("choice_string cannot take extra text".into()))
                }
                Some(p) if targets.contains(&p) => {
                    return Err(self.invalid(format!("placeholder `{p}` is covered by both a field and extra text")))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Checks that every non-choice placeholder of `template` is covered.
    pub fn check_covers(&self, template: &PromptTemplate) -> Result<(), TemplateError> {
        for p in template.placeholders() {
            if *p != Placeholder::ChoiceString && self.source_for(*p).is_none() {
                return Err(TemplateError::UncoveredPlaceholder {
                    placeholder: p.name().to_string(),
                });
            }
        }
        Ok(())
    }

    fn source_for(&self, placeholder: Placeholder) -> Option<Fill<'_>> {
        if let Some(text) = self.extra_text.get(placeholder.name()) {
            return Some(Fill::Extra(text));
        }
        self.field_map
            .iter()
            .find(|(_, target)| target.as_str() == placeholder.name())
            .map(|(field, _)| Fill::Field(field))
    }
}

enum Fill<'a> {
    Field(&'a str),
    Extra(&'a str),
}

/// Alignment rules keyed by (template category, task category).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentRules {
    rules: BTreeMap<(Category, Category), AlignmentRule>,
}

#[derive(Serialize, Deserialize)]
struct RulesDocument {
    rules: Vec<AlignmentRule>,
}

impl AlignmentRules {
    pub fn new(rules: Vec<AlignmentRule>) -> Result<Self, TemplateError> {
        let mut map = BTreeMap::new();
        for rule in rules {
            rule.validate()?;
            let key = (rule.template_category, rule.task_category);
            if map.contains_key(&key) {
                return Err(rule.invalid("duplicate rule for category pair".into()));
            }
            map.insert(key, rule);
        }
        Ok(Self { rules: map })
    }

    pub fn parse_json(text: &str) -> Result<Self, TemplateError> {
        let doc: RulesDocument =
            serde_json::from_str(text).map_err(|e| TemplateError::MalformedRecord(e.to_string()))?;
        Self::new(doc.rules)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse_json(&text)
    }

    pub fn to_json(&self) -> String {
        let doc = RulesDocument {
            rules: self.rules.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("rules serialize")
    }

    pub fn lookup(&self, template: Category, task: Category) -> Result<&AlignmentRule, TemplateError> {
        self.rules
            .get(&(template, task))
            .ok_or(TemplateError::NoAlignmentRule(template, task))
    }

    pub fn iter(&self) -> impl Iterator<Item = &AlignmentRule> {
        self.rules.values()
    }
}

/// Renders `template` for one example.
///
/// Extra text from the rule is only emitted when the template carries
/// `has_extra_text`; otherwise those placeholders render empty.
pub fn render(
    template: &PromptTemplate,
    example: &Example,
    rule: &AlignmentRule,
    choice_string: &str,
) -> Result<String, TemplateError> {
    let wants_choices = template.placeholders.contains(&Placeholder::ChoiceString);
    if wants_choices && choice_string.is_empty() {
        return Err(TemplateError::MissingChoiceString(template.id.clone()));
    }
    if !wants_choices && !choice_string.is_empty() {
        return Err(TemplateError::UnexpectedChoiceString(template.id.clone()));
    }
    let mut out = String::with_capacity(template.body.len() + 64);
    for segment in &template.segments {
        match segment {
            Segment::Literal(text) => out.push_str(text),
            Segment::Slot(Placeholder::ChoiceString) => out.push_str(choice_string),
            Segment::Slot(p) => match rule.source_for(*p) {
                Some(Fill::Extra(text)) => {
                    if template.attributes.has_extra_text {
                        out.push_str(text);
                    }
                }
                Some(Fill::Field(field)) => {
                    let value = example.fields.get(field).ok_or_else(|| TemplateError::MissingField {
                        example: example.id.clone(),
                        field: field.to_string(),
                    })?;
                    out.push_str(value);
                }
                None => {
                    return Err(TemplateError::UncoveredPlaceholder {
                        placeholder: p.name().to_string(),
                    })
                }
            },
        }
    }
    Ok(out)
}

/// Normalized tokens of free text: lowercased, split on Unicode whitespace,
/// with leading/trailing non-alphanumeric characters stripped. Tokens that
/// are pure punctuation vanish.
pub fn literal_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Number of literal tokens in the body, placeholders excluded.
pub fn prompt_token_length(template: &PromptTemplate) -> usize {
    literal_tokens(&template.literal_text()).len()
}

/// Number of distinct literal tokens the template shares with `training_vocab`.
pub fn shared_token_count(template: &PromptTemplate, training_vocab: &BTreeSet<String>) -> usize {
    literal_tokens(&template.literal_text())
        .into_iter()
        .collect::<BTreeSet<_>>()
        .intersection(training_vocab)
        .count()
}
