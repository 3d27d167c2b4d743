use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::analysis::{AblationOptions, CorrelationMethod, LengthBucketing, McqPopulation};
use crate::scoring::{BackendDescriptor, Decision, McqTarget};
use crate::stats::QuantileMethod;
use crate::task::{load_task, ChoiceFormat, FixedChoiceTask};
use crate::template::{AlignmentRules, PromptSet, PromptTemplate};

/// Environment variable consulted for the backend URL when no flag is given.
pub const BACKEND_URL_ENV: &str = "PROMPTRANK_BACKEND_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSet {
    Eq1,
    #[default]
    Eq2,
    Both,
}

impl DecisionSet {
    pub fn decisions(self) -> Vec<Decision> {
        match self {
            DecisionSet::Eq1 => vec![Decision::Eq1],
            DecisionSet::Eq2 => vec![Decision::Eq2],
            DecisionSet::Both => vec![Decision::Eq1, Decision::Eq2],
        }
    }

    /// Rule used by analyses when none is requested.
    pub fn primary(self) -> Decision {
        match self {
            DecisionSet::Eq1 => Decision::Eq1,
            _ => Decision::Eq2,
        }
    }
}

/// How each prompt presents the choice set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceFormatPolicy {
    /// lettered for MCQ prompts, plain otherwise
    #[default]
    ByAttribute,
    Plain,
    McqLetters,
}

impl ChoiceFormatPolicy {
    pub fn format_for(self, template: &PromptTemplate) -> ChoiceFormat {
        match self {
            ChoiceFormatPolicy::ByAttribute => crate::scoring::choice_format_for(template),
            ChoiceFormatPolicy::Plain => ChoiceFormat::Plain,
            ChoiceFormatPolicy::McqLetters => ChoiceFormat::McqLetters,
        }
    }
}

fn default_bucket_boundaries() -> Vec<usize> {
    LengthBucketing::default().boundaries().to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_bucket_boundaries")]
    pub bucket_boundaries: Vec<usize>,
    #[serde(default)]
    pub quantile_method: QuantileMethod,
    #[serde(default)]
    pub correlation: CorrelationMethod,
    #[serde(default)]
    pub mcq_population: McqPopulation,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            bucket_boundaries: default_bucket_boundaries(),
            quantile_method: QuantileMethod::default(),
            correlation: CorrelationMethod::default(),
            mcq_population: McqPopulation::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn ablation_options(&self) -> Result<AblationOptions, HarnessError> {
        Ok(AblationOptions {
            quantile_method: self.quantile_method,
            mcq_population: self.mcq_population,
            bucketing: LengthBucketing::new(self.bucket_boundaries.clone())
                .map_err(|e| HarnessError::Config(e.to_string()))?,
        })
    }
}

fn default_run_name() -> String {
    "run".into()
}

fn default_true() -> bool {
    true
}

fn default_parallelism() -> usize {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// One evaluation run. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_run_name")]
    pub run_name: String,
    pub prompts: PathBuf,
    pub tasks: Vec<PathBuf>,
    pub rules: PathBuf,
    #[serde(default)]
    pub backend: BackendDescriptor,
    #[serde(default)]
    pub decision: DecisionSet,
    #[serde(default)]
    pub choice_format: ChoiceFormatPolicy,
    #[serde(default)]
    pub mcq_target: McqTarget,
    #[serde(default = "default_true")]
    pub include_baseline: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Only for statistical checks; scoring is deterministic.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.prompts);
        fix(&mut self.rules);
        fix(&mut self.out_dir);
        self.tasks.iter_mut().for_each(fix);
        if let BackendDescriptor::NgramToy { corpus: Some(c), .. } = &mut self.backend {
            fix(c);
        }
    }

    /// Points an HTTP run at `url`, or turns the backend into HTTP if needed.
    pub fn override_backend_url(&mut self, url: &str) {
        match &mut self.backend {
            BackendDescriptor::Http { base_url, .. } => *base_url = url.to_string(),
            other => {
                *other = BackendDescriptor::Http {
                    base_url: url.to_string(),
                    timeout_ms: 30_000,
                    batch_size: 16,
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.parallelism == 0 {
            return Err(HarnessError::Config("parallelism must be >= 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(HarnessError::Config("no task files configured".into()));
        }
        if self.run_name.is_empty() || !self.run_name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(HarnessError::Config(format!(
                "run_name `{}` must be nonempty and use only [A-Za-z0-9_-]",
                self.run_name
            )));
        }
        for p in std::iter::once(&self.prompts).chain(&self.tasks).chain(std::iter::once(&self.rules)) {
            if !p.exists() {
                return Err(HarnessError::Config(format!("path does not exist: {}", p.display())));
            }
        }
        self.backend
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.analysis.ablation_options()?;
        Ok(())
    }
}

/// Inputs of a run after loading and validation.
pub struct LoadedInputs {
    pub prompts: PromptSet,
    /// sorted by task id
    pub tasks: Vec<FixedChoiceTask>,
    pub rules: AlignmentRules,
    pub corpus: Option<Vec<u8>>,
}

impl LoadedInputs {
    pub fn load(config: &RunConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let prompts = PromptSet::load(&config.prompts)?;
        let rules = AlignmentRules::load(&config.rules)?;
        let mut tasks = config
            .tasks
            .iter()
            .map(|p| load_task(p))
            .collect::<Result<Vec<_>, _>>()?;
        tasks.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = tasks.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(HarnessError::Config(format!("duplicate task id `{}`", w[0].id)));
        }
        let corpus = match &config.backend {
            BackendDescriptor::NgramToy { corpus: Some(path), .. } => {
                Some(std::fs::read(path).map_err(|e| HarnessError::io(path, e))?)
            }
            _ => None,
        };
        Ok(Self {
            prompts,
            tasks,
            rules,
            corpus,
        })
    }

    /// Content hash of everything that can change a scoring result.
    ///
    /// Paths, task order, parallelism, output location and analysis options
    /// do not enter the hash.
    pub fn config_hash(&self, config: &RunConfig) -> String {
        let backend = match &config.backend {
            BackendDescriptor::NgramToy { order, smoothing, .. } => serde_json::json!({
                "kind": "ngram_toy",
                "order": order,
                "smoothing": smoothing,
                "corpus_sha256": hex::encode(Sha256::digest(
                    self.corpus.as_deref().unwrap_or(crate::scoring::SEED_CORPUS.as_bytes())
                )),
            }),
            BackendDescriptor::Http { base_url, .. } => serde_json::json!({
                "kind": "http",
                "base_url": base_url,
            }),
        };
        let tasks: Vec<String> = self.tasks.iter().map(FixedChoiceTask::to_jsonl).collect();
        let canonical = serde_json::json!({
            "prompts": self.prompts.to_jsonl(),
            "tasks": tasks,
            "rules": self.rules.to_json(),
            "backend": backend,
            "decision": config.decision,
            "choice_format": config.choice_format,
            "mcq_target": config.mcq_target,
            "include_baseline": config.include_baseline,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}
