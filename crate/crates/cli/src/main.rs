//! Command-line front end for the prompt evaluation harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use promptrank::harness::{
    run_ablate, run_correlate, run_dir_for, run_eval, run_rank, run_report, HarnessError, RunConfig, BACKEND_URL_ENV,
    EXIT_OK, EXIT_VALIDATION,
};
use promptrank::scoring::{template_context, Decision};
use promptrank::task::{load_task, FixedChoiceTask};
use promptrank::template::{AlignmentRules, PromptSet};

#[derive(Parser)]
#[command(name = "promptrank", version, about = "Evaluate prompt templates across fixed-choice tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Scoring server URL; switches the run to the HTTP backend.
    #[arg(long, env = BACKEND_URL_ENV)]
    backend_url: Option<String>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, HarnessError> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(url) = &self.backend_url {
            config.override_backend_url(url);
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        Ok(config)
    }
}

#[derive(Args, Clone)]
struct RunSelector {
    /// Run directory to read.
    #[arg(long, conflicts_with = "config")]
    run: Option<PathBuf>,
    /// Locate the run directory from this configuration instead.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = BACKEND_URL_ENV)]
    backend_url: Option<String>,
    /// Output directory the run was written to, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Decision rule to analyse; defaults to the run's primary rule.
    #[arg(long)]
    decision: Option<Decision>,
}

impl RunSelector {
    fn run_path(&self) -> Result<PathBuf, HarnessError> {
        match (&self.run, &self.config) {
            (Some(run), _) => Ok(run.clone()),
            (None, Some(config)) => {
                let args = ConfigArgs {
                    config: config.clone(),
                    backend_url: self.backend_url.clone(),
                    out: self.out.clone(),
                };
                Ok(run_dir_for(&args.load()?)?.path)
            }
            (None, None) => Err(HarnessError::Config("pass --run <dir> or --config <file>".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every (prompt, task) pair and persist the records.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Worker threads, overriding the config.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Write per-task ranks and per-prompt MAR/MFR.
    Rank(RunSelector),
    /// Write grouped rank statistics per prompt attribute.
    Ablate(RunSelector),
    /// Write attribute-rank correlations.
    Correlate(RunSelector),
    /// Write ranks, ablations and correlations together.
    Report {
        #[command(flatten)]
        run: RunSelector,
        /// Also write long-format CSV for plotting.
        #[arg(long)]
        plot_data: bool,
    },
    /// Print the scoring context of one prompt on one example.
    Render {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        task: PathBuf,
        /// Template id.
        #[arg(long)]
        prompt: String,
        /// Example position in the task file.
        #[arg(long, default_value_t = 0)]
        example: usize,
    },
    /// Lint prompt, task and rule files.
    Validate {
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long = "task")]
        tasks: Vec<PathBuf>,
        /// Validate everything a run configuration references.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn print_paths(paths: &[PathBuf]) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    for p in paths {
        // a closed pipe (e.g. `| head`) just ends the listing
        if writeln!(out, "{}", p.display()).is_err() {
            break;
        }
    }
}

fn eval(config: &ConfigArgs, parallelism: Option<usize>) -> Result<i32, HarnessError> {
    let mut config = config.load()?;
    if let Some(n) = parallelism {
        config.parallelism = n;
    }
    let record = run_eval(&config)?;
    let failed = record.failures().count();
    eprintln!(
        "evaluated {} pairs ({} resumed, {} failed) in {} ms",
        record.pairs.len(),
        record.resumed,
        failed,
        record.elapsed_ms
    );
    for (pair, cause) in record.failures() {
        eprintln!("  {}/{}: {}", pair.prompt_id, pair.task_id, cause.message);
    }
    println!("{}", record.run_dir.path.display());
    Ok(record.exit_code())
}

fn render(prompts: &Path, rules: &Path, task: &Path, prompt_id: &str, example: usize) -> anyhow::Result<()> {
    let prompts = PromptSet::load(prompts)?;
    let rules = AlignmentRules::load(rules)?;
    let task = load_task(task)?;
    let template = prompts
        .get(prompt_id)
        .ok_or_else(|| anyhow!("no template with id `{prompt_id}`"))?;
    let ex = task
        .examples()
        .get(example)
        .ok_or_else(|| anyhow!("task `{}` has {} examples", task.id, task.examples().len()))?;
    let rule = rules.lookup(template.category, task.category)?;
    let format = promptrank::scoring::choice_format_for(template);
    let context = template_context(template, rule, &task, ex, format)?;
    println!("{}", context.trim_end());
    Ok(())
}

fn validate(
    prompts: Option<PathBuf>,
    rules: Option<PathBuf>,
    mut tasks: Vec<PathBuf>,
    config: Option<PathBuf>,
) -> anyhow::Result<()> {
    let (mut prompts, mut rules) = (prompts, rules);
    if let Some(path) = config {
        let config = RunConfig::load(&path)?;
        config.validate()?;
        prompts.get_or_insert(config.prompts);
        rules.get_or_insert(config.rules);
        tasks.extend(config.tasks);
    }
    let prompts = prompts.map(|p| PromptSet::load(&p).with_context(|| p.display().to_string())).transpose()?;
    let rules = rules
        .map(|p| AlignmentRules::load(&p).with_context(|| p.display().to_string()))
        .transpose()?;
    let tasks: Vec<FixedChoiceTask> = tasks
        .iter()
        .map(|p| load_task(p).with_context(|| p.display().to_string()))
        .collect::<anyhow::Result<_>>()?;
    let mut problems = Vec::new();
    if let (Some(prompts), Some(rules)) = (&prompts, &rules) {
        for template in prompts.iter() {
            for task in &tasks {
                let check = rules
                    .lookup(template.category, task.category)
                    .and_then(|rule| rule.check_covers(template));
                if let Err(e) = check {
                    problems.push(format!("{} on {}: {e}", template.id, task.id));
                }
            }
        }
    }
    if !problems.is_empty() {
        return Err(anyhow!("{} pair(s) cannot be rendered:\n  {}", problems.len(), problems.join("\n  ")));
    }
    println!(
        "ok: {} templates, {} tasks, {} rules",
        prompts.map_or(0, |p| p.len()),
        tasks.len(),
        rules.map_or(0, |r| r.iter().count())
    );
    Ok(())
}

fn report_paths(result: Result<Vec<PathBuf>, HarnessError>) -> Result<i32, HarnessError> {
    print_paths(&result?);
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome: Result<i32, HarnessError> = match cli.command {
        Command::Eval { config, parallelism } => eval(&config, parallelism),
        Command::Rank(sel) => sel.run_path().and_then(|p| report_paths(run_rank(&p, sel.decision))),
        Command::Ablate(sel) => sel.run_path().and_then(|p| report_paths(run_ablate(&p, sel.decision))),
        Command::Correlate(sel) => sel.run_path().and_then(|p| report_paths(run_correlate(&p, sel.decision))),
        Command::Report { run, plot_data } => run
            .run_path()
            .and_then(|p| report_paths(run_report(&p, run.decision, plot_data))),
        Command::Render {
            prompts,
            rules,
            task,
            prompt,
            example,
        } => {
            return match render(&prompts, &rules, &task, &prompt, example) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(EXIT_VALIDATION as u8)
                }
            }
        }
        Command::Validate {
            prompts,
            rules,
            tasks,
            config,
        } => {
            return match validate(prompts, rules, tasks, config) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(EXIT_VALIDATION as u8)
                }
            }
        }
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
