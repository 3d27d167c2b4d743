use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::store::{read_jsonl, write_atomic, write_json, write_jsonl, Manifest, PromptInfo, RunDir};
use super::HarnessError;
use crate::analysis::{
    correlation_table, group_ablation, length_bucket_summary, relative_improvement, AblationAxis,
    AblationOptions, AblationReport, AnalysisError, BucketSummary, CorrelationRow, PromptProfile,
};
use crate::metrics::{EvalResult, RankTable};
use crate::scoring::Decision;
use crate::stats::Summary;

/// A completed run directory, read back for post-processing.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: RunDir,
    pub manifest: Manifest,
    /// every persisted result, all decision rules
    pub results: Vec<EvalResult>,
    /// template entrants only; the baseline has no attributes
    pub prompts: Vec<PromptInfo>,
}

/// Opens a run directory. Pairs missing from the matrix are logged and the
/// analyses proceed over what is available.
pub fn load_run(path: &Path) -> Result<LoadedRun, HarnessError> {
    let (dir, manifest) = RunDir::open(path)?;
    let metrics_path = dir.metrics_file();
    if !metrics_path.is_file() {
        return Err(HarnessError::MissingRun(path.display().to_string()));
    }
    let results: Vec<EvalResult> = read_jsonl(&metrics_path)?;
    let prompts: Vec<PromptInfo> = read_jsonl(&dir.prompts_file())?;
    let run = LoadedRun {
        dir,
        manifest,
        results,
        prompts,
    };
    for decision in &run.manifest.decisions {
        let missing = run.missing_pairs(*decision);
        if !missing.is_empty() {
            log::warn!(
                "incomplete matrix for {}: {} of {} pairs missing, ranking over available pairs",
                decision.as_str(),
                missing.len(),
                run.manifest.prompt_ids.len() * run.manifest.task_ids.len()
            );
        }
    }
    Ok(run)
}

impl LoadedRun {
    /// The requested decision rule, or the run's primary one.
    pub fn decision(&self, requested: Option<Decision>) -> Result<Decision, HarnessError> {
        match requested {
            None => Ok(self.manifest.primary_decision),
            Some(d) if self.manifest.decisions.contains(&d) => Ok(d),
            Some(d) => Err(HarnessError::Config(format!(
                "run {} has no results for decision rule {}",
                self.dir.path.display(),
                d.as_str()
            ))),
        }
    }

    pub fn results_for(&self, decision: Decision) -> Vec<EvalResult> {
        self.results.iter().filter(|r| r.decision == decision).cloned().collect()
    }

    /// (prompt, task) pairs of the manifest without a result under `decision`.
    pub fn missing_pairs(&self, decision: Decision) -> Vec<(String, String)> {
        let present: BTreeSet<(&str, &str)> = self
            .results
            .iter()
            .filter(|r| r.decision == decision)
            .map(|r| (r.prompt_id.as_str(), r.task_id.as_str()))
            .collect();
        self.manifest
            .prompt_ids
            .iter()
            .flat_map(|p| self.manifest.task_ids.iter().map(move |t| (p, t)))
            .filter(|(p, t)| !present.contains(&(p.as_str(), t.as_str())))
            .map(|(p, t)| (p.clone(), t.clone()))
            .collect()
    }

    pub fn rank_table(&self, decision: Decision) -> Result<RankTable, HarnessError> {
        Ok(RankTable::build(&self.results_for(decision))?)
    }

    /// Template prompts joined with their median ranks. Prompts without any
    /// successful pair are left out.
    pub fn profiles(&self, table: &RankTable) -> Vec<PromptProfile> {
        self.prompts
            .iter()
            .filter_map(|info| {
                table.per_prompt.get(&info.prompt_id).map(|rank| PromptProfile {
                    prompt_id: info.prompt_id.clone(),
                    attributes: info.attributes,
                    length: info.length,
                    shared_tokens: info.shared_tokens,
                    mar: rank.mar,
                    mfr: rank.mfr,
                })
            })
            .collect()
    }
}

/// One entrant's metrics and ranks on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub decision: Decision,
    pub task_id: String,
    pub prompt_id: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub accuracy_rank: f64,
    pub f1_rank: f64,
}

/// One entrant's median ranks across tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRankRow {
    pub decision: Decision,
    pub prompt_id: String,
    pub mar: f64,
    pub mfr: f64,
    pub n_tasks: usize,
}

fn rank_rows(run: &LoadedRun, decision: Decision, table: &RankTable) -> Vec<RankRow> {
    let mut rows: Vec<RankRow> = run
        .results_for(decision)
        .into_iter()
        .map(|r| RankRow {
            decision,
            accuracy_rank: table.accuracy_ranks[&r.task_id][&r.prompt_id],
            f1_rank: table.f1_ranks[&r.task_id][&r.prompt_id],
            task_id: r.task_id,
            prompt_id: r.prompt_id,
            accuracy: r.accuracy,
            macro_f1: r.macro_f1,
        })
        .collect();
    rows.sort_by(|a, b| (&a.task_id, &a.prompt_id).cmp(&(&b.task_id, &b.prompt_id)));
    rows
}

/// Writes per-task ranks and per-prompt MAR/MFR for one decision rule.
pub fn run_rank(run_path: &Path, decision: Option<Decision>) -> Result<Vec<PathBuf>, HarnessError> {
    let run = load_run(run_path)?;
    write_ranks(&run, run.decision(decision)?)
}

fn write_ranks(run: &LoadedRun, decision: Decision) -> Result<Vec<PathBuf>, HarnessError> {
    let table = run.rank_table(decision)?;
    let ranks_path = run.dir.artifact("ranks", Some(decision.as_str()), "jsonl");
    write_jsonl(&ranks_path, &rank_rows(run, decision, &table))?;
    let prompt_rows: Vec<PromptRankRow> = table
        .per_prompt
        .iter()
        .map(|(id, r)| PromptRankRow {
            decision,
            prompt_id: id.clone(),
            mar: r.mar,
            mfr: r.mfr,
            n_tasks: r.n_tasks,
        })
        .collect();
    let prompt_path = run.dir.artifact("prompt_ranks", Some(decision.as_str()), "jsonl");
    write_jsonl(&prompt_path, &prompt_rows)?;
    Ok(vec![ranks_path, prompt_path])
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn summary_fields(s: Option<&Summary<f64>>) -> [String; 4] {
    match s {
        Some(s) => [num(s.mean), num(s.median), num(s.q1), num(s.q3)],
        None => Default::default(),
    }
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>, HarnessError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let to_err = |e: csv::Error| HarnessError::Config(format!("csv encoding failed: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(to_err)?;
    }
    w.into_inner()
        .map_err(|e| HarnessError::Config(format!("csv encoding failed: {e}")))
}

/// Improvement of the group with the lower median rank over the other one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupImprovement {
    pub axis: AblationAxis,
    pub metric: String,
    pub better_group: String,
    pub worse_group: String,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AblationDocument {
    decision: Decision,
    options: AblationOptions,
    reports: Vec<AblationReport>,
    improvements: Vec<GroupImprovement>,
    /// axes that could not be evaluated, with the reason
    skipped: Vec<(AblationAxis, String)>,
    length_buckets: Vec<BucketSummary>,
}

fn improvements(report: &AblationReport) -> Result<Vec<GroupImprovement>, AnalysisError> {
    if report.groups.len() != 2 {
        return Ok(Vec::new());
    }
    let (a, b) = (&report.groups[0], &report.groups[1]);
    let pick = |metric: &str, ma: f64, mb: f64| -> Result<GroupImprovement, AnalysisError> {
        let (better, worse, bm, wm) = if ma <= mb { (a, b, ma, mb) } else { (b, a, mb, ma) };
        Ok(GroupImprovement {
            axis: report.axis,
            metric: metric.into(),
            better_group: better.label.clone(),
            worse_group: worse.label.clone(),
            percent: relative_improvement(bm, wm)?,
        })
    };
    Ok(vec![
        pick("mar", a.mar.median, b.mar.median)?,
        pick("mfr", a.mfr.median, b.mfr.median)?,
    ])
}

/// Writes grouped rank statistics for every ablation axis plus the
/// length-bucket summary.
pub fn run_ablate(run_path: &Path, decision: Option<Decision>) -> Result<Vec<PathBuf>, HarnessError> {
    let run = load_run(run_path)?;
    write_ablation(&run, run.decision(decision)?)
}

fn write_ablation(run: &LoadedRun, decision: Decision) -> Result<Vec<PathBuf>, HarnessError> {
    let options = run.manifest.analysis.ablation_options()?;
    let profiles = run.profiles(&run.rank_table(decision)?);
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    let mut gains = Vec::new();
    for axis in AblationAxis::ALL {
        match group_ablation(&profiles, axis, &options) {
            Ok(report) => {
                gains.extend(improvements(&report)?);
                reports.push(report);
            }
            Err(AnalysisError::EmptyGroup(group)) => {
                log::warn!("ablation axis {} skipped: group `{group}` is empty", axis.as_str());
                skipped.push((axis, format!("empty group `{group}`")));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let buckets = length_bucket_summary(&profiles, &options.bucketing, options.quantile_method)?;

    let header = [
        "axis", "group", "count", "mar_mean", "mar_median", "mar_q1", "mar_q3", "mfr_mean", "mfr_median",
        "mfr_q1", "mfr_q3",
    ];
    let rows = reports.iter().flat_map(|r| {
        r.groups.iter().map(move |g| {
            let mut row = vec![r.axis.as_str().to_string(), g.label.clone(), g.mar.count.to_string()];
            row.extend(summary_fields(Some(&g.mar)));
            row.extend(summary_fields(Some(&g.mfr)));
            row
        })
    });
    let ablation_csv = run.dir.artifact("ablation", Some(decision.as_str()), "csv");
    write_atomic(&ablation_csv, &csv_bytes(&header, rows)?)?;

    let bucket_header = [
        "bucket", "lower", "count", "mar_mean", "mar_median", "mar_q1", "mar_q3", "mfr_mean", "mfr_median",
        "mfr_q1", "mfr_q3",
    ];
    let bucket_rows = buckets.iter().map(|b| {
        let mut row = vec![
            b.label.clone(),
            b.lower.map(|l| l.to_string()).unwrap_or_default(),
            b.count.to_string(),
        ];
        row.extend(summary_fields(b.mar.as_ref()));
        row.extend(summary_fields(b.mfr.as_ref()));
        row
    });
    let buckets_csv = run.dir.artifact("length_buckets", Some(decision.as_str()), "csv");
    write_atomic(&buckets_csv, &csv_bytes(&bucket_header, bucket_rows)?)?;

    let doc = AblationDocument {
        decision,
        options,
        reports,
        improvements: gains,
        skipped,
        length_buckets: buckets,
    };
    let json = run.dir.artifact("ablation", Some(decision.as_str()), "json");
    write_json(&json, &doc)?;
    Ok(vec![ablation_csv, buckets_csv, json])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorrelationDocument {
    decision: Decision,
    method: crate::analysis::CorrelationMethod,
    n_prompts: usize,
    rows: Vec<CorrelationRow>,
}

/// Writes attribute-rank correlations.
pub fn run_correlate(run_path: &Path, decision: Option<Decision>) -> Result<Vec<PathBuf>, HarnessError> {
    let run = load_run(run_path)?;
    write_correlations(&run, run.decision(decision)?)
}

fn write_correlations(run: &LoadedRun, decision: Decision) -> Result<Vec<PathBuf>, HarnessError> {
    let method = run.manifest.analysis.correlation;
    let profiles = run.profiles(&run.rank_table(decision)?);
    let rows = correlation_table(&profiles, method)?;
    let csv_rows = rows
        .iter()
        .map(|r| vec![r.attribute.as_str().to_string(), opt_num(r.r_accuracy), opt_num(r.r_f1)]);
    let csv_path = run.dir.artifact("correlations", Some(decision.as_str()), "csv");
    write_atomic(&csv_path, &csv_bytes(&["attribute", "r_accuracy_rank", "r_f1_rank"], csv_rows)?)?;
    let json_path = run.dir.artifact("correlations", Some(decision.as_str()), "json");
    write_json(
        &json_path,
        &CorrelationDocument {
            decision,
            method,
            n_prompts: profiles.len(),
            rows,
        },
    )?;
    Ok(vec![csv_path, json_path])
}

/// Long-format rows (one per entrant, task and metric) for external plotting.
fn write_plot_data(run: &LoadedRun, decision: Decision) -> Result<PathBuf, HarnessError> {
    let table = run.rank_table(decision)?;
    let options = run.manifest.analysis.ablation_options()?;
    let header = [
        "prompt_id",
        "task_id",
        "metric",
        "value",
        "rank",
        "median_rank",
        "is_training_prompt",
        "has_choices",
        "is_mcq",
        "has_extra_text",
        "length",
        "length_bucket",
    ];
    let mut rows = Vec::new();
    for r in rank_rows(run, decision, &table) {
        let info = run.prompts.iter().find(|p| p.prompt_id == r.prompt_id);
        let per_prompt = &table.per_prompt[&r.prompt_id];
        let flag = |f: fn(&PromptInfo) -> bool| info.map(|i| f(i).to_string()).unwrap_or_default();
        let attrs = [
            flag(|i| i.attributes.is_training_prompt),
            flag(|i| i.attributes.has_choices),
            flag(|i| i.attributes.is_mcq),
            flag(|i| i.attributes.has_extra_text),
            info.map(|i| i.length.to_string()).unwrap_or_default(),
            info.map(|i| options.bucketing.label(options.bucketing.bucket_of(i.length)))
                .unwrap_or_default(),
        ];
        for (metric, value, rank, median) in [
            ("accuracy", r.accuracy, r.accuracy_rank, per_prompt.mar),
            ("macro_f1", r.macro_f1, r.f1_rank, per_prompt.mfr),
        ] {
            let mut row = vec![
                r.prompt_id.clone(),
                r.task_id.clone(),
                metric.to_string(),
                num(value),
                num(rank),
                num(median),
            ];
            row.extend(attrs.iter().cloned());
            rows.push(row);
        }
    }
    let path = run.dir.artifact("plot_data", Some(decision.as_str()), "csv");
    write_atomic(&path, &csv_bytes(&header, rows)?)?;
    Ok(path)
}

/// Runs rank, ablation and correlation reports in one pass, optionally with
/// plot data.
pub fn run_report(run_path: &Path, decision: Option<Decision>, plot_data: bool) -> Result<Vec<PathBuf>, HarnessError> {
    let run = load_run(run_path)?;
    let decision = run.decision(decision)?;
    let mut written = write_ranks(&run, decision)?;
    written.extend(write_ablation(&run, decision)?);
    written.extend(write_correlations(&run, decision)?);
    if plot_data {
        written.push(write_plot_data(&run, decision)?);
    }
    Ok(written)
}
