//! Benchmark harness over a JSON-lines question file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::judged::{
    answer_accuracy, context_relevance, evidence_coverage, evidence_recall, false_deletion_rate,
    false_deletions, faithfulness_of_claims,
};
use super::metrics::rouge_l;
use super::EvalError;
use crate::gateway::Gateway;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuestionType {
    #[serde(alias = "fact")]
    Fact,
    #[serde(alias = "reason")]
    Reason,
    #[serde(alias = "summary")]
    Summary,
    #[serde(alias = "creation")]
    Creation,
}

impl QuestionType {
    pub const ALL: [QuestionType; 4] = [Self::Fact, Self::Reason, Self::Summary, Self::Creation];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fact => "Fact",
            Self::Reason => "Reason",
            Self::Summary => "Summary",
            Self::Creation => "Creation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub evidence: Vec<String>,
    pub question_type: QuestionType,
    /// Reference claims; extracted from `answer` when absent.
    #[serde(default)]
    pub claims: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default)]
pub struct QuestionFile {
    /// `(line number, record)`, 1-based lines.
    pub records: Vec<(usize, QuestionRecord)>,
    pub malformed: Vec<(usize, String)>,
}

pub fn parse_questions(text: &str) -> QuestionFile {
    let mut out = QuestionFile::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<QuestionRecord>(line) {
            Ok(r) if r.question.trim().is_empty() => out.malformed.push((i + 1, "empty question".into())),
            Ok(r) => out.records.push((i + 1, r)),
            Err(e) => out.malformed.push((i + 1, e.to_string())),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ContextRelevance,
    EvidenceRecall,
    RougeL,
    AnswerAccuracy,
    Faithfulness,
    EvidenceCoverage,
    FalseDeletion,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Self::ContextRelevance,
        Self::EvidenceRecall,
        Self::RougeL,
        Self::AnswerAccuracy,
        Self::Faithfulness,
        Self::EvidenceCoverage,
        Self::FalseDeletion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ContextRelevance => "context_relevance",
            Self::EvidenceRecall => "evidence_recall",
            Self::RougeL => "rouge_l",
            Self::AnswerAccuracy => "answer_accuracy",
            Self::Faithfulness => "faithfulness",
            Self::EvidenceCoverage => "evidence_coverage",
            Self::FalseDeletion => "false_deletion",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Weight of factual correctness in answer accuracy.
    pub accuracy_alpha: f64,
    pub rouge_beta: f64,
    pub metrics: Vec<Metric>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            accuracy_alpha: 0.5,
            rouge_beta: 1.0,
            metrics: Metric::ALL.to_vec(),
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.accuracy_alpha) {
            return Err("accuracy_alpha must lie in [0, 1]".into());
        }
        if !(self.rouge_beta > 0.0) {
            return Err("rouge_beta must be positive".into());
        }
        Ok(())
    }

    fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }

    /// Indices into [`Scores::COLUMNS`] produced by the selected metrics.
    pub fn columns(&self) -> Vec<usize> {
        let mut cols: Vec<usize> = self
            .metrics
            .iter()
            .flat_map(|m| match m {
                Metric::ContextRelevance => vec![0],
                Metric::EvidenceRecall => vec![1],
                Metric::RougeL => vec![2],
                Metric::AnswerAccuracy => vec![3, 4, 5],
                Metric::Faithfulness => vec![6],
                Metric::EvidenceCoverage => vec![7],
                Metric::FalseDeletion => vec![8],
            })
            .collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }
}

/// What the harness needs from a query pipeline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutput {
    pub answer: String,
    /// Context handed to the generator.
    pub context: String,
    /// Context as it would have been without interference elimination.
    pub pre_filter_context: Option<String>,
}

pub trait Pipeline: Sync {
    fn run(&self, query: &str) -> Result<PipelineOutput, String>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub context_relevance: Option<f64>,
    pub evidence_recall: Option<f64>,
    pub rouge_l: Option<f64>,
    pub answer_accuracy: Option<f64>,
    pub factual_correctness: Option<f64>,
    pub semantic_similarity: Option<f64>,
    pub faithfulness: Option<f64>,
    pub evidence_coverage: Option<f64>,
    pub false_deletion: Option<f64>,
}

impl Scores {
    pub const COLUMNS: [&'static str; 9] = [
        "context_relevance",
        "evidence_recall",
        "rouge_l",
        "answer_accuracy",
        "factual_correctness",
        "semantic_similarity",
        "faithfulness",
        "evidence_coverage",
        "false_deletion",
    ];

    pub fn values(&self) -> [Option<f64>; 9] {
        [
            self.context_relevance,
            self.evidence_recall,
            self.rouge_l,
            self.answer_accuracy,
            self.factual_correctness,
            self.semantic_similarity,
            self.faithfulness,
            self.evidence_coverage,
            self.false_deletion,
        ]
    }

    fn from_values(v: [Option<f64>; 9]) -> Self {
        Self {
            context_relevance: v[0],
            evidence_recall: v[1],
            rouge_l: v[2],
            answer_accuracy: v[3],
            factual_correctness: v[4],
            semantic_similarity: v[5],
            faithfulness: v[6],
            evidence_coverage: v[7],
            false_deletion: v[8],
        }
    }

    /// Column-wise mean over the items that have each score.
    fn mean<'a>(items: impl Iterator<Item = &'a Scores>) -> Self {
        let mut sum = [0.0; 9];
        let mut n = [0usize; 9];
        for s in items {
            for (k, v) in s.values().into_iter().enumerate() {
                if let Some(v) = v {
                    sum[k] += v;
                    n[k] += 1;
                }
            }
        }
        let mut out = [None; 9];
        for k in 0..9 {
            if n[k] > 0 {
                out[k] = Some(sum[k] / n[k] as f64);
            }
        }
        Self::from_values(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemReport {
    pub line: usize,
    pub question: String,
    pub question_type: QuestionType,
    pub answer: String,
    pub scores: Scores,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
    /// The pipeline itself failed; no scores.
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroRow {
    /// A question type, or `all`.
    pub group: String,
    pub items: usize,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub options: EvalOptions,
    pub evaluated: usize,
    /// Malformed lines plus items whose pipeline run failed.
    pub failures: usize,
    pub malformed_lines: Vec<usize>,
    pub metric_errors: usize,
    pub flagged: usize,
    pub false_deletion_rate: Option<f64>,
    pub macro_rows: Vec<MacroRow>,
    pub items: Vec<ItemReport>,
}

impl MetricReport {
    pub fn overall(&self) -> Option<&MacroRow> {
        self.macro_rows.iter().find(|r| r.group == "all")
    }

    /// Macro rows with one column per selected metric.
    pub fn to_csv(&self) -> String {
        let cols = self.options.columns();
        let mut header = vec!["group", "items"];
        header.extend(cols.iter().map(|&c| Scores::COLUMNS[c]));
        let mut out = header.join(",") + "\n";
        for row in &self.macro_rows {
            let values = row.scores.values();
            let mut cells = vec![row.group.clone(), row.items.to_string()];
            cells.extend(
                cols.iter()
                    .map(|&c| values[c].map_or_else(String::new, |x| format!("{x:.6}"))),
            );
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
        std::fs::write(dir.join("report.csv"), self.to_csv())
    }
}

fn evaluate_item(
    line: usize,
    record: &QuestionRecord,
    pipeline: &dyn Pipeline,
    judge: &Gateway,
    opts: &EvalOptions,
) -> ItemReport {
    let mut item = ItemReport {
        line,
        question: record.question.clone(),
        question_type: record.question_type,
        answer: String::new(),
        scores: Scores::default(),
        flags: Vec::new(),
        errors: Vec::new(),
        failed: false,
    };
    let out = match pipeline.run(&record.question) {
        Ok(o) => o,
        Err(e) => {
            item.failed = true;
            item.errors.push(format!("pipeline: {e}"));
            return item;
        }
    };
    item.answer = out.answer.clone();
    let fail = |item: &mut ItemReport, m: Metric, e: String| item.errors.push(format!("{m}: {e}"));

    let needs_reference_claims = opts.wants(Metric::EvidenceRecall) || opts.wants(Metric::AnswerAccuracy);
    let reference_claims = match (&record.claims, needs_reference_claims) {
        (Some(c), _) => Some(c.clone()),
        (None, true) => match judge.extract_claims(&record.answer) {
            Ok(c) => Some(c),
            Err(e) => {
                item.errors.push(format!("reference claims: {e}"));
                None
            }
        },
        (None, false) => None,
    };
    let needs_answer_claims = opts.wants(Metric::AnswerAccuracy) || opts.wants(Metric::Faithfulness);
    let answer_claims = if needs_answer_claims {
        match judge.extract_claims(&out.answer) {
            Ok(c) => Some(c),
            Err(e) => {
                item.errors.push(format!("answer claims: {e}"));
                None
            }
        }
    } else {
        None
    };

    if opts.wants(Metric::ContextRelevance) {
        match context_relevance(&record.question, &out.context, judge) {
            Ok(r) => {
                if r.flagged() {
                    item.flags.push("context_relevance: unparseable grade counted as 0".into());
                }
                item.scores.context_relevance = Some(r.score);
            }
            Err(e) => fail(&mut item, Metric::ContextRelevance, e.to_string()),
        }
    }
    if opts.wants(Metric::EvidenceRecall) {
        if let Some(claims) = &reference_claims {
            match evidence_recall(claims, &out.context, judge) {
                Ok(v) => item.scores.evidence_recall = Some(v),
                Err(e) => fail(&mut item, Metric::EvidenceRecall, e.to_string()),
            }
        }
    }
    if opts.wants(Metric::RougeL) {
        item.scores.rouge_l = Some(rouge_l(&out.answer, &record.answer, opts.rouge_beta));
    }
    if opts.wants(Metric::AnswerAccuracy) {
        if let (Some(a), Some(r)) = (&answer_claims, &reference_claims) {
            match answer_accuracy(&out.answer, &record.answer, a, r, judge, opts.accuracy_alpha) {
                Ok(b) => {
                    item.scores.answer_accuracy = Some(b.answer_accuracy);
                    item.scores.factual_correctness = Some(b.factual_correctness);
                    item.scores.semantic_similarity = Some(b.semantic_similarity);
                }
                Err(e) => fail(&mut item, Metric::AnswerAccuracy, e.to_string()),
            }
        }
    }
    if opts.wants(Metric::Faithfulness) {
        if let Some(a) = &answer_claims {
            match faithfulness_of_claims(&out.answer, a.clone(), &out.context, judge) {
                Ok(f) => {
                    if f.empty_claims {
                        item.flags.push("faithfulness: no claims extracted, scored 1".into());
                    }
                    item.scores.faithfulness = Some(f.score);
                }
                Err(e) => fail(&mut item, Metric::Faithfulness, e.to_string()),
            }
        }
    }
    if opts.wants(Metric::EvidenceCoverage) {
        match evidence_coverage(&record.evidence, &out.answer, judge) {
            Ok(v) => item.scores.evidence_coverage = Some(v),
            Err(e) => fail(&mut item, Metric::EvidenceCoverage, e.to_string()),
        }
    }
    if opts.wants(Metric::FalseDeletion) {
        match &out.pre_filter_context {
            Some(before) => match false_deletions(&record.evidence, before, &out.context, judge) {
                Ok(v) => item.scores.false_deletion = v,
                Err(e) => fail(&mut item, Metric::FalseDeletion, e.to_string()),
            },
            None => fail(&mut item, Metric::FalseDeletion, "pipeline exposes no pre-filter context".into()),
        }
    }
    item
}

/// Runs every parsed question through `pipeline` and scores it. Items run concurrently and are
/// folded in file order.
pub fn run_benchmark(
    file: &QuestionFile,
    pipeline: &dyn Pipeline,
    judge: &Gateway,
    opts: &EvalOptions,
) -> Result<MetricReport, EvalError> {
    opts.validate().map_err(EvalError::Precondition)?;
    if file.records.is_empty() && file.malformed.is_empty() {
        return Err(EvalError::Precondition("question file holds no items".into()));
    }
    let items: Vec<ItemReport> = file
        .records
        .par_iter()
        .map(|(line, r)| evaluate_item(*line, r, pipeline, judge, opts))
        .collect();
    let pipeline_failures = items.iter().filter(|i| i.failed).count();
    let failures = pipeline_failures + file.malformed.len();
    if failures == items.len() + file.malformed.len() {
        return Err(EvalError::AllItemsFailed(failures));
    }

    let ok: Vec<&ItemReport> = items.iter().filter(|i| !i.failed).collect();
    let mut macro_rows = Vec::new();
    for t in QuestionType::ALL {
        let group: Vec<&&ItemReport> = ok.iter().filter(|i| i.question_type == t).collect();
        if !group.is_empty() {
            macro_rows.push(MacroRow {
                group: t.as_str().to_string(),
                items: group.len(),
                scores: Scores::mean(group.iter().map(|i| &i.scores)),
            });
        }
    }
    macro_rows.push(MacroRow {
        group: "all".into(),
        items: ok.len(),
        scores: Scores::mean(ok.iter().map(|i| &i.scores)),
    });
    let false_deletion_rate = opts.wants(Metric::FalseDeletion).then(|| {
        let per_query: Vec<Option<f64>> = ok.iter().map(|i| i.scores.false_deletion).collect();
        false_deletion_rate(&per_query)
    });

    Ok(MetricReport {
        options: opts.clone(),
        evaluated: ok.len(),
        failures,
        malformed_lines: file.malformed.iter().map(|(l, _)| *l).collect(),
        metric_errors: items.iter().filter(|i| !i.failed).map(|i| i.errors.len()).sum(),
        flagged: items.iter().filter(|i| !i.flags.is_empty()).count(),
        false_deletion_rate,
        macro_rows,
        items,
    })
}
