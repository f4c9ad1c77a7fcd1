//! Retrieval and generation metrics, the false-deletion diagnostic and a benchmark harness.

mod bench;
mod judged;
mod metrics;

pub use bench::{
    parse_questions, run_benchmark, EvalOptions, ItemReport, MacroRow, Metric, MetricReport,
    Pipeline, PipelineOutput, QuestionFile, QuestionRecord, QuestionType, Scores,
};
pub use judged::{
    answer_accuracy, context_relevance, evidence_coverage, evidence_recall, factual_correctness,
    faithfulness, faithfulness_of_claims, false_deletion_rate, false_deletions,
    semantic_similarity, AccuracyBreakdown, ClaimCounts, Faithfulness, RelevanceGrades,
};
pub use metrics::{accuracy, factual_correctness_from_counts, lcs_len, rouge_l, rouge_l_tokens};

use crate::gateway::GatewayError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("all {0} benchmark items failed")]
    AllItemsFailed(usize),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, MockConfig};

    /// Answers with the reference sentence for known questions and fails on "boom".
    struct Canned;

    impl Pipeline for Canned {
        fn run(&self, query: &str) -> Result<PipelineOutput, String> {
            if query == "boom" {
                return Err("exploded".into());
            }
            Ok(PipelineOutput {
                answer: "Acme is based in Oslo.".into(),
                context: "Acme is based in Oslo. Acme makes bolts.".into(),
                pre_filter_context: Some("Acme is based in Oslo. Acme makes bolts. Bolt fact.".into()),
            })
        }
    }

    const FILE: &str = r#"{"question":"Where is Acme?","answer":"Acme is based in Oslo.","evidence":["Acme is based in Oslo"],"question_type":"Fact"}
{"question":"What does Acme make?","answer":"Acme makes bolts.","evidence":["Acme makes bolts","Bolt fact"],"question_type":"Reason","claims":["Acme makes bolts"]}
not json
"#;

    #[test]
    fn harness_isolates_malformed_lines() {
        let file = parse_questions(FILE);
        assert_eq!(file.records.len(), 2);
        assert_eq!(file.malformed.len(), 1);
        let gw = Gateway::mock(MockConfig::default());
        let report = run_benchmark(&file, &Canned, &gw, &EvalOptions::default()).unwrap();
        assert_eq!(report.failures, 1);
        assert_eq!(report.evaluated, 2);
        assert_eq!(report.malformed_lines, vec![3]);
        let groups: Vec<&str> = report.macro_rows.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(groups, ["Fact", "Reason", "all"]);
        let first = &report.items[0].scores;
        assert_eq!(first.rouge_l, Some(1.0));
        assert_eq!(first.evidence_coverage, Some(1.0));
        assert_eq!(first.faithfulness, Some(1.0));
        assert_eq!(first.false_deletion, Some(0.0));
        let second = &report.items[1].scores;
        // "Bolt fact" was in the pre-filter context only
        assert_eq!(second.false_deletion, Some(0.5));
        assert_eq!(report.false_deletion_rate, Some(0.25));
        for row in &report.macro_rows {
            for v in row.scores.values().into_iter().flatten() {
                assert!((0.0..=1.0).contains(&v));
            }
            if let (Some(acc), Some(fc), Some(ss)) = (
                row.scores.answer_accuracy,
                row.scores.factual_correctness,
                row.scores.semantic_similarity,
            ) {
                assert!((acc - (0.5 * fc + 0.5 * ss)).abs() < 1e-12);
            }
        }
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("group,items,context_relevance,"));
    }

    #[test]
    fn empty_metric_set_gives_counts_only() {
        let file = parse_questions(FILE);
        let gw = Gateway::mock(MockConfig::default());
        let opts = EvalOptions { metrics: vec![], ..EvalOptions::default() };
        let report = run_benchmark(&file, &Canned, &gw, &opts).unwrap();
        assert_eq!(report.evaluated, 2);
        assert!(report.items.iter().all(|i| i.scores == Scores::default()));
        assert_eq!(report.false_deletion_rate, None);
        assert_eq!(report.to_csv().lines().next(), Some("group,items"));
        let opts = EvalOptions { metrics: vec![Metric::RougeL], ..EvalOptions::default() };
        let report = run_benchmark(&file, &Canned, &gw, &opts).unwrap();
        assert_eq!(report.to_csv().lines().next(), Some("group,items,rouge_l"));
        // item 2 gets the canned Oslo answer: lcs 1 over 5 and 3 tokens gives 0.25
        assert_eq!(report.to_csv().lines().last(), Some("all,2,0.625000"));
    }

    #[test]
    fn harness_fails_only_when_everything_fails() {
        let file = parse_questions(r#"{"question":"boom","answer":"x","question_type":"Fact"}"#);
        let gw = Gateway::mock(MockConfig::default());
        assert!(matches!(
            run_benchmark(&file, &Canned, &gw, &EvalOptions::default()),
            Err(EvalError::AllItemsFailed(1))
        ));
    }

    #[test]
    fn deterministic_reports() {
        let file = parse_questions(FILE);
        let gw = Gateway::mock(MockConfig::default());
        let a = run_benchmark(&file, &Canned, &gw, &EvalOptions::default()).unwrap();
        let b = run_benchmark(&file, &Canned, &gw, &EvalOptions::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
