//! Metrics that need a judge or an embedder.

use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, factual_correctness_from_counts, fraction};
use super::EvalError;
use crate::gateway::{Gateway, GatewayError, Grader, JudgeQuestion};
use crate::vector::cosine;

fn supported(gw: &Gateway, claim: &str, context: &str) -> Result<bool, GatewayError> {
    Ok(gw.judge(&JudgeQuestion::Support { claim, context })?.decision.is_positive())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClaimCounts {
    pub fn score(&self) -> f64 {
        factual_correctness_from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Answer claims checked against the reference, reference claims checked against the answer.
pub fn factual_correctness(
    answer_claims: &[String],
    reference_claims: &[String],
    gw: &Gateway,
) -> Result<ClaimCounts, GatewayError> {
    if answer_claims.is_empty() || reference_claims.is_empty() {
        return Ok(ClaimCounts {
            tp: 0,
            fp: answer_claims.len(),
            fn_: reference_claims.len(),
        });
    }
    let reference = reference_claims.join("\n");
    let answer = answer_claims.join("\n");
    let mut counts = ClaimCounts { tp: 0, fp: 0, fn_: 0 };
    for c in answer_claims {
        if supported(gw, c, &reference)? {
            counts.tp += 1;
        } else {
            counts.fp += 1;
        }
    }
    for c in reference_claims {
        if !supported(gw, c, &answer)? {
            counts.fn_ += 1;
        }
    }
    Ok(counts)
}

/// Cosine of the two answer embeddings, negative values clamped to 0. Blank text scores 0.
pub fn semantic_similarity(generated: &str, reference: &str, gw: &Gateway) -> Result<f64, GatewayError> {
    if generated.trim().is_empty() || reference.trim().is_empty() {
        return Ok(0.0);
    }
    let v = gw.embed(&[generated.to_string(), reference.to_string()])?;
    Ok(cosine(&v[0].values, &v[1].values).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBreakdown {
    pub factual_correctness: f64,
    pub semantic_similarity: f64,
    pub answer_accuracy: f64,
    pub claims: ClaimCounts,
}

pub fn answer_accuracy(
    generated: &str,
    reference: &str,
    answer_claims: &[String],
    reference_claims: &[String],
    gw: &Gateway,
    alpha: f64,
) -> Result<AccuracyBreakdown, EvalError> {
    if generated.trim().is_empty() || reference.trim().is_empty() {
        return Err(EvalError::Precondition("answer accuracy needs both answers".into()));
    }
    let claims = factual_correctness(answer_claims, reference_claims, gw)?;
    let fc = claims.score();
    let ss = semantic_similarity(generated, reference, gw)?;
    Ok(AccuracyBreakdown {
        factual_correctness: fc,
        semantic_similarity: ss,
        answer_accuracy: accuracy(fc, ss, alpha),
        claims,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceGrades {
    /// `None` when a grader's reply could not be parsed; it then counts as 0.
    pub grades: [Option<f64>; 2],
    pub score: f64,
}

impl RelevanceGrades {
    pub fn flagged(&self) -> bool {
        self.grades.iter().any(Option::is_none)
    }
}

pub fn context_relevance(query: &str, context: &str, gw: &Gateway) -> Result<RelevanceGrades, GatewayError> {
    let mut grades = [None, None];
    for (slot, grader) in grades.iter_mut().zip([Grader::A, Grader::B]) {
        *slot = match gw.grade_relevance(query, context, grader) {
            Ok(g) => Some(g),
            Err(GatewayError::JudgeFormat { .. }) => None,
            Err(e) => return Err(e),
        };
    }
    let score = grades.iter().map(|g| g.unwrap_or(0.0)).sum::<f64>() / 2.0;
    Ok(RelevanceGrades { grades, score })
}

/// Share of reference claims the judge finds supported by the context.
pub fn evidence_recall(reference_claims: &[String], context: &str, gw: &Gateway) -> Result<f64, EvalError> {
    if reference_claims.is_empty() {
        return Err(EvalError::Precondition("evidence recall needs reference claims".into()));
    }
    let flags = reference_claims
        .iter()
        .map(|c| supported(gw, c, context))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(fraction(&flags).unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    pub score: f64,
    pub claims: Vec<String>,
    pub supported: usize,
    /// No claims were extracted; the score is 1 by convention.
    pub empty_claims: bool,
}

pub fn faithfulness(answer: &str, context: &str, gw: &Gateway) -> Result<Faithfulness, EvalError> {
    if answer.trim().is_empty() {
        return Err(EvalError::Precondition("faithfulness needs a non-empty answer".into()));
    }
    let claims = gw.extract_claims(answer)?;
    faithfulness_of_claims(answer, claims, context, gw)
}

/// [`faithfulness`] over claims already extracted from `answer`.
pub fn faithfulness_of_claims(
    answer: &str,
    claims: Vec<String>,
    context: &str,
    gw: &Gateway,
) -> Result<Faithfulness, EvalError> {
    if answer.trim().is_empty() {
        return Err(EvalError::Precondition("faithfulness needs a non-empty answer".into()));
    }
    if claims.is_empty() {
        return Ok(Faithfulness {
            score: 1.0,
            claims,
            supported: 0,
            empty_claims: true,
        });
    }
    let flags = claims
        .iter()
        .map(|c| supported(gw, c, context))
        .collect::<Result<Vec<_>, _>>()?;
    let supported = flags.iter().filter(|f| **f).count();
    Ok(Faithfulness {
        score: supported as f64 / claims.len() as f64,
        claims,
        supported,
        empty_claims: false,
    })
}

/// Share of required evidences the judge finds reflected in the answer.
pub fn evidence_coverage(evidences: &[String], answer: &str, gw: &Gateway) -> Result<f64, EvalError> {
    if evidences.is_empty() {
        return Err(EvalError::Precondition("evidence coverage needs required evidences".into()));
    }
    let flags = evidences
        .iter()
        .map(|e| {
            gw.judge(&JudgeQuestion::Reflects { evidence: e, answer })
                .map(|v| v.decision.is_positive())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(fraction(&flags).unwrap_or(0.0))
}

/// Per-query false deletions: of the gold evidences supported by the context before
/// elimination, the share no longer supported afterwards. `None` when nothing was supported
/// before.
pub fn false_deletions(
    gold: &[String],
    before: &str,
    after: &str,
    gw: &Gateway,
) -> Result<Option<f64>, GatewayError> {
    let mut supported_before = 0usize;
    let mut lost = 0usize;
    for g in gold {
        if supported(gw, g, before)? {
            supported_before += 1;
            if !supported(gw, g, after)? {
                lost += 1;
            }
        }
    }
    Ok((supported_before > 0).then(|| lost as f64 / supported_before as f64))
}

/// Mean of the per-query rates over queries that had supported evidence; 0 when none did.
pub fn false_deletion_rate(per_query: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = per_query.iter().flatten().copied().collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}
