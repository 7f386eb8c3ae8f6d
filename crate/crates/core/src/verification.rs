//! Four-step check of a listed candidate, with one rename attempt.

use serde::{Deserialize, Serialize};

use crate::hierarchy::normalize_name;
use crate::oracle::{Oracle, OracleContext, OracleError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationStep {
    Instance,
    Part,
    UnderSeed,
    UnderParent,
    Rename,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Instance,
    Part,
    NotUnderSeed,
    NotUnderParent,
    RenameFailed,
}

impl RejectReason {
    fn of(step: VerificationStep) -> RejectReason {
        match step {
            VerificationStep::Instance => RejectReason::Instance,
            VerificationStep::Part => RejectReason::Part,
            VerificationStep::UnderSeed => RejectReason::NotUnderSeed,
            VerificationStep::UnderParent => RejectReason::NotUnderParent,
            VerificationStep::Rename => RejectReason::RenameFailed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    AcceptedRenamed(String),
    Rejected(RejectReason),
}

/// One oracle call made during verification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub step: VerificationStep,
    /// Name under test (the proposed name for a rename).
    pub name: String,
    /// `true` when the step passed; `None` when the oracle gave no usable answer.
    pub passed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    /// Set when a rejection stems from an oracle failure rather than an answer.
    pub inconclusive: bool,
    pub transcript: Vec<TranscriptEntry>,
    /// The oracle became unreachable; the verdict says nothing about the candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_error: Option<String>,
}

impl Verdict {
    pub fn accepted_name<'a>(&'a self, original: &'a str) -> Option<&'a str> {
        match &self.outcome {
            Outcome::Accepted => Some(original),
            Outcome::AcceptedRenamed(name) => Some(name),
            Outcome::Rejected(_) => None,
        }
    }

    pub fn rejection(&self) -> Option<RejectReason> {
        match self.outcome {
            Outcome::Rejected(r) => Some(r),
            _ => None,
        }
    }
}

/// One line of `rejected.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub name: String,
    pub parent: String,
    pub reason: RejectReason,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inconclusive: bool,
    pub transcript: Vec<TranscriptEntry>,
}

impl RejectionRecord {
    pub fn new(name: &str, parent: &str, verdict: &Verdict) -> Option<Self> {
        Some(RejectionRecord {
            name: name.to_string(),
            parent: parent.to_string(),
            reason: verdict.rejection()?,
            inconclusive: verdict.inconclusive,
            transcript: verdict.transcript.clone(),
        })
    }
}

enum Checks {
    Passed,
    Failed { step: VerificationStep, inconclusive: bool },
}

struct Run<'a> {
    oracle: &'a dyn Oracle,
    transcript: Vec<TranscriptEntry>,
    transport: Option<String>,
}

impl Run<'_> {
    fn record(&mut self, step: VerificationStep, name: &str, answer: &Result<bool, OracleError>) {
        self.transcript.push(TranscriptEntry {
            step,
            name: name.to_string(),
            passed: answer.as_ref().ok().copied(),
            detail: answer.as_ref().err().map(ToString::to_string),
        });
    }

    // Steps 1-4 in order, stopping at the first failure.
    fn checks(&mut self, ctx: &OracleContext, d: &str, c: &str) -> Checks {
        let steps = [
            VerificationStep::Instance,
            VerificationStep::Part,
            VerificationStep::UnderSeed,
            VerificationStep::UnderParent,
        ];
        for step in steps {
            let answer = match step {
                VerificationStep::Instance => self.oracle.is_instance(ctx, d).map(|x| !x),
                VerificationStep::Part => self.oracle.is_part(ctx, d).map(|x| !x),
                VerificationStep::UnderSeed => self.oracle.under_seed(ctx, d),
                VerificationStep::UnderParent => self.oracle.is_subcategory_of(ctx, d, c),
                VerificationStep::Rename => unreachable!(),
            };
            self.record(step, d, &answer);
            match answer {
                Ok(true) => {}
                Ok(false) => return Checks::Failed { step, inconclusive: false },
                Err(e) => {
                    if e.is_transport() {
                        self.transport = Some(e.to_string());
                    }
                    log::warn!("verification of {d:?} under {c:?}: {step:?} failed: {e}");
                    return Checks::Failed { step, inconclusive: true };
                }
            }
        }
        Checks::Passed
    }
}

/// Verifies candidate `d`, listed under `c`. `description` is the text the
/// oracle gave for `d`; it is attached to the prompts and drives the rename.
pub fn verify(oracle: &dyn Oracle, ctx: &OracleContext, d: &str, c: &str, description: Option<&str>) -> Verdict {
    let description = description.filter(|t| !t.trim().is_empty());
    let mut ctx = ctx.clone();
    if let Some(text) = description {
        ctx.descriptions.insert(d.to_string(), text.to_string());
    }
    let mut run = Run { oracle, transcript: Vec::new(), transport: None };
    let done = |run: Run<'_>, outcome, inconclusive| Verdict {
        outcome,
        inconclusive,
        transcript: run.transcript,
        transport_error: run.transport,
    };

    let step = match run.checks(&ctx, d, c) {
        Checks::Passed => return done(run, Outcome::Accepted, false),
        Checks::Failed { step, inconclusive }
            if inconclusive || matches!(step, VerificationStep::Instance | VerificationStep::Part) =>
        {
            return done(run, Outcome::Rejected(RejectReason::of(step)), inconclusive)
        }
        Checks::Failed { step, .. } => step,
    };
    log::debug!("{d:?} failed {step:?} under {c:?}, asking for a better name");

    let Some(text) = description else {
        log::debug!("no description for {d:?}, nothing to rename from");
        return done(run, Outcome::Rejected(RejectReason::RenameFailed), false);
    };
    let renamed = oracle.rename_from_description(&ctx, c, text);
    let (new_name, inconclusive) = match &renamed {
        Ok(Some(n)) if normalize_name(n) != normalize_name(d) => (Some(n.clone()), false),
        Ok(_) => (None, false),
        Err(e) => {
            if e.is_transport() {
                run.transport = Some(e.to_string());
            }
            (None, true)
        }
    };
    run.transcript.push(TranscriptEntry {
        step: VerificationStep::Rename,
        name: new_name.clone().unwrap_or_else(|| d.to_string()),
        passed: if inconclusive { None } else { Some(new_name.is_some()) },
        detail: match &renamed {
            Err(e) => Some(e.to_string()),
            Ok(Some(n)) if new_name.is_none() => Some(format!("proposed the same name {n:?}")),
            Ok(None) => Some("no name proposed".into()),
            _ => None,
        },
    });
    let Some(new_name) = new_name else {
        return done(run, Outcome::Rejected(RejectReason::RenameFailed), inconclusive);
    };

    ctx.descriptions.insert(new_name.clone(), text.to_string());
    match run.checks(&ctx, &new_name, c) {
        Checks::Passed => done(run, Outcome::AcceptedRenamed(new_name), false),
        Checks::Failed { step, inconclusive } => done(run, Outcome::Rejected(RejectReason::of(step)), inconclusive),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{GroundTruthTaxonomy, MockOracle};

    fn wrong_relations() -> MockOracle {
        let truth: GroundTruthTaxonomy =
            serde_json::from_str(include_str!("../fixtures/wrong_relations.json")).unwrap();
        MockOracle::noise_free(&truth).unwrap()
    }

    #[test]
    fn instance_is_rejected_at_step_one() {
        let oracle = wrong_relations();
        let ctx = OracleContext::new("University");
        let v = verify(&oracle, &ctx, "Yale University", "University", None);
        assert_eq!(v.outcome, Outcome::Rejected(RejectReason::Instance));
        assert_eq!(v.transcript.len(), 1);
        assert_eq!(oracle.query_log().len(), 1);
    }

    #[test]
    fn part_is_rejected_at_step_two() {
        let oracle = wrong_relations();
        let ctx = OracleContext::new("Bodypart");
        let v = verify(&oracle, &ctx, "Toes", "Feet", None);
        assert_eq!(v.outcome, Outcome::Rejected(RejectReason::Part));
        assert_eq!(v.transcript.len(), 2);
    }

    #[test]
    fn sloppy_name_is_renamed() {
        let oracle = wrong_relations();
        let truth: GroundTruthTaxonomy =
            serde_json::from_str(include_str!("../fixtures/wrong_relations.json")).unwrap();
        let desc = truth.descriptions["Apple"].clone();
        let ctx = OracleContext::new("Trees");
        let v = verify(&oracle, &ctx, "Apple", "Tree", Some(&desc));
        assert_eq!(v.outcome, Outcome::AcceptedRenamed("Apple Tree".into()));
        assert!(v.transcript.len() <= 9);
        assert_eq!(oracle.query_log().len(), v.transcript.len());
        let rename = v.transcript.iter().filter(|e| e.step == VerificationStep::Rename).count();
        assert_eq!(rename, 1);
    }

    #[test]
    fn genuine_subcategory_is_accepted_with_four_calls() {
        let oracle = wrong_relations();
        let ctx = OracleContext::new("Things");
        let v = verify(&oracle, &ctx, "Flat Feet", "Feet", None);
        assert_eq!(v.outcome, Outcome::Accepted);
        assert_eq!(v.transcript.len(), 4);
        assert!(v.transcript.iter().all(|e| e.passed == Some(true)));
    }

    #[test]
    fn failure_without_description_cannot_be_renamed() {
        let oracle = wrong_relations();
        let ctx = OracleContext::new("Trees");
        let v = verify(&oracle, &ctx, "IPad", "Apple Tree", None);
        assert_eq!(v.outcome, Outcome::Rejected(RejectReason::RenameFailed));
    }

    #[test]
    fn rejection_record_carries_reason() {
        let oracle = wrong_relations();
        let ctx = OracleContext::new("University");
        let v = verify(&oracle, &ctx, "Yale University", "University", None);
        let rec = RejectionRecord::new("Yale University", "University", &v).unwrap();
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"reason\":\"instance\""));
        assert!(RejectionRecord::new("x", "y", &Verdict { outcome: Outcome::Accepted, inconclusive: false, transcript: vec![], transport_error: None })
            .is_none());
    }
}
