//! Deterministic rule-table oracle used as a stand-in reader model.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnswerAttempt, AttemptSource, Oracle, OracleError, OracleRequest};

/// Predicate over a request. Text conditions look at the context only, never
/// at the few-shot scaffolding of the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition {
    Always,
    QuestionIs { question: String },
    Contains { text: String },
    /// Some candidate occurs before the first occurrence of `anchor`.
    AnyBefore { candidates: Vec<String>, anchor: String },
    All { conditions: Vec<Condition> },
    Any { conditions: Vec<Condition> },
    Not { condition: Box<Condition> },
}

impl Condition {
    pub fn contains(text: impl Into<String>) -> Self {
        Condition::Contains { text: text.into() }
    }

    pub fn question_is(question: impl Into<String>) -> Self {
        Condition::QuestionIs {
            question: question.into(),
        }
    }

    pub fn all(conditions: Vec<Condition>) -> Self {
        Condition::All { conditions }
    }

    fn holds(&self, question: &str, context: &str) -> bool {
        match self {
            Condition::Always => true,
            Condition::QuestionIs { question: q } => q == question,
            Condition::Contains { text } => context.contains(text.as_str()),
            Condition::AnyBefore { candidates, anchor } => match context.find(anchor.as_str()) {
                Some(at) => candidates
                    .iter()
                    .any(|c| context[..at].contains(c.as_str())),
                None => false,
            },
            Condition::All { conditions } => conditions.iter().all(|c| c.holds(question, context)),
            Condition::Any { conditions } => conditions.iter().any(|c| c.holds(question, context)),
            Condition::Not { condition } => !condition.holds(question, context),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    pub when: Condition,
    pub answer: String,
}

/// Ordered rules; the first rule whose condition holds emits its answer.
/// Closed-book requests skip the rules and use the per-question table.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedOracleTable {
    pub rules: Vec<ScriptRule>,
    /// Question text to closed-book answer.
    #[serde(default)]
    pub closed_book: BTreeMap<String, String>,
    /// Emitted when no rule matches.
    pub default_answer: String,
}

impl ScriptedOracleTable {
    pub fn rule(mut self, when: Condition, answer: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            when,
            answer: answer.into(),
        });
        self
    }

    pub fn closed_book_answer(mut self, question: impl Into<String>, answer: impl Into<String>) -> Self {
        self.closed_book.insert(question.into(), answer.into());
        self
    }

    pub fn answer(&self, question: &str, context: Option<&str>) -> &str {
        match context {
            None => self
                .closed_book
                .get(question)
                .map_or(self.default_answer.as_str(), String::as_str),
            Some(ctx) => self
                .rules
                .iter()
                .find(|r| r.when.holds(question, ctx))
                .map_or(self.default_answer.as_str(), |r| r.answer.as_str()),
        }
    }
}

pub struct ScriptedOracle {
    table: ScriptedOracleTable,
    identity: String,
}

impl ScriptedOracle {
    pub fn new(table: ScriptedOracleTable) -> Self {
        let digest = Sha256::digest(serde_json::to_vec(&table).expect("table serializes"));
        let identity = format!("scripted:{}", &hex::encode(digest)[..16]);
        Self { table, identity }
    }

    pub fn table(&self) -> &ScriptedOracleTable {
        &self.table
    }
}

impl Oracle for ScriptedOracle {
    fn generate(&self, request: &OracleRequest) -> Result<AnswerAttempt, OracleError> {
        // rendering still validates the template
        request.render()?;
        Ok(AnswerAttempt {
            raw_text: self
                .table
                .answer(&request.question, request.context.as_deref())
                .to_owned(),
            latency: Duration::ZERO,
            source: AttemptSource::Scripted,
        })
    }

    fn identity(&self) -> String {
        self.identity.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn france() -> ScriptedOracle {
        ScriptedOracle::new(
            ScriptedOracleTable {
                default_answer: "Lyon".into(),
                ..Default::default()
            }
            .rule(Condition::contains("capital of France is Paris"), "Paris")
            .closed_book_answer("capital of france?", "Lyon"),
        )
    }

    #[test]
    fn first_matching_rule_wins() {
        let o = france();
        let a = o
            .generate(&OracleRequest::with_context(
                "capital of france?",
                "Fact: the capital of France is Paris.",
            ))
            .unwrap();
        assert_eq!(a.raw_text, "Paris");
        let miss = o
            .generate(&OracleRequest::with_context("capital of france?", "nothing here"))
            .unwrap();
        assert_eq!(miss.raw_text, "Lyon");
    }

    #[test]
    fn closed_book_uses_per_question_answer() {
        let o = france();
        let a = o
            .generate(&OracleRequest::closed_book("capital of france?"))
            .unwrap();
        assert_eq!(a.raw_text, "Lyon");
    }

    #[test]
    fn any_before_checks_order() {
        let c = Condition::AnyBefore {
            candidates: vec!["bad".into()],
            anchor: "good".into(),
        };
        assert!(c.holds("q", "bad then good"));
        assert!(!c.holds("q", "good then bad"));
        assert!(!c.holds("q", "bad only"));
    }

    #[test]
    fn purity_and_identity_stability() {
        let a = france();
        let b = france();
        assert_eq!(a.identity(), b.identity());
        let req = OracleRequest::with_context("q", "capital of France is Paris");
        assert_eq!(a.generate(&req).unwrap(), b.generate(&req).unwrap());
    }

    #[test]
    fn table_round_trips_through_json() {
        let t = france().table().clone();
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains(r#""kind":"contains""#));
        let back: ScriptedOracleTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }
}
