//! Prompt templates. Placeholders are `{question}` and `{documents}`; `{{`
//! and `}}` escape literal braces. When no context is supplied, a line that
//! holds only `{documents}` is dropped, so closed-book prompts carry no
//! documents block at all.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("unknown placeholder {{{0}}} in prompt template")]
    UnknownPlaceholder(String),
    #[error("unterminated placeholder in prompt template")]
    Unterminated,
    #[error("unknown template id \"{0}\"")]
    UnknownTemplate(String),
}

/// Built-in templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    /// Few-shot question answering; used for mining and for answering.
    #[default]
    Qa,
    /// Few-shot evidential / non-evidential judgement.
    Evidentiality,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Qa => "qa",
            TemplateId::Evidentiality => "evidentiality",
        }
    }

    pub fn template(self) -> PromptTemplate<'static> {
        match self {
            TemplateId::Qa => PromptTemplate::new(QA_TEMPLATE),
            TemplateId::Evidentiality => PromptTemplate::new(EVIDENTIALITY_TEMPLATE),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qa" => Ok(TemplateId::Qa),
            "evidentiality" => Ok(TemplateId::Evidentiality),
            other => Err(PromptError::UnknownTemplate(other.to_owned())),
        }
    }
}

pub const QA_TEMPLATE: &str = "\
who won a million on deal or no deal
Answer: Tomorrow Rodriguez

who is the woman washing the car in cool hand luke
Answer: Joy Harmon

who is the actor that plays ragnar on vikings
Answer: Travis Fimmel

who said it's better to have loved and lost
Answer: Alfred , Lord Tennyson

name the first indian woman to be crowned as miss world
Answer: Reita Faria

{documents}
{question}
Answer:";

pub const EVIDENTIALITY_TEMPLATE: &str = "\
You are an expert at determining whether a document provides evidential support for a given question. You will receive a question and a document, and your task is to evaluate whether the document is evidential, partially evidential, or non-evidential in relation to the question.
Assess the support provided by the document using the following scale:
- [Evidential] - The document fully supports the question, providing clear and direct evidence that answers or addresses the query completely.
- [Non-Evidential] - The document does not provide relevant information or evidence related to the question, making it unrelated or insufficient to support the query.
Please provide your assessment and briefly justify your reasoning based on the content of the document in relation to the question.

Question: what is the temperature of dry ice in kelvin?
Evidence: At atmospheric pressure, sublimation/deposition occurs at or 194.65 K. The density of dry ice varies, but usually ranges between about.
Score: [Evidential]

Question: when did north vietnam unify with the south?
Evidence: The distinctive synthesizer theme was performed by the then-little-known Thomas Dolby, and this song also marked a major departure from their earlier singles because their previous singles were mid to upper tempo rock songs while this song was a softer love song with the energy of a power ballad.
Score: [Non-Evidential]

Question: who played all the carly 's on general hospital?
Evidence: Throughout the 2000s, Carly, then Tamara Braun (2001–05) goes on to become one of the
Score: [Non-Evidential]

Question: who sang the original blinded by the light?
Evidence: Light of Day (song) \"Light of Day\", sometimes written as \"(Just Around the Corner to the) Light of Day\", is a song written by Bruce Springsteen and performed initially by Joan Jett and Michael J.
Score: [Non-Evidential]

Question: who was the rfc editor until 1998 just provide the family name?
Evidence: Perhaps his most famous legacy is from RFC 760, which includes a robustness principle often called \"Postel's law\": \"an implementation
Score: [Non-Evidential]

Question: {question}
Evidence: {documents}
Score:";

#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate<'a> {
    text: &'a str,
}

enum Piece<'a> {
    Literal(&'a str),
    Brace(char),
    Question,
    Documents,
}

impl<'a> PromptTemplate<'a> {
    pub fn new(text: &'a str) -> Self {
        Self { text }
    }

    pub fn text(&self) -> &'a str {
        self.text
    }

    pub fn render(&self, question: &str, context: Option<&str>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.text.len() + question.len());
        let mut lines = self.text.split('\n').peekable();
        let mut first = true;
        while let Some(line) = lines.next() {
            if context.is_none() && line.trim() == "{documents}" {
                continue;
            }
            if !first {
                out.push('\n');
            }
            first = false;
            for piece in parse_line(line)? {
                match piece {
                    Piece::Literal(s) => out.push_str(s),
                    Piece::Brace(c) => out.push(c),
                    Piece::Question => out.push_str(question),
                    Piece::Documents => out.push_str(context.unwrap_or("")),
                }
            }
        }
        Ok(out)
    }
}

fn parse_line(line: &str) -> Result<Vec<Piece<'_>>, PromptError> {
    let mut pieces = Vec::new();
    let mut rest = line;
    while let Some(pos) = rest.find(['{', '}']) {
        if pos > 0 {
            pieces.push(Piece::Literal(&rest[..pos]));
        }
        let tail = &rest[pos..];
        if tail.starts_with("{{") {
            pieces.push(Piece::Brace('{'));
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            pieces.push(Piece::Brace('}'));
            rest = &tail[2..];
        } else if tail.starts_with('}') {
            // lone closing brace is literal
            pieces.push(Piece::Brace('}'));
            rest = &tail[1..];
        } else {
            let end = tail.find('}').ok_or(PromptError::Unterminated)?;
            match &tail[1..end] {
                "question" => pieces.push(Piece::Question),
                "documents" => pieces.push(Piece::Documents),
                other => return Err(PromptError::UnknownPlaceholder(other.to_owned())),
            }
            rest = &tail[end + 1..];
        }
    }
    if !rest.is_empty() {
        pieces.push(Piece::Literal(rest));
    }
    Ok(pieces)
}

/// Renders a built-in template.
pub fn render_prompt(
    template: TemplateId,
    question: &str,
    context: Option<&str>,
) -> Result<String, PromptError> {
    template.template().render(question, context)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_book_has_no_documents_block() {
        let p = render_prompt(TemplateId::Qa, "who wrote hamlet", None).unwrap();
        assert!(p.ends_with("Reita Faria\n\nwho wrote hamlet\nAnswer:"));
        assert!(!p.contains("{documents}"));
    }

    #[test]
    fn context_appears_above_question() {
        let p = render_prompt(TemplateId::Qa, "who wrote hamlet", Some("S1")).unwrap();
        let ctx = p.find("S1").unwrap();
        let q = p.find("who wrote hamlet").unwrap();
        assert!(ctx < q);
        assert!(p.ends_with("S1\nwho wrote hamlet\nAnswer:"));
    }

    #[test]
    fn evidentiality_template_substitutes_both_slots() {
        let p = render_prompt(TemplateId::Evidentiality, "q?", Some("ctx")).unwrap();
        assert!(p.ends_with("Question: q?\nEvidence: ctx\nScore:"));
    }

    #[test]
    fn unresolved_placeholder_is_named() {
        let t = PromptTemplate::new("{documents}\n{question} {answer}");
        assert_eq!(
            t.render("q", Some("c")),
            Err(PromptError::UnknownPlaceholder("answer".into()))
        );
        assert_eq!(
            PromptTemplate::new("{question").render("q", None),
            Err(PromptError::Unterminated)
        );
    }

    #[test]
    fn escaped_braces_render_literally() {
        let t = PromptTemplate::new("{{x}} {question}");
        assert_eq!(t.render("q", None).unwrap(), "{x} q");
    }

    #[test]
    fn template_ids_parse() {
        assert_eq!("qa".parse::<TemplateId>().unwrap(), TemplateId::Qa);
        assert_eq!(
            "nope".parse::<TemplateId>(),
            Err(PromptError::UnknownTemplate("nope".into()))
        );
    }
}
