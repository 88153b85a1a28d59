use serde::{Deserialize, Serialize};

use crate::observation::{Decision, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDecision {
    pub decision: Option<Decision>,
    pub reason: String,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl ParsedDecision {
    fn invalid(reason: String, diagnostic: impl Into<String>) -> Self {
        Self {
            decision: None,
            reason,
            valid: false,
            diagnostic: Some(diagnostic.into()),
        }
    }
}

/// Content of the last `<tag>…</tag>` pair. The last opening tag is paired
/// with the first closing tag after it, so nested tags yield the innermost.
fn last_tag<'a>(raw: &'a str, lower: &str, tag: &str) -> Result<Option<&'a str>, String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let Some(start) = lower.rfind(&open) else {
        return if lower.contains(&close) {
            Err(format!("</{tag}> without an opening tag"))
        } else {
            Ok(None)
        };
    };
    let body = start + open.len();
    match lower[body..].find(&close) {
        Some(len) => Ok(Some(&raw[body..body + len])),
        None => Err(format!("unterminated <{tag}> tag")),
    }
}

fn normalize(token: &str) -> String {
    let cleaned: String = token
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_uppercase() } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Extracts the decision from a raw agent response. Never panics; malformed
/// input yields `valid = false` with a diagnostic.
pub fn parse_decision(raw: &str, vocabulary: Vocabulary) -> ParsedDecision {
    let lower = raw.to_ascii_lowercase();
    let reason = match last_tag(raw, &lower, "reason") {
        Ok(Some(r)) => r.trim().to_string(),
        _ => String::new(),
    };
    let answer = match last_tag(raw, &lower, "answer") {
        Ok(Some(a)) => a,
        Ok(None) => return ParsedDecision::invalid(reason, "no <answer></answer> tag"),
        Err(e) => return ParsedDecision::invalid(reason, e),
    };
    let token = normalize(answer);
    match vocabulary.decisions().into_iter().find(|d| d.token() == token) {
        Some(d) => ParsedDecision {
            decision: Some(d),
            reason,
            valid: true,
            diagnostic: None,
        },
        None => ParsedDecision::invalid(
            reason,
            format!(
                "answer `{}` is not one of {}",
                answer.trim(),
                vocabulary.slash_list()
            ),
        ),
    }
}

/// One-line instruction appended when a response could not be parsed.
pub fn format_reminder(vocabulary: Vocabulary) -> String {
    format!(
        "Please state your final decision ({}) inside <answer></answer> tags.",
        vocabulary.slash_list()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let p = parse_decision("<reason>cheap</reason><answer>ORDER</answer>", Vocabulary::Queue);
        assert_eq!((p.decision, p.valid), (Some(Decision::Order), true));
        assert_eq!(p.reason, "cheap");

        let p = parse_decision("<answer> not   order </answer>", Vocabulary::Queue);
        assert_eq!((p.decision, p.valid), (Some(Decision::NotOrder), true));

        let p = parse_decision("I would buy it.", Vocabulary::Queue);
        assert!(!p.valid);
        assert!(p.diagnostic.unwrap().contains("no <answer>"));
    }

    #[test]
    fn last_answer_wins_and_tags_are_case_insensitive() {
        let raw = "<ANSWER>ORDER</ANSWER> on reflection... <Answer>Not Order.</Answer>";
        assert_eq!(parse_decision(raw, Vocabulary::Queue).decision, Some(Decision::NotOrder));
    }

    #[test]
    fn nested_tags_yield_innermost() {
        let raw = "<answer>x <answer>**PURCHASE**</answer></answer>";
        assert_eq!(parse_decision(raw, Vocabulary::Demand).decision, Some(Decision::Purchase));
    }

    #[test]
    fn out_of_vocabulary_and_malformed() {
        assert!(!parse_decision("<answer>INVEST</answer>", Vocabulary::Queue).valid);
        assert!(!parse_decision("<answer>ORDER", Vocabulary::Queue).valid);
        assert!(!parse_decision("ORDER</answer>", Vocabulary::Queue).valid);
        assert!(!parse_decision("<answer></answer>", Vocabulary::Queue).valid);
        assert!(!parse_decision("", Vocabulary::Queue).valid);
        let p = parse_decision("<answer>NOT_OFFER</answer>", Vocabulary::Inventor);
        assert_eq!(p.decision, Some(Decision::NotOffer));
    }

    #[test]
    fn round_trip_every_token() {
        for v in [Vocabulary::Queue, Vocabulary::Demand, Vocabulary::Investor, Vocabulary::Inventor] {
            for d in v.decisions() {
                let p = parse_decision(&format!("<answer>{}</answer>", d.token()), v);
                assert_eq!((p.decision, p.valid), (Some(d), true));
            }
        }
    }

    proptest! {
        #[test]
        fn never_panics_on_arbitrary_input(s in "\\PC*") {
            let p = parse_decision(&s, Vocabulary::Queue);
            prop_assert_eq!(p.valid, p.decision.is_some());
        }

        #[test]
        fn tolerant_of_surrounding_prose(pre in "[a-zA-Z .,]{0,40}", post in "[a-zA-Z .,]{0,40}") {
            let raw = format!("{pre}<answer>INVEST</answer>{post}");
            prop_assert_eq!(parse_decision(&raw, Vocabulary::Investor).decision, Some(Decision::Invest));
        }
    }
}
