//! Three-round question/answer dialogues generated from a description.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::rules::{parse_description, ParsedDescription};
use crate::forge::signs::derive_signs;

const PROMPT: &str = include_str!("../../assets/dialogue_prompt.txt");
const KEYWORD: &str = "[Keyword]";

pub const DIALOGUE_ROUNDS: usize = 3;
pub const MAX_ANSWER_WORDS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRound {
    pub question: String,
    pub answer: String,
}

/// The generation prompt template with its `[Keyword]` placeholder.
pub fn prompt_template() -> &'static str {
    PROMPT.trim_end_matches('\n')
}

/// Fills the placeholder with a description.
pub fn render_prompt(keyword: &str) -> String {
    prompt_template().replacen(KEYWORD, keyword, 1)
}

/// Source of dialogue rounds for a rendered prompt.
pub trait DialogueGenerator {
    /// `description` is the keyword already substituted into `prompt`.
    fn generate(&mut self, prompt: &str, description: &str) -> Result<Vec<DialogueRound>>;
}

/// Asks `generator` for three rounds, retrying once on failure.
pub fn build_dialogue(description: &str, generator: &mut dyn DialogueGenerator) -> Result<Vec<DialogueRound>> {
    let prompt = render_prompt(description);
    let rounds = match generator.generate(&prompt, description) {
        Ok(r) => r,
        Err(first) => generator.generate(&prompt, description).map_err(|second| {
            Error::Generator(format!("retry failed: {second}; first attempt: {first}"))
        })?,
    };
    if rounds.len() != DIALOGUE_ROUNDS {
        return Err(Error::Generator(format!(
            "expected {DIALOGUE_ROUNDS} rounds, received {}",
            rounds.len()
        )));
    }
    Ok(rounds.into_iter().map(|r| DialogueRound { question: r.question, answer: cap_words(&r.answer, MAX_ANSWER_WORDS) }).collect())
}

pub fn cap_words(text: &str, max: usize) -> String {
    if text.split_whitespace().count() <= max {
        return text.to_string();
    }
    let mut out: String = text.split_whitespace().take(max).collect::<Vec<_>>().join(" ");
    if !out.ends_with('.') {
        out.push('.');
    }
    out
}

/// Offline generator producing templated diagnosis, evidence and advice rounds.
#[derive(Debug, Default, Clone, Copy)]
pub struct TemplateDialogueGenerator;

fn join_and(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

impl TemplateDialogueGenerator {
    fn from_parsed(parsed: &ParsedDescription) -> Vec<DialogueRound> {
        let diseases = parsed.diseases();
        let clauses: Vec<&str> = parsed.findings.iter().map(|(_, c)| c.as_str()).collect();
        if !parsed.abnormal {
            return alloc::vec![
                DialogueRound {
                    question: "What does my fundus image show?".into(),
                    answer: "Normal. The fundus image looks healthy and no apparent retinopathy is observed.".into(),
                },
                DialogueRound {
                    question: "Which findings show that my eye is healthy?".into(),
                    answer: format!("{}.", clauses.join(", ")),
                },
                DialogueRound {
                    question: "Do I need any treatment or follow-up?".into(),
                    answer: "No treatment is needed. A routine eye examination once a year is recommended.".into(),
                },
            ];
        }
        let signs = derive_signs(&diseases)
            .map(|v| v.signs().map(|s| s.name()).collect::<Vec<_>>())
            .unwrap_or_default();
        alloc::vec![
            DialogueRound {
                question: "What does my fundus image show?".into(),
                answer: format!("Abnormal. The image suggests {}.", join_and(&diseases)),
            },
            DialogueRound {
                question: "Which findings support this diagnosis?".into(),
                answer: format!(
                    "{}. These findings belong to the {} sign category.",
                    clauses.join(", "),
                    join_and(&signs)
                ),
            },
            DialogueRound {
                question: "What should I do next?".into(),
                answer: format!(
                    "Please see an ophthalmologist for a detailed examination of {}. Follow-up visits help track whether the condition progresses.",
                    join_and(&diseases)
                ),
            },
        ]
    }
}

impl DialogueGenerator for TemplateDialogueGenerator {
    fn generate(&mut self, _prompt: &str, description: &str) -> Result<Vec<DialogueRound>> {
        match parse_description(description) {
            Ok(parsed) => Ok(Self::from_parsed(&parsed)),
            Err(_) => Ok(alloc::vec![
                DialogueRound {
                    question: "What does my fundus image show?".into(),
                    answer: description.to_string(),
                },
                DialogueRound {
                    question: "Which findings support this?".into(),
                    answer: description.to_string(),
                },
                DialogueRound {
                    question: "What should I do next?".into(),
                    answer: "Please see an ophthalmologist for a detailed examination.".into(),
                },
            ]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::rules::{build_description, lookup, rule_table};

    #[test]
    fn prompt_substitution() {
        let rendered = render_prompt("Abnormal, Glaucoma, X.");
        assert_eq!(rendered.matches("Abnormal, Glaucoma, X.").count(), 1);
        assert!(!rendered.contains(KEYWORD));
        assert!(rendered.starts_with("You will be provided with information about fundus images"));
        assert!(rendered.ends_with("The number of questions should be three."));
    }

    #[test]
    fn template_generator_rounds() {
        let mut g = TemplateDialogueGenerator;
        for rule in rule_table() {
            let desc = if rule.abnormal {
                build_description(&[rule.disease], true).unwrap()
            } else {
                build_description::<&str>(&[], false).unwrap()
            };
            let rounds = build_dialogue(&desc, &mut g).unwrap();
            assert_eq!(rounds.len(), 3);
            assert!(rounds.iter().all(|r| r.answer.split_whitespace().count() <= MAX_ANSWER_WORDS));
            if rule.abnormal {
                assert!(rounds[0].answer.contains(rule.disease));
                assert!(rounds[1].answer.contains(lookup(rule.disease).unwrap().clause));
            } else {
                assert!(rounds[0].answer.contains("Normal"));
            }
        }
    }

    struct Flaky {
        failures: usize,
        calls: usize,
    }

    impl DialogueGenerator for Flaky {
        fn generate(&mut self, prompt: &str, d: &str) -> Result<Vec<DialogueRound>> {
            self.calls += 1;
            if self.calls <= self.failures {
                return Err(Error::Generator(format!("connection refused #{}", self.calls)));
            }
            TemplateDialogueGenerator.generate(prompt, d)
        }
    }

    #[test]
    fn generator_failure_retries_once() {
        let desc = build_description(&["Glaucoma"], true).unwrap();
        let mut once = Flaky { failures: 1, calls: 0 };
        assert_eq!(build_dialogue(&desc, &mut once).unwrap().len(), 3);
        assert_eq!(once.calls, 2);

        let mut twice = Flaky { failures: 2, calls: 0 };
        let err = build_dialogue(&desc, &mut twice).unwrap_err();
        assert!(matches!(&err, Error::Generator(m) if m.contains("connection refused #2")));
        assert_eq!(twice.calls, 2);
    }

    #[test]
    fn long_answers_are_capped() {
        let long: String = (0..250).map(|_| "word ").collect();
        assert_eq!(cap_words(&long, MAX_ANSWER_WORDS).split_whitespace().count(), 200);
    }
}
