//! Corpus records, synthetic corpus construction and validation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::caption::{clean_caption, filter_modality, prepend_modality, PretrainPair};
use crate::forge::dialogue::{build_dialogue, DialogueGenerator, DialogueRound, DIALOGUE_ROUNDS, MAX_ANSWER_WORDS};
use crate::forge::image::{synthetic_fundus, Image};
use crate::forge::instructions::{select_instruction, word_count};
use crate::forge::rules::{build_description, disease_vocabulary};
use crate::forge::signs::{derive_signs, SignVector};
use crate::forge::tokenizer::tokenize_capped;

/// Where a record's pixels live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Path(String),
    Inline(Image),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundusRecord {
    pub image: ImageRef,
    pub diseases: Vec<String>,
    pub abnormal: bool,
    pub signs: SignVector,
    pub description: String,
    pub dialogue: Vec<DialogueRound>,
}

/// A pretraining pair turned into one instruction/caption exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionDialogue {
    pub image: ImageRef,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    RoundCount,
    DescriptionPrefix,
    AbnormalMismatch,
    UnknownDisease,
    SignMismatch,
    SignEncoding,
    TokenLength,
}

impl ViolationKind {
    pub fn code(self) -> &'static str {
        match self {
            ViolationKind::RoundCount => "round-count",
            ViolationKind::DescriptionPrefix => "description-prefix",
            ViolationKind::AbnormalMismatch => "abnormal-mismatch",
            ViolationKind::UnknownDisease => "unknown-disease",
            ViolationKind::SignMismatch => "sign-mismatch",
            ViolationKind::SignEncoding => "sign-encoding",
            ViolationKind::TokenLength => "token-length",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub record: usize,
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {}: {}", self.record, self.kind.code(), self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusReport {
    pub records: usize,
    pub rounds: usize,
    pub violations: Vec<Violation>,
}

impl CorpusReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.rounds == DIALOGUE_ROUNDS * self.records
    }

    /// Indices of records with at least one violation.
    pub fn failing_records(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.violations.iter().map(|v| v.record).collect();
        out.dedup();
        out
    }
}

/// Violations of a single record, tagged with `index`.
pub fn validate_record(index: usize, rec: &FundusRecord, max_tokens: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, detail: String| out.push(Violation { record: index, kind, detail });
    if rec.dialogue.len() != DIALOGUE_ROUNDS {
        push(
            ViolationKind::RoundCount,
            format!("{} dialogue rounds, expected {DIALOGUE_ROUNDS}", rec.dialogue.len()),
        );
    }
    let prefix_abnormal = if rec.description.starts_with("Abnormal") {
        Some(true)
    } else if rec.description.starts_with("Normal") {
        Some(false)
    } else {
        None
    };
    match prefix_abnormal {
        None => push(
            ViolationKind::DescriptionPrefix,
            "description must begin with Normal or Abnormal".to_string(),
        ),
        Some(a) if a != rec.abnormal => push(
            ViolationKind::AbnormalMismatch,
            format!("abnormal flag {} disagrees with description", rec.abnormal),
        ),
        _ => {}
    }
    if !rec.signs.is_binary() || rec.signs.count() == 0 {
        push(ViolationKind::SignEncoding, format!("sign vector {:?} is not a non-empty binary vector", rec.signs.0));
    }
    let healthy: Vec<&str> = rec.diseases.iter().map(String::as_str).filter(|d| *d != "Healthy").collect();
    match derive_signs(&healthy) {
        Ok(expected) if expected != rec.signs => push(
            ViolationKind::SignMismatch,
            format!("stored signs {:?}, mapping table gives {:?}", rec.signs.0, expected.0),
        ),
        Ok(_) => {}
        Err(e) => push(ViolationKind::UnknownDisease, e.to_string()),
    }
    if tokenize_capped(&rec.description, max_tokens).truncated {
        push(ViolationKind::TokenLength, format!("description exceeds {max_tokens} tokens"));
    }
    for (i, r) in rec.dialogue.iter().enumerate() {
        let words = word_count(&r.answer);
        if words > MAX_ANSWER_WORDS {
            push(ViolationKind::TokenLength, format!("round {} answer has {words} words", i + 1));
        }
    }
    out
}

pub fn validate_corpus(records: &[FundusRecord], max_tokens: usize) -> CorpusReport {
    CorpusReport {
        records: records.len(),
        rounds: records.iter().map(|r| r.dialogue.len()).sum(),
        violations: records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| validate_record(i, r, max_tokens))
            .collect(),
    }
}

/// Builds one record from labels.
pub fn build_record(
    image: ImageRef,
    diseases: &[String],
    generator: &mut dyn DialogueGenerator,
) -> Result<FundusRecord> {
    let abnormal = !diseases.is_empty() && diseases.iter().any(|d| d != "Healthy");
    let names: Vec<&str> = diseases.iter().map(String::as_str).filter(|d| *d != "Healthy").collect();
    let description = build_description(&names, abnormal)?;
    let signs = derive_signs(&names)?;
    let dialogue = build_dialogue(&description, generator)?;
    Ok(FundusRecord {
        image,
        diseases: names.iter().map(|s| s.to_string()).collect(),
        abnormal,
        signs,
        description,
        dialogue,
    })
}

/// Desk-scale synthetic corpus: labels drawn from the rule vocabulary,
/// procedural images, dialogues from `generator`.
pub fn forge_corpus(
    n: usize,
    seed: u64,
    image_size: usize,
    generator: &mut dyn DialogueGenerator,
) -> Result<Vec<(FundusRecord, Image)>> {
    let vocab = disease_vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let roll: f64 = rng.gen();
        let diseases: Vec<String> = if roll < 0.15 {
            Vec::new()
        } else {
            let k = if roll < 0.85 { 1 } else { 2 };
            vocab.choose_multiple(&mut rng, k).map(|s| s.to_string()).collect()
        };
        let path = ImageRef::Path(format!("images/{i:06}.ppm"));
        let record = build_record(path, &diseases, generator)?;
        let image = synthetic_fundus(image_size, &record.signs, seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        out.push((record, image));
    }
    Ok(out)
}

/// Filters, cleans and prefixes captions, then pairs each with an
/// instruction chosen by answer length.
pub fn build_caption_dialogues(pairs: &[PretrainPair], threshold: f64, seed: u64) -> Result<Vec<CaptionDialogue>> {
    filter_modality(pairs, threshold)?
        .into_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let caption = clean_caption(&p.caption);
            if caption.is_empty() {
                return None;
            }
            Some((|| {
                let answer = prepend_modality(&caption, p.modality)?;
                let question = select_instruction(&answer, seed.wrapping_add(i as u64))?;
                Ok(CaptionDialogue {
                    image: ImageRef::Path(p.image.clone()),
                    question: question.text.to_string(),
                    answer,
                })
            })())
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e: Error| e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::caption::Modality;
    use crate::forge::dialogue::TemplateDialogueGenerator;
    use crate::forge::signs::Sign;
    use crate::forge::tokenizer::MAX_TOKENS;

    fn corpus(n: usize) -> Vec<FundusRecord> {
        forge_corpus(n, 42, 16, &mut TemplateDialogueGenerator)
            .unwrap()
            .into_iter()
            .map(|(r, _)| r)
            .collect()
    }

    #[test]
    fn clean_corpus_has_three_rounds_per_record() {
        let records = corpus(100);
        let report = validate_corpus(&records, MAX_TOKENS);
        assert_eq!(report.records, 100);
        assert_eq!(report.rounds, 300);
        assert!(report.is_clean(), "{:?}", report.violations);
        assert!(records.iter().any(|r| !r.abnormal));
        assert!(records.iter().any(|r| r.diseases.len() == 2));
    }

    #[test]
    fn forging_is_deterministic() {
        let a = forge_corpus(5, 7, 16, &mut TemplateDialogueGenerator).unwrap();
        let b = forge_corpus(5, 7, 16, &mut TemplateDialogueGenerator).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn violations_are_reported() {
        let mut records = corpus(3);
        records[0].dialogue.pop();
        let dr = build_record(
            ImageRef::Path("x.ppm".into()),
            &["Mild Non-Proliferative Diabetic Retinopathy".to_string()],
            &mut TemplateDialogueGenerator,
        )
        .unwrap();
        let mut bad_signs = dr.clone();
        bad_signs.signs.0[Sign::Fhe.index()] = 0;
        bad_signs.signs.set(Sign::Other);
        records.push(bad_signs);
        let mut bad_prefix = dr;
        bad_prefix.description = "Looks fine.".into();
        records.push(bad_prefix);

        let report = validate_corpus(&records, MAX_TOKENS);
        let kinds: Vec<(usize, &str)> = report.violations.iter().map(|v| (v.record, v.kind.code())).collect();
        assert!(kinds.contains(&(0, "round-count")));
        assert!(kinds.contains(&(3, "sign-mismatch")));
        assert!(kinds.contains(&(4, "description-prefix")));
        assert!(!report.is_clean());
        assert_eq!(report.failing_records(), [0, 3, 4]);
    }

    #[test]
    fn records_serialize_with_expected_fields() {
        let rec = &corpus(1)[0];
        let json = serde_json::to_value(rec).unwrap();
        for key in ["image", "diseases", "abnormal", "signs", "description", "dialogue"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let back: FundusRecord = serde_json::from_value(json).unwrap();
        assert_eq!(&back, rec);
    }

    #[test]
    fn caption_dialogues() {
        let pairs = [
            PretrainPair { image: "a.png".into(), caption: "red arrow marks the optic disc".into(), modality: Modality::Fundus, confidence: 0.9 },
            PretrainPair { image: "b.png".into(), caption: "table".into(), modality: Modality::TableChart, confidence: 1.0 },
            PretrainPair { image: "c.png".into(), caption: "axial slice".into(), modality: Modality::Ct, confidence: 0.1 },
        ];
        let d = build_caption_dialogues(&pairs, 0.5, 1).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].answer, "This is a Fundus image. marks the optic disc");
        assert!(crate::forge::instructions::templates(crate::forge::instructions::TemplateKind::Short)
            .iter()
            .any(|t| t.text == d[0].question));
    }
}
