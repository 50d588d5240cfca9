//! Pretraining caption cleanup, modality indicators and modality filtering.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Words dropped from captions: annotation marks and color names.
pub const NOISE_WORDS: [&str; 13] = [
    "arrow", "line", "star", "red", "yellow", "blue", "orange", "green", "purple", "violet", "black",
    "white", "gray",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "FA")]
    Fa,
    Fundus,
    #[serde(rename = "MRI")]
    Mri,
    #[serde(rename = "OCT")]
    Oct,
    Pathology,
    #[serde(rename = "PET")]
    Pet,
    #[serde(rename = "X-ray")]
    XRay,
    TableChart,
}

impl Modality {
    pub const RETAINED: [Modality; 8] = [
        Modality::Ct,
        Modality::Fa,
        Modality::Fundus,
        Modality::Mri,
        Modality::Oct,
        Modality::Pathology,
        Modality::Pet,
        Modality::XRay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Ct => "CT",
            Modality::Fa => "FA",
            Modality::Fundus => "Fundus",
            Modality::Mri => "MRI",
            Modality::Oct => "OCT",
            Modality::Pathology => "Pathology",
            Modality::Pet => "PET",
            Modality::XRay => "X-ray",
            Modality::TableChart => "TableChart",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An image-caption pair with the modality classifier's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainPair {
    pub image: String,
    pub caption: String,
    pub modality: Modality,
    pub confidence: f64,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Drops whole-word, case-insensitive occurrences of [`NOISE_WORDS`] and
/// collapses whitespace runs to single spaces.
pub fn clean_caption(text: &str) -> String {
    let mut kept = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if is_word_char(c) {
            let end = rest.find(|c: char| !is_word_char(c)).unwrap_or(rest.len());
            let word = &rest[..end];
            if !NOISE_WORDS.iter().any(|n| n.eq_ignore_ascii_case(word)) {
                kept.push_str(word);
            }
            rest = &rest[end..];
        } else {
            kept.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `"This is a <Modality> image. "` followed by the caption.
///
/// Not idempotent: a second call adds a second prefix.
pub fn prepend_modality(caption: &str, modality: Modality) -> Result<String> {
    if modality == Modality::TableChart {
        return Err(contract("prepend_modality: table/chart images are not captioned"));
    }
    Ok(format!("This is a {} image. {}", modality.name(), caption))
}

/// Keeps non-chart pairs whose confidence reaches `threshold`, in order.
pub fn filter_modality(pairs: &[PretrainPair], threshold: f64) -> Result<Vec<PretrainPair>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(contract("filter_modality: threshold outside [0, 1]"));
    }
    Ok(pairs
        .iter()
        .filter(|p| p.modality != Modality::TableChart && p.confidence >= threshold)
        .cloned()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cleaning_examples() {
        assert_eq!(clean_caption("red arrow indicates lesion"), "indicates lesion");
        assert_eq!(clean_caption("normal retina"), "normal retina");
        assert_eq!(clean_caption("outline of lesion"), "outline of lesion");
        assert_eq!(clean_caption("Lesion (RED Arrow) near the Star-shaped  area"), "Lesion ( ) near the -shaped area");
    }

    #[test]
    fn cleaning_removes_every_listed_word() {
        let all = NOISE_WORDS.join(" ");
        assert_eq!(clean_caption(&all), "");
        let upper = NOISE_WORDS.map(|w| w.to_uppercase()).join(", ");
        assert!(NOISE_WORDS
            .iter()
            .all(|w| !clean_caption(&upper).to_lowercase().split(|c: char| !c.is_alphanumeric()).any(|t| t == *w)));
    }

    #[test]
    fn modality_prefix() {
        assert_eq!(
            prepend_modality("optic disc visible", Modality::Fundus).unwrap(),
            "This is a Fundus image. optic disc visible"
        );
        assert_eq!(prepend_modality("", Modality::Oct).unwrap(), "This is a OCT image. ");
        let twice = prepend_modality(&prepend_modality("x", Modality::Ct).unwrap(), Modality::Ct).unwrap();
        assert_eq!(twice, "This is a CT image. This is a CT image. x");
        assert!(prepend_modality("x", Modality::TableChart).is_err());
    }

    fn pair(m: Modality, c: f64) -> PretrainPair {
        PretrainPair {
            image: format!("{m}-{c}"),
            caption: "c".into(),
            modality: m,
            confidence: c,
        }
    }

    #[test]
    fn modality_filtering() {
        let pairs = [
            pair(Modality::Fundus, 0.95),
            pair(Modality::TableChart, 1.0),
            pair(Modality::Ct, 0.4),
            pair(Modality::Oct, 1.0),
            pair(Modality::TableChart, 0.2),
            pair(Modality::XRay, 0.7),
        ];
        let ids = |v: Vec<PretrainPair>| v.into_iter().map(|p| p.image).collect::<Vec<_>>();
        assert_eq!(ids(filter_modality(&pairs, 0.0).unwrap()), ["Fundus-0.95", "CT-0.4", "OCT-1", "X-ray-0.7"]);
        assert_eq!(ids(filter_modality(&pairs, 1.0).unwrap()), ["OCT-1"]);
        assert_eq!(ids(filter_modality(&pairs, 0.7).unwrap()), ["Fundus-0.95", "OCT-1", "X-ray-0.7"]);
        assert!(filter_modality(&pairs, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent(words in proptest::collection::vec("(red|Line|outline|star|gray|lesion|x|  |\\(|-|retina|\n)", 0..20)) {
            let text = words.concat();
            let once = clean_caption(&text);
            prop_assert_eq!(clean_caption(&once), once);
        }

        #[test]
        fn cleaning_is_idempotent_on_arbitrary_text(text in "\\PC{0,60}") {
            let once = clean_caption(&text);
            prop_assert_eq!(clean_caption(&once), once);
        }
    }
}
