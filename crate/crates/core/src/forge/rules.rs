//! Rule-based three-level descriptions: normal/abnormal, disease name,
//! clinical explanation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const RULES: &str = include_str!("../../assets/description_rules.txt");
const SUPPLEMENTARY: &str = include_str!("../../assets/supplementary_rules.txt");

pub const HEALTHY: &str = "Healthy";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DescriptionRule {
    /// 1-based position in the bundled rule list; `None` for supplementary rules.
    pub number: Option<usize>,
    /// The rule line exactly as bundled.
    pub text: &'static str,
    pub disease: &'static str,
    /// Explanation clause without the closing period.
    pub clause: &'static str,
    pub abnormal: bool,
}

fn parse_rule(number: Option<usize>, text: &'static str) -> DescriptionRule {
    let body = text.strip_suffix('.').unwrap_or(text);
    let (abnormal, rest) = if let Some(rest) = body.strip_prefix("Abnormal, ") {
        (true, rest)
    } else if let Some(rest) = body.strip_prefix("Normal, ") {
        (false, rest)
    } else {
        // One bundled rule omits the status word; it describes a disease.
        (true, body)
    };
    let (disease, clause) = rest.split_once(", ").expect("rule has a disease and a clause");
    DescriptionRule {
        number,
        text,
        disease,
        clause,
        abnormal,
    }
}

/// The 61 bundled rules in order.
pub fn rule_table() -> Vec<DescriptionRule> {
    RULES
        .lines()
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| parse_rule(Some(i + 1), l))
        .collect()
}

fn all_rules() -> Vec<DescriptionRule> {
    let mut rules = rule_table();
    rules.extend(SUPPLEMENTARY.lines().filter(|l| !l.is_empty()).map(|l| parse_rule(None, l)));
    rules
}

/// First rule naming `disease`.
pub fn lookup(disease: &str) -> Result<DescriptionRule> {
    all_rules()
        .into_iter()
        .find(|r| r.disease == disease)
        .ok_or_else(|| Error::UnknownDisease(String::from(disease)))
}

/// Disease vocabulary, deduplicated, in rule order (excluding `Healthy`).
pub fn disease_vocabulary() -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Vec::new();
    for r in all_rules() {
        if r.abnormal && !out.contains(&r.disease) {
            out.push(r.disease);
        }
    }
    out
}

/// Joins the status word with each disease's name and clause, in input
/// order. A healthy image (`abnormal == false`) yields the healthy rule.
pub fn build_description<S: AsRef<str>>(diseases: &[S], abnormal: bool) -> Result<String> {
    if !abnormal {
        if diseases.iter().any(|d| d.as_ref() != HEALTHY) {
            return Err(Error::Contract(String::from(
                "build_description: a normal image cannot list diseases",
            )));
        }
        return Ok(String::from(lookup(HEALTHY)?.text));
    }
    if diseases.is_empty() {
        return Err(Error::Contract(String::from(
            "build_description: an abnormal image needs at least one disease",
        )));
    }
    let mut out = String::from("Abnormal");
    for d in diseases {
        let rule = lookup(d.as_ref())?;
        if !rule.abnormal {
            return Err(Error::Contract(String::from(
                "build_description: Healthy cannot be combined with abnormal findings",
            )));
        }
        out.push_str(", ");
        out.push_str(rule.disease);
        out.push_str(", ");
        out.push_str(rule.clause);
    }
    out.push('.');
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDescription {
    pub abnormal: bool,
    /// `(disease, clause)` pairs in order.
    pub findings: Vec<(String, String)>,
}

impl ParsedDescription {
    pub fn diseases(&self) -> Vec<&str> {
        self.findings.iter().map(|(d, _)| d.as_str()).collect()
    }
}

/// Inverse of [`build_description`] for descriptions built from the rules.
pub fn parse_description(text: &str) -> Result<ParsedDescription> {
    let invalid = || Error::Validation(alloc::format!("unparseable description {text:?}"));
    let body = text.strip_suffix('.').ok_or_else(invalid)?;
    let (abnormal, mut rest) = if let Some(r) = body.strip_prefix("Abnormal, ") {
        (true, r)
    } else if let Some(r) = body.strip_prefix("Normal, ") {
        (false, r)
    } else {
        return Err(invalid());
    };
    let rules = all_rules();
    let mut findings = Vec::new();
    loop {
        let best = rules
            .iter()
            .filter(|r| r.abnormal == abnormal)
            .filter_map(|r| {
                let tail = rest.strip_prefix(r.disease)?.strip_prefix(", ")?.strip_prefix(r.clause)?;
                (tail.is_empty() || tail.starts_with(", ")).then_some((r, tail))
            })
            .max_by_key(|(r, _)| r.disease.len() + r.clause.len());
        let (rule, tail) = best.ok_or_else(invalid)?;
        findings.push((String::from(rule.disease), String::from(rule.clause)));
        if tail.is_empty() {
            break;
        }
        rest = &tail[2..];
    }
    Ok(ParsedDescription { abnormal, findings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn description_examples() {
        assert_eq!(
            build_description(&["Moderate Non-Proliferative Diabetic Retinopathy"], true).unwrap(),
            "Abnormal, Moderate Non-Proliferative Diabetic Retinopathy, Retinal hemorrhages or hard exudates observed."
        );
        assert_eq!(
            build_description::<&str>(&[], false).unwrap(),
            "Normal, Healthy, Normal optic disk color and clear optic disk boundaries, Normal Macular color, Normal fundus color, No apparent retinopathy."
        );
        assert_eq!(
            build_description(
                &["Severe Diabetic Macular Edema", "Moderate Non-Proliferative Diabetic Retinopathy"],
                true
            )
            .unwrap(),
            "Abnormal, Severe Diabetic Macular Edema, lots of hard exudates near to macula center observed, \
             Moderate Non-Proliferative Diabetic Retinopathy, Retinal hemorrhages or hard exudates observed."
        );
        assert_eq!(
            build_description(&["Glaucoma"], true).unwrap(),
            "Abnormal, Glaucoma, Abnormal optic disk color and unclear optic disk boundaries."
        );
    }

    #[test]
    fn description_errors() {
        assert!(matches!(build_description(&["Not A Disease"], true), Err(Error::UnknownDisease(n)) if n == "Not A Disease"));
        assert!(matches!(build_description::<&str>(&[], true), Err(Error::Contract(_))));
        assert!(matches!(build_description(&["Glaucoma"], false), Err(Error::Contract(_))));
    }

    #[test]
    fn every_rule_round_trips_through_build_and_parse() {
        for rule in rule_table() {
            let desc = if rule.abnormal {
                build_description(&[rule.disease], true).unwrap()
            } else {
                build_description::<&str>(&[], false).unwrap()
            };
            let parsed = parse_description(&desc).unwrap();
            assert_eq!(parsed.abnormal, rule.abnormal);
            let rebuilt = if parsed.abnormal {
                build_description(&parsed.diseases(), true).unwrap()
            } else {
                build_description::<&str>(&[], false).unwrap()
            };
            assert_eq!(rebuilt, desc);
        }
    }

    #[test]
    fn multi_disease_parse() {
        let names = ["Drusen", "Optic Disc Edema", "Cataract"];
        let desc = build_description(&names, true).unwrap();
        let parsed = parse_description(&desc).unwrap();
        assert_eq!(parsed.diseases(), names);
        assert!(parse_description("Something else.").is_err());
    }

    #[test]
    fn duplicate_name_resolves_to_first_rule() {
        let r = lookup("Hypertensive Retinopathy").unwrap();
        assert_eq!(r.number, Some(7));
        assert_eq!(rule_table()[58].disease, "Hypertensive Retinopathy");
    }
}
