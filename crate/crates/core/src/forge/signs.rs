//! The six sign categories and the disease → sign mapping table.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGN_COUNT: usize = 6;

const SIGN_MAP: &str = include_str!("../../assets/sign_map.tsv");

/// Sign categories in canonical slot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Vascular,
    Macular,
    /// Fundus boundary color.
    Fbc,
    /// Optic cup and disc.
    Ocd,
    /// Fundus hemorrhages and exudation.
    Fhe,
    Other,
}

impl Sign {
    pub const ALL: [Sign; SIGN_COUNT] = [
        Sign::Vascular,
        Sign::Macular,
        Sign::Fbc,
        Sign::Ocd,
        Sign::Fhe,
        Sign::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Sign::Vascular => "Vascular",
            Sign::Macular => "Macular",
            Sign::Fbc => "FBC",
            Sign::Ocd => "OCD",
            Sign::Fhe => "FHE",
            Sign::Other => "Other",
        }
    }

    pub fn from_name(name: &str) -> Option<Sign> {
        Sign::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Six binary slots `[Vascular, Macular, FBC, OCD, FHE, Other]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignVector(pub [u8; SIGN_COUNT]);

impl SignVector {
    pub fn from_signs(signs: impl IntoIterator<Item = Sign>) -> Self {
        let mut v = SignVector::default();
        for s in signs {
            v.set(s);
        }
        v
    }

    pub fn set(&mut self, sign: Sign) {
        self.0[sign.index()] = 1;
    }

    pub fn has(&self, sign: Sign) -> bool {
        self.0[sign.index()] == 1
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&s| s == 1).count()
    }

    pub fn union(&self, other: &SignVector) -> SignVector {
        let mut out = *self;
        for i in 0..SIGN_COUNT {
            out.0[i] |= other.0[i];
        }
        out
    }

    pub fn is_binary(&self) -> bool {
        self.0.iter().all(|&s| s <= 1)
    }

    pub fn as_f64(&self) -> [f64; SIGN_COUNT] {
        self.0.map(f64::from)
    }

    /// Slots whose probability reaches `threshold`.
    pub fn from_probs(probs: &[f64; SIGN_COUNT], threshold: f64) -> Self {
        SignVector(probs.map(|p| u8::from(p >= threshold)))
    }

    pub fn signs(&self) -> impl Iterator<Item = Sign> + '_ {
        Sign::ALL.into_iter().filter(|s| self.has(*s))
    }
}

/// Parsed `sign_map.tsv`: disease name → signs, in file order.
pub fn sign_table() -> Vec<(&'static str, SignVector)> {
    SIGN_MAP
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|line| {
            let (name, signs) = line.split_once('\t').expect("sign map rows are tab separated");
            let v = SignVector::from_signs(
                signs
                    .split(',')
                    .map(|s| Sign::from_name(s.trim()).expect("sign map uses canonical names")),
            );
            (name, v)
        })
        .collect()
}

pub fn signs_for(disease: &str) -> Option<SignVector> {
    sign_table().into_iter().find(|(n, _)| *n == disease).map(|(_, v)| v)
}

/// Union of the mapped signs of every disease. An empty list is the healthy
/// convention and maps to `Other` alone.
pub fn derive_signs<S: AsRef<str>>(diseases: &[S]) -> Result<SignVector> {
    if diseases.is_empty() {
        return Ok(SignVector::from_signs([Sign::Other]));
    }
    let table = sign_table();
    let mut out = SignVector::default();
    for d in diseases {
        let d = d.as_ref();
        let v = table
            .iter()
            .find(|(n, _)| *n == d)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::UnknownDisease(String::from(d)))?;
        out = out.union(&v);
    }
    Ok(out)
}
