//! Skill lexicons and the binary skill detectors over caption text.
//!
//! A "skill" is one of three caption-level attributes (gender, color,
//! counting), each operationalized as a word list. Detection is whole-token,
//! case-insensitive matching after tokenization, so "manner" never matches
//! "man".

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::TidaError;

/// One of the three targeted caption skills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Skill {
    Gender,
    Color,
    Counting,
}

impl Skill {
    pub const ALL: [Skill; 3] = [Skill::Gender, Skill::Color, Skill::Counting];
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Skill::Gender => write!(f, "gender"),
            Skill::Color => write!(f, "color"),
            Skill::Counting => write!(f, "counting"),
        }
    }
}

impl FromStr for Skill {
    type Err = TidaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gender" => Ok(Skill::Gender),
            "color" => Ok(Skill::Color),
            "counting" => Ok(Skill::Counting),
            other => Err(TidaError::Config(format!("unknown skill: {other}"))),
        }
    }
}

/// Per-skill word lists driving detection and replacement.
///
/// The built-in defaults are the published word lists; a TOML or JSON file
/// with the same field names can override any of them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SkillLexicon {
    /// Color words, each of which can replace any other.
    pub colors: Vec<String>,
    /// Written numbers in increasing order; perturbation moves one step.
    pub numbers: Vec<String>,
    /// Male gender forms, keyed for replacement by their grammatical number.
    pub male_forms: Vec<String>,
    /// Female gender forms.
    pub female_forms: Vec<String>,
    /// Split tokens at hyphens, so "two-year-old" yields a counting match.
    pub split_hyphens: bool,
}

impl Default for SkillLexicon {
    fn default() -> Self {
        SkillLexicon {
            colors: to_strings(&[
                "blue", "brown", "green", "grey", "orange", "pink", "purple", "red", "yellow",
            ]),
            numbers: to_strings(&["one", "two", "three", "four", "five", "six"]),
            male_forms: to_strings(&["boy", "boys", "man", "men", "guy", "guys"]),
            female_forms: to_strings(&["girl", "girls", "woman", "women"]),
            split_hyphens: true,
        }
    }
}

fn to_strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl SkillLexicon {
    /// Load an override lexicon from a TOML or JSON file (by extension).
    pub fn load(path: &Path) -> Result<Self, TidaError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TidaError::Io(format!("{}: {e}", path.display())))?;
        let lex: SkillLexicon = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| TidaError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| TidaError::Config(format!("{}: {e}", path.display())))?
        };
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<(), TidaError> {
        for list in [
            &self.colors,
            &self.numbers,
            &self.male_forms,
            &self.female_forms,
        ] {
            let mut seen = BTreeSet::new();
            for w in list {
                if w.is_empty() || *w != w.to_lowercase() {
                    return Err(TidaError::Config(format!(
                        "lexicon entries must be nonempty lowercase: {w:?}"
                    )));
                }
                if !seen.insert(w) {
                    return Err(TidaError::Config(format!("duplicate lexicon entry: {w}")));
                }
            }
        }
        if self.numbers.len() < 2 {
            return Err(TidaError::Config(
                "counting lexicon needs at least two numbers".into(),
            ));
        }
        Ok(())
    }

    /// All detect words for a skill. Gender is the union of male and female
    /// forms; replacement direction is handled by the perturber.
    pub fn detect_words(&self, skill: Skill) -> Vec<&str> {
        match skill {
            Skill::Color => self.colors.iter().map(String::as_str).collect(),
            Skill::Counting => self.numbers.iter().map(String::as_str).collect(),
            Skill::Gender => self
                .male_forms
                .iter()
                .chain(self.female_forms.iter())
                .map(String::as_str)
                .collect(),
        }
    }

    fn contains(&self, skill: Skill, lower: &str) -> bool {
        self.detect_words(skill).contains(&lower)
    }

    /// Stable digest of the lexicon content, recorded in manifest headers.
    pub fn content_hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("lexicon serializes");
        let digest = Sha256::digest(canon.as_bytes());
        format!("{digest:x}")
    }
}

/// One caption token with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Token text as it appears in the caption.
    pub surface: String,
    /// Lowercased shadow form used for matching.
    pub lower: String,
    /// Byte offset of the first character.
    pub start: usize,
    /// Byte offset one past the last character.
    pub end: usize,
}

/// Split a caption on whitespace and punctuation, discarding punctuation.
///
/// Hyphens split tokens when `split_hyphens` is set (the default lexicon
/// behavior), so "two-year-old" yields ["two", "year", "old"].
pub fn tokenize(text: &str, split_hyphens: bool) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        let breaks = !ch.is_alphanumeric() && !(ch == '-' && !split_hyphens);
        if breaks {
            if let Some(s) = start.take() {
                push_token(&mut tokens, text, s, i);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        push_token(&mut tokens, text, s, text.len());
    }
    tokens
}

fn push_token(tokens: &mut Vec<Token>, text: &str, start: usize, end: usize) {
    let surface = &text[start..end];
    tokens.push(Token {
        surface: surface.to_string(),
        lower: surface.to_lowercase(),
        start,
        end,
    });
}

/// Where a skill detector fired within one caption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillMatch {
    pub skill: Skill,
    /// (token index, matched lowercase word) pairs, token index increasing.
    pub spans: Vec<(usize, String)>,
}

impl SkillMatch {
    pub fn fired(&self) -> bool {
        !self.spans.is_empty()
    }
}

/// The binary skill detector: all whole-token, case-insensitive matches of
/// the skill's word list.
pub fn detect(text: &str, skill: Skill, lexicon: &SkillLexicon) -> SkillMatch {
    let tokens = tokenize(text, lexicon.split_hyphens);
    detect_tokens(&tokens, skill, lexicon)
}

pub(crate) fn detect_tokens(tokens: &[Token], skill: Skill, lexicon: &SkillLexicon) -> SkillMatch {
    let spans = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| lexicon.contains(skill, &t.lower))
        .map(|(i, t)| (i, t.lower.clone()))
        .collect();
    SkillMatch { skill, spans }
}

/// Image-level membership: true iff the detector fires on any reference.
pub fn image_has_skill<S: AsRef<str>>(captions: &[S], skill: Skill, lexicon: &SkillLexicon) -> bool {
    captions
        .iter()
        .any(|c| detect(c.as_ref(), skill, lexicon).fired())
}
