//! Skill-preserving caption perturbation: rewrite a skill-bearing caption
//! into a variant that still bears the skill.
//!
//! Gender swaps male forms for female counterparts, color redraws each color
//! word from the rest of the palette, counting moves the written number one
//! step. Only the matched tokens change; grammatical agreement elsewhere in
//! the caption is deliberately left untouched.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TidaError;
use crate::skills::{detect_tokens, tokenize, Skill, SkillLexicon, Token};

/// One token replacement applied by a perturbation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub token_index: usize,
    pub old_word: String,
    pub new_word: String,
}

/// A perturbed caption together with the exact substitutions applied and the
/// seed that reproduces them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedCaption {
    pub original: String,
    pub perturbed: String,
    pub skill: Skill,
    pub substitutions: Vec<Substitution>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderDirection {
    /// Replace male forms only (the default published rule).
    MaleToFemale,
    /// Also map female forms back to their male counterparts.
    Symmetric,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbOptions {
    /// Replace every matched occurrence, not just the first.
    pub replace_all: bool,
    pub gender_direction: GenderDirection,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        PerturbOptions {
            replace_all: true,
            gender_direction: GenderDirection::MaleToFemale,
        }
    }
}

fn match_case(template: &str, word: &str) -> String {
    let capitalized = template.chars().next().is_some_and(char::is_uppercase);
    if capitalized {
        let mut chars = word.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
            None => String::new(),
        }
    } else {
        word.to_string()
    }
}

/// Male form to its female counterpart; `guy`/`guys` have no single
/// counterpart and are sampled from the same-number female forms.
fn female_counterpart(male: &str, rng: &mut ChaCha8Rng) -> Option<&'static str> {
    match male {
        "man" => Some("woman"),
        "men" => Some("women"),
        "boy" => Some("girl"),
        "boys" => Some("girls"),
        "guy" => Some(*["girl", "woman"].choose(rng).unwrap()),
        "guys" => Some(*["girls", "women"].choose(rng).unwrap()),
        _ => None,
    }
}

fn male_counterpart(female: &str) -> Option<&'static str> {
    match female {
        "woman" => Some("man"),
        "women" => Some("men"),
        "girl" => Some("boy"),
        "girls" => Some("boys"),
        _ => None,
    }
}

/// True when `perturb` would succeed on this caption for this skill.
pub fn can_perturb(text: &str, skill: Skill, lexicon: &SkillLexicon, opts: &PerturbOptions) -> bool {
    let tokens = tokenize(text, lexicon.split_hyphens);
    !eligible_tokens(&tokens, skill, lexicon, opts).is_empty()
}

fn eligible_tokens(
    tokens: &[Token],
    skill: Skill,
    lexicon: &SkillLexicon,
    opts: &PerturbOptions,
) -> Vec<(usize, String)> {
    let spans = detect_tokens(tokens, skill, lexicon).spans;
    match skill {
        Skill::Gender => spans
            .into_iter()
            .filter(|(_, w)| {
                lexicon.male_forms.iter().any(|m| m == w)
                    || (opts.gender_direction == GenderDirection::Symmetric
                        && male_counterpart(w).is_some())
            })
            .collect(),
        _ => spans,
    }
}

fn apply(
    text: &str,
    skill: Skill,
    seed: u64,
    replacements: Vec<(usize, &Token, String)>,
) -> PerturbedCaption {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    let mut substitutions = Vec::with_capacity(replacements.len());
    for (token_index, token, new_word) in replacements {
        out.push_str(&text[cursor..token.start]);
        out.push_str(&match_case(&token.surface, &new_word));
        cursor = token.end;
        substitutions.push(Substitution {
            token_index,
            old_word: token.lower.clone(),
            new_word,
        });
    }
    out.push_str(&text[cursor..]);
    PerturbedCaption {
        original: text.to_string(),
        perturbed: out,
        skill,
        substitutions,
        seed,
    }
}

fn perturb_with<F>(
    text: &str,
    skill: Skill,
    lexicon: &SkillLexicon,
    opts: &PerturbOptions,
    seed: u64,
    mut pick: F,
) -> Result<PerturbedCaption, TidaError>
where
    F: FnMut(&str, &mut ChaCha8Rng) -> String,
{
    let tokens = tokenize(text, lexicon.split_hyphens);
    let mut eligible = eligible_tokens(&tokens, skill, lexicon, opts);
    if eligible.is_empty() {
        return Err(TidaError::NoEligibleToken {
            skill: skill.to_string(),
            caption: text.to_string(),
        });
    }
    if !opts.replace_all {
        eligible.truncate(1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let replacements = eligible
        .into_iter()
        .map(|(idx, word)| (idx, &tokens[idx], pick(&word, &mut rng)))
        .collect();
    Ok(apply(text, skill, seed, replacements))
}

/// Replace male gender forms with female counterparts (or both directions in
/// symmetric mode).
pub fn perturb_gender(
    text: &str,
    lexicon: &SkillLexicon,
    opts: &PerturbOptions,
    seed: u64,
) -> Result<PerturbedCaption, TidaError> {
    perturb_with(text, Skill::Gender, lexicon, opts, seed, |word, rng| {
        female_counterpart(word, rng)
            .or_else(|| male_counterpart(word))
            .expect("eligible gender token has a counterpart")
            .to_string()
    })
}

/// Replace each color word with a different color drawn uniformly at random.
pub fn perturb_color(
    text: &str,
    lexicon: &SkillLexicon,
    opts: &PerturbOptions,
    seed: u64,
) -> Result<PerturbedCaption, TidaError> {
    perturb_with(text, Skill::Color, lexicon, opts, seed, |word, rng| {
        let alternatives: Vec<&String> = lexicon.colors.iter().filter(|c| *c != word).collect();
        (*alternatives.choose(rng).expect("lexicon has >1 color")).clone()
    })
}

/// Replace each written number by its neighbor: a seeded coin picks +1 or
/// -1; at the ends of the list the in-range direction is forced.
pub fn perturb_counting(
    text: &str,
    lexicon: &SkillLexicon,
    opts: &PerturbOptions,
    seed: u64,
) -> Result<PerturbedCaption, TidaError> {
    perturb_with(text, Skill::Counting, lexicon, opts, seed, |word, rng| {
        let pos = lexicon
            .numbers
            .iter()
            .position(|n| n == word)
            .expect("eligible counting token is in the lexicon");
        let up: bool = rng.gen();
        let next = if pos == 0 {
            1
        } else if pos == lexicon.numbers.len() - 1 {
            pos - 1
        } else if up {
            pos + 1
        } else {
            pos - 1
        };
        lexicon.numbers[next].clone()
    })
}

/// Dispatch to the skill-specific perturbation.
pub fn perturb(
    text: &str,
    skill: Skill,
    lexicon: &SkillLexicon,
    opts: &PerturbOptions,
    seed: u64,
) -> Result<PerturbedCaption, TidaError> {
    match skill {
        Skill::Gender => perturb_gender(text, lexicon, opts, seed),
        Skill::Color => perturb_color(text, lexicon, opts, seed),
        Skill::Counting => perturb_counting(text, lexicon, opts, seed),
    }
}
