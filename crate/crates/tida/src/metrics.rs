//! Caption evaluation: corpus BLEU@1-4 and skill-word confusion analysis,
//! with CSV/markdown report emission.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::TidaError;
use crate::skills::{detect, image_has_skill, tokenize, Skill, SkillLexicon};

/// One generated caption and its reference set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPair {
    pub image_id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

/// Corpus-level BLEU scores, cumulative over n-gram orders 1..=4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// bleu[n-1] is the cumulative BLEU@n score in [0, 1].
    pub bleu: [f64; 4],
    pub avg_1_4: f64,
    pub brevity_penalty: f64,
    pub candidate_length: usize,
    pub effective_ref_length: usize,
}

fn lower_tokens(text: &str) -> Vec<String> {
    tokenize(text, true).into_iter().map(|t| t.lower).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with multi-reference clipping, no smoothing. Empty
/// candidates simply contribute zero matches.
pub fn bleu_corpus(pairs: &[EvalPair]) -> Result<BleuReport, TidaError> {
    if pairs.is_empty() {
        return Err(TidaError::Config("bleu_corpus requires pairs".into()));
    }
    for p in pairs {
        if p.references.is_empty() {
            return Err(TidaError::Integrity(format!(
                "pair {} has no references",
                p.image_id
            )));
        }
    }

    let candidates: Vec<Vec<String>> = pairs.iter().map(|p| lower_tokens(&p.candidate)).collect();
    let references: Vec<Vec<Vec<String>>> = pairs
        .iter()
        .map(|p| p.references.iter().map(|r| lower_tokens(r)).collect())
        .collect();

    let candidate_length: usize = candidates.iter().map(Vec::len).sum();
    // effective reference length: closest reference length per candidate,
    // shorter one on ties
    let effective_ref_length: usize = candidates
        .iter()
        .zip(&references)
        .map(|(cand, refs)| {
            refs.iter()
                .map(Vec::len)
                .min_by_key(|&len| (len.abs_diff(cand.len()), len))
                .unwrap_or(0)
        })
        .sum();

    let mut precisions = [0.0f64; 4];
    for n in 1..=4 {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (cand, refs) in candidates.iter().zip(&references) {
            let cand_counts = ngram_counts(cand, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (gram, count) in ngram_counts(r, n) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(count);
                }
            }
            for (gram, count) in &cand_counts {
                matched += (*count).min(*max_ref.get(gram).unwrap_or(&0));
            }
            total += cand_counts.values().sum::<usize>();
        }
        precisions[n - 1] = if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64
        };
    }

    let brevity_penalty = if candidate_length == 0 {
        0.0
    } else if candidate_length < effective_ref_length {
        (1.0 - effective_ref_length as f64 / candidate_length as f64).exp()
    } else {
        1.0
    };

    let mut bleu = [0.0f64; 4];
    for n in 1..=4 {
        let head = &precisions[..n];
        if head.contains(&0.0) {
            bleu[n - 1] = 0.0;
        } else {
            let log_mean = head.iter().map(|p| p.ln()).sum::<f64>() / n as f64;
            bleu[n - 1] = brevity_penalty * log_mean.exp();
        }
    }
    let avg_1_4 = bleu.iter().sum::<f64>() / 4.0;
    Ok(BleuReport {
        bleu,
        avg_1_4,
        brevity_penalty,
        candidate_length,
        effective_ref_length,
    })
}

/// TP/FP/TN/FN tallies of skill-word usage over one evaluated set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub skill: Skill,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Per pair: positive prediction = detector fires on the candidate;
/// positive truth = any reference matches the skill.
pub fn skill_confusion(
    pairs: &[EvalPair],
    skill: Skill,
    lexicon: &SkillLexicon,
) -> ConfusionCounts {
    let mut counts = ConfusionCounts {
        skill,
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for pair in pairs {
        let generated = detect(&pair.candidate, skill, lexicon).fired();
        let truth = image_has_skill(&pair.references, skill, lexicon);
        match (generated, truth) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, false) => counts.tn += 1,
            (false, true) => counts.fn_ += 1,
        }
    }
    counts
}

/// Precision/recall/F1 for both classes, percent scale, macro-averaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillPRF {
    pub p_pos: f64,
    pub r_pos: f64,
    pub p_neg: f64,
    pub r_neg: f64,
    pub f1_pos: f64,
    pub f1_neg: f64,
    pub f1_macro: f64,
    /// Set when any precision/recall had a 0/0 denominator (reported as 0).
    pub degenerate: bool,
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

impl SkillPRF {
    /// Aggregate published or computed percent-scale rates into F1 scores.
    pub fn from_rates(p_pos: f64, r_pos: f64, p_neg: f64, r_neg: f64) -> SkillPRF {
        let f1_pos = harmonic(p_pos, r_pos);
        let f1_neg = harmonic(p_neg, r_neg);
        SkillPRF {
            p_pos,
            r_pos,
            p_neg,
            r_neg,
            f1_pos,
            f1_neg,
            f1_macro: (f1_pos + f1_neg) / 2.0,
            degenerate: false,
        }
    }
}

fn rate(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (100.0 * num as f64 / den as f64, false)
    }
}

pub fn skill_prf(c: &ConfusionCounts) -> SkillPRF {
    let (p_pos, d1) = rate(c.tp, c.tp + c.fp);
    let (r_pos, d2) = rate(c.tp, c.tp + c.fn_);
    let (p_neg, d3) = rate(c.tn, c.tn + c.fn_);
    let (r_neg, d4) = rate(c.tn, c.tn + c.fp);
    let mut prf = SkillPRF::from_rates(p_pos, r_pos, p_neg, r_neg);
    prf.degenerate = d1 || d2 || d3 || d4;
    prf
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

/// One evaluated model's metrics, a row in each emitted table.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub model: String,
    /// (test set name, BLEU) pairs.
    pub bleu: Vec<(String, BleuReport)>,
    pub prf: Vec<(Skill, SkillPRF)>,
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn one_dec(x: f64) -> String {
    format!("{x:.1}")
}

/// Render BLEU and skill-word P/R/F1 tables for a set of models.
pub fn emit_report(reports: &[EvalReport], format: ReportFormat) -> String {
    let mut out = String::new();
    let bleu_sets: Vec<&String> = reports
        .first()
        .map(|r| r.bleu.iter().map(|(name, _)| name).collect())
        .unwrap_or_default();
    let skills: Vec<Skill> = reports
        .first()
        .map(|r| r.prf.iter().map(|(s, _)| *s).collect())
        .unwrap_or_default();

    match format {
        ReportFormat::Markdown => {
            if !bleu_sets.is_empty() {
                out.push_str("## BLEU@1-4 average\n\n");
                let _ = writeln!(out, "| Train | {} |", join(&bleu_sets, " | "));
                let _ = writeln!(out, "|---{}|", "|---".repeat(bleu_sets.len()));
                for r in reports {
                    let cells: Vec<String> =
                        r.bleu.iter().map(|(_, b)| pct(b.avg_1_4)).collect();
                    let _ = writeln!(out, "| {} | {} |", r.model, cells.join(" | "));
                }
                out.push('\n');
            }
            if !skills.is_empty() {
                out.push_str("## Skill-word precision/recall/F1\n\n");
                out.push_str("| Train |");
                for s in &skills {
                    let _ = write!(out, " {s} P+ | {s} R+ | {s} P- | {s} R- | {s} F1 |");
                }
                out.push('\n');
                let _ = writeln!(out, "|---{}|", "|---".repeat(skills.len() * 5));
                for r in reports {
                    let _ = write!(out, "| {} |", r.model);
                    for (_, p) in &r.prf {
                        let _ = write!(
                            out,
                            " {} | {} | {} | {} | {} |",
                            one_dec(p.p_pos),
                            one_dec(p.r_pos),
                            one_dec(p.p_neg),
                            one_dec(p.r_neg),
                            one_dec(p.f1_macro),
                        );
                    }
                    out.push('\n');
                }
            }
        }
        ReportFormat::Csv => {
            if !bleu_sets.is_empty() {
                let _ = writeln!(out, "model,{}", join(&bleu_sets, ","));
                for r in reports {
                    let cells: Vec<String> =
                        r.bleu.iter().map(|(_, b)| pct(b.avg_1_4)).collect();
                    let _ = writeln!(out, "{},{}", r.model, cells.join(","));
                }
                out.push('\n');
            }
            if !skills.is_empty() {
                out.push_str("model");
                for s in &skills {
                    let _ = write!(out, ",{s}_p_pos,{s}_r_pos,{s}_p_neg,{s}_r_neg,{s}_f1");
                }
                out.push('\n');
                for r in reports {
                    out.push_str(&r.model);
                    for (_, p) in &r.prf {
                        let _ = write!(
                            out,
                            ",{},{},{},{},{}",
                            one_dec(p.p_pos),
                            one_dec(p.r_pos),
                            one_dec(p.p_neg),
                            one_dec(p.r_neg),
                            one_dec(p.f1_macro),
                        );
                    }
                    out.push('\n');
                }
            }
        }
    }
    out
}

fn join(items: &[&String], sep: &str) -> String {
    items
        .iter()
        .map(|s| s.as_str())
        .collect::<Vec<_>>()
        .join(sep)
}
