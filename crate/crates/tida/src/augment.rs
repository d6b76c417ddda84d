//! Manifest building: targeted augmentation per skill, the combined all-skill
//! set, and the random-caption baseline. Each build starts from a copy of the
//! original train rows and appends generated (caption, image) pairs with full
//! provenance.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{filter_by_skill, CaptionRecord, Dataset, ImageRef};
use crate::error::TidaError;
use crate::genclient::{generate_batch, Backend, GenerationRequest, RetryPolicy};
use crate::perturb::{can_perturb, perturb, PerturbOptions};
use crate::skills::{Skill, SkillLexicon};

/// How a manifest row came to exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Tida {
        skill: Skill,
        source_image_id: String,
        source_ref_index: u32,
        seed: u64,
    },
    RandomBaseline {
        source_image_id: String,
        source_ref_index: u32,
    },
}

/// One (caption, image) training pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub caption: String,
    pub image: ImageRef,
    pub provenance: Provenance,
}

/// Header line written before the rows of a manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub name: String,
    pub seed: u64,
    pub budgets: Vec<(String, usize)>,
    pub backend: String,
    pub lexicon_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub rows: Vec<ManifestRow>,
    pub budget_used: usize,
}

/// Generation failures recorded during a build; they reduce budget_used but
/// do not abort it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FailureReport {
    pub failures: Vec<FailureEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureEntry {
    pub request_id: String,
    pub caption: String,
    pub error: String,
}

/// Shared build machinery: the generation backend plus filesystem targets.
pub struct AugmentContext<'a> {
    pub backend: &'a dyn Backend,
    pub out_dir: PathBuf,
    pub journal_path: PathBuf,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub lexicon: &'a SkillLexicon,
    pub perturb_opts: PerturbOptions,
}

impl DatasetManifest {
    pub fn original_rows(&self) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(|r| r.provenance == Provenance::Original)
    }

    pub fn augmented_rows(&self) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(|r| r.provenance != Provenance::Original)
    }

    /// Header line followed by one JSON row per line.
    pub fn write<W: Write>(&self, mut out: W) -> Result<(), TidaError> {
        let header = serde_json::to_string(&self.header)
            .map_err(|e| TidaError::Io(format!("serialize header: {e}")))?;
        writeln!(out, "{header}").map_err(|e| TidaError::Io(e.to_string()))?;
        for row in &self.rows {
            let line = serde_json::to_string(row)
                .map_err(|e| TidaError::Io(format!("serialize row: {e}")))?;
            writeln!(out, "{line}").map_err(|e| TidaError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn read<R: std::io::Read>(reader: R) -> Result<Self, TidaError> {
        let mut lines = BufReader::new(reader).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| TidaError::Integrity("manifest missing header line".into()))?
            .map_err(|e| TidaError::Io(e.to_string()))?;
        let header: ManifestHeader = serde_json::from_str(&header_line)
            .map_err(|e| TidaError::Integrity(format!("manifest header: {e}")))?;
        let mut rows = Vec::new();
        for line in lines {
            let line = line.map_err(|e| TidaError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ManifestRow = serde_json::from_str(&line)
                .map_err(|e| TidaError::Integrity(format!("manifest row: {e}")))?;
            rows.push(row);
        }
        let budget_used = rows
            .iter()
            .filter(|r| r.provenance != Provenance::Original)
            .count();
        Ok(DatasetManifest {
            header,
            rows,
            budget_used,
        })
    }
}

fn original_rows(train: &Dataset) -> Vec<ManifestRow> {
    let by_id: std::collections::BTreeMap<&str, &ImageRef> = train
        .images
        .iter()
        .map(|i| (i.image_id.as_str(), i))
        .collect();
    train
        .captions
        .iter()
        .map(|cap| ManifestRow {
            caption: cap.text.clone(),
            image: (*by_id.get(cap.image_id.as_str()).expect("validated dataset")).clone(),
            provenance: Provenance::Original,
        })
        .collect()
}

fn sample_without_replacement<T: Clone>(
    pool: &[T],
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<T> {
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    indices.shuffle(rng);
    indices
        .into_iter()
        .take(budget)
        .map(|i| pool[i].clone())
        .collect()
}

/// Generate augmentation rows for one skill; used by both the targeted and
/// the combined build.
fn augmented_rows_for_skill(
    train: &Dataset,
    skill: Skill,
    budget: usize,
    ctx: &AugmentContext<'_>,
    rng: &mut ChaCha8Rng,
    failures: &mut FailureReport,
) -> Result<Vec<ManifestRow>, TidaError> {
    let subset = filter_by_skill(train, skill, ctx.lexicon)?;
    let caption_text: std::collections::BTreeMap<(&str, u32), &str> = train
        .captions
        .iter()
        .map(|c| ((c.image_id.as_str(), c.ref_index), c.text.as_str()))
        .collect();
    // captions where the perturbation precondition actually holds (for
    // gender that is stricter than detection)
    let eligible: Vec<(String, u32)> = subset
        .matched
        .iter()
        .filter(|(id, idx)| {
            let text = caption_text[&(id.as_str(), *idx)];
            can_perturb(text, skill, ctx.lexicon, &ctx.perturb_opts)
        })
        .cloned()
        .collect();

    let selected = sample_without_replacement(&eligible, budget, rng);

    let mut requests = Vec::with_capacity(selected.len());
    let mut perturbed = Vec::with_capacity(selected.len());
    for (image_id, ref_index) in &selected {
        let text = caption_text[&(image_id.as_str(), *ref_index)];
        let caption_seed: u64 = rng.gen();
        let p = perturb(text, skill, ctx.lexicon, &ctx.perturb_opts, caption_seed)?;
        let request_id = format!("tida-{skill}-{image_id}-{ref_index}");
        let mut req = GenerationRequest::new(p.perturbed.clone(), request_id);
        req.seed = Some(caption_seed);
        requests.push(req);
        perturbed.push((image_id.clone(), *ref_index, caption_seed, p));
    }

    let outcome = generate_batch(
        &requests,
        ctx.backend,
        ctx.max_in_flight,
        &ctx.out_dir,
        &ctx.journal_path,
        &ctx.retry,
    )?;

    let mut rows = Vec::new();
    for (result, (image_id, ref_index, caption_seed, p)) in
        outcome.results.into_iter().zip(perturbed)
    {
        match result {
            Ok(gen) => rows.push(ManifestRow {
                caption: p.perturbed,
                image: ImageRef {
                    image_id: gen.request_id,
                    file_path: Some(gen.image_path.display().to_string()),
                },
                provenance: Provenance::Tida {
                    skill,
                    source_image_id: image_id,
                    source_ref_index: ref_index,
                    seed: caption_seed,
                },
            }),
            Err(e) => failures.failures.push(FailureEntry {
                request_id: format!("tida-{skill}-{image_id}-{ref_index}"),
                caption: p.perturbed,
                error: e.to_string(),
            }),
        }
    }
    Ok(rows)
}

fn header(
    name: &str,
    seed: u64,
    budgets: Vec<(String, usize)>,
    ctx: &AugmentContext<'_>,
) -> ManifestHeader {
    ManifestHeader {
        name: name.to_string(),
        seed,
        budgets,
        backend: ctx.backend.name().to_string(),
        lexicon_hash: ctx.lexicon.content_hash(),
    }
}

/// Targeted build for one skill: originals plus up to `budget` perturbed
/// pairs sampled without replacement from the eligible captions.
pub fn build_targeted(
    train: &Dataset,
    skill: Skill,
    budget: usize,
    ctx: &AugmentContext<'_>,
    seed: u64,
) -> Result<(DatasetManifest, FailureReport), TidaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = FailureReport::default();
    let mut rows = original_rows(train);
    let augmented = augmented_rows_for_skill(train, skill, budget, ctx, &mut rng, &mut failures)?;
    let budget_used = augmented.len();
    rows.extend(augmented);
    let name = format!("train_{}-{skill}", ctx.backend.name());
    Ok((
        DatasetManifest {
            header: header(&name, seed, vec![(skill.to_string(), budget)], ctx),
            rows,
            budget_used,
        },
        failures,
    ))
}

/// Combined build: one copy of the originals, then the three targeted
/// augmentations concatenated in gender, color, counting order.
pub fn build_all(
    train: &Dataset,
    budgets: [(Skill, usize); 3],
    ctx: &AugmentContext<'_>,
    seed: u64,
) -> Result<(DatasetManifest, FailureReport), TidaError> {
    let mut failures = FailureReport::default();
    let mut rows = original_rows(train);
    let mut budget_used = 0;
    let order = [Skill::Gender, Skill::Color, Skill::Counting];
    for (slot, skill) in order.iter().enumerate() {
        let budget = budgets
            .iter()
            .find(|(s, _)| s == skill)
            .map(|(_, b)| *b)
            .unwrap_or(0);
        // distinct deterministic stream per skill
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_add(1 + slot as u64).wrapping_mul(0x9e3779b97f4a7c15),
        );
        let augmented =
            augmented_rows_for_skill(train, *skill, budget, ctx, &mut rng, &mut failures)?;
        budget_used += augmented.len();
        rows.extend(augmented);
    }
    let budgets_named = order
        .iter()
        .map(|s| {
            (
                s.to_string(),
                budgets
                    .iter()
                    .find(|(skill, _)| skill == s)
                    .map(|(_, b)| *b)
                    .unwrap_or(0),
            )
        })
        .collect();
    let name = format!("train_{}-all", ctx.backend.name());
    Ok((
        DatasetManifest {
            header: header(&name, seed, budgets_named, ctx),
            rows,
            budget_used,
        },
        failures,
    ))
}

/// Baseline build: `budget` captions sampled uniformly from all train
/// captions, generated unmodified.
pub fn build_random_baseline(
    train: &Dataset,
    budget: usize,
    ctx: &AugmentContext<'_>,
    seed: u64,
) -> Result<(DatasetManifest, FailureReport), TidaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = FailureReport::default();
    let mut rows = original_rows(train);

    let pool: Vec<&CaptionRecord> = train.captions.iter().collect();
    let selected = sample_without_replacement(&pool, budget, &mut rng);

    let requests: Vec<GenerationRequest> = selected
        .iter()
        .map(|cap| {
            let request_id = format!("rnd-{}-{}", cap.image_id, cap.ref_index);
            let mut req = GenerationRequest::new(cap.text.clone(), request_id);
            req.seed = Some(seed);
            req
        })
        .collect();
    let outcome = generate_batch(
        &requests,
        ctx.backend,
        ctx.max_in_flight,
        &ctx.out_dir,
        &ctx.journal_path,
        &ctx.retry,
    )?;

    let mut budget_used = 0;
    for (result, cap) in outcome.results.into_iter().zip(selected) {
        match result {
            Ok(gen) => {
                budget_used += 1;
                rows.push(ManifestRow {
                    caption: cap.text.clone(),
                    image: ImageRef {
                        image_id: gen.request_id,
                        file_path: Some(gen.image_path.display().to_string()),
                    },
                    provenance: Provenance::RandomBaseline {
                        source_image_id: cap.image_id.clone(),
                        source_ref_index: cap.ref_index,
                    },
                });
            }
            Err(e) => failures.failures.push(FailureEntry {
                request_id: format!("rnd-{}-{}", cap.image_id, cap.ref_index),
                caption: cap.text.clone(),
                error: e.to_string(),
            }),
        }
    }
    let name = format!("train_{}-rnd", ctx.backend.name());
    Ok((
        DatasetManifest {
            header: header(&name, seed, vec![("random".to_string(), budget)], ctx),
            rows,
            budget_used,
        },
        failures,
    ))
}
