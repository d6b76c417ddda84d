//! Loading, validation, splitting, and skill filtering of image-caption
//! datasets in Karpathy-split form.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::TidaError;
use crate::skills::{detect, Skill, SkillLexicon};

/// One image in a dataset. `file_path` may be absent for generated images
/// whose bytes have not been produced yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    pub file_path: Option<String>,
}

/// One caption string attached to an image and a reference index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub ref_index: u32,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self, TidaError> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(TidaError::Config(format!("unknown split: {other}"))),
        }
    }
}

/// An immutable image-caption dataset for one split. Ordering is
/// deterministic: images by id, captions by (image_id, ref_index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub images: Vec<ImageRef>,
    pub captions: Vec<CaptionRecord>,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        mut images: Vec<ImageRef>,
        mut captions: Vec<CaptionRecord>,
        split: Split,
    ) -> Result<Self, TidaError> {
        images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        captions.sort_by(|a, b| (&a.image_id, a.ref_index).cmp(&(&b.image_id, b.ref_index)));

        let mut ids = BTreeSet::new();
        for img in &images {
            if img.image_id.is_empty() {
                return Err(TidaError::Integrity("empty image_id".into()));
            }
            if !ids.insert(img.image_id.as_str()) {
                return Err(TidaError::Integrity(format!(
                    "duplicate image_id: {}",
                    img.image_id
                )));
            }
        }
        let mut caption_keys = BTreeSet::new();
        let mut captioned: BTreeSet<&str> = BTreeSet::new();
        for cap in &captions {
            if cap.text.trim().is_empty() {
                return Err(TidaError::Integrity(format!(
                    "empty caption for image {} ref {}",
                    cap.image_id, cap.ref_index
                )));
            }
            if !ids.contains(cap.image_id.as_str()) {
                return Err(TidaError::Integrity(format!(
                    "caption references unknown image: {}",
                    cap.image_id
                )));
            }
            if !caption_keys.insert((cap.image_id.as_str(), cap.ref_index)) {
                return Err(TidaError::Integrity(format!(
                    "duplicate caption key: ({}, {})",
                    cap.image_id, cap.ref_index
                )));
            }
            captioned.insert(cap.image_id.as_str());
        }
        for img in &images {
            if !captioned.contains(img.image_id.as_str()) {
                return Err(TidaError::Integrity(format!(
                    "image without captions: {}",
                    img.image_id
                )));
            }
        }
        Ok(Dataset {
            images,
            captions,
            split,
        })
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn caption_count(&self) -> usize {
        self.captions.len()
    }

    /// All reference captions of one image, ordered by ref_index.
    pub fn captions_of(&self, image_id: &str) -> Vec<&CaptionRecord> {
        self.captions
            .iter()
            .filter(|c| c.image_id == image_id)
            .collect()
    }

    /// Serialize caption rows as JSONL, one record per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TidaError> {
        let by_id: BTreeMap<&str, &ImageRef> = self
            .images
            .iter()
            .map(|i| (i.image_id.as_str(), i))
            .collect();
        for cap in &self.captions {
            let row = JsonlRow {
                image_id: cap.image_id.clone(),
                ref_index: cap.ref_index,
                text: cap.text.clone(),
                file_path: by_id
                    .get(cap.image_id.as_str())
                    .and_then(|i| i.file_path.clone()),
            };
            let line = serde_json::to_string(&row)
                .map_err(|e| TidaError::Io(format!("serialize: {e}")))?;
            writeln!(out, "{line}").map_err(|e| TidaError::Io(e.to_string()))?;
        }
        Ok(())
    }

    /// Load a dataset back from its JSONL form.
    pub fn read_jsonl<R: std::io::Read>(reader: R, split: Split) -> Result<Self, TidaError> {
        let mut images: BTreeMap<String, Option<String>> = BTreeMap::new();
        let mut captions = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| TidaError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: JsonlRow = serde_json::from_str(&line).map_err(|e| TidaError::Parse {
                offset: 0,
                line: lineno + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            images.entry(row.image_id.clone()).or_insert(row.file_path);
            captions.push(CaptionRecord {
                image_id: row.image_id,
                ref_index: row.ref_index,
                text: row.text,
            });
        }
        let images = images
            .into_iter()
            .map(|(image_id, file_path)| ImageRef {
                image_id,
                file_path,
            })
            .collect();
        Dataset::new(images, captions, split)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRow {
    image_id: String,
    ref_index: u32,
    text: String,
    file_path: Option<String>,
}

// Karpathy split JSON as distributed: an "images" array whose entries carry
// "filename", "split", and a "sentences" array of {"raw": ...}.
#[derive(Deserialize)]
struct KarpathyFile {
    images: Vec<KarpathyImage>,
}

#[derive(Deserialize)]
struct KarpathyImage {
    filename: String,
    split: String,
    #[serde(default)]
    sentences: Vec<KarpathySentence>,
}

#[derive(Deserialize)]
struct KarpathySentence {
    raw: String,
}

fn parse_karpathy(path: &Path) -> Result<KarpathyFile, TidaError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TidaError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        let offset = byte_offset(&text, e.line(), e.column());
        TidaError::Parse {
            offset,
            line: e.line(),
            column: e.column(),
            message: format!("{}: {e}", path.display()),
        }
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut remaining = line.saturating_sub(1);
    let mut offset = 0;
    for l in text.split_inclusive('\n') {
        if remaining == 0 {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
        remaining -= 1;
    }
    offset
}

/// Caption text normalization applied at load time: Unicode NFC, whitespace
/// collapsed to single spaces, case preserved.
pub fn normalize_caption(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Load the requested split from a Karpathy split file, taking caption
/// strings from `captions_source` (usually the same file).
pub fn load_karpathy(
    split_file: &Path,
    captions_source: &Path,
    split: Split,
) -> Result<Dataset, TidaError> {
    let split_doc = parse_karpathy(split_file)?;
    let captions_doc = if captions_source == split_file {
        None
    } else {
        Some(parse_karpathy(captions_source)?)
    };

    let sentence_map: BTreeMap<&str, &KarpathyImage> = captions_doc
        .as_ref()
        .unwrap_or(&split_doc)
        .images
        .iter()
        .map(|img| (img.filename.as_str(), img))
        .collect();

    let mut images = Vec::new();
    let mut captions = Vec::new();
    for img in &split_doc.images {
        if img.split != split.as_str() {
            continue;
        }
        let source = sentence_map.get(img.filename.as_str()).ok_or_else(|| {
            TidaError::Integrity(format!(
                "caption source has no entry for image: {}",
                img.filename
            ))
        })?;
        images.push(ImageRef {
            image_id: img.filename.clone(),
            file_path: Some(img.filename.clone()),
        });
        for (i, sent) in source.sentences.iter().enumerate() {
            captions.push(CaptionRecord {
                image_id: img.filename.clone(),
                ref_index: i as u32,
                text: normalize_caption(&sent.raw),
            });
        }
    }
    Dataset::new(images, captions, split)
}

/// The skill sub-dataset: every image with at least one matching reference
/// caption, all its captions, and the index of exactly which captions matched.
#[derive(Debug, Clone)]
pub struct SkillSubset {
    pub dataset: Dataset,
    /// (image_id, ref_index) of each caption the detector fired on.
    pub matched: Vec<(String, u32)>,
}

/// Restrict a dataset to images where the skill detector fires on at least
/// one reference caption.
pub fn filter_by_skill(
    d: &Dataset,
    skill: Skill,
    lexicon: &SkillLexicon,
) -> Result<SkillSubset, TidaError> {
    let mut matched = Vec::new();
    let mut matched_images: BTreeSet<&str> = BTreeSet::new();
    for cap in &d.captions {
        if detect(&cap.text, skill, lexicon).fired() {
            matched.push((cap.image_id.clone(), cap.ref_index));
            matched_images.insert(&cap.image_id);
        }
    }
    let images: Vec<ImageRef> = d
        .images
        .iter()
        .filter(|i| matched_images.contains(i.image_id.as_str()))
        .cloned()
        .collect();
    let captions: Vec<CaptionRecord> = d
        .captions
        .iter()
        .filter(|c| matched_images.contains(c.image_id.as_str()))
        .cloned()
        .collect();
    let dataset = Dataset::new(images, captions, d.split)?;
    Ok(SkillSubset { dataset, matched })
}
