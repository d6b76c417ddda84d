//! Acceptance suite: one test per exit criterion, each printing a pass/fail
//! line. Oracles here are written independently of the library code paths
//! they check.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tida::augment::{build_all, build_targeted, AugmentContext, Provenance};
use tida::corpus::{filter_by_skill, load_karpathy, CaptionRecord, Dataset, ImageRef, Split};
use tida::genclient::{RetryPolicy, StubBackend};
use tida::metrics::{bleu_corpus, EvalPair, SkillPRF};
use tida::perturb::{perturb, PerturbOptions};
use tida::probe::{
    bce_loss, loss_and_grad, mlp_forward, train_probe, Activation, EmbeddingRecord, MlpParams,
    ProbeConfig, SplitIndices,
};
use tida::skills::{detect, tokenize, Skill, SkillLexicon};

// ---------------------------------------------------------------------------
// criterion 1: published table aggregation
// ---------------------------------------------------------------------------

type PublishedRow = (&'static str, [(f64, f64, f64, f64, f64); 3]);

// (P+, R+, P-, R-, F1) per skill cell, ordered color, counting, gender.
const TABLE3: &[PublishedRow] = &[
    ("vanilla", [(64.4, 89.8, 80.5, 45.8, 66.7), (73.6, 97.9, 91.7, 39.1, 69.4), (46.5, 88.8, 97.2, 79.0, 74.1)]),
    ("SD-rnd",  [(64.8, 88.1, 78.6, 47.7, 67.0), (77.2, 97.5, 92.0, 50.0, 75.5), (45.4, 89.4, 97.3, 78.0, 73.4)]),
    ("SD-clr",  [(66.0, 86.8, 78.0, 51.3, 68.4), (73.4, 98.4, 93.3, 38.3, 69.2), (43.8, 91.8, 97.8, 75.9, 72.4)]),
    ("SD-ctg",  [(65.5, 88.5, 79.7, 49.2, 68.1), (74.4, 98.1, 92.7, 41.5, 71.0), (44.8, 91.8, 97.9, 76.9, 73.2)]),
    ("SD-gdr",  [(64.1, 88.5, 78.5, 45.8, 66.1), (75.3, 96.8, 89.2, 45.1, 72.3), (43.9, 90.6, 97.5, 76.3, 72.4)]),
    ("SD-all",  [(65.7, 90.8, 82.8, 48.3, 68.6), (75.8, 97.8, 92.3, 45.9, 73.4), (46.0, 92.4, 98.0, 77.8, 74.1)]),
];

const TABLE7: &[PublishedRow] = &[
    ("vanilla", [(64.4, 89.8, 80.5, 45.8, 66.7), (73.6, 97.9, 91.7, 39.1, 69.4), (46.5, 88.8, 97.2, 79.0, 74.1)]),
    ("INP-clr", [(63.6, 91.2, 81.7, 42.9, 65.6), (73.3, 98.4, 93.3, 38.0, 69.0), (45.1, 89.4, 97.3, 77.7, 73.2)]),
    ("INP-ctg", [(64.7, 87.9, 78.4, 47.7, 66.9), (74.5, 96.8, 88.6, 42.6, 70.9), (42.6, 91.8, 97.8, 74.7, 71.5)]),
    ("INP-gdr", [(63.1, 88.7, 77.8, 43.3, 64.7), (74.4, 96.8, 88.6, 42.3, 70.7), (44.7, 90.0, 97.4, 77.2, 73.0)]),
    ("INP-all", [(64.5, 88.9, 79.4, 46.7, 66.8), (74.3, 97.8, 91.6, 41.5, 70.8), (45.8, 92.9, 98.2, 77.5, 74.0)]),
    ("AAE-clr", [(62.8, 90.4, 79.9, 41.6, 64.5), (74.3, 97.5, 90.5, 41.5, 70.6), (47.4, 91.2, 97.8, 79.3, 75.0)]),
    ("AAE-ctg", [(64.0, 88.7, 78.6, 45.4, 65.9), (74.0, 98.4, 93.6, 40.2, 70.4), (47.3, 91.2, 97.8, 79.2, 74.9)]),
    ("AAE-gdr", [(63.9, 90.0, 80.3, 44.4, 65.9), (74.3, 97.8, 91.6, 41.5, 70.8), (42.9, 90.0, 97.4, 75.4, 71.5)]),
    ("AAE-all", [(64.4, 90.6, 81.5, 45.2, 66.7), (75.4, 97.3, 90.7, 45.1, 72.6), (48.6, 90.6, 97.7, 80.4, 75.7)]),
];

fn check_table(name: &str, rows: &[PublishedRow]) -> Vec<String> {
    let skills = ["color", "counting", "gender"];
    let mut deviations = Vec::new();
    for (row_name, cells) in rows {
        for (skill, &(pp, rp, pn, rn, published_f1)) in skills.iter().zip(cells.iter()) {
            let prf = SkillPRF::from_rates(pp, rp, pn, rn);
            let diff = (prf.f1_macro - published_f1).abs();
            if diff > 0.05 {
                deviations.push(format!(
                    "{name} {row_name} {skill}: computed {:.3} vs published {published_f1} (diff {:.3})",
                    prf.f1_macro, diff
                ));
            }
        }
    }
    deviations
}

#[test]
fn criterion_1_table_aggregation_reproduction() {
    let start = std::time::Instant::now();
    let t3 = check_table("Table 3", TABLE3);
    let t7 = check_table("Table 7", TABLE7);
    assert!(start.elapsed().as_secs_f64() < 1.0, "criterion 1 runtime");
    let ok = t3.is_empty() && t7.is_empty();
    println!(
        "criterion 1 {}: published F1 aggregation (Table 3: {} deviations, Table 7: {} deviations)",
        if ok { "PASS" } else { "FAIL" },
        t3.len(),
        t7.len(),
    );
    for d in t3.iter().chain(&t7) {
        println!("  {d}");
    }
    assert!(
        ok,
        "macro-F1 recomputed from published rates deviates beyond ±0.05:\n{}",
        t3.iter().chain(&t7).cloned().collect::<Vec<_>>().join("\n")
    );
}

// ---------------------------------------------------------------------------
// criterion 2: BLEU oracle equivalence
// ---------------------------------------------------------------------------

/// Independent brute-force BLEU: string-keyed n-gram maps and explicit
/// loops, sharing no code with the library implementation.
fn oracle_bleu(pairs: &[(Vec<String>, Vec<Vec<String>>)]) -> [f64; 4] {
    fn grams(tokens: &[String], n: usize) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for start in 0..tokens.len().saturating_sub(n - 1) {
            let key = tokens[start..start + n].join("\u{1f}");
            *out.entry(key).or_insert(0) += 1;
        }
        out
    }

    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, refs) in pairs {
        cand_len += cand.len();
        let mut best = usize::MAX;
        let mut best_dist = usize::MAX;
        for r in refs {
            let dist = r.len().abs_diff(cand.len());
            if dist < best_dist || (dist == best_dist && r.len() < best) {
                best = r.len();
                best_dist = dist;
            }
        }
        ref_len += best;
    }
    let bp = if cand_len == 0 {
        0.0
    } else if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };

    let mut precisions = [0.0f64; 4];
    for n in 1..=4 {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (cand, refs) in pairs {
            let cg = grams(cand, n);
            for (key, count) in &cg {
                let clip = refs
                    .iter()
                    .map(|r| grams(r, n).get(key).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                matched += (*count).min(clip);
                total += count;
            }
        }
        if total > 0 {
            precisions[n - 1] = matched as f64 / total as f64;
        }
    }

    let mut scores = [0.0f64; 4];
    for n in 1..=4 {
        if precisions[..n].iter().all(|&p| p > 0.0) {
            let mean = precisions[..n].iter().map(|p| p.ln()).sum::<f64>() / n as f64;
            scores[n - 1] = bp * mean.exp();
        }
    }
    scores
}

#[test]
fn criterion_2_bleu_oracle_equivalence() {
    let start = std::time::Instant::now();
    let vocab = ["a", "dog", "red", "runs", "two", "the", "park", "big"];
    let mut rng = ChaCha8Rng::seed_from_u64(0xB1E0);

    for corpus_idx in 0..200 {
        let n_pairs = rng.gen_range(1..=20);
        let mut pairs = Vec::new();
        let mut token_pairs = Vec::new();
        for k in 0..n_pairs {
            let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
                (0..rng.gen_range(1..=12))
                    .map(|_| vocab[rng.gen_range(0..vocab.len())].to_string())
                    .collect()
            };
            let cand = sentence(&mut rng);
            let refs: Vec<Vec<String>> =
                (0..rng.gen_range(1..=3)).map(|_| sentence(&mut rng)).collect();
            pairs.push(EvalPair {
                image_id: format!("img{k}"),
                candidate: cand.join(" "),
                references: refs.iter().map(|r| r.join(" ")).collect(),
            });
            token_pairs.push((cand, refs));
        }
        let report = bleu_corpus(&pairs).unwrap();
        let expected = oracle_bleu(&token_pairs);
        for (n, &want) in expected.iter().enumerate() {
            assert!(
                (report.bleu[n] - want).abs() < 1e-9,
                "corpus {corpus_idx} n={} impl {} oracle {}",
                n + 1,
                report.bleu[n],
                expected[n]
            );
        }
    }

    // identity corpora score exactly 1.0
    let mut rng = ChaCha8Rng::seed_from_u64(0x1D);
    for _ in 0..20 {
        let pairs: Vec<EvalPair> = (0..5)
            .map(|k| {
                let text: Vec<&str> = (0..rng.gen_range(4..10))
                    .map(|_| vocab[rng.gen_range(0..vocab.len())])
                    .collect();
                EvalPair {
                    image_id: format!("img{k}"),
                    candidate: text.join(" "),
                    references: vec![text.join(" ")],
                }
            })
            .collect();
        let report = bleu_corpus(&pairs).unwrap();
        for n in 0..4 {
            assert_eq!(report.bleu[n], 1.0);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 2 runtime: {elapsed}s");
    println!("criterion 2 PASS: BLEU matches independent oracle on 200 corpora ({elapsed:.2}s)");
}

// ---------------------------------------------------------------------------
// criterion 3: detector/perturber properties
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_detector_perturber_properties() {
    let start = std::time::Instant::now();
    let lexicon = SkillLexicon::default();
    let opts = PerturbOptions::default();
    let filler = ["person", "park", "walking", "near", "tall", "tree", "holding", "smiling"];
    let mut rng = ChaCha8Rng::seed_from_u64(0x7E57);

    for i in 0..10_000u64 {
        let skill = Skill::ALL[(i % 3) as usize];
        let plant: &str = match skill {
            Skill::Gender => {
                let male = ["boy", "boys", "man", "men", "guy", "guys"];
                male[rng.gen_range(0..male.len())]
            }
            Skill::Color => {
                let idx = rng.gen_range(0..lexicon.colors.len());
                lexicon.colors[idx].as_str()
            }
            Skill::Counting => {
                let idx = rng.gen_range(0..lexicon.numbers.len());
                lexicon.numbers[idx].as_str()
            }
        };
        let mut words: Vec<String> = (0..rng.gen_range(2..8))
            .map(|_| filler[rng.gen_range(0..filler.len())].to_string())
            .collect();
        let pos = rng.gen_range(0..=words.len());
        words.insert(pos, plant.to_string());
        let caption = words.join(" ");

        let p = perturb(&caption, skill, &lexicon, &opts, i).unwrap();

        // skill preservation
        assert!(
            detect(&p.perturbed, skill, &lexicon).fired(),
            "detector no longer fires on {:?}",
            p.perturbed
        );
        assert_ne!(p.perturbed, p.original);

        // minimality: equal-length token sequences differing exactly at
        // the substitution indices
        let before = tokenize(&p.original, lexicon.split_hyphens);
        let after = tokenize(&p.perturbed, lexicon.split_hyphens);
        assert_eq!(before.len(), after.len());
        for idx in 0..before.len() {
            let substituted = p.substitutions.iter().any(|s| s.token_index == idx);
            if substituted {
                assert_ne!(before[idx].lower, after[idx].lower);
            } else {
                assert_eq!(before[idx].surface, after[idx].surface);
            }
        }

        // counting laws
        if skill == Skill::Counting {
            for sub in &p.substitutions {
                let from = lexicon.numbers.iter().position(|n| *n == sub.old_word).unwrap();
                let to = lexicon
                    .numbers
                    .iter()
                    .position(|n| *n == sub.new_word)
                    .expect("output number stays in the lexicon");
                assert_eq!(from.abs_diff(to), 1, "{} -> {}", sub.old_word, sub.new_word);
                if sub.old_word == "one" {
                    assert_eq!(sub.new_word, "two");
                }
                if sub.old_word == "six" {
                    assert_eq!(sub.new_word, "five");
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 3 runtime: {elapsed}s");
    println!("criterion 3 PASS: 10000 planted captions keep all perturbation laws ({elapsed:.2}s)");
}

// ---------------------------------------------------------------------------
// criterion 4: Algorithm-1 end to end on the stub backend
// ---------------------------------------------------------------------------

fn toy_corpus(n_captions: usize) -> Dataset {
    let templates = [
        "a man is playing basketball",
        "a red ball on the grass",
        "three dogs run in a field",
        "someone walking near a building",
        "two women in green jackets",
    ];
    let mut images = Vec::new();
    let mut captions = Vec::new();
    for k in 0..n_captions {
        let id = format!("img{k:03}.jpg");
        images.push(ImageRef {
            image_id: id.clone(),
            file_path: Some(id.clone()),
        });
        captions.push(CaptionRecord {
            image_id: id,
            ref_index: 0,
            text: format!("{} variant {k}", templates[k % templates.len()]),
        });
    }
    Dataset::new(images, captions, Split::Train).unwrap()
}

fn make_ctx<'a>(
    backend: &'a StubBackend,
    lexicon: &'a SkillLexicon,
    dir: &Path,
) -> AugmentContext<'a> {
    AugmentContext {
        backend,
        out_dir: dir.join("images"),
        journal_path: dir.join("journal.jsonl"),
        max_in_flight: 4,
        retry: RetryPolicy::default(),
        lexicon,
        perturb_opts: PerturbOptions::default(),
    }
}

#[test]
fn criterion_4_algorithm_end_to_end() {
    let start = std::time::Instant::now();
    let lexicon = SkillLexicon::default();
    let train = toy_corpus(50);
    let budgets = [(Skill::Gender, 2), (Skill::Color, 2), (Skill::Counting, 2)];
    let dir = tempfile::tempdir().unwrap();

    let backend = StubBackend::new();
    let (manifest, failures) =
        build_all(&train, budgets, &make_ctx(&backend, &lexicon, dir.path()), 11).unwrap();
    assert!(failures.failures.is_empty());

    // all originals present exactly once, plus exactly 6 augmented rows
    let originals: Vec<&str> = manifest
        .rows
        .iter()
        .filter(|r| r.provenance == Provenance::Original)
        .map(|r| r.caption.as_str())
        .collect();
    assert_eq!(originals.len(), train.caption_count());
    for cap in &train.captions {
        assert_eq!(originals.iter().filter(|c| **c == cap.text).count(), 1);
    }
    assert_eq!(manifest.budget_used, 6);

    // each augmented caption recomputable from its recorded provenance
    for row in manifest.rows.iter().filter(|r| r.provenance != Provenance::Original) {
        let Provenance::Tida {
            skill,
            source_image_id,
            source_ref_index,
            seed,
        } = &row.provenance
        else {
            panic!("expected tida provenance");
        };
        let source = train
            .captions
            .iter()
            .find(|c| c.image_id == *source_image_id && c.ref_index == *source_ref_index)
            .unwrap();
        let p = perturb(&source.text, *skill, &lexicon, &PerturbOptions::default(), *seed).unwrap();
        assert_eq!(p.perturbed, row.caption);
        assert!(Path::new(row.image.file_path.as_ref().unwrap()).exists());
    }

    // rerun with the same seed over the shared journal: byte-identical
    // manifest and zero regenerated items
    let backend2 = StubBackend::new();
    let (manifest2, _) =
        build_all(&train, budgets, &make_ctx(&backend2, &lexicon, dir.path()), 11).unwrap();
    assert_eq!(backend2.call_count(), 0, "resume must not regenerate");
    let mut buf1 = Vec::new();
    let mut buf2 = Vec::new();
    manifest.write(&mut buf1).unwrap();
    manifest2.write(&mut buf2).unwrap();
    assert_eq!(buf1, buf2, "rerun manifest not byte-identical");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 4 runtime: {elapsed}s");
    println!("criterion 4 PASS: end-to-end build reproducible and resumable ({elapsed:.2}s)");
}

// ---------------------------------------------------------------------------
// criterion 5: budget bookkeeping against the instrumented stub
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_budget_bookkeeping() {
    let start = std::time::Instant::now();
    let lexicon = SkillLexicon::default();
    // 200 captions: 40 per template, so at least 40 eligible per skill
    let train = toy_corpus(200);

    let dir = tempfile::tempdir().unwrap();
    let backend = StubBackend::new();
    let (manifest, _) =
        build_targeted(&train, Skill::Gender, 20, &make_ctx(&backend, &lexicon, dir.path()), 5)
            .unwrap();
    assert_eq!(backend.call_count(), 20, "targeted budget drives 20 generations");
    assert_eq!(manifest.budget_used, 20);

    let dir2 = tempfile::tempdir().unwrap();
    let backend_all = StubBackend::new();
    let (manifest_all, _) = build_all(
        &train,
        [(Skill::Gender, 20), (Skill::Color, 20), (Skill::Counting, 20)],
        &make_ctx(&backend_all, &lexicon, dir2.path()),
        5,
    )
    .unwrap();
    assert_eq!(backend_all.call_count(), 60, "all-skill build drives 60 generations");
    assert_eq!(manifest_all.budget_used, 60);

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 5 runtime: {elapsed}s");
    println!("criterion 5 PASS: budgets 20/60 drive exactly 20/60 backend calls ({elapsed:.2}s)");
}

// ---------------------------------------------------------------------------
// criterion 6: probe correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_probe_correctness() {
    let start = std::time::Instant::now();

    // analytic gradients vs central finite differences on 100 random configs
    let step = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9AD);
    for cfg_idx in 0..100 {
        let activation = if cfg_idx % 2 == 0 {
            Activation::Relu
        } else {
            Activation::Identity
        };
        let dims = rng.gen_range(2..8);
        let hidden = rng.gen_range(1..6);
        let params = MlpParams::init(dims, hidden, activation, &mut rng);
        let x: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = if rng.gen::<bool>() { 1.0 } else { 0.0 };
        let (_, grads) = loss_and_grad(&params, &x, y).unwrap();

        let loss_at = |params: &MlpParams| bce_loss(mlp_forward(&x, params).unwrap(), y);
        let check = |analytic: f64, set: &dyn Fn(&mut MlpParams, f64), base: f64| {
            let mut plus = params.clone();
            set(&mut plus, base + step);
            let mut minus = params.clone();
            set(&mut minus, base - step);
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
            let denom = numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (numeric - analytic).abs() / denom < 1e-4,
                "config {cfg_idx}: numeric {numeric} analytic {analytic}"
            );
        };
        for j in 0..hidden {
            for i in 0..dims {
                check(grads.w1[j][i], &move |p, v| p.w1[j][i] = v, params.w1[j][i]);
            }
            check(grads.b1[j], &move |p, v| p.b1[j] = v, params.b1[j]);
            check(grads.w2[j], &move |p, v| p.w2[j] = v, params.w2[j]);
        }
        check(grads.b2, &|p, v| p.b2 = v, params.b2);
    }

    // linearly separable clusters, D=16, 500 points: F1 >= 99
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut embeddings = Vec::new();
    let mut labels = HashMap::new();
    for class in 0..2u8 {
        let center = if class == 0 { -2.0 } else { 2.0 };
        for k in 0..250 {
            let id = format!("img-{class}-{k}");
            let vector: Vec<f64> = (0..16).map(|_| center + rng.gen_range(-1.0..1.0)).collect();
            labels.insert(id.clone(), class);
            embeddings.push(EmbeddingRecord { image_id: id, vector });
        }
    }
    let mut indices: Vec<usize> = (0..embeddings.len()).collect();
    indices.shuffle(&mut rng);
    let split = SplitIndices {
        train: indices[..300].to_vec(),
        val: indices[300..400].to_vec(),
        test: indices[400..].to_vec(),
    };
    let cfg = ProbeConfig {
        hidden_sizes: vec![16, 64],
        learning_rates: vec![1e-1, 1e-2],
        max_epochs: 40,
        seed: 3,
        ..ProbeConfig::default()
    };
    let result = train_probe(&embeddings, &labels, &cfg, &split).unwrap();
    assert!(result.f1 >= 99.0, "separable F1 = {}", result.f1);

    // fixed-seed rerun bit-identical
    let again = train_probe(&embeddings, &labels, &cfg, &split).unwrap();
    assert_eq!(
        serde_json::to_string(&result).unwrap(),
        serde_json::to_string(&again).unwrap()
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 6 runtime: {elapsed}s");
    println!(
        "criterion 6 PASS: gradients check, separable F1 {:.1}, deterministic ({elapsed:.2}s)",
        result.f1
    );
}

// ---------------------------------------------------------------------------
// criterion 7: corpus integrity
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_corpus_integrity() {
    let start = std::time::Instant::now();
    let phrases = [
        "a man is playing basketball",
        "une personne marche pr\u{e8}s d'un caf\u{e9}",
        "two women in green jackets",
        "a red ball  with   extra spaces",
        "six dogs \u{2014} running",
    ];
    let mut karpathy_images = Vec::new();
    for k in 0..1000 {
        karpathy_images.push(serde_json::json!({
            "filename": format!("img{k:04}.jpg"),
            "split": "train",
            "sentences": [
                {"raw": format!("{} number {k}", phrases[k % phrases.len()])},
                {"raw": format!("{} again {k}", phrases[(k + 1) % phrases.len()])},
            ],
        }));
    }
    let doc = serde_json::json!({ "images": karpathy_images });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.json");
    std::fs::write(&path, doc.to_string()).unwrap();

    let dataset = load_karpathy(&path, &path, Split::Train).unwrap();
    assert_eq!(dataset.image_count(), 1000);

    // JSONL round-trip preserves caption text byte-exactly
    let mut buf = Vec::new();
    dataset.write_jsonl(&mut buf).unwrap();
    let back = Dataset::read_jsonl(buf.as_slice(), Split::Train).unwrap();
    assert_eq!(back.caption_count(), dataset.caption_count());
    for (a, b) in dataset.captions.iter().zip(&back.captions) {
        assert_eq!(a.text.as_bytes(), b.text.as_bytes());
    }

    // filter_by_skill idempotent for every skill
    let lexicon = SkillLexicon::default();
    for skill in Skill::ALL {
        let once = filter_by_skill(&dataset, skill, &lexicon).unwrap();
        let twice = filter_by_skill(&once.dataset, skill, &lexicon).unwrap();
        assert_eq!(once.dataset, twice.dataset, "{skill} filter not idempotent");
        assert_eq!(once.matched, twice.matched);
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 7 runtime: {elapsed}s");
    println!("criterion 7 PASS: 1000-image corpus round-trips and filters idempotently ({elapsed:.2}s)");
}
