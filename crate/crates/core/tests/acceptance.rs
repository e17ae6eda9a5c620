//! Acceptance gate. Each test prints exactly one PASS/FAIL line.
//!
//! cargo test --test acceptance -- --nocapture --test-threads 1

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::LN_2;
use std::process::Command;
use std::time::Duration;

use rand::Rng;

use common::{bin, criterion, fixtures, oracle_score, TinyInstance};
use prefalign::caption_schema::{pad_missing, parse_sequence, serialize_sequence};
use prefalign::dpo::{dpo_loss, focus_loss, reject_loss, vision_contrastive_loss, ContrastLogProbs, PairLogProbs};
use prefalign::halmetrics::{read_ground_truth, score_sequence, GroundTruthSequence, GtImage, LexiconSpec, ObjectLexicon};
use prefalign::pairgen::{dataset_stats, Level};
use prefalign::perturb::{iou, mismatch_regions, sample_drop_count, shorten, swap, truncate, Region, RegionCaption};
use prefalign::seed::rng_from_seed;
use prefalign::toy_align::{HistoryRecord, SynthConfig};

fn run(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if out.status.success() {
        Ok(stdout)
    } else {
        Err(format!("exit {:?}: {}", out.status.code(), stdout.lines().last().unwrap_or("")))
    }
}

#[test]
fn c1_zero_margin_identities() {
    criterion(1, "zero-margin identities", Duration::from_secs(1), || {
        let mut rng = rng_from_seed(1);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let (x, y, z) = (rng.random_range(-80.0..0.0), rng.random_range(-80.0..0.0), rng.random_range(-80.0..0.0));
            let d = rng.random_range(-10.0..10.0);
            let beta = rng.random_range(0.01..1.0);
            let pair = PairLogProbs {
                policy_chosen: x + d,
                ref_chosen: x,
                policy_rejected: y + d,
                ref_rejected: y,
            };
            let views = ContrastLogProbs {
                policy_cond: x + d,
                ref_cond: x,
                policy_uncond: y + d,
                ref_uncond: y,
                policy_contra: Some(z + d),
                ref_contra: Some(z),
            };
            let values = [
                dpo_loss(&pair, beta).map_err(|e| e.to_string())?.value - LN_2,
                focus_loss(&views, beta).map_err(|e| e.to_string())?.value - LN_2,
                reject_loss(&views, beta).map_err(|e| e.to_string())?.value - LN_2,
                vision_contrastive_loss(&views, beta, beta).map_err(|e| e.to_string())?.value - 2.0 * LN_2,
            ];
            worst = values.iter().fold(worst, |w, v| w.max(v.abs()));
        }
        if worst <= 1e-12 {
            Ok(format!("max abs err {worst:e} over 1000 points"))
        } else {
            Err(format!("max abs err {worst:e} > 1e-12"))
        }
    });
}

#[test]
fn c2_gradient_verification() {
    criterion(2, "gradient verification", Duration::from_secs(10), || {
        let out = run(&["gradcheck", "--trials", "1000", "--step", "1e-6"])?;
        let errs: BTreeMap<&str, f64> = out
            .lines()
            .filter_map(|l| {
                let (kind, rest) = l.split_once(" max rel err ")?;
                Some((kind.trim(), rest.split_whitespace().next()?.parse().ok()?))
            })
            .collect();
        for kind in ["dpo", "focus", "reject", "vision_contrastive", "toy_logprob"] {
            match errs.get(kind) {
                Some(e) if *e <= 1e-5 => {}
                other => return Err(format!("{kind}: {other:?}")),
            }
        }
        let worst = errs.values().fold(0.0f64, |a, b| a.max(*b));
        Ok(format!("{} kinds, worst rel err {worst:e}", errs.len()))
    });
}

#[test]
fn c3_toy_alignment() {
    criterion(3, "toy alignment", Duration::from_secs(60), || {
        let counts = SynthConfig::default().level_counts(2000);
        let ratio = [1.0, counts[1] as f64 / counts[0] as f64, counts[2] as f64 / counts[0] as f64];
        if (ratio[1] - 0.5).abs() > 0.01 || (ratio[2] - 0.175).abs() > 0.01 {
            return Err(format!("level mix {counts:?}"));
        }
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let history = dir.path().join("history.jsonl");
        let dump = dir.path().join("policy.txt");
        let config = fixtures().join("toy/default.toml");
        let out = run(&[
            "train-toy",
            "--config",
            config.to_str().unwrap(),
            "--schedule",
            "multi",
            "--history",
            history.to_str().unwrap(),
            "--dump",
            dump.to_str().unwrap(),
        ])?;
        let accuracy: f64 = out
            .lines()
            .find_map(|l| l.strip_prefix("held-out preference accuracy "))
            .and_then(|r| r.split_whitespace().next()?.parse().ok())
            .ok_or("no accuracy line")?;
        let records: Vec<HistoryRecord> = std::fs::read_to_string(&history)
            .map_err(|e| e.to_string())?
            .lines()
            .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let mut stages: Vec<(String, f64, f64)> = Vec::new();
        for r in &records {
            match stages.last_mut() {
                Some(s) if s.0 == r.stage && r.epoch > 0 => s.2 = r.mean_loss,
                _ => stages.push((r.stage.clone(), r.mean_loss, r.mean_loss)),
            }
        }
        let names: Vec<&str> = stages.iter().map(|s| s.0.as_str()).collect();
        if names != ["context", "needle_t", "needle_v"] {
            return Err(format!("stages {names:?}"));
        }
        if let Some(s) = stages.iter().find(|s| s.2 >= s.1) {
            return Err(format!("stage {} loss {} -> {}", s.0, s.1, s.2));
        }
        if accuracy < 0.95 {
            return Err(format!("held-out accuracy {accuracy}"));
        }
        let drops: Vec<String> = stages.iter().map(|s| format!("{} {:.3}->{:.3}", s.0, s.1, s.2)).collect();
        Ok(format!("held-out accuracy {accuracy:.4}; {}", drops.join(", ")))
    });
}

#[test]
fn c4_metric_oracle_equivalence() {
    criterion(4, "metric oracle equivalence", Duration::from_secs(5), || {
        let mut rng = rng_from_seed(4);
        for case in 0..200 {
            let inst = TinyInstance::random(&mut rng);
            let text = inst.render(&mut rng);
            let lexicon = ObjectLexicon::new(LexiconSpec {
                objects: inst.objects.iter().cloned().collect(),
                synonyms: inst.synonyms.iter().cloned().collect(),
                cog_targets: inst.cog.iter().cloned().collect(),
            })
            .map_err(|e| e.to_string())?;
            let gt = GroundTruthSequence {
                seq_id: format!("tiny-{case}"),
                images: inst
                    .gt
                    .iter()
                    .enumerate()
                    .map(|(i, objects)| GtImage {
                        image_id: format!("t{i}"),
                        objects: objects.clone(),
                        caption: String::new(),
                    })
                    .collect(),
            };
            let got = score_sequence(&text, &gt, &lexicon);
            let want = oracle_score(&inst);
            let same = got.chair == want.chair && got.hal == want.hal && got.cog == want.cog && got.scover == want.scover;
            if !same {
                return Err(format!(
                    "case {case} {text:?}: got ({}, {}, {}, {}) want ({}, {}, {}, {})",
                    got.chair, got.hal, got.cog, got.scover, want.chair, want.hal, want.cog, want.scover
                ));
            }
        }
        Ok("200/200 instances match exactly".into())
    });
}

#[test]
fn c5_swap_sensitivity_and_truncation() {
    criterion(5, "swap sensitivity", Duration::from_secs(1), || {
        let dir = fixtures().join("eval");
        let lexicon = ObjectLexicon::from_file(&dir.join("lexicon.json")).map_err(|e| e.to_string())?;
        let gts = read_ground_truth(&dir.join("gt_disjoint.jsonl")).map_err(|e| e.to_string())?;
        let mut all: BTreeSet<&String> = BTreeSet::new();
        for gt in &gts {
            for img in &gt.images {
                if !img.objects.iter().all(|o| all.insert(o)) {
                    return Err("fixture object sets are not disjoint".into());
                }
            }
        }
        let render = |caps: &[String]| {
            let entries: Vec<(u32, String)> = caps.iter().enumerate().map(|(i, c)| (i as u32 + 1, c.clone())).collect();
            serialize_sequence(&entries, false).expect("non-empty")
        };
        let mut min_swapped = f64::INFINITY;
        let mut truncations = 0;
        for gt in &gts {
            let caps: Vec<String> = gt.images.iter().map(|i| i.caption.clone()).collect();
            let in_order = score_sequence(&render(&caps), gt, &lexicon);
            let mut rotated = caps.clone();
            rotated.rotate_left(1);
            let swapped = score_sequence(&render(&rotated), gt, &lexicon);
            if in_order.chair != 0.0 || swapped.chair <= 0.0 {
                return Err(format!("{}: in-order {} swapped {}", gt.seq_id, in_order.chair, swapped.chair));
            }
            min_swapped = min_swapped.min(swapped.chair);
            let n = caps.len();
            for k in 1..n {
                let kept = score_sequence(&render(&caps[..n - k]), gt, &lexicon);
                if kept.scover != (n - k) as f64 / n as f64 {
                    return Err(format!("{}: drop {k} gives scover {}", gt.seq_id, kept.scover));
                }
                truncations += 1;
            }
        }
        Ok(format!(
            "{} sequences, in-order CHAIR 0, swapped CHAIR >= {min_swapped:.3}, {truncations} truncations exact",
            gts.len()
        ))
    });
}

#[test]
fn c6_pipeline_determinism_and_direction() {
    criterion(6, "pipeline determinism", Duration::from_secs(5), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config = fixtures().join("gen.toml");
        let mut files = Vec::new();
        for (i, threads) in ["1", "4"].iter().enumerate() {
            let out = dir.path().join(format!("pairs{i}.jsonl"));
            run(&[
                "--threads",
                threads,
                "gen-pairs",
                "--config",
                config.to_str().unwrap(),
                "--seed",
                "42",
                "--out",
                out.to_str().unwrap(),
            ])?;
            files.push(std::fs::read(&out).map_err(|e| e.to_string())?);
        }
        if files[0] != files[1] {
            return Err("pair files differ between runs".into());
        }
        let stats = dataset_stats(&dir.path().join("pairs0.jsonl")).map_err(|e| e.to_string())?;
        let ctx = stats.levels.get(&Level::Context).ok_or("no context pairs")?;
        let rejected = ctx.mean_rejected_tokens.ok_or("no rejected tokens")?;
        if stats.total == 0 || ctx.mean_chosen_tokens <= rejected {
            return Err(format!("chosen {} vs rejected {rejected}", ctx.mean_chosen_tokens));
        }
        Ok(format!(
            "{} pairs, {} bytes identical; context chosen {:.2} > rejected {rejected:.2} tokens",
            stats.total,
            files[0].len(),
            ctx.mean_chosen_tokens
        ))
    });
}

fn random_text<R: Rng>(rng: &mut R) -> String {
    const WORDS: [&str; 10] = ["a", "blue", "kite", "over", "the", "hill", "and", "three", "goats", "graze"];
    let len = rng.random_range(1..10);
    let mut s: Vec<&str> = (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    if rng.random_bool(0.5) {
        s.push(".");
    }
    s.join(" ")
}

#[test]
fn c7_parser_round_trip() {
    criterion(7, "parser round-trip", Duration::from_secs(2), || {
        let mut rng = rng_from_seed(7);
        for case in 0..1000 {
            let n = rng.random_range(1..=10);
            let mut idx: Vec<u32> = rand::seq::index::sample(&mut rng, 30, n).into_iter().map(|i| i as u32 + 1).collect();
            if rng.random_bool(0.5) {
                idx.sort();
            }
            let list: Vec<(u32, String)> = idx.into_iter().map(|k| (k, random_text(&mut rng))).collect();
            let marked = rng.random_bool(0.5);
            let text = serialize_sequence(&list, marked).map_err(|e| e.to_string())?;
            if parse_sequence(&text, n, marked).to_pairs() != list {
                return Err(format!("round trip {case} failed on {text:?}"));
            }
        }
        for case in 0..1000 {
            let n = rng.random_range(1..=8);
            let kept: Vec<u32> = (1..=n as u32).filter(|_| rng.random_bool(0.6)).collect();
            let list: Vec<(u32, String)> = kept.into_iter().map(|k| (k, random_text(&mut rng))).collect();
            let text = if list.is_empty() {
                String::new()
            } else {
                serialize_sequence(&list, false).map_err(|e| e.to_string())?
            };
            let once = pad_missing(&parse_sequence(&text, n, false));
            if pad_missing(&once) != once || !once.missing_indices.is_empty() {
                return Err(format!("pad_missing not idempotent on case {case}"));
            }
        }
        Ok("1000 round trips exact, pad_missing idempotent on 1000 partial parses".into())
    });
}

#[test]
fn c8_perturbation_invariants() {
    criterion(8, "perturbation invariants", Duration::from_secs(5), || {
        let mut no_candidate = 0;
        for seed in 0..1000u64 {
            let mut rng = rng_from_seed(seed);
            let n = rng.random_range(2..=8);
            let chosen: Vec<(u32, String)> = (1..=n as u32).map(|k| (k, format!("detailed caption {k}"))).collect();
            let indices = |v: &[(u32, String)]| v.iter().map(|e| e.0).collect::<BTreeSet<u32>>();

            let k = sample_drop_count(n, &mut rng).map_err(|e| e.to_string())?;
            let cut = truncate(&chosen, &mut rng, k).map_err(|e| e.to_string())?;
            let (before, after) = (indices(&chosen), indices(&cut));
            if !(after.is_subset(&before) && after.len() < before.len() && !after.is_empty()) {
                return Err(format!("seed {seed}: truncate {after:?} of {before:?}"));
            }

            let ids: Vec<String> = (0..n).map(|i| format!("img{i}")).collect();
            let brief = ids.iter().map(|i| (i.clone(), format!("brief {i}"))).collect();
            let short = shorten(&chosen, &ids, &brief).map_err(|e| e.to_string())?;
            if indices(&short) != before {
                return Err(format!("seed {seed}: shorten changed indices"));
            }

            let (swapped, perm) = swap(&chosen, &mut rng).map_err(|e| e.to_string())?;
            let texts = |v: &[(u32, String)]| {
                let mut t: Vec<String> = v.iter().map(|e| e.1.clone()).collect();
                t.sort();
                t
            };
            if perm.iter().enumerate().all(|(i, &p)| i == p) || swapped == chosen || texts(&swapped) != texts(&chosen) {
                return Err(format!("seed {seed}: swap {perm:?}"));
            }

            let max_iou = [0.0, 0.1, 0.25][rng.random_range(0..3)];
            let pool: Vec<RegionCaption> = (0..rng.random_range(2..8))
                .map(|i| {
                    let (w, h) = (rng.random_range(0.05..0.4), rng.random_range(0.05..0.4));
                    RegionCaption {
                        image_id: format!("img{}", rng.random_range(0..2)),
                        region: Region::bbox(rng.random_range(0.0..1.0 - w), rng.random_range(0.0..1.0 - h), w, h)
                            .expect("inside the unit square"),
                        caption: format!("region {i}"),
                    }
                })
                .collect();
            match mismatch_regions(&pool[..1], &pool, &mut rng, max_iou) {
                Ok(out) => {
                    let v = iou(&out[0].region, &pool[0].region);
                    if v > max_iou || out[0].image_id != pool[0].image_id {
                        return Err(format!("seed {seed}: mismatch iou {v} > {max_iou}"));
                    }
                }
                Err(_) => no_candidate += 1,
            }
        }
        Ok(format!("1000 generations clean ({no_candidate} without a mismatch candidate)"))
    });
}
