//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use oct_triage::domain::{GroundTruthLabel, ModelTask, Pathology, ScoreVector, TaskId, Thresholds};
use oct_triage::ingest::{manifest_from_str, synthesize_cohort, PhantomConfig};
use oct_triage::metrics::{auroc, evaluate_dataset, roc_curve, EvaluationReport, BSCAN_FOOTNOTE};
use oct_triage::model::{build_model, train, ConvBlock, EarlyStopping, ModelConfig, TrainConfig, TrainingItem};
use oct_triage::pipeline::{
    classify, dataset_quality_rating, score_volume, AggregationPolicy, ModelBank, ScoringOptions, VolumePrediction,
    VolumeScores,
};
use oct_triage::preprocess::{apply_augmentation, sample_augmentation, AugmentParams, ConcreteAugmentation, NormalizedBScan};
use oct_triage_cli::{read_reports, run};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < budget, || format!("took {took:.1?}, budget {budget:?}"))?;
    Ok(took)
}

fn cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["oct-triage"];
    argv.extend_from_slice(args);
    match run(argv.clone()) {
        0 => Ok(()),
        code => Err(format!("`{}` exited with {code}", argv.join(" "))),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

// ---------------------------------------------------------------------------
// 1. AUROC against pairwise counting

fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn auroc_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0C);
    let mut worst: f64 = 0.0;
    let mut tied_instances = 0;
    for case in 0..1000 {
        let n = rng.gen_range(2..=200);
        let with_ties = case % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| if with_ties { f64::from(rng.gen_range(0..6u8)) / 5.0 } else { rng.gen::<f64>() })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        if with_ties {
            tied_instances += 1;
        }
        let want = pairwise_auroc(&scores, &labels);
        let got = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        let curve = roc_curve(&scores, &labels).map_err(|e| e.to_string())?;
        for (what, v) in [("rank", got), ("trapezoid", curve.trapezoid_area())] {
            let err = (v - want).abs();
            worst = worst.max(err);
            ensure(err <= 1e-12, || format!("case {case}: {what} {v} vs pairwise {want}"))?;
        }
    }
    let took = within_budget(start, Duration::from_secs(10))?;
    Ok(format!("1000 instances ({tied_instances} with ties), max |diff| {worst:.1e}, {took:.2?}"))
}

// ---------------------------------------------------------------------------
// 2. Fusion grid

/// The decision rule written out case by case from its prose statement.
fn fusion_oracle(v: &ScoreVector, t: f64) -> (bool, Pathology, f64) {
    let anomaly = v.anomaly >= t;
    let dry = v.dry_amd >= t;
    let wet = v.wet_amd >= t;
    let dme = v.dme >= t;
    let pathology = if !dry && !wet && !dme {
        Pathology::None
    } else if dry && !wet && !dme {
        Pathology::DryAmd
    } else if !dry && wet && !dme {
        Pathology::WetAmd
    } else if !dry && !wet && dme {
        Pathology::Dme
    } else if dry && wet && !dme {
        // wet always wins over dry
        Pathology::WetAmd
    } else if dry && !wet && dme {
        // highest probability; on an exact tie DME precedes dry
        if v.dry_amd > v.dme {
            Pathology::DryAmd
        } else {
            Pathology::Dme
        }
    } else {
        // wet (with or without dry) against DME; wet precedes DME on a tie
        if v.wet_amd >= v.dme {
            Pathology::WetAmd
        } else {
            Pathology::Dme
        }
    };
    let general = if v.dry_amd > v.wet_amd { v.dry_amd } else { v.wet_amd };
    (anomaly, pathology, general)
}

fn fusion_grid() -> Outcome {
    let start = Instant::now();
    let t = Thresholds::uniform(0.5).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (0..=20).map(|i| f64::from(i) * 0.05).collect();
    let mut cases = 0u64;
    let mut wet_over_dry = 0u64;
    for &a in &grid {
        for &d in &grid {
            for &w in &grid {
                for &m in &grid {
                    let v = ScoreVector { anomaly: a, dry_amd: d, wet_amd: w, dme: m };
                    let got = classify(&v, &t);
                    let want = fusion_oracle(&v, 0.5);
                    cases += 1;
                    ensure((got.anomaly_flag, got.pathology, got.general_amd_score) == want, || {
                        format!("{v:?}: got {got:?}, oracle {want:?}")
                    })?;
                    if d >= 0.5 && w >= 0.5 {
                        ensure(got.pathology != Pathology::DryAmd, || format!("{v:?} classified dry"))?;
                        if d > w {
                            wet_over_dry += 1;
                        }
                    }
                }
            }
        }
    }
    ensure(cases == 194_481, || format!("{cases} cases"))?;
    let took = within_budget(start, Duration::from_secs(5))?;
    Ok(format!("{cases} cases agree ({wet_over_dry} with dry > wet, both present), {took:.2?}"))
}

// ---------------------------------------------------------------------------
// 3. Gradient check

fn gradient_check() -> Outcome {
    let start = Instant::now();
    const EPS: f64 = 1e-4;
    const REL_TOL: f64 = 1e-3;
    let config = ModelConfig { input_size: (8, 8), conv_blocks: vec![ConvBlock::new(3, 2)], dense_units: 4, seed: 17 };
    let model = build_model(&config, ModelTask::Anomaly).map_err(|e| e.to_string())?;
    let net = model.network();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    // Non-zero biases so that every parameter has a live gradient path.
    let params: Vec<f64> = model.weights().iter().map(|&w| f64::from(w) + rng.gen_range(-0.05..0.05)).collect();
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for input in 0..5 {
        let pixels: Vec<f32> = (0..64).map(|_| rng.gen::<f32>()).collect();
        let positive = input % 2 == 0;
        let mut grad = vec![0.0; params.len()];
        net.loss_and_grad(&params, &pixels, positive, &mut grad);
        let mut probe = params.clone();
        for (k, &g) in grad.iter().enumerate() {
            probe[k] = params[k] + EPS;
            let up = net.loss(&probe, &pixels, positive);
            probe[k] = params[k] - EPS;
            let down = net.loss(&probe, &pixels, positive);
            probe[k] = params[k];
            let numeric = (up - down) / (2.0 * EPS);
            let scale = g.abs().max(numeric.abs());
            let rel = if scale == 0.0 { 0.0 } else { (g - numeric).abs() / scale };
            worst = worst.max(rel);
            ensure(rel <= REL_TOL, || {
                format!("input {input}, parameter {k}: analytic {g:e}, numeric {numeric:e}, rel {rel:e}")
            })?;
            checked += 1;
        }
    }
    let took = within_budget(start, Duration::from_secs(30))?;
    Ok(format!(
        "{checked} checks over {} parameters x 5 inputs, worst rel {worst:.1e}, {took:.2?}",
        params.len()
    ))
}

// ---------------------------------------------------------------------------
// 4. Early stopping

fn scripted(patience: usize, max_epochs: usize, losses: &[f64]) -> (usize, Option<usize>) {
    let mut es = EarlyStopping::new(patience, 0.0);
    for &l in losses.iter().take(max_epochs) {
        if es.observe(l).stop {
            break;
        }
    }
    (es.epochs_seen(), es.best_epoch())
}

fn early_stopping() -> Outcome {
    let seq = [1.0, 0.9, 0.91, 0.92, 0.85, 0.86, 0.87, 0.88, 0.89, 0.9];
    let plateau = [0.5, 0.4, 0.4, 0.4, 0.4, 0.4];
    let falling = [0.9, 0.8, 0.7, 0.6, 0.5];
    // (patience, sequence, stop epoch, best epoch), epochs counted from 1.
    let cases: [(usize, &[f64], usize, usize); 9] = [
        (1, &seq, 3, 2),
        (2, &seq, 4, 2),
        (3, &seq, 8, 5),
        (1, &plateau, 3, 2),
        (2, &plateau, 4, 2),
        (3, &plateau, 5, 2),
        (1, &falling, 5, 5),
        (2, &falling, 5, 5),
        (3, &falling, 5, 5),
    ];
    for (patience, losses, stop, best) in cases {
        let got = scripted(patience, losses.len(), losses);
        ensure(got == (stop, Some(best - 1)), || {
            format!("patience {patience} on {losses:?}: got {got:?}, want stop {stop} best {best}")
        })?;
    }

    // The training loop honours the same contract on recorded losses.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let items: Vec<TrainingItem> = (0..16)
        .map(|i| {
            let px = (0..64).map(|_| rng.gen::<f32>()).collect();
            TrainingItem::new(NormalizedBScan::from_values(8, 8, px), i % 2 == 0)
        })
        .collect();
    let config = ModelConfig { input_size: (8, 8), conv_blocks: vec![ConvBlock::new(2, 1)], dense_units: 4, seed: 3 };
    let model = build_model(&config, ModelTask::Dme).map_err(|e| e.to_string())?;
    for patience in 1..=3 {
        let tc = TrainConfig { max_epochs: 12, patience, learning_rate: 0.5, batch_size: 4, seed: 9, ..Default::default() };
        let trained = train(&model, &items[..12], &items[12..], &tc).map_err(|e| e.to_string())?;
        let val: Vec<f64> = trained.history().iter().map(|r| r.val_loss).collect();
        let want = scripted(patience, 12, &val);
        ensure((val.len(), trained.best_epoch()) == want, || {
            format!("train() with patience {patience}: {} epochs, best {:?}, rule says {want:?}", val.len(), trained.best_epoch())
        })?;
    }
    Ok(format!("{} scripted sequences and 3 training runs", cases.len()))
}

// ---------------------------------------------------------------------------
// 5 and 6. Synthetic external validation and quality rating

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

fn train_bank(ws: &Workspace) -> Result<Duration, String> {
    let start = Instant::now();
    let train_dir = ws.path("clean");
    cli(&[
        "gen-phantoms", "--out", p(&train_dir), "--per-class", "100", "--bscans", "3", "--size", "64x64",
        "--site-profile", "clean", "--ungradable-frac", "0.1", "--seed", "11",
    ])?;
    let manifest = train_dir.join("manifest.json");
    for task in ["anomaly", "dry", "wet", "dme", "quality"] {
        let out = ws.path(&format!("models/{task}.poct"));
        cli(&[
            "train", "--manifest", p(&manifest), "--task", task, "--preset", "toy", "--epochs", "12",
            "--patience", "3", "--input-size", "32x32", "--out", p(&out), "--seed", "11",
        ])?;
    }
    Ok(start.elapsed())
}

fn score_site(ws: &Workspace, name: &str, per_class: &str, bscans: &str, frac: &str, seed: &str, gate: &str) -> Result<EvaluationReport, String> {
    let dir = ws.path(name);
    cli(&[
        "gen-phantoms", "--out", p(&dir), "--per-class", per_class, "--bscans", bscans, "--size", "64x64",
        "--site-profile", "noisy", "--ungradable-frac", frac, "--seed", seed,
    ])?;
    let manifest = dir.join("manifest.json");
    let preds = ws.path(&format!("{name}.jsonl"));
    let report = ws.path(&format!("{name}.json"));
    cli(&[
        "infer", "--manifest", p(&manifest), "--models", p(&ws.path("models")), "--agg", "max", "--threshold", "0.5",
        "--gate-quality", gate, "--out", p(&preds),
    ])?;
    cli(&["evaluate", "--preds", p(&preds), "--manifest", p(&manifest), "--threshold", "0.5", "--out", p(&report)])?;
    let mut reports = read_reports(&report).map_err(|e| e.to_string())?;
    reports.pop().ok_or_else(|| "empty report".to_string())
}

fn external_validation(ws: &Workspace, train_time: Duration) -> Outcome {
    let start = Instant::now();
    let report = score_site(ws, "noisy", "100", "3", "0", "9011", "off")?;
    let took = train_time + start.elapsed();
    let mut parts = Vec::new();
    for task in TaskId::ALL {
        let t = report.task(task).ok_or_else(|| format!("no {task} row"))?;
        let floor = if task == TaskId::Anomaly { 0.95 } else { 0.90 };
        ensure(t.auroc >= floor, || format!("{task} AUROC {:.4} < {floor}", t.auroc))?;
        parts.push(format!("{} {:.3}", task.as_str(), t.auroc));
    }
    ensure(report.n_volumes == 400, || format!("{} test volumes", report.n_volumes))?;
    ensure(took <= Duration::from_secs(15 * 60), || format!("took {took:.0?}"))?;
    Ok(format!("CLEAN s11 -> NOISY s9011, 400 volumes: {}; {took:.0?}", parts.join(", ")))
}

fn quality_rating(ws: &Workspace) -> Outcome {
    let r = dataset_quality_rating(&[true, true, false, true]).map_err(|e| e.to_string())?;
    ensure(r.percent == 75 && r.raw == 75.0, || format!("3/4 -> {r:?}"))?;
    let flags: Vec<bool> = (0..1000).map(|i| i % 1000 >= 5).collect();
    let r = dataset_quality_rating(&flags).map_err(|e| e.to_string())?;
    ensure(r.percent == 100 && (r.raw - 99.5).abs() < 1e-12, || format!("995/1000 -> {r:?}"))?;

    let frac = 0.2;
    let report = score_site(ws, "noisy-ungradable", "25", "4", "0.2", "9012", "on")?;
    let target = 100.0 * (1.0 - frac);
    let gap = (report.quality_rating_raw - target).abs();
    ensure(gap <= 5.0, || format!("rating {:.2} vs {target}", report.quality_rating_raw))?;
    ensure((f64::from(report.quality_rating) - target).abs() <= 5.0, || format!("rounded {}", report.quality_rating))?;
    Ok(format!("3/4 -> 75; F = {frac}: rating {} (raw {:.2}, target {target})", report.quality_rating, report.quality_rating_raw))
}

// ---------------------------------------------------------------------------
// 7. Determinism and invariance

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn full_run(root: &Path, threads: &str) -> Result<(), String> {
    let data = root.join("data");
    cli(&[
        "gen-phantoms", "--out", p(&data), "--per-class", "6", "--bscans", "3", "--size", "32x32",
        "--site-profile", "lowres", "--ungradable-frac", "0.25", "--seed", "7",
    ])?;
    let manifest = data.join("manifest.json");
    for task in ["anomaly", "dry", "wet", "dme", "quality"] {
        cli(&[
            "train", "--manifest", p(&manifest), "--task", task, "--epochs", "3", "--patience", "1",
            "--input-size", "16x16", "--val-frac", "0.5", "--out", p(&root.join(format!("models/{task}.poct"))), "--seed", "7",
            "--threads", threads,
        ])?;
    }
    let preds = root.join("preds.jsonl");
    cli(&[
        "infer", "--manifest", p(&manifest), "--models", p(&root.join("models")), "--agg", "topk:2",
        "--gate-quality", "on", "--out", p(&preds), "--threads", threads,
    ])?;
    cli(&["evaluate", "--preds", p(&preds), "--manifest", p(&manifest), "--out", p(&root.join("report.json"))])
}

fn determinism() -> Outcome {
    // Repeat runs, with different worker counts.
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    full_run(a.path(), "1")?;
    full_run(b.path(), "3")?;
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    ensure(ta == tb, || {
        let differing: Vec<_> = ta.iter().zip(&tb).filter(|(x, y)| x != y).map(|(x, _)| x.0.display().to_string()).collect();
        format!("repeat runs differ: {differing:?}")
    })?;
    let files = ta.len();

    // Permutation invariance of volume scores.
    let size = (16, 16);
    let models: Vec<_> = ModelTask::ALL
        .iter()
        .map(|&task| build_model(&ModelConfig::toy(size, 100 + u64::from(task.code())), task))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut it = models.into_iter();
    let mut next = || it.next().unwrap();
    let bank = ModelBank::new(next(), next(), next(), next(), next()).map_err(|e| e.to_string())?;
    let cohort = synthesize_cohort(&PhantomConfig {
        n_volumes_per_class: 2,
        bscans_per_volume: 7,
        image_height: 32,
        image_width: 32,
        ungradable_fraction: 0.3,
        seed: 5,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let t = Thresholds::default();
    let mut perms = 0;
    for pv in &cohort {
        for policy in [AggregationPolicy::Max, AggregationPolicy::Mean, AggregationPolicy::TopKMean(3)] {
            for gate_quality in [false, true] {
                let opts = ScoringOptions { policy, gate_quality, ..Default::default() };
                let base = score_volume(&bank, &pv.volume, "x", &opts, &t).map_err(|e| e.to_string())?;
                for _ in 0..3 {
                    let mut order: Vec<usize> = (0..7).collect();
                    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
                    let shuffled = pv.volume.permuted(&order).map_err(|e| e.to_string())?;
                    let got = score_volume(&bank, &shuffled, "x", &opts, &t).map_err(|e| e.to_string())?;
                    ensure(got.scores == base.scores && got.decision == base.decision, || {
                        format!("{} under {policy}: {:?} vs {:?}", pv.volume.volume_id(), got.scores, base.scores)
                    })?;
                    perms += 1;
                }
            }
        }
    }

    // Identity augmentation.
    let img = NormalizedBScan::from_values(16, 16, (0..256).map(|_| rng.gen::<f32>()).collect());
    ensure(apply_augmentation(&img, &ConcreteAugmentation::IDENTITY) == img, || "identity changed pixels".into())?;
    for item in 0..200 {
        let draw = sample_augmentation(&AugmentParams::NONE, 3, item % 7, item);
        ensure(draw.is_identity(), || format!("zero ranges drew {draw:?}"))?;
        ensure(apply_augmentation(&img, &draw) == img, || "zero-range draw changed pixels".into())?;
    }

    // Anomaly call ignores pathology scores.
    let mut violations = 0;
    for _ in 0..10_000 {
        let anomaly = rng.gen::<f64>();
        let t = Thresholds::new(
            rng.gen_range(0.01..0.99),
            rng.gen_range(0.01..0.99),
            rng.gen_range(0.01..0.99),
            rng.gen_range(0.01..0.99),
            0.5,
        )
        .map_err(|e| e.to_string())?;
        let v1 = ScoreVector { anomaly, dry_amd: rng.gen(), wet_amd: rng.gen(), dme: rng.gen() };
        let v2 = ScoreVector { anomaly, dry_amd: rng.gen(), wet_amd: rng.gen(), dme: rng.gen() };
        let (a, b) = (classify(&v1, &t).anomaly_flag, classify(&v2, &t).anomaly_flag);
        if a != b || a != (anomaly >= t.anomaly) {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} independence violations"))?;
    Ok(format!(
        "{files} output files byte-identical across runs; {perms} permutations invariant; identity no-op; 10000 fuzz trials, 0 violations"
    ))
}

// ---------------------------------------------------------------------------
// 8. Report rendering

fn fixture_prediction(id: &str, scores: Vec<ScoreVector>, gradable: Vec<bool>) -> VolumePrediction {
    let max = |f: fn(&ScoreVector) -> f64| scores.iter().map(f).fold(0.0, f64::max);
    let v = ScoreVector { anomaly: max(|s| s.anomaly), dry_amd: max(|s| s.dry_amd), wet_amd: max(|s| s.wet_amd), dme: max(|s| s.dme) };
    let decision = classify(&v, &Thresholds::default());
    VolumePrediction {
        volume_id: id.into(),
        dataset_id: String::new(),
        scores: VolumeScores { anomaly: v.anomaly, dry_amd: v.dry_amd, wet_amd: v.wet_amd, dme: v.dme, general_amd: decision.general_amd_score },
        decision,
        gradable_fraction: gradable.iter().filter(|&&g| g).count() as f64 / gradable.len() as f64,
        bscan_quality: gradable.iter().map(|&g| if g { 0.9 } else { 0.1 }).collect(),
        bscan_scores: scores,
        bscan_gradable: gradable,
    }
}

fn score_for(label: GroundTruthLabel, jitter: f64) -> ScoreVector {
    let (lo, hi) = (0.2 + jitter, 0.7 + jitter);
    let mut s = ScoreVector { anomaly: hi, dry_amd: lo, wet_amd: lo, dme: lo };
    match label {
        GroundTruthLabel::Normal => s.anomaly = lo,
        GroundTruthLabel::DryAmd => s.dry_amd = hi,
        GroundTruthLabel::WetAmd => s.wet_amd = hi,
        GroundTruthLabel::Dme => s.dme = hi,
        GroundTruthLabel::AnomalousOther => {}
    }
    s
}

fn report_fidelity() -> Outcome {
    use GroundTruthLabel::*;
    let t = Thresholds::default();
    let ws = tempfile::tempdir().map_err(|e| e.to_string())?;

    // A1-shaped: per-B-scan labels, normal versus other anomalies only,
    // 6 of every 100 B-scans ungradable.
    let mut entries = Vec::new();
    let mut preds = Vec::new();
    for v in 0..20 {
        let id = format!("a{v:02}");
        let labels: Vec<GroundTruthLabel> = (0..10).map(|b| if (v + b) % 3 == 0 { AnomalousOther } else { Normal }).collect();
        entries.push(json!({
            "volume_id": id,
            "site_id": "s",
            "labels": labels.iter().map(|l| l.as_str()).collect::<Vec<_>>(),
            "bscan_paths": (0..10).map(|b| format!("{id}/{b}.png")).collect::<Vec<_>>(),
        }));
        let scores = labels.iter().enumerate().map(|(b, &l)| score_for(l, (b % 4) as f64 * 0.01)).collect();
        let gradable = (0..10).map(|b| (v * 10 + b) % 50 >= 3).collect();
        preds.push(fixture_prediction(&id, scores, gradable));
    }
    let text = json!({"dataset_id": "A1", "scanner_id": "Vendor 1", "label_granularity": "BSCAN", "entries": entries});
    let m = manifest_from_str(&text.to_string(), Path::new("a1.json"), PathBuf::new()).map_err(|e| e.to_string())?;
    let a1 = evaluate_dataset(&preds, &m, &t).map_err(|e| e.to_string())?;

    // B1-shaped: 100 volumes x 128 B-scans, volume-level labels, four classes.
    let mut entries = Vec::new();
    let mut preds = Vec::new();
    for v in 0..100 {
        let id = format!("b{v:03}");
        let label = [Normal, DryAmd, WetAmd, Dme][v % 4];
        entries.push(json!({
            "volume_id": id,
            "site_id": "s",
            "label": label.as_str(),
            "bscan_paths": (0..128).map(|b| format!("{id}/{b}.png")).collect::<Vec<_>>(),
        }));
        preds.push(fixture_prediction(&id, vec![score_for(label, (v % 5) as f64 * 0.01); 128], vec![true; 128]));
    }
    let text = json!({"dataset_id": "B1", "scanner_id": "Vendor 2", "label_granularity": "VOLUME", "entries": entries});
    let m = manifest_from_str(&text.to_string(), Path::new("b1.json"), PathBuf::new()).map_err(|e| e.to_string())?;
    let b1 = evaluate_dataset(&preds, &m, &t).map_err(|e| e.to_string())?;

    let (pa, pb, out) = (ws.path().join("a1.json"), ws.path().join("b1.json"), ws.path().join("table.md"));
    fs::write(&pa, serde_json::to_string(&a1).unwrap()).map_err(|e| e.to_string())?;
    fs::write(&pb, serde_json::to_string(&[b1]).unwrap()).map_err(|e| e.to_string())?;
    cli(&["report", "--in", &format!("{},{}", p(&pa), p(&pb)), "--format", "md", "--out", p(&out)])?;
    let md = fs::read_to_string(&out).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = md.lines().collect();

    let header: Vec<&str> = lines[0].split('|').map(str::trim).filter(|s| !s.is_empty()).collect();
    let columns = [
        "Dataset",
        "Number of OCT volumes (slices)",
        "General Anomaly",
        "General AMD",
        "Dry AMD",
        "Wet AMD",
        "DME",
        "Quality Rating (%)",
    ];
    ensure(header == columns, || format!("header {header:?}"))?;
    let cells = |line: &str| -> Vec<String> {
        let parts: Vec<String> = line.split('|').map(|s| s.trim().to_string()).collect();
        parts[1..parts.len() - 1].to_vec()
    };
    let row_a = cells(lines[2]);
    let row_b = cells(lines[3]);
    ensure(row_a.len() == 8 && row_b.len() == 8, || "row width".into())?;
    ensure(row_a[0] == "A1 (Vendor 1)" && row_a[1] == "20 (200)", || format!("{row_a:?}"))?;
    ensure(row_a[2].starts_with("ROC: ") && row_a[2].contains("* Acc:"), || format!("A1 anomaly cell: {}", row_a[2]))?;
    ensure(row_a[3..7].iter().all(String::is_empty), || format!("expected blank cells: {row_a:?}"))?;
    ensure(row_a[7] == "94", || format!("A1 quality {}", row_a[7]))?;
    ensure(row_b[0] == "B1 (Vendor 2)" && row_b[1] == "100 (12,800)", || format!("B1 counts {}", row_b[1]))?;
    for cell in &row_b[2..7] {
        ensure(cell.starts_with("ROC: ") && !cell.contains('*'), || format!("B1 cell `{cell}`"))?;
    }
    ensure(row_b[7] == "100", || format!("B1 quality {}", row_b[7]))?;
    let foot = lines.iter().position(|l| *l == BSCAN_FOOTNOTE).ok_or("missing B-scan footnote")?;
    ensure(foot > 3, || "footnote precedes the table".into())?;
    Ok(format!("columns, A1 blanks + asterisk + footnote + quality 94, B1 `{}`", row_b[1]))
}

// ---------------------------------------------------------------------------

fn main() {
    if std::env::var_os("RUST_LOG").is_none() {
        std::env::set_var("RUST_LOG", "warn");
    }
    let ws = Workspace { dir: tempfile::tempdir().expect("temp dir") };
    let mut train_time = None;
    let mut failures = 0;
    let mut record = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failures += 1;
                println!("FAIL {name}: {why} (after {:.1?})", start.elapsed());
            }
        }
    };

    record("1 auroc-oracle", &mut auroc_oracle);
    record("2 fusion-grid", &mut fusion_grid);
    record("3 gradient-check", &mut gradient_check);
    record("4 early-stopping", &mut early_stopping);
    record("5 external-validation", &mut || {
        let took = train_bank(&ws)?;
        train_time = Some(took);
        external_validation(&ws, took)
    });
    record("6 quality-rating", &mut || {
        ensure(train_time.is_some(), || "models were not trained".into())?;
        quality_rating(&ws)
    });
    record("7 determinism", &mut determinism);
    record("8 report-fidelity", &mut report_fidelity);

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 8 acceptance criteria passed");
}
