//! Acceptance suite: one PASS/FAIL line per criterion.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use arcnet::cells::{arc_step, ArcParams};
use arcnet::checkpoint::save_shift;
use arcnet::data::{load_corpus, save_corpus, synth_generate, Conversation, Corpus, SyntheticConfig};
use arcnet::gradcheck::DEFAULT_STEP;
use arcnet::graph::Graph;
use arcnet::harness::check_model_gradients;
use arcnet::metrics::classification_report;
use arcnet::model::{ArcModel, ModelConfig, ShiftMode};
use arcnet::optim::AdamConfig;
use arcnet::shift::{derive_shift_labels, pretrain, Polarity, PolarityMap, PretrainConfig, ShiftInput, ShiftNet, ShiftNetConfig};
use arcnet::tensor::{ParamStore, Precision};
use arcnet::train::{evaluate, train, TrainConfig};
use arcnet::data::Target;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, start: Instant, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure!(took < limit, "{what} took {took:?}, limit {limit:?}");
    Ok(())
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_arcnet")
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "arcnet {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn small_model(corpus: &Corpus, k: usize, mode: ShiftMode, seed: u64) -> ArcModel {
    let mut cfg = ModelConfig::new(corpus.dims, k);
    cfg.party_dim = 16;
    cfg.context_dim = 16;
    cfg.emotion_dim = 12;
    cfg.mode = mode;
    ArcModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn pretrained_shift(corpus: &Corpus, seed: u64) -> ShiftNet {
    let net = ShiftNet::new(
        ShiftNetConfig::for_corpus(corpus, 300, ShiftInput::Text),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap();
    let cfg = PretrainConfig {
        seed,
        ..PretrainConfig::default()
    };
    pretrain(net, corpus, &cfg).unwrap().0
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let checks = check_model_gradients(42, DEFAULT_STEP).map_err(|e| e.to_string())?;
    let worst = checks
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    for c in &checks {
        ensure!(
            c.max_rel_error <= 1e-4,
            "{} / {}: max rel err {:.3e} at {:?}",
            c.mode.as_str(),
            c.group,
            c.max_rel_error,
            c.worst
        );
    }
    within(Duration::from_secs(120), start, "gradient checks")?;
    Ok(format!(
        "{} groups, worst {:.2e} ({} / {}), {:.1}s",
        checks.len(),
        worst.max_rel_error,
        worst.mode.as_str(),
        worst.group,
        start.elapsed().as_secs_f64()
    ))
}

fn c2_gate_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_dev = 0.0f64;
    for case in 0..500 {
        let (ds, de) = (rng.random_range(1..8), rng.random_range(1..8));
        let mut store = ParamStore::new();
        let arc = ArcParams::register(&mut store, "arc", ds, de, case % 2 == 0, &mut rng).unwrap();
        let mut v = |n: usize| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
        let (s, e_prev, e_other) = (v(ds), v(de), v(de));

        let mut g = Graph::<f64>::new();
        let b = g.bind(&store, false);
        let sv = g.constant(&s).unwrap();
        let ev = g.constant(&e_prev).unwrap();
        let eo = g.constant(&e_other).unwrap();
        let zero = g.scalar(0.0);
        let one = g.scalar(1.0);

        let kept = arc_step(&mut g, &b, &arc, ev, sv, zero).unwrap();
        let kept = g.value(kept);
        ensure!(
            kept.iter().zip(&e_prev).all(|(a, b)| a.to_bits() == b.to_bits()),
            "case {case}: p=0 changed the state"
        );

        let a = arc_step(&mut g, &b, &arc, ev, sv, one).unwrap();
        let c = arc_step(&mut g, &b, &arc, eo, sv, one).unwrap();
        for (x, y) in g.value(a).iter().zip(g.value(c)) {
            max_dev = max_dev.max((x - y).abs());
        }
        ensure!(max_dev <= 1e-15, "case {case}: p=1 output depends on e_prev ({max_dev:e})");
    }
    Ok(format!("500 random cells, p=1 max deviation {max_dev:e}"))
}

/// Shift iff the polarity signs multiply to -1.
fn label_oracle(pols: &[Polarity]) -> Vec<bool> {
    let sign = |p: Polarity| match p {
        Polarity::Positive => 1i32,
        Polarity::Negative => -1,
        Polarity::Neutral => 0,
    };
    (1..pols.len()).map(|t| sign(pols[t - 1]) * sign(pols[t]) == -1).collect()
}

fn c3_shift_labels() -> Outcome {
    const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];
    let names = |pols: &[Polarity]| -> Vec<&'static str> {
        pols.iter()
            .map(|p| match p {
                Polarity::Positive => "joy",
                Polarity::Negative => "anger",
                Polarity::Neutral => "neutral",
            })
            .collect()
    };
    let pm = PolarityMap::from_pairs([
        ("joy", Polarity::Positive),
        ("anger", Polarity::Negative),
        ("neutral", Polarity::Neutral),
    ]);
    let mut exhaustive = 0;
    for code in 0..81 {
        let pols: Vec<Polarity> = (0..4).map(|i| ALL[(code / 3usize.pow(i)) % 3]).collect();
        let got = derive_shift_labels(&names(&pols), &pm).map_err(|e| e.to_string())?;
        ensure!(got == label_oracle(&pols), "sequence {pols:?}: {got:?}");
        exhaustive += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let n = rng.random_range(1..=20);
        let pols: Vec<Polarity> = (0..n).map(|_| ALL[rng.random_range(0..3)]).collect();
        let got = derive_shift_labels(&names(&pols), &pm).map_err(|e| e.to_string())?;
        ensure!(got == label_oracle(&pols), "sequence {pols:?}: {got:?}");
    }
    Ok(format!("{exhaustive} exhaustive + 1000 random sequences"))
}

struct BruteMetrics {
    accuracy: f64,
    precision: Vec<f64>,
    recall: Vec<f64>,
    f1: Vec<f64>,
    weighted_f1: f64,
}

/// Per-class counts by direct filtering of the label pairs.
fn brute_metrics(truth: &[usize], pred: &[usize], k: usize) -> BruteMetrics {
    let n = truth.len() as f64;
    let pairs: Vec<(usize, usize)> = truth.iter().copied().zip(pred.iter().copied()).collect();
    let accuracy = pairs.iter().filter(|(t, p)| t == p).count() as f64 / n;
    let (mut precision, mut recall, mut f1) = (vec![], vec![], vec![]);
    let mut weighted_f1 = 0.0;
    for c in 0..k {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
        let fneg = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
        let pr = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let re = if tp + fneg == 0.0 { 0.0 } else { tp / (tp + fneg) };
        let f = if pr + re == 0.0 { 0.0 } else { 2.0 * pr * re / (pr + re) };
        weighted_f1 += (tp + fneg) / n * f;
        precision.push(pr);
        recall.push(re);
        f1.push(f);
    }
    BruteMetrics {
        accuracy,
        precision,
        recall,
        f1,
        weighted_f1,
    }
}

fn c4_metrics() -> Outcome {
    let r = classification_report(&[0, 0, 1], &[0, 1, 1], 2).map_err(|e| e.to_string())?;
    ensure!((r.accuracy - 2.0 / 3.0).abs() <= 1e-12, "worked example accuracy {}", r.accuracy);
    ensure!((r.weighted_f1 - 2.0 / 3.0).abs() <= 1e-12, "worked example weighted F1 {}", r.weighted_f1);
    ensure!(
        r.per_class.iter().all(|c| (c.f1 - 2.0 / 3.0).abs() <= 1e-12),
        "worked example per-class F1"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut max_diff = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(1..=50);
        let k = rng.random_range(1..=6);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let got = classification_report(&truth, &pred, k).map_err(|e| e.to_string())?;
        let want = brute_metrics(&truth, &pred, k);
        let mut diffs = vec![
            (got.accuracy - want.accuracy).abs(),
            (got.weighted_f1 - want.weighted_f1).abs(),
        ];
        for c in 0..k {
            diffs.push((got.per_class[c].precision - want.precision[c]).abs());
            diffs.push((got.per_class[c].recall - want.recall[c]).abs());
            diffs.push((got.per_class[c].f1 - want.f1[c]).abs());
            let row: usize = got.confusion[c].iter().sum();
            ensure!(row == truth.iter().filter(|&&t| t == c).count(), "case {case}: confusion row {c}");
        }
        let d = diffs.into_iter().fold(0.0, f64::max);
        max_diff = max_diff.max(d);
        ensure!(d <= 1e-12, "case {case}: deviation {d:e}");
    }
    Ok(format!("worked example + 100 random cases, max deviation {max_diff:e}"))
}

fn separable(n_conversations: usize, n_classes: usize, rho: f64, seed: u64) -> Corpus {
    synth_generate(&SyntheticConfig {
        n_conversations,
        n_classes,
        rho,
        mu: 2.0,
        sigma: 0.5,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn c5_pretrain() -> Outcome {
    let start = Instant::now();
    let corpus = separable(286, 2, 0.66, 42);
    let pairs = corpus.num_pairs();
    ensure!(pairs >= 2000, "only {pairs} pairs");
    let net = ShiftNet::new(
        ShiftNetConfig::for_corpus(&corpus, 300, ShiftInput::Text),
        &mut ChaCha8Rng::seed_from_u64(42),
    )
    .unwrap();
    let cfg = PretrainConfig::default();
    ensure!(cfg.batch_size == 8 && cfg.epochs == 5, "pretraining defaults changed");
    let (_, report, _) = pretrain(net, &corpus, &cfg).map_err(|e| e.to_string())?;
    ensure!(report.shift_f1 >= 0.90, "shift F1 {:.4}", report.shift_f1);
    within(Duration::from_secs(180), start, "pretraining")?;
    Ok(format!(
        "{pairs} pairs, shift F1 {:.4}, accuracy {:.4}, {:.1}s",
        report.shift_f1,
        report.accuracy,
        start.elapsed().as_secs_f64()
    ))
}

fn c6_overfit() -> Outcome {
    let start = Instant::now();
    let corpus = separable(30, 3, 0.66, 42);
    let shift = pretrained_shift(&corpus, 42);
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 300,
        val_fraction: 1.0,
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let model = small_model(&corpus, 3, ShiftMode::WithShift, 42);
    let out = train(model, Some(shift), &corpus, &cfg).map_err(|e| e.to_string())?;
    let ev = evaluate(&out.model, out.shift.as_ref(), &corpus, Target::Class, Precision::F64)
        .map_err(|e| e.to_string())?;
    let first = out.report.history.iter().find(|e| e.val_accuracy >= 0.95).map(|e| e.epoch);
    ensure!(ev.report.accuracy >= 0.95, "train accuracy {:.4}", ev.report.accuracy);
    within(Duration::from_secs(300), start, "overfit run")?;
    Ok(format!(
        "train accuracy {:.4}, first ≥95% at epoch {:?}, {:.1}s",
        ev.report.accuracy,
        first,
        start.elapsed().as_secs_f64()
    ))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn c7_shift_benefit() -> Outcome {
    let start = Instant::now();
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for seed in 1..=5u64 {
        let corpus = separable(200, 2, 0.5, seed);
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 30,
            seed,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let shift = pretrained_shift(&corpus, seed);
        let a = train(small_model(&corpus, 2, ShiftMode::WithShift, seed), Some(shift), &corpus, &cfg)
            .map_err(|e| e.to_string())?;
        let b = train(small_model(&corpus, 2, ShiftMode::WithoutShift, seed), None, &corpus, &cfg)
            .map_err(|e| e.to_string())?;
        with.push(a.report.best_val_weighted_f1);
        without.push(b.report.best_val_weighted_f1);
    }
    let (mw, mo) = (median(with.clone()), median(without.clone()));
    let detail = format!(
        "median val weighted F1 with {mw:.4} vs without {mo:.4} (with {with:.4?}, without {without:.4?}), {:.1}s",
        start.elapsed().as_secs_f64()
    );
    ensure!(mw >= mo, "{detail}");
    Ok(detail)
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut compared = 0;
    for run in ["a", "b"] {
        let r = d.join(run);
        fs::create_dir_all(&r).unwrap();
        let corpus = r.join("corpus.jsonl");
        cli(&["synth", "--conversations", "24", "--classes", "3", "--seed", "42", "--out", p(&corpus)])?;
        cli(&["pretrain-shift", "--corpus", p(&corpus), "--siamese-hidden", "32", "--out", p(&r.join("pre"))])?;
        cli(&[
            "train", "--corpus", p(&corpus), "--shift-checkpoint", p(&r.join("pre/shift.ckpt")),
            "--epochs", "3", "--batch-size", "4", "--party-dim", "8", "--context-dim", "8",
            "--emotion-dim", "6", "--out", p(&r.join("train")),
        ])?;
        cli(&["eval", "--corpus", p(&corpus), "--checkpoint", p(&r.join("train/model.ckpt")), "--out", p(&r.join("eval"))])?;
    }
    for file in [
        "corpus.jsonl",
        "pre/shift.ckpt",
        "pre/report.json",
        "train/model.ckpt",
        "train/metrics.json",
        "eval/metrics.json",
        "eval/predictions.csv",
    ] {
        let a = fs::read(d.join("a").join(file)).map_err(|e| e.to_string())?;
        let b = fs::read(d.join("b").join(file)).map_err(|e| e.to_string())?;
        ensure!(a == b, "{file} differs between runs");
        compared += 1;
    }
    Ok(format!("{compared} artifacts byte-identical across two runs"))
}

fn c9_gate_minimum_at_flip() -> Outcome {
    let train_corpus = separable(286, 2, 0.66, 42);
    let net = pretrained_shift(&train_corpus, 42);
    // Same seed and shape, so the same class means; no shifts inside conversations.
    let steady = separable(40, 2, 1.0, 42);
    let polarity = |c: &Conversation| c.utterances[0].sentiment_score.unwrap() > 0.0;
    let pos = steady.conversations.iter().find(|c| polarity(c)).unwrap();
    let neg = steady.conversations.iter().find(|c| !polarity(c)).unwrap();
    let flip_at = 6;
    let mut utterances: Vec<_> = pos.utterances[..flip_at - 1].to_vec();
    utterances.extend_from_slice(&neg.utterances[..neg.utterances.len() - (flip_at - 1)]);
    for (i, u) in utterances.iter_mut().enumerate() {
        u.utterance_id = format!("flip_{i}");
        u.speaker = ["A", "B"][i % 2].into();
    }
    let n = utterances.len();
    let corpus = Corpus {
        conversations: vec![Conversation {
            id: "flip".into(),
            utterances,
        }],
        ..steady.clone_header()
    };
    let labels = corpus.shift_labels(&corpus.conversations[0]).map_err(|e| e.to_string())?;
    ensure!(
        labels.iter().filter(|&&x| x).count() == 1 && labels[flip_at - 2],
        "constructed dialogue has shift labels {labels:?}"
    );

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cpath = dir.path().join("flip.jsonl");
    let spath = dir.path().join("shift.ckpt");
    let gpath = dir.path().join("gates.csv");
    save_corpus(&corpus, &cpath).map_err(|e| e.to_string())?;
    save_shift(&spath, &net, None, 42).map_err(|e| e.to_string())?;
    cli(&["gates", "--corpus", p(&cpath), "--conversation", "flip", "--shift-checkpoint", p(&spath), "--out", p(&gpath)])?;

    let mut rdr = csv::Reader::from_path(&gpath).map_err(|e| e.to_string())?;
    let mut series = Vec::new();
    for rec in rdr.deserialize::<(String, usize, f64, f64, String)>() {
        let (_, t, _, gate, _) = rec.map_err(|e| e.to_string())?;
        series.push((t, gate));
    }
    ensure!(series.len() == n, "exported {} rows for {n} utterances", series.len());
    // t = 1 has no predecessor; its gate is 0 by convention.
    let (t_min, g_min) = series[1..]
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let rest = series[1..]
        .iter()
        .filter(|(t, _)| *t != t_min)
        .map(|&(_, g)| g)
        .fold(f64::INFINITY, f64::min);
    ensure!(t_min == flip_at, "minimum of 1-p_shift at t={t_min}, flip at t={flip_at}: {series:?}");
    Ok(format!(
        "minimum 1-p_shift {g_min:.4} at flip t={flip_at}; next lowest {rest:.4}"
    ))
}

fn write_stub(path: &Path, name: &str, dims: (usize, usize, usize), task: &str, labels: &[&str], polarity: Option<Value>) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut header = json!({
        "name": name,
        "dims": {"text": dims.0, "audio": dims.1, "video": dims.2},
        "label_set": labels,
        "task": task,
    });
    if let Some(pm) = polarity {
        header["polarity_map"] = pm;
    }
    let mut lines = vec![header.to_string()];
    for c in 0..5 {
        for t in 0..4 {
            let score: f64 = rng.random_range(-3.0..3.0);
            let label = if task == "sentiment2" { (score >= 0.0) as usize } else { rng.random_range(0..labels.len()) };
            let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            lines.push(
                json!({
                    "conversation_id": format!("{name}_{c}"),
                    "position": t,
                    "utterance_id": format!("{name}_{c}_{t}"),
                    "speaker": if t % 2 == 0 { "A" } else { "B" },
                    "text_features": v(dims.0),
                    "audio_features": v(dims.1),
                    "video_features": v(dims.2),
                    "emotion_label": label,
                    "sentiment_score": score,
                })
                .to_string(),
            );
        }
    }
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn has_fields(v: &Value, fields: &[&str], what: &str) -> Result<(), String> {
    for f in fields {
        ensure!(v.get(f).is_some(), "{what} lacks field {f}: {v}");
    }
    Ok(())
}

fn c10_data_path() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stubs = [
        ("mosei", (768, 384, 711), "sentiment2", vec!["negative", "positive"], None),
        (
            "iemocap",
            (768, 100, 512),
            "emotion6",
            vec!["happy", "sad", "neutral", "angry", "excited", "frustrated"],
            Some(json!({"happy": "positive", "excited": "positive", "neutral": "neutral",
                         "sad": "negative", "angry": "negative", "frustrated": "negative"})),
        ),
    ];
    let mut done = Vec::new();
    for (name, dims, task, labels, pm) in stubs {
        let path = dir.path().join(format!("{name}.jsonl"));
        write_stub(&path, name, dims, task, &labels, pm);
        let corpus = load_corpus(&path).map_err(|e| format!("{name}: {e}"))?;
        ensure!(corpus.dims.text == dims.0 && corpus.dims.audio == dims.1 && corpus.dims.video == dims.2, "{name} dims");
        let out = dir.path().join(format!("{name}_run"));
        cli(&["train", "--corpus", p(&path), "--shift-from-scratch", "--epochs", "1", "--out", p(&out)])?;
        let ev = dir.path().join(format!("{name}_eval"));
        cli(&["eval", "--corpus", p(&path), "--checkpoint", p(&out.join("model.ckpt")), "--out", p(&ev)])?;

        let m: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
        has_fields(&m, &["checkpoint_sha256", "report"], "train metrics")?;
        let r = &m["report"];
        has_fields(r, &["mode", "target", "best_epoch", "best_val_weighted_f1", "history", "validation"], "train report")?;
        has_fields(&r["history"][0], &["epoch", "train_loss", "train_accuracy", "val_accuracy", "val_weighted_f1"], "history")?;
        let e: Value = serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
        for rep in [&r["validation"], &e] {
            has_fields(rep, &["n", "accuracy", "per_class", "weighted_f1", "macro_f1", "binary_f1", "confusion", "shift"], "metrics")?;
            has_fields(&rep["per_class"][0], &["precision", "recall", "f1", "support"], "per-class metrics")?;
            has_fields(&rep["shift"], &["pos_to_neg_accuracy", "pos_to_neg_count", "neg_to_pos_accuracy", "neg_to_pos_count"], "shift subsets")?;
        }
        let preds = fs::read_to_string(ev.join("predictions.csv")).unwrap();
        ensure!(
            preds.lines().next() == Some("conversation_id,t,truth,pred,p_shift"),
            "predictions header {:?}",
            preds.lines().next()
        );
        ensure!(preds.lines().count() == 21, "{name}: {} prediction lines", preds.lines().count());
        done.push(format!("{name} {}/{}/{}", dims.0, dims.1, dims.2));
    }
    Ok(format!("{} loaded, trained 1 epoch, all report fields present", done.join(" and ")))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", c1_gradients),
        ("gate identities", c2_gate_identities),
        ("shift-label oracle", c3_shift_labels),
        ("metrics oracle", c4_metrics),
        ("shift network pretraining", c5_pretrain),
        ("overfit check", c6_overfit),
        ("shift component benefit", c7_shift_benefit),
        ("determinism", c8_determinism),
        ("gate minimum at the polarity flip", c9_gate_minimum_at_flip),
        ("full-size data path", c10_data_path),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
