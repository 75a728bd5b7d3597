//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, file_hash};
use crate::data::{load_corpus, save_corpus, shift_statistics, split_train_val, synth_generate, Corpus, Dims, SyntheticConfig, Target, Task};
use crate::diagnostics::{model_gate_series, shift_gate_series, write_gates_csv, write_predictions_csv, GateRow};
use crate::error::{Error, Result};
use crate::gradcheck::DEFAULT_STEP;
use crate::harness::check_model_gradients;
use crate::model::{parse_modalities, ArcModel, ModelConfig, ShiftMode};
use crate::optim::AdamConfig;
use crate::shift::{pretrain, PretrainConfig, ShiftInput, ShiftNet, ShiftNetConfig};
use crate::tensor::Precision;
use crate::train::{evaluate, train, training_targets, TrainConfig};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "arcnet", version, about = "Shift-aware emotion recognition in conversations")]
pub struct Cli {
    /// TOML file with defaults for any flag; flags on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Shift percentages over consecutive utterance pairs.
    Stats(StatsArgs),
    /// Pretrain the shift network on its own.
    PretrainShift(PretrainArgs),
    /// Train the dialogue model.
    Train(TrainArgs),
    /// Evaluate a trained model.
    Eval(EvalArgs),
    /// Check the model's gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Export per-utterance gate values of one conversation.
    Gates(GatesArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub conversations: Option<usize>,
    /// Number of consecutive pairs; overrides --conversations.
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub utterances: Option<usize>,
    #[arg(long)]
    pub speakers: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Feature dims as `text,audio,video`.
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub task: Option<Task>,
    /// Also report the train and validation halves of the seeded split.
    #[arg(long)]
    pub split: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftInputArg {
    Text,
    Trimodal,
}

impl From<ShiftInputArg> for ShiftInput {
    fn from(v: ShiftInputArg) -> Self {
        match v {
            ShiftInputArg::Text => ShiftInput::Text,
            ShiftInputArg::Trimodal => ShiftInput::Trimodal,
        }
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden width of the shift network.
    #[arg(long = "siamese-hidden")]
    pub siamese_hidden: Option<usize>,
    #[arg(long = "shift-input", value_enum)]
    pub shift_input: Option<ShiftInputArg>,
    /// Output directory for `shift.ckpt` and `report.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub task: Option<Task>,
    /// Active modalities, e.g. `l,a`.
    #[arg(long)]
    pub modalities: Option<String>,
    /// Replace the shift-gated cell by a learned GRU.
    #[arg(long = "no-shift")]
    pub no_shift: bool,
    #[arg(long = "shift-checkpoint")]
    pub shift_checkpoint: Option<PathBuf>,
    /// Start the shift network from random weights.
    #[arg(long = "shift-from-scratch")]
    pub shift_from_scratch: bool,
    #[arg(long = "freeze-shift")]
    pub freeze_shift: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "party-dim")]
    pub party_dim: Option<usize>,
    #[arg(long = "context-dim")]
    pub context_dim: Option<usize>,
    #[arg(long = "emotion-dim")]
    pub emotion_dim: Option<usize>,
    #[arg(long = "siamese-hidden")]
    pub siamese_hidden: Option<usize>,
    #[arg(long = "shift-input", value_enum)]
    pub shift_input: Option<ShiftInputArg>,
    /// Train only on one label of a multilabel corpus.
    #[arg(long)]
    pub label: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    All,
    Shift,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, value_enum, default_value = "all")]
    pub subset: Subset,
    /// Output directory for `metrics.json` and `predictions.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct GatesArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub conversation: String,
    /// Model trained with the shift-gated cell.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Model trained without it.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Shift network alone.
    #[arg(long = "shift-checkpoint")]
    pub shift_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Values a `--config` file may set. Command-line flags take precedence.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub task: Option<Task>,
    pub modalities: Option<String>,
    pub no_shift: Option<bool>,
    pub shift_from_scratch: Option<bool>,
    pub freeze_shift: Option<bool>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub val_fraction: Option<f64>,
    pub party_dim: Option<usize>,
    pub context_dim: Option<usize>,
    pub emotion_dim: Option<usize>,
    pub siamese_hidden: Option<usize>,
    pub shift_input: Option<ShiftInputArg>,
    pub arc_bias: Option<bool>,
    pub gate_grad: Option<bool>,
    pub rho: Option<f64>,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub conversations: Option<usize>,
    pub utterances: Option<usize>,
    pub speakers: Option<usize>,
    pub classes: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::file(path))?;
        toml::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    }
}

/// Parses and runs; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_VALIDATION })
        }
    }
}

pub fn run(cli: Cli) -> Result<u8> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let precision = Precision::from_env()?;
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, &file),
        Command::Stats(a) => cmd_stats(&a, &file),
        Command::PretrainShift(a) => cmd_pretrain(&a, &file, precision),
        Command::Train(a) => cmd_train(&a, &file, precision),
        Command::Eval(a) => cmd_eval(&a, &file, precision),
        Command::Gradcheck(a) => cmd_gradcheck(&a, &file),
        Command::Gates(a) => cmd_gates(&a),
    }
}

fn load_with_task(path: &Path, task: Option<Task>) -> Result<Corpus> {
    let mut corpus = load_corpus(path)?;
    if let Some(t) = task {
        corpus.task = t;
        corpus.validate()?;
    }
    Ok(corpus)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn parse_dims(s: &str) -> Result<Dims> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Invalid(format!("dims {s:?}: {e}")))?;
    match parts[..] {
        [text, audio, video] => Ok(Dims { text, audio, video }),
        _ => Err(Error::Invalid(format!("dims {s:?} must have three entries"))),
    }
}

fn cmd_synth(a: &SynthArgs, f: &FileConfig) -> Result<u8> {
    let d = SyntheticConfig::default();
    let utterances = a.utterances.or(f.utterances).unwrap_or(d.utterances_per_conversation);
    let n_conversations = match a.pairs {
        Some(p) if utterances < 2 => {
            return Err(Error::Invalid(format!("{p} pairs need at least 2 utterances per conversation")))
        }
        Some(p) => p.div_ceil(utterances - 1),
        None => a.conversations.or(f.conversations).unwrap_or(d.n_conversations),
    };
    let cfg = SyntheticConfig {
        n_conversations,
        utterances_per_conversation: utterances,
        n_speakers: a.speakers.or(f.speakers).unwrap_or(d.n_speakers),
        n_classes: a.classes.or(f.classes).unwrap_or(d.n_classes),
        rho: a.rho.or(f.rho).unwrap_or(d.rho),
        mu: a.mu.or(f.mu).unwrap_or(d.mu),
        sigma: a.sigma.or(f.sigma).unwrap_or(d.sigma),
        dims: match &a.dims {
            Some(s) => parse_dims(s)?,
            None => d.dims,
        },
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
    };
    let corpus = synth_generate(&cfg)?;
    save_corpus(&corpus, &a.out)?;
    println!(
        "wrote {} conversations, {} utterances to {}",
        corpus.conversations.len(),
        corpus.num_utterances(),
        a.out.display()
    );
    Ok(0)
}

#[derive(Serialize)]
struct StatsOut {
    corpus: String,
    conversations: usize,
    utterances: usize,
    pairs: usize,
    shifts: usize,
    percentage: f64,
}

fn stats_of(name: &str, c: &Corpus) -> Result<StatsOut> {
    let s = shift_statistics(c)?;
    Ok(StatsOut {
        corpus: name.to_string(),
        conversations: c.conversations.len(),
        utterances: c.num_utterances(),
        pairs: s.pairs,
        shifts: s.shifts,
        percentage: s.percentage,
    })
}

fn cmd_stats(a: &StatsArgs, f: &FileConfig) -> Result<u8> {
    let corpus = load_with_task(&a.corpus, a.task.or(f.task))?;
    let mut out = vec![stats_of("all", &corpus)?];
    if a.split {
        let frac = f.val_fraction.unwrap_or(0.8);
        let (tr, va) = split_train_val(&corpus, frac, a.seed.or(f.seed).unwrap_or(42))?;
        out.push(stats_of("train", &tr)?);
        out.push(stats_of("val", &va)?);
    }
    for s in &out {
        println!(
            "{}: {} pairs, {} shifts, {:.2}% shift",
            s.corpus, s.pairs, s.shifts, s.percentage
        );
    }
    println!("{}", serde_json::to_string(&out)?);
    Ok(0)
}

fn adam_from(lr: Option<f64>, f: &FileConfig) -> AdamConfig {
    let d = AdamConfig::default();
    AdamConfig {
        lr: lr.or(f.lr).unwrap_or(d.lr),
        weight_decay: f.weight_decay.unwrap_or(d.weight_decay),
        ..d
    }
}

fn shift_config(corpus: &Corpus, hidden: Option<usize>, input: Option<ShiftInputArg>, f: &FileConfig) -> ShiftNetConfig {
    let hidden = hidden.or(f.siamese_hidden).unwrap_or(300);
    let input = input.or(f.shift_input).map(ShiftInput::from).unwrap_or_default();
    ShiftNetConfig::for_corpus(corpus, hidden, input)
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn cmd_pretrain(a: &PretrainArgs, f: &FileConfig, precision: Precision) -> Result<u8> {
    let corpus = load_with_task(&a.corpus, a.task.or(f.task))?;
    let d = PretrainConfig::default();
    let cfg = PretrainConfig {
        batch_size: a.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
        epochs: a.epochs.or(f.epochs).unwrap_or(d.epochs),
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        adam: adam_from(a.lr, f),
        val_fraction: f.val_fraction.unwrap_or(d.val_fraction),
        precision,
    };
    let net = ShiftNet::new(
        shift_config(&corpus, a.siamese_hidden, a.shift_input, f),
        &mut seeded(cfg.seed, 0),
    )?;
    let (net, report, opt) = pretrain(net, &corpus, &cfg)?;
    fs::create_dir_all(&a.out)?;
    let ckpt = a.out.join("shift.ckpt");
    checkpoint::save_shift(&ckpt, &net, Some(&opt), cfg.seed)?;
    write_json(&a.out.join("report.json"), &report)?;
    println!(
        "shift network: best epoch {}, accuracy {:.4}, shift F1 {:.4}, weighted F1 {:.4}",
        report.best_epoch, report.accuracy, report.shift_f1, report.weighted_f1
    );
    println!("checkpoint {} sha256 {}", ckpt.display(), file_hash(&ckpt)?);
    Ok(0)
}

fn resolve_target(corpus: &Corpus, label: Option<&str>) -> Result<Vec<(String, Target)>> {
    let targets = training_targets(corpus);
    let named: Vec<(String, Target)> = targets
        .into_iter()
        .map(|t| match t {
            Target::Binary(k) => (corpus.label_set[k].clone(), t),
            Target::Class => (String::new(), t),
        })
        .collect();
    match label {
        None => Ok(named),
        Some(l) => {
            let hit: Vec<_> = named.into_iter().filter(|(n, _)| n == l).collect();
            if hit.is_empty() {
                return Err(Error::Invalid(format!("label {l:?} is not a per-label target of this corpus")));
            }
            Ok(hit)
        }
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    label: Option<&'a str>,
    checkpoint_sha256: String,
    report: &'a crate::train::TrainReport,
}

fn cmd_train(a: &TrainArgs, f: &FileConfig, precision: Precision) -> Result<u8> {
    let corpus = load_with_task(&a.corpus, a.task.or(f.task))?;
    let no_shift = a.no_shift || f.no_shift.unwrap_or(false);
    let from_scratch = a.shift_from_scratch || f.shift_from_scratch.unwrap_or(false);
    if !no_shift && a.shift_checkpoint.is_none() && !from_scratch {
        return Err(Error::Invalid(
            "train needs --shift-checkpoint unless --no-shift or --shift-from-scratch is given".into(),
        ));
    }
    if a.shift_checkpoint.is_some() && from_scratch {
        return Err(Error::Invalid("--shift-checkpoint and --shift-from-scratch exclude each other".into()));
    }
    let d = TrainConfig::default();
    let seed = a.seed.or(f.seed).unwrap_or(d.seed);
    let modalities = match a.modalities.as_ref().or(f.modalities.as_ref()) {
        Some(s) => parse_modalities(s)?,
        None => crate::data::Modality::ALL.to_vec(),
    };
    fs::create_dir_all(&a.out)?;
    let targets = resolve_target(&corpus, a.label.as_deref())?;
    for (label, target) in &targets {
        let mut mc = ModelConfig::new(corpus.dims, corpus.num_classes(*target));
        mc.modalities = modalities.clone();
        mc.mode = if no_shift { ShiftMode::WithoutShift } else { ShiftMode::WithShift };
        mc.party_dim = a.party_dim.or(f.party_dim).unwrap_or(mc.party_dim);
        mc.context_dim = a.context_dim.or(f.context_dim).unwrap_or(mc.context_dim);
        mc.emotion_dim = a.emotion_dim.or(f.emotion_dim).unwrap_or(mc.emotion_dim);
        mc.arc_bias = f.arc_bias.unwrap_or(mc.arc_bias);
        mc.gate_grad = f.gate_grad.unwrap_or(mc.gate_grad);
        let model = ArcModel::new(mc, &mut seeded(seed, 0))?;
        let shift = if no_shift {
            None
        } else if let Some(p) = &a.shift_checkpoint {
            Some(checkpoint::load_shift(p)?.net)
        } else {
            Some(ShiftNet::new(
                shift_config(&corpus, a.siamese_hidden, a.shift_input, f),
                &mut seeded(seed, 3),
            )?)
        };
        let cfg = TrainConfig {
            batch_size: a.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
            epochs: a.epochs.or(f.epochs).unwrap_or(d.epochs),
            seed,
            lambda: a.lambda.or(f.lambda).unwrap_or(d.lambda),
            freeze_shift: a.freeze_shift || f.freeze_shift.unwrap_or(false),
            adam: adam_from(a.lr, f),
            val_fraction: f.val_fraction.unwrap_or(d.val_fraction),
            target: *target,
            precision,
        };
        let out = train(model, shift, &corpus, &cfg)?;
        let dir = if label.is_empty() {
            a.out.clone()
        } else {
            a.out.join(format!("label_{label}"))
        };
        fs::create_dir_all(&dir)?;
        let ckpt = dir.join("model.ckpt");
        checkpoint::save_model(
            &ckpt,
            &out.model,
            Some(&out.model_optim),
            out.shift.as_ref(),
            out.shift_optim.as_ref(),
            seed,
        )?;
        let r = &out.report;
        let summary = TrainSummary {
            label: (!label.is_empty()).then_some(label.as_str()),
            checkpoint_sha256: file_hash(&ckpt)?,
            report: r,
        };
        write_json(&dir.join("metrics.json"), &summary)?;
        let tag = if label.is_empty() { String::new() } else { format!("[{label}] ") };
        println!(
            "{tag}best epoch {} of {}: val accuracy {:.4}, weighted F1 {:.4}",
            r.best_epoch,
            r.history.len(),
            r.validation.accuracy,
            r.validation.weighted_f1
        );
    }
    Ok(0)
}

fn cmd_eval(a: &EvalArgs, f: &FileConfig, precision: Precision) -> Result<u8> {
    let corpus = load_with_task(&a.corpus, a.task.or(f.task))?;
    let loaded = checkpoint::load_model(&a.checkpoint)?;
    let targets = resolve_target(&corpus, a.label.as_deref())?;
    let target = match targets.as_slice() {
        [(_, t)] => *t,
        _ => {
            return Err(Error::Invalid(
                "multilabel corpus: choose one label with --label".into(),
            ))
        }
    };
    let ev = evaluate(&loaded.model, loaded.shift.as_ref(), &corpus, target, precision)?;
    let r = &ev.report;
    match a.subset {
        Subset::All => {
            println!(
                "accuracy {:.4}, weighted F1 {:.4}, macro F1 {:.4}",
                r.accuracy, r.weighted_f1, r.macro_f1
            );
            if let Some(b) = r.binary_f1 {
                println!("binary F1 {b:.4}");
            }
        }
        Subset::Shift => {
            let s = r
                .shift
                .as_ref()
                .ok_or_else(|| Error::Invalid("corpus has no polarity information for shift subsets".into()))?;
            let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            println!(
                "pos->neg accuracy {} ({} utterances)",
                fmt(s.pos_to_neg_accuracy),
                s.pos_to_neg_count
            );
            println!(
                "neg->pos accuracy {} ({} utterances)",
                fmt(s.neg_to_pos_accuracy),
                s.neg_to_pos_count
            );
        }
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("metrics.json"), r)?;
        write_predictions_csv(dir.join("predictions.csv"), &ev.predictions)?;
    }
    Ok(0)
}

fn cmd_gradcheck(a: &GradcheckArgs, f: &FileConfig) -> Result<u8> {
    let checks = check_model_gradients(a.seed.or(f.seed).unwrap_or(42), a.step)?;
    let mut ok = true;
    for c in &checks {
        let pass = c.max_rel_error <= a.tol;
        ok &= pass;
        println!(
            "{:<4} {:<13} {:<26} {:>4} params  max rel err {:.3e}",
            if pass { "ok" } else { "FAIL" },
            c.mode.as_str(),
            c.group,
            c.parameters,
            c.max_rel_error
        );
    }
    Ok(if ok { 0 } else { EXIT_NUMERICAL })
}

fn cmd_gates(a: &GatesArgs) -> Result<u8> {
    if a.checkpoint.is_none() && a.baseline.is_none() && a.shift_checkpoint.is_none() {
        return Err(Error::Invalid(
            "gates needs --checkpoint, --baseline or --shift-checkpoint".into(),
        ));
    }
    let corpus = load_corpus(&a.corpus)?;
    let conv = corpus
        .conversation(&a.conversation)
        .ok_or_else(|| Error::Invalid(format!("no conversation {:?}", a.conversation)))?;
    let mut rows = Vec::new();
    for path in [&a.checkpoint, &a.baseline].into_iter().flatten() {
        let m = checkpoint::load_model(path)?;
        let series = model_gate_series(&m.model, m.shift.as_ref(), conv)?;
        rows.extend(GateRow::from_records(&conv.id, m.model.config.mode.as_str(), &series));
    }
    if let Some(p) = &a.shift_checkpoint {
        let net = checkpoint::load_shift(p)?.net;
        rows.extend(GateRow::from_records(&conv.id, "shift_net", &shift_gate_series(&net, conv)?));
    }
    write_gates_csv(&a.out, &rows)?;
    for r in &rows {
        println!("{:<13} t={:<3} 1-p_shift {:.4}", r.mode, r.t, r.one_minus_p_shift);
    }
    Ok(0)
}
