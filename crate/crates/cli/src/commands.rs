use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use lgcm::analysis;
use lgcm::config::RunConfig;
use lgcm::data::{
    detokenize, examples_from_corpus, load_jsonl, parse_context, ExampleInput, TextDialog, Vocabulary,
};
use lgcm::decoder::GenerationConfig;
use lgcm::fixture;
use lgcm::metrics::{self, EvalPair};
use lgcm::model::checkpoint::{check_config, Checkpoint};
use lgcm::model::flops::{count_flops, count_flops_lengths, FlopShape};
use lgcm::model::LgcmConfig;
use lgcm::trainer::{evaluate_ppl, train};
use lgcm::Error;

use crate::Command;

pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 1,
            CliError::Core(Error::Numeric(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub const TRAIN_LOG: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildVocab { data, min_freq, out } => build_vocab(&data, min_freq, &out),
        Command::Train { config } => cmd_train(&config),
        Command::Eval {
            config,
            checkpoint,
            split,
            copy_reference,
        } => cmd_eval(&config, &checkpoint, &split, copy_reference),
        Command::Generate {
            checkpoint,
            context_file,
            max_new_tokens,
        } => cmd_generate(&checkpoint, &context_file, max_new_tokens),
        Command::Inspect {
            checkpoint,
            split,
            out,
            config,
        } => cmd_inspect(&checkpoint, &split, &out, config.as_deref()),
        Command::Flops {
            config,
            l,
            n,
            lengths,
            convention,
            csv,
        } => cmd_flops(config.as_deref(), l, n, &lengths, convention.into(), csv),
        Command::Fixture { out } => cmd_fixture(&out),
    }
}

fn load_corpus(path: &Path) -> Result<Vec<TextDialog>> {
    let dialogs = load_jsonl(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })?;
    if dialogs.is_empty() {
        return Err(Error::Empty(format!("{} holds no dialogs", path.display())).into());
    }
    Ok(dialogs)
}

fn build_vocab(data: &Path, min_freq: usize, out: &Path) -> Result<()> {
    if min_freq == 0 {
        return Err(CliError::Usage("--min-freq must be at least 1".into()));
    }
    let vocab = Vocabulary::build(&load_corpus(data)?, min_freq)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    vocab.save(out)?;
    println!("V = {}", vocab.len());
    Ok(())
}

fn inputs(dialogs: &[TextDialog], vocab: &Vocabulary, config: &LgcmConfig) -> Vec<ExampleInput> {
    examples_from_corpus(dialogs, vocab, config.n_max)
        .iter()
        .map(|ex| ExampleInput::new(ex, config.l_utt_max))
        .collect()
}

fn cmd_train(config_path: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    cfg.write_resolved(out)?;
    let train_dialogs = load_corpus(&cfg.data.train)?;
    let valid_dialogs = load_corpus(&cfg.data.valid)?;
    let vocab = match &cfg.data.vocab {
        Some(path) => Vocabulary::load(path)?,
        None => Vocabulary::build(&train_dialogs, cfg.data.min_freq)?,
    };
    vocab.save(&out.join(VOCAB_FILE))?;
    let model_cfg = cfg.model_config(vocab.len());
    let mut model = lgcm::Model::build(model_cfg.clone())?;
    let train_in = inputs(&train_dialogs, &vocab, &model_cfg);
    let valid_in = inputs(&valid_dialogs, &vocab, &model_cfg);
    println!(
        "# seed = {}, V = {}, parameters = {}, train examples = {}, valid examples = {}",
        cfg.seed,
        vocab.len(),
        model.parameter_count(),
        train_in.len(),
        valid_in.len()
    );
    let outcome = train(&mut model, &train_in, &valid_in, &cfg.train_config(), Some(&out.join(TRAIN_LOG)))?;
    let mut best = outcome.best;
    best.vocab = Some(vocab.tokens().to_vec());
    let best_path = out.join(BEST_CHECKPOINT);
    best.save(&best_path)?;
    println!(
        "trained {} steps: loss {:.4} -> {:.4}; best valid ppl {:.4} at step {}",
        outcome.steps,
        outcome.initial_loss,
        outcome.final_loss,
        best.valid_ppl.unwrap_or(f64::NAN),
        best.step
    );
    println!("checkpoint: {}", best_path.display());
    Ok(())
}

fn checkpoint_vocab(ckpt: &Checkpoint) -> Result<Vocabulary> {
    let tokens = ckpt
        .vocab
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint carries no vocabulary".into()))?;
    let vocab = Vocabulary::from_text(&tokens.join("\n"))?;
    if vocab.len() != ckpt.model.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "checkpoint vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            ckpt.model.config.vocab_size
        ))
        .into());
    }
    Ok(vocab)
}

/// A split name resolved through the config, or a path to a JSONL file.
fn split_file(split: &str, config: Option<&RunConfig>) -> Result<PathBuf> {
    if Path::new(split).is_file() {
        return Ok(PathBuf::from(split));
    }
    match config {
        Some(cfg) => Ok(cfg.split_path(split)?.to_path_buf()),
        None => Err(CliError::Usage(format!(
            "--split {split:?} is not a file; pass --config to look up named splits"
        ))),
    }
}

fn split_label(split: &str) -> String {
    Path::new(split)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| split.to_string())
}

fn cmd_eval(config_path: &Path, checkpoint: &Path, split: &str, copy_reference: bool) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let vocab = checkpoint_vocab(&ckpt)?;
    check_config(&ckpt.model.config, &cfg.model_config(vocab.len()))?;
    let model = &ckpt.model;
    let dialogs = load_corpus(&split_file(split, Some(&cfg))?)?;
    let data = inputs(&dialogs, &vocab, &model.config);
    let exec = cfg.train.execution;
    let ppl = evaluate_ppl(model, &data, exec)?;
    let references: Vec<Vec<String>> = data.iter().map(|ex| vocab.decode(&ex.response_target)).collect();
    let hypotheses = if copy_reference {
        references.clone()
    } else {
        model
            .generate_all(&data, &cfg.generation, exec)?
            .iter()
            .map(|ids| vocab.decode(ids))
            .collect()
    };
    let pairs: Vec<EvalPair> = hypotheses
        .into_iter()
        .zip(references)
        .map(|(hypothesis, reference)| EvalPair { hypothesis, reference })
        .collect();
    let report = metrics::evaluate(&pairs, Some(ppl), &cfg.metrics, exec);
    let label = split_label(split);
    let header = format!(
        "# split = {label}, checkpoint step = {}, seed = {}{}\n",
        ckpt.step,
        cfg.seed,
        if copy_reference { ", hypotheses copied from references" } else { "" }
    );
    print!("{header}{}", report.to_text());
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join(format!("eval_{label}.txt")), format!("{header}{}", report.to_text()))?;
    fs::write(cfg.output_dir.join(format!("eval_{label}.csv")), format!("{header}{}", report.to_csv()))?;
    cfg.write_resolved(&cfg.output_dir)?;
    Ok(())
}

fn cmd_generate(checkpoint: &Path, context_file: &Path, max_new_tokens: Option<usize>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let vocab = checkpoint_vocab(&ckpt)?;
    let model = &ckpt.model;
    let file = fs::File::open(context_file)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", context_file.display())))?;
    let dialog = parse_context(BufReader::new(file))?;
    let encoded = vocab.encode_dialog(&dialog);
    let turns = &encoded.utterances;
    let context = &turns[turns.len().saturating_sub(model.config.n_max)..];
    let role = context.last().expect("at least one turn").speaker.other();
    let input = ExampleInput::for_generation(context, role.index(), model.config.l_utt_max);
    let mut gen = GenerationConfig::default();
    if let Some(n) = max_new_tokens {
        gen.max_new_tokens = n;
    }
    let ids = model.greedy_generate(&input, &gen)?;
    println!("{}", detokenize(&vocab.decode(&ids)));
    Ok(())
}

fn cmd_inspect(checkpoint: &Path, split: &str, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = config.map(RunConfig::load).transpose()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let vocab = checkpoint_vocab(&ckpt)?;
    if let Some(cfg) = &cfg {
        check_config(&ckpt.model.config, &cfg.model_config(vocab.len()))?;
    }
    let dialogs = load_corpus(&split_file(split, cfg.as_ref())?)?;
    let data = inputs(&dialogs, &vocab, &ckpt.model.config);
    let exec = cfg.as_ref().map(|c| c.train.execution).unwrap_or_default();
    let report = analysis::heatmaps(&ckpt.model, &data, &split_label(split), exec)?;
    let written = report.write_csv(out)?;
    let ascii = report.to_ascii();
    fs::write(out.join("heatmaps.txt"), &ascii)?;
    if let Some(cfg) = &cfg {
        cfg.write_resolved(out)?;
    }
    print!("{ascii}");
    println!("wrote {} CSV files to {}", written.len(), out.display());
    Ok(())
}

fn cmd_flops(
    config: Option<&Path>,
    l: Option<usize>,
    n: Option<usize>,
    lengths: &[usize],
    convention: lgcm::model::flops::Convention,
    csv: bool,
) -> Result<()> {
    let model_cfg = match config {
        Some(path) => RunConfig::load(path)?.model_config(1),
        None => LgcmConfig::base(1),
    };
    let shape = FlopShape::from(&model_cfg);
    let report = if lengths.is_empty() {
        let (Some(l), Some(n)) = (l, n) else {
            return Err(CliError::Usage("flops needs --L and --N, or --lengths".into()));
        };
        count_flops(shape, l, n, convention)?
    } else {
        count_flops_lengths(shape, lengths, convention)?
    };
    if csv {
        println!("{}", lgcm::model::flops::FlopReport::csv_header());
        println!("{}", report.to_csv_row());
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

/// Run config for the fixture: desk-scale model, memorization settings.
pub const FIXTURE_CONFIG: &str = r#"seed = 0
output_dir = "run"

[data]
train = "train.jsonl"
valid = "valid.jsonl"
test = "test.jsonl"
min_freq = 1

[model]
d = 64
heads = 4
n_local = 2
n_global = 2
n_dec = 2
n_max = 7
l_utt_max = 32

[train]
lr = 1e-3
batch_size = 16
max_steps = 500
eval_interval = 50
"#;

fn cmd_fixture(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let text = fixture::to_jsonl(&fixture::standard());
    for name in ["train.jsonl", "valid.jsonl", "test.jsonl"] {
        fs::write(out.join(name), &text)?;
    }
    fs::write(out.join("run.toml"), FIXTURE_CONFIG)?;
    println!("wrote the fixture corpus and run.toml to {}", out.display());
    Ok(())
}
