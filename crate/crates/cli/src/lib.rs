//! Argument handling and subcommand dispatch for the `bns` binary.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use bns_core::config::{canonical_key, parse_config_text, RunConfig};
use bns_core::data::{
    load_corpus, load_embeddings, load_or_build, preprocess_corpus, CacheKey, CorpusFormat, Dataset, Split, Vocabulary,
};
use bns_core::gradsuite;
use bns_core::layers::AttentionMode;
use bns_core::model::{BnsModel, ModelManifest};
use bns_core::numeric::Tensor;
use bns_core::text::{PosTagger, RuleTagger, SentimentLexicon};
use bns_core::train::{
    ablate, evaluate, export_attention, headline_metrics, loss_curve_table, metrics_table, train_on, window_sweep,
    MetricsReport,
};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const SEED_ENV: &str = "BNS_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "bns", version, about = "Dual-channel sarcasm detector")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize, segment and split a corpus, writing the preprocessing cache.
    Preprocess(DataArgs),
    /// Train a model and keep the best-validation checkpoint.
    Train(DataArgs),
    /// Score a trained model on a labelled corpus.
    Eval(EvalArgs),
    /// Train the full model and its four ablated variants.
    Ablate(DataArgs),
    /// Retrain across behavior-chunk window sizes.
    Sweep(SweepArgs),
    /// Write per-chunk attention mass for each sentence of a corpus.
    AttnExport(AttnArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

/// Flags that map one-to-one onto configuration keys.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    #[arg(long)]
    pub embed_dim: Option<String>,
    #[arg(long)]
    pub hidden_dim: Option<String>,
    #[arg(long)]
    pub num_heads: Option<String>,
    #[arg(long)]
    pub num_lstm_layers: Option<String>,
    #[arg(long)]
    pub window_size: Option<String>,
    /// Comma-separated, e.g. `3,4,5`.
    #[arg(long)]
    pub kernel_widths: Option<String>,
    #[arg(long)]
    pub feature_maps_per_width: Option<String>,
    #[arg(long)]
    pub dropout_p: Option<String>,
    #[arg(long)]
    pub lambda1: Option<String>,
    #[arg(long)]
    pub lambda2: Option<String>,
    #[arg(long)]
    pub lambda3: Option<String>,
    /// `conflict` or `raw`.
    #[arg(long)]
    pub attention_mode: Option<String>,
    /// `both`, `behavior_only` or `sentence_only`.
    #[arg(long)]
    pub channel_mask: Option<String>,
    #[arg(long)]
    pub subtask_loss_enabled: Option<String>,
    /// `stack` or `concat`.
    #[arg(long)]
    pub fusion: Option<String>,
    #[arg(long, visible_alias = "lr")]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    /// Falls back to the `BNS_SEED` environment variable.
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    /// `decoupled` or `l2`.
    #[arg(long)]
    pub decay_mode: Option<String>,
    #[arg(long)]
    pub max_len: Option<String>,
    #[arg(long)]
    pub min_freq: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(String, String)> {
        let fields = [
            ("embed_dim", &self.embed_dim),
            ("hidden_dim", &self.hidden_dim),
            ("num_heads", &self.num_heads),
            ("num_lstm_layers", &self.num_lstm_layers),
            ("window_size", &self.window_size),
            ("kernel_widths", &self.kernel_widths),
            ("feature_maps_per_width", &self.feature_maps_per_width),
            ("dropout_p", &self.dropout_p),
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("lambda3", &self.lambda3),
            ("attention_mode", &self.attention_mode),
            ("channel_mask", &self.channel_mask),
            ("subtask_loss_enabled", &self.subtask_loss_enabled),
            ("fusion", &self.fusion),
            ("learning_rate", &self.learning_rate),
            ("batch_size", &self.batch_size),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("seed", &self.seed),
            ("weight_decay", &self.weight_decay),
            ("decay_mode", &self.decay_mode),
            ("max_len", &self.max_len),
            ("min_freq", &self.min_freq),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Training corpus: `label<TAB>text` per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Validation corpus; the training corpus is used when absent.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// `word<TAB>value` sentiment lexicon; the bundled one when absent.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// word2vec text-format embeddings.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// `plain` or `pretagged` (`word/TAG` tokens).
    #[arg(long, default_value = "plain")]
    pub format: String,
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "bns-out")]
    pub out: PathBuf,
    /// Preprocessing cache directory; `<out>/cache` when absent.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated window sizes.
    #[arg(long, default_value = "2,3,4,5")]
    pub sizes: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value = "plain")]
    pub format: String,
    #[arg(long, default_value = "bns-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sentences to export, one labelled line each.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value = "plain")]
    pub format: String,
    /// `conflict` or `raw`; the model's own mode when absent.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, default_value = "bns-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Errors are reported on stderr as one line.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Preprocess(a) => preprocess_cmd(&a).map(|_| 0),
        Command::Train(a) => train_cmd(&a).map(|_| 0),
        Command::Eval(a) => eval_cmd(&a).map(|_| 0),
        Command::Ablate(a) => ablate_cmd(&a).map(|_| 0),
        Command::Sweep(a) => sweep_cmd(&a).map(|_| 0),
        Command::AttnExport(a) => attn_cmd(&a).map(|_| 0),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} file {} does not exist",
            path.display()
        )))
    }
}

fn parse_format(s: &str) -> Result<CorpusFormat, CliError> {
    s.parse().map_err(|e: String| CliError::Usage(format!("--format: {e}")))
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn load_lexicon(path: Option<&Path>) -> Result<SentimentLexicon, CliError> {
    match path {
        Some(p) => SentimentLexicon::load(p).map_err(runtime),
        None => Ok(SentimentLexicon::bundled()),
    }
}

/// Defaults, then `BNS_SEED`, then the config file, then flags.
fn effective_config(args: &DataArgs) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    if let Ok(seed) = std::env::var(SEED_ENV) {
        config
            .set("seed", &seed)
            .map_err(|e| CliError::Usage(format!("{SEED_ENV}: {e}")))?;
    }
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let entries = parse_config_text(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        for (line, k, v) in entries {
            config
                .set(&k, &v)
                .map_err(|e| CliError::Usage(format!("{}:{line}: {e}", path.display())))?;
        }
    }
    for (k, v) in args.overrides.pairs() {
        config
            .set(&k, &v)
            .map_err(|e| CliError::Usage(format!("--{}: {e}", canonical_key(&k).replace('_', "-"))))?;
    }
    config.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    config.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

struct Prepared {
    config: RunConfig,
    dataset: Dataset,
    embeddings: Option<Tensor>,
}

fn validate_data_paths(args: &DataArgs) -> Result<(), CliError> {
    require_file(&args.corpus, "corpus")?;
    for (p, what) in [
        (&args.valid, "validation corpus"),
        (&args.test, "test corpus"),
        (&args.lexicon, "lexicon"),
        (&args.embeddings, "embeddings"),
        (&args.config, "config"),
    ] {
        if let Some(p) = p {
            require_file(p, what)?;
        }
    }
    parse_format(&args.format)?;
    Ok(())
}

fn prepare(args: &DataArgs, command: &str) -> Result<Prepared, CliError> {
    validate_data_paths(args)?;
    let config = effective_config(args)?;
    let format = parse_format(&args.format)?;
    let lexicon = load_lexicon(args.lexicon.as_deref())?;
    let tagger = RuleTagger::new();
    let train = load_corpus(&args.corpus, format, Split::Train).map_err(runtime)?;
    let valid = args
        .valid
        .as_ref()
        .map(|p| load_corpus(p, format, Split::Valid))
        .transpose()
        .map_err(runtime)?;
    let test = args
        .test
        .as_ref()
        .map(|p| load_corpus(p, format, Split::Test))
        .transpose()
        .map_err(runtime)?;
    let key = CacheKey::new(
        &train,
        valid.as_ref(),
        test.as_ref(),
        &config.preprocess(),
        config.min_freq,
        &lexicon,
        &tagger,
    );
    let cache_dir = args.cache_dir.clone().unwrap_or_else(|| args.out.join("cache"));
    let (dataset, cache, status) = load_or_build(&cache_dir, &key, &lexicon, &tagger).map_err(runtime)?;
    println!("cache {} {}", format!("{status:?}").to_lowercase(), cache.display());
    let embeddings = match &args.embeddings {
        Some(p) => {
            let (table, found) =
                load_embeddings(p, &dataset.vocab, config.model.embed_dim, config.train.seed).map_err(runtime)?;
            println!("embeddings found {found} of {}", dataset.vocab.len());
            Some(table)
        }
        None => None,
    };
    write_manifest(args, &config, &lexicon, &tagger, command)?;
    fs::write(args.out.join("vocab.json"), dataset.vocab.to_json()).map_err(runtime)?;
    Ok(Prepared {
        config,
        dataset,
        embeddings,
    })
}

fn write_manifest(
    args: &DataArgs,
    config: &RunConfig,
    lexicon: &SentimentLexicon,
    tagger: &dyn PosTagger,
    command: &str,
) -> Result<(), CliError> {
    fs::create_dir_all(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    let mut text = String::new();
    let _ = writeln!(text, "# bns run manifest");
    let _ = writeln!(text, "command = {command}");
    let _ = writeln!(text, "bns_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(text, "tagger = {}", tagger.version());
    let _ = writeln!(text, "lexicon_sha256 = {}", lexicon.fingerprint());
    let _ = writeln!(text, "format = {}", args.format);
    for (name, path) in [
        ("corpus", Some(&args.corpus)),
        ("valid", args.valid.as_ref()),
        ("test", args.test.as_ref()),
        ("embeddings", args.embeddings.as_ref()),
    ] {
        if let Some(p) = path {
            let _ = writeln!(text, "{name} = {} sha256:{}", p.display(), sha256_file(p)?);
        }
    }
    let _ = writeln!(text, "# effective config");
    text.push_str(&config.to_text());
    fs::write(args.out.join("manifest.txt"), text).map_err(runtime)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn metrics_line(label: &str, m: &MetricsReport) -> String {
    format!(
        "{label} precision={:.4} recall={:.4} macro_f1={:.4} accuracy={:.4} tp={} fp={} fn={} tn={}",
        m.precision, m.recall, m.macro_f1, m.accuracy, m.confusion.tp, m.confusion.fp, m.confusion.fn_, m.confusion.tn
    )
}

fn preprocess_cmd(args: &DataArgs) -> Result<(), CliError> {
    let p = prepare(args, "preprocess")?;
    println!("vocab {}", p.dataset.vocab.len());
    for split in [Split::Train, Split::Valid, Split::Test] {
        let s = p.dataset.stats(split);
        if s.examples == 0 {
            continue;
        }
        println!(
            "split {} examples={} sarcastic={} fallback={} truncated={} conflict_free_ratio={:.4}",
            split.as_str(),
            s.examples,
            s.sarcastic,
            s.fallback,
            s.truncated,
            s.conflict_free_ratio
        );
    }
    Ok(())
}

fn train_cmd(args: &DataArgs) -> Result<(), CliError> {
    let p = prepare(args, "train")?;
    let (model, record) =
        train_on(&p.dataset, &p.config.model, p.embeddings.as_ref(), &p.config.train).map_err(runtime)?;
    for e in &record.epochs {
        println!(
            "epoch {} j_sar={:.6} j_imp={:.6} j_exp={:.6} total={:.6} valid_f1={:.4}",
            e.epoch, e.train_loss.j_sar, e.train_loss.j_imp, e.train_loss.j_exp, e.train_loss.total, e.valid.macro_f1
        );
    }
    println!(
        "best_epoch {} stopped_early={}",
        record.best_epoch, record.stopped_early
    );
    println!("{}", metrics_line("train", &record.train_metrics));
    if let Some(t) = &record.test {
        println!("{}", metrics_line("test", t));
    }
    model.save(&args.out.join("model.ckpt")).map_err(runtime)?;
    write_json(&args.out.join("model.json"), &model.manifest())?;
    write_json(&args.out.join("run.json"), &record)?;
    fs::write(args.out.join("loss_curve.tsv"), loss_curve_table(&record)).map_err(runtime)?;
    println!("saved {}", args.out.join("model.ckpt").display());
    Ok(())
}

fn load_model(dir: &Path) -> Result<(BnsModel, Vocabulary), CliError> {
    let manifest_path = dir.join("model.json");
    let ckpt = dir.join("model.ckpt");
    let vocab_path = dir.join("vocab.json");
    for (p, what) in [
        (&manifest_path, "model manifest"),
        (&ckpt, "checkpoint"),
        (&vocab_path, "vocabulary"),
    ] {
        require_file(p, what)?;
    }
    let manifest: ModelManifest =
        serde_json::from_str(&fs::read_to_string(&manifest_path).map_err(runtime)?).map_err(runtime)?;
    let vocab = Vocabulary::from_json(&fs::read_to_string(&vocab_path).map_err(runtime)?).map_err(runtime)?;
    if vocab.len() != manifest.vocab_size {
        return Err(runtime(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.len(),
            manifest.vocab_size
        )));
    }
    let model = BnsModel::load(&manifest, &ckpt).map_err(runtime)?;
    Ok((model, vocab))
}

fn load_examples(
    model: &BnsModel,
    vocab: &Vocabulary,
    corpus: &Path,
    format: &str,
    lexicon: Option<&Path>,
) -> Result<Vec<bns_core::PreprocessedExample>, CliError> {
    let format = parse_format(format)?;
    let lexicon = load_lexicon(lexicon)?;
    let corpus = load_corpus(corpus, format, Split::Test).map_err(runtime)?;
    let config = bns_core::PreprocessConfig {
        window_size: model.config().window_size,
        ..Default::default()
    };
    preprocess_corpus(&corpus, vocab, &config, &lexicon, &RuleTagger::new()).map_err(runtime)
}

fn eval_cmd(args: &EvalArgs) -> Result<(), CliError> {
    require_file(&args.corpus, "corpus")?;
    if let Some(l) = &args.lexicon {
        require_file(l, "lexicon")?;
    }
    let (model, vocab) = load_model(&args.model)?;
    let examples = load_examples(&model, &vocab, &args.corpus, &args.format, args.lexicon.as_deref())?;
    let m = evaluate(&model, &examples).map_err(runtime)?;
    println!("{}", metrics_line("eval", &m));
    fs::create_dir_all(&args.out).map_err(runtime)?;
    write_json(&args.out.join("eval.json"), &m)
}

fn ablate_cmd(args: &DataArgs) -> Result<(), CliError> {
    let p = prepare(args, "ablate")?;
    let rows = ablate(&p.dataset, &p.config.model, p.embeddings.as_ref(), &p.config.train).map_err(runtime)?;
    let table: Vec<_> = rows
        .iter()
        .map(|r| (r.variant.clone(), headline_metrics(&r.record)))
        .collect();
    let text = metrics_table(&table);
    print!("{text}");
    fs::write(args.out.join("ablation.tsv"), text).map_err(runtime)?;
    write_json(&args.out.join("ablation.json"), &rows)
}

fn sweep_cmd(args: &SweepArgs) -> Result<(), CliError> {
    let sizes: Vec<usize> = args
        .sizes
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Usage(format!("--sizes: {s:?}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(CliError::Usage("--sizes must list positive window sizes".into()));
    }
    let p = prepare(&args.data, "sweep")?;
    let rows = window_sweep(
        &p.dataset,
        &p.config.model,
        p.embeddings.as_ref(),
        &p.config.train,
        &sizes,
    )
    .map_err(runtime)?;
    let table: Vec<_> = rows
        .iter()
        .map(|r| (format!("w={}", r.window_size), headline_metrics(&r.record)))
        .collect();
    let text = metrics_table(&table);
    print!("{text}");
    fs::write(args.data.out.join("sweep.tsv"), text).map_err(runtime)?;
    write_json(&args.data.out.join("sweep.json"), &rows)
}

fn attn_cmd(args: &AttnArgs) -> Result<(), CliError> {
    require_file(&args.corpus, "corpus")?;
    let mode = match &args.mode {
        Some(m) => Some(
            m.parse::<AttentionMode>()
                .map_err(|e| CliError::Usage(format!("--mode: {e}")))?,
        ),
        None => None,
    };
    let (model, vocab) = load_model(&args.model)?;
    let mode = mode.unwrap_or(model.config().attention_mode);
    let examples = load_examples(&model, &vocab, &args.corpus, &args.format, args.lexicon.as_deref())?;
    let records = export_attention(&model, &examples, mode).map_err(runtime)?;
    let mut stdout = std::io::stdout().lock();
    'print: for (i, r) in records.iter().enumerate() {
        for c in &r.chunks {
            let line = format!(
                "sentence {i} chunk [{}, {}) mass={:.6} text={}",
                c.start, c.end, c.mass, c.text
            );
            if writeln!(stdout, "{line}").is_err() {
                break 'print;
            }
        }
    }
    drop(stdout);
    fs::create_dir_all(&args.out).map_err(runtime)?;
    write_json(&args.out.join("attention.json"), &records)
}

fn gradcheck_cmd(args: &GradcheckArgs) -> Result<i32, CliError> {
    let results = gradsuite::run_suite(args.seed).map_err(runtime)?;
    let mut all = true;
    for r in &results {
        let ok = r.passed();
        all &= ok;
        println!(
            "{} max_rel_error={:.3e} {}",
            r.name,
            r.max_rel_error,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!("gradcheck {}", if all { "PASS" } else { "FAIL" });
    Ok(if all { 0 } else { EXIT_RUNTIME })
}
