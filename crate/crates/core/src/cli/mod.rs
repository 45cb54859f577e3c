//! The `stylex` command line. Exit codes: 0 success, 1 usage error, 2 data
//! or contract error. Every successful run writes a [`RunManifest`].

mod manifest;
mod settings;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

pub use manifest::{default_path as default_manifest_path, RunManifest};
pub use settings::{Overrides, SettingError, Settings};

use crate::corpus::{
    dedup, filter_by_length, lexicon_filter, load_corpus, normalize, remove_overlap, synth_generate_split, write_lines,
    Lexicon, LexiconMode, Split, StyleCorpus, StyleTag,
};
use crate::error::{Error, Result};
use crate::eval::{
    krippendorff_alpha, read_ratings, success_rate, wilcoxon_signed_rank, AlphaMetric, Dimension, EvalKit, ModelEmbedder,
    RatingsMatrix,
};
use crate::mining::{DualIndex, Miner, MiningConfig};
use crate::seqmodel::Model;
use crate::tokenizer::{train_bpe, BpeModel};
use crate::trainer::{pretrain_dae, train_3st, transfer, EncodedCorpus, TrainContext};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "stylex", version, about = "Self-supervised text style transfer")]
pub struct Cli {
    /// Flat `key = value` config file, or a run manifest to replay.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Same as `--use-spe false`.
    #[arg(long, global = true)]
    pub no_spe: bool,
    /// Same as `--use-bt false`.
    #[arg(long, global = true)]
    pub no_bt: bool,
    /// Same as `--use-dae false`.
    #[arg(long, global = true)]
    pub no_dae: bool,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic two-style corpora with gold counterparts.
    Synth(SynthArgs),
    /// Normalize and filter one corpus file.
    Preprocess(PreprocessArgs),
    /// Learn the shared subword vocabulary.
    TrainBpe(TrainBpeArgs),
    /// Denoising pre-training of a fresh model.
    PretrainDae(PretrainArgs),
    /// Joint pair mining and back-translation training.
    Train(TrainArgs),
    /// Dump the pairs a model would mine from two corpora.
    MinePairs(MineArgs),
    /// Rewrite sentences into a target style.
    Transfer(TransferArgs),
    /// Automatic CP / FLU / ATA / AGG report.
    Evaluate(EvaluateArgs),
    /// Human-evaluation statistics from a ratings CSV.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Style tag of the corpus.
    #[arg(long)]
    pub style: String,
    /// Length filtering and dedup apply to the train split only.
    #[arg(long, default_value = "train")]
    pub split: Split,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// `require` keeps sentences with a lexicon word, `exclude` drops them.
    #[arg(long, default_value = "exclude")]
    pub lexicon_mode: String,
    /// Held-out files whose sentences are removed from a train corpus.
    #[arg(long)]
    pub held_out: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Pair {
    /// Corpus in style A.
    #[arg(long)]
    pub input_a: PathBuf,
    /// Corpus in style B.
    #[arg(long)]
    pub input_b: PathBuf,
}

#[derive(Args, Debug)]
pub struct DevPair {
    #[arg(long)]
    pub dev_a: PathBuf,
    #[arg(long)]
    pub dev_b: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainBpeArgs {
    #[command(flatten)]
    pub corpora: Pair,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[arg(long)]
    pub bpe: PathBuf,
    #[command(flatten)]
    pub corpora: Pair,
    #[arg(long, requires = "dev_b")]
    pub dev_a: Option<PathBuf>,
    #[arg(long, requires = "dev_a")]
    pub dev_b: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// JSON-lines loss log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub bpe: PathBuf,
    /// DAE-initialized model; required unless `use_dae` is off.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub corpora: Pair,
    #[command(flatten)]
    pub dev: DevPair,
    #[arg(long)]
    pub output: PathBuf,
    /// JSON-lines checkpoint log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MineArgs {
    #[arg(long)]
    pub bpe: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub corpora: Pair,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[arg(long)]
    pub bpe: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Target style tag.
    #[arg(long)]
    pub target: String,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Training corpora for the classifier, language model and CP weights.
    #[command(flatten)]
    pub corpora: Pair,
    #[command(flatten)]
    pub dev: DevPair,
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub prediction: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Use this model's embeddings for CP (needs `--bpe`); otherwise a
    /// bag-of-words embedding.
    #[arg(long, requires = "bpe")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub bpe: Option<PathBuf>,
    #[arg(long, default_value = "transfer")]
    pub task: String,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// `item_id,rater_id,cp,flu,ata` CSV.
    #[arg(long)]
    pub ratings: PathBuf,
    /// Ratings of a second system over the same items, for a paired test.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

/// Parses `argv` (including the program name) and runs it. Returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let settings = match resolve(&cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    if settings.threads > 0 {
        // only the first call in a process takes effect
        let _ = rayon::ThreadPoolBuilder::new().num_threads(settings.threads).build_global();
    }
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &settings, args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve(cli: &Cli) -> std::result::Result<Settings, SettingError> {
    let mut s = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    s.apply(&cli.overrides);
    if cli.no_spe {
        s.use_spe = false;
    }
    if cli.no_bt {
        s.use_bt = false;
    }
    if cli.no_dae {
        s.use_dae = false;
    }
    Ok(s)
}

struct Io {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Io {
    fn new() -> Self {
        Io {
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn read(&mut self, p: &Path) -> PathBuf {
        self.inputs.push(p.to_path_buf());
        p.to_path_buf()
    }

    fn wrote(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Preprocess(_) => "preprocess",
        Command::TrainBpe(_) => "train-bpe",
        Command::PretrainDae(_) => "pretrain-dae",
        Command::Train(_) => "train",
        Command::MinePairs(_) => "mine-pairs",
        Command::Transfer(_) => "transfer",
        Command::Evaluate(_) => "evaluate",
        Command::Stats(_) => "stats",
    }
}

fn execute(cli: &Cli, s: &Settings, args: Vec<String>) -> Result<()> {
    s.validate()?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let mut io = Io::new();
    match &cli.command {
        Command::Synth(a) => synth(a, s, &mut io)?,
        Command::Preprocess(a) => preprocess(a, s, &mut io)?,
        Command::TrainBpe(a) => train_bpe_cmd(a, s, &mut io)?,
        Command::PretrainDae(a) => pretrain(a, s, &mut io)?,
        Command::Train(a) => train(a, s, &mut io)?,
        Command::MinePairs(a) => mine(a, s, &mut io)?,
        Command::Transfer(a) => transfer_cmd(a, &mut io)?,
        Command::Evaluate(a) => evaluate(a, s, &mut io)?,
        Command::Stats(a) => stats(a, &mut io)?,
    }
    let primary = io.outputs.first().cloned().unwrap_or_else(|| PathBuf::from("."));
    let path = cli.manifest.clone().unwrap_or_else(|| default_manifest_path(&primary));
    RunManifest {
        command: command_name(&cli.command).to_string(),
        args,
        config: s.clone(),
        seed: s.seed,
        inputs: io.inputs,
        outputs: io.outputs,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
    }
    .write(&path)
}

fn tags(s: &Settings) -> Result<(StyleTag, StyleTag)> {
    Ok((s.style_a.parse()?, s.style_b.parse()?))
}

fn corpus(io: &mut Io, p: &Path, tag: &StyleTag, split: Split) -> Result<StyleCorpus> {
    load_corpus(&io.read(p), tag.clone(), split)
}

fn write_text(io: &mut Io, p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))?;
    io.wrote(p);
    Ok(())
}

fn synth(a: &SynthArgs, s: &Settings, io: &mut Io) -> Result<()> {
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    io.wrote(&a.out_dir);
    for (split, n) in [(Split::Train, s.n_per_style), (Split::Dev, s.dev_size), (Split::Test, s.test_size)] {
        let c = synth_generate_split(n, s.seed, split);
        let name = format!("{split:?}").to_lowercase();
        for side in [&c.a, &c.b] {
            let p = a.out_dir.join(format!("{name}.{}.txt", side.style.id));
            side.write(&p)?;
            io.wrote(&p);
        }
        write_text(io, &a.out_dir.join(format!("{name}.gold.tsv")), &c.gold_tsv())?;
    }
    Ok(())
}

fn preprocess(a: &PreprocessArgs, s: &Settings, io: &mut Io) -> Result<()> {
    let tag: StyleTag = a.style.parse()?;
    let mut c = normalize(&corpus(io, &a.input, &tag, a.split)?);
    if let Some(lp) = &a.lexicon {
        let mode = match a.lexicon_mode.as_str() {
            "require" => LexiconMode::Require,
            "exclude" => LexiconMode::Exclude,
            m => return Err(Error::InvalidArgument(format!("lexicon mode must be require or exclude, got {m:?}"))),
        };
        c = lexicon_filter(&c, &Lexicon::load(&io.read(lp))?, mode)?;
    }
    if a.split == Split::Train {
        c = dedup(&filter_by_length(&c, s.min_words, s.max_words)?);
        let held: Vec<StyleCorpus> = a
            .held_out
            .iter()
            .map(|p| corpus(io, p, &tag, Split::Test).map(|h| normalize(&h)))
            .collect::<Result<_>>()?;
        c = remove_overlap(&c, &held.iter().collect::<Vec<_>>());
    }
    log::info!("{}: kept {} sentences", a.input.display(), c.len());
    c.write(&a.output)?;
    io.wrote(&a.output);
    Ok(())
}

fn train_bpe_cmd(a: &TrainBpeArgs, s: &Settings, io: &mut Io) -> Result<()> {
    let (ta, tb) = tags(s)?;
    let ca = corpus(io, &a.corpora.input_a, &ta, Split::Train)?;
    let cb = corpus(io, &a.corpora.input_b, &tb, Split::Train)?;
    train_bpe(&[&ca, &cb], s.merges)?.save(&a.output)?;
    io.wrote(&a.output);
    Ok(())
}

struct Loaded {
    bpe: BpeModel,
    a: StyleCorpus,
    b: StyleCorpus,
    ea: EncodedCorpus,
    eb: EncodedCorpus,
}

fn load_pair(io: &mut Io, bpe: &Path, pair: &Pair, s: &Settings) -> Result<Loaded> {
    let bpe = BpeModel::load(&io.read(bpe))?;
    let (ta, tb) = tags(s)?;
    let a = corpus(io, &pair.input_a, &ta, Split::Train)?;
    let b = corpus(io, &pair.input_b, &tb, Split::Train)?;
    let ea = EncodedCorpus::new(&a, &bpe, s.max_len)?;
    let eb = EncodedCorpus::new(&b, &bpe, s.max_len)?;
    Ok(Loaded { bpe, a, b, ea, eb })
}

fn pretrain(a: &PretrainArgs, s: &Settings, io: &mut Io) -> Result<()> {
    let l = load_pair(io, &a.bpe, &a.corpora, s)?;
    let dev = match (&a.dev_a, &a.dev_b) {
        (Some(da), Some(db)) => {
            let (ta, tb) = tags(s)?;
            let da = EncodedCorpus::new(&corpus(io, da, &ta, Split::Dev)?, &l.bpe, s.max_len)?;
            let db = EncodedCorpus::new(&corpus(io, db, &tb, Split::Dev)?, &l.bpe, s.max_len)?;
            Some((da, db))
        }
        _ => None,
    };
    let cfg = s.dae_config(&l.bpe);
    let init = Model::init(s.model_config(&l.bpe))?;
    let (model, records) = pretrain_dae(init, &l.ea, &l.eb, dev.as_ref().map(|(x, y)| (x, y)), &cfg)?;
    model.save(&a.output)?;
    io.wrote(&a.output);
    if let Some(p) = &a.log {
        let mut text = String::new();
        for r in &records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        write_text(io, p, &text)?;
    }
    Ok(())
}

fn train(a: &TrainArgs, s: &Settings, io: &mut Io) -> Result<()> {
    let l = load_pair(io, &a.bpe, &a.corpora, s)?;
    let (ta, tb) = tags(s)?;
    let dev_a = corpus(io, &a.dev.dev_a, &ta, Split::Dev)?;
    let dev_b = corpus(io, &a.dev.dev_b, &tb, Split::Dev)?;
    let eda = EncodedCorpus::new(&dev_a, &l.bpe, s.max_len)?;
    let edb = EncodedCorpus::new(&dev_b, &l.bpe, s.max_len)?;
    let mut model = match (&a.model, s.use_dae) {
        (Some(p), true) => Model::load(&io.read(p))?,
        (None, true) => {
            return Err(Error::InvalidArgument(
                "training with use_dae needs a pre-trained --model".into(),
            ))
        }
        (_, false) => Model::init(s.model_config(&l.bpe))?,
    };
    if model.config().vocab_size != l.bpe.vocab_size() {
        return Err(Error::DimensionMismatch {
            expected: l.bpe.vocab_size(),
            got: model.config().vocab_size,
        });
    }
    if s.train_learning_rate > 0.0 {
        model.set_learning_rate(s.train_learning_rate);
    }
    let kit = EvalKit::build((&l.a, &l.b), (&dev_a, &dev_b), s.seed)?;
    let ev = kit.evaluator(None);
    let ctx = TrainContext {
        bpe: &l.bpe,
        evaluator: &ev,
        dev_a: &eda,
        dev_b: &edb,
    };
    let cfg = s.train_config(l.ea.len().min(l.eb.len()));
    let (best, log) = train_3st(model, &l.ea, &l.eb, &ctx, &cfg)?;
    best.save(&a.output)?;
    io.wrote(&a.output);
    if let Some(p) = &a.log {
        write_text(io, p, &log.to_jsonl()?)?;
    }
    Ok(())
}

fn mine(a: &MineArgs, s: &Settings, io: &mut Io) -> Result<()> {
    let l = load_pair(io, &a.bpe, &a.corpora, s)?;
    let model = Model::load(&io.read(&a.model))?;
    let mode = s.mining_mode(l.ea.len().min(l.eb.len()));
    let ia = DualIndex::from_model(&model, &l.ea.ids, &l.ea.seqs, mode)?;
    let ib = DualIndex::from_model(&model, &l.eb.ids, &l.eb.seqs, mode)?;
    let cfg = MiningConfig {
        k: s.spe_k,
        mode,
        ..MiningConfig::default()
    };
    let mut out = String::new();
    for p in Miner::new(&ia, &ib, &cfg)?.all_pairs() {
        let src = &l.ea.texts[l.ea.position(p.a_id).expect("mined from A")];
        let tgt = &l.eb.texts[l.eb.position(p.b_id).expect("mined from B")];
        out.push_str(&format!("{}\t{}\t{src}\t{tgt}\n", p.score_w, p.score_e));
    }
    write_text(io, &a.output, &out)
}

/// Lines of a text file, keeping empty ones so outputs stay line-aligned.
fn raw_lines(io: &mut Io, p: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(io.read(p)).map_err(|e| Error::io(p, e))?;
    Ok(text.lines().map(String::from).collect())
}

fn transfer_cmd(a: &TransferArgs, io: &mut Io) -> Result<()> {
    let bpe = BpeModel::load(&io.read(&a.bpe))?;
    let model = Model::load(&io.read(&a.model))?;
    let lines = raw_lines(io, &a.input)?;
    let preds = transfer(&model, &bpe, &lines, &a.target.parse()?)?;
    write_lines(&a.output, preds.iter().map(String::as_str))?;
    io.wrote(&a.output);
    Ok(())
}

fn evaluate(a: &EvaluateArgs, s: &Settings, io: &mut Io) -> Result<()> {
    let (ta, tb) = tags(s)?;
    let ca = corpus(io, &a.corpora.input_a, &ta, Split::Train)?;
    let cb = corpus(io, &a.corpora.input_b, &tb, Split::Train)?;
    let da = corpus(io, &a.dev.dev_a, &ta, Split::Dev)?;
    let db = corpus(io, &a.dev.dev_b, &tb, Split::Dev)?;
    let target: StyleTag = a.target.parse()?;
    if target != ta && target != tb {
        return Err(Error::InvalidArgument(format!("target {target} is neither {ta} nor {tb}")));
    }
    let kit = EvalKit::build((&ca, &cb), (&da, &db), s.seed)?;
    let embedder = match (&a.model, &a.bpe) {
        (Some(m), Some(b)) => {
            let model = Model::load(&io.read(m))?;
            let bpe = BpeModel::load(&io.read(b))?;
            Some(ModelEmbedder::new(&model, bpe, ca.texts().chain(cb.texts()))?)
        }
        _ => None,
    };
    let ev = kit.evaluator(embedder.as_ref().map(|e| e as _));
    let srcs = raw_lines(io, &a.source)?;
    let preds = raw_lines(io, &a.prediction)?;
    let report = ev.evaluate(&a.task, &srcs, &preds, &target)?;
    write_text(io, &a.output, &(serde_json::to_string_pretty(&report)? + "\n"))
}

#[derive(serde::Serialize)]
struct DimensionStats {
    alpha_ordinal: Option<f64>,
    alpha_interval: Option<f64>,
    mean: f64,
}

#[derive(serde::Serialize)]
struct StatsReport {
    judgments: usize,
    items: usize,
    success_rate: f64,
    cp: DimensionStats,
    flu: DimensionStats,
    ata: DimensionStats,
    /// Paired test of per-item mean ratings (sum of the three dimensions)
    /// against the baseline.
    wilcoxon: Option<crate::eval::WilcoxonResult>,
}

fn dimension_stats(ratings: &[crate::eval::Rating], d: Dimension) -> Result<DimensionStats> {
    let m = RatingsMatrix::from_ratings(ratings, d)?;
    // alpha is undefined for degenerate matrices; report it as missing
    let alpha = |metric| krippendorff_alpha(&m, metric).ok();
    let vals: Vec<f64> = ratings.iter().filter_map(|r| r.get(d)).map(f64::from).collect();
    if vals.is_empty() {
        return Err(Error::Empty("ratings".into()));
    }
    Ok(DimensionStats {
        alpha_ordinal: alpha(AlphaMetric::Ordinal),
        alpha_interval: alpha(AlphaMetric::Interval),
        mean: vals.iter().sum::<f64>() / vals.len() as f64,
    })
}

fn item_means(ratings: &[crate::eval::Rating]) -> std::collections::BTreeMap<String, f64> {
    let mut acc: std::collections::BTreeMap<String, (f64, usize)> = Default::default();
    for r in ratings {
        let e = acc.entry(r.item_id.clone()).or_default();
        for v in [r.cp, r.flu, r.ata].into_iter().flatten() {
            e.0 += f64::from(v);
            e.1 += 1;
        }
    }
    acc.into_iter().filter(|(_, (_, n))| *n > 0).map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn stats(a: &StatsArgs, io: &mut Io) -> Result<()> {
    let ratings = read_ratings(&io.read(&a.ratings))?;
    let items: std::collections::BTreeSet<&str> = ratings.iter().map(|r| r.item_id.as_str()).collect();
    let wilcoxon = match &a.baseline {
        Some(p) => {
            let base = item_means(&read_ratings(&io.read(p))?);
            let ours = item_means(&ratings);
            let shared: Vec<&String> = ours.keys().filter(|k| base.contains_key(*k)).collect();
            let x: Vec<f64> = shared.iter().map(|k| ours[*k]).collect();
            let y: Vec<f64> = shared.iter().map(|k| base[*k]).collect();
            Some(wilcoxon_signed_rank(&x, &y)?)
        }
        None => None,
    };
    let report = StatsReport {
        judgments: ratings.len(),
        items: items.len(),
        success_rate: success_rate(&ratings)?,
        cp: dimension_stats(&ratings, Dimension::Cp)?,
        flu: dimension_stats(&ratings, Dimension::Flu)?,
        ata: dimension_stats(&ratings, Dimension::Ata)?,
        wilcoxon,
    };
    write_text(io, &a.output, &(serde_json::to_string_pretty(&report)? + "\n"))
}
