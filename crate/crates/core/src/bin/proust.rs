use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use proust::data::PackingMode;
use proust::lens::context::ContextWindow;
use proust::lens::EntropyBase;
use proust::model::GenerateOptions;
use proust::par::threads_from_env;
use proust::run::commands::default_motifs;
use proust::run::criteria;
use proust::run::{
    cmd_analyze, cmd_generate, cmd_pssm, cmd_score, train, Analysis, AnalyzeArgs, GenerateArgs,
    RunConfig, ScoreArgs,
};
use proust::scoring::msa::IdentityMode;
use proust::scoring::AugmentOptions;
use proust::{Error, ModelConfig, Result};

/// Causal protein language model: training, generation, fitness scoring and
/// interpretability. Worker threads come from PROUST_THREADS.
#[derive(Parser)]
#[command(name = "proust", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a run config and/or flags.
    Train(TrainCmd),
    /// Sample sequences from a checkpoint.
    Generate(GenerateCmd),
    /// Score a variant assay, optionally with an alignment.
    Score(ScoreCmd),
    /// Build a PSSM from an A3M alignment.
    Pssm(PssmCmd),
    /// Run lens analyses over a FASTA file.
    Analyze(AnalyzeCmd),
    /// Run the acceptance criteria and print one line per criterion.
    Selftest(SelftestCmd),
}

/// Parse a kebab-case or lowercase enum name through its serde form.
fn named<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn toy_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (l, d) = s.split_once(',').ok_or("expected LAYERS,D_MODEL")?;
    Ok((
        l.trim().parse().map_err(|e| format!("layers: {e}"))?,
        d.trim().parse().map_err(|e| format!("d_model: {e}"))?,
    ))
}

#[derive(Args)]
struct TrainCmd {
    /// TOML run config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for config, metrics and checkpoints
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training FASTA (replaces any synthetic source).
    #[arg(long)]
    fasta: Option<PathBuf>,
    /// Train on this many tokens from the built-in synthetic protein HMM.
    #[arg(long)]
    synthetic_tokens: Option<usize>,
    /// Small model with 4 query heads: LAYERS,D_MODEL.
    #[arg(long, value_parser = toy_dims)]
    toy: Option<(usize, usize)>,
    /// Optimizer steps; 0 runs one pass over the first epoch
    #[arg(long)]
    steps: Option<usize>,
    /// strict-reset or eos-separator.
    #[arg(long, value_parser = named::<PackingMode>)]
    packing: Option<PackingMode>,
    /// Tokens per packed batch
    #[arg(long)]
    token_budget: Option<usize>,
    /// Longer sequences are randomly cropped to this length
    #[arg(long)]
    crop_len: Option<usize>,
    /// Share of sequences held out for evaluation
    #[arg(long)]
    holdout_fraction: Option<f64>,
    /// Muon warmup as a fraction of total steps.
    #[arg(long)]
    muon_warmup: Option<f64>,
    /// AdamW warmup as a fraction of total steps.
    #[arg(long)]
    adam_warmup: Option<f64>,
    /// Share of steps spent in the linear decay
    #[arg(long)]
    decay_fraction: Option<f64>,
    #[arg(long)]
    muon_lr: Option<f64>,
    #[arg(long)]
    adam_lr: Option<f64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Holdout evaluation period in steps; 0 evaluates at the end only
    #[arg(long)]
    eval_every: Option<usize>,
    /// Checkpoint period in steps; 0 keeps only the final one
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Resume from a checkpoint directory written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

impl TrainCmd {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.out {
            c.out_dir = v.clone();
        }
        if let Some(v) = &self.fasta {
            c.data.train_fasta = Some(v.clone());
            c.data.synthetic_tokens = None;
        }
        if let Some(v) = self.synthetic_tokens {
            c.data.synthetic_tokens = Some(v);
            c.data.train_fasta = None;
        }
        if let Some((l, d)) = self.toy {
            c.model = ModelConfig::toy(l, d);
        }
        macro_rules! set {
            ($($field:ident => $($path:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field { c.$($path).+ = v; })*
            };
        }
        set!(
            steps => train.steps,
            packing => data.packing,
            token_budget => data.token_budget,
            crop_len => data.crop_len,
            holdout_fraction => data.holdout_fraction,
            muon_warmup => optim.muon_warmup,
            adam_warmup => optim.adam_warmup,
            decay_fraction => optim.decay_fraction,
            muon_lr => optim.muon.lr,
            adam_lr => optim.adam.lr,
            init_seed => train.init_seed,
            data_seed => train.data_seed,
            eval_every => train.eval_every,
            checkpoint_every => train.checkpoint_every,
        );
        if c.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("set --out or out_dir in the config".into()));
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct GenerateCmd {
    /// Checkpoint directory (model.bin and config.toml)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Residues to continue from.
    #[arg(long, default_value = "M")]
    prefix: String,
    /// Number of sequences.
    #[arg(short, long, default_value_t = 1)]
    n: usize,
    /// Tokens to add after the prefix
    #[arg(long, default_value_t = 200)]
    max_new: usize,
    /// 0 decodes greedily.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Allow end-of-sequence to be sampled.
    #[arg(long)]
    allow_eos: bool,
    /// Write FASTA here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AlignmentFlags {
    /// PSSM pseudocount per residue.
    #[arg(long, default_value_t = proust::scoring::pssm::DEFAULT_PSSM_PSEUDOCOUNT)]
    pseudocount: f64,
    /// Homologs need coverage strictly above this.
    #[arg(long, default_value_t = 0.5)]
    min_coverage: f64,
    /// Keep at most this many homologs, most identical first.
    #[arg(long)]
    top_n: Option<usize>,
    /// query-length or aligned-columns.
    #[arg(long, value_parser = named::<IdentityMode>, default_value = "query-length")]
    identity: IdentityMode,
}

impl AlignmentFlags {
    fn options(&self) -> AugmentOptions {
        let mut o = AugmentOptions {
            pseudocount: self.pseudocount,
            ..Default::default()
        };
        o.filter.min_coverage = self.min_coverage;
        o.filter.identity = self.identity;
        if let Some(n) = self.top_n {
            o.filter.top_n = n;
        }
        o
    }
}

#[derive(Args)]
struct ScoreCmd {
    /// Checkpoint directory (model.bin and config.toml)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Assay CSV with `mutant` or `mutated_sequence`, and optionally `DMS_score`.
    #[arg(long)]
    assay: PathBuf,
    /// FASTA holding the wild type (first record).
    #[arg(long)]
    wt: PathBuf,
    /// A3M alignment with the wild type as its first row
    #[arg(long)]
    a3m: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated homolog depths for the depth-sweep table.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<usize>,
    #[command(flatten)]
    alignment: AlignmentFlags,
}

#[derive(Args)]
struct PssmCmd {
    /// A3M alignment with the query as its first row
    #[arg(long)]
    a3m: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    alignment: AlignmentFlags,
}

#[derive(Args)]
struct AnalyzeCmd {
    /// Checkpoint directory (model.bin and config.toml)
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    fasta: PathBuf,
    /// Comma-separated analyses, or `all`.
    #[arg(long, default_value = "all")]
    analyses: String,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Entropy unit: nats or bits.
    #[arg(long, value_parser = named::<EntropyBase>, default_value = "nats")]
    base: EntropyBase,
    /// Positional entropy bins.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Entropy-std threshold for retrieval advice; defaults to the corpus median.
    #[arg(long)]
    threshold: Option<f64>,
    /// Hydrophobic context window: preceding or symmetric.
    #[arg(long, value_parser = named::<ContextWindow>, default_value = "preceding")]
    window: ContextWindow,
    /// Motif pattern such as CxxC; repeat for several. Defaults to the built-in set.
    #[arg(long = "motif")]
    motifs: Vec<String>,
}

#[derive(Args)]
struct SelftestCmd {
    /// Comma-separated criterion ids; all when omitted.
    #[arg(long, value_delimiter = ',')]
    only: Vec<usize>,
}

fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Train(t) => {
            let cfg = t.config()?;
            if t.print_config {
                print!("{}", cfg.to_toml()?);
                return Ok(true);
            }
            let summary = train(&cfg, t.resume.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Cmd::Generate(g) => {
            let fasta = cmd_generate(&GenerateArgs {
                checkpoint: g.checkpoint,
                prefix: g.prefix,
                n: g.n,
                options: GenerateOptions {
                    max_new: g.max_new,
                    temperature: g.temperature,
                    seed: g.seed,
                    allow_eos: g.allow_eos,
                },
            })?;
            match g.out {
                Some(p) => std::fs::write(&p, fasta).map_err(|e| Error::io(&p, e))?,
                None => print!("{fasta}"),
            }
        }
        Cmd::Score(s) => {
            let report = cmd_score(&ScoreArgs {
                checkpoint: s.checkpoint,
                assay: s.assay,
                wt_fasta: s.wt,
                a3m: s.a3m,
                out_dir: s.out,
                augment: s.alignment.options(),
                sweep: s.sweep,
                threads: threads_from_env()?,
            })?;
            for r in &report.rejected {
                eprintln!("line {}: {}", r.line, r.reason);
            }
            let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
            println!(
                "{} variants scored, {} rejected; rho(ll) {} rho(combined) {}",
                report.summary.n,
                report.rejected.len(),
                fmt(report.summary.rho_ll),
                fmt(report.summary.rho_combined)
            );
        }
        Cmd::Pssm(p) => {
            let n = cmd_pssm(&p.a3m, &p.out, &p.alignment.options())?;
            println!("PSSM built from {n} homologs");
        }
        Cmd::Analyze(a) => {
            let motifs = if a.motifs.is_empty() {
                default_motifs()
            } else {
                a.motifs
            };
            let summary = cmd_analyze(&AnalyzeArgs {
                checkpoint: a.checkpoint,
                fasta: a.fasta,
                analyses: Analysis::parse_list(&a.analyses)?,
                out_dir: a.out,
                base: a.base,
                n_bins: a.bins,
                threshold: a.threshold,
                window: a.window,
                motifs,
                threads: threads_from_env()?,
            })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Cmd::Selftest(s) => {
            let ids = if s.only.is_empty() {
                (1..=12).collect()
            } else {
                s.only
            };
            let reports = criteria::run_all(&ids, |r| println!("{}", r.line()))?;
            let passed = reports.iter().filter(|r| r.passed).count();
            println!("{passed}/{} criteria passed", reports.len());
            return Ok(passed == reports.len());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
