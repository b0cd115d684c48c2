//! The `reslstm` command line.
//!
//! Exit codes: 0 success, 2 invalid flags or configuration, 3 I/O or
//! malformed/inconsistent input files, 4 numeric failure, 5 grad-check
//! tolerance exceeded.
//!
//! `--config FILE` reads `key=value` lines (blank lines and `#` comments
//! skipped) and treats each as `--key value`, placed before the real
//! command-line flags so that those win. `key=true` becomes a bare switch.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cells::{CellDims, GateStyle, ResidualVariant};
use crate::data::{featurize_all, gen_synthetic, label_histogram, load_corpus, SpliceConfig, SyntheticConfig, Utterance};
use crate::error::{Error, Result};
use crate::network::{
    count_params, format_millions, init_params, load_model, round_to_tenths, save_model, table1_rows, NetworkConfig,
    TABLE1_DIMS,
};
use crate::training::{evaluate, format_metric, grad_check, Hyperparams, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_TOLERANCE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "reslstm", version, about = "Residual-spliced LSTM acoustic models", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a teacher-labelled synthetic corpus.
    GenData(GenDataArgs),
    /// Train a network on a corpus and save it.
    Train(TrainArgs),
    /// Frame error rate of a saved model on a corpus.
    Eval(EvalArgs),
    /// Compare BPTT gradients with central differences.
    GradCheck(GradCheckArgs),
    /// Exact parameter count of a configuration.
    CountParams(CountParamsArgs),
}

#[derive(Debug, Args)]
pub struct ConfigFileArg {
    /// key=value file of default flags; command-line flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config_file: ConfigFileArg,
    #[arg(long, env = "RESLSTM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Number of utterances.
    #[arg(long, default_value_t = 1000)]
    pub utts: usize,
    #[arg(long, default_value_t = 20)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 50)]
    pub max_frames: usize,
    /// Raw feature dimension before splicing.
    #[arg(long, default_value_t = 4)]
    pub raw_dim: usize,
    #[arg(long, default_value_t = 10)]
    pub speakers: usize,
    /// Speaker vector length, 0 for none.
    #[arg(long, default_value_t = 4)]
    pub speaker_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub nout: usize,
    /// Splice context the teacher sees.
    #[arg(long, default_value_t = 2)]
    pub context: usize,
    #[arg(long, default_value_t = 8)]
    pub teacher_nc: usize,
    #[arg(long, default_value_t = 4)]
    pub teacher_nr: usize,
    #[arg(long, default_value_t = 0.5)]
    pub teacher_scale: f64,
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the teacher as `teacher.rlm`.
    #[arg(long)]
    pub emit_teacher: bool,
}

#[derive(Debug, Args)]
pub struct NetArgs {
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    /// Memory cells per layer.
    #[arg(long, default_value_t = 32)]
    pub nc: usize,
    /// Recurrent projection width.
    #[arg(long, default_value_t = 16)]
    pub nr: usize,
    /// Non-recurrent projection width.
    #[arg(long, default_value_t = 0)]
    pub nnr: usize,
    #[arg(long, default_value = "fast", value_parser = parse_style)]
    pub style: GateStyle,
    #[arg(long, default_value = "res1", value_parser = parse_variant)]
    pub variant: ResidualVariant,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config_file: ConfigFileArg,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Held-out corpus for the per-epoch FER; defaults to the training set.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Where to write the trained model.
    #[arg(long)]
    pub model_out: PathBuf,
    /// Append epoch lines to this file as well.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub context: usize,
    #[command(flatten)]
    pub net: NetArgs,
    /// Output classes; defaults to the largest label + 1.
    #[arg(long)]
    pub nout: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5.0)]
    pub grad_clip: f64,
    #[arg(long)]
    pub no_grad_clip: bool,
    #[arg(long)]
    pub cell_clip: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Initialisation seed.
    #[arg(long, env = "RESLSTM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Shuffle seed; defaults to `--seed`.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    /// Utterance gradients computed concurrently per update group.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config_file: ConfigFileArg,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub context: usize,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub config_file: ConfigFileArg,
    /// Restrict to one gate style; all by default.
    #[arg(long, value_parser = parse_style)]
    pub style: Option<GateStyle>,
    /// Restrict to one residual variant; all by default.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<ResidualVariant>,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 7)]
    pub nx: usize,
    #[arg(long, default_value_t = 6)]
    pub nc: usize,
    #[arg(long, default_value_t = 3)]
    pub nr: usize,
    #[arg(long, default_value_t = 2)]
    pub nnr: usize,
    #[arg(long, default_value_t = 4)]
    pub nout: usize,
    /// Sequence length.
    #[arg(long, default_value_t = 5)]
    pub frames: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, env = "RESLSTM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CountParamsArgs {
    #[command(flatten)]
    pub config_file: ConfigFileArg,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value = "standard", value_parser = parse_style)]
    pub style: GateStyle,
    #[arg(long, default_value = "none", value_parser = parse_variant)]
    pub variant: ResidualVariant,
    #[arg(long, default_value_t = TABLE1_DIMS.n_x)]
    pub nx: usize,
    #[arg(long, default_value_t = TABLE1_DIMS.n_c)]
    pub nc: usize,
    #[arg(long, default_value_t = TABLE1_DIMS.n_r)]
    pub nr: usize,
    #[arg(long, default_value_t = TABLE1_DIMS.n_nr)]
    pub nnr: usize,
    #[arg(long, default_value_t = 1936)]
    pub nout: usize,
    /// Print every row of the TIMIT parameter table for `--nout`.
    #[arg(long)]
    pub table1: bool,
}

fn parse_style(s: &str) -> std::result::Result<GateStyle, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<ResidualVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric(_) | Error::NumericOverflow { .. } => EXIT_NUMERIC,
        _ => EXIT_IO,
    }
}

/// Splices `--config FILE` contents into `args` right after the
/// subcommand, so later (real) flags override them.
fn expand_config(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let mut path = None;
    let mut i = 0;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
            break;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
            break;
        }
        i += 1;
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut injected = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), n + 1))?;
        let (k, v) = (k.trim().replace('_', "-"), v.trim());
        match v {
            "true" => injected.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => {
                injected.push(OsString::from(format!("--{k}")));
                injected.push(OsString::from(v));
            }
        }
    }
    let split = args.len().min(2);
    let mut out = args[..split].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[split..]);
    Ok(out)
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{rendered}")
            } else {
                write!(out, "{rendered}")
            };
            return code;
        }
    };
    let res = match cli.command {
        Command::GenData(a) => cmd_gen_data(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::GradCheck(a) => cmd_grad_check(&a, out),
        Command::CountParams(a) => cmd_count_params(&a, out),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point for the binary.
pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn temp_dir_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp-{}", std::process::id()));
    out.with_file_name(name)
}

pub fn cmd_gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = SyntheticConfig {
        seed: a.seed,
        n_utts: a.utts,
        min_frames: a.min_frames,
        max_frames: a.max_frames,
        raw_dim: a.raw_dim,
        n_speakers: a.speakers,
        speaker_dim: a.speaker_dim,
        n_out: a.nout,
        context: a.context,
        teacher_cells: a.teacher_nc,
        teacher_recurrent: a.teacher_nr,
        teacher_scale: a.teacher_scale,
    };
    cfg.validate()?;
    if a.out.exists() && fs::read_dir(&a.out)?.next().is_some() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} exists and is not empty", a.out.display()),
        )));
    }
    let corpus = gen_synthetic(&cfg)?;

    let tmp = temp_dir_for(&a.out);
    let staged = (|| -> Result<()> {
        fs::create_dir_all(&tmp)?;
        corpus.write(&tmp)?;
        if a.emit_teacher {
            save_model(&corpus.teacher, &corpus.teacher_config, tmp.join("teacher.rlm"))?;
        }
        if a.out.exists() {
            fs::remove_dir(&a.out)?;
        }
        fs::rename(&tmp, &a.out)?;
        Ok(())
    })();
    if let Err(e) = staged {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }

    let hist = label_histogram(&corpus.utterances, cfg.n_out);
    writeln!(
        out,
        "utts={} frames={} classes={} present={} input_dim={} manifest={}",
        corpus.utterances.len(),
        corpus.num_frames(),
        cfg.n_out,
        hist.iter().filter(|&&c| c > 0).count(),
        cfg.splice().output_dim(cfg.raw_dim),
        a.out.join("manifest.txt").display()
    )?;
    Ok(EXIT_OK)
}

fn load_featurized(manifest: &Path, context: usize) -> Result<Vec<Utterance>> {
    let raw = load_corpus(manifest)?;
    let first = raw
        .first()
        .ok_or_else(|| Error::Contract(format!("{} lists no utterances", manifest.display())))?;
    let splice = SpliceConfig {
        context,
        speaker_dim: first.speaker_vec.as_ref().map_or(0, |v| v.len()),
    };
    featurize_all(&raw, &splice)
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let hyper = Hyperparams {
        learning_rate: a.lr,
        momentum: a.momentum,
        grad_clip: (!a.no_grad_clip).then_some(a.grad_clip),
        epochs: a.epochs,
        shuffle_seed: a.shuffle_seed.unwrap_or(a.seed),
        cell_clip: a.cell_clip,
        jobs: a.jobs,
    };
    hyper.validate()?;
    CellDims::new(1, a.net.nc, a.net.nr, a.net.nnr)?;
    if a.net.depth == 0 {
        return Err(Error::Config("depth must be >= 1".into()));
    }

    let train = load_featurized(&a.manifest, a.context)?;
    let heldout = match &a.heldout {
        Some(p) => load_featurized(p, a.context)?,
        None => train.clone(),
    };
    let n_out = match a.nout {
        Some(n) => n,
        None => train.iter().flat_map(|u| u.labels.iter()).max().map_or(0, |&m| m + 1).max(2),
    };
    let config = NetworkConfig {
        depth: a.net.depth,
        dims: CellDims::new(train[0].frames.cols(), a.net.nc, a.net.nr, a.net.nnr)?,
        style: a.net.style,
        variant: a.net.variant,
        n_out,
    };
    config.validate()?;

    let mut log = match &a.log {
        Some(p) => Some(fs::OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let mut trainer = Trainer::new(config, init_params(&config, a.seed), hyper)?;
    let mut io_err = None;
    trainer.fit(&train, &heldout, |r| {
        let line = r.to_string();
        let res = writeln!(out, "{line}").and_then(|_| match log.as_mut() {
            Some(f) => writeln!(f, "{line}"),
            None => Ok(()),
        });
        if let Err(e) = res {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    save_model(&trainer.params, &trainer.config, &a.model_out)?;
    Ok(EXIT_OK)
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let (params, config) = load_model(&a.model)?;
    let data = load_featurized(&a.manifest, a.context)?;
    let fer = evaluate(&params, &config, &data)?;
    writeln!(out, "fer={}", format_metric(fer))?;
    Ok(EXIT_OK)
}

pub fn cmd_grad_check(a: &GradCheckArgs, out: &mut dyn Write) -> Result<i32> {
    if !(a.eps.is_finite() && a.eps > 0.0) || !(a.tol.is_finite() && a.tol > 0.0) {
        return Err(Error::Config("--eps and --tol must be positive".into()));
    }
    if a.frames == 0 {
        return Err(Error::Config("--frames must be >= 1".into()));
    }
    let dims = CellDims::new(a.nx, a.nc, a.nr, a.nnr)?;
    let styles: Vec<GateStyle> = a.style.map_or(GateStyle::ALL.to_vec(), |s| vec![s]);
    let variants: Vec<ResidualVariant> = a.variant.map_or(ResidualVariant::ALL.to_vec(), |v| vec![v]);
    let configs: Vec<NetworkConfig> = styles
        .iter()
        .flat_map(|&style| {
            variants.iter().map(move |&variant| NetworkConfig {
                depth: a.depth,
                dims,
                style,
                variant,
                n_out: a.nout,
            })
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let mut worst: f64 = 0.0;
    for c in &configs {
        let err = grad_check(c, a.seed, a.frames, a.eps)?;
        writeln!(out, "style={} variant={} max_rel_err={err:e}", c.style, c.variant)?;
        worst = worst.max(err);
    }
    writeln!(out, "max_rel_err={worst:e}")?;
    Ok(if worst < a.tol { EXIT_OK } else { EXIT_TOLERANCE })
}

pub fn cmd_count_params(a: &CountParamsArgs, out: &mut dyn Write) -> Result<i32> {
    if a.nout < 2 {
        return Err(Error::Config(format!("--nout must be >= 2, got {}", a.nout)));
    }
    if a.table1 {
        writeln!(out, "model\tdepth\tcount\trounded\treported\tmatch")?;
        for row in table1_rows() {
            match row.computed(a.nout) {
                Some(n) => writeln!(
                    out,
                    "{}\t{}\t{n}\t{}\t{}\t{}",
                    row.model,
                    row.depth,
                    format_millions(n),
                    row.reported(),
                    if round_to_tenths(n) == row.reported_tenths { "yes" } else { "no" }
                )?,
                None => writeln!(out, "{}\t{}\t-\t-\t{}\tnot modeled", row.model, row.depth, row.reported())?,
            }
        }
        return Ok(EXIT_OK);
    }
    let config = NetworkConfig {
        depth: a.depth,
        dims: CellDims::new(a.nx, a.nc, a.nr, a.nnr)?,
        style: a.style,
        variant: a.variant,
        n_out: a.nout,
    };
    config.validate()?;
    let n = count_params(&config);
    writeln!(out, "{n} ({})", format_millions(n))?;
    Ok(EXIT_OK)
}
