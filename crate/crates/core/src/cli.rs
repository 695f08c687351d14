//! Command-line front end. Exit codes: 0 success, 1 internal error, 2 usage
//! error (bad flags, unreadable inputs, invalid parameters).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attnboost::compute_guidance;
use crate::codec::{embed_source, PatchCodec};
use crate::error::{Error, Result};
use crate::fms::{concat_states, inject_noise};
use crate::glyph::{gen_pairs, recognize, render_scene, GlyphAtlas, SceneSpec};
use crate::latent::{sample_gaussian, write_dump, SeededRng};
use crate::metrics::{evaluate_pair, ned};
use crate::oracle::{run_gaussian_oracle, OracleConfig};
use crate::pipeline::{ablation_csv, default_model, run_ablation, run_edit, AblationParam, EditCase, EditConfig, Phase};
use crate::raster::{save_gray_png, Image};
use crate::scheduler::SchedulerKind;
use crate::velocity::VelocityModel;

pub const SEED_ENV: &str = "FLOWSTEER_SEED";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "flowsteer", version, about = "Training-free flow-matching text editing sampler")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Edit the text in one image.
    Edit(EditCmd),
    /// Generate source/target glyph scene pairs.
    GenPairs(GenPairsCmd),
    /// Sweep one parameter over a pair set.
    Ablate(AblateCmd),
    /// Run a scheduler on the analytic Gaussian flow.
    Oracle(OracleCmd),
    /// Compare two images (and optionally texts).
    Metrics(MetricsCmd),
    /// Dump the attention guidance map for one image.
    AttnDump(AttnDumpCmd),
}

/// Edit parameters; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct EditArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub phase_split: Option<f64>,
    /// Steering strength.
    #[arg(long)]
    pub strength: Option<f64>,
    /// Overshoot intensity.
    #[arg(long)]
    pub c: Option<f64>,
    /// Text-region attention amplification.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// RNG seed (falls back to FLOWSTEER_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Resample the steering noise every phase-1 step.
    #[arg(long)]
    pub fresh_eps: bool,
    #[arg(long)]
    pub recompute_guidance: Option<bool>,
    #[arg(long)]
    pub scheduler: Option<SchedulerKind>,
    /// Latent patch size in pixels.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub o_max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EditCmd {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub src_text: String,
    #[arg(long)]
    pub tar_text: String,
    #[arg(long, default_value = "edited.png")]
    pub out: PathBuf,
    /// Defaults to the output path with a .json extension.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Write per-step latents and guidance maps here.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    #[command(flatten)]
    pub edit: EditArgs,
}

#[derive(Debug, Args)]
pub struct GenPairsCmd {
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Square canvas side in pixels.
    #[arg(long, default_value_t = 64)]
    pub canvas: usize,
}

#[derive(Debug, Args)]
pub struct AblateCmd {
    /// One of steps, strength, c, gamma, phase_split, scheduler.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    /// Directory written by gen-pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Use only the first N pairs.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value = "ablation.csv")]
    pub out_csv: PathBuf,
    #[arg(long, default_value = "ablation.json")]
    pub out_json: PathBuf,
    #[command(flatten)]
    pub edit: EditArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Dist {
    Gaussian,
}

#[derive(Debug, Args)]
pub struct OracleCmd {
    #[arg(long, value_enum, default_value = "gaussian")]
    pub dist: Dist,
    #[arg(long, default_value_t = 2.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value = "overshoot")]
    pub scheduler: SchedulerKind,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub o_max: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MetricsCmd {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long)]
    pub ref_text: Option<String>,
    /// Defaults to the text recognized in the hypothesis image.
    #[arg(long)]
    pub hyp_text: Option<String>,
}

#[derive(Debug, Args)]
pub struct AttnDumpCmd {
    #[arg(long)]
    pub source: PathBuf,
    /// Word the prompt refers to.
    #[arg(long)]
    pub text: String,
    /// Noise level the model is queried at.
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub edit: EditArgs,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Defaults, then FLOWSTEER_SEED, then the config file, then flags.
pub fn resolve_config(args: &EditArgs) -> Result<EditConfig> {
    let mut cfg = EditConfig::default();
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if let Some(path) = &args.config {
        cfg = cfg.apply_text(&fs::read_to_string(path)?)?;
    }
    macro_rules! set {
        ($flag:ident => $field:ident) => {
            if let Some(v) = args.$flag {
                cfg.$field = v;
            }
        };
    }
    set!(steps => num_steps);
    set!(phase_split => phase_split);
    set!(strength => strength);
    set!(c => c);
    set!(gamma => gamma);
    set!(seed => seed);
    set!(recompute_guidance => recompute_guidance);
    set!(scheduler => scheduler);
    set!(patch => patch);
    set!(o_max => o_max);
    if args.fresh_eps {
        cfg.fresh_eps = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn announce(cfg: &EditConfig) -> Result<()> {
    eprintln!("resolved config: {}", serde_json::to_string(cfg)?);
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPair {
    pub id: usize,
    pub source_file: String,
    pub target_file: String,
    pub src_text: String,
    pub tar_text: String,
    pub style: SceneSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub canvas: (usize, usize),
    pub seed: u64,
    pub pairs: Vec<ManifestPair>,
}

fn cmd_edit(cmd: &EditCmd) -> Result<()> {
    let mut cfg = resolve_config(&cmd.edit)?;
    cfg.trace_latents = cmd.trace_dir.is_some();
    announce(&cfg)?;
    let source = Image::load_png(&cmd.source)?;
    let model = default_model(cfg.patch)?;
    let result = run_edit(&source, &cmd.src_text, &cmd.tar_text, &model, &cfg)?;
    result.image.save_png(&cmd.out)?;

    let recognized = recognize(&result.image.quantized()?, &GlyphAtlas::default(), None)?;
    let mut metrics = result.metrics.clone();
    metrics.insert("ned".into(), ned(&recognized, &cmd.tar_text));
    metrics.insert("acc".into(), if recognized == cmd.tar_text { 1.0 } else { 0.0 });
    let report = json!({
        "config": cfg,
        "src_text": cmd.src_text,
        "tar_text": cmd.tar_text,
        "recognized": recognized,
        "metrics": metrics,
    });
    let metrics_path = cmd.metrics_out.clone().unwrap_or_else(|| cmd.out.with_extension("json"));
    write_json(&metrics_path, &report)?;

    if let Some(dir) = &cmd.trace_dir {
        fs::create_dir_all(dir)?;
        let mut steps = Vec::new();
        for rec in &result.trace {
            if let Some(z) = &rec.latent {
                write_dump(fs::File::create(dir.join(format!("step_{:03}.lat", rec.index)))?, z)?;
            }
            if let Some(g) = &rec.guidance {
                let (rows, cols) = g.grid();
                save_gray_png(g.values(), cols, rows, cfg.patch, &dir.join(format!("guidance_{:03}.png", rec.index)))?;
            }
            steps.push(json!({
                "index": rec.index,
                "phase": rec.phase,
                "t_cur": rec.t_cur,
                "t_next": rec.t_next,
                "guidance": rec.guidance,
            }));
        }
        write_json(&dir.join("trace.json"), &steps)?;
    }
    eprintln!(
        "wrote {} (steer {} / modulate {} steps)",
        cmd.out.display(),
        result.steps_in(Phase::Steer),
        result.steps_in(Phase::Modulate)
    );
    Ok(())
}

fn cmd_gen_pairs(cmd: &GenPairsCmd) -> Result<()> {
    let cfg = resolve_config(&EditArgs {
        seed: cmd.seed,
        ..EditArgs::default()
    })?;
    announce(&cfg)?;
    let canvas = (cmd.canvas, cmd.canvas);
    let pairs = gen_pairs(cmd.count, canvas, cfg.seed)?;
    fs::create_dir_all(&cmd.out)?;
    let mut records = Vec::with_capacity(pairs.len());
    for (id, pair) in pairs.iter().enumerate() {
        let source_file = format!("pair_{id:04}_source.png");
        let target_file = format!("pair_{id:04}_target.png");
        render_scene(&pair.source, canvas)?.save_png(&cmd.out.join(&source_file))?;
        render_scene(&pair.target(), canvas)?.save_png(&cmd.out.join(&target_file))?;
        records.push(ManifestPair {
            id,
            source_file,
            target_file,
            src_text: pair.source.text.clone(),
            tar_text: pair.target_text.clone(),
            style: pair.source.clone(),
        });
    }
    write_json(
        &cmd.out.join(MANIFEST),
        &Manifest {
            canvas,
            seed: cfg.seed,
            pairs: records,
        },
    )?;
    eprintln!("wrote {} pairs to {}", pairs.len(), cmd.out.display());
    Ok(())
}

/// Loads the cases listed in a gen-pairs manifest.
pub fn load_cases(dir: &Path, limit: Option<usize>) -> Result<Vec<EditCase>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::invalid(format!("cannot read pair manifest {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.pairs.is_empty() {
        return Err(Error::invalid(format!("{} lists no pairs", path.display())));
    }
    manifest
        .pairs
        .iter()
        .take(limit.unwrap_or(usize::MAX))
        .map(|p| {
            Ok(EditCase {
                source: Image::load_png(&dir.join(&p.source_file))?,
                src_text: p.src_text.clone(),
                tar_text: p.tar_text.clone(),
                reference: Some(Image::load_png(&dir.join(&p.target_file))?),
                hint: Some(p.style.hint()),
            })
        })
        .collect()
}

fn cmd_ablate(cmd: &AblateCmd) -> Result<()> {
    let cfg = resolve_config(&cmd.edit)?;
    announce(&cfg)?;
    let param: AblationParam = cmd.param.parse()?;
    let cases = load_cases(&cmd.pairs, cmd.limit)?;
    let model = default_model(cfg.patch)?;
    let rows = run_ablation(param, &cmd.values, &cases, &model, &cfg)?;
    let csv = ablation_csv(&rows);
    fs::write(&cmd.out_csv, &csv)?;
    write_json(&cmd.out_json, &rows)?;
    print!("{csv}");
    Ok(())
}

fn cmd_oracle(cmd: &OracleCmd) -> Result<()> {
    let edit = resolve_config(&EditArgs {
        seed: cmd.seed,
        ..EditArgs::default()
    })?;
    announce(&edit)?;
    let Dist::Gaussian = cmd.dist;
    let cfg = OracleConfig {
        mu: cmd.mu,
        sigma: cmd.sigma,
        steps: cmd.steps,
        samples: cmd.samples,
        scheduler: cmd.scheduler,
        c: cmd.c,
        o_max: cmd.o_max,
        seed: edit.seed,
    };
    let report = run_gaussian_oracle(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_metrics(cmd: &MetricsCmd) -> Result<()> {
    announce(&resolve_config(&EditArgs::default())?)?;
    let reference = Image::load_png(&cmd.reference)?;
    let hyp = Image::load_png(&cmd.hyp)?;
    let hyp_text = match (&cmd.ref_text, &cmd.hyp_text) {
        (Some(_), None) => Some(recognize(&hyp, &GlyphAtlas::default(), None)?),
        (_, given) => given.clone(),
    };
    let report = evaluate_pair(&hyp, &reference, hyp_text.as_deref(), cmd.ref_text.as_deref())?;
    let mut value = serde_json::to_value(report)?;
    if cmd.ref_text.is_none() || hyp_text.is_none() {
        value["acc"] = serde_json::Value::Null;
        value["ned"] = serde_json::Value::Null;
    } else {
        value["hyp_text"] = json!(hyp_text);
    }
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn cmd_attn_dump(cmd: &AttnDumpCmd) -> Result<()> {
    let cfg = resolve_config(&cmd.edit)?;
    announce(&cfg)?;
    if !(0.0..=1.0).contains(&cmd.t) {
        return Err(Error::invalid(format!("t must lie in [0, 1], got {}", cmd.t)));
    }
    let source = Image::load_png(&cmd.source)?;
    let codec = PatchCodec::new(cfg.patch, 3)?;
    let grid = codec.grid(source.width(), source.height())?;
    let z = codec.encode(&source)?;
    let mut rng = SeededRng::new(cfg.seed);
    let eps = sample_gaussian(&mut rng, z.shape(), z.layout())?;
    let noisy = inject_noise(&z, cmd.t, &eps)?;
    let e_p = embed_source(&cmd.text, crate::pipeline::TEXT_SEED)?;
    let model = default_model(cfg.patch)?;
    let out = model.evaluate(&concat_states(&noisy, &z)?, &e_p, cmd.t)?;
    let attention = out
        .attention
        .ok_or_else(|| Error::invalid("model exposes no attention"))?;
    let span = attention
        .text_rows()
        .ok_or_else(|| Error::invalid("attention has no text tokens"))?;
    let guidance = compute_guidance(&attention, span, cfg.gamma, grid)?;
    fs::create_dir_all(&cmd.out)?;
    save_gray_png(guidance.values(), grid.1, grid.0, cfg.patch, &cmd.out.join("guidance.png"))?;
    write_json(
        &cmd.out.join("guidance.json"),
        &json!({
            "text": cmd.text,
            "t": cmd.t,
            "gamma": cfg.gamma,
            "attention_shape": attention.shape(),
            "text_span": span,
            "grid": grid,
            "values": guidance.values(),
        }),
    )?;
    eprintln!("wrote guidance map to {}", cmd.out.display());
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Edit(c) => cmd_edit(c),
        Command::GenPairs(c) => cmd_gen_pairs(c),
        Command::Ablate(c) => cmd_ablate(c),
        Command::Oracle(c) => cmd_oracle(c),
        Command::Metrics(c) => cmd_metrics(c),
        Command::AttnDump(c) => cmd_attn_dump(c),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}
