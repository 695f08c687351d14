//! The two-phase edit loop: encode, steer with FMS for the first `k` steps,
//! finish with attention-modulated steps conditioned on the target prompt,
//! decode. Also batch evaluation and parameter sweeps over glyph pairs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attnboost::GuidanceMap;
use crate::codec::{embed_source, embed_target, PatchCodec};
use crate::error::{Error, Result};
use crate::fms::{fms_step, FmsState, DEFAULT_STRENGTH};
use crate::glyph::{recognize, render_scene, GlyphAtlas, ScenePair, StyleHint};
use crate::latent::{linspace_schedule, sample_gaussian, LatentTensor, SeededRng};
use crate::metrics::{evaluate_pair, image_mse, psnr_from_mse, ssim, MetricReport};
use crate::raster::Image;
use crate::scheduler::{modulated_step, ModulationConfig, SchedulerKind, DEFAULT_INTENSITY, DEFAULT_O_MAX};
use crate::velocity::{ToyDoubleStream, VelocityModel};

/// Seed of the deterministic text embedder.
pub const TEXT_SEED: u64 = 0;
/// Seed of the toy double-stream model weights.
pub const MODEL_SEED: u64 = 7;
pub const DEFAULT_PATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditConfig {
    pub num_steps: usize,
    pub phase_split: f64,
    pub strength: f64,
    pub c: f64,
    pub gamma: f64,
    pub seed: u64,
    pub fresh_eps: bool,
    pub recompute_guidance: bool,
    pub scheduler: SchedulerKind,
    pub patch: usize,
    pub o_max: f64,
    /// Keep every step's latent in the trace.
    pub trace_latents: bool,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            num_steps: 50,
            phase_split: 0.6,
            strength: DEFAULT_STRENGTH,
            c: DEFAULT_INTENSITY,
            gamma: 2.0,
            seed: 0,
            fresh_eps: false,
            recompute_guidance: true,
            scheduler: SchedulerKind::Overshoot,
            patch: DEFAULT_PATCH,
            o_max: DEFAULT_O_MAX,
            trace_latents: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.num_steps < 2 {
            return bad(format!("num_steps must be >= 2, got {}", self.num_steps));
        }
        if !(0.0..=1.0).contains(&self.phase_split) {
            return bad(format!("phase_split must lie in [0, 1], got {}", self.phase_split));
        }
        if !(self.strength > 0.0 && self.strength.is_finite()) {
            return bad(format!("strength must be positive, got {}", self.strength));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad(format!("c must be >= 0, got {}", self.c));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.o_max > 0.0 && self.o_max <= 1.0) {
            return bad(format!("o_max must lie in (0, 1], got {}", self.o_max));
        }
        if self.patch == 0 {
            return bad("patch must be >= 1".into());
        }
        Ok(())
    }

    /// Sets one field by its name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "num_steps" => self.num_steps = parse(key, value)?,
            "phase_split" => self.phase_split = parse(key, value)?,
            "strength" => self.strength = parse(key, value)?,
            "c" => self.c = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "fresh_eps" => self.fresh_eps = parse(key, value)?,
            "recompute_guidance" => self.recompute_guidance = parse(key, value)?,
            "scheduler" => self.scheduler = value.parse()?,
            "patch" => self.patch = parse(key, value)?,
            "o_max" => self.o_max = parse(key, value)?,
            "trace_latents" => self.trace_latents = parse(key, value)?,
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", n + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::invalid(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(self)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "num_steps = {}", self.num_steps);
        let _ = writeln!(out, "phase_split = {}", self.phase_split);
        let _ = writeln!(out, "strength = {}", self.strength);
        let _ = writeln!(out, "c = {}", self.c);
        let _ = writeln!(out, "gamma = {}", self.gamma);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "fresh_eps = {}", self.fresh_eps);
        let _ = writeln!(out, "recompute_guidance = {}", self.recompute_guidance);
        let _ = writeln!(out, "scheduler = {}", self.scheduler);
        let _ = writeln!(out, "patch = {}", self.patch);
        let _ = writeln!(out, "o_max = {}", self.o_max);
        let _ = writeln!(out, "trace_latents = {}", self.trace_latents);
        out
    }
}

/// The toy model sized for `patch`-pixel RGB tokens.
pub fn default_model(patch: usize) -> Result<ToyDoubleStream> {
    ToyDoubleStream::new(MODEL_SEED, PatchCodec::new(patch, 3)?.token_dim())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Steer,
    Modulate,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub index: usize,
    pub phase: Phase,
    pub t_cur: f64,
    pub t_next: f64,
    /// Latent after the step, when `trace_latents` is set.
    pub latent: Option<LatentTensor>,
    pub guidance: Option<GuidanceMap>,
}

#[derive(Debug, Clone)]
pub struct EditResult {
    pub image: Image,
    pub metrics: BTreeMap<String, f64>,
    pub trace: Vec<StepRecord>,
}

impl EditResult {
    pub fn steps_in(&self, phase: Phase) -> usize {
        self.trace.iter().filter(|r| r.phase == phase).count()
    }
}

/// Runs one edit with the RNG seeded from `config.seed`.
pub fn run_edit(source: &Image, src_text: &str, tar_text: &str, model: &dyn VelocityModel, config: &EditConfig) -> Result<EditResult> {
    edit_with_rng(source, src_text, tar_text, model, config, SeededRng::new(config.seed))
}

fn edit_with_rng(
    source: &Image,
    src_text: &str,
    tar_text: &str,
    model: &dyn VelocityModel,
    config: &EditConfig,
    mut rng: SeededRng,
) -> Result<EditResult> {
    config.validate()?;
    let (w, h) = (source.width(), source.height());
    let codec = PatchCodec::new(config.patch, source.channels())?;
    let grid = codec.grid(w, h)?;
    let z_src = codec.encode(source)?;
    let e_src = embed_source(src_text, TEXT_SEED)?;
    let e_tar = embed_target(src_text, tar_text, TEXT_SEED)?;
    let schedule = linspace_schedule(config.num_steps, config.phase_split)?;
    let k = schedule.phase_split_index();
    let keep = |z: &LatentTensor| config.trace_latents.then(|| z.clone());

    let mut trace = Vec::with_capacity(config.num_steps);
    let eps = sample_gaussian(&mut rng, z_src.shape(), z_src.layout())?;
    let mut state = FmsState::new(z_src.clone(), eps, config.strength)?;
    for i in 0..k {
        if config.fresh_eps && i > 0 {
            let eps = sample_gaussian(&mut rng, z_src.shape(), z_src.layout())?;
            state = state.with_eps(eps)?;
        }
        state = fms_step(&state, model, &schedule, i, &e_src, &e_tar).map_err(|e| e.at_step(i))?;
        let (t_cur, t_next) = schedule.step(i)?;
        trace.push(StepRecord {
            index: i,
            phase: Phase::Steer,
            t_cur,
            t_next,
            latent: keep(state.z_t()),
            guidance: None,
        });
    }

    let mcfg = ModulationConfig {
        scheduler: config.scheduler,
        c: config.c,
        gamma: config.gamma,
        o_max: config.o_max,
        grid,
    };
    let mut z = state.into_latent();
    let mut frozen: Option<GuidanceMap> = None;
    for i in k..config.num_steps {
        let supplied = if config.recompute_guidance { None } else { frozen.as_ref() };
        let out = modulated_step(&z, supplied, &schedule, i, model, &e_tar, &z_src, &mut rng, &mcfg)
            .map_err(|e| e.at_step(i))?;
        if frozen.is_none() {
            frozen = out.guidance.clone();
        }
        z = out.z_next;
        let (t_cur, t_next) = schedule.step(i)?;
        trace.push(StepRecord {
            index: i,
            phase: Phase::Modulate,
            t_cur,
            t_next,
            latent: keep(&z),
            guidance: out.guidance,
        });
    }

    let image = codec.decode(&z, w, h)?.clamped();
    let mse = image_mse(&image, source)?;
    let max_diff = image
        .data()
        .iter()
        .zip(source.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let metrics = BTreeMap::from([
        ("source_ssim".to_string(), ssim(&image, source)?),
        ("source_psnr".to_string(), psnr_from_mse(mse)),
        ("source_mse".to_string(), mse),
        ("source_max_abs_diff".to_string(), max_diff),
        ("phase1_steps".to_string(), k as f64),
        ("phase2_steps".to_string(), (config.num_steps - k) as f64),
    ]);
    Ok(EditResult { image, metrics, trace })
}

/// One evaluation item: a source image, the edit, and what the output is
/// scored against.
#[derive(Debug, Clone)]
pub struct EditCase {
    pub source: Image,
    pub src_text: String,
    pub tar_text: String,
    /// Ground-truth target image; image metrics fall back to the source.
    pub reference: Option<Image>,
    pub hint: Option<StyleHint>,
}

impl EditCase {
    pub fn from_pair(pair: &ScenePair, canvas: (usize, usize)) -> Result<Self> {
        Ok(Self {
            source: render_scene(&pair.source, canvas)?,
            src_text: pair.source.text.clone(),
            tar_text: pair.target_text.clone(),
            reference: Some(render_scene(&pair.target(), canvas)?),
            hint: Some(pair.source.hint()),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub image: Image,
    pub recognized: String,
    pub report: MetricReport,
}

/// Edits every case in parallel; case `i` draws from RNG stream `i` of
/// `config.seed`. Results are in input order.
pub fn run_batch(cases: &[EditCase], model: &dyn VelocityModel, config: &EditConfig) -> Result<Vec<CaseOutcome>> {
    let atlas = GlyphAtlas::default();
    cases
        .par_iter()
        .enumerate()
        .map(|(i, case)| {
            let rng = SeededRng::with_stream(config.seed, i as u64);
            let result = edit_with_rng(&case.source, &case.src_text, &case.tar_text, model, config, rng)?;
            let recognized = recognize(&result.image, &atlas, case.hint)?;
            let reference = case.reference.as_ref().unwrap_or(&case.source);
            let report = evaluate_pair(&result.image, reference, Some(&recognized), Some(&case.tar_text))?;
            Ok(CaseOutcome {
                image: result.image,
                recognized,
                report,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationParam {
    Steps,
    Strength,
    C,
    Gamma,
    PhaseSplit,
    Scheduler,
}

impl FromStr for AblationParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "steps" => Self::Steps,
            "strength" => Self::Strength,
            "c" => Self::C,
            "gamma" => Self::Gamma,
            "phase_split" => Self::PhaseSplit,
            "scheduler" => Self::Scheduler,
            other => return Err(Error::invalid(format!("unknown ablation parameter {other:?}"))),
        })
    }
}

impl AblationParam {
    pub fn config_key(self) -> &'static str {
        match self {
            Self::Steps => "num_steps",
            Self::Strength => "strength",
            Self::C => "c",
            Self::Gamma => "gamma",
            Self::PhaseSplit => "phase_split",
            Self::Scheduler => "scheduler",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub param: AblationParam,
    pub value: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

/// One row of mean metrics per value of `param`.
pub fn run_ablation(
    param: AblationParam,
    values: &[String],
    cases: &[EditCase],
    model: &dyn VelocityModel,
    config: &EditConfig,
) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::invalid("ablation needs at least one value"));
    }
    if cases.is_empty() {
        return Err(Error::invalid("ablation needs at least one pair"));
    }
    values
        .iter()
        .map(|value| {
            let mut cfg = *config;
            cfg.set(param.config_key(), value)?;
            cfg.validate()?;
            let outcomes = run_batch(cases, model, &cfg)?;
            let reports: Vec<MetricReport> = outcomes.iter().map(|o| o.report).collect();
            Ok(AblationRow {
                param,
                value: value.trim().to_string(),
                report: MetricReport::mean(&reports),
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("param,value,ssim,psnr,mse,acc,ned,count\n");
    for r in rows {
        let key = r.param.config_key();
        let m = &r.report;
        let _ = writeln!(
            out,
            "{key},{},{:.6},{:.4},{:.6},{:.4},{:.4},{}",
            r.value, m.ssim, m.psnr, m.mse, m.acc, m.ned, m.count
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyph::{SceneSpec, DEFAULT_CANVAS};

    fn small() -> EditConfig {
        EditConfig {
            num_steps: 10,
            ..EditConfig::default()
        }
    }

    #[test]
    fn config_text_round_trip_and_errors() {
        let cfg = EditConfig {
            num_steps: 24,
            phase_split: 0.5,
            scheduler: SchedulerKind::Euler,
            fresh_eps: true,
            seed: 99,
            ..EditConfig::default()
        };
        assert_eq!(EditConfig::default().apply_text(&cfg.to_text()).unwrap(), cfg);
        let parsed = EditConfig::default()
            .apply_text("# sweep\n\nc = 3   # stronger\ngamma=1.5\n")
            .unwrap();
        assert_eq!((parsed.c, parsed.gamma), (3.0, 1.5));
        assert!(EditConfig::default().apply_text("colour = red").is_err());
        assert!(EditConfig::default().apply_text("c 3").is_err());
        assert!(EditConfig::default().apply_text("num_steps = many").is_err());
        assert!(EditConfig { num_steps: 1, ..EditConfig::default() }.validate().is_err());
        assert!(EditConfig { c: -1.0, ..EditConfig::default() }.validate().is_err());
    }

    #[test]
    fn phase_accounting_and_boundaries() {
        let img = render_scene(&SceneSpec::solid("CAT", (10, 20), 2), DEFAULT_CANVAS).unwrap();
        let model = default_model(8).unwrap();
        for (split, k) in [(0.6, 6), (1.0, 10), (0.0, 0)] {
            let cfg = EditConfig { phase_split: split, ..small() };
            let r = run_edit(&img, "CAT", "DOG", &model, &cfg).unwrap();
            assert_eq!(r.trace.len(), 10);
            assert_eq!(r.steps_in(Phase::Steer), k);
            assert_eq!(r.steps_in(Phase::Modulate), 10 - k);
            assert!(r.trace.iter().enumerate().all(|(i, s)| s.index == i));
            assert_eq!((r.image.width(), r.image.height()), (64, 64));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let img = render_scene(&SceneSpec::solid("SHOP", (4, 4), 2), DEFAULT_CANVAS).unwrap();
        let model = default_model(8).unwrap();
        let a = run_edit(&img, "SHOP", "STOP", &model, &small()).unwrap();
        let b = run_edit(&img, "SHOP", "STOP", &model, &small()).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.metrics, b.metrics);
        let c = run_edit(&img, "SHOP", "STOP", &model, &EditConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn errors_carry_step_index_and_bad_shapes_are_rejected() {
        let img = Image::filled(60, 64, [1.0; 3]);
        let model = default_model(8).unwrap();
        assert!(run_edit(&img, "CAT", "DOG", &model, &small()).is_err());
        let img = Image::filled(64, 64, [1.0; 3]);
        let wrong = ToyDoubleStream::new(1, 12).unwrap();
        match run_edit(&img, "CAT", "DOG", &wrong, &small()) {
            Err(Error::Step { index: 0, .. }) => {}
            other => panic!("expected step-0 error, got {other:?}"),
        }
    }

    #[test]
    fn ablation_rows_follow_values() {
        let pairs = crate::glyph::gen_pairs(2, DEFAULT_CANVAS, 1).unwrap();
        let cases: Vec<EditCase> = pairs.iter().map(|p| EditCase::from_pair(p, DEFAULT_CANVAS).unwrap()).collect();
        let model = default_model(8).unwrap();
        let values = vec!["euler".to_string(), "overshoot".to_string()];
        let rows = run_ablation(AblationParam::Scheduler, &values, &cases, &model, &small()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].value, "overshoot");
        assert_eq!(rows[0].report.count, 2);
        assert_eq!(ablation_csv(&rows).lines().count(), 3);
        let single = run_ablation(AblationParam::Steps, &["4".to_string()], &cases, &model, &small()).unwrap();
        assert_eq!(single.len(), 1);
        assert!("depth".parse::<AblationParam>().is_err());
        assert!(run_ablation(AblationParam::Steps, &values, &cases, &model, &small()).is_err());
    }
}
