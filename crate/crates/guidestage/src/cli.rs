//! Command-line surface: argument parsing and the four commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use guidestage_core::caption::parse_caption;
use guidestage_core::flow::{self, SamplerConfig};
use guidestage_core::model::{ToyDitConfig, ToyDitWeights};
use guidestage_core::raster::render_plan;
use guidestage_core::template::{compile_guidance, ProductSpec};
use guidestage_core::vae::PatchVae;
use guidestage_core::Tensor;

use crate::checks::Fault;
use crate::dto::{from_json, to_json, HumanFile, PlanFile, PoolFile};
use crate::error::{CliError, CliResult};
use crate::formats::{decode_pgm, decode_tensor, encode_ppm, encode_tensor, read_file};
use crate::manifest::{seed_override, RunManifest, SEED_ENV};
use crate::sample::{resample_frames, sample_clips, ToyClipModel};
use crate::train::{self, EvalSet, TrainConfig};
use crate::{selfcheck, toy};

pub const GUIDANCE_FILE: &str = "guidance.gstens";
pub const WEIGHTS_FILE: &str = "weights.json";

#[derive(Debug, Parser)]
#[command(name = "guidestage", version, about = "Product-demo video guidance compiler and toy flow-matching DiT")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Match a motion template, retarget it and render per-frame guidance.
    CompileGuidance(CompileArgs),
    /// Train the toy DiT on the bundled synthetic task.
    TrainToy(TrainArgs),
    /// Sample chained latent clips from trained weights and compiled guidance.
    Sample(SampleArgs),
    /// Run the invariant suite and print a pass/fail table.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, clap::Args)]
pub struct CompileArgs {
    #[arg(long)]
    pub human: PathBuf,
    #[arg(long)]
    pub product_mask: PathBuf,
    #[arg(long)]
    pub caption: PathBuf,
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// JSON training config; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's step count.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct SampleArgs {
    /// Output directory of `train-toy`.
    #[arg(long)]
    pub weights: PathBuf,
    /// Output directory of `compile-guidance`.
    #[arg(long)]
    pub guidance: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub clips: usize,
    #[arg(long, default_value_t = flow::DEFAULT_CFG_SCALE)]
    pub cfg_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    InvertObjectMask,
}

#[derive(Debug, clap::Args)]
pub struct SelfcheckArgs {
    /// Test hook: run the suite against a deliberately broken kernel.
    #[arg(long, hide = true, value_enum)]
    pub inject_fault: Option<FaultArg>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::CompileGuidance(a) => compile(&a),
        Command::TrainToy(a) => train_toy(&a),
        Command::Sample(a) => sample(&a),
        Command::Selfcheck(a) => run_selfcheck(&a),
    }
}

fn prepare_out(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn read_input(m: &mut RunManifest, path: &Path) -> CliResult<Vec<u8>> {
    let bytes = read_file(path).map_err(|e| match e {
        CliError::Io { path, source } => CliError::Parse(format!("{path}: {source}")),
        other => other,
    })?;
    m.input(path, &bytes);
    Ok(bytes)
}

fn resolved_seed(fallback: u64) -> CliResult<u64> {
    seed_override(fallback).map_err(CliError::Parse)
}

/// Skeleton colors with the product box shaded in, `[3 × H × W]`.
fn preview_frame(frame: &Tensor) -> CliResult<Tensor> {
    let s = frame.shape();
    let plane = s[1] * s[2];
    let d = frame.data();
    let mut out = d[..3 * plane].to_vec();
    for (c, chunk) in out.chunks_mut(plane).enumerate() {
        for (i, v) in chunk.iter_mut().enumerate() {
            let shade = [0.35, 0.35, 0.5][c] * d[3 * plane + i];
            *v = v.max(shade);
        }
    }
    Ok(Tensor::new(&[3, s[1], s[2]], out)?)
}

fn frame(t: &Tensor, k: usize) -> CliResult<Tensor> {
    let f = t.slice_outer(k, k + 1)?;
    let s = f.shape()[1..].to_vec();
    Ok(f.reshape(&s)?)
}

pub fn compile(a: &CompileArgs) -> CliResult<()> {
    let mut m = RunManifest::new("compile-guidance", &a.out);
    let human: HumanFile = from_json(&read_input(&mut m, &a.human)?, "human")?;
    let pool: PoolFile = from_json(&read_input(&mut m, &a.pool)?, "pool")?;
    let (cam, templates) = pool.to_core()?;
    let caption_bytes = read_input(&mut m, &a.caption)?;
    let caption_text = String::from_utf8(caption_bytes).map_err(|_| CliError::Parse("caption is not UTF-8".into()))?;
    let line = caption_text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| CliError::Parse("caption file is empty".into()))?;
    let (product, _) = parse_caption(line.trim()).map_err(|e| CliError::Parse(format!("caption: {e}")))?;
    let size = product
        .size_cm
        .ok_or_else(|| CliError::Parse("caption has no size_cm".into()))?;
    let mask = decode_pgm(&read_input(&mut m, &a.product_mask)?)
        .map_err(|e| CliError::Parse(format!("{}: {e}", a.product_mask.display())))?;

    let spec = ProductSpec::new(size, mask, Some(product))?;
    let plan = compile_guidance(&human.to_core()?, &spec, &templates, &cam)?;
    let frames = render_plan(&plan, &cam)?;

    prepare_out(&a.out)?;
    m.emit(&a.out, "plan.json", &to_json(&PlanFile::new(&plan, &cam)))?;
    m.emit(&a.out, GUIDANCE_FILE, &encode_tensor(&frames))?;
    for k in 0..frames.shape()[0] {
        let ppm = encode_ppm(&preview_frame(&frame(&frames, k)?)?).map_err(CliError::Shape)?;
        m.emit(&a.out, &format!("frames/frame_{k:03}.ppm"), &ppm)?;
    }
    m.finish(&a.out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Trained weights with the configuration that produced them. Values are
/// stored as JSON doubles, which round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub config: TrainConfig,
    pub tensors: BTreeMap<String, StoredTensor>,
}

impl WeightsFile {
    pub fn new(config: &TrainConfig, w: &ToyDitWeights) -> Self {
        let tensors = w
            .named_params()
            .into_iter()
            .map(|(n, t)| {
                (
                    n,
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        WeightsFile {
            config: config.clone(),
            tensors,
        }
    }

    pub fn to_core(&self) -> CliResult<ToyDitWeights> {
        self.config.validate()?;
        let mut bad = None;
        let w = ToyDitWeights::from_named(&self.config.model.into(), |name| {
            let s = self.tensors.get(name)?;
            match Tensor::new(&s.shape, s.data.clone()) {
                Ok(t) => Some(t),
                Err(e) => {
                    bad = Some(format!("{name}: {e}"));
                    None
                }
            }
        });
        if let Some(e) = bad {
            return Err(CliError::Shape(e));
        }
        Ok(w?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub seed: u64,
    pub steps: usize,
    pub object_attention: bool,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
    /// `1 − final / initial` of the held-out loss.
    pub loss_reduction: f64,
    pub initial_train_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    /// Product-region reconstruction error of the trained model.
    pub masked_error: f64,
}

/// The resolved config: file, then `--steps`, then the seed variable.
pub fn train_config(a: &TrainArgs, m: &mut RunManifest) -> CliResult<TrainConfig> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => from_json(&read_input(m, p)?, "train config")?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    cfg.seed = resolved_seed(cfg.seed)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_toy(a: &TrainArgs) -> CliResult<()> {
    let mut m = RunManifest::new("train-toy", &a.out);
    let cfg = train_config(a, &mut m)?;
    m.arg("config", &cfg);
    m.arg("steps", cfg.steps);
    m.seeds.insert("seed".into(), cfg.seed);
    m.seeds.insert("seed_from_env".into(), std::env::var(SEED_ENV).is_ok() as u64);

    let report = train::train(&cfg)?;
    let eval = EvalSet::new(&cfg, &PatchVae::new(toy::VAE_SEED))?;
    let metrics = TrainMetrics {
        seed: cfg.seed,
        steps: cfg.steps,
        object_attention: cfg.model.object_attention,
        initial_eval_loss: report.initial_eval(),
        final_eval_loss: report.final_eval(),
        loss_reduction: 1.0 - report.final_eval() / report.initial_eval(),
        initial_train_loss: report.losses.first().copied(),
        final_train_loss: report.losses.last().copied(),
        masked_error: eval.masked_error(&cfg, &report.weights)?,
    };

    prepare_out(&a.out)?;
    let mut loss = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        loss.push_str(&format!("{},{l}\n", i + 1));
    }
    m.emit(&a.out, "loss.csv", loss.as_bytes())?;
    let mut evals = String::from("step,eval_loss\n");
    for (s, l) in &report.evals {
        evals.push_str(&format!("{s},{l}\n"));
    }
    m.emit(&a.out, "eval.csv", evals.as_bytes())?;
    m.emit(&a.out, "metrics.json", &to_json(&metrics))?;
    m.emit(&a.out, WEIGHTS_FILE, &to_json(&WeightsFile::new(&cfg, &report.weights)))?;
    m.finish(&a.out)
}

pub fn sample(a: &SampleArgs) -> CliResult<()> {
    if a.clips == 0 {
        return Err(CliError::Parse("--clips must be ≥ 1".into()));
    }
    if !a.cfg_scale.is_finite() {
        return Err(CliError::Parse("--cfg-scale must be finite".into()));
    }
    let mut m = RunManifest::new("sample", &a.out);
    let wf: WeightsFile = from_json(&read_input(&mut m, &a.weights.join(WEIGHTS_FILE))?, "weights")?;
    let weights = wf.to_core()?;
    let mut cfg = wf.config.clone();
    cfg.seed = resolved_seed(cfg.seed)?;
    let gpath = a.guidance.join(GUIDANCE_FILE);
    let guidance = decode_tensor(&read_input(&mut m, &gpath)?)
        .map_err(|e| CliError::Parse(format!("{}: {e}", gpath.display())))?;
    let guidance = resample_frames(&guidance, cfg.frame_size)?;

    m.arg("clips", a.clips);
    m.arg("cfg_scale", a.cfg_scale);
    m.arg("sample_steps", cfg.sample_steps);
    m.arg("clip_frames", cfg.clip_frames);
    m.seeds.insert("seed".into(), cfg.seed);

    let vae = PatchVae::new(toy::VAE_SEED);
    let base = train::heldout_scene(&cfg, &vae)?.cond;
    let mcfg: ToyDitConfig = cfg.model.into();
    let mut model = ToyClipModel::new(&weights, mcfg, guidance, base, cfg.clip_frames);
    let scfg = SamplerConfig {
        steps: cfg.sample_steps,
        cfg_scale: a.cfg_scale,
        clip_frames: cfg.clip_frames,
        seed: cfg.seed,
    };
    let clips = sample_clips(&mut model, &scfg, a.clips)?;

    prepare_out(&a.out)?;
    for (k, clip) in clips.iter().enumerate() {
        m.emit(&a.out, &format!("clip_{k:02}.gstens"), &encode_tensor(clip))?;
        let rgb = vae.decode(clip)?;
        for f in 0..rgb.shape()[0] {
            let ppm = encode_ppm(&frame(&rgb, f)?).map_err(CliError::Shape)?;
            m.emit(&a.out, &format!("previews/clip_{k:02}_frame_{f:03}.ppm"), &ppm)?;
        }
    }
    m.finish(&a.out)
}

pub fn run_selfcheck(a: &SelfcheckArgs) -> CliResult<()> {
    let fault = match a.inject_fault {
        None => Fault::None,
        Some(FaultArg::InvertObjectMask) => Fault::InvertObjectMask,
    };
    let outcomes = selfcheck::run(selfcheck::SELFCHECK_SEED, fault);
    print!("{}", selfcheck::table(&outcomes));
    let secs: f64 = outcomes.iter().map(|o| o.seconds).sum();
    eprintln!("selfcheck finished in {secs:.2}s");
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed()).map(|o| o.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::SelfCheck(failed.join(", ")))
    }
}
