//! Toy training: Adam on the region-weighted flow loss, one fresh scene per
//! step, with a fixed held-out evaluation set.

use serde::{Deserialize, Serialize};

use guidestage_core::flow::{self, make_flow_sample, RegionWeights, SamplerConfig};
use guidestage_core::model::{self, ToyDitConfig, ToyDitWeights};
use guidestage_core::rng;
use guidestage_core::vae::PatchVae;
use guidestage_core::{Tape, Tensor};

use crate::error::{CliError, CliResult};
use crate::toy::{self, ToyScene, VAE_SEED};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionWeightsConfig {
    pub face: f64,
    pub hands: f64,
    pub product: f64,
    #[serde(default = "one")]
    pub default: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for RegionWeightsConfig {
    fn default() -> Self {
        RegionWeightsConfig {
            face: 2.0,
            hands: 2.0,
            product: 3.0,
            default: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub c: usize,
    pub heads: usize,
    pub blocks: usize,
    pub object_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = ToyDitConfig::default();
        ModelConfig {
            c: d.c,
            heads: d.heads,
            blocks: d.blocks,
            object_attention: d.object_attention,
        }
    }
}

impl From<ModelConfig> for ToyDitConfig {
    fn from(m: ModelConfig) -> Self {
        ToyDitConfig {
            c: m.c,
            heads: m.heads,
            blocks: m.blocks,
            object_attention: m.object_attention,
        }
    }
}

/// Training and sampling configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub cfg_scale: f64,
    /// Frames per clip (the toy task's clip length).
    pub clip_frames: usize,
    pub seed: u64,
    pub region_weights: RegionWeightsConfig,
    /// Frame side in pixels; latents are `frame_size / 4` per side.
    pub frame_size: usize,
    pub model: ModelConfig,
    pub learning_rate: f64,
    /// Scenes per optimizer step; gradients are averaged.
    pub batch: usize,
    /// Probability of training a step on the unconditional branch.
    pub cond_dropout: f64,
    pub eval_every: usize,
    pub eval_scenes: usize,
    /// Euler steps for the masked reconstruction probe.
    pub sample_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            cfg_scale: flow::DEFAULT_CFG_SCALE,
            clip_frames: 8,
            seed: 0,
            region_weights: RegionWeightsConfig::default(),
            frame_size: 16,
            model: ModelConfig::default(),
            learning_rate: 0.01,
            batch: 2,
            cond_dropout: 0.1,
            eval_every: 50,
            eval_scenes: 8,
            sample_steps: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Parse(format!("config: {m}")));
        ToyDitConfig::from(self.model).validate()?;
        if self.frame_size == 0 || !self.frame_size.is_multiple_of(4) || self.frame_size < 8 {
            return bad(format!("frame_size {} must be a multiple of 4 and >= 8", self.frame_size));
        }
        if self.clip_frames < 2 {
            return bad("clip_frames must be >= 2".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.cond_dropout) {
            return bad(format!("cond_dropout {} outside [0, 1)", self.cond_dropout));
        }
        if self.batch == 0 || self.eval_every == 0 || self.eval_scenes == 0 || self.sample_steps == 0 {
            return bad("batch, eval_every, eval_scenes and sample_steps must be >= 1".into());
        }
        if !self.cfg_scale.is_finite() {
            return bad("cfg_scale must be finite".into());
        }
        let rw = &self.region_weights;
        for w in [rw.face, rw.hands, rw.product, rw.default] {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("region weight {w} must be > 0"));
            }
        }
        Ok(())
    }

    pub fn region_weights(&self, scene: &ToyScene) -> RegionWeights {
        let rw = &self.region_weights;
        RegionWeights {
            face: rw.face,
            hands: rw.hands,
            product: rw.product,
            default: rw.default,
            map: scene.regions.clone(),
        }
    }
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &[&Tensor]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.iter_mut().enumerate() {
            let Some(g) = grads[k] else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (x, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                *x -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Held-out scenes with fixed noise and flow times.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub scenes: Vec<ToyScene>,
    /// Per scene: `(x0, t)` probes for the eval loss.
    pub probes: Vec<Vec<(Tensor, f64)>>,
    /// Per scene: start noise for the reconstruction probe.
    pub sample_noise: Vec<Tensor>,
}

const EVAL_TIMES: [f64; 4] = [0.125, 0.375, 0.625, 0.875];

// rng stream ids
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// The first held-out scene for `cfg.seed`; sampling conditions on it.
pub fn heldout_scene(cfg: &TrainConfig, vae: &PatchVae) -> CliResult<ToyScene> {
    let mut r = rng::derived(cfg.seed, STREAM_EVAL);
    Ok(toy::make_scene(&mut r, cfg.clip_frames, cfg.frame_size, cfg.model.c, vae)?)
}

impl EvalSet {
    pub fn new(cfg: &TrainConfig, vae: &PatchVae) -> CliResult<Self> {
        let mut r = rng::derived(cfg.seed, STREAM_EVAL);
        let mut out = EvalSet {
            scenes: vec![],
            probes: vec![],
            sample_noise: vec![],
        };
        for _ in 0..cfg.eval_scenes {
            let s = toy::make_scene(&mut r, cfg.clip_frames, cfg.frame_size, cfg.model.c, vae)?;
            let n = s.x1.len();
            let shape = s.x1.shape().to_vec();
            out.probes.push(
                EVAL_TIMES
                    .iter()
                    .map(|&t| Ok((Tensor::new(&shape, rng::normal_vec(&mut r, n, 1.0))?, t)))
                    .collect::<CliResult<_>>()?,
            );
            out.sample_noise.push(Tensor::new(&shape, rng::normal_vec(&mut r, n, 1.0))?);
            out.scenes.push(s);
        }
        Ok(out)
    }

    /// Mean conditioned region-weighted loss over all probes.
    pub fn loss(&self, cfg: &TrainConfig, w: &ToyDitWeights) -> CliResult<f64> {
        let mcfg = cfg.model.into();
        let mut total = 0.0;
        let mut n = 0;
        for (scene, probes) in self.scenes.iter().zip(&self.probes) {
            let rw = cfg.region_weights(scene);
            for (x0, t) in probes {
                let sample = make_flow_sample(x0, &scene.x1, *t)?;
                let v = model::velocity(w, &mcfg, &scene.cond, &sample.x_t, *t, true)?;
                total += flow::weighted_fm_loss(&v, &sample, &rw)?;
                n += 1;
            }
        }
        Ok(total / n as f64)
    }

    /// Mean squared error between the conditioned Euler sample and the
    /// target over product cells (mask > 0.5), all latent channels.
    pub fn masked_error(&self, cfg: &TrainConfig, w: &ToyDitWeights) -> CliResult<f64> {
        let mcfg = cfg.model.into();
        let scfg = SamplerConfig {
            steps: cfg.sample_steps,
            cfg_scale: 1.0,
            clip_frames: cfg.clip_frames,
            seed: cfg.seed,
        };
        let mut err = 0.0;
        let mut count = 0usize;
        for (scene, noise) in self.scenes.iter().zip(&self.sample_noise) {
            let x = flow::euler_sample(
                |x, t, c| model::velocity(w, &mcfg, &scene.cond, x, t, c),
                noise,
                &scfg,
            )?;
            let s = x.shape();
            let (frames, ch, hw) = (s[0], s[1], s[2] * s[3]);
            let m = scene.cond.mask.data();
            for f in 0..frames {
                for cell in 0..hw {
                    if m[f * hw + cell] <= 0.5 {
                        continue;
                    }
                    for c in 0..ch {
                        let i = (f * ch + c) * hw + cell;
                        err += (x.data()[i] - scene.x1.data()[i]).powi(2);
                        count += 1;
                    }
                }
            }
        }
        Ok(if count == 0 { 0.0 } else { err / count as f64 })
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Training loss per step.
    pub losses: Vec<f64>,
    /// `(step, eval loss)` at step 0, every `eval_every` steps, and the end.
    pub evals: Vec<(usize, f64)>,
    pub weights: ToyDitWeights,
}

impl TrainReport {
    pub fn initial_eval(&self) -> f64 {
        self.evals.first().map_or(f64::NAN, |e| e.1)
    }

    pub fn final_eval(&self) -> f64 {
        self.evals.last().map_or(f64::NAN, |e| e.1)
    }
}

pub fn train(cfg: &TrainConfig) -> CliResult<TrainReport> {
    cfg.validate()?;
    let mcfg: ToyDitConfig = cfg.model.into();
    let vae = PatchVae::new(VAE_SEED);
    let eval = EvalSet::new(cfg, &vae)?;
    let mut weights = ToyDitWeights::init(&mcfg, cfg.seed)?;
    let mut adam = Adam::new(cfg.learning_rate, &weights.named_params().iter().map(|p| p.1).collect::<Vec<_>>());
    let mut r = rng::derived(cfg.seed, STREAM_TRAIN);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut evals = vec![(0, eval.loss(cfg, &weights)?)];
    for step in 1..=cfg.steps {
        let mut step_loss = 0.0;
        let mut acc: Vec<Option<Tensor>> = Vec::new();
        for _ in 0..cfg.batch {
            let scene = toy::make_scene(&mut r, cfg.clip_frames, cfg.frame_size, mcfg.c, &vae)?;
            let x0 = Tensor::new(scene.x1.shape(), rng::normal_vec(&mut r, scene.x1.len(), 1.0))?;
            let t = rng::uniform(&mut r, 0.0, 1.0);
            let conditioned = rng::uniform(&mut r, 0.0, 1.0) >= cfg.cond_dropout;
            let sample = make_flow_sample(&x0, &scene.x1, t)?;
            let rw = cfg.region_weights(&scene);

            let mut tape = Tape::new();
            let (loss, vars) =
                model::loss_taped(&mut tape, &weights, &mcfg, &scene.cond, &sample, &rw, conditioned)?;
            let l = tape.value(loss).data()[0];
            if !l.is_finite() {
                return Err(CliError::NonFiniteLoss(step));
            }
            step_loss += l / cfg.batch as f64;
            let grads = tape.backward(loss)?;
            let g = vars.all().into_iter().map(|v| grads.get(v).map(|g| g.scale(1.0 / cfg.batch as f64)));
            if acc.is_empty() {
                acc = g.collect();
            } else {
                for (a, gi) in acc.iter_mut().zip(g) {
                    *a = match (a.take(), gi) {
                        (Some(x), Some(y)) => Some(x.add(&y)?),
                        (x, y) => x.or(y),
                    };
                }
            }
        }
        losses.push(step_loss);
        adam.step(&mut weights.params_mut(), &acc.iter().map(Option::as_ref).collect::<Vec<_>>());
        if step % cfg.eval_every == 0 || step == cfg.steps {
            evals.push((step, eval.loss(cfg, &weights)?));
        }
    }
    Ok(TrainReport { losses, evals, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = Tensor::new(&[2], vec![3.0, -2.0]).unwrap();
        let mut opt = Adam::new(0.1, &[&x]);
        for _ in 0..500 {
            let g = x.scale(2.0);
            opt.step(&mut [&mut x], &[Some(&g)]);
        }
        assert!(x.data().iter().all(|v| v.abs() < 1e-2), "{:?}", x.data());
    }

    #[test]
    fn zero_steps_only_evaluates() {
        let cfg = TrainConfig {
            steps: 0,
            frame_size: 16,
            clip_frames: 3,
            eval_scenes: 1,
            ..TrainConfig::default()
        };
        let rep = train(&cfg).unwrap();
        assert!(rep.losses.is_empty());
        assert_eq!(rep.evals.len(), 1);
        let init = ToyDitWeights::init(&cfg.model.into(), cfg.seed).unwrap();
        assert_eq!(rep.weights, init);
    }

    #[test]
    fn config_defaults_fill_missing_keys() {
        let c: TrainConfig = serde_json::from_str(r#"{"steps": 5, "seed": 3}"#).unwrap();
        assert_eq!(c.steps, 5);
        assert_eq!(c.cfg_scale, 2.5);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"stepz": 5}"#).is_err());
    }
}
