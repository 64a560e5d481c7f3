//! Weighted BCE and the training loop.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::ImageSample;
use crate::maps::{EdgeMap, SoftEdgeMap};
use crate::model::SdpedModel;
use crate::tensor::{adam_step, lr_schedule, ops, AdamState, Element, Graph, Tensor, Var};

/// Crop redraws attempted when a window holds no edge pixel.
pub const CROP_RESAMPLES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Extra weight on the negative term.
    pub lambda: f64,
    pub crop: usize,
    pub epochs: usize,
    /// Crop windows are redrawn every this many epochs.
    pub refresh_period: usize,
    pub seed: u64,
    pub clamp_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            weight_decay: 1e-8,
            batch_size: 8,
            lambda: 1.1,
            crop: 320,
            epochs: 100,
            refresh_period: 5,
            seed: 0,
            clamp_eps: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.base_lr.is_nan() || self.base_lr <= 0.0 {
            return bad(format!("learning rate must be positive, got {}", self.base_lr));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.crop == 0 || self.batch_size == 0 || self.refresh_period == 0 {
            return bad("crop, batch_size and refresh_period must be positive".into());
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return bad(format!("clamp_eps must lie in (0, 0.5), got {}", self.clamp_eps));
        }
        Ok(())
    }

    /// `key = value` pairs for run-log headers.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("base_lr", self.base_lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lambda", self.lambda.to_string()),
            ("crop", self.crop.to_string()),
            ("epochs", self.epochs.to_string()),
            ("refresh_period", self.refresh_period.to_string()),
            ("seed", self.seed.to_string()),
            ("clamp_eps", self.clamp_eps.to_string()),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub positive_term: f64,
    pub negative_term: f64,
    /// Fraction of negative pixels; the weight of the positive term.
    pub alpha: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn class_weights(target: &EdgeMap) -> Result<(f64, usize, usize)> {
    let n = target.data().len();
    if n == 0 {
        return Err(Error::Data("loss target has no pixels".into()));
    }
    let n_pos = target.count();
    let n_neg = n - n_pos;
    Ok((n_neg as f64 / n as f64, n_pos, n_neg))
}

/// Weighted binary cross-entropy, summed over pixels:
///
/// `-α Σ⁺ log p - λ(1-α) Σ⁻ log(1-p)` with `α = |Y⁻| / |Y|` and `p` clamped
/// into `[clamp_eps, 1 - clamp_eps]`.
///
/// A target with no edge pixels has `α = 1`, so both weights vanish and the
/// loss is zero.
pub fn wbce(pred: &SoftEdgeMap, target: &EdgeMap, lambda: f64, clamp_eps: f64) -> Result<LossBreakdown> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ in size",
            pred.dims(),
            target.dims()
        )));
    }
    let (alpha, n_pos, n_neg) = class_weights(target)?;
    let p: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    let (pos, neg) = ops::weighted_bce(&p, target.data(), alpha, lambda * (1.0 - alpha), clamp_eps);
    Ok(LossBreakdown { total: pos + neg, positive_term: pos, negative_term: neg, alpha, n_pos, n_neg })
}

/// Records [`wbce`] on a graph; `pred` must be a `1×H×W` node.
pub fn wbce_graph<T: Element>(
    graph: &mut Graph<T>,
    pred: Var,
    target: &EdgeMap,
    lambda: f64,
    clamp_eps: f64,
) -> Result<(Var, LossBreakdown)> {
    let (_, h, w) = graph.value(pred).dims3()?;
    if (h, w) != target.dims() {
        return Err(Error::Shape(format!(
            "prediction {h}×{w} and target {:?} differ in size",
            target.dims()
        )));
    }
    let (alpha, n_pos, n_neg) = class_weights(target)?;
    let (loss, pos, neg) = graph.weighted_bce(
        pred,
        target.data(),
        T::cast(alpha),
        T::cast(lambda * (1.0 - alpha)),
        T::cast(clamp_eps),
    )?;
    let (pos, neg) = (pos.as_f64(), neg.as_f64());
    Ok((loss, LossBreakdown { total: pos + neg, positive_term: pos, negative_term: neg, alpha, n_pos, n_neg }))
}

/// Draws a `crop × crop` window's top-left corner uniformly. If the window
/// has no edge pixel it is redrawn, up to [`CROP_RESAMPLES`] times; the last
/// draw is kept either way.
pub fn draw_crop_offset(target: &EdgeMap, crop: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
    let (h, w) = target.dims();
    if h < crop || w < crop {
        return Err(Error::Data(format!("{h}×{w} map is smaller than the {crop}×{crop} crop")));
    }
    let mut draw = || (rng.random_range(0..=h - crop), rng.random_range(0..=w - crop));
    let mut offset = draw();
    for _ in 0..CROP_RESAMPLES {
        if window_has_edge(target, offset, crop) {
            break;
        }
        offset = draw();
    }
    Ok(offset)
}

fn window_has_edge(target: &EdgeMap, (top, left): (usize, usize), crop: usize) -> bool {
    (top..top + crop).any(|r| (left..left + crop).any(|c| target.get(r, c)))
}

/// Cuts the same window out of an image and its label.
pub fn crop_at(
    image: &Tensor<f32>,
    target: &EdgeMap,
    (top, left): (usize, usize),
    size: (usize, usize),
) -> Result<(Tensor<f32>, EdgeMap)> {
    let (c, h, w) = image.dims3()?;
    let (ch, cw) = size;
    if top + ch > h || left + cw > w || (h, w) != target.dims() {
        return Err(Error::Shape(format!(
            "window {ch}×{cw} at ({top},{left}) does not fit {h}×{w}"
        )));
    }
    let mut data = Vec::with_capacity(c * ch * cw);
    for plane in image.data().chunks_exact(h * w) {
        for r in top..top + ch {
            data.extend_from_slice(&plane[r * w + left..r * w + left + cw]);
        }
    }
    let mut edges = Vec::with_capacity(ch * cw);
    for r in top..top + ch {
        edges.extend_from_slice(&target.data()[r * w + left..r * w + left + cw]);
    }
    Ok((Tensor::from_vec(&[c, ch, cw], data)?, EdgeMap::from_vec(cw, ch, edges)?))
}

/// Random square crop applied identically to image and label.
pub fn crop_sample(
    image: &Tensor<f32>,
    target: &EdgeMap,
    crop: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor<f32>, EdgeMap)> {
    let offset = draw_crop_offset(target, crop, rng)?;
    crop_at(image, target, offset, (crop, crop))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    /// Provenance: every effective setting of the run.
    pub header: Vec<(String, String)>,
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    /// Plain-text form: `# key = value` header lines, a tab-separated column
    /// line, then one row per epoch.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s.push_str("epoch\tlr\tmean_loss\twall_seconds\n");
        for r in &self.records {
            let _ = writeln!(s, "{}\t{:e}\t{:.9e}\t{:.3}", r.epoch, r.lr, r.mean_loss, r.wall_seconds);
        }
        s
    }
}

/// Loss of one sample and the gradient of every parameter, in canonical
/// order.
fn sample_loss_and_grads(
    model: &SdpedModel<f32>,
    image: Tensor<f32>,
    target: &EdgeMap,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Vec<f32>>)> {
    let mut graph = Graph::new();
    let x = graph.leaf(image);
    let trace = model.forward_graph(&mut graph, x)?;
    let (loss, breakdown) = wbce_graph(&mut graph, trace.output, target, cfg.lambda, cfg.clamp_eps)?;
    let grads = graph.backward(loss)?;
    let flat = trace
        .params
        .iter()
        .flat_map(|&(w, b)| [w, b])
        .map(|v| grads.get(v).map(<[f32]>::to_vec).unwrap_or_default())
        .collect();
    Ok((breakdown.total, flat))
}

/// Minibatch Adam on WBCE over random crops of `samples`.
///
/// Per epoch the sample order is reshuffled; crop windows are redrawn every
/// `refresh_period` epochs; the learning rate follows [`lr_schedule`]. A
/// batch's loss is the mean of its per-sample sums. Per-sample gradients may
/// be computed in parallel but are always reduced in batch order, so results
/// do not depend on the worker count.
pub fn train(model: &mut SdpedModel<f32>, samples: &[ImageSample], cfg: &TrainConfig) -> Result<RunLog> {
    cfg.validate()?;
    let mut log = RunLog { header: Vec::new(), records: Vec::new() };
    log.header.extend(cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
    log.header.push(("samples".into(), samples.len().to_string()));
    log.header.push(("param_count".into(), model.param_count().to_string()));
    if cfg.epochs == 0 {
        return Ok(log);
    }
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    for s in samples {
        if s.height() < cfg.crop || s.width() < cfg.crop {
            return Err(Error::Data(format!(
                "sample {} is {}×{}, smaller than the {c}×{c} crop",
                s.id,
                s.height(),
                s.width(),
                c = cfg.crop
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::<f32>::default();
    let mut offsets = vec![(0, 0); samples.len()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut global_step = 0usize;
    model.set_trainable(true);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        if epoch % cfg.refresh_period == 0 {
            for (o, s) in offsets.iter_mut().zip(samples) {
                *o = draw_crop_offset(&s.target, cfg.crop, &mut rng)?;
            }
        }
        order.shuffle(&mut rng);
        let lr = lr_schedule(epoch, cfg.base_lr);
        let mut loss_sum = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            global_step += 1;
            let results: Vec<(f64, Vec<Vec<f32>>)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    let (img, tgt) = crop_at(&s.image, &s.target, offsets[i], (cfg.crop, cfg.crop))?;
                    sample_loss_and_grads(model, img, &tgt, cfg)
                })
                .collect::<Result<_>>()?;

            let scale = 1.0 / batch.len() as f32;
            model.zero_grad();
            for (loss, grads) in &results {
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at step {global_step} (epoch {epoch})"
                    )));
                }
                loss_sum += loss;
                for (p, g) in model.params_mut().into_iter().zip(grads) {
                    if g.is_empty() {
                        continue;
                    }
                    let scaled: Vec<f32> = g.iter().map(|v| v * scale).collect();
                    p.accumulate_grad(&scaled)?;
                }
            }
            let mut params = model.params_mut();
            adam_step(&mut params, &mut adam, lr, cfg.weight_decay).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("step {global_step}: {m}")),
                other => other,
            })?;
        }

        let record = EpochRecord {
            epoch,
            lr,
            mean_loss: loss_sum / samples.len() as f64,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("epoch {} lr {:e} loss {:.6}", record.epoch, record.lr, record.mean_loss);
        log.records.push(record);
    }
    model.set_trainable(false);
    Ok(log)
}
