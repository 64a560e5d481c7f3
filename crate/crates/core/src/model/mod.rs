//! The SDPED edge detector.
//!
//! Main path: a two-conv feature extractor, `n` cascaded skipping density
//! blocks (CSDB), and a two-conv final block. Each of those `n + 2` stages
//! emits a 64-channel map that a 1×1 side tap reduces to 21 channels. The
//! concatenated side features go through the fusing block (3×3 conv, then
//! two 1×1 convs: 256, 512, 1 channels) and a final sigmoid. No stage changes
//! spatial resolution.

mod format;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::maps::SoftEdgeMap;
use crate::tensor::{ops, Element, Gradients, Graph, Tensor, Var};

pub use format::{deserialize, load_model, save_model, serialize, FORMAT_VERSION, MAGIC};

/// SDBs per CSDB.
pub const SDBS_PER_CSDB: usize = 3;
/// Convolutions per SDB.
pub const CONVS_PER_SDB: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of CSDBs in the main path.
    pub n_csdb: usize,
    pub in_channels: usize,
    /// Output width of the first feature-extractor conv.
    pub stem_channels: usize,
    /// Output width of the first four convs in every SDB.
    pub growth: usize,
    /// Width of the main path between blocks.
    pub trunk_channels: usize,
    /// Output width of every side tap.
    pub side_channels: usize,
    /// Output widths of the three fusing convs; the last must be 1.
    pub fuse_channels: [usize; 3],
    pub leaky_slope: f64,
    /// SDBs become plain 5-conv chains (their residual add is kept).
    pub ablation_no_skipping: bool,
    /// The fusing block becomes a single 1×1 conv to one channel.
    pub ablation_single_fuse: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_csdb: 7,
            in_channels: 3,
            stem_channels: 32,
            growth: 32,
            trunk_channels: 64,
            side_channels: 21,
            fuse_channels: [256, 512, 1],
            leaky_slope: 0.2,
            ablation_no_skipping: false,
            ablation_single_fuse: false,
        }
    }
}

impl ModelConfig {
    /// Full-width model with `n` CSDBs (SDPED_n).
    pub fn with_blocks(n_csdb: usize) -> Self {
        Self { n_csdb, ..Self::default() }
    }

    /// A tiny configuration for tests and smoke runs: one CSDB, trunk 8,
    /// growth 4.
    pub fn micro() -> Self {
        Self {
            n_csdb: 1,
            in_channels: 3,
            stem_channels: 4,
            growth: 4,
            trunk_channels: 8,
            side_channels: 4,
            fuse_channels: [16, 16, 1],
            leaky_slope: 0.2,
            ablation_no_skipping: false,
            ablation_single_fuse: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("n_csdb", self.n_csdb),
            ("in_channels", self.in_channels),
            ("stem_channels", self.stem_channels),
            ("growth", self.growth),
            ("trunk_channels", self.trunk_channels),
            ("side_channels", self.side_channels),
            ("fuse_channels[0]", self.fuse_channels[0]),
            ("fuse_channels[1]", self.fuse_channels[1]),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.fuse_channels[2] != 1 {
            return Err(Error::Config(format!(
                "fusing block must end in one channel, got {}",
                self.fuse_channels[2]
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Number of stages that feed a side tap.
    pub fn stages(&self) -> usize {
        self.n_csdb + 2
    }

    /// Channel count of the concatenated side features.
    pub fn side_total(&self) -> usize {
        self.side_channels * self.stages()
    }

    /// `(in, out)` widths of the five SDB convs.
    pub fn sdb_widths(&self) -> [(usize, usize); CONVS_PER_SDB] {
        let (t, g) = (self.trunk_channels, self.growth);
        if self.ablation_no_skipping {
            [(t, g), (g, g), (g, g), (g, g), (g, t)]
        } else {
            [(t, g), (t + g, g), (t + 2 * g, g), (t + 3 * g, g), (t + 4 * g, t)]
        }
    }

    /// `(in, out, kernel)` of every conv in canonical parameter order.
    fn layer_specs(&self) -> Vec<(String, usize, usize, usize)> {
        let mut specs = vec![
            ("stem.0".to_string(), self.in_channels, self.stem_channels, 3),
            ("stem.1".to_string(), self.stem_channels, self.trunk_channels, 3),
        ];
        for b in 0..self.n_csdb {
            for s in 0..SDBS_PER_CSDB {
                for (k, (i, o)) in self.sdb_widths().into_iter().enumerate() {
                    specs.push((format!("csdb.{b}.sdb.{s}.conv.{k}"), i, o, 3));
                }
            }
        }
        specs.push(("tail.0".into(), self.trunk_channels, self.trunk_channels, 3));
        specs.push(("tail.1".into(), self.trunk_channels, self.trunk_channels, 3));
        for t in 0..self.stages() {
            specs.push((format!("tap.{t}"), self.trunk_channels, self.side_channels, 1));
        }
        if self.ablation_single_fuse {
            specs.push(("fuse.0".into(), self.side_total(), 1, 1));
        } else {
            let [a, b, c] = self.fuse_channels;
            specs.push(("fuse.0".into(), self.side_total(), a, 3));
            specs.push(("fuse.1".into(), a, b, 1));
            specs.push(("fuse.2".into(), b, c, 1));
        }
        specs
    }

    /// Exact scalar parameter count of a model built from this config.
    pub fn param_count(&self) -> usize {
        self.layer_specs().iter().map(|&(_, i, o, k)| conv_params(i, o, k)).sum()
    }
}

/// Weights plus bias of a `k×k` convolution.
pub fn conv_params(inputs: usize, outputs: usize, kernel: usize) -> usize {
    inputs * outputs * kernel * kernel + outputs
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T: Element = f32> {
    name: String,
    slot: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> ConvLayer<T> {
    fn zeros(name: String, slot: usize, inputs: usize, outputs: usize, kernel: usize) -> Self {
        Self {
            name,
            slot,
            weight: Tensor::zeros(&[outputs, inputs, kernel, kernel]).expect("positive widths"),
            bias: Tensor::zeros(&[outputs]).expect("positive widths"),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn padding(&self) -> usize {
        (self.kernel_size() - 1) / 2
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    /// Eager forward of this conv on a `C×H×W` map.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(x, &self.weight, &self.bias, self.padding())
    }
}

/// Skipping density block: five 3×3 convs with dense skips and a residual.
#[derive(Clone, Debug, PartialEq)]
pub struct Sdb<T: Element = f32> {
    pub convs: Vec<ConvLayer<T>>,
}

/// Three SDBs in cascade.
#[derive(Clone, Debug, PartialEq)]
pub struct Csdb<T: Element = f32> {
    pub sdbs: Vec<Sdb<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpedModel<T: Element = f32> {
    config: ModelConfig,
    pub stem: Vec<ConvLayer<T>>,
    pub blocks: Vec<Csdb<T>>,
    pub tail: Vec<ConvLayer<T>>,
    pub taps: Vec<ConvLayer<T>>,
    pub fuse: Vec<ConvLayer<T>>,
}

impl<T: Element> SdpedModel<T> {
    /// Builds the architecture with every parameter zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = config
            .layer_specs()
            .into_iter()
            .enumerate()
            .map(|(slot, (name, i, o, k))| ConvLayer::zeros(name, slot, i, o, k));
        let mut take = |n: usize| -> Vec<ConvLayer<T>> { layers.by_ref().take(n).collect() };

        let stem = take(2);
        let blocks = (0..config.n_csdb)
            .map(|_| Csdb {
                sdbs: (0..SDBS_PER_CSDB).map(|_| Sdb { convs: take(CONVS_PER_SDB) }).collect(),
            })
            .collect();
        let tail = take(2);
        let taps = take(config.stages());
        let fuse = take(if config.ablation_single_fuse { 1 } else { 3 });
        Ok(Self { config, stem, blocks, tail, taps, fuse })
    }

    /// Builds the architecture and draws initial weights from `seed`:
    /// zero-mean normal kernels with He scaling for leaky ReLU
    /// (`std = sqrt(2 / ((1 + slope²) · fan_in))`), zero biases.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        let gain = 2.0 / (1.0 + model.config.leaky_slope.powi(2));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in model.layers_mut() {
            let [_, c, k, _] = layer.weight.shape()[..] else { unreachable!() };
            let std = (gain / (c * k * k) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in layer.weight.data_mut() {
                *w = T::cast(normal.sample(&mut rng));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// All convs in canonical order.
    pub fn layers(&self) -> Vec<&ConvLayer<T>> {
        let mut out: Vec<&ConvLayer<T>> = self.stem.iter().collect();
        for b in &self.blocks {
            for s in &b.sdbs {
                out.extend(s.convs.iter());
            }
        }
        out.extend(self.tail.iter());
        out.extend(self.taps.iter());
        out.extend(self.fuse.iter());
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvLayer<T>> {
        let mut out: Vec<&mut ConvLayer<T>> = self.stem.iter_mut().collect();
        for b in &mut self.blocks {
            for s in &mut b.sdbs {
                out.extend(s.convs.iter_mut());
            }
        }
        out.extend(self.tail.iter_mut());
        out.extend(self.taps.iter_mut());
        out.extend(self.fuse.iter_mut());
        out
    }

    /// `(name, tensor)` for every parameter in canonical order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers()
            .into_iter()
            .flat_map(|l| {
                [(format!("{}.weight", l.name), &l.weight), (format!("{}.bias", l.name), &l.bias)]
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// Allocates (or drops) gradient buffers on every parameter.
    pub fn set_trainable(&mut self, on: bool) {
        for p in self.params_mut() {
            if p.requires_grad() != on {
                p.set_requires_grad(on);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn cast<U: Element>(&self) -> SdpedModel<U> {
        let conv = |l: &ConvLayer<T>| ConvLayer {
            name: l.name.clone(),
            slot: l.slot,
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        SdpedModel {
            config: self.config.clone(),
            stem: self.stem.iter().map(conv).collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Csdb {
                    sdbs: b.sdbs.iter().map(|s| Sdb { convs: s.convs.iter().map(conv).collect() }).collect(),
                })
                .collect(),
            tail: self.tail.iter().map(conv).collect(),
            taps: self.taps.iter().map(conv).collect(),
            fuse: self.fuse.iter().map(conv).collect(),
        }
    }

    fn check_input(&self, image: &Tensor<T>) -> Result<()> {
        let (c, _, _) = image.dims3()?;
        if c != self.config.in_channels {
            return Err(shape_err!(
                "model expects {} input channels, image has {c}",
                self.config.in_channels
            ));
        }
        Ok(())
    }

    /// Eager inference; returns the `1×H×W` probability tensor.
    pub fn forward_tensor(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(image)?;
        let mut exec = Eager { slope: T::cast(self.config.leaky_slope), probe: None };
        self.run(&mut exec, image.clone())
    }

    /// Eager inference that also returns the input of every leaky ReLU, in
    /// evaluation order. The network is not differentiable where any of
    /// these is zero.
    pub fn forward_with_preactivations(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        self.check_input(image)?;
        let mut exec = Eager { slope: T::cast(self.config.leaky_slope), probe: Some(Vec::new()) };
        let out = self.run(&mut exec, image.clone())?;
        Ok((out, exec.probe.unwrap_or_default()))
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<SoftEdgeMap> {
        SoftEdgeMap::from_tensor(&self.forward_tensor(image)?)
    }

    /// Eager forward through one SDB.
    pub fn sdb_forward(&self, sdb: &Sdb<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut exec = Eager { slope: T::cast(self.config.leaky_slope), probe: None };
        self.run_sdb(&mut exec, sdb, x.clone())
    }

    /// Eager forward through one CSDB.
    pub fn csdb_forward(&self, block: &Csdb<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut exec = Eager { slope: T::cast(self.config.leaky_slope), probe: None };
        self.run_csdb(&mut exec, block, x.clone())
    }

    /// Records a forward pass on `graph`. Every parameter becomes a
    /// gradient-tracking leaf; the returned trace maps them back to slots.
    pub fn forward_graph(&self, graph: &mut Graph<T>, image: Var) -> Result<ForwardTrace> {
        self.check_input(graph.value(image))?;
        let params = self
            .layers()
            .iter()
            .map(|l| (graph.parameter(&l.weight), graph.parameter(&l.bias)))
            .collect();
        let mut exec = Recording { graph, params, slope: T::cast(self.config.leaky_slope) };
        let output = self.run(&mut exec, image)?;
        Ok(ForwardTrace { output, params: exec.params })
    }

    /// Adds the gradients of a recorded pass onto the parameters' gradient
    /// buffers (allocating them if needed).
    pub fn accumulate_gradients(&mut self, trace: &ForwardTrace, grads: &Gradients<T>) -> Result<()> {
        for layer in self.layers_mut() {
            for (var, tensor) in [
                (trace.params[layer.slot].0, &mut layer.weight),
                (trace.params[layer.slot].1, &mut layer.bias),
            ] {
                if !tensor.requires_grad() {
                    tensor.set_requires_grad(true);
                }
                if let Some(g) = grads.get(var) {
                    tensor.accumulate_grad(g)?;
                }
            }
        }
        Ok(())
    }

    fn run<E: Exec<T>>(&self, e: &mut E, x: E::V) -> Result<E::V> {
        let mut h = e.conv_act(&x, &self.stem[0])?;
        h = e.conv_act(&h, &self.stem[1])?;
        let mut side = Vec::with_capacity(self.config.stages());
        side.push(e.conv(&h, &self.taps[0])?);
        for (i, block) in self.blocks.iter().enumerate() {
            h = self.run_csdb(e, block, h)?;
            side.push(e.conv(&h, &self.taps[i + 1])?);
        }
        h = e.conv_act(&h, &self.tail[0])?;
        h = e.conv_act(&h, &self.tail[1])?;
        side.push(e.conv(&h, &self.taps[self.config.n_csdb + 1])?);
        drop(h);

        let fused = e.concat(&side)?;
        drop(side);
        let logits = match &self.fuse[..] {
            [single] => e.conv(&fused, single)?,
            [a, b, c] => {
                let f = e.conv_act(&fused, a)?;
                let f = e.conv_act(&f, b)?;
                e.conv(&f, c)?
            }
            _ => unreachable!("fuse has one or three layers"),
        };
        Ok(e.sigmoid(logits))
    }

    fn run_csdb<E: Exec<T>>(&self, e: &mut E, block: &Csdb<T>, x: E::V) -> Result<E::V> {
        let mut h = x;
        for sdb in &block.sdbs {
            h = self.run_sdb(e, sdb, h)?;
        }
        Ok(h)
    }

    fn run_sdb<E: Exec<T>>(&self, e: &mut E, sdb: &Sdb<T>, x: E::V) -> Result<E::V> {
        let last = if self.config.ablation_no_skipping {
            let mut h = e.conv_act(&x, &sdb.convs[0])?;
            for conv in &sdb.convs[1..] {
                h = e.conv_act(&h, conv)?;
            }
            h
        } else {
            let mut feats = vec![x.clone()];
            let mut input = x.clone();
            for (k, conv) in sdb.convs.iter().enumerate() {
                let y = e.conv_act(&input, conv)?;
                if k + 1 == sdb.convs.len() {
                    input = y;
                    break;
                }
                feats.push(y);
                input = e.concat(&feats)?;
            }
            input
        };
        e.add(&last, &x)
    }
}

/// Parameter leaves of one recorded forward pass, `(weight, bias)` per conv
/// in canonical order.
pub struct ForwardTrace {
    pub output: Var,
    pub params: Vec<(Var, Var)>,
}

/// Execution backend for the shared forward definition.
trait Exec<T: Element> {
    type V: Clone;
    fn conv(&mut self, x: &Self::V, layer: &ConvLayer<T>) -> Result<Self::V>;
    fn act(&mut self, x: Self::V) -> Self::V;
    fn sigmoid(&mut self, x: Self::V) -> Self::V;
    fn concat(&mut self, parts: &[Self::V]) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;

    fn conv_act(&mut self, x: &Self::V, layer: &ConvLayer<T>) -> Result<Self::V> {
        let y = self.conv(x, layer)?;
        Ok(self.act(y))
    }
}

struct Eager<T: Element> {
    slope: T,
    /// When set, collects every leaky-ReLU input.
    probe: Option<Vec<Tensor<T>>>,
}

impl<T: Element> Exec<T> for Eager<T> {
    type V = Tensor<T>;

    fn conv(&mut self, x: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
        layer.apply(x)
    }

    fn act(&mut self, x: Tensor<T>) -> Tensor<T> {
        if let Some(p) = &mut self.probe {
            p.push(x.clone());
        }
        ops::leaky_relu(&x, self.slope)
    }

    fn sigmoid(&mut self, x: Tensor<T>) -> Tensor<T> {
        ops::sigmoid(&x)
    }

    fn concat(&mut self, parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        ops::concat(&refs)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::add(a, b)
    }
}

struct Recording<'g, T: Element> {
    graph: &'g mut Graph<T>,
    params: Vec<(Var, Var)>,
    slope: T,
}

impl<T: Element> Exec<T> for Recording<'_, T> {
    type V = Var;

    fn conv(&mut self, x: &Var, layer: &ConvLayer<T>) -> Result<Var> {
        let (w, b) = self.params[layer.slot];
        self.graph.conv2d(*x, w, b, layer.padding())
    }

    fn act(&mut self, x: Var) -> Var {
        self.graph.leaky_relu(x, self.slope)
    }

    fn sigmoid(&mut self, x: Var) -> Var {
        self.graph.sigmoid(x)
    }

    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.graph.concat(parts)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.graph.add(*a, *b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_count() {
        assert_eq!(conv_params(64, 32, 3), 18_464);
    }

    #[test]
    fn one_sdb_count_by_hand() {
        // 64→32, 96→32, 128→32, 160→32, 192→64, all 3×3 with bias.
        let hand = (64 * 32 * 9 + 32)
            + (96 * 32 * 9 + 32)
            + (128 * 32 * 9 + 32)
            + (160 * 32 * 9 + 32)
            + (192 * 64 * 9 + 64);
        assert_eq!(hand, 239_808);
        let cfg = ModelConfig::default();
        let sdb: usize = cfg.sdb_widths().iter().map(|&(i, o)| conv_params(i, o, 3)).sum();
        assert_eq!(sdb, 239_808);
    }

    #[test]
    fn default_count_matches_hand_total() {
        // stem + 7 CSDBs + tail + 9 taps + fuse, summed by hand.
        let stem = 896 + 18_496;
        let csdbs = 7 * 3 * 239_808;
        let tail = 2 * 36_928;
        let taps = 9 * (64 * 21 + 21);
        let fuse = (189 * 256 * 9 + 256) + (256 * 512 + 512) + (512 + 1);
        assert_eq!(ModelConfig::default().param_count(), stem + csdbs + tail + taps + fuse);
        assert_eq!(ModelConfig::default().param_count(), 5_709_310);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::micro();
        assert!(c.validate().is_ok());
        c.n_csdb = 0;
        assert!(matches!(SdpedModel::<f32>::build(c.clone(), 0), Err(Error::Config(_))));
        c = ModelConfig::micro();
        c.fuse_channels[2] = 2;
        assert!(c.validate().is_err());
        c = ModelConfig::micro();
        c.leaky_slope = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn structure_follows_flags() {
        let mut c = ModelConfig::micro();
        c.n_csdb = 2;
        let m = SdpedModel::<f32>::build(c.clone(), 1).unwrap();
        assert_eq!(m.blocks.len(), 2);
        assert!(m.blocks.iter().all(|b| b.sdbs.len() == 3));
        assert_eq!(m.taps.len(), 4);
        assert_eq!(m.fuse.len(), 3);
        assert_eq!(m.fuse[0].weight.shape(), &[16, 16, 3, 3]);
        c.ablation_single_fuse = true;
        let m = SdpedModel::<f32>::build(c, 1).unwrap();
        assert_eq!(m.fuse.len(), 1);
        assert_eq!(m.fuse[0].weight.shape(), &[1, 16, 1, 1]);
    }

    #[test]
    fn names_are_unique() {
        let m = SdpedModel::<f32>::build(ModelConfig::micro(), 0).unwrap();
        let names: std::collections::HashSet<_> = m.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), m.named_params().len());
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let m = SdpedModel::<f32>::build(ModelConfig::micro(), 0).unwrap();
        let x = Tensor::zeros(&[1, 8, 8]).unwrap();
        assert!(matches!(m.forward(&x), Err(Error::Shape(_))));
    }
}
