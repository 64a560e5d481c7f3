//! Deterministic training-set augmentation.
//!
//! Every source pair is split in half, longer side first, until both sides
//! are below `max_side`. Each tile then yields eight pairs: four clockwise
//! quarter turns, each with and without a horizontal flip. Optionally every
//! ground-truth map is also added as an input of its own (replicated to three
//! channels) with itself as target, before tiling, so injected samples get
//! the same treatment.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::io::ImageSample;
use crate::maps::EdgeMap;
use crate::tensor::Tensor;
use crate::train::crop_at;

pub const DEFAULT_MAX_SIDE: usize = 640;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Tiles of a `height × width` area, row-major. A side of odd length `L`
/// splits into `floor(L/2)` then `ceil(L/2)`; ties between the sides split
/// the height.
pub fn split_rects(height: usize, width: usize, max_side: usize) -> Result<Vec<Rect>> {
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!("cannot tile a {height}×{width} image")));
    }
    if max_side < 2 {
        return Err(Error::Config(format!("max_side must be at least 2, got {max_side}")));
    }
    let mut done = Vec::new();
    let mut pending = vec![Rect { top: 0, left: 0, height, width }];
    while let Some(r) = pending.pop() {
        if r.height < max_side && r.width < max_side {
            done.push(r);
        } else if r.height >= r.width {
            let h0 = r.height / 2;
            pending.push(Rect { height: h0, ..r });
            pending.push(Rect { top: r.top + h0, height: r.height - h0, ..r });
        } else {
            let w0 = r.width / 2;
            pending.push(Rect { width: w0, ..r });
            pending.push(Rect { left: r.left + w0, width: r.width - w0, ..r });
        }
    }
    done.sort_by_key(|r| (r.top, r.left));
    Ok(done)
}

/// Cuts an image/label pair into tiles per [`split_rects`].
pub fn split_recursive(image: &Tensor<f32>, target: &EdgeMap, max_side: usize) -> Result<Vec<(Tensor<f32>, EdgeMap)>> {
    let (_, h, w) = image.dims3()?;
    if (h, w) != target.dims() {
        return Err(Error::Shape(format!("image {h}×{w} and label {:?} differ", target.dims())));
    }
    split_rects(h, w, max_side)?
        .into_iter()
        .map(|r| crop_at(image, target, (r.top, r.left), (r.height, r.width)))
        .collect()
}

/// One of the eight rotation/flip transforms. Id `k + 4f` is an optional
/// horizontal flip (`f`) followed by `k` clockwise quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transform(u8);

impl Transform {
    pub const IDENTITY: Transform = Transform(0);

    pub fn all() -> [Transform; 8] {
        std::array::from_fn(|i| Transform(i as u8))
    }

    pub fn new(id: u8) -> Result<Self> {
        if id < 8 {
            Ok(Transform(id))
        } else {
            Err(Error::Config(format!("transform id {id} is not in 0..8")))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn quarter_turns(self) -> u8 {
        self.0 % 4
    }

    pub fn flipped(self) -> bool {
        self.0 >= 4
    }

    pub fn output_dims(self, height: usize, width: usize) -> (usize, usize) {
        if self.quarter_turns().is_multiple_of(2) {
            (height, width)
        } else {
            (width, height)
        }
    }

    /// Where pixel `(row, col)` of a `height × width` map lands.
    pub fn map_point(self, row: usize, col: usize, height: usize, width: usize) -> (usize, usize) {
        let (mut r, mut c, mut h, mut w) = (row, col, height, width);
        if self.flipped() {
            c = w - 1 - c;
        }
        for _ in 0..self.quarter_turns() {
            // Clockwise: (r, c) in h×w goes to (c, h-1-r) in w×h.
            (r, c) = (c, h - 1 - r);
            (h, w) = (w, h);
        }
        (r, c)
    }

    fn remap<T: Copy + Default>(self, plane: &[T], height: usize, width: usize) -> Vec<T> {
        let (_, out_w) = self.output_dims(height, width);
        let mut out = vec![T::default(); plane.len()];
        for r in 0..height {
            for c in 0..width {
                let (nr, nc) = self.map_point(r, c, height, width);
                out[nr * out_w + nc] = plane[r * width + c];
            }
        }
        out
    }

    pub fn apply_map(self, map: &EdgeMap) -> EdgeMap {
        let (h, w) = map.dims();
        let (oh, ow) = self.output_dims(h, w);
        EdgeMap::from_vec(ow, oh, self.remap(map.data(), h, w)).expect("permutation keeps size")
    }

    pub fn apply_image(self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (c, h, w) = image.dims3()?;
        let (oh, ow) = self.output_dims(h, w);
        let mut data = Vec::with_capacity(image.numel());
        for plane in image.data().chunks_exact(h * w) {
            data.extend(self.remap(plane, h, w));
        }
        Tensor::from_vec(&[c, oh, ow], data)
    }
}

/// The eight transformed copies of a pair, in transform-id order.
pub fn transforms8(image: &Tensor<f32>, target: &EdgeMap) -> Result<Vec<(Tensor<f32>, EdgeMap)>> {
    Transform::all()
        .into_iter()
        .map(|t| Ok((t.apply_image(image)?, t.apply_map(target))))
        .collect()
}

/// Appends, for every sample, a copy whose input is its own label.
pub fn inject_noiseless(samples: &[ImageSample]) -> Vec<ImageSample> {
    let mut out = samples.to_vec();
    out.extend(samples.iter().map(noiseless_sample));
    out
}

fn noiseless_sample(s: &ImageSample) -> ImageSample {
    ImageSample {
        id: s.id.clone(),
        image: s.target.to_rgb_tensor(),
        target: s.target.clone(),
        source: s.source.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SampleDescriptor {
    pub source: String,
    pub rect: Rect,
    pub transform: Transform,
    /// Input is the label itself.
    pub noiseless: bool,
}

impl SampleDescriptor {
    /// File stem of the derived pair.
    pub fn stem(&self) -> String {
        format!(
            "{}__{}__r{}c{}__t{}",
            self.source,
            if self.noiseless { "gt" } else { "img" },
            self.rect.top,
            self.rect.left,
            self.transform.id()
        )
    }

    /// Builds the derived pair from its source in `samples`; the result's id
    /// is [`SampleDescriptor::stem`].
    pub fn materialize(&self, samples: &[ImageSample]) -> Result<ImageSample> {
        let src = samples
            .iter()
            .find(|s| s.id == self.source)
            .ok_or_else(|| Error::Data(format!("plan references unknown source {}", self.source)))?;
        let image = if self.noiseless { src.target.to_rgb_tensor() } else { src.image.clone() };
        let r = self.rect;
        let (tile, label) = crop_at(&image, &src.target, (r.top, r.left), (r.height, r.width))?;
        Ok(ImageSample {
            id: self.stem(),
            image: self.transform.apply_image(&tile)?,
            target: self.transform.apply_map(&label),
            source: src.source.clone(),
        })
    }
}

/// Ordered description of every derived training pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentPlan {
    pub max_side: usize,
    pub inject_noiseless: bool,
    pub descriptors: Vec<SampleDescriptor>,
}

const PLAN_COLUMNS: &str = "source\ttop\tleft\theight\twidth\ttransform\tnoiseless";

impl AugmentPlan {
    /// Plans the derived set from `(id, height, width)` of each source, in
    /// the given order: originals first, then injected labels; within a
    /// source, tiles row-major, then transforms by id.
    pub fn build(sources: &[(String, usize, usize)], max_side: usize, inject_noiseless: bool) -> Result<Self> {
        let mut descriptors = Vec::new();
        let passes: &[bool] = if inject_noiseless { &[false, true] } else { &[false] };
        for &noiseless in passes {
            for (id, h, w) in sources {
                for rect in split_rects(*h, *w, max_side)? {
                    for transform in Transform::all() {
                        descriptors.push(SampleDescriptor { source: id.clone(), rect, transform, noiseless });
                    }
                }
            }
        }
        Ok(Self { max_side, inject_noiseless, descriptors })
    }

    pub fn for_samples(samples: &[ImageSample], max_side: usize, inject_noiseless: bool) -> Result<Self> {
        let sources: Vec<_> = samples.iter().map(|s| (s.id.clone(), s.height(), s.width())).collect();
        Self::build(&sources, max_side, inject_noiseless)
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    /// Produces the derived pairs, in plan order.
    pub fn materialize(&self, samples: &[ImageSample]) -> Result<Vec<ImageSample>> {
        self.descriptors.iter().map(|d| d.materialize(samples)).collect()
    }

    /// Tab-separated table: two `#` header lines, a column line, one row per
    /// descriptor.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# sdped augment plan");
        let _ = writeln!(s, "# max_side={} noiseless={}", self.max_side, self.inject_noiseless);
        s.push_str(PLAN_COLUMNS);
        s.push('\n');
        for d in &self.descriptors {
            let r = d.rect;
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                d.source,
                r.top,
                r.left,
                r.height,
                r.width,
                d.transform.id(),
                d.noiseless as u8
            );
        }
        s
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut max_side = DEFAULT_MAX_SIDE;
        let mut inject = false;
        let mut descriptors = Vec::new();
        let bad = |line: usize, m: &str| Error::Data(format!("augment plan line {}: {m}", line + 1));
        for (n, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("max_side", v)) => max_side = v.parse().map_err(|_| bad(n, "bad max_side"))?,
                        Some(("noiseless", v)) => inject = v.parse().map_err(|_| bad(n, "bad noiseless flag"))?,
                        _ => {}
                    }
                }
                continue;
            }
            if line == PLAN_COLUMNS || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(bad(n, "expected 7 tab-separated fields"));
            }
            let num = |i: usize| f[i].parse::<usize>().map_err(|_| bad(n, "bad number"));
            descriptors.push(SampleDescriptor {
                source: f[0].to_string(),
                rect: Rect { top: num(1)?, left: num(2)?, height: num(3)?, width: num(4)? },
                transform: Transform::new(num(5)? as u8)?,
                noiseless: match f[6] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad(n, "noiseless flag must be 0 or 1")),
                },
            });
        }
        Ok(Self { max_side, inject_noiseless: inject, descriptors })
    }
}
