//! Dataset layout, annotation merging, partition manifests, and PNG
//! persistence of images, labels and predictions.
//!
//! A dataset root holds `images/<stem>.png` (RGB) and, for each stem, either
//! `edges/<stem>.png` or a directory `edges/<stem>/` of annotation PNGs that
//! are merged with a pixelwise OR.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, GrayImage, ImageReader, RgbImage};

use crate::error::{shape_err, Error, Result};
use crate::maps::{EdgeMap, SoftEdgeMap};
use crate::tensor::Tensor;

/// Gray levels strictly above this are edges.
pub const LABEL_THRESHOLD: u8 = 127;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub id: String,
    /// `3×H×W`, values in [0, 1].
    pub image: Tensor<f32>,
    pub target: EdgeMap,
    pub source: Option<PathBuf>,
}

impl ImageSample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, target: EdgeMap) -> Result<Self> {
        let (c, h, w) = image.dims3()?;
        if c != 3 {
            return Err(shape_err!("sample image must have 3 channels, got {c}"));
        }
        if (h, w) != target.dims() {
            return Err(Error::Data(format!(
                "image is {h}×{w} but its label is {}×{}",
                target.height(),
                target.width()
            )));
        }
        Ok(Self { id: id.into(), image, target, source: None })
    }

    pub fn height(&self) -> usize {
        self.target.height()
    }

    pub fn width(&self) -> usize {
        self.target.width()
    }
}

/// Loads every `images/<stem>.png` with its label, sorted by stem.
pub fn load_dataset(root: &Path) -> Result<Vec<ImageSample>> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let images_dir = root.join("images");
    let edges_dir = root.join("edges");
    let image_stems = png_stems(&images_dir)?;
    let edge_stems = label_stems(&edges_dir)?;

    let unmatched: Vec<_> = image_stems.symmetric_difference(&edge_stems).cloned().collect();
    if !unmatched.is_empty() {
        return Err(Error::Data(format!(
            "stems without a counterpart between images/ and edges/: {}",
            unmatched.join(", ")
        )));
    }

    image_stems
        .into_iter()
        .map(|stem| {
            let image_path = images_dir.join(format!("{stem}.png"));
            let image = load_rgb(&image_path)?;
            let target = load_annotation(&edges_dir, &stem)?;
            let mut sample = ImageSample::new(stem.clone(), image, target)
                .map_err(|e| Error::Data(format!("sample {stem}: {e}")))?;
            sample.source = Some(image_path);
            Ok(sample)
        })
        .collect()
}

/// Stems present in a label directory, as `<stem>.png` or `<stem>/`.
pub fn label_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let mut stems = png_stems(dir)?;
    for entry in read_dir(dir)? {
        if entry.is_dir() {
            if let Some(name) = entry.file_name().and_then(|n| n.to_str()) {
                stems.insert(name.to_string());
            }
        }
    }
    Ok(stems)
}

/// The label for `stem`: `dir/<stem>/` merged if that directory exists,
/// otherwise `dir/<stem>.png`.
pub fn load_annotation(dir: &Path, stem: &str) -> Result<EdgeMap> {
    let label_dir = dir.join(stem);
    if !label_dir.is_dir() {
        return load_label(&dir.join(format!("{stem}.png")));
    }
    let files: Vec<PathBuf> = read_dir(&label_dir)?.into_iter().filter(|p| is_png(p)).collect();
    if files.is_empty() {
        return Err(Error::Data(format!("annotation directory for {stem} is empty")));
    }
    let maps = files.iter().map(|p| load_label(p)).collect::<Result<Vec<_>>>()?;
    merge_annotations(&maps).map_err(|e| Error::Data(format!("annotations of {stem}: {e}")))
}

/// Pixelwise OR of equally sized annotations.
pub fn merge_annotations(maps: &[EdgeMap]) -> Result<EdgeMap> {
    let first = maps.first().ok_or_else(|| shape_err!("no annotations to merge"))?;
    let mut merged = first.clone();
    for m in &maps[1..] {
        if m.dims() != first.dims() {
            return Err(shape_err!(
                "annotation {}×{} does not match {}×{}",
                m.height(),
                m.width(),
                first.height(),
                first.width()
            ));
        }
        for (r, c) in m.points() {
            merged.set(r, c, true);
        }
    }
    Ok(merged)
}

/// 8-bit RGB PNG to a `3×H×W` tensor scaled by 1/255. Grayscale inputs are
/// replicated to three channels.
pub fn load_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

pub fn save_rgb(image: &Tensor<f32>, path: &Path) -> Result<()> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(shape_err!("expected a 3-channel image, got {c}"));
    }
    let d = image.data();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([0, 1, 2].map(|ch| quantize(d[ch * h * w + i])))
    });
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Gray PNG label binarized at `> 127`.
pub fn load_label(path: &Path) -> Result<EdgeMap> {
    let img = open(path)?.to_luma8();
    let data = img.pixels().map(|p| p[0] > LABEL_THRESHOLD).collect();
    EdgeMap::from_vec(img.width() as usize, img.height() as usize, data)
}

pub fn save_label(map: &EdgeMap, path: &Path) -> Result<()> {
    let w = map.width();
    let img = GrayImage::from_fn(w as u32, map.height() as u32, |x, y| {
        image::Luma([if map.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Writes an 8-bit gray PNG with `pixel = round(255·p)`, halves rounding up.
pub fn save_prediction(pred: &SoftEdgeMap, path: &Path) -> Result<()> {
    if let Some(p) = pred.data().iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Data(format!("prediction value {p} outside [0, 1]")));
    }
    let w = pred.width();
    let d = pred.data();
    let img = GrayImage::from_fn(w as u32, pred.height() as u32, |x, y| {
        image::Luma([quantize(d[y as usize * w + x as usize])])
    });
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Reads a prediction PNG back as `pixel / 255`. Only 8-bit gray files are
/// accepted.
pub fn load_prediction(path: &Path) -> Result<SoftEdgeMap> {
    let img = open(path)?;
    if img.color() != ColorType::L8 {
        return Err(Error::Data(format!(
            "{} is {:?}, predictions must be 8-bit grayscale",
            path.display(),
            img.color()
        )));
    }
    let img = img.into_luma8();
    let data = img.pixels().map(|p| p[0] as f32 / 255.0).collect();
    SoftEdgeMap::from_vec(img.width() as usize, img.height() as usize, data)
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::image(path, e))
}

fn read_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_png(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Stems of the `.png` files directly inside `dir`, sorted.
pub fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    Ok(read_dir(dir)?
        .into_iter()
        .filter(|p| is_png(p))
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
        .collect())
}

/// Fields of a partition name `Dataset-Pk-a-b-Ec`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionHeader {
    pub dataset: String,
    pub index: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs: usize,
}

impl PartitionHeader {
    pub fn name(&self) -> String {
        format!(
            "{}-P{}-{}-{}-E{}",
            self.dataset, self.index, self.n_train, self.n_test, self.epochs
        )
    }
}

/// A named train/test split with its id lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionManifest {
    pub header: PartitionHeader,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl PartitionManifest {
    pub fn new(header: PartitionHeader, train: Vec<String>, test: Vec<String>) -> Result<Self> {
        let m = Self { header, train, test };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if self.train.len() != h.n_train || self.test.len() != h.n_test {
            return Err(Error::Data(format!(
                "partition {} declares {}/{} train/test ids but lists {}/{}",
                h.name(),
                h.n_train,
                h.n_test,
                self.train.len(),
                self.test.len()
            )));
        }
        let train: BTreeSet<&String> = self.train.iter().collect();
        if train.len() != self.train.len() {
            return Err(Error::Data(format!("partition {} repeats a train id", h.name())));
        }
        if let Some(dup) = self.test.iter().find(|id| train.contains(id)) {
            return Err(Error::Data(format!("partition {}: id {dup} is in both splits", h.name())));
        }
        Ok(())
    }
}

/// Parses `Dataset-Pk-a-b-Ec`. The dataset name is alphanumeric (plus `_`).
pub fn parse_partition(name: &str) -> Result<PartitionHeader> {
    let mut p = NameParser { s: name, pos: 0 };
    let dataset = p.word()?;
    p.dash()?;
    p.literal('P', "partition field 'P<k>'")?;
    let index = p.number("partition index")?;
    p.dash()?;
    let n_train = p.number("train count")?;
    p.dash()?;
    let n_test = p.number("test count")?;
    if p.pos == name.len() {
        return Err(Error::Parse { position: p.pos, message: "missing epoch field 'E<c>'".into() });
    }
    p.dash()?;
    p.literal('E', "epoch field 'E<c>'")?;
    let epochs = p.number("epoch count")?;
    if p.pos != name.len() {
        return Err(Error::Parse { position: p.pos, message: "unexpected trailing characters".into() });
    }
    Ok(PartitionHeader { dataset, index, n_train, n_test, epochs })
}

struct NameParser<'a> {
    s: &'a str,
    pos: usize,
}

impl NameParser<'_> {
    fn rest(&self) -> &str {
        &self.s[self.pos..]
    }

    fn word(&mut self) -> Result<String> {
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(self.rest().len());
        if len == 0 {
            return Err(Error::Parse { position: self.pos, message: "expected dataset name".into() });
        }
        let w = self.rest()[..len].to_string();
        self.pos += len;
        Ok(w)
    }

    fn dash(&mut self) -> Result<()> {
        self.literal('-', "'-'")
    }

    fn literal(&mut self, ch: char, what: &str) -> Result<()> {
        if self.rest().starts_with(ch) {
            self.pos += ch.len_utf8();
            Ok(())
        } else {
            Err(Error::Parse { position: self.pos, message: format!("expected {what}") })
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let len = self.rest().find(|c: char| !c.is_ascii_digit()).unwrap_or(self.rest().len());
        if len == 0 {
            return Err(Error::Parse { position: self.pos, message: format!("expected {what}") });
        }
        let v = self.rest()[..len].parse().map_err(|_| Error::Parse {
            position: self.pos,
            message: format!("{what} out of range"),
        })?;
        self.pos += len;
        Ok(v)
    }
}

/// Header file extension; the id lists sit next to it as `<name>.train` and
/// `<name>.test`, one id per line.
pub const PARTITION_EXT: &str = "partition";

/// Loads `<dir>/<name>.partition` together with its sibling id lists. The
/// header file's stem is the partition name; its contents are free-form
/// comments.
pub fn load_partition(header_path: &Path) -> Result<PartitionManifest> {
    if !header_path.is_file() {
        return Err(Error::Data(format!("partition header {} not found", header_path.display())));
    }
    let name = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Data(format!("bad partition path {}", header_path.display())))?;
    let header = parse_partition(name)?;
    let read_ids = |ext: &str| -> Result<Vec<String>> {
        let path = header_path.with_extension(ext);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect())
    };
    PartitionManifest::new(header, read_ids("train")?, read_ids("test")?)
}

/// Writes the header and id-list files into `dir`; returns the header path.
pub fn write_partition(dir: &Path, manifest: &PartitionManifest) -> Result<PathBuf> {
    manifest.validate()?;
    let name = manifest.header.name();
    let header = dir.join(format!("{name}.{PARTITION_EXT}"));
    let write = |path: PathBuf, body: String| fs::write(&path, body).map_err(|e| Error::io(&path, e));
    write(header.clone(), format!("# partition {name}\n"))?;
    write(dir.join(format!("{name}.train")), lines(&manifest.train))?;
    write(dir.join(format!("{name}.test")), lines(&manifest.test))?;
    Ok(header)
}

fn lines(ids: &[String]) -> String {
    ids.iter().map(|id| format!("{id}\n")).collect()
}
