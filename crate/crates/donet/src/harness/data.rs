//! Datasets: two synthetic 2-d point-cloud families (moons, spirals), an IDX
//! image loader, and seeded train/test splitting.
//!
//! All features live in `[0,1]` so the perturbation machinery applies
//! uniformly. Synthetic clouds are generated on fixed parametric loci, then
//! jittered and affinely mapped into the unit square with constants chosen so
//! the noiseless loci sit strictly inside it.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blocks::InputShape;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::util::{named_seed, rng_from};

/// A labelled dataset with flat row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Per-sample shape (the batch dimension is added by [`Dataset::batch`]).
    pub input: InputShape,
    pub xs: Vec<f64>,
    pub ys: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    /// Gather the given rows into a batch tensor plus labels.
    pub fn batch(&self, rows: &[usize]) -> (Tensor, Vec<usize>) {
        let per = self.input.numel();
        let mut data = Vec::with_capacity(rows.len() * per);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(&self.xs[r * per..(r + 1) * per]);
            labels.push(self.ys[r]);
        }
        let t = Tensor::new(self.input.batch_shape(rows.len()), data)
            .expect("gathered batch is consistent by construction");
        (t, labels)
    }

    /// The whole dataset as one batch, in storage order.
    pub fn full_batch(&self) -> (Tensor, Vec<usize>) {
        let rows: Vec<usize> = (0..self.len()).collect();
        self.batch(&rows)
    }

    /// Seeded shuffle split into (train, test). The test side receives
    /// `round(n·test_fraction)` samples, kept within `[1, n-1]`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::config(format!(
                "test fraction must lie strictly between 0 and 1, got {test_fraction}"
            )));
        }
        if self.len() < 2 {
            return Err(Error::config("splitting needs at least two samples"));
        }
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from(named_seed(seed, "split")));
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        let test = self.gather(&order[..n_test]);
        let train = self.gather(&order[n_test..]);
        Ok((train, test))
    }

    fn gather(&self, rows: &[usize]) -> Dataset {
        let per = self.input.numel();
        let mut xs = Vec::with_capacity(rows.len() * per);
        let mut ys = Vec::with_capacity(rows.len());
        for &r in rows {
            xs.extend_from_slice(&self.xs[r * per..(r + 1) * per]);
            ys.push(self.ys[r]);
        }
        Dataset { input: self.input, xs, ys, classes: self.classes }
    }
}

/// Fixed affine map of the raw moons plane into the unit square: x spans
/// [-1, 2] and y spans [-0.5, 1] on the noiseless loci, padded by 0.25.
fn moons_map(x: f64, y: f64) -> (f64, f64) {
    (((x + 1.25) / 3.5).clamp(0.0, 1.0), ((y + 0.75) / 2.0).clamp(0.0, 1.0))
}

/// Two interleaved half circles. Class 0 is the upper arc of the unit
/// circle; class 1 is the lower arc shifted right by 1 and up by 0.5.
/// Class sizes are exactly floor(n/2) and ceil(n/2).
pub fn moons(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::config(format!("synthetic datasets need n >= 4, got {n}")));
    }
    let n0 = n / 2;
    let n1 = n - n0;
    let mut rng = rng_from(named_seed(seed, "moons"));
    let mut xs = Vec::with_capacity(n * 2);
    let mut ys = Vec::with_capacity(n);
    let arc = |i: usize, count: usize| -> f64 {
        if count <= 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (count - 1) as f64
        }
    };
    for i in 0..n0 {
        let t = arc(i, n0);
        push_jittered(&mut xs, t.cos(), t.sin(), noise_sd, &mut rng, moons_map);
        ys.push(0);
    }
    for i in 0..n1 {
        let t = arc(i, n1);
        push_jittered(&mut xs, 1.0 - t.cos(), 0.5 - t.sin(), noise_sd, &mut rng, moons_map);
        ys.push(1);
    }
    Ok(Dataset { input: InputShape::Dense { features: 2 }, xs, ys, classes: 2 })
}

/// Invert the moons affine map; exposed for locus checks.
pub fn moons_unmap(u: f64, v: f64) -> (f64, f64) {
    (u * 3.5 - 1.25, v * 2.0 - 0.75)
}

fn spirals_map(x: f64, y: f64) -> (f64, f64) {
    (((x + 1.25) / 2.5).clamp(0.0, 1.0), ((y + 1.25) / 2.5).clamp(0.0, 1.0))
}

/// Two interleaved Archimedean spiral arms, one rotated by π. The radius
/// grows linearly with the angle and tops out at 1.
pub fn spirals(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::config(format!("synthetic datasets need n >= 4, got {n}")));
    }
    let n0 = n / 2;
    let n1 = n - n0;
    let mut rng = rng_from(named_seed(seed, "spirals"));
    let mut xs = Vec::with_capacity(n * 2);
    let mut ys = Vec::with_capacity(n);
    let t_lo = 0.25 * std::f64::consts::PI;
    let t_hi = 2.25 * std::f64::consts::PI;
    for (class, count) in [(0usize, n0), (1usize, n1)] {
        for i in 0..count {
            let frac = if count <= 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            let t = t_lo + (t_hi - t_lo) * frac;
            let r = t / t_hi;
            let theta = t + class as f64 * std::f64::consts::PI;
            push_jittered(&mut xs, r * theta.cos(), r * theta.sin(), noise_sd, &mut rng, spirals_map);
            ys.push(class);
        }
    }
    Ok(Dataset { input: InputShape::Dense { features: 2 }, xs, ys, classes: 2 })
}

fn push_jittered(
    xs: &mut Vec<f64>,
    x: f64,
    y: f64,
    sd: f64,
    rng: &mut impl Rng,
    map: fn(f64, f64) -> (f64, f64),
) {
    let jx: f64 = rng.sample(StandardNormal);
    let jy: f64 = rng.sample(StandardNormal);
    let (u, v) = map(x + sd * jx, y + sd * jy);
    xs.push(u);
    xs.push(v);
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Load an IDX image/label file pair (the MNIST container format):
/// big-endian magic and dimensions, then raw unsigned bytes. Pixel values
/// are scaled to `[0,1]` by 1/255.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = std::fs::read(images)?;
    let lbl = std::fs::read(labels)?;

    let mut ic = IdxCursor { b: &img, pos: 0, what: "image file" };
    if ic.u32()? != IDX_IMAGE_MAGIC {
        return Err(Error::format("image file magic is not 0x00000803"));
    }
    let n = ic.u32()? as usize;
    let rows = ic.u32()? as usize;
    let cols = ic.u32()? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::format("image file declares an empty tensor"));
    }
    let pixels = ic.bytes(n * rows * cols)?;
    if ic.pos != img.len() {
        return Err(Error::format("trailing bytes after image payload"));
    }

    let mut lc = IdxCursor { b: &lbl, pos: 0, what: "label file" };
    if lc.u32()? != IDX_LABEL_MAGIC {
        return Err(Error::format("label file magic is not 0x00000801"));
    }
    let ln = lc.u32()? as usize;
    if ln != n {
        return Err(Error::format(format!("{n} images but {ln} labels")));
    }
    let raw_labels = lc.bytes(ln)?;
    if lc.pos != lbl.len() {
        return Err(Error::format("trailing bytes after label payload"));
    }

    let xs: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let ys: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = ys.iter().max().copied().unwrap_or(0).max(1) + 1;
    Ok(Dataset {
        input: InputShape::Image { channels: 1, height: rows, width: cols },
        xs,
        ys,
        classes,
    })
}

struct IdxCursor<'a> {
    b: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> IdxCursor<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::format(format!("{} truncated", self.what)));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parsed dataset identifier, e.g. `moons:400:0.08`, `spirals:300:0.05`, or
/// `idx:images.idx3:labels.idx1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSpec {
    Moons { n: usize, sd: f64 },
    Spirals { n: usize, sd: f64 },
    Idx { images: PathBuf, labels: PathBuf },
}

impl DatasetSpec {
    /// Parse a `kind:arg:arg` identifier. IDX paths may not themselves
    /// contain a colon in the images part.
    pub fn parse(id: &str) -> Result<DatasetSpec> {
        let mut parts = id.splitn(3, ':');
        let kind = parts.next().unwrap_or("");
        let a = parts.next();
        let b = parts.next();
        let bad = |msg: &str| Error::config(format!("dataset id {id:?}: {msg}"));
        match kind {
            "moons" | "spirals" => {
                let n: usize = a
                    .ok_or_else(|| bad("missing sample count"))?
                    .parse()
                    .map_err(|_| bad("sample count is not an integer"))?;
                let sd: f64 = b
                    .ok_or_else(|| bad("missing noise sd"))?
                    .parse()
                    .map_err(|_| bad("noise sd is not a number"))?;
                if !(sd >= 0.0 && sd.is_finite()) {
                    return Err(bad("noise sd must be finite and non-negative"));
                }
                if kind == "moons" {
                    Ok(DatasetSpec::Moons { n, sd })
                } else {
                    Ok(DatasetSpec::Spirals { n, sd })
                }
            }
            "idx" => {
                let images = a.ok_or_else(|| bad("missing images path"))?;
                let labels = b.ok_or_else(|| bad("missing labels path"))?;
                Ok(DatasetSpec::Idx { images: images.into(), labels: labels.into() })
            }
            _ => Err(bad("unknown dataset kind")),
        }
    }

    /// Materialize the dataset. The seed only affects synthetic jitter.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::Moons { n, sd } => moons(*n, *sd, seed),
            DatasetSpec::Spirals { n, sd } => spirals(*n, *sd, seed),
            DatasetSpec::Idx { images, labels } => {
                if !images.exists() {
                    return Err(Error::MissingArtifact(images.clone()));
                }
                if !labels.exists() {
                    return Err(Error::MissingArtifact(labels.clone()));
                }
                load_idx(images, labels)
            }
        }
    }
}
