//! Synthetic two-moons data and the IDX container used by MNIST-style datasets.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{GllError, Result};

/// Labeled points, one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(crate::error::shape_err(format!("{} labels", x.nrows()), y.len()));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(GllError::InvalidData(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { x, y, num_classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(ndarray::Axis(0), rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// First `count` rows for one part, the rest for the other.
    pub fn split_at(&self, count: usize) -> (Self, Self) {
        let count = count.min(self.len());
        let head: Vec<usize> = (0..count).collect();
        let tail: Vec<usize> = (count..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoMoonsSpec {
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for TwoMoonsSpec {
    fn default() -> Self {
        Self {
            n: 200,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Two interleaving half circles: class 0 on `(cos t, sin t)`, class 1 on
/// `(1 - cos t, 1/2 - sin t)`, `t` evenly spaced over `[0, pi]`, plus
/// isotropic Gaussian noise. Rows are shuffled.
pub fn two_moons(spec: &TwoMoonsSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.n % 2 != 0 {
        return Err(GllError::InvalidArgument(format!(
            "two moons needs an even positive point count, got {}",
            spec.n
        )));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(GllError::InvalidArgument(format!(
            "noise must be >= 0, got {}",
            spec.noise
        )));
    }
    let half = spec.n / 2;
    let angle = |i: usize| if half == 1 { 0.0 } else { PI * i as f64 / (half - 1) as f64 };
    let mut points = Vec::with_capacity(spec.n);
    for i in 0..half {
        let t = angle(i);
        points.push(([t.cos(), t.sin()], 0));
    }
    for i in 0..half {
        let t = angle(i);
        points.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    points.shuffle(&mut rng);
    let mut x = Array2::zeros((spec.n, 2));
    let mut y = Vec::with_capacity(spec.n);
    for (r, (p, c)) in points.into_iter().enumerate() {
        for k in 0..2 {
            let jitter: f64 = rng.sample(StandardNormal);
            x[[r, k]] = p[k] + spec.noise * jitter;
        }
        y.push(c);
    }
    Dataset::new(x, y, 2)
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw IDX image/label pair.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxDataset {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, row-major per image.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl Reader<'_> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| GllError::Parse {
            offset: self.pos,
            message: format!("{} file truncated in header", self.what),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn payload(&mut self, len: usize) -> Result<&[u8]> {
        let have = self.bytes.len() - self.pos;
        if have < len {
            return Err(GllError::Parse {
                offset: self.bytes.len(),
                message: format!("{} payload truncated: expected {len} bytes, found {have}", self.what),
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
}

impl IdxDataset {
    pub fn decode(images: &[u8], labels: &[u8]) -> Result<Self> {
        let mut img = Reader {
            bytes: images,
            pos: 0,
            what: "image",
        };
        let magic = img.u32()?;
        if magic != IMAGE_MAGIC {
            return Err(GllError::Parse {
                offset: 0,
                message: format!("bad image magic {magic:#010x}"),
            });
        }
        let count = img.u32()? as usize;
        let rows = img.u32()? as usize;
        let cols = img.u32()? as usize;
        let pixels = img.payload(count * rows * cols)?.to_vec();

        let mut lab = Reader {
            bytes: labels,
            pos: 0,
            what: "label",
        };
        let magic = lab.u32()?;
        if magic != LABEL_MAGIC {
            return Err(GllError::Parse {
                offset: 0,
                message: format!("bad label magic {magic:#010x}"),
            });
        }
        let label_count = lab.u32()? as usize;
        if label_count != count {
            return Err(GllError::Parse {
                offset: 4,
                message: format!("label count {label_count} does not match image count {count}"),
            });
        }
        let labels = lab.payload(count)?.to_vec();
        Ok(Self {
            count,
            rows,
            cols,
            pixels,
            labels,
        })
    }

    pub fn encode(&self) -> (Vec<u8>, Vec<u8>) {
        let mut images = Vec::with_capacity(16 + self.pixels.len());
        for v in [IMAGE_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            images.extend_from_slice(&v.to_be_bytes());
        }
        images.extend_from_slice(&self.pixels);
        let mut labels = Vec::with_capacity(8 + self.labels.len());
        for v in [LABEL_MAGIC, self.count as u32] {
            labels.extend_from_slice(&v.to_be_bytes());
        }
        labels.extend_from_slice(&self.labels);
        (images, labels)
    }

    pub fn load(images: &Path, labels: &Path) -> Result<Self> {
        Self::decode(&fs::read(images)?, &fs::read(labels)?)
    }

    pub fn save(&self, images: &Path, labels: &Path) -> Result<()> {
        let (img, lab) = self.encode();
        fs::write(images, img)?;
        fs::write(labels, lab)?;
        Ok(())
    }

    /// Pixels scaled to `[0, 1]`, one flattened image per row.
    pub fn features(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.count, self.rows * self.cols), |(i, j)| {
            f64::from(self.pixels[i * self.rows * self.cols + j]) / 255.0
        })
    }

    pub fn to_dataset(&self) -> Result<Dataset> {
        let classes = self.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1);
        Dataset::new(
            self.features(),
            self.labels.iter().map(|&l| l as usize).collect(),
            classes,
        )
    }
}

/// Reads an IDX image/label pair from disk.
pub fn load_idx(images: &Path, labels: &Path) -> Result<IdxDataset> {
    IdxDataset::load(images, labels)
}
