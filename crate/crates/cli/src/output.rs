//! Output directory handling, CSV and SVG emission.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::ArrayView2;

const LOCK_NAME: &str = ".gll.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let lock = root.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "{} is in use by another run (remove {} if that run is gone)",
                root.display(),
                lock.display()
            ),
            Err(e) => return Err(e).with_context(|| format!("locking {}", root.display())),
        }
        Ok(Self {
            root: root.to_path_buf(),
            lock,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Round-trip exact text for a float; exponent form outside `[1e-4, 1e15)`.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

pub struct CsvOut {
    inner: csv::Writer<File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        inner.write_record(header)?;
        Ok(Self { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Little-endian `f64`, row-major, with a JSON sidecar describing it.
pub fn write_matrix(path: &Path, m: ArrayView2<f64>, meta: serde_json::Value) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    let mut sidecar = serde_json::json!({
        "rows": m.nrows(),
        "cols": m.ncols(),
        "dtype": "f64",
        "endianness": "little",
        "order": "row-major",
    });
    if let (Some(obj), serde_json::Value::Object(extra)) = (sidecar.as_object_mut(), meta) {
        obj.extend(extra);
    }
    let json_path = path.with_extension("json");
    fs::write(&json_path, serde_json::to_string_pretty(&sidecar)? + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;
    Ok(())
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn star(cx: f64, cy: f64, r: f64) -> String {
    let mut pts = String::new();
    for i in 0..10 {
        let rad = if i % 2 == 0 { r } else { 0.45 * r };
        let a = std::f64::consts::PI * (i as f64 / 5.0 - 0.5);
        let _ = write!(pts, "{:.2},{:.2} ", cx + rad * a.cos(), cy + rad * a.sin());
    }
    pts.trim_end().to_string()
}

/// Scatter plot of 2-D points coloured by class; base points drawn as stars.
pub fn scatter_svg(title: &str, points: ArrayView2<f64>, labels: &[usize], is_base: &[bool]) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 30.0;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for row in points.rows() {
        for j in 0..2 {
            lo[j] = lo[j].min(row[j]);
            hi[j] = hi[j].max(row[j]);
        }
    }
    let span = |j: usize| if hi[j] > lo[j] { hi[j] - lo[j] } else { 1.0 };
    let sx = |v: f64| PAD + (v - lo[0]) / span(0) * (SIZE - 2.0 * PAD);
    let sy = |v: f64| SIZE - PAD - (v - lo[1]) / span(1) * (SIZE - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" font-family="sans-serif" font-size="13" text-anchor="middle">{title}</text>"#,
        SIZE / 2.0
    );
    let mut stars = String::new();
    for (i, row) in points.rows().into_iter().enumerate() {
        let colour = PALETTE[labels[i] % PALETTE.len()];
        let (x, y) = (sx(row[0]), sy(row[1]));
        if is_base[i] {
            let _ = writeln!(
                stars,
                r#"<polygon points="{}" fill="{colour}" stroke="black" stroke-width="0.8"/>"#,
                star(x, y, 7.0)
            );
        } else {
            let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{colour}" fill-opacity="0.8"/>"#);
        }
    }
    svg.push_str(&stars);
    svg.push_str("</svg>\n");
    svg
}
