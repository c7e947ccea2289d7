//! Datasets: in-memory sample sets, toy generators, and file ingestion.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result, WdmError};
use crate::tensor::Tensor;

/// Fixed-shape samples stored row-major, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let d: usize = sample_shape.iter().product();
        if d == 0 {
            return dim_err("sample shape has a zero extent");
        }
        if values.is_empty() || !values.len().is_multiple_of(d) {
            return dim_err(format!(
                "{} values do not split into samples of {d}",
                values.len()
            ));
        }
        Ok(Dataset {
            sample_shape,
            values,
        })
    }

    /// A dataset holding one sample.
    pub fn single(sample: &Tensor) -> Self {
        Dataset {
            sample_shape: sample.shape().to_vec(),
            values: sample.data().to_vec(),
        }
    }

    pub fn from_rows(rows: &Tensor) -> Result<Self> {
        let (_, d) = rows.dims2()?;
        Dataset::new(vec![d], rows.data().to_vec())
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn sample_tensor(&self, i: usize) -> Tensor {
        Tensor::new(self.sample_shape.clone(), self.sample(i).to_vec()).expect("sample shape")
    }

    /// Gathers rows into an `[indices.len(), dim]` matrix.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let d = self.dim();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(self.sample(i));
        }
        Tensor::matrix(indices.len(), d, out).expect("gather shape")
    }

    /// All samples as an `[n, dim]` matrix.
    pub fn as_matrix(&self) -> Tensor {
        Tensor::matrix(self.len(), self.dim(), self.values.clone()).expect("dataset shape")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// 2-D toy task distribution: isotropic Gaussian blobs evenly spaced on a circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingMixture {
    pub modes: usize,
    pub radius: f64,
    pub spread: f64,
}

impl Default for RingMixture {
    fn default() -> Self {
        RingMixture {
            modes: 8,
            radius: 0.5,
            spread: 0.05,
        }
    }
}

impl RingMixture {
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 || self.modes == 0 {
            return param_err("ring mixture needs samples and modes");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let k = rng.random_range(0..self.modes);
            let angle = std::f64::consts::TAU * k as f64 / self.modes as f64;
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            values.push(self.radius * angle.cos() + self.spread * nx);
            values.push(self.radius * angle.sin() + self.spread * ny);
        }
        Dataset::new(vec![2], values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    CsvPoints,
    RawU8Images,
    IdxImages,
}

/// Options for image formats: the stored side lengths of raw files and the
/// output resolution after area downsampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageOptions {
    pub height: usize,
    pub width: usize,
    pub out_height: usize,
    pub out_width: usize,
}

pub fn load_dataset(path: &Path, format: DataFormat, images: Option<ImageOptions>) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    match format {
        DataFormat::CsvPoints => parse_csv_points(&bytes),
        DataFormat::RawU8Images => {
            let o = images.ok_or_else(|| WdmError::Config("raw images need a shape".into()))?;
            parse_raw_u8(&bytes, o)
        }
        DataFormat::IdxImages => {
            let o = images.ok_or_else(|| WdmError::Config("idx images need an output resolution".into()))?;
            parse_idx(&bytes, o.out_height, o.out_width)
        }
    }
}

/// Rows of reals; a first row that does not parse as numbers is a header.
pub fn parse_csv_points(bytes: &[u8]) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut values = Vec::new();
    let mut width = None;
    for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| WdmError::Parse {
            offset: e.position().map_or(0, |p| p.byte()),
            message: e.to_string(),
        })?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if row_idx == 0 => continue,
            Err(e) => {
                return Err(WdmError::Parse {
                    offset,
                    message: format!("non-numeric field: {e}"),
                })
            }
        };
        if row.iter().any(|v| !v.is_finite()) {
            return Err(WdmError::Parse {
                offset,
                message: "non-finite value".into(),
            });
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(WdmError::Parse {
                    offset,
                    message: format!("row has {} fields, expected {w}", row.len()),
                })
            }
            _ => {}
        }
        values.extend(row);
    }
    let w = width.ok_or(WdmError::Parse {
        offset: 0,
        message: "no data rows".into(),
    })?;
    Dataset::new(vec![w], values)
}

/// u8 pixel to `[-1, 1]`.
pub fn rescale_u8(p: f64) -> f64 {
    p / 127.5 - 1.0
}

pub fn parse_raw_u8(bytes: &[u8], o: ImageOptions) -> Result<Dataset> {
    let per = o.height * o.width;
    if per == 0 || bytes.is_empty() || !bytes.len().is_multiple_of(per) {
        return Err(WdmError::Parse {
            offset: (bytes.len() - bytes.len() % per.max(1)) as u64,
            message: format!("{} bytes is not a whole number of {}x{} images", bytes.len(), o.height, o.width),
        });
    }
    let mut values = Vec::new();
    for img in bytes.chunks(per) {
        let px: Vec<f64> = img.iter().map(|&b| b as f64).collect();
        let small = area_downsample(&px, o.height, o.width, o.out_height, o.out_width);
        values.extend(small.into_iter().map(rescale_u8));
    }
    Dataset::new(vec![o.out_height, o.out_width], values)
}

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

/// IDX image container: big-endian magic `0x00000803`, count, rows, cols, then
/// row-major u8 pixels.
pub fn parse_idx(bytes: &[u8], out_h: usize, out_w: usize) -> Result<Dataset> {
    let word = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or(WdmError::Parse {
                offset: off as u64,
                message: "truncated IDX header".into(),
            })
    };
    let magic = word(0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(WdmError::Parse {
            offset: 0,
            message: format!("IDX magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        });
    }
    let n = word(4)? as usize;
    let rows = word(8)? as usize;
    let cols = word(12)? as usize;
    if n == 0 || rows == 0 || cols == 0 || out_h == 0 || out_w == 0 {
        return Err(WdmError::Parse {
            offset: 4,
            message: "IDX dimensions must be positive".into(),
        });
    }
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(WdmError::Parse {
            offset: bytes.len() as u64,
            message: format!("IDX body truncated: {} of {need} bytes", bytes.len()),
        });
    }
    let per = rows * cols;
    let mut values = Vec::with_capacity(n * out_h * out_w);
    for img in bytes[16..need].chunks(per) {
        let px: Vec<f64> = img.iter().map(|&b| b as f64).collect();
        let small = area_downsample(&px, rows, cols, out_h, out_w);
        values.extend(small.into_iter().map(rescale_u8));
    }
    Dataset::new(vec![out_h, out_w], values)
}

/// Exact area averaging: each output pixel is the overlap-weighted mean of the
/// input pixels its footprint covers.
pub fn area_downsample(px: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let spans = |start: f64, end: f64, limit: usize| -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut i = start.floor() as usize;
        while (i as f64) < end && i < limit {
            let lo = start.max(i as f64);
            let hi = end.min(i as f64 + 1.0);
            if hi > lo {
                out.push((i, hi - lo));
            }
            i += 1;
        }
        out
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let ys = spans(oy as f64 * sy, (oy + 1) as f64 * sy, h);
        for ox in 0..out_w {
            let xs = spans(ox as f64 * sx, (ox + 1) as f64 * sx, w);
            let mut acc = 0.0;
            let mut area = 0.0;
            for &(y, wy) in &ys {
                for &(x, wx) in &xs {
                    acc += px[y * w + x] * wy * wx;
                    area += wy * wx;
                }
            }
            out.push(acc / area);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(n: u32, rows: u32, cols: u32, fill: u8) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(IDX_IMAGE_MAGIC.to_be_bytes());
        b.extend(n.to_be_bytes());
        b.extend(rows.to_be_bytes());
        b.extend(cols.to_be_bytes());
        b.extend(std::iter::repeat_n(fill, (n * rows * cols) as usize));
        b
    }

    #[test]
    fn idx_bad_magic() {
        let mut b = idx_bytes(1, 2, 2, 0);
        b[3] = 0x01;
        assert!(matches!(parse_idx(&b, 2, 2), Err(WdmError::Parse { offset: 0, .. })));
    }

    #[test]
    fn idx_truncated() {
        let b = idx_bytes(2, 4, 4, 9);
        assert!(matches!(parse_idx(&b[..b.len() - 3], 4, 4), Err(WdmError::Parse { .. })));
        assert!(matches!(parse_idx(&b[..10], 4, 4), Err(WdmError::Parse { .. })));
    }

    #[test]
    fn pixel_endpoints() {
        assert_eq!(rescale_u8(0.0), -1.0);
        assert_eq!(rescale_u8(255.0), 1.0);
    }

    #[test]
    fn constant_image_downsample() {
        let b = idx_bytes(1, 28, 28, 128);
        let d = parse_idx(&b, 8, 8).unwrap();
        assert_eq!(d.sample_shape(), &[8, 8]);
        // every output pixel averages 3.5x3.5 pixels of value 128 -> 128/127.5 - 1
        let expected = 128.0 / 127.5 - 1.0;
        assert!(d.values().iter().all(|v| (v - expected).abs() < 1e-12));
        assert!((expected - 0.00392157).abs() < 1e-8);
    }

    #[test]
    fn fractional_area_weights() {
        // 3 -> 2 columns: out0 = p0 + 0.5 p1 over 1.5, out1 = 0.5 p1 + p2 over 1.5
        let px = [0.0, 3.0, 6.0];
        let out = area_downsample(&px, 1, 3, 1, 2);
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!((out[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn csv_with_header_and_errors() {
        let d = parse_csv_points(b"x,y\n0.5,1\n-1,2.25\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.sample(1), &[-1.0, 2.25]);
        let err = parse_csv_points(b"1,2\n3,abc\n").unwrap_err();
        assert!(matches!(err, WdmError::Parse { offset: 4, .. }), "{err:?}");
        assert!(parse_csv_points(b"1,2\n3\n").is_err());
    }

    #[test]
    fn raw_u8_images() {
        let bytes = vec![0u8, 255, 255, 0, 10, 10, 10, 10];
        let o = ImageOptions { height: 2, width: 2, out_height: 2, out_width: 2 };
        let d = parse_raw_u8(&bytes, o).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.sample(0), &[-1.0, 1.0, 1.0, -1.0]);
        assert!(parse_raw_u8(&bytes[..7], o).is_err());
    }

    #[test]
    fn ring_mixture_is_deterministic() {
        let r = RingMixture::default();
        assert_eq!(r.sample(50, 3).unwrap(), r.sample(50, 3).unwrap());
        assert_ne!(r.sample(50, 3).unwrap(), r.sample(50, 4).unwrap());
    }
}
