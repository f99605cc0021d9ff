//! Forecast verification in Kelvin against clean ground truth: pointwise
//! errors, signed bias statistics, windowed SSIM and per-pixel MAE maps.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormalizationSpec;
use crate::error::{Error, Result};

fn check_shapes(pred: &[f32], truth: &[f32]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::dim(format!(
            "prediction has {} values, ground truth {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("no values to compare".into()));
    }
    Ok(())
}

/// `(mse, rmse, mae)` over all values, in the units of the inputs.
pub fn pointwise_errors(pred: &[f32], truth: &[f32]) -> Result<(f64, f64, f64)> {
    check_shapes(pred, truth)?;
    let (mut sq, mut abs) = (0.0f64, 0.0f64);
    for (&p, &t) in pred.iter().zip(truth) {
        let e = p as f64 - t as f64;
        sq += e * e;
        abs += e.abs();
    }
    let n = pred.len() as f64;
    let mse = sq / n;
    Ok((mse, mse.sqrt(), abs / n))
}

/// Statistics of the signed bias field `pred - truth`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasStats {
    pub mean: f64,
    pub most_negative: f64,
    pub most_positive: f64,
}

pub fn bias_stats(pred: &[f32], truth: &[f32]) -> Result<BiasStats> {
    check_shapes(pred, truth)?;
    let mut sum = 0.0f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&p, &t) in pred.iter().zip(truth) {
        let b = p as f64 - t as f64;
        sum += b;
        lo = lo.min(b);
        hi = hi.max(b);
    }
    Ok(BiasStats {
        mean: sum / pred.len() as f64,
        most_negative: lo,
        most_positive: hi,
    })
}

/// Windowed SSIM settings; the defaults are the usual Gaussian 11x11 window on unit-range fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    fn kernel(&self) -> Vec<f64> {
        let r = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        let mut k = Vec::with_capacity(self.window * self.window);
        for a in &g {
            for b in &g {
                k.push(a * b / (s * s));
            }
        }
        k
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimValue {
    pub value: f64,
    /// The field was smaller than the window, so one global window was used.
    pub fallback: bool,
}

fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Weighted first and second moments of `x` and `y`; evaluated identically for both
/// arguments so that swapping them gives bit-identical results.
fn moments(x: &[f32], y: &[f32], idx: impl Iterator<Item = (usize, f64)>) -> (f64, f64, f64, f64, f64) {
    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, w) in idx {
        let (a, b) = (x[i] as f64, y[i] as f64);
        mx += w * a;
        my += w * b;
        xx += w * (a * a);
        yy += w * (b * b);
        xy += w * (a * b);
    }
    (mx, my, xx - mx * mx, yy - my * my, xy - mx * my)
}

/// Mean local SSIM of two single-channel `height x width` fields.
pub fn ssim(x: &[f32], y: &[f32], height: usize, width: usize, params: &SsimParams) -> Result<SsimValue> {
    check_shapes(x, y)?;
    if x.len() != height * width {
        return Err(Error::dim(format!("{} values for a {height}x{width} field", x.len())));
    }
    if params.window == 0 {
        return Err(Error::config("SSIM window must be positive"));
    }
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    let win = params.window;
    if height < win || width < win {
        let w = 1.0 / x.len() as f64;
        let (mx, my, vx, vy, cxy) = moments(x, y, (0..x.len()).map(|i| (i, w)));
        return Ok(SsimValue {
            value: ssim_from_moments(mx, my, vx, vy, cxy, c1, c2),
            fallback: true,
        });
    }
    let kernel = params.kernel();
    let (ny, nx) = (height - win + 1, width - win + 1);
    let mut total = 0.0;
    for oy in 0..ny {
        for ox in 0..nx {
            let idx = (0..win * win).map(|k| ((oy + k / win) * width + ox + k % win, kernel[k]));
            let (mx, my, vx, vy, cxy) = moments(x, y, idx);
            total += ssim_from_moments(mx, my, vx, vy, cxy, c1, c2);
        }
    }
    Ok(SsimValue {
        value: total / (ny * nx) as f64,
        fallback: false,
    })
}

/// Scalar verification scores of one tile or of the pooled test set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// K^2.
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub ssim: f64,
    pub mean_bias: f64,
    pub most_negative_bias: f64,
    pub most_positive_bias: f64,
    pub samples: usize,
    pub ssim_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pooled: Metrics,
    pub per_client: Vec<Metrics>,
}

/// Running sums for one tile; predictions and targets arrive normalized.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    height: usize,
    width: usize,
    scale: f64,
    samples: usize,
    sq: f64,
    abs: f64,
    bias: f64,
    lo: f64,
    hi: f64,
    ssim: f64,
    fallback: bool,
    pixel_abs: Vec<f64>,
    params: SsimParams,
}

impl MetricsAccumulator {
    pub fn new(height: usize, width: usize, norm: &NormalizationSpec) -> Self {
        MetricsAccumulator {
            height,
            width,
            scale: norm.range(),
            samples: 0,
            sq: 0.0,
            abs: 0.0,
            bias: 0.0,
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
            ssim: 0.0,
            fallback: false,
            pixel_abs: vec![0.0; height * width],
            params: SsimParams::default(),
        }
    }

    /// Adds one normalized `(prediction, target)` pair of a tile.
    pub fn push(&mut self, pred: &[f32], truth: &[f32]) -> Result<()> {
        let s = ssim(pred, truth, self.height, self.width, &self.params)?;
        if !s.value.is_finite() || pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model prediction".into()));
        }
        for ((&p, &t), acc) in pred.iter().zip(truth).zip(&mut self.pixel_abs) {
            // the Kelvin error is the normalized error times the range
            let b = (p as f64 - t as f64) * self.scale;
            self.sq += b * b;
            self.abs += b.abs();
            self.bias += b;
            self.lo = self.lo.min(b);
            self.hi = self.hi.max(b);
            *acc += b.abs();
        }
        self.ssim += s.value;
        self.fallback |= s.fallback;
        self.samples += 1;
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    fn pixels(&self) -> f64 {
        (self.samples * self.height * self.width) as f64
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.samples == 0 {
            return Err(Error::Empty("no test samples were evaluated".into()));
        }
        let n = self.pixels();
        let mse = self.sq / n;
        Ok(Metrics {
            mse,
            rmse: mse.sqrt(),
            mae: self.abs / n,
            ssim: self.ssim / self.samples as f64,
            mean_bias: self.bias / n,
            most_negative_bias: self.lo,
            most_positive_bias: self.hi,
            samples: self.samples,
            ssim_fallback: self.fallback,
        })
    }

    /// Per-pixel MAE in Kelvin over the pushed samples.
    pub fn pixel_mae(&self) -> Vec<f64> {
        let n = self.samples.max(1) as f64;
        self.pixel_abs.iter().map(|v| v / n).collect()
    }

    /// Sample-weighted pooling of several tiles.
    pub fn pool(parts: &[MetricsAccumulator]) -> Result<Metrics> {
        let first = parts.first().ok_or_else(|| Error::Empty("no tiles to pool".into()))?;
        let mut total = MetricsAccumulator::new(first.height, first.width, &NormalizationSpec::default());
        total.scale = first.scale;
        let mut pixels = 0.0;
        for p in parts {
            total.sq += p.sq;
            total.abs += p.abs;
            total.bias += p.bias;
            total.ssim += p.ssim;
            total.samples += p.samples;
            total.lo = total.lo.min(p.lo);
            total.hi = total.hi.max(p.hi);
            total.fallback |= p.fallback;
            pixels += p.pixels();
        }
        let mut m = total.finish()?;
        // tiles may differ in size, so renormalize by the true pixel count
        m.mse = total.sq / pixels;
        m.rmse = m.mse.sqrt();
        m.mae = total.abs / pixels;
        m.mean_bias = total.bias / pixels;
        Ok(m)
    }
}

/// Per-pixel MAE composited over the full grid, Kelvin.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// Linear value-to-gray mapping stored next to a PGM export.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrayScale {
    pub min_k: f64,
    pub max_k: f64,
    pub width: usize,
    pub height: usize,
}

/// A tile's origin, height, width and per-pixel values.
pub type MapTile = ((usize, usize), usize, usize, Vec<f64>);

impl ErrorMap {
    /// Places each tile's per-pixel map at its origin.
    pub fn composite(height: usize, width: usize, tiles: &[MapTile]) -> Result<Self> {
        let mut data = vec![0.0; height * width];
        let mut covered = vec![false; height * width];
        for ((y0, x0), th, tw, map) in tiles {
            if y0 + th > height || x0 + tw > width || map.len() != th * tw {
                return Err(Error::dim(format!(
                    "{th}x{tw} tile at ({y0}, {x0}) does not fit {height}x{width}"
                )));
            }
            for y in 0..*th {
                for x in 0..*tw {
                    let gi = (y0 + y) * width + x0 + x;
                    data[gi] = map[y * tw + x];
                    covered[gi] = true;
                }
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::dim("tiles do not cover the error map"));
        }
        Ok(ErrorMap { height, width, data })
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean over the rectangle `[y0, y1) x [x0, x1)`.
    pub fn region_mean(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> f64 {
        let mut s = 0.0;
        for y in y0..y1 {
            s += self.data[y * self.width + x0..y * self.width + x1].iter().sum::<f64>();
        }
        s / ((y1 - y0) * (x1 - x0)) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.data.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn gray_scale(&self) -> GrayScale {
        let min_k = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        let max_k = self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        GrayScale {
            min_k,
            max_k,
            width: self.width,
            height: self.height,
        }
    }

    /// Binary 8-bit PGM; gray = round(255 * (v - min_k) / (max_k - min_k)), all zero for a flat map.
    pub fn to_pgm(&self) -> Vec<u8> {
        let s = self.gray_scale();
        let span = s.max_k - s.min_k;
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| {
            if span > 0.0 {
                (255.0 * (v - s.min_k) / span).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        }));
        out
    }

    /// Writes `<stem>.csv`, `<stem>.pgm` and the `<stem>.json` gray-scale sidecar into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        fs::File::create(dir.join(format!("{stem}.pgm")))?.write_all(&self.to_pgm())?;
        fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.gray_scale())? + "\n",
        )?;
        Ok(())
    }
}
