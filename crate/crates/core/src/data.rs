//! Synthetic temperature series, min-max normalization, the 3x3 client tiling
//! and the `FTSR` field file format.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

pub const T_CLAMP_MIN: f64 = 200.0;
pub const T_CLAMP_MAX: f64 = 340.0;
pub const DT_HOURS: u32 = 3;
/// Tiles per side of the client grid.
pub const GRID: usize = 3;
pub const NUM_CLIENTS: usize = GRID * GRID;

/// A time-major `steps x height x width` field in Kelvin.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSeries {
    pub steps: usize,
    pub height: usize,
    pub width: usize,
    pub dt_hours: u32,
    pub data: Vec<f32>,
}

impl FieldSeries {
    pub fn new(steps: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != steps * height * width {
            return Err(Error::dim(format!(
                "{} values for a {steps}x{height}x{width} series",
                data.len()
            )));
        }
        Ok(FieldSeries {
            steps,
            height,
            width,
            dt_hours: DT_HOURS,
            data,
        })
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    /// Checks the tiling contract: dims divisible by 3 with tiles divisible by `multiple`.
    pub fn check_tileable(&self, multiple: usize) -> Result<()> {
        if !self.height.is_multiple_of(GRID) || !self.width.is_multiple_of(GRID) {
            return Err(Error::dim(format!(
                "{}x{} grid is not divisible into {GRID}x{GRID} tiles",
                self.height, self.width
            )));
        }
        let (th, tw) = (self.height / GRID, self.width / GRID);
        if th % multiple != 0 || tw % multiple != 0 {
            return Err(Error::dim(format!("{th}x{tw} tiles are not divisible by {multiple}")));
        }
        Ok(())
    }
}

/// Min-max scaling bounds in Kelvin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec {
            t_min: 238.56,
            t_max: 318.18,
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_max > self.t_min && self.t_min.is_finite() && self.t_max.is_finite() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "normalization range [{}, {}] is empty",
                self.t_min, self.t_max
            )))
        }
    }

    pub fn range(&self) -> f64 {
        self.t_max - self.t_min
    }

    /// Linear, unclamped.
    pub fn normalize(&self, kelvin: f64) -> f64 {
        (kelvin - self.t_min) / self.range()
    }

    pub fn denormalize(&self, unit: f64) -> f64 {
        unit * self.range() + self.t_min
    }
}

/// Component switches for the generator; all on by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorOptions {
    pub seasonal: bool,
    pub diurnal: bool,
    pub gradient: bool,
    pub waves: bool,
    pub noise: bool,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        GeneratorOptions {
            seasonal: true,
            diurnal: true,
            gradient: true,
            waves: true,
            noise: true,
        }
    }
}

pub const NOISE_RHO: f64 = 0.8;
pub const NOISE_STD: f64 = 0.5;

struct Wave {
    amplitude: f64,
    k: f64,
    l: f64,
    omega: f64,
    psi: f64,
}

/// Synthetic field with every component enabled.
pub fn generate_series(seed: u64, steps: usize, height: usize, width: usize) -> Result<FieldSeries> {
    generate_series_with(seed, steps, height, width, GeneratorOptions::default())
}

/// Baseline 278 K plus seasonal, diurnal, meridional, traveling-wave and AR(1) noise terms.
///
/// Random draws, in order: the diurnal phase offset; per wave its amplitude,
/// zonal and meridional wavenumbers, angular speed and phase; then one
/// `height x width` block of innovations per step. The draws happen whether or
/// not a component is switched off, so toggling one leaves the others intact.
pub fn generate_series_with(
    seed: u64,
    steps: usize,
    height: usize,
    width: usize,
    opts: GeneratorOptions,
) -> Result<FieldSeries> {
    if steps < 3 {
        return Err(Error::config(format!("series needs at least 3 steps, got {steps}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::config("series dims must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let phi0 = rng.random_range(0.0..2.0 * PI);
    let waves: Vec<Wave> = (0..3)
        .map(|_| Wave {
            amplitude: rng.random_range(1.0..=3.0),
            k: rng.random_range(1..=3) as f64,
            l: rng.random_range(-2..=2) as f64,
            omega: rng.random_range(0.05..0.3),
            psi: rng.random_range(0.0..2.0 * PI),
        })
        .collect();
    let innovation = Normal::new(0.0, NOISE_STD).expect("positive std");
    let n = height * width;
    let (hf, wf) = (height as f64, width as f64);

    // time-invariant part; the diurnal phase is one draw shared by the whole grid
    let mut static_part = vec![278.0f64; n];
    if opts.gradient {
        for y in 0..height {
            for v in &mut static_part[y * width..(y + 1) * width] {
                *v -= 14.0 * (y as f64 / hf);
            }
        }
    }

    let mut noise = vec![0.0f64; n];
    let mut eps = vec![0.0f64; n];
    let mut smooth = vec![0.0f64; n];
    let mut data = Vec::with_capacity(steps * n);
    for t in 0..steps {
        for e in eps.iter_mut() {
            *e = innovation.sample(&mut rng);
        }
        mean_filter_3x3(&eps, height, width, &mut smooth);
        if t == 0 {
            // start from the stationary distribution of the AR(1) recursion
            let scale = 1.0 / (1.0 - NOISE_RHO * NOISE_RHO).sqrt();
            for (r, s) in noise.iter_mut().zip(&smooth) {
                *r = s * scale;
            }
        } else {
            for (r, s) in noise.iter_mut().zip(&smooth) {
                *r = NOISE_RHO * *r + s;
            }
        }
        let tf = t as f64;
        let mut uniform = 0.0;
        if opts.seasonal {
            uniform += 12.0 * (2.0 * PI * tf / (8.0 * 365.0)).sin();
        }
        if opts.diurnal {
            uniform += 4.0 * (2.0 * PI * tf / 8.0 + phi0).sin();
        }
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                let mut v = static_part[i] + uniform;
                if opts.waves {
                    for wv in &waves {
                        let arg = 2.0 * PI * (wv.k * x as f64 + wv.l * y as f64) / wf - wv.omega * tf + wv.psi;
                        v += wv.amplitude * arg.sin();
                    }
                }
                if opts.noise {
                    v += noise[i];
                }
                data.push(v.clamp(T_CLAMP_MIN, T_CLAMP_MAX) as f32);
            }
        }
    }
    FieldSeries::new(steps, height, width, data)
}

/// Mean over the in-bounds part of each 3x3 neighborhood.
fn mean_filter_3x3(src: &[f64], height: usize, width: usize, out: &mut [f64]) {
    for y in 0..height {
        let (y0, y1) = (y.saturating_sub(1), (y + 2).min(height));
        for x in 0..width {
            let (x0, x1) = (x.saturating_sub(1), (x + 2).min(width));
            let mut s = 0.0;
            for yy in y0..y1 {
                for xx in x0..x1 {
                    s += src[yy * width + xx];
                }
            }
            out[y * width + x] = s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One client's tile of the normalized series with its temporal train/test split.
///
/// Sample `i` reads frames `i, i+1` as input and `i+2` as target; the first
/// `num_train` windows are training data.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub tile_origin: (usize, usize),
    pub height: usize,
    pub width: usize,
    frames: Vec<f32>,
    num_train: usize,
}

impl ClientDataset {
    pub fn num_windows(&self) -> usize {
        self.frames.len() / (self.height * self.width) - 2
    }

    pub fn len(&self, split: Split) -> usize {
        match split {
            Split::Train => self.num_train,
            Split::Test => self.num_windows() - self.num_train,
        }
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    /// Index of the first series frame used by window `i` of `split`.
    fn window_start(&self, split: Split, i: usize) -> usize {
        match split {
            Split::Train => i,
            Split::Test => self.num_train + i,
        }
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.frames[t * n..(t + 1) * n]
    }

    /// `([2, h, w] input, [1, h, w] target)` of window `i`.
    pub fn sample(&self, split: Split, i: usize) -> (Tensor, Tensor) {
        assert!(i < self.len(split), "window {i} out of range for {split:?}");
        let t = self.window_start(split, i);
        let n = self.height * self.width;
        let input = self.frames[t * n..(t + 2) * n].to_vec();
        let target = self.frames[(t + 2) * n..(t + 3) * n].to_vec();
        (
            Tensor::new(vec![2, self.height, self.width], input).expect("window shape"),
            Tensor::new(vec![1, self.height, self.width], target).expect("window shape"),
        )
    }

    /// Normalized target of window `i`, without building the input.
    pub fn target(&self, split: Split, i: usize) -> &[f32] {
        assert!(i < self.len(split));
        self.frame(self.window_start(split, i) + 2)
    }
}

/// Number of training windows for a series of `steps` frames.
pub fn train_windows(steps: usize, train_fraction: f64) -> usize {
    let windows = steps.saturating_sub(2);
    // the epsilon keeps exact products such as 0.85 * 100 from rounding down
    ((train_fraction * windows as f64) + 1e-9).floor() as usize
}

/// Normalizes the series and cuts it into the row-major 3x3 client tiles.
pub fn partition_grid(
    series: &FieldSeries,
    norm: &NormalizationSpec,
    train_fraction: f64,
) -> Result<Vec<ClientDataset>> {
    norm.validate()?;
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::config(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    if series.steps < 3 {
        return Err(Error::dim("series needs at least 3 steps to form a window"));
    }
    series.check_tileable(1)?;
    let (th, tw) = (series.height / GRID, series.width / GRID);
    let num_train = train_windows(series.steps, train_fraction);
    let mut out = Vec::with_capacity(NUM_CLIENTS);
    for k in 0..NUM_CLIENTS {
        let origin = ((k / GRID) * th, (k % GRID) * tw);
        let mut frames = Vec::with_capacity(series.steps * th * tw);
        for t in 0..series.steps {
            let f = series.frame(t);
            for y in origin.0..origin.0 + th {
                let row = &f[y * series.width + origin.1..][..tw];
                frames.extend(row.iter().map(|&v| norm.normalize(v as f64) as f32));
            }
        }
        out.push(ClientDataset {
            client_id: k,
            tile_origin: origin,
            height: th,
            width: tw,
            frames,
            num_train,
        });
    }
    Ok(out)
}

/// Grid size and default series length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataProfile {
    /// Nine 64x64 tiles.
    Paper,
    /// Nine 16x16 tiles.
    Desk,
}

impl DataProfile {
    pub fn grid_size(self) -> usize {
        match self {
            DataProfile::Paper => 192,
            DataProfile::Desk => 48,
        }
    }

    pub fn default_steps(self) -> usize {
        match self {
            DataProfile::Paper => 2000,
            DataProfile::Desk => 600,
        }
    }

    pub fn tile_size(self) -> usize {
        self.grid_size() / GRID
    }
}

impl std::str::FromStr for DataProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(DataProfile::Paper),
            "desk" => Ok(DataProfile::Desk),
            other => Err(Error::config(format!(
                "unknown data profile {other:?} (expected paper or desk)"
            ))),
        }
    }
}

const FIELD_MAGIC: &[u8; 4] = b"FTSR";
const FIELD_VERSION: u16 = 1;
const FIELD_HEADER_LEN: usize = 4 + 2 + 4 * 4;

pub fn encode_field(series: &FieldSeries) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIELD_HEADER_LEN + series.data.len() * 4);
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    for v in [
        series.steps as u32,
        series.height as u32,
        series.width as u32,
        series.dt_hours,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &series.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<FieldSeries> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: FIELD_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != FIELD_MAGIC {
        return Err(Error::BadMagic {
            expected: *FIELD_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < 6 {
        return Err(Error::Truncated {
            expected: FIELD_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FIELD_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes.len() < FIELD_HEADER_LEN {
        return Err(Error::Truncated {
            expected: FIELD_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (steps, height, width) = (u32_at(6), u32_at(10), u32_at(14));
    let dt_hours = u32_at(18) as u32;
    let count = steps
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| Error::Malformed("field dims overflow".into()))?;
    let expected = FIELD_HEADER_LEN + count * 4;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after field data",
            bytes.len() - expected
        )));
    }
    let data = bytes[FIELD_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FieldSeries {
        steps,
        height,
        width,
        dt_hours,
        data,
    })
}

pub fn write_field_file(path: &Path, series: &FieldSeries) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_field(series))?;
    Ok(())
}

pub fn read_field_file(path: &Path) -> Result<FieldSeries> {
    decode_field(&fs::read(path)?)
}
