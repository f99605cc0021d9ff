//! Residual U-Net for next-step field prediction.
//!
//! Encoder stages are residual blocks followed by 2x2 max pooling; the
//! bottleneck is one more residual block; each decoder stage upsamples
//! bilinearly, projects channels with a 1x1 convolution, concatenates the
//! matching encoder features and applies a residual block. A final 1x1
//! convolution produces the linear output field.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::{Padding, Tape, Tensor, Var};

pub const GROUP_NORM_EPS: f32 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stage_channels: Vec<usize>,
    pub bottleneck_channels: usize,
    pub group_norm_groups: usize,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 2,
            out_channels: 1,
            stage_channels: vec![32, 64],
            bottleneck_channels: 128,
            group_norm_groups: 8,
            seed: 0,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("U-Net needs at least one input and output channel"));
        }
        if self.stage_channels.is_empty() {
            return Err(Error::config("U-Net needs at least one encoder stage"));
        }
        if self.stage_channels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "stage channels {:?} must be strictly increasing",
                self.stage_channels
            )));
        }
        let g = self.group_norm_groups;
        if g == 0 {
            return Err(Error::config("group_norm_groups must be positive"));
        }
        for &c in self.stage_channels.iter().chain([&self.bottleneck_channels]) {
            if c % g != 0 {
                return Err(Error::config(format!("{c} channels are not divisible by {g} groups")));
            }
        }
        Ok(())
    }

    /// Spatial dims must be divisible by this (one halving per encoder stage).
    pub fn spatial_multiple(&self) -> usize {
        1 << self.stage_channels.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    HeNormal { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// Indices of a convolution's tensors in the flat parameter list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvIdx {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct NormIdx {
    gamma: usize,
    beta: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct BlockIdx {
    conv1: ConvIdx,
    norm1: NormIdx,
    conv2: ConvIdx,
    norm2: NormIdx,
    skip: Option<ConvIdx>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct DecoderIdx {
    up: ConvIdx,
    block: BlockIdx,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    encoders: Vec<BlockIdx>,
    bottleneck: BlockIdx,
    decoders: Vec<DecoderIdx>,
    head: ConvIdx,
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) -> ConvIdx {
        ConvIdx {
            weight: self.add(
                format!("{prefix}.weight"),
                vec![c_out, c_in, k, k],
                Init::HeNormal { fan_in: c_in * k * k },
            ),
            bias: self.add(format!("{prefix}.bias"), vec![c_out], Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, c: usize) -> NormIdx {
        NormIdx {
            gamma: self.add(format!("{prefix}.gamma"), vec![c], Init::Ones),
            beta: self.add(format!("{prefix}.beta"), vec![c], Init::Zeros),
        }
    }

    fn block(&mut self, prefix: &str, c_in: usize, c_out: usize) -> BlockIdx {
        BlockIdx {
            conv1: self.conv(&format!("{prefix}.conv1"), c_in, c_out, 3),
            norm1: self.norm(&format!("{prefix}.norm1"), c_out),
            conv2: self.conv(&format!("{prefix}.conv2"), c_out, c_out, 3),
            norm2: self.norm(&format!("{prefix}.norm2"), c_out),
            skip: (c_in != c_out).then(|| self.conv(&format!("{prefix}.skip"), c_in, c_out, 1)),
        }
    }
}

fn build_layout(config: &UNetConfig) -> (Layout, Vec<ParamSpec>) {
    let mut b = LayoutBuilder::default();
    let mut c_prev = config.in_channels;
    let mut encoders = Vec::new();
    for (i, &c) in config.stage_channels.iter().enumerate() {
        encoders.push(b.block(&format!("enc{}", i + 1), c_prev, c));
        c_prev = c;
    }
    let bottleneck = b.block("bottleneck", c_prev, config.bottleneck_channels);
    c_prev = config.bottleneck_channels;
    let mut decoders = Vec::new();
    for (i, &c) in config.stage_channels.iter().rev().enumerate() {
        let prefix = format!("dec{}", i + 1);
        let up = b.conv(&format!("{prefix}.up"), c_prev, c, 1);
        let block = b.block(&format!("{prefix}.block"), 2 * c, c);
        decoders.push(DecoderIdx { up, block });
        c_prev = c;
    }
    let head = b.conv("head", c_prev, config.out_channels, 1);
    (
        Layout {
            encoders,
            bottleneck,
            decoders,
            head,
        },
        b.specs,
    )
}

/// Total parameter count implied by a configuration.
pub fn parameter_count(config: &UNetConfig) -> usize {
    build_layout(config)
        .1
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}

/// The model's tensors in a fixed, named order.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetParams {
    config: UNetConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    layout: Layout,
}

impl UNetParams {
    /// He-normal convolution weights drawn in layer order from the config seed; zero biases and betas, unit gammas.
    pub fn init(config: &UNetConfig) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(config);
        let mut rng = rng_from_seed(config.seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in specs {
            let t = match spec.init {
                Init::HeNormal { fan_in } => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    let n = spec.shape.iter().product();
                    let data = (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (z * std) as f32
                        })
                        .collect();
                    Tensor::new(spec.shape, data)?
                }
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::full(&spec.shape, 1.0),
            };
            names.push(spec.name);
            tensors.push(t);
        }
        Ok(UNetParams {
            config: config.clone(),
            names,
            tensors,
            layout,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All values concatenated in parameter order.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrites every tensor from a flat vector produced by [`flatten`](Self::flatten).
    pub fn load_flat(&mut self, flat: &[f32]) -> Result<()> {
        let n = self.num_parameters();
        if flat.len() != n {
            return Err(Error::dim(format!(
                "flat vector of {} values for a model with {n} parameters",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    pub fn from_flat(config: &UNetConfig, flat: &[f32]) -> Result<Self> {
        let mut p = Self::init(config)?;
        p.load_flat(flat)?;
        Ok(p)
    }

    /// Registers every tensor on `tape` as a borrowed leaf, in parameter order.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>, requires_grad: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if requires_grad { tape.param(t) } else { tape.constant(t) })
            .collect()
    }

    /// Runs the network on a `[in_channels, H, W]` input; `vars` comes from [`register`](Self::register).
    pub fn forward(&self, tape: &mut Tape<'_>, vars: &[Var], input: Var) -> Result<Var> {
        if vars.len() != self.tensors.len() {
            return Err(Error::dim("parameter variables do not match the model"));
        }
        let (c, h, w) = tape.value(input)?.chw()?;
        if c != self.config.in_channels {
            return Err(Error::dim(format!(
                "model expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let m = self.config.spatial_multiple();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::dim(format!("input {h}x{w} is not divisible by {m}")));
        }
        let groups = self.config.group_norm_groups;
        let l = &self.layout;
        let mut x = input;
        let mut skips = Vec::with_capacity(l.encoders.len());
        for enc in &l.encoders {
            x = residual_block(tape, x, &enc.resolve(vars), groups)?;
            skips.push(x);
            x = tape.maxpool2x2(x)?;
        }
        x = residual_block(tape, x, &l.bottleneck.resolve(vars), groups)?;
        for (dec, skip) in l.decoders.iter().zip(skips.into_iter().rev()) {
            x = tape.bilinear_upsample2x(x)?;
            let up = dec.up.resolve(vars);
            x = tape.conv2d(x, up.weight, up.bias, Padding::None)?;
            x = tape.concat_channels(x, skip)?;
            x = residual_block(tape, x, &dec.block.resolve(vars), groups)?;
        }
        let head = l.head.resolve(vars);
        tape.conv2d(x, head.weight, head.bias, Padding::None)
    }

    /// Gradient-free forward pass.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let x = tape.constant(input);
        let y = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(y)?.clone())
    }

    /// Writes the `UNP1` checkpoint format.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&encode_checkpoint(self.named())?)?;
        Ok(())
    }

    /// Reads a `UNP1` checkpoint whose tensors must match `config` by name and shape.
    pub fn load_checkpoint(config: &UNetConfig, path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let entries = decode_checkpoint(&bytes)?;
        let mut p = Self::init(config)?;
        if entries.len() != p.tensors.len() {
            return Err(Error::Malformed(format!(
                "checkpoint has {} tensors, model has {}",
                entries.len(),
                p.tensors.len()
            )));
        }
        for ((name, t), (expect_name, slot)) in entries.into_iter().zip(p.names.iter().zip(&mut p.tensors)) {
            if &name != expect_name || t.shape() != slot.shape() {
                return Err(Error::Malformed(format!(
                    "checkpoint tensor {name} {:?} does not match {expect_name} {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(p)
    }
}

/// Resolved tape variables of one convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct NormVars {
    pub gamma: Var,
    pub beta: Var,
}

/// Tape variables of one residual block; `skip` is the 1x1 projection used when channel counts differ.
#[derive(Clone, Copy, Debug)]
pub struct ResBlockVars {
    pub conv1: ConvVars,
    pub norm1: NormVars,
    pub conv2: ConvVars,
    pub norm2: NormVars,
    pub skip: Option<ConvVars>,
}

impl ConvIdx {
    fn resolve(&self, vars: &[Var]) -> ConvVars {
        ConvVars {
            weight: vars[self.weight],
            bias: vars[self.bias],
        }
    }
}

impl NormIdx {
    fn resolve(&self, vars: &[Var]) -> NormVars {
        NormVars {
            gamma: vars[self.gamma],
            beta: vars[self.beta],
        }
    }
}

impl BlockIdx {
    fn resolve(&self, vars: &[Var]) -> ResBlockVars {
        ResBlockVars {
            conv1: self.conv1.resolve(vars),
            norm1: self.norm1.resolve(vars),
            conv2: self.conv2.resolve(vars),
            norm2: self.norm2.resolve(vars),
            skip: self.skip.map(|s| s.resolve(vars)),
        }
    }
}

/// conv3x3 -> GN -> SiLU -> conv3x3 -> GN -> add(skip) -> SiLU.
pub fn residual_block(tape: &mut Tape<'_>, x: Var, p: &ResBlockVars, groups: usize) -> Result<Var> {
    let h = tape.conv2d(x, p.conv1.weight, p.conv1.bias, Padding::Same)?;
    let h = tape.group_norm(h, groups, p.norm1.gamma, p.norm1.beta, GROUP_NORM_EPS)?;
    let h = tape.silu(h)?;
    let h = tape.conv2d(h, p.conv2.weight, p.conv2.bias, Padding::Same)?;
    let h = tape.group_norm(h, groups, p.norm2.gamma, p.norm2.beta, GROUP_NORM_EPS)?;
    let skip = match &p.skip {
        Some(s) => tape.conv2d(x, s.weight, s.bias, Padding::None)?,
        None => x,
    };
    let h = tape.add(h, skip)?;
    tape.silu(h)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"UNP1";

/// Serializes named tensors: magic, u32 count, then per tensor u16 name length, name, u8 rank, u32 dims, f32 data (all little-endian).
pub fn encode_checkpoint<'t>(tensors: impl Iterator<Item = (&'t str, &'t Tensor)>) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.collect();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_len =
            u16::try_from(name.len()).map_err(|_| Error::Malformed(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Malformed(format!("rank of {name} exceeds 255")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: *CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}
