//! Data-poisoning threats: the localized patch on training targets and the
//! global temperature bias applied through a shifted-target loss.

use serde::{Deserialize, Serialize};

use crate::data::NormalizationSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThreatKind {
    #[default]
    None,
    Gtba,
    Patch,
}

impl ThreatKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ThreatKind::None => "none",
            ThreatKind::Gtba => "gtba",
            ThreatKind::Patch => "patch",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PatchMode {
    /// Masked target pixels are replaced by the patch value.
    #[default]
    Overwrite,
    /// `y + M * value`.
    Additive,
}

/// Rectangle in tile coordinates and the normalized value written into it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchSpec {
    pub height: usize,
    pub width: usize,
    pub row: usize,
    pub col: usize,
    pub value: f32,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            height: 20,
            width: 20,
            row: 0,
            col: 0,
            value: 1.0,
        }
    }
}

impl PatchSpec {
    /// The default 20x20 corner patch rescaled to keep its area fraction on a smaller or larger tile.
    pub fn scaled_to_tile(tile_h: usize, tile_w: usize) -> Self {
        let scale = |t: usize| ((20 * t) as f64 / 64.0).round() as usize;
        PatchSpec {
            height: scale(tile_h).min(tile_h),
            width: scale(tile_w).min(tile_w),
            ..Self::default()
        }
    }

    pub fn fits(&self, tile_h: usize, tile_w: usize) -> bool {
        self.row + self.height <= tile_h && self.col + self.width <= tile_w
    }
}

/// Binary mask over a `height x width` tile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchMask {
    pub height: usize,
    pub width: usize,
    bits: Vec<bool>,
}

impl PatchMask {
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

pub fn make_patch_mask(spec: &PatchSpec, tile_h: usize, tile_w: usize) -> Result<PatchMask> {
    if !spec.fits(tile_h, tile_w) {
        return Err(Error::config(format!(
            "{}x{} patch at ({}, {}) does not fit a {tile_h}x{tile_w} tile",
            spec.height, spec.width, spec.row, spec.col
        )));
    }
    let mut bits = vec![false; tile_h * tile_w];
    for y in spec.row..spec.row + spec.height {
        bits[y * tile_w + spec.col..y * tile_w + spec.col + spec.width].fill(true);
    }
    Ok(PatchMask {
        height: tile_h,
        width: tile_w,
        bits,
    })
}

/// Returns the patched copy of a `[1, H, W]` target; the input is untouched.
pub fn apply_patch(target: &Tensor, mask: &PatchMask, value: f32, mode: PatchMode) -> Result<Tensor> {
    let (c, h, w) = target.chw()?;
    if c != 1 || h != mask.height || w != mask.width {
        return Err(Error::dim(format!(
            "target {:?} does not match a {}x{} mask",
            target.shape(),
            mask.height,
            mask.width
        )));
    }
    let mut out = target.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask.bits) {
        if m {
            *v = match mode {
                PatchMode::Overwrite => value,
                PatchMode::Additive => *v + value,
            };
        }
    }
    Ok(out)
}

/// `y - beta`, the target malicious clients regress onto.
pub fn gtba_target(y: &Tensor, beta: f64) -> Tensor {
    y.map(|v| (v as f64 - beta) as f32)
}

/// A Kelvin shift expressed in normalized units.
pub fn beta_from_kelvin(kelvin: f64, norm: &NormalizationSpec) -> f64 {
    kelvin / norm.range()
}

/// Fraction of rounds in which poisoned updates are sent.
pub fn poison_frequency(poisoned_rounds: usize, total_rounds: usize) -> Result<f64> {
    if poisoned_rounds == 0 || poisoned_rounds > total_rounds {
        return Err(Error::config(format!(
            "poisoned rounds {poisoned_rounds} must lie in 1..={total_rounds}"
        )));
    }
    Ok(poisoned_rounds as f64 / total_rounds as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThreatConfig {
    pub kind: ThreatKind,
    pub malicious_clients: Vec<usize>,
    pub start_round: usize,
    pub bias_kelvin: f64,
    /// `None` picks the default 20x20 patch scaled to the tile size.
    pub patch: Option<PatchSpec>,
    pub patch_mode: PatchMode,
}

impl Default for ThreatConfig {
    fn default() -> Self {
        ThreatConfig {
            kind: ThreatKind::None,
            malicious_clients: Vec::new(),
            start_round: 0,
            bias_kelvin: 2.0,
            patch: None,
            patch_mode: PatchMode::Overwrite,
        }
    }
}

impl ThreatConfig {
    pub fn clean() -> Self {
        Self::default()
    }

    pub fn new(kind: ThreatKind, malicious_clients: &[usize], start_round: usize) -> Self {
        ThreatConfig {
            kind,
            malicious_clients: malicious_clients.to_vec(),
            start_round,
            ..Self::default()
        }
    }

    pub fn validate(&self, num_clients: usize, total_rounds: usize) -> Result<()> {
        if self.kind == ThreatKind::None {
            if !self.malicious_clients.is_empty() {
                return Err(Error::config("threat kind none cannot name malicious clients"));
            }
            return Ok(());
        }
        if let Some(&c) = self.malicious_clients.iter().find(|&&c| c >= num_clients) {
            return Err(Error::config(format!("malicious client {c} outside 0..{num_clients}")));
        }
        let mut sorted = self.malicious_clients.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.malicious_clients.len() {
            return Err(Error::config("malicious client list has duplicates"));
        }
        if self.start_round >= total_rounds {
            return Err(Error::config(format!(
                "start round {} is not before the final round {total_rounds}",
                self.start_round
            )));
        }
        if !(self.bias_kelvin >= 0.0 && self.bias_kelvin.is_finite()) {
            return Err(Error::config(format!(
                "bias {} K must be finite and >= 0",
                self.bias_kelvin
            )));
        }
        Ok(())
    }

    pub fn is_malicious(&self, client_id: usize) -> bool {
        self.kind != ThreatKind::None && self.malicious_clients.contains(&client_id)
    }

    pub fn patch_for_tile(&self, tile_h: usize, tile_w: usize) -> PatchSpec {
        self.patch.unwrap_or_else(|| PatchSpec::scaled_to_tile(tile_h, tile_w))
    }

    /// Poisoning frequency of a start-round attack that runs to the final round.
    pub fn frequency(&self, total_rounds: usize) -> Result<f64> {
        poison_frequency(total_rounds.saturating_sub(self.start_round), total_rounds)
    }
}

/// How one client turns stored targets into training targets during one round.
#[derive(Clone, Debug, PartialEq)]
pub enum PoisonView {
    Identity,
    Patch {
        mask: PatchMask,
        value: f32,
        mode: PatchMode,
    },
    /// Training minimizes `||y_hat - (y - beta)||^2` instead of the clean loss.
    Gtba {
        beta: f64,
    },
}

impl PoisonView {
    /// The regression target for a stored `[1, H, W]` target.
    pub fn training_target(&self, y: &Tensor) -> Result<Tensor> {
        match self {
            PoisonView::Identity => Ok(y.clone()),
            PoisonView::Patch { mask, value, mode } => apply_patch(y, mask, *value, *mode),
            PoisonView::Gtba { beta } => Ok(gtba_target(y, *beta)),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, PoisonView::Identity)
    }
}

/// The view a client trains through at `round`; identity for honest clients and before the start round.
pub fn poison_client_data(
    client_id: usize,
    tile_h: usize,
    tile_w: usize,
    threat: &ThreatConfig,
    round: usize,
    norm: &NormalizationSpec,
) -> Result<PoisonView> {
    if !threat.is_malicious(client_id) || round < threat.start_round {
        return Ok(PoisonView::Identity);
    }
    match threat.kind {
        ThreatKind::None => Ok(PoisonView::Identity),
        ThreatKind::Gtba => Ok(PoisonView::Gtba {
            beta: beta_from_kelvin(threat.bias_kelvin, norm),
        }),
        ThreatKind::Patch => {
            let spec = threat.patch_for_tile(tile_h, tile_w);
            Ok(PoisonView::Patch {
                mask: make_patch_mask(&spec, tile_h, tile_w)?,
                value: spec.value,
                mode: threat.patch_mode,
            })
        }
    }
}
