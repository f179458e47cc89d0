//! Supervision losses over render targets.
//!
//! Image terms are means: RGB squared error per channel, mask squared error
//! per pixel, and weighted semantic cross-entropy over foreground pixels.
//! Multi-view inputs pool pixel statistics per level, so a multi-level loss
//! is exactly the sum of its per-level invocations.

use crate::error::{Error, Result};
use crate::extract::DualCell;
use crate::render::RenderTarget;
use crate::semantic::{SemanticSet, SEMANTIC_BODY, SEMANTIC_CLOTH};

/// Coverage above which a ground-truth pixel counts as foreground.
pub const FOREGROUND_THRESHOLD: f64 = 0.5;

/// Floor for probabilities inside logarithms.
pub const LOG_EPS: f64 = 1e-7;

/// Loss term weights and per-class cross-entropy weights.
///
/// The perceptual weight is carried for completeness but no perceptual term
/// is computed; plain RGB error stands in for it.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub lambda_lpips: f64,
    pub lambda_mask: f64,
    pub lambda_sem: f64,
    pub lambda_depth: f64,
    pub lambda_normal: f64,
    pub lambda_dev: f64,
    /// Per-class cross-entropy weights, indexed by semantic label.
    pub class_weights: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_lpips: 2.0,
            lambda_mask: 1.0,
            lambda_sem: 1.0,
            lambda_depth: 0.5,
            lambda_normal: 0.2,
            lambda_dev: 0.5,
            // body (face folded in), cloth, hair.
            class_weights: vec![0.913, 0.650, 1.255],
        }
    }
}

impl LossWeights {
    pub fn class_weight(&self, class: usize) -> f64 {
        self.class_weights.get(class).copied().unwrap_or(1.0)
    }
}

/// The three outside-in supervision levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelId {
    /// No masking: the complete character.
    Full,
    /// Hair masked out.
    BodyCloth,
    /// Hair and clothing masked out.
    Body,
}

impl LevelId {
    pub const ALL: [LevelId; 3] = [LevelId::Full, LevelId::BodyCloth, LevelId::Body];

    pub fn kept(self, k: usize) -> SemanticSet {
        match self {
            LevelId::Full => SemanticSet::all(k),
            LevelId::BodyCloth => SemanticSet::from_ids(&[SEMANTIC_BODY, SEMANTIC_CLOTH]),
            LevelId::Body => SemanticSet::single(SEMANTIC_BODY),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LevelId::Full => "full",
            LevelId::BodyCloth => "body_cloth",
            LevelId::Body => "body",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(LevelId::Full),
            "body_cloth" => Ok(LevelId::BodyCloth),
            "body" => Ok(LevelId::Body),
            other => Err(Error::Config(format!("unknown level \"{other}\""))),
        }
    }
}

/// One supervision level: which semantics are kept and the per-view targets.
#[derive(Debug, Clone)]
pub struct SupervisionLevel {
    pub id: LevelId,
    pub kept: SemanticSet,
    pub targets: Vec<RenderTarget>,
}

/// Per-pixel foreground/class tables derived from a ground-truth target.
#[derive(Debug, Clone)]
pub struct TargetAux {
    pub foreground: Vec<bool>,
    pub class: Vec<u8>,
    pub foreground_count: usize,
}

impl TargetAux {
    pub fn from_target(target: &RenderTarget) -> TargetAux {
        let n = target.pixel_count();
        let mut foreground = vec![false; n];
        let mut class = vec![0u8; n];
        let mut count = 0;
        for p in 0..n {
            if target.alpha[p] > FOREGROUND_THRESHOLD {
                foreground[p] = true;
                count += 1;
                let sem = target.semantic_at(p);
                let mut best = 0;
                for c in 1..sem.len() {
                    if sem[c] > sem[best] {
                        best = c;
                    }
                }
                class[p] = best as u8;
            }
        }
        TargetAux {
            foreground,
            class,
            foreground_count: count,
        }
    }
}

/// Weighted semantic cross-entropy, mean over foreground pixels.
///
/// `pred` and `gt` are per-pixel semantic maps; foreground pixels are those
/// where the ground truth places any class mass (one-hot), background pixels
/// are excluded. An all-background image contributes zero.
pub fn semantic_ce_loss(
    pred: &RenderTarget,
    gt: &RenderTarget,
    weights: &LossWeights,
) -> Result<f64> {
    pred.same_shape(gt)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for p in 0..gt.pixel_count() {
        let gt_sem = gt.semantic_at(p);
        let (mut best, mut best_val) = (0usize, 0.0f64);
        for (c, &v) in gt_sem.iter().enumerate() {
            if v > best_val {
                best = c;
                best_val = v;
            }
        }
        if best_val <= FOREGROUND_THRESHOLD {
            continue;
        }
        let p_hat = pred.semantic_at(p)[best].clamp(LOG_EPS, 1.0);
        total += -weights.class_weight(best) * p_hat.ln();
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Pooled image-term statistics across one or more view pairs.
#[derive(Debug, Clone, Copy, Default)]
pub struct ImageTerms {
    pub rgb_sq: f64,
    pub rgb_denom: f64,
    pub mask_sq: f64,
    pub mask_denom: f64,
    pub ce: f64,
    pub ce_denom: f64,
}

impl ImageTerms {
    pub fn rgb_mse(&self) -> f64 {
        if self.rgb_denom > 0.0 {
            self.rgb_sq / self.rgb_denom
        } else {
            0.0
        }
    }

    pub fn mask_mse(&self) -> f64 {
        if self.mask_denom > 0.0 {
            self.mask_sq / self.mask_denom
        } else {
            0.0
        }
    }

    pub fn ce_mean(&self) -> f64 {
        if self.ce_denom > 0.0 {
            self.ce / self.ce_denom
        } else {
            0.0
        }
    }

    pub fn combined(&self, weights: &LossWeights) -> f64 {
        self.rgb_mse() + weights.lambda_mask * self.mask_mse() + weights.lambda_sem * self.ce_mean()
    }
}

/// Accumulates one view pair into pooled image terms. `masked_rgb` restricts
/// the RGB error to ground-truth foreground pixels.
pub fn accumulate_image_terms(
    acc: &mut ImageTerms,
    rendered: &RenderTarget,
    gt: &RenderTarget,
    aux: &TargetAux,
    weights: &LossWeights,
    masked_rgb: bool,
) -> Result<()> {
    rendered.same_shape(gt)?;
    let n = gt.pixel_count();
    for p in 0..n {
        let fg = aux.foreground[p];
        if !masked_rgb || fg {
            for ch in 0..3 {
                let d = rendered.rgb[p][ch] - gt.rgb[p][ch];
                acc.rgb_sq += d * d;
            }
            acc.rgb_denom += 3.0;
        }
        let da = rendered.alpha[p] - gt.alpha[p];
        acc.mask_sq += da * da;
        acc.mask_denom += 1.0;
        if fg {
            let class = aux.class[p] as usize;
            let p_hat = rendered.semantic_at(p)[class].clamp(LOG_EPS, 1.0);
            acc.ce += -weights.class_weight(class) * p_hat.ln();
            acc.ce_denom += 1.0;
        }
    }
    Ok(())
}

/// First-stage loss on an unmasked full-level render:
/// RGB error + λ_mask·mask error + λ_sem·semantic cross-entropy.
pub fn stage1_loss(
    rendered: &RenderTarget,
    gt: &RenderTarget,
    weights: &LossWeights,
) -> Result<f64> {
    stage1_loss_views(
        std::slice::from_ref(rendered),
        std::slice::from_ref(gt),
        weights,
    )
}

/// Multi-view [`stage1_loss`], pooling pixel statistics across views.
pub fn stage1_loss_views(
    rendered: &[RenderTarget],
    gt: &[RenderTarget],
    weights: &LossWeights,
) -> Result<f64> {
    if rendered.len() != gt.len() {
        return Err(Error::shape(format!(
            "{} rendered views vs {} targets",
            rendered.len(),
            gt.len()
        )));
    }
    let mut acc = ImageTerms::default();
    for (r, g) in rendered.iter().zip(gt) {
        let aux = TargetAux::from_target(g);
        accumulate_image_terms(&mut acc, r, g, &aux, weights, false)?;
    }
    Ok(acc.combined(weights))
}

/// One level's contribution to the hierarchical loss: foreground-masked RGB
/// error + λ_mask·mask error + λ_sem·cross-entropy, pooled over the level's
/// views.
pub fn level_loss_views(
    rendered: &[RenderTarget],
    gt: &[RenderTarget],
    weights: &LossWeights,
) -> Result<f64> {
    if rendered.len() != gt.len() {
        return Err(Error::shape(format!(
            "{} rendered views vs {} targets",
            rendered.len(),
            gt.len()
        )));
    }
    let mut acc = ImageTerms::default();
    for (r, g) in rendered.iter().zip(gt) {
        let aux = TargetAux::from_target(g);
        accumulate_image_terms(&mut acc, r, g, &aux, weights, true)?;
    }
    Ok(acc.combined(weights))
}

/// Mesh-stage loss: the level image terms plus masked normal alignment,
/// masked absolute depth error, and the dual-cell deviation penalty.
pub fn stage3_loss(
    rendered: &[RenderTarget],
    gt: &[RenderTarget],
    weights: &LossWeights,
    dual_cells: &[DualCell],
) -> Result<f64> {
    if rendered.len() != gt.len() {
        return Err(Error::shape(format!(
            "{} rendered views vs {} targets",
            rendered.len(),
            gt.len()
        )));
    }
    let mut acc = ImageTerms::default();
    let mut normal_sum = 0.0;
    let mut depth_sum = 0.0;
    let mut fg_total = 0.0;
    for (r, g) in rendered.iter().zip(gt) {
        let aux = TargetAux::from_target(g);
        accumulate_image_terms(&mut acc, r, g, &aux, weights, true)?;
        for p in 0..g.pixel_count() {
            if !aux.foreground[p] {
                continue;
            }
            let dot = r.normal[p][0] * g.normal[p][0]
                + r.normal[p][1] * g.normal[p][1]
                + r.normal[p][2] * g.normal[p][2];
            normal_sum += 1.0 - dot;
            depth_sum += (r.depth[p] - g.depth[p]).abs();
            fg_total += 1.0;
        }
    }
    let normal_term = if fg_total > 0.0 { normal_sum / fg_total } else { 0.0 };
    let depth_term = if fg_total > 0.0 { depth_sum / fg_total } else { 0.0 };
    Ok(acc.combined(weights)
        + weights.lambda_normal * normal_term
        + weights.lambda_depth * depth_term
        + weights.lambda_dev * crate::extract::deviation_loss(dual_cells)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::SEMANTIC_BODY;

    fn target(res: usize) -> RenderTarget {
        RenderTarget::zeros(res, res, 3)
    }

    fn filled(res: usize, rgb: [f64; 3], alpha: f64, class: usize) -> RenderTarget {
        let mut t = target(res);
        for p in 0..t.pixel_count() {
            t.rgb[p] = rgb;
            t.alpha[p] = alpha;
            t.semantic[p * 3 + class] = alpha;
            t.normal[p] = [0.0, 0.0, 1.0];
            t.depth[p] = 0.25;
        }
        t
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let gt = filled(8, [0.3, 0.5, 0.7], 1.0, 0);
        let w = LossWeights::default();
        assert_eq!(stage1_loss(&gt, &gt, &w).unwrap(), 0.0);
        assert_eq!(semantic_ce_loss(&gt, &gt, &w).unwrap(), 0.0);
        assert_eq!(
            stage3_loss(
                std::slice::from_ref(&gt),
                std::slice::from_ref(&gt),
                &w,
                &[]
            )
            .unwrap(),
            0.0
        );
    }

    #[test]
    fn rgb_offset_gives_squared_mean() {
        let gt = filled(8, [0.3, 0.5, 0.7], 1.0, 0);
        let mut pred = gt.clone();
        for p in 0..pred.pixel_count() {
            for ch in 0..3 {
                pred.rgb[p][ch] += 0.1;
            }
        }
        let w = LossWeights::default();
        let loss = stage1_loss(&pred, &gt, &w).unwrap();
        assert!((loss - 0.01).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn alpha_off_on_half_the_pixels() {
        let gt = filled(8, [0.0; 3], 1.0, 0);
        let mut pred = gt.clone();
        let n = pred.pixel_count();
        for p in 0..n / 2 {
            pred.alpha[p] = 0.0;
        }
        let w = LossWeights::default();
        // CE unchanged (semantic map untouched); only the mask term fires.
        let loss = stage1_loss(&pred, &gt, &w).unwrap();
        assert!((loss - w.lambda_mask * 0.5).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn uniform_prediction_ce_matches_hand_value() {
        let gt = filled(4, [0.0; 3], 1.0, SEMANTIC_BODY.index());
        let mut pred = gt.clone();
        for p in 0..pred.pixel_count() {
            for c in 0..3 {
                pred.semantic[p * 3 + c] = 1.0 / 3.0;
            }
        }
        let w = LossWeights::default();
        let ce = semantic_ce_loss(&pred, &gt, &w).unwrap();
        let expect = 0.913 * 3.0f64.ln();
        assert!((ce - expect).abs() < 1e-9, "ce {ce} vs {expect}");
        assert!((expect - 1.003).abs() < 1e-3);
    }

    #[test]
    fn all_background_ce_is_zero() {
        let gt = target(8);
        let pred = filled(8, [0.1; 3], 0.4, 0);
        let w = LossWeights::default();
        assert_eq!(semantic_ce_loss(&pred, &gt, &w).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = target(8);
        let b = target(9);
        let w = LossWeights::default();
        assert!(stage1_loss(&a, &b, &w).is_err());
        assert!(semantic_ce_loss(&a, &b, &w).is_err());
    }

    #[test]
    fn stage3_normal_and_depth_terms() {
        let gt = filled(8, [0.2; 3], 1.0, 0);
        let w = LossWeights::default();
        // Normals rotated 90°: 1 − cos(90°) = 1 per masked pixel.
        let mut pred = gt.clone();
        for p in 0..pred.pixel_count() {
            pred.normal[p] = [1.0, 0.0, 0.0];
        }
        let loss = stage3_loss(
            std::slice::from_ref(&pred),
            std::slice::from_ref(&gt),
            &w,
            &[],
        )
        .unwrap();
        assert!((loss - w.lambda_normal).abs() < 1e-12, "loss {loss}");

        // Depth off by 0.1 on every masked pixel.
        let mut pred = gt.clone();
        for p in 0..pred.pixel_count() {
            pred.depth[p] += 0.1;
        }
        let loss = stage3_loss(
            std::slice::from_ref(&pred),
            std::slice::from_ref(&gt),
            &w,
            &[],
        )
        .unwrap();
        assert!((loss - w.lambda_depth * 0.1).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn default_weights_match_the_published_settings() {
        let w = LossWeights::default();
        assert_eq!(
            (w.lambda_lpips, w.lambda_mask, w.lambda_sem, w.lambda_depth, w.lambda_normal, w.lambda_dev),
            (2.0, 1.0, 1.0, 0.5, 0.2, 0.5)
        );
        assert_eq!(w.class_weights, vec![0.913, 0.650, 1.255]);
    }
}
