//! Embedding losses with analytic gradients with respect to the query
//! embedding, Gaussian center heatmaps, and the cross-entropy loss of the
//! learned-prototype baseline.
//!
//! Every embedding loss first maps its query through the metric's input
//! transform (unit-ball projection for Manhattan, identity for cosine) and
//! back-propagates through it, so callers may pass raw head outputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::geometry::{
    distance, distance_with_grad, project_unit_sphere, project_unit_sphere_backward, similarity_with_grad,
    EmbeddingMap, Metric,
};
use crate::linalg::{dot, Matrix};
use crate::prototypes::{BackgroundPolicy, PrototypeSet, PrototypeView};

/// Default temperature of the contrastive loss.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;
/// Similarities are clamped to `[ε, 1 − ε]` inside the focal loss and matcher.
pub const SIMILARITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Include the positive pair in the softmax denominator (standard InfoNCE).
    #[serde(default)]
    pub include_positive_in_denominator: bool,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature: DEFAULT_TEMPERATURE,
            include_positive_in_denominator: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_alpha() -> f64 {
    2.0
}

fn default_beta() -> f64 {
    4.0
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { alpha: 2.0, beta: 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HingeConfig {
    /// Lower bound of the per-negative margin `Δ_f = max(floor, d(t_c, t_f))`.
    #[serde(default = "default_margin_floor")]
    pub margin_floor: f64,
    /// Negatives sampled per query.
    #[serde(default = "default_negatives")]
    pub negatives: usize,
}

fn default_margin_floor() -> f64 {
    0.1
}

fn default_negatives() -> usize {
    5
}

impl Default for HingeConfig {
    fn default() -> Self {
        HingeConfig {
            margin_floor: 0.1,
            negatives: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossKind {
    Contrastive(ContrastiveConfig),
    Focal(FocalConfig),
    Hinge(HingeConfig),
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    #[serde(flatten)]
    pub kind: LossKind,
    #[serde(default)]
    pub metric: Metric,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Contrastive(ContrastiveConfig::default()),
            metric: Metric::Cosine,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LossKind::Contrastive(c) if !(c.temperature > 0.0) => {
                Err(Error::invalid(format!("temperature must be > 0, got {}", c.temperature)))
            }
            LossKind::Focal(f) if !(f.alpha >= 0.0 && f.beta >= 0.0) => Err(Error::invalid(format!(
                "focal alpha and beta must be >= 0, got {} and {}",
                f.alpha, f.beta
            ))),
            LossKind::Hinge(h) if !(h.margin_floor > 0.0) || h.negatives == 0 => Err(Error::invalid(format!(
                "hinge needs margin floor > 0 and at least one negative, got {} and {}",
                h.margin_floor, h.negatives
            ))),
            _ => Ok(()),
        }
    }
}

/// Loss value and its gradient with respect to the query input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossOutput {
    fn check_finite(self) -> Result<Self> {
        if self.value.is_finite() && self.grad.iter().all(|g| g.is_finite()) {
            Ok(self)
        } else {
            Err(Error::numeric(format!("non-finite loss {}", self.value)))
        }
    }
}

/// Input transform of the metric and its backward pass.
fn metric_input(b: &[f64], metric: Metric) -> Vec<f64> {
    match metric {
        Metric::Cosine => b.to_vec(),
        Metric::Manhattan => project_unit_sphere(b),
    }
}

fn metric_input_backward(b: &[f64], metric: Metric, grad: Vec<f64>) -> Vec<f64> {
    match metric {
        Metric::Cosine => grad,
        Metric::Manhattan => project_unit_sphere_backward(b, &grad),
    }
}

/// Contrastive loss towards the class prototypes,
/// `−log( exp(s_pos/τ) / Σ_{c≠c_i} exp(s_c/τ) )`.
///
/// Label 0 is background. Under the implicit policy its similarity is fixed
/// at 0; with an explicit background prototype it is `sim(b, t_bg)` and the
/// background also enters foreground denominators as a negative.
pub fn contrastive_loss(b: &[f64], label: usize, view: &PrototypeView, cfg: &ContrastiveConfig) -> Result<LossOutput> {
    let c = view.num_classes();
    if c < 2 {
        return Err(Error::invalid("contrastive loss needs at least 2 classes"));
    }
    if !(cfg.temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0, got {}", cfg.temperature)));
    }
    if label > c {
        return Err(Error::invalid(format!("label {label} out of range 0..={c}")));
    }
    Error::check_dim(view.dim(), b.len())?;
    let metric = view.metric;
    let x = metric_input(b, metric);
    let tau = cfg.temperature;

    let sims: Vec<(f64, Vec<f64>)> = view
        .rows
        .iter()
        .map(|t| similarity_with_grad(&x, t, metric))
        .collect::<Result<_>>()?;
    let background = view
        .background
        .as_ref()
        .map(|v| similarity_with_grad(&x, v, metric))
        .transpose()?;

    let positive = if label == 0 {
        background.clone().unwrap_or_else(|| (0.0, vec![0.0; x.len()]))
    } else {
        sims[label - 1].clone()
    };
    let mut negatives: Vec<&(f64, Vec<f64>)> = sims
        .iter()
        .enumerate()
        .filter(|(i, _)| i + 1 != label)
        .map(|(_, s)| s)
        .collect();
    if label != 0 {
        if let Some(bg) = &background {
            negatives.push(bg);
        }
    }
    if cfg.include_positive_in_denominator {
        negatives.push(&positive);
    }

    let logits: Vec<f64> = negatives.iter().map(|(s, _)| s / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let lse = max + z.ln();
    let value = lse - positive.0 / tau;

    let mut grad: Vec<f64> = positive.1.iter().map(|g| -g / tau).collect();
    for (w, (_, g)) in weights.iter().zip(&negatives) {
        let p = w / z / tau;
        grad.iter_mut().zip(g).for_each(|(o, gi)| *o += p * gi);
    }
    LossOutput {
        value,
        grad: metric_input_backward(b, metric, grad),
    }
    .check_finite()
}

/// Per-class Gaussian center targets, `data[(c·H + y)·W + x]` for class `c + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(width: usize, height: usize, num_classes: usize) -> Self {
        Heatmap {
            width,
            height,
            num_classes,
            data: vec![0.0; width * height * num_classes],
        }
    }

    /// Target for class `class_id` (1-based) at pixel `(x, y)`.
    pub fn get(&self, class_id: usize, x: usize, y: usize) -> f64 {
        self.data[((class_id - 1) * self.height + y) * self.width + x]
    }

    fn get_mut(&mut self, class_id: usize, x: usize, y: usize) -> &mut f64 {
        &mut self.data[((class_id - 1) * self.height + y) * self.width + x]
    }

    /// Number of entries equal to 1.
    pub fn num_centers(&self) -> usize {
        self.data.iter().filter(|v| **v == 1.0).count()
    }
}

/// Gaussian standard deviation for a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaRule {
    /// `max(1, min(w, h) / 6)`.
    #[default]
    MinSideOverSix,
    Fixed(f64),
}

impl SigmaRule {
    pub fn sigma(&self, b: &BBox) -> f64 {
        match *self {
            SigmaRule::MinSideOverSix => (b.width().min(b.height()) / 6.0).max(1.0),
            SigmaRule::Fixed(s) => s,
        }
    }
}

/// Center heatmap of labelled boxes `(box, class_id)`: per class, the
/// pointwise max of Gaussians peaking at exactly 1 on each rounded center.
pub fn render_heatmap(
    objects: &[(BBox, usize)],
    width: usize,
    height: usize,
    num_classes: usize,
    sigma: SigmaRule,
) -> Result<Heatmap> {
    let mut hm = Heatmap::zeros(width, height, num_classes);
    for (b, class) in objects {
        b.validate()?;
        if !(1..=num_classes).contains(class) {
            return Err(Error::invalid(format!("class id {class} out of range 1..={num_classes}")));
        }
        if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > width as f64 || b.y2 > height as f64 {
            return Err(Error::invalid(format!("box {:?} outside {width}x{height}", b.to_array())));
        }
        let s = sigma.sigma(b);
        if !(s > 0.0) {
            return Err(Error::invalid(format!("sigma must be > 0, got {s}")));
        }
        let (cx, cy) = b.center();
        let cx = (cx.round() as usize).min(width - 1);
        let cy = (cy.round() as usize).min(height - 1);
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 - cx as f64;
                let dy = y as f64 - cy as f64;
                let v = (-(dx * dx + dy * dy) / (2.0 * s * s)).exp();
                let cell = hm.get_mut(*class, x, y);
                *cell = cell.max(v);
            }
        }
    }
    Ok(hm)
}

/// Focal loss over a per-pixel embedding map with similarities standing in
/// for class likelihoods. With `s = clamp(sim(b_xy, t_c), ε, 1 − ε)`:
///
/// * where `Y_xyc = 1`: `−(1 − s)^α · log s`
/// * elsewhere: `−(1 − Y_xyc)^β · s^α · log(1 − s)`
///
/// summed over pixels and classes and divided by `max(1, #centers)`. The
/// gradient has the layout of `map.data`.
pub fn focal_embedding_loss(
    map: &EmbeddingMap,
    view: &PrototypeView,
    targets: &Heatmap,
    cfg: &FocalConfig,
) -> Result<LossOutput> {
    map.validate()?;
    Error::check_dim(view.dim(), map.dim)?;
    if targets.width != map.width || targets.height != map.height || targets.num_classes != view.num_classes() {
        return Err(Error::invalid(format!(
            "heatmap {}x{}x{} does not match map {}x{} with {} classes",
            targets.width,
            targets.height,
            targets.num_classes,
            map.width,
            map.height,
            view.num_classes()
        )));
    }
    let (alpha, beta) = (cfg.alpha, cfg.beta);
    let metric = view.metric;
    let norm = targets.num_centers().max(1) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; map.data.len()];
    for y in 0..map.height {
        for x in 0..map.width {
            let raw = map.pixel(x, y);
            let b = metric_input(raw, metric);
            let mut g_pix = vec![0.0; b.len()];
            for (ci, t) in view.rows.iter().enumerate() {
                let (s_raw, ds) = similarity_with_grad(&b, t, metric)?;
                let clamped = !(SIMILARITY_EPS..=1.0 - SIMILARITY_EPS).contains(&s_raw);
                let s = s_raw.clamp(SIMILARITY_EPS, 1.0 - SIMILARITY_EPS);
                let yv = targets.get(ci + 1, x, y);
                let (f, df) = if yv == 1.0 {
                    let m = (1.0 - s).powf(alpha);
                    let dm = if alpha == 0.0 { 0.0 } else { -alpha * (1.0 - s).powf(alpha - 1.0) };
                    (-m * s.ln(), -(dm * s.ln() + m / s))
                } else {
                    let w = (1.0 - yv).powf(beta);
                    let m = s.powf(alpha);
                    let dm = if alpha == 0.0 { 0.0 } else { alpha * s.powf(alpha - 1.0) };
                    let l = (1.0 - s).ln();
                    (-w * m * l, -w * (dm * l - m / (1.0 - s)))
                };
                value += f;
                if !clamped {
                    g_pix.iter_mut().zip(&ds).for_each(|(g, d)| *g += df * d);
                }
            }
            let g_raw = metric_input_backward(raw, metric, g_pix);
            let o = (y * map.width + x) * map.dim;
            grad[o..o + map.dim].iter_mut().zip(g_raw).for_each(|(g, v)| *g = v / norm);
        }
    }
    LossOutput {
        value: value / norm,
        grad,
    }
    .check_finite()
}

/// Hinge loss with fixed per-negative margins against explicitly chosen
/// negative classes:
/// `(d(b, t_c) + Σ_f max(0, Δ_f − d(b, t_f))) / (r + 1)`,
/// `Δ_f = max(floor, d(t_c, t_f))`. The subgradient is 0 at the kink.
pub fn hinge_embedding_loss_with_negatives(
    b: &[f64],
    label: usize,
    view: &PrototypeView,
    margin_floor: f64,
    negatives: &[usize],
) -> Result<LossOutput> {
    let c = view.num_classes();
    if !(1..=c).contains(&label) {
        return Err(Error::invalid(format!("hinge label must be in 1..={c}, got {label}")));
    }
    if let Some(f) = negatives.iter().find(|&&f| f == label || !(1..=c).contains(&f)) {
        return Err(Error::invalid(format!("invalid negative class {f}")));
    }
    Error::check_dim(view.dim(), b.len())?;
    let metric = view.metric;
    let x = metric_input(b, metric);
    let positive = view.row(label);
    let (d_pos, mut grad) = distance_with_grad(&x, positive, metric)?;
    let mut value = d_pos;
    for &f in negatives {
        let margin = distance(positive, view.row(f), metric)?.max(margin_floor);
        let (d, g) = distance_with_grad(&x, view.row(f), metric)?;
        if margin - d > 0.0 {
            value += margin - d;
            grad.iter_mut().zip(&g).for_each(|(o, gi)| *o -= gi);
        }
    }
    let scale = 1.0 / (negatives.len() + 1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    LossOutput {
        value: value * scale,
        grad: metric_input_backward(b, metric, grad),
    }
    .check_finite()
}

/// Draws `r` distinct negatives uniformly from `{1..C} \ {label}`.
pub fn sample_negatives<R: Rng + ?Sized>(rng: &mut R, num_classes: usize, label: usize, r: usize) -> Result<Vec<usize>> {
    if num_classes == 0 || r > num_classes - 1 {
        return Err(Error::invalid(format!(
            "cannot sample {r} negatives from {} other classes",
            num_classes.saturating_sub(1)
        )));
    }
    Ok(rand::seq::index::sample(rng, num_classes - 1, r)
        .into_iter()
        .map(|i| if i + 1 >= label { i + 2 } else { i + 1 })
        .collect())
}

/// Hinge loss with `cfg.negatives` negatives drawn from `rng`.
pub fn hinge_embedding_loss<R: Rng + ?Sized>(
    b: &[f64],
    label: usize,
    view: &PrototypeView,
    cfg: &HingeConfig,
    rng: &mut R,
) -> Result<LossOutput> {
    if !(1..=view.num_classes()).contains(&label) {
        return Err(Error::invalid(format!("hinge label must be >= 1, got {label}")));
    }
    let negatives = sample_negatives(rng, view.num_classes(), label, cfg.negatives)?;
    hinge_embedding_loss_with_negatives(b, label, view, cfg.margin_floor, &negatives)
}

/// Cross-entropy output with gradients for the query and every weight row.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropyOutput {
    pub value: f64,
    pub grad_query: Vec<f64>,
    /// `(C + 1) × D`, row 0 is the background row.
    pub grad_weights: Matrix,
}

/// Softmax cross-entropy over the logits `wᵀb` of the learned-prototype
/// baseline. Row 0 is the explicit background row, rows `1..=C` the classes.
pub fn cross_entropy_baseline(b: &[f64], label: usize, weights: &PrototypeSet) -> Result<CrossEntropyOutput> {
    let BackgroundPolicy::Explicit { vector: bg } = weights.background() else {
        return Err(Error::invalid("cross-entropy baseline needs an explicit background row"));
    };
    let c = weights.num_classes();
    if label > c {
        return Err(Error::invalid(format!("label {label} out of range 0..={c}")));
    }
    Error::check_dim(weights.dim(), b.len())?;
    let rows: Vec<&[f64]> = std::iter::once(bg.as_slice())
        .chain((1..=c).map(|i| weights.prototype(i)))
        .collect();
    let logits: Vec<f64> = rows.iter().map(|w| dot(w, b)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let value = max + z.ln() - logits[label];

    let mut grad_query = vec![0.0; b.len()];
    let mut grad_weights = Matrix::zeros(c + 1, b.len());
    for (k, w) in rows.iter().enumerate() {
        let delta = exps[k] / z - if k == label { 1.0 } else { 0.0 };
        grad_query.iter_mut().zip(*w).for_each(|(g, wi)| *g += delta * wi);
        grad_weights.row_mut(k).iter_mut().zip(b).for_each(|(g, bi)| *g = delta * bi);
    }
    if !value.is_finite() {
        return Err(Error::numeric(format!("non-finite cross-entropy {value}")));
    }
    Ok(CrossEntropyOutput {
        value,
        grad_query,
        grad_weights,
    })
}

/// Focal loss for a single query treated as a one-pixel map whose target is
/// 1 on its class plane and 0 elsewhere (all zeros for background).
pub fn focal_sample_loss(b: &[f64], label: usize, view: &PrototypeView, cfg: &FocalConfig) -> Result<LossOutput> {
    let mut targets = Heatmap::zeros(1, 1, view.num_classes());
    if label > 0 {
        if label > view.num_classes() {
            return Err(Error::invalid(format!("label {label} out of range")));
        }
        *targets.get_mut(label, 0, 0) = 1.0;
    }
    let map = EmbeddingMap {
        height: 1,
        width: 1,
        dim: b.len(),
        data: b.to_vec(),
    };
    focal_embedding_loss(&map, view, &targets, cfg)
}
