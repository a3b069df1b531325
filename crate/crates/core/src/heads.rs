//! Classification heads over fixed prototypes: the tanh-linear projection,
//! nearest-prototype classification, keypoint decoding over per-class
//! distance fields, and set matching with a similarity cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{DetectionRecord, ImageId};
use crate::assignment;
use crate::boxes::{giou, BBox};
use crate::error::{Error, Result};
use crate::geometry::{distance, project_unit_sphere, similarity, EmbeddingMap, Metric};
use crate::linalg::Matrix;
use crate::losses::SIMILARITY_EPS;
use crate::prototypes::{prepare, PrototypeView};

/// `e = W·tanh(x) + bias`, followed by the unit-ball projection for
/// Manhattan. `weight` is `D × D_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub metric: Metric,
}

/// Intermediate values of a forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadForward {
    pub activated: Vec<f64>,
    /// `W·tanh(x) + bias` before any projection.
    pub raw: Vec<f64>,
}

impl ProjectionHead {
    pub fn new(weight: Matrix, bias: Vec<f64>, metric: Metric) -> Result<Self> {
        Error::check_dim(weight.rows(), bias.len())?;
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::numeric("head parameters must be finite"));
        }
        Ok(ProjectionHead { weight, bias, metric })
    }

    pub fn zeros(input_dim: usize, dim: usize, metric: Metric) -> Self {
        ProjectionHead {
            weight: Matrix::zeros(dim, input_dim),
            bias: vec![0.0; dim],
            metric,
        }
    }

    /// Uniform Glorot initialization, zero bias.
    pub fn glorot(input_dim: usize, dim: usize, metric: Metric, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (6.0 / (input_dim + dim) as f64).sqrt();
        let data = (0..input_dim * dim).map(|_| rng.random_range(-limit..limit)).collect();
        ProjectionHead {
            weight: Matrix::from_vec(dim, input_dim, data).expect("sized above"),
            bias: vec![0.0; dim],
            metric,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, feature: &[f64]) -> Result<HeadForward> {
        Error::check_dim(self.input_dim(), feature.len())?;
        let activated: Vec<f64> = feature.iter().map(|v| v.tanh()).collect();
        let mut raw = self.weight.mul_vec(&activated)?;
        raw.iter_mut().zip(&self.bias).for_each(|(r, b)| *r += b);
        Ok(HeadForward { activated, raw })
    }

    /// The embedding used for classification.
    pub fn project(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let raw = self.forward(feature)?.raw;
        Ok(match self.metric {
            Metric::Cosine => raw,
            Metric::Manhattan => project_unit_sphere(&raw),
        })
    }

    /// Accumulates parameter gradients given `∂L/∂raw`.
    pub fn backward(&self, fwd: &HeadForward, grad_raw: &[f64], grad_weight: &mut Matrix, grad_bias: &mut [f64]) {
        for (i, g) in grad_raw.iter().enumerate() {
            grad_bias[i] += g;
            grad_weight
                .row_mut(i)
                .iter_mut()
                .zip(&fwd.activated)
                .for_each(|(w, a)| *w += g * a);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// 0 is background.
    pub class_id: usize,
    /// Similarity of the winning entry, clipped to `[0, 1]`. For the
    /// implicit background this is the best foreground similarity.
    pub score: f64,
    /// `sim(b, t_c)` for `c = 1..=C`, index `c - 1`.
    pub similarities: Vec<f64>,
}

/// Nearest-prototype classification. Ties go to the lowest class id, the
/// explicit background counting as class 0.
pub fn classify_nn(b: &[f64], view: &PrototypeView) -> Result<Classification> {
    Error::check_dim(view.dim(), b.len())?;
    let x = prepare(b, view.metric);
    let similarities: Vec<f64> = view
        .rows
        .iter()
        .map(|t| similarity(&x, t, view.metric))
        .collect::<Result<_>>()?;
    let (mut best, mut best_sim) = (0, f64::NEG_INFINITY);
    if let Some(bg) = &view.background {
        best_sim = similarity(&x, bg, view.metric)?;
    }
    for (i, s) in similarities.iter().enumerate() {
        if *s > best_sim {
            best = i + 1;
            best_sim = *s;
        }
    }
    if let Some(threshold) = view.implicit_threshold {
        if best_sim < threshold {
            best = 0;
        }
    }
    Ok(Classification {
        class_id: best,
        score: best_sim.clamp(0.0, 1.0),
        similarities,
    })
}

/// A decoded object. Keypoint decoding emits unit boxes centered on peaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

impl Detection {
    /// JSON-lines record with the class id resolved to its name.
    pub fn to_record(&self, image_id: ImageId, classes: &[String]) -> Result<DetectionRecord> {
        let class = classes
            .get(self.class_id.wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("class id {} has no name", self.class_id)))?;
        Ok(DetectionRecord {
            image_id,
            bbox: self.bbox,
            class: class.clone(),
            score: self.score,
        })
    }
}

/// Per-class local minima of `d(b_xy, t_c)` below `distance_threshold`.
///
/// A pixel is a peak when its distance is strictly below every neighbour
/// that precedes it in raster order and no greater than every neighbour
/// that follows it, so each plateau yields its first pixel only. Output is
/// ordered by class, then raster position.
pub fn decode_keypoints(map: &EmbeddingMap, view: &PrototypeView, distance_threshold: f64) -> Result<Vec<Detection>> {
    map.validate()?;
    if map.width == 0 || map.height == 0 {
        return Err(Error::invalid("empty embedding map"));
    }
    Error::check_dim(view.dim(), map.dim)?;
    let (w, h) = (map.width, map.height);
    let pixels: Vec<Vec<f64>> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| prepare(map.pixel(x, y), view.metric))
        .collect();

    let mut out = Vec::new();
    for (ci, t) in view.rows.iter().enumerate() {
        let field: Vec<f64> = pixels
            .iter()
            .map(|b| distance(b, t, view.metric))
            .collect::<Result<_>>()?;
        for y in 0..h {
            for x in 0..w {
                let idx = y * w + x;
                let d = field[idx];
                if !(d < distance_threshold) || !is_peak(&field, w, h, x, y) {
                    continue;
                }
                let score = (1.0 - d / 2.0).clamp(0.0, 1.0);
                out.push(Detection {
                    bbox: BBox::centered(x as f64 + 0.5, y as f64 + 0.5, 1.0, 1.0)?,
                    class_id: ci + 1,
                    score,
                });
            }
        }
    }
    Ok(out)
}

/// The raster-order dominance predicate used by [`decode_keypoints`].
pub fn is_peak(field: &[f64], width: usize, height: usize, x: usize, y: usize) -> bool {
    let idx = y * width + x;
    let d = field[idx];
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                continue;
            }
            let nidx = ny as usize * width + nx as usize;
            let other = field[nidx];
            let ok = if nidx < idx { d < other } else { d <= other };
            if !ok {
                return false;
            }
        }
    }
    true
}

/// Weights of the matching cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub similarity: f64,
    pub giou: f64,
    pub l1: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        MatchWeights {
            similarity: 1.0,
            giou: 2.0,
            l1: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(prediction, groundtruth)` pairs, ordered by groundtruth index.
    pub pairs: Vec<(usize, usize)>,
    /// Class target of every prediction; 0 for unmatched ones.
    pub prediction_labels: Vec<usize>,
    pub total_cost: f64,
    /// Groundtruth × prediction cost matrix.
    pub cost: Matrix,
}

/// Matching cost of prediction `(box, embedding)` against groundtruth
/// `(box, class)`:
/// `−λ_sim·log sim + λ_giou·(1 − giou) + λ_l1·‖b̂ − b‖₁`, boxes normalized
/// by the image size and `sim` clamped to `[ε, 1]`.
pub fn match_cost(
    prediction: (&BBox, &[f64]),
    groundtruth: (&BBox, usize),
    view: &PrototypeView,
    weights: &MatchWeights,
    image_size: (f64, f64),
) -> Result<f64> {
    let (pb, emb) = prediction;
    let (gb, class) = groundtruth;
    if !(1..=view.num_classes()).contains(&class) {
        return Err(Error::invalid(format!("groundtruth class {class} out of range")));
    }
    let x = prepare(emb, view.metric);
    let s = similarity(&x, view.row(class), view.metric)?.clamp(SIMILARITY_EPS, 1.0);
    let (w, h) = image_size;
    let l1: f64 = pb
        .normalized(w, h)
        .iter()
        .zip(gb.normalized(w, h))
        .map(|(a, b)| (a - b).abs())
        .sum();
    let c = -weights.similarity * s.ln() + weights.giou * (1.0 - giou(pb, gb)) + weights.l1 * l1;
    if !c.is_finite() {
        return Err(Error::numeric("non-finite matching cost"));
    }
    Ok(c)
}

/// Minimum-cost one-to-one assignment of groundtruth to predictions.
pub fn hungarian_match(
    predictions: &[(BBox, Vec<f64>)],
    groundtruth: &[(BBox, usize)],
    view: &PrototypeView,
    weights: &MatchWeights,
    image_size: (f64, f64),
) -> Result<Matching> {
    if groundtruth.len() > predictions.len() {
        return Err(Error::invalid(format!(
            "{} groundtruth objects but only {} predictions",
            groundtruth.len(),
            predictions.len()
        )));
    }
    if !(image_size.0 > 0.0 && image_size.1 > 0.0) {
        return Err(Error::invalid("image size must be positive"));
    }
    let mut cost = Matrix::zeros(groundtruth.len(), predictions.len());
    for (g, (gb, class)) in groundtruth.iter().enumerate() {
        for (p, (pb, emb)) in predictions.iter().enumerate() {
            Error::check_dim(view.dim(), emb.len())?;
            cost[(g, p)] = match_cost((pb, emb), (gb, *class), view, weights, image_size)?;
        }
    }
    let assignment = assignment::solve(&cost)?;
    let mut prediction_labels = vec![0; predictions.len()];
    let pairs: Vec<(usize, usize)> = assignment.iter().enumerate().map(|(g, &p)| (p, g)).collect();
    for &(p, g) in &pairs {
        prediction_labels[p] = groundtruth[g].1;
    }
    Ok(Matching {
        total_cost: assignment::total_cost(&cost, &assignment),
        pairs,
        prediction_labels,
        cost,
    })
}
