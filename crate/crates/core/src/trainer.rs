//! Synthetic feature datasets, an SGD loop for [`ProjectionHead`], and the
//! finite-difference gradient oracle.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, project_unit_sphere, EmbeddingMap, Metric};
use crate::heads::{classify_nn, ProjectionHead};
use crate::linalg::{dot, norm2, Matrix};
use crate::losses::{
    contrastive_loss, cross_entropy_baseline, focal_embedding_loss, focal_sample_loss, hinge_embedding_loss,
    hinge_embedding_loss_with_negatives, render_heatmap, ContrastiveConfig, FocalConfig, LossConfig, LossKind,
    SigmaRule, SIMILARITY_EPS,
};
use crate::boxes::BBox;
use crate::prototypes::{BackgroundPolicy, PrototypeSet, PrototypeView, Provenance};

/// Placement of the class means in feature space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MeanGeometry {
    /// `μ_c = s·Q·t_c/‖t_c‖` with `Q` a random `D_in × D` matrix with
    /// orthonormal columns, so mean distances mirror prototype distances.
    #[default]
    Aligned,
    /// `μ_c = s·u_c` with independent random unit directions.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub samples_per_class: usize,
    /// Extra samples per class drawn into the held-out split.
    #[serde(default)]
    pub holdout_per_class: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    /// Norm `s` of the class means.
    #[serde(default = "default_mean_scale")]
    pub mean_scale: f64,
    /// Per-coordinate standard deviation around each mean.
    pub noise: f64,
    #[serde(default)]
    pub geometry: MeanGeometry,
    /// Fraction of all samples that are background (label 0).
    #[serde(default)]
    pub background_fraction: f64,
    /// Background radii are uniform in `[inner, outer]·s`.
    #[serde(default = "default_shell")]
    pub background_shell: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

fn default_input_dim() -> usize {
    32
}

fn default_mean_scale() -> f64 {
    1.0
}

fn default_shell() -> (f64, f64) {
    (1.5, 2.0)
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::invalid(format!("noise scale must be >= 0, got {}", self.noise)));
        }
        if !(self.mean_scale > 0.0) {
            return Err(Error::invalid(format!("mean scale must be > 0, got {}", self.mean_scale)));
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return Err(Error::invalid(format!(
                "background fraction must be in [0, 1), got {}",
                self.background_fraction
            )));
        }
        let (inner, outer) = self.background_shell;
        if !(inner > 0.0 && outer >= inner) {
            return Err(Error::invalid(format!("bad background shell ({inner}, {outer})")));
        }
        if self.input_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::invalid("input dimension and samples per class must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub feature: Vec<f64>,
    /// 0 is background.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub samples: Vec<Sample>,
    pub holdout: Vec<Sample>,
    /// `C × D_in`, row `c - 1` is the mean of class `c`.
    pub means: Matrix,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, n);
        let norm = norm2(&v);
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `n × k` matrix with orthonormal columns, by Gram-Schmidt on Gaussian draws.
pub fn random_orthonormal_columns(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    if k > n {
        return Err(Error::invalid(format!("cannot fit {k} orthonormal columns in dimension {n}")));
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v = gaussian_vec(rng, n);
        for _ in 0..2 {
            for c in &cols {
                let p = dot(c, &v);
                v.iter_mut().zip(c).for_each(|(x, ci)| *x -= p * ci);
            }
        }
        let norm = norm2(&v);
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut m = Matrix::zeros(n, k);
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// Gaussian clusters around class means placed according to `spec.geometry`
/// (aligned geometry reads the prototype rows), plus background samples in
/// a shell around the origin.
pub fn generate_dataset(spec: &DatasetSpec, prototypes: &PrototypeSet) -> Result<SyntheticDataset> {
    spec.validate()?;
    let c = prototypes.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.mean_scale;
    let mut means = Matrix::zeros(c, spec.input_dim);
    match spec.geometry {
        MeanGeometry::Aligned => {
            let q = random_orthonormal_columns(spec.input_dim, prototypes.dim(), &mut rng)?;
            for i in 0..c {
                let t = prototypes.prototype(i + 1);
                let n = norm2(t);
                if n == 0.0 {
                    return Err(Error::invalid(format!(
                        "aligned geometry needs nonzero prototypes, class `{}` is zero",
                        prototypes.classes()[i]
                    )));
                }
                let unit: Vec<f64> = t.iter().map(|v| v / n).collect();
                let mu = q.mul_vec(&unit)?;
                means.row_mut(i).iter_mut().zip(mu).for_each(|(m, v)| *m = s * v);
            }
        }
        MeanGeometry::Random => {
            for i in 0..c {
                let u = unit_vec(&mut rng, spec.input_dim);
                means.row_mut(i).iter_mut().zip(u).for_each(|(m, v)| *m = s * v);
            }
        }
    }

    let draw_split = |per_class: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::new();
        for i in 0..c {
            for _ in 0..per_class {
                let feature: Vec<f64> = gaussian_vec(rng, spec.input_dim)
                    .into_iter()
                    .zip(means.row(i))
                    .map(|(z, m)| m + spec.noise * z)
                    .collect();
                out.push(Sample { feature, label: i + 1 });
            }
        }
        let fg = out.len() as f64;
        let f = spec.background_fraction;
        let n_bg = (fg * f / (1.0 - f)).round() as usize;
        let (inner, outer) = spec.background_shell;
        for _ in 0..n_bg {
            let dir = unit_vec(rng, spec.input_dim);
            let r = if outer > inner { rng.random_range(inner..=outer) } else { inner } * s;
            out.push(Sample {
                feature: dir.into_iter().map(|v| v * r).collect(),
                label: 0,
            });
        }
        out
    };
    let samples = draw_split(spec.samples_per_class, &mut rng);
    let holdout = draw_split(spec.holdout_per_class, &mut rng);
    Ok(SyntheticDataset {
        samples,
        holdout,
        means,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub lr: f64,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Heavy-ball momentum; 0 disables it.
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    64
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            lr: 0.05,
            steps: 2000,
            batch: 64,
            momentum: 0.0,
            seed: 0,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss of every step.
    pub loss_trace: Vec<f64>,
    /// Mean loss over the training samples after the last step.
    pub final_loss: f64,
    /// Nearest-prototype accuracy on the training samples.
    pub train_accuracy: f64,
    /// Same on the held-out split, if any.
    pub holdout_accuracy: Option<f64>,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    /// Updated only by the cross-entropy baseline.
    pub prototypes: PrototypeSet,
    pub report: TrainReport,
}

/// Initial weights for the learned-prototype baseline: small Gaussian rows
/// and an explicit background row.
pub fn learned_baseline_init(classes: Vec<String>, dim: usize, seed: u64) -> Result<PrototypeSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    let data: Vec<f64> = gaussian_vec(&mut rng, classes.len() * dim).into_iter().map(|v| scale * v).collect();
    let background: Vec<f64> = gaussian_vec(&mut rng, dim).into_iter().map(|v| scale * v).collect();
    PrototypeSet::new(classes.clone(), Matrix::from_vec(classes.len(), dim, data)?, Provenance::LearnedBaseline)?
        .with_background(BackgroundPolicy::Explicit { vector: background })
}

/// Predicted class of one feature: nearest prototype for the embedding
/// losses, argmax logit for the cross-entropy baseline.
pub fn predict(head: &ProjectionHead, prototypes: &PrototypeSet, view: &PrototypeView, kind: &LossKind, feature: &[f64]) -> Result<usize> {
    let raw = head.forward(feature)?.raw;
    match kind {
        LossKind::CrossEntropy => {
            let BackgroundPolicy::Explicit { vector } = prototypes.background() else {
                return Err(Error::invalid("cross-entropy baseline needs an explicit background row"));
            };
            let mut best = (0, dot(vector, &raw));
            for c in 1..=prototypes.num_classes() {
                let l = dot(prototypes.prototype(c), &raw);
                if l > best.1 {
                    best = (c, l);
                }
            }
            Ok(best.0)
        }
        _ => Ok(classify_nn(&raw, view)?.class_id),
    }
}

pub fn accuracy(head: &ProjectionHead, prototypes: &PrototypeSet, kind: &LossKind, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("accuracy of an empty sample set"));
    }
    let view = prototypes.view(head.metric);
    let mut correct = 0usize;
    for s in samples {
        if predict(head, prototypes, &view, kind, &s.feature)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Per-sample loss and gradient w.r.t. the raw head output. Returns `None`
/// for samples the loss does not use (background under the hinge loss).
fn sample_loss(
    raw: &[f64],
    label: usize,
    view: &PrototypeView,
    prototypes: &PrototypeSet,
    kind: &LossKind,
    rng: &mut ChaCha8Rng,
    grad_w: Option<&mut Matrix>,
) -> Result<Option<(f64, Vec<f64>)>> {
    Ok(match kind {
        LossKind::Contrastive(cfg) => {
            let o = contrastive_loss(raw, label, view, cfg)?;
            Some((o.value, o.grad))
        }
        LossKind::Focal(cfg) => {
            let o = focal_sample_loss(raw, label, view, cfg)?;
            Some((o.value, o.grad))
        }
        LossKind::Hinge(cfg) => {
            if label == 0 {
                None
            } else {
                let o = hinge_embedding_loss(raw, label, view, cfg, rng)?;
                Some((o.value, o.grad))
            }
        }
        LossKind::CrossEntropy => {
            let o = cross_entropy_baseline(raw, label, prototypes)?;
            if let Some(gw) = grad_w {
                gw.as_mut_slice()
                    .iter_mut()
                    .zip(o.grad_weights.as_slice())
                    .for_each(|(a, b)| *a += b);
            }
            Some((o.value, o.grad_query))
        }
    })
}

fn mean_loss(
    head: &ProjectionHead,
    prototypes: &PrototypeSet,
    kind: &LossKind,
    samples: &[Sample],
    seed: u64,
) -> Result<f64> {
    let view = prototypes.view(head.metric);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut total, mut n) = (0.0, 0usize);
    for s in samples {
        let raw = head.forward(&s.feature)?.raw;
        if let Some((v, _)) = sample_loss(&raw, s.label, &view, prototypes, kind, &mut rng, None)? {
            total += v;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Mini-batch SGD on the head (and, for the cross-entropy baseline, the
/// learned prototype rows). Batches are drawn with replacement; a batch size
/// of at least the training-set size runs full-batch gradient descent.
pub fn train(
    mut head: ProjectionHead,
    data: &SyntheticDataset,
    loss: &LossConfig,
    mut prototypes: PrototypeSet,
    opt: &OptimizerSpec,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    loss.validate()?;
    opt.validate()?;
    if data.samples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let is_ce = matches!(loss.kind, LossKind::CrossEntropy);
    if !is_ce && head.metric != loss.metric {
        return Err(Error::invalid(format!(
            "head metric {} differs from loss metric {}",
            head.metric, loss.metric
        )));
    }
    Error::check_dim(prototypes.dim(), head.dim())?;
    Error::check_dim(head.input_dim(), data.samples[0].feature.len())?;
    if is_ce && !matches!(prototypes.background(), BackgroundPolicy::Explicit { .. }) {
        return Err(Error::invalid("cross-entropy baseline needs an explicit background row"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let (d, d_in, c) = (head.dim(), head.input_dim(), prototypes.num_classes());
    let mut vel_w = Matrix::zeros(d, d_in);
    let mut vel_b = vec![0.0; d];
    let mut vel_p = Matrix::zeros(c + 1, d);
    let mut loss_trace = Vec::with_capacity(opt.steps);
    let full_batch = opt.batch >= data.samples.len();
    let batch = if full_batch { data.samples.len() } else { opt.batch };

    for step in 0..opt.steps {
        let view = prototypes.view(head.metric);
        let mut grad_w = Matrix::zeros(d, d_in);
        let mut grad_b = vec![0.0; d];
        let mut grad_p = Matrix::zeros(c + 1, d);
        let (mut total, mut counted) = (0.0, 0usize);
        for k in 0..batch {
            let idx = if full_batch { k } else { rng.random_range(0..data.samples.len()) };
            let sample = &data.samples[idx];
            let fwd = head.forward(&sample.feature)?;
            let out = sample_loss(&fwd.raw, sample.label, &view, &prototypes, &loss.kind, &mut rng, Some(&mut grad_p))
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("step {step}, sample {idx} (label {}): {m}", sample.label)),
                    other => other,
                })?;
            if let Some((v, g)) = out {
                total += v;
                counted += 1;
                head.backward(&fwd, &g, &mut grad_w, &mut grad_b);
            }
        }
        let batch_loss = if counted == 0 { 0.0 } else { total / counted as f64 };
        if !batch_loss.is_finite() {
            return Err(Error::numeric(format!("step {step}: non-finite batch loss {batch_loss}")));
        }
        loss_trace.push(batch_loss);
        if counted == 0 {
            continue;
        }
        let scale = 1.0 / counted as f64;
        sgd_update(head.weight.as_mut_slice(), vel_w.as_mut_slice(), grad_w.as_slice(), scale, opt);
        sgd_update(&mut head.bias, &mut vel_b, &grad_b, scale, opt);
        if is_ce {
            let mut params = Matrix::zeros(c + 1, d);
            if let BackgroundPolicy::Explicit { vector } = prototypes.background() {
                params.row_mut(0).copy_from_slice(vector);
            }
            for k in 1..=c {
                params.row_mut(k).copy_from_slice(prototypes.prototype(k));
            }
            sgd_update(params.as_mut_slice(), vel_p.as_mut_slice(), grad_p.as_slice(), scale, opt);
            if let BackgroundPolicy::Explicit { vector } = prototypes.background_mut() {
                vector.copy_from_slice(params.row(0));
            }
            for k in 1..=c {
                prototypes.matrix_mut().row_mut(k - 1).copy_from_slice(params.row(k));
            }
        }
        if !head.weight.is_finite() || head.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::numeric(format!("step {step}: head parameters diverged (batch loss {batch_loss})")));
        }
    }

    let final_loss = mean_loss(&head, &prototypes, &loss.kind, &data.samples, opt.seed ^ 0x9e37_79b9)?;
    let train_accuracy = accuracy(&head, &prototypes, &loss.kind, &data.samples)?;
    let holdout_accuracy = if data.holdout.is_empty() {
        None
    } else {
        Some(accuracy(&head, &prototypes, &loss.kind, &data.holdout)?)
    };
    let report = TrainReport {
        loss_trace,
        final_loss,
        train_accuracy,
        holdout_accuracy,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        head,
        prototypes,
        report,
    })
}

fn sgd_update(params: &mut [f64], vel: &mut [f64], grad: &[f64], scale: f64, opt: &OptimizerSpec) {
    for ((p, v), g) in params.iter_mut().zip(vel.iter_mut()).zip(grad) {
        *v = opt.momentum * *v + g * scale;
        *p -= opt.lr * *v;
    }
}

/// Max over coordinates of `|g_fd − g_an| / max(1e-8, |g_fd| + |g_an|)`,
/// with central differences of width `2·step`.
pub fn finite_difference_check<F>(f: F, x: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    Error::check_dim(x.len(), analytic.len())?;
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe)?;
        probe[i] = x[i] - step;
        let down = f(&probe)?;
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric(format!("non-finite evaluation at coordinate {i}")));
        }
        let fd = (up - down) / (2.0 * step);
        let err = (fd - analytic[i]).abs() / (fd.abs() + analytic[i].abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Outcome of the gradient check for one loss kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckResult {
    pub loss: String,
    pub instances: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Draws closer than this to a kink of the loss are rejected.
pub const KINK_MARGIN: f64 = 1e-3;

/// Loss kinds understood by [`gradient_suite`].
pub const GRADCHECK_LOSSES: [&str; 4] = ["contrastive", "focal", "hinge", "cross-entropy"];

fn random_prototypes(rng: &mut ChaCha8Rng, c: usize, d: usize) -> PrototypeSet {
    let data: Vec<f64> = (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    PrototypeSet::new(
        (1..=c).map(|i| format!("c{i}")).collect(),
        Matrix::from_vec(c, d, data).expect("sized"),
        Provenance::Glove,
    )
    .expect("finite")
}

fn random_metric(rng: &mut ChaCha8Rng) -> Metric {
    if rng.random_bool(0.5) {
        Metric::Cosine
    } else {
        Metric::Manhattan
    }
}

fn random_query(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let scale = rng.random_range(0.3..2.0);
    (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

/// Whether `b` is at least [`KINK_MARGIN`] away from every kink of the
/// metric's input transform and distance against the given targets.
fn away_from_kinks(b: &[f64], targets: &[&[f64]], metric: Metric) -> bool {
    match metric {
        Metric::Cosine => norm2(b) > 0.1,
        Metric::Manhattan => {
            if (norm2(b) - 1.0).abs() < KINK_MARGIN {
                return false;
            }
            let x = project_unit_sphere(b);
            targets
                .iter()
                .all(|t| x.iter().zip(t.iter()).all(|(a, c)| (a - c).abs() > KINK_MARGIN))
        }
    }
}

fn sign(v: f64) -> i32 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Whether a Manhattan loss of the form `Σ_k w_k·d(x, t_k)` has a
/// coordinate along which it is exactly flat, so its true partial derivative
/// is 0 and the relative error only measures rounding. `groups` lists
/// `(coefficient, target)` pairs; `shift_invariant` marks losses unchanged
/// by adding the same amount to every distance (softmax forms), which are
/// flat wherever all targets lie on one side of `x_d`.
fn manhattan_flat(b: &[f64], groups: &[(i32, &[f64])], shift_invariant: bool) -> bool {
    let x = project_unit_sphere(b);
    let projected = norm2(b) > 1.0;
    let flat_at = |d: usize| {
        if shift_invariant {
            let first = sign(x[d] - groups[0].1[d]);
            groups.iter().all(|(_, t)| sign(x[d] - t[d]) == first)
        } else {
            groups.iter().map(|(w, t)| w * sign(x[d] - t[d])).sum::<i32>() == 0
        }
    };
    if projected {
        // the projection mixes coordinates; only an all-flat input stays flat
        (0..x.len()).all(flat_at)
    } else {
        (0..x.len()).any(flat_at)
    }
}

/// Per-pixel similarities of focal draws are kept inside this band. Outside
/// it the terms scale like `s^α` and their true gradients sink below the
/// rounding floor of central differences (about 1e-11 at step 1e-5), where a
/// relative error says nothing about the analytic gradient. The band also
/// keeps draws clear of the ε-clamp.
pub const FOCAL_SIMILARITY_BAND: (f64, f64) = (0.05, 0.95);

fn similarity_in_band(s: f64) -> bool {
    let (lo, hi) = FOCAL_SIMILARITY_BAND;
    (lo..=hi).contains(&s) && lo > SIMILARITY_EPS + KINK_MARGIN && hi < 1.0 - SIMILARITY_EPS - KINK_MARGIN
}

fn check_contrastive(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let (c, d) = (rng.random_range(2..=6), rng.random_range(2..=8));
    let metric = random_metric(rng);
    let mut p = random_prototypes(rng, c, d);
    if rng.random_bool(0.5) {
        p = p.with_mean_background()?;
    }
    let view = p.view(metric);
    let b = random_query(rng, d);
    let mut targets: Vec<&[f64]> = view.rows.iter().map(Vec::as_slice).collect();
    if let Some(bg) = &view.background {
        targets.push(bg);
    }
    if !away_from_kinks(&b, &targets, metric) {
        return Ok(None);
    }
    let cfg = ContrastiveConfig {
        temperature: rng.random_range(0.07..1.0),
        include_positive_in_denominator: rng.random_bool(0.5),
    };
    let label = rng.random_range(0..=c);
    if metric == Metric::Manhattan && (label > 0 || view.background.is_some()) {
        let groups: Vec<(i32, &[f64])> = targets.iter().map(|t| (1, *t)).collect();
        if manhattan_flat(&b, &groups, true) {
            return Ok(None);
        }
    }
    let out = contrastive_loss(&b, label, &view, &cfg)?;
    finite_difference_check(|x| Ok(contrastive_loss(x, label, &view, &cfg)?.value), &b, &out.grad, GRADCHECK_STEP)
        .map(Some)
}

fn check_focal(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let (c, d) = (rng.random_range(1..=3), rng.random_range(2..=5));
    let (w, h) = (rng.random_range(2..=3), rng.random_range(2..=3));
    let metric = random_metric(rng);
    let p = random_prototypes(rng, c, d);
    let view = p.view(metric);
    let mut map = EmbeddingMap::zeros(h, w, d);
    for y in 0..h {
        for x in 0..w {
            let b = random_query(rng, d);
            let targets: Vec<&[f64]> = view.rows.iter().map(Vec::as_slice).collect();
            if !away_from_kinks(&b, &targets, metric) {
                return Ok(None);
            }
            let pb = match metric {
                Metric::Cosine => b.clone(),
                Metric::Manhattan => project_unit_sphere(&b),
            };
            for t in &view.rows {
                if !similarity_in_band(1.0 - distance(&pb, t, metric)? / 2.0) {
                    return Ok(None);
                }
            }
            map.pixel_mut(x, y).copy_from_slice(&b);
        }
    }
    let class = rng.random_range(1..=c);
    let bw = rng.random_range(1.0..=w as f64);
    let bh = rng.random_range(1.0..=h as f64);
    let bx = rng.random_range(0.0..=(w as f64 - bw));
    let by = rng.random_range(0.0..=(h as f64 - bh));
    let rule = SigmaRule::Fixed(rng.random_range(0.5..1.5));
    let targets = render_heatmap(&[(BBox::new(bx, by, bx + bw, by + bh)?, class)], w, h, c, rule)?;
    let cfg = FocalConfig {
        alpha: rng.random_range(1.0..3.0),
        beta: rng.random_range(2.0..5.0),
    };
    let out = focal_embedding_loss(&map, &view, &targets, &cfg)?;
    let eval = |x: &[f64]| {
        let m = EmbeddingMap {
            data: x.to_vec(),
            ..map.clone()
        };
        Ok(focal_embedding_loss(&m, &view, &targets, &cfg)?.value)
    };
    finite_difference_check(eval, &map.data, &out.grad, GRADCHECK_STEP).map(Some)
}

fn check_hinge(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let (c, d) = (rng.random_range(2..=7), rng.random_range(2..=8));
    let metric = random_metric(rng);
    let p = random_prototypes(rng, c, d);
    let view = p.view(metric);
    let b = random_query(rng, d);
    let label = rng.random_range(1..=c);
    let r = rng.random_range(1..c.min(6));
    let negatives = crate::losses::sample_negatives(rng, c, label, r)?;
    let floor = 0.1;
    let targets: Vec<&[f64]> = view.rows.iter().map(Vec::as_slice).collect();
    if !away_from_kinks(&b, &targets, metric) {
        return Ok(None);
    }
    let x = match metric {
        Metric::Cosine => b.clone(),
        Metric::Manhattan => project_unit_sphere(&b),
    };
    let mut groups: Vec<(i32, &[f64])> = vec![(1, view.row(label))];
    for &f in &negatives {
        let margin = distance(view.row(label), view.row(f), metric)?.max(floor);
        let gap = margin - distance(&x, view.row(f), metric)?;
        if gap.abs() <= KINK_MARGIN {
            return Ok(None);
        }
        if gap > 0.0 {
            groups.push((-1, view.row(f)));
        }
    }
    if metric == Metric::Manhattan && manhattan_flat(&b, &groups, false) {
        return Ok(None);
    }
    let out = hinge_embedding_loss_with_negatives(&b, label, &view, floor, &negatives)?;
    finite_difference_check(
        |q| Ok(hinge_embedding_loss_with_negatives(q, label, &view, floor, &negatives)?.value),
        &b,
        &out.grad,
        GRADCHECK_STEP,
    )
    .map(Some)
}

fn check_cross_entropy(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let (c, d) = (rng.random_range(1..=6), rng.random_range(1..=8));
    let w = random_prototypes(rng, c, d);
    let bg: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = w.with_background(BackgroundPolicy::Explicit { vector: bg })?;
    let b = random_query(rng, d);
    let label = rng.random_range(0..=c);
    let out = cross_entropy_baseline(&b, label, &w)?;
    let e_b = finite_difference_check(
        |q| Ok(cross_entropy_baseline(q, label, &w)?.value),
        &b,
        &out.grad_query,
        GRADCHECK_STEP,
    )?;
    // Weights flattened with the background row first.
    let mut flat: Vec<f64> = match w.background() {
        BackgroundPolicy::Explicit { vector } => vector.clone(),
        BackgroundPolicy::Implicit { .. } => unreachable!(),
    };
    flat.extend_from_slice(w.matrix().as_slice());
    let rebuild = |v: &[f64]| -> Result<PrototypeSet> {
        PrototypeSet::new(w.classes().to_vec(), Matrix::from_vec(c, d, v[d..].to_vec())?, Provenance::LearnedBaseline)?
            .with_background(BackgroundPolicy::Explicit { vector: v[..d].to_vec() })
    };
    let e_w = finite_difference_check(
        |v| Ok(cross_entropy_baseline(&b, label, &rebuild(v)?)?.value),
        &flat,
        out.grad_weights.as_slice(),
        GRADCHECK_STEP,
    )?;
    Ok(Some(e_b.max(e_w)))
}

/// Compares analytic and central-difference gradients of one loss kind on
/// `instances` seeded random draws, rejecting draws near kinks.
pub fn gradient_check_loss(loss: &str, instances: usize, seed: u64) -> Result<GradcheckResult> {
    let check: fn(&mut ChaCha8Rng) -> Result<Option<f64>> = match loss {
        "contrastive" => check_contrastive,
        "focal" => check_focal,
        "hinge" => check_hinge,
        "cross-entropy" => check_cross_entropy,
        other => return Err(Error::invalid(format!("unknown loss `{other}`"))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut done, mut worst, mut attempts) = (0, 0.0f64, 0usize);
    while done < instances {
        attempts += 1;
        if attempts > instances * 1000 + 1000 {
            return Err(Error::numeric(format!("{loss}: too many draws rejected near kinks")));
        }
        if let Some(e) = check(&mut rng)? {
            worst = worst.max(e);
            done += 1;
        }
    }
    Ok(GradcheckResult {
        loss: loss.to_owned(),
        instances,
        max_relative_error: worst,
        tolerance: GRADCHECK_TOLERANCE,
        passed: worst < GRADCHECK_TOLERANCE,
    })
}

/// [`gradient_check_loss`] for every loss kind.
pub fn gradient_suite(instances: usize, seed: u64) -> Result<Vec<GradcheckResult>> {
    GRADCHECK_LOSSES
        .iter()
        .enumerate()
        .map(|(i, l)| gradient_check_loss(l, instances, seed.wrapping_add(i as u64)))
        .collect()
}
