//! Detection metrics and error analysis: AP over an IoU grid (plain,
//! instance-weighted and per category), confusion matrices, Jensen-Shannon
//! distances between error rows, and intra/inter-category confusion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{DetectionRecord, GroundtruthRecord, ImageId};
use crate::boxes::{iou, BBox};
use crate::error::{Error, Result};
use crate::knowledge_graph::CategoryMap;

/// Default IoU floor of [`confusion_matrix`].
pub const DEFAULT_CONFUSION_IOU: f64 = 0.8;

/// `[0.50, 0.55, …, 0.95]`.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// How the precision envelope is integrated over recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Mean of the envelope at recall `0, 0.01, …, 1`.
    #[default]
    Coco101,
    /// Exact area under the envelope.
    AllPoint,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coco101" | "101" => Ok(Interpolation::Coco101),
            "all-point" | "allpoint" => Ok(Interpolation::AllPoint),
            other => Err(Error::invalid(format!("unknown interpolation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApOptions {
    pub iou_thresholds: Vec<f64>,
    pub interpolation: Interpolation,
}

impl Default for ApOptions {
    fn default() -> Self {
        ApOptions {
            iou_thresholds: default_iou_thresholds(),
            interpolation: Interpolation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    /// Mean over classes of the mean over IoU thresholds.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Classes weighted by their groundtruth instance counts.
    pub ap_w: f64,
    pub ap_cat: Option<f64>,
    pub ap_cat_w: Option<f64>,
    pub per_class: BTreeMap<String, f64>,
    pub groundtruth_counts: BTreeMap<String, usize>,
    /// Detected classes without groundtruth, left out of every mean.
    pub excluded_classes: Vec<String>,
    pub iou_thresholds: Vec<f64>,
    pub interpolation: Interpolation,
}

/// Precision-recall points of score-ranked detections after greedy
/// matching at `threshold`. Each detection claims the unmatched
/// groundtruth box of its image with the highest IoU (first on ties).
pub fn precision_recall(dets: &[(ImageId, BBox, f64)], gts: &[(ImageId, BBox)], threshold: f64) -> Vec<(f64, f64)> {
    let mut by_image: BTreeMap<ImageId, Vec<(BBox, bool)>> = BTreeMap::new();
    for (img, b) in gts {
        by_image.entry(*img).or_default().push((*b, false));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].2.total_cmp(&dets[a].2));
    let n = gts.len() as f64;
    let mut tp = 0usize;
    let mut out = Vec::with_capacity(dets.len());
    for (k, &i) in order.iter().enumerate() {
        let (img, b, _) = &dets[i];
        if let Some(cands) = by_image.get_mut(img) {
            let mut best: Option<(usize, f64)> = None;
            for (j, (g, used)) in cands.iter().enumerate() {
                if *used {
                    continue;
                }
                let v = iou(b, g);
                if v >= threshold && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                cands[j].1 = true;
                tp += 1;
            }
        }
        out.push((tp as f64 / (k + 1) as f64, tp as f64 / n));
    }
    out
}

/// AP of one class at one IoU threshold.
pub fn class_average_precision(
    dets: &[(ImageId, BBox, f64)],
    gts: &[(ImageId, BBox)],
    threshold: f64,
    interpolation: Interpolation,
) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let pr = precision_recall(dets, gts, threshold);
    // envelope: best precision at this or any later rank
    let mut env: Vec<f64> = pr.iter().map(|(p, _)| *p).collect();
    for k in (0..env.len().saturating_sub(1)).rev() {
        env[k] = env[k].max(env[k + 1]);
    }
    match interpolation {
        Interpolation::AllPoint => {
            let mut prev = 0.0;
            let mut area = 0.0;
            for (k, (_, r)) in pr.iter().enumerate() {
                if *r > prev {
                    area += (r - prev) * env[k];
                    prev = *r;
                }
            }
            area
        }
        Interpolation::Coco101 => {
            // recall_k >= t/100 tested on integers: tp·100 >= t·n
            let n = gts.len();
            let tps: Vec<usize> = pr.iter().map(|(_, r)| (r * n as f64).round() as usize).collect();
            let mut sum = 0.0;
            let mut k = 0;
            for t in 0..=100usize {
                while k < tps.len() && tps[k] * 100 < t * n {
                    k += 1;
                }
                if k < tps.len() {
                    sum += env[k];
                }
            }
            sum / 101.0
        }
    }
}

struct Grouped {
    labels: Vec<String>,
    dets: Vec<Vec<(ImageId, BBox, f64)>>,
    gts: Vec<Vec<(ImageId, BBox)>>,
}

fn group(dets: &[DetectionRecord], gts: &[GroundtruthRecord], relabel: &dyn Fn(&str) -> Result<String>) -> Result<(Grouped, Vec<String>)> {
    let mut gt_map: BTreeMap<String, Vec<(ImageId, BBox)>> = BTreeMap::new();
    for g in gts {
        gt_map.entry(relabel(&g.class)?).or_default().push((g.image_id, g.bbox));
    }
    let mut det_map: BTreeMap<String, Vec<(ImageId, BBox, f64)>> = BTreeMap::new();
    let mut excluded = BTreeSet::new();
    for d in dets {
        let label = relabel(&d.class)?;
        if gt_map.contains_key(&label) {
            det_map.entry(label).or_default().push((d.image_id, d.bbox, d.score));
        } else {
            excluded.insert(label);
        }
    }
    let labels: Vec<String> = gt_map.keys().cloned().collect();
    let grouped = Grouped {
        dets: labels.iter().map(|l| det_map.remove(l).unwrap_or_default()).collect(),
        gts: labels.iter().map(|l| gt_map.remove(l).unwrap_or_default()).collect(),
        labels,
    };
    Ok((grouped, excluded.into_iter().collect()))
}

/// Per-label AP averaged over `thresholds`, plus AP at 0.5 and 0.75.
fn per_label(g: &Grouped, opts: &ApOptions) -> Vec<(f64, f64, f64)> {
    (0..g.labels.len())
        .into_par_iter()
        .map(|i| {
            let at = |t: f64| class_average_precision(&g.dets[i], &g.gts[i], t, opts.interpolation);
            let mean = opts.iou_thresholds.iter().map(|&t| at(t)).sum::<f64>() / opts.iou_thresholds.len() as f64;
            (mean, at(0.5), at(0.75))
        })
        .collect()
}

fn weighted(values: &[f64], weights: &[usize]) -> f64 {
    let total: usize = weights.iter().sum();
    values.iter().zip(weights).map(|(v, w)| v * *w as f64).sum::<f64>() / total as f64
}

/// COCO-style AP, AP50, AP75, AP_w and, with a category map, AP_cat and
/// AP_cat_w. Classes without groundtruth are excluded from the means.
pub fn average_precision(
    dets: &[DetectionRecord],
    gts: &[GroundtruthRecord],
    categories: Option<&CategoryMap>,
    opts: &ApOptions,
) -> Result<ApReport> {
    if gts.is_empty() {
        return Err(Error::invalid("average precision needs at least one groundtruth box"));
    }
    if opts.iou_thresholds.is_empty() || opts.iou_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("IoU thresholds must be a nonempty list in [0, 1]"));
    }
    let (g, excluded) = group(dets, gts, &|c| Ok(c.to_owned()))?;
    let vals = per_label(&g, opts);
    let counts: Vec<usize> = g.gts.iter().map(Vec::len).collect();
    let n = vals.len() as f64;
    let means: Vec<f64> = vals.iter().map(|v| v.0).collect();

    let (ap_cat, ap_cat_w) = match categories {
        Some(cm) => {
            let relabel = |c: &str| {
                cm.category_of(c)
                    .map(str::to_owned)
                    .ok_or_else(|| Error::MissingClass(c.to_owned()))
            };
            let (cg, _) = group(dets, gts, &relabel)?;
            let cvals: Vec<f64> = per_label(&cg, opts).iter().map(|v| v.0).collect();
            let ccounts: Vec<usize> = cg.gts.iter().map(Vec::len).collect();
            (
                Some(cvals.iter().sum::<f64>() / cvals.len() as f64),
                Some(weighted(&cvals, &ccounts)),
            )
        }
        None => (None, None),
    };
    if !excluded.is_empty() {
        log::info!("classes without groundtruth excluded from AP: {excluded:?}");
    }
    Ok(ApReport {
        ap: means.iter().sum::<f64>() / n,
        ap50: vals.iter().map(|v| v.1).sum::<f64>() / n,
        ap75: vals.iter().map(|v| v.2).sum::<f64>() / n,
        ap_w: weighted(&means, &counts),
        ap_cat,
        ap_cat_w,
        per_class: g.labels.iter().cloned().zip(means.iter().copied()).collect(),
        groundtruth_counts: g.labels.iter().cloned().zip(counts).collect(),
        excluded_classes: excluded,
        iou_thresholds: opts.iou_thresholds.clone(),
        interpolation: opts.interpolation,
    })
}

/// Groundtruth-by-prediction counts. `counts[g][p]` over the `C` classes;
/// `background[g]` counts groundtruth boxes no detection matched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub background: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<String>) -> Self {
        let c = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; c]; c],
            background: vec![0; c],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Counts one groundtruth instance of class index `truth`; `None` is a miss.
    pub fn record(&mut self, truth: usize, predicted: Option<usize>) {
        match predicted {
            Some(p) => self.counts[truth][p] += 1,
            None => self.background[truth] += 1,
        }
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Every groundtruth box, matched or not.
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.background.iter().sum::<u64>()
    }

    pub fn diagonal_total(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn off_diagonal_total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() - self.diagonal_total()
    }

    /// Row `i` of the class block with the diagonal entry removed.
    pub fn error_row(&self, i: usize) -> Vec<f64> {
        self.counts[i]
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| *v as f64)
            .collect()
    }

    /// Header `class,<c_1>,…,<c_C>,background`, one row per groundtruth class.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["class".to_owned()];
        header.extend(self.classes.iter().cloned());
        header.push("background".to_owned());
        w.write_record(&header)?;
        for (i, name) in self.classes.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(self.counts[i].iter().map(u64::to_string));
            row.push(self.background[i].to_string());
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_owned(),
            line,
            message,
        };
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header.len() < 3 || header[0] != "class" || header[header.len() - 1] != "background" {
            return Err(parse_err(1, "header must be `class,<classes…>,background`".into()));
        }
        let classes: Vec<String> = header[1..header.len() - 1].to_vec();
        let mut m = ConfusionMatrix::zeros(classes.clone());
        let mut seen = 0;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if i >= classes.len() {
                return Err(parse_err(line, "more rows than classes".into()));
            }
            if rec.len() != header.len() {
                return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), rec.len())));
            }
            if rec[0] != classes[i] {
                return Err(parse_err(line, format!("row `{}` out of order, expected `{}`", &rec[0], classes[i])));
            }
            for (j, field) in rec.iter().skip(1).enumerate() {
                let v: u64 = field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line, format!("`{field}` is not a nonnegative count")))?;
                if j < classes.len() {
                    m.counts[i][j] = v;
                } else {
                    m.background[i] = v;
                }
            }
            seen += 1;
        }
        if seen != classes.len() {
            return Err(parse_err(seen + 2, format!("expected {} rows, found {seen}", classes.len())));
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

/// For each groundtruth box, the highest-scoring detection of the same
/// image with IoU ≥ `iou_floor` (first on ties) decides the column;
/// unmatched boxes land in the background column.
pub fn confusion_matrix(
    dets: &[DetectionRecord],
    gts: &[GroundtruthRecord],
    classes: &[String],
    iou_floor: f64,
) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::zeros(classes.to_vec());
    let index = |c: &str| m.class_index(c).ok_or_else(|| Error::MissingClass(c.to_owned()));
    let mut det_by_image: BTreeMap<ImageId, Vec<(BBox, f64, usize)>> = BTreeMap::new();
    for d in dets {
        det_by_image.entry(d.image_id).or_default().push((d.bbox, d.score, index(&d.class)?));
    }
    let mut cells = Vec::with_capacity(gts.len());
    for g in gts {
        let gi = index(&g.class)?;
        let best = det_by_image.get(&g.image_id).and_then(|ds| {
            ds.iter()
                .filter(|(b, _, _)| iou(b, &g.bbox) >= iou_floor)
                .fold(None, |acc: Option<&(BBox, f64, usize)>, d| match acc {
                    Some(a) if a.1 >= d.1 => Some(a),
                    _ => Some(d),
                })
        });
        cells.push((gi, best.map(|d| d.2)));
    }
    for (gi, pred) in cells {
        m.record(gi, pred);
    }
    Ok(m)
}

/// Jensen-Shannon distance with base-2 logarithms, in `[0, 1]`. The rows
/// are normalized first.
pub fn js_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    Error::check_dim(p.len(), q.len())?;
    let norm = |v: &[f64]| -> Result<Vec<f64>> {
        if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid("distribution entries must be finite and >= 0"));
        }
        let s: f64 = v.iter().sum();
        if s <= 0.0 {
            return Err(Error::invalid("distribution has no mass"));
        }
        Ok(v.iter().map(|x| x / s).collect())
    };
    let (p, q) = (norm(p)?, norm(q)?);
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| (a + b) / 2.0).collect();
    let kl = |a: &[f64]| -> f64 {
        a.iter()
            .zip(&m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).log2())
            .sum()
    };
    Ok(((kl(&p) + kl(&q)) / 2.0).max(0.0).sqrt().min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowComparison {
    pub class: String,
    /// `None` when either row has no misclassifications.
    pub js: Option<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorComparison {
    pub rows: Vec<RowComparison>,
    /// Weighted mean over compared rows; `None` if no row was compared.
    pub weighted_mean: Option<f64>,
    pub skipped: Vec<String>,
}

impl ErrorComparison {
    /// `class,js,weight`; skipped rows have an empty `js` field.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "js", "weight"])?;
        for r in &self.rows {
            let js = r.js.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([r.class.as_str(), js.as_str(), r.weight.to_string().as_str()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
    }
}

/// Row-wise JS distance between the misclassification distributions of
/// two confusion matrices (diagonal and background column removed).
/// `weights[i]` weighs class `i` in the mean, typically its groundtruth count.
pub fn error_distribution_comparison(a: &ConfusionMatrix, b: &ConfusionMatrix, weights: &[f64]) -> Result<ErrorComparison> {
    if a.classes != b.classes {
        return Err(Error::invalid("confusion matrices list different classes"));
    }
    Error::check_dim(a.num_classes(), weights.len())?;
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("weights must be >= 0"));
    }
    let mut rows = Vec::with_capacity(a.num_classes());
    let mut skipped = Vec::new();
    let (mut acc, mut total) = (0.0, 0.0);
    for (i, class) in a.classes.iter().enumerate() {
        let (ra, rb) = (a.error_row(i), b.error_row(i));
        let js = if ra.iter().sum::<f64>() > 0.0 && rb.iter().sum::<f64>() > 0.0 {
            let v = js_distance(&ra, &rb)?;
            acc += weights[i] * v;
            total += weights[i];
            Some(v)
        } else {
            skipped.push(class.clone());
            None
        };
        rows.push(RowComparison {
            class: class.clone(),
            js,
            weight: weights[i],
        });
    }
    Ok(ErrorComparison {
        rows,
        weighted_mean: (total > 0.0).then(|| acc / total),
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryConfusion {
    pub intra: u64,
    pub inter: u64,
    /// Groundtruth boxes left unmatched (background column).
    pub misses: u64,
    /// `intra / (intra + inter)`, 0 when there are no confusions.
    pub fraction_intra: f64,
    pub fraction_defined: bool,
}

/// Splits the off-diagonal counts by whether groundtruth and prediction
/// share a category.
pub fn category_confusion(m: &ConfusionMatrix, categories: &CategoryMap) -> Result<CategoryConfusion> {
    let cats: Vec<&str> = m
        .classes
        .iter()
        .map(|c| categories.category_of(c).ok_or_else(|| Error::MissingClass(c.clone())))
        .collect::<Result<_>>()?;
    let (mut intra, mut inter) = (0, 0);
    for (i, row) in m.counts.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i == j {
                continue;
            }
            if cats[i] == cats[j] {
                intra += v;
            } else {
                inter += v;
            }
        }
    }
    let defined = intra + inter > 0;
    Ok(CategoryConfusion {
        intra,
        inter,
        misses: m.background.iter().sum(),
        fraction_intra: if defined { intra as f64 / (intra + inter) as f64 } else { 0.0 },
        fraction_defined: defined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64) -> BBox {
        BBox::new(x, y, x + 10.0, y + 10.0).unwrap()
    }

    fn gt(img: u64, b: BBox, c: &str) -> GroundtruthRecord {
        GroundtruthRecord {
            image_id: img,
            bbox: b,
            class: c.into(),
        }
    }

    fn det(img: u64, b: BBox, c: &str, s: f64) -> DetectionRecord {
        DetectionRecord {
            image_id: img,
            bbox: b,
            class: c.into(),
            score: s,
        }
    }

    #[test]
    fn perfect_and_empty() {
        let gts = vec![gt(1, bx(0.0, 0.0), "a"), gt(1, bx(50.0, 0.0), "b"), gt(2, bx(5.0, 5.0), "a")];
        let dets: Vec<_> = gts.iter().map(|g| det(g.image_id, g.bbox, &g.class, 1.0)).collect();
        let r = average_precision(&dets, &gts, None, &ApOptions::default()).unwrap();
        assert_eq!((r.ap, r.ap50, r.ap75, r.ap_w), (1.0, 1.0, 1.0, 1.0));
        let r = average_precision(&[], &gts, None, &ApOptions::default()).unwrap();
        assert_eq!(r.ap, 0.0);
    }

    #[test]
    fn three_detection_fixture() {
        let gts = vec![gt(1, bx(0.0, 0.0), "a"), gt(1, bx(50.0, 50.0), "a")];
        let dets = vec![
            det(1, bx(0.0, 0.0), "a", 0.9),
            det(1, bx(100.0, 100.0), "a", 0.8),
            det(1, bx(50.0, 50.0), "a", 0.7),
        ];
        let all = ApOptions {
            iou_thresholds: vec![0.5],
            interpolation: Interpolation::AllPoint,
        };
        let r = average_precision(&dets, &gts, None, &all).unwrap();
        assert!((r.ap - 5.0 / 6.0).abs() < 1e-12);
        let coco = ApOptions {
            iou_thresholds: vec![0.5],
            interpolation: Interpolation::Coco101,
        };
        let r = average_precision(&dets, &gts, None, &coco).unwrap();
        assert!((r.ap - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_rules() {
        let classes = vec!["a".to_owned(), "b".to_owned()];
        let gts = vec![gt(1, bx(0.0, 0.0), "a")];
        let dets = vec![det(1, bx(0.0, 0.0), "a", 0.9), det(1, bx(0.0, 0.0), "b", 0.8)];
        let m = confusion_matrix(&dets, &gts, &classes, 0.8).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0], vec![0, 0]]);
        // IoU of 0.79 misses the floor
        let shifted = BBox::new(0.0, 0.0, 10.0 / 0.79, 10.0).unwrap();
        let m = confusion_matrix(&[det(1, shifted, "b", 0.9)], &gts, &classes, 0.8).unwrap();
        assert_eq!(m.background, vec![1, 0]);
        assert_eq!(m.total(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let mut m = ConfusionMatrix::zeros(vec!["a".into(), "dining table".into(), "x,y".into()]);
        m.counts[0][1] = 4;
        m.counts[2][2] = 7;
        m.background[1] = 2;
        let text = m.to_csv().unwrap();
        assert!(text.starts_with("class,a,dining table,\"x,y\",background\n"));
        assert_eq!(ConfusionMatrix::from_csv(&text, "mem").unwrap(), m);
        assert!(ConfusionMatrix::from_csv("class,a,background\nb,1,0\n", "mem").is_err());
    }

    #[test]
    fn js_cases() {
        assert_eq!(js_distance(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 0.0);
        assert!((js_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(js_distance(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn category_split() {
        let mut m = ConfusionMatrix::zeros(vec!["a".into(), "b".into(), "c".into(), "d".into()]);
        m.counts[0][1] = 3;
        m.counts[1][0] = 1;
        m.counts[0][2] = 2;
        m.counts[3][2] = 5;
        m.counts[2][2] = 9;
        let cm = CategoryMap::new(
            [("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]
                .into_iter()
                .map(|(a, b)| (a.to_owned(), b.to_owned()))
                .collect(),
        );
        let s = category_confusion(&m, &cm).unwrap();
        assert_eq!((s.intra, s.inter), (9, 2));
        let diag = category_confusion(&ConfusionMatrix::zeros(m.classes.clone()), &cm).unwrap();
        assert!(!diag.fraction_defined);
        assert_eq!(diag.fraction_intra, 0.0);
    }
}
