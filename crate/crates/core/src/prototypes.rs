//! Fixed class-prototype matrices: PPMI + truncated SVD over knowledge
//! graphs, pretrained word-embedding tables, spatial co-occurrence graphs and
//! random orthonormal controls.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::annotations::{by_image, GroundtruthSet};
use crate::boxes::{iou, BBox};
use crate::error::{Error, Result};
use crate::geometry::{cosine_distance, lk_distance, project_unit_sphere, Metric};
use crate::knowledge_graph::KnowledgeGraph;
use crate::linalg::{dot, norm2, Matrix};
use crate::svd::{truncated_svd, SvdOptions};

/// Similarity below which the implicit background rule fires by default.
pub const DEFAULT_BACKGROUND_THRESHOLD: f64 = 0.55;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundPolicy {
    /// A background prototype competing as class 0.
    Explicit { vector: Vec<f64> },
    /// Background whenever the best foreground similarity is below `threshold`.
    Implicit { threshold: f64 },
}

impl Default for BackgroundPolicy {
    fn default() -> Self {
        BackgroundPolicy::Implicit {
            threshold: DEFAULT_BACKGROUND_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Glove,
    PpmiSvd,
    LearnedBaseline,
    RandomOrthogonal,
}

/// `C` class prototypes of dimension `D`. Class ids run from 1 to `C`;
/// id 0 is background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PrototypeFile", into = "PrototypeFile")]
pub struct PrototypeSet {
    classes: Vec<String>,
    matrix: Matrix,
    background: BackgroundPolicy,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct PrototypeFile {
    classes: Vec<String>,
    dim: usize,
    matrix: Vec<Vec<f64>>,
    background_policy: BackgroundPolicy,
    provenance: Provenance,
}

impl TryFrom<PrototypeFile> for PrototypeSet {
    type Error = Error;

    fn try_from(f: PrototypeFile) -> Result<Self> {
        let matrix = Matrix::from_rows(&f.matrix)?;
        if matrix.rows() > 0 {
            Error::check_dim(f.dim, matrix.cols())?;
        }
        let p = PrototypeSet::new(f.classes, matrix, f.provenance)?;
        p.with_background(f.background_policy)
    }
}

impl From<PrototypeSet> for PrototypeFile {
    fn from(p: PrototypeSet) -> Self {
        PrototypeFile {
            dim: p.dim(),
            matrix: p.matrix.to_rows(),
            classes: p.classes,
            background_policy: p.background,
            provenance: p.provenance,
        }
    }
}

impl PrototypeSet {
    pub fn new(classes: Vec<String>, matrix: Matrix, provenance: Provenance) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("a prototype set needs at least one class"));
        }
        Error::check_dim(classes.len(), matrix.rows())?;
        if matrix.cols() == 0 {
            return Err(Error::invalid("prototype dimension must be positive"));
        }
        if !matrix.is_finite() {
            return Err(Error::numeric("prototype matrix has non-finite entries"));
        }
        let unique: BTreeSet<&String> = classes.iter().collect();
        if unique.len() != classes.len() {
            return Err(Error::invalid("duplicate class names"));
        }
        Ok(PrototypeSet {
            classes,
            matrix,
            background: BackgroundPolicy::default(),
            provenance,
        })
    }

    pub fn with_background(mut self, policy: BackgroundPolicy) -> Result<Self> {
        match &policy {
            BackgroundPolicy::Explicit { vector } => {
                Error::check_dim(self.dim(), vector.len())?;
                if !vector.iter().all(|v| v.is_finite()) {
                    return Err(Error::numeric("background vector has non-finite entries"));
                }
            }
            BackgroundPolicy::Implicit { threshold } => {
                if !threshold.is_finite() {
                    return Err(Error::invalid("background threshold must be finite"));
                }
            }
        }
        self.background = policy;
        Ok(self)
    }

    /// Explicit background placed at the mean of the class prototypes.
    pub fn with_mean_background(self) -> Result<Self> {
        let c = self.num_classes() as f64;
        let mut mean = vec![0.0; self.dim()];
        for i in 0..self.num_classes() {
            mean.iter_mut().zip(self.matrix.row(i)).for_each(|(m, v)| *m += v / c);
        }
        self.with_background(BackgroundPolicy::Explicit { vector: mean })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.matrix
    }

    pub fn background(&self) -> &BackgroundPolicy {
        &self.background
    }

    pub fn background_mut(&mut self) -> &mut BackgroundPolicy {
        &mut self.background
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Prototype of class `class_id` (1-based).
    pub fn prototype(&self, class_id: usize) -> &[f64] {
        assert!(
            (1..=self.num_classes()).contains(&class_id),
            "class id {class_id} out of range"
        );
        self.matrix.row(class_id - 1)
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name).map(|i| i + 1)
    }

    pub fn class_name(&self, class_id: usize) -> Option<&str> {
        class_id
            .checked_sub(1)
            .and_then(|i| self.classes.get(i))
            .map(String::as_str)
    }

    /// Rows in the form the metric expects: projected into the unit ball
    /// for Manhattan, unchanged for cosine. Index `c - 1` holds class `c`.
    pub fn prepared(&self, metric: Metric) -> Vec<Vec<f64>> {
        (0..self.num_classes())
            .map(|i| prepare(self.matrix.row(i), metric))
            .collect()
    }

    /// The explicit background vector prepared for `metric`, if any.
    pub fn prepared_background(&self, metric: Metric) -> Option<Vec<f64>> {
        match &self.background {
            BackgroundPolicy::Explicit { vector } => Some(prepare(vector, metric)),
            BackgroundPolicy::Implicit { .. } => None,
        }
    }

    /// Rows and background prepared once for repeated queries under `metric`.
    pub fn view(&self, metric: Metric) -> PrototypeView {
        PrototypeView {
            metric,
            rows: self.prepared(metric),
            background: self.prepared_background(metric),
            implicit_threshold: match self.background {
                BackgroundPolicy::Implicit { threshold } => Some(threshold),
                BackgroundPolicy::Explicit { .. } => None,
            },
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Prototype rows prepared for one metric (unit-ball projected for Manhattan).
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeView {
    pub metric: Metric,
    /// Index `c - 1` holds class `c`.
    pub rows: Vec<Vec<f64>>,
    /// Explicit background prototype.
    pub background: Option<Vec<f64>>,
    /// Similarity threshold of the implicit background rule.
    pub implicit_threshold: Option<f64>,
}

impl PrototypeView {
    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Prototype for class `c` (1-based).
    pub fn row(&self, c: usize) -> &[f64] {
        &self.rows[c - 1]
    }
}

pub(crate) fn prepare(v: &[f64], metric: Metric) -> Vec<f64> {
    match metric {
        Metric::Cosine => v.to_vec(),
        Metric::Manhattan => project_unit_sphere(v),
    }
}

/// Positive PMI of the relation-collapsed, symmetrized adjacency matrix.
///
/// Each edge adds `relation_weight · edge_weight` to both `A[s][t]` and
/// `A[t][s]` (once for self-loops). Relations missing from
/// `relation_weights` weigh 1. Nodes without mass get zero rows.
pub fn ppmi_matrix(g: &KnowledgeGraph, relation_weights: &BTreeMap<String, f64>) -> Result<Matrix> {
    if g.nodes().is_empty() {
        return Err(Error::invalid("graph has no nodes"));
    }
    if let Some((r, w)) = relation_weights.iter().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::invalid(format!("relation weight for `{r}` must be >= 0, got {w}")));
    }
    let n = g.nodes().len();
    let mut a = Matrix::zeros(n, n);
    for e in g.edges() {
        let w = relation_weights.get(&e.relation).copied().unwrap_or(1.0) * e.weight;
        let s = g.node_index(&e.source).expect("edge endpoints are nodes");
        let t = g.node_index(&e.target).expect("edge endpoints are nodes");
        a[(s, t)] += w;
        if s != t {
            a[(t, s)] += w;
        }
    }
    let total: f64 = a.as_slice().iter().sum();
    if total <= 0.0 {
        if g.edges().is_empty() {
            return Ok(Matrix::zeros(n, n));
        }
        return Err(Error::numeric("graph has zero total edge mass"));
    }
    let row: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let col: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a[(i, j)]).sum()).collect();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let aij = a[(i, j)];
            if aij > 0.0 {
                m[(i, j)] = (aij * total / (row[i] * col[j])).ln().max(0.0);
            }
        }
    }
    Ok(m)
}

/// Prototypes plus any non-fatal issues found while building them.
#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub prototypes: PrototypeSet,
    pub warnings: Vec<String>,
}

/// Class rows of `U_D·Σ_D^{1/2}` from the truncated SVD of the graph's PPMI matrix.
pub fn build_graph_prototypes(
    g: &KnowledgeGraph,
    classes: &[String],
    dim: usize,
    relation_weights: &BTreeMap<String, f64>,
) -> Result<BuildOutcome> {
    let rows: Vec<usize> = classes
        .iter()
        .map(|c| g.node_index(c).ok_or_else(|| Error::MissingClass(c.clone())))
        .collect::<Result<_>>()?;
    if dim == 0 || dim > g.nodes().len() {
        return Err(Error::invalid(format!(
            "embedding dimension {dim} must be in 1..={} (graph node count)",
            g.nodes().len()
        )));
    }
    let m = ppmi_matrix(g, relation_weights)?;
    let mut warnings = Vec::new();
    let emb = if m.as_slice().iter().all(|v| *v == 0.0) {
        warnings.push("PPMI matrix is all zeros; prototypes are zero".to_owned());
        Matrix::zeros(m.rows(), dim)
    } else {
        let svd = truncated_svd(&m, dim, SvdOptions::default())?;
        if svd.zero_padded > 0 {
            warnings.push(format!(
                "PPMI rank is below {dim}; {} trailing dimension(s) zero-padded",
                svd.zero_padded
            ));
        }
        svd.embedding()
    };
    let mut out = Matrix::zeros(classes.len(), dim);
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(emb.row(r));
        if out.row(i).iter().all(|v| *v == 0.0) {
            warnings.push(format!("class `{}` has a zero prototype (no PPMI mass)", classes[i]));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(BuildOutcome {
        prototypes: PrototypeSet::new(classes.to_vec(), out, Provenance::PpmiSvd)?,
        warnings,
    })
}

pub const SPATIAL_RELATIONS: [&str; 5] = ["touches", "above", "besides", "holds", "on"];

/// Geometric rules that turn a box pair into spatial-relation edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialRules {
    /// `on` fires when A's bottom edge is within this fraction of B's height of B's top edge.
    pub on_tolerance: f64,
    /// Fraction of B's area A must cover for `holds`.
    pub holds_coverage: f64,
    /// B's area must be below this fraction of A's area for `holds`.
    pub holds_area_ratio: f64,
    /// Relations to emit.
    pub relations: Vec<String>,
}

impl Default for SpatialRules {
    fn default() -> Self {
        SpatialRules {
            on_tolerance: 0.05,
            holds_coverage: 0.9,
            holds_area_ratio: 0.25,
            relations: SPATIAL_RELATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SpatialRules {
    /// Symmetric relations between `a` and `b`.
    fn symmetric(&self, a: &BBox, b: &BBox) -> Vec<&'static str> {
        let mut out = Vec::new();
        if iou(a, b) > 0.0 {
            out.push("touches");
        }
        if a.y_overlaps(b) && !a.x_overlaps(b) {
            out.push("besides");
        }
        out
    }

    /// Directed relations `a -rel-> b`.
    fn directed(&self, a: &BBox, b: &BBox) -> Vec<&'static str> {
        let mut out = Vec::new();
        let x_overlap = a.x_overlaps(b);
        if a.y2 < b.y1 && x_overlap {
            out.push("above");
        }
        if x_overlap && (a.y2 - b.y1).abs() <= self.on_tolerance * b.height() {
            out.push("on");
        }
        if a.intersection_area(b) >= self.holds_coverage * b.area()
            && b.area() < self.holds_area_ratio * a.area()
        {
            out.push("holds");
        }
        out
    }
}

/// Spatial co-occurrence graph over class labels. Edge weights count box
/// pairs over all images; symmetric relations are stored once per unordered
/// pair, with endpoints in lexical order.
pub fn build_cooccurrence_graph(gt: &GroundtruthSet, rules: &SpatialRules) -> Result<KnowledgeGraph> {
    let wanted: BTreeSet<&str> = rules.relations.iter().map(String::as_str).collect();
    if let Some(r) = wanted.iter().find(|r| !SPATIAL_RELATIONS.contains(r)) {
        return Err(Error::invalid(format!("unknown spatial relation `{r}`")));
    }
    let mut counts: BTreeMap<(String, &'static str, String), u64> = BTreeMap::new();
    for (_, boxes) in by_image(gt, |r| r.image_id) {
        for i in 0..boxes.len() {
            for j in 0..boxes.len() {
                if i == j {
                    continue;
                }
                let (a, b) = (boxes[i], boxes[j]);
                for rel in rules.directed(&a.bbox, &b.bbox) {
                    if wanted.contains(rel) {
                        *counts.entry((a.class.clone(), rel, b.class.clone())).or_default() += 1;
                    }
                }
                if i < j {
                    for rel in rules.symmetric(&a.bbox, &b.bbox) {
                        if wanted.contains(rel) {
                            let (s, t) = if a.class <= b.class {
                                (&a.class, &b.class)
                            } else {
                                (&b.class, &a.class)
                            };
                            *counts.entry((s.clone(), rel, t.clone())).or_default() += 1;
                        }
                    }
                }
            }
        }
    }
    let mut g = KnowledgeGraph::new();
    let labels: BTreeSet<&str> = gt.iter().map(|r| r.class.as_str()).collect();
    for l in labels {
        g.add_node(l);
    }
    for ((s, rel, t), w) in counts {
        g.add_edge(&s, rel, &t, w as f64)?;
    }
    Ok(g)
}

/// Named word vectors of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.rows.get(name).map(Vec::as_slice)
    }
}

/// Parses `name v1 … vD` lines (whitespace separated).
pub fn parse_embedding_table(text: &str, origin: &str) -> Result<EmbeddingTable> {
    let mut dim = None;
    let mut rows = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let mut tokens = line.split_whitespace();
        let Some(name) = tokens.next() else { continue };
        let err = |message: String| Error::Parse {
            path: origin.to_owned(),
            line: lineno,
            message,
        };
        let values: Vec<f64> = tokens
            .map(|t| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(format!("bad value `{t}`"))),
            })
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(err(format!("row `{name}` has no values")));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(err(format!("row `{name}` has {} values, expected {d}", values.len())))
            }
            _ => {}
        }
        if rows.insert(name.to_owned(), values).is_some() {
            return Err(err(format!("duplicate row `{name}`")));
        }
    }
    Ok(EmbeddingTable {
        dim: dim.unwrap_or(0),
        rows,
    })
}

pub fn load_embedding_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_embedding_table(&text, &path.display().to_string())
}

/// Rows of `table` for `classes`, looked up through `aliases` when given.
pub fn select_prototypes(
    table: &EmbeddingTable,
    classes: &[String],
    aliases: &BTreeMap<String, String>,
) -> Result<PrototypeSet> {
    let mut m = Matrix::zeros(classes.len(), table.dim().max(1));
    for (i, c) in classes.iter().enumerate() {
        let key = aliases.get(c).unwrap_or(c);
        let row = table.get(key).ok_or_else(|| Error::MissingClass(c.clone()))?;
        m.row_mut(i).copy_from_slice(row);
    }
    PrototypeSet::new(classes.to_vec(), m, Provenance::Glove)
}

/// `C×C` distances between prototypes. Manhattan distances are taken
/// between prototypes projected into the unit ball.
pub fn pairwise_distance_matrix(p: &PrototypeSet, metric: Metric) -> Result<Matrix> {
    let rows = p.prepared(metric);
    let c = rows.len();
    let mut out = Matrix::zeros(c, c);
    for i in 0..c {
        for j in (i + 1)..c {
            let d = match metric {
                Metric::Cosine => cosine_distance(&rows[i], &rows[j])?,
                Metric::Manhattan => lk_distance(&rows[i], &rows[j], 1.0)?,
            };
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(out)
}

/// Pairwise orthonormal prototypes drawn from a seeded Gaussian.
pub fn random_orthogonal_prototypes(classes: &[String], dim: usize, seed: u64) -> Result<PrototypeSet> {
    let c = classes.len();
    if c == 0 || c > dim {
        return Err(Error::invalid(format!(
            "need 1 <= classes ({c}) <= dimension ({dim}) for orthonormal prototypes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(c);
    while rows.len() < c {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for _ in 0..2 {
            for r in &rows {
                let proj = dot(r, &v);
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let n = norm2(&v);
        if n < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        rows.push(v);
    }
    PrototypeSet::new(classes.to_vec(), Matrix::from_rows(&rows)?, Provenance::RandomOrthogonal)
}

/// CSV with a header row and a leading column of class names.
pub fn labeled_matrix_csv(labels: &[String], m: &Matrix) -> String {
    let mut out = String::from("class");
    for l in labels {
        out.push(',');
        out.push_str(&csv_field(l));
    }
    out.push('\n');
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&csv_field(l));
        for v in m.row(i) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::GroundtruthRecord;
    use crate::knowledge_graph::parse_graph;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    fn gt(image: u64, class: &str, b: [f64; 4]) -> GroundtruthRecord {
        GroundtruthRecord {
            image_id: image,
            bbox: BBox::try_from(b).unwrap(),
            class: class.into(),
        }
    }

    #[test]
    fn ppmi_no_edges_is_zero() {
        let g = parse_graph("a\nb\n", "m", false).unwrap();
        let m = ppmi_matrix(&g, &BTreeMap::new()).unwrap();
        assert!(m.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ppmi_two_nodes_by_hand() {
        // A = [[0,1],[1,0]], S = 2, row = col = 1: PMI(0,1) = ln 2.
        let g = parse_graph("a\tr\tb\t1\n", "m", false).unwrap();
        let m = ppmi_matrix(&g, &BTreeMap::new()).unwrap();
        assert_eq!(m[(0, 0)], 0.0);
        assert!((m[(0, 1)] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
    }

    #[test]
    fn ppmi_uniform_triangle_is_symmetric() {
        let g = parse_graph("a\tr\tb\t1\nb\tr\tc\t1\na\tr\tc\t1\n", "m", false).unwrap();
        let m = ppmi_matrix(&g, &BTreeMap::new()).unwrap();
        let v = m[(0, 1)];
        assert!(v > 0.0);
        for (i, j) in [(0, 2), (1, 2), (1, 0), (2, 0), (2, 1)] {
            assert!((m[(i, j)] - v).abs() < 1e-15);
        }
    }

    #[test]
    fn ppmi_zero_mass_errors() {
        let g = parse_graph("a\tr\tb\t0\n", "m", false).unwrap();
        assert!(ppmi_matrix(&g, &BTreeMap::new()).is_err());
        let g = parse_graph("a\tr\tb\t1\n", "m", false).unwrap();
        let zero: BTreeMap<String, f64> = [("r".to_owned(), 0.0)].into();
        assert!(ppmi_matrix(&g, &zero).is_err());
    }

    #[test]
    fn graph_prototype_shapes() {
        let g = parse_graph("a\tr\tb\t1\n", "m", false).unwrap();
        let out = build_graph_prototypes(&g, &names(&["a", "b"]), 2, &BTreeMap::new()).unwrap();
        assert_eq!(out.prototypes.matrix().rows(), 2);
        assert!(out.prototypes.matrix().is_finite());
        assert_eq!(out.prototypes.provenance(), Provenance::PpmiSvd);

        let g = parse_graph("a\tr\tb\t1\nb\tr\tc\t2\n", "m", false).unwrap();
        let out = build_graph_prototypes(&g, &names(&["b"]), 1, &BTreeMap::new()).unwrap();
        assert_eq!((out.prototypes.num_classes(), out.prototypes.dim()), (1, 1));

        assert!(build_graph_prototypes(&g, &names(&["zz"]), 1, &BTreeMap::new()).is_err());
        assert!(build_graph_prototypes(&g, &names(&["a"]), 4, &BTreeMap::new()).is_err());
    }

    #[test]
    fn disconnected_class_gets_zero_row() {
        let g = parse_graph("iso\na\tr\tb\t1\nb\tr\tc\t1\n", "m", false).unwrap();
        let out = build_graph_prototypes(&g, &names(&["iso", "a"]), 2, &BTreeMap::new()).unwrap();
        assert!(out.prototypes.prototype(1).iter().all(|v| *v == 0.0));
        assert!(out.warnings.iter().any(|w| w.contains("iso")));
    }

    #[test]
    fn cooccurrence_rules() {
        let single = vec![gt(1, "a", [0.0, 0.0, 1.0, 1.0]), gt(2, "b", [0.0, 0.0, 1.0, 1.0])];
        assert!(build_cooccurrence_graph(&single, &SpatialRules::default())
            .unwrap()
            .edges()
            .is_empty());

        let overlapping = vec![gt(1, "a", [0.0, 0.0, 2.0, 2.0]), gt(1, "b", [1.0, 1.0, 3.0, 3.0])];
        let g = build_cooccurrence_graph(&overlapping, &SpatialRules::default()).unwrap();
        let touches: Vec<_> = g.edges().iter().filter(|e| e.relation == "touches").collect();
        assert_eq!(touches.len(), 1);
        assert_eq!(touches[0].weight, 1.0);

        let stacked = vec![gt(1, "lamp", [0.0, 0.0, 2.0, 1.0]), gt(1, "desk", [1.0, 3.0, 4.0, 5.0])];
        let g = build_cooccurrence_graph(&stacked, &SpatialRules::default()).unwrap();
        assert_eq!(g.edges().len(), 1);
        let e = &g.edges()[0];
        assert_eq!((e.source.as_str(), e.relation.as_str(), e.target.as_str()), ("lamp", "above", "desk"));
    }

    #[test]
    fn cooccurrence_on_holds_besides() {
        let rules = SpatialRules::default();
        // cup resting on a table: bottom of cup at the table's top edge.
        let cup = BBox::new(2.0, 0.0, 3.0, 2.0).unwrap();
        let table = BBox::new(0.0, 2.05, 10.0, 6.0).unwrap();
        assert!(rules.directed(&cup, &table).contains(&"on"));
        // person holding a phone.
        let person = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let phone = BBox::new(4.0, 4.0, 5.0, 5.0).unwrap();
        assert!(rules.directed(&person, &phone).contains(&"holds"));
        assert!(!rules.directed(&phone, &person).contains(&"holds"));
        let left = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let right = BBox::new(2.0, 0.5, 3.0, 1.5).unwrap();
        assert_eq!(rules.symmetric(&left, &right), vec!["besides"]);
    }

    #[test]
    fn embedding_table_parsing() {
        let t = parse_embedding_table("cat 1 0\n", "m").unwrap();
        assert_eq!(t.dim(), 2);
        assert!(parse_embedding_table("cat 1 0\ndog 1\n", "m").is_err());
        assert!(parse_embedding_table("cat 1 NaN\n", "m").is_err());

        let t = parse_embedding_table("table 1 0\nperson 0 1\n", "m").unwrap();
        let err = select_prototypes(&t, &names(&["dog"]), &BTreeMap::new()).unwrap_err();
        assert!(err.to_string().contains("dog"));
        let aliases: BTreeMap<String, String> = [("dining table".to_owned(), "table".to_owned())].into();
        let p = select_prototypes(&t, &names(&["dining table", "person"]), &aliases).unwrap();
        assert_eq!(p.prototype(1), &[1.0, 0.0]);
        assert_eq!(p.provenance(), Provenance::Glove);
    }

    #[test]
    fn distance_matrix_cases() {
        let same = PrototypeSet::new(
            names(&["a", "b"]),
            Matrix::from_rows(&[vec![0.3, 0.4], vec![0.3, 0.4]]).unwrap(),
            Provenance::Glove,
        )
        .unwrap();
        for metric in [Metric::Cosine, Metric::Manhattan] {
            let d = pairwise_distance_matrix(&same, metric).unwrap();
            assert!(d.as_slice().iter().all(|v| v.abs() < 1e-15));
        }
        let ortho = random_orthogonal_prototypes(&names(&["a", "b", "c"]), 5, 1).unwrap();
        let d = pairwise_distance_matrix(&ortho, Metric::Cosine).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 1.0 };
                assert!((d[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_prototypes_contract() {
        let one = random_orthogonal_prototypes(&names(&["a"]), 4, 9).unwrap();
        assert!((norm2(one.prototype(1)) - 1.0).abs() < 1e-12);
        let p = random_orthogonal_prototypes(&names(&["a", "b", "c"]), 3, 7).unwrap();
        for i in 1..=3 {
            for j in 1..=3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(p.prototype(i), p.prototype(j)) - want).abs() < 1e-10);
            }
        }
        assert_eq!(p, random_orthogonal_prototypes(&names(&["a", "b", "c"]), 3, 7).unwrap());
        assert!(random_orthogonal_prototypes(&names(&["a", "b"]), 1, 7).is_err());
    }

    #[test]
    fn prototype_json_round_trip() {
        let p = random_orthogonal_prototypes(&names(&["a", "b"]), 3, 2)
            .unwrap()
            .with_mean_background()
            .unwrap();
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"provenance\":\"random-orthogonal\""));
        assert!(text.contains("\"dim\":3"));
        let back: PrototypeSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        let bad = text.replace("\"dim\":3", "\"dim\":4");
        assert!(serde_json::from_str::<PrototypeSet>(&bad).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let csv = labeled_matrix_csv(&names(&["a", "b,c"]), &m);
        assert_eq!(csv, "class,a,\"b,c\"\na,0,1\n\"b,c\",1,0\n");
    }
}
