//! Typed edge-list graphs, rooted taxonomies and WUP-based categorization.
//!
//! The edge-list format is UTF-8 text with one record per line:
//!
//! ```text
//! # comment
//! source<TAB>relation<TAB>target<TAB>weight
//! lonely-node
//! ```
//!
//! A line holding a single field declares a node without edges. In strict
//! mode, edge endpoints must have been declared this way beforehand.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relation label used for parent links in taxonomy files.
pub const ISA: &str = "isa";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub relation: String,
    pub target: String,
    pub weight: f64,
}

/// A typed, weighted multigraph over string node identifiers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a node if absent and returns its index.
    pub fn add_node(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.nodes.len();
        self.nodes.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    /// Adds an edge, creating missing endpoints.
    pub fn add_edge(&mut self, source: &str, relation: &str, target: &str, weight: f64) -> Result<()> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::invalid(format!(
                "edge {source} -{relation}-> {target} has invalid weight {weight}"
            )));
        }
        self.add_node(source);
        self.add_node(target);
        self.edges.push(Edge {
            source: source.to_owned(),
            relation: relation.to_owned(),
            target: target.to_owned(),
            weight,
        });
        Ok(())
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Writes the graph back into edge-list text. Isolated nodes are emitted
    /// as single-field lines.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let mut touched = BTreeSet::new();
        for e in &self.edges {
            touched.insert(e.source.as_str());
            touched.insert(e.target.as_str());
        }
        for n in &self.nodes {
            if !touched.contains(n.as_str()) {
                out.push_str(n);
                out.push('\n');
            }
        }
        for e in &self.edges {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.source, e.relation, e.target, e.weight));
        }
        out
    }
}

/// Parses edge-list text. `origin` is only used in error messages.
pub fn parse_graph(text: &str, origin: &str, strict: bool) -> Result<KnowledgeGraph> {
    let mut g = KnowledgeGraph::new();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_owned(),
        line,
        message,
    };
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            [node] => {
                g.add_node(node.trim());
            }
            [source, relation, target, weight] => {
                let (source, relation, target) = (source.trim(), relation.trim(), target.trim());
                if source.is_empty() || relation.is_empty() || target.is_empty() {
                    return Err(parse_err(lineno, "empty field".into()));
                }
                let weight: f64 = weight
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad weight `{}`", weight.trim())))?;
                if !weight.is_finite() || weight < 0.0 {
                    return Err(parse_err(lineno, format!("weight must be finite and >= 0, got {weight}")));
                }
                if strict {
                    for n in [source, target] {
                        if !g.contains(n) {
                            return Err(parse_err(lineno, format!("undeclared node `{n}`")));
                        }
                    }
                }
                g.add_edge(source, relation, target, weight)
                    .map_err(|e| parse_err(lineno, e.to_string()))?;
            }
            _ => {
                return Err(parse_err(
                    lineno,
                    format!("expected 4 tab-separated fields, found {}", fields.len()),
                ))
            }
        }
    }
    Ok(g)
}

pub fn load_graph(path: impl AsRef<Path>, strict: bool) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_graph(&text, &path.display().to_string(), strict)
}

/// A rooted tree with node depths (root depth 1).
#[derive(Debug, Clone)]
pub struct Taxonomy {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    root: usize,
}

impl Taxonomy {
    /// Builds a taxonomy from `(child, parent)` pairs plus any extra nodes.
    pub fn from_parent_links<'a>(
        nodes: impl IntoIterator<Item = &'a str>,
        links: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut intern = |n: &str, names: &mut Vec<String>| -> usize {
            *index.entry(n.to_owned()).or_insert_with(|| {
                names.push(n.to_owned());
                names.len() - 1
            })
        };
        for n in nodes {
            intern(n, &mut names);
        }
        let mut raw_links = Vec::new();
        for (child, parent) in links {
            let c = intern(child, &mut names);
            let p = intern(parent, &mut names);
            raw_links.push((c, p));
        }
        drop(intern);

        let mut parent = vec![None; names.len()];
        for (c, p) in raw_links {
            if c == p {
                return Err(Error::invalid(format!("node `{}` is its own parent", names[c])));
            }
            match parent[c] {
                Some(existing) if existing != p => {
                    return Err(Error::invalid(format!(
                        "node `{}` has multiple parents (`{}`, `{}`)",
                        names[c], names[existing], names[p]
                    )))
                }
                _ => parent[c] = Some(p),
            }
        }
        let roots: Vec<usize> = (0..names.len()).filter(|&i| parent[i].is_none()).collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(Error::invalid("taxonomy has no root (cycle or empty)")),
            many => {
                return Err(Error::invalid(format!(
                    "taxonomy has {} roots: {}",
                    many.len(),
                    many.iter().map(|&i| names[i].as_str()).collect::<Vec<_>>().join(", ")
                )))
            }
        };

        // Depth by walking to the root; a walk longer than the node count is a cycle.
        let mut depth = vec![0usize; names.len()];
        for start in 0..names.len() {
            let mut chain = Vec::new();
            let mut cur = start;
            while depth[cur] == 0 {
                chain.push(cur);
                if chain.len() > names.len() {
                    return Err(Error::invalid(format!("cycle through `{}`", names[start])));
                }
                match parent[cur] {
                    Some(p) => cur = p,
                    None => {
                        depth[cur] = 1;
                        chain.pop();
                        break;
                    }
                }
            }
            let mut d = depth[cur];
            for &n in chain.iter().rev() {
                d += 1;
                depth[n] = d;
            }
        }

        Ok(Taxonomy {
            nodes: names,
            index,
            parent,
            depth,
            root,
        })
    }

    /// Interprets every `isa` edge `child -isa-> parent` as a parent link.
    pub fn from_graph(g: &KnowledgeGraph) -> Result<Self> {
        if let Some(e) = g.edges().iter().find(|e| e.relation != ISA) {
            return Err(Error::invalid(format!(
                "taxonomy edge {} -{}-> {} must use relation `{ISA}`",
                e.source, e.relation, e.target
            )));
        }
        Taxonomy::from_parent_links(
            g.nodes().iter().map(String::as_str),
            g.edges().iter().map(|e| (e.source.as_str(), e.target.as_str())),
        )
    }

    pub fn root(&self) -> &str {
        &self.nodes[self.root]
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn contains(&self, node: &str) -> bool {
        self.index.contains_key(node)
    }

    fn idx(&self, node: &str) -> Result<usize> {
        self.index
            .get(node)
            .copied()
            .ok_or_else(|| Error::UnknownNode(node.to_owned()))
    }

    pub fn depth(&self, node: &str) -> Result<usize> {
        Ok(self.depth[self.idx(node)?])
    }

    pub fn parent(&self, node: &str) -> Result<Option<&str>> {
        Ok(self.parent[self.idx(node)?].map(|p| self.nodes[p].as_str()))
    }

    pub fn is_leaf(&self, node: &str) -> Result<bool> {
        let i = self.idx(node)?;
        Ok(!self.parent.iter().any(|p| *p == Some(i)))
    }

    fn lca_idx(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].expect("non-root has a parent");
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].expect("non-root has a parent");
        }
        while a != b {
            a = self.parent[a].expect("non-root has a parent");
            b = self.parent[b].expect("non-root has a parent");
        }
        a
    }

    /// Deepest common ancestor-or-self of `a` and `b`.
    pub fn lowest_common_ancestor(&self, a: &str, b: &str) -> Result<&str> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        Ok(&self.nodes[self.lca_idx(a, b)])
    }

    /// Wu-Palmer similarity `2·depth(lca) / (depth(a) + depth(b))`.
    pub fn wup_similarity(&self, a: &str, b: &str) -> Result<f64> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let l = self.lca_idx(a, b);
        Ok(2.0 * self.depth[l] as f64 / (self.depth[a] + self.depth[b]) as f64)
    }
}

/// Total assignment of classes to category identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryMap {
    assignments: BTreeMap<String, String>,
}

impl CategoryMap {
    pub fn new(assignments: BTreeMap<String, String>) -> Self {
        CategoryMap { assignments }
    }

    pub fn category_of(&self, class: &str) -> Option<&str> {
        self.assignments.get(class).map(String::as_str)
    }

    /// Distinct category identifiers in sorted order.
    pub fn categories(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.assignments.values().map(String::as_str).collect();
        set.into_iter().collect()
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.assignments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn covers<'a>(&self, classes: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for c in classes {
            if !self.assignments.contains_key(c) {
                return Err(Error::MissingClass(c.to_owned()));
            }
        }
        Ok(())
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

/// Default WUP threshold for [`categorize`].
pub const DEFAULT_WUP_THRESHOLD: f64 = 0.6;

/// Single-linkage clustering of `classes` under pairwise WUP similarity.
///
/// Two classes end up in the same category when a chain of pairs with
/// similarity `>= threshold` connects them. Each category is named after the
/// lowest common ancestor of its members.
pub fn categorize(t: &Taxonomy, classes: &[String], threshold: f64) -> Result<CategoryMap> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("WUP threshold must be in (0, 1], got {threshold}")));
    }
    let ids: Vec<usize> = classes.iter().map(|c| t.idx(c)).collect::<Result<_>>()?;
    for c in classes {
        if !t.is_leaf(c)? {
            return Err(Error::invalid(format!("class `{c}` is not a taxonomy leaf")));
        }
    }

    let n = ids.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if t.wup_similarity(&classes[i], &classes[j])? >= threshold {
                uf.union(i, j);
            }
        }
    }

    // Clusters in order of first member, so naming collisions resolve deterministically.
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        clusters.entry(uf.find(i)).or_default().push(i);
    }
    let mut ordered: Vec<Vec<usize>> = clusters.into_values().collect();
    ordered.sort_by_key(|members| members[0]);

    let mut used: HashMap<String, usize> = HashMap::new();
    let mut assignments = BTreeMap::new();
    for members in ordered {
        let lca = members[1..]
            .iter()
            .fold(ids[members[0]], |acc, &m| t.lca_idx(acc, ids[m]));
        let base = t.nodes[lca].clone();
        let seen = used.entry(base.clone()).or_insert(0);
        *seen += 1;
        let name = if *seen == 1 { base } else { format!("{base}~{seen}") };
        for m in members {
            assignments.insert(classes[m].clone(), name.clone());
        }
    }
    Ok(CategoryMap { assignments })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
