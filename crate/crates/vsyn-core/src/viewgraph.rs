//! View graphs: cameras as vertices, pairwise relative-rotation measurements
//! as edges.
//!
//! An edge `(i, j)` stores a measurement of `R_j ∘ R_i⁻¹`, the rotation that
//! takes frame `i`'s orientation to frame `j`'s. Vertices optionally carry an
//! absolute orientation estimate; a vertex without one is "uninitialized".
//! Edges carry a positive confidence weight and an outlier flag that the
//! cycle-consistency filter maintains.
//!
//! The text format is line-based:
//!
//! ```text
//! # comment
//! VERTEX <id> <qw> <qx> <qy> <qz>
//! EDGE <i> <j> <qw> <qx> <qy> <qz> <weight>
//! ```
//!
//! An all-zero vertex quaternion means "no absolute estimate". Serialization
//! writes quaternions with 17 significant digits so exact values survive a
//! round trip.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use thiserror::Error;

use crate::so3::{Rotation, So3Error};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate vertex id {id}")]
    DuplicateVertex { id: u32 },
    #[error("duplicate edge between vertices {i} and {j}")]
    DuplicateEdge { i: u32, j: u32 },
    #[error("edge ({i}, {j}) references an undeclared vertex")]
    DanglingVertex { i: u32, j: u32 },
    #[error("self edge at vertex {id}")]
    SelfEdge { id: u32 },
    #[error("edge weight {weight} is not a positive finite number")]
    BadWeight { weight: f64 },
    #[error("graph is disconnected over usable edges ({components} components)")]
    Disconnected { components: usize },
    #[error("vertex {id} has no absolute rotation")]
    NotInitialized { id: u32 },
    #[error("graph has no vertices")]
    Empty,
    #[error("graphs do not share an identical vertex set")]
    MismatchedGraphs,
    #[error(transparent)]
    So3(#[from] So3Error),
}

#[derive(Debug, Clone)]
pub struct Vertex {
    pub id: u32,
    pub absolute: Option<Rotation>,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub i: u32,
    pub j: u32,
    /// Measured relative rotation, estimating `R_j ∘ R_i⁻¹`.
    pub rel: Rotation,
    pub weight: f64,
    pub outlier: bool,
}

/// Undirected measurement graph with at most one edge per vertex pair.
#[derive(Debug, Clone, Default)]
pub struct ViewGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    index: HashMap<u32, usize>,
}

impl ViewGraph {
    pub fn new() -> ViewGraph {
        ViewGraph::default()
    }

    pub fn add_vertex(&mut self, id: u32, absolute: Option<Rotation>) -> Result<(), GraphError> {
        if self.index.contains_key(&id) {
            return Err(GraphError::DuplicateVertex { id });
        }
        self.index.insert(id, self.vertices.len());
        self.vertices.push(Vertex { id, absolute });
        Ok(())
    }

    pub fn add_edge(&mut self, i: u32, j: u32, rel: Rotation, weight: f64) -> Result<(), GraphError> {
        if i == j {
            return Err(GraphError::SelfEdge { id: i });
        }
        if !self.index.contains_key(&i) || !self.index.contains_key(&j) {
            return Err(GraphError::DanglingVertex { i, j });
        }
        if !weight.is_finite() || weight <= 0.0 {
            return Err(GraphError::BadWeight { weight });
        }
        if self.find_edge(i, j).is_some() {
            return Err(GraphError::DuplicateEdge { i, j });
        }
        self.edges.push(Edge {
            i,
            j,
            rel,
            weight,
            outlier: false,
        });
        Ok(())
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, id: u32) -> Option<&Vertex> {
        self.index.get(&id).map(|&k| &self.vertices[k])
    }

    pub fn absolute(&self, id: u32) -> Option<Rotation> {
        self.vertex(id).and_then(|v| v.absolute)
    }

    /// Sets or clears a vertex's absolute rotation.
    pub fn set_absolute(&mut self, id: u32, rotation: Option<Rotation>) -> Result<(), GraphError> {
        // Borrow the index immutably first so the vertex borrow stays local.
        let k = *self
            .index
            .get(&id)
            .ok_or(GraphError::NotInitialized { id })?;
        self.vertices[k].absolute = rotation;
        Ok(())
    }

    pub(crate) fn set_outlier(&mut self, edge_index: usize, flag: bool) {
        self.edges[edge_index].outlier = flag;
    }

    pub fn find_edge(&self, i: u32, j: u32) -> Option<&Edge> {
        self.edges
            .iter()
            .find(|e| (e.i == i && e.j == j) || (e.i == j && e.j == i))
    }

    /// Vertex ids in ascending order; the iteration order used by every
    /// deterministic sweep in the crate.
    pub fn sorted_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.vertices.iter().map(|v| v.id).collect();
        ids.sort_unstable();
        ids
    }

    /// Adjacency as `vertex id -> [(neighbor id, edge index)]`, neighbors in
    /// ascending id order. Includes edges regardless of the outlier flag.
    pub fn adjacency(&self) -> BTreeMap<u32, Vec<(u32, usize)>> {
        let mut adj: BTreeMap<u32, Vec<(u32, usize)>> = BTreeMap::new();
        for v in &self.vertices {
            adj.insert(v.id, Vec::new());
        }
        for (idx, e) in self.edges.iter().enumerate() {
            adj.get_mut(&e.i).unwrap().push((e.j, idx));
            adj.get_mut(&e.j).unwrap().push((e.i, idx));
        }
        for list in adj.values_mut() {
            list.sort_unstable();
        }
        adj
    }

    /// The relative rotation oriented from `from` to `to` along edge `idx`,
    /// inverting the stored measurement when it points the other way.
    pub fn oriented_rel(&self, idx: usize, from: u32, to: u32) -> Rotation {
        let e = &self.edges[idx];
        debug_assert!((e.i == from && e.j == to) || (e.i == to && e.j == from));
        if e.i == from {
            e.rel
        } else {
            e.rel.inverse()
        }
    }

    /// Copy of the graph with outlier-flagged edges removed.
    pub fn without_flagged_edges(&self) -> ViewGraph {
        let mut g = ViewGraph::new();
        for v in &self.vertices {
            g.add_vertex(v.id, v.absolute).unwrap();
        }
        for e in &self.edges {
            if !e.outlier {
                g.add_edge(e.i, e.j, e.rel, e.weight).unwrap();
            }
        }
        g
    }

    /// True when both graphs declare exactly the same vertex ids.
    pub fn same_vertex_set(&self, other: &ViewGraph) -> bool {
        self.sorted_ids() == other.sorted_ids()
    }
}

/// Spanning tree of a view graph, stored as parent links.
#[derive(Debug, Clone)]
pub struct SpanningTree {
    pub root: u32,
    /// `child id -> (parent id, edge index, stored direction)`; `forward`
    /// means the underlying edge is stored as `(parent, child)`.
    links: BTreeMap<u32, TreeLink>,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeLink {
    pub parent: u32,
    pub edge_index: usize,
    pub forward: bool,
}

impl SpanningTree {
    pub fn parent_of(&self, id: u32) -> Option<&TreeLink> {
        self.links.get(&id)
    }

    pub fn links(&self) -> &BTreeMap<u32, TreeLink> {
        &self.links
    }

    /// Total cost (`sum of 1/weight`) of the tree edges in `g`.
    pub fn cost(&self, g: &ViewGraph) -> f64 {
        self.links
            .values()
            .map(|l| 1.0 / g.edges()[l.edge_index].weight)
            .sum()
    }
}

/// Minimum spanning tree over non-outlier edges with edge cost `1/weight`.
///
/// Ties are broken toward the lexicographically smallest stored `(i, j)`
/// pair, making the tree deterministic. The root is the lowest vertex id.
pub fn min_spanning_tree(g: &ViewGraph) -> Result<SpanningTree, GraphError> {
    if g.vertex_count() == 0 {
        return Err(GraphError::Empty);
    }
    let ids = g.sorted_ids();
    let slot: HashMap<u32, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();

    let mut order: Vec<usize> = (0..g.edge_count()).filter(|&k| !g.edges()[k].outlier).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&g.edges()[a], &g.edges()[b]);
        let (ca, cb) = (1.0 / ea.weight, 1.0 / eb.weight);
        ca.total_cmp(&cb)
            .then(ea.i.cmp(&eb.i))
            .then(ea.j.cmp(&eb.j))
    });

    let mut uf = UnionFind::new(ids.len());
    let mut chosen: Vec<usize> = Vec::with_capacity(ids.len().saturating_sub(1));
    for idx in order {
        let e = &g.edges()[idx];
        if uf.union(slot[&e.i], slot[&e.j]) {
            chosen.push(idx);
            if chosen.len() + 1 == ids.len() {
                break;
            }
        }
    }
    if chosen.len() + 1 != ids.len() {
        let mut roots = HashSet::new();
        for k in 0..ids.len() {
            roots.insert(uf.find(k));
        }
        return Err(GraphError::Disconnected {
            components: roots.len(),
        });
    }

    // Orient the tree away from the root with a breadth-first pass.
    let root = ids[0];
    let mut tree_adj: BTreeMap<u32, Vec<(u32, usize)>> = BTreeMap::new();
    for &idx in &chosen {
        let e = &g.edges()[idx];
        tree_adj.entry(e.i).or_default().push((e.j, idx));
        tree_adj.entry(e.j).or_default().push((e.i, idx));
    }
    for list in tree_adj.values_mut() {
        list.sort_unstable();
    }
    let mut links = BTreeMap::new();
    let mut seen: HashSet<u32> = HashSet::new();
    seen.insert(root);
    let mut queue = VecDeque::from([root]);
    while let Some(at) = queue.pop_front() {
        if let Some(nbrs) = tree_adj.get(&at) {
            for &(next, idx) in nbrs {
                if seen.insert(next) {
                    links.insert(
                        next,
                        TreeLink {
                            parent: at,
                            edge_index: idx,
                            forward: g.edges()[idx].i == at,
                        },
                    );
                    queue.push_back(next);
                }
            }
        }
    }
    Ok(SpanningTree { root, links })
}

/// Propagates absolute rotations from the root down the tree: the root keeps
/// its existing absolute (identity when it has none) and every child gets
/// `rel ∘ R_parent`, inverting edges stored against the traversal direction.
pub fn init_absolute_rotations(g: &ViewGraph, tree: &SpanningTree) -> Result<ViewGraph, GraphError> {
    if g.vertex_count() == 0 {
        return Err(GraphError::Empty);
    }
    let mut out = g.clone();
    let root_abs = g.absolute(tree.root).unwrap_or(Rotation::IDENTITY);
    out.set_absolute(tree.root, Some(root_abs))?;

    // children lists in ascending id order for a deterministic walk
    let mut children: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (&child, link) in tree.links() {
        children.entry(link.parent).or_default().push(child);
    }
    let mut queue = VecDeque::from([tree.root]);
    while let Some(at) = queue.pop_front() {
        let at_abs = out.absolute(at).unwrap();
        if let Some(kids) = children.get(&at) {
            for &child in kids {
                let link = tree.links()[&child];
                let rel = g.oriented_rel(link.edge_index, at, child);
                out.set_absolute(child, Some(rel.compose(&at_abs)))?;
                queue.push_back(child);
            }
        }
    }
    Ok(out)
}

/// Flags edges whose triangle cycle errors say they disagree with the rest
/// of the graph.
///
/// For every triangle `(i, j, k)` the cycle composition
/// `rel(k→i) ∘ rel(j→k) ∘ rel(i→j)` should be the identity; its angle is the
/// triangle's cycle error. Each edge is scored with the median error over
/// the triangles containing it and flagged when the median exceeds
/// `threshold` (radians). Edges in no triangle are never flagged.
///
/// The score only depends on the measurements, so the filter is idempotent:
/// flags are recomputed from scratch on every call.
pub fn cycle_consistency_filter(g: &ViewGraph, threshold: f64) -> ViewGraph {
    let adj = g.adjacency();
    let mut out = g.clone();
    for (idx, e) in g.edges().iter().enumerate() {
        let (i, j) = (e.i, e.j);
        let ni = &adj[&i];
        let nj = &adj[&j];
        let mut errors: Vec<f64> = Vec::new();
        // sorted-merge intersection of the two neighbor lists
        let (mut a, mut b) = (0usize, 0usize);
        while a < ni.len() && b < nj.len() {
            let (ka, ea) = ni[a];
            let (kb, eb) = nj[b];
            match ka.cmp(&kb) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    if ka != i && ka != j {
                        let cycle = g
                            .oriented_rel(ea, ka, i)
                            .compose(&g.oriented_rel(eb, j, ka))
                            .compose(&g.oriented_rel(idx, i, j));
                        errors.push(cycle.angle());
                    }
                    a += 1;
                    b += 1;
                }
            }
        }
        let flagged = if errors.is_empty() {
            false
        } else {
            median_in_place(&mut errors) > threshold
        };
        out.set_outlier(idx, flagged);
    }
    out
}

pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Parses the line-based pose-graph text format.
pub fn parse_pose_graph(text: &str) -> Result<ViewGraph, GraphError> {
    let mut g = ViewGraph::new();
    let mut pending_edges: Vec<(usize, u32, u32, Rotation, f64)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        match tokens[0] {
            "VERTEX" => {
                if tokens.len() != 6 {
                    return Err(parse_err(line, "VERTEX takes id and 4 quaternion components"));
                }
                let id = parse_id(line, tokens[1])?;
                let q = parse_floats::<4>(line, &tokens[2..6])?;
                let absolute = if q.iter().all(|&v| v == 0.0) {
                    None
                } else {
                    Some(
                        Rotation::from_wxyz(q[0], q[1], q[2], q[3])
                            .map_err(|e| parse_err(line, &e.to_string()))?,
                    )
                };
                g.add_vertex(id, absolute).map_err(|e| lift(line, e))?;
            }
            "EDGE" => {
                if tokens.len() != 8 {
                    return Err(parse_err(
                        line,
                        "EDGE takes two ids, 4 quaternion components and a weight",
                    ));
                }
                let i = parse_id(line, tokens[1])?;
                let j = parse_id(line, tokens[2])?;
                let q = parse_floats::<4>(line, &tokens[3..7])?;
                let rel = Rotation::from_wxyz(q[0], q[1], q[2], q[3])
                    .map_err(|e| parse_err(line, &e.to_string()))?;
                let weight = parse_floats::<1>(line, &tokens[7..8])?[0];
                pending_edges.push((line, i, j, rel, weight));
            }
            other => {
                return Err(parse_err(line, &format!("unknown record `{other}`")));
            }
        }
    }
    // Edges may reference vertices declared later in the file, so they are
    // attached after all declarations are in.
    for (line, i, j, rel, weight) in pending_edges {
        g.add_edge(i, j, rel, weight).map_err(|e| lift(line, e))?;
    }
    Ok(g)
}

/// Serializes a graph in the same text format `parse_pose_graph` reads.
/// Vertices and edges keep their stored order; quaternions are written with
/// 17 significant digits.
pub fn serialize_pose_graph(g: &ViewGraph) -> String {
    let mut out = String::new();
    for v in g.vertices() {
        match v.absolute {
            Some(r) => out.push_str(&format!("VERTEX {} {}\n", v.id, r)),
            None => out.push_str(&format!("VERTEX {} 0 0 0 0\n", v.id)),
        }
    }
    for e in g.edges() {
        out.push_str(&format!("EDGE {} {} {} {}\n", e.i, e.j, e.rel, e.weight));
    }
    out
}

fn parse_err(line: usize, msg: &str) -> GraphError {
    GraphError::Parse {
        line,
        msg: msg.to_string(),
    }
}

fn lift(line: usize, e: GraphError) -> GraphError {
    match e {
        GraphError::Parse { .. } => e,
        other => parse_err(line, &other.to_string()),
    }
}

fn parse_id(line: usize, token: &str) -> Result<u32, GraphError> {
    token
        .parse::<u32>()
        .map_err(|_| parse_err(line, &format!("invalid vertex id `{token}`")))
}

fn parse_floats<const N: usize>(line: usize, tokens: &[&str]) -> Result<[f64; N], GraphError> {
    let mut out = [0.0; N];
    for (k, t) in tokens.iter().enumerate() {
        out[k] = t
            .parse::<f64>()
            .map_err(|_| parse_err(line, &format!("invalid number `{t}`")))?;
        if !out[k].is_finite() {
            return Err(parse_err(line, &format!("non-finite number `{t}`")));
        }
    }
    Ok(out)
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> UnionFind {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}
