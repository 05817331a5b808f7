//! Plant graphs, chordal structure, and clique bookkeeping.
//!
//! Nodes are 0-based internally; file and CLI outputs use 1-based indices.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Mat, SymMat};

/// Directed graph; edge `(i, j)` means node `i` influences node `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl DirectedGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Domain(format!("edge ({i},{j}) out of range for {n} nodes")));
            }
            if i != j {
                set.insert((i, j));
            }
        }
        Ok(DirectedGraph { n, edges: set })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    /// Nodes that influence `i` (in-neighbours).
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect()
    }

    /// Nodes that `i` influences (out-neighbours).
    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.0 == i).map(|e| e.1).collect()
    }
}

/// Undirected simple graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    adj: Vec<BTreeSet<usize>>,
}

impl UndirectedGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = UndirectedGraph {
            adj: vec![BTreeSet::new(); n],
        };
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Domain(format!("edge ({i},{j}) out of range for {n} nodes")));
            }
            g.add_edge(i, j);
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    fn add_edge(&mut self, i: usize, j: usize) {
        if i != j {
            self.adj[i].insert(j);
            self.adj[j].insert(i);
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].contains(&j)
    }

    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.adj[i]
    }

    /// Edges as `(i, j)` with `i < j`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nb) in self.adj.iter().enumerate() {
            for &j in nb.range((i + 1)..) {
                out.push((i, j));
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|s| s.len()).sum::<usize>() / 2
    }
}

/// `E_u = E_p ∪ E_pᵀ`.
pub fn undirected_closure(gp: &DirectedGraph) -> UndirectedGraph {
    let mut g = UndirectedGraph {
        adj: vec![BTreeSet::new(); gp.n],
    };
    for &(i, j) in &gp.edges {
        g.add_edge(i, j);
    }
    g
}

/// Maximum cardinality search with lowest-index tie-breaking. Returns the
/// visit order; its reverse is a perfect elimination ordering when the graph
/// is chordal.
pub fn maximum_cardinality_search(g: &UndirectedGraph) -> Vec<usize> {
    let n = g.node_count();
    let mut weight = vec![0usize; n];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for v in 0..n {
            if visited[v] {
                continue;
            }
            match best {
                Some(b) if weight[b] >= weight[v] => {}
                _ => best = Some(v),
            }
        }
        let v = best.expect("unvisited node exists");
        visited[v] = true;
        order.push(v);
        for &u in g.neighbors(v) {
            if !visited[u] {
                weight[u] += 1;
            }
        }
    }
    order
}

/// Checks whether `order` (elimination sequence, first eliminated first) is
/// a perfect elimination ordering.
pub fn is_perfect_elimination_order(g: &UndirectedGraph, order: &[usize]) -> bool {
    let n = g.node_count();
    if order.len() != n {
        return false;
    }
    let mut pos = vec![usize::MAX; n];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    for &v in order {
        let later: Vec<usize> = g
            .neighbors(v)
            .iter()
            .copied()
            .filter(|&u| pos[u] > pos[v])
            .collect();
        let Some(&parent) = later.iter().min_by_key(|&&u| pos[u]) else {
            continue;
        };
        for &u in &later {
            if u != parent && !g.has_edge(parent, u) {
                return false;
            }
        }
    }
    true
}

/// Returns a perfect elimination ordering when the graph is chordal.
pub fn is_chordal(g: &UndirectedGraph) -> Option<Vec<usize>> {
    let mut peo = maximum_cardinality_search(g);
    peo.reverse();
    is_perfect_elimination_order(g, &peo).then_some(peo)
}

/// Greedy minimum-degree triangulation. Among vertices of equal degree the
/// highest index is eliminated first, so fill chords attach to low-index
/// vertices. Chordal inputs are returned unchanged.
pub fn chordal_extension(g: &UndirectedGraph) -> UndirectedGraph {
    if is_chordal(g).is_some() {
        return g.clone();
    }
    let n = g.node_count();
    let mut work = g.clone();
    let mut out = g.clone();
    let mut alive = vec![true; n];
    for _ in 0..n {
        let mut pick: Option<usize> = None;
        for v in 0..n {
            if !alive[v] {
                continue;
            }
            match pick {
                Some(p) if work.adj[v].len() > work.adj[p].len() => {}
                _ => pick = Some(v),
            }
        }
        let v = pick.expect("alive vertex exists");
        let nb: Vec<usize> = work.adj[v].iter().copied().collect();
        for (a, &x) in nb.iter().enumerate() {
            for &y in &nb[(a + 1)..] {
                work.add_edge(x, y);
                out.add_edge(x, y);
            }
        }
        for &x in &nb {
            work.adj[x].remove(&v);
        }
        work.adj[v].clear();
        alive[v] = false;
    }
    out
}

/// Kahn's algorithm with lowest-index tie-breaking; `Some(order)` when acyclic.
pub fn is_acyclic(gp: &DirectedGraph) -> Option<Vec<usize>> {
    let n = gp.n;
    let mut indeg = vec![0usize; n];
    for &(_, j) in &gp.edges {
        indeg[j] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for &(a, b) in gp.edges.range((v, 0)..(v + 1, 0)) {
            debug_assert_eq!(a, v);
            indeg[b] -= 1;
            if indeg[b] == 0 {
                ready.insert(b);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Chordal graph with its maximal cliques and overlap bookkeeping.
#[derive(Debug, Clone)]
pub struct ChordalStructure {
    pub graph: UndirectedGraph,
    /// Perfect elimination ordering.
    pub order: Vec<usize>,
    /// Maximal cliques, each ascending, ordered by smallest member then lexicographically.
    pub cliques: Vec<Vec<usize>>,
    /// Nodes contained in at least two cliques.
    pub overlap_nodes: BTreeSet<usize>,
    /// Edges `(i, j)`, `i < j`, contained in at least two cliques.
    pub overlap_edges: BTreeSet<(usize, usize)>,
    /// For each node, the cliques containing it.
    pub node_cliques: Vec<Vec<usize>>,
    /// For each edge `(i, j)`, `i < j`, the cliques containing both endpoints.
    pub edge_cliques: BTreeMap<(usize, usize), Vec<usize>>,
}

/// Builds the clique structure of a chordal graph from its elimination order.
pub fn maximal_cliques(g: &UndirectedGraph, order: &[usize]) -> Result<ChordalStructure> {
    if !is_perfect_elimination_order(g, order) {
        return Err(Error::Domain(
            "maximal cliques requested for a non-chordal graph or invalid elimination order".into(),
        ));
    }
    let n = g.node_count();
    let mut pos = vec![0usize; n];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    let mut candidates: Vec<BTreeSet<usize>> = order
        .iter()
        .map(|&v| {
            let mut c: BTreeSet<usize> = g
                .neighbors(v)
                .iter()
                .copied()
                .filter(|&u| pos[u] > pos[v])
                .collect();
            c.insert(v);
            c
        })
        .collect();
    candidates.sort_by_key(|c| std::cmp::Reverse(c.len()));
    let mut kept: Vec<BTreeSet<usize>> = Vec::new();
    for c in candidates {
        if !kept.iter().any(|k| c.is_subset(k)) {
            kept.push(c);
        }
    }
    let mut cliques: Vec<Vec<usize>> = kept.into_iter().map(|c| c.into_iter().collect()).collect();
    cliques.sort();

    let mut node_cliques = vec![Vec::new(); n];
    let mut edge_cliques: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, c) in cliques.iter().enumerate() {
        for (a, &i) in c.iter().enumerate() {
            node_cliques[i].push(k);
            for &j in &c[(a + 1)..] {
                edge_cliques.entry((i, j)).or_default().push(k);
            }
        }
    }
    let overlap_nodes = (0..n).filter(|&i| node_cliques[i].len() >= 2).collect();
    let overlap_edges = edge_cliques
        .iter()
        .filter(|(_, ks)| ks.len() >= 2)
        .map(|(&e, _)| e)
        .collect();
    Ok(ChordalStructure {
        graph: g.clone(),
        order: order.to_vec(),
        cliques,
        overlap_nodes,
        overlap_edges,
        node_cliques,
        edge_cliques,
    })
}

impl ChordalStructure {
    /// Extends `g` to a chordal graph if needed and builds its clique structure.
    pub fn from_graph(g: &UndirectedGraph) -> ChordalStructure {
        let chordal = chordal_extension(g);
        let order = is_chordal(&chordal).expect("chordal extension is chordal");
        maximal_cliques(&chordal, &order).expect("perfect elimination order is valid")
    }

    pub fn clique_count(&self) -> usize {
        self.cliques.len()
    }

    /// Cliques containing edge `(i, j)` in either orientation.
    pub fn cliques_of_edge(&self, i: usize, j: usize) -> &[usize] {
        let key = (i.min(j), i.max(j));
        self.edge_cliques.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Block offsets for a partition of sizes.
pub fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(sizes.len() + 1);
    let mut acc = 0;
    off.push(0);
    for s in sizes {
        acc += s;
        off.push(acc);
    }
    off
}

fn clique_rows(clique: &[usize], sizes: &[usize]) -> Result<Vec<usize>> {
    let off = offsets(sizes);
    let mut rows = Vec::new();
    for &c in clique {
        if c >= sizes.len() {
            return Err(Error::Domain(format!("clique node {c} out of range")));
        }
        rows.extend(off[c]..off[c + 1]);
    }
    Ok(rows)
}

/// Principal block submatrix `E_C X E_Cᵀ`.
pub fn extract(x: &SymMat, clique: &[usize], sizes: &[usize]) -> Result<SymMat> {
    let total: usize = sizes.iter().sum();
    if x.dim() != total {
        return Err(Error::dim(format!("matrix dim {} vs partition {}", x.dim(), total)));
    }
    let rows = clique_rows(clique, sizes)?;
    let k = rows.len();
    let mut out = Mat::zeros(k, k);
    for (a, &ra) in rows.iter().enumerate() {
        for (b, &rb) in rows.iter().enumerate() {
            out[(a, b)] = x.as_mat()[(ra, rb)];
        }
    }
    Ok(SymMat::from_upper(&out))
}

/// Inflation `E_Cᵀ X_k E_C` into the full dimension.
pub fn inflate(xk: &SymMat, clique: &[usize], sizes: &[usize]) -> Result<SymMat> {
    let rows = clique_rows(clique, sizes)?;
    if rows.len() != xk.dim() {
        return Err(Error::dim(format!(
            "clique block dim {} vs clique size {}",
            xk.dim(),
            rows.len()
        )));
    }
    let total: usize = sizes.iter().sum();
    let mut out = Mat::zeros(total, total);
    for (a, &ra) in rows.iter().enumerate() {
        for (b, &rb) in rows.iter().enumerate() {
            out[(ra, rb)] = xk.as_mat()[(a, b)];
        }
    }
    Ok(SymMat::from_upper(&out))
}

/// JSON view of a clique structure with 1-based indices.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub edges: Vec<[usize; 2]>,
    pub chordal: bool,
    pub fill_edges: Vec<[usize; 2]>,
    pub cliques: Vec<Vec<usize>>,
    pub overlap_nodes: Vec<usize>,
    pub overlap_edges: Vec<[usize; 2]>,
}

pub fn decomposition_report(gu: &UndirectedGraph) -> (ChordalStructure, DecompositionReport) {
    let chordal = is_chordal(gu).is_some();
    let st = ChordalStructure::from_graph(gu);
    let one = |(i, j): (usize, usize)| [i + 1, j + 1];
    let fill = st
        .graph
        .edges()
        .into_iter()
        .filter(|&(i, j)| !gu.has_edge(i, j))
        .map(one)
        .collect();
    let report = DecompositionReport {
        edges: gu.edges().into_iter().map(one).collect(),
        chordal,
        fill_edges: fill,
        cliques: st
            .cliques
            .iter()
            .map(|c| c.iter().map(|v| v + 1).collect())
            .collect(),
        overlap_nodes: st.overlap_nodes.iter().map(|v| v + 1).collect(),
        overlap_edges: st.overlap_edges.iter().copied().map(one).collect(),
    };
    (st, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn ug(n: usize, edges: &[(usize, usize)]) -> UndirectedGraph {
        UndirectedGraph::new(n, edges.iter().map(|&(a, b)| (a - 1, b - 1))).unwrap()
    }

    fn dg(n: usize, edges: &[(usize, usize)]) -> DirectedGraph {
        DirectedGraph::new(n, edges.iter().map(|&(a, b)| (a - 1, b - 1))).unwrap()
    }

    fn one_based(st: &ChordalStructure) -> Vec<Vec<usize>> {
        st.cliques
            .iter()
            .map(|c| c.iter().map(|v| v + 1).collect())
            .collect()
    }

    /// Plant graph read off the nonzero off-diagonal blocks of the
    /// 4-node example: A_ij ≠ 0 means j influences i.
    fn eq42_plant() -> DirectedGraph {
        dg(4, &[(1, 2), (2, 3), (4, 3), (1, 4), (2, 4)])
    }

    #[test]
    fn closure_examples() {
        let g = undirected_closure(&dg(3, &[(1, 2), (2, 3)]));
        assert_eq!(g, ug(3, &[(1, 2), (2, 3)]));
        let g = undirected_closure(&dg(2, &[(1, 2), (2, 1)]));
        assert_eq!(g.edges(), vec![(0, 1)]);
        let g = undirected_closure(&eq42_plant());
        assert_eq!(g, ug(4, &[(1, 2), (2, 3), (3, 4), (1, 4), (2, 4)]));
    }

    #[test]
    fn chordality_examples() {
        assert!(is_chordal(&ug(4, &[(1, 2), (2, 3), (3, 4), (4, 1)])).is_none());
        // star
        assert!(is_chordal(&ug(5, &[(3, 1), (3, 2), (3, 4), (3, 5)])).is_some());
        // triangulated 4-node graph
        assert!(is_chordal(&ug(4, &[(1, 2), (2, 3), (3, 4), (4, 1), (2, 4)])).is_some());
    }

    #[test]
    fn extension_examples() {
        let line = ug(3, &[(1, 2), (2, 3)]);
        assert_eq!(chordal_extension(&line), line);
        let c4 = ug(4, &[(1, 2), (2, 3), (3, 4), (4, 1)]);
        let ext = chordal_extension(&c4);
        assert_eq!(ext.edge_count(), 5);
        assert!(ext.has_edge(0, 2));
        let c5 = ug(5, &[(1, 2), (2, 3), (3, 4), (4, 5), (5, 1)]);
        let ext = chordal_extension(&c5);
        assert_eq!(ext.edge_count(), 7);
        assert!(is_chordal(&ext).is_some());
    }

    #[test]
    fn clique_examples() {
        let st = ChordalStructure::from_graph(&ug(3, &[(1, 2), (2, 3)]));
        assert_eq!(one_based(&st), vec![vec![1, 2], vec![2, 3]]);
        assert_eq!(st.overlap_nodes.iter().copied().collect::<Vec<_>>(), vec![1]);
        assert!(st.overlap_edges.is_empty());

        let st = ChordalStructure::from_graph(&undirected_closure(&eq42_plant()));
        assert_eq!(one_based(&st), vec![vec![1, 2, 4], vec![2, 3, 4]]);
        assert_eq!(st.overlap_nodes.iter().copied().collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(st.overlap_edges.iter().copied().collect::<Vec<_>>(), vec![(1, 3)]);

        let st = ChordalStructure::from_graph(&ug(5, &[(1, 2), (2, 3), (3, 4), (4, 5)]));
        assert_eq!(
            one_based(&st),
            vec![vec![1, 2], vec![2, 3], vec![3, 4], vec![4, 5]]
        );
        assert_eq!(
            st.overlap_nodes.iter().copied().collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn cliques_reject_non_chordal() {
        let c4 = ug(4, &[(1, 2), (2, 3), (3, 4), (4, 1)]);
        assert!(maximal_cliques(&c4, &[0, 1, 2, 3]).is_err());
    }

    #[test]
    fn disconnected_components_have_separate_cliques() {
        let st = ChordalStructure::from_graph(&ug(5, &[(1, 2), (4, 5)]));
        assert_eq!(one_based(&st), vec![vec![1, 2], vec![3], vec![4, 5]]);
        assert!(st.overlap_nodes.is_empty());
    }

    #[test]
    fn acyclic_examples() {
        assert_eq!(is_acyclic(&dg(3, &[(1, 2), (2, 3), (1, 3)])), Some(vec![0, 1, 2]));
        assert!(is_acyclic(&dg(2, &[(1, 2), (2, 1)])).is_none());
        assert!(is_acyclic(&eq42_plant()).is_some());
    }

    #[test]
    fn extract_inflate_examples() {
        let x = SymMat::from_upper(&dmatrix![2.0, 1.0, 0.0; 1.0, 1.0, 1.0; 0.0, 1.0, 2.0]);
        let sizes = [1, 1, 1];
        assert_eq!(extract(&x, &[0, 1, 2], &sizes).unwrap(), x);
        assert_eq!(
            extract(&x, &[1, 2], &sizes).unwrap().as_mat(),
            &dmatrix![1.0, 1.0; 1.0, 2.0]
        );
        let xk = SymMat::from_upper(&dmatrix![0.5, 1.0; 1.0, 2.0]);
        assert_eq!(
            inflate(&xk, &[1, 2], &sizes).unwrap().as_mat(),
            &dmatrix![0.0, 0.0, 0.0; 0.0, 0.5, 1.0; 0.0, 1.0, 2.0]
        );
        assert!(extract(&x, &[3], &sizes).is_err());
    }

    #[test]
    fn block_extract_uses_partition() {
        let x = SymMat::from_upper(&Mat::from_fn(4, 4, |i, j| (i * 4 + j) as f64));
        let sizes = [2, 1, 1];
        let e = extract(&x, &[0, 2], &sizes).unwrap();
        assert_eq!(e.dim(), 3);
        assert_eq!(e.as_mat()[(0, 2)], x.as_mat()[(0, 3)]);
        let back = inflate(&e, &[0, 2], &sizes).unwrap();
        assert_eq!(extract(&back, &[0, 2], &sizes).unwrap(), e);
    }
}
