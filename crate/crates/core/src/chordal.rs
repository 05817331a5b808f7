//! Clique decomposition and composition of block-sparse PSD matrices, and
//! the block structure of `F(X, Z) = −(AX − BZ) − (AX − BZ)ᵀ − MMᵀ`.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::graph::{offsets, ChordalStructure, UndirectedGraph};
use crate::linalg::{min_eigenvalue, Mat, SymMat};
use crate::system::InterconnectedSystem;

/// PSD tolerance (relative to `max(1, ‖X‖)`) used to certify clique blocks.
pub const SPLIT_PSD_TOL: f64 = 1e-9;

/// Symmetric block matrix supported on a graph plus the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBlockSym {
    pub sizes: Vec<usize>,
    pub graph: UndirectedGraph,
    /// Blocks `(i, j)` with `i ≤ j`; absent blocks are zero.
    pub blocks: BTreeMap<(usize, usize), Mat>,
}

impl SparseBlockSym {
    pub fn zeros(sizes: &[usize], graph: &UndirectedGraph) -> Self {
        SparseBlockSym {
            sizes: sizes.to_vec(),
            graph: graph.clone(),
            blocks: BTreeMap::new(),
        }
    }

    /// Reads the supported blocks of a dense matrix; entries outside the
    /// support must vanish (to `tol`).
    pub fn from_dense(x: &SymMat, sizes: &[usize], graph: &UndirectedGraph, tol: f64) -> Result<Self> {
        let off = offsets(sizes);
        let n = sizes.len();
        if graph.node_count() != n {
            return Err(Error::dim("graph and partition sizes differ"));
        }
        if x.dim() != off[n] {
            return Err(Error::dim(format!("matrix dim {} vs partition {}", x.dim(), off[n])));
        }
        let m = x.as_mat();
        let mut blocks = BTreeMap::new();
        for i in 0..n {
            for j in i..n {
                let b = m
                    .view((off[i], off[j]), (sizes[i], sizes[j]))
                    .into_owned();
                if i == j || graph.has_edge(i, j) {
                    blocks.insert((i, j), b);
                } else if b.amax() > tol {
                    return Err(Error::Domain(format!(
                        "block ({}, {}) outside the support is nonzero",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(SparseBlockSym {
            sizes: sizes.to_vec(),
            graph: graph.clone(),
            blocks,
        })
    }

    /// Block `(i, j)` in either orientation.
    pub fn block(&self, i: usize, j: usize) -> Mat {
        if i <= j {
            self.blocks
                .get(&(i, j))
                .cloned()
                .unwrap_or_else(|| Mat::zeros(self.sizes[i], self.sizes[j]))
        } else {
            self.block(j, i).transpose()
        }
    }

    pub fn to_dense(&self) -> SymMat {
        let off = offsets(&self.sizes);
        let mut m = Mat::zeros(off[self.sizes.len()], off[self.sizes.len()]);
        for (&(i, j), b) in &self.blocks {
            m.view_mut((off[i], off[j]), b.shape()).copy_from(b);
            if i != j {
                m.view_mut((off[j], off[i]), (b.ncols(), b.nrows()))
                    .copy_from(&b.transpose());
            }
        }
        SymMat::from_upper(&m)
    }
}

/// Per-clique dense blocks `X_k` (rows ordered by the clique's node list).
#[derive(Debug, Clone, PartialEq)]
pub struct CliqueSplit {
    pub blocks: Vec<SymMat>,
}

fn clique_dim(clique: &[usize], sizes: &[usize]) -> usize {
    clique.iter().map(|&i| sizes[i]).sum()
}

/// `Σ_k E_kᵀ X_k E_k`.
pub fn compose(split: &CliqueSplit, s: &ChordalStructure, sizes: &[usize]) -> Result<SparseBlockSym> {
    if split.blocks.len() != s.cliques.len() {
        return Err(Error::dim(format!(
            "{} clique blocks for {} cliques",
            split.blocks.len(),
            s.cliques.len()
        )));
    }
    if sizes.len() != s.graph.node_count() {
        return Err(Error::dim("partition does not match the graph"));
    }
    let mut out = SparseBlockSym::zeros(sizes, &s.graph);
    for (k, clique) in s.cliques.iter().enumerate() {
        let xk = &split.blocks[k];
        if xk.dim() != clique_dim(clique, sizes) {
            return Err(Error::dim(format!(
                "clique {} block has dim {}, expected {}",
                k + 1,
                xk.dim(),
                clique_dim(clique, sizes)
            )));
        }
        let loc = offsets(&clique.iter().map(|&i| sizes[i]).collect::<Vec<_>>());
        for (a, &i) in clique.iter().enumerate() {
            for (b, &j) in clique.iter().enumerate().skip(a) {
                let blk = xk
                    .as_mat()
                    .view((loc[a], loc[b]), (sizes[i], sizes[j]))
                    .into_owned();
                let (key, blk) = if i <= j { ((i, j), blk) } else { ((j, i), blk.transpose()) };
                *out
                    .blocks
                    .entry(key)
                    .or_insert_with(|| Mat::zeros(sizes[key.0], sizes[key.1])) += blk;
            }
        }
    }
    Ok(out)
}

fn psd_with_tol(m: &SymMat, tol: f64) -> Result<bool> {
    let scale = m.as_mat().amax().max(1.0);
    Ok(min_eigenvalue(m)? >= -tol * scale)
}

fn equal_split(x: &SparseBlockSym, s: &ChordalStructure) -> CliqueSplit {
    let sizes = &x.sizes;
    let blocks = s
        .cliques
        .iter()
        .map(|clique| {
            let loc = offsets(&clique.iter().map(|&i| sizes[i]).collect::<Vec<_>>());
            let d = loc[clique.len()];
            let mut m = Mat::zeros(d, d);
            for (a, &i) in clique.iter().enumerate() {
                for (b, &j) in clique.iter().enumerate() {
                    let share = if i == j {
                        s.node_cliques[i].len()
                    } else {
                        s.cliques_of_edge(i, j).len()
                    };
                    let blk = x.block(i, j) / share as f64;
                    m.view_mut((loc[a], loc[b]), blk.shape()).copy_from(&blk);
                }
            }
            SymMat::from_upper(&m)
        })
        .collect();
    CliqueSplit { blocks }
}

/// Splits `X` along the cliques by `LDLᵀ` in elimination order: each rank-one
/// term is supported on a vertex and its later neighbours, which lie in one
/// clique.
fn factor_split(x: &SparseBlockSym, s: &ChordalStructure) -> Result<CliqueSplit> {
    let sizes = &x.sizes;
    let nb = sizes.len();
    let off = offsets(sizes);
    let dense = x.to_dense().into_mat();
    let dim = dense.nrows();
    let scale = dense.amax().max(1.0);

    let mut pos = vec![0; nb];
    for (k, &v) in s.order.iter().enumerate() {
        pos[v] = k;
    }
    // Clique covering each node together with its later neighbours.
    let mut home = vec![0; nb];
    for v in 0..nb {
        let mut need: BTreeSet<usize> = s
            .graph
            .neighbors(v)
            .iter()
            .copied()
            .filter(|&u| pos[u] > pos[v])
            .collect();
        need.insert(v);
        home[v] = s
            .cliques
            .iter()
            .position(|c| need.iter().all(|u| c.binary_search(u).is_ok()))
            .ok_or_else(|| Error::Numerical("no clique covers an elimination step".into()))?;
    }

    let perm: Vec<usize> = s.order.iter().flat_map(|&b| off[b]..off[b + 1]).collect();
    let owner: Vec<usize> = {
        let mut o = vec![0; dim];
        for b in 0..nb {
            for r in off[b]..off[b + 1] {
                o[r] = b;
            }
        }
        o
    };
    let mut work = Mat::from_fn(dim, dim, |i, j| dense[(perm[i], perm[j])]);
    let mut split: Vec<Mat> = s
        .cliques
        .iter()
        .map(|c| {
            let d = clique_dim(c, sizes);
            Mat::zeros(d, d)
        })
        .collect();
    let clique_pos: Vec<BTreeMap<usize, usize>> = s
        .cliques
        .iter()
        .map(|c| {
            let mut m = BTreeMap::new();
            let mut acc = 0;
            for &i in c {
                for r in 0..sizes[i] {
                    m.insert(off[i] + r, acc + r);
                }
                acc += sizes[i];
            }
            m
        })
        .collect();

    for p in 0..dim {
        let raw = work[(p, p)];
        if raw <= 1e-13 * scale {
            let col = work.view((p + 1, p), (dim - p - 1, 1)).amax();
            if raw < -SPLIT_PSD_TOL * scale || col > 1e-7 * scale {
                return Err(Error::Domain("matrix is not positive semidefinite".into()));
            }
            continue;
        }
        // Small pivots amplify rounding, so the pivot is raised until no
        // Schur update exceeds the remaining diagonal. The excess is
        // rounding-sized for PSD input and is undone by the residue pass.
        let d = (p + 1..dim).fold(raw, |acc, r| {
            let c = work[(r, p)];
            acc.max(c * c / (work[(r, r)].max(0.0) + 1e-13 * scale))
        });
        let l: Vec<f64> = (p..dim).map(|r| work[(r, p)]).collect();
        let k = home[owner[perm[p]]];
        let map = &clique_pos[k];
        let support: Vec<(usize, usize)> = l
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(a, _)| {
                let g = perm[p + a];
                map.get(&g).map(|&loc| (a, loc)).ok_or_else(|| {
                    Error::Numerical("elimination term leaves its clique".into())
                })
            })
            .collect::<Result<_>>()?;
        for &(a, la) in &support {
            for &(b, lb) in &support {
                let v = l[a] * l[b] / d;
                split[k][(la, lb)] += v;
                work[(p + a, p + b)] -= v;
            }
        }
    }
    let mut out = CliqueSplit {
        blocks: split.into_iter().map(|m| SymMat::symmetrize(&m)).collect(),
    };
    // Push rounding residue into the first clique holding each block.
    let recomposed = compose(&out, s, sizes)?;
    for (&(i, j), b) in &x.blocks {
        let r = b - recomposed.block(i, j);
        let k = if i == j {
            s.node_cliques[i][0]
        } else {
            match s.cliques_of_edge(i, j).first() {
                Some(&k) => k,
                None => continue,
            }
        };
        let c = &s.cliques[k];
        let loc = offsets(&c.iter().map(|&u| sizes[u]).collect::<Vec<_>>());
        let a = c.binary_search(&i).expect("clique holds node");
        let bpos = c.binary_search(&j).expect("clique holds node");
        let mut m = out.blocks[k].clone().into_mat();
        {
            let mut v = m.view_mut((loc[a], loc[bpos]), r.shape());
            v += &r;
        }
        if i != j {
            let mut v = m.view_mut((loc[bpos], loc[a]), (r.ncols(), r.nrows()));
            v += r.transpose();
        }
        out.blocks[k] = SymMat::from_upper(&m);
    }
    Ok(out)
}

/// Splits a PSD matrix supported on a chordal structure into PSD clique
/// blocks that compose back to it.
pub fn decompose_psd(x: &SparseBlockSym, s: &ChordalStructure) -> Result<CliqueSplit> {
    let nb = x.sizes.len();
    if s.graph.node_count() != nb {
        return Err(Error::dim("partition does not match the structure"));
    }
    for &(i, j) in x.blocks.keys() {
        if i != j && !s.graph.has_edge(i, j) {
            return Err(Error::Domain(format!(
                "block ({}, {}) lies outside the chordal support",
                i + 1,
                j + 1
            )));
        }
    }
    let dense = x.to_dense();
    let scale = dense.as_mat().amax().max(1.0);
    if min_eigenvalue(&dense)? < -SPLIT_PSD_TOL * scale {
        return Err(Error::Domain("matrix is not positive semidefinite".into()));
    }
    let eq = equal_split(x, s);
    let mut all_psd = true;
    for b in &eq.blocks {
        if !psd_with_tol(b, 1e-12)? {
            all_psd = false;
            break;
        }
    }
    if all_psd {
        return Ok(eq);
    }
    let split = factor_split(x, s)?;
    for (k, b) in split.blocks.iter().enumerate() {
        if !psd_with_tol(b, 1e-8)? {
            return Err(Error::Numerical(format!(
                "clique {} block could not be certified PSD",
                k + 1
            )));
        }
    }
    Ok(split)
}

/// `F(X, Z)` for block-diagonal `X`, `Z`, supported on the plant's
/// undirected graph.
pub fn build_f(sys: &InterconnectedSystem, x: &[SymMat], z: &[Mat]) -> Result<SparseBlockSym> {
    let p = sys.partition();
    let n = sys.len();
    if x.len() != n || z.len() != n {
        return Err(Error::dim(format!("expected {n} X and Z blocks")));
    }
    for i in 0..n {
        if x[i].dim() != p.n[i] {
            return Err(Error::dim(format!("X_{} must be {}x{}", i + 1, p.n[i], p.n[i])));
        }
        if z[i].shape() != (p.m[i], p.n[i]) {
            return Err(Error::dim(format!("Z_{} must be {}x{}", i + 1, p.m[i], p.n[i])));
        }
    }
    let g = sys.undirected_graph();
    let mut out = SparseBlockSym::zeros(&p.n, &g);
    for i in 0..n {
        let sub = sys.subsystem(i);
        let t = &sub.a * x[i].as_mat() - &sub.b * &z[i];
        let d = -(&t + t.transpose()) - &sub.m * sub.m.transpose();
        out.blocks.insert((i, i), SymMat::symmetrize(&d).into_mat());
    }
    for (i, j) in g.edges() {
        let aij = sys.coupling_or_zero(i, j);
        let aji = sys.coupling_or_zero(j, i);
        let b = -(aij * x[j].as_mat() + x[i].as_mat() * aji.transpose());
        out.blocks.insert((i, j), b);
    }
    Ok(out)
}

/// Assignment of `F`'s blocks to cliques.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliqueBlocks {
    pub nodes: Vec<usize>,
    /// Diagonal blocks owned by this clique alone.
    pub exclusive_nodes: Vec<usize>,
    /// Diagonal blocks shared as slack `J_ii,k`.
    pub shared_nodes: Vec<usize>,
    /// Edge blocks `(i, j)`, `i < j`, owned by this clique alone.
    pub exclusive_edges: Vec<(usize, usize)>,
    /// Edge blocks shared as slack `J_ij,k`.
    pub shared_edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliqueLayout {
    pub cliques: Vec<CliqueBlocks>,
}

impl CliqueLayout {
    /// Clique owning an exclusive node, if any.
    pub fn owner_of_node(&self, i: usize) -> Option<usize> {
        self.cliques.iter().position(|c| c.exclusive_nodes.contains(&i))
    }

    pub fn shared_node_count(&self) -> usize {
        self.cliques.iter().map(|c| c.shared_nodes.len()).sum()
    }
}

pub fn clique_blocks(s: &ChordalStructure) -> CliqueLayout {
    let cliques = s
        .cliques
        .iter()
        .map(|c| {
            let mut cb = CliqueBlocks {
                nodes: c.clone(),
                exclusive_nodes: Vec::new(),
                shared_nodes: Vec::new(),
                exclusive_edges: Vec::new(),
                shared_edges: Vec::new(),
            };
            for (a, &i) in c.iter().enumerate() {
                if s.overlap_nodes.contains(&i) {
                    cb.shared_nodes.push(i);
                } else {
                    cb.exclusive_nodes.push(i);
                }
                for &j in &c[a + 1..] {
                    if s.overlap_edges.contains(&(i, j)) {
                        cb.shared_edges.push((i, j));
                    } else {
                        cb.exclusive_edges.push((i, j));
                    }
                }
            }
            cb
        })
        .collect();
    CliqueLayout { cliques }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::maximal_cliques;
    use crate::system::{assemble_global, four_node_example, scalar_network};
    use nalgebra::dmatrix;

    fn line3() -> ChordalStructure {
        let g = UndirectedGraph::new(3, [(0, 1), (1, 2)]).unwrap();
        ChordalStructure::from_graph(&g)
    }

    #[test]
    fn example_one_equal_split() {
        let s = line3();
        let x = SymMat::from_upper(&dmatrix![2.0, 1.0, 0.0; 1.0, 1.0, 1.0; 0.0, 1.0, 2.0]);
        let sb = SparseBlockSym::from_dense(&x, &[1, 1, 1], &s.graph, 0.0).unwrap();
        let split = decompose_psd(&sb, &s).unwrap();
        assert_eq!(split.blocks[0].as_mat(), &dmatrix![2.0, 1.0; 1.0, 0.5]);
        assert_eq!(split.blocks[1].as_mat(), &dmatrix![0.5, 1.0; 1.0, 2.0]);
        let back = compose(&split, &s, &[1, 1, 1]).unwrap();
        assert_eq!(back.to_dense(), x);
    }

    #[test]
    fn compose_single_clique_is_identity() {
        let g = UndirectedGraph::new(2, [(0, 1)]).unwrap();
        let s = ChordalStructure::from_graph(&g);
        let x = SymMat::from_upper(&dmatrix![1.0, 2.0; 2.0, 5.0]);
        let c = compose(&CliqueSplit { blocks: vec![x.clone()] }, &s, &[1, 1]).unwrap();
        assert_eq!(c.to_dense(), x);
        let z = compose(
            &CliqueSplit {
                blocks: vec![SymMat::zeros(2)],
            },
            &s,
            &[1, 1],
        )
        .unwrap();
        assert_eq!(z.to_dense(), SymMat::zeros(2));
        assert!(compose(&CliqueSplit { blocks: vec![SymMat::zeros(3)] }, &s, &[1, 1]).is_err());
    }

    #[test]
    fn disjoint_cliques_keep_diagonal_blocks() {
        let g = UndirectedGraph::new(2, []).unwrap();
        let s = ChordalStructure::from_graph(&g);
        let x = SymMat::from_upper(&dmatrix![3.0, 1.0, 0.0; 1.0, 2.0, 0.0; 0.0, 0.0, 4.0]);
        let sb = SparseBlockSym::from_dense(&x, &[2, 1], &g, 0.0).unwrap();
        let split = decompose_psd(&sb, &s).unwrap();
        assert_eq!(split.blocks[0].as_mat(), &dmatrix![3.0, 1.0; 1.0, 2.0]);
        assert_eq!(split.blocks[1].as_mat(), &dmatrix![4.0]);
    }

    #[test]
    fn unequal_split_needed() {
        // Equal splitting of X_22 leaves the first clique indefinite.
        let s = line3();
        let x = SymMat::from_upper(&dmatrix![1.0, 1.0, 0.0; 1.0, 1.01, 0.1; 0.0, 0.1, 1.0]);
        let sb = SparseBlockSym::from_dense(&x, &[1, 1, 1], &s.graph, 0.0).unwrap();
        let split = decompose_psd(&sb, &s).unwrap();
        for b in &split.blocks {
            assert!(min_eigenvalue(b).unwrap() >= -1e-9);
        }
        let back = compose(&split, &s, &[1, 1, 1]).unwrap().to_dense();
        assert!((back.as_mat() - x.as_mat()).amax() < 1e-12);
    }

    #[test]
    fn rejects_non_psd_and_out_of_support() {
        let s = line3();
        let x = SymMat::from_upper(&dmatrix![1.0, 2.0, 0.0; 2.0, 1.0, 0.0; 0.0, 0.0, 1.0]);
        let sb = SparseBlockSym::from_dense(&x, &[1, 1, 1], &s.graph, 0.0).unwrap();
        assert!(matches!(decompose_psd(&sb, &s), Err(Error::Domain(_))));
        let full = SymMat::from_upper(&dmatrix![2.0, 0.0, 1.0; 0.0, 2.0, 0.0; 1.0, 0.0, 2.0]);
        assert!(SparseBlockSym::from_dense(&full, &[1, 1, 1], &s.graph, 0.0).is_err());
    }

    #[test]
    fn build_f_examples() {
        let sys = scalar_network(&[[-1.0, 0.0], [0.0, -1.0]], &[0.0, 0.0]);
        // M defaults to I in scalar_network; check against the dense formula instead.
        let x = vec![SymMat::identity(1), SymMat::identity(1)];
        let z = vec![Mat::zeros(1, 1), Mat::zeros(1, 1)];
        let f = build_f(&sys, &x, &z).unwrap().to_dense();
        let g = assemble_global(&sys);
        let dense = Mat::identity(2, 2) * 2.0 - &g.m * g.m.transpose();
        assert!((f.as_mat() - dense).amax() < 1e-14);

        let chain = scalar_network(&[[0.0, 1.0], [0.0, 0.0]], &[1.0, 1.0]);
        let f = build_f(&chain, &x, &z).unwrap();
        assert_eq!(f.block(0, 1)[(0, 0)], -1.0);
    }

    #[test]
    fn layouts() {
        let l = clique_blocks(&line3());
        assert_eq!(l.cliques[0].exclusive_nodes, vec![0]);
        assert_eq!(l.cliques[0].shared_nodes, vec![1]);
        assert_eq!(l.cliques[0].exclusive_edges, vec![(0, 1)]);
        assert!(l.cliques[0].shared_edges.is_empty());
        assert_eq!(l.cliques[1].exclusive_nodes, vec![2]);

        let sys = four_node_example();
        let s = ChordalStructure::from_graph(&sys.undirected_graph());
        let l = clique_blocks(&s);
        for c in &l.cliques {
            assert_eq!(c.shared_nodes, vec![1, 3]);
            assert_eq!(c.shared_edges, vec![(1, 3)]);
        }
        assert_eq!(l.owner_of_node(0), Some(0));
        assert_eq!(l.owner_of_node(2), Some(1));

        let g = UndirectedGraph::new(3, [(0, 1)]).unwrap();
        let order = crate::graph::is_chordal(&g).unwrap();
        let l = clique_blocks(&maximal_cliques(&g, &order).unwrap());
        assert_eq!(l.shared_node_count(), 0);
    }
}
