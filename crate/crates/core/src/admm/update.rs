//! Agent-local model data and the three update kinds. Every function here
//! sees only the shard it is given.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::chordal::CliqueBlocks;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, SymMat};
use crate::sdp::{strict_margin, AffineMat, MatVar, SdpProblem, SdpSolution, SdpStatus, SolveOptions};
use crate::synth::{place, schur_block};
use crate::system::SubsystemModel;

/// Clique-side variable named by a consensus equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum CopyKind {
    /// Copy `X_{i,k}` of a shared Lyapunov block.
    X(usize),
    /// Slack `J_{ij,k}`; `J(i, i)` for a shared diagonal block.
    J(usize, usize),
}

/// Model data of one clique agent: every subsystem in the clique and the
/// couplings among them.
#[derive(Debug, Clone)]
pub struct CliqueShard {
    pub clique: usize,
    pub blocks: CliqueBlocks,
    pub subsystems: BTreeMap<usize, SubsystemModel>,
    pub couplings: BTreeMap<(usize, usize), Mat>,
}

/// Model data of a node coordinator: its own subsystem only.
#[derive(Debug, Clone)]
pub struct NodeShard {
    pub node: usize,
    pub model: SubsystemModel,
}

/// Model data of an edge coordinator `(i, j)`, `i < j`: `A_ij` and `A_ji`
/// (zero when absent).
#[derive(Debug, Clone)]
pub struct EdgeShard {
    pub edge: (usize, usize),
    pub a_ij: Mat,
    pub a_ji: Mat,
}

/// Values produced by a node's owner.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeValues {
    pub x: SymMat,
    pub y: SymMat,
    pub z: Mat,
}

#[derive(Debug, Clone)]
pub struct CliqueUpdate {
    /// Value of the copy named by each input, in input order.
    pub copies: Vec<Mat>,
    pub exclusive: Vec<(usize, NodeValues)>,
    /// `Σ Tr(Q_i X_i) + Tr(R_i Y_i)` over exclusive nodes.
    pub objective: f64,
    pub sdp_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct CoordinatorUpdate {
    /// Coordinator-side value for each input, in input order.
    pub values: Vec<Mat>,
    pub node: Option<NodeValues>,
    pub objective: f64,
    pub sdp_iterations: usize,
}

fn model_scale(s: &SubsystemModel) -> f64 {
    s.a.amax().max(s.b.amax()).max((&s.m * s.m.transpose()).amax())
}

fn finish(sol: &SdpSolution, who: &str) -> Result<()> {
    match sol.status {
        SdpStatus::Optimal => Ok(()),
        SdpStatus::Infeasible => Err(Error::Infeasible(format!("{who} subproblem is infeasible"))),
        _ => Err(Error::NumericalLimit(format!(
            "{who} subproblem: {}",
            sol.message.clone().unwrap_or_else(|| "no convergence".into())
        ))),
    }
}

/// `−A X − X Aᵀ + B Z + Zᵀ Bᵀ − M Mᵀ`.
fn diagonal_block(s: &SubsystemModel, x: &MatVar, z: &MatVar) -> AffineMat {
    let n = s.a.nrows();
    let ii = Mat::identity(n, n);
    let mut axbz = AffineMat::zeros(n, n);
    axbz.add_product(&s.a, x, &ii, -1.0);
    axbz.add_product(&s.b, z, &ii, 1.0);
    let mut f = axbz.plus_transpose();
    f.add_constant(&(&s.m * s.m.transpose()), -1.0);
    f
}

/// Clique subproblem: exclusive blocks in local model data, shared blocks as
/// free slacks, one proximal term per input `(copy, y − λ)`.
pub fn x_update(shard: &CliqueShard, inputs: &[(CopyKind, Mat)], rho: f64) -> Result<CliqueUpdate> {
    let cb = &shard.blocks;
    let scale = shard
        .subsystems
        .values()
        .map(model_scale)
        .chain(shard.couplings.values().map(|m| m.amax()))
        .fold(0.0, f64::max);
    let eps = strict_margin(scale);
    let size = |v: usize| shard.subsystems[&v].a.nrows();
    let mut off = BTreeMap::new();
    let mut total = 0;
    for &v in &cb.nodes {
        off.insert(v, total);
        total += size(v);
    }

    let mut prob = SdpProblem::new();
    let mut xs = BTreeMap::new();
    let mut ys = BTreeMap::new();
    let mut zs = BTreeMap::new();
    let mut js = BTreeMap::new();
    for &v in &cb.nodes {
        xs.insert(v, prob.psd(size(v), eps));
        if cb.exclusive_nodes.contains(&v) {
            let m = shard.subsystems[&v].b.ncols();
            ys.insert(v, prob.symmetric(m));
            zs.insert(v, prob.matrix(m, size(v)));
        } else {
            js.insert((v, v), prob.symmetric(size(v)));
        }
    }
    for &(i, j) in &cb.shared_edges {
        js.insert((i, j), prob.matrix(size(i), size(j)));
    }

    let mut lmi = AffineMat::zeros(total, total);
    for &v in &cb.nodes {
        let blk = match zs.get(&v) {
            Some(z) => diagonal_block(&shard.subsystems[&v], &xs[&v], z),
            None => AffineMat::from_var(&js[&(v, v)]),
        };
        lmi.add_block(&blk, off[&v], off[&v], 1.0);
    }
    for (a, &i) in cb.nodes.iter().enumerate() {
        for &j in &cb.nodes[a + 1..] {
            let blk = if let Some(jv) = js.get(&(i, j)) {
                AffineMat::from_var(jv)
            } else {
                // −(A_ij X_j + X_i A_jiᵀ)
                let mut b = AffineMat::zeros(size(i), size(j));
                if let Some(aij) = shard.couplings.get(&(i, j)) {
                    place(&mut b, 0, 0, aij, &xs[&j], &Mat::identity(size(j), size(j)), -1.0);
                }
                if let Some(aji) = shard.couplings.get(&(j, i)) {
                    place(&mut b, 0, 0, &Mat::identity(size(i), size(i)), &xs[&i], &aji.transpose(), -1.0);
                }
                b
            };
            lmi.add_block(&blk, off[&i], off[&j], 1.0);
            lmi.add_block(&blk.transpose(), off[&j], off[&i], 1.0);
        }
    }
    prob.add_lmi(lmi, eps)?;
    for &v in &cb.exclusive_nodes {
        let s = &shard.subsystems[&v];
        prob.add_lmi(schur_block(&xs[&v], &ys[&v], &zs[&v]), 0.0)?;
        prob.add_inner_objective(&xs[&v], s.q.as_mat(), 1.0)?;
        prob.add_inner_objective(&ys[&v], s.r.as_mat(), 1.0)?;
    }
    let copy_var = |c: &CopyKind| -> Result<MatVar> {
        match c {
            CopyKind::X(v) => xs.get(v).copied(),
            CopyKind::J(i, j) => js.get(&(*i, *j)).copied(),
        }
        .ok_or_else(|| Error::Domain(format!("clique {} has no copy {c:?}", shard.clique)))
    };
    for (c, target) in inputs {
        prob.add_proximal(&copy_var(c)?, target, rho)?;
    }

    let sol = prob.solve(&SolveOptions::default())?;
    finish(&sol, &format!("clique {}", shard.clique + 1))?;
    let copies = inputs
        .iter()
        .map(|(c, _)| copy_var(c).map(|v| sol.value(&v)))
        .collect::<Result<Vec<_>>>()?;
    let mut objective = 0.0;
    let mut exclusive = Vec::new();
    for &v in &cb.exclusive_nodes {
        let s = &shard.subsystems[&v];
        let nv = NodeValues {
            x: SymMat::symmetrize(&sol.value(&xs[&v])),
            y: SymMat::symmetrize(&sol.value(&ys[&v])),
            z: sol.value(&zs[&v]),
        };
        objective += (s.q.as_mat() * nv.x.as_mat()).trace() + (s.r.as_mat() * nv.y.as_mat()).trace();
        exclusive.push((v, nv));
    }
    Ok(CliqueUpdate {
        copies,
        exclusive,
        objective,
        sdp_iterations: sol.iterations,
    })
}

/// Node coordinator: `Σ_k Ĵ_ii,k = F_ii(X_i, Z_i)` with proximal terms
/// toward `x̂ + λ` for `X_i` and each `Ĵ_ii,k`.
pub fn y_update(shard: &NodeShard, inputs: &[(CopyKind, Mat)], rho: f64) -> Result<CoordinatorUpdate> {
    let s = &shard.model;
    let i = shard.node;
    let (n, m) = (s.a.nrows(), s.b.ncols());
    let eps = strict_margin(model_scale(s));
    let mut prob = SdpProblem::new();
    let x = prob.psd(n, eps);
    let y = prob.symmetric(m);
    let z = prob.matrix(m, n);
    prob.add_lmi(schur_block(&x, &y, &z), 0.0)?;
    prob.add_inner_objective(&x, s.q.as_mat(), 1.0)?;
    prob.add_inner_objective(&y, s.r.as_mat(), 1.0)?;

    let mut eq = diagonal_block(s, &x, &z);
    let mut vars = Vec::with_capacity(inputs.len());
    for (c, target) in inputs {
        let v = match c {
            CopyKind::X(v) if *v == i => x,
            CopyKind::J(a, b) if *a == i && *b == i => {
                let j = prob.symmetric(n);
                eq.add_var(&j, -1.0);
                j
            }
            _ => return Err(Error::Domain(format!("node {} got foreign copy {c:?}", i + 1))),
        };
        prob.add_proximal(&v, target, rho)?;
        vars.push(v);
    }
    prob.add_equality_mat(&eq)?;

    let sol = prob.solve(&SolveOptions::default())?;
    finish(&sol, &format!("node {}", i + 1))?;
    let nv = NodeValues {
        x: SymMat::symmetrize(&sol.value(&x)),
        y: SymMat::symmetrize(&sol.value(&y)),
        z: sol.value(&z),
    };
    let objective = (s.q.as_mat() * nv.x.as_mat()).trace() + (s.r.as_mat() * nv.y.as_mat()).trace();
    Ok(CoordinatorUpdate {
        values: vars.iter().map(|v| sol.value(v)).collect(),
        node: Some(nv),
        objective,
        sdp_iterations: sol.iterations,
    })
}

fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Edge coordinator: minimizes the proximal terms over its copies `X̂_ji`
/// (of `X_i`), `X̂_ij` (of `X_j`) and `Ĵ_ij,k` subject to
/// `Σ_k Ĵ_ij,k + A_ij X̂_ij + X̂_ji A_jiᵀ = 0`, by solving the KKT system for
/// the multiplier `Γ`:
///
/// `|E| Γ + A_ij sym(A_ijᵀ Γ)/m_j + sym(Γ A_ji) A_jiᵀ/m_i = Σ s_k + A_ij t̄_j + t̄_i A_jiᵀ`.
pub fn y_update_edge(shard: &EdgeShard, inputs: &[(CopyKind, Mat)], _rho: f64) -> Result<CoordinatorUpdate> {
    let (i, j) = shard.edge;
    let (ni, nj) = shard.a_ij.shape();
    let mut sum_i = Mat::zeros(ni, ni);
    let mut sum_j = Mat::zeros(nj, nj);
    let mut sum_s = Mat::zeros(ni, nj);
    let (mut mi, mut mj, mut me) = (0usize, 0usize, 0usize);
    for (c, t) in inputs {
        match *c {
            CopyKind::X(v) if v == i => {
                sum_i += t;
                mi += 1;
            }
            CopyKind::X(v) if v == j => {
                sum_j += t;
                mj += 1;
            }
            CopyKind::J(a, b) if (a, b) == (i, j) => {
                sum_s += t;
                me += 1;
            }
            _ => {
                return Err(Error::Domain(format!(
                    "edge ({}, {}) got foreign copy {c:?}",
                    i + 1,
                    j + 1
                )))
            }
        }
    }
    if mi == 0 || mj == 0 || me == 0 {
        return Err(Error::Domain(format!(
            "edge ({}, {}) needs copies of both endpoints and the slack",
            i + 1,
            j + 1
        )));
    }
    let tbar_i = sum_i / mi as f64;
    let tbar_j = sum_j / mj as f64;
    let (aij, aji) = (&shard.a_ij, &shard.a_ji);
    let op = |g: &Mat| -> Mat {
        g * me as f64 + aij * sym(&(aij.transpose() * g)) / mj as f64 + sym(&(g * aji)) * aji.transpose() / mi as f64
    };
    let dim = ni * nj;
    let mut kkt = Mat::zeros(dim, dim);
    for c in 0..dim {
        let mut e = Mat::zeros(ni, nj);
        e[c] = 1.0;
        let col = op(&e);
        kkt.column_mut(c).copy_from_slice(col.as_slice());
    }
    let rhs = &sum_s + aij * &tbar_j + &tbar_i * aji.transpose();
    let g = linalg::solve(&kkt, &Mat::from_column_slice(dim, 1, rhs.as_slice()))
        .map_err(|e| Error::Numerical(format!("edge ({}, {}) KKT: {e}", i + 1, j + 1)))?;
    let gamma = Mat::from_column_slice(ni, nj, g.as_slice());
    let xhat_ji = SymMat::symmetrize(&(&tbar_i - sym(&(&gamma * aji)) / mi as f64));
    let xhat_ij = SymMat::symmetrize(&(&tbar_j - sym(&(aij.transpose() * &gamma)) / mj as f64));
    let values = inputs
        .iter()
        .map(|(c, t)| match *c {
            CopyKind::X(v) if v == i => xhat_ji.as_mat().clone(),
            CopyKind::X(_) => xhat_ij.as_mat().clone(),
            CopyKind::J(..) => t - &gamma,
        })
        .collect();
    Ok(CoordinatorUpdate {
        values,
        node: None,
        objective: 0.0,
        sdp_iterations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar_model(a: f64, b: f64) -> SubsystemModel {
        SubsystemModel {
            a: Mat::from_element(1, 1, a),
            b: Mat::from_element(1, 1, b),
            m: Mat::identity(1, 1),
            q: SymMat::identity(1),
            r: SymMat::identity(1),
        }
    }

    fn one(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn edge_update_zero_coupling_averages() {
        let shard = EdgeShard {
            edge: (0, 1),
            a_ij: Mat::zeros(1, 1),
            a_ji: Mat::zeros(1, 1),
        };
        let inputs = vec![
            (CopyKind::X(0), one(1.0)),
            (CopyKind::X(1), one(2.0)),
            (CopyKind::J(0, 1), one(3.0)),
            (CopyKind::X(0), one(3.0)),
            (CopyKind::X(1), one(4.0)),
            (CopyKind::J(0, 1), one(-1.0)),
        ];
        let u = y_update_edge(&shard, &inputs, 5.0).unwrap();
        assert!((u.values[0][0] - 2.0).abs() < 1e-12);
        assert!((u.values[1][0] - 3.0).abs() < 1e-12);
        // slacks shifted by their mean so they sum to zero
        assert!((u.values[2][0] - 2.0).abs() < 1e-12);
        assert!((u.values[5][0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn edge_update_matches_direct_kkt() {
        // scalar edge, two cliques: unknowns xi, xj, s1, s2 and multiplier g
        let (a, b) = (0.7, -1.3);
        let shard = EdgeShard {
            edge: (0, 1),
            a_ij: one(a),
            a_ji: one(b),
        };
        let (ti, tj, s) = ([1.0, 2.0], [0.5, -0.5], [0.3, 0.9]);
        let inputs = vec![
            (CopyKind::X(0), one(ti[0])),
            (CopyKind::X(1), one(tj[0])),
            (CopyKind::J(0, 1), one(s[0])),
            (CopyKind::X(0), one(ti[1])),
            (CopyKind::X(1), one(tj[1])),
            (CopyKind::J(0, 1), one(s[1])),
        ];
        let u = y_update_edge(&shard, &inputs, 5.0).unwrap();
        // stationarity: 2(xi − t̄i) + b g = 0, 2(xj − t̄j) + a g = 0,
        // (s_k' − s_k) + g = 0, and s1' + s2' + a xj + xi b = 0
        let m = dmatrix![
            2.0, 0.0, 0.0, 0.0, b;
            0.0, 2.0, 0.0, 0.0, a;
            0.0, 0.0, 1.0, 0.0, 1.0;
            0.0, 0.0, 0.0, 1.0, 1.0;
            b, a, 1.0, 1.0, 0.0
        ];
        let rhs = dmatrix![ti[0] + ti[1]; tj[0] + tj[1]; s[0]; s[1]; 0.0];
        let sol = linalg::solve(&m, &rhs).unwrap();
        assert!((u.values[0][0] - sol[0]).abs() < 1e-12);
        assert!((u.values[1][0] - sol[1]).abs() < 1e-12);
        assert!((u.values[2][0] - sol[2]).abs() < 1e-12);
        assert!((u.values[5][0] - sol[3]).abs() < 1e-12);
    }

    #[test]
    fn edge_update_one_sided_coupling() {
        let shard = EdgeShard {
            edge: (1, 3),
            a_ij: Mat::zeros(1, 1),
            a_ji: one(2.0),
        };
        let inputs = vec![
            (CopyKind::X(1), one(1.0)),
            (CopyKind::X(3), one(1.0)),
            (CopyKind::J(1, 3), one(0.0)),
            (CopyKind::X(1), one(1.0)),
            (CopyKind::X(3), one(1.0)),
            (CopyKind::J(1, 3), one(0.0)),
        ];
        let u = y_update_edge(&shard, &inputs, 5.0).unwrap();
        let total = u.values[2][0] + u.values[5][0];
        // Σ Ĵ = −X̂_ji A_jiᵀ; X̂_ij is untouched
        assert!((total + 2.0 * u.values[0][0]).abs() < 1e-12);
        assert!((u.values[1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn node_update_trivial_data_forces_zero_sum() {
        let mut model = scalar_model(0.0, 0.0);
        model.m = Mat::zeros(1, 1);
        let shard = NodeShard { node: 2, model };
        let inputs = vec![
            (CopyKind::X(2), one(1.0)),
            (CopyKind::J(2, 2), one(0.4)),
            (CopyKind::X(2), one(1.0)),
            (CopyKind::J(2, 2), one(0.2)),
        ];
        let u = y_update(&shard, &inputs, 5.0).unwrap();
        assert!((u.values[1][0] + u.values[3][0]).abs() < 1e-7);
        assert!((u.values[1][0] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn node_update_satisfies_equality() {
        let shard = NodeShard {
            node: 0,
            model: scalar_model(1.0, 1.0),
        };
        let inputs = vec![
            (CopyKind::X(0), one(2.0)),
            (CopyKind::J(0, 0), one(0.5)),
            (CopyKind::X(0), one(2.0)),
            (CopyKind::J(0, 0), one(0.5)),
        ];
        let u = y_update(&shard, &inputs, 5.0).unwrap();
        let nv = u.node.unwrap();
        let f = -2.0 * nv.x.as_mat()[(0, 0)] + 2.0 * nv.z[(0, 0)] - 1.0;
        assert!((u.values[1][0] + u.values[3][0] - f).abs() < 1e-7);
        assert_eq!(u.values[0], u.values[2]);
    }

    #[test]
    fn proximal_dominance() {
        // exclusive node 0 coupled to shared node 1; copies pulled toward a feasible point
        let mut subs = BTreeMap::new();
        subs.insert(0, scalar_model(1.0, 1.0));
        subs.insert(1, scalar_model(-1.0, 1.0));
        let mut couplings = BTreeMap::new();
        couplings.insert((0, 1), one(1.0));
        let shard = CliqueShard {
            clique: 0,
            blocks: CliqueBlocks {
                nodes: vec![0, 1],
                exclusive_nodes: vec![0],
                shared_nodes: vec![1],
                exclusive_edges: vec![(0, 1)],
                shared_edges: vec![],
            },
            subsystems: subs,
            couplings,
        };
        let (tx, tj) = (one(1.0), one(2.0));
        let mut prev = f64::INFINITY;
        for rho in [5.0, 500.0, 5e4] {
            let inputs = vec![(CopyKind::X(1), tx.clone()), (CopyKind::J(1, 1), tj.clone())];
            let u = x_update(&shard, &inputs, rho).unwrap();
            let gap = (&u.copies[0] - &tx).norm() + (&u.copies[1] - &tj).norm();
            assert!(gap <= prev + 1e-9, "rho = {rho}: {gap} > {prev}");
            prev = gap;
        }
        assert!(prev < 1e-3);
    }
}
