//! Interconnected system model, validation, global assembly, and the JSON
//! file format.
//!
//! A system is a set of subsystems `ẋ_i = A_ii x_i + Σ_j A_ij x_j + B_i u_i + M_i d_i`.
//! Couplings are keyed by `(i, j)` = (target, source): `A_ij` is how node `j`
//! drives node `i`, which is plant-graph edge `j → i`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, DirectedGraph, UndirectedGraph};
use crate::linalg::{self, block_diag, Definiteness, Mat, SymMat};

/// State, input and disturbance sizes per subsystem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub q: Vec<usize>,
}

impl BlockPartition {
    pub fn len(&self) -> usize {
        self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }

    pub fn state_offsets(&self) -> Vec<usize> {
        graph::offsets(&self.n)
    }

    pub fn input_offsets(&self) -> Vec<usize> {
        graph::offsets(&self.m)
    }

    pub fn state_dim(&self) -> usize {
        self.n.iter().sum()
    }

    pub fn input_dim(&self) -> usize {
        self.m.iter().sum()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.q.iter().sum()
    }
}

/// Local model data of one subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemModel {
    pub a: Mat,
    pub b: Mat,
    pub m: Mat,
    /// State weight, PSD.
    pub q: SymMat,
    /// Control weight, PD.
    pub r: SymMat,
}

/// A validated interconnected system.
#[derive(Debug, Clone, PartialEq)]
pub struct InterconnectedSystem {
    partition: BlockPartition,
    subsystems: Vec<SubsystemModel>,
    couplings: BTreeMap<(usize, usize), Mat>,
}

/// Global matrices of the compact model `ẋ = Ax + Bu + Md`.
#[derive(Debug, Clone)]
pub struct GlobalMatrices {
    pub a: Mat,
    pub b: Mat,
    pub m: Mat,
    pub q: SymMat,
    pub r: SymMat,
}

/// Block-diagonal state feedback `u_i = −K_ii x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecentralizedController {
    pub gains: Vec<Mat>,
}

impl DecentralizedController {
    pub fn zeros(p: &BlockPartition) -> Self {
        DecentralizedController {
            gains: p.m.iter().zip(&p.n).map(|(&mi, &ni)| Mat::zeros(mi, ni)).collect(),
        }
    }

    pub fn check_dims(&self, p: &BlockPartition) -> Result<()> {
        if self.gains.len() != p.len() {
            return Err(Error::dim(format!(
                "{} gains for {} subsystems",
                self.gains.len(),
                p.len()
            )));
        }
        for (i, k) in self.gains.iter().enumerate() {
            if k.shape() != (p.m[i], p.n[i]) {
                return Err(Error::dim(format!(
                    "gain {} is {}x{}, expected {}x{}",
                    i + 1,
                    k.nrows(),
                    k.ncols(),
                    p.m[i],
                    p.n[i]
                )));
            }
        }
        Ok(())
    }

    pub fn global(&self) -> Mat {
        block_diag(&self.gains)
    }
}

fn check_finite(path: &str, m: &Mat) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::validation(path, "non-finite entry"))
    }
}

fn check_shape(path: &str, m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::validation(
            path,
            format!("expected {rows}x{cols}, found {}x{}", m.nrows(), m.ncols()),
        ));
    }
    check_finite(path, m)
}

fn check_symmetric(path: &str, m: &Mat) -> Result<SymMat> {
    let tol = 1e-12 * m.norm().max(1.0);
    if (m - m.transpose()).amax() > tol {
        return Err(Error::validation(path, "matrix is not symmetric"));
    }
    Ok(SymMat::from_upper(m))
}

impl InterconnectedSystem {
    /// Validates and builds a system. `couplings` maps `(i, j)` (0-based
    /// target, source) to `A_ij`.
    pub fn new(
        partition: BlockPartition,
        subsystems: Vec<SubsystemModel>,
        couplings: BTreeMap<(usize, usize), Mat>,
    ) -> Result<Self> {
        let nsub = partition.len();
        if nsub == 0 {
            return Err(Error::validation("partition.n", "at least one subsystem required"));
        }
        if partition.m.len() != nsub || partition.q.len() != nsub {
            return Err(Error::validation(
                "partition",
                "n, m and q must have the same length",
            ));
        }
        for (name, sizes) in [("n", &partition.n), ("m", &partition.m), ("q", &partition.q)] {
            if let Some(k) = sizes.iter().position(|&s| s == 0) {
                return Err(Error::validation(
                    format!("partition.{name}[{}]", k + 1),
                    "sizes must be at least 1",
                ));
            }
        }
        if subsystems.len() != nsub {
            return Err(Error::validation(
                "subsystems",
                format!("{} subsystems for a partition of {nsub}", subsystems.len()),
            ));
        }
        for (i, s) in subsystems.iter().enumerate() {
            let p = format!("subsystems[{}]", i + 1);
            let (ni, mi, qi) = (partition.n[i], partition.m[i], partition.q[i]);
            check_shape(&format!("{p}.A"), &s.a, ni, ni)?;
            check_shape(&format!("{p}.B"), &s.b, ni, mi)?;
            check_shape(&format!("{p}.M"), &s.m, ni, qi)?;
            check_shape(&format!("{p}.Q"), s.q.as_mat(), ni, ni)?;
            check_shape(&format!("{p}.R"), s.r.as_mat(), mi, mi)?;
            let qc = linalg::classify_psd(&s.q, linalg::DEFAULT_TOL)?;
            if qc.kind == Definiteness::Indefinite {
                return Err(Error::validation(
                    format!("{p}.Q"),
                    format!("Q_{} not positive semidefinite", i + 1),
                ));
            }
            let rc = linalg::classify_psd(&s.r, linalg::DEFAULT_TOL)?;
            if rc.kind != Definiteness::PositiveDefinite {
                return Err(Error::validation(
                    format!("{p}.R"),
                    format!("R_{} not positive definite", i + 1),
                ));
            }
        }
        for (&(i, j), a) in &couplings {
            let p = format!("couplings[({},{})]", i + 1, j + 1);
            if i >= nsub || j >= nsub {
                return Err(Error::validation(p, "subsystem index out of range"));
            }
            if i == j {
                return Err(Error::validation(p, "self-coupling; use the subsystem A block"));
            }
            check_shape(&format!("{p}.Aij"), a, partition.n[i], partition.n[j])?;
            if a.iter().all(|v| *v == 0.0) {
                return Err(Error::validation(
                    p,
                    "zero coupling block; omit the edge instead",
                ));
            }
        }
        Ok(InterconnectedSystem {
            partition,
            subsystems,
            couplings,
        })
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn subsystems(&self) -> &[SubsystemModel] {
        &self.subsystems
    }

    pub fn subsystem(&self, i: usize) -> &SubsystemModel {
        &self.subsystems[i]
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn couplings(&self) -> &BTreeMap<(usize, usize), Mat> {
        &self.couplings
    }

    /// `A_ij` if node `j` drives node `i`.
    pub fn coupling(&self, i: usize, j: usize) -> Option<&Mat> {
        self.couplings.get(&(i, j))
    }

    /// `A_ij`, or a zero block when absent.
    pub fn coupling_or_zero(&self, i: usize, j: usize) -> Mat {
        self.coupling(i, j)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(self.partition.n[i], self.partition.n[j]))
    }

    /// Plant graph: edge `j → i` for every coupling `A_ij`.
    pub fn plant_graph(&self) -> DirectedGraph {
        DirectedGraph::new(self.len(), self.couplings.keys().map(|&(i, j)| (j, i)))
            .expect("coupling indices validated")
    }

    pub fn undirected_graph(&self) -> UndirectedGraph {
        graph::undirected_closure(&self.plant_graph())
    }

    /// Nodes `j` with a coupling `A_ij`.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.couplings
            .keys()
            .filter(|&&(t, _)| t == i)
            .map(|&(_, s)| s)
            .collect()
    }

    /// Nodes `j` driven by `i` (couplings `A_ji`).
    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        self.couplings
            .keys()
            .filter(|&&(_, s)| s == i)
            .map(|&(t, _)| t)
            .collect()
    }

    /// Returns a copy restricted to the given nodes (renumbered in order),
    /// keeping only couplings among them.
    pub fn subsystem_view(&self, nodes: &[usize]) -> Result<InterconnectedSystem> {
        let p = BlockPartition {
            n: nodes.iter().map(|&i| self.partition.n[i]).collect(),
            m: nodes.iter().map(|&i| self.partition.m[i]).collect(),
            q: nodes.iter().map(|&i| self.partition.q[i]).collect(),
        };
        let subs = nodes.iter().map(|&i| self.subsystems[i].clone()).collect();
        let mut cpl = BTreeMap::new();
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                if let Some(m) = self.coupling(i, j) {
                    cpl.insert((a, b), m.clone());
                }
            }
        }
        InterconnectedSystem::new(p, subs, cpl)
    }
}

/// Assembles `A`, `B`, `M`, `Q`, `R` of the global model.
pub fn assemble_global(sys: &InterconnectedSystem) -> GlobalMatrices {
    let p = sys.partition();
    let off = p.state_offsets();
    let n = p.state_dim();
    let mut a = Mat::zeros(n, n);
    for (i, s) in sys.subsystems().iter().enumerate() {
        a.view_mut((off[i], off[i]), s.a.shape()).copy_from(&s.a);
    }
    for (&(i, j), aij) in sys.couplings() {
        a.view_mut((off[i], off[j]), aij.shape()).copy_from(aij);
    }
    let subs = sys.subsystems();
    GlobalMatrices {
        a,
        b: block_diag(&subs.iter().map(|s| s.b.clone()).collect::<Vec<_>>()),
        m: block_diag(&subs.iter().map(|s| s.m.clone()).collect::<Vec<_>>()),
        q: SymMat::from_upper(&block_diag(
            &subs.iter().map(|s| s.q.as_mat().clone()).collect::<Vec<_>>(),
        )),
        r: SymMat::from_upper(&block_diag(
            &subs.iter().map(|s| s.r.as_mat().clone()).collect::<Vec<_>>(),
        )),
    }
}

/// `A − B·blockdiag(K_ii)`.
pub fn closed_loop(sys: &InterconnectedSystem, k: &DecentralizedController) -> Result<Mat> {
    k.check_dims(sys.partition())?;
    let g = assemble_global(sys);
    Ok(&g.a - &g.b * k.global())
}

/// `A − B K` for a dense gain.
pub fn closed_loop_dense(sys: &InterconnectedSystem, k: &Mat) -> Result<Mat> {
    let g = assemble_global(sys);
    if k.shape() != (g.b.ncols(), g.a.nrows()) {
        return Err(Error::dim("dense gain shape"));
    }
    Ok(&g.a - &g.b * k)
}

// ---------------------------------------------------------------------------
// file format

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Serialize, Deserialize)]
struct PartitionFile {
    n: Vec<usize>,
    m: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubsystemFile {
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    m: Option<Rows>,
    #[serde(rename = "Q")]
    q: Rows,
    #[serde(rename = "R")]
    r: Rows,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingFile {
    i: usize,
    j: usize,
    #[serde(rename = "Aij")]
    aij: Rows,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    partition: PartitionFile,
    subsystems: Vec<SubsystemFile>,
    #[serde(default)]
    couplings: Vec<CouplingFile>,
    /// Optional declared plant graph, `[from, to]` pairs (1-based).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plant_edges: Option<Vec<[usize; 2]>>,
}

fn rows_to_mat(path: &str, rows: &Rows, expect_rows: usize, expect_cols: usize) -> Result<Mat> {
    if rows.len() != expect_rows {
        return Err(Error::validation(
            path,
            format!("expected {expect_rows} rows, found {}", rows.len()),
        ));
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != expect_cols {
            return Err(Error::validation(
                format!("{path}[{}]", r + 1),
                format!("expected {expect_cols} columns, found {}", row.len()),
            ));
        }
    }
    Ok(Mat::from_fn(expect_rows, expect_cols, |i, j| rows[i][j]))
}

/// Row-major nested vectors, the JSON matrix layout.
pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Parses a system from its JSON text.
pub fn system_from_json(text: &str) -> Result<InterconnectedSystem> {
    let file: SystemFile = serde_json::from_str(text).map_err(|e| {
        Error::validation("$", format!("schema violation: {e}"))
    })?;
    let nsub = file.partition.n.len();
    if file.partition.m.len() != nsub {
        return Err(Error::validation("partition.m", "length differs from partition.n"));
    }
    if file.subsystems.len() != nsub {
        return Err(Error::validation(
            "subsystems",
            format!("{} entries for {nsub} partition blocks", file.subsystems.len()),
        ));
    }
    let q_sizes: Vec<usize> = match &file.partition.q {
        Some(q) => {
            if q.len() != nsub {
                return Err(Error::validation("partition.q", "length differs from partition.n"));
            }
            q.clone()
        }
        None => file
            .subsystems
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.m.as_ref()
                    .and_then(|m| m.first().map(|r| r.len()))
                    .unwrap_or(file.partition.n[i])
            })
            .collect(),
    };
    let partition = BlockPartition {
        n: file.partition.n.clone(),
        m: file.partition.m.clone(),
        q: q_sizes,
    };
    let mut subs = Vec::with_capacity(nsub);
    for (i, s) in file.subsystems.iter().enumerate() {
        let p = format!("subsystems[{}]", i + 1);
        let (ni, mi, qi) = (partition.n[i], partition.m[i], partition.q[i]);
        let a = rows_to_mat(&format!("{p}.A"), &s.a, ni, ni)?;
        let b = rows_to_mat(&format!("{p}.B"), &s.b, ni, mi)?;
        let m = match &s.m {
            Some(rows) => rows_to_mat(&format!("{p}.M"), rows, ni, qi)?,
            None => {
                if qi != ni {
                    return Err(Error::validation(
                        format!("{p}.M"),
                        "M omitted but q differs from n",
                    ));
                }
                Mat::identity(ni, ni)
            }
        };
        let q = check_symmetric(
            &format!("{p}.Q"),
            &rows_to_mat(&format!("{p}.Q"), &s.q, ni, ni)?,
        )?;
        let r = check_symmetric(
            &format!("{p}.R"),
            &rows_to_mat(&format!("{p}.R"), &s.r, mi, mi)?,
        )?;
        subs.push(SubsystemModel { a, b, m, q, r });
    }
    let mut couplings = BTreeMap::new();
    for (k, c) in file.couplings.iter().enumerate() {
        let p = format!("couplings[{}]", k + 1);
        if c.i == 0 || c.j == 0 || c.i > nsub || c.j > nsub {
            return Err(Error::validation(p, "indices are 1-based and must be in range"));
        }
        let (i, j) = (c.i - 1, c.j - 1);
        let a = rows_to_mat(&format!("{p}.Aij"), &c.aij, partition.n[i], partition.n[j])?;
        if couplings.insert((i, j), a).is_some() {
            return Err(Error::validation(p, "duplicate coupling block"));
        }
    }
    if let Some(edges) = &file.plant_edges {
        let mut declared = std::collections::BTreeSet::new();
        for (k, e) in edges.iter().enumerate() {
            if e[0] == 0 || e[1] == 0 || e[0] > nsub || e[1] > nsub {
                return Err(Error::validation(
                    format!("plant_edges[{}]", k + 1),
                    "indices are 1-based and must be in range",
                ));
            }
            declared.insert((e[0] - 1, e[1] - 1));
        }
        for &(i, j) in couplings.keys() {
            if !declared.contains(&(j, i)) {
                return Err(Error::validation(
                    "plant_edges",
                    format!(
                        "coupling A_{}{} present but edge {} -> {} not declared",
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1
                    ),
                ));
            }
        }
        for &(from, to) in &declared {
            if !couplings.contains_key(&(to, from)) {
                return Err(Error::validation(
                    "plant_edges",
                    format!("edge {} -> {} declared without a coupling block", from + 1, to + 1),
                ));
            }
        }
    }
    InterconnectedSystem::new(partition, subs, couplings)
}

/// Serializes a system to JSON text. Floats use shortest round-trip form.
pub fn system_to_json(sys: &InterconnectedSystem) -> Result<String> {
    let p = sys.partition();
    let file = SystemFile {
        partition: PartitionFile {
            n: p.n.clone(),
            m: p.m.clone(),
            q: Some(p.q.clone()),
        },
        subsystems: sys
            .subsystems()
            .iter()
            .map(|s| SubsystemFile {
                a: mat_to_rows(&s.a),
                b: mat_to_rows(&s.b),
                m: Some(mat_to_rows(&s.m)),
                q: mat_to_rows(s.q.as_mat()),
                r: mat_to_rows(s.r.as_mat()),
            })
            .collect(),
        couplings: sys
            .couplings()
            .iter()
            .map(|(&(i, j), a)| CouplingFile {
                i: i + 1,
                j: j + 1,
                aij: mat_to_rows(a),
            })
            .collect(),
        plant_edges: None,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn load_system(path: impl AsRef<Path>) -> Result<InterconnectedSystem> {
    let text = std::fs::read_to_string(path)?;
    system_from_json(&text)
}

pub fn save_system(sys: &InterconnectedSystem, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, system_to_json(sys)?)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct GainsFile {
    gains: Vec<Rows>,
}

/// Parses `{"gains": [K_11, K_22, ...]}`.
pub fn controller_from_json(text: &str) -> Result<DecentralizedController> {
    let f: GainsFile = serde_json::from_str(text)
        .map_err(|e| Error::validation("$", format!("schema violation: {e}")))?;
    let mut gains = Vec::with_capacity(f.gains.len());
    for (k, rows) in f.gains.iter().enumerate() {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        gains.push(rows_to_mat(&format!("gains[{}]", k + 1), rows, r, c)?);
    }
    Ok(DecentralizedController { gains })
}

pub fn controller_to_json_value(k: &DecentralizedController) -> serde_json::Value {
    serde_json::json!({ "gains": k.gains.iter().map(mat_to_rows).collect::<Vec<_>>() })
}

pub fn load_controller(path: impl AsRef<Path>) -> Result<DecentralizedController> {
    controller_from_json(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// reference systems

/// The four-node first-order network with `B = M = I`, `Q_i = R_i = 1`.
pub fn four_node_example() -> InterconnectedSystem {
    let a = [
        [1.0, 0.0, 0.0, 0.0],
        [1.0, 2.0, 0.0, 0.0],
        [0.0, 2.0, 3.0, 4.0],
        [1.0, 2.0, 0.0, 4.0],
    ];
    scalar_network(&a, &[1.0; 4])
}

/// Scalar subsystems from a dense matrix; `b[i]` is each input gain.
/// `Q_i = R_i = M_i = 1`.
pub fn scalar_network<const N: usize>(a: &[[f64; N]; N], b: &[f64]) -> InterconnectedSystem {
    let partition = BlockPartition {
        n: vec![1; N],
        m: vec![1; N],
        q: vec![1; N],
    };
    let subs = (0..N)
        .map(|i| SubsystemModel {
            a: Mat::from_element(1, 1, a[i][i]),
            b: Mat::from_element(1, 1, b[i]),
            m: Mat::identity(1, 1),
            q: SymMat::identity(1),
            r: SymMat::identity(1),
        })
        .collect();
    let mut cpl = BTreeMap::new();
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i != j && v != 0.0 {
                cpl.insert((i, j), Mat::from_element(1, 1, v));
            }
        }
    }
    InterconnectedSystem::new(partition, subs, cpl).expect("scalar network is valid")
}
