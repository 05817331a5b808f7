//! Random chain benchmark comparing ADMM with the two LQR baselines.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::admm::{self, AdmmOptions};
use crate::error::{Error, Result};
use crate::graph::ChordalStructure;
use crate::linalg::{Mat, SymMat};
use crate::synth::{self, SynthesisResult};
use crate::system::{BlockPartition, InterconnectedSystem, SubsystemModel};

/// Attempts per instance before giving up on finding a certified draw.
pub const MAX_REGENERATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMethod {
    Centralized,
    Admm,
    LocalizedLqr,
    TruncatedLqr,
}

impl BenchMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchMethod::Centralized => "centralized",
            BenchMethod::Admm => "admm",
            BenchMethod::LocalizedLqr => "localized-lqr",
            BenchMethod::TruncatedLqr => "truncated-lqr",
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            BenchMethod::Centralized,
            BenchMethod::Admm,
            BenchMethod::LocalizedLqr,
            BenchMethod::TruncatedLqr,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| Error::validation("method", format!("unknown bench method `{s}`")))
    }
}

/// How the disturbance enters each chain node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Disturbance {
    /// `M_i = I_2`.
    Identity,
    /// `M_i = B_i`: the disturbance shares the input channel.
    Input,
}

impl FromStr for Disturbance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Disturbance::Identity),
            "input" => Ok(Disturbance::Input),
            _ => Err(Error::validation("disturbance", format!("unknown disturbance model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub chain_length: usize,
    pub instances: usize,
    pub coupling_bound: f64,
    pub seed: u64,
    pub disturbance: Disturbance,
    pub methods: Vec<BenchMethod>,
    pub admm: AdmmOptions,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            chain_length: 5,
            instances: 100,
            coupling_bound: 0.5,
            seed: 0,
            disturbance: Disturbance::Identity,
            methods: vec![BenchMethod::Admm, BenchMethod::LocalizedLqr, BenchMethod::TruncatedLqr],
            admm: AdmmOptions::default(),
            threads: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chain_length < 2 {
            return Err(Error::validation("chain_length", "must be at least 2"));
        }
        if !(self.coupling_bound > 0.0 && self.coupling_bound.is_finite()) {
            return Err(Error::validation("coupling_bound", "must be positive"));
        }
        if self.methods.is_empty() {
            return Err(Error::validation("methods", "at least one method required"));
        }
        self.admm.validate()
    }
}

/// Chain of unstable second-order nodes with one input each and random
/// neighbour couplings drawn uniformly from `[-bound, bound]`.
pub fn chain_instance<R: Rng>(
    n: usize,
    bound: f64,
    disturbance: Disturbance,
    rng: &mut R,
) -> Result<InterconnectedSystem> {
    let b = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
    let m = match disturbance {
        Disturbance::Identity => Mat::identity(2, 2),
        Disturbance::Input => b.clone(),
    };
    let partition = BlockPartition {
        n: vec![2; n],
        m: vec![1; n],
        q: vec![m.ncols(); n],
    };
    let node = SubsystemModel {
        a: Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]),
        b,
        m,
        q: SymMat::identity(2),
        r: SymMat::identity(1),
    };
    let mut couplings = BTreeMap::new();
    for i in 0..n - 1 {
        for (a, b) in [(i, i + 1), (i + 1, i)] {
            let m = Mat::from_fn(2, 2, |_, _| rng.gen_range(-bound..=bound));
            couplings.insert((a, b), m);
        }
    }
    InterconnectedSystem::new(partition, vec![node; n], couplings)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub instance_id: usize,
    pub seed: u64,
    pub method: BenchMethod,
    pub status: String,
    pub h2: Option<f64>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: BenchMethod,
    pub successes: usize,
    pub success_percent: f64,
    /// Mean H2 over instances where every requested method succeeded.
    pub mean_h2_common: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    /// Draws rejected because the centralized restriction was infeasible.
    pub regenerated: usize,
    pub common_successes: usize,
    pub methods: Vec<MethodSummary>,
    pub admm_iteration_histogram: Vec<HistogramBin>,
    #[serde(skip)]
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn summary(&self, m: BenchMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

struct InstanceOutcome {
    rows: Vec<BenchRow>,
    regenerated: usize,
}

fn row(id: usize, seed: u64, method: BenchMethod, r: &SynthesisResult, iterations: Option<usize>) -> BenchRow {
    BenchRow {
        instance_id: id,
        seed,
        method,
        status: r.status.as_str().into(),
        h2: r.h2,
        iterations,
    }
}

fn error_row(id: usize, seed: u64, method: BenchMethod) -> BenchRow {
    BenchRow {
        instance_id: id,
        seed,
        method,
        status: "error".into(),
        h2: None,
        iterations: None,
    }
}

fn run_instance(cfg: &BenchConfig, id: usize, seed: u64) -> Result<InstanceOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut regenerated = 0;
    let (sys, central) = loop {
        let sys = chain_instance(cfg.chain_length, cfg.coupling_bound, cfg.disturbance, &mut rng)?;
        let central = synth::solve_restriction(&sys)?;
        if central.is_success() {
            break (sys, central);
        }
        regenerated += 1;
        if regenerated >= MAX_REGENERATIONS {
            return Err(Error::Domain(format!(
                "instance {id}: no certified draw in {MAX_REGENERATIONS} attempts"
            )));
        }
    };
    let mut rows = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        let r = match m {
            BenchMethod::Centralized => Ok((central.clone(), None)),
            BenchMethod::Admm => {
                let s = ChordalStructure::from_graph(&sys.undirected_graph());
                admm::run(&sys, &s, &cfg.admm).map(|r| (r.synthesis, Some(r.state.iteration)))
            }
            BenchMethod::LocalizedLqr => synth::localized_lqr(&sys).map(|r| (r, None)),
            BenchMethod::TruncatedLqr => synth::truncated_lqr(&sys).map(|r| (r, None)),
        };
        rows.push(match r {
            Ok((r, it)) => row(id, seed, m, &r, it),
            Err(_) => error_row(id, seed, m),
        });
    }
    Ok(InstanceOutcome { rows, regenerated })
}

/// Generates the instance stream and runs every requested method.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..cfg.instances).map(|_| master.next_u64()).collect();
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        t => t,
    }
    .clamp(1, cfg.instances.max(1));
    let mut outcomes: Vec<(usize, Result<InstanceOutcome>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let seeds = &seeds;
                scope.spawn(move || {
                    (w..seeds.len())
                        .step_by(threads)
                        .map(|i| (i, run_instance(cfg, i, seeds[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("bench worker panicked"))
            .collect()
    });
    outcomes.sort_by_key(|(i, _)| *i);
    let mut rows = Vec::new();
    let mut regenerated = 0;
    for (_, o) in outcomes {
        let o = o?;
        regenerated += o.regenerated;
        rows.extend(o.rows);
    }
    Ok(summarize(cfg, rows, regenerated))
}

fn summarize(cfg: &BenchConfig, rows: Vec<BenchRow>, regenerated: usize) -> BenchReport {
    let ok = |r: &BenchRow| r.status == "success" && r.h2.is_some();
    let common: Vec<usize> = (0..cfg.instances)
        .filter(|&i| rows.iter().filter(|r| r.instance_id == i).all(ok))
        .collect();
    let methods = cfg
        .methods
        .iter()
        .map(|&m| {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.method == m).collect();
            let successes = mine.iter().filter(|r| ok(r)).count();
            let h2s: Vec<f64> = mine
                .iter()
                .filter(|r| common.contains(&r.instance_id))
                .filter_map(|r| r.h2)
                .collect();
            MethodSummary {
                method: m,
                successes,
                success_percent: if cfg.instances == 0 {
                    0.0
                } else {
                    100.0 * successes as f64 / cfg.instances as f64
                },
                mean_h2_common: (!h2s.is_empty()).then(|| h2s.iter().sum::<f64>() / h2s.len() as f64),
            }
        })
        .collect();
    BenchReport {
        config: cfg.clone(),
        regenerated,
        common_successes: common.len(),
        methods,
        admm_iteration_histogram: histogram(&rows, cfg.admm.max_iter, 25),
        rows,
    }
}

fn histogram(rows: &[BenchRow], max_iter: usize, width: usize) -> Vec<HistogramBin> {
    let its: Vec<usize> = rows
        .iter()
        .filter(|r| r.method == BenchMethod::Admm)
        .filter_map(|r| r.iterations)
        .collect();
    if its.is_empty() {
        return Vec::new();
    }
    let top = its.iter().copied().max().unwrap_or(0).max(max_iter.min(1));
    (0..=top / width)
        .map(|b| HistogramBin {
            lo: b * width,
            hi: (b + 1) * width,
            count: its.iter().filter(|&&v| v / width == b).count(),
        })
        .collect()
}

/// Per-instance rows: `instance_id,seed,method,status,h2,iterations`.
pub fn write_rows_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["instance_id", "seed", "method", "status", "h2", "iterations"])
        .map_err(admm::csv_err)?;
    for r in rows {
        w.write_record([
            r.instance_id.to_string(),
            r.seed.to_string(),
            r.method.to_string(),
            r.status.clone(),
            r.h2.map(|v| format!("{v:e}")).unwrap_or_default(),
            r.iterations.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(admm::csv_err)?;
    }
    w.flush()?;
    Ok(())
}
