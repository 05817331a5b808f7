#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chordsynth::system::{BlockPartition, SubsystemModel};
use chordsynth::{InterconnectedSystem, Mat, SymMat};
use nalgebra::SymmetricEigen;
use rand::Rng;

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn one(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

pub fn random_mat<R: Rng>(rng: &mut R, r: usize, c: usize, bound: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-bound..bound))
}

/// `R Rᵀ + shift·I`.
pub fn random_pd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> Mat {
    let r = random_mat(rng, n, n, 1.0);
    &r * r.transpose() + Mat::identity(n, n) * shift
}

/// Smallest eigenvalue through nalgebra's own symmetric eigensolver.
pub fn min_eig(m: &Mat) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.min()
}

/// Scalar chain `1 - 2 - ... - n` with `b_i = 1`, `a_ii` in `[-1, 1]` and
/// couplings in `[-0.5, 0.5]` in both directions.
pub fn scalar_chain<R: Rng>(rng: &mut R, n: usize) -> InterconnectedSystem {
    let p = BlockPartition {
        n: vec![1; n],
        m: vec![1; n],
        q: vec![1; n],
    };
    let subs = (0..n)
        .map(|_| SubsystemModel {
            a: one(rng.gen_range(-1.0..1.0)),
            b: one(1.0),
            m: one(1.0),
            q: SymMat::identity(1),
            r: SymMat::identity(1),
        })
        .collect();
    let mut c = BTreeMap::new();
    for i in 0..n - 1 {
        c.insert((i, i + 1), one(rng.gen_range(-0.5..0.5)));
        c.insert((i + 1, i), one(rng.gen_range(-0.5..0.5)));
    }
    InterconnectedSystem::new(p, subs, c).unwrap()
}

/// Random block system on `n` nodes with block sizes 1..=2, one input per
/// state, identity disturbance, and each directed edge present with
/// probability `density`.
pub fn random_block_system<R: Rng>(rng: &mut R, n: usize, density: f64) -> InterconnectedSystem {
    let sizes: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=2)).collect();
    let p = BlockPartition {
        n: sizes.clone(),
        m: sizes.clone(),
        q: sizes.clone(),
    };
    let subs = sizes
        .iter()
        .map(|&k| SubsystemModel {
            a: random_mat(rng, k, k, 1.0),
            b: random_mat(rng, k, k, 1.0) + Mat::identity(k, k) * 2.0,
            m: Mat::identity(k, k),
            q: SymMat::identity(k),
            r: SymMat::identity(k),
        })
        .collect();
    let mut c = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(density) {
                let mut m = random_mat(rng, sizes[i], sizes[j], 0.5);
                m[(0, 0)] += 0.6;
                c.insert((i, j), m);
            }
        }
    }
    InterconnectedSystem::new(p, subs, c).unwrap()
}

/// Dense `A`, `B`, `M` assembled from the subsystem data.
pub fn dense_abm(sys: &InterconnectedSystem) -> (Mat, Mat, Mat) {
    let p = sys.partition();
    let so: Vec<usize> = p.n.iter().scan(0, |s, &k| { let o = *s; *s += k; Some(o) }).collect();
    let io: Vec<usize> = p.m.iter().scan(0, |s, &k| { let o = *s; *s += k; Some(o) }).collect();
    let qo: Vec<usize> = p.q.iter().scan(0, |s, &k| { let o = *s; *s += k; Some(o) }).collect();
    let (nx, nu, nq) = (p.n.iter().sum(), p.m.iter().sum(), p.q.iter().sum());
    let mut a = Mat::zeros(nx, nx);
    let mut b = Mat::zeros(nx, nu);
    let mut m = Mat::zeros(nx, nq);
    for (i, s) in sys.subsystems().iter().enumerate() {
        a.view_mut((so[i], so[i]), s.a.shape()).copy_from(&s.a);
        b.view_mut((so[i], io[i]), s.b.shape()).copy_from(&s.b);
        m.view_mut((so[i], qo[i]), s.m.shape()).copy_from(&s.m);
    }
    for (&(i, j), c) in sys.couplings() {
        a.view_mut((so[i], so[j]), c.shape()).copy_from(c);
    }
    (a, b, m)
}

pub fn block_diag(blocks: &[Mat]) -> Mat {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(r, c);
    let (mut i, mut j) = (0, 0);
    for b in blocks {
        out.view_mut((i, j), b.shape()).copy_from(b);
        i += b.nrows();
        j += b.ncols();
    }
    out
}
