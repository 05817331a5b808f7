//! Gains from the fully actuated and dynamically weak constructions must
//! stabilize the coupled plant and admit a block-diagonal Lyapunov function.

mod common;

use std::collections::BTreeMap;

use chordsynth::linalg;
use chordsynth::stabilizability::{
    block_diagonal_lyapunov, check_dynamically_weak, fully_actuated_gain, Verdict, WeightAssignment,
};
use chordsynth::system::{closed_loop, BlockPartition, SubsystemModel};
use chordsynth::{DecentralizedController, InterconnectedSystem, Mat, SymMat};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: usize = 50;

/// Real parts of the eigenvalues through nalgebra's Schur form.
fn max_real_part(a: &Mat) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn assert_certified(sys: &InterconnectedSystem, k: &DecentralizedController, label: &str) {
    let acl = closed_loop(sys, k).unwrap();
    assert!(max_real_part(&acl) < 0.0, "{label}: closed loop has an unstable eigenvalue");
    assert!(linalg::is_hurwitz(&acl), "{label}: is_hurwitz rejected a stable closed loop");
    let sizes = &sys.partition().n;
    let (verdict, blocks) = block_diagonal_lyapunov(&acl, sizes).unwrap();
    assert_eq!(verdict, Verdict::Yes, "{label}: no block-diagonal Lyapunov function");
    let blocks: Vec<Mat> = blocks.unwrap().iter().map(|b| b.as_mat().clone()).collect();
    for b in &blocks {
        assert!(min_eig(b) > 0.0, "{label}: Lyapunov block not positive definite");
    }
    let p = block_diag(&blocks);
    let lyap = acl.transpose() * &p + &p * &acl;
    assert!(min_eig(&(-lyap)) > 0.0, "{label}: Lyapunov derivative not negative definite");
}

fn random_partition<R: Rng>(rng: &mut R, nodes: usize, wide: bool) -> BlockPartition {
    let n: Vec<usize> = (0..nodes).map(|_| rng.gen_range(1..=2)).collect();
    let m = n.iter().map(|&k| if wide { k + rng.gen_range(0..=1) } else { 1 }).collect();
    BlockPartition { n: n.clone(), m, q: n }
}

fn random_couplings<R: Rng>(rng: &mut R, p: &BlockPartition, density: f64, bound: f64) -> BTreeMap<(usize, usize), Mat> {
    let mut c = BTreeMap::new();
    for i in 0..p.n.len() {
        for j in 0..p.n.len() {
            if i != j && rng.gen_bool(density) {
                let mut m = random_mat(rng, p.n[i], p.n[j], bound);
                m[(0, 0)] = bound.max(m[(0, 0)].abs());
                c.insert((i, j), m);
            }
        }
    }
    c
}

#[test]
fn fully_actuated_gain_is_always_certified() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for inst in 0..INSTANCES {
        let nodes = rng.gen_range(2..=5);
        let p = random_partition(&mut rng, nodes, true);
        let subs = p
            .n
            .iter()
            .zip(&p.m)
            .map(|(&ni, &mi)| {
                // Full row rank: identity columns plus a random remainder.
                let mut b = random_mat(&mut rng, ni, mi, 1.0);
                for d in 0..ni {
                    b[(d, d)] += 3.0;
                }
                SubsystemModel {
                    a: random_mat(&mut rng, ni, ni, 3.0),
                    b,
                    m: Mat::identity(ni, ni),
                    q: SymMat::identity(ni),
                    r: SymMat::identity(mi),
                }
            })
            .collect();
        // Strong couplings are fine here: the construction dominates them.
        let c = random_couplings(&mut rng, &p, 0.5, 4.0);
        let sys = InterconnectedSystem::new(p, subs, c).unwrap();
        let k = fully_actuated_gain(&sys, rng.gen_range(0.1..2.0)).unwrap();
        assert_certified(&sys, &k, &format!("fully actuated instance {inst}"));
    }
}

#[test]
fn dynamically_weak_gain_is_always_certified() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut qualified = 0;
    let mut drawn = 0;
    while qualified < INSTANCES {
        drawn += 1;
        assert!(drawn <= 20 * INSTANCES, "only {qualified} qualifying draws out of {drawn}");
        let nodes = rng.gen_range(2..=5);
        let p = random_partition(&mut rng, nodes, false);
        let subs = p
            .n
            .iter()
            .map(|&ni| {
                // Single input per node; controllable in companion form.
                let mut a = random_mat(&mut rng, ni, ni, 1.5);
                let mut b = Mat::zeros(ni, 1);
                b[(ni - 1, 0)] = 1.0;
                if ni == 2 {
                    a[(0, 1)] = 1.0;
                    a[(0, 0)] = rng.gen_range(-1.0..1.0);
                }
                SubsystemModel {
                    a,
                    b,
                    m: Mat::identity(ni, ni),
                    q: SymMat::identity(ni),
                    r: SymMat::identity(1),
                }
            })
            .collect();
        let c = random_couplings(&mut rng, &p, 0.4, 0.3);
        let sys = InterconnectedSystem::new(p, subs, c).unwrap();
        let Some(cert) = check_dynamically_weak(&sys, &WeightAssignment::identity(&sys)).unwrap() else {
            continue;
        };
        assert!(cert.residuals.iter().all(|r| *r < 0.0));
        assert_certified(&sys, &cert.gains, &format!("dynamically weak draw {drawn}"));
        qualified += 1;
    }
}
