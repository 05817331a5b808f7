//! Centralized H2 synthesis: the block-diagonal Lyapunov restriction, the
//! unstructured H2 state-feedback SDP and the two LQR-style baselines.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, SymMat};
use crate::sdp::{strict_margin, AffineMat, MatVar, SdpProblem, SdpStatus, SolveOptions};
use crate::system::{
    assemble_global, closed_loop, closed_loop_dense, mat_to_rows, DecentralizedController, InterconnectedSystem,
};

/// Conditioning floor for `X_i` during gain recovery.
pub const GAIN_RECOVERY_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SynthesisStatus {
    Success,
    Infeasible,
    NumericalLimit,
    /// A baseline gain that leaves the coupled closed loop unstable.
    Destabilizing,
}

impl SynthesisStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthesisStatus::Success => "success",
            SynthesisStatus::Infeasible => "infeasible",
            SynthesisStatus::NumericalLimit => "numerical_limit",
            SynthesisStatus::Destabilizing => "destabilizing",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub status: SynthesisStatus,
    pub controller: Option<DecentralizedController>,
    /// Dense gain of the unstructured solve.
    pub dense_gain: Option<Mat>,
    /// Lyapunov blocks `X_i` (a single dense block for the unstructured solve).
    pub x: Vec<SymMat>,
    pub y: Vec<SymMat>,
    pub z: Vec<Mat>,
    /// SDP objective, an upper bound on the squared H2 norm.
    pub objective: Option<f64>,
    /// H2 norm recomputed from the closed-loop Gramian.
    pub h2: Option<f64>,
    pub sdp_iterations: usize,
    pub message: Option<String>,
}

impl SynthesisResult {
    fn failed(status: SynthesisStatus, message: impl Into<String>) -> Self {
        SynthesisResult {
            status,
            controller: None,
            dense_gain: None,
            x: Vec::new(),
            y: Vec::new(),
            z: Vec::new(),
            objective: None,
            h2: None,
            sdp_iterations: 0,
            message: Some(message.into()),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == SynthesisStatus::Success
    }

    /// `{status, gains, h2, objective, sdp_iterations, message}` with gains as row-major blocks.
    pub fn to_json(&self) -> serde_json::Value {
        let gains = self
            .controller
            .as_ref()
            .map(|k| k.gains.iter().map(mat_to_rows).collect::<Vec<_>>());
        serde_json::json!({
            "status": self.status.as_str(),
            "gains": gains,
            "h2": self.h2,
            "objective": self.objective,
            "sdp_iterations": self.sdp_iterations,
            "message": self.message,
        })
    }
}

/// Scale used for strict-inequality margins.
pub(crate) fn data_scale(sys: &InterconnectedSystem) -> f64 {
    let g = assemble_global(sys);
    let mm = &g.m * g.m.transpose();
    g.a.amax().max(g.b.amax()).max(mm.amax())
}

/// Adds `scale · left · V · right` into the block at `(r0, c0)`.
pub(crate) fn place(
    e: &mut AffineMat,
    r0: usize,
    c0: usize,
    left: &Mat,
    v: &MatVar,
    right: &Mat,
    scale: f64,
) {
    let mut blk = AffineMat::zeros(left.nrows(), right.ncols());
    blk.add_product(left, v, right, scale);
    e.add_block(&blk, r0, c0, 1.0);
}

/// `[[Y, Z], [Zᵀ, X]]`.
pub(crate) fn schur_block(x: &MatVar, y: &MatVar, z: &MatVar) -> AffineMat {
    let (m, n) = (y.rows(), x.rows());
    let mut e = AffineMat::zeros(m + n, m + n);
    e.add_block(&AffineMat::from_var(y), 0, 0, 1.0);
    let zb = AffineMat::from_var(z);
    e.add_block(&zb, 0, m, 1.0);
    e.add_block(&zb.transpose(), m, 0, 1.0);
    e.add_block(&AffineMat::from_var(x), m, m, 1.0);
    e
}

/// Variables of the restriction SDP.
pub(crate) struct RestrictionVars {
    pub x: Vec<MatVar>,
    pub y: Vec<MatVar>,
    pub z: Vec<MatVar>,
}

/// Builds the restriction SDP: block-diagonal `X ⪰ εI`, `F(X, Z) ⪰ εI`,
/// `[[Y_i, Z_i], [Z_iᵀ, X_i]] ⪰ 0`, objective `Σ Tr(Q_i X_i) + Tr(R_i Y_i)`.
pub(crate) fn restriction_problem(sys: &InterconnectedSystem) -> Result<(SdpProblem, RestrictionVars)> {
    let p = sys.partition();
    let eps = strict_margin(data_scale(sys));
    let off = p.state_offsets();
    let total = p.state_dim();
    let mut prob = SdpProblem::new();
    let mut vars = RestrictionVars {
        x: Vec::new(),
        y: Vec::new(),
        z: Vec::new(),
    };
    for i in 0..sys.len() {
        let (ni, mi) = (p.n[i], p.m[i]);
        vars.x.push(prob.psd(ni, eps));
        vars.y.push(prob.symmetric(mi));
        vars.z.push(prob.matrix(mi, ni));
    }
    let mut f = AffineMat::zeros(total, total);
    for i in 0..sys.len() {
        let s = sys.subsystem(i);
        let ni = p.n[i];
        let ii = Mat::identity(ni, ni);
        // −A_ii X_i − X_i A_iiᵀ + B_i Z_i + Z_iᵀ B_iᵀ − M_i M_iᵀ
        place(&mut f, off[i], off[i], &s.a, &vars.x[i], &ii, -1.0);
        place(&mut f, off[i], off[i], &ii, &vars.x[i], &s.a.transpose(), -1.0);
        let mut bz = AffineMat::zeros(ni, ni);
        bz.add_product(&s.b, &vars.z[i], &ii, 1.0);
        f.add_block(&bz.plus_transpose(), off[i], off[i], 1.0);
        f.add_block(&AffineMat::constant(-(&s.m * s.m.transpose())), off[i], off[i], 1.0);
        prob.add_inner_objective(&vars.x[i], s.q.as_mat(), 1.0)?;
        prob.add_inner_objective(&vars.y[i], s.r.as_mat(), 1.0)?;
        prob.add_lmi(schur_block(&vars.x[i], &vars.y[i], &vars.z[i]), 0.0)?;
    }
    for (&(i, j), aij) in sys.couplings() {
        // (AX)_ij = A_ij X_j and its transpose at (j, i)
        let ij = Mat::identity(p.n[j], p.n[j]);
        place(&mut f, off[i], off[j], aij, &vars.x[j], &ij, -1.0);
        place(&mut f, off[j], off[i], &ij, &vars.x[j], &aij.transpose(), -1.0);
    }
    prob.add_lmi(f, eps)?;
    Ok((prob, vars))
}

/// `K = Z X⁻¹` via `X Kᵀ = Zᵀ`.
pub fn recover_gain(x: &SymMat, z: &Mat) -> Result<Mat> {
    let e = linalg::sym_eigen(x)?;
    let lmin = e.values.first().copied().unwrap_or(0.0);
    let lmax = e.values.last().copied().unwrap_or(0.0);
    if !(lmin > 0.0) || lmin < GAIN_RECOVERY_RCOND * lmax {
        return Err(Error::Numerical(format!(
            "Lyapunov block ill-conditioned for gain recovery (eigenvalues {lmin:.3e}..{lmax:.3e})"
        )));
    }
    Ok(linalg::solve(x.as_mat(), &z.transpose())?.transpose())
}

fn status_from_sdp(s: SdpStatus) -> SynthesisStatus {
    match s {
        SdpStatus::Optimal => SynthesisStatus::Success,
        SdpStatus::Infeasible => SynthesisStatus::Infeasible,
        SdpStatus::Unbounded | SdpStatus::NumericalLimit => SynthesisStatus::NumericalLimit,
    }
}

/// Solves the block-diagonal restriction and recovers `K_ii = Z_i X_i⁻¹`.
pub fn solve_restriction(sys: &InterconnectedSystem) -> Result<SynthesisResult> {
    let (prob, vars) = restriction_problem(sys)?;
    let sol = prob.solve(&SolveOptions::default())?;
    let status = status_from_sdp(sol.status);
    if status != SynthesisStatus::Success {
        let msg = match status {
            SynthesisStatus::Infeasible => {
                "not certified strongly decentralized stabilizable with this restriction".to_string()
            }
            _ => format!(
                "SDP stopped without convergence: {}",
                sol.message.clone().unwrap_or_default()
            ),
        };
        let mut r = SynthesisResult::failed(status, msg);
        r.sdp_iterations = sol.iterations;
        return Ok(r);
    }
    let x: Vec<SymMat> = vars.x.iter().map(|v| SymMat::symmetrize(&sol.value(v))).collect();
    let y: Vec<SymMat> = vars.y.iter().map(|v| SymMat::symmetrize(&sol.value(v))).collect();
    let z: Vec<Mat> = vars.z.iter().map(|v| sol.value(v)).collect();
    let mut gains = Vec::with_capacity(sys.len());
    for i in 0..sys.len() {
        match recover_gain(&x[i], &z[i]) {
            Ok(k) => gains.push(k),
            Err(e) => {
                let mut r = SynthesisResult::failed(
                    SynthesisStatus::NumericalLimit,
                    format!("gain recovery at node {}: {e}", i + 1),
                );
                r.sdp_iterations = sol.iterations;
                return Ok(r);
            }
        }
    }
    let controller = DecentralizedController { gains };
    let mut result = SynthesisResult {
        status: SynthesisStatus::Success,
        controller: Some(controller.clone()),
        dense_gain: None,
        x,
        y,
        z,
        objective: Some(sol.primal_objective),
        h2: None,
        sdp_iterations: sol.iterations,
        message: None,
    };
    match h2_norm(sys, &controller) {
        Ok(h) => result.h2 = Some(h),
        Err(e) => {
            result.status = SynthesisStatus::NumericalLimit;
            result.message = Some(format!("recovered gain failed certification: {e}"));
        }
    }
    Ok(result)
}

fn h2_from_closed_loop(sys: &InterconnectedSystem, acl: &Mat, k: &Mat) -> Result<f64> {
    linalg::hurwitz_certificate(acl)
        .map_err(|e| Error::Domain(format!("closed loop is not Hurwitz: {e}")))?;
    let g = assemble_global(sys);
    let mm = SymMat::symmetrize(&(&g.m * g.m.transpose()));
    let w = linalg::solve_lyapunov(acl, &mm)?;
    let w = w.as_mat();
    let v = (g.q.as_mat() * w).trace() + (k.transpose() * g.r.as_mat() * k * w).trace();
    Ok(v.max(0.0).sqrt())
}

/// H2 norm from disturbance to `z = [Q^{1/2} x; −R^{1/2} K x]`, computed
/// from the closed-loop controllability Gramian.
pub fn h2_norm(sys: &InterconnectedSystem, k: &DecentralizedController) -> Result<f64> {
    let acl = closed_loop(sys, k)?;
    h2_from_closed_loop(sys, &acl, &k.global())
}

/// [`h2_norm`] for a dense gain.
pub fn h2_norm_dense(sys: &InterconnectedSystem, k: &Mat) -> Result<f64> {
    let acl = closed_loop_dense(sys, k)?;
    h2_from_closed_loop(sys, &acl, k)
}

/// H2-optimal state feedback without structural restriction.
pub fn solve_unstructured_h2(sys: &InterconnectedSystem) -> Result<SynthesisResult> {
    let g = assemble_global(sys);
    let (n, m) = (g.a.nrows(), g.b.ncols());
    let eps = strict_margin(data_scale(sys));
    let mut prob = SdpProblem::new();
    let x = prob.psd(n, eps);
    let y = prob.symmetric(m);
    let z = prob.matrix(m, n);
    let id = Mat::identity(n, n);
    let mut f = AffineMat::constant(-(&g.m * g.m.transpose()));
    f.add_product(&g.a, &x, &id, -1.0);
    f.add_product(&id, &x, &g.a.transpose(), -1.0);
    let mut bz = AffineMat::zeros(n, n);
    bz.add_product(&g.b, &z, &id, 1.0);
    f.add_expr(&bz.plus_transpose(), 1.0);
    prob.add_lmi(f, eps)?;
    prob.add_lmi(schur_block(&x, &y, &z), 0.0)?;
    prob.add_inner_objective(&x, g.q.as_mat(), 1.0)?;
    prob.add_inner_objective(&y, g.r.as_mat(), 1.0)?;
    let sol = prob.solve(&SolveOptions::default())?;
    let status = status_from_sdp(sol.status);
    if status != SynthesisStatus::Success {
        let msg = if status == SynthesisStatus::Infeasible {
            "(A, B) is not stabilizable".to_string()
        } else {
            format!(
                "SDP stopped without convergence: {}",
                sol.message.clone().unwrap_or_default()
            )
        };
        let mut r = SynthesisResult::failed(status, msg);
        r.sdp_iterations = sol.iterations;
        return Ok(r);
    }
    let xv = SymMat::symmetrize(&sol.value(&x));
    let zv = sol.value(&z);
    let k = match recover_gain(&xv, &zv) {
        Ok(k) => k,
        Err(e) => {
            return Ok(SynthesisResult::failed(
                SynthesisStatus::NumericalLimit,
                format!("gain recovery: {e}"),
            ))
        }
    };
    let mut result = SynthesisResult {
        status: SynthesisStatus::Success,
        controller: None,
        dense_gain: Some(k.clone()),
        x: vec![xv],
        y: vec![SymMat::symmetrize(&sol.value(&y))],
        z: vec![zv],
        objective: Some(sol.primal_objective),
        h2: None,
        sdp_iterations: sol.iterations,
        message: None,
    };
    match h2_norm_dense(sys, &k) {
        Ok(h) => result.h2 = Some(h),
        Err(e) => {
            result.status = SynthesisStatus::NumericalLimit;
            result.message = Some(format!("recovered gain failed certification: {e}"));
        }
    }
    Ok(result)
}

fn certify_baseline(sys: &InterconnectedSystem, controller: DecentralizedController, what: &str) -> Result<SynthesisResult> {
    let acl = closed_loop(sys, &controller)?;
    let mut r = SynthesisResult::failed(SynthesisStatus::Success, "");
    r.message = None;
    if !linalg::is_hurwitz(&acl) {
        r.status = SynthesisStatus::Destabilizing;
        r.message = Some(format!("{what} leaves the coupled closed loop unstable"));
    } else {
        r.h2 = Some(h2_norm(sys, &controller)?);
    }
    r.controller = Some(controller);
    Ok(r)
}

/// Keeps the diagonal blocks of the centralized H2-optimal gain.
pub fn truncated_lqr(sys: &InterconnectedSystem) -> Result<SynthesisResult> {
    let full = solve_unstructured_h2(sys)?;
    let k = match (&full.status, &full.dense_gain) {
        (SynthesisStatus::Success, Some(k)) => k.clone(),
        _ => return Ok(full),
    };
    let p = sys.partition();
    let (so, io) = (p.state_offsets(), p.input_offsets());
    let gains = (0..sys.len())
        .map(|i| k.view((io[i], so[i]), (p.m[i], p.n[i])).into_owned())
        .collect();
    let mut r = certify_baseline(sys, DecentralizedController { gains }, "destabilizing truncation")?;
    r.sdp_iterations = full.sdp_iterations;
    Ok(r)
}

/// Per-subsystem H2-optimal gains computed while ignoring the couplings.
pub fn localized_lqr(sys: &InterconnectedSystem) -> Result<SynthesisResult> {
    let mut gains = Vec::with_capacity(sys.len());
    let mut iters = 0;
    for i in 0..sys.len() {
        let local = sys.subsystem_view(&[i])?;
        let r = solve_unstructured_h2(&local)?;
        iters += r.sdp_iterations;
        match (r.status, r.dense_gain) {
            (SynthesisStatus::Success, Some(k)) => gains.push(k),
            (status, _) => {
                let mut f = SynthesisResult::failed(
                    status,
                    format!(
                        "subsystem {}: {}",
                        i + 1,
                        r.message.unwrap_or_else(|| status.as_str().into())
                    ),
                );
                f.sdp_iterations = iters;
                return Ok(f);
            }
        }
    }
    let mut r = certify_baseline(sys, DecentralizedController { gains }, "localized gain")?;
    r.sdp_iterations = iters;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{four_node_example, scalar_network, BlockPartition, SubsystemModel};
    use nalgebra::dmatrix;
    use std::collections::BTreeMap;

    const K_SCALAR: f64 = 2.414_213_562_373_095;

    #[test]
    fn scalar_restriction_matches_riccati() {
        let sys = scalar_network(&[[1.0]], &[1.0]);
        let r = solve_restriction(&sys).unwrap();
        assert!(r.is_success(), "{:?}", r.message);
        let k = r.controller.unwrap().gains[0][(0, 0)];
        assert!((k - K_SCALAR).abs() < 1e-4, "{k}");
        assert!((r.h2.unwrap().powi(2) - K_SCALAR).abs() < 1e-4);
        let u = solve_unstructured_h2(&sys).unwrap();
        assert!((u.dense_gain.unwrap()[(0, 0)] - K_SCALAR).abs() < 1e-4);
    }

    #[test]
    fn four_node_restriction() {
        let sys = four_node_example();
        let r = solve_restriction(&sys).unwrap();
        assert!(r.is_success(), "{:?}", r.message);
        let k = r.controller.as_ref().unwrap();
        let expect = [7.338, 11.384, 6.162, 13.483];
        for (g, e) in k.gains.iter().zip(expect) {
            assert!((g[(0, 0)] - e).abs() < 0.02, "{} vs {e}", g[(0, 0)]);
        }
        let h2 = r.h2.unwrap();
        assert!((h2 - 5.36).abs() < 0.01, "{h2}");
        assert!(h2 * h2 <= r.objective.unwrap() + 1e-4);
    }

    #[test]
    fn reference_gains_give_reported_h2() {
        let sys = four_node_example();
        let k = DecentralizedController {
            gains: [7.34, 11.38, 6.16, 13.48]
                .iter()
                .map(|&v| Mat::from_element(1, 1, v))
                .collect(),
        };
        assert!((h2_norm(&sys, &k).unwrap() - 5.36).abs() < 0.01);
    }

    #[test]
    fn scalar_h2_examples() {
        let stable = scalar_network(&[[-1.0]], &[1.0]);
        let zero = DecentralizedController {
            gains: vec![Mat::zeros(1, 1)],
        };
        assert!((h2_norm(&stable, &zero).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        let sys = scalar_network(&[[1.0]], &[1.0]);
        let k = DecentralizedController {
            gains: vec![Mat::from_element(1, 1, K_SCALAR)],
        };
        assert!((h2_norm(&sys, &k).unwrap() - K_SCALAR.sqrt()).abs() < 1e-9);
        assert!(matches!(h2_norm(&sys, &zero), Err(Error::Domain(_))));
    }

    #[test]
    fn underactuated_counterexample_is_restriction_infeasible() {
        let p = BlockPartition {
            n: vec![1, 1],
            m: vec![1, 1],
            q: vec![1, 1],
        };
        let sub = |a: f64, b: f64| SubsystemModel {
            a: Mat::from_element(1, 1, a),
            b: Mat::from_element(1, 1, b),
            m: Mat::identity(1, 1),
            q: SymMat::identity(1),
            r: SymMat::identity(1),
        };
        let mut c = BTreeMap::new();
        c.insert((0, 1), dmatrix![2.0]);
        c.insert((1, 0), dmatrix![-1.0]);
        let sys = InterconnectedSystem::new(p, vec![sub(1.0, 0.0), sub(0.0, 1.0)], c).unwrap();
        let r = solve_restriction(&sys).unwrap();
        assert_eq!(r.status, SynthesisStatus::Infeasible);
        assert!(r.message.unwrap().contains("not certified"));
    }

    #[test]
    fn unstabilizable_pair() {
        let sys = scalar_network(&[[1.0]], &[0.0]);
        assert_eq!(
            solve_unstructured_h2(&sys).unwrap().status,
            SynthesisStatus::Infeasible
        );
    }

    #[test]
    fn baselines_on_decoupled_system_agree() {
        let sys = scalar_network(&[[1.0, 0.0], [0.0, -2.0]], &[1.0, 2.0]);
        let a = solve_restriction(&sys).unwrap().h2.unwrap();
        let b = solve_unstructured_h2(&sys).unwrap().h2.unwrap();
        let c = truncated_lqr(&sys).unwrap().h2.unwrap();
        let d = localized_lqr(&sys).unwrap().h2.unwrap();
        for v in [b, c, d] {
            assert!((a - v).abs() < 1e-5, "{a} vs {v}");
        }
    }

    #[test]
    fn localized_fails_with_strong_coupling() {
        // local gains see a = 1 only; coupling 10 both ways destabilizes
        let sys = scalar_network(&[[1.0, 10.0], [10.0, 1.0]], &[1.0, 1.0]);
        let r = localized_lqr(&sys).unwrap();
        assert_eq!(r.status, SynthesisStatus::Destabilizing);
    }

    #[test]
    fn four_node_truncation_is_stable() {
        let r = truncated_lqr(&four_node_example()).unwrap();
        assert!(r.is_success(), "{:?}", r.message);
    }

    #[test]
    fn chain_subsystem_local_gain() {
        let p = BlockPartition {
            n: vec![2],
            m: vec![1],
            q: vec![1],
        };
        let s = SubsystemModel {
            a: dmatrix![1.0, 1.0; 1.0, 2.0],
            b: dmatrix![0.0; 1.0],
            m: dmatrix![0.0; 1.0],
            q: SymMat::identity(2),
            r: SymMat::identity(1),
        };
        let sys = InterconnectedSystem::new(p, vec![s], BTreeMap::new()).unwrap();
        let r = localized_lqr(&sys).unwrap();
        assert!(r.is_success());
        let k = r.controller.unwrap();
        let acl = closed_loop(&sys, &k).unwrap();
        assert!(linalg::is_hurwitz(&acl));
        // Gramian oracle by hand: W from the Lyapunov equation, then the cost.
        let g = assemble_global(&sys);
        let w = linalg::solve_lyapunov(&acl, &SymMat::symmetrize(&(&g.m * g.m.transpose()))).unwrap();
        let kk = k.global();
        let cost = w.as_mat().trace() + (kk.transpose() * &kk * w.as_mat()).trace();
        assert!((r.h2.unwrap() - cost.sqrt()).abs() < 1e-9);
    }
}
