//! Certificates for centralized and strongly decentralized stabilizability.
//!
//! Every check is sufficient only; an LMI that stops without convergence is
//! reported as [`Verdict::Indeterminate`] rather than coerced to a yes or no.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graph;
use crate::linalg::{self, Mat, SymMat};
use crate::sdp::{strict_margin, AffineMat, SdpProblem, SdpStatus};
use crate::synth::{self, place, recover_gain, SynthesisResult, SynthesisStatus};
use crate::system::{assemble_global, closed_loop, mat_to_rows, DecentralizedController, InterconnectedSystem};

/// Relative rank tolerance for the full-row-rank test.
pub const RANK_TOL: f64 = 1e-9;

/// Margin added to the coupling row sums in [`fully_actuated_gain`].
pub const DEFAULT_ACTUATION_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Indeterminate,
}

impl Verdict {
    fn from_sdp(s: SdpStatus) -> Verdict {
        match s {
            SdpStatus::Optimal => Verdict::Yes,
            SdpStatus::Infeasible => Verdict::No,
            SdpStatus::Unbounded | SdpStatus::NumericalLimit => Verdict::Indeterminate,
        }
    }
}

/// Which certificate produced a constructed controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSource {
    Restriction,
    DynamicallyWeak,
    Acyclic,
    FullyActuated,
}

/// Positive definite `W_ij` (size `n_j`) for every plant edge `j → i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightAssignment {
    pub weights: BTreeMap<(usize, usize), SymMat>,
}

impl WeightAssignment {
    pub fn identity(sys: &InterconnectedSystem) -> Self {
        let n = &sys.partition().n;
        WeightAssignment {
            weights: sys
                .couplings()
                .keys()
                .map(|&(i, j)| ((i, j), SymMat::identity(n[j])))
                .collect(),
        }
    }

    pub fn validate(&self, sys: &InterconnectedSystem) -> Result<()> {
        let n = &sys.partition().n;
        for &(i, j) in sys.couplings().keys() {
            let path = format!("W[{},{}]", i + 1, j + 1);
            let w = self
                .weights
                .get(&(i, j))
                .ok_or_else(|| Error::validation(&path, "missing weight for plant edge"))?;
            if w.dim() != n[j] {
                return Err(Error::validation(&path, format!("expected size {}", n[j])));
            }
            let class = linalg::classify_psd(w, linalg::DEFAULT_TOL)?;
            if class.kind != linalg::Definiteness::PositiveDefinite {
                return Err(Error::validation(&path, "weight not positive definite"));
            }
        }
        if let Some(&(i, j)) = self.weights.keys().find(|k| !sys.couplings().contains_key(k)) {
            return Err(Error::validation(
                format!("W[{},{}]", i + 1, j + 1),
                "weight on a pair without coupling",
            ));
        }
        Ok(())
    }
}

/// Per-node solution of the dynamically-weak test.
#[derive(Debug, Clone)]
pub struct DynamicallyWeakCertificate {
    pub x: Vec<SymMat>,
    pub z: Vec<Mat>,
    /// `P_i = X_i⁻¹`.
    pub p: Vec<SymMat>,
    pub gains: DecentralizedController,
    pub weights: WeightAssignment,
    /// Largest eigenvalue of the per-node inequality evaluated at `(P_i, K_ii)`.
    pub residuals: Vec<f64>,
}

/// Output of the block-diagonal restriction used as a certificate.
#[derive(Debug, Clone)]
pub struct RestrictionCertificate {
    pub x: Vec<SymMat>,
    pub z: Vec<Mat>,
    pub h2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConstructedGain {
    pub source: GainSource,
    pub controller: DecentralizedController,
}

#[derive(Debug, Clone)]
pub struct StabilizabilityReport {
    pub fully_actuated: bool,
    pub acyclic: bool,
    pub local_stabilizable: Vec<Verdict>,
    pub dynamically_weak: Option<DynamicallyWeakCertificate>,
    pub sigma2_certificate: Option<RestrictionCertificate>,
    /// Status of the restriction solve when it produced no certificate.
    pub restriction_message: Option<String>,
    pub sigma0: Verdict,
    pub constructed_gain: Option<ConstructedGain>,
}

impl StabilizabilityReport {
    /// Certified strongly decentralized stabilizable by at least one check.
    pub fn sigma2(&self) -> bool {
        self.fully_actuated
            || self.topologically_weak() == Verdict::Yes
            || self.dynamically_weak.is_some()
            || self.sigma2_certificate.is_some()
    }

    /// Acyclic with every local pair stabilizable. An acyclic plant with an
    /// unstabilizable local pair cannot be decentralized stabilizable.
    pub fn topologically_weak(&self) -> Verdict {
        if !self.acyclic {
            return Verdict::Indeterminate;
        }
        if self.local_stabilizable.iter().all(|v| *v == Verdict::Yes) {
            Verdict::Yes
        } else if self.local_stabilizable.contains(&Verdict::No) {
            Verdict::No
        } else {
            Verdict::Indeterminate
        }
    }

    pub fn to_json(&self) -> Value {
        let rows = |m: &Mat| json!(mat_to_rows(m));
        let syms = |v: &[SymMat]| Value::Array(v.iter().map(|s| rows(s.as_mat())).collect());
        let mats = |v: &[Mat]| Value::Array(v.iter().map(rows).collect());
        let dw = self.dynamically_weak.as_ref().map(|c| {
            let weights: Vec<Value> = c
                .weights
                .weights
                .iter()
                .map(|(&(i, j), w)| json!({"i": i + 1, "j": j + 1, "W": rows(w.as_mat())}))
                .collect();
            json!({
                "X": syms(&c.x),
                "Z": mats(&c.z),
                "gains": mats(&c.gains.gains),
                "weights": weights,
                "residuals": c.residuals,
            })
        });
        let s2 = self.sigma2_certificate.as_ref().map(|c| {
            json!({"X": syms(&c.x), "Z": mats(&c.z), "h2": c.h2})
        });
        let gain = self.constructed_gain.as_ref().map(|g| {
            json!({"source": g.source, "gains": mats(&g.controller.gains)})
        });
        json!({
            "sigma0": self.sigma0,
            "sigma2": self.sigma2(),
            "fully_actuated": self.fully_actuated,
            "acyclic": self.acyclic,
            "local_stabilizable": self.local_stabilizable,
            "topologically_weak": self.topologically_weak(),
            "dynamically_weak": dw,
            "sigma2_certificate": s2,
            "restriction_message": self.restriction_message,
            "constructed_gain": gain,
        })
    }
}

/// Every `B_i` has full row rank.
pub fn check_fully_actuated(sys: &InterconnectedSystem, rank_tol: f64) -> bool {
    sys.subsystems().iter().all(|s| full_row_rank(&s.b, rank_tol))
}

fn full_row_rank(b: &Mat, tol: f64) -> bool {
    let (n, m) = b.shape();
    if n == 0 {
        return true;
    }
    if n > m {
        return false;
    }
    match linalg::svd(b) {
        Ok(s) => {
            let smax = s.singular_values[0];
            smax > 0.0 && s.singular_values[n - 1] > tol * smax
        }
        Err(_) => false,
    }
}

/// `K_ii = V_i [Γ_i⁻¹; 0] U_iᵀ (A_ii + α_i I)`, giving closed-loop diagonal
/// blocks `−α_i I`. `α_i` is `margin` plus the largest absolute row sum of
/// the incoming couplings, so the closed loop is strictly row diagonally
/// dominant with a negative diagonal.
pub fn fully_actuated_gain(sys: &InterconnectedSystem, margin: f64) -> Result<DecentralizedController> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::Domain("actuation margin must be positive".into()));
    }
    if !check_fully_actuated(sys, RANK_TOL) {
        return Err(Error::Domain("system is not fully actuated".into()));
    }
    let p = sys.partition();
    let mut gains = Vec::with_capacity(sys.len());
    for i in 0..sys.len() {
        let s = sys.subsystem(i);
        let ni = p.n[i];
        let mut rows = vec![0.0; ni];
        for j in sys.in_neighbors(i) {
            let aij = sys.coupling(i, j).expect("neighbor has coupling");
            for (r, acc) in rows.iter_mut().enumerate() {
                *acc += aij.row(r).iter().map(|v| v.abs()).sum::<f64>();
            }
        }
        let alpha = margin + rows.iter().cloned().fold(0.0, f64::max);
        let d = linalg::svd(&s.b)?;
        let mut vg = d.v.columns(0, ni).into_owned();
        for (c, sv) in d.singular_values.iter().enumerate() {
            vg.column_mut(c).scale_mut(1.0 / sv);
        }
        let shifted = &s.a + Mat::identity(ni, ni) * alpha;
        gains.push(vg * d.u.transpose() * shifted);
    }
    Ok(DecentralizedController { gains })
}

/// [`fully_actuated_gain`] packaged as a synthesis result with its closed-loop H2 norm.
pub fn fully_actuated_synthesis(sys: &InterconnectedSystem, margin: f64) -> Result<SynthesisResult> {
    let k = fully_actuated_gain(sys, margin)?;
    let stable = linalg::is_hurwitz(&closed_loop(sys, &k)?);
    let (status, h2) = if stable {
        (SynthesisStatus::Success, Some(synth::h2_norm(sys, &k)?))
    } else {
        (SynthesisStatus::Destabilizing, None)
    };
    Ok(SynthesisResult {
        status,
        controller: Some(k),
        dense_gain: None,
        x: Vec::new(),
        y: Vec::new(),
        z: Vec::new(),
        objective: None,
        h2,
        sdp_iterations: 0,
        message: None,
    })
}

/// Feasibility of `X ≻ 0`, `AX − BZ + (AX − BZ)ᵀ ≺ 0`, normalized by
/// `Tr X = n`. Returns the verdict and, when feasible, `K = Z X⁻¹`.
fn stabilizing_gain_lmi(a: &Mat, b: &Mat) -> Result<(Verdict, Option<Mat>)> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return Err(Error::dim("stabilizability test operand shapes"));
    }
    if n == 0 {
        return Ok((Verdict::Yes, Some(Mat::zeros(b.ncols(), 0))));
    }
    let eps = strict_margin(a.amax().max(b.amax()));
    let mut prob = SdpProblem::new();
    let x = prob.psd(n, eps);
    let z = prob.matrix(b.ncols(), n);
    let ii = Mat::identity(n, n);
    let mut axbz = AffineMat::zeros(n, n);
    axbz.add_product(a, &x, &ii, -1.0);
    axbz.add_product(b, &z, &ii, 1.0);
    let f = axbz.plus_transpose();
    prob.add_lmi(f, eps)?;
    let trace: Vec<(usize, f64)> = (0..n).map(|k| (x.index(k, k), 1.0)).collect();
    prob.add_equality(&trace, n as f64)?;
    let feas = prob.check_feasible()?;
    let verdict = Verdict::from_sdp(feas.solution.status);
    if verdict != Verdict::Yes {
        return Ok((verdict, None));
    }
    let xs = SymMat::symmetrize(&feas.solution.value(&x));
    let k = recover_gain(&xs, &feas.solution.value(&z))?;
    Ok((verdict, Some(k)))
}

/// LMI test for stabilizability of `(A, B)`.
pub fn check_stabilizable_lmi(a: &Mat, b: &Mat) -> Result<Verdict> {
    Ok(stabilizing_gain_lmi(a, b)?.0)
}

/// Acyclicity of the plant graph and the per-node stabilizability verdicts.
pub fn check_topologically_weak(sys: &InterconnectedSystem) -> Result<(bool, Vec<Verdict>)> {
    let acyclic = graph::is_acyclic(&sys.plant_graph()).is_some();
    let local = sys
        .subsystems()
        .iter()
        .map(|s| check_stabilizable_lmi(&s.a, &s.b))
        .collect::<Result<Vec<_>>>()?;
    Ok((acyclic, local))
}

/// Local stabilizing gains for an acyclic plant; the closed loop is block
/// triangular in topological order, hence Hurwitz.
fn acyclic_gain(sys: &InterconnectedSystem) -> Result<Option<DecentralizedController>> {
    if graph::is_acyclic(&sys.plant_graph()).is_none() {
        return Ok(None);
    }
    let mut gains = Vec::with_capacity(sys.len());
    for s in sys.subsystems() {
        match stabilizing_gain_lmi(&s.a, &s.b)? {
            (Verdict::Yes, Some(k)) => gains.push(k),
            _ => return Ok(None),
        }
    }
    Ok(Some(DecentralizedController { gains }))
}

/// Per-node test with fixed weights, solved in `X_i = P_i⁻¹`, `Z_i = K_ii X_i`:
///
/// `[[−(A_ii X_i − B_i Z_i) − (·)ᵀ − S_i, −X_i Ŵ_i], [−Ŵ_i X_i, I]] ⪰ εI`
///
/// with `S_i = Σ_{j∈in(i)} A_ij W_ij⁻¹ A_ijᵀ` and `Ŵ_i = (Σ_{j∈out(i)} W_ji)^{1/2}`.
/// Returns `None` as soon as one node fails.
pub fn check_dynamically_weak(
    sys: &InterconnectedSystem,
    weights: &WeightAssignment,
) -> Result<Option<DynamicallyWeakCertificate>> {
    weights.validate(sys)?;
    let p = sys.partition();
    let mut cert = DynamicallyWeakCertificate {
        x: Vec::new(),
        z: Vec::new(),
        p: Vec::new(),
        gains: DecentralizedController { gains: Vec::new() },
        weights: weights.clone(),
        residuals: Vec::new(),
    };
    for i in 0..sys.len() {
        let s = sys.subsystem(i);
        let ni = p.n[i];
        let mut si = Mat::zeros(ni, ni);
        for j in sys.in_neighbors(i) {
            let aij = sys.coupling(i, j).expect("neighbor has coupling");
            let winv = linalg::solve(weights.weights[&(i, j)].as_mat(), &aij.transpose())?;
            si += aij * winv;
        }
        let mut wsum = Mat::zeros(ni, ni);
        for j in sys.out_neighbors(i) {
            wsum += weights.weights[&(j, i)].as_mat();
        }
        let what = linalg::sym_sqrt(&SymMat::symmetrize(&wsum))?;
        let eps = strict_margin(
            s.a.amax().max(s.b.amax()).max(si.amax()).max(wsum.amax()),
        );

        let mut prob = SdpProblem::new();
        let x = prob.psd(ni, eps);
        let z = prob.matrix(s.b.ncols(), ni);
        let ii = Mat::identity(ni, ni);
        let mut axbz = AffineMat::zeros(ni, ni);
        axbz.add_product(&s.a, &x, &ii, -1.0);
        axbz.add_product(&s.b, &z, &ii, 1.0);
        let mut f = AffineMat::zeros(2 * ni, 2 * ni);
        f.add_block(&axbz.plus_transpose(), 0, 0, 1.0);
        f.add_block(&AffineMat::constant(-&si), 0, 0, 1.0);
        place(&mut f, 0, ni, &ii, &x, what.as_mat(), -1.0);
        place(&mut f, ni, 0, what.as_mat(), &x, &ii, -1.0);
        f.add_block(&AffineMat::constant(ii.clone()), ni, ni, 1.0);
        prob.add_lmi(f, eps)?;
        let feas = prob.check_feasible()?;
        if !feas.feasible {
            return Ok(None);
        }
        let xs = SymMat::symmetrize(&feas.solution.value(&x));
        let zs = feas.solution.value(&z);
        let k = recover_gain(&xs, &zs)?;
        let pi = SymMat::symmetrize(&linalg::solve(xs.as_mat(), &ii)?);
        let pm = pi.as_mat();
        let acl = &s.a - &s.b * &k;
        let lhs = pm * &acl + acl.transpose() * pm + pm * &si * pm + &wsum;
        let residual = linalg::sym_eigen(&SymMat::symmetrize(&lhs))?
            .values
            .last()
            .copied()
            .unwrap_or(f64::NEG_INFINITY);
        if !(residual < 0.0) {
            return Ok(None);
        }
        cert.x.push(xs);
        cert.z.push(zs);
        cert.p.push(pi);
        cert.gains.gains.push(k);
        cert.residuals.push(residual);
    }
    Ok(Some(cert))
}

/// Feasibility of `P = blkdiag(P_i) ≻ 0`, `A_clᵀ P + P A_cl ≺ 0` for a
/// fixed closed loop, normalized by `Tr P = n`.
pub fn block_diagonal_lyapunov(acl: &Mat, sizes: &[usize]) -> Result<(Verdict, Option<Vec<SymMat>>)> {
    let n: usize = sizes.iter().sum();
    if acl.shape() != (n, n) {
        return Err(Error::dim("closed loop does not match block sizes"));
    }
    if n == 0 {
        return Ok((Verdict::Yes, Some(Vec::new())));
    }
    let eps = strict_margin(acl.amax());
    let off = graph::offsets(sizes);
    let mut prob = SdpProblem::new();
    let mut f = AffineMat::zeros(n, n);
    let mut vars = Vec::with_capacity(sizes.len());
    let mut trace = Vec::new();
    for (i, &ni) in sizes.iter().enumerate() {
        let pv = prob.psd(ni, eps);
        let rows = acl.rows(off[i], ni).into_owned();
        place(&mut f, off[i], 0, &Mat::identity(ni, ni), &pv, &rows, -1.0);
        trace.extend((0..ni).map(|k| (pv.index(k, k), 1.0)));
        vars.push(pv);
    }
    prob.add_lmi(f.plus_transpose(), eps)?;
    prob.add_equality(&trace, n as f64)?;
    let feas = prob.check_feasible()?;
    let verdict = Verdict::from_sdp(feas.solution.status);
    let blocks = (verdict == Verdict::Yes).then(|| {
        vars.iter()
            .map(|v| SymMat::symmetrize(&feas.solution.value(v)))
            .collect()
    });
    Ok((verdict, blocks))
}

/// Runs every check and returns the first constructed gain, in the order
/// restriction, dynamically weak, acyclic, fully actuated, that yields a
/// Hurwitz closed loop.
pub fn classify(sys: &InterconnectedSystem) -> Result<StabilizabilityReport> {
    let g = assemble_global(sys);
    let sigma0 = check_stabilizable_lmi(&g.a, &g.b)?;
    let fully_actuated = check_fully_actuated(sys, RANK_TOL);
    let (acyclic, local_stabilizable) = check_topologically_weak(sys)?;
    let dynamically_weak = check_dynamically_weak(sys, &WeightAssignment::identity(sys))?;

    let restriction = synth::solve_restriction(sys)?;
    let (sigma2_certificate, restriction_message) = match (&restriction.controller, restriction.is_success()) {
        (Some(_), true) => (
            Some(RestrictionCertificate {
                x: restriction.x.clone(),
                z: restriction.z.clone(),
                h2: restriction.h2,
            }),
            None,
        ),
        _ => (None, restriction.message.clone()),
    };

    let mut candidates: Vec<(GainSource, DecentralizedController)> = Vec::new();
    if let Some(k) = restriction.controller.filter(|_| sigma2_certificate.is_some()) {
        candidates.push((GainSource::Restriction, k));
    }
    if let Some(c) = &dynamically_weak {
        candidates.push((GainSource::DynamicallyWeak, c.gains.clone()));
    }
    if acyclic {
        if let Some(k) = acyclic_gain(sys)? {
            candidates.push((GainSource::Acyclic, k));
        }
    }
    if fully_actuated {
        candidates.push((
            GainSource::FullyActuated,
            fully_actuated_gain(sys, DEFAULT_ACTUATION_MARGIN)?,
        ));
    }
    let constructed_gain = candidates
        .into_iter()
        .find(|(_, k)| closed_loop(sys, k).map(|a| linalg::is_hurwitz(&a)).unwrap_or(false))
        .map(|(source, controller)| ConstructedGain { source, controller });

    Ok(StabilizabilityReport {
        fully_actuated,
        acyclic,
        local_stabilizable,
        dynamically_weak,
        sigma2_certificate,
        restriction_message,
        sigma0,
        constructed_gain,
    })
}

/// The two-node system `[[1, 2], [a1, a2]]` with inputs `diag(b1, b2)`.
pub fn two_node_example(a1: f64, a2: f64, b1: f64, b2: f64) -> InterconnectedSystem {
    crate::system::scalar_network(&[[1.0, 2.0], [a1, a2]], &[b1, b2])
}
