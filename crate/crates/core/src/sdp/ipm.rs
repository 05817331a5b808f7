//! Homogeneous self-dual interior-point kernel for
//!
//! ```text
//! minimize   ½ xᵀ diag(p) x + qᵀx
//! subject to A x = b,   G x + s = h,   s ∈ S₁ × … × S_m  (PSD cones, svec)
//! ```
//!
//! Nesterov–Todd scaling, Mehrotra predictor–corrector, dense KKT solves.

use nalgebra::{DVector, SVD};

use crate::linalg::{min_eigenvalue, Mat, SymMat};

type Vector = DVector<f64>;

const SQRT2: f64 = std::f64::consts::SQRT_2;
const STEP_FRACTION: f64 = 0.99;

pub(crate) struct Conic {
    pub p: Vector,
    pub q: Vector,
    pub a: Mat,
    pub b: Vector,
    pub g: Mat,
    pub h: Vector,
    /// Matrix dimension of each PSD block, in stacking order.
    pub cones: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub infeas_tol: f64,
    /// Accuracy at which the best iterate is still returned after a stall.
    pub reduced_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    /// Best iterate met `reduced_tol` but not the full tolerances.
    ReducedAccuracy,
    PrimalInfeasible,
    DualInfeasible,
    IterationLimit,
    Stalled,
}

#[derive(Clone)]
pub(crate) struct IpmResult {
    pub outcome: Outcome,
    pub x: Vector,
    pub y: Vector,
    pub z: Vector,
    pub s: Vector,
    pub iterations: usize,
    pub pcost: f64,
    pub dcost: f64,
    pub pres: f64,
    pub dres: f64,
    pub gap: f64,
}

pub(crate) fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Lower triangle, column-major, off-diagonals scaled by √2.
pub(crate) fn svec_into(m: &Mat, out: &mut [f64]) {
    let n = m.nrows();
    let mut k = 0;
    for j in 0..n {
        out[k] = m[(j, j)];
        k += 1;
        for i in j + 1..n {
            out[k] = SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]);
            k += 1;
        }
    }
}

pub(crate) fn smat(v: &[f64], n: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        m[(j, j)] = v[k];
        k += 1;
        for i in j + 1..n {
            let x = v[k] / SQRT2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

fn offsets(cones: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(cones.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &n in cones {
        acc += svec_len(n);
        out.push(acc);
    }
    out
}

/// NT scaling of one cone: `R` with `Rᵀ Z R = R⁻¹ S R⁻ᵀ = diag(λ)`.
struct Scaling {
    r: Mat,
    rinv: Mat,
    lambda: Vector,
}

fn factor(m: &Mat) -> Option<Mat> {
    nalgebra::Cholesky::new(m.clone()).map(|c| c.l())
}

fn scale_from(s: &Vector, z: &Vector, cones: &[usize], offs: &[usize]) -> Option<Vec<Scaling>> {
    cones
        .iter()
        .enumerate()
        .map(|(k, &dim)| {
            let sm = smat(&s.as_slice()[offs[k]..offs[k + 1]], dim);
            let zm = smat(&z.as_slice()[offs[k]..offs[k + 1]], dim);
            nt_scaling(&sm, &zm)
        })
        .collect()
}

fn nt_scaling(s: &Mat, z: &Mat) -> Option<Scaling> {
    let l1 = factor(s)?;
    let l2 = factor(z)?;
    let prod = l2.transpose() * &l1;
    let svd = SVD::try_new(prod, true, true, 1e-15, 0)?;
    let u = svd.u?;
    let v = svd.v_t?.transpose();
    let lambda = svd.singular_values;
    if lambda.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return None;
    }
    let isq = lambda.map(|l| 1.0 / l.sqrt());
    let mut r = l1 * v;
    for (j, f) in isq.iter().enumerate() {
        r.column_mut(j).scale_mut(*f);
    }
    let mut rinv = u.transpose() * l2.transpose();
    for (i, f) in isq.iter().enumerate() {
        rinv.row_mut(i).scale_mut(*f);
    }
    Some(Scaling { r, rinv, lambda })
}

/// Solves `Λ∘X = M` for diagonal `Λ`.
fn lambda_div(lambda: &Vector, m: &Mat) -> Mat {
    let n = lambda.len();
    Mat::from_fn(n, n, |i, j| 2.0 * m[(i, j)] / (lambda[i] + lambda[j]))
}

fn jordan(a: &Mat, b: &Mat) -> Mat {
    (a * b + b * a) * 0.5
}

/// Largest `α` with `diag(λ) + α D ⪰ 0` (∞ if unbounded).
fn max_step_scaled(lambda: &Vector, d: &Mat) -> f64 {
    let n = lambda.len();
    let isq = lambda.map(|l| 1.0 / l.sqrt());
    let m = Mat::from_fn(n, n, |i, j| isq[i] * d[(i, j)] * isq[j]);
    let m = SymMat::symmetrize(&m);
    let lmin = match min_eigenvalue(&m) {
        Ok(v) => v,
        Err(_) => return 0.0,
    };
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

/// Largest `α` with `smat(v) + α I`-style shift: returns `-λ_min(smat(v))`
/// maximised over cones.
fn max_neg_eig(v: &Vector, cones: &[usize], offs: &[usize]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for (k, &n) in cones.iter().enumerate() {
        let m = smat(&v.as_slice()[offs[k]..offs[k + 1]], n);
        let l = min_eigenvalue(&SymMat::symmetrize(&m)).unwrap_or(f64::NEG_INFINITY);
        worst = worst.max(-l);
    }
    worst
}

fn add_identity(v: &mut Vector, cones: &[usize], offs: &[usize], t: f64) {
    for (k, &n) in cones.iter().enumerate() {
        let mut idx = offs[k];
        for j in 0..n {
            v[idx] += t;
            idx += n - j;
        }
    }
}

/// Applies `M ↦ L M Lᵀ` blockwise in svec coordinates, one `L` per cone.
fn congruence(v: &[f64], cones: &[usize], offs: &[usize], ls: &[&Mat], out: &mut [f64]) {
    for (k, &dim) in cones.iter().enumerate() {
        let m = smat(&v[offs[k]..offs[k + 1]], dim);
        let l = ls[k];
        svec_into(&(l * m * l.transpose()), &mut out[offs[k]..offs[k + 1]]);
    }
}

/// Newton system with `Δz` eliminated:
/// `[[P + (TG)ᵀ(TG), Aᵀ], [A, 0]]` where `T(M) = R⁻¹ M R⁻ᵀ` and
/// `H⁻¹ = TᵀT`.
struct Kkt<'a> {
    c: &'a Conic,
    offs: &'a [usize],
    /// `R⁻¹` per cone.
    tinv: Vec<Mat>,
    /// `W = R Rᵀ` per cone.
    w: Vec<Mat>,
    tg: Mat,
    reduced: Mat,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl<'a> Kkt<'a> {
    fn new(c: &'a Conic, offs: &'a [usize], tinv: Vec<Mat>, w: Vec<Mat>, reg: f64) -> Option<Kkt<'a>> {
        let n = c.q.len();
        let me = c.b.len();
        let mc = c.h.len();
        let refs: Vec<&Mat> = tinv.iter().collect();
        let mut tg = Mat::zeros(mc, n);
        let mut buf = vec![0.0; mc];
        for j in 0..n {
            let col = c.g.column(j);
            if col.iter().all(|v| *v == 0.0) {
                continue;
            }
            congruence(col.as_slice(), &c.cones, offs, &refs, &mut buf);
            tg.column_mut(j).copy_from_slice(&buf);
        }
        let dim = n + me;
        let mut reduced = Mat::zeros(dim, dim);
        reduced.view_mut((0, 0), (n, n)).copy_from(&tg.tr_mul(&tg));
        for i in 0..n {
            reduced[(i, i)] += c.p[i];
        }
        reduced.view_mut((n, 0), (me, n)).copy_from(&c.a);
        reduced.view_mut((0, n), (n, me)).copy_from(&c.a.transpose());
        let scale = reduced.view((0, 0), (n, n)).diagonal().amax().max(1.0);
        let mut kr = reduced.clone();
        for i in 0..dim {
            kr[(i, i)] += if i < n { reg * scale } else { -reg };
        }
        let lu = if dim == 0 {
            None
        } else {
            let lu = kr.lu();
            if !lu.is_invertible() {
                return None;
            }
            Some(lu)
        };
        Some(Kkt {
            c,
            offs,
            tinv,
            w,
            tg,
            reduced,
            lu,
        })
    }

    fn solve_reduced(&self, rhs: &Vector) -> Option<Vector> {
        let lu = match &self.lu {
            Some(lu) => lu,
            None => return Some(Vector::zeros(0)),
        };
        let mut x = lu.solve(rhs)?;
        let mut r = rhs - &self.reduced * &x;
        let mut rn = r.amax();
        for _ in 0..10 {
            if !(rn > 1e-15 * (1.0 + rhs.amax())) {
                break;
            }
            let cand = &x + lu.solve(&r)?;
            let rc = rhs - &self.reduced * &cand;
            let rcn = rc.amax();
            if !(rcn < rn) {
                break;
            }
            x = cand;
            r = rc;
            rn = rcn;
        }
        Some(x)
    }

    fn solve_once(&self, r1: &Vector, r2: &Vector, r3: &Vector) -> Option<(Vector, Vector, Vector)> {
        let c = self.c;
        let n = c.q.len();
        let me = c.b.len();
        let refs: Vec<&Mat> = self.tinv.iter().collect();
        let mut tr3 = vec![0.0; r3.len()];
        congruence(r3.as_slice(), &c.cones, self.offs, &refs, &mut tr3);
        let tr3 = Vector::from_vec(tr3);
        let mut rhs = Vector::zeros(n + me);
        rhs.rows_mut(0, n).copy_from(&(r1 + self.tg.tr_mul(&tr3)));
        rhs.rows_mut(n, me).copy_from(r2);
        let sol = self.solve_reduced(&rhs)?;
        let dx = sol.rows(0, n).into_owned();
        let dy = sol.rows(n, me).into_owned();
        // Δz = Tᵀ(T G Δx − T r3)
        let w = &self.tg * &dx - tr3;
        let trefs: Vec<Mat> = self.tinv.iter().map(|t| t.transpose()).collect();
        let trefs: Vec<&Mat> = trefs.iter().collect();
        let mut dz = vec![0.0; w.len()];
        congruence(w.as_slice(), &c.cones, self.offs, &trefs, &mut dz);
        Some((dx, dy, Vector::from_vec(dz)))
    }

    fn residual(&self, r: (&Vector, &Vector, &Vector), d: (&Vector, &Vector, &Vector)) -> (Vector, Vector, Vector) {
        let c = self.c;
        let e1 = r.0 - (c.p.component_mul(d.0) + c.a.tr_mul(d.1) + c.g.tr_mul(d.2));
        let e2 = r.1 - &c.a * d.0;
        let wrefs: Vec<&Mat> = self.w.iter().collect();
        let mut hz = vec![0.0; d.2.len()];
        congruence(d.2.as_slice(), &c.cones, self.offs, &wrefs, &mut hz);
        let e3 = r.2 - (&c.g * d.0 - Vector::from_vec(hz));
        (e1, e2, e3)
    }

    /// Solves `P Δx + AᵀΔy + GᵀΔz = r1`, `AΔx = r2`, `GΔx − HΔz = r3`.
    fn solve(&self, r1: &Vector, r2: &Vector, r3: &Vector) -> Option<(Vector, Vector, Vector)> {
        let (mut dx, mut dy, mut dz) = self.solve_once(r1, r2, r3)?;
        let size = |e: &(Vector, Vector, Vector)| e.0.amax().max(e.1.amax()).max(e.2.amax());
        let mut err = self.residual((r1, r2, r3), (&dx, &dy, &dz));
        let mut en = size(&err);
        let target = 1e-15 * (1.0 + r1.amax().max(r2.amax()).max(r3.amax()));
        for _ in 0..5 {
            if !(en > target) {
                break;
            }
            let (cx, cy, cz) = self.solve_once(&err.0, &err.1, &err.2)?;
            let (nx, ny, nz) = (&dx + cx, &dy + cy, &dz + cz);
            let nerr = self.residual((r1, r2, r3), (&nx, &ny, &nz));
            let nn = size(&nerr);
            if !(nn < en) {
                break;
            }
            dx = nx;
            dy = ny;
            dz = nz;
            err = nerr;
            en = nn;
        }
        if dx.iter().chain(dy.iter()).chain(dz.iter()).all(|v| v.is_finite()) {
            Some((dx, dy, dz))
        } else {
            None
        }
    }
}

fn norm(v: &Vector) -> f64 {
    v.norm()
}

struct Step {
    x: Vector,
    y: Vector,
    z: Vector,
    s: Vector,
    tau: f64,
    kappa: f64,
    ds_scaled: Vec<Mat>,
    dz_scaled: Vec<Mat>,
}

pub(crate) fn solve(c: &Conic, st: &Settings) -> IpmResult {
    let n = c.q.len();
    let me = c.b.len();
    let mc = c.h.len();
    let offs = offsets(&c.cones);
    debug_assert_eq!(*offs.last().unwrap(), mc);
    let degree = c.cones.iter().sum::<usize>() as f64;

    let mut x = Vector::zeros(n);
    let mut y = Vector::zeros(me);
    let mut z = Vector::zeros(mc);
    let mut s = Vector::zeros(mc);
    add_identity(&mut s, &c.cones, &offs, 1.0);
    add_identity(&mut z, &c.cones, &offs, 1.0);

    // Least-squares style starting point (scaling H = I).
    let ident: Vec<Mat> = c.cones.iter().map(|&d| Mat::identity(d, d)).collect();
    if let Some(kkt) = Kkt::new(c, &offs, ident.clone(), ident, 1e-12) {
        let sol1 = kkt.solve(&Vector::zeros(n), &c.b, &c.h);
        let sol2 = kkt.solve(&(-&c.q), &Vector::zeros(me), &Vector::zeros(mc));
        if let (Some((x0, _, z0)), Some((_, y0, z1))) = (sol1, sol2) {
            x = x0;
            s = -z0;
            y = y0;
            z = z1;
            if mc > 0 {
                let ts = max_neg_eig(&s, &c.cones, &offs);
                if ts >= -1e-8 * norm(&s).max(1.0) {
                    add_identity(&mut s, &c.cones, &offs, 1.0 + ts);
                }
                let tz = max_neg_eig(&z, &c.cones, &offs);
                if tz >= -1e-8 * norm(&z).max(1.0) {
                    add_identity(&mut z, &c.cones, &offs, 1.0 + tz);
                }
            }
        }
    }
    let mut tau = 1.0;
    let mut kappa = 1.0;

    let bnorm = norm(&c.b).max(1.0);
    let hnorm = norm(&c.h).max(1.0);
    let qnorm = norm(&c.q).max(1.0);

    let mut result = IpmResult {
        outcome: Outcome::IterationLimit,
        x: x.clone(),
        y: y.clone(),
        z: z.clone(),
        s: s.clone(),
        iterations: 0,
        pcost: f64::NAN,
        dcost: f64::NAN,
        pres: f64::INFINITY,
        dres: f64::INFINITY,
        gap: f64::INFINITY,
    };
    let mut best: Option<(f64, IpmResult)> = None;
    let give_up = |mut result: IpmResult, outcome: Outcome, best: Option<(f64, IpmResult)>| match best {
        Some((score, mut b)) if score <= st.reduced_tol => {
            b.outcome = Outcome::ReducedAccuracy;
            b.iterations = result.iterations;
            b
        }
        _ => {
            result.outcome = outcome;
            result
        }
    };
    // The argument names the failing stage for readers of the call site.
    macro_rules! stall {
        ($why:expr) => {{
            return give_up(result, Outcome::Stalled, best);
        }};
    }

    let mut scalings_next: Option<Vec<Scaling>> = None;
    for iter in 0..=st.max_iter {
        let mut scalings = scalings_next.take();
        let px = c.p.component_mul(&x);
        let xpx = x.dot(&px);
        let aty = c.a.tr_mul(&y);
        let gtz = c.g.tr_mul(&z);
        let r_x = &px + &aty + &gtz + &c.q * tau;
        let r_y = &c.a * &x - &c.b * tau;
        let r_z = &c.g * &x + &s - &c.h * tau;
        let r_tau = c.q.dot(&x) + c.b.dot(&y) + c.h.dot(&z) + kappa + xpx / tau;

        // Convergence tests on the de-homogenized iterate.
        let xb = &x / tau;
        let quad = xpx / (tau * tau);
        let pcost = 0.5 * quad + c.q.dot(&xb);
        let dcost = -0.5 * quad - (c.b.dot(&y) + c.h.dot(&z)) / tau;
        let pres = (norm(&r_y) / tau / bnorm).max(norm(&r_z) / tau / hnorm);
        let dres = norm(&r_x) / tau / qnorm;
        let gap_abs = (pcost - dcost).abs();
        let gap_rel = gap_abs / pcost.abs().min(dcost.abs()).max(0.5 * quad).max(1.0);
        result.iterations = iter;
        result.pcost = pcost;
        result.dcost = dcost;
        result.pres = pres;
        result.dres = dres;
        result.gap = gap_rel;
        result.x = xb;
        result.y = &y / tau;
        result.z = &z / tau;
        result.s = &s / tau;
        if pres <= st.feas_tol && dres <= st.feas_tol && (gap_abs <= st.gap_tol || gap_rel <= st.gap_tol)
        {
            result.outcome = Outcome::Optimal;
            return result;
        }
        let score = pres.max(dres).max(gap_abs.min(gap_rel));
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, result.clone()));
        }
        let t = -(c.b.dot(&y) + c.h.dot(&z));
        if t > 0.0 {
            let ray = norm(&(&aty + &gtz)) / t;
            if ray <= st.infeas_tol {
                result.outcome = Outcome::PrimalInfeasible;
                result.y = &y / t;
                result.z = &z / t;
                return result;
            }
        }
        let qx = c.q.dot(&x);
        if qx < 0.0 {
            let d = -qx;
            let ax = &c.a * &x;
            let gxs = &c.g * &x + &s;
            if norm(&px) / d <= st.infeas_tol
                && norm(&ax) / d <= st.infeas_tol
                && norm(&gxs) / d <= st.infeas_tol
            {
                result.outcome = Outcome::DualInfeasible;
                result.x = &x / d;
                return result;
            }
        }
        if iter == st.max_iter {
            break;
        }

        if scalings.is_none() {
            scalings = scale_from(&s, &z, &c.cones, &offs);
        }
        let Some(scalings) = scalings.take() else {
            stall!("scaling");
        };
        let tinv = scalings.iter().map(|s| s.rinv.clone()).collect();
        let wmat = scalings.iter().map(|s| &s.r * s.r.transpose()).collect();
        let kkt = match Kkt::new(c, &offs, tinv, wmat, 1e-13) {
            Some(k) => k,
            None => stall!("factorization"),
        };
        let (x1, y1, z1) = match kkt.solve(&(-&c.q), &c.b, &c.h) {
            Some(v) => v,
            None => stall!("solve"),
        };
        // z1ᵀ H z1 = ‖Rᵀ Z1 R‖²
        let z1hz1: f64 = scalings
            .iter()
            .enumerate()
            .map(|(k, sc)| {
                let zm = smat(&z1.as_slice()[offs[k]..offs[k + 1]], c.cones[k]);
                (sc.r.transpose() * zm * &sc.r).norm_squared()
            })
            .sum();
        let mu = (s.dot(&z) + tau * kappa) / (degree + 1.0);
        let xt = &x / tau;
        let cvec = &c.q + c.p.component_mul(&xt) * 2.0;
        let diff = &x1 - &xt;
        let den = -(diff.dot(&c.p.component_mul(&diff)) + z1hz1 + kappa / tau);

        let direction = |dx: &Vector, dy: &Vector, dz: &Vector, dtau: f64, ds: &[Mat], dkappa: f64| -> Option<Step> {
            let mut corr = Vector::zeros(mc);
            for (k, sc) in scalings.iter().enumerate() {
                let e = lambda_div(&sc.lambda, &(-&ds[k]));
                let m = &sc.r * e * sc.r.transpose();
                svec_into(&m, &mut corr.as_mut_slice()[offs[k]..offs[k + 1]]);
            }
            let (x2, y2, z2) = kkt.solve(&(-dx), &(-dy), &(-dz - &corr))?;
            let num = -dtau + dkappa / tau - cvec.dot(&x2) - c.b.dot(&y2) - c.h.dot(&z2);
            if !(den < 0.0) {
                return None;
            }
            let d_tau = num / den;
            let d_x = &x2 + &x1 * d_tau;
            let d_y = &y2 + &y1 * d_tau;
            let d_z = &z2 + &z1 * d_tau;
            let d_s = -dz - &c.g * &d_x + &c.h * d_tau;
            let d_kappa = (-dkappa - kappa * d_tau) / tau;
            let mut ds_scaled = Vec::with_capacity(scalings.len());
            let mut dz_scaled = Vec::with_capacity(scalings.len());
            for (k, sc) in scalings.iter().enumerate() {
                let dim = c.cones[k];
                let dsm = smat(&d_s.as_slice()[offs[k]..offs[k + 1]], dim);
                let dzm = smat(&d_z.as_slice()[offs[k]..offs[k + 1]], dim);
                ds_scaled.push(&sc.rinv * dsm * sc.rinv.transpose());
                dz_scaled.push(sc.r.transpose() * dzm * &sc.r);
            }
            Some(Step {
                x: d_x,
                y: d_y,
                z: d_z,
                s: d_s,
                tau: d_tau,
                kappa: d_kappa,
                ds_scaled,
                dz_scaled,
            })
        };
        let step_length = |d: &Step| -> f64 {
            let mut a = f64::INFINITY;
            for (k, sc) in scalings.iter().enumerate() {
                a = a.min(max_step_scaled(&sc.lambda, &d.ds_scaled[k]));
                a = a.min(max_step_scaled(&sc.lambda, &d.dz_scaled[k]));
            }
            if d.tau < 0.0 {
                a = a.min(-tau / d.tau);
            }
            if d.kappa < 0.0 {
                a = a.min(-kappa / d.kappa);
            }
            a
        };

        // Predictor.
        let lam2: Vec<Mat> = scalings
            .iter()
            .map(|sc| Mat::from_diagonal(&sc.lambda.map(|l| l * l)))
            .collect();
        let aff = match direction(&r_x, &r_y, &r_z, r_tau, &lam2, tau * kappa) {
            Some(d) => d,
            None => stall!("predictor"),
        };
        let alpha_aff = step_length(&aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // Corrector.
        let ds_comb: Vec<Mat> = scalings
            .iter()
            .enumerate()
            .map(|(k, sc)| {
                let dim = sc.lambda.len();
                &lam2[k] + jordan(&aff.ds_scaled[k], &aff.dz_scaled[k]) - Mat::identity(dim, dim) * (sigma * mu)
            })
            .collect();
        let f = 1.0 - sigma;
        let dk = tau * kappa + aff.tau * aff.kappa - sigma * mu;
        let comb = match direction(&(&r_x * f), &(&r_y * f), &(&r_z * f), r_tau * f, &ds_comb, dk) {
            Some(d) => d,
            None => stall!("corrector"),
        };
        let alpha = (STEP_FRACTION * step_length(&comb)).min(1.0);
        if !(alpha > 1e-12) {
            stall!("step length");
        }
        x += &comb.x * alpha;
        y += &comb.y * alpha;
        z += &comb.z * alpha;
        s += &comb.s * alpha;
        tau += comb.tau * alpha;
        kappa += comb.kappa * alpha;
        // Update the scaling in scaled coordinates, where both iterates stay
        // close to Λ; refactoring s and z directly loses PD-ness near the end.
        let next: Option<Vec<Scaling>> = scalings
            .iter()
            .enumerate()
            .map(|(k, sc)| {
                let lam = Mat::from_diagonal(&sc.lambda);
                let st = SymMat::symmetrize(&(&lam + &comb.ds_scaled[k] * alpha)).into_mat();
                let zt = SymMat::symmetrize(&(&lam + &comb.dz_scaled[k] * alpha)).into_mat();
                let inner = nt_scaling(&st, &zt)?;
                Some(Scaling {
                    r: &sc.r * inner.r,
                    rinv: inner.rinv * &sc.rinv,
                    lambda: inner.lambda,
                })
            })
            .collect();
        scalings_next = next;
        if !(tau > 0.0 && kappa > 0.0) || !x.iter().chain(z.iter()).all(|v| v.is_finite()) {
            stall!("non-finite iterate");
        }
    }
    give_up(result, Outcome::IterationLimit, best)
}
