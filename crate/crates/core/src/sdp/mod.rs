//! Small dense SDP solver.
//!
//! Problems are built from matrix variables (symmetric or rectangular),
//! linear matrix inequalities over affine expressions of those variables,
//! scalar equalities, a linear objective and a diagonal proximal term
//! `(ρ/2)‖V − T‖_F²`. The kernel is a homogeneous self-dual interior-point
//! method; every `Optimal` answer is re-validated against the original data.

mod expr;
mod ipm;

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use expr::{AffineMat, MatVar};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, Mat, SymMat};

/// Margin used to close strict inequalities: `X ≻ 0` becomes `X ⪰ ε I`.
pub const STRICT_MARGIN: f64 = 1e-6;

/// PSD tolerance used when re-validating an optimal point.
pub const VALIDATION_PSD_TOL: f64 = 1e-7;

/// Tolerance at which a stalled solve may still return its best iterate.
pub const REDUCED_TOL: f64 = 1e-6;

/// `STRICT_MARGIN · max(1, scale)`.
pub fn strict_margin(scale: f64) -> f64 {
    STRICT_MARGIN * scale.max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
struct Lmi {
    expr: AffineMat,
    margin: f64,
}

#[derive(Debug, Clone)]
struct Equality {
    coeffs: BTreeMap<usize, f64>,
    rhs: f64,
}

/// SDP under construction.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    nscalars: usize,
    vars: Vec<MatVar>,
    linear: Vec<f64>,
    prox_diag: Vec<f64>,
    prox_linear: Vec<f64>,
    constant: f64,
    equalities: Vec<Equality>,
    lmis: Vec<Lmi>,
}

/// Result of [`SdpProblem::solve`].
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    /// Scalar values (meaningful when `Optimal`).
    pub x: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// Relative duality gap at termination.
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Dual matrix per LMI, in insertion order. For `Infeasible` this is the
    /// normalized certificate.
    pub lmi_duals: Vec<Mat>,
    /// Reason for a non-optimal status.
    pub message: Option<String>,
    /// Accepted from a stalled solve at [`REDUCED_TOL`].
    pub reduced_accuracy: bool,
}

impl SdpSolution {
    pub fn value(&self, v: &MatVar) -> Mat {
        v.value(&self.x)
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

/// Outcome of [`SdpProblem::check_feasible`].
#[derive(Debug, Clone)]
pub struct Feasibility {
    pub feasible: bool,
    pub solution: SdpSolution,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn push_var(&mut self, rows: usize, cols: usize, symmetric: bool) -> MatVar {
        let v = MatVar {
            offset: self.nscalars,
            rows,
            cols,
            symmetric,
        };
        self.nscalars += v.scalar_count();
        self.linear.resize(self.nscalars, 0.0);
        self.prox_diag.resize(self.nscalars, 0.0);
        self.prox_linear.resize(self.nscalars, 0.0);
        self.vars.push(v);
        v
    }

    /// Free symmetric `n×n` variable.
    pub fn symmetric(&mut self, n: usize) -> MatVar {
        self.push_var(n, n, true)
    }

    /// Symmetric variable constrained `V ⪰ margin·I`.
    pub fn psd(&mut self, n: usize, margin: f64) -> MatVar {
        let v = self.symmetric(n);
        self.add_psd(&v, margin);
        v
    }

    /// Free rectangular variable.
    pub fn matrix(&mut self, rows: usize, cols: usize) -> MatVar {
        self.push_var(rows, cols, false)
    }

    pub fn scalar_count(&self) -> usize {
        self.nscalars
    }

    pub fn variables(&self) -> &[MatVar] {
        &self.vars
    }

    pub fn lmi_count(&self) -> usize {
        self.lmis.len()
    }

    fn check_var(&self, v: &MatVar) -> Result<()> {
        if self.vars.contains(v) {
            Ok(())
        } else {
            Err(Error::validation("variable", "not declared in this problem"))
        }
    }

    /// `V ⪰ margin·I`.
    pub fn add_psd(&mut self, v: &MatVar, margin: f64) {
        assert!(v.symmetric, "PSD constraint on a non-symmetric variable");
        self.lmis.push(Lmi {
            expr: AffineMat::from_var(v),
            margin,
        });
    }

    /// `expr ⪰ margin·I`. The expression must be square and symmetric.
    pub fn add_lmi(&mut self, expr: AffineMat, margin: f64) -> Result<()> {
        if expr.rows() != expr.cols() {
            return Err(Error::dim(format!(
                "LMI expression is {}x{}",
                expr.rows(),
                expr.cols()
            )));
        }
        if let Some(k) = expr.max_scalar_index() {
            if k >= self.nscalars {
                return Err(Error::validation("lmi", "references an undeclared scalar"));
            }
        }
        let asym = |m: &Mat| (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
        if !asym(&expr.constant) || !expr.terms.values().all(asym) {
            return Err(Error::validation("lmi", "expression is not symmetric"));
        }
        if !expr.constant.iter().chain(expr.terms.values().flatten()).all(|v| v.is_finite()) {
            return Err(Error::validation("lmi", "non-finite coefficient"));
        }
        self.lmis.push(Lmi { expr, margin });
        Ok(())
    }

    /// Scalar equality `Σ c_k x_k = rhs`.
    pub fn add_equality(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> Result<()> {
        let mut map = BTreeMap::new();
        for &(k, c) in coeffs {
            if k >= self.nscalars {
                return Err(Error::validation("equality", "references an undeclared scalar"));
            }
            if !c.is_finite() {
                return Err(Error::validation("equality", "non-finite coefficient"));
            }
            *map.entry(k).or_insert(0.0) += c;
        }
        if !rhs.is_finite() {
            return Err(Error::validation("equality", "non-finite right-hand side"));
        }
        self.equalities.push(Equality { coeffs: map, rhs });
        Ok(())
    }

    /// `expr = 0` entrywise; only the upper triangle is used when the
    /// expression is symmetric.
    pub fn add_equality_mat(&mut self, expr: &AffineMat) -> Result<()> {
        let sym = expr.rows() == expr.cols() && {
            let s = |m: &Mat| (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
            s(&expr.constant) && expr.terms.values().all(s)
        };
        for i in 0..expr.rows() {
            let start = if sym { i } else { 0 };
            for j in start..expr.cols() {
                let coeffs: Vec<(usize, f64)> = expr
                    .terms
                    .iter()
                    .map(|(&k, m)| (k, m[(i, j)]))
                    .filter(|(_, c)| *c != 0.0)
                    .collect();
                let rhs = -expr.constant[(i, j)];
                if coeffs.is_empty() && rhs == 0.0 {
                    continue;
                }
                self.add_equality(&coeffs, rhs)?;
            }
        }
        Ok(())
    }

    /// Adds `scale · ⟨C, V⟩ = scale · Σ C_ij V_ij` to the objective.
    pub fn add_inner_objective(&mut self, v: &MatVar, c: &Mat, scale: f64) -> Result<()> {
        self.check_var(v)?;
        if c.shape() != (v.rows, v.cols) {
            return Err(Error::dim("objective coefficient shape"));
        }
        for (k, i, j) in v.scalars() {
            let w = if v.symmetric && i != j {
                c[(i, j)] + c[(j, i)]
            } else {
                c[(i, j)]
            };
            self.linear[k] += scale * w;
        }
        Ok(())
    }

    /// Adds `c · x_k` to the objective.
    pub fn add_linear(&mut self, k: usize, c: f64) {
        self.linear[k] += c;
    }

    pub fn add_objective_constant(&mut self, c: f64) {
        self.constant += c;
    }

    /// Adds `(ρ/2)‖V − T‖_F²`.
    pub fn add_proximal(&mut self, v: &MatVar, target: &Mat, rho: f64) -> Result<()> {
        self.check_var(v)?;
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::Domain(format!("proximal weight {rho} must be ≥ 0")));
        }
        if target.shape() != (v.rows, v.cols) {
            return Err(Error::dim("proximal target shape"));
        }
        for (k, i, j) in v.scalars() {
            let (w, t) = if v.symmetric && i != j {
                (2.0, 0.5 * (target[(i, j)] + target[(j, i)]))
            } else {
                (1.0, target[(i, j)])
            };
            self.prox_diag[k] += rho * w;
            self.prox_linear[k] -= rho * w * t;
            self.constant += 0.5 * rho * w * t * t;
        }
        Ok(())
    }

    /// Objective value at a scalar vector.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut f = self.constant;
        for k in 0..self.nscalars {
            f += (self.linear[k] + self.prox_linear[k]) * x[k] + 0.5 * self.prox_diag[k] * x[k] * x[k];
        }
        f
    }

    fn conic(&self) -> std::result::Result<(ipm::Conic, Vec<usize>), String> {
        let n = self.nscalars;
        // Equalities: orthonormalize rows, dropping dependent ones.
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for eq in &self.equalities {
            let mut a = DVector::zeros(n);
            for (&k, &c) in &eq.coeffs {
                a[k] = c;
            }
            let mut b = eq.rhs;
            let scale = a.norm();
            for _ in 0..2 {
                for (r, &rb) in rows.iter().zip(&rhs) {
                    let c = r.dot(&a);
                    a -= r * c;
                    b -= c * rb;
                }
            }
            let nrm = a.norm();
            if nrm <= 1e-10 * scale.max(1.0) {
                if b.abs() > 1e-9 * (1.0 + eq.rhs.abs()) {
                    return Err("inconsistent equality constraints".into());
                }
                continue;
            }
            rows.push(a / nrm);
            rhs.push(b / nrm);
        }
        let mut a = Mat::zeros(rows.len(), n);
        for (i, r) in rows.iter().enumerate() {
            a.row_mut(i).copy_from(&r.transpose());
        }
        let b = DVector::from_vec(rhs);

        let cones: Vec<usize> = self.lmis.iter().map(|l| l.expr.rows()).collect();
        let mc: usize = cones.iter().map(|&d| ipm::svec_len(d)).sum();
        let mut g = Mat::zeros(mc, n);
        let mut h = DVector::zeros(mc);
        let mut off = 0;
        for l in &self.lmis {
            let d = l.expr.rows();
            let len = ipm::svec_len(d);
            let c0 = &l.expr.constant - Mat::identity(d, d) * l.margin;
            ipm::svec_into(&c0, &mut h.as_mut_slice()[off..off + len]);
            let mut buf = vec![0.0; len];
            for (&k, m) in &l.expr.terms {
                ipm::svec_into(m, &mut buf);
                for (r, v) in buf.iter().enumerate() {
                    g[(off + r, k)] = -v;
                }
            }
            off += len;
        }
        let q = DVector::from_fn(n, |k, _| self.linear[k] + self.prox_linear[k]);
        let p = DVector::from_vec(self.prox_diag.clone());
        Ok((
            ipm::Conic {
                p,
                q,
                a,
                b,
                g,
                h,
                cones: cones.clone(),
            },
            cones,
        ))
    }

    fn data_finite(&self) -> bool {
        self.linear
            .iter()
            .chain(&self.prox_diag)
            .chain(&self.prox_linear)
            .all(|v| v.is_finite())
            && self.lmis.iter().all(|l| l.margin.is_finite())
    }

    pub fn solve(&self, opts: &SolveOptions) -> Result<SdpSolution> {
        if !self.data_finite() {
            return Err(Error::validation("objective", "non-finite data"));
        }
        if !(opts.gap_tol > 0.0 && opts.feas_tol > 0.0) {
            return Err(Error::Domain("tolerances must be positive".into()));
        }
        let (conic, cones) = match self.conic() {
            Ok(c) => c,
            Err(msg) => {
                return Ok(SdpSolution {
                    status: SdpStatus::Infeasible,
                    x: vec![0.0; self.nscalars],
                    primal_objective: f64::INFINITY,
                    dual_objective: f64::INFINITY,
                    iterations: 0,
                    gap: f64::NAN,
                    primal_residual: f64::NAN,
                    dual_residual: f64::NAN,
                    lmi_duals: Vec::new(),
                    message: Some(msg),
                    reduced_accuracy: false,
                })
            }
        };
        let settings = ipm::Settings {
            gap_tol: opts.gap_tol,
            feas_tol: opts.feas_tol,
            infeas_tol: 1e-8,
            reduced_tol: REDUCED_TOL,
            max_iter: opts.max_iter,
        };
        let r = ipm::solve(&conic, &settings);
        let mut lmi_duals = Vec::with_capacity(cones.len());
        let mut off = 0;
        for &d in &cones {
            let len = ipm::svec_len(d);
            lmi_duals.push(ipm::smat(&r.z.as_slice()[off..off + len], d));
            off += len;
        }
        let x: Vec<f64> = r.x.iter().copied().collect();
        let mut sol = SdpSolution {
            status: SdpStatus::NumericalLimit,
            primal_objective: r.pcost + self.constant,
            dual_objective: r.dcost + self.constant,
            x,
            iterations: r.iterations,
            gap: r.gap,
            primal_residual: r.pres,
            dual_residual: r.dres,
            lmi_duals,
            message: None,
            reduced_accuracy: false,
        };
        match r.outcome {
            ipm::Outcome::Optimal => match self.validate(&sol, opts.feas_tol, opts.gap_tol) {
                Ok(()) => sol.status = SdpStatus::Optimal,
                Err(msg) => sol.message = Some(format!("self-validation failed: {msg}")),
            },
            ipm::Outcome::ReducedAccuracy => match self.validate(&sol, REDUCED_TOL, REDUCED_TOL) {
                Ok(()) => {
                    sol.status = SdpStatus::Optimal;
                    sol.reduced_accuracy = true;
                    sol.message = Some("stalled; best iterate accepted at reduced accuracy".into());
                }
                Err(msg) => sol.message = Some(format!("stalled; self-validation failed: {msg}")),
            },
            ipm::Outcome::PrimalInfeasible => {
                sol.status = SdpStatus::Infeasible;
                sol.message = Some("certified infeasibility ray".into());
            }
            ipm::Outcome::DualInfeasible => {
                sol.status = SdpStatus::Unbounded;
                sol.message = Some("certified unbounded direction".into());
            }
            ipm::Outcome::IterationLimit => {
                sol.message = Some("iteration limit".into());
            }
            ipm::Outcome::Stalled => {
                sol.message = Some("numerical stall".into());
            }
        }
        Ok(sol)
    }

    /// Independent post-hoc check of an optimal point.
    fn validate(&self, sol: &SdpSolution, feas_tol: f64, gap_tol: f64) -> std::result::Result<(), String> {
        let x = &sol.x;
        for (i, eq) in self.equalities.iter().enumerate() {
            let lhs: f64 = eq.coeffs.iter().map(|(&k, &c)| c * x[k]).sum();
            let scale = 1.0 + eq.rhs.abs() + eq.coeffs.values().map(|c| c.abs()).sum::<f64>();
            if (lhs - eq.rhs).abs() > 10.0 * feas_tol * scale {
                return Err(format!("equality {i} residual {:.3e}", lhs - eq.rhs));
            }
        }
        for (i, l) in self.lmis.iter().enumerate() {
            let d = l.expr.rows();
            let m = l.expr.eval(x) - Mat::identity(d, d) * l.margin;
            let lmin = min_eigenvalue(&SymMat::symmetrize(&m)).map_err(|e| e.to_string())?;
            if lmin < -VALIDATION_PSD_TOL {
                return Err(format!("LMI {i} minimum eigenvalue {lmin:.3e}"));
            }
        }
        // Relative to the size of the objective terms, as in the kernel: the
        // constant offset and cancellation between quadratic and linear parts
        // would otherwise distort the denominator.
        let gap = (sol.primal_objective - sol.dual_objective).abs();
        let (p, d) = (sol.primal_objective - self.constant, sol.dual_objective - self.constant);
        let quad: f64 = self.prox_diag.iter().zip(x).map(|(w, v)| 0.5 * w * v * v).sum();
        let rel = gap / p.abs().min(d.abs()).max(quad).max(1.0);
        if gap > 10.0 * gap_tol && rel > 10.0 * gap_tol {
            return Err(format!("duality gap {gap:.3e}"));
        }
        Ok(())
    }

    /// Solves with the objective removed; `feasible` iff the result is
    /// `Optimal`, in which case the solution holds a point satisfying every
    /// constraint (with its margins).
    pub fn check_feasible(&self) -> Result<Feasibility> {
        let mut p = self.clone();
        p.linear.iter_mut().for_each(|v| *v = 0.0);
        p.prox_diag.iter_mut().for_each(|v| *v = 0.0);
        p.prox_linear.iter_mut().for_each(|v| *v = 0.0);
        p.constant = 0.0;
        let solution = p.solve(&SolveOptions::default())?;
        Ok(Feasibility {
            feasible: solution.is_optimal(),
            solution,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn two_by_two_determinant_example() {
        // min x s.t. [[x,1],[1,x]] ⪰ 0
        let mut p = SdpProblem::new();
        let x = p.matrix(1, 1);
        let mut e = AffineMat::constant(dmatrix![0.0, 1.0; 1.0, 0.0]);
        e.add_product(&dmatrix![1.0; 0.0], &x, &dmatrix![1.0, 0.0], 1.0);
        e.add_product(&dmatrix![0.0; 1.0], &x, &dmatrix![0.0, 1.0], 1.0);
        p.add_lmi(e, 0.0).unwrap();
        p.add_linear(0, 1.0);
        let s = p.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-6, "{}", s.x[0]);
    }

    #[test]
    fn fixed_psd_matrix_is_feasible() {
        let mut p = SdpProblem::new();
        p.add_lmi(AffineMat::constant(dmatrix![2.0, 1.0; 1.0, 1.0]), 0.0)
            .unwrap();
        assert!(p.check_feasible().unwrap().feasible);
    }

    #[test]
    fn projection_onto_psd_cone() {
        let mut p = SdpProblem::new();
        let v = p.psd(2, 0.0);
        p.add_proximal(&v, &dmatrix![1.0, 0.0; 0.0, -1.0], 1.0).unwrap();
        let s = p.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.value(&v) - dmatrix![1.0, 0.0; 0.0, 0.0]).amax() < 1e-6);
        assert!((s.primal_objective - 0.5).abs() < 1e-6);
    }

    #[test]
    fn margin_only_feasibility() {
        let mut p = SdpProblem::new();
        let v = p.psd(3, STRICT_MARGIN);
        let f = p.check_feasible().unwrap();
        assert!(f.feasible);
        let val = f.solution.value(&v);
        assert!(min_eigenvalue(&SymMat::symmetrize(&val)).unwrap() >= STRICT_MARGIN - 1e-7);
    }

    #[test]
    fn inconsistent_equality_is_infeasible() {
        let mut p = SdpProblem::new();
        p.matrix(1, 1);
        p.add_equality(&[(0, 0.0)], 1.0).unwrap();
        let s = p.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, SdpStatus::Infeasible);
    }

    #[test]
    fn conflicting_lmis_are_certified_infeasible() {
        // x ⪰ 1 and -x ⪰ 0
        let mut p = SdpProblem::new();
        let x = p.symmetric(1);
        let mut a = AffineMat::from_var(&x);
        a.add_constant(&dmatrix![-1.0], 1.0);
        p.add_lmi(a, 0.0).unwrap();
        let mut b = AffineMat::zeros(1, 1);
        b.add_var(&x, -1.0);
        p.add_lmi(b, 0.0).unwrap();
        let s = p.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, SdpStatus::Infeasible);
    }

    #[test]
    fn unbounded_is_detected() {
        // min -x s.t. x ⪰ 0
        let mut p = SdpProblem::new();
        let x = p.psd(1, 0.0);
        p.add_inner_objective(&x, &dmatrix![-1.0], 1.0).unwrap();
        let s = p.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, SdpStatus::Unbounded);
    }

    #[test]
    fn stabilizability_lmi_scalar() {
        // a = b = 1: x ≥ ε, 2(bz − ax) ⪰ ε
        let mut p = SdpProblem::new();
        let x = p.psd(1, STRICT_MARGIN);
        let z = p.matrix(1, 1);
        let mut e = AffineMat::zeros(1, 1);
        e.add_var(&x, -2.0).add_var(&z, 2.0);
        p.add_lmi(e, STRICT_MARGIN).unwrap();
        assert!(p.check_feasible().unwrap().feasible);
    }

    #[test]
    fn equality_scaling_does_not_move_optimum() {
        let build = |scale: f64| {
            let mut p = SdpProblem::new();
            let v = p.psd(2, 0.0);
            p.add_inner_objective(&v, &dmatrix![1.0, 0.3; 0.3, 2.0], 1.0)
                .unwrap();
            let (k00, k11) = (v.index(0, 0), v.index(1, 1));
            p.add_equality(&[(k00, scale), (k11, scale)], scale).unwrap();
            p.solve(&SolveOptions::default()).unwrap().primal_objective
        };
        let a = build(1.0);
        let b = build(10.0);
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
    }
}
