//! Dense small-matrix numerics shared by every other module.
//!
//! Matrices are `nalgebra::DMatrix<f64>`; symmetric operands are wrapped in
//! [`SymMat`], which mirrors its upper triangle on construction so that the
//! stored matrix is exactly symmetric.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Default tolerance for rank and definiteness decisions.
pub const DEFAULT_TOL: f64 = 1e-9;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Exactly symmetric dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat(Mat);

impl SymMat {
    /// Builds a symmetric matrix from the upper triangle of `m`.
    pub fn from_upper(m: &Mat) -> Self {
        assert!(m.is_square(), "SymMat requires a square matrix");
        let n = m.nrows();
        let mut out = m.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                out[(j, i)] = out[(i, j)];
            }
        }
        SymMat(out)
    }

    /// Builds `(m + mᵀ) / 2`.
    pub fn symmetrize(m: &Mat) -> Self {
        assert!(m.is_square(), "SymMat requires a square matrix");
        let mut out = (m + m.transpose()) * 0.5;
        // exact mirror; the averaged entries can differ in the last bit
        let n = out.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                out[(j, i)] = out[(i, j)];
            }
        }
        SymMat(out)
    }

    pub fn identity(n: usize) -> Self {
        SymMat(Mat::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMat(Mat::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Mat::zeros(n, n);
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        SymMat(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }
}

impl From<SymMat> for Mat {
    fn from(s: SymMat) -> Mat {
        s.0
    }
}

/// Definiteness of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Definiteness {
    PositiveDefinite,
    PositiveSemidefinite,
    Indefinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdClass {
    pub kind: Definiteness,
    pub min_eigenvalue: f64,
}

impl PsdClass {
    pub fn is_psd(&self) -> bool {
        self.kind != Definiteness::Indefinite
    }
}

/// Symmetric eigendecomposition `S = V diag(values) Vᵀ`, values ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

/// Cyclic Jacobi eigensolver.
pub fn sym_eigen(s: &SymMat) -> Result<SymEigen> {
    let n = s.dim();
    let mut a = s.as_mat().clone();
    let mut v = Mat::identity(n, n);
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite entry in eigen input".into()));
    }
    let scale = a.norm();
    let mut converged = n <= 1 || scale == 0.0;
    let mut sweep = 0;
    while !converged && sweep < JACOBI_MAX_SWEEPS {
        sweep += 1;
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok(SymEigen { values, vectors })
}

pub fn min_eigenvalue(s: &SymMat) -> Result<f64> {
    let e = sym_eigen(s)?;
    Ok(e.values.first().copied().unwrap_or(f64::INFINITY))
}

pub fn classify_psd(s: &SymMat, tol: f64) -> Result<PsdClass> {
    if tol <= 0.0 {
        return Err(Error::Domain("PSD tolerance must be positive".into()));
    }
    let min = min_eigenvalue(s)?;
    let kind = if min > tol {
        Definiteness::PositiveDefinite
    } else if min >= -tol {
        Definiteness::PositiveSemidefinite
    } else {
        Definiteness::Indefinite
    };
    Ok(PsdClass {
        kind,
        min_eigenvalue: min,
    })
}

/// Full singular value decomposition `B = U Σ Vᵀ` with square orthogonal `U`
/// and `V`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub singular_values: Vec<f64>,
    pub v: Mat,
}

pub fn svd(b: &Mat) -> Result<Svd> {
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite entry in SVD input".into()));
    }
    let (m, n) = b.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Svd {
            u: Mat::identity(m, m),
            singular_values: vec![],
            v: Mat::identity(n, n),
        });
    }
    let dec = nalgebra::linalg::SVD::try_new(b.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u_thin = dec.u.ok_or_else(|| Error::Numerical("SVD missing U".into()))?;
    let vt_thin = dec.v_t.ok_or_else(|| Error::Numerical("SVD missing V".into()))?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]));
    let mut u_sorted = Mat::zeros(m, k);
    let mut v_sorted = Mat::zeros(n, k);
    let mut sv = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u_thin.column(src));
        v_sorted.set_column(dst, &vt_thin.row(src).transpose());
        sv.push(dec.singular_values[src]);
    }
    Ok(Svd {
        u: complete_orthonormal(&u_sorted),
        singular_values: sv,
        v: complete_orthonormal(&v_sorted),
    })
}

/// Extends orthonormal columns to a square orthogonal matrix using
/// Gram–Schmidt against the canonical basis.
fn complete_orthonormal(q: &Mat) -> Mat {
    let (m, k) = q.shape();
    let mut out = Mat::zeros(m, m);
    for j in 0..k {
        out.set_column(j, &q.column(j));
    }
    let mut filled = k;
    for e in 0..m {
        if filled == m {
            break;
        }
        let mut cand = nalgebra::DVector::<f64>::zeros(m);
        cand[e] = 1.0;
        for _ in 0..2 {
            for j in 0..filled {
                let col = out.column(j).into_owned();
                let d = col.dot(&cand);
                cand -= col * d;
            }
        }
        let nrm = cand.norm();
        if nrm > 1e-8 {
            out.set_column(filled, &(cand / nrm));
            filled += 1;
        }
    }
    out
}

/// Solves `A X + X Aᵀ + Q = 0` through the Kronecker system
/// `(I ⊗ A + A ⊗ I) vec(X) = −vec(Q)`. Practical up to n ≈ 30.
pub fn solve_lyapunov(a: &Mat, q: &SymMat) -> Result<SymMat> {
    if !a.is_square() || a.nrows() != q.dim() {
        return Err(Error::dim(format!(
            "Lyapunov operands {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            q.dim(),
            q.dim()
        )));
    }
    let n = a.nrows();
    let nn = n * n;
    let mut k = Mat::zeros(nn, nn);
    // column-major vec: vec(AX) = (I ⊗ A) vec X, vec(XAᵀ) = (A ⊗ I) vec X
    for blk in 0..n {
        for i in 0..n {
            for j in 0..n {
                k[(blk * n + i, blk * n + j)] += a[(i, j)];
            }
        }
    }
    for bi in 0..n {
        for bj in 0..n {
            let aij = a[(bi, bj)];
            if aij == 0.0 {
                continue;
            }
            for d in 0..n {
                k[(bi * n + d, bj * n + d)] += aij;
            }
        }
    }
    let rhs = nalgebra::DVector::from_iterator(nn, q.as_mat().iter().map(|v| -v));
    let lu = k.full_piv_lu();
    let u = lu.u();
    let (mut dmax, mut dmin) = (0.0f64, f64::INFINITY);
    for i in 0..nn {
        let d = u[(i, i)].abs();
        dmax = dmax.max(d);
        dmin = dmin.min(d);
    }
    if nn > 0 && (dmax == 0.0 || dmin <= 1e-12 * dmax) {
        return Err(Error::NoUniqueSolution(
            "Kronecker Lyapunov system is singular".into(),
        ));
    }
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::NoUniqueSolution("Kronecker Lyapunov system is singular".into()))?;
    let xm = Mat::from_column_slice(n, n, x.as_slice());
    Ok(SymMat::symmetrize(&xm))
}

/// Lyapunov-based Hurwitz test: `A X + X Aᵀ + I = 0` has a positive definite solution.
pub fn is_hurwitz(a: &Mat) -> bool {
    hurwitz_certificate(a).is_ok()
}

/// Returns the Lyapunov solution certifying stability, or the reason the test failed.
pub fn hurwitz_certificate(a: &Mat) -> Result<SymMat> {
    if !a.is_square() {
        return Err(Error::dim("Hurwitz test needs a square matrix"));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite system matrix".into()));
    }
    let x = solve_lyapunov(a, &SymMat::identity(a.nrows()))?;
    let class = classify_psd(&x, DEFAULT_TOL * x.as_mat().norm().max(1.0))?;
    if class.kind == Definiteness::PositiveDefinite {
        Ok(x)
    } else {
        Err(Error::Domain(format!(
            "Lyapunov solution not positive definite (min eigenvalue {:.3e})",
            class.min_eigenvalue
        )))
    }
}

/// Principal square root of a PSD matrix.
pub fn sym_sqrt(s: &SymMat) -> Result<SymMat> {
    let tol = DEFAULT_TOL * s.as_mat().norm().max(1.0);
    let e = sym_eigen(s)?;
    if e.values.first().is_some_and(|&m| m < -tol) {
        return Err(Error::Domain(
            "square root of an indefinite matrix".into(),
        ));
    }
    let d: Vec<f64> = e.values.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(SymMat::symmetrize(&reassemble(&e.vectors, &d)))
}

/// `V diag(d) Vᵀ`.
pub fn reassemble(v: &Mat, d: &[f64]) -> Mat {
    let mut scaled = v.clone();
    for (j, dj) in d.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*dj);
    }
    scaled * v.transpose()
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Solves `M x = rhs` for square `M`, erroring on (near) singularity.
pub fn solve(m: &Mat, rhs: &Mat) -> Result<Mat> {
    if !m.is_square() || m.nrows() != rhs.nrows() {
        return Err(Error::dim("linear solve operand shapes"));
    }
    let lu = m.clone().full_piv_lu();
    let u = lu.u();
    let n = m.nrows();
    let (mut dmax, mut dmin) = (0.0f64, f64::INFINITY);
    for i in 0..n {
        let d = u[(i, i)].abs();
        dmax = dmax.max(d);
        dmin = dmin.min(d);
    }
    if n > 0 && (dmax == 0.0 || dmin <= 1e-14 * dmax) {
        return Err(Error::Numerical("singular linear system".into()));
    }
    lu.solve(rhs)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}
