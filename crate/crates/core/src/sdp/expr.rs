//! Matrix-valued variables and affine matrix expressions over their scalars.

use std::collections::BTreeMap;

use crate::linalg::Mat;

/// Handle to a matrix variable inside an [`super::SdpProblem`].
///
/// Symmetric variables own one scalar per upper-triangular entry; general
/// variables own one scalar per entry (row-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatVar {
    pub(crate) offset: usize,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) symmetric: bool,
}

impl MatVar {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn scalar_count(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    /// Global scalar indices with their `(row, col)` position (`row ≤ col`
    /// for symmetric variables).
    pub fn scalars(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.scalar_count());
        let mut k = self.offset;
        for i in 0..self.rows {
            let start = if self.symmetric { i } else { 0 };
            for j in start..self.cols {
                out.push((k, i, j));
                k += 1;
            }
        }
        out
    }

    /// Global scalar index of entry `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        assert!(i < self.rows && j < self.cols, "entry out of range");
        if self.symmetric {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            // rows before `a` hold n, n-1, ..., n-a+1 entries
            self.offset + a * self.rows - a * a.saturating_sub(1) / 2 + (b - a)
        } else {
            self.offset + i * self.cols + j
        }
    }

    /// Reads the variable's value from a scalar vector.
    pub fn value(&self, x: &[f64]) -> Mat {
        let mut m = Mat::zeros(self.rows, self.cols);
        for (k, i, j) in self.scalars() {
            m[(i, j)] = x[k];
            if self.symmetric {
                m[(j, i)] = x[k];
            }
        }
        m
    }

    /// Writes a matrix into a scalar vector (upper triangle for symmetric).
    pub fn write(&self, x: &mut [f64], m: &Mat) {
        for (k, i, j) in self.scalars() {
            x[k] = m[(i, j)];
        }
    }
}

/// `constant + Σ_k x_k · coeffs[k]`, with dense coefficient matrices keyed by
/// global scalar index.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMat {
    pub(crate) constant: Mat,
    pub(crate) terms: BTreeMap<usize, Mat>,
}

impl AffineMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AffineMat {
            constant: Mat::zeros(rows, cols),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(m: Mat) -> Self {
        AffineMat {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn from_var(v: &MatVar) -> Self {
        let mut e = AffineMat::zeros(v.rows, v.cols);
        let li = Mat::identity(v.rows, v.rows);
        let ri = Mat::identity(v.cols, v.cols);
        e.add_product(&li, v, &ri, 1.0);
        e
    }

    pub fn rows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn cols(&self) -> usize {
        self.constant.ncols()
    }

    fn term_mut(&mut self, k: usize) -> &mut Mat {
        let (r, c) = self.constant.shape();
        self.terms.entry(k).or_insert_with(|| Mat::zeros(r, c))
    }

    /// Adds `scale · left · V · right`.
    pub fn add_product(&mut self, left: &Mat, v: &MatVar, right: &Mat, scale: f64) -> &mut Self {
        assert_eq!(left.ncols(), v.rows, "left factor shape");
        assert_eq!(right.nrows(), v.cols, "right factor shape");
        assert_eq!(left.nrows(), self.rows(), "product rows");
        assert_eq!(right.ncols(), self.cols(), "product cols");
        for (k, p, q) in v.scalars() {
            let mut contrib = left.column(p) * right.row(q);
            if v.symmetric && p != q {
                contrib += left.column(q) * right.row(p);
            }
            if contrib.iter().all(|c| *c == 0.0) {
                continue;
            }
            *self.term_mut(k) += contrib * scale;
        }
        self
    }

    /// Adds `scale · V` (shapes must match).
    pub fn add_var(&mut self, v: &MatVar, scale: f64) -> &mut Self {
        let li = Mat::identity(v.rows, v.rows);
        let ri = Mat::identity(v.cols, v.cols);
        self.add_product(&li, v, &ri, scale)
    }

    pub fn add_constant(&mut self, m: &Mat, scale: f64) -> &mut Self {
        self.constant += m * scale;
        self
    }

    pub fn add_expr(&mut self, other: &AffineMat, scale: f64) -> &mut Self {
        assert_eq!(self.constant.shape(), other.constant.shape(), "expression shapes");
        self.constant += &other.constant * scale;
        for (&k, m) in &other.terms {
            *self.term_mut(k) += m * scale;
        }
        self
    }

    pub fn transpose(&self) -> AffineMat {
        AffineMat {
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|(&k, m)| (k, m.transpose())).collect(),
        }
    }

    /// `self + selfᵀ`.
    pub fn plus_transpose(&self) -> AffineMat {
        let mut out = self.clone();
        out.add_expr(&self.transpose(), 1.0);
        out
    }

    /// Adds `scale · block` with its top-left corner at `(r0, c0)`.
    pub fn add_block(&mut self, block: &AffineMat, r0: usize, c0: usize, scale: f64) -> &mut Self {
        let shape = block.constant.shape();
        let mut v = self.constant.view_mut((r0, c0), shape);
        v += &block.constant * scale;
        for (&k, m) in &block.terms {
            let t = self.term_mut(k);
            let mut tv = t.view_mut((r0, c0), shape);
            tv += m * scale;
        }
        self
    }

    /// Evaluates the expression at a scalar vector.
    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (&k, m) in &self.terms {
            out += m * x[k];
        }
        out
    }

    pub fn max_scalar_index(&self) -> Option<usize> {
        self.terms.keys().next_back().copied()
    }
}
