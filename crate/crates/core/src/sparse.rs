//! Compressed-row complex matrices and the handful of dense/sparse kernels
//! the propagators need.
//!
//! Dense operands are square row-major slices of length `n * n`. "Lane"
//! blocks are row-major `n × lanes` slices holding several state vectors side
//! by side, so one pass over the sparsity pattern advances every lane.

use std::collections::BTreeSet;

use ndarray::Array2;
use num_complex::Complex64 as C64;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseOp {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOp {
    pub fn from_dense(m: &Array2<C64>) -> Self {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "sparse operators are square");
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = m[[i, j]];
                if v.re != 0.0 || v.im != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn values(&self) -> &[C64] {
        &self.vals
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.vals
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[[i, self.cols[p]]] = self.vals[p];
            }
        }
        m
    }

    #[inline]
    fn row(&self, i: usize) -> (&[usize], &[C64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[C64], y: &mut [C64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let (cols, vals) = self.row(i);
            let mut acc = C64::new(0.0, 0.0);
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            *yi = acc;
        }
    }

    /// `⟨x|A|y⟩`.
    pub fn sandwich(&self, x: &[C64], y: &[C64]) -> C64 {
        let mut total = C64::new(0.0, 0.0);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = C64::new(0.0, 0.0);
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * y[c];
            }
            total += x[i].conj() * acc;
        }
        total
    }

    /// `tr(A X)` for dense row-major `X`.
    pub fn trace_product(&self, x: &[C64]) -> C64 {
        let n = self.n;
        let mut total = C64::new(0.0, 0.0);
        for i in 0..n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                total += v * x[c * n + i];
            }
        }
        total
    }

    /// `out += A X` with `X`, `out` dense row-major `n × n`.
    pub fn left_mul_add(&self, x: &[C64], out: &mut [C64]) {
        let n = self.n;
        for i in 0..n {
            let (cols, vals) = self.row(i);
            let out_row = &mut out[i * n..(i + 1) * n];
            for (&c, &v) in cols.iter().zip(vals) {
                let x_row = &x[c * n..(c + 1) * n];
                for (o, &xv) in out_row.iter_mut().zip(x_row) {
                    *o += v * xv;
                }
            }
        }
    }

    /// `out += X A†` with `X`, `out` dense row-major `n × n`.
    pub fn right_adjoint_mul_add(&self, x: &[C64], out: &mut [C64]) {
        let n = self.n;
        for i in 0..n {
            let x_row = &x[i * n..(i + 1) * n];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (k, o) in out_row.iter_mut().enumerate() {
                let (cols, vals) = self.row(k);
                let mut acc = C64::new(0.0, 0.0);
                for (&c, &v) in cols.iter().zip(vals) {
                    acc += x_row[c] * v.conj();
                }
                *o += acc;
            }
        }
    }

    /// `out += A X` on a lane block (`n × lanes`).
    pub fn lanes_mul_add(&self, x: &[C64], out: &mut [C64], lanes: usize) {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let out_row = &mut out[i * lanes..(i + 1) * lanes];
            for (&c, &v) in cols.iter().zip(vals) {
                let x_row = &x[c * lanes..(c + 1) * lanes];
                for (o, &xv) in out_row.iter_mut().zip(x_row) {
                    *o += v * xv;
                }
            }
        }
    }

    /// `out += diag(s) (A X)` where each lane `l` is scaled by `s[l]`.
    pub fn lanes_scaled_mul_add(&self, x: &[C64], scale: &[C64], out: &mut [C64], lanes: usize) {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let out_row = &mut out[i * lanes..(i + 1) * lanes];
            for (&c, &v) in cols.iter().zip(vals) {
                let x_row = &x[c * lanes..(c + 1) * lanes];
                for ((o, &xv), &s) in out_row.iter_mut().zip(x_row).zip(scale) {
                    *o += s * (v * xv);
                }
            }
        }
    }
}

/// Complex row-major data split into real and imaginary planes. The split
/// layout lets the inner loops vectorise, roughly doubling kernel throughput
/// over interleaved `Complex64`.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Planes {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Planes {
    pub fn zeros(len: usize) -> Self {
        Self {
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }

    pub fn from_complex(x: &[C64]) -> Self {
        let mut p = Self::zeros(x.len());
        p.load(x);
        p
    }

    pub fn load(&mut self, x: &[C64]) {
        for ((r, i), v) in self.re.iter_mut().zip(self.im.iter_mut()).zip(x) {
            *r = v.re;
            *i = v.im;
        }
    }

    pub fn store(&self, out: &mut [C64]) {
        for ((o, &r), &i) in out.iter_mut().zip(&self.re).zip(&self.im) {
            *o = C64::new(r, i);
        }
    }

    pub fn fill_zero(&mut self) {
        self.re.fill(0.0);
        self.im.fill(0.0);
    }
}

impl SparseOp {
    /// `out += A X` where `X`, `out` are row-major with `width` columns.
    pub(crate) fn planes_mul_add(&self, x: &Planes, out: &mut Planes, width: usize) {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let span = i * width..(i + 1) * width;
            let (ore, oim) = (&mut out.re[span.clone()], &mut out.im[span]);
            for (&c, &v) in cols.iter().zip(vals) {
                let span = c * width..(c + 1) * width;
                let (xre, xim) = (&x.re[span.clone()], &x.im[span]);
                let (vr, vi) = (v.re, v.im);
                for (((or, oi), &xr), &xi) in ore.iter_mut().zip(oim.iter_mut()).zip(xre).zip(xim) {
                    *or += vr * xr - vi * xi;
                    *oi += vr * xi + vi * xr;
                }
            }
        }
    }

    /// `out += diag(s) (A X)` on a planar lane block.
    pub(crate) fn planes_scaled_mul_add(&self, x: &Planes, s: &Planes, out: &mut Planes, lanes: usize) {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let span = i * lanes..(i + 1) * lanes;
            let (ore, oim) = (&mut out.re[span.clone()], &mut out.im[span]);
            for (&c, &v) in cols.iter().zip(vals) {
                let span = c * lanes..(c + 1) * lanes;
                let (xre, xim) = (&x.re[span.clone()], &x.im[span]);
                let (vr, vi) = (v.re, v.im);
                let it = ore.iter_mut().zip(oim.iter_mut()).zip(xre.iter().zip(xim)).zip(s.re.iter().zip(&s.im));
                for (((or, oi), (&xr, &xi)), (&sr, &si)) in it {
                    let tr = vr * xr - vi * xi;
                    let ti = vr * xi + vi * xr;
                    *or += sr * tr - si * ti;
                    *oi += sr * ti + si * tr;
                }
            }
        }
    }

    /// `out += X A†` for square planar `X`, `out`.
    pub(crate) fn planes_right_adjoint_mul_add(&self, x: &Planes, out: &mut Planes) {
        let n = self.n;
        for i in 0..n {
            let span = i * n..(i + 1) * n;
            let (xre, xim) = (&x.re[span.clone()], &x.im[span.clone()]);
            let (ore, oim) = (&mut out.re[span.clone()], &mut out.im[span]);
            for k in 0..n {
                let (cols, vals) = self.row(k);
                let (mut ar, mut ai) = (0.0, 0.0);
                for (&c, &v) in cols.iter().zip(vals) {
                    // x · conj(v)
                    ar += xre[c] * v.re + xim[c] * v.im;
                    ai += xim[c] * v.re - xre[c] * v.im;
                }
                ore[k] += ar;
                oim[k] += ai;
            }
        }
    }
}

/// A fixed sparsity pattern carrying `base + Σ_j c_j · term_j`, so that
/// time-dependent operators can be reassembled without reallocating.
#[derive(Clone, Debug)]
pub struct OpCombo {
    pattern: SparseOp,
    base: Vec<C64>,
    terms: Vec<Vec<C64>>,
}

impl OpCombo {
    pub fn new(base: &Array2<C64>, terms: &[Array2<C64>]) -> Self {
        let n = base.nrows();
        let mut entries: BTreeSet<(usize, usize)> = BTreeSet::new();
        for m in std::iter::once(base).chain(terms.iter()) {
            assert_eq!(m.dim(), (n, n));
            for ((i, j), v) in m.indexed_iter() {
                if v.re != 0.0 || v.im != 0.0 {
                    entries.insert((i, j));
                }
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        for &(i, j) in &entries {
            row_ptr[i + 1] += 1;
            cols.push(j);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let gather = |m: &Array2<C64>| entries.iter().map(|&(i, j)| m[[i, j]]).collect::<Vec<_>>();
        let base_vals = gather(base);
        let term_vals = terms.iter().map(gather).collect();
        let pattern = SparseOp {
            n,
            row_ptr,
            cols,
            vals: base_vals.clone(),
        };
        Self {
            pattern,
            base: base_vals,
            terms: term_vals,
        }
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Writes `base + Σ coeffs[j]·term_j` into `out`, which must come from
    /// [`OpCombo::blank`].
    pub fn assemble_into(&self, coeffs: &[C64], out: &mut SparseOp) {
        debug_assert_eq!(coeffs.len(), self.terms.len());
        let vals = out.values_mut();
        vals.copy_from_slice(&self.base);
        for (c, term) in coeffs.iter().zip(&self.terms) {
            for (v, &t) in vals.iter_mut().zip(term) {
                *v += c * t;
            }
        }
    }

    pub fn blank(&self) -> SparseOp {
        self.pattern.clone()
    }

    pub fn assemble(&self, coeffs: &[C64]) -> SparseOp {
        let mut out = self.blank();
        self.assemble_into(coeffs, &mut out);
        out
    }
}
