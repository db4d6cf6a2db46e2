use nalgebra::{DMatrix, DVector};

use super::{check_finite, gaussian_matrix, relu, relu_grad, EmbeddingSpec};
use crate::error::{MdError, Result};
use crate::masking::CorruptedSequence;
use crate::rng::Rng;

/// Readout applied to the hidden features of each query column.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// Scalar output v^T h.
    Scalar(DVector<f64>),
    /// Vocabulary logits V h with V: vocab x D.
    Vocab(DMatrix<f64>),
}

impl Head {
    pub fn out_dim(&self) -> usize {
        match self {
            Head::Scalar(_) => 1,
            Head::Vocab(m) => m.nrows(),
        }
    }

    fn width(&self) -> usize {
        match self {
            Head::Scalar(v) => v.len(),
            Head::Vocab(m) => m.ncols(),
        }
    }
}

/// Input matrix X (d x n) whose column i is the sum of the unit vectors listed in `cols[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseColumns {
    d: usize,
    cols: Vec<Vec<usize>>,
}

impl SparseColumns {
    pub fn new(d: usize, cols: Vec<Vec<usize>>) -> Result<Self> {
        for c in &cols {
            if let Some(&r) = c.iter().find(|&&r| r >= d) {
                return Err(MdError::IndexOutOfRange { index: r, len: d });
            }
        }
        Ok(Self { d, cols })
    }

    /// One-hot embedding of a corrupted parity sequence.
    pub fn from_corrupted(x: &CorruptedSequence, spec: &EmbeddingSpec) -> Result<Self> {
        let rows = spec.active_rows(x)?;
        Ok(Self {
            d: spec.d(),
            cols: rows.into_iter().map(|r| vec![r]).collect(),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn column(&self, i: usize) -> &[usize] {
        &self.cols[i]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.d, self.cols.len());
        for (i, c) in self.cols.iter().enumerate() {
            for &r in c {
                m[(r, i)] += 1.0;
            }
        }
        m
    }
}

/// tf(X)_q = head(ReLU(W X softmax(X^T A X)_{:,q})), softmax taken over each column.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub w: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub head: Head,
}

/// Activations of a forward pass restricted to a set of query columns.
///
/// Matrices hold one column per query, in query order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerForward {
    pub queries: Vec<usize>,
    /// W X, D x n.
    wx: DMatrix<f64>,
    /// softmax(X^T A X) restricted to the query columns, n x |Q|.
    pub attention: DMatrix<f64>,
    pre: DMatrix<f64>,
    hidden: DMatrix<f64>,
    /// Head outputs, out_dim x |Q| (out_dim is 1 for the scalar head).
    pub outputs: DMatrix<f64>,
}

impl TransformerForward {
    pub fn scalar_outputs(&self) -> Vec<f64> {
        self.outputs.row(0).iter().copied().collect()
    }

    /// Head output for the `qi`-th query.
    pub fn output(&self, qi: usize) -> &[f64] {
        let r = self.outputs.nrows();
        &self.outputs.as_slice()[qi * r..(qi + 1) * r]
    }

    pub fn hidden(&self) -> &DMatrix<f64> {
        &self.hidden
    }
}

impl TransformerParams {
    pub fn new(w: DMatrix<f64>, a: DMatrix<f64>, head: Head) -> Result<Self> {
        let (width, d) = w.shape();
        if width == 0 || a.shape() != (d, d) || head.width() != width {
            return Err(MdError::DimensionMismatch(format!(
                "W {}x{}, A {}x{}, head width {}",
                width,
                d,
                a.nrows(),
                a.ncols(),
                head.width()
            )));
        }
        let p = Self { w, a, head };
        for t in p.tensors() {
            check_finite("transformer parameters", t)?;
        }
        Ok(p)
    }

    /// W ~ N(0, scale^2/d), readout ~ N(0, scale^2/D), A = 0.
    pub fn init(width: usize, d: usize, vocab: Option<usize>, scale: f64, rng: &mut Rng) -> Self {
        let w = gaussian_matrix(width, d, scale / (d as f64).sqrt(), rng);
        let std_out = scale / (width as f64).sqrt();
        let head = match vocab {
            None => Head::Scalar(
                gaussian_matrix(width, 1, std_out, rng)
                    .column(0)
                    .into_owned(),
            ),
            Some(v) => Head::Vocab(gaussian_matrix(v, width, std_out, rng)),
        };
        Self {
            w,
            a: DMatrix::zeros(d, d),
            head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let head = match &self.head {
            Head::Scalar(v) => Head::Scalar(DVector::zeros(v.len())),
            Head::Vocab(m) => Head::Vocab(DMatrix::zeros(m.nrows(), m.ncols())),
        };
        Self {
            w: DMatrix::zeros(self.w.nrows(), self.w.ncols()),
            a: DMatrix::zeros(self.a.nrows(), self.a.ncols()),
            head,
        }
    }

    pub fn width(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let head = match &self.head {
            Head::Scalar(v) => v.as_slice(),
            Head::Vocab(m) => m.as_slice(),
        };
        vec![self.w.as_slice(), head, self.a.as_slice()]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let head = match &mut self.head {
            Head::Scalar(v) => v.as_mut_slice(),
            Head::Vocab(m) => m.as_mut_slice(),
        };
        vec![self.w.as_mut_slice(), head, self.a.as_mut_slice()]
    }

    /// Attention logit x_i^T A x_q.
    fn logit(&self, x: &SparseColumns, i: usize, q: usize) -> f64 {
        let mut s = 0.0;
        for &b in x.column(q) {
            for &a in x.column(i) {
                s += self.a[(a, b)];
            }
        }
        s
    }

    /// Forward pass evaluated at the given 0-based query columns.
    pub fn forward(&self, x: &SparseColumns, queries: &[usize]) -> Result<TransformerForward> {
        if x.d() != self.input_dim() {
            return Err(MdError::DimensionMismatch(format!(
                "input dimension {} vs W {}",
                x.d(),
                self.input_dim()
            )));
        }
        let n = x.len();
        if let Some(&q) = queries.iter().find(|&&q| q >= n) {
            return Err(MdError::IndexOutOfRange { index: q, len: n });
        }
        let width = self.width();
        let ws = self.w.as_slice();
        let mut wx = DMatrix::zeros(width, n);
        for (i, mut col) in wx.column_iter_mut().enumerate() {
            for &r in x.column(i) {
                col.iter_mut()
                    .zip(&ws[r * width..(r + 1) * width])
                    .for_each(|(o, w)| *o += w);
            }
        }

        let mut attention = DMatrix::zeros(n, queries.len());
        for (qi, &q) in queries.iter().enumerate() {
            let mut s = attention.column_mut(qi);
            for i in 0..n {
                s[i] = self.logit(x, i, q);
            }
            let max = s.max();
            s.apply(|v| *v = (*v - max).exp());
            let z = s.sum();
            s /= z;
        }
        let pre = &wx * &attention;
        let hidden = pre.map(relu);
        let outputs = match &self.head {
            Head::Scalar(v) => {
                DMatrix::from_row_slice(1, hidden.ncols(), v.tr_mul(&hidden).as_slice())
            }
            Head::Vocab(m) => m * &hidden,
        };
        Ok(TransformerForward {
            queries: queries.to_vec(),
            wx,
            attention,
            pre,
            hidden,
            outputs,
        })
    }

    /// Scalar output at every column.
    pub fn forward_all(&self, x: &SparseColumns) -> Result<Vec<f64>> {
        let queries: Vec<usize> = (0..x.len()).collect();
        Ok(self.forward(x, &queries)?.scalar_outputs())
    }

    /// Adds the gradient of `sum_q upstream[q] . outputs[q]` into `grads`.
    ///
    /// `upstream` is flat with `out_dim` entries per query, in query order.
    pub fn backward(
        &self,
        x: &SparseColumns,
        fwd: &TransformerForward,
        upstream: &[f64],
        grads: &mut TransformerParams,
    ) -> Result<()> {
        let out_dim = self.head.out_dim();
        let nq = fwd.queries.len();
        if upstream.len() != nq * out_dim {
            return Err(MdError::LengthMismatch {
                expected: nq * out_dim,
                actual: upstream.len(),
            });
        }
        if grads.w.shape() != self.w.shape()
            || grads.a.shape() != self.a.shape()
            || grads.head.out_dim() != out_dim
        {
            return Err(MdError::DimensionMismatch(
                "gradient buffer shape differs from parameters".into(),
            ));
        }
        if nq == 0 {
            return Ok(());
        }
        let g = DMatrix::from_column_slice(out_dim, nq, upstream);
        let mut du = match (&self.head, &mut grads.head) {
            (Head::Scalar(v), Head::Scalar(gv)) => {
                gv.gemv(1.0, &fwd.hidden, &g.row(0).transpose(), 1.0);
                v * g.row(0)
            }
            (Head::Vocab(m), Head::Vocab(gm)) => {
                gm.gemm(1.0, &g, &fwd.hidden.transpose(), 1.0);
                m.tr_mul(&g)
            }
            _ => {
                return Err(MdError::DimensionMismatch(
                    "gradient head kind differs".into(),
                ))
            }
        };
        du.zip_apply(&fwd.pre, |d, p| *d *= relu_grad(p));

        let dwx = &du * fwd.attention.transpose();
        let ds = fwd.wx.tr_mul(&du);
        for (qi, &q) in fwd.queries.iter().enumerate() {
            let s = fwd.attention.column(qi);
            let dsq = ds.column(qi);
            let mean = s.dot(&dsq);
            for i in 0..x.len() {
                let dl = s[i] * (dsq[i] - mean);
                if dl == 0.0 {
                    continue;
                }
                for &b in x.column(q) {
                    for &a in x.column(i) {
                        grads.a[(a, b)] += dl;
                    }
                }
            }
        }
        let width = self.width();
        let gw = grads.w.as_mut_slice();
        for (i, row) in dwx.column_iter().enumerate() {
            for &r in x.column(i) {
                gw[r * width..(r + 1) * width]
                    .iter_mut()
                    .zip(row.iter())
                    .for_each(|(o, d)| *o += d);
            }
        }
        Ok(())
    }
}
