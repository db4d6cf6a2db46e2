use nalgebra::{DMatrix, DVector};

use super::{check_finite, gaussian_matrix, relu, relu_grad, AggregatedInput};
use crate::error::{MdError, Result};
use crate::rng::Rng;

/// f(z) = v^T ReLU(W z) with W: D x d and v: D.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w: DMatrix<f64>,
    pub v: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpForward {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: f64,
}

impl MlpParams {
    pub fn new(w: DMatrix<f64>, v: DVector<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.nrows() != v.len() {
            return Err(MdError::DimensionMismatch(format!(
                "W is {}x{}, v has {}",
                w.nrows(),
                w.ncols(),
                v.len()
            )));
        }
        check_finite("W", w.as_slice())?;
        check_finite("v", v.as_slice())?;
        Ok(Self { w, v })
    }

    pub fn zeros(width: usize, d: usize) -> Self {
        Self {
            w: DMatrix::zeros(width, d),
            v: DVector::zeros(width),
        }
    }

    /// W ~ N(0, scale^2/d), v ~ N(0, scale^2/D). `scale = 1` is the default initialization.
    pub fn init(width: usize, d: usize, scale: f64, rng: &mut Rng) -> Self {
        let w = gaussian_matrix(width, d, scale / (d as f64).sqrt(), rng);
        let v = gaussian_matrix(width, 1, scale / (width as f64).sqrt(), rng);
        Self {
            w,
            v: v.column(0).into_owned(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.width(), self.input_dim())
    }

    pub fn width(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice(), self.v.as_slice()]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), self.v.as_mut_slice()]
    }

    fn finish(&self, pre: Vec<f64>) -> MlpForward {
        let hidden: Vec<f64> = pre.iter().map(|&p| relu(p)).collect();
        let output = hidden.iter().zip(self.v.iter()).map(|(h, v)| h * v).sum();
        MlpForward {
            pre,
            hidden,
            output,
        }
    }

    /// Forward pass on a sum of one-hot rows.
    pub fn forward(&self, z: &AggregatedInput) -> Result<MlpForward> {
        self.check_dim(z.d())?;
        let width = self.width();
        let mut pre = vec![0.0; width];
        for &r in z.active() {
            let col = &self.w.as_slice()[r * width..(r + 1) * width];
            pre.iter_mut().zip(col).for_each(|(p, w)| *p += w);
        }
        Ok(self.finish(pre))
    }

    /// Forward pass on an arbitrary dense input.
    pub fn forward_dense(&self, z: &DVector<f64>) -> Result<MlpForward> {
        self.check_dim(z.len())?;
        Ok(self.finish((&self.w * z).as_slice().to_vec()))
    }

    /// Hidden features ReLU(W z).
    pub fn hidden(&self, z: &AggregatedInput) -> Result<Vec<f64>> {
        Ok(self.forward(z)?.hidden)
    }

    /// Adds `upstream * d f / d theta` into `grads`.
    pub fn backward(
        &self,
        z: &AggregatedInput,
        fwd: &MlpForward,
        upstream: f64,
        grads: &mut MlpParams,
    ) -> Result<()> {
        self.check_dim(z.d())?;
        self.check_grads(grads)?;
        if upstream == 0.0 {
            return Ok(());
        }
        let width = self.width();
        for (g, h) in grads.v.iter_mut().zip(&fwd.hidden) {
            *g += upstream * h;
        }
        let dpre: Vec<f64> = (0..width)
            .map(|i| upstream * self.v[i] * relu_grad(fwd.pre[i]))
            .collect();
        let gw = grads.w.as_mut_slice();
        for &r in z.active() {
            gw[r * width..(r + 1) * width]
                .iter_mut()
                .zip(&dpre)
                .for_each(|(g, d)| *g += d);
        }
        Ok(())
    }

    pub fn backward_dense(
        &self,
        z: &DVector<f64>,
        fwd: &MlpForward,
        upstream: f64,
        grads: &mut MlpParams,
    ) -> Result<()> {
        self.check_dim(z.len())?;
        self.check_grads(grads)?;
        let width = self.width();
        let dpre = DVector::from_iterator(
            width,
            (0..width).map(|i| upstream * self.v[i] * relu_grad(fwd.pre[i])),
        );
        grads.v += DVector::from_column_slice(&fwd.hidden) * upstream;
        grads.w += dpre * z.transpose();
        Ok(())
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.input_dim() {
            return Err(MdError::DimensionMismatch(format!(
                "input has dimension {d}, W expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_grads(&self, grads: &MlpParams) -> Result<()> {
        if grads.w.shape() != self.w.shape() || grads.v.len() != self.v.len() {
            return Err(MdError::DimensionMismatch(
                "gradient buffer shape differs from parameters".into(),
            ));
        }
        Ok(())
    }
}
