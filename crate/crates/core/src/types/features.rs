use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::Tensor;

/// Tolerance on the L2 norm of every patch vector.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// Grid of unit-norm patch features stored as a `grid_h × grid_w × dim` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<F = f32> {
    grid_h: usize,
    grid_w: usize,
    dim: usize,
    vectors: Tensor<F>,
}

impl<F: Scalar> FeatureMap<F> {
    /// Validates shape and unit norm. Vectors are never renormalized here.
    pub fn new(vectors: Tensor<F>) -> Result<Self> {
        let fm = Self::from_tensor_unchecked(vectors)?;
        if let Some((r, c, norm)) = fm.first_non_unit() {
            return Err(Error::Shape(format!(
                "patch ({r}, {c}) has norm {norm:.6}, expected 1 ± {UNIT_NORM_TOL}"
            )));
        }
        Ok(fm)
    }

    pub(crate) fn from_tensor_unchecked(vectors: Tensor<F>) -> Result<Self> {
        let [grid_h, grid_w, dim] = *vectors.dims() else {
            return Err(Error::Shape(format!(
                "feature tensor must be grid_h×grid_w×dim, got {:?}",
                vectors.dims()
            )));
        };
        Ok(Self {
            grid_h,
            grid_w,
            dim,
            vectors,
        })
    }

    /// Normalizes each row of a raw `grid_h × grid_w × dim` tensor.
    pub fn normalized(raw: Tensor<F>) -> Result<Self> {
        let mut fm = Self::from_tensor_unchecked(raw)?;
        let dim = fm.dim;
        let gw = fm.grid_w;
        for (i, v) in fm.vectors.data_mut().chunks_exact_mut(dim).enumerate() {
            let norm = v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::DegenerateFeature(i / gw, i % gw));
            }
            for x in v.iter_mut() {
                *x = F::lit(x.as_f64() / norm);
            }
        }
        Ok(fm)
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.vectors
    }

    /// Patch vector by flat index `gr * grid_w + gc`.
    #[inline]
    pub fn vector(&self, index: usize) -> &[F] {
        &self.vectors.data()[index * self.dim..(index + 1) * self.dim]
    }

    #[inline]
    pub fn at(&self, gr: usize, gc: usize) -> &[F] {
        self.vector(gr * self.grid_w + gc)
    }

    /// First patch whose norm is off by more than the tolerance.
    pub fn first_non_unit(&self) -> Option<(usize, usize, f64)> {
        (0..self.num_patches()).find_map(|i| {
            let norm = self
                .vector(i)
                .iter()
                .map(|x| x.as_f64() * x.as_f64())
                .sum::<f64>()
                .sqrt();
            ((norm - 1.0).abs() > UNIT_NORM_TOL || !norm.is_finite())
                .then_some((i / self.grid_w, i % self.grid_w, norm))
        })
    }

    pub fn cast<G: Scalar>(&self) -> FeatureMap<G> {
        FeatureMap {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            dim: self.dim,
            vectors: self.vectors.cast(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(Tensor::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.vectors.save(path)
    }
}
