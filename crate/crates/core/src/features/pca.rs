use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{shape_err, Error, Result};
use crate::ndcore::Tensor;
use crate::scalar::Scalar;

/// Principal components of a data matrix, no whitening.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Vec<T>,
    /// `d_out × d_in`, orthonormal rows in order of decreasing variance.
    pub components: Tensor<T>,
    /// Sample variance (denominator `n − 1`) along each component.
    pub explained_variance: Vec<T>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![T::zero(); dim], components: Tensor::identity(dim), explained_variance: vec![T::one(); dim] }
    }

    pub fn input_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    /// Fits by eigendecomposition of the covariance matrix.
    ///
    /// Each component is sign-fixed so its largest-magnitude entry is positive.
    pub fn fit(x: &Tensor<T>, d_out: usize) -> Result<Self> {
        let (n, d_in) = x.shape();
        if d_out == 0 || d_out > n.min(d_in) {
            return Err(Error::Parameter(format!(
                "cannot extract {d_out} components from {n} rows of dimension {d_in}"
            )));
        }
        let mut mean = vec![0.0f64; d_in];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = DMatrix::<f64>::zeros(d_in, d_in);
        let mut centered = vec![0.0f64; d_in];
        for row in x.iter_rows() {
            for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
                *c = v.as_f64() - m;
            }
            for i in 0..d_in {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                for j in i..d_in {
                    cov[(i, j)] += ci * centered[j];
                }
            }
        }
        let denom = (n.max(2) - 1) as f64;
        for i in 0..d_in {
            for j in i..d_in {
                let v = cov[(i, j)] / denom;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d_in).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

        let mut components = Tensor::zeros(d_out, d_in);
        let mut explained_variance = Vec::with_capacity(d_out);
        for (k, &idx) in order.iter().take(d_out).enumerate() {
            let col = eig.eigenvectors.column(idx);
            let pivot = (0..d_in).fold(0, |best, i| if col[i].abs() > col[best].abs() { i } else { best });
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..d_in {
                components.set(k, i, T::lit(sign * col[i]));
            }
            explained_variance.push(T::lit(eig.eigenvalues[idx].max(0.0)));
        }
        Ok(Self { mean: mean.into_iter().map(T::lit).collect(), components, explained_variance })
    }

    pub fn transform(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(shape_err!("PCA expects {} inputs, got {}", self.input_dim(), x.len()));
        }
        let centered: Vec<T> = x.iter().zip(&self.mean).map(|(&v, &m)| v - m).collect();
        Ok(self.components.iter_rows().map(|c| T::dot(c, &centered)).collect())
    }

    pub fn transform_rows(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let rows = x.iter_rows().map(|r| self.transform(r)).collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Tensor::zeros(0, self.output_dim()));
        }
        Tensor::from_rows(&rows)
    }

    /// Maps reduced coordinates back to the input space.
    pub fn inverse_transform(&self, z: &[T]) -> Result<Vec<T>> {
        if z.len() != self.output_dim() {
            return Err(shape_err!("PCA inverse expects {} coordinates, got {}", self.output_dim(), z.len()));
        }
        let mut out = self.mean.clone();
        for (c, &zi) in self.components.iter_rows().zip(z) {
            T::axpy(zi, c, &mut out);
        }
        Ok(out)
    }
}
