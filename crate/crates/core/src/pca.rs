//! Small principal-component analysis via Jacobi eigendecomposition of the
//! covariance matrix, plus the RGB export used for positional-embedding
//! visualization.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Fitted principal components: row `k` of `components` is the k-th
/// component (unit vector), eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub components: Matrix,
    pub eigenvalues: Vec<f64>,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns), unsorted.
fn jacobi_eigen_symmetric(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 });
    let scale: f64 = m
        .data()
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for r in 0..n {
            for c in (r + 1)..n {
                off = off.max(m.get(r, c).abs());
            }
        }
        if off < 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let values = (0..n).map(|i| m.get(i, i)).collect();
    (values, v)
}

/// Fits the top-`k` principal components of row-sample data.
pub fn fit_pca(data: &Matrix, k: usize) -> Result<Pca> {
    let n = data.rows();
    let width = data.cols();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }
    if k == 0 || k > width {
        return Err(Error::InvalidConfig(format!(
            "cannot extract {k} components from width {width}"
        )));
    }
    let nf = n as f64;
    let mut mean = vec![0.0; width];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(data.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= nf;
    }
    // Covariance (population convention; scaling does not affect components).
    let mut cov = Matrix::zeros(width, width);
    for r in 0..n {
        let row = data.row(r);
        for i in 0..width {
            let di = row[i] - mean[i];
            for j in i..width {
                let dj = row[j] - mean[j];
                let v = cov.get(i, j) + di * dj / nf;
                cov.set(i, j, v);
                cov.set(j, i, v);
            }
        }
    }
    let (values, vectors) = jacobi_eigen_symmetric(&cov);
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    let components = Matrix::from_fn(k, width, |r, c| vectors.get(c, order[r]));
    let eigenvalues = order.iter().take(k).map(|&i| values[i]).collect();
    Ok(Pca {
        mean,
        components,
        eigenvalues,
    })
}

impl Pca {
    /// Projects rows onto the fitted components.
    pub fn transform(&self, data: &Matrix) -> Matrix {
        let k = self.components.rows();
        Matrix::from_fn(data.rows(), k, |r, c| {
            data.row(r)
                .iter()
                .zip(self.components.row(c))
                .zip(&self.mean)
                .map(|((x, w), m)| (x - m) * w)
                .sum()
        })
    }

    /// Squared Frobenius reconstruction error of the rank-`k` projection.
    pub fn reconstruction_error(&self, data: &Matrix) -> f64 {
        let scores = self.transform(data);
        let mut err = 0.0;
        for r in 0..data.rows() {
            for c in 0..data.cols() {
                let mut rec = self.mean[c];
                for k in 0..self.components.rows() {
                    rec += scores.get(r, k) * self.components.get(k, c);
                }
                let d = data.get(r, c) - rec;
                err += d * d;
            }
        }
        err
    }
}

/// PCA -> RGB export: projects each row onto the top three principal
/// components and min-max scales every component to [0, 1]. When fewer than
/// three informative components exist (rank deficiency), the missing
/// channels are padded with 0.5; `padded_channels` reports how many.
#[derive(Debug, Clone)]
pub struct PcaRgb {
    pub rgb: Vec<[f64; 3]>,
    pub padded_channels: usize,
}

pub fn pca_rgb(vectors: &Matrix) -> Result<PcaRgb> {
    if vectors.rows() < 4 {
        return Err(Error::InvalidConfig(format!(
            "RGB export needs at least 4 samples, got {}",
            vectors.rows()
        )));
    }
    if vectors.cols() < 3 {
        return Err(Error::InvalidConfig(format!(
            "RGB export needs width >= 3, got {}",
            vectors.cols()
        )));
    }
    let pca = fit_pca(vectors, 3)?;
    let scores = pca.transform(vectors);
    let eig_scale = pca.eigenvalues[0].abs().max(1e-300);
    let mut rgb = vec![[0.5; 3]; vectors.rows()];
    let mut padded = 0;
    for ch in 0..3 {
        // Rank check: a vanished eigenvalue means no informative component.
        if pca.eigenvalues[ch] <= 1e-12 * eig_scale {
            padded += 1;
            continue;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in 0..scores.rows() {
            lo = lo.min(scores.get(r, ch));
            hi = hi.max(scores.get(r, ch));
        }
        if hi == lo {
            padded += 1;
            continue;
        }
        let range = hi - lo;
        for (r, px) in rgb.iter_mut().enumerate() {
            px[ch] = (scores.get(r, ch) - lo) / range;
        }
    }
    Ok(PcaRgb {
        rgb,
        padded_channels: padded,
    })
}
