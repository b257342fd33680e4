//! Small dense helpers: Cholesky solves and summary statistics.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a Jacobi-scaled Gram matrix is
/// treated as rank-deficient.
const PIVOT_TOL: f64 = 1e-11;

/// Cholesky factor of a Jacobi-scaled symmetric positive definite matrix.
///
/// Scaling makes the rank test independent of column units; factorization
/// fails with `SingularDesign` when a pivot falls below `PIVOT_TOL`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    scale: Vec<f64>,
    /// Lower triangle, row-major.
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut scale = vec![0.0; n];
        for i in 0..n {
            let d = a[[i, i]];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::SingularDesign);
            }
            scale[i] = 1.0 / d.sqrt();
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                let s = a[[i, j]] * scale[i] * scale[j]
                    - ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
                if i == j {
                    if s <= PIVOT_TOL {
                        return Err(Error::SingularDesign);
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { n, scale, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Grows the factor by one row and column: `cross[i]` is the new
    /// column's entry against existing column `i`, `diag` its own.
    pub fn extend(&mut self, cross: &[f64], diag: f64) -> Result<()> {
        let n = self.n;
        if cross.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "factor has {n} columns, got {} cross terms",
                cross.len()
            )));
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::SingularDesign);
        }
        let sn = 1.0 / diag.sqrt();
        let mut row = vec![0.0; n + 1];
        for j in 0..n {
            let s = cross[j] * sn * self.scale[j]
                - row[..j].iter().zip(&self.l[j * n..j * n + j]).map(|(x, y)| x * y).sum::<f64>();
            row[j] = s / self.l[j * n + j];
        }
        let d = 1.0 - row[..n].iter().map(|v| v * v).sum::<f64>();
        if d <= PIVOT_TOL {
            return Err(Error::SingularDesign);
        }
        row[n] = d.sqrt();
        let m = n + 1;
        let mut l = vec![0.0; m * m];
        for i in 0..n {
            l[i * m..i * m + i + 1].copy_from_slice(&self.l[i * n..i * n + i + 1]);
        }
        l[n * m..].copy_from_slice(&row);
        self.l = l;
        self.scale.push(sn);
        self.n = m;
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Array1<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "system is {n}x{n} with rhs of length {}",
                b.len()
            )));
        }
        let l = &self.l;
        let mut z = vec![0.0; n];
        for i in 0..n {
            let s = b[i] * self.scale[i]
                - l[i * n..i * n + i].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
            z[i] = s / l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..n {
                s -= l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        Ok(Array1::from_iter(x.iter().zip(&self.scale).map(|(v, s)| v * s)))
    }
}

/// Solves `a x = b` for symmetric positive definite `a` via [`Cholesky`].
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "system is {}x{} with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    Cholesky::factor(a)?.solve(&b.to_vec())
}

pub fn mean(v: ArrayView1<f64>) -> f64 {
    v.sum() / v.len() as f64
}

/// Population variance (divisor `n`).
pub fn variance(v: ArrayView1<f64>) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// `log(sum(exp(v)))` without overflow; `-inf` for an all `-inf` input.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn extended_factor_matches_full_factor() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 2.0]];
        let b = [1.0, -2.0, 0.5];
        let full = Cholesky::factor(&a).unwrap().solve(&b).unwrap();
        let mut f = Cholesky::factor(&a.slice(ndarray::s![..1, ..1]).to_owned()).unwrap();
        f.extend(&[1.0], 3.0).unwrap();
        f.extend(&[0.5, -0.2], 2.0).unwrap();
        assert_eq!(f.dim(), 3);
        let grown = f.solve(&b).unwrap();
        for (u, v) in full.iter().zip(grown.iter()) {
            assert!((u - v).abs() < 1e-14);
        }
        // a duplicated column is rejected
        let mut f = Cholesky::factor(&array![[1.0]]).unwrap();
        assert!(matches!(f.extend(&[1.0], 1.0), Err(Error::SingularDesign)));
    }

    #[test]
    fn spd_solve_small() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let b = array![2.0, 1.0];
        let x = solve_spd(&a, &b).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-14);
        assert!(x[1].abs() < 1e-14);
    }

    #[test]
    fn spd_detects_rank_deficiency() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(matches!(
            solve_spd(&a, &array![1.0, 1.0]),
            Err(Error::SingularDesign)
        ));
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[-1e4, 0.0]) - 0.0).abs() < 1e-300);
    }

    #[test]
    fn pearson_constant_is_none() {
        assert!(pearson(array![1.0, 1.0].view(), array![0.0, 1.0].view()).is_none());
    }
}
