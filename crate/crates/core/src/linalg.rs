//! Complex singular value decomposition.

use faer::Mat;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::CMatrix;

/// Thin SVD `a = U diag(s) V^H` with `s` nonincreasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMatrix,
    pub s: DVector<f64>,
    pub v: CMatrix,
}

pub fn thin_svd(a: &CMatrix) -> Result<Svd> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Svd {
            u: CMatrix::zeros(m, 0),
            s: DVector::zeros(0),
            v: CMatrix::zeros(n, 0),
        });
    }
    let mat = Mat::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = mat
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD of a {m}x{n} matrix failed: {e:?}")))?;
    let (u, v, s) = (svd.U(), svd.V(), svd.S().column_vector());
    Ok(Svd {
        u: CMatrix::from_fn(m, k, |i, j| u[(i, j)]),
        s: DVector::from_fn(k, |i, _| s[i].re),
        v: CMatrix::from_fn(n, k, |i, j| v[(i, j)]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn factors_recompose_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (m, n) in [(5, 3), (3, 5), (4, 4), (1, 6)] {
            let a = CMatrix::from_fn(m, n, |_, _| Complex64::new(rng.random(), rng.random()));
            let svd = thin_svd(&a).unwrap();
            let sigma = CMatrix::from_diagonal(&svd.s.map(Complex64::from));
            assert!((&svd.u * sigma * svd.v.adjoint() - &a).norm() < 1e-12 * a.norm());
            assert!(svd.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
            let k = m.min(n);
            assert!((svd.u.adjoint() * &svd.u - CMatrix::identity(k, k)).norm() < 1e-12);
        }
    }

    #[test]
    fn rank_one_outer_product() {
        // a case that trips the nalgebra complex SVD
        let n = 32;
        let bs = CMatrix::from_fn(n, 1, |i, _| {
            Complex64::from_polar(1.0, 0.75 * std::f64::consts::PI * i as f64)
        });
        let ue = CMatrix::from_fn(16, 1, |i, _| {
            Complex64::from_polar(1.0, -0.625 * std::f64::consts::PI * i as f64)
        });
        let a = &bs * ue.adjoint() * Complex64::new(0.3, 0.2);
        let svd = thin_svd(&a).unwrap();
        assert!((svd.s[0] - a.norm()).abs() < 1e-10 * a.norm());
        assert!(svd.s[1] < 1e-12 * a.norm());
    }

    #[test]
    fn empty_shapes() {
        let svd = thin_svd(&CMatrix::zeros(3, 0)).unwrap();
        assert_eq!((svd.u.shape(), svd.s.len(), svd.v.shape()), ((3, 0), 0, (0, 0)));
    }
}
