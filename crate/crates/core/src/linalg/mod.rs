//! Dense linear-algebra helpers shared by the analysis and synthesis code.
//!
//! Vectorization is always in the row direction: `row(A)` lists the
//! entries of `A` row by row, so entry `(i, j)` of an `r x c` matrix lands
//! at position `i * c + j`.

mod expm;
mod pairwise;

pub use expm::expm;
pub use pairwise::{pairwise_sum, pairwise_sum_vectors};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Row-direction vectorization.
pub fn row_vec(m: &Mat) -> Vector {
    let (r, c) = m.shape();
    Vector::from_fn(r * c, |k, _| m[(k / c, k % c)])
}

/// Inverse of [`row_vec`].
pub fn unrow_vec(v: &Vector, rows: usize, cols: usize) -> Mat {
    assert_eq!(v.len(), rows * cols, "unrow_vec length mismatch");
    Mat::from_row_slice(rows, cols, v.as_slice())
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// `P ⊗ I_k` without materializing the identity.
pub fn kron_identity(p: &Mat, k: usize) -> Mat {
    let (r, c) = p.shape();
    let mut out = Mat::zeros(r * k, c * k);
    for i in 0..r {
        for j in 0..c {
            let v = p[(i, j)];
            if v != 0.0 {
                for d in 0..k {
                    out[(i * k + d, j * k + d)] = v;
                }
            }
        }
    }
    out
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    sym_eigenvalues(m)[0]
}

pub fn max_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    *sym_eigenvalues(m).last().unwrap()
}

/// Largest eigenvalue modulus from a dense nonsymmetric eigensolve.
pub fn spectral_radius(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Projection of a symmetric matrix onto `{S : S ⪰ floor·I}`.
pub fn project_psd_floor(m: &Mat, floor: f64) -> (Mat, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    (v * Mat::from_diagonal(&clipped) * v.transpose(), min)
}

/// Frobenius inner product.
pub fn frob_dot(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return None;
    }
    Some(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Serde adapter writing a matrix as an array of rows.
pub mod serde_rows {
    use super::{from_rows, to_rows, Mat};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).ok_or_else(|| D::Error::custom("ragged matrix rows"))
    }
}

/// Same as [`serde_rows`] for optional matrices.
pub mod serde_rows_opt {
    use super::{from_rows, to_rows, Mat};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Mat>, D::Error> {
        match Option::<Vec<Vec<f64>>>::deserialize(d)? {
            None => Ok(None),
            Some(rows) => from_rows(&rows)
                .map(Some)
                .ok_or_else(|| D::Error::custom("ragged matrix rows")),
        }
    }
}

/// Dense row-major encoding `{"rows", "cols", "data"}`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Mat> for DenseMatrix {
    fn from(m: &Mat) -> Self {
        DenseMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: row_vec(m).iter().copied().collect(),
        }
    }
}

impl DenseMatrix {
    pub fn to_mat(&self) -> Option<Mat> {
        (self.data.len() == self.rows * self.cols)
            .then(|| Mat::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_vec_is_row_major() {
        let m = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(row_vec(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unrow_vec(&row_vec(&m), 2, 3), m);
    }

    #[test]
    fn kron_identity_matches_kronecker() {
        let p = Mat::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        assert_eq!(kron_identity(&p, 3), kron(&p, &Mat::identity(3, 3)));
    }

    #[test]
    fn psd_projection_clips_spectrum() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let (p, min) = project_psd_floor(&m, 0.1);
        assert_eq!(min, -2.0);
        assert!((p[(1, 1)] - 0.1).abs() < 1e-15);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-15);
    }
}
