//! Dense symmetric-matrix helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Mat = DMatrix<f64>;
pub type Vect = DVector<f64>;

/// Eigen-decomposition of the symmetric part of `m`, eigenvalues ascending.
pub fn sym_eigen(m: &Mat) -> (Vect, Mat) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vect::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).0[0]
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped to 0).
pub fn project_psd(m: &Mat) -> Mat {
    let (vals, vecs) = sym_eigen(m);
    let clipped = Mat::from_diagonal(&vals.map(|v| v.max(0.0)));
    let out = &vecs * clipped * vecs.transpose();
    symmetrize(&out)
}

/// Entrywise L1 norm.
pub fn l1_norm(m: &Mat) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// Squared Hilbert–Schmidt (Frobenius) norm.
pub fn hs_norm_sq(m: &Mat) -> f64 {
    m.iter().map(|v| v * v).sum()
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Builds a matrix from rows; `None` if the rows are ragged.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<Mat> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return None;
    }
    Some(Mat::from_fn(n, c, |i, j| rows[i][j]))
}

/// Factor `L` with `L Lᵀ = m` for PSD `m`, via the eigen-decomposition.
/// Columns belonging to eigenvalues at or below `tol` are dropped.
pub fn psd_factor(m: &Mat, tol: f64) -> Mat {
    let (vals, vecs) = sym_eigen(m);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > tol).collect();
    let mut f = Mat::zeros(m.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        f.set_column(c, &(vecs.column(i) * vals[i].sqrt()));
    }
    f
}

/// Serde adapter storing a list of matrices as nested rows.
pub mod rows_serde {
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    use super::{from_rows, to_rows, Mat};

    pub fn serialize<S: Serializer>(m: &[Mat], s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
        Vec::<Vec<Vec<f64>>>::deserialize(d)?
            .iter()
            .map(|r| from_rows(r).ok_or_else(|| D::Error::custom("ragged matrix")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn antidiagonal_has_negative_eigenvalue() {
        let m = Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((min_eigenvalue(&m) + 1.0).abs() < 1e-14);
        let p = project_psd(&m);
        assert!(min_eigenvalue(&p) > -1e-14);
        assert!((p[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((p[(0, 1)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn factor_reconstructs() {
        let m = Mat::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        let f = psd_factor(&m, 1e-14);
        assert!((&f * f.transpose() - &m).abs().max() < 1e-12);
    }
}
