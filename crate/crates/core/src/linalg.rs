//! Small dense helpers on top of nalgebra.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Symmetric part `(X + Xᵀ) / 2`.
pub fn sym(x: &Mat) -> Mat {
    (x + x.transpose()) * 0.5
}

pub fn min_eigenvalue(x: &Mat) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(sym(x))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric square root with negative eigenvalues clipped to zero.
pub fn psd_sqrt(x: &Mat) -> Mat {
    let eig = SymmetricEigen::new(sym(x));
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs()));
    let floor = 1e-12 * scale.max(1.0);
    let roots = eig
        .eigenvalues
        .map(|l| if l > floor { l.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

pub fn cholesky(x: &Mat) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(sym(x))
}

/// Solves `H X = rhs` for symmetric positive definite `H`.
pub fn spd_solve(h: &Mat, rhs: &Mat) -> Option<Mat> {
    cholesky(h).map(|c| c.solve(rhs))
}

pub fn block(m: &Mat, rows: Range<usize>, cols: Range<usize>) -> Mat {
    m.view((rows.start, cols.start), (rows.len(), cols.len()))
        .into_owned()
}

pub fn set_block(m: &mut Mat, row: usize, col: usize, value: &Mat) {
    m.view_mut((row, col), value.shape()).copy_from(value);
}

/// Column-stacking vectorization.
pub fn vec(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Mat {
    Mat::from_column_slice(rows, cols, v)
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

/// `‖a − b‖_F / (1 + ‖b‖_F)`.
pub fn rel_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
}

pub fn trace_product(a: &Mat, b: &Mat) -> f64 {
    // tr(AB) without forming the product
    a.component_mul(&b.transpose()).sum()
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return None;
    }
    Some(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

/// Serializes `Vec<Mat>` as an array of row-major nested arrays.
pub mod serde_mats {
    use super::{from_rows, to_rows, Mat};
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mats: &[Mat], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(mats.iter().map(to_rows))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
        let raw: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
        raw.iter()
            .enumerate()
            .map(|(t, rows)| from_rows(rows).ok_or_else(|| D::Error::custom(format!("matrix {t} is not rectangular"))))
            .collect()
    }
}

/// Serializes `Vec<Vector>` as an array of arrays.
pub mod serde_vectors {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(vs: &[Vector], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(vs.iter().map(|v| v.as_slice().to_vec()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vector>, D::Error> {
        let raw: Vec<Vec<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(Vector::from_vec).collect())
    }
}
