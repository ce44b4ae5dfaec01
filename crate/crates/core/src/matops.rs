//! Matrix operators and factorizations used by the controller: the `low` and
//! `up` triangular extractions, the sign-normalized thin QR factorization and
//! its Cholesky-based twin, completion of a tall orthonormal block to a
//! rotation, and polar reprojection onto `SO(d)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Orthogonality tolerance for validating integrated states.
pub const ORTH_TOL_STATE: f64 = 1e-9;
/// Orthogonality tolerance for freshly computed factors.
pub const ORTH_TOL_FRESH: f64 = 1e-12;
/// Relative rank threshold (against the largest singular value).
pub const RANK_TOL: f64 = 1e-10;

/// `‖MᵀM − I‖_F`.
pub fn orthogonality_defect(m: &DMatrix<f64>) -> f64 {
    let mut g = m.tr_mul(m);
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.norm()
}

/// `d×k` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TallQ(DMatrix<f64>);

impl TallQ {
    pub fn new(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if m.nrows() < m.ncols() {
            return Err(Error::Dimension(format!(
                "tall matrix expected, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let defect = orthogonality_defect(&m);
        if !(defect <= tol) {
            return Err(Error::NotOrthonormal { defect, tol });
        }
        Ok(Self(m))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Upper-triangular `k×k` matrix with positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperTriPos(DMatrix<f64>);

impl UpperTriPos {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!("R must be square, got {}x{}", m.nrows(), m.ncols())));
        }
        let k = m.nrows();
        for i in 0..k {
            if !(m[(i, i)] > 0.0) {
                return Err(Error::NotUpperTriPos);
            }
            for j in 0..i {
                if m[(i, j)] != 0.0 {
                    return Err(Error::NotUpperTriPos);
                }
            }
        }
        Ok(Self(m))
    }

    pub fn identity(k: usize) -> Self {
        Self(DMatrix::identity(k, k))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Element of `SO(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix(DMatrix<f64>);

impl RotationMatrix {
    pub fn new(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!("rotation must be square, got {}x{}", m.nrows(), m.ncols())));
        }
        let defect = orthogonality_defect(&m);
        if !(defect <= tol) {
            return Err(Error::NotOrthonormal { defect, tol });
        }
        let det = m.determinant();
        if (det - 1.0).abs() > tol.max(1e-12) {
            return Err(Error::NonPositiveDeterminant(det));
        }
        Ok(Self(m))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// The tall block of the first `k` columns.
    pub fn columns(&self, k: usize) -> DMatrix<f64> {
        self.0.columns(0, k).into_owned()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub(crate) fn from_raw(m: DMatrix<f64>) -> Self {
        Self(m)
    }
}

/// Element of `so(d)`, built as `P − Pᵀ` so that skew-symmetry holds bit for
/// bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMatrix(DMatrix<f64>);

impl SkewMatrix {
    pub fn from_generator(p: &DMatrix<f64>) -> Self {
        assert!(p.is_square(), "skew generator must be square");
        Self(p - p.transpose())
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

fn check_tall(m: &DMatrix<f64>, op: &str) -> Result<()> {
    if m.nrows() < m.ncols() {
        return Err(Error::Dimension(format!(
            "{op} needs rows >= cols, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Strictly lower part, same shape as the input.
pub fn low(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_tall(m, "low")?;
    Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| if i > j { m[(i, j)] } else { 0.0 }))
}

/// Upper part of the top square block.
pub fn up(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_tall(m, "up")?;
    let k = m.ncols();
    Ok(DMatrix::from_fn(k, k, |i, j| if i <= j { m[(i, j)] } else { 0.0 }))
}

/// `[I_k, 0]ᵀ`, the `d×k` block of the first `k` identity columns.
pub fn embed_identity(d: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, k, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// `B·R⁻¹` for upper-triangular `R`, by forward substitution along each row
/// of `B`. `R⁻¹` is never formed.
pub fn solve_right_upper(b: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let k = r.nrows();
    debug_assert_eq!(b.ncols(), k);
    let mut x = DMatrix::zeros(b.nrows(), k);
    for row in 0..b.nrows() {
        for c in 0..k {
            let mut acc = b[(row, c)];
            for m in 0..c {
                acc -= x[(row, m)] * r[(m, c)];
            }
            x[(row, c)] = acc / r[(c, c)];
        }
    }
    x
}

fn rank_check(x: &DMatrix<f64>) -> Result<()> {
    let sv = x.singular_values();
    let largest = sv.max();
    let smallest = sv.min();
    let threshold = RANK_TOL * largest;
    if !(smallest > threshold) || !smallest.is_finite() {
        return Err(Error::RankDeficient { smallest, threshold });
    }
    Ok(())
}

/// Thin QR factorization `X = Q·R` with `R` upper triangular and positive
/// diagonal, which makes it unique.
///
/// Householder reflections, then a sign pass that flips column `j` of `Q`
/// together with row `j` of `R` whenever `R_jj < 0`.
pub fn qr_positive(x: &DMatrix<f64>) -> Result<(TallQ, UpperTriPos)> {
    check_tall(x, "qr_positive")?;
    rank_check(x)?;
    let (m, k) = x.shape();
    let mut a = x.clone();
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(k);

    for j in 0..k {
        let col = a.view((j, j), (m - j, 1)).column(0).into_owned();
        let norm = col.norm();
        let alpha = if col[0] >= 0.0 { -norm } else { norm };
        let mut v = col;
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm > 0.0 {
            v /= vnorm;
            for c in j..k {
                let dot: f64 = (0..m - j).map(|r| v[r] * a[(j + r, c)]).sum();
                for r in 0..m - j {
                    a[(j + r, c)] -= 2.0 * v[r] * dot;
                }
            }
        }
        reflectors.push(v);
    }

    let mut q = embed_identity(m, k);
    for j in (0..k).rev() {
        let v = &reflectors[j];
        if v.iter().all(|&e| e == 0.0) {
            continue;
        }
        for c in 0..k {
            let dot: f64 = (0..m - j).map(|r| v[r] * q[(j + r, c)]).sum();
            for r in 0..m - j {
                q[(j + r, c)] -= 2.0 * v[r] * dot;
            }
        }
    }

    let mut r = DMatrix::from_fn(k, k, |i, j| if i <= j { a[(i, j)] } else { 0.0 });
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            for c in 0..k {
                r[(j, c)] = -r[(j, c)];
            }
            for row in 0..m {
                q[(row, j)] = -q[(row, j)];
            }
        }
    }
    Ok((TallQ(q), UpperTriPos::new(r)?))
}

/// Upper Cholesky factor `R` with `RᵀR = A` for symmetric positive definite
/// `A`.
fn cholesky_upper(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = a.nrows();
    let mut r = DMatrix::zeros(k, k);
    for j in 0..k {
        let mut diag = a[(j, j)];
        for p in 0..j {
            diag -= r[(p, j)] * r[(p, j)];
        }
        if !(diag > 0.0) {
            return None;
        }
        let rjj = diag.sqrt();
        r[(j, j)] = rjj;
        for c in j + 1..k {
            let mut s = a[(j, c)];
            for p in 0..j {
                s -= r[(p, j)] * r[(p, c)];
            }
            r[(j, c)] = s / rjj;
        }
    }
    Some(r)
}

/// The diffeomorphism from full-rank `d×k` blocks to `(Q, R)` pairs: `R` is
/// the upper Cholesky factor of `XᵀX`, `Q = X·R⁻¹`. Agrees with
/// [`qr_positive`] but shares none of its code.
pub fn map_h(x: &DMatrix<f64>) -> Result<(TallQ, UpperTriPos)> {
    check_tall(x, "map_h")?;
    let gram = x.tr_mul(x);
    let r = cholesky_upper(&gram).ok_or(Error::RankDeficient {
        smallest: 0.0,
        threshold: 0.0,
    })?;
    let diag_max = r.diagonal().max();
    let diag_min = r.diagonal().min();
    if !(diag_min > RANK_TOL * diag_max) {
        return Err(Error::RankDeficient {
            smallest: diag_min,
            threshold: RANK_TOL * diag_max,
        });
    }
    let q = solve_right_upper(x, &r);
    Ok((TallQ(q), UpperTriPos(r)))
}

/// `Q·R`.
pub fn map_h_inv(q: &TallQ, r: &UpperTriPos) -> DMatrix<f64> {
    q.as_matrix() * r.as_matrix()
}

/// Extends a tall orthonormal block to a rotation whose first `k` columns are
/// exactly `q`. Missing columns come from Gaussian draws orthonormalized by
/// modified Gram–Schmidt with one re-orthogonalization pass; the last column
/// is negated if needed to make the determinant `+1`.
pub fn complete_to_rotation<R: Rng + ?Sized>(q: &TallQ, rng: &mut R) -> Result<RotationMatrix> {
    let qm = q.as_matrix();
    let (d, k) = qm.shape();
    if k + 1 > d {
        return Err(Error::Dimension(format!("completion needs k <= d-1, got k = {k}, d = {d}")));
    }
    let defect = orthogonality_defect(qm);
    if !(defect <= ORTH_TOL_STATE) {
        return Err(Error::NotOrthonormal {
            defect,
            tol: ORTH_TOL_STATE,
        });
    }
    let mut out = DMatrix::zeros(d, d);
    out.columns_mut(0, k).copy_from(qm);
    for c in k..d {
        loop {
            let mut v = DVector::<f64>::from_fn(d, |_, _| rng.sample(StandardNormal));
            let start = v.norm();
            for _pass in 0..2 {
                for p in 0..c {
                    let basis = out.column(p);
                    let proj = basis.dot(&v);
                    v.axpy(-proj, &basis, 1.0);
                }
            }
            let len = v.norm();
            if len > 1e-8 * start {
                out.set_column(c, &(v / len));
                break;
            }
        }
    }
    if out.determinant() < 0.0 {
        let mut last = out.column_mut(d - 1);
        last.neg_mut();
    }
    Ok(RotationMatrix(out))
}

/// Nearest rotation in Frobenius norm (polar factor `U·Vᵀ`).
pub fn project_to_so(m: &DMatrix<f64>) -> Result<RotationMatrix> {
    if !m.is_square() {
        return Err(Error::Dimension("projection needs a square matrix".into()));
    }
    let det = m.determinant();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant(det));
    }
    let svd = m.clone().svd(true, true);
    let mut u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut p = &u * &v_t;
    if p.determinant() < 0.0 {
        let idx = svd.singular_values.imin();
        u.column_mut(idx).neg_mut();
        p = &u * &v_t;
    }
    Ok(RotationMatrix(p))
}
