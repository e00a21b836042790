//! Dense rank-revealing helpers shared by every module.
//!
//! All rank decisions go through [`rank_threshold`]: a singular value `s` of an
//! `r x c` matrix counts toward the rank iff `s > tau(r, c) * scale`, where
//! `scale` is the spectral norm of the operand that fixes the problem's size
//! (usually the matrix itself). By default `tau` is
//! [`DEFAULT_RELATIVE_TOLERANCE`]; a process-wide relative override can be
//! installed with [`set_rank_tolerance`].

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

static RANK_TOL_OVERRIDE: AtomicU64 = AtomicU64::new(0);

/// Install a global relative rank tolerance (`Some(rel)`), or restore the
/// default (`None`).
pub fn set_rank_tolerance(rel: Option<f64>) {
    let bits = match rel {
        Some(r) if r > 0.0 && r.is_finite() => r.to_bits(),
        _ => 0,
    };
    RANK_TOL_OVERRIDE.store(bits, Ordering::Relaxed);
}

/// The relative override, if one is installed.
pub fn rank_tolerance_override() -> Option<f64> {
    match RANK_TOL_OVERRIDE.load(Ordering::Relaxed) {
        0 => None,
        bits => Some(f64::from_bits(bits)),
    }
}

/// Default relative cutoff. Subspace recursions on measured data carry
/// rounding noise around `1e-10` relative, while genuine singular values
/// stay above `1e-5`; `max(rows, cols) * eps` sits inside the noise.
pub const DEFAULT_RELATIVE_TOLERANCE: f64 = 1e-7;

/// Relative tolerance for an `rows x cols` operand. The size arguments are
/// kept for callers that install a size-dependent override.
pub fn relative_tolerance(_rows: usize, _cols: usize) -> f64 {
    rank_tolerance_override().unwrap_or(DEFAULT_RELATIVE_TOLERANCE)
}

/// Absolute singular-value cutoff for an `rows x cols` operand of norm `scale`.
pub fn rank_threshold(rows: usize, cols: usize, scale: f64) -> f64 {
    relative_tolerance(rows, cols) * scale
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m).iter().cloned().fold(0.0, f64::max)
}

/// Thin singular value decomposition `m = U diag(s) Vᵀ`, values sorted
/// in non-increasing order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn faer_svd(m: &DMatrix<f64>) -> Option<Svd> {
    let f = to_faer(m).thin_svd().ok()?;
    let s = f.S();
    Some(Svd {
        u: from_faer(f.U()),
        singular_values: DVector::from_fn(m.nrows().min(m.ncols()), |i, _| s[i]),
        v_t: from_faer(f.V()).transpose(),
    })
}

/// SVD of a tall matrix through its QR factor: `m = Q R`, `R = U S Vᵀ`.
fn svd_via_qr(m: &DMatrix<f64>) -> Option<Svd> {
    let qr = m.clone().qr();
    let inner = faer_svd(&qr.r())?;
    Some(Svd {
        u: qr.q() * inner.u,
        ..inner
    })
}

fn reconstructs(m: &DMatrix<f64>, s: &Svd) -> bool {
    let rebuilt = &s.u * DMatrix::from_diagonal(&s.singular_values) * &s.v_t;
    (rebuilt - m).norm() <= 1e-12 * m.norm().max(f64::MIN_POSITIVE)
}

/// Thin SVD. nalgebra's bidiagonal SVD loses accuracy on some
/// rank-deficient inputs, so decompositions go through faer. faer in turn
/// can fail to converge on clustered spectra; those inputs are retried on
/// their QR factor, then handed to nalgebra as a last resort.
pub fn svd(m: &DMatrix<f64>) -> Svd {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Svd {
            u: DMatrix::zeros(rows, 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, cols),
        };
    }
    if let Some(s) = faer_svd(m) {
        return s;
    }
    let retry = if rows >= cols {
        svd_via_qr(m)
    } else {
        svd_via_qr(&m.transpose()).map(|s| Svd {
            u: s.v_t.transpose(),
            singular_values: s.singular_values,
            v_t: s.u.transpose(),
        })
    };
    if let Some(s) = retry.filter(|s| reconstructs(m, s)) {
        return s;
    }
    log::debug!("faer SVD did not converge on a {rows} x {cols} input; using nalgebra");
    let s = m.clone().svd(true, true);
    Svd {
        u: s.u.expect("requested U"),
        singular_values: s.singular_values,
        v_t: s.v_t.expect("requested V"),
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    match to_faer(m).singular_values() {
        Ok(s) => DVector::from_vec(s),
        Err(_) => svd(m).singular_values,
    }
}

/// Singular values of a complex matrix.
pub fn complex_singular_values(m: &DMatrix<nalgebra::Complex<f64>>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    let f = faer::Mat::<faer::c64>::from_fn(m.nrows(), m.ncols(), |i, j| {
        let z = m[(i, j)];
        faer::c64::new(z.re, z.im)
    });
    match f.singular_values() {
        Ok(s) => DVector::from_vec(s),
        Err(_) => m.clone().svd(false, false).singular_values,
    }
}

/// Numerical rank against the matrix's own spectral norm.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = singular_values(m);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    count_above(&sv, rank_threshold(m.nrows(), m.ncols(), smax))
}

/// Numerical rank against an externally supplied scale.
pub fn rank_scaled(m: &DMatrix<f64>, scale: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = singular_values(m);
    count_above(&sv, rank_threshold(m.nrows(), m.ncols(), scale))
}

fn count_above(sv: &DVector<f64>, thr: f64) -> usize {
    sv.iter().filter(|&&s| s > thr).count()
}

/// Orthonormal basis of the null space of `m` (columns), with the cutoff
/// taken relative to `scale` (or the matrix's own norm when `None`).
pub fn null_space(m: &DMatrix<f64>, scale: Option<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    if rows == 0 {
        return DMatrix::identity(cols, cols);
    }
    // Thin SVD only yields min(rows, cols) right vectors; pad wide inputs.
    let work = if rows < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.rows_mut(0, rows).copy_from(m);
        padded
    } else if rows > 2 * cols {
        // Reduce tall inputs to their triangular factor first; same kernel.
        m.clone().qr().r()
    } else {
        m.clone()
    };
    let svd = svd(&work);
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let thr = rank_threshold(rows, cols, scale.unwrap_or(smax));
    let r = count_above(sv, thr);
    svd.v_t.rows(r, cols - r).transpose()
}

/// Orthonormal basis of the column space of `m`, cutoff relative to `scale`
/// (or the matrix's own norm when `None`).
pub fn range_space(m: &DMatrix<f64>, scale: Option<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let svd = svd(m);
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let thr = rank_threshold(rows, cols, scale.unwrap_or(smax));
    let r = count_above(sv, thr);
    svd.u.columns(0, r).into_owned()
}

/// Minimum-norm least-squares solution of `a x = b` (pseudo-inverse).
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, b.ncols());
    }
    let svd = svd(a);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let r = count_above(&svd.singular_values, rank_threshold(rows, cols, smax));
    let ur = svd.u.columns(0, r);
    let mut coeff = ur.transpose() * b;
    for (i, s) in svd.singular_values.iter().take(r).enumerate() {
        coeff.row_mut(i).unscale_mut(*s);
    }
    svd.v_t.rows(0, r).transpose() * coeff
}

/// Horizontal concatenation `[a, b]`.
pub fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "hcat row mismatch");
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Vertical concatenation of any number of blocks with equal column counts.
pub fn vstack(blocks: &[&DMatrix<f64>], cols: usize) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.rows_mut(at, b.nrows()).copy_from(*b);
        at += b.nrows();
    }
    out
}

/// Rows of `m` picked in the given order.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from(&m.row(r));
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
