//! Tolerance-governed linear subspaces and the one-step predecessor and
//! successor operators induced by a pair `(H, T)`:
//!
//! ```text
//! Pre(V)  = { g : exists v in V with H v = T g }
//! Post(V) = { v : exists g in V with H v = T g }
//! ```

use nalgebra::DMatrix;

use crate::error::{dim_err, Result};
use crate::linalg;

/// Subspace of `R^ambient` held as an orthonormal basis (columns).
#[derive(Clone, Debug)]
pub struct Subspace {
    basis: DMatrix<f64>,
    tol: f64,
}

impl Subspace {
    pub(crate) fn from_orthonormal(basis: DMatrix<f64>) -> Self {
        let tol = linalg::relative_tolerance(basis.nrows(), basis.ncols().max(1));
        Self { basis, tol }
    }

    pub fn full(ambient: usize) -> Self {
        Self::from_orthonormal(DMatrix::identity(ambient, ambient))
    }

    pub fn zero(ambient: usize) -> Self {
        Self::from_orthonormal(DMatrix::zeros(ambient, 0))
    }

    /// Span of the columns of `m`.
    pub fn span(m: &DMatrix<f64>) -> Self {
        Self::from_orthonormal(linalg::range_space(m, None))
    }

    /// Span of the columns of `m`, rank decided relative to `scale`.
    pub fn span_scaled(m: &DMatrix<f64>, scale: f64) -> Self {
        Self::from_orthonormal(linalg::range_space(m, Some(scale)))
    }

    /// Numerical null space of `m`; an empty `0 x d` matrix gives `R^d`.
    pub fn kernel(m: &DMatrix<f64>) -> Self {
        Self::from_orthonormal(linalg::null_space(m, None))
    }

    pub fn kernel_scaled(m: &DMatrix<f64>, scale: f64) -> Self {
        Self::from_orthonormal(linalg::null_space(m, Some(scale)))
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }
    pub fn tol(&self) -> f64 {
        self.tol
    }
    pub fn is_zero(&self) -> bool {
        self.dim() == 0
    }

    /// Orthogonal projection of `x` (columns) onto the complement of `self`.
    pub fn reject(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if self.is_zero() {
            return x.clone();
        }
        x - &self.basis * (self.basis.transpose() * x)
    }

    /// Image of the subspace under `map`, rank decided relative to `scale`.
    pub fn image(&self, map: &DMatrix<f64>, scale: f64) -> Result<Subspace> {
        check_cols(map, self.ambient(), "map")?;
        Ok(Self::span_scaled(&(map * &self.basis), scale))
    }

    /// `W ⊆ self`: the part of `W`'s basis outside `self` has numerical rank
    /// zero at cutoff `sqrt(tau)`.
    pub fn contains(&self, w: &Subspace) -> Result<bool> {
        same_ambient(self, w)?;
        if w.is_zero() {
            return Ok(true);
        }
        if w.dim() > self.dim() {
            return Ok(false);
        }
        let resid = self.reject(&w.basis);
        let thr = containment_threshold(self.ambient(), w.dim());
        Ok(linalg::singular_values(&resid).iter().all(|&s| s <= thr))
    }

    /// `V ∩ W`, computed as `V_basis * ker(P⊥_W V_basis)`.
    pub fn intersect(&self, w: &Subspace) -> Result<Subspace> {
        same_ambient(self, w)?;
        if self.is_zero() || w.is_zero() {
            return Ok(Self::zero(self.ambient()));
        }
        let resid = w.reject(&self.basis);
        let k = linalg::null_space(&resid, Some(1.0));
        Ok(Self::from_orthonormal(&self.basis * k))
    }

    /// `V + W = span(V ∪ W)`.
    pub fn sum(&self, w: &Subspace) -> Result<Subspace> {
        same_ambient(self, w)?;
        if w.is_zero() {
            return Ok(self.clone());
        }
        if self.is_zero() {
            return Ok(w.clone());
        }
        let extra = self.reject(&w.basis);
        let add = linalg::range_space(&extra, Some(1.0));
        Ok(Self::from_orthonormal(linalg::hcat(&self.basis, &add)))
    }

    /// `self ∩ ker(m)` with cutoff relative to `scale`.
    pub fn intersect_kernel(&self, m: &DMatrix<f64>, scale: f64) -> Result<Subspace> {
        check_cols(m, self.ambient(), "constraint")?;
        if self.is_zero() || m.nrows() == 0 {
            return Ok(self.clone());
        }
        let k = linalg::null_space(&(m * &self.basis), Some(scale));
        Ok(Self::from_orthonormal(&self.basis * k))
    }
}

/// Cutoff for containment tests, `sqrt(tau)` of the operand size.
pub fn containment_threshold(rows: usize, cols: usize) -> f64 {
    linalg::relative_tolerance(rows, cols).sqrt()
}

fn same_ambient(v: &Subspace, w: &Subspace) -> Result<()> {
    if v.ambient() != w.ambient() {
        return Err(dim_err("subspace ambient dimension", v.ambient(), w.ambient()));
    }
    Ok(())
}

fn check_cols(m: &DMatrix<f64>, d: usize, what: &str) -> Result<()> {
    if m.ncols() != d {
        return Err(dim_err(format!("{what} columns"), d, m.ncols()));
    }
    Ok(())
}

fn check_pair(h: &DMatrix<f64>, t: &DMatrix<f64>, d: usize) -> Result<()> {
    check_cols(h, d, "H")?;
    check_cols(t, d, "T")?;
    if h.nrows() != t.nrows() {
        return Err(dim_err("H/T row count", h.nrows(), t.nrows()));
    }
    Ok(())
}

pub fn kernel(m: &DMatrix<f64>) -> Subspace {
    Subspace::kernel(m)
}

pub fn intersect(v: &Subspace, w: &Subspace) -> Result<Subspace> {
    v.intersect(w)
}

pub fn sum(v: &Subspace, w: &Subspace) -> Result<Subspace> {
    v.sum(w)
}

pub fn contains(v: &Subspace, w: &Subspace) -> Result<bool> {
    v.contains(w)
}

/// Norms of a fixed `(H, T)` pair, used as rank-decision scales.
#[derive(Clone, Copy, Debug)]
pub struct PairScale {
    pub h: f64,
    pub t: f64,
}

impl PairScale {
    pub fn of(h: &DMatrix<f64>, t: &DMatrix<f64>) -> Self {
        Self {
            h: linalg::spectral_norm(h),
            t: linalg::spectral_norm(t),
        }
    }
}

/// `within ∩ { g : T g ∈ A(V) }`, where `A` is `H` and the preimage is taken
/// through `T`. Shared engine for [`pre_image`] and [`post_image`].
fn preimage_through(
    v: &Subspace,
    within: &Subspace,
    image_map: &DMatrix<f64>,
    image_scale: f64,
    pre_map: &DMatrix<f64>,
    pre_scale: f64,
) -> Subspace {
    if within.is_zero() {
        return within.clone();
    }
    let target = Subspace::span_scaled(&(image_map * v.basis()), image_scale);
    let constrained = target.reject(&(pre_map * within.basis()));
    let k = linalg::null_space(&constrained, Some(pre_scale));
    Subspace::from_orthonormal(within.basis() * k)
}

/// `Pre(V)`: all `g` with `T g` in the image `H(V)`.
pub fn pre_image(v: &Subspace, h: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<Subspace> {
    check_pair(h, t, v.ambient())?;
    let s = PairScale::of(h, t);
    Ok(preimage_through(v, &Subspace::full(v.ambient()), h, s.h, t, s.t))
}

/// `Post(V)`: all `v` with `H v` in the image `T(V)`.
pub fn post_image(v: &Subspace, h: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<Subspace> {
    check_pair(h, t, v.ambient())?;
    let s = PairScale::of(h, t);
    Ok(preimage_through(v, &Subspace::full(v.ambient()), t, s.t, h, s.h))
}

/// `W ∩ Pre(V)` without forming `Pre(V)` over the whole space.
pub fn pre_image_within(
    v: &Subspace,
    within: &Subspace,
    h: &DMatrix<f64>,
    t: &DMatrix<f64>,
    scale: PairScale,
) -> Result<Subspace> {
    check_pair(h, t, v.ambient())?;
    same_ambient(v, within)?;
    Ok(preimage_through(v, within, h, scale.h, t, scale.t))
}

/// `W ∩ Post(V)` without forming `Post(V)` over the whole space.
pub fn post_image_within(
    v: &Subspace,
    within: &Subspace,
    h: &DMatrix<f64>,
    t: &DMatrix<f64>,
    scale: PairScale,
) -> Result<Subspace> {
    check_pair(h, t, v.ambient())?;
    same_ambient(v, within)?;
    Ok(preimage_through(v, within, t, scale.t, h, scale.h))
}

/// Numerical rank of `L * basis(V)`, decided relative to `‖L‖`.
pub fn mapped_dim(l: &DMatrix<f64>, v: &Subspace) -> Result<usize> {
    check_cols(l, v.ambient(), "L")?;
    if v.is_zero() || l.nrows() == 0 {
        return Ok(0);
    }
    Ok(linalg::rank_scaled(&(l * v.basis()), linalg::spectral_norm(l)))
}

/// `V ⊆ ker L`.
pub fn in_kernel(l: &DMatrix<f64>, v: &Subspace) -> Result<bool> {
    Ok(mapped_dim(l, v)? == 0)
}
