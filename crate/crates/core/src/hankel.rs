//! Hankel matrices, persistency of excitation, and the past/future data
//! blocks with their shift-consistency matrices.
//!
//! Block rows are time-major and channel-minor: row `t * r + c` of a depth-`q`
//! Hankel matrix of an `r`-channel signal holds channel `c` at lag `t`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::linsys::{ComponentLayout, Role, Trajectory};

/// Depth-`depth` Hankel matrix of a signal stored column-per-sample.
pub fn hankel_matrix(signal: &DMatrix<f64>, depth: usize) -> Result<DMatrix<f64>> {
    let (r, len) = signal.shape();
    if depth == 0 {
        return Err(Error::InvalidArgument("Hankel depth must be positive".into()));
    }
    if depth > len {
        return Err(Error::InsufficientData {
            have: len,
            need: depth,
            why: format!("Hankel matrix of depth {depth}"),
        });
    }
    let cols = len - depth + 1;
    let mut out = DMatrix::zeros(r * depth, cols);
    for k in 0..cols {
        for i in 0..depth {
            out.view_mut((i * r, k), (r, 1)).copy_from(&signal.column(k + i));
        }
    }
    Ok(out)
}

fn block_count(m: &DMatrix<f64>, block_size: usize) -> Result<usize> {
    if block_size == 0 || !m.nrows().is_multiple_of(block_size) {
        return Err(Error::InvalidArgument(format!(
            "{} rows do not split into blocks of {block_size}",
            m.nrows()
        )));
    }
    let blocks = m.nrows() / block_size;
    if blocks < 2 {
        return Err(Error::InvalidArgument(format!(
            "head/tail need at least 2 block rows, got {blocks}"
        )));
    }
    Ok(blocks)
}

/// Drops the last block row.
pub fn head(m: &DMatrix<f64>, block_size: usize) -> Result<DMatrix<f64>> {
    block_count(m, block_size)?;
    Ok(m.rows(0, m.nrows() - block_size).into_owned())
}

/// Drops the first block row.
pub fn tail(m: &DMatrix<f64>, block_size: usize) -> Result<DMatrix<f64>> {
    block_count(m, block_size)?;
    Ok(m.rows(block_size, m.nrows() - block_size).into_owned())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeReport {
    pub exciting: bool,
    pub rank: usize,
    pub needed: usize,
}

/// Full-row-rank test of the depth-`order` Hankel matrix of `u`.
pub fn is_persistently_exciting(u: &DMatrix<f64>, order: usize) -> PeReport {
    let needed = u.nrows() * order;
    match hankel_matrix(u, order) {
        Ok(h) => {
            let rank = linalg::rank(&h);
            PeReport {
                exciting: order > 0 && rank == needed,
                rank,
                needed,
            }
        }
        Err(_) => PeReport {
            exciting: false,
            rank: 0,
            needed,
        },
    }
}

/// Past/future data partition and shift matrices for window length `L`.
#[derive(Clone, Debug)]
pub struct HankelBlocks {
    pub up: DMatrix<f64>,
    pub uf: DMatrix<f64>,
    pub yp: DMatrix<f64>,
    pub yf: DMatrix<f64>,
    /// `[Up; head(Uf); Yp; head(Yf)]`
    pub h: DMatrix<f64>,
    /// `[tail(Up); Uf; tail(Yp); Yf]`
    pub t: DMatrix<f64>,
    pub l: usize,
    pub d: usize,
    pub layout: ComponentLayout,
}

impl HankelBlocks {
    pub fn m(&self) -> usize {
        self.layout.m()
    }
    pub fn p(&self) -> usize {
        self.layout.p()
    }

    /// `[Up; Uf; Yp; Yf]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.up, &self.uf, &self.yp, &self.yf], self.d)
    }

    /// `L^f_j`: the future rows of component `j` (an `L x d` matrix).
    pub fn selector(&self, j: usize) -> Result<DMatrix<f64>> {
        let rows = self.selector_rows(j)?;
        Ok(match self.layout.role(j)? {
            Role::Actuator(_) => linalg::select_rows(&self.uf, &rows),
            Role::Sensor(_) => linalg::select_rows(&self.yf, &rows),
        })
    }

    /// Row indices of `L^f_j` inside `Uf` (actuator) or `Yf` (sensor).
    pub fn selector_rows(&self, j: usize) -> Result<Vec<usize>> {
        Ok(match self.layout.role(j)? {
            Role::Actuator(c) => (0..self.l).map(|t| t * self.m() + c).collect(),
            Role::Sensor(s) => (0..self.l).map(|t| t * self.p() + s).collect(),
        })
    }

    /// `Y^f_S`: future rows of every protected sensor (`0 x d` when none).
    pub fn protected_rows(&self) -> DMatrix<f64> {
        let p = self.p();
        let rows: Vec<usize> = (0..self.l)
            .flat_map(|t| self.layout.protected_outputs().map(move |s| t * p + s))
            .collect();
        linalg::select_rows(&self.yf, &rows)
    }
}

/// Partitions depth-`2L` Hankel matrices of the data into past and future
/// halves and assembles `H` and `T`.
pub fn build_blocks(traj: &Trajectory, l: usize, layout: &ComponentLayout) -> Result<HankelBlocks> {
    if l == 0 {
        return Err(Error::InvalidArgument("window length L must be at least 1".into()));
    }
    let (m, p) = (traj.m(), traj.p());
    if m != layout.m() || p != layout.p() {
        return Err(Error::InvalidArgument(format!(
            "trajectory has {m} inputs / {p} outputs, layout expects {} / {}",
            layout.m(),
            layout.p()
        )));
    }
    let n_samples = traj.len();
    if n_samples < 2 * l {
        return Err(Error::InsufficientData {
            have: n_samples,
            need: 2 * l,
            why: format!("window length L = {l} needs N >= 2L"),
        });
    }
    let hu = hankel_matrix(&traj.u, 2 * l)?;
    let hy = hankel_matrix(&traj.y, 2 * l)?;
    let d = hu.ncols();
    let up = hu.rows(0, m * l).into_owned();
    let uf = hu.rows(m * l, m * l).into_owned();
    let yp = hy.rows(0, p * l).into_owned();
    let yf = hy.rows(p * l, p * l).into_owned();
    // head/tail across the past/future seam: H covers lags 0..2L-2, T lags 1..2L-1.
    let h = linalg::vstack(
        &[
            &hu.rows(0, m * (2 * l - 1)).into_owned(),
            &hy.rows(0, p * (2 * l - 1)).into_owned(),
        ],
        d,
    );
    let t = linalg::vstack(
        &[
            &hu.rows(m, m * (2 * l - 1)).into_owned(),
            &hy.rows(p, p * (2 * l - 1)).into_owned(),
        ],
        d,
    );
    let blocks = HankelBlocks {
        up,
        uf,
        yp,
        yf,
        h,
        t,
        l,
        d,
        layout: *layout,
    };
    verify_shift_identity(&blocks)?;
    Ok(blocks)
}

/// Consecutive windows of one trajectory satisfy `H e_{k+1} = T e_k`.
fn verify_shift_identity(b: &HankelBlocks) -> Result<()> {
    for k in 0..b.d.saturating_sub(1) {
        if b.h.column(k + 1) != b.t.column(k) {
            return Err(Error::Numerical(format!(
                "shift identity violated between data columns {k} and {}",
                k + 1
            )));
        }
    }
    Ok(())
}
