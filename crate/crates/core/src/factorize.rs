//! Gram factors and the stacked "tilde" matrices that turn `E[A^T P A]` into
//! the Kronecker-lifted quadratic form `Ã^T (P ⊗ I_r) Ã`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::moments::{gram_matrix, Analytic, GramMatrix};
use crate::model::{DistributionSpec, StochasticMatrix};

pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// `bar` is `r x m` with `bar^T bar = G`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarFactor {
    pub bar: DMatrix<f64>,
    pub source_widths: Vec<usize>,
}

impl BarFactor {
    pub fn rank(&self) -> usize {
        self.bar.nrows()
    }
}

/// Rank-revealing factor from the symmetric eigendecomposition.
///
/// Eigenvalues at or below `rank_tol * lambda_max` are dropped. A zero Gram
/// matrix yields a single zero row so that downstream block shapes stay
/// non-empty.
pub fn psd_factor(g: &GramMatrix, rank_tol: f64) -> Result<BarFactor> {
    let m = g.g.nrows();
    let eig = SymmetricEigen::new(g.g.clone());
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |a, &e| a.max(e));
    let lambda_min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &e| a.min(e));
    if m > 0 && lambda_min < -1e-8 * lambda_max.max(f64::MIN_POSITIVE) && lambda_min < -1e-14 {
        return Err(Error::NotPsd {
            min_eig: lambda_min,
            max_eig: lambda_max,
        });
    }
    let cutoff = rank_tol * lambda_max;
    let mut kept: Vec<usize> = (0..m)
        .filter(|&i| eig.eigenvalues[i] > cutoff && eig.eigenvalues[i] > 0.0)
        .collect();
    // descending order keeps the factor layout stable across runs
    kept.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let bar = if kept.is_empty() {
        DMatrix::zeros(1, m)
    } else {
        DMatrix::from_fn(kept.len(), m, |r, c| {
            let i = kept[r];
            eig.eigenvalues[i].sqrt() * eig.eigenvectors[(c, i)]
        })
    };
    Ok(BarFactor {
        bar,
        source_widths: g.block_widths.clone(),
    })
}

/// Vertical stack `[Ā_1; ...; Ā_blocks]` of the column partition of a factor.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeMatrix {
    pub mat: DMatrix<f64>,
    pub bar_rank: usize,
    pub blocks: usize,
    pub cols: usize,
}

impl TildeMatrix {
    fn from_columns(bar: &DMatrix<f64>, first_col: usize, blocks: usize, cols: usize) -> Self {
        let r = bar.nrows();
        let mut mat = DMatrix::zeros(blocks * r, cols);
        for i in 0..blocks {
            let src = bar.columns(first_col + i * cols, cols);
            mat.view_mut((i * r, 0), (r, cols)).copy_from(&src);
        }
        Self {
            mat,
            bar_rank: r,
            blocks,
            cols,
        }
    }

    /// The i-th `r x cols` block.
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        self.mat.rows(i * self.bar_rank, self.bar_rank).into_owned()
    }

    /// `Ã^T (M ⊗ I_r) Ã` without forming the Kronecker product.
    pub fn lift(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        lift_pair(self, m, self)
    }
}

/// `L̃^T (M ⊗ I_r) R̃` for two tilde matrices sharing block structure.
pub fn lift_pair(left: &TildeMatrix, m: &DMatrix<f64>, right: &TildeMatrix) -> DMatrix<f64> {
    assert_eq!(left.blocks, right.blocks);
    assert_eq!(left.bar_rank, right.bar_rank);
    assert_eq!(m.shape(), (left.blocks, left.blocks));
    let r = left.bar_rank;
    let mut out = DMatrix::zeros(left.cols, right.cols);
    for i in 0..left.blocks {
        let li = left.mat.rows(i * r, r);
        for j in 0..left.blocks {
            let w = m[(i, j)];
            if w != 0.0 {
                out += li.transpose() * right.mat.rows(j * r, r) * w;
            }
        }
    }
    out
}

pub fn stack_tilde(f: &BarFactor, blocks: usize, cols: usize) -> Result<TildeMatrix> {
    if f.bar.ncols() != blocks * cols {
        return Err(Error::Dimension(format!(
            "factor has {} columns, expected {blocks}x{cols}",
            f.bar.ncols()
        )));
    }
    Ok(TildeMatrix::from_columns(&f.bar, 0, blocks, cols))
}

/// Splits a joint factor of `[row(M_1), row(M_2)]` (both with `blocks` rows)
/// into the two tilde matrices sharing one bar rank.
pub fn stack_joint(
    f: &BarFactor,
    blocks: usize,
    cols_first: usize,
    cols_second: usize,
) -> Result<(TildeMatrix, TildeMatrix)> {
    if f.bar.ncols() != blocks * (cols_first + cols_second) {
        return Err(Error::Dimension(format!(
            "joint factor has {} columns, expected {blocks}x({cols_first}+{cols_second})",
            f.bar.ncols()
        )));
    }
    Ok((
        TildeMatrix::from_columns(&f.bar, 0, blocks, cols_first),
        TildeMatrix::from_columns(&f.bar, blocks * cols_first, blocks, cols_second),
    ))
}

/// Ã for a single stochastic matrix under the analytic moments of `dist`.
pub fn tilde_of(m: &StochasticMatrix, dist: &DistributionSpec, rank_tol: f64) -> Result<TildeMatrix> {
    let g = gram_matrix(&[m], &Analytic { dist });
    stack_tilde(&psd_factor(&g, rank_tol)?, m.rows(), m.cols())
}

/// Joint (Ã_1, Ã_2) for `[row(M_1), row(M_2)]`.
pub fn joint_tilde_of(
    first: &StochasticMatrix,
    second: &StochasticMatrix,
    dist: &DistributionSpec,
    rank_tol: f64,
) -> Result<(TildeMatrix, TildeMatrix)> {
    let g = gram_matrix(&[first, second], &Analytic { dist });
    stack_joint(&psd_factor(&g, rank_tol)?, first.rows(), first.cols(), second.cols())
}
