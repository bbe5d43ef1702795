use std::cmp::Ordering;

use crate::dynamics::{FeasibleSet, Policy};
use crate::error::{ensure, Result};
use crate::linalg::Mat;

/// Rows whose sum is within this relative distance of the target are taken
/// as already feasible, which keeps projection idempotent bitwise.
const ROW_SUM_SLACK: f64 = 1e-12;

/// Euclidean projection of `m_raw` onto `set`.
pub fn project_policy(m_raw: &Mat, set: &FeasibleSet) -> Result<Policy> {
    Ok(Policy {
        m: project_matrix(m_raw, set)?,
        set: *set,
    })
}

pub fn project_matrix(m_raw: &Mat, set: &FeasibleSet) -> Result<Mat> {
    match *set {
        FeasibleSet::FrobeniusBall { radius } => {
            let norm = m_raw.norm();
            if norm <= radius * (1.0 + 1e-12) {
                Ok(m_raw.clone())
            } else {
                Ok(m_raw * (radius / norm))
            }
        }
        FeasibleSet::RowSimplex { scale } => Ok(project_rows(m_raw, scale)),
        FeasibleSet::TiedRowSimplex { copies, scale } => Ok(tie_blocks(&project_rows(&tied_mean(m_raw, copies)?, scale), copies)),
        FeasibleSet::TiedRowAffine { copies, scale } => {
            let mut m = tied_mean(m_raw, copies)?;
            for i in 0..m.nrows() {
                let row: Vec<f64> = m.row(i).iter().copied().collect();
                if (row.iter().sum::<f64>() - scale).abs() > ROW_SUM_SLACK * scale.abs().max(1.0) {
                    for (j, v) in project_row_affine(&row, scale).into_iter().enumerate() {
                        m[(i, j)] = v;
                    }
                }
            }
            Ok(tie_blocks(&m, copies))
        }
    }
}

/// Average of the diagonal blocks, which is the nearest tied matrix; an
/// already tied input returns its block unchanged.
fn tied_mean(m_raw: &Mat, copies: usize) -> Result<Mat> {
    ensure(copies > 0 && m_raw.is_square() && m_raw.nrows().is_multiple_of(copies), || {
        format!("tied policy must be square with {copies} equal diagonal blocks")
    })?;
    let n = m_raw.nrows() / copies;
    if is_tied(m_raw, copies, n) {
        return Ok(m_raw.view((0, 0), (n, n)).clone_owned());
    }
    let mut mean = Mat::zeros(n, n);
    for b in 0..copies {
        mean += m_raw.view((b * n, b * n), (n, n));
    }
    Ok(mean / copies as f64)
}

fn is_tied(m: &Mat, copies: usize, n: usize) -> bool {
    let first = m.view((0, 0), (n, n));
    (0..copies).all(|bi| {
        (0..copies).all(|bj| {
            let blk = m.view((bi * n, bj * n), (n, n));
            if bi == bj {
                blk == first
            } else {
                blk.iter().all(|&v| v == 0.0)
            }
        })
    })
}

/// `blockdiag(m, …, m)` with `copies` blocks.
pub fn tie_blocks(m: &Mat, copies: usize) -> Mat {
    let n = m.nrows();
    let mut out = Mat::zeros(n * copies, m.ncols() * copies);
    for b in 0..copies {
        out.view_mut((b * n, b * m.ncols()), (n, m.ncols())).copy_from(m);
    }
    out
}

fn project_rows(m: &Mat, scale: f64) -> Mat {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        for (j, v) in project_row_simplex(&row, scale).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

/// Projection onto `{x ≥ 0, Σx = scale}` by sorting.
pub fn project_row_simplex(row: &[f64], scale: f64) -> Vec<f64> {
    let sum: f64 = row.iter().sum();
    if row.iter().all(|&v| v >= 0.0) && (sum - scale).abs() <= ROW_SUM_SLACK * scale.max(1.0) {
        return row.to_vec();
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut prefix = 0.0;
    let mut theta = 0.0;
    for (j, &idx) in order.iter().enumerate() {
        prefix += row[idx];
        let candidate = (prefix - scale) / (j + 1) as f64;
        if row[idx] - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut out: Vec<f64> = row.iter().map(|v| (v - theta).max(0.0)).collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v *= scale / total);
    }
    out
}

/// Projection onto the affine set `{Σx = scale}` without sign constraints.
pub fn project_row_affine(row: &[f64], scale: f64) -> Vec<f64> {
    let shift = (row.iter().sum::<f64>() - scale) / row.len() as f64;
    row.iter().map(|v| v - shift).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_entry_row() {
        let p = project_row_simplex(&[1.2, 0.3], 1.0);
        assert!((p[0] - 0.95).abs() < 1e-15 && (p[1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn ball_scales_radially() {
        let m = Mat::from_row_slice(1, 2, &[1.2, 1.6]);
        let p = project_matrix(&m, &FeasibleSet::FrobeniusBall { radius: 1.0 }).unwrap();
        assert!((p - &m / 2.0).amax() < 1e-15);
    }

    #[test]
    fn interior_points_are_fixed() {
        let m = Mat::from_row_slice(2, 2, &[0.25, 0.75, 1.0, 0.0]);
        assert_eq!(project_matrix(&m, &FeasibleSet::RowSimplex { scale: 1.0 }).unwrap(), m);
        let tied = tie_blocks(&m, 2);
        assert_eq!(project_matrix(&tied, &FeasibleSet::TiedRowSimplex { copies: 2, scale: 1.0 }).unwrap(), tied);
    }

    #[test]
    fn ties_break_by_index() {
        let p = project_row_simplex(&[0.0, 0.0, 0.0], 1.0);
        assert_eq!(p, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn tied_projection_averages_blocks() {
        let mut m = Mat::zeros(2, 2);
        m[(0, 0)] = 2.0;
        m[(1, 1)] = 0.0;
        m[(0, 1)] = 5.0;
        let p = project_matrix(&m, &FeasibleSet::TiedRowSimplex { copies: 2, scale: 1.0 }).unwrap();
        assert_eq!(p, Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn tied_affine_projection_allows_negative_weights() {
        let m = tie_blocks(&Mat::from_row_slice(2, 2, &[2.0, -0.5, 0.0, 0.0]), 2);
        let set = FeasibleSet::TiedRowAffine { copies: 2, scale: 1.0 };
        let p = project_matrix(&m, &set).unwrap();
        assert_eq!(p, tie_blocks(&Mat::from_row_slice(2, 2, &[1.75, -0.75, 0.5, 0.5]), 2));
        assert!(set.contains(&p, 1e-12));
        assert_eq!(project_matrix(&p, &set).unwrap(), p);
    }

    #[test]
    fn affine_projection_keeps_negatives() {
        let p = project_row_affine(&[2.0, -1.0], 1.0);
        assert_eq!(p, vec![2.0, -1.0]);
        assert_eq!(project_row_affine(&[0.0, 0.0], 1.0), vec![0.5, 0.5]);
    }
}
