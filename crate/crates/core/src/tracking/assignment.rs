//! Minimum-cost bipartite assignment (Kuhn–Munkres with row/column
//! potentials, O(n²m)) and the gated association built on it.

use nalgebra::DMatrix;

/// Optimal row → column assignment for a rectangular cost matrix.
///
/// Every row is assigned when `rows <= cols`; otherwise every column is.
/// Unassigned rows map to `None`. Costs must be finite.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let by_col = hungarian(&cost.transpose());
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }

    // 1-based potentials formulation; column 0 is a virtual sink.
    let n = rows;
    let m = cols;
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; n];
    for j in 1..=m {
        if matched_row[j] != 0 {
            out[matched_row[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Sum of `cost[i, assignment[i]]` over assigned rows, in row order.
pub fn assignment_cost(cost: &DMatrix<f64>, assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| cost[(i, j)]))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub track: usize,
    pub detection: usize,
    pub distance: f64,
}

/// Gated association outcome. `track` values index the rows of the cost
/// matrix that produced it unless remapped by the caller.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssociationResult {
    pub matches: Vec<Match>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Minimum-total-cost assignment followed by gating: any pair costing more
/// than `gate_distance` is split and both sides reported unmatched.
pub fn solve_assignment(cost: &DMatrix<f64>, gate_distance: f64) -> AssociationResult {
    let (rows, cols) = cost.shape();
    let assignment = hungarian(cost);
    let mut result = AssociationResult::default();
    let mut col_used = vec![false; cols];
    for (track, col) in assignment.into_iter().enumerate() {
        match col {
            Some(detection) if cost[(track, detection)] <= gate_distance => {
                col_used[detection] = true;
                result.matches.push(Match {
                    track,
                    detection,
                    distance: cost[(track, detection)],
                });
            }
            _ => result.unmatched_tracks.push(track),
        }
    }
    debug_assert_eq!(result.matches.len() + result.unmatched_tracks.len(), rows);
    result.unmatched_detections = (0..cols).filter(|&j| !col_used[j]).collect();
    result
}
