//! Exact rectangular linear assignment (shortest augmenting path Hungarian
//! method with potentials), `O(n² m)` for an `n × m` matrix with `n ≤ m`.

/// Row-to-column assignment maximizing the summed score of `score`, a
/// row-major `rows × cols` matrix with `rows ≤ cols`. Returns the column of
/// every row.
pub fn max_weight_assignment(score: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    assert!(rows <= cols, "assignment needs rows <= cols");
    assert_eq!(score.len(), rows * cols);
    if rows == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| -score[i * cols + j];

    // 1-based arrays; index 0 is the virtual start column.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut row_of = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut min_v = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; rows];
    for j in 1..=cols {
        if row_of[j] != 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(score: &[f64], rows: usize, cols: usize) -> f64 {
        fn rec(score: &[f64], rows: usize, cols: usize, i: usize, used: &mut Vec<bool>) -> f64 {
            if i == rows {
                return 0.0;
            }
            let mut best = f64::NEG_INFINITY;
            for j in 0..cols {
                if !used[j] {
                    used[j] = true;
                    best = best.max(score[i * cols + j] + rec(score, rows, cols, i + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(score, rows, cols, 0, &mut vec![false; cols])
    }

    #[test]
    fn classic_three_by_three() {
        // minimizing [[8,4,7],[5,2,3],[9,4,8]] gives 15
        let cost = [8.0, 4.0, 7.0, 5.0, 2.0, 3.0, 9.0, 4.0, 8.0];
        let score: Vec<f64> = cost.iter().map(|c| -c).collect();
        let a = max_weight_assignment(&score, 3, 3);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i * 3 + j]).sum();
        assert_eq!(total, 15.0);
    }

    #[test]
    fn rectangular_matches_brute_force() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for rows in 1..=5 {
            for cols in rows..=6 {
                for _ in 0..20 {
                    let score: Vec<f64> = (0..rows * cols).map(|_| next()).collect();
                    let a = max_weight_assignment(&score, rows, cols);
                    let mut seen = vec![false; cols];
                    for &j in &a {
                        assert!(!seen[j]);
                        seen[j] = true;
                    }
                    let total: f64 = a.iter().enumerate().map(|(i, &j)| score[i * cols + j]).sum();
                    assert!((total - brute(&score, rows, cols)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty() {
        assert!(max_weight_assignment(&[], 0, 3).is_empty());
    }
}
