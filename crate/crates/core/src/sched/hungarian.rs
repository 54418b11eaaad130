//! Minimum-cost perfect matching on square matrices.

/// Solves the assignment problem with the potentials form of the Hungarian
/// method in O(n³). Returns `cols[row]`.
pub fn solve(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == n), "matrix must be square");
    // 1-based arrays; column 0 is a virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
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
    let mut cols = vec![0; n];
    for j in 1..=n {
        cols[row_of[j] - 1] = j - 1;
    }
    cols
}

pub fn assignment_cost(cost: &[Vec<f64>], cols: &[usize]) -> f64 {
    cols.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn minor(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter().map(|&i| cols.iter().map(|&j| cost[i][j]).collect()).collect()
}

/// Optimal matching that is lexicographically smallest in `(row, col)` among
/// all optimal ones. Rows are fixed in order, each to the lowest column that
/// keeps the optimum reachable; costs O(n⁵) in the worst case.
pub fn solve_canonical(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let best = assignment_cost(cost, &solve(cost));
    let mut cols = Vec::with_capacity(n);
    let mut fixed = 0.0;
    let mut free: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for (pos, &j) in free.iter().enumerate() {
            let rest_cols: Vec<usize> = free.iter().copied().filter(|&c| c != j).collect();
            let sub = minor(cost, &rest_rows, &rest_cols);
            let total = fixed + cost[i][j] + assignment_cost(&sub, &solve(&sub));
            if near(total, best) {
                chosen = Some(pos);
                break;
            }
        }
        // Rounding can only make every candidate look slightly off; keep the
        // unconstrained optimum's column then.
        let pos = chosen.unwrap_or(0);
        let j = free.remove(pos);
        fixed += cost[i][j];
        cols.push(j);
    }
    cols
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_picks_the_off_diagonal() {
        let m = vec![vec![4.0, 1.0], vec![2.0, 3.0]];
        let cols = solve(&m);
        assert_eq!(cols, vec![1, 0]);
        assert_eq!(assignment_cost(&m, &cols), 3.0);
    }

    #[test]
    fn identity_favoring_matrix() {
        let n = 5;
        let m: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 10.0 }).collect())
            .collect();
        let cols = solve_canonical(&m);
        assert_eq!(cols, (0..n).collect::<Vec<_>>());
        assert_eq!(assignment_cost(&m, &cols), n as f64);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let m = vec![vec![1.0; 3]; 3];
        assert_eq!(solve_canonical(&m), vec![0, 1, 2]);
        let m = vec![vec![2.0, 1.0, 1.0], vec![1.0, 2.0, 1.0], vec![1.0, 1.0, 2.0]];
        assert_eq!(solve_canonical(&m), vec![1, 2, 0]);
    }

    #[test]
    fn empty_and_single() {
        assert!(solve(&[]).is_empty());
        assert_eq!(solve(&[vec![7.0]]), vec![0]);
    }
}
