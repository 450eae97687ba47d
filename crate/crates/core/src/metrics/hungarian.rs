//! Optimal assignment by the O(n³) potentials method.

/// Minimum-cost perfect matching on a square cost matrix; returns the column
/// assigned to each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials; column 0 is a virtual source.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
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
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Maximum total weight of a one-to-one matching between rows and columns of a
/// rectangular nonnegative matrix; padded with zero rows or columns to square.
/// Returns the weight and, per row, the matched column (`None` if it landed on padding).
pub fn max_weight_matching(w: &[Vec<f64>]) -> (f64, Vec<Option<usize>>) {
    let rows = w.len();
    let cols = w.first().map_or(0, |r| r.len());
    let n = rows.max(cols);
    let max = w.iter().flatten().copied().fold(0.0, f64::max);
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| max - if i < rows && j < cols { w[i][j] } else { 0.0 })
                .collect()
        })
        .collect();
    let assign = min_cost_assignment(&cost);
    let mut total = 0.0;
    let mut out = Vec::with_capacity(rows);
    for (i, &j) in assign.iter().enumerate().take(rows) {
        if j < cols {
            total += w[i][j];
            out.push(Some(j));
        } else {
            out.push(None);
        }
    }
    (total, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_instance() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = min_cost_assignment(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn rectangular_padding() {
        let w = vec![vec![1.0, 7.0, 0.0, 2.0], vec![6.0, 5.0, 0.0, 1.0]];
        let (total, m) = max_weight_matching(&w);
        assert_eq!(total, 13.0);
        assert_eq!(m, vec![Some(1), Some(0)]);
        let (t2, m2) = max_weight_matching(&[vec![3.0], vec![4.0], vec![1.0]]);
        assert_eq!(t2, 4.0);
        assert_eq!(m2.iter().filter(|x| x.is_some()).count(), 1);
    }
}
