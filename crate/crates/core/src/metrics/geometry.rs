//! Geometry-based internal cluster validity indices (Euclidean).

use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::compress;
use crate::error::{Error, Result};

/// Reported in place of an infinite Calinski-Harabasz index (zero within-cluster scatter).
pub const CHI_CAP: f64 = 1e12;

fn dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check(points: &Array2<f64>, ids: &[usize]) -> Result<(Vec<usize>, usize)> {
    if points.nrows() != ids.len() {
        return Err(Error::Shape(format!("{} points but {} cluster ids", points.nrows(), ids.len())));
    }
    let (c, k) = compress(ids);
    if k < 2 {
        return Err(Error::Undefined(format!("{k} non-empty cluster(s); at least 2 are required")));
    }
    Ok((c, k))
}

fn centroids(points: &Array2<f64>, c: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut cent = Array2::zeros((k, points.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &ci) in points.axis_iter(Axis(0)).zip(c) {
        let mut dst = cent.row_mut(ci);
        dst += &row;
        counts[ci] += 1;
    }
    for (mut row, &n) in cent.axis_iter_mut(Axis(0)).zip(&counts) {
        row /= n as f64;
    }
    (cent, counts)
}

/// Mean silhouette coefficient; members of singleton clusters score 0.
pub fn silhouette(points: &Array2<f64>, ids: &[usize]) -> Result<f64> {
    let (c, k) = check(points, ids)?;
    let n = points.nrows();
    let mut counts = vec![0usize; k];
    for &ci in &c {
        counts[ci] += 1;
    }
    // Sum of distances from each point to every cluster.
    let mut sums = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = dist(points.row(i), points.row(j));
            sums[[i, c[j]]] += d;
            sums[[j, c[i]]] += d;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = c[i];
        if counts[own] == 1 {
            continue;
        }
        let a = sums[[i, own]] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&j| j != own)
            .map(|j| sums[[i, j]] / counts[j] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Davies-Bouldin index: mean over clusters of the worst `(s_i + s_j) / d(c_i, c_j)`.
pub fn davies_bouldin(points: &Array2<f64>, ids: &[usize]) -> Result<f64> {
    let (c, k) = check(points, ids)?;
    let (cent, counts) = centroids(points, &c, k);
    let mut spread = vec![0.0; k];
    for (row, &ci) in points.axis_iter(Axis(0)).zip(&c) {
        spread[ci] += dist(row, cent.row(ci));
    }
    for (s, &n) in spread.iter_mut().zip(&counts) {
        *s /= n as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst: f64 = 0.0;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = dist(cent.row(i), cent.row(j));
            if d == 0.0 {
                return Err(Error::DegenerateCentroids(i.min(j), i.max(j)));
            }
            worst = worst.max((spread[i] + spread[j]) / d);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Calinski-Harabasz index `[tr(B) / (K - 1)] / [tr(W) / (N - K)]`, capped at [`CHI_CAP`].
pub fn calinski_harabasz(points: &Array2<f64>, ids: &[usize]) -> Result<f64> {
    let (c, k) = check(points, ids)?;
    let n = points.nrows();
    if n <= k {
        return Err(Error::Undefined(format!("N = {n} must exceed K = {k}")));
    }
    let (cent, counts) = centroids(points, &c, k);
    let grand: Array1<f64> = points.mean_axis(Axis(0)).expect("nonempty");
    let tr_b: f64 = (0..k)
        .map(|i| counts[i] as f64 * dist(cent.row(i), grand.view()).powi(2))
        .sum();
    let tr_w: f64 = points
        .axis_iter(Axis(0))
        .zip(&c)
        .map(|(row, &ci)| dist(row, cent.row(ci)).powi(2))
        .sum();
    if tr_w == 0.0 {
        return Ok(if tr_b > 0.0 { CHI_CAP } else { 0.0 });
    }
    let v = (tr_b / (k - 1) as f64) / (tr_w / (n - k) as f64);
    Ok(v.min(CHI_CAP))
}
