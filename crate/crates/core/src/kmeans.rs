//! K-means baseline: k-means++ seeding, Lloyd iterations, best of several restarts.

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointKind, CheckpointMeta};
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub centroids: Array2<f64>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations_run: usize,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
fn nearest(p: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.axis_iter(Axis(0)).enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus<R: Rng + ?Sized>(points: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    centroids.row_mut(0).assign(&points.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = points
        .axis_iter(Axis(0))
        .map(|p| sq_dist(p, centroids.row(0)))
        .collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(j).assign(&points.row(pick));
        for (i, p) in points.axis_iter(Axis(0)).enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.row(j)));
        }
    }
    centroids
}

/// One Lloyd run from `centroids`; returns the model and the inertia after each iteration.
fn lloyd(points: &Array2<f64>, mut centroids: Array2<f64>) -> (KMeansModel, Vec<f64>) {
    let (n, d) = points.dim();
    let k = centroids.nrows();
    let mut assign = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for (i, p) in points.axis_iter(Axis(0)).enumerate() {
            let (j, dd) = nearest(p, &centroids);
            if assign[i] != j {
                assign[i] = j;
                changed = true;
            }
            dists[i] = dd;
        }
        history.push(dists.iter().sum());
        if !changed || iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (p, &j) in points.axis_iter(Axis(0)).zip(&assign) {
            let mut row = sums.row_mut(j);
            row += &p;
            counts[j] += 1;
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                centroids.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
            } else {
                // Re-seed from the point farthest from its centroid.
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("N >= K");
                taken[far] = true;
                dists[far] = 0.0;
                centroids.row_mut(j).assign(&points.row(far));
            }
        }
    }
    let inertia = *history.last().expect("at least one pass");
    (
        KMeansModel {
            centroids,
            inertia,
            iterations_run: iterations,
        },
        history,
    )
}

impl KMeansModel {
    /// Best of `restarts` seeded runs by inertia.
    pub fn fit(points: &Array2<f64>, k: usize, restarts: usize, seed: u64) -> Result<Self> {
        let n = points.nrows();
        if k == 0 {
            return Err(Error::InvalidArgument("K must be >= 1".into()));
        }
        if n < k {
            return Err(Error::InvalidArgument(format!("{n} points cannot form {k} clusters")));
        }
        let mut best: Option<KMeansModel> = None;
        for r in 0..restarts.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let (m, _) = lloyd(points, plus_plus(points, k, &mut rng));
            if best.as_ref().is_none_or(|b| m.inertia < b.inertia) {
                best = Some(m);
            }
        }
        Ok(best.expect("at least one restart"))
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    /// Nearest-centroid ids; ties go to the lowest index.
    pub fn predict(&self, points: &Array2<f64>) -> Result<Vec<usize>> {
        if points.ncols() != self.centroids.ncols() {
            return Err(Error::Shape(format!(
                "points have {} dimensions, centroids {}",
                points.ncols(),
                self.centroids.ncols()
            )));
        }
        Ok(points.axis_iter(Axis(0)).map(|p| nearest(p, &self.centroids).0).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(CheckpointMeta::new(CheckpointKind::KMeans));
        c.push("kmeans.centroids", &self.centroids.clone().into_dyn());
        c.push(
            "kmeans.inertia",
            &ndarray::arr1(&[self.inertia, self.iterations_run as f64]).into_dyn(),
        );
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta.kind != CheckpointKind::KMeans {
            return Err(Error::Format("not a K-means checkpoint".into()));
        }
        let cent = c
            .get("kmeans.centroids")
            .ok_or_else(|| Error::Format("missing centroids".into()))?
            .to_array::<f64>()
            .into_dimensionality()
            .map_err(|e| Error::Format(e.to_string()))?;
        let extra = c
            .get("kmeans.inertia")
            .ok_or_else(|| Error::Format("missing inertia".into()))?
            .to_array::<f64>();
        Ok(Self {
            centroids: cent,
            inertia: extra[0],
            iterations_run: extra[1] as usize,
        })
    }
}
