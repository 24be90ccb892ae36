use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::VqError;

pub const DEFAULT_MAX_ITERS: usize = 25;
/// Lloyd iterations stop once the relative inertia change drops below this.
pub const REL_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub dim: usize,
    /// Row-major `K × dim`. `K` may be below the requested count when there
    /// are fewer distinct vectors.
    pub centroids: Vec<f64>,
    pub assignments: Vec<u32>,
    pub inertia: f64,
    /// Inertia after each assignment step, starting with the seeding.
    pub history: Vec<f64>,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lower index.
pub fn nearest(v: &[f64], centroids: &[f64], dim: usize) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let mut d = 0.0;
        for (x, y) in v.iter().zip(cent) {
            d += (x - y) * (x - y);
            if d >= best.1 {
                break;
            }
        }
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

/// Assigns every vector to its nearest centroid; returns the per-vector
/// squared distances alongside.
pub fn assign(data: &[f64], dim: usize, centroids: &[f64]) -> (Vec<u32>, Vec<f64>) {
    data.par_chunks_exact(dim).map(|v| nearest(v, centroids, dim)).unzip()
}

/// k-means++ seeding followed by Lloyd iterations. Empty clusters are
/// re-seeded from the vectors farthest from their centroids.
pub fn kmeans(data: &[f64], dim: usize, k: usize, max_iters: usize, seed: u64) -> Result<KMeans, VqError> {
    if dim == 0 {
        return Err(VqError::ZeroDimension);
    }
    if data.len() % dim != 0 {
        return Err(VqError::Shape {
            len: data.len(),
            dim,
        });
    }
    let n = data.len() / dim;
    if n == 0 || k == 0 {
        return Err(VqError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row = |i: usize| &data[i * dim..(i + 1) * dim];

    // Seeding.
    let first = rng.random_range(0..n);
    let mut centroids: Vec<f64> = row(first).to_vec();
    let mut d2: Vec<f64> = (0..n).into_par_iter().map(|i| dist2(row(i), row(first))).collect();
    while centroids.len() / dim < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if acc > target && d > 0.0 {
                pick = Some(i);
                break;
            }
        }
        // Rounding can leave `target` past the final sum.
        let pick = pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("positive total"));
        let c = row(pick).to_vec();
        d2.par_iter_mut().enumerate().for_each(|(i, d)| *d = d.min(dist2(row(i), &c)));
        centroids.extend_from_slice(&c);
    }
    let kk = centroids.len() / dim;

    let (mut assignments, mut dists) = assign(data, dim, &centroids);
    let mut inertia: f64 = dists.iter().sum();
    let mut history = vec![inertia];
    for _ in 0..max_iters {
        if inertia == 0.0 {
            break;
        }
        let mut sums = vec![0.0; kk * dim];
        let mut counts = vec![0usize; kk];
        for (i, &a) in assignments.iter().enumerate() {
            let a = a as usize;
            counts[a] += 1;
            for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row(i)) {
                *s += x;
            }
        }
        let mut next = centroids.clone();
        for c in 0..kk {
            if counts[c] > 0 {
                for j in 0..dim {
                    next[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        let empty: Vec<usize> = (0..kk).filter(|&c| counts[c] == 0).collect();
        if !empty.is_empty() {
            let mut far: Vec<usize> = (0..n).collect();
            far.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
            for (&c, &i) in empty.iter().zip(far.iter()) {
                next[c * dim..(c + 1) * dim].copy_from_slice(row(i));
            }
        }
        let (next_assign, next_dists) = assign(data, dim, &next);
        let next_inertia: f64 = next_dists.iter().sum();
        if next_inertia > inertia {
            // Only reachable through rounding; keep the better state.
            break;
        }
        let rel = (inertia - next_inertia) / inertia;
        centroids = next;
        assignments = next_assign;
        dists = next_dists;
        inertia = next_inertia;
        history.push(inertia);
        if rel < REL_TOLERANCE {
            break;
        }
    }
    Ok(KMeans {
        dim,
        centroids,
        assignments,
        inertia,
        history,
    })
}
