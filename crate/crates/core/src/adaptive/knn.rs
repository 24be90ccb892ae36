use std::collections::HashMap;

use crate::scene::Vec3;

/// Below this many points neighbours are found by exhaustive search.
pub const BRUTE_FORCE_LIMIT: usize = 2000;

/// Exact `k` nearest neighbours of every point, excluding the point itself,
/// ordered by `(squared distance, index)`.
pub fn knn(points: &[Vec3], k: usize) -> Vec<Vec<usize>> {
    use rayon::prelude::*;
    let k = k.min(points.len().saturating_sub(1));
    if points.len() < BRUTE_FORCE_LIMIT {
        return (0..points.len()).into_par_iter().map(|i| brute(points, i, k)).collect();
    }
    let grid = Grid::new(points, k);
    (0..points.len()).into_par_iter().map(|i| grid.query(points, i, k)).collect()
}

fn brute(points: &[Vec3], i: usize, k: usize) -> Vec<usize> {
    let mut best = Best::new(k);
    for (j, p) in points.iter().enumerate() {
        if j != i {
            best.offer((p - points[i]).norm_squared(), j);
        }
    }
    best.into_indices()
}

/// Bounded sorted candidate list keyed by `(distance², index)`.
struct Best {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl Best {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn worst(&self) -> Option<f64> {
        (self.items.len() == self.k).then(|| self.items.last().map_or(f64::INFINITY, |w| w.0))
    }

    fn offer(&mut self, d2: f64, j: usize) {
        if self.k == 0 {
            return;
        }
        let key = (d2, j);
        if self.items.len() == self.k {
            let last = self.items[self.k - 1];
            if (key.0, key.1) >= (last.0, last.1) {
                return;
            }
        }
        let pos = self.items.partition_point(|&(d, idx)| (d, idx) < key);
        self.items.insert(pos, key);
        self.items.truncate(self.k);
    }

    fn into_indices(self) -> Vec<usize> {
        self.items.into_iter().map(|(_, j)| j).collect()
    }
}

struct Grid {
    cell: f64,
    origin: Vec3,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    max_ring: i64,
}

impl Grid {
    fn new(points: &[Vec3], k: usize) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = hi - lo;
        let span = ext.max().max(1e-12);
        let volume: f64 = ext.iter().map(|e| e.max(span * 1e-3)).product();
        let cell = (volume * (k + 1) as f64 / points.len() as f64).cbrt().max(span * 1e-6);
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        let key = |p: &Vec3| Self::key_of(p, &lo, cell);
        for (i, p) in points.iter().enumerate() {
            cells.entry(key(p)).or_default().push(i);
        }
        let max_ring = (span / cell).ceil() as i64 + 1;
        Self {
            cell,
            origin: lo,
            cells,
            max_ring,
        }
    }

    fn key_of(p: &Vec3, origin: &Vec3, cell: f64) -> (i64, i64, i64) {
        let q = (p - origin) / cell;
        (q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64)
    }

    fn query(&self, points: &[Vec3], i: usize, k: usize) -> Vec<usize> {
        let p = points[i];
        let (cx, cy, cz) = Self::key_of(&p, &self.origin, self.cell);
        let mut best = Best::new(k);
        for ring in 0..=self.max_ring {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(list) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &j in list {
                                if j != i {
                                    best.offer((points[j] - p).norm_squared(), j);
                                }
                            }
                        }
                    }
                }
            }
            // Anything not yet visited is at least `ring * cell` away.
            let reach = ring as f64 * self.cell;
            if let Some(w) = best.worst() {
                if w < reach * reach * (1.0 - 1e-12) {
                    break;
                }
            }
        }
        best.into_indices()
    }
}
