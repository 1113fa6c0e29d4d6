//! Seeded Lloyd's k-means over one PQ subspace.
//!
//! The policy is fixed so that training is reproducible: initialization picks
//! the first k distinct-by-value rows of a seeded permutation, assignment
//! breaks ties toward the lowest centroid index, means are accumulated in f64,
//! and an empty cluster is repaired by stealing the point farthest from its
//! current centroid. Iteration stops early once assignments are unchanged.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        acc += d * d;
    }
    acc
}

/// Index of the nearest centroid, ties broken by the lowest index.
pub fn nearest_centroid(point: &[f32], centroids: &[f32], dim: usize) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, cent);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn init_centroids(points: &[f32], n: usize, dim: usize, k: usize, seed: u64) -> Vec<f32> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut centroids: Vec<f32> = Vec::with_capacity(k * dim);
    let mut chosen: Vec<&[f32]> = Vec::with_capacity(k);
    for &i in &order {
        let row = &points[i * dim..(i + 1) * dim];
        if chosen.iter().any(|c| *c == row) {
            continue;
        }
        chosen.push(row);
        centroids.extend_from_slice(row);
        if chosen.len() == k {
            break;
        }
    }
    // Fewer distinct values than k: cycle the permutation to fill the rest.
    let mut cursor = 0usize;
    while centroids.len() < k * dim {
        let i = order[cursor % n];
        centroids.extend_from_slice(&points[i * dim..(i + 1) * dim]);
        cursor += 1;
    }
    centroids
}

/// Run k-means on `n` rows of `dim` floats; returns the k x dim centroids
/// row-major. `points` is row-major n*dim.
pub fn run(points: &[f32], n: usize, dim: usize, k: usize, max_iters: usize, seed: u64) -> Vec<f32> {
    debug_assert_eq!(points.len(), n * dim);
    let mut centroids = init_centroids(points, n, dim, k, seed);
    let mut assignments = vec![usize::MAX; n];

    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for i in 0..n {
            let a = nearest_centroid(&points[i * dim..(i + 1) * dim], &centroids, dim);
            if a != assignments[i] {
                assignments[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let a = assignments[i];
            counts[a] += 1;
            for j in 0..dim {
                sums[a * dim + j] += points[i * dim + j] as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue; // repaired below; keeps its previous position otherwise
            }
            for j in 0..dim {
                centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
            }
        }

        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            // Steal the point farthest from its own centroid; ties toward the
            // lowest point index.
            let mut far_i = usize::MAX;
            let mut far_d = -1.0f64;
            for i in 0..n {
                let a = assignments[i];
                if counts[a] <= 1 {
                    continue; // don't empty a singleton cluster
                }
                let d = sq_dist(
                    &points[i * dim..(i + 1) * dim],
                    &centroids[a * dim..(a + 1) * dim],
                );
                if d > far_d {
                    far_d = d;
                    far_i = i;
                }
            }
            if far_i == usize::MAX {
                break; // fewer distinct points than clusters; leave the rest empty
            }
            let donor = assignments[far_i];
            counts[donor] -= 1;
            counts[c] = 1;
            assignments[far_i] = c;
            let row = &points[far_i * dim..(far_i + 1) * dim];
            centroids[c * dim..(c + 1) * dim].copy_from_slice(row);
        }
    }

    centroids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_points_become_centroids() {
        // 4 distinct points, k=4: the fixed point is the points themselves.
        let points = vec![0.0f32, 0.0, 1.0, 0.0, 0.0, 1.0, 5.0, 5.0];
        let centroids = run(&points, 4, 2, 4, 12, 42);
        let mut got: Vec<Vec<f32>> = centroids.chunks_exact(2).map(|c| c.to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<Vec<f32>> = points.chunks_exact(2).map(|c| c.to_vec()).collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn deterministic_under_seed() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<f32> = (0..600).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = run(&points, 300, 2, 16, 12, 9);
        let b = run(&points, 300, 2, 16, 12, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_cluster_repair_fills_duplicate_inits() {
        // Three far pairs, k=3: whatever the init draws, no cluster may end
        // up empty since there are more than 3 distinct points.
        let points = vec![
            0.0f32, 0.0, 0.1, 0.0, 10.0, 0.0, 10.1, 0.0, 20.0, 0.0, 20.1, 0.0,
        ];
        let centroids = run(&points, 6, 2, 3, 12, 1);
        let mut counts = [0usize; 3];
        for row in points.chunks_exact(2) {
            counts[nearest_centroid(row, &centroids, 2)] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
    }
}
