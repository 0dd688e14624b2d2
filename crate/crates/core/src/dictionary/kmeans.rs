//! Mini-batch k-means with k-means++ seeding.

use rand::seq::index;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::numerics::{squared_distance, Matrix};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Inertia of the k-means++ seeds.
    pub initial_inertia: f64,
    pub inertia: f64,
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest_centroid(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = squared_distance(centroids.row(c), x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn inertia(points: &Matrix, centroids: &Matrix, assignments: &[usize]) -> f64 {
    (0..points.rows())
        .map(|i| squared_distance(points.row(i), centroids.row(assignments[i])))
        .sum()
}

fn assign_all(points: &Matrix, centroids: &Matrix) -> Vec<usize> {
    (0..points.rows())
        .map(|i| nearest_centroid(centroids, points.row(i)).0)
        .collect()
}

/// k-means++ seeding: first center uniform, the rest by D² sampling.
pub fn kmeans_plus_plus<R: Rng + ?Sized>(points: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(points.row(i), points.row(first)))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // rounding can run off the end; fall back to the last positive weight
            pick.or_else(|| d2.iter().rposition(|&w| w > 0.0))
        } else {
            None
        };
        // all remaining points coincide with a center: take the first unused one
        let pick = pick.unwrap_or_else(|| taken.iter().position(|t| !t).expect("k <= n"));
        taken[pick] = true;
        chosen.push(pick);
        for i in 0..n {
            let d = squared_distance(points.row(i), points.row(pick));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    let mut centroids = Matrix::zeros(k, points.cols());
    for (c, &i) in chosen.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(points.row(i));
    }
    centroids
}

/// Mini-batch k-means with per-center learning rate `1 / count`.
///
/// When `batch >= n` every iteration is a full pass over the data in index
/// order. Empty clusters in the final assignment are re-seeded from the
/// points farthest from their centroid.
pub fn minibatch_kmeans<R: Rng + ?Sized>(
    points: &Matrix,
    k: usize,
    batch: usize,
    iters: usize,
    rng: &mut R,
) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return invalid(format!("k-means: k={k} must be in 1..={n}"));
    }
    if batch == 0 {
        return invalid("k-means: batch size must be positive");
    }
    let seeds = kmeans_plus_plus(points, k, rng);
    let seed_assign = assign_all(points, &seeds);
    let initial_inertia = inertia(points, &seeds, &seed_assign);

    let mut centroids = seeds.clone();
    let mut counts = vec![0u64; k];
    let full: Vec<usize> = (0..n).collect();
    for _ in 0..iters {
        let sample: Vec<usize> = if batch >= n {
            full.clone()
        } else {
            let mut s = index::sample(rng, n, batch).into_vec();
            s.sort_unstable();
            s
        };
        let nearest: Vec<usize> = sample
            .iter()
            .map(|&i| nearest_centroid(&centroids, points.row(i)).0)
            .collect();
        for (&i, &c) in sample.iter().zip(&nearest) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (m, &x) in centroids.row_mut(c).iter_mut().zip(points.row(i)) {
                *m += eta * (x - *m);
            }
        }
    }

    let mut assignments = assign_all(points, &centroids);
    repair_empty_clusters(points, &mut centroids, &mut assignments);
    let mut final_inertia = inertia(points, &centroids, &assignments);
    if final_inertia > initial_inertia {
        // a noisy small-batch run can drift; never return worse than the seeds
        centroids = seeds;
        assignments = seed_assign;
        repair_empty_clusters(points, &mut centroids, &mut assignments);
        final_inertia = inertia(points, &centroids, &assignments);
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        initial_inertia,
        inertia: final_inertia,
    })
}

/// Moves the farthest point of a multi-member cluster into each empty
/// cluster and re-centers the empty cluster on it.
pub fn repair_empty_clusters(points: &Matrix, centroids: &mut Matrix, assignments: &mut [usize]) {
    let k = centroids.rows();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, &a) in assignments.iter().enumerate() {
            if sizes[a] < 2 {
                continue;
            }
            let d = squared_distance(points.row(i), centroids.row(a));
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else { break };
        sizes[assignments[i]] -= 1;
        assignments[i] = empty;
        sizes[empty] = 1;
        centroids.row_mut(empty).copy_from_slice(points.row(i));
    }
}

/// For each cluster, the member closest to its centroid (lowest index on ties).
pub fn select_representatives(
    points: &Matrix,
    centroids: &Matrix,
    assignments: &[usize],
) -> Vec<usize> {
    let mut centroids = centroids.clone();
    let mut assignments = assignments.to_vec();
    repair_empty_clusters(points, &mut centroids, &mut assignments);
    let k = centroids.rows();
    let mut best: Vec<Option<(usize, f64)>> = vec![None; k];
    for (i, &c) in assignments.iter().enumerate() {
        let d = squared_distance(points.row(i), centroids.row(c));
        match best[c] {
            Some((_, bd)) if bd <= d => {}
            _ => best[c] = Some((i, d)),
        }
    }
    best.into_iter()
        .map(|b| b.expect("clusters are non-empty after repair").0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pts(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    /// Minimum inertia over all 2-partitions of a small point set.
    fn best_two_partition(points: &Matrix) -> (f64, Vec<Vec<f64>>) {
        let n = points.rows();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1..(1u32 << n) - 1 {
            let mut centers = vec![vec![0.0; points.cols()]; 2];
            let mut counts = [0.0; 2];
            for i in 0..n {
                let side = ((mask >> i) & 1) as usize;
                counts[side] += 1.0;
                for (c, x) in centers[side].iter_mut().zip(points.row(i)) {
                    *c += x;
                }
            }
            for s in 0..2 {
                centers[s].iter_mut().for_each(|c| *c /= counts[s]);
            }
            let cost: f64 = (0..n)
                .map(|i| squared_distance(points.row(i), &centers[((mask >> i) & 1) as usize]))
                .sum();
            if cost < best.0 {
                best = (cost, centers);
            }
        }
        best
    }

    fn sorted_rows(m: &Matrix) -> Vec<Vec<f64>> {
        let mut rows: Vec<Vec<f64>> = (0..m.rows()).map(|r| m.row(r).to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rows
    }

    #[test]
    fn two_well_separated_pairs() {
        let p = pts(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]);
        let (cost, mut oracle) = best_two_partition(&p);
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cost, 1.0);
        for seed in 0..5 {
            let res = minibatch_kmeans(&p, 2, 4, 20, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let got = sorted_rows(&res.centroids);
            for (g, o) in got.iter().zip(&oracle) {
                for (a, b) in g.iter().zip(o) {
                    assert!((a - b).abs() < 1e-9, "seed {seed}: {got:?}");
                }
            }
            assert!((res.inertia - cost).abs() < 1e-9);
        }
    }

    #[test]
    fn k_equals_n() {
        let p = pts(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]);
        let res = minibatch_kmeans(&p, 3, 3, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(res.inertia, 0.0);
        assert!(minibatch_kmeans(&p, 4, 3, 5, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn duplicated_dataset_keeps_centroids() {
        let base = [[0.0, 0.0], [0.2, 0.9], [5.0, 5.0], [5.5, 4.6], [9.0, 0.0], [8.7, 0.4]];
        let p = pts(&base);
        let doubled: Vec<[f64; 2]> = base.iter().flat_map(|r| [*r, *r]).collect();
        let pd = pts(&doubled);
        let a = minibatch_kmeans(&p, 3, 100, 30, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = minibatch_kmeans(&pd, 3, 100, 30, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for (x, y) in sorted_rows(&a.centroids).iter().zip(sorted_rows(&b.centroids).iter()) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn representatives() {
        let p = pts(&[[0.0, 0.0], [0.0, 1.0], [7.0, 7.0]]);
        let c = pts(&[[0.0, 0.4], [7.0, 7.0]]);
        assert_eq!(select_representatives(&p, &c, &[0, 0, 1]), vec![0, 2]);
        // equidistant members: lower index wins
        let c = pts(&[[0.0, 0.5], [7.0, 7.0]]);
        assert_eq!(select_representatives(&p, &c, &[0, 0, 1]), vec![0, 2]);
    }

    #[test]
    fn empty_cluster_is_repaired() {
        let p = pts(&[[0.0, 0.0], [0.1, 0.0], [9.0, 0.0]]);
        let mut c = pts(&[[0.0, 0.0], [100.0, 100.0]]);
        let mut a = vec![0, 0, 0];
        repair_empty_clusters(&p, &mut c, &mut a);
        assert_eq!(a, vec![0, 0, 1]);
        assert_eq!(c.row(1), &[9.0, 0.0]);
    }
}
