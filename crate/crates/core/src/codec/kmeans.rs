//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

use super::vq::Codebook;

#[derive(Debug, Clone)]
pub struct KMeans {
    /// `[k x dim]`, row-major.
    pub centroids: Vec<f32>,
    /// Lloyd updates actually performed (stops early at a fixed point).
    pub iterations: usize,
    /// Clusters that went empty and were re-seeded with the farthest point.
    pub empty_repairs: usize,
}

/// Squared distance with eight independent accumulators so the loop vectorizes.
fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| (x - y) * (x - y)).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            let d = x[j] - y[j];
            acc[j] += d * d;
        }
    }
    (acc.iter().sum::<f32>() + tail) as f64
}

/// k-means++ initial centers. Falls back to uniform picks once every point
/// coincides with a chosen center.
fn seed_centers(data: &[f32], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<f32> {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(point(first));
    let mut min_d: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in min_d.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = point(pick).to_vec();
        for (i, md) in min_d.iter_mut().enumerate() {
            let d = sq_dist(point(i), &c);
            if d < *md {
                *md = d;
            }
        }
        centers.extend_from_slice(&c);
    }
    centers
}

/// Clusters the rows of `data` into `k` centroids with at most `iterations`
/// Lloyd updates. Fully determined by `rng`.
pub fn kmeans(data: &[f32], dim: usize, k: usize, iterations: usize, rng: &mut impl Rng) -> KMeans {
    let n = data.len() / dim;
    assert!(n > 0 && k > 0, "k-means needs data and at least one cluster");
    let mut centroids = seed_centers(data, dim, k, rng);
    let mut previous: Option<Vec<u32>> = None;
    let mut empty_repairs = 0;
    let mut done = 0;
    for _ in 0..iterations {
        let nearest = Codebook::new(dim, centroids.clone()).nearest(data);
        let assign: Vec<u32> = nearest.iter().map(|&(i, _)| i).collect();
        if previous.as_ref() == Some(&assign) {
            break;
        }
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (x, &c) in data.chunks_exact(dim).zip(&assign) {
            counts[c as usize] += 1;
            for (s, &v) in sums[c as usize * dim..(c as usize + 1) * dim].iter_mut().zip(x) {
                *s += v as f64;
            }
        }
        // Farthest points (by distance to their own centroid) re-seed empty clusters.
        let mut far: Vec<usize> = (0..n).collect();
        far.sort_by(|&a, &b| nearest[b].1.total_cmp(&nearest[a].1).then(a.cmp(&b)));
        let mut far = far.into_iter();
        for c in 0..k {
            let dst = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] == 0 {
                let p = far.next().unwrap_or(0);
                dst.copy_from_slice(&data[p * dim..(p + 1) * dim]);
                empty_repairs += 1;
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (d, s) in dst.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *d = (s * inv) as f32;
                }
            }
        }
        previous = Some(assign);
        done += 1;
    }
    KMeans {
        centroids,
        iterations: done,
        empty_repairs,
    }
}
