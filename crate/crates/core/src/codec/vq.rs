/// A flat `[size x dim]` table of centroids with cached squared norms.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    entries: Vec<f32>,
    norms: Vec<f32>,
}

const BLOCK_ROWS: usize = 256;

impl Codebook {
    pub fn new(dim: usize, entries: Vec<f32>) -> Self {
        assert!(dim > 0 && !entries.is_empty() && entries.len() % dim == 0);
        let norms = entries
            .chunks_exact(dim)
            .map(|c| c.iter().map(|v| v * v).sum())
            .collect();
        Self { dim, entries, norms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    /// Index of the nearest centroid (squared Euclidean) for each row of
    /// `data`, plus that squared distance. Ties go to the lowest index.
    pub fn nearest(&self, data: &[f32]) -> Vec<(u32, f32)> {
        let d = self.dim;
        let k = self.len();
        let n = data.len() / d;
        let mut out = Vec::with_capacity(n);
        let mut dots = vec![0.0f32; BLOCK_ROWS * k];
        for block in data.chunks(BLOCK_ROWS * d) {
            let rows = block.len() / d;
            // SAFETY: all strides and extents describe the live buffers:
            // block is rows x d, entries is k x d read as its transpose, and
            // dots holds at least rows x k.
            unsafe {
                matrixmultiply::sgemm(
                    rows,
                    d,
                    k,
                    -2.0,
                    block.as_ptr(),
                    d as isize,
                    1,
                    self.entries.as_ptr(),
                    1,
                    d as isize,
                    0.0,
                    dots.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
            for (r, x) in block.chunks_exact(d).enumerate() {
                let x_norm: f32 = x.iter().map(|v| v * v).sum();
                let (best, best_score) = argmin_plus(&dots[r * k..(r + 1) * k], &self.norms);
                out.push((best as u32, (x_norm + best_score).max(0.0)));
            }
        }
        out
    }
}

/// Index and value of the smallest `a[j] + b[j]`, lowest index on ties.
/// Eight lanes are tracked separately so the loop vectorizes.
fn argmin_plus(a: &[f32], b: &[f32]) -> (usize, f32) {
    let mut lane_v = [f32::INFINITY; 8];
    let mut lane_i = [0usize; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail_start = a.len() - ca.remainder().len();
    for (c, (x, y)) in ca.zip(cb).enumerate() {
        for j in 0..8 {
            let s = x[j] + y[j];
            if s < lane_v[j] {
                lane_v[j] = s;
                lane_i[j] = c * 8 + j;
            }
        }
    }
    let mut best = (usize::MAX, f32::INFINITY);
    for (&v, &i) in lane_v.iter().zip(&lane_i) {
        if v < best.1 || (v == best.1 && i < best.0) {
            best = (i, v);
        }
    }
    for j in tail_start..a.len() {
        let s = a[j] + b[j];
        if s < best.1 {
            best = (j, s);
        }
    }
    if best.0 == usize::MAX {
        // Every score was NaN or infinite.
        best.0 = 0;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dim = 7;
        let cb = Codebook::new(dim, (0..50 * dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        let data: Vec<f32> = (0..600 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = cb.nearest(&data);
        for (x, (idx, dist)) in data.chunks_exact(dim).zip(got) {
            let dists: Vec<f32> = (0..cb.len())
                .map(|j| cb.centroid(j).iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum())
                .collect();
            let best = dists.iter().cloned().fold(f32::INFINITY, f32::min);
            assert!((dists[idx as usize] - best).abs() < 1e-5);
            assert!((dist - best).abs() < 1e-4);
        }
    }

    #[test]
    fn ties_pick_lowest_index() {
        let cb = Codebook::new(2, vec![1.0, 0.0, 1.0, 0.0, -1.0, 0.0]);
        assert_eq!(cb.nearest(&[1.0, 0.0])[0].0, 0);
    }
}
