/// Per-feature affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits on rows of width `dim` laid out back to back in each slice.
    pub fn fit<'a, I>(dim: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut count = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for block in rows {
            for row in block.chunks_exact(dim) {
                count += 1;
                for k in 0..dim {
                    sum[k] += row[k];
                    sq[k] += row[k] * row[k];
                }
            }
        }
        if count == 0 {
            return Self::identity(dim);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                // constant features pass through unscaled
                if var.sqrt() < 1e-12 {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Normalizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, data: &mut [f64]) {
        let dim = self.dim();
        for row in data.chunks_exact_mut(dim) {
            for k in 0..dim {
                row[k] = (row[k] - self.mean[k]) / self.std[k];
            }
        }
    }

    pub fn invert(&self, data: &mut [f64]) {
        let dim = self.dim();
        for row in data.chunks_exact_mut(dim) {
            for k in 0..dim {
                row[k] = row[k] * self.std[k] + self.mean[k];
            }
        }
    }
}
