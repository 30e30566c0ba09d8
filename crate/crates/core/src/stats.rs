//! Mergeable first and second moments over a fixed set of observables.

#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    /// Row-major co-moment matrix, present when covariances are tracked.
    comoment: Option<Vec<f64>>,
}

impl MomentAccumulator {
    pub fn new(dim: usize, with_covariance: bool) -> Self {
        MomentAccumulator {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            comoment: with_covariance.then(|| vec![0.0; dim * dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim(), "observation has the wrong dimension");
        self.n += 1;
        let n = self.n as f64;
        let d = self.dim();
        let before: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for i in 0..d {
            self.mean[i] += before[i] / n;
        }
        let after: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for i in 0..d {
            self.m2[i] += before[i] * after[i];
        }
        if let Some(c) = self.comoment.as_mut() {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += before[i] * after[j];
                }
            }
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        assert_eq!(self.dim(), other.dim(), "merging accumulators of different size");
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let d = self.dim();
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        for i in 0..d {
            self.mean[i] += delta[i] * nb / n;
            self.m2[i] += other.m2[i] + delta[i] * delta[i] * na * nb / n;
        }
        if let (Some(c), Some(co)) = (self.comoment.as_mut(), other.comoment.as_ref()) {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += co[i * d + j] + delta[i] * delta[j] * na * nb / n;
                }
            }
        }
        self.n += other.n;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> Vec<f64> {
        let dof = (self.n as f64 - 1.0).max(1.0);
        self.m2.iter().map(|m| m / dof).collect()
    }

    /// Standard error of each mean.
    pub fn stderr(&self) -> Vec<f64> {
        let n = (self.n as f64).max(1.0);
        self.variance().iter().map(|v| (v / n).sqrt()).collect()
    }

    /// Unbiased covariance matrix, row-major.
    pub fn covariance(&self) -> Option<Vec<f64>> {
        let dof = (self.n as f64 - 1.0).max(1.0);
        self.comoment
            .as_ref()
            .map(|c| c.iter().map(|v| v / dof).collect())
    }

    /// Standard error of the sample variance, from the normal-theory formula
    /// sqrt(2 / (n - 1)) * variance.
    pub fn variance_stderr(&self) -> Vec<f64> {
        let dof = (self.n as f64 - 1.0).max(1.0);
        self.variance().iter().map(|v| v * (2.0 / dof).sqrt()).collect()
    }
}
