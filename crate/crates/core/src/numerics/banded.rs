//! Banded symmetric `LDLᵀ` factorization without pivoting.
//!
//! Intended for quasi-definite matrices (`[H Gᵀ; G −D]` with `H ≻ 0`,
//! `D ≻ 0` after a suitable ordering), which admit an `LDLᵀ` factorization
//! under any symmetric permutation. A symmetric diagonal scaling is applied
//! first so that entries of very different magnitude do not swamp the
//! pivots.

/// Lower band of a symmetric `m × m` matrix with half-bandwidth `b`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    m: usize,
    b: usize,
    /// Row `i` holds `A(i, i−k)` at offset `k`, `k = 0..=b`.
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(m: usize, b: usize) -> Self {
        Self {
            m,
            b,
            data: vec![0.0; m * (b + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn bandwidth(&self) -> usize {
        self.b
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.b, "({i}, {j}) outside the band");
        i * (self.b + 1) + (i - j)
    }

    /// Adds `v` to `A(i, j)` (and, by symmetry, `A(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.b {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// `A x` for the symmetric matrix.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.m];
        for i in 0..self.m {
            let lo = i.saturating_sub(self.b);
            for j in lo..=i {
                let a = self.data[self.idx(i, j)];
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// Factorizes `A = S⁻¹ L D Lᵀ S⁻¹` with `S` the diagonal scaling.
    /// Returns `None` on a zero or non-finite pivot.
    pub fn ldl(mut self) -> Option<BandLdl> {
        let (m, b) = (self.m, self.b);
        let scale: Vec<f64> = (0..m)
            .map(|i| {
                let d = self.data[self.idx(i, i)].abs();
                if d > 0.0 && d.is_finite() {
                    1.0 / d.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        for i in 0..m {
            for j in i.saturating_sub(b)..=i {
                let k = self.idx(i, j);
                self.data[k] *= scale[i] * scale[j];
            }
        }
        // In place: strictly lower part becomes L, diagonal becomes D.
        let mut work = vec![0.0; b + 1];
        for j in 0..m {
            let lo = j.saturating_sub(b);
            // work[k − lo] = L(j, k) · D(k)
            let mut d = self.data[self.idx(j, j)];
            for k in lo..j {
                let ljk = self.data[self.idx(j, k)];
                let dk = self.data[self.idx(k, k)];
                work[k - lo] = ljk * dk;
                d -= ljk * ljk * dk;
            }
            if !(d.abs() > 0.0 && d.is_finite()) {
                return None;
            }
            let jj = self.idx(j, j);
            self.data[jj] = d;
            for i in (j + 1)..(j + b + 1).min(m) {
                let lo_i = i.saturating_sub(b).max(lo);
                let mut v = self.data[self.idx(i, j)];
                for k in lo_i..j {
                    v -= self.data[self.idx(i, k)] * work[k - lo];
                }
                let ij = self.idx(i, j);
                self.data[ij] = v / d;
            }
        }
        Some(BandLdl { factor: self, scale })
    }
}

#[derive(Debug, Clone)]
pub struct BandLdl {
    factor: BandMatrix,
    scale: Vec<f64>,
}

impl BandLdl {
    pub fn size(&self) -> usize {
        self.factor.m
    }

    /// Solves `A x = rhs` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (m, b) = (self.factor.m, self.factor.b);
        let f = &self.factor;
        for i in 0..m {
            x[i] *= self.scale[i];
        }
        for i in 0..m {
            let mut v = x[i];
            for k in i.saturating_sub(b)..i {
                v -= f.data[f.idx(i, k)] * x[k];
            }
            x[i] = v;
        }
        for i in 0..m {
            x[i] /= f.data[f.idx(i, i)];
        }
        for i in (0..m).rev() {
            let mut v = x[i];
            for k in (i + 1)..(i + b + 1).min(m) {
                v -= f.data[f.idx(k, i)] * x[k];
            }
            x[i] = v;
        }
        for i in 0..m {
            x[i] *= self.scale[i];
        }
    }
}
