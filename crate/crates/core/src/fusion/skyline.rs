//! Symmetric positive definite matrices in skyline (variable band) storage
//! with an in-place Cholesky factorization. Row `i` stores columns
//! `first[i]..=i`; the factor has the same profile.

#[derive(Debug, Clone)]
pub(crate) struct Skyline {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

/// Failing pivot of a factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Pivot(pub usize);

impl Skyline {
    /// Zero matrix whose row `i` may hold entries from column `first[i]`.
    pub fn zeros(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut len = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            start.push(len);
            len += i + 1 - f;
        }
        start.push(len);
        Self {
            first,
            start,
            data: vec![0.0; len],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.start[i]..self.start[i + 1]]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if j < self.first[i] {
            0.0
        } else {
            self.data[self.start[i] + j - self.first[i]]
        }
    }

    /// Adds `v` at `(i, j)` of the lower triangle; `j <= i`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && j >= self.first[i], "({i},{j}) outside profile");
        self.data[self.start[i] + j - self.first[i]] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, v) in d.iter().enumerate() {
            self.add(i, i, *v);
        }
    }

    /// Cholesky factor `L` with `A = L L^T`. A pivot at or below
    /// `rel_tol` times its original diagonal is reported as singular.
    pub fn cholesky(&self, rel_tol: f64) -> Result<Skyline, Pivot> {
        let mut l = self.clone();
        for i in 0..l.dim() {
            let fi = l.first[i];
            for j in fi..=i {
                let fj = l.first[j];
                let k0 = fi.max(fj);
                let ri = &l.data[l.start[i]..l.start[i + 1]];
                let rj = &l.data[l.start[j]..l.start[j + 1]];
                let dot: f64 = ri[k0 - fi..j - fi]
                    .iter()
                    .zip(&rj[k0 - fj..j - fj])
                    .map(|(a, b)| a * b)
                    .sum();
                let s = ri[j - fi] - dot;
                let v = if j < i {
                    s / rj[j - fj]
                } else {
                    let orig = self.get(i, i);
                    if !(s > rel_tol * orig.abs()) || !(s > 0.0) || !s.is_finite() {
                        return Err(Pivot(i));
                    }
                    s.sqrt()
                };
                let at = l.start[i] + j - fi;
                l.data[at] = v;
            }
        }
        Ok(l)
    }

    /// Solves `L L^T x = b` in place, `self` being a Cholesky factor.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let r = self.row(i);
            let dot: f64 = r[..i - fi].iter().zip(&b[fi..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - dot) / r[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let r = self.row(i);
            b[i] /= r[i - fi];
            let xi = b[i];
            for (k, a) in r[..i - fi].iter().enumerate() {
                b[fi + k] -= a * xi;
            }
        }
    }
}
