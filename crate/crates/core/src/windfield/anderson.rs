//! Anderson mixing for a fixed-point map `x -> g(x)`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

pub(super) struct Anderson {
    depth: usize,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    /// Differences of successive residuals `f = g - x` and of images `g`.
    df: VecDeque<Vec<f64>>,
    dg: VecDeque<Vec<f64>>,
}

impl Anderson {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            prev: None,
            df: VecDeque::with_capacity(depth),
            dg: VecDeque::with_capacity(depth),
        }
    }

    pub fn reset(&mut self) {
        self.prev = None;
        self.df.clear();
        self.dg.clear();
    }

    /// Next iterate from the current point `x` and its image `g`.
    pub fn next(&mut self, x: &[f64], g: Vec<f64>) -> Vec<f64> {
        if self.depth == 0 {
            return g;
        }
        let f: Vec<f64> = g.iter().zip(x).map(|(a, b)| a - b).collect();
        if let Some((f_old, g_old)) = self.prev.take() {
            if self.df.len() == self.depth {
                self.df.pop_front();
                self.dg.pop_front();
            }
            self.df.push_back(f.iter().zip(&f_old).map(|(a, b)| a - b).collect());
            self.dg.push_back(g.iter().zip(&g_old).map(|(a, b)| a - b).collect());
        }
        self.prev = Some((f.clone(), g.clone()));
        let m = self.df.len();
        if m == 0 {
            return g;
        }

        // normal equations of min |f - dF gamma|, scaled to unit diagonal
        let mut a = DMatrix::<f64>::zeros(m, m);
        let mut b = DVector::<f64>::zeros(m);
        for i in 0..m {
            b[i] = dot(&self.df[i], &f);
            for j in 0..=i {
                let v = dot(&self.df[i], &self.df[j]);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let scale: Vec<f64> = (0..m).map(|i| a[(i, i)].sqrt().max(f64::MIN_POSITIVE)).collect();
        for i in 0..m {
            b[i] /= scale[i];
            for j in 0..m {
                a[(i, j)] /= scale[i] * scale[j];
            }
            a[(i, i)] += 1e-10;
        }
        let Some(gamma) = a.cholesky().map(|c| c.solve(&b)) else {
            self.reset();
            return g;
        };
        let mut out = g;
        for i in 0..m {
            let c = gamma[i] / scale[i];
            for (o, d) in out.iter_mut().zip(&self.dg[i]) {
                *o -= c * d;
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            self.reset();
            return self.prev.as_ref().map(|p| p.1.clone()).unwrap_or(out);
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_linear_contraction_quickly() {
        // x = M x + c with a slow contraction factor 0.95
        let n = 6;
        let m = DMatrix::<f64>::from_fn(n, n, |i, j| if i == j { 0.95 } else if i + 1 == j { 0.03 } else { 0.0 });
        let c = DVector::<f64>::from_fn(n, |i, _| i as f64 + 1.0);
        let exact = (DMatrix::identity(n, n) - &m).lu().solve(&c).unwrap();
        let map = |x: &[f64]| -> Vec<f64> { (&m * DVector::from_column_slice(x) + &c).as_slice().to_vec() };

        let mut plain = vec![0.0; n];
        let mut mixed = vec![0.0; n];
        let mut aa = Anderson::new(n);
        for _ in 0..20 {
            plain = map(&plain);
            let g = map(&mixed);
            mixed = aa.next(&mixed, g);
        }
        let err = |x: &[f64]| (DVector::from_column_slice(x) - &exact).amax();
        assert!(err(&mixed) < 1e-8, "{}", err(&mixed));
        assert!(err(&plain) > 1.0);
    }

    #[test]
    fn depth_zero_is_plain_iteration() {
        let mut aa = Anderson::new(0);
        assert_eq!(aa.next(&[1.0, 2.0], vec![3.0, 4.0]), vec![3.0, 4.0]);
    }
}
