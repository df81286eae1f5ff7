//! L2-regularized logistic regression objective.
//!
//! ```text
//! f(w, b) = (1/N) * sum_i [ softplus(z_i) - y_i * z_i ] + (lambda/2) * |w|^2
//! z_i     = w . x_i + b
//! ```
//!
//! The bias is not penalized.

use ndarray::ArrayView2;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Parameters are laid out as `[w_0, .., w_{d-1}, b]`.
pub struct LogisticObjective<'a> {
    features: ArrayView2<'a, f64>,
    labels: &'a [bool],
    l2_strength: f64,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(features: ArrayView2<'a, f64>, labels: &'a [bool], l2_strength: f64) -> Self {
        assert_eq!(features.nrows(), labels.len());
        LogisticObjective {
            features,
            labels,
            l2_strength,
        }
    }

    pub fn num_params(&self) -> usize {
        self.features.ncols() + 1
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        let mut scratch = vec![0.0; params.len()];
        self.value_and_gradient(params, &mut scratch)
    }

    pub fn value_and_gradient(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.features.ncols();
        let (w, b) = (&params[..d], params[d]);
        let n = self.labels.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);

        let mut loss = 0.0;
        for (row, &y) in self.features.rows().into_iter().zip(self.labels) {
            let z = row.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() + b;
            let y = f64::from(u8::from(y));
            loss += softplus(z) - y * z;
            let residual = sigmoid(z) - y;
            for (g, x) in grad[..d].iter_mut().zip(row.iter()) {
                *g += residual * x;
            }
            grad[d] += residual;
        }
        grad.iter_mut().for_each(|g| *g /= n);

        let mut penalty = 0.0;
        for (g, wi) in grad[..d].iter_mut().zip(w) {
            *g += self.l2_strength * wi;
            penalty += wi * wi;
        }
        loss / n + 0.5 * self.l2_strength * penalty
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sigmoid_is_stable_and_symmetric() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(softplus(800.0).is_finite() && softplus(-800.0) >= 0.0);
    }

    #[test]
    fn value_at_origin_is_ln2() {
        let x = array![[1.0, 2.0], [-1.0, 0.5], [0.0, 0.0]];
        let y = [true, false, true];
        let obj = LogisticObjective::new(x.view(), &y, 1.0);
        assert!((obj.value(&[0.0, 0.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = array![[1.0, 2.0, -0.3], [-1.0, 0.5, 0.2], [0.3, -0.7, 1.1], [2.0, 0.1, -1.0]];
        let y = [true, false, true, false];
        let obj = LogisticObjective::new(x.view(), &y, 0.7);
        let p = [0.2, -0.4, 0.9, 0.1];
        let mut g = [0.0; 4];
        obj.value_and_gradient(&p, &mut g);
        let h = 1e-6;
        for i in 0..4 {
            let mut up = p;
            let mut down = p;
            up[i] += h;
            down[i] -= h;
            let fd = (obj.value(&up) - obj.value(&down)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "param {i}: {fd} vs {}", g[i]);
        }
    }
}
