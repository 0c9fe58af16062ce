//! Classical fourth-order Runge–Kutta on flat complex state vectors.

use num_complex::Complex64;

/// Integrates `y' = rhs(y)` from 0 to `t_end` in equal steps no longer than `dt`.
pub fn rk4<F>(y0: Vec<Complex64>, t_end: f64, dt: f64, rhs: F) -> Vec<Complex64>
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    if t_end <= 0.0 {
        return y0;
    }
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let n = y0.len();
    let mut y = y0;
    let mut k1 = vec![Complex64::new(0.0, 0.0); n];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    for _ in 0..steps {
        rhs(&y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(&tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let y = rk4(vec![Complex64::new(1.0, 0.0)], 1.0, 0.01, |y, d| d[0] = -y[0]);
        assert!((y[0].re - (-1f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |dt| {
            let y = rk4(vec![Complex64::new(1.0, 0.0)], 2.0, dt, |y, d| d[0] = -1.5 * y[0]);
            (y[0].re - (-3f64).exp()).abs()
        };
        let ratio = err(0.04) / err(0.02);
        assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
    }
}
