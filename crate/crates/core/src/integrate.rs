//! Classical fixed-step Runge–Kutta.

use nalgebra::DVector;

/// One RK4 step of `ẏ = f(s, y)`, with `s` the offset from the step start.
pub fn rk4_step<F>(y: &DVector<f64>, dt: f64, mut f: F) -> DVector<f64>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let h2 = 0.5 * dt;
    let k1 = f(0.0, y);
    let k2 = f(h2, &(y + &k1 * h2));
    let k3 = f(h2, &(y + &k2 * h2));
    let k4 = f(dt, &(y + &k3 * dt));
    y + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_cubic_in_time() {
        // ẏ = 3s² integrates exactly
        let y = rk4_step(&DVector::from_element(1, 0.0), 0.5, |s, _| DVector::from_element(1, 3.0 * s * s));
        assert!((y[0] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn fourth_order_on_exponential() {
        let err = |dt: f64| {
            let mut y = DVector::from_element(1, 1.0);
            let steps = (1.0 / dt).round() as usize;
            for _ in 0..steps {
                y = rk4_step(&y, dt, |_, y| -y);
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
    }
}
