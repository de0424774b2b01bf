//! Constant-velocity Kalman filter over `[x, y, vx, vy]`, observing position.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::geometry::PointXY;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

impl KalmanState {
    /// Stationary state at `(x, y)` with independent position and velocity
    /// uncertainty.
    pub fn at_rest(x: f64, y: f64, position_std: f64, velocity_std: f64) -> Self {
        let pv = position_std * position_std;
        let vv = velocity_std * velocity_std;
        Self {
            mean: Vector4::new(x, y, 0.0, 0.0),
            covariance: Matrix4::from_diagonal(&Vector4::new(pv, pv, vv, vv)),
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.mean[0], self.mean[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.mean[2], self.mean[3])
    }

    pub fn speed(&self) -> f64 {
        self.mean[2].hypot(self.mean[3])
    }
}

pub fn transition(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

/// Piecewise-constant white acceleration noise with standard deviation
/// `accel_std`, applied independently on both axes.
pub fn process_noise(dt: f64, accel_std: f64) -> Matrix4<f64> {
    let q = accel_std * accel_std;
    let pp = q * dt.powi(4) / 4.0;
    let pv = q * dt.powi(3) / 2.0;
    let vv = q * dt * dt;
    #[rustfmt::skip]
    let m = Matrix4::new(
        pp,  0.0, pv,  0.0,
        0.0, pp,  0.0, pv,
        pv,  0.0, vv,  0.0,
        0.0, pv,  0.0, vv,
    );
    m
}

fn observation() -> Matrix2x4<f64> {
    #[rustfmt::skip]
    let h = Matrix2x4::new(
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
    );
    h
}

fn symmetrize(p: &Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

pub fn kalman_predict(state: &KalmanState, dt: f64, accel_std: f64) -> Result<KalmanState> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "prediction step must be non-negative, got {dt}"
        )));
    }
    if dt == 0.0 {
        return Ok(*state);
    }
    let f = transition(dt);
    Ok(KalmanState {
        mean: f * state.mean,
        covariance: symmetrize(
            &(f * state.covariance * f.transpose() + process_noise(dt, accel_std)),
        ),
    })
}

/// Position measurement update with isotropic noise `measurement_std`.
pub fn kalman_update(state: &KalmanState, z: &PointXY, measurement_std: f64) -> KalmanState {
    let h = observation();
    let r = Matrix2::identity() * (measurement_std * measurement_std);
    let innovation = Vector2::new(z.x, z.y) - h * state.mean;
    let s = h * state.covariance * h.transpose() + r;
    let s_inv = match s.try_inverse() {
        Some(inv) => inv,
        None => return *state,
    };
    let gain = state.covariance * h.transpose() * s_inv;
    let mean = state.mean + gain * innovation;
    let covariance = (Matrix4::identity() - gain * h) * state.covariance;
    KalmanState {
        mean,
        covariance: symmetrize(&covariance),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn min_eigen(p: &Matrix4<f64>) -> f64 {
        p.symmetric_eigenvalues().min()
    }

    #[test]
    fn predict_moves_by_velocity() {
        let s = KalmanState::at_rest(0.0, 0.0, 0.1, 1.0);
        let s = KalmanState {
            mean: Vector4::new(0.0, 0.0, 1.0, 0.0),
            ..s
        };
        let p = kalman_predict(&s, 0.05, 2.0).unwrap();
        assert_abs_diff_eq!(p.mean[0], 0.05, epsilon = 1e-15);
        assert_eq!((p.mean[1], p.mean[2], p.mean[3]), (0.0, 1.0, 0.0));
    }

    #[test]
    fn predict_zero_dt_is_identity() {
        let s = KalmanState::at_rest(1.0, 2.0, 0.3, 1.0);
        assert_eq!(kalman_predict(&s, 0.0, 2.0).unwrap(), s);
    }

    #[test]
    fn predict_rejects_negative_dt() {
        let s = KalmanState::at_rest(1.0, 2.0, 0.3, 1.0);
        assert!(kalman_predict(&s, -0.01, 2.0).is_err());
    }

    #[test]
    fn diffuse_prior_snaps_to_measurement() {
        let s = KalmanState::at_rest(0.0, 0.0, 1e4, 1.0);
        let post = kalman_update(&s, &PointXY::odom(3.0, 4.0), 0.1);
        assert_abs_diff_eq!(post.mean[0], 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(post.mean[1], 4.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let s = KalmanState {
            mean: Vector4::new(1.0, -2.0, 0.5, 0.3),
            ..KalmanState::at_rest(0.0, 0.0, 0.5, 1.0)
        };
        let post = kalman_update(&s, &PointXY::odom(1.0, -2.0), 0.1);
        assert_abs_diff_eq!(post.mean[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(post.mean[1], -2.0, epsilon = 1e-9);
    }

    #[test]
    fn fixed_point_measurements_drive_velocity_to_zero() {
        // Oracle: scalar steady-state recursion run independently per axis
        // with 2×2 arithmetic written out by hand.
        let (dt, q, r) = (0.05, 2.0_f64, 0.1_f64);
        let mut s = KalmanState {
            mean: Vector4::new(0.0, 0.0, 1.0, -1.0),
            ..KalmanState::at_rest(0.0, 0.0, 0.1, 1.5)
        };
        let (mut x, mut v) = (0.0_f64, 1.0_f64);
        let (mut pxx, mut pxv, mut pvv) = (0.01_f64, 0.0_f64, 2.25_f64);
        for _ in 0..50 {
            s = kalman_predict(&s, dt, q).unwrap();
            s = kalman_update(&s, &PointXY::odom(0.0, 0.0), r);

            x += v * dt;
            let q2 = q * q;
            let npxx = pxx + 2.0 * dt * pxv + dt * dt * pvv + q2 * dt.powi(4) / 4.0;
            let npxv = pxv + dt * pvv + q2 * dt.powi(3) / 2.0;
            let npvv = pvv + q2 * dt * dt;
            let sden = npxx + r * r;
            let (kx, kv) = (npxx / sden, npxv / sden);
            let innov = 0.0 - x;
            x += kx * innov;
            v += kv * innov;
            pxx = (1.0 - kx) * npxx;
            pxv = (1.0 - kx) * npxv;
            pvv = npvv - kv * npxv;
        }
        assert_abs_diff_eq!(s.mean[2], v, epsilon = 1e-9);
        assert_abs_diff_eq!(s.covariance[(0, 0)], pxx, epsilon = 1e-9);
        assert!(s.speed() < 0.01, "speed {}", s.speed());
    }

    fn arb_psd() -> impl Strategy<Value = Matrix4<f64>> {
        proptest::collection::vec(-2.0..2.0f64, 16).prop_map(|v| {
            let a = Matrix4::from_row_slice(&v);
            a * a.transpose() + Matrix4::identity() * 1e-6
        })
    }

    fn arb_diag_psd() -> impl Strategy<Value = Matrix4<f64>> {
        proptest::collection::vec(0.0..5.0f64, 4)
            .prop_map(|v| Matrix4::from_diagonal(&Vector4::from_row_slice(&v)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn predict_adds_psd_noise(p in arb_psd(), dt in 0.001..1.0f64, q in 0.0..5.0f64) {
            let s = KalmanState { mean: Vector4::zeros(), covariance: p };
            let out = kalman_predict(&s, dt, q).unwrap();
            let f = transition(dt);
            let propagated = f * p * f.transpose();
            prop_assert!(min_eigen(&(out.covariance - propagated)) >= -1e-9);
            prop_assert!(out.covariance.trace() >= propagated.trace() - 1e-12);
        }

        #[test]
        fn predict_grows_trace_without_negative_cross_terms(
            p in arb_diag_psd(), dt in 0.001..1.0f64, q in 0.0..5.0f64,
        ) {
            let s = KalmanState { mean: Vector4::zeros(), covariance: p };
            let out = kalman_predict(&s, dt, q).unwrap();
            prop_assert!(out.covariance.trace() >= p.trace());
        }

        #[test]
        fn update_shrinks_position_block(
            p in arb_psd(), zx in -5.0..5.0f64, zy in -5.0..5.0f64, r in 0.01..1.0f64,
        ) {
            let s = KalmanState { mean: Vector4::zeros(), covariance: p };
            let out = kalman_update(&s, &PointXY::odom(zx, zy), r);
            let prior = p.fixed_view::<2, 2>(0, 0).into_owned();
            let post = out.covariance.fixed_view::<2, 2>(0, 0).into_owned();
            let diff = prior - post;
            prop_assert!(diff.symmetric_eigenvalues().min() >= -1e-9);
            prop_assert!(min_eigen(&out.covariance) >= -1e-9);
            prop_assert!((out.covariance - out.covariance.transpose()).abs().max() <= 1e-9);
        }
    }
}
