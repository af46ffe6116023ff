//! Constant-velocity Kalman filter over `[cx, cy, s, r, v_cx, v_cy, v_s]`.

use std::collections::VecDeque;

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::TrackerError;
use crate::types::{BBox, CenterScale};

pub type StateVector = SVector<f64, 7>;
pub type StateCovariance = SMatrix<f64, 7, 7>;
type Measurement = SVector<f64, 4>;
type ObservationMatrix = SMatrix<f64, 4, 7>;

/// Most recent appearance descriptors kept per track.
pub const GALLERY_CAPACITY: usize = 100;

/// Minimum eigenvalue tolerated before a covariance is declared broken.
pub const SPD_TOLERANCE: f64 = 1e-9;

/// Diagonal noise model. Defaults follow the reference SORT implementation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanNoise {
    /// Initial state variances.
    pub initial: [f64; 7],
    /// Process noise per predict step.
    pub process: [f64; 7],
    /// Measurement noise for `[cx, cy, s, r]`.
    pub measurement: [f64; 4],
}

impl Default for KalmanNoise {
    fn default() -> Self {
        KalmanNoise {
            initial: [10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4],
            process: [1.0, 1.0, 1.0, 1.0, 1e-2, 1e-2, 1e-4],
            measurement: [1.0, 1.0, 10.0, 10.0],
        }
    }
}

/// Per-identity filter state and lifecycle counters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub track_id: u32,
    pub mean: StateVector,
    pub covariance: StateCovariance,
    /// Measurements incorporated, including the initializing one.
    pub hits: u32,
    /// Predict steps since creation.
    pub age: u32,
    pub time_since_update: u32,
    pub descriptor_gallery: VecDeque<Vec<f64>>,
}

fn measurement_of(b: &BBox) -> Measurement {
    let CenterScale { cx, cy, s, r } = b.center_scale();
    Measurement::new(cx, cy, s, r)
}

fn observation() -> ObservationMatrix {
    let mut h = ObservationMatrix::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn transition() -> StateCovariance {
    let mut f = StateCovariance::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn symmetrize(p: &StateCovariance) -> StateCovariance {
    (p + p.transpose()) * 0.5
}

/// Largest `|P - P^T|` entry.
pub fn symmetry_defect(p: &StateCovariance) -> f64 {
    (p - p.transpose()).amax()
}

pub fn min_eigenvalue(p: &StateCovariance) -> f64 {
    SymmetricEigen::new(symmetrize(p)).eigenvalues.min()
}

fn check(p: &StateCovariance, x: &StateVector) -> Result<(), TrackerError> {
    if !p.iter().chain(x.iter()).all(|v| v.is_finite()) {
        return Err(TrackerError::NumericalBlowup { min_eigenvalue: f64::NAN });
    }
    let m = min_eigenvalue(p);
    if m < -SPD_TOLERANCE {
        return Err(TrackerError::NumericalBlowup { min_eigenvalue: m });
    }
    Ok(())
}

impl TrackState {
    pub fn new(track_id: u32, bbox: &BBox, noise: &KalmanNoise) -> Self {
        let z = measurement_of(bbox);
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        TrackState {
            track_id,
            mean,
            covariance: StateCovariance::from_diagonal(&SVector::from(noise.initial)),
            hits: 1,
            age: 0,
            time_since_update: 0,
            descriptor_gallery: VecDeque::new(),
        }
    }

    pub fn center_scale(&self) -> CenterScale {
        CenterScale {
            cx: self.mean[0],
            cy: self.mean[1],
            s: self.mean[2],
            r: self.mean[3],
        }
    }

    /// Box implied by the current mean, if area and aspect are positive.
    pub fn bbox(&self) -> Option<BBox> {
        self.center_scale().to_bbox().ok()
    }

    pub fn push_descriptor(&mut self, d: Vec<f64>) {
        if self.descriptor_gallery.len() == GALLERY_CAPACITY {
            self.descriptor_gallery.pop_front();
        }
        self.descriptor_gallery.push_back(d);
    }
}

/// One constant-velocity step. The area velocity is zeroed when it would
/// drive the area non-positive.
pub fn kalman_predict(t: &TrackState, noise: &KalmanNoise) -> Result<TrackState, TrackerError> {
    let mut mean = t.mean;
    if mean[2] + mean[6] <= 0.0 {
        mean[6] = 0.0;
    }
    let f = transition();
    let q = StateCovariance::from_diagonal(&SVector::from(noise.process));
    let mean = f * mean;
    let covariance = symmetrize(&(f * t.covariance * f.transpose() + q));
    check(&covariance, &mean)?;
    Ok(TrackState {
        mean,
        covariance,
        age: t.age + 1,
        time_since_update: t.time_since_update + 1,
        ..t.clone()
    })
}

/// Correction with a box measurement, Joseph form.
pub fn kalman_update(t: &TrackState, z: &BBox, noise: &KalmanNoise) -> Result<TrackState, TrackerError> {
    let h = observation();
    let r = SMatrix::<f64, 4, 4>::from_diagonal(&SVector::from(noise.measurement));
    let p = &t.covariance;
    let innovation = measurement_of(z) - h * t.mean;
    let s = symmetrize4(&(h * p * h.transpose() + r));
    let s_inv = s
        .cholesky()
        .ok_or(TrackerError::NumericalBlowup { min_eigenvalue: f64::NAN })?
        .inverse();
    let gain = p * h.transpose() * s_inv;
    let mean = t.mean + gain * innovation;
    let i_kh = StateCovariance::identity() - gain * h;
    let covariance = symmetrize(&(i_kh * p * i_kh.transpose() + gain * r * gain.transpose()));
    check(&covariance, &mean)?;
    Ok(TrackState {
        mean,
        covariance,
        hits: t.hits + 1,
        time_since_update: 0,
        ..t.clone()
    })
}

fn symmetrize4(m: &SMatrix<f64, 4, 4>) -> SMatrix<f64, 4, 4> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(b: (f64, f64, f64, f64)) -> TrackState {
        TrackState::new(1, &BBox::new(b.0, b.1, b.2, b.3).unwrap(), &KalmanNoise::default())
    }

    #[test]
    fn zero_velocity_keeps_position() {
        let t = state((10.0, 10.0, 20.0, 40.0));
        let p = kalman_predict(&t, &KalmanNoise::default()).unwrap();
        assert_eq!(p.mean.fixed_rows::<4>(0), t.mean.fixed_rows::<4>(0));
        assert_eq!((p.age, p.time_since_update), (1, 1));
    }

    #[test]
    fn velocity_moves_center() {
        let mut t = state((10.0, 10.0, 20.0, 40.0));
        t.mean[4] = 2.0;
        let cx0 = t.mean[0];
        let noise = KalmanNoise::default();
        let p1 = kalman_predict(&t, &noise).unwrap();
        let p2 = kalman_predict(&p1, &noise).unwrap();
        assert_eq!(p1.mean[0], cx0 + 2.0);
        assert_eq!(p2.mean[0], cx0 + 4.0);
        assert_eq!(p2.mean[3], t.mean[3]);
    }

    #[test]
    fn predict_trace_matches_reference() {
        // Reference: with F = [[1,1],[0,1]] per (position, velocity) pair,
        // var_pos' = var_pos + 2 cov + var_vel + q_pos, var_vel' = var_vel + q_vel.
        let noise = KalmanNoise::default();
        let mut t = state((0.0, 0.0, 10.0, 10.0));
        for _ in 0..5 {
            let p = &t.covariance;
            let mut expected = 0.0;
            for (pos, vel) in [(0usize, 4usize), (1, 5), (2, 6)] {
                expected += p[(pos, pos)] + 2.0 * p[(pos, vel)] + p[(vel, vel)] + noise.process[pos];
                expected += p[(vel, vel)] + noise.process[vel];
            }
            expected += p[(3, 3)] + noise.process[3];
            let next = kalman_predict(&t, &noise).unwrap();
            let got = next.covariance.trace();
            assert!((got - expected).abs() < 1e-9 * expected);
            assert!(got > t.covariance.trace());
            t = next;
        }
    }

    #[test]
    fn update_at_predicted_measurement_keeps_mean() {
        let b = BBox::new(10.0, 20.0, 30.0, 60.0).unwrap();
        let t = state((10.0, 20.0, 30.0, 60.0));
        let u = kalman_update(&t, &b, &KalmanNoise::default()).unwrap();
        assert!((u.mean - t.mean).amax() < 1e-12);
        assert!(u.covariance.trace() < t.covariance.trace());
        assert_eq!((u.hits, u.time_since_update), (2, 0));
        assert!(symmetry_defect(&u.covariance) < 1e-12);
    }

    #[test]
    fn repeated_updates_follow_scalar_oracle() {
        // With an uncorrelated prior each observed dimension is a scalar filter:
        // after n updates, m_n = z + (m_0 - z) * r / (r + n * p_0).
        let noise = KalmanNoise::default();
        let b0 = BBox::new(10.0, 20.0, 30.0, 60.0).unwrap();
        let mut t = TrackState::new(1, &b0, &noise);
        let m0 = t.mean;
        let zb = BBox::new(10.03, 19.97, 30.0, 60.0).unwrap();
        let z = measurement_of(&zb);
        let mut converged_at = None;
        for n in 1..=50u32 {
            t = kalman_update(&t, &zb, &noise).unwrap();
            let mut max_err: f64 = 0.0;
            for d in 0..4 {
                let (p0, r) = (noise.initial[d], noise.measurement[d]);
                let expected = z[d] + (m0[d] - z[d]) * r / (r + n as f64 * p0);
                assert!((t.mean[d] - expected).abs() < 1e-9, "dim {d} step {n}");
                max_err = max_err.max((t.mean[d] - z[d]).abs());
            }
            if max_err < 1e-3 && converged_at.is_none() {
                converged_at = Some(n);
            }
        }
        assert!(converged_at.is_some_and(|n| n <= 50));
    }

    #[test]
    fn gallery_is_bounded() {
        let mut t = state((0.0, 0.0, 1.0, 1.0));
        for i in 0..150 {
            t.push_descriptor(vec![i as f64]);
        }
        assert_eq!(t.descriptor_gallery.len(), GALLERY_CAPACITY);
        assert_eq!(t.descriptor_gallery[0], vec![50.0]);
    }
}
