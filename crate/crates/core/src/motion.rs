//! Constant-velocity Kalman filter over the 3D box state
//! `[x, y, z, yaw, h, w, l, vx, vy, vz]`. Velocities are in meters per frame.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Box3D};

pub const STATE_DIM: usize = 10;
pub const OBS_DIM: usize = 7;
const YAW: usize = 3;

/// Smallest dimension a filter box may report.
pub const MIN_DIMENSION: f64 = 0.01;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;

/// Diagonal noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Initial variance of the observed components.
    pub p0_observed: f64,
    /// Initial variance of the velocity components.
    pub p0_velocity: f64,
    pub q_position: f64,
    pub q_velocity: f64,
    pub q_yaw: f64,
    pub q_dimensions: f64,
    /// Measurement variance, shared by all 7 observed components.
    pub r: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { p0_observed: 10.0, p0_velocity: 1000.0, q_position: 1e-2, q_velocity: 1e-2, q_yaw: 0.0, q_dimensions: 0.0, r: 1.0 }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("p0_observed", self.p0_observed),
            ("p0_velocity", self.p0_velocity),
            ("q_position", self.q_position),
            ("q_velocity", self.q_velocity),
            ("q_yaw", self.q_yaw),
            ("q_dimensions", self.q_dimensions),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("noise.{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(format!("noise.r must be finite and positive, got {}", self.r));
        }
        Ok(())
    }

    fn process_noise(&self) -> StateMatrix {
        let mut q = StateMatrix::zeros();
        for i in 0..3 {
            q[(i, i)] = self.q_position;
            q[(7 + i, 7 + i)] = self.q_velocity;
            q[(4 + i, 4 + i)] = self.q_dimensions;
        }
        q[(YAW, YAW)] = self.q_yaw;
        q
    }
}

/// Mean and covariance of one track's motion state.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub mean: StateVector,
    pub covariance: StateMatrix,
}

/// Yaw residual `obs − pred`, wrapped, with the observation turned by π
/// when the wrapped residual exceeds π/2 in magnitude.
pub fn yaw_innovation(predicted: f64, observed: f64) -> f64 {
    let d = wrap_angle(observed - predicted);
    if d.abs() > FRAC_PI_2 {
        if d > 0.0 {
            d - PI
        } else {
            d + PI
        }
    } else {
        d
    }
}

fn symmetrize(m: &StateMatrix) -> StateMatrix {
    (m + m.transpose()) * 0.5
}

impl FilterState {
    pub fn init(obs: &Box3D, cfg: &NoiseConfig) -> FilterState {
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<OBS_DIM>(0).copy_from(&observation_vector(obs));
        let mut covariance = StateMatrix::zeros();
        for i in 0..STATE_DIM {
            covariance[(i, i)] = if i < OBS_DIM { cfg.p0_observed } else { cfg.p0_velocity };
        }
        FilterState { mean, covariance }
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.mean[7], self.mean[8], self.mean[9])
    }

    pub fn predict(&self, cfg: &NoiseConfig) -> FilterState {
        let mut mean = self.mean;
        for i in 0..3 {
            mean[i] += mean[7 + i];
        }
        mean[YAW] = wrap_angle(mean[YAW]);

        // F = I + E where E copies velocity into position, so
        // F P Fᵀ = P + E P + P Eᵀ + E P Eᵀ.
        let p = &self.covariance;
        let mut fp = *p;
        for i in 0..3 {
            for j in 0..STATE_DIM {
                fp[(i, j)] += p[(7 + i, j)];
            }
        }
        let mut fpf = fp;
        for i in 0..STATE_DIM {
            for j in 0..3 {
                fpf[(i, j)] += fp[(i, 7 + j)];
            }
        }
        let covariance = symmetrize(&(fpf + cfg.process_noise()));
        FilterState { mean, covariance }
    }

    /// Joseph-form Kalman update with the 7-component box observation.
    pub fn update(&self, obs: &Box3D, cfg: &NoiseConfig) -> FilterState {
        let z = observation_vector(obs);
        let mut innovation = z - self.mean.fixed_rows::<OBS_DIM>(0);
        innovation[YAW] = yaw_innovation(self.mean[YAW], z[YAW]);

        let p = &self.covariance;
        // H = [I | 0], so P Hᵀ is the first 7 columns and H P Hᵀ the top-left block.
        let pht: SMatrix<f64, STATE_DIM, OBS_DIM> = p.fixed_columns::<OBS_DIM>(0).into_owned();
        let mut s: SMatrix<f64, OBS_DIM, OBS_DIM> = p.fixed_view::<OBS_DIM, OBS_DIM>(0, 0).into_owned();
        for i in 0..OBS_DIM {
            s[(i, i)] += cfg.r;
        }
        let s = (s + s.transpose()) * 0.5;
        let s_inv = match s.cholesky() {
            Some(ch) => ch.inverse(),
            None => s.try_inverse().unwrap_or_else(SMatrix::zeros),
        };
        let gain = pht * s_inv;

        let mut mean = self.mean + gain * innovation;
        mean[YAW] = wrap_angle(mean[YAW]);

        let mut kh = StateMatrix::zeros();
        kh.fixed_columns_mut::<OBS_DIM>(0).copy_from(&gain);
        let i_kh = StateMatrix::identity() - kh;
        let covariance = i_kh * p * i_kh.transpose() + gain * gain.transpose() * cfg.r;
        FilterState { mean, covariance: symmetrize(&covariance) }
    }

    /// Box of the current mean. Dimensions at or below zero are clamped to
    /// [`MIN_DIMENSION`]; the flag reports whether that happened.
    pub fn to_box(&self) -> (Box3D, bool) {
        let m = &self.mean;
        let mut degenerate = false;
        let mut dims = Vector3::new(m[4], m[5], m[6]);
        for d in dims.iter_mut() {
            if d.is_nan() || *d <= 0.0 {
                *d = MIN_DIMENSION;
                degenerate = true;
            }
        }
        let b = Box3D::new(Vector3::new(m[0], m[1], m[2]), dims, m[YAW]).expect("filter mean is finite and dimensions are clamped");
        (b, degenerate)
    }
}

fn observation_vector(b: &Box3D) -> SVector<f64, OBS_DIM> {
    let p = b.position();
    let d = b.dimensions();
    SVector::<f64, OBS_DIM>::from([p.x, p.y, p.z, b.yaw(), d.x, d.y, d.z])
}

pub fn init_filter(obs: &Box3D, cfg: &NoiseConfig) -> FilterState {
    FilterState::init(obs, cfg)
}

pub fn predict(s: &FilterState, cfg: &NoiseConfig) -> FilterState {
    s.predict(cfg)
}

pub fn update(s: &FilterState, obs: &Box3D, cfg: &NoiseConfig) -> FilterState {
    s.update(obs, cfg)
}

pub fn state_to_box(s: &FilterState) -> (Box3D, bool) {
    s.to_box()
}
