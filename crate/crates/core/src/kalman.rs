//! Linear Kalman filter over normalised GPU telemetry.
//!
//! The state is a scalar indicator of upcoming GPU throughput decline: a
//! positive estimate means the GPU is about to lose performance and needs
//! more network resources, a non-positive one means the even split is fine.

use nalgebra::{DMatrix, DVector};

use crate::error::KalmanError;
use crate::traffic::EpochTelemetry;

/// Largest innovation-covariance condition number accepted by `update`.
pub const MAX_CONDITION: f64 = 1e12;

/// Binary allocation signal derived from the filter output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Signal {
    /// Even split of VCs and round-robin switch arbitration.
    #[default]
    Balanced,
    /// More VCs and switch slots for GPU traffic.
    FavorGpu,
}

impl Signal {
    pub fn as_u8(self) -> u8 {
        match self {
            Signal::Balanced => 0,
            Signal::FavorGpu => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Signal::Balanced),
            1 => Some(Signal::FavorGpu),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KalmanModel {
    /// State transition (n×n).
    pub a: DMatrix<f64>,
    /// Control input (n×u).
    pub b: DMatrix<f64>,
    /// Observation model (m×n).
    pub h: DMatrix<f64>,
    /// Process noise covariance (n×n).
    pub q: DMatrix<f64>,
    /// Observation noise covariance (m×m).
    pub r: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KalmanState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    /// Gain of the last measurement update (n×m); zero before the first.
    pub gain: DMatrix<f64>,
}

/// Output of the time update.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

/// Normalised measurement vector; every component lies in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(DVector<f64>);

impl Observation {
    pub fn new(values: &[f64]) -> Result<Self, KalmanError> {
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(KalmanError::Dimension(format!(
                "observation component {v} outside [-1, 1]"
            )));
        }
        Ok(Self(DVector::from_column_slice(values)))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<(), KalmanError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(KalmanError::Dimension(format!(
            "{name} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_symmetric_psd(name: &str, m: &DMatrix<f64>) -> Result<(), KalmanError> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(KalmanError::Dimension(format!("{name} is not symmetric")));
    }
    if m.nrows() > 0 {
        let min_eig = m.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-12 * scale {
            return Err(KalmanError::Dimension(format!(
                "{name} is not positive semi-definite"
            )));
        }
    }
    Ok(())
}

impl KalmanModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        h: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self, KalmanError> {
        let n = a.nrows();
        let m = h.nrows();
        check_square("A", &a, n)?;
        check_square("Q", &q, n)?;
        check_square("R", &r, m)?;
        if b.nrows() != n {
            return Err(KalmanError::Dimension(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if h.ncols() != n {
            return Err(KalmanError::Dimension(format!(
                "H has {} columns, expected {n}",
                h.ncols()
            )));
        }
        check_symmetric_psd("Q", &q)?;
        check_symmetric_psd("R", &r)?;
        Ok(Self { a, b, h, q, r })
    }

    /// Scalar state with `weights.len()` observations: A = [a], B empty,
    /// H = weights as a column, Q = [q], R = r·I.
    pub fn scalar(a: f64, q: f64, weights: &[f64], r: f64) -> Result<Self, KalmanError> {
        let m = weights.len();
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::zeros(1, 0),
            DMatrix::from_column_slice(m, 1, weights),
            DMatrix::from_element(1, 1, q),
            DMatrix::identity(m, m) * r,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn initial_state(
        &self,
        x0: DVector<f64>,
        p0: DMatrix<f64>,
    ) -> Result<KalmanState, KalmanError> {
        let n = self.state_dim();
        if x0.len() != n {
            return Err(KalmanError::Dimension(format!(
                "x0 has length {}, expected {n}",
                x0.len()
            )));
        }
        check_square("P0", &p0, n)?;
        check_symmetric_psd("P0", &p0)?;
        Ok(KalmanState {
            x: x0,
            p: p0,
            gain: DMatrix::zeros(n, self.obs_dim()),
        })
    }

    /// Time update: `x⁻ = A·x + B·u`, `P⁻ = A·P·Aᵀ + Q`.
    pub fn predict(&self, state: &KalmanState, u: &DVector<f64>) -> Result<Prior, KalmanError> {
        let n = self.state_dim();
        if state.x.len() != n || state.p.nrows() != n || state.p.ncols() != n {
            return Err(KalmanError::Dimension(format!(
                "state does not match state dimension {n}"
            )));
        }
        if u.len() != self.control_dim() {
            return Err(KalmanError::Dimension(format!(
                "control has length {}, expected {}",
                u.len(),
                self.control_dim()
            )));
        }
        let x = &self.a * &state.x + &self.b * u;
        let p = &self.a * &state.p * self.a.transpose() + &self.q;
        Ok(Prior { x, p })
    }

    /// Measurement update:
    /// `K = P⁻·Hᵀ·(H·P⁻·Hᵀ + R)⁻¹`, `x = x⁻ + K·(z − H·x⁻)`, `P = (I − K·H)·P⁻`.
    pub fn update(&self, prior: &Prior, z: &Observation) -> Result<KalmanState, KalmanError> {
        let z = z.as_vector();
        let (n, m) = (self.state_dim(), self.obs_dim());
        if z.len() != m {
            return Err(KalmanError::Dimension(format!(
                "observation has length {}, expected {m}",
                z.len()
            )));
        }
        if prior.x.len() != n || prior.p.nrows() != n {
            return Err(KalmanError::Dimension(format!(
                "prior does not match state dimension {n}"
            )));
        }
        let ht = self.h.transpose();
        let s = &self.h * &prior.p * &ht + &self.r;
        let s = (&s + s.transpose()) * 0.5;
        let eig = s.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if cond.is_nan() || cond > MAX_CONDITION {
            return Err(KalmanError::Singular(cond));
        }
        let s_inv = match s.clone().cholesky() {
            Some(c) => c.inverse(),
            None => s.try_inverse().ok_or(KalmanError::Singular(cond))?,
        };
        let gain = &prior.p * &ht * s_inv;
        let innovation = z - &self.h * &prior.x;
        let x = &prior.x + &gain * innovation;
        let p = (DMatrix::identity(n, n) - &gain * &self.h) * &prior.p;
        let p = (&p + p.transpose()) * 0.5;
        Ok(KalmanState { x, p, gain })
    }
}

/// Online min-max scaling onto [-1, 1] using every value seen so far.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Normalizer {
    range: Option<(f64, f64)>,
}

impl Normalizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        self.range
    }

    pub fn normalize(&mut self, raw: f64) -> f64 {
        let (min, max) = match self.range {
            None => (raw, raw),
            Some((lo, hi)) => (lo.min(raw), hi.max(raw)),
        };
        self.range = Some((min, max));
        Self::scale(raw, min, max)
    }

    /// The min-max map for a fixed range.
    pub fn scale(raw: f64, min: f64, max: f64) -> f64 {
        if max <= min {
            0.0
        } else {
            (2.0 * (raw - min) / (max - min) - 1.0).clamp(-1.0, 1.0)
        }
    }
}

/// Everything one epoch's filter step produced.
#[derive(Clone, Debug, PartialEq)]
pub struct KfStep {
    pub z: Vec<f64>,
    pub prior: Prior,
    pub state: KalmanState,
    /// Next-epoch prediction `A·x` of the first state component.
    pub predicted: f64,
    pub signal: Signal,
}

/// Runs one predict/update cycle on an epoch's GPU telemetry.
///
/// Observations are `(stall_dramfull, icnt_push, stall_icnt_shader)`, each
/// normalised by its own running min-max. The signal is `FavorGpu` iff the
/// prediction exceeds `threshold`.
pub fn kf_step(
    model: &KalmanModel,
    state: &KalmanState,
    telemetry: &EpochTelemetry,
    normalizers: &mut [Normalizer; 3],
    threshold: f64,
) -> Result<KfStep, KalmanError> {
    if model.obs_dim() != 3 {
        return Err(KalmanError::Dimension(format!(
            "telemetry gives 3 observations, model expects {}",
            model.obs_dim()
        )));
    }
    let gpu = &telemetry.gpu;
    let raw = [
        gpu.stall_dramfull as f64,
        gpu.icnt_push as f64,
        gpu.stall_icnt_shader as f64,
    ];
    let z: Vec<f64> = raw
        .iter()
        .zip(normalizers.iter_mut())
        .map(|(&r, n)| n.normalize(r))
        .collect();
    let obs = Observation::new(&z)?;
    let u = DVector::zeros(model.control_dim());
    let prior = model.predict(state, &u)?;
    let next = model.update(&prior, &obs)?;
    let predicted = (&model.a * &next.x)[0];
    let signal = if predicted > threshold {
        Signal::FavorGpu
    } else {
        Signal::Balanced
    };
    Ok(KfStep {
        z,
        prior,
        state: next,
        predicted,
        signal,
    })
}

/// Filter plus its normalisers, stepped once per epoch.
#[derive(Clone, Debug)]
pub struct Predictor {
    model: KalmanModel,
    state: KalmanState,
    normalizers: [Normalizer; 3],
    threshold: f64,
}

impl Predictor {
    pub fn new(model: KalmanModel, state: KalmanState, threshold: f64) -> Self {
        Self {
            model,
            state,
            normalizers: [Normalizer::new(); 3],
            threshold,
        }
    }

    pub fn state(&self) -> &KalmanState {
        &self.state
    }

    pub fn step(&mut self, telemetry: &EpochTelemetry) -> Result<KfStep, KalmanError> {
        let step = kf_step(
            &self.model,
            &self.state,
            telemetry,
            &mut self.normalizers,
            self.threshold,
        )?;
        self.state = step.state.clone();
        Ok(step)
    }
}
