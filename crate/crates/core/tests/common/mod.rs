//! Shared helpers for the integration and acceptance tests.
#![allow(dead_code)]

use std::path::PathBuf;

use chipnet::ScenarioConfig;
use rand::Rng;

pub fn preset(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../presets")
        .join(name);
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("loading {}: {e}", path.display()))
}

/// Inverse of a 3×3 matrix through the adjugate.
pub fn inverse3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c =
        |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = cof[j][i] / det;
        }
    }
    inv
}

/// Scalar-state, three-measurement filter problem.
#[derive(Clone, Copy, Debug)]
pub struct Problem {
    pub a: f64,
    pub q: f64,
    pub h: [f64; 3],
    pub r: [[f64; 3]; 3],
    pub x: f64,
    pub p: f64,
    pub z: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct OracleStep {
    pub x_prior: f64,
    pub p_prior: f64,
    pub gain: [f64; 3],
    pub x: f64,
    pub p: f64,
}

/// One predict/update step written out element by element.
pub fn oracle_step(pb: &Problem) -> OracleStep {
    let x_prior = pb.a * pb.x;
    let p_prior = pb.a * pb.p * pb.a + pb.q;
    let mut s = pb.r;
    for i in 0..3 {
        for j in 0..3 {
            s[i][j] += pb.h[i] * p_prior * pb.h[j];
        }
    }
    let s_inv = inverse3(s);
    let mut gain = [0.0; 3];
    for j in 0..3 {
        gain[j] = (0..3).map(|i| p_prior * pb.h[i] * s_inv[i][j]).sum();
    }
    let innovation: f64 = (0..3)
        .map(|i| gain[i] * (pb.z[i] - pb.h[i] * x_prior))
        .sum();
    let kh: f64 = (0..3).map(|i| gain[i] * pb.h[i]).sum();
    OracleStep {
        x_prior,
        p_prior,
        gain,
        x: x_prior + innovation,
        p: (1.0 - kh) * p_prior,
    }
}

/// Random problem whose innovation covariance is comfortably conditioned:
/// `R = L·Lᵀ + 0.1·I` with small `L`.
pub fn random_problem(rng: &mut impl Rng) -> Problem {
    let mut l = [[0.0; 3]; 3];
    for row in l.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] =
                (0..3).map(|k| l[i][k] * l[j][k]).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
        }
    }
    Problem {
        a: rng.random_range(0.5..1.5),
        q: rng.random_range(0.001..0.5),
        h: [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ],
        r,
        x: rng.random_range(-2.0..2.0),
        p: rng.random_range(0.01..3.0),
        z: [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ],
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-6)
}
