//! Linear time-invariant models, zero-order-hold discretization and the
//! two-node (air/wall) room thermal model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// `dx/dt = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLti {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl ContinuousLti {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        check_dims(&a, &b, &c)?;
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
}

/// `x(k+1) = A x(k) + B u(k)`, `y = C x`, sampled every `ts_hours`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLti {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    ts_hours: f64,
}

impl DiscreteLti {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, ts_hours: f64) -> Result<Self> {
        check_dims(&a, &b, &c)?;
        if !(ts_hours > 0.0 && ts_hours.is_finite()) {
            return Err(Error::invalid(format!(
                "sampling period must be positive, got {ts_hours}"
            )));
        }
        Ok(Self { a, b, c, ts_hours })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn ts_hours(&self) -> f64 {
        self.ts_hours
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// One sample of the dynamics.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.states() || u.len() != self.inputs() {
            return Err(Error::shape(format!(
                "step expects x of length {} and u of length {}, got {} and {}",
                self.states(),
                self.inputs(),
                x.len(),
                u.len()
            )));
        }
        Ok(&self.a * x + &self.b * u)
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if !a.is_square() || n == 0 {
        return Err(Error::shape(format!(
            "A must be square and non-empty, got {:?}",
            a.shape()
        )));
    }
    if b.nrows() != n || b.ncols() == 0 {
        return Err(Error::shape(format!(
            "B must be {n}xm, got {:?}",
            b.shape()
        )));
    }
    if c.ncols() != n {
        return Err(Error::shape(format!(
            "C must be qx{n}, got {:?}",
            c.shape()
        )));
    }
    if !(linalg::all_finite(a) && linalg::all_finite(b) && linalg::all_finite(c)) {
        return Err(Error::NonFinite("state-space matrices".into()));
    }
    Ok(())
}

/// Lumped parameters of a room: two heat capacities (J/K) and three
/// thermal resistances (K/W).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomParams {
    /// Heat capacity of the inside air.
    pub c_res: f64,
    /// Heat capacity of the external walls.
    pub c_s: f64,
    /// Inside air to outside air (windows).
    pub r_f: f64,
    /// Inside air to inside walls.
    pub r_i: f64,
    /// Outside walls to outside air.
    pub r_o: f64,
}

impl RoomParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c_res", self.c_res),
            ("c_s", self.c_s),
            ("r_f", self.r_f),
            ("r_i", self.r_i),
            ("r_o", self.r_o),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "room parameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Three-resistance, two-capacitance room model. State order is
/// `[air temperature; wall temperature]`, input is heating power in watts.
pub fn build_3r2c(p: &RoomParams) -> Result<ContinuousLti> {
    p.validate()?;
    let air_air = -1.0 / (p.c_res * p.r_f) - 1.0 / (p.c_res * p.r_i);
    let air_wall = 1.0 / (p.c_res * p.r_i);
    let wall_air = 1.0 / (p.c_s * p.r_i);
    let wall_wall = -1.0 / (p.c_s * p.r_o) - 1.0 / (p.c_s * p.r_i);
    let a = DMatrix::from_row_slice(2, 2, &[air_air, air_wall, wall_air, wall_wall]);
    // The gain of 10 on the heater input is part of the model as published.
    let b = DMatrix::from_column_slice(2, 1, &[10.0 / p.c_res, 0.0]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    ContinuousLti::new(a, b, c)
}

/// Zero-order-hold discretization with the period given in hours. Model
/// coefficients are SI, so the period is converted to seconds.
pub fn zoh_discretize(sys: &ContinuousLti, ts_hours: f64) -> Result<DiscreteLti> {
    if !(ts_hours > 0.0 && ts_hours.is_finite()) {
        return Err(Error::invalid(format!(
            "sampling period must be positive, got {ts_hours}"
        )));
    }
    let (a, b) = zoh_seconds(sys, ts_hours * SECONDS_PER_HOUR);
    DiscreteLti::new(a, b, sys.c.clone(), ts_hours)
}

/// `exp([[A, B], [0, 0]] T)` holds `A_d` top-left and `B_d` top-right.
fn zoh_seconds(sys: &ContinuousLti, seconds: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = sys.a.nrows();
    let m = sys.b.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&sys.a * seconds));
    aug.view_mut((0, n), (n, m)).copy_from(&(&sys.b * seconds));
    let e = linalg::expm(&aug);
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}
