//! A local MPC agent answering allocation queries with dual prices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::DiscreteLti;
use crate::qp::{self, KktFactor, LocalQp, LocalSolution, MpcWeights, Sensitivity};

/// Largest accepted condition number of an attack map.
pub const MAX_ATTACK_CONDITION: f64 = 1e12;

/// Linear corruption `λ̃ = T λ` of the reported dual prices, active on an
/// inclusive window of time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    t: DMatrix<f64>,
    start_step: usize,
    end_step: Option<usize>,
}

impl AttackSpec {
    pub fn new(t: DMatrix<f64>, start_step: usize, end_step: Option<usize>) -> Result<Self> {
        if !t.is_square() || t.nrows() == 0 {
            return Err(Error::shape(format!(
                "attack map must be square, got {:?}",
                t.shape()
            )));
        }
        if !linalg::all_finite(&t) {
            return Err(Error::NonFinite("attack map".into()));
        }
        let cond = linalg::condition_number(&t);
        if !(cond < MAX_ATTACK_CONDITION) {
            return Err(Error::invalid(format!(
                "attack map must be invertible (condition number {cond:e})"
            )));
        }
        if let Some(end) = end_step {
            if end < start_step {
                return Err(Error::invalid("attack end_step precedes start_step"));
            }
        }
        Ok(Self {
            t,
            start_step,
            end_step,
        })
    }

    /// `T = τ I_c`.
    pub fn scaled(c: usize, tau: f64, start_step: usize, end_step: Option<usize>) -> Result<Self> {
        Self::new(DMatrix::identity(c, c) * tau, start_step, end_step)
    }

    pub fn map(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn start_step(&self) -> usize {
        self.start_step
    }

    pub fn end_step(&self) -> Option<usize> {
        self.end_step
    }

    pub fn is_active(&self, k: usize) -> bool {
        k >= self.start_step && self.end_step.is_none_or(|end| k <= end)
    }
}

#[derive(Debug, Clone)]
struct Prepared {
    step: usize,
    factor: KktFactor,
}

#[derive(Debug, Clone)]
pub struct Agent {
    sys: DiscreteLti,
    weights: MpcWeights,
    gamma: DMatrix<f64>,
    x: DVector<f64>,
    reference: DVector<f64>,
    attack: Option<AttackSpec>,
    prepared: Option<Prepared>,
}

impl Agent {
    pub fn new(
        sys: DiscreteLti,
        weights: MpcWeights,
        gamma: DMatrix<f64>,
        x0: DVector<f64>,
        reference: DVector<f64>,
    ) -> Result<Self> {
        let n = sys.states();
        if x0.len() != n {
            return Err(Error::shape(format!(
                "initial state has length {}, expected {n}",
                x0.len()
            )));
        }
        if !linalg::vec_finite(&x0) {
            return Err(Error::NonFinite("initial state".into()));
        }
        if reference.len() != n * weights.horizon() {
            return Err(Error::shape(format!(
                "stacked reference has length {}, expected {}",
                reference.len(),
                n * weights.horizon()
            )));
        }
        if gamma.ncols() != sys.inputs() || gamma.nrows() == 0 {
            return Err(Error::shape("Γ must have one column per input"));
        }
        Ok(Self {
            sys,
            weights,
            gamma,
            x: x0,
            reference,
            attack: None,
            prepared: None,
        })
    }

    pub fn with_attack(mut self, attack: AttackSpec) -> Result<Self> {
        self.set_attack(Some(attack))?;
        Ok(self)
    }

    pub fn set_attack(&mut self, attack: Option<AttackSpec>) -> Result<()> {
        if let Some(a) = &attack {
            if a.map().nrows() != self.coupling_len() {
                return Err(Error::shape(format!(
                    "attack map is {}x{0}, coupling dimension is {}",
                    a.map().nrows(),
                    self.coupling_len()
                )));
            }
        }
        self.attack = attack;
        Ok(())
    }

    pub fn attack(&self) -> Option<&AttackSpec> {
        self.attack.as_ref()
    }

    pub fn system(&self) -> &DiscreteLti {
        &self.sys
    }

    pub fn weights(&self) -> &MpcWeights {
        &self.weights
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn reference(&self) -> &DVector<f64> {
        &self.reference
    }

    pub fn set_reference(&mut self, reference: DVector<f64>) -> Result<()> {
        if reference.len() != self.reference.len() {
            return Err(Error::shape("stacked reference length changed"));
        }
        self.reference = reference;
        self.prepared = None;
        Ok(())
    }

    pub fn coupling_len(&self) -> usize {
        self.gamma.nrows() * self.weights.horizon()
    }

    /// Build and factor the local QP for time step `k` from the current
    /// state and reference.
    pub fn condense(&mut self, k: usize) -> Result<&LocalQp> {
        let qp = qp::condense(
            &self.sys,
            &self.weights,
            &self.gamma,
            &self.x,
            &self.reference,
        )?;
        let factor = qp.factor()?;
        self.prepared = Some(Prepared { step: k, factor });
        Ok(self.prepared.as_ref().expect("just set").factor.qp())
    }

    fn prepared(&self, k: usize) -> Result<&Prepared> {
        match &self.prepared {
            Some(p) if p.step == k => Ok(p),
            Some(p) => Err(Error::invalid(format!(
                "agent prepared for step {}, queried at {k}",
                p.step
            ))),
            None => Err(Error::invalid("agent has not condensed its QP")),
        }
    }

    pub fn local_qp(&self, k: usize) -> Result<&LocalQp> {
        Ok(self.prepared(k)?.factor.qp())
    }

    /// Truthful local optimum for an allocation.
    pub fn solve(&self, k: usize, allocation: &DVector<f64>) -> Result<LocalSolution> {
        self.prepared(k)?.factor.solve(allocation)
    }

    /// Reported dual prices for an allocation: the true multiplier, passed
    /// through the attack map when one is active at `k`.
    pub fn respond(&self, k: usize, allocation: &DVector<f64>) -> Result<DVector<f64>> {
        let lambda = self.solve(k, allocation)?.lambda;
        match &self.attack {
            Some(a) if a.is_active(k) => Ok(a.map() * lambda),
            _ => Ok(lambda),
        }
    }

    /// Truthful sensitivity pair of the QP prepared for `k`.
    pub fn sensitivity(&self, k: usize) -> Result<Sensitivity> {
        qp::sensitivity(self.local_qp(k)?)
    }

    /// Apply the first input of `u_final` to the plant and return it.
    pub fn commit_input(&mut self, u_final: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.sys.inputs();
        if u_final.len() != m * self.weights.horizon() {
            return Err(Error::shape(format!(
                "input sequence has length {}, expected {}",
                u_final.len(),
                m * self.weights.horizon()
            )));
        }
        let u = u_final.rows(0, m).into_owned();
        self.x = self.sys.step(&self.x, &u)?;
        self.prepared = None;
        Ok(u)
    }
}
