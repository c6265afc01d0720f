//! Recorded inequalities: a measured value, the bound it must respect and
//! whether it does.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    Below,
    AtLeast,
    Above,
}

impl Relation {
    pub fn holds(self, measured: f64, required: f64) -> bool {
        match self {
            Relation::AtMost => measured <= required,
            Relation::Below => measured < required,
            Relation::AtLeast => measured >= required,
            Relation::Above => measured > required,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub required: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl Check {
    /// Non-finite values are clamped to `±f64::MAX` so that reports stay
    /// valid JSON; a non-finite measurement always fails.
    pub fn new(name: impl Into<String>, measured: f64, relation: Relation, required: f64) -> Self {
        let pass = measured.is_finite() && relation.holds(measured, required);
        Check { name: name.into(), measured: finite(measured), required: finite(required), relation, pass }
    }

    pub fn at_most(name: impl Into<String>, measured: f64, required: f64) -> Self {
        Check::new(name, measured, Relation::AtMost, required)
    }

    pub fn below(name: impl Into<String>, measured: f64, required: f64) -> Self {
        Check::new(name, measured, Relation::Below, required)
    }

    pub fn at_least(name: impl Into<String>, measured: f64, required: f64) -> Self {
        Check::new(name, measured, Relation::AtLeast, required)
    }

    pub fn above(name: impl Into<String>, measured: f64, required: f64) -> Self {
        Check::new(name, measured, Relation::Above, required)
    }
}

fn finite(x: f64) -> f64 {
    if x.is_nan() {
        f64::MAX
    } else {
        x.clamp(-f64::MAX, f64::MAX)
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}
