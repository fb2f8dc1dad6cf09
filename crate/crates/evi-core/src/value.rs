//! Extended-real energy values: finite or plus infinity, never a float
//! sentinel smuggled through arithmetic.

use crate::error::{Error, Result};
use alloc::format;
use core::cmp::Ordering;

/// A lower-semicontinuous energy evaluation: finite, or +inf outside the
/// domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Finite(f64),
    PosInf,
}

impl Value {
    pub fn is_finite(self) -> bool {
        matches!(self, Value::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Value::Finite(v) => Some(v),
            Value::PosInf => None,
        }
    }

    /// Unwrap a finite value or fail with the given context.
    pub fn expect_finite(self, ctx: &str) -> Result<f64> {
        match self {
            Value::Finite(v) => Ok(v),
            Value::PosInf => Err(Error::OutOfDomain(format!("{ctx}: value is +inf"))),
        }
    }

    /// Total order: finite values by `f64::total_cmp`, +inf above everything.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Finite(a), Value::Finite(b)) => a.total_cmp(b),
            (Value::Finite(_), Value::PosInf) => Ordering::Less,
            (Value::PosInf, Value::Finite(_)) => Ordering::Greater,
            (Value::PosInf, Value::PosInf) => Ordering::Equal,
        }
    }

    /// Extended-real addition; +inf absorbs.
    pub fn plus(self, other: Value) -> Value {
        match (self, other) {
            (Value::Finite(a), Value::Finite(b)) => Value::Finite(a + b),
            _ => Value::PosInf,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Finite(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_puts_infinity_on_top() {
        assert_eq!(Value::Finite(1e300).total_cmp(&Value::PosInf), Ordering::Less);
        assert_eq!(Value::PosInf.total_cmp(&Value::PosInf), Ordering::Equal);
        assert_eq!(Value::Finite(-1.0).total_cmp(&Value::Finite(2.0)), Ordering::Less);
    }

    #[test]
    fn plus_absorbs_infinity() {
        assert_eq!(Value::Finite(1.0).plus(Value::PosInf), Value::PosInf);
        assert_eq!(Value::Finite(1.0).plus(Value::Finite(2.0)), Value::Finite(3.0));
    }
}
