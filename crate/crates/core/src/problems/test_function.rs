use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Real};

type CustomFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// Shape of a test function `h`, before the overall scale is applied.
#[derive(Clone)]
pub enum TestKind<T> {
    Constant(T),
    /// `<v, x> + offset` with `|v| = 1`.
    Linear {
        direction: Vec<T>,
        offset: T,
    },
    /// `|x|^2`. Not globally Lipschitz; used for exact decomposition audits.
    QuadraticRadial,
    /// User function with declared Lipschitz constant; evaluated as `f / max(lip, 1)`.
    Custom {
        f: CustomFn<T>,
        lipschitz: T,
    },
}

/// A scalar test function `h: R^d -> R`.
#[derive(Clone)]
pub struct TestFunction<T> {
    dim: usize,
    kind: TestKind<T>,
    scale: T,
}

impl<T: Real> TestFunction<T> {
    pub fn constant(dim: usize, c: T) -> Self {
        Self { dim, kind: TestKind::Constant(c), scale: T::one() }
    }

    /// `h(x) = <v/|v|, x> + offset`.
    pub fn linear(direction: &[T], offset: T) -> Result<Self> {
        let n = crate::scalar::norm(direction);
        if direction.is_empty() || !(n > T::zero()) || !n.is_finite() {
            return Err(Error::Config("linear test function needs a non-zero direction".into()));
        }
        Ok(Self {
            dim: direction.len(),
            kind: TestKind::Linear { direction: direction.iter().map(|&v| v / n).collect(), offset },
            scale: T::one(),
        })
    }

    pub fn quadratic_radial(dim: usize) -> Self {
        Self { dim, kind: TestKind::QuadraticRadial, scale: T::one() }
    }

    pub fn custom(dim: usize, lipschitz: T, f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Result<Self> {
        if !(lipschitz > T::zero()) {
            return Err(Error::Config("custom test function needs a positive Lipschitz constant".into()));
        }
        Ok(Self { dim, kind: TestKind::Custom { f: Arc::new(f), lipschitz }, scale: T::one() })
    }

    /// `c * h`.
    pub fn scaled(&self, c: T) -> Self {
        Self { dim: self.dim, kind: self.kind.clone(), scale: self.scale * c }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &TestKind<T> {
        &self.kind
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    #[inline]
    pub fn evaluate(&self, x: &[T]) -> T {
        let raw = match &self.kind {
            TestKind::Constant(c) => *c,
            TestKind::Linear { direction, offset } => dot(direction, x) + *offset,
            TestKind::QuadraticRadial => dot(x, x),
            TestKind::Custom { f, lipschitz } => f(x) / lipschitz.max(T::one()),
        };
        self.scale * raw
    }

    /// Lipschitz constant of the scaled function; `None` when unbounded.
    pub fn lipschitz_constant(&self) -> Option<T> {
        let base = match &self.kind {
            TestKind::Constant(_) => T::zero(),
            TestKind::Linear { .. } => T::one(),
            TestKind::QuadraticRadial => return None,
            TestKind::Custom { lipschitz, .. } => lipschitz.min(T::one()),
        };
        Some(base * self.scale.abs())
    }

    /// True when `h` belongs to the unit-Lipschitz class.
    pub fn is_lip1(&self) -> bool {
        self.lipschitz_constant().is_some_and(|l| l <= T::one() + T::lit(1e-12))
    }

    /// `E h(X)` for `X ~ N(0, variance * I)`, when available in closed form.
    pub fn centered_gaussian_mean(&self, variance: T) -> Option<T> {
        let raw = match &self.kind {
            TestKind::Constant(c) => *c,
            TestKind::Linear { offset, .. } => *offset,
            TestKind::QuadraticRadial => T::lit(self.dim as f64) * variance,
            TestKind::Custom { .. } => return None,
        };
        Some(self.scale * raw)
    }
}

impl<T: fmt::Debug> fmt::Debug for TestFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            TestKind::Constant(c) => format!("constant({c:?})"),
            TestKind::Linear { direction, offset } => format!("linear({direction:?}, {offset:?})"),
            TestKind::QuadraticRadial => "quadratic-radial".to_string(),
            TestKind::Custom { lipschitz, .. } => format!("custom(lip={lipschitz:?})"),
        };
        f.debug_struct("TestFunction").field("dim", &self.dim).field("kind", &kind).field("scale", &self.scale).finish()
    }
}

/// Serializable description of a built-in test function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunctionSpec {
    Constant {
        dim: usize,
        value: f64,
    },
    Linear {
        direction: Vec<f64>,
        #[serde(default)]
        offset: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    QuadraticRadial {
        dim: usize,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl TestFunctionSpec {
    pub fn build<T: Real>(&self) -> Result<TestFunction<T>> {
        Ok(match self {
            TestFunctionSpec::Constant { dim, value } => TestFunction::constant(*dim, T::lit(*value)),
            TestFunctionSpec::Linear { direction, offset, scale } => {
                let dir: Vec<T> = direction.iter().map(|&v| T::lit(v)).collect();
                TestFunction::linear(&dir, T::lit(*offset))?.scaled(T::lit(*scale))
            }
            TestFunctionSpec::QuadraticRadial { dim, scale } => {
                TestFunction::quadratic_radial(*dim).scaled(T::lit(*scale))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_direction_is_normalized() {
        let h = TestFunction::<f64>::linear(&[3.0, 4.0], 0.0).unwrap();
        assert!((h.evaluate(&[3.0, 4.0]) - 5.0).abs() < 1e-15);
        assert!(h.is_lip1());
    }

    #[test]
    fn zero_direction_rejected() {
        assert!(TestFunction::<f64>::linear(&[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn custom_function_is_normalized_to_lip1() {
        let h = TestFunction::<f64>::custom(1, 4.0, |x| 4.0 * x[0]).unwrap();
        assert_eq!(h.evaluate(&[2.0]), 2.0);
        assert!(h.is_lip1());
    }

    #[test]
    fn scaling_leaves_lip1() {
        let h = TestFunction::<f64>::linear(&[1.0], 0.0).unwrap().scaled(2.0);
        assert_eq!(h.lipschitz_constant(), Some(2.0));
        assert!(!h.is_lip1());
        assert_eq!(h.evaluate(&[1.5]), 3.0);
    }

    #[test]
    fn quadratic_is_not_lipschitz() {
        assert!(TestFunction::<f64>::quadratic_radial(2).lipschitz_constant().is_none());
    }

    #[test]
    fn spec_round_trip() {
        let s: TestFunctionSpec = serde_json::from_str(r#"{"kind":"linear","direction":[1.0]}"#).unwrap();
        let h = s.build::<f64>().unwrap();
        assert_eq!(h.evaluate(&[0.25]), 0.25);
    }
}
