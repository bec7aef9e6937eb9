use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::monte_carlo::{stein_f_mc, stein_grad_mc, McSteinConfig};
use super::{Backend, SteinField};
use crate::error::{Error, Result};
use crate::problems::{Problem, TestFunction};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"SGLDGRID";
const VERSION: u32 = 1;

/// Tensor grid over a box in one or two dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Node count per axis (at least 2).
    pub nodes: Vec<usize>,
}

impl GridSpec {
    pub fn uniform_1d(lower: f64, upper: f64, nodes: usize) -> Self {
        Self { lower: vec![lower], upper: vec![upper], nodes: vec![nodes] }
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        let d = self.nodes.len();
        if d == 0 || d > 2 {
            return Err(Error::Config(format!("grid fields support 1 or 2 dimensions, got {d}")));
        }
        if self.lower.len() != d || self.upper.len() != d {
            return Err(Error::Config("grid bounds do not match the node counts".into()));
        }
        if self.nodes.iter().any(|&n| n < 2) {
            return Err(Error::Config("grid needs at least 2 nodes per axis".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Config("grid bounds must be finite with lower < upper".into()));
        }
        Ok(())
    }

    fn node(&self, axis: usize, i: usize) -> f64 {
        let (l, u) = (self.lower[axis], self.upper[axis]);
        l + (u - l) * i as f64 / (self.nodes[axis] - 1) as f64
    }

    /// Cell index and local coordinate in `[0, 1]`; `true` if `x` was clamped.
    fn locate(&self, axis: usize, x: f64) -> (usize, f64, bool) {
        let (l, u, n) = (self.lower[axis], self.upper[axis], self.nodes[axis]);
        let clamped = !(x >= l && x <= u);
        let x = if x.is_nan() { l } else { x.clamp(l, u) };
        let pos = (x - l) / (u - l) * (n - 1) as f64;
        let i = (pos.floor() as usize).min(n - 2);
        (i, pos - i as f64, clamped)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: GridSpec,
    pi_h: f64,
    tolerance: f64,
    /// Values per node: `f` followed by the gradient.
    stride: usize,
}

/// Piecewise (bi)linear interpolant of precomputed `f` and `grad f` node values.
#[derive(Debug)]
pub struct GridField<T> {
    spec: GridSpec,
    pi_h: T,
    tolerance: T,
    /// Per node: `f, df/dx_1, .., df/dx_d`.
    values: Vec<T>,
    clamped: AtomicUsize,
}

/// Builds a grid field by Monte Carlo evaluation of `f` and `grad f` at every node.
pub fn grid_field<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    h: &TestFunction<T>,
    spec: GridSpec,
    cfg: &McSteinConfig<T>,
    pi_h: T,
) -> Result<GridField<T>> {
    spec.validate()?;
    let d = spec.dim();
    if problem.dim() != d || h.dim() != d {
        return Err(Error::Config("grid, problem and test function dimensions differ".into()));
    }
    let mut values = Vec::with_capacity(spec.len() * (d + 1));
    let mut worst_se = T::zero();
    let mut x = vec![T::zero(); d];
    for idx in 0..spec.len() {
        let mut rem = idx;
        for axis in (0..d).rev() {
            x[axis] = T::lit(spec.node(axis, rem % spec.nodes[axis]));
            rem /= spec.nodes[axis];
        }
        let f = stein_f_mc(problem, h, &x, cfg, pi_h)?;
        let g = stein_grad_mc(problem, h, &x, cfg, pi_h)?;
        worst_se = worst_se.max(f.std_error);
        values.push(f.estimate);
        for e in g {
            worst_se = worst_se.max(e.std_error);
            values.push(e.estimate);
        }
    }
    let tolerance = cfg.tolerance.max(T::lit(4.0) * worst_se);
    Ok(GridField { spec, pi_h, tolerance, values, clamped: AtomicUsize::new(0) })
}

impl<T: Real> GridField<T> {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Number of queries that fell outside the grid and were clamped.
    pub fn clamp_count(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Value `slot` (0 = f, 1 + i = df/dx_i) at node `idx`.
    pub fn node_value(&self, idx: usize, slot: usize) -> T {
        self.values[idx * (self.spec.dim() + 1) + slot]
    }

    fn interpolate(&self, x: &[T], out: &mut [T]) -> Result<()> {
        let d = self.spec.dim();
        if x.len() != d {
            return Err(Error::Config("query has the wrong dimension".into()));
        }
        let stride = d + 1;
        let mut clamped = false;
        let cells: Vec<(usize, f64, bool)> = (0..d).map(|a| self.spec.locate(a, x[a].as_f64())).collect();
        clamped |= cells.iter().any(|c| c.2);
        if clamped {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        out.fill(T::zero());
        let corners = 1usize << d;
        for corner in 0..corners {
            let mut idx = 0;
            let mut weight = 1.0;
            for (a, &(i, t, _)) in cells.iter().enumerate() {
                let up = (corner >> a) & 1 == 1;
                idx = idx * self.spec.nodes[a] + i + up as usize;
                weight *= if up { t } else { 1.0 - t };
            }
            if weight == 0.0 {
                continue;
            }
            let w = T::lit(weight);
            for (o, &v) in out.iter_mut().zip(&self.values[idx * stride..(idx + 1) * stride]) {
                *o = *o + w * v;
            }
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::to_vec(&Header {
            spec: self.spec.clone(),
            pi_h: self.pi_h.as_f64(),
            tolerance: self.tolerance.as_f64(),
            stride: self.spec.dim() + 1,
        })?;
        let mut buf = Vec::with_capacity(20 + header.len() + 8 * self.values.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for v in &self.values {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Config(format!("{}: {msg}", path.display()));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a grid field file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported grid file version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated header"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        header.spec.validate()?;
        let block = &body[hlen..];
        let expected = header.spec.len() * header.stride;
        if header.stride != header.spec.dim() + 1 || block.len() != 8 * expected {
            return Err(bad("node block size does not match the header"));
        }
        let values =
            block.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
        Ok(Self {
            spec: header.spec,
            pi_h: T::lit(header.pi_h),
            tolerance: T::lit(header.tolerance),
            values,
            clamped: AtomicUsize::new(0),
        })
    }
}

impl<T: Real> SteinField<T> for GridField<T> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn backend(&self) -> Backend {
        Backend::Grid
    }

    fn pi_h(&self) -> T {
        self.pi_h
    }

    fn tolerance(&self) -> T {
        self.tolerance
    }

    fn f(&self, x: &[T]) -> Result<T> {
        let mut out = vec![T::zero(); self.spec.dim() + 1];
        self.interpolate(x, &mut out)?;
        Ok(out[0])
    }

    fn grad_f(&self, x: &[T], out: &mut [T]) -> Result<()> {
        let mut buf = [T::zero(); 3];
        let d = self.spec.dim();
        self.interpolate(x, &mut buf[..d + 1])?;
        out.copy_from_slice(&buf[1..d + 1]);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::GaussianMean;

    fn linear_grid() -> GridField<f64> {
        let p = GaussianMean::new(1, 1.0).unwrap();
        let h = TestFunction::linear(&[1.0], 0.0).unwrap();
        let cfg = McSteinConfig::new(0.01, 1.0, 10.0).with_paths(500).with_dt(0.02).with_seed(5);
        grid_field(&p, &h, GridSpec::uniform_1d(-4.0, 4.0, 9), &cfg, 0.0).unwrap()
    }

    #[test]
    fn node_values_are_reproduced_exactly() {
        let g = linear_grid();
        for i in 0..9 {
            let x = -4.0 + i as f64;
            assert_eq!(g.f(&[x]).unwrap(), g.node_value(i, 0));
        }
    }

    #[test]
    fn linear_gradient_across_grid() {
        let g = linear_grid();
        let mut out = [0.0];
        for i in 0..=80 {
            g.grad_f(&[-4.0 + 0.1 * i as f64], &mut out).unwrap();
            assert!((out[0] + 1.0).abs() < 0.02, "{out:?}");
        }
        assert_eq!(g.clamp_count(), 0);
    }

    #[test]
    fn clamp_counter_increments() {
        let g = linear_grid();
        let inside = g.f(&[4.0]).unwrap();
        assert_eq!(g.f(&[7.5]).unwrap(), inside);
        g.f(&[-9.0]).unwrap();
        assert_eq!(g.clamp_count(), 2);
    }

    #[test]
    fn file_round_trip() {
        let g = linear_grid();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.grid");
        g.write(&path).unwrap();
        let back = GridField::<f64>::read(&path).unwrap();
        assert_eq!(back.values, g.values);
        assert_eq!(back.spec, g.spec);
        assert_eq!(back.pi_h(), g.pi_h());
        std::fs::write(&path, b"garbage").unwrap();
        assert!(GridField::<f64>::read(&path).is_err());
    }

    #[test]
    fn bilinear_interpolation_of_known_values() {
        let spec = GridSpec { lower: vec![0.0, 0.0], upper: vec![1.0, 2.0], nodes: vec![2, 3] };
        // f(x, y) = x + 2y is reproduced exactly by bilinear interpolation
        let mut values = Vec::new();
        for i in 0..2 {
            for j in 0..3 {
                let (x, y) = (i as f64, j as f64);
                values.extend_from_slice(&[x + 2.0 * y, 1.0, 2.0]);
            }
        }
        let g = GridField { spec, pi_h: 0.0, tolerance: 0.0, values, clamped: AtomicUsize::new(0) };
        assert!((g.f(&[0.25, 1.5]).unwrap() - 3.25).abs() < 1e-14);
        let mut grad = [0.0; 2];
        g.grad_f(&[0.6, 0.3], &mut grad).unwrap();
        assert_eq!(grad, [1.0, 2.0]);
    }

    #[test]
    fn empty_or_bad_grids_rejected() {
        let p = GaussianMean::new(1, 1.0).unwrap();
        let h = TestFunction::linear(&[1.0], 0.0).unwrap();
        let cfg = McSteinConfig::new(0.01, 1.0, 1.0).with_paths(10);
        let empty = GridSpec { lower: vec![], upper: vec![], nodes: vec![] };
        assert!(grid_field(&p, &h, empty, &cfg, 0.0).is_err());
        assert!(grid_field(&p, &h, GridSpec::uniform_1d(0.0, 1.0, 1), &cfg, 0.0).is_err());
    }
}
