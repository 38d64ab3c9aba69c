//! Spline parameterization of per-view rigid motion.
//!
//! Each of the six rigid parameters is an Akima spline over the projection
//! index, so `M` node values per parameter describe the motion of all `N`
//! views.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidParams;

/// Names of the six rigid parameters, in storage order.
pub const PARAM_NAMES: [&str; 6] = ["tx", "ty", "tz", "rx", "ry", "rz"];

/// Piecewise-cubic Hermite interpolant with Akima slopes.
///
/// With fewer than five nodes Akima's rule is undefined and the slopes fall
/// back to finite differences: secant slopes for two nodes (linear
/// interpolation), three-point parabola derivatives for three or four nodes.
#[derive(Debug, Clone)]
pub struct Akima {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Akima {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let m = xs.len();
        if ys.len() != m {
            return Err(Error::LengthMismatch {
                what: "spline node values",
                expected: m,
                actual: ys.len(),
            });
        }
        if m < 2 || xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotonicNodes);
        }
        let secants: Vec<f64> = (0..m - 1)
            .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
            .collect();
        let slopes = match m {
            2 => vec![secants[0]; 2],
            3 | 4 => (0..m)
                .map(|i| {
                    let a = i.saturating_sub(1).min(m - 3);
                    parabola_slope(&xs[a..a + 3], &ys[a..a + 3], xs[i])
                })
                .collect(),
            _ => akima_slopes(&secants),
        };
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            slopes,
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn eval(&self, q: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if !(q >= lo && q <= hi) {
            return Err(Error::OutOfDomain { q, lo, hi });
        }
        Ok(self.eval_unchecked(q))
    }

    fn eval_unchecked(&self, q: f64) -> f64 {
        let n = self.xs.len();
        let k = self.xs.partition_point(|&x| x <= q);
        if k > 0 && self.xs[k - 1] == q {
            return self.ys[k - 1];
        }
        let i = k.saturating_sub(1).min(n - 2);
        let h = self.xs[i + 1] - self.xs[i];
        let s = (q - self.xs[i]) / h;
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (d0, d1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * d1
    }
}

/// Derivative at `x` of the parabola through three points.
fn parabola_slope(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let (x0, x1, x2) = (xs[0], xs[1], xs[2]);
    ys[0] * (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2))
        + ys[1] * (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2))
        + ys[2] * (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1))
}

fn akima_slopes(secants: &[f64]) -> Vec<f64> {
    let k = secants.len();
    // Two phantom secants on each side from quadratic end extrapolation.
    let mut m = Vec::with_capacity(k + 4);
    let left1 = 2.0 * secants[0] - secants[1];
    let left2 = 2.0 * left1 - secants[0];
    let right1 = 2.0 * secants[k - 1] - secants[k - 2];
    let right2 = 2.0 * right1 - secants[k - 1];
    m.push(left2);
    m.push(left1);
    m.extend_from_slice(secants);
    m.push(right1);
    m.push(right2);
    // Node i sees secants m[i..i+4] = (m_{i-2}, m_{i-1}, m_i, m_{i+1}).
    (0..=k)
        .map(|i| {
            let w_left = (m[i + 3] - m[i + 2]).abs();
            let w_right = (m[i + 1] - m[i]).abs();
            if w_left + w_right == 0.0 {
                0.5 * (m[i + 1] + m[i + 2])
            } else {
                (w_left * m[i + 1] + w_right * m[i + 2]) / (w_left + w_right)
            }
        })
        .collect()
}

/// One-shot Akima evaluation.
pub fn akima_eval(xs: &[f64], ys: &[f64], q: f64) -> Result<f64> {
    Akima::new(xs, ys)?.eval(q)
}

/// Which rigid parameters are free in an optimization scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioMask {
    pub active: [bool; 6],
}

impl ScenarioMask {
    /// tz, rx, ry: motion perpendicular to the trajectory plane.
    pub const OUT_OF_PLANE: ScenarioMask = ScenarioMask {
        active: [false, false, true, true, true, false],
    };
    /// tx, ty, rz: motion within the trajectory plane.
    pub const IN_PLANE: ScenarioMask = ScenarioMask {
        active: [true, true, false, false, false, true],
    };
    pub const FULL: ScenarioMask = ScenarioMask { active: [true; 6] };

    pub fn new(active: [bool; 6]) -> Result<Self> {
        if !active.iter().any(|&a| a) {
            return Err(Error::Config("scenario mask has no active parameter".into()));
        }
        Ok(Self { active })
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn name(&self) -> &'static str {
        match *self {
            Self::OUT_OF_PLANE => "oop",
            Self::IN_PLANE => "ip",
            Self::FULL => "full",
            _ => "custom",
        }
    }

    pub fn apply(&self, p: &RigidParams) -> RigidParams {
        let a = p.to_array();
        RigidParams::from_array(std::array::from_fn(|k| if self.active[k] { a[k] } else { 0.0 }))
    }
}

impl FromStr for ScenarioMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oop" => Ok(Self::OUT_OF_PLANE),
            "ip" => Ok(Self::IN_PLANE),
            "full" => Ok(Self::FULL),
            other => Err(Error::UnknownScenario(other.to_string())),
        }
    }
}

/// Six Akima splines over the projection index. Translations in mm,
/// rotations in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpline {
    pub node_indices: Vec<f64>,
    pub node_values: [Vec<f64>; 6],
}

impl MotionSpline {
    /// `m` nodes spread uniformly over `[0, n - 1]`, all values zero.
    pub fn uniform(n: usize, m: usize) -> Result<Self> {
        if m < 2 || n < m {
            return Err(Error::Config(format!(
                "need 2 <= nodes <= projections, got {m} nodes for {n} projections"
            )));
        }
        let last = (n - 1) as f64;
        let node_indices = (0..m)
            .map(|k| if k == m - 1 { last } else { last * k as f64 / (m - 1) as f64 })
            .collect();
        Ok(Self {
            node_indices,
            node_values: std::array::from_fn(|_| vec![0.0; m]),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_indices.len()
    }

    /// Checks that the spline spans exactly `[0, n - 1]`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let m = self.n_nodes();
        if m < 2 || self.node_indices.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotonicNodes);
        }
        for row in &self.node_values {
            if row.len() != m {
                return Err(Error::LengthMismatch {
                    what: "spline node values",
                    expected: m,
                    actual: row.len(),
                });
            }
        }
        if n < 1 || self.node_indices[0] != 0.0 || self.node_indices[m - 1] != (n - 1) as f64 {
            return Err(Error::Config(format!(
                "spline nodes span [{}, {}] but the scan has {n} projections",
                self.node_indices[0],
                self.node_indices[m - 1]
            )));
        }
        Ok(())
    }

    /// Per-view rigid parameters for views `0..n`.
    pub fn expand(&self, n: usize) -> Result<Vec<RigidParams>> {
        self.validate(n)?;
        let mut rows: [Vec<f64>; 6] = Default::default();
        for (k, values) in self.node_values.iter().enumerate() {
            rows[k] = if values.iter().all(|&v| v == 0.0) {
                vec![0.0; n]
            } else {
                let spline = Akima::new(&self.node_indices, values)?;
                (0..n).map(|i| spline.eval(i as f64)).collect::<Result<_>>()?
            };
        }
        Ok((0..n)
            .map(|i| RigidParams::from_array(std::array::from_fn(|k| rows[k][i])))
            .collect())
    }

    /// Active node values, parameter-major.
    pub fn pack(&self, mask: &ScenarioMask) -> Vec<f64> {
        self.node_values
            .iter()
            .zip(mask.active)
            .filter(|(_, a)| *a)
            .flat_map(|(row, _)| row.iter().copied())
            .collect()
    }

    /// Inverse of [`MotionSpline::pack`]; inactive rows are left untouched.
    pub fn unpack(&mut self, mask: &ScenarioMask, x: &[f64]) -> Result<()> {
        let m = self.n_nodes();
        let expected = m * mask.count();
        if x.len() != expected {
            return Err(Error::LengthMismatch {
                what: "packed spline vector",
                expected,
                actual: x.len(),
            });
        }
        let mut chunks = x.chunks_exact(m);
        for (row, active) in self.node_values.iter_mut().zip(mask.active) {
            if active {
                row.copy_from_slice(chunks.next().expect("length checked"));
            }
        }
        Ok(())
    }

    pub fn masked(&self, mask: &ScenarioMask) -> Self {
        let mut out = self.clone();
        for (row, active) in out.node_values.iter_mut().zip(mask.active) {
            if !active {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        out
    }
}
