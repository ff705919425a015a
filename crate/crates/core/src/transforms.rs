//! Reward transformation functions `Φ: [0, 1] -> ℝ`.
//!
//! Transforms are composed with calibrated rewards before KL-regularized
//! reward maximization. Supported families: identity, clamped log,
//! exponential tilting `sign(t)·exp(t·u)`, and tabulated functions with
//! linear interpolation on a uniform grid. Transforms are immutable values.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::calibration::CalibratedScore;
use crate::{Error, Result};

/// Default clamp for the log transform, which is unbounded at zero.
pub const DEFAULT_LOG_EPSILON: f64 = 1e-6;

/// Default tabulation grid size, matching the analytic quadrature grid.
pub const DEFAULT_TABLE_SIZE: usize = 2001;

#[derive(Debug, Clone)]
pub enum Transform {
    /// `Φ(u) = u`.
    Identity,
    /// `Φ(u) = ln(max(u, epsilon))`.
    Log { epsilon: f64 },
    /// `Φ(u) = sign(t)·exp(t·u)` with `sign(0) = +1`.
    ExpTilt { t: f64 },
    /// Linear interpolation between `values` on a uniform grid over `[0, 1]`.
    Tabulated { values: Arc<Vec<f64>> },
}

/// A transformed reward `Φ(C)`; always finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedReward(f64);

impl TransformedReward {
    #[inline]
    pub fn value(&self) -> f64 {
        self.0
    }
}

impl Transform {
    pub fn log() -> Self {
        Transform::Log {
            epsilon: DEFAULT_LOG_EPSILON,
        }
    }

    pub fn exp_tilt(t: f64) -> Self {
        Transform::ExpTilt { t }
    }

    /// Build a tabulated transform; requires at least two finite values.
    pub fn tabulated(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidParameter(
                "tabulated transform needs at least 2 grid values".into(),
            ));
        }
        if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tabulated transform has non-finite value {bad}"
            )));
        }
        Ok(Transform::Tabulated {
            values: Arc::new(values),
        })
    }

    /// Evaluate at `u in [0, 1]`.
    pub fn eval(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain { value: u });
        }
        Ok(self.eval_unchecked(u))
    }

    /// Evaluate without the domain check; callers guarantee `u in [0, 1]`.
    #[inline]
    pub(crate) fn eval_unchecked(&self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log { epsilon } => u.max(*epsilon).ln(),
            Transform::ExpTilt { t } => {
                let sign = if *t >= 0.0 { 1.0 } else { -1.0 };
                sign * (t * u).exp()
            }
            Transform::Tabulated { values } => {
                let n = values.len();
                let pos = u * (n - 1) as f64;
                let i = (pos.floor() as usize).min(n - 2);
                let frac = pos - i as f64;
                values[i] + frac * (values[i + 1] - values[i])
            }
        }
    }

    /// Apply the transform to a calibrated score.
    pub fn compose(&self, score: CalibratedScore) -> TransformedReward {
        TransformedReward(self.eval_unchecked(score.value()))
    }

    /// Parse a CLI transform spec: `identity`, `log`, `log:<eps>`,
    /// `exp:<t>`, or `table:<path>`.
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let invalid =
            |msg: String| -> Error { Error::InvalidParameter(format!("transform `{spec}`: {msg}")) };
        match spec.split_once(':') {
            None => match spec {
                "identity" => Ok(Transform::Identity),
                "log" => Ok(Transform::log()),
                other => Err(invalid(format!("unknown kind `{other}`"))),
            },
            Some(("log", eps)) => {
                let epsilon: f64 = eps.parse().map_err(|e| invalid(format!("{e}")))?;
                if !(epsilon > 0.0 && epsilon <= 1.0) {
                    return Err(invalid(format!("epsilon must be in (0, 1], got {epsilon}")));
                }
                Ok(Transform::Log { epsilon })
            }
            Some(("exp", t)) => {
                let t: f64 = t.parse().map_err(|e| invalid(format!("{e}")))?;
                if !t.is_finite() {
                    return Err(invalid("tilt must be finite".into()));
                }
                Ok(Transform::ExpTilt { t })
            }
            Some(("table", path)) => {
                let file = std::fs::File::open(path).map_err(Error::Io)?;
                Self::read_table(std::io::BufReader::new(file))
            }
            Some((kind, _)) => Err(invalid(format!("unknown kind `{kind}`"))),
        }
    }

    /// Read a tabulated transform from CSV with columns `u,phi`. The `u`
    /// column must be a uniform grid covering `[0, 1]`; a `u,phi` header is
    /// optional.
    pub fn read_table(reader: impl BufRead) -> Result<Self> {
        Self::tabulated(read_uniform_table(reader, "u,phi")?)
    }

    /// Write a tabulated version of this transform as `u,phi` CSV rows,
    /// consumable by `table:<path>` specs.
    pub fn write_table(&self, mut writer: impl Write, m: usize) -> Result<()> {
        if m < 2 {
            return Err(Error::InvalidParameter(
                "table export needs at least 2 rows".into(),
            ));
        }
        writeln!(writer, "u,phi")?;
        let h = 1.0 / (m - 1) as f64;
        for i in 0..m {
            let u = (i as f64 * h).min(1.0);
            writeln!(writer, "{},{}", u, self.eval_unchecked(u))?;
        }
        Ok(())
    }

    /// Canonical spec string, used when labelling outputs.
    pub fn label(&self) -> String {
        match self {
            Transform::Identity => "identity".into(),
            Transform::Log { epsilon } if *epsilon == DEFAULT_LOG_EPSILON => "log".into(),
            Transform::Log { epsilon } => format!("log:{epsilon}"),
            Transform::ExpTilt { t } => format!("exp:{t}"),
            Transform::Tabulated { values } => format!("table[{}]", values.len()),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Read a two-column CSV whose first column is a uniform grid over `[0, 1]`
/// and return the second column. An optional header matching `header` is
/// skipped. Shared by transform tables (`u,phi`) and procedure tables
/// (`u,g`).
pub fn read_uniform_table(reader: impl BufRead, header: &str) -> Result<Vec<f64>> {
    let mut grid = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (idx == 0 && trimmed.eq_ignore_ascii_case(header)) {
            continue;
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|e| Error::Parse {
                line: idx + 1,
                message: format!("bad number `{s}`: {e}"),
            })
        };
        let (u, value) = trimmed.split_once(',').ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: "expected two comma-separated columns".into(),
        })?;
        grid.push(parse(u)?);
        values.push(parse(value)?);
    }
    if grid.len() < 2 {
        return Err(Error::InvalidParameter(
            "table needs at least 2 rows".into(),
        ));
    }
    let n = grid.len();
    let h = 1.0 / (n - 1) as f64;
    for (i, &u) in grid.iter().enumerate() {
        if (u - i as f64 * h).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "table grid must be uniform over [0, 1]: row {} has u = {u}, expected {}",
                i + 1,
                i as f64 * h
            )));
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_identity_and_domain() {
        let t = Transform::Identity;
        assert_eq!(t.eval(0.37).unwrap(), 0.37);
        assert!(matches!(t.eval(-0.1), Err(Error::Domain { .. })));
        assert!(matches!(t.eval(1.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn eval_exp_tilt_sign_convention() {
        // sign(t)·e^{t·u}; sign(0) = +1.
        assert_eq!(Transform::exp_tilt(10.0).eval(0.0).unwrap(), 1.0);
        assert_eq!(Transform::exp_tilt(-10.0).eval(0.0).unwrap(), -1.0);
        assert_eq!(Transform::exp_tilt(0.0).eval(0.7).unwrap(), 1.0);
        let e5 = Transform::exp_tilt(10.0).eval(0.5).unwrap();
        assert!((e5 - 148.4131591025766).abs() < 1e-10);
        let neg = Transform::exp_tilt(-10.0).eval(1.0).unwrap();
        assert!((neg - (-4.5399929762484854e-5)).abs() < 1e-18);
    }

    #[test]
    fn eval_log_clamps_at_epsilon() {
        let t = Transform::log();
        let at_zero = t.eval(0.0).unwrap();
        assert!((at_zero - (1e-6f64).ln()).abs() < 1e-12);
        assert!((at_zero - (-13.815510557964274)).abs() < 1e-10);
        assert_eq!(t.eval(0.5).unwrap(), 0.5f64.ln());
    }

    #[test]
    fn tabulated_interpolates_linearly() {
        let t = Transform::tabulated(vec![0.0, 2.0, 1.0]).unwrap();
        assert_eq!(t.eval(0.0).unwrap(), 0.0);
        assert_eq!(t.eval(0.5).unwrap(), 2.0);
        assert_eq!(t.eval(1.0).unwrap(), 1.0);
        assert!((t.eval(0.25).unwrap() - 1.0).abs() < 1e-15);
        assert!((t.eval(0.75).unwrap() - 1.5).abs() < 1e-15);

        assert!(Transform::tabulated(vec![1.0]).is_err());
        assert!(Transform::tabulated(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn compose_matches_eval() {
        let score = CalibratedScore::new(0.375).unwrap();
        assert_eq!(Transform::Identity.compose(score).value(), 0.375);
        let tilted = Transform::exp_tilt(10.0).compose(score).value();
        assert!((tilted - (3.75f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_transforms_are_nondecreasing_on_fine_grid() {
        let transforms = [
            Transform::Identity,
            Transform::log(),
            Transform::exp_tilt(7.0),
            Transform::exp_tilt(-7.0),
            Transform::exp_tilt(0.0),
        ];
        let n = 10_000;
        for t in &transforms {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=n {
                let u = i as f64 / n as f64;
                let v = t.eval(u).unwrap();
                assert!(v.is_finite());
                assert!(v >= prev, "{t} decreased at u = {u}");
                prev = v;
            }
        }
    }

    #[test]
    fn spec_parsing() {
        assert!(matches!(
            Transform::parse_spec("identity"),
            Ok(Transform::Identity)
        ));
        assert!(matches!(
            Transform::parse_spec("log"),
            Ok(Transform::Log { epsilon }) if epsilon == DEFAULT_LOG_EPSILON
        ));
        assert!(matches!(
            Transform::parse_spec("log:0.001"),
            Ok(Transform::Log { epsilon }) if epsilon == 0.001
        ));
        assert!(matches!(
            Transform::parse_spec("exp:-5"),
            Ok(Transform::ExpTilt { t }) if t == -5.0
        ));
        assert!(Transform::parse_spec("exp:abc").is_err());
        assert!(Transform::parse_spec("nope").is_err());
        assert!(Transform::parse_spec("log:0").is_err());
    }

    #[test]
    fn table_roundtrip_through_csv() {
        let mut buf = Vec::new();
        Transform::exp_tilt(3.0).write_table(&mut buf, 101).unwrap();
        let parsed = Transform::read_table(buf.as_slice()).unwrap();
        for i in 0..=100 {
            let u = i as f64 / 100.0;
            let want = Transform::exp_tilt(3.0).eval(u).unwrap();
            assert!((parsed.eval(u).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn table_rejects_non_uniform_grid() {
        let csv = "u,phi\n0,0\n0.3,1\n1,2\n";
        assert!(Transform::read_table(csv.as_bytes()).is_err());
    }
}
