//! Exact win-rate and KL computations in calibrated reward space.
//!
//! The KL-regularized optimum for a transformed calibrated reward `Φ` is the
//! tilted density `f(u) ∝ exp(Φ(u)/β)` over `[0, 1]`. For any *calibrated*
//! inference-time procedure — one that reweights a policy by a function
//! `g(C)` of the policy's own calibrated reward — both the inference-time
//! win rate against the base policy and the KL divergence depend only on
//! `(Φ, β, g)`, so they can be computed by quadrature without reference to
//! a concrete reward model or base policy:
//!
//! ```text
//! W_BoN = 1 - N ∫ F(u)^N u^{N-1} du          g(u) = u^{N-1}
//! W_WoN = N ∫ (1-F(u))^N (1-u)^{N-1} du      g(u) = (1-u)^{N-1}
//! W_g   = ∫ f·g(F)·G du / (∫ f·g(F) du · G(1)),  G(u) = ∫_0^u g
//! KL    = E_f[ln f]
//! ```
//!
//! with `F` the CDF of `f`. Policies are tabulated on a uniform grid; the
//! CDF is piecewise linear between nodes, and every `F`-dependent integral
//! is evaluated cell-by-cell with Gauss-Legendre nodes so it is exact for
//! that piecewise-linear model. This keeps the quadrature consistent with
//! the Monte Carlo oracle, which draws samples by inverting the same
//! tabulated CDF.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::quad::{self, Grid};
use crate::transforms::Transform;
use crate::{Error, Result};

/// Default quadrature grid size (odd, so composite Simpson applies).
pub const DEFAULT_GRID_SIZE: usize = 2001;

/// An inference-time procedure, identified by its reweighting function `g`
/// of the policy's own calibrated reward.
#[derive(Debug, Clone)]
pub enum InferenceProcedure {
    /// Plain sampling: `g ≡ 1`.
    Identity,
    /// Best-of-N: keep the highest-reward of N draws; `g(u) = u^{N-1}`.
    BestOfN { n: u32 },
    /// Worst-of-N: keep the lowest-reward of N draws; `g(u) = (1-u)^{N-1}`.
    WorstOfN { n: u32 },
    /// Redraw until the sample's own-policy quantile reaches `phi`, with at
    /// most `n` draws; the last draw is returned if none qualifies.
    RewindRepeat { phi: f64, n: u32 },
    /// Arbitrary nonnegative `g`, tabulated on a uniform grid over `[0, 1]`.
    Custom { g: Arc<Vec<f64>> },
}

impl InferenceProcedure {
    pub fn best_of(n: u32) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidParameter("best-of-N needs N >= 1".into()));
        }
        Ok(Self::BestOfN { n })
    }

    pub fn worst_of(n: u32) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidParameter("worst-of-N needs N >= 1".into()));
        }
        Ok(Self::WorstOfN { n })
    }

    pub fn rewind_repeat(phi: f64, n: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::InvalidParameter(format!(
                "rewind threshold must be in [0, 1], got {phi}"
            )));
        }
        if n < 1 {
            return Err(Error::InvalidParameter(
                "rewind-and-repeat needs N >= 1".into(),
            ));
        }
        Ok(Self::RewindRepeat { phi, n })
    }

    /// Custom `g`; values must be nonnegative with a positive integral.
    pub fn custom(g: Vec<f64>) -> Result<Self> {
        if g.len() < 2 {
            return Err(Error::InvalidParameter(
                "custom procedure needs at least 2 grid values".into(),
            ));
        }
        if g.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "custom procedure values must be finite and nonnegative".into(),
            ));
        }
        if g.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidParameter(
                "custom procedure must have positive integral".into(),
            ));
        }
        Ok(Self::Custom { g: Arc::new(g) })
    }

    /// Parse `identity`, `bon:<N>`, `won:<N>`, `rewind:<phi>:<N>`, or
    /// `custom:<path>` (CSV with columns `u,g`).
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let invalid = |msg: String| -> Error {
            Error::InvalidParameter(format!("procedure `{spec}`: {msg}"))
        };
        let mut parts = spec.split(':');
        match parts.next().unwrap_or_default() {
            "identity" => Ok(Self::Identity),
            "bon" => {
                let n = parse_count(parts.next(), spec)?;
                Self::best_of(n)
            }
            "won" => {
                let n = parse_count(parts.next(), spec)?;
                Self::worst_of(n)
            }
            "rewind" => {
                let phi: f64 = parts
                    .next()
                    .ok_or_else(|| invalid("missing threshold".into()))?
                    .parse()
                    .map_err(|e| invalid(format!("{e}")))?;
                let n = parse_count(parts.next(), spec)?;
                Self::rewind_repeat(phi, n)
            }
            "custom" => {
                let path = parts.next().ok_or_else(|| invalid("missing path".into()))?;
                let file = std::fs::File::open(path)?;
                let g = crate::transforms::read_uniform_table(
                    std::io::BufReader::new(file),
                    "u,g",
                )?;
                Self::custom(g)
            }
            other => Err(invalid(format!("unknown kind `{other}`"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::BestOfN { n } => format!("bon:{n}"),
            Self::WorstOfN { n } => format!("won:{n}"),
            Self::RewindRepeat { phi, n } => format!("rewind:{phi}:{n}"),
            Self::Custom { g } => format!("custom[{}]", g.len()),
        }
    }
}

fn parse_count(part: Option<&str>, spec: &str) -> Result<u32> {
    part.ok_or_else(|| Error::InvalidParameter(format!("procedure `{spec}`: missing N")))?
        .parse()
        .map_err(|e| Error::InvalidParameter(format!("procedure `{spec}`: {e}")))
}

impl fmt::Display for InferenceProcedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// The reweighting function of the rewind-and-repeat procedure, tabulated on
/// an `m`-point uniform grid:
///
/// ```text
/// g(u) = 1{u >= phi} · (1 - phi^{N-1})/(1 - phi) + phi^{N-1}
/// ```
///
/// which integrates to one. `g ≡ 1` when `phi ∈ {0, 1}` or `N = 1` (the
/// first draw is always accepted, or acceptance never fires and the last
/// raw draw is returned).
pub fn rewind_repeat_g(phi: f64, n: u32, m: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidParameter(format!(
            "rewind threshold must be in [0, 1], got {phi}"
        )));
    }
    if n < 1 {
        return Err(Error::InvalidParameter(
            "rewind-and-repeat needs N >= 1".into(),
        ));
    }
    if m < 2 {
        return Err(Error::InvalidParameter(
            "tabulation needs at least 2 points".into(),
        ));
    }
    let (low, high) = rewind_weights(phi, n);
    Ok((0..m)
        .map(|i| {
            let u = i as f64 / (m - 1) as f64;
            if u >= phi {
                high
            } else {
                low
            }
        })
        .collect())
}

/// Weights of the rewind-and-repeat `g` below and at/above the threshold.
fn rewind_weights(phi: f64, n: u32) -> (f64, f64) {
    if n == 1 || phi == 0.0 || phi == 1.0 {
        return (1.0, 1.0);
    }
    let low = phi.powi(n as i32 - 1);
    let high = (1.0 - phi.powi(n as i32)) / (1.0 - phi);
    (low, high)
}

/// The KL-RL optimum `f(u) ∝ exp(Φ(u)/β)` tabulated on a uniform grid,
/// with its CDF.
#[derive(Debug, Clone)]
pub struct TiltedPolicy {
    transform: Transform,
    beta: f64,
    grid: Grid,
    phi: Vec<f64>,
    phi_max: f64,
    /// `exp((Φ - max Φ)/β)`, trapezoid-normalized to unit mass.
    density: Vec<f64>,
    /// `ln ∫ exp((Φ - max Φ)/β)` (trapezoid), for log-density evaluation.
    log_norm: f64,
    /// Monotone CDF with `cdf[0] = 0` and `cdf[m-1] = 1`.
    cdf: Vec<f64>,
}

/// Build the tilted policy for `transform` and regularizer `beta` on an
/// `m`-point grid (`m` odd, >= 3). `Φ` is shifted by its maximum before
/// exponentiation; the density is invariant under that shift.
pub fn build_tilted(transform: &Transform, beta: f64, m: usize) -> Result<TiltedPolicy> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    let grid = Grid::new(m)?;
    let phi: Vec<f64> = grid.sample(|u| transform.eval_unchecked(u));
    if let Some(&bad) = phi.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "transform produced non-finite value {bad}"
        )));
    }
    Ok(TiltedPolicy::from_phi(transform.clone(), beta, grid, phi))
}

impl TiltedPolicy {
    fn from_phi(transform: Transform, beta: f64, grid: Grid, phi: Vec<f64>) -> Self {
        let phi_max = phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut density: Vec<f64> = phi.iter().map(|&p| ((p - phi_max) / beta).exp()).collect();
        let norm = quad::trapezoid(&density, grid.h());
        density.iter_mut().for_each(|d| *d /= norm);

        let increments = quad::cumulative_increments(&density, grid.h());
        let mut cdf = Vec::with_capacity(grid.len());
        cdf.push(0.0);
        let mut acc = 0.0;
        for inc in &increments {
            acc += inc;
            cdf.push(acc);
        }
        // Renormalize so the CDF ends at exactly one; the cumulative rule
        // tracks the trapezoid normalizer to O(h^4).
        let total = acc;
        for v in cdf.iter_mut() {
            *v = (*v / total).min(1.0);
        }
        cdf[grid.len() - 1] = 1.0;

        Self {
            transform,
            beta,
            grid,
            phi,
            phi_max,
            density,
            log_norm: norm.ln(),
            cdf,
        }
    }

    /// Wrap raw nonnegative density values (uniform grid, odd length) as a
    /// policy. The values are normalized to unit mass; the equivalent
    /// transform is `Φ = ln f` with `β = 1`.
    pub fn from_density(values: &[f64]) -> Result<Self> {
        let grid = Grid::new(values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "density values must be finite and nonnegative".into(),
            ));
        }
        let norm = quad::trapezoid(values, grid.h());
        if norm.is_nan() || norm <= 0.0 {
            return Err(Error::InvalidParameter(
                "density must have positive mass".into(),
            ));
        }
        let phi: Vec<f64> = values.iter().map(|&v| (v / norm).max(1e-300).ln()).collect();
        let transform = Transform::tabulated(phi.clone())?;
        Ok(Self::from_phi(transform, 1.0, grid, phi))
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// `Φ` evaluated on the grid.
    pub fn phi_values(&self) -> &[f64] {
        &self.phi
    }

    pub fn density_values(&self) -> &[f64] {
        &self.density
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    /// CDF at an arbitrary `u` by linear interpolation.
    pub fn cdf_at(&self, u: f64) -> f64 {
        let m = self.grid.len();
        let pos = (u.clamp(0.0, 1.0)) * (m - 1) as f64;
        let i = (pos.floor() as usize).min(m - 2);
        let frac = pos - i as f64;
        self.cdf[i] + frac * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Quantile function: the smallest `u` with `F(u) >= p`, by linear
    /// interpolation of the tabulated CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let j = self.cdf.partition_point(|&c| c < p);
        if j == 0 {
            return 0.0;
        }
        let (lo, hi) = (self.cdf[j - 1], self.cdf[j]);
        let base = self.grid.point(j - 1);
        if hi > lo {
            base + self.grid.h() * (p - lo) / (hi - lo)
        } else {
            base
        }
    }

    /// Log density `ln f(u) = (Φ(u) - max Φ)/β - ln Z`.
    pub fn log_density_at(&self, u: f64) -> f64 {
        (self.transform.eval_unchecked(u) - self.phi_max) / self.beta - self.log_norm
    }

    /// Per-cell probability masses `F(u_{i+1}) - F(u_i)`.
    fn masses(&self) -> impl Iterator<Item = f64> + '_ {
        self.cdf.windows(2).map(|w| w[1] - w[0])
    }

    /// KL divergence to the uniform base policy: `E_f[ln f]`, clamped at
    /// zero from below.
    ///
    /// Computed exactly for the tabulated policy, whose density is
    /// `mass/h` per cell: `Σ mass·ln(mass/h)`. This is what the
    /// inverse-CDF sampler actually draws from, stays nonnegative by
    /// Jensen, and remains meaningful even when the tilt concentrates
    /// inside a single cell (where quadrature on the closed-form density
    /// collapses). On resolved tilts it agrees with
    /// [`kl_divergence_smooth`](Self::kl_divergence_smooth) to O(h²).
    pub fn kl_divergence(&self) -> f64 {
        let h = self.grid.h();
        let kl: f64 = self
            .masses()
            .filter(|&mass| mass > 0.0)
            .map(|mass| mass * (mass / h).ln())
            .sum();
        kl.max(0.0)
    }

    /// The same KL through the closed-form route
    /// `(1/β)·E[Φ] - ln ∫ e^{Φ/β}` with Simpson expectations; the
    /// independent cross-check for [`kl_divergence`](Self::kl_divergence)
    /// on resolved tilts.
    pub fn kl_divergence_smooth(&self) -> f64 {
        let h = self.grid.h();
        let weights: Vec<f64> = self
            .phi
            .iter()
            .map(|&p| ((p - self.phi_max) / self.beta).exp())
            .collect();
        let weighted_phi: Vec<f64> = weights
            .iter()
            .zip(&self.phi)
            .map(|(w, p)| w * (p - self.phi_max))
            .collect();
        let z = quad::simpson(&weights, h);
        let mean_shifted_phi = quad::simpson(&weighted_phi, h) / z;
        (mean_shifted_phi / self.beta - z.ln()).max(0.0)
    }

    /// Log of the tabulated policy's own (piecewise-constant) density at
    /// `u`; the density the samplers draw from.
    pub fn log_cell_density_at(&self, u: f64) -> f64 {
        let m = self.grid.len();
        let i = ((u.clamp(0.0, 1.0) * (m - 1) as f64).floor() as usize).min(m - 2);
        let mass = self.cdf[i + 1] - self.cdf[i];
        (mass.max(f64::MIN_POSITIVE) / self.grid.h()).ln()
    }

    /// Inference-time win rate of this policy over the uniform base policy
    /// when both are decoded through `procedure`.
    pub fn win_rate(&self, procedure: &InferenceProcedure) -> f64 {
        let w = match procedure {
            InferenceProcedure::Identity => self.mean_u(),
            InferenceProcedure::BestOfN { n } => self.best_of_n_win_rate(*n),
            InferenceProcedure::WorstOfN { n } => self.worst_of_n_win_rate(*n),
            InferenceProcedure::RewindRepeat { phi, n } => self.rewind_win_rate(*phi, *n),
            InferenceProcedure::Custom { g } => self.custom_win_rate(g),
        };
        w.clamp(0.0, 1.0)
    }

    /// `E[u]`: exact for the piecewise-linear CDF.
    fn mean_u(&self) -> f64 {
        let h = self.grid.h();
        self.masses()
            .enumerate()
            .map(|(i, mass)| mass * (self.grid.point(i) + 0.5 * h))
            .sum()
    }

    /// `1 - N ∫ F(u)^N u^{N-1} du`, cell-exact via Gauss-Legendre.
    fn best_of_n_win_rate(&self, n: u32) -> f64 {
        if n == 1 {
            return self.mean_u();
        }
        let order = gl_order(n);
        let mut integral = 0.0;
        for i in 0..self.grid.len() - 1 {
            let (a, b) = (self.grid.point(i), self.grid.point(i + 1));
            let (fa, fb) = (self.cdf[i], self.cdf[i + 1]);
            if fb == 0.0 {
                continue; // F ≡ 0 on this cell
            }
            integral += quad::gauss_integrate(
                |u| {
                    let f = fa + (fb - fa) * (u - a) / (b - a);
                    f.powi(n as i32) * u.powi(n as i32 - 1)
                },
                a,
                b,
                order,
            );
        }
        1.0 - n as f64 * integral
    }

    /// `N ∫ (1 - F(u))^N (1-u)^{N-1} du`, cell-exact via Gauss-Legendre.
    fn worst_of_n_win_rate(&self, n: u32) -> f64 {
        if n == 1 {
            return self.mean_u();
        }
        let order = gl_order(n);
        let mut integral = 0.0;
        for i in 0..self.grid.len() - 1 {
            let (a, b) = (self.grid.point(i), self.grid.point(i + 1));
            let (fa, fb) = (self.cdf[i], self.cdf[i + 1]);
            if fa == 1.0 {
                continue; // 1 - F ≡ 0 on this cell
            }
            integral += quad::gauss_integrate(
                |u| {
                    let f = fa + (fb - fa) * (u - a) / (b - a);
                    (1.0 - f).powi(n as i32) * (1.0 - u).powi(n as i32 - 1)
                },
                a,
                b,
                order,
            );
        }
        n as f64 * integral
    }

    /// Rewind-and-repeat win rate via the general formula
    /// `∫ f·g(F)·G du / (∫ f·g(F) du · G(1))` with the exact piecewise `g`:
    /// the integrand is integrated segment-by-segment, splitting cells at
    /// the `g` discontinuity (`F(u) = phi`) and at the kink of `G` (`u =
    /// phi`), where it is linear.
    fn rewind_win_rate(&self, phi: f64, n: u32) -> f64 {
        let (low, high) = rewind_weights(phi, n);
        if low == high {
            return self.mean_u();
        }
        // G(u) = ∫_0^u g, piecewise linear with a kink at phi; G(1) = 1.
        let g_cum = |u: f64| -> f64 {
            if u < phi {
                u * low
            } else {
                phi * low + (u - phi) * high
            }
        };
        let threshold_u = self.quantile(phi);
        let h = self.grid.h();
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        for i in 0..self.grid.len() - 1 {
            let (a, b) = (self.grid.point(i), self.grid.point(i + 1));
            let mass = self.cdf[i + 1] - self.cdf[i];
            if mass <= 0.0 && (b <= threshold_u || a >= threshold_u) {
                continue;
            }
            let f = mass / h;
            let mut cuts = vec![a];
            for cut in [threshold_u, phi] {
                if cut > a && cut < b {
                    cuts.push(cut);
                }
            }
            cuts.push(b);
            cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for seg in cuts.windows(2) {
                let (s0, s1) = (seg[0], seg[1]);
                if s1 <= s0 {
                    continue;
                }
                let mid = 0.5 * (s0 + s1);
                let g = if mid >= threshold_u { high } else { low };
                let len = s1 - s0;
                numerator += f * g * len * g_cum(mid);
                denominator += f * g * len;
            }
        }
        numerator / denominator
    }

    /// General double-integral win rate for a tabulated `g`, by nested
    /// quadrature: the inner cumulative of `g` feeds per-cell Gauss nodes of
    /// the outer integral.
    fn custom_win_rate(&self, g: &[f64]) -> f64 {
        let g_grid_h = 1.0 / (g.len() - 1) as f64;
        let increments = quad::cumulative_increments(g, g_grid_h);
        let mut g_cum = Vec::with_capacity(g.len());
        g_cum.push(0.0);
        let mut acc = 0.0;
        for inc in &increments {
            acc += inc;
            g_cum.push(acc);
        }
        let g_total = acc;
        let interp = |table: &[f64], u: f64| -> f64 {
            let pos = u.clamp(0.0, 1.0) * (table.len() - 1) as f64;
            let i = (pos.floor() as usize).min(table.len() - 2);
            let frac = pos - i as f64;
            table[i] + frac * (table[i + 1] - table[i])
        };

        let h = self.grid.h();
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        for i in 0..self.grid.len() - 1 {
            let (a, b) = (self.grid.point(i), self.grid.point(i + 1));
            let (fa, fb) = (self.cdf[i], self.cdf[i + 1]);
            let mass = fb - fa;
            if mass <= 0.0 {
                continue;
            }
            let f = mass / h;
            let f_lin = |u: f64| fa + (fb - fa) * (u - a) / (b - a);
            numerator +=
                quad::gauss_integrate(|u| f * interp(g, f_lin(u)) * interp(&g_cum, u), a, b, 8);
            denominator += quad::gauss_integrate(|u| f * interp(g, f_lin(u)), a, b, 8);
        }
        numerator / (denominator * g_total)
    }

    /// The regularized objective `win_rate - beta · KL`; `beta` must match
    /// the policy's regularizer.
    pub fn infalign_objective(&self, procedure: &InferenceProcedure, beta: f64) -> Result<f64> {
        if beta != self.beta {
            return Err(Error::InvalidParameter(format!(
                "objective beta {beta} does not match policy beta {}",
                self.beta
            )));
        }
        Ok(self.win_rate(procedure) - beta * self.kl_divergence())
    }
}

fn gl_order(n: u32) -> usize {
    (n as usize).clamp(2, 64)
}

/// One point on an alignment curve.
#[derive(Debug, Clone)]
pub struct TradeoffPoint {
    pub beta: f64,
    pub kl: f64,
    pub win_rate: f64,
    pub transform: Transform,
    pub procedure: InferenceProcedure,
}

/// Compute one tradeoff point per `beta` and return them sorted by KL
/// ascending. Cells are independent and evaluated in parallel.
pub fn sweep_curve(
    transform: &Transform,
    procedure: &InferenceProcedure,
    betas: &[f64],
    m: usize,
) -> Result<Vec<TradeoffPoint>> {
    if betas.is_empty() {
        return Err(Error::InvalidParameter("empty beta list".into()));
    }
    if let Some(&bad) = betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "betas must be positive and finite, got {bad}"
        )));
    }
    let mut points = betas
        .par_iter()
        .map(|&beta| {
            let policy = build_tilted(transform, beta, m)?;
            Ok(TradeoffPoint {
                beta,
                kl: policy.kl_divergence(),
                win_rate: policy.win_rate(procedure),
                transform: transform.clone(),
                procedure: procedure.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| {
        a.kl.partial_cmp(&b.kl)
            .unwrap()
            .then(b.beta.partial_cmp(&a.beta).unwrap())
    });
    Ok(points)
}

/// `count` log-spaced values in `[min, max]`.
pub fn log_spaced_betas(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min) || count < 1 {
        return Err(Error::InvalidParameter(format!(
            "log-spaced range needs 0 < min <= max and count >= 1, got [{min}, {max}] x{count}"
        )));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    let (lo, hi) = (min.ln(), max.ln());
    Ok((0..count)
        .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

/// Find `beta` such that the policy produced by `policy_at(beta)` has KL
/// equal to `target_kl`, then return that policy.
///
/// KL is nonincreasing in `beta` while the tilt stays resolved on the grid,
/// so the search walks down from a very large `beta` to the first crossing
/// of the target and bisects inside that bracket. Walking from above keeps
/// the search on the resolved branch; targets that would need an unresolved
/// tilt are reported as unreachable.
pub fn beta_for_target_kl(
    policy_at: impl Fn(f64) -> Result<TiltedPolicy>,
    target_kl: f64,
) -> Result<TiltedPolicy> {
    if !(target_kl > 0.0 && target_kl.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "target KL must be positive and finite, got {target_kl}"
        )));
    }
    let kl_at = |beta: f64| -> Result<f64> { Ok(policy_at(beta)?.kl_divergence()) };
    let mut hi = 1e12f64;
    let mut lo = None;
    let mut beta = hi;
    let mut kl_hi = kl_at(hi)?;
    for _ in 0..200 {
        beta /= 4.0;
        let kl = kl_at(beta)?;
        if kl >= target_kl {
            lo = Some(beta);
            break;
        }
        let material_drop = kl_hi > (0.01 * target_kl).max(1e-6) && kl < 0.5 * kl_hi;
        if material_drop || beta < 1e-12 {
            // Left the monotone branch (or exhausted the range) before
            // reaching the target.
            return Err(Error::InvalidParameter(format!(
                "target KL {target_kl} unreachable: KL peaked at {kl_hi} near beta {hi}"
            )));
        }
        hi = beta;
        kl_hi = kl;
    }
    let lo = lo.ok_or_else(|| {
        Error::InvalidParameter(format!("target KL {target_kl} unreachable"))
    })?;
    let (mut ln_lo, mut ln_hi) = (lo.ln(), hi.ln());
    let mut best = policy_at(lo)?;
    let mut best_gap = (best.kl_divergence() - target_kl).abs();
    for _ in 0..64 {
        let mid = 0.5 * (ln_lo + ln_hi);
        let policy = policy_at(mid.exp())?;
        let kl = policy.kl_divergence();
        let gap = (kl - target_kl).abs();
        if gap < best_gap {
            best_gap = gap;
            best = policy;
        }
        if gap <= 1e-10 * target_kl.max(1.0) {
            break;
        }
        if kl > target_kl {
            ln_lo = mid;
        } else {
            ln_hi = mid;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    const M: usize = 2001;

    fn constant_transform() -> Transform {
        Transform::exp_tilt(0.0)
    }

    #[test]
    fn constant_transform_gives_uniform_policy() {
        let p = build_tilted(&constant_transform(), 0.7, M).unwrap();
        for (i, (&d, &c)) in p.density_values().iter().zip(p.cdf_values()).enumerate() {
            assert!((d - 1.0).abs() < 1e-12);
            assert!((c - p.grid().point(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_transform_cdf_matches_closed_form() {
        // F(u) = (e^u - 1)/(e - 1) for Φ(u) = u, β = 1.
        let p = build_tilted(&Transform::Identity, 1.0, M).unwrap();
        for i in (0..M).step_by(97) {
            let u = p.grid().point(i);
            let want = (u.exp() - 1.0) / (E - 1.0);
            assert!(
                (p.cdf_values()[i] - want).abs() < 1e-10,
                "cdf mismatch at u={u}"
            );
        }
    }

    #[test]
    fn tilted_policy_invariants() {
        for (transform, beta) in [
            (Transform::Identity, 1.0),
            (Transform::exp_tilt(10.0), 0.1),
            (Transform::exp_tilt(-5.0), 0.3),
            (Transform::log(), 0.5),
        ] {
            let p = build_tilted(&transform, beta, M).unwrap();
            assert!(p.density_values().iter().all(|&d| d >= 0.0));
            let trapz = quad::trapezoid(p.density_values(), p.grid().h());
            assert!((trapz - 1.0).abs() < 1e-8, "trapezoid mass {trapz}");
            assert_eq!(p.cdf_values()[0], 0.0);
            assert_eq!(p.cdf_values()[M - 1], 1.0);
            assert!(p.cdf_values().windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn build_rejects_bad_parameters() {
        assert!(build_tilted(&Transform::Identity, 0.0, M).is_err());
        assert!(build_tilted(&Transform::Identity, -1.0, M).is_err());
        assert!(build_tilted(&Transform::Identity, 1.0, 4).is_err());
    }

    #[test]
    fn density_is_shift_invariant() {
        let base: Vec<f64> = (0..M).map(|i| (i as f64 / (M - 1) as f64).powi(2)).collect();
        let shifted: Vec<f64> = base.iter().map(|v| v + 123.456).collect();
        let p0 = build_tilted(&Transform::tabulated(base).unwrap(), 0.25, M).unwrap();
        let p1 = build_tilted(&Transform::tabulated(shifted).unwrap(), 0.25, M).unwrap();
        for (a, b) in p0.density_values().iter().zip(p1.density_values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_tilt_with_huge_beta_is_uniform() {
        let p = build_tilted(&Transform::exp_tilt(10.0), 1e12, M).unwrap();
        for &d in p.density_values() {
            assert!((d - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn kl_closed_forms() {
        // Constant transform: KL = 0 for any beta.
        for beta in [0.02, 1.0, 5.0] {
            let p = build_tilted(&constant_transform(), beta, M).unwrap();
            assert!(p.kl_divergence().abs() < 1e-12);
        }
        // Identity, beta = 1: KL = 1/(e-1) - ln(e-1), on both routes.
        let p = build_tilted(&Transform::Identity, 1.0, M).unwrap();
        let want = 1.0 / (E - 1.0) - (E - 1.0).ln();
        assert!((p.kl_divergence() - want).abs() < 1e-6);
        assert!((p.kl_divergence_smooth() - want).abs() < 1e-6);
        assert!((want - 0.0406518).abs() < 1e-6);
    }

    #[test]
    fn kl_routes_agree_on_resolved_tilts() {
        for (transform, beta) in [
            (Transform::Identity, 0.3),
            (Transform::exp_tilt(5.0), 40.0),
            (Transform::exp_tilt(-10.0), 50.0),
            (Transform::log(), 0.7),
        ] {
            let p = build_tilted(&transform, beta, M).unwrap();
            let a = p.kl_divergence();
            let b = p.kl_divergence_smooth();
            assert!((a - b).abs() < 1e-5, "{transform} beta {beta}: {a} vs {b}");
        }
    }

    #[test]
    fn kl_diverges_as_beta_shrinks() {
        let kl = |beta: f64| {
            build_tilted(&Transform::Identity, beta, M)
                .unwrap()
                .kl_divergence()
        };
        assert!(kl(0.01) > kl(0.1));
        assert!(kl(0.1) > kl(1.0));
    }

    #[test]
    fn symmetric_policies_have_half_win_rate() {
        let p = build_tilted(&constant_transform(), 1.0, M).unwrap();
        let procedures = [
            InferenceProcedure::Identity,
            InferenceProcedure::best_of(2).unwrap(),
            InferenceProcedure::best_of(32).unwrap(),
            InferenceProcedure::worst_of(2).unwrap(),
            InferenceProcedure::worst_of(32).unwrap(),
            InferenceProcedure::rewind_repeat(0.85, 32).unwrap(),
        ];
        for proc in &procedures {
            let w = p.win_rate(proc);
            assert!((w - 0.5).abs() < 1e-8, "{proc}: {w}");
        }
    }

    #[test]
    fn identity_win_rate_closed_form() {
        // ∫ u e^u du / (e-1) = 1/(e-1).
        let p = build_tilted(&Transform::Identity, 1.0, M).unwrap();
        let want = 1.0 / (E - 1.0);
        assert!((p.win_rate(&InferenceProcedure::Identity) - want).abs() < 1e-6);
    }

    #[test]
    fn bon_and_won_of_one_equal_identity() {
        let p = build_tilted(&Transform::exp_tilt(5.0), 0.5, M).unwrap();
        let idw = p.win_rate(&InferenceProcedure::Identity);
        assert!((p.win_rate(&InferenceProcedure::best_of(1).unwrap()) - idw).abs() < 1e-12);
        assert!((p.win_rate(&InferenceProcedure::worst_of(1).unwrap()) - idw).abs() < 1e-12);
    }

    #[test]
    fn bon_matches_custom_g_route() {
        // Dual route: Eq-style closed integrand vs the general tabulated-g
        // formula for g(u) = u^{N-1}.
        let p = build_tilted(&Transform::Identity, 0.6, M).unwrap();
        let n = 4;
        let direct = p.win_rate(&InferenceProcedure::best_of(n).unwrap());
        let g: Vec<f64> = (0..4001)
            .map(|i| (i as f64 / 4000.0).powi(n as i32 - 1))
            .collect();
        let general = p.win_rate(&InferenceProcedure::custom(g).unwrap());
        assert!(
            (direct - general).abs() < 1e-6,
            "direct {direct} vs general {general}"
        );
    }

    #[test]
    fn bon_won_duality() {
        // W_BoN(Φ) = 1 - W_WoN(Φ') with Φ'(u) = Φ(1-u).
        let grid = Grid::new(M).unwrap();
        for (transform, beta) in [
            (Transform::Identity, 0.7),
            (Transform::exp_tilt(5.0), 0.4),
            (Transform::log(), 1.3),
        ] {
            let reflected: Vec<f64> =
                grid.sample(|u| transform.eval_unchecked((1.0 - u).clamp(0.0, 1.0)));
            let p = build_tilted(&transform, beta, M).unwrap();
            let p_ref = build_tilted(&Transform::tabulated(reflected).unwrap(), beta, M).unwrap();
            for n in [2, 4] {
                let bon = p.win_rate(&InferenceProcedure::best_of(n).unwrap());
                let won = p_ref.win_rate(&InferenceProcedure::worst_of(n).unwrap());
                assert!(
                    (bon - (1.0 - won)).abs() < 1e-6,
                    "duality violated for {transform}, N={n}: {bon} vs 1-{won}"
                );
            }
        }
    }

    #[test]
    fn rewind_g_tabulation() {
        // phi = 0.5, N = 2: g = 0.5 below, 1.5 at/above; integral 1.
        let g = rewind_repeat_g(0.5, 2, 2001).unwrap();
        assert_eq!(g[0], 0.5);
        assert_eq!(g[999], 0.5);
        assert_eq!(g[1000], 1.5); // u = 0.5 uses the >= branch
        assert_eq!(g[2000], 1.5);
        let integral = quad::trapezoid(&g, 1.0 / 2000.0);
        assert!((integral - 1.0).abs() < 1e-3); // step smeared over one cell

        for (phi, n) in [(0.0, 5), (1.0, 5), (0.7, 1)] {
            assert!(rewind_repeat_g(phi, n, 11).unwrap().iter().all(|&v| v == 1.0));
        }
        assert!(rewind_repeat_g(-0.1, 2, 11).is_err());
        assert!(rewind_repeat_g(1.1, 2, 11).is_err());
    }

    #[test]
    fn rewind_with_zero_threshold_equals_identity() {
        let p = build_tilted(&Transform::exp_tilt(5.0), 0.5, M).unwrap();
        let idw = p.win_rate(&InferenceProcedure::Identity);
        let rw = p.win_rate(&InferenceProcedure::rewind_repeat(0.0, 8).unwrap());
        assert!((rw - idw).abs() < 1e-8);
        let rw1 = p.win_rate(&InferenceProcedure::rewind_repeat(0.85, 1).unwrap());
        assert!((rw1 - idw).abs() < 1e-8);
    }

    #[test]
    fn rewind_matches_custom_g_route() {
        let p = build_tilted(&Transform::Identity, 0.8, M).unwrap();
        let exact = p.win_rate(&InferenceProcedure::rewind_repeat(0.85, 32).unwrap());
        // Fine tabulated g: the step lands on a grid point so the smear is
        // one-sided and small.
        let g = rewind_repeat_g(0.85, 32, 40_001).unwrap();
        let tabulated = p.win_rate(&InferenceProcedure::custom(g).unwrap());
        assert!(
            (exact - tabulated).abs() < 5e-4,
            "exact {exact} vs tabulated {tabulated}"
        );
    }

    #[test]
    fn objective_values_and_beta_check() {
        let p = build_tilted(&constant_transform(), 2.0, M).unwrap();
        let obj = p
            .infalign_objective(&InferenceProcedure::best_of(4).unwrap(), 2.0)
            .unwrap();
        assert!((obj - 0.5).abs() < 1e-8);
        assert!(p
            .infalign_objective(&InferenceProcedure::Identity, 1.0)
            .is_err());

        let p = build_tilted(&Transform::Identity, 1.0, M).unwrap();
        let obj = p
            .infalign_objective(&InferenceProcedure::Identity, 1.0)
            .unwrap();
        assert!((obj - (E - 1.0).ln()).abs() < 1e-6);
    }

    #[test]
    fn sweep_is_sorted_and_huge_beta_anchors_at_base() {
        let betas = [1e6];
        let pts = sweep_curve(
            &Transform::exp_tilt(5.0),
            &InferenceProcedure::best_of(4).unwrap(),
            &betas,
            M,
        )
        .unwrap();
        assert_eq!(pts.len(), 1);
        assert!(pts[0].kl < 1e-3);
        assert!((pts[0].win_rate - 0.5).abs() < 1e-3);

        let betas = log_spaced_betas(0.05, 5.0, 9).unwrap();
        let pts = sweep_curve(
            &Transform::Identity,
            &InferenceProcedure::Identity,
            &betas,
            M,
        )
        .unwrap();
        assert!(pts.windows(2).all(|w| w[0].kl <= w[1].kl));
        // Monotone win rate along the KL-sorted curve for a monotone Φ.
        assert!(pts.windows(2).all(|w| w[0].win_rate <= w[1].win_rate));

        assert!(sweep_curve(
            &Transform::Identity,
            &InferenceProcedure::Identity,
            &[],
            M
        )
        .is_err());
    }

    #[test]
    fn beta_matching_hits_target_kl() {
        let target = 0.5;
        let policy =
            beta_for_target_kl(|beta| build_tilted(&Transform::Identity, beta, M), target)
                .unwrap();
        assert!((policy.kl_divergence() - target).abs() < 1e-6);
    }

    #[test]
    fn procedure_spec_parsing() {
        assert!(matches!(
            InferenceProcedure::parse_spec("identity"),
            Ok(InferenceProcedure::Identity)
        ));
        assert!(matches!(
            InferenceProcedure::parse_spec("bon:4"),
            Ok(InferenceProcedure::BestOfN { n: 4 })
        ));
        assert!(matches!(
            InferenceProcedure::parse_spec("won:32"),
            Ok(InferenceProcedure::WorstOfN { n: 32 })
        ));
        assert!(matches!(
            InferenceProcedure::parse_spec("rewind:0.85:32"),
            Ok(InferenceProcedure::RewindRepeat { phi, n: 32 }) if phi == 0.85
        ));
        assert!(InferenceProcedure::parse_spec("bon").is_err());
        assert!(InferenceProcedure::parse_spec("bon:0").is_err());
        assert!(InferenceProcedure::parse_spec("rewind:1.5:2").is_err());
        assert!(InferenceProcedure::parse_spec("nope").is_err());
    }

    #[test]
    fn from_density_reconstructs_mass() {
        let grid = Grid::new(M).unwrap();
        let values = grid.sample(|u| 1.0 + 0.5 * (6.0 * u).sin());
        let p = TiltedPolicy::from_density(&values).unwrap();
        let trapz = quad::trapezoid(p.density_values(), grid.h());
        assert!((trapz - 1.0).abs() < 1e-10);
        let norm = quad::trapezoid(&values, grid.h());
        for (i, &v) in values.iter().enumerate() {
            assert!((p.density_values()[i] - v / norm).abs() < 1e-9);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let p = build_tilted(&Transform::exp_tilt(3.0), 0.5, M).unwrap();
        for q in [0.01, 0.25, 0.5, 0.75, 0.99] {
            let u = p.quantile(q);
            assert!((p.cdf_at(u) - q).abs() < 1e-9, "quantile roundtrip at {q}");
        }
    }
}
