//! Location-scale distributions (normal, Laplace) with reparameterised
//! sampling, log-densities and KL divergences, both as plain values and as
//! tape expressions.

use std::f64::consts::LN_2;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tape::{softplus, Tape, Var};
use crate::error::{shape_err, Error, Result};

pub const SCALE_FLOOR: f64 = 1e-4;
pub const SCALE_CEIL: f64 = 1e2;

/// `½·ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Normal,
    Laplace,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::Laplace => "laplace",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Family::Normal),
            "laplace" => Ok(Family::Laplace),
            other => Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }

    /// Draw base noise. Normal: `N(0,1)`; Laplace: `U(−½, ½)` for the inverse CDF.
    pub fn base_noise<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Family::Normal => StandardNormal.sample(rng),
            Family::Laplace => loop {
                let u: f64 = rng.random::<f64>() - 0.5;
                // u = -0.5 maps to an infinite sample.
                if u > -0.5 {
                    break u;
                }
            },
        }
    }

    /// Median of the base distribution; maps to the location.
    pub fn median_noise(self) -> f64 {
        0.0
    }

    /// Standardised sample `z` such that `x = μ + b·z`.
    pub fn standardize_noise(self, noise: f64) -> f64 {
        match self {
            Family::Normal => noise,
            Family::Laplace => -noise.signum() * (1.0 - 2.0 * noise.abs()).ln() * nonzero(noise),
        }
    }

    /// Log-density of one coordinate.
    pub fn log_density(self, x: f64, loc: f64, scale: f64) -> f64 {
        let z = (x - loc) / scale;
        match self {
            Family::Normal => -0.5 * z * z - scale.ln() - HALF_LN_2PI,
            Family::Laplace => -z.abs() - scale.ln() - LN_2,
        }
    }
}

fn nonzero(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        1.0
    }
}

/// Map an unconstrained head output to a scale: `min(softplus(raw) + 1e-4, 1e2)`.
pub fn scale_from_raw(raw: f64) -> f64 {
    (softplus(raw) + SCALE_FLOOR).min(SCALE_CEIL)
}

/// Inverse of [`scale_from_raw`] on `(1e-4, 1e2)`.
pub fn raw_for_scale(scale: f64) -> f64 {
    let s = scale - SCALE_FLOOR;
    // softplus⁻¹(s) = ln(eˢ − 1) = s + ln(1 − e^{−s})
    s + (-(-s).exp()).ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocScaleDist {
    family: Family,
    loc: Vec<f64>,
    scale: Vec<f64>,
}

impl LocScaleDist {
    pub fn new(family: Family, loc: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if loc.len() != scale.len() {
            return Err(shape_err("LocScaleDist", loc.len(), scale.len()));
        }
        if let Some(&bad) = scale.iter().find(|&&b| !(b > 0.0)) {
            return Err(Error::NonPositiveScale(bad));
        }
        Ok(Self { family, loc, scale })
    }

    pub fn standard(family: Family, dim: usize) -> Self {
        Self {
            family,
            loc: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn loc(&self) -> &[f64] {
        &self.loc
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn dim(&self) -> usize {
        self.loc.len()
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(shape_err("dist_log_prob", self.dim(), x.len()));
        }
        Ok(x.iter()
            .zip(&self.loc)
            .zip(&self.scale)
            .map(|((&x, &m), &b)| self.family.log_density(x, m, b))
            .sum())
    }

    /// `μ + b·z(noise)`; `∂/∂μ = 1` per coordinate.
    pub fn rsample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.dim() {
            return Err(shape_err("dist_rsample", self.dim(), noise.len()));
        }
        Ok(noise
            .iter()
            .zip(&self.loc)
            .zip(&self.scale)
            .map(|((&u, &m), &b)| m + b * self.family.standardize_noise(u))
            .collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let noise: Vec<f64> = (0..self.dim()).map(|_| self.family.base_noise(rng)).collect();
        self.rsample(&noise).expect("noise has matching dimension")
    }
}

/// Closed-form `KL(q‖p)` for matching families.
pub fn kl_divergence(q: &LocScaleDist, p: &LocScaleDist) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(shape_err("kl_divergence", q.dim(), p.dim()));
    }
    if q.family != p.family {
        return Err(Error::FamilyMismatch(q.family.name(), p.family.name()));
    }
    let mut kl = 0.0;
    for i in 0..q.dim() {
        let (m1, b1, m2, b2) = (q.loc[i], q.scale[i], p.loc[i], p.scale[i]);
        kl += match q.family {
            Family::Normal => {
                (b2 / b1).ln() + (b1 * b1 + (m1 - m2).powi(2)) / (2.0 * b2 * b2) - 0.5
            }
            Family::Laplace => {
                let d = (m1 - m2).abs();
                (b2 / b1).ln() + b1 / b2 * (-d / b1).exp() + d / b2 - 1.0
            }
        };
    }
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte-Carlo `E_q[log q − log p]` with its standard error.
pub fn kl_divergence_mc<R: Rng + ?Sized>(
    q: &LocScaleDist,
    p: &LocScaleDist,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if q.dim() != p.dim() {
        return Err(shape_err("kl_divergence_mc", q.dim(), p.dim()));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("Monte-Carlo KL needs at least 2 samples".into()));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let x = q.sample(rng);
        let d = q.log_prob(&x)? - p.log_prob(&x)?;
        sum += d;
        sum_sq += d * d;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        samples,
    })
}

/// Closed form when the families agree; otherwise a Monte-Carlo estimate
/// with the declared budget. A mismatch without budget is rejected.
pub fn kl_divergence_or_mc<R: Rng + ?Sized>(
    q: &LocScaleDist,
    p: &LocScaleDist,
    mc_budget: Option<(usize, &mut R)>,
) -> Result<f64> {
    if q.family == p.family {
        return kl_divergence(q, p);
    }
    match mc_budget {
        Some((samples, rng)) => Ok(kl_divergence_mc(q, p, samples, rng)?.mean),
        None => Err(Error::FamilyMismatch(q.family.name(), p.family.name())),
    }
}

/// Tape version of [`scale_from_raw`].
pub fn scale_on_tape(tape: &mut Tape, raw: Var) -> Var {
    let sp = tape.softplus(raw);
    let floored = tape.shift(sp, SCALE_FLOOR);
    tape.min_const(floored, SCALE_CEIL)
}

/// Per-row log density `B×1` of `x` under the batch of distributions.
pub fn log_prob_on_tape(
    tape: &mut Tape,
    family: Family,
    loc: Var,
    scale: Var,
    x: Var,
) -> Result<Var> {
    let diff = tape.sub(x, loc)?;
    let z = tape.div(diff, scale)?;
    let log_b = tape.ln(scale);
    let core = match family {
        Family::Normal => {
            let sq = tape.square(z);
            tape.scale(sq, -0.5)
        }
        Family::Laplace => {
            let a = tape.abs(z);
            tape.neg(a)
        }
    };
    let per_dim = tape.sub(core, log_b)?;
    let constant = match family {
        Family::Normal => HALF_LN_2PI,
        Family::Laplace => LN_2,
    };
    let per_dim = tape.shift(per_dim, -constant);
    Ok(tape.row_sum(per_dim))
}

/// Reparameterised sample `μ + b·z` with standardised noise `z` (constant).
pub fn rsample_on_tape(
    tape: &mut Tape,
    family: Family,
    loc: Var,
    scale: Var,
    noise: &Array2<f64>,
) -> Result<Var> {
    let z = noise.mapv(|u| family.standardize_noise(u));
    let spread = tape.mul_const(scale, z)?;
    tape.add(loc, spread)
}

/// Per-row `KL(family(μ, b) ‖ family(0, 1))`, `B×1`.
pub fn kl_to_standard_on_tape(tape: &mut Tape, family: Family, loc: Var, scale: Var) -> Result<Var> {
    let log_b = tape.ln(scale);
    let per_dim = match family {
        Family::Normal => {
            // ½(μ² + b² − 1 − 2 ln b)
            let m2 = tape.square(loc);
            let b2 = tape.square(scale);
            let s = tape.add(m2, b2)?;
            let two_log = tape.scale(log_b, 2.0);
            let s = tape.sub(s, two_log)?;
            let s = tape.shift(s, -1.0);
            tape.scale(s, 0.5)
        }
        Family::Laplace => {
            // −ln b + b·e^{−|μ|/b} + |μ| − 1
            let abs_m = tape.abs(loc);
            let ratio = tape.div(abs_m, scale)?;
            let neg_ratio = tape.neg(ratio);
            let e = tape.exp(neg_ratio);
            let be = tape.mul(scale, e)?;
            let s = tape.add(be, abs_m)?;
            let s = tape.sub(s, log_b)?;
            tape.shift(s, -1.0)
        }
    };
    Ok(tape.row_sum(per_dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_density_at_location() {
        let n = LocScaleDist::standard(Family::Normal, 1);
        let l = LocScaleDist::standard(Family::Laplace, 1);
        assert!((n.log_prob(&[0.0]).unwrap() + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!((l.log_prob(&[0.0]).unwrap() + LN_2).abs() < 1e-15);
    }

    #[test]
    fn shift_invariance() {
        for fam in [Family::Normal, Family::Laplace] {
            let d = LocScaleDist::new(fam, vec![1.5, -2.0], vec![0.5, 3.0]).unwrap();
            let z = LocScaleDist::new(fam, vec![0.0, 0.0], vec![0.5, 3.0]).unwrap();
            let delta = [0.7, -1.1];
            let shifted = [1.5 + 0.7, -2.0 - 1.1];
            let a = d.log_prob(&shifted).unwrap();
            let b = z.log_prob(&delta).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn non_positive_scale_rejected() {
        assert!(matches!(
            LocScaleDist::new(Family::Normal, vec![0.0], vec![0.0]),
            Err(Error::NonPositiveScale(_))
        ));
        assert!(LocScaleDist::new(Family::Laplace, vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn median_noise_maps_to_location() {
        for fam in [Family::Normal, Family::Laplace] {
            let d = LocScaleDist::new(fam, vec![2.0, -1.0], vec![0.3, 4.0]).unwrap();
            let m = fam.median_noise();
            assert_eq!(d.rsample(&[m, m]).unwrap(), vec![2.0, -1.0]);
        }
    }

    #[test]
    fn kl_closed_forms() {
        let q = LocScaleDist::new(Family::Normal, vec![1.0], vec![1.0]).unwrap();
        let p = LocScaleDist::standard(Family::Normal, 1);
        assert!((kl_divergence(&q, &p).unwrap() - 0.5).abs() < 1e-15);
        let q = LocScaleDist::new(Family::Laplace, vec![0.0], vec![2.0]).unwrap();
        let p = LocScaleDist::standard(Family::Laplace, 1);
        let expected = -LN_2 + 2.0 - 1.0;
        assert!((kl_divergence(&q, &p).unwrap() - expected).abs() < 1e-15);
        assert_eq!(kl_divergence(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn family_mismatch_needs_budget() {
        let q = LocScaleDist::standard(Family::Normal, 2);
        let p = LocScaleDist::standard(Family::Laplace, 2);
        assert!(matches!(
            kl_divergence(&q, &p),
            Err(Error::FamilyMismatch(..))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(kl_divergence_or_mc::<ChaCha8Rng>(&q, &p, None).is_err());
        let est = kl_divergence_or_mc(&q, &p, Some((20_000, &mut rng))).unwrap();
        assert!(est > 0.0);
    }

    #[test]
    fn raw_scale_round_trip() {
        for b in [1e-3, 0.1, 1.0, 7.5, 50.0] {
            assert!((scale_from_raw(raw_for_scale(b)) - b).abs() < 1e-12 * b.max(1.0));
        }
        assert_eq!(scale_from_raw(1e6), SCALE_CEIL);
        assert!(scale_from_raw(-1e6) >= SCALE_FLOOR);
    }

    #[test]
    fn tape_log_prob_and_kl_match_plain() {
        for fam in [Family::Normal, Family::Laplace] {
            let mut t = Tape::new();
            let loc = t.param(ndarray::array![[0.3, -1.2]]);
            let scale = t.param(ndarray::array![[0.7, 2.1]]);
            let x = t.constant(ndarray::array![[1.0, 0.5]]);
            let lp = log_prob_on_tape(&mut t, fam, loc, scale, x).unwrap();
            let kl = kl_to_standard_on_tape(&mut t, fam, loc, scale).unwrap();
            let d = LocScaleDist::new(fam, vec![0.3, -1.2], vec![0.7, 2.1]).unwrap();
            assert!((t.value(lp)[[0, 0]] - d.log_prob(&[1.0, 0.5]).unwrap()).abs() < 1e-12);
            let exact = kl_divergence(&d, &LocScaleDist::standard(fam, 2)).unwrap();
            assert!((t.value(kl)[[0, 0]] - exact).abs() < 1e-12);
        }
    }
}
