//! Link nonlinearities applied to transmitted states, their sector bounds,
//! and randomized checks of the odd / monotone / sector-bounded properties.

use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlinearError {
    #[error("log quantizer level rho = {0} gives a non-positive lower sector slope (need 0 < rho < 2)")]
    LogLevel(f64),
    #[error("quantization level must be positive, got {0}")]
    Level(f64),
    #[error("saturation limit must be positive, got {0}")]
    Limit(f64),
    #[error("empty or invalid domain [{0}, {1}]")]
    EmptyDomain(f64, f64),
    #[error("composite nonlinearity needs at least one stage")]
    EmptyComposite,
}

/// Odd, non-decreasing map applied componentwise to whatever an agent sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinkNonlinearity {
    Identity,
    LogQuantizer { rho: f64 },
    UniformQuantizer { rho: f64 },
    Saturation { limit: f64 },
    /// Stages applied in order, first element innermost.
    Composite { stages: Vec<LinkNonlinearity> },
}

impl Default for LinkNonlinearity {
    fn default() -> Self {
        Self::Identity
    }
}

impl fmt::Display for LinkNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::LogQuantizer { rho } => write!(f, "log_quantizer(rho={rho})"),
            Self::UniformQuantizer { rho } => write!(f, "uniform_quantizer(rho={rho})"),
            Self::Saturation { limit } => write!(f, "saturation(limit={limit})"),
            Self::Composite { stages } => {
                write!(f, "composite[")?;
                for (i, s) in stages.iter().enumerate() {
                    if i > 0 {
                        write!(f, " -> ")?;
                    }
                    write!(f, "{s}")?;
                }
                write!(f, "]")
            }
        }
    }
}

impl LinkNonlinearity {
    pub fn validate(&self) -> Result<(), NonlinearError> {
        match *self {
            Self::Identity => Ok(()),
            Self::LogQuantizer { rho } | Self::UniformQuantizer { rho } => {
                if rho > 0.0 && rho.is_finite() {
                    Ok(())
                } else {
                    Err(NonlinearError::Level(rho))
                }
            }
            Self::Saturation { limit } => {
                if limit > 0.0 && limit.is_finite() {
                    Ok(())
                } else {
                    Err(NonlinearError::Limit(limit))
                }
            }
            Self::Composite { ref stages } => {
                if stages.is_empty() {
                    return Err(NonlinearError::EmptyComposite);
                }
                stages.iter().try_for_each(|s| s.validate())
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            Self::Identity => true,
            Self::Composite { stages } => stages.iter().all(|s| s.is_identity()),
            _ => false,
        }
    }

    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            Self::Identity => z,
            Self::LogQuantizer { rho } => {
                // log|0| is undefined; 0 maps to 0 to keep the map odd.
                if z == 0.0 {
                    0.0
                } else {
                    z.signum() * (rho * (z.abs().ln() / rho).round()).exp()
                }
            }
            Self::UniformQuantizer { rho } => rho * (z / rho).round(),
            Self::Saturation { limit } => z.clamp(-limit, limit),
            Self::Composite { ref stages } => stages.iter().fold(z, |acc, s| s.apply(acc)),
        }
    }

    pub fn apply_vec(&self, z: &DVector<f64>) -> DVector<f64> {
        if self.is_identity() {
            return z.clone();
        }
        z.map(|v| self.apply(v))
    }
}

/// Which sector bounds to report for the logarithmic quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SectorMode {
    /// Linearized bounds `(1 - rho/2, 1 + rho/2)`.
    #[default]
    Linearized,
    /// Exact bounds `(exp(-rho/2), exp(rho/2))`.
    Tight,
}

/// Closed interval of states over which sector bounds are claimed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, NonlinearError> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(NonlinearError::EmptyDomain(lo, hi));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(radius: f64) -> Result<Self, NonlinearError> {
        Self::new(-radius, radius)
    }

    pub fn unbounded() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectorBounds {
    pub kappa: f64,
    pub upper: f64,
    pub domain: Interval,
    pub strongly_sign_preserving: bool,
    pub mode: SectorMode,
}

impl SectorBounds {
    pub fn ratio(&self) -> f64 {
        self.upper / self.kappa
    }

    /// Bounds valid for two maps used side by side (smaller lower slope,
    /// larger upper slope).
    pub fn combine(&self, other: &SectorBounds) -> SectorBounds {
        let kappa = self.kappa.min(other.kappa);
        SectorBounds {
            kappa,
            upper: self.upper.max(other.upper),
            domain: Interval {
                lo: self.domain.lo.max(other.domain.lo),
                hi: self.domain.hi.min(other.domain.hi),
            },
            strongly_sign_preserving: kappa > 0.0,
            mode: self.mode,
        }
    }
}

impl fmt::Display for SectorBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kappa: {}", self.kappa)?;
        writeln!(f, "upper: {}", self.upper)?;
        writeln!(f, "ratio: {}", self.ratio())?;
        writeln!(f, "domain: [{}, {}]", self.domain.lo, self.domain.hi)?;
        writeln!(f, "strongly_sign_preserving: {}", self.strongly_sign_preserving)?;
        write!(f, "mode: {:?}", self.mode)
    }
}

pub fn sector_bounds(
    g: &LinkNonlinearity,
    domain: Interval,
    mode: SectorMode,
) -> Result<SectorBounds, NonlinearError> {
    if domain.lo.is_nan() || domain.hi.is_nan() || domain.lo >= domain.hi {
        return Err(NonlinearError::EmptyDomain(domain.lo, domain.hi));
    }
    g.validate()?;
    let (kappa, upper) = match *g {
        LinkNonlinearity::Identity => (1.0, 1.0),
        LinkNonlinearity::LogQuantizer { rho } => {
            if rho >= 2.0 {
                return Err(NonlinearError::LogLevel(rho));
            }
            match mode {
                SectorMode::Linearized => (1.0 - rho / 2.0, 1.0 + rho / 2.0),
                SectorMode::Tight => ((-rho / 2.0).exp(), (rho / 2.0).exp()),
            }
        }
        // g(z)/z vanishes on the dead zone and peaks at 2 for z = rho/2.
        LinkNonlinearity::UniformQuantizer { .. } => (0.0, 2.0),
        LinkNonlinearity::Saturation { limit } => {
            let d = domain.max_abs();
            if d > limit {
                (limit / d, 1.0)
            } else {
                (1.0, 1.0)
            }
        }
        LinkNonlinearity::Composite { ref stages } => {
            // g2(g1(z))/z = [g2(u)/u][u/z]; the inner image grows by at most `upper`.
            let mut kappa = 1.0;
            let mut upper = 1.0;
            let mut reach = domain.max_abs();
            for s in stages {
                let inner = if reach.is_finite() {
                    Interval::symmetric(reach)?
                } else {
                    Interval::unbounded()
                };
                let b = sector_bounds(s, inner, mode)?;
                kappa *= b.kappa;
                upper *= b.upper;
                reach *= b.upper;
            }
            (kappa, upper)
        }
    };
    Ok(SectorBounds {
        kappa,
        upper,
        domain,
        strongly_sign_preserving: kappa > 0.0,
        mode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub passed: bool,
    pub worst_violation: f64,
    pub worst_z: Option<f64>,
}

impl PropertyCheck {
    fn new() -> Self {
        Self {
            passed: true,
            worst_violation: 0.0,
            worst_z: None,
        }
    }

    fn record(&mut self, violation: f64, z: f64) {
        if violation > self.worst_violation {
            self.worst_violation = violation;
            self.worst_z = Some(z);
            self.passed = false;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectorPropertyReport {
    pub samples: usize,
    pub odd: PropertyCheck,
    pub monotone: PropertyCheck,
    pub sector: PropertyCheck,
}

impl SectorPropertyReport {
    pub fn all_passed(&self) -> bool {
        self.odd.passed && self.monotone.passed && self.sector.passed
    }
}

impl fmt::Display for SectorPropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples: {}", self.samples)?;
        for (name, c) in [("odd", &self.odd), ("monotone", &self.monotone), ("sector", &self.sector)] {
            write!(f, "{name}: {}", if c.passed { "pass" } else { "fail" })?;
            if let Some(z) = c.worst_z {
                write!(f, " (worst z = {z:e}, violation = {:e})", c.worst_violation)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

const VERIFY_REL_TOL: f64 = 1e-12;

/// Draws a nonzero sample magnitude spread log-uniformly over the domain
/// (or over 1e-6..1e6 when the domain is unbounded), with a random sign.
fn sample_nonzero(rng: &mut ChaCha8Rng, domain: &Interval) -> f64 {
    let (lo_mag, hi_mag) = if domain.is_bounded() {
        (domain.max_abs() * 1e-9, domain.max_abs())
    } else {
        (1e-6, 1e6)
    };
    let mag = (rng.gen_range(lo_mag.ln()..=hi_mag.ln())).exp();
    let z = if rng.gen_bool(0.5) { mag } else { -mag };
    z.clamp(domain.lo, domain.hi)
}

/// Randomized check of oddness, monotonicity and sector containment.
/// Failures are reported with the worst offending sample.
pub fn verify_sector_properties(
    g: &LinkNonlinearity,
    bounds: &SectorBounds,
    samples: usize,
    seed: u64,
) -> SectorPropertyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut zs: Vec<f64> = (0..samples.max(1))
        .map(|_| sample_nonzero(&mut rng, &bounds.domain))
        .filter(|z| *z != 0.0)
        .collect();

    let mut odd = PropertyCheck::new();
    let mut sector = PropertyCheck::new();
    if g.apply(0.0) != 0.0 {
        odd.record(g.apply(0.0).abs(), 0.0);
    }
    for &z in &zs {
        let gz = g.apply(z);
        let asym = (g.apply(-z) + gz).abs();
        if asym > VERIFY_REL_TOL * gz.abs().max(1.0) {
            odd.record(asym, z);
        }
        let ratio = gz / z;
        let below = bounds.kappa - ratio;
        let above = ratio - bounds.upper;
        let slack = VERIFY_REL_TOL * bounds.upper.max(1.0);
        if below > slack {
            sector.record(below, z);
        }
        if above > slack {
            sector.record(above, z);
        }
    }

    // Step discontinuities are fine as long as no pair goes backwards.
    zs.sort_by(f64::total_cmp);
    let mut monotone = PropertyCheck::new();
    for w in zs.windows(2) {
        let drop = g.apply(w[0]) - g.apply(w[1]);
        if drop > 0.0 {
            monotone.record(drop, w[1]);
        }
    }
    SectorPropertyReport {
        samples: zs.len(),
        odd,
        monotone,
        sector,
    }
}

/// Instantaneous per-component link gains `g(z)/z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGainSnapshot {
    pub xi: DVector<f64>,
}

impl LinkGainSnapshot {
    pub fn uniform(len: usize, value: f64) -> Self {
        Self {
            xi: DVector::from_element(len, value),
        }
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

/// Gains for the current state; exact-zero components get the sector
/// midpoint `(kappa + upper) / 2`.
pub fn gain_snapshot(
    g: &LinkNonlinearity,
    bounds: &SectorBounds,
    state: &DVector<f64>,
) -> LinkGainSnapshot {
    let mid = 0.5 * (bounds.kappa + bounds.upper);
    LinkGainSnapshot {
        xi: state.map(|z| if z == 0.0 { mid } else { g.apply(z) / z }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    const LOG1: LinkNonlinearity = LinkNonlinearity::LogQuantizer { rho: 1.0 };
    const UNI1: LinkNonlinearity = LinkNonlinearity::UniformQuantizer { rho: 1.0 };

    #[test]
    fn log_quantizer_values() {
        assert_eq!(LOG1.apply(1.0), 1.0);
        assert_eq!(LOG1.apply(-1.0), -1.0);
        assert_eq!(LOG1.apply(0.0), 0.0);
        // ln 2 = 0.693 rounds to 1.
        assert!((LOG1.apply(2.0) - E).abs() < 1e-15);
    }

    #[test]
    fn uniform_quantizer_dead_zone() {
        assert_eq!(UNI1.apply(0.2), 0.0);
        assert_eq!(UNI1.apply(-0.2), 0.0);
        assert_eq!(UNI1.apply(1.4), 1.0);
    }

    #[test]
    fn saturation_and_identity() {
        let sat = LinkNonlinearity::Saturation { limit: 2.0 };
        assert_eq!(sat.apply(5.0), 2.0);
        assert_eq!(sat.apply(-5.0), -2.0);
        assert_eq!(sat.apply(1.5), 1.5);
        assert_eq!(LinkNonlinearity::Identity.apply(-3.25), -3.25);
    }

    #[test]
    fn log_quantizer_linearized_ratios() {
        let dom = Interval::unbounded();
        let b = sector_bounds(&LinkNonlinearity::LogQuantizer { rho: 1.0 }, dom, SectorMode::Linearized).unwrap();
        assert_eq!((b.kappa, b.upper), (0.5, 1.5));
        assert_eq!(b.ratio(), 3.0);
        let b = sector_bounds(&LinkNonlinearity::LogQuantizer { rho: 0.25 }, dom, SectorMode::Linearized).unwrap();
        assert_eq!((b.kappa, b.upper), (0.875, 1.125));
        assert!((b.ratio() - 9.0 / 7.0).abs() < 1e-15);
        let b = sector_bounds(&LinkNonlinearity::LogQuantizer { rho: 1.6 }, dom, SectorMode::Linearized).unwrap();
        assert!((b.kappa - 0.2).abs() < 1e-15 && (b.upper - 1.8).abs() < 1e-15);
        assert!((b.ratio() - 9.0).abs() < 1e-12);
        let b = sector_bounds(&LinkNonlinearity::Identity, dom, SectorMode::Linearized).unwrap();
        assert_eq!((b.kappa, b.upper), (1.0, 1.0));
    }

    #[test]
    fn sector_bound_errors() {
        let dom = Interval::unbounded();
        assert_eq!(
            sector_bounds(&LinkNonlinearity::LogQuantizer { rho: 2.0 }, dom, SectorMode::Linearized),
            Err(NonlinearError::LogLevel(2.0))
        );
        assert!(Interval::new(1.0, 1.0).is_err());
        let empty = Interval { lo: 2.0, hi: -2.0 };
        assert!(sector_bounds(&LinkNonlinearity::Identity, empty, SectorMode::Linearized).is_err());
    }

    #[test]
    fn uniform_and_saturation_bounds() {
        let b = sector_bounds(&UNI1, Interval::unbounded(), SectorMode::Linearized).unwrap();
        assert_eq!(b.kappa, 0.0);
        assert!(!b.strongly_sign_preserving);
        let sat = LinkNonlinearity::Saturation { limit: 2.0 };
        let b = sector_bounds(&sat, Interval::symmetric(8.0).unwrap(), SectorMode::Linearized).unwrap();
        assert_eq!((b.kappa, b.upper), (0.25, 1.0));
        let b = sector_bounds(&sat, Interval::symmetric(1.0).unwrap(), SectorMode::Linearized).unwrap();
        assert_eq!((b.kappa, b.upper), (1.0, 1.0));
    }

    #[test]
    fn verify_identity_passes() {
        let b = sector_bounds(&LinkNonlinearity::Identity, Interval::unbounded(), SectorMode::Linearized).unwrap();
        assert!(verify_sector_properties(&LinkNonlinearity::Identity, &b, 2000, 1).all_passed());
    }

    #[test]
    fn verify_catches_dead_zone() {
        let mut claimed = sector_bounds(&UNI1, Interval::symmetric(10.0).unwrap(), SectorMode::Linearized).unwrap();
        claimed.kappa = 0.5;
        let r = verify_sector_properties(&UNI1, &claimed, 5000, 3);
        assert!(r.odd.passed && r.monotone.passed);
        assert!(!r.sector.passed);
        let z = r.sector.worst_z.unwrap();
        assert!(z.abs() < 0.5, "worst z {z}");
    }

    #[test]
    fn log_quantizer_tight_bounds_hold_but_linearized_upper_does_not() {
        let dom = Interval::symmetric(1e3).unwrap();
        let tight = sector_bounds(&LOG1, dom, SectorMode::Tight).unwrap();
        let r = verify_sector_properties(&LOG1, &tight, 20_000, 11);
        assert!(r.all_passed(), "{r}");

        // Just above a bin edge, g(z)/z = e^{1/2} > 1 + 1/2.
        let lin = sector_bounds(&LOG1, dom, SectorMode::Linearized).unwrap();
        let r = verify_sector_properties(&LOG1, &lin, 20_000, 11);
        assert!(r.odd.passed && r.monotone.passed);
        assert!(!r.sector.passed);
        let z = r.sector.worst_z.unwrap();
        assert!(LOG1.apply(z) / z > lin.upper);
    }

    #[test]
    fn gain_snapshot_examples() {
        let b = sector_bounds(&LOG1, Interval::unbounded(), SectorMode::Linearized).unwrap();
        let s = gain_snapshot(&LOG1, &b, &DVector::from_vec(vec![1.0, 2.0, 0.0]));
        assert_eq!(s.xi[0], 1.0);
        assert!((s.xi[1] - E / 2.0).abs() < 1e-15);
        assert_eq!(s.xi[2], 1.0);
        let id = LinkNonlinearity::Identity;
        let b = sector_bounds(&id, Interval::unbounded(), SectorMode::Linearized).unwrap();
        let s = gain_snapshot(&id, &b, &DVector::from_vec(vec![-4.0, 0.5]));
        assert_eq!(s.xi, DVector::from_vec(vec![1.0, 1.0]));
    }

    fn shipped_kinds() -> Vec<LinkNonlinearity> {
        vec![
            LinkNonlinearity::Identity,
            LinkNonlinearity::LogQuantizer { rho: 0.7 },
            LinkNonlinearity::UniformQuantizer { rho: 0.3 },
            LinkNonlinearity::Saturation { limit: 1.5 },
            LinkNonlinearity::Composite {
                stages: vec![
                    LinkNonlinearity::LogQuantizer { rho: 0.5 },
                    LinkNonlinearity::Saturation { limit: 3.0 },
                ],
            },
        ]
    }

    proptest! {
        #[test]
        fn log_quantizer_tight_sector_over_twelve_decades(
            rho in 0.01f64..1.99,
            exp in -6.0f64..6.0,
            neg in any::<bool>(),
        ) {
            let z = if neg { -(10f64.powf(exp)) } else { 10f64.powf(exp) };
            let g = LinkNonlinearity::LogQuantizer { rho };
            let r = g.apply(z) / z;
            let eps = 1e-12;
            prop_assert!(r >= (-rho / 2.0).exp() * (1.0 - eps));
            prop_assert!(r <= (rho / 2.0).exp() * (1.0 + eps));
            // The linearized lower slope is always respected.
            prop_assert!(r >= 1.0 - rho / 2.0);
        }

        #[test]
        fn shipped_kinds_are_odd_and_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for g in shipped_kinds() {
                prop_assert_eq!(g.apply(-a), -g.apply(a));
                prop_assert!(g.apply(lo) <= g.apply(hi), "{} not monotone on [{}, {}]", g, lo, hi);
            }
        }

        #[test]
        fn gains_stay_in_tight_sector(vals in proptest::collection::vec(-1e4f64..1e4, 1..20)) {
            let g = LinkNonlinearity::LogQuantizer { rho: 1.0 };
            let b = sector_bounds(&g, Interval::unbounded(), SectorMode::Tight).unwrap();
            let s = gain_snapshot(&g, &b, &DVector::from_vec(vals));
            for xi in s.xi.iter() {
                prop_assert!(*xi >= b.kappa * (1.0 - 1e-12) && *xi <= b.upper * (1.0 + 1e-12));
            }
        }
    }
}
