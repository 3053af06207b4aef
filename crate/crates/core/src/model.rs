//! Fluid-fluid model definition, validation and sign partitions.
//!
//! A model couples a finite phase chain with generator `T`, a first fluid `X`
//! moving at rate `c_i` in phase `i`, and a second fluid `Y` moving at the
//! piecewise-constant rate `r_i(x)`. Both fluids are regulated at zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("phase labels must be nonempty and unique")]
    BadPhaseLabels,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("generator row {row} sums to {sum:e}")]
    NonConservativeGenerator { row: usize, sum: f64 },
    #[error("generator entry ({row}, {col}) is negative off the diagonal")]
    NegativeOffDiagonal { row: usize, col: usize },
    #[error("generator is reducible: phase {from} cannot reach phase {to}")]
    ReducibleGenerator { from: usize, to: usize },
    #[error("first-fluid rate of phase {phase} is zero")]
    ZeroFirstFluidRate { phase: usize },
    #[error("no phase has a negative first-fluid rate")]
    NoNegativeFirstFluidRate,
    #[error("second-fluid rate is nowhere negative, so Y never returns to zero")]
    EmptyNegativeClass,
    #[error("rate breakpoint {breakpoint} lies at or beyond the truncation level {truncation}")]
    BreakpointBeyondTruncation { breakpoint: f64, truncation: f64 },
    #[error("truncation level must be positive")]
    NonPositiveTruncation,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("rate pieces of phase {phase} must start at 0 and increase strictly")]
    BadRatePieces { phase: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::BadPhaseLabels => "BadPhaseLabels",
            ModelError::DimensionMismatch(_) => "DimensionMismatch",
            ModelError::NonConservativeGenerator { .. } => "NonConservativeGenerator",
            ModelError::NegativeOffDiagonal { .. } => "NegativeOffDiagonal",
            ModelError::ReducibleGenerator { .. } => "ReducibleGenerator",
            ModelError::ZeroFirstFluidRate { .. } => "ZeroFirstFluidRate",
            ModelError::NoNegativeFirstFluidRate => "NoNegativeFirstFluidRate",
            ModelError::EmptyNegativeClass => "EmptyNegativeClass",
            ModelError::BreakpointBeyondTruncation { .. } => "BreakpointBeyondTruncation",
            ModelError::NonPositiveTruncation => "NonPositiveTruncation",
            ModelError::NonFinite(_) => "NonFinite",
            ModelError::BadRatePieces { .. } => "BadRatePieces",
            ModelError::InvalidParameter(_) => "InvalidParameter",
            ModelError::Config(_) => "ConfigError",
        }
    }
}

/// Sign class of the second-fluid rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
    Zero,
}

impl Sign {
    pub const ALL: [Sign; 3] = [Sign::Plus, Sign::Minus, Sign::Zero];

    pub fn of<T: Scalar>(x: T) -> Sign {
        if x > T::zero() {
            Sign::Plus
        } else if x < T::zero() {
            Sign::Minus
        } else {
            Sign::Zero
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
            Sign::Zero => "0",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseSpace {
    labels: Vec<String>,
}

impl PhaseSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, ModelError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        if labels.is_empty() || sorted.len() != labels.len() {
            return Err(ModelError::BadPhaseLabels);
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// One constant piece `[start, next start)` of a rate field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePiece<T> {
    pub start: T,
    pub rate: T,
}

/// Piecewise-constant second-fluid rates, one list of pieces per phase.
///
/// `at_zero` optionally overrides the rate while `X` sits exactly at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RateField<T> {
    pieces: Vec<Vec<RatePiece<T>>>,
    at_zero: Option<Vec<T>>,
}

impl<T: Scalar> RateField<T> {
    pub fn new(pieces: Vec<Vec<RatePiece<T>>>, at_zero: Option<Vec<T>>) -> Result<Self, ModelError> {
        for (phase, list) in pieces.iter().enumerate() {
            let ok = !list.is_empty() && list[0].start == T::zero() && list.windows(2).all(|w| w[0].start < w[1].start);
            if !ok {
                return Err(ModelError::BadRatePieces { phase });
            }
        }
        if let Some(z) = &at_zero {
            if z.len() != pieces.len() {
                return Err(ModelError::DimensionMismatch("at-zero rates vs phases".into()));
            }
        }
        Ok(Self { pieces, at_zero })
    }

    pub fn phases(&self) -> usize {
        self.pieces.len()
    }

    pub fn pieces(&self, phase: usize) -> &[RatePiece<T>] {
        &self.pieces[phase]
    }

    pub fn at_zero(&self, phase: usize) -> Option<T> {
        self.at_zero.as_ref().map(|z| z[phase])
    }

    /// Rate on the piece containing `x`, ignoring any at-zero override.
    pub fn interior_rate(&self, phase: usize, x: T) -> T {
        let list = &self.pieces[phase];
        let idx = list.iter().rposition(|p| p.start <= x).unwrap_or(0);
        list[idx].rate
    }

    /// Rate seen by `Y` when `X = x`, honouring the at-zero override.
    pub fn rate(&self, phase: usize, x: T) -> T {
        match self.at_zero(phase) {
            Some(r) if x == T::zero() => r,
            _ => self.interior_rate(phase, x),
        }
    }

    /// Sorted distinct breakpoints, excluding zero.
    pub fn breakpoints(&self) -> Vec<T> {
        let mut out: Vec<T> = self.pieces.iter().flat_map(|l| l.iter().skip(1).map(|p| p.start)).collect();
        out.sort_by(|a, b| a.partial_cmp(b).expect("ordered breakpoints"));
        out.dedup();
        out
    }

    /// Constant pieces of phase `phase` clipped to `[a, b]`, as `(start, end, rate)`.
    pub fn clipped(&self, phase: usize, a: T, b: T) -> Vec<(T, T, T)> {
        let list = &self.pieces[phase];
        let mut out = Vec::new();
        for (n, p) in list.iter().enumerate() {
            let s = if p.start > a { p.start } else { a };
            let e = match list.get(n + 1) {
                Some(next) if next.start < b => next.start,
                _ => b,
            };
            if s < e {
                out.push((s, e, p.rate));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<T> {
    pub phases: PhaseSpace,
    pub generator: DMatrix<T>,
    pub c: Vec<T>,
    pub rates: RateField<T>,
    pub truncation: T,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(
        phases: PhaseSpace,
        generator: DMatrix<T>,
        c: Vec<T>,
        rates: RateField<T>,
        truncation: T,
    ) -> Result<Self, ModelError> {
        let s = phases.len();
        if generator.nrows() != s || generator.ncols() != s {
            return Err(ModelError::DimensionMismatch(format!(
                "generator is {}x{}, expected {s}x{s}",
                generator.nrows(),
                generator.ncols()
            )));
        }
        if c.len() != s || rates.phases() != s {
            return Err(ModelError::DimensionMismatch("rates vs phases".into()));
        }
        Ok(Self { phases, generator, c, rates, truncation })
    }

    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    /// Converts every number to `f64`.
    pub fn to_f64(&self) -> ModelSpec<f64> {
        let conv = |x: T| x.lossy_f64();
        let pieces = (0..self.n_phases())
            .map(|i| {
                self.rates.pieces(i).iter().map(|p| RatePiece { start: conv(p.start), rate: conv(p.rate) }).collect()
            })
            .collect();
        let at_zero = self.rates.at_zero.as_ref().map(|z| z.iter().map(|&x| conv(x)).collect());
        ModelSpec {
            phases: self.phases.clone(),
            generator: self.generator.map(conv),
            c: self.c.iter().map(|&x| conv(x)).collect(),
            rates: RateField { pieces, at_zero },
            truncation: conv(self.truncation),
        }
    }
}

/// One named check and its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub error: Option<ModelError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.checks.iter().all(|c| c.error.is_none())
    }

    pub fn failures(&self) -> impl Iterator<Item = &ModelError> {
        self.checks.iter().filter_map(|c| c.error.as_ref())
    }

    pub fn into_result(self) -> Result<(), ModelError> {
        match self.checks.into_iter().find_map(|c| c.error) {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn first_err<I: IntoIterator<Item = Option<ModelError>>>(it: I) -> Option<ModelError> {
    it.into_iter().flatten().next()
}

pub fn validate_model<T: Scalar>(spec: &ModelSpec<T>) -> ValidationReport {
    let s = spec.n_phases();
    let t = &spec.generator;
    let finite = |x: T| x.lossy_f64().is_finite();
    let mut checks = Vec::new();

    let nonfinite = if !t.iter().all(|&x| finite(x)) {
        Some(ModelError::NonFinite("generator"))
    } else if !spec.c.iter().all(|&x| finite(x)) {
        Some(ModelError::NonFinite("first-fluid rates"))
    } else if !(0..s).all(|i| spec.rates.pieces(i).iter().all(|p| finite(p.rate) && finite(p.start))) {
        Some(ModelError::NonFinite("second-fluid rates"))
    } else {
        None
    };
    checks.push(CheckOutcome { name: "finite", error: nonfinite });

    let off_diag = first_err((0..s).flat_map(|i| {
        (0..s).map(move |j| {
            (i != j && t[(i, j)] < T::zero()).then_some(ModelError::NegativeOffDiagonal { row: i, col: j })
        })
    }));
    checks.push(CheckOutcome { name: "off-diagonal nonnegative", error: off_diag });

    let rows = first_err((0..s).map(|i| {
        let sum = t.row(i).iter().fold(T::zero(), |acc, &x| acc + x);
        let scale = T::one() + t[(i, i)].magnitude();
        (sum.magnitude() > T::slack() * scale)
            .then(|| ModelError::NonConservativeGenerator { row: i, sum: sum.lossy_f64() })
    }));
    checks.push(CheckOutcome { name: "row sums zero", error: rows });

    checks.push(CheckOutcome { name: "irreducible", error: irreducibility(t) });

    let zero_c =
        first_err((0..s).map(|i| (spec.c[i] == T::zero()).then_some(ModelError::ZeroFirstFluidRate { phase: i })));
    checks.push(CheckOutcome { name: "first-fluid rates nonzero", error: zero_c });

    let neg_c = (!spec.c.iter().any(|&x| x < T::zero())).then_some(ModelError::NoNegativeFirstFluidRate);
    checks.push(CheckOutcome { name: "some first-fluid rate negative", error: neg_c });

    let trunc = (spec.truncation <= T::zero()).then_some(ModelError::NonPositiveTruncation);
    checks.push(CheckOutcome { name: "truncation positive", error: trunc });

    let beyond = spec.rates.breakpoints().into_iter().find(|&b| b >= spec.truncation).map(|b| {
        ModelError::BreakpointBeyondTruncation { breakpoint: b.lossy_f64(), truncation: spec.truncation.lossy_f64() }
    });
    let aligned = beyond.is_none();
    checks.push(CheckOutcome { name: "breakpoints inside truncation", error: beyond });

    let negative_class = if aligned && spec.truncation > T::zero() {
        let part = partition_rates(spec);
        part.classes(Sign::Minus).is_empty().then_some(ModelError::EmptyNegativeClass)
    } else {
        None
    };
    checks.push(CheckOutcome { name: "negative class nonempty", error: negative_class });

    ValidationReport { checks }
}

fn irreducibility<T: Scalar>(t: &DMatrix<T>) -> Option<ModelError> {
    let s = t.nrows();
    for from in 0..s {
        let mut seen = vec![false; s];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(i) = stack.pop() {
            for j in 0..s {
                if !seen[j] && i != j && t[(i, j)] > T::zero() {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if let Some(to) = seen.iter().position(|&v| !v) {
            return Some(ModelError::ReducibleGenerator { from, to });
        }
    }
    None
}

/// Interval `[start, end)` of constant sign; the last interval of a phase is closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignInterval<T> {
    pub start: T,
    pub end: T,
    pub sign: Sign,
}

/// Per-phase decomposition of `[0, truncation]` into sign regions of `r_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignPartition<T> {
    intervals: Vec<Vec<SignInterval<T>>>,
    at_zero: Vec<Option<Sign>>,
}

impl<T: Scalar> SignPartition<T> {
    pub fn intervals(&self, phase: usize) -> &[SignInterval<T>] {
        &self.intervals[phase]
    }

    /// Sign of the rate while `X` is exactly zero, when it differs in source from the interior.
    pub fn at_zero(&self, phase: usize) -> Option<Sign> {
        self.at_zero[phase]
    }

    pub fn sign_at(&self, phase: usize, x: T) -> Sign {
        if x == T::zero() {
            if let Some(s) = self.at_zero[phase] {
                return s;
            }
        }
        let list = &self.intervals[phase];
        list.iter().rev().find(|iv| iv.start <= x).unwrap_or(&list[0]).sign
    }

    /// Phases whose sign region `sign` is nonempty.
    pub fn classes(&self, sign: Sign) -> Vec<usize> {
        (0..self.intervals.len())
            .filter(|&i| self.intervals[i].iter().any(|iv| iv.sign == sign) || self.at_zero[i] == Some(sign))
            .collect()
    }

    pub fn phases(&self) -> usize {
        self.intervals.len()
    }
}

pub fn partition_rates<T: Scalar>(spec: &ModelSpec<T>) -> SignPartition<T> {
    let mut intervals = Vec::with_capacity(spec.n_phases());
    let mut at_zero = Vec::with_capacity(spec.n_phases());
    for i in 0..spec.n_phases() {
        let mut list: Vec<SignInterval<T>> = Vec::new();
        for (start, end, rate) in spec.rates.clipped(i, T::zero(), spec.truncation) {
            let sign = Sign::of(rate);
            match list.last_mut() {
                Some(last) if last.sign == sign => last.end = end,
                _ => list.push(SignInterval { start, end, sign }),
            }
        }
        intervals.push(list);
        at_zero.push(spec.rates.at_zero(i).map(Sign::of));
    }
    SignPartition { intervals, at_zero }
}

/// Parameters of the two-input bandwidth-sharing model.
///
/// Input `k` switches ON→OFF at rate `alpha_k` and OFF→ON at rate `beta_k`,
/// emits at `lambda_k` while ON and is served at `theta_k`; the two service
/// rates share the capacity `kappa`. Buffer 2 is served at `kappa` while
/// buffer 1 is empty and at `theta2` while buffer 1 is below `x_star`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthParams<T> {
    pub alpha1: T,
    pub beta1: T,
    pub lambda1: T,
    pub theta1: T,
    pub kappa: T,
    pub alpha2: T,
    pub beta2: T,
    pub lambda2: T,
    pub theta2: T,
    pub x_star: T,
    pub truncation: T,
}

impl<T: Scalar> BandwidthParams<T> {
    /// Reference parameter set (α₂ = 22, truncation 16).
    pub fn reference() -> Self {
        Self {
            alpha1: T::int(11),
            beta1: T::int(1),
            lambda1: T::ratio(1248, 100),
            theta1: T::ratio(16, 10),
            kappa: T::ratio(26, 10),
            alpha2: T::int(22),
            beta2: T::int(1),
            lambda2: T::ratio(1625, 100),
            theta2: T::int(1),
            x_star: T::ratio(16, 10),
            truncation: T::int(16),
        }
    }

    pub fn with_alpha2(mut self, alpha2: T) -> Self {
        self.alpha2 = alpha2;
        self
    }
}

pub const BANDWIDTH_LABELS: [&str; 4] = ["11", "10", "01", "00"];

/// Builds the four-phase bandwidth-sharing model; phase labels give the
/// ON/OFF state of input 1 then input 2.
pub fn build_bandwidth_model<T: Scalar>(p: &BandwidthParams<T>) -> Result<ModelSpec<T>, ModelError> {
    let positive = [
        ("alpha1", p.alpha1),
        ("beta1", p.beta1),
        ("lambda1", p.lambda1),
        ("theta1", p.theta1),
        ("kappa", p.kappa),
        ("alpha2", p.alpha2),
        ("beta2", p.beta2),
        ("lambda2", p.lambda2),
        ("theta2", p.theta2),
        ("x_star", p.x_star),
        ("truncation", p.truncation),
    ];
    if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > T::zero())) {
        return Err(ModelError::InvalidParameter(format!("{name} must be positive")));
    }
    if (p.theta1 + p.theta2 - p.kappa).magnitude() > T::slack() * (T::one() + p.kappa) {
        return Err(ModelError::InvalidParameter(format!(
            "theta1 + theta2 = {} differs from kappa = {}",
            (p.theta1 + p.theta2).lossy_f64(),
            p.kappa.lossy_f64()
        )));
    }
    if p.lambda1 <= p.theta1 || p.lambda2 <= p.kappa {
        return Err(ModelError::InvalidParameter("each input must outpace its service rate".into()));
    }
    if p.x_star >= p.truncation {
        return Err(ModelError::InvalidParameter("x_star must lie below the truncation".into()));
    }
    let (a1, b1, a2, b2) = (p.alpha1, p.beta1, p.alpha2, p.beta2);
    let z = T::zero();
    #[rustfmt::skip]
    let generator = DMatrix::from_row_slice(4, 4, &[
        -(a1 + a2), a2,          a1,          z,
        b2,         -(a1 + b2),  z,           a1,
        b1,         z,           -(a2 + b1),  a2,
        z,          b1,          b2,          -(b1 + b2),
    ]);
    let on1 = p.lambda1 - p.theta1;
    let c = vec![on1, on1, -p.theta1, -p.theta1];
    let on2 = |ry: T, off: T| [ry, off, ry, off];
    let low = on2(p.lambda2 - p.theta2, -p.theta2);
    let high = on2(p.lambda2, z);
    let zero = on2(p.lambda2 - p.kappa, -p.kappa);
    let pieces = (0..4)
        .map(|i| vec![RatePiece { start: z, rate: low[i] }, RatePiece { start: p.x_star, rate: high[i] }])
        .collect();
    let rates = RateField::new(pieces, Some(zero.to_vec()))?;
    ModelSpec::new(PhaseSpace::new(BANDWIDTH_LABELS)?, generator, c, rates, p.truncation)
}

/// Rate field of one phase in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseRatesConfig {
    pub phase: String,
    #[serde(default)]
    pub at_zero: Option<f64>,
    pub pieces: Vec<RatePiece<f64>>,
}

/// On-disk model description. Either `bandwidth` is given, or all of
/// `phases`, `generator`, `c`, `rates` and `truncation`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub bandwidth: Option<BandwidthParams<f64>>,
    #[serde(default)]
    pub phases: Option<Vec<String>>,
    #[serde(default)]
    pub generator: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    #[serde(default)]
    pub rates: Option<Vec<PhaseRatesConfig>>,
    #[serde(default)]
    pub truncation: Option<f64>,
}

impl ModelConfig {
    pub fn into_model(self) -> Result<ModelSpec<f64>, ModelError> {
        if let Some(mut p) = self.bandwidth {
            if self.phases.is_some() || self.generator.is_some() || self.c.is_some() || self.rates.is_some() {
                return Err(ModelError::Config("bandwidth models take no explicit phases, generator or rates".into()));
            }
            if let Some(t) = self.truncation {
                p.truncation = t;
            }
            return build_bandwidth_model(&p);
        }
        let missing = |name: &str| ModelError::Config(format!("missing field `{name}`"));
        let labels = self.phases.ok_or_else(|| missing("phases"))?;
        let rows = self.generator.ok_or_else(|| missing("generator"))?;
        let c = self.c.ok_or_else(|| missing("c"))?;
        let rates = self.rates.ok_or_else(|| missing("rates"))?;
        let truncation = self.truncation.ok_or_else(|| missing("truncation"))?;

        let phases = PhaseSpace::new(labels)?;
        let s = phases.len();
        if rows.len() != s || rows.iter().any(|r| r.len() != s) {
            return Err(ModelError::DimensionMismatch(format!("generator must be {s}x{s}")));
        }
        let generator = DMatrix::from_fn(s, s, |i, j| rows[i][j]);

        let mut pieces = vec![None; s];
        let mut at_zero = vec![None; s];
        for entry in rates {
            let i = phases
                .index_of(&entry.phase)
                .ok_or_else(|| ModelError::Config(format!("unknown phase `{}` in rates", entry.phase)))?;
            if pieces[i].is_some() {
                return Err(ModelError::Config(format!("duplicate rates for phase `{}`", entry.phase)));
            }
            pieces[i] = Some(entry.pieces);
            at_zero[i] = entry.at_zero;
        }
        let pieces = pieces
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| ModelError::Config(format!("no rates for phase `{}`", phases.label(i)))))
            .collect::<Result<Vec<_>, _>>()?;
        let at_zero = match at_zero.iter().filter(|z| z.is_some()).count() {
            0 => None,
            n if n == s => Some(at_zero.into_iter().map(|z| z.unwrap_or_default()).collect()),
            _ => return Err(ModelError::Config("at_zero must be given for every phase or none".into())),
        };
        let field = RateField::new(pieces, at_zero)?;
        ModelSpec::new(phases, generator, c, field, truncation)
    }
}
