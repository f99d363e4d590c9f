//! Executable identifiability checks on parametric distribution tuples.
//!
//! Three pieces: closed-form density ratios with an escape-witness search
//! (the non-deterministic selection case), polynomial-exponent comparison on
//! a sampled region (the deterministic truncation case), and a checker that
//! decides whether a given pair of tuples is consistent with the
//! distributional identifiability condition.

use serde::{Deserialize, Serialize};

use crate::numeric::adaptive_simpson_panels;
use crate::{Error, Result};

/// Outermost |y| the witness search will extend to.
const WITNESS_RANGE_CAP: f64 = (1 << 20) as f64;

/// Relative tolerance for deciding that two observed products differ.
const PRODUCT_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Outcome families
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum OutcomeFamily {
    Gaussian { mu: f64, sigma: f64 },
    Laplace { mu: f64, b: f64 },
    Pareto { y_m: f64, alpha: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl OutcomeFamily {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OutcomeFamily::Gaussian { sigma, .. } => sigma > 0.0,
            OutcomeFamily::Laplace { b, .. } => b > 0.0,
            OutcomeFamily::Pareto { y_m, alpha } => y_m > 0.0 && alpha > 0.0,
            OutcomeFamily::LogNormal { sigma, .. } => sigma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid outcome family {self:?}")))
        }
    }

    fn same_kind(&self, other: &OutcomeFamily) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }

    pub fn pdf(&self, y: f64) -> f64 {
        match *self {
            OutcomeFamily::Gaussian { mu, sigma } => {
                let z = (y - mu) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            OutcomeFamily::Laplace { mu, b } => (-(y - mu).abs() / b).exp() / (2.0 * b),
            OutcomeFamily::Pareto { y_m, alpha } => {
                if y < y_m {
                    0.0
                } else {
                    alpha * y_m.powf(alpha) / y.powf(alpha + 1.0)
                }
            }
            OutcomeFamily::LogNormal { mu, sigma } => {
                if y <= 0.0 {
                    0.0
                } else {
                    let z = (y.ln() - mu) / sigma;
                    (-0.5 * z * z).exp() / (y * sigma * (2.0 * std::f64::consts::PI).sqrt())
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            OutcomeFamily::Gaussian { mu, .. } => mu,
            OutcomeFamily::Laplace { mu, .. } => mu,
            OutcomeFamily::Pareto { y_m, alpha } => {
                if alpha > 1.0 {
                    alpha * y_m / (alpha - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            OutcomeFamily::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }

    /// Interval carrying all but ~1e-10 of the probability mass, used to
    /// truncate quadrature supports.
    pub fn quadrature_support(&self) -> (f64, f64) {
        match *self {
            OutcomeFamily::Gaussian { mu, sigma } => (mu - 7.0 * sigma, mu + 7.0 * sigma),
            OutcomeFamily::Laplace { mu, b } => {
                // exp(-|z| / b) tail: mass 1e-10 at |z| = b ln(5e9).
                let w = b * (5e9f64).ln();
                (mu - w, mu + w)
            }
            OutcomeFamily::Pareto { y_m, alpha } => {
                // Upper tail mass (y_m / y)^alpha = 1e-10.
                (y_m, y_m * 10f64.powf(10.0 / alpha))
            }
            OutcomeFamily::LogNormal { mu, sigma } => {
                ((mu - 7.0 * sigma).exp(), (mu + 7.0 * sigma).exp())
            }
        }
    }

    /// Hard support of the density.
    fn support(&self) -> (f64, f64) {
        match *self {
            OutcomeFamily::Gaussian { .. } | OutcomeFamily::Laplace { .. } => {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
            OutcomeFamily::Pareto { y_m, .. } => (y_m, f64::INFINITY),
            // Open at zero; the smallest positive double keeps ratio
            // evaluations inside the domain.
            OutcomeFamily::LogNormal { .. } => (f64::MIN_POSITIVE, f64::INFINITY),
        }
    }
}

// ---------------------------------------------------------------------------
// Density ratios and witness search
// ---------------------------------------------------------------------------

/// Closed-form density ratio `P(y) / Q(y)` for same-kind families, in the
/// simplified exponent forms rather than a literal quotient of pdfs.
pub fn density_ratio(p: &OutcomeFamily, q: &OutcomeFamily, y: f64) -> Result<f64> {
    p.validate()?;
    q.validate()?;
    if !p.same_kind(q) {
        return Err(Error::Config(format!(
            "density ratio needs matching families, got {p:?} vs {q:?}"
        )));
    }
    match (*p, *q) {
        (
            OutcomeFamily::Gaussian { mu: mp, sigma: sp },
            OutcomeFamily::Gaussian { mu: mq, sigma: sq },
        ) => {
            // Exponent quadratic in y; reduces to the linear form
            // exp((2(mu_p - mu_q) y + mu_q^2 - mu_p^2) / (2 sigma^2)) at
            // equal scales.
            let a = 0.5 / (sq * sq) - 0.5 / (sp * sp);
            let b = mp / (sp * sp) - mq / (sq * sq);
            let c = mq * mq / (2.0 * sq * sq) - mp * mp / (2.0 * sp * sp);
            Ok((sq / sp) * (a * y * y + b * y + c).exp())
        }
        (OutcomeFamily::Laplace { mu: mp, b: bp }, OutcomeFamily::Laplace { mu: mq, b: bq }) => {
            Ok((bq / bp) * ((y - mq).abs() / bq - (y - mp).abs() / bp).exp())
        }
        (
            OutcomeFamily::Pareto { y_m: ymp, alpha: ap },
            OutcomeFamily::Pareto { y_m: ymq, alpha: aq },
        ) => {
            if y < ymp || y < ymq {
                return Err(Error::Config(format!("y = {y} below a Pareto support bound")));
            }
            // C * y^(alpha_q - alpha_p), with C collecting the scale terms.
            let log_c = ap.ln() - aq.ln() + ap * ymp.ln() - aq * ymq.ln();
            Ok((log_c + (aq - ap) * y.ln()).exp())
        }
        (
            OutcomeFamily::LogNormal { mu: mp, sigma: sp },
            OutcomeFamily::LogNormal { mu: mq, sigma: sq },
        ) => {
            if y <= 0.0 {
                return Err(Error::Config("log-normal ratio needs y > 0".into()));
            }
            // Quadratic in ln y; the pure power form C * y^k with
            // k = (mu_p - mu_q) / sigma^2 at equal scales.
            let z = y.ln();
            let a = 0.5 / (sq * sq) - 0.5 / (sp * sp);
            let b = mp / (sp * sp) - mq / (sq * sq);
            let c = mq * mq / (2.0 * sq * sq) - mp * mp / (2.0 * sp * sp);
            Ok((sq / sp) * (a * z * z + b * z + c).exp())
        }
        _ => unreachable!("same_kind checked above"),
    }
}

/// Overlap interval for the observed-density ratio, derived from the
/// c-overlap bound, the selection floor `d`, and the marginal ratios
/// `r = P(S=1)/Q(S=1)` and `h = Q_X/P_X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBound {
    pub c: f64,
    pub d: f64,
    pub r: f64,
    pub h: f64,
}

impl RatioBound {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 0.5) {
            return Err(Error::Config(format!(
                "overlap c must lie in (0, 1/2), got {}",
                self.c
            )));
        }
        if !(self.d > 0.0 && self.d <= 1.0) {
            return Err(Error::Config(format!(
                "selection floor d must lie in (0, 1], got {}",
                self.d
            )));
        }
        if !(self.r > 0.0 && self.h > 0.0) {
            return Err(Error::Config("marginal ratios r and h must be positive".into()));
        }
        Ok(())
    }

    pub fn lower(&self) -> f64 {
        self.h * self.r * self.c * self.d / (1.0 - self.c)
    }

    pub fn upper(&self) -> f64 {
        self.h * self.r * (1.0 - self.c) / (self.c * self.d)
    }
}

/// Smallest-|y| grid point where the density ratio escapes the overlap
/// interval. The initial `y_range` is extended geometrically (doubling) up
/// to |y| = 2^20; `None` means no escape was found on any grid.
pub fn find_witness(
    p: &OutcomeFamily,
    q: &OutcomeFamily,
    bound: &RatioBound,
    y_range: (f64, f64),
    steps: usize,
) -> Result<Option<f64>> {
    bound.validate()?;
    let (lower, upper) = (bound.lower(), bound.upper());
    let (sup_lo, sup_hi) = {
        let (pl, ph) = p.support();
        let (ql, qh) = q.support();
        (pl.max(ql), ph.min(qh))
    };
    let steps = steps.max(8);
    let (mut lo, mut hi) = y_range;
    if !(lo < hi) {
        return Err(Error::Config("empty witness search range".into()));
    }
    loop {
        let lo_eff = lo.max(sup_lo);
        let hi_eff = hi.min(sup_hi);
        if lo_eff < hi_eff {
            let mut ys: Vec<f64> = (0..steps)
                .map(|i| lo_eff + (hi_eff - lo_eff) * i as f64 / (steps - 1) as f64)
                .collect();
            ys.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
            for y in ys {
                let ratio = density_ratio(p, q, y)?;
                if ratio < lower || ratio > upper {
                    return Ok(Some(y));
                }
            }
        }
        if lo.abs().max(hi.abs()) >= WITNESS_RANGE_CAP {
            return Ok(None);
        }
        lo *= 2.0;
        hi *= 2.0;
    }
}

// ---------------------------------------------------------------------------
// Polynomial exponents (deterministic selection)
// ---------------------------------------------------------------------------

/// Density exponent `f(x, y)`: a bivariate polynomial of bounded total
/// degree, plus the marginal exponent `g(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyExponent {
    /// Maximum total degree of `f`.
    pub degree: usize,
    /// Coefficient of `x^i y^j` at index `i * (degree + 1) + j`; entries
    /// with `i + j > degree` must be zero.
    pub coeffs: Vec<f64>,
    /// Marginal exponent `g(x)` in the power basis.
    pub marginal_g: Vec<f64>,
}

impl PolyExponent {
    pub fn new(degree: usize, coeffs: Vec<f64>, marginal_g: Vec<f64>) -> Result<Self> {
        let side = degree + 1;
        if coeffs.len() != side * side {
            return Err(Error::Config(format!(
                "coefficient grid must be {side}x{side}, got {}",
                coeffs.len()
            )));
        }
        for i in 0..side {
            for j in 0..side {
                if i + j > degree && coeffs[i * side + j] != 0.0 {
                    return Err(Error::Config(format!(
                        "coefficient of x^{i} y^{j} exceeds total degree {degree}"
                    )));
                }
            }
        }
        Ok(PolyExponent {
            degree,
            coeffs,
            marginal_g,
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let side = self.degree + 1;
        let mut total = 0.0;
        let mut xi = 1.0;
        for i in 0..side {
            let mut yj = 1.0;
            for j in 0..side {
                total += self.coeffs[i * side + j] * xi * yj;
                yj *= y;
            }
            xi *= x;
        }
        total
    }

    /// Coefficients of `y -> f(x, y)` at fixed `x`.
    pub fn y_poly_at(&self, x: f64) -> Vec<f64> {
        let side = self.degree + 1;
        let mut out = vec![0.0; side];
        let mut xi = 1.0;
        for i in 0..side {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.coeffs[i * side + j] * xi;
            }
            xi *= x;
        }
        out
    }

    /// `exp(f(x, .))` is normalizable iff the leading y-coefficient at this
    /// x has even degree and negative sign; the integral is also evaluated
    /// numerically and returned.
    pub fn normalizable_at(&self, x: f64) -> Result<f64> {
        let ypoly = self.y_poly_at(x);
        let lead = ypoly
            .iter()
            .rposition(|&c| c.abs() > 1e-300)
            .ok_or_else(|| Error::Numeric(format!("exponent constant in y at x = {x}")))?;
        if lead == 0 || lead % 2 != 0 || ypoly[lead] >= 0.0 {
            return Err(Error::Numeric(format!(
                "exp(f({x}, y)) is not normalizable: leading y-term degree {lead}, coefficient {}",
                ypoly[lead]
            )));
        }
        let scale = (1.0 / ypoly[lead].abs()).powf(1.0 / lead as f64);
        let w = 60.0 * scale.max(1.0);
        let f = |y: f64| {
            let v = self.eval(x, y);
            if v > 300.0 {
                f64::INFINITY
            } else {
                v.exp()
            }
        };
        let z = adaptive_simpson_panels(&f, -w, w, 32, 1e-8)?;
        if !z.is_finite() || z <= 0.0 {
            return Err(Error::Numeric(format!("normalizer at x = {x} is not finite")));
        }
        Ok(z)
    }
}

/// Verdict of the region comparison: the exponents differ by a constant in
/// y for every sampled x (the map `x -> c_x` is returned), or they genuinely
/// differ in the y-direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolyVerdict {
    ConstantDifference(Vec<(f64, f64)>),
    Distinct,
}

/// Decide whether `f_p - f_q` restricted to the sampled region depends on y.
/// `region` maps each x to its sampled y values (at least `degree + 2`
/// distinct values each); y-dependence below 1e-9 counts as zero.
pub fn poly_exponent_equal_on_region(
    fp: &PolyExponent,
    fq: &PolyExponent,
    region: &[(f64, Vec<f64>)],
) -> Result<PolyVerdict> {
    if region.is_empty() {
        return Err(Error::Config("empty comparison region".into()));
    }
    let degree = fp.degree.max(fq.degree);
    let mut constants = Vec::with_capacity(region.len());
    for (x, ys) in region {
        let mut distinct = ys.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        if distinct.len() < degree + 2 {
            return Err(Error::Data(format!(
                "need at least {} distinct y values at x = {x}, got {}",
                degree + 2,
                distinct.len()
            )));
        }
        // Fit delta(y) = f_p(x, y) - f_q(x, y) as a polynomial in y from its
        // sampled values.
        let p = degree + 1;
        let mut design = Vec::with_capacity(distinct.len() * p);
        let mut delta = Vec::with_capacity(distinct.len());
        for &y in &distinct {
            let mut pow = 1.0;
            for _ in 0..p {
                design.push(pow);
                pow *= y;
            }
            delta.push(fp.eval(*x, y) - fq.eval(*x, y));
        }
        let coeffs = crate::numeric::least_squares(&design, distinct.len(), p, &delta)?;
        if coeffs.iter().skip(1).any(|c| c.abs() > 1e-9) {
            return Ok(PolyVerdict::Distinct);
        }
        constants.push((*x, coeffs[0]));
    }
    Ok(PolyVerdict::ConstantDifference(constants))
}

// ---------------------------------------------------------------------------
// Parametric tuples and the pairwise condition check
// ---------------------------------------------------------------------------

/// Linear propensity with a declared overlap constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropensitySpec {
    pub intercept: f64,
    pub slope: f64,
    pub declared_c: f64,
}

impl PropensitySpec {
    pub fn prob(&self, t: u8, x: f64) -> f64 {
        let e = self.intercept + self.slope * x;
        if t == 1 {
            e
        } else {
            1.0 - e
        }
    }
}

/// Selection probability function with a declared floor or deterministic
/// region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionFn {
    /// `sigmoid(alpha (y - gamma))` with a declared floor on the region of
    /// interest.
    Sigmoid { alpha: f64, gamma: f64, floor: f64 },
    Const { p: f64 },
    /// Deterministic truncation: keep iff `y_min <= y <= y_max`.
    Indicator { y_min: f64, y_max: f64 },
    /// On the given arm, `scale * min(1, num(y) / den(y))`; elsewhere the
    /// constant `scale`. The floor decays to zero in the tails, exactly the
    /// regime where identifiability is lost.
    DensityRatioCapped {
        num: OutcomeFamily,
        den: OutcomeFamily,
        scale: f64,
        arm: u8,
    },
}

impl SelectionFn {
    pub fn prob(&self, _x: f64, y: f64, t: u8) -> f64 {
        match self {
            SelectionFn::Sigmoid { alpha, gamma, .. } => {
                let z = alpha * (y - gamma);
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    z.exp() / (1.0 + z.exp())
                }
            }
            SelectionFn::Const { p } => *p,
            SelectionFn::Indicator { y_min, y_max } => {
                if y >= *y_min && y <= *y_max {
                    1.0
                } else {
                    0.0
                }
            }
            SelectionFn::DensityRatioCapped { num, den, scale, arm } => {
                if t != *arm {
                    return *scale;
                }
                let d = den.pdf(y);
                if d <= 0.0 {
                    *scale
                } else {
                    scale * (num.pdf(y) / d).min(1.0)
                }
            }
        }
    }
}

/// One compatible tuple on a finite covariate grid: marginal weights,
/// propensity, per-(x, arm) outcome families, and the selection function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTuple {
    pub x_grid: Vec<f64>,
    /// Marginal covariate weights, normalized internally.
    pub x_weights: Vec<f64>,
    pub propensity: PropensitySpec,
    /// `outcomes[i] = [arm 0 family, arm 1 family]` at `x_grid[i]`.
    pub outcomes: Vec<[OutcomeFamily; 2]>,
    pub selection: SelectionFn,
}

impl ParamTuple {
    pub fn validate(&self) -> Result<()> {
        if self.x_grid.is_empty() || self.x_grid.len() != self.outcomes.len() {
            return Err(Error::Config(
                "x grid and outcome list must be nonempty and aligned".into(),
            ));
        }
        if self.x_weights.len() != self.x_grid.len() {
            return Err(Error::Config("x weights must align with the grid".into()));
        }
        if self.x_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("x weights must be positive".into()));
        }
        let c = self.propensity.declared_c;
        if !(c > 0.0 && c < 0.5) {
            return Err(Error::Config(format!(
                "declared overlap must lie in (0, 1/2), got {c}"
            )));
        }
        for &x in &self.x_grid {
            let e = self.propensity.prob(1, x);
            if !(e > c && e < 1.0 - c) {
                return Err(Error::Config(format!(
                    "propensity {e} at x = {x} violates the declared {c}-overlap"
                )));
            }
        }
        for fams in &self.outcomes {
            fams[0].validate()?;
            fams[1].validate()?;
        }
        Ok(())
    }

    fn weights_normalized(&self) -> Vec<f64> {
        let total: f64 = self.x_weights.iter().sum();
        self.x_weights.iter().map(|w| w / total).collect()
    }

    /// Expected outcome of `arm` at grid point `i`, by quadrature.
    fn arm_mean(&self, i: usize, arm: u8) -> Result<f64> {
        let fam = &self.outcomes[i][arm as usize];
        let (lo, hi) = fam.quadrature_support();
        let f = |y: f64| y * fam.pdf(y);
        adaptive_simpson_panels(&f, lo, hi, 32, 1e-8)
    }

    /// Target effect: grid-weighted difference of arm means by quadrature.
    pub fn tau(&self) -> Result<f64> {
        let w = self.weights_normalized();
        let mut tau = 0.0;
        for i in 0..self.x_grid.len() {
            tau += w[i] * (self.arm_mean(i, 1)? - self.arm_mean(i, 0)?);
        }
        Ok(tau)
    }

    /// Marginal selection probability `P(S=1)`, by quadrature.
    pub fn p_selected(&self) -> Result<f64> {
        let w = self.weights_normalized();
        let mut total = 0.0;
        for (i, &x) in self.x_grid.iter().enumerate() {
            for arm in 0..2u8 {
                let fam = &self.outcomes[i][arm as usize];
                let (lo, hi) = fam.quadrature_support();
                let f = |y: f64| fam.pdf(y) * self.selection.prob(x, y, arm);
                let mass = adaptive_simpson_panels(&f, lo, hi, 32, 1e-8)?;
                total += w[i] * self.propensity.prob(arm, x) * mass;
            }
        }
        if !(total > 0.0) {
            return Err(Error::Numeric("selection probability is zero".into()));
        }
        Ok(total)
    }

    /// Observed product `alpha(x,y,t) P(t|x) P_xy(t)` at grid point `i`,
    /// where `alpha = s(x,y,t) / P(S=1)` and the x-marginal enters through
    /// the grid weight.
    fn observed_product(&self, i: usize, y: f64, arm: u8, p_s: f64) -> f64 {
        let x = self.x_grid[i];
        let w = self.weights_normalized();
        let s = self.selection.prob(x, y, arm);
        s / p_s * self.propensity.prob(arm, x) * self.outcomes[i][arm as usize].pdf(y) * w[i]
    }
}

/// Outcome of the pairwise identifiability check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition2Report {
    /// |tau_P - tau_Q| by quadrature.
    pub ate_gap: f64,
    /// Point `(x, y, t)` where the observed products differ beyond
    /// tolerance.
    pub witness: Option<(f64, f64, u8)>,
    /// Grid point where the covariate marginals differ (external-data
    /// variant only).
    pub marginal_witness: Option<f64>,
    /// Whether this pair is consistent with the identifiability condition.
    pub consistent: bool,
    pub verdict: String,
}

/// Decide, for the given pair of tuples, whether differing target effects
/// come with a detectable difference in the observed products. This decides
/// only the supplied pair, not the full quantification over all compatible
/// tuples.
pub fn check_condition2(
    tuple_p: &ParamTuple,
    tuple_q: &ParamTuple,
    external_unbiased_x: bool,
) -> Result<Condition2Report> {
    tuple_p.validate()?;
    tuple_q.validate()?;
    if tuple_p.x_grid != tuple_q.x_grid {
        return Err(Error::Config("tuples must share the same x grid".into()));
    }

    let ate_gap = (tuple_p.tau()? - tuple_q.tau()?).abs();
    if ate_gap <= 1e-8 {
        return Ok(Condition2Report {
            ate_gap,
            witness: None,
            marginal_witness: None,
            consistent: true,
            verdict: "consistent with the identifiability condition for this pair: \
                      equal target effects, nothing to witness"
                .into(),
        });
    }

    // External variant: a marginal-covariate discrepancy is itself a witness.
    let marginal_witness = if external_unbiased_x {
        let wp = tuple_p.weights_normalized();
        let wq = tuple_q.weights_normalized();
        tuple_p
            .x_grid
            .iter()
            .zip(wp.iter().zip(&wq))
            .find(|(_, (a, b))| (**a - **b).abs() > PRODUCT_TOL * a.abs().max(b.abs()))
            .map(|(&x, _)| x)
    } else {
        None
    };

    let p_s_p = tuple_p.p_selected()?;
    let p_s_q = tuple_q.p_selected()?;

    // Witness search: x over the grid, y by geometric doubling from |y| = 1,
    // both arms.
    let mut witness = None;
    'outer: for i in 0..tuple_p.x_grid.len() {
        for arm in 0..2u8 {
            let mut mag = 1.0f64;
            while mag <= WITNESS_RANGE_CAP {
                for y in [mag, -mag] {
                    let a = tuple_p.observed_product(i, y, arm, p_s_p);
                    let b = tuple_q.observed_product(i, y, arm, p_s_q);
                    if (a - b).abs() > PRODUCT_TOL * a.abs().max(b.abs()).max(1e-300) {
                        witness = Some((tuple_p.x_grid[i], y, arm));
                        break 'outer;
                    }
                }
                mag *= 2.0;
            }
        }
    }

    let consistent = witness.is_some() || marginal_witness.is_some();
    let verdict = if consistent {
        "consistent with the identifiability condition for this pair: differing effects \
         are observationally distinguishable"
            .into()
    } else {
        "violation candidate for this pair: differing target effects with observationally \
         equivalent products on the searched grid"
            .into()
    };
    Ok(Condition2Report {
        ate_gap,
        witness,
        marginal_witness,
        consistent,
        verdict,
    })
}
