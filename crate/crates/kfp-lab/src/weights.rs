//! Weight-function calculus: the compatibility function ϖ_{ω,p}, admissibility
//! classes, wall Maxwellians, twisted/modified weights and their moment closures.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;

/// C² cutoff: 1 on [0,1], 0 on [2,∞), quintic join in between.
pub fn chi_bump(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let t = r - 1.0;
        1.0 - (10.0 * t.powi(3) - 15.0 * t.powi(4) + 6.0 * t.powi(5))
    }
}

pub fn chi_bump_deriv(r: f64) -> f64 {
    if !(1.0..2.0).contains(&r) {
        0.0
    } else {
        let t = r - 1.0;
        -(30.0 * t.powi(2) - 60.0 * t.powi(3) + 30.0 * t.powi(4))
    }
}

/// Parametric weight family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightForm {
    /// ⟨v⟩^k exp(ζ⟨v⟩^s)
    Stretched { k: f64, zeta: f64, s: f64 },
    /// exp(ζ|v|²)
    Gaussian { zeta: f64 },
    /// exp(-ζ|v|²)
    GaussianNegative { zeta: f64 },
    /// ℳ^{-1+1/p}, the self-dual wall-Maxwellian power
    MaxwellPower { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub form: WeightForm,
}

/// Admissibility classes of the growth/decay calculus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassTag {
    W,
    W0,
    W1,
    W2,
    W3,
    N,
    N0,
    N1,
}

impl fmt::Display for ClassTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ClassTag::W => "W",
            ClassTag::W0 => "W0",
            ClassTag::W1 => "W1",
            ClassTag::W2 => "W2",
            ClassTag::W3 => "W3",
            ClassTag::N => "N",
            ClassTag::N0 => "N0",
            ClassTag::N1 => "N1",
        };
        write!(f, "{s}")
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.form {
            WeightForm::Stretched { k, zeta, s } => {
                if zeta == 0.0 || s == 0.0 {
                    write!(f, "<v>^{k}")
                } else {
                    write!(f, "<v>^{k}*exp({zeta}<v>^{s})")
                }
            }
            WeightForm::Gaussian { zeta } => write!(f, "exp({zeta}|v|^2)"),
            WeightForm::GaussianNegative { zeta } => write!(f, "exp(-{zeta}|v|^2)"),
            WeightForm::MaxwellPower { p } => write!(f, "M^(-1+1/{p})"),
        }
    }
}

impl WeightSpec {
    pub fn stretched(k: f64, zeta: f64, s: f64) -> Self {
        Self { form: WeightForm::Stretched { k, zeta, s } }
    }

    pub fn polynomial(k: f64) -> Self {
        Self::stretched(k, 0.0, 0.0)
    }

    pub fn gaussian(zeta: f64) -> Self {
        Self { form: WeightForm::Gaussian { zeta } }
    }

    pub fn gaussian_negative(zeta: f64) -> Self {
        Self { form: WeightForm::GaussianNegative { zeta } }
    }

    pub fn maxwell_power(p: f64) -> Self {
        Self { form: WeightForm::MaxwellPower { p } }
    }

    /// Evaluate at speed ρ = |v| in dimension `d` (includes normalization constants).
    pub fn eval(&self, rho: f64, d: usize) -> f64 {
        let r2 = rho * rho;
        match self.form {
            WeightForm::Stretched { k, zeta, s } => {
                let u = (1.0 + r2).sqrt();
                u.powf(k) * (zeta * u.powf(s)).exp()
            }
            WeightForm::Gaussian { zeta } => (zeta * r2).exp(),
            WeightForm::GaussianNegative { zeta } => (-zeta * r2).exp(),
            WeightForm::MaxwellPower { p } => {
                let a = -1.0 + 1.0 / p;
                let c = (2.0 * std::f64::consts::PI).powf(-((d as f64 - 1.0) / 2.0));
                (c * (-r2 / 2.0).exp()).powf(a)
            }
        }
    }

    /// Canonical (k, ζ, s) log-profile: log ω = k log⟨v⟩ + ζ ρ^s-ish + const.
    /// Gaussian forms fold into s = 2 with signed ζ; the ⟨v⟩ vs |v| distinction
    /// does not affect any class condition.
    fn profile(&self) -> (f64, f64, f64) {
        match self.form {
            WeightForm::Stretched { k, zeta, s } => {
                if zeta == 0.0 || s == 0.0 {
                    (k, 0.0, 0.0)
                } else {
                    (k, zeta, s)
                }
            }
            WeightForm::Gaussian { zeta } => (0.0, zeta, 2.0),
            WeightForm::GaussianNegative { zeta } => (0.0, -zeta, 2.0),
            WeightForm::MaxwellPower { p } => (0.0, (1.0 - 1.0 / p) / 2.0, 2.0),
        }
    }

    /// ρ g'(ρ)/g(ρ) = v·∇ω/ω for the radial profile g.
    fn rho_logderiv(&self, rho: f64) -> f64 {
        rho * rho * self.logderiv_over_rho(rho)
    }

    /// g'(ρ)/(g(ρ) ρ), finite at ρ = 0.
    fn logderiv_over_rho(&self, rho: f64) -> f64 {
        match self.form {
            WeightForm::Stretched { k, zeta, s } => {
                let u2 = 1.0 + rho * rho;
                let u = u2.sqrt();
                (k + zeta * s * u.powf(s)) / u2
            }
            WeightForm::Gaussian { zeta } => 2.0 * zeta,
            WeightForm::GaussianNegative { zeta } => -2.0 * zeta,
            WeightForm::MaxwellPower { p } => 1.0 - 1.0 / p,
        }
    }

    /// d/dρ of (g'/g).
    fn logderiv_prime(&self, rho: f64) -> f64 {
        match self.form {
            WeightForm::Stretched { k, zeta, s } => {
                let u2 = 1.0 + rho * rho;
                let u = u2.sqrt();
                let h = (k + zeta * s * u.powf(s)) / u;
                let hp = -k / u2 + zeta * s * (s - 1.0) * u.powf(s - 2.0);
                h / (u2 * u) + (rho * rho / u2) * hp
            }
            WeightForm::Gaussian { zeta } => 2.0 * zeta,
            WeightForm::GaussianNegative { zeta } => -2.0 * zeta,
            WeightForm::MaxwellPower { p } => 1.0 - 1.0 / p,
        }
    }
}

/// ϖ_{ω,p}(v) = 2(1-1/p)|∇ω|²/ω² + (2/p-1)Δω/ω + (1-1/p)d − v·∇ω/ω.
pub fn varpi(omega: &WeightSpec, p: f64, rho: f64, d: usize) -> f64 {
    let inv_p = if p.is_infinite() { 0.0 } else { 1.0 / p };
    let dd = d as f64;
    let gg = if rho == 0.0 { 0.0 } else { rho * omega.logderiv_over_rho(rho) };
    let grad_sq = gg * gg;
    let lap = grad_sq + omega.logderiv_prime(rho) + (dd - 1.0) * omega.logderiv_over_rho(rho);
    2.0 * (1.0 - inv_p) * grad_sq + (2.0 * inv_p - 1.0) * lap + (1.0 - inv_p) * dd
        - omega.rho_logderiv(rho)
}

/// Leading-order limit of ϖ_{ω,p} as |v| → ∞, maximized over p ∈ [1,∞].
/// ϖ is affine in 1/p, so the extreme exponents suffice; the leading term is
/// p-free for growing exponentials.
pub fn kappa_star(omega: &WeightSpec, d: usize) -> f64 {
    let (k, zeta, s) = omega.profile();
    if zeta != 0.0 && s > 0.0 {
        if zeta < 0.0 {
            // decaying exponential: ϖ ~ (sζ)²ρ^{2s-2} − sζρ^s → +∞
            f64::INFINITY
        } else if s < 2.0 {
            f64::NEG_INFINITY
        } else if 4.0 * zeta * zeta - 2.0 * zeta < 0.0 {
            // s = 2: coefficient (2ζ)² − 2ζ on ρ²
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    } else {
        // polynomial: ϖ → (1-1/p)d − k, maximal at p = ∞
        d as f64 - k
    }
}

/// κ_ω = max_{p∈{1,∞}} sup_v ϖ_{ω,p}, by dense radial scan plus the asymptotics.
/// Returns +∞ when the weight is not admissible.
pub fn kappa_sup(omega: &WeightSpec, d: usize) -> f64 {
    kappa_sup_with_range(omega, d, 6.0)
}

pub fn kappa_sup_with_range(omega: &WeightSpec, d: usize, vmax_hint: f64) -> f64 {
    if kappa_star(omega, d) == f64::INFINITY {
        return f64::INFINITY;
    }
    let rmax = 50.0f64.max(10.0 * vmax_hint);
    let n = 10_000;
    let mut best = f64::NEG_INFINITY;
    for p in [1.0, f64::INFINITY] {
        for i in 0..=n {
            let rho = rmax * i as f64 / n as f64;
            best = best.max(varpi(omega, p, rho, d));
        }
    }
    best
}

fn condition_in_w(zeta: f64, s: f64) -> bool {
    if zeta > 0.0 && s > 0.0 {
        s < 2.0 || (s == 2.0 && zeta < 0.5)
    } else {
        zeta == 0.0
    }
}

fn nondecreasing(k: f64, zeta: f64, s: f64) -> bool {
    if zeta > 0.0 && s > 0.0 {
        k + zeta * s >= 0.0
    } else if zeta == 0.0 {
        k >= 0.0
    } else {
        false
    }
}

/// Every class the weight provably belongs to, by the closed-form conditions
/// of the parametric family. Class membership of tabulated weights is refused
/// elsewhere; only the parametric family reaches this function.
pub fn classify(omega: &WeightSpec, d: usize) -> BTreeSet<ClassTag> {
    let dd = d as f64;
    let (k, zeta, s) = omega.profile();
    let mut tags = BTreeSet::new();

    if nondecreasing(k, zeta, s) && condition_in_w(zeta, s) {
        tags.insert(ClassTag::W);
        let in_w0 = if zeta > 0.0 { true } else { k > dd + 1.0 };
        if in_w0 {
            tags.insert(ClassTag::W0);
            if kappa_star(omega, d) < -1.0 {
                tags.insert(ClassTag::W2);
            }
        }
        tags.insert(ClassTag::W3);
    }
    let theta1 = 1.0 / (2.0 * dd + 3.0);
    if k == 0.0 && s == 2.0 && zeta > (1.0 - theta1) / 2.0 && zeta < 0.5 {
        tags.insert(ClassTag::W1);
    }
    // N-side: the inverse weight must be admissible
    if nondecreasing(-k, -zeta, s) && condition_in_w(-zeta, s) {
        tags.insert(ClassTag::N);
        let dominated_by_m = if zeta < 0.0 { -zeta <= 0.5 } else { zeta == 0.0 && k <= 0.0 };
        let first_moment = if zeta < 0.0 { true } else { zeta == 0.0 && -k > dd + 1.0 };
        if dominated_by_m && first_moment {
            tags.insert(ClassTag::N0);
            if k == 0.0 && s == 2.0 && -zeta > 0.0 && -zeta < 0.5 {
                tags.insert(ClassTag::N1);
            }
        }
    }
    tags
}

// ---------------------------------------------------------------------------
// Maxwellians
// ---------------------------------------------------------------------------

/// The wall Maxwellian ℳ, the unit-mass Maxwellian μ and the steady state.
#[derive(Debug, Clone, Copy)]
pub struct Maxwellians {
    pub d: usize,
}

impl Maxwellians {
    pub fn new(d: usize) -> Self {
        Self { d }
    }

    /// ℳ(v) = (2π)^{-(d-1)/2} e^{-|v|²/2}; its outgoing half-flux is one.
    pub fn wall(&self, rho: f64) -> f64 {
        (2.0 * std::f64::consts::PI).powf(-((self.d as f64 - 1.0) / 2.0)) * (-rho * rho / 2.0).exp()
    }

    /// μ(v) = (2π)^{-d/2} e^{-|v|²/2}; unit mass.
    pub fn full(&self, rho: f64) -> f64 {
        (2.0 * std::f64::consts::PI).powf(-(self.d as f64) / 2.0) * (-rho * rho / 2.0).exp()
    }

    /// f∞ = μ / |Ω|.
    pub fn steady_state(&self, rho: f64, volume: f64) -> f64 {
        self.full(rho) / volume
    }
}

// ---------------------------------------------------------------------------
// Radial half-space moments (continuum quadrature)
// ---------------------------------------------------------------------------

/// Angular factor A(d, a) with ∫_{n·v>0} F(|v|)(n·v)^a dv = A(d,a) ∫₀^∞ F(ρ)ρ^{a+d-1} dρ.
fn angular_factor(d: usize, a: u32) -> f64 {
    use std::f64::consts::PI;
    match d {
        1 => 1.0,
        2 => match a {
            0 => PI,
            1 => 2.0,
            2 => PI / 2.0,
            _ => unimplemented!("angular moment a > 2 in d = 2"),
        },
        3 => 2.0 * PI / (a as f64 + 1.0),
        _ => panic!("dimension {d} not supported"),
    }
}

/// Adaptive Simpson quadrature on [a, b].
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                + rec(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, whole, m, fm, tol, 40)
}

/// ∫_{n·v>0} F(|v|)(n·v)^a dv over ℝ^d for a radial profile F that decays at
/// least like a Gaussian tail beyond some radius.
pub fn half_space_moment(f_rad: &dyn Fn(f64) -> f64, a: u32, d: usize) -> f64 {
    let g = |rho: f64| f_rad(rho) * rho.powi((a + d as u32 - 1) as i32);
    let mut peak: f64 = 0.0;
    let mut rho = 0.0;
    while rho <= 200.0 {
        peak = peak.max(g(rho).abs());
        rho += 0.25;
    }
    let mut cap: f64 = 8.0;
    while cap < 200.0 && g(cap).abs() > 1e-17 * peak.max(1e-300) {
        cap += 4.0;
    }
    angular_factor(d, a) * adaptive_simpson(&g, 0.0, cap, 1e-13)
}

/// K₀ = ∫ ℳ (n·v̂)₊² dv (independent of the boundary point).
pub fn k0_constant(d: usize) -> f64 {
    let m = Maxwellians::new(d);
    half_space_moment(&|rho| m.wall(rho) / (1.0 + rho * rho), 2, d)
}

/// K₁(w) = ∫ ℳ w (n·v)₊ dv for a radial weight profile.
pub fn k1_moment(w_rad: &dyn Fn(f64) -> f64, d: usize) -> f64 {
    let m = Maxwellians::new(d);
    half_space_moment(&|rho| m.wall(rho) * w_rad(rho), 1, d)
}

// ---------------------------------------------------------------------------
// Twisted weights
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TwistVariant {
    /// ω̃ = ω_A + ½ n·ṽ (forward growth estimate)
    Forward,
    /// m̃ = m_A − ½ (n·ṽ) ℳ (dual backward estimate)
    Dual,
    /// m̃^q = m_A^q (1 − ¼ n·ṽ (1 − √(δ/D))) (boundary-penalized moment estimate)
    MomentLq { q: f64 },
    /// 𝔐 = ℳ (1 − √(δ/D) n·ṽ / 4)
    FrakM,
}

/// A grid-evaluable weight on phase space built from a base velocity weight,
/// a cutoff radius A and the wall-direction corrector n·ṽ (ṽ = v/⟨v⟩²).
#[derive(Debug, Clone)]
pub struct TwistedWeight {
    pub variant: TwistVariant,
    pub base: WeightSpec,
    pub a: f64,
    pub d: usize,
    /// Equivalence constant: c_A⁻¹·(base profile) ≤ ½·(cutoff profile) pointwise.
    pub c_a: f64,
}

fn n_dot_vtilde(normal: [f64; 2], v: [f64; 2]) -> f64 {
    let ndotv = normal[0] * v[0] + normal[1] * v[1];
    ndotv / (1.0 + v[0] * v[0] + v[1] * v[1])
}

impl TwistedWeight {
    /// The radial cutoff profile: ω_A, m_A, or m_A^q depending on the variant.
    pub fn base_profile(&self, rho: f64) -> f64 {
        let chi = chi_bump(rho / self.a);
        let m = Maxwellians::new(self.d);
        match self.variant {
            TwistVariant::Forward => chi + (1.0 - chi) * self.base.eval(rho, self.d),
            TwistVariant::Dual => chi * m.wall(rho) + (1.0 - chi) * self.base.eval(rho, self.d),
            TwistVariant::MomentLq { q } => {
                chi * m.wall(rho).powf(1.0 - q) + (1.0 - chi) * self.base.eval(rho, self.d).powf(q)
            }
            TwistVariant::FrakM => m.wall(rho),
        }
    }

    /// Evaluate the full twisted weight at phase point (x, v).
    pub fn eval(&self, domain: &Domain, x: [f64; 2], v: [f64; 2]) -> f64 {
        let rho = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let n = domain.normal_direction(x);
        let nv = n_dot_vtilde(n, v);
        let base = self.base_profile(rho);
        match self.variant {
            TwistVariant::Forward => base + 0.5 * nv,
            TwistVariant::Dual => base - 0.5 * nv * Maxwellians::new(self.d).wall(rho),
            TwistVariant::MomentLq { .. } | TwistVariant::FrakM => {
                let delta = domain.signed_distance(x).max(0.0);
                let corr = (delta / domain.diameter_bound()).sqrt();
                match self.variant {
                    TwistVariant::MomentLq { .. } => base * (1.0 - 0.25 * nv * (1.0 - corr)),
                    _ => base * (1.0 - 0.25 * corr * nv),
                }
            }
        }
    }
}

/// Build a twisted weight; `a = None` selects the smallest cutoff A in
/// {1, 2, 4, ...} satisfying the variant's closure condition.
pub fn build_twisted(
    variant: TwistVariant,
    base: &WeightSpec,
    d: usize,
    a: Option<f64>,
) -> Result<TwistedWeight> {
    match variant {
        TwistVariant::Forward => {
            if !classify(base, d).contains(&ClassTag::W) {
                return Err(Error::WeightClass(format!(
                    "forward twist requires a weight in W; {base} is not"
                )));
            }
        }
        TwistVariant::Dual => {
            if !classify(base, d).contains(&ClassTag::N0) {
                return Err(Error::WeightClass(format!(
                    "dual twist requires a weight in N0; {base} is not"
                )));
            }
        }
        TwistVariant::MomentLq { q } => {
            if !(0.0 < q && q < 1.0) {
                return Err(Error::WeightClass("moment twist requires q in (0,1)".into()));
            }
            let (k, zeta, _) = base.profile();
            let decreasing = zeta < 0.0 || (zeta == 0.0 && k < 0.0);
            if !decreasing {
                return Err(Error::WeightClass("moment twist requires a decreasing weight".into()));
            }
            let integrable =
                if zeta < 0.0 { true } else { -k * q / (1.0 - q) > d as f64 + 1.0 };
            if !integrable {
                return Err(Error::WeightClass(
                    "moment twist requires m^{q/(1-q)} |v| integrable".into(),
                ));
            }
        }
        TwistVariant::FrakM => {
            return Ok(TwistedWeight { variant, base: *base, a: 1.0, d, c_a: 1.0 });
        }
    }

    let k0 = k0_constant(d);
    let m = Maxwellians::new(d);
    let profile_at = |a: f64, rho: f64| -> f64 {
        let chi = chi_bump(rho / a);
        match variant {
            TwistVariant::Forward => chi + (1.0 - chi) * base.eval(rho, d),
            TwistVariant::Dual => chi * m.wall(rho) + (1.0 - chi) * base.eval(rho, d),
            TwistVariant::MomentLq { q } => {
                chi * m.wall(rho).powf(1.0 - q) + (1.0 - chi) * base.eval(rho, d).powf(q)
            }
            TwistVariant::FrakM => unreachable!(),
        }
    };
    let closure_holds = |a: f64| -> bool {
        match variant {
            TwistVariant::Forward => {
                let k1 = half_space_moment(&|r| m.wall(r) * profile_at(a, r), 1, d);
                k1 - 1.0 - 0.5 * k0 <= 0.0
            }
            TwistVariant::Dual => {
                let k1 = half_space_moment(&|r| profile_at(a, r), 1, d);
                k1 - 1.0 - 0.5 * k0 <= 0.0
            }
            TwistVariant::MomentLq { q } => {
                let k1 = half_space_moment(&|r| m.wall(r).powf(q) * profile_at(a, r), 1, d);
                let k2 = half_space_moment(&|r| profile_at(a, r).powf(1.0 / (1.0 - q)), 1, d);
                let k0m = 0.25
                    * half_space_moment(
                        &|r| m.wall(r).powf(q) * profile_at(a, r) / (1.0 + r * r),
                        2,
                        d,
                    );
                k0m + k1 - k2.powf(1.0 - q) >= 0.0
            }
            TwistVariant::FrakM => unreachable!(),
        }
    };

    let a = match a {
        Some(a) => {
            if !closure_holds(a) {
                return Err(Error::WeightClass(format!(
                    "closure condition fails at the requested cutoff A = {a}"
                )));
            }
            a
        }
        None => {
            let mut found = None;
            let mut cand = 1.0;
            while cand <= 65_536.0 {
                if closure_holds(cand) {
                    found = Some(cand);
                    break;
                }
                cand *= 2.0;
            }
            found.ok_or_else(|| {
                Error::WeightClass(format!(
                    "no cutoff A <= 2^16 satisfies the closure condition for {base}"
                ))
            })?
        }
    };

    let tw = TwistedWeight { variant, base: *base, a, d, c_a: 1.0 };
    let mut c_a: f64 = 2.0;
    let mut rho = 0.0;
    while rho <= 2.0 * a + 1.0 {
        let b = match variant {
            TwistVariant::MomentLq { q } => base.eval(rho, d).powf(q),
            _ => base.eval(rho, d),
        };
        c_a = c_a.max(2.0 * b / tw.base_profile(rho));
        rho += a / 256.0;
    }
    Ok(TwistedWeight { c_a, ..tw })
}

// ---------------------------------------------------------------------------
// Splitting selection
// ---------------------------------------------------------------------------

/// Absorption parameters: the diagonal M·χ(|v|/R) subtracted from the generator
/// so that the remainder decays in L^p_ω.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplittingParams {
    pub m: f64,
    pub r: f64,
    /// certified value of sup_p sup_v (ϖ_{ω,p} − M χ_R)
    pub bound: f64,
}

/// Choose (M, R) so that sup over p ∈ {1,∞} and all v of ϖ_{ω,p}(v) − Mχ_R(v)
/// is at most (κ* + κ)/2, with κ = κ*/2 unless a target rate is given.
pub fn select_splitting(
    omega: &WeightSpec,
    d: usize,
    kappa_target: Option<f64>,
) -> Result<SplittingParams> {
    let ks = kappa_star(omega, d);
    if !(ks < -1.0) {
        return Err(Error::WeightClass(format!(
            "splitting requires a weight in W2 (kappa* < -1); {omega} has kappa* = {ks}"
        )));
    }
    let kappa = kappa_target.unwrap_or(if ks.is_finite() { ks / 2.0 } else { -2.0 });
    let target = if ks.is_finite() { (ks + kappa) / 2.0 } else { kappa - 1.0 };

    let rmax = 80.0;
    let n = 16_000;
    let varpi_max =
        |rho: f64| varpi(omega, 1.0, rho, d).max(varpi(omega, f64::INFINITY, rho, d));
    let mut r_cut = 1.0f64;
    while r_cut <= 4096.0 {
        let mut m_needed = 0.0f64;
        let mut feasible = true;
        for i in 0..=n {
            let rho = rmax * i as f64 / n as f64;
            let excess = varpi_max(rho) - target;
            if excess > 0.0 {
                let chi = chi_bump(rho / r_cut);
                if chi <= 0.0 {
                    feasible = false;
                    break;
                }
                m_needed = m_needed.max(excess / chi);
            }
        }
        if feasible && varpi_max(rmax) <= target {
            return Ok(SplittingParams { m: m_needed * 1.0001, r: r_cut, bound: target });
        }
        r_cut *= 2.0;
    }
    Err(Error::WeightClass("no admissible (M, R) found".into()))
}

// ---------------------------------------------------------------------------
// Exponent bookkeeping
// ---------------------------------------------------------------------------

/// The exponent chain of the smoothing estimates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PaperExponents {
    pub d: usize,
    pub beta: f64,
    pub theta1: f64,
    pub q: f64,
    pub p: f64,
    pub r: f64,
    pub eta: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub nu: f64,
}

impl PaperExponents {
    /// q must lie in ((d+1)/(d+2), 1) and p in (1, 1+1/(2d)).
    pub fn new(d: usize, q: f64, p: f64) -> Result<Self> {
        let dd = d as f64;
        if !(q > (dd + 1.0) / (dd + 2.0) && q < 1.0) {
            return Err(Error::Precondition(format!("q = {q} outside ((d+1)/(d+2), 1)")));
        }
        if !(p > 1.0 && p < 1.0 + 1.0 / (2.0 * dd)) {
            return Err(Error::Precondition(format!("p = {p} outside (1, 1+1/(2d))")));
        }
        let beta = 1.0 / (2.0 * (dd + 1.0));
        let theta1 = 1.0 / (2.0 * dd + 3.0);
        let r = 1.0 / ((1.0 - theta1) / q + theta1 / p);
        if r <= 1.0 {
            return Err(Error::Precondition(format!(
                "q = {q} is too small: the interpolated exponent r = {r:.4} must exceed 1"
            )));
        }
        let eta =
            (1.0 - theta1) * (1.0 / q - 1.0) + theta1 * (1.0 / p + 2.0 * dd * (1.0 - 1.0 / p));
        let nu1 = 1.0 / r - eta - 1.0 / q;
        let nu2 = nu1;
        let nu = nu1.abs().max(nu2.abs()) / (1.0 - 1.0 / r);
        Ok(Self { d, beta, theta1, q, p, r, eta, nu1, nu2, nu })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn varpi_trivial_constant_weight() {
        let w = WeightSpec::polynomial(0.0);
        assert_relative_eq!(varpi(&w, 2.0, 1.37, 1), 0.5, epsilon = 1e-14);
        assert_relative_eq!(varpi(&w, 2.0, 0.0, 1), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn varpi_maxwell_power_closed_form() {
        // -(1/q)(1-1/q)|v|² + (1/p + 1/q - 2/(pq)) d at q = p = 2, d = 3, |v| = 2
        let w = WeightSpec::maxwell_power(2.0);
        assert_relative_eq!(varpi(&w, 2.0, 2.0, 3), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn varpi_inverse_maxwellian_is_d_over_p() {
        // q → ∞ limit of the closed form: the |v|² coefficient vanishes and the
        // d-coefficient is 1/p, so ϖ ≡ d/p (= 3 at d = 3, p = 1)
        let w = WeightSpec::maxwell_power(f64::INFINITY);
        for rho in [0.0, 0.7, 3.0] {
            assert_relative_eq!(varpi(&w, 1.0, rho, 3), 3.0, epsilon = 1e-11);
            assert_relative_eq!(varpi(&w, 2.0, rho, 3), 1.5, epsilon = 1e-11);
        }
    }

    #[test]
    fn varpi_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let specs = [
            WeightSpec::stretched(3.0, 0.5, 1.0),
            WeightSpec::polynomial(4.0),
            WeightSpec::gaussian(0.2),
            WeightSpec::gaussian_negative(0.3),
            WeightSpec::stretched(-1.0, 0.4, 1.5),
        ];
        for d in [1usize, 2, 3] {
            for spec in &specs {
                for _ in 0..100 {
                    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                    let rho = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if rho < 0.2 {
                        continue;
                    }
                    // h balances truncation against roundoff in the second difference
                    let h = 1e-4 * (1.0 + rho);
                    let eval = |vv: &[f64]| {
                        let r = vv.iter().map(|x| x * x).sum::<f64>().sqrt();
                        spec.eval(r, d)
                    };
                    let w0 = eval(&v);
                    let mut grad_sq = 0.0;
                    let mut lap = 0.0;
                    let mut vdotgrad = 0.0;
                    for i in 0..d {
                        let mut vp = v.clone();
                        let mut vm = v.clone();
                        vp[i] += h;
                        vm[i] -= h;
                        let (wp, wm) = (eval(&vp), eval(&vm));
                        let gi = (wp - wm) / (2.0 * h);
                        grad_sq += gi * gi;
                        lap += (wp - 2.0 * w0 + wm) / (h * h);
                        vdotgrad += v[i] * gi;
                    }
                    for p in [1.0, 2.0, f64::INFINITY] {
                        let ip = if p.is_infinite() { 0.0 } else { 1.0 / p };
                        let fd = 2.0 * (1.0 - ip) * grad_sq / (w0 * w0)
                            + (2.0 * ip - 1.0) * lap / w0
                            + (1.0 - ip) * d as f64
                            - vdotgrad / w0;
                        let an = varpi(spec, p, rho, d);
                        assert!(
                            ((an - fd) / an.abs().max(1.0)).abs() < 1e-6,
                            "spec {spec:?} d={d} p={p} rho={rho}: analytic {an}, fd {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn kappa_sup_examples() {
        assert!(kappa_sup(&WeightSpec::gaussian(0.6), 1).is_infinite());
        let k = kappa_sup(&WeightSpec::stretched(0.0, 1.0, 1.0), 1);
        assert!(k.is_finite());
        // <v>^3 at d = 3: p = ∞ asymptote d − k = 0, finite sup
        assert!(kappa_sup(&WeightSpec::polynomial(3.0), 3).is_finite());
        assert_relative_eq!(kappa_star(&WeightSpec::polynomial(3.0), 3), 0.0);
    }

    #[test]
    fn classify_polynomial_k_dplus2() {
        // spec'd tags plus W2 (kappa* = d − k = -2 < -1, see the splitting section)
        for d in [1usize, 2, 3] {
            let w = WeightSpec::polynomial(d as f64 + 2.0);
            let tags = classify(&w, d);
            for t in [ClassTag::W, ClassTag::W0, ClassTag::W3, ClassTag::W2] {
                assert!(tags.contains(&t), "missing {t} for d={d}");
            }
            assert!(!tags.contains(&ClassTag::N));
        }
    }

    #[test]
    fn classify_w1_window() {
        // d=1: theta1 = 1/5, so the admissible window is (0.4, 0.5)
        assert!(classify(&WeightSpec::gaussian(0.45), 1).contains(&ClassTag::W1));
        assert!(!classify(&WeightSpec::gaussian(0.3), 1).contains(&ClassTag::W1));
        assert!(!classify(&WeightSpec::gaussian(0.5), 1).contains(&ClassTag::W1));
    }

    #[test]
    fn classify_gaussian_negative() {
        let tags = classify(&WeightSpec::gaussian_negative(0.25), 3);
        for t in [ClassTag::N, ClassTag::N0, ClassTag::N1] {
            assert!(tags.contains(&t));
        }
        assert!(!tags.contains(&ClassTag::W));
    }

    #[test]
    fn classify_monotone_inclusions() {
        let candidates = [
            WeightSpec::polynomial(1.0),
            WeightSpec::polynomial(4.0),
            WeightSpec::stretched(2.0, 0.3, 1.0),
            WeightSpec::gaussian(0.2),
            WeightSpec::gaussian(0.45),
            WeightSpec::gaussian_negative(0.1),
            WeightSpec::gaussian_negative(0.45),
            WeightSpec::polynomial(-5.0),
            WeightSpec::maxwell_power(2.0),
        ];
        for d in [1usize, 2, 3] {
            for w in &candidates {
                let tags = classify(w, d);
                if tags.contains(&ClassTag::W0) {
                    assert!(tags.contains(&ClassTag::W));
                }
                if tags.contains(&ClassTag::W2) {
                    assert!(tags.contains(&ClassTag::W0));
                }
                if tags.contains(&ClassTag::N1) {
                    assert!(tags.contains(&ClassTag::N0));
                }
                if tags.contains(&ClassTag::N0) {
                    assert!(tags.contains(&ClassTag::N));
                }
            }
        }
    }

    #[test]
    fn w2_varpi_negative_in_the_tail() {
        // classified W2 ⇒ ϖ < -1 for large speeds
        let vmax = 6.0;
        for w in [WeightSpec::polynomial(3.0), WeightSpec::gaussian(0.2)] {
            assert!(classify(&w, 1).contains(&ClassTag::W2));
            for p in [1.0, 2.0, f64::INFINITY] {
                for i in 0..20 {
                    let rho = 0.9 * vmax + 0.1 * vmax * i as f64 / 19.0;
                    assert!(varpi(&w, p, rho, 1) < -1.0, "w={w} p={p} rho={rho}");
                }
            }
        }
    }

    #[test]
    fn k0_oracle_d1() {
        // independent midpoint-rule oracle for ∫₀^∞ (v²/(1+v²)) e^{-v²/2} dv
        let mut acc = 0.0;
        let n = 4_000_000;
        let h = 40.0 / n as f64;
        for i in 0..n {
            let v = (i as f64 + 0.5) * h;
            acc += v * v / (1.0 + v * v) * (-v * v / 2.0).exp() * h;
        }
        let k0 = k0_constant(1);
        assert_relative_eq!(k0, acc, epsilon = 1e-9);
        assert!((k0 - 0.43).abs() < 0.01);
    }

    #[test]
    fn k1_of_unit_weight_is_one() {
        // half-flux normalization of the wall Maxwellian
        for d in [1usize, 2, 3] {
            assert_relative_eq!(k1_moment(&|_| 1.0, d), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn k2_maxwell_limit_is_one() {
        // K₂ with m_A = M^{(1-q)/q} equals 1
        let q = 0.8;
        let m = Maxwellians::new(1);
        let k2 = half_space_moment(
            &|r| m.wall(r).powf((1.0 - q) / q).powf(q / (1.0 - q)),
            1,
            1,
        );
        assert_relative_eq!(k2, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn forward_twist_sandwich_and_k1_monotone() {
        let base = WeightSpec::polynomial(3.0);
        let tw = build_twisted(TwistVariant::Forward, &base, 1, None).unwrap();
        let k1_at = |a: f64| {
            k1_moment(
                &|rho| {
                    let chi = chi_bump(rho / a);
                    chi + (1.0 - chi) * base.eval(rho, 1)
                },
                1,
            )
        };
        let (k4, k8, k16) = (k1_at(4.0), k1_at(8.0), k1_at(16.0));
        assert!(k4 > k8 && k8 > k16 && k16 > 1.0);

        let dom = Domain::interval(1.0, crate::geometry::Accommodation::Constant(0.5)).unwrap();
        for i in 0..50 {
            let x = [0.02 * i as f64, 0.0];
            for j in 0..80 {
                let v = [-6.0 + 0.15 * j as f64, 0.0];
                let rho = v[0].abs();
                let wa = tw.base_profile(rho);
                let wt = tw.eval(&dom, x, v);
                assert!(0.5 * wa <= wt + 1e-14 && wt <= 1.5 * wa + 1e-14);
                assert!(tw.c_a.recip() * base.eval(rho, 1) <= 0.5 * wa + 1e-12);
                assert!(wt > 0.0);
            }
        }
    }

    #[test]
    fn dual_and_moment_twists_build() {
        let m = WeightSpec::gaussian_negative(0.25);
        let tw = build_twisted(TwistVariant::Dual, &m, 1, None).unwrap();
        assert!(tw.a >= 1.0);
        // increasing weights are rejected for the moment variant
        assert!(build_twisted(TwistVariant::MomentLq { q: 0.75 }, &WeightSpec::polynomial(3.0), 1, None)
            .is_err());
        let mq = WeightSpec::polynomial(-3.0);
        let tw2 = build_twisted(TwistVariant::MomentLq { q: 0.75 }, &mq, 1, None).unwrap();
        // values stay positive on a sample of the phase grid
        let dom = Domain::interval(2.0, crate::geometry::Accommodation::Constant(1.0)).unwrap();
        for i in 0..20 {
            for j in 0..40 {
                let x = [0.1 * i as f64, 0.0];
                let v = [-6.0 + 0.3 * j as f64, 0.0];
                assert!(tw2.eval(&dom, x, v) > 0.0);
            }
        }
    }

    #[test]
    fn splitting_targets_polynomial_weight() {
        let w = WeightSpec::polynomial(3.0); // d = 1: kappa* = -2
        let sp = select_splitting(&w, 1, None).unwrap();
        assert_relative_eq!(sp.bound, -1.5, epsilon = 1e-12);
        let mut worst = f64::NEG_INFINITY;
        for i in 0..=4000 {
            let rho = 60.0 * i as f64 / 4000.0;
            for p in [1.0, f64::INFINITY] {
                worst = worst.max(varpi(&w, p, rho, 1) - sp.m * chi_bump(rho / sp.r));
            }
        }
        assert!(worst <= sp.bound + 1e-9, "worst {worst} vs bound {}", sp.bound);
    }

    #[test]
    fn splitting_rejects_weights_outside_w2() {
        assert!(select_splitting(&WeightSpec::polynomial(1.0), 1, None).is_err());
    }

    #[test]
    fn paper_exponents_chain() {
        let e = PaperExponents::new(3, 0.995, 1.1).unwrap();
        assert_relative_eq!(e.beta, 1.0 / 8.0);
        assert_relative_eq!(e.theta1, 1.0 / 9.0);
        assert_relative_eq!(1.0 / e.r, (1.0 - e.theta1) / e.q + e.theta1 / e.p, epsilon = 1e-15);
        assert!(e.r > 1.0);
        // q outside the admissible window
        assert!(PaperExponents::new(3, 0.5, 1.1).is_err());
        // q in the window but too small for r > 1
        assert!(PaperExponents::new(3, 0.9, 1.1).is_err());
    }

    #[test]
    fn chi_bump_is_c2_at_the_joins() {
        assert_relative_eq!(chi_bump(1.0), 1.0);
        assert_relative_eq!(chi_bump(2.0), 0.0);
        for h in [1e-4, 1e-5] {
            assert!((chi_bump(1.0 + h) - 1.0).abs() < 20.0 * h * h * h / h.powi(0));
            assert!(chi_bump(2.0 - h).abs() < 40.0 * h * h);
            assert!((chi_bump_deriv(1.0 + h)).abs() < 40.0 * h * h / h.powi(0));
        }
        // derivative matches finite differences in the interior of the join
        for r in [1.2, 1.5, 1.8] {
            let h = 1e-6;
            let fd = (chi_bump(r + h) - chi_bump(r - h)) / (2.0 * h);
            assert_relative_eq!(chi_bump_deriv(r), fd, epsilon = 1e-6);
        }
    }
}
