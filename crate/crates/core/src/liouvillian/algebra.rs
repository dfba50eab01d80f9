//! Exact expansion of single-mode ladder correspondences.
//!
//! Complex-form operators are kept normal ordered as
//! `α^a (α*)^b ∂_α^c ∂_{α*}^d` with Gaussian-rational coefficients; the real
//! form is `q^e p^f ∂_q^g ∂_p^h`.

use std::collections::BTreeMap;

use num_complex::Complex;
use num_rational::Ratio;

pub type Rational = Ratio<i64>;
pub type CRational = Complex<Rational>;

fn c(re: i64, im: i64) -> CRational {
    Complex::new(Rational::from_integer(re), Rational::from_integer(im))
}

fn zero() -> CRational {
    c(0, 0)
}

fn is_zero(v: &CRational) -> bool {
    *v.re.numer() == 0 && *v.im.numer() == 0
}

/// `(α, α*, ∂_α, ∂_{α*})` exponents.
pub type ComplexKey = [u32; 4];
/// `(q, p, ∂_q, ∂_p)` exponents.
pub type RealKey = [u32; 4];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeylPoly(pub BTreeMap<ComplexKey, CRational>);

fn binom(n: u32, k: u32) -> i64 {
    let mut r: i64 = 1;
    for i in 0..k as i64 {
        r = r * (n as i64 - i) / (i + 1);
    }
    r
}

fn falling(n: u32, k: u32) -> i64 {
    (0..k as i64).map(|i| n as i64 - i).product()
}

impl WeylPoly {
    pub fn one() -> Self {
        Self::monomial([0, 0, 0, 0])
    }

    pub fn monomial(key: ComplexKey) -> Self {
        let mut m = BTreeMap::new();
        m.insert(key, c(1, 0));
        Self(m)
    }

    fn add_term(&mut self, key: ComplexKey, v: CRational) {
        let e = self.0.entry(key).or_insert_with(zero);
        *e = *e + v;
        if is_zero(e) {
            self.0.remove(&key);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, v) in &other.0 {
            out.add_term(*k, *v);
        }
        out
    }

    /// Operator composition `self ∘ other` re-normal-ordered with
    /// `∂^c α^e = Σ_k C(c,k) e!/(e−k)! α^{e−k} ∂^{c−k}`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut out = Self::default();
        for (&[a, b, cc, d], &x) in &self.0 {
            for (&[e, f, g, h], &y) in &other.0 {
                let xy = x * y;
                for k in 0..=cc.min(e) {
                    let ck = binom(cc, k) * falling(e, k);
                    for m in 0..=d.min(f) {
                        let cm = binom(d, m) * falling(f, m);
                        let w = Rational::from_integer(ck * cm);
                        out.add_term(
                            [a + e - k, b + f - m, cc - k + g, d - m + h],
                            Complex::new(xy.re * w, xy.im * w),
                        );
                    }
                }
            }
        }
        out
    }

    pub fn pow(&self, n: u32) -> Self {
        (0..n).fold(Self::one(), |acc, _| acc.compose(self))
    }

    /// Complex-form operator for `(a†)^j a^k ρ (a†)^l a^s`:
    /// `(α*)^j (α + ∂_{α*})^k α^s (α* + ∂_α)^l`.
    pub fn ladder_term(j: u32, k: u32, l: u32, s: u32) -> Self {
        let left = WeylPoly::monomial([0, 1, 0, 0]).pow(j);
        let annih = WeylPoly::monomial([1, 0, 0, 0])
            .add(&WeylPoly::monomial([0, 0, 0, 1]))
            .pow(k);
        let mult = WeylPoly::monomial([1, 0, 0, 0]).pow(s);
        let create = WeylPoly::monomial([0, 1, 0, 0])
            .add(&WeylPoly::monomial([0, 0, 1, 0]))
            .pow(l);
        left.compose(&annih).compose(&mult).compose(&create)
    }

    /// Substitutes `α = q + ip`, `α* = q − ip`, `∂_α = ½(∂_q − i∂_p)`,
    /// `∂_{α*} = ½(∂_q + i∂_p)`.
    pub fn to_real(&self) -> BTreeMap<RealKey, CRational> {
        let alpha = RealPoly::from_pairs(&[([1, 0, 0, 0], c(1, 0)), ([0, 1, 0, 0], c(0, 1))]);
        let alpha_c = RealPoly::from_pairs(&[([1, 0, 0, 0], c(1, 0)), ([0, 1, 0, 0], c(0, -1))]);
        let half = Rational::new(1, 2);
        let d_alpha = RealPoly::from_pairs(&[
            ([0, 0, 1, 0], Complex::new(half, Rational::from_integer(0))),
            ([0, 0, 0, 1], Complex::new(Rational::from_integer(0), -half)),
        ]);
        let d_alpha_c = RealPoly::from_pairs(&[
            ([0, 0, 1, 0], Complex::new(half, Rational::from_integer(0))),
            ([0, 0, 0, 1], Complex::new(Rational::from_integer(0), half)),
        ]);
        let mut out = RealPoly::default();
        for (&[a, b, cc, d], &v) in &self.0 {
            // Multiplications and derivatives each commute among themselves,
            // and every factor below keeps multiplications left of derivatives.
            let term = alpha
                .pow(a)
                .mul(&alpha_c.pow(b))
                .mul(&d_alpha.pow(cc))
                .mul(&d_alpha_c.pow(d))
                .scale(v);
            out = out.add(&term);
        }
        out.0
    }
}

/// Commutative product structure: valid because every product taken here has
/// all multiplication factors to the left of all derivative factors.
#[derive(Debug, Clone, PartialEq, Default)]
struct RealPoly(BTreeMap<RealKey, CRational>);

impl RealPoly {
    fn from_pairs(p: &[(RealKey, CRational)]) -> Self {
        Self(p.iter().cloned().collect())
    }

    fn one() -> Self {
        Self::from_pairs(&[([0, 0, 0, 0], c(1, 0))])
    }

    fn mul(&self, other: &Self) -> Self {
        let mut out = BTreeMap::new();
        for (ka, va) in &self.0 {
            for (kb, vb) in &other.0 {
                let k = [ka[0] + kb[0], ka[1] + kb[1], ka[2] + kb[2], ka[3] + kb[3]];
                let e = out.entry(k).or_insert_with(zero);
                *e = *e + *va * *vb;
            }
        }
        out.retain(|_, v| !is_zero(v));
        Self(out)
    }

    fn pow(&self, n: u32) -> Self {
        (0..n).fold(Self::one(), |acc, _| acc.mul(self))
    }

    fn scale(&self, s: CRational) -> Self {
        Self(self.0.iter().map(|(k, v)| (*k, *v * s)).collect())
    }

    fn add(&self, other: &Self) -> Self {
        let mut out = self.0.clone();
        for (k, v) in &other.0 {
            let e = out.entry(*k).or_insert_with(zero);
            *e = *e + *v;
        }
        out.retain(|_, v| !is_zero(v));
        Self(out)
    }
}
