//! Lindblad generators compiled to real phase-space differential operators.
//!
//! A term `c·Π_m (a_m†)^j a_m^k ρ (a_m†)^l a_m^s` maps onto the Q function as
//! `c·Π_m (α_m*)^j (α_m + ∂_{α_m*})^k α_m^s (α_m* + ∂_{α_m})^l Q`. Each mode's
//! factor is expanded exactly, converted to `(q, p)` form with the
//! Wirtinger derivatives `∂_α = ½(∂_q − i∂_p)`, `∂_{α*} = ½(∂_q + i∂_p)`,
//! and the per-mode factors are multiplied (distinct modes commute).

mod algebra;
mod eval;

pub use eval::{apply_ratio, conservation_defect, RatioEvaluator};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use algebra::{CRational, WeylPoly};

/// Largest ladder power accepted by [`compile`].
pub const MAX_POWER: u32 = 4;
/// Imaginary parts below this are treated as round-off and dropped.
pub const IMAG_TOL: f64 = 1e-12;

/// Ladder powers of one mode in `(a†)^j a^k ρ (a†)^l a^s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, PartialOrd, Ord)]
pub struct ModePowers {
    pub j: u32,
    pub k: u32,
    pub l: u32,
    pub s: u32,
}

impl ModePowers {
    pub const fn new(j: u32, k: u32, l: u32, s: u32) -> Self {
        Self { j, k, l, s }
    }

    fn is_identity(&self) -> bool {
        self.j == 0 && self.k == 0 && self.l == 0 && self.s == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LindbladTerm {
    pub coeff: Complex64,
    /// One entry per mode.
    pub powers: Vec<ModePowers>,
}

impl LindbladTerm {
    pub fn new(coeff: Complex64, powers: Vec<ModePowers>) -> Self {
        Self { coeff, powers }
    }

    /// A term acting on a single mode of an `m`-mode system.
    pub fn on_mode(coeff: Complex64, modes: usize, mode: usize, p: ModePowers) -> Self {
        let mut powers = vec![ModePowers::default(); modes];
        powers[mode] = p;
        Self { coeff, powers }
    }

    /// A term acting on two distinct modes.
    pub fn on_modes(
        coeff: Complex64,
        modes: usize,
        a: (usize, ModePowers),
        b: (usize, ModePowers),
    ) -> Self {
        let mut powers = vec![ModePowers::default(); modes];
        powers[a.0] = a.1;
        powers[b.0] = b.1;
        Self { coeff, powers }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicWell {
    pub omega: f64,
    pub gamma: f64,
    pub nbar: f64,
}

/// Physical models with known Q-space operators.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// `H = Σ ω_j a_j†a_j` with thermal damping per well.
    Harmonic { wells: Vec<HarmonicWell> },
    /// `H = −J Σ (a_{j+1}†a_j + h.c.)` on an open chain with single-particle
    /// loss `γ_j` per well.
    BosonicChain { hopping: f64, gamma: Vec<f64> },
}

impl ModelSpec {
    pub fn modes(&self) -> usize {
        match self {
            ModelSpec::Harmonic { wells } => wells.len(),
            ModelSpec::BosonicChain { gamma, .. } => gamma.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes() == 0 {
            return Err(Error::InvalidConfig("model needs at least one well".into()));
        }
        match self {
            ModelSpec::Harmonic { wells } => {
                for w in wells {
                    if !(w.gamma >= 0.0 && w.nbar >= 0.0 && w.omega.is_finite()) {
                        return Err(Error::InvalidConfig(format!(
                            "harmonic well needs γ ≥ 0, n̄ ≥ 0: {w:?}"
                        )));
                    }
                }
            }
            ModelSpec::BosonicChain { hopping, gamma } => {
                if !hopping.is_finite() || gamma.iter().any(|g| !(*g >= 0.0)) {
                    return Err(Error::InvalidConfig("bosonic chain needs γ ≥ 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// Lindblad term list for a physical model.
pub fn model_terms(spec: &ModelSpec) -> Vec<LindbladTerm> {
    let m = spec.modes();
    let mut out = Vec::new();
    let re = |v: f64| Complex64::new(v, 0.0);
    let im = |v: f64| Complex64::new(0.0, v);
    // ρ-left and ρ-right number operators and the jump operators.
    let n_left = ModePowers::new(1, 1, 0, 0);
    let n_right = ModePowers::new(0, 0, 1, 1);
    let a_rho_adag = ModePowers::new(0, 1, 1, 0);
    let adag_rho_a = ModePowers::new(1, 0, 0, 1);
    let rho = ModePowers::default();
    match spec {
        ModelSpec::Harmonic { wells } => {
            for (w, p) in wells.iter().enumerate() {
                let on = |c: Complex64, pw: ModePowers| LindbladTerm::on_mode(c, m, w, pw);
                // −i[ω a†a, ρ]
                out.push(on(im(-p.omega), n_left));
                out.push(on(im(p.omega), n_right));
                // γ/2 (2aρa† − a†aρ − ρa†a)
                out.push(on(re(p.gamma), a_rho_adag));
                out.push(on(re(-0.5 * p.gamma), n_left));
                out.push(on(re(-0.5 * p.gamma), n_right));
                // γn̄ (aρa† + a†ρa − a†aρ − ρaa†), with ρaa† = ρa†a + ρ
                let g = p.gamma * p.nbar;
                out.push(on(re(g), a_rho_adag));
                out.push(on(re(g), adag_rho_a));
                out.push(on(re(-g), n_left));
                out.push(on(re(-g), n_right));
                out.push(on(re(-g), rho));
            }
        }
        ModelSpec::BosonicChain { hopping, gamma } => {
            // H = Σ h_ij a_i†a_j with h_{j,j+1} = h_{j+1,j} = −J;
            // −i[H, ρ] = −i Σ h_ij (a_i†a_j ρ − ρ a_i†a_j).
            let h = -hopping;
            for j in 0..m.saturating_sub(1) {
                for (a, b) in [(j + 1, j), (j, j + 1)] {
                    out.push(LindbladTerm::on_modes(
                        im(-h),
                        m,
                        (a, ModePowers::new(1, 0, 0, 0)),
                        (b, ModePowers::new(0, 1, 0, 0)),
                    ));
                    out.push(LindbladTerm::on_modes(
                        im(h),
                        m,
                        (a, ModePowers::new(0, 0, 1, 0)),
                        (b, ModePowers::new(0, 0, 0, 1)),
                    ));
                }
            }
            // −γ/2 (nρ + ρn − 2aρa†)
            for (w, &g) in gamma.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                out.push(LindbladTerm::on_mode(re(g), m, w, a_rho_adag));
                out.push(LindbladTerm::on_mode(re(-0.5 * g), m, w, n_left));
                out.push(LindbladTerm::on_mode(re(-0.5 * g), m, w, n_right));
            }
        }
    }
    out
}

/// One real monomial `coeff · Π x_i^{powers_i} · Π ∂_i^{derivs_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    /// Polynomial exponents per coordinate (length `2M`).
    pub powers: Vec<u32>,
    /// Derivative multiplicities per coordinate (length `2M`).
    pub derivs: Vec<u32>,
}

impl Monomial {
    pub fn order(&self) -> usize {
        self.derivs.iter().map(|&d| d as usize).sum()
    }
}

/// Real-coordinate differential operator on `Q(q_1..q_M, p_1..p_M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QOperator {
    modes: usize,
    monomials: Vec<Monomial>,
}

impl QOperator {
    pub fn zero(modes: usize) -> Self {
        Self {
            modes,
            monomials: Vec::new(),
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dim(&self) -> usize {
        2 * self.modes
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn is_zero(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn max_order(&self) -> usize {
        self.monomials.iter().map(Monomial::order).max().unwrap_or(0)
    }

    /// Coefficient of the monomial with the given powers and derivatives (0 if absent).
    pub fn coefficient(&self, powers: &[u32], derivs: &[u32]) -> f64 {
        self.monomials
            .iter()
            .find(|m| m.powers == powers && m.derivs == derivs)
            .map(|m| m.coeff)
            .unwrap_or(0.0)
    }

    /// Builds an operator from explicit monomials, merging duplicates.
    pub fn from_monomials(modes: usize, monomials: impl IntoIterator<Item = Monomial>) -> Self {
        let mut map: BTreeMap<(Vec<u32>, Vec<u32>), f64> = BTreeMap::new();
        for m in monomials {
            assert_eq!(m.powers.len(), 2 * modes);
            assert_eq!(m.derivs.len(), 2 * modes);
            *map.entry((m.derivs, m.powers)).or_insert(0.0) += m.coeff;
        }
        Self::from_map(modes, map)
    }

    fn from_map(modes: usize, map: BTreeMap<(Vec<u32>, Vec<u32>), f64>) -> Self {
        let mut monomials: Vec<Monomial> = map
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|((derivs, powers), coeff)| Monomial {
                coeff,
                powers,
                derivs,
            })
            .collect();
        monomials.sort_by(|a, b| {
            (a.order(), &a.derivs, &a.powers).cmp(&(b.order(), &b.derivs, &b.powers))
        });
        Self { modes, monomials }
    }

    fn coord_name(&self, i: usize) -> String {
        if i < self.modes {
            format!("q{}", i + 1)
        } else {
            format!("p{}", i - self.modes + 1)
        }
    }

    /// Canonical text form: one monomial per line, ordered by derivative
    /// order, derivative multi-index, then polynomial exponents.
    pub fn pretty(&self) -> String {
        let mut s = format!("QOperator modes={} terms={}\n", self.modes, self.monomials.len());
        for m in &self.monomials {
            let poly: Vec<String> = m
                .powers
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| {
                    if e == 1 {
                        self.coord_name(i)
                    } else {
                        format!("{}^{}", self.coord_name(i), e)
                    }
                })
                .collect();
            let der: Vec<String> = m
                .derivs
                .iter()
                .enumerate()
                .flat_map(|(i, &e)| std::iter::repeat_n(self.coord_name(i), e as usize))
                .collect();
            let _ = writeln!(
                s,
                "{:+.12e} [{}] d[{}]",
                m.coeff,
                poly.join(" "),
                der.join(",")
            );
        }
        s
    }
}

impl std::fmt::Display for QOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.pretty())
    }
}

/// Expands a term list into a real differential operator on `M` modes.
pub fn compile(terms: &[LindbladTerm], modes: usize) -> Result<QOperator> {
    // Value and the sum of contribution magnitudes, for cancellation detection.
    let mut acc: BTreeMap<(Vec<u32>, Vec<u32>), (Complex64, f64)> = BTreeMap::new();
    let mut cache: BTreeMap<ModePowers, BTreeMap<[u32; 4], CRational>> = BTreeMap::new();
    for term in terms {
        if term.powers.len() != modes {
            return Err(Error::DimensionMismatch {
                expected: modes,
                found: term.powers.len(),
            });
        }
        for p in &term.powers {
            if p.j.max(p.k).max(p.l).max(p.s) > MAX_POWER {
                return Err(Error::UnsupportedTerm(format!(
                    "ladder power above {MAX_POWER}: {p:?}"
                )));
            }
        }
        // Exact product of per-mode real factors.
        let mut prod: Vec<(Vec<u32>, Vec<u32>, CRational)> = vec![(
            vec![0; 2 * modes],
            vec![0; 2 * modes],
            algebra_one(),
        )];
        for (mode, p) in term.powers.iter().enumerate() {
            if p.is_identity() {
                continue;
            }
            let factor = cache
                .entry(*p)
                .or_insert_with(|| WeylPoly::ladder_term(p.j, p.k, p.l, p.s).to_real());
            let mut next = Vec::with_capacity(prod.len() * factor.len());
            for (pw, dv, c) in &prod {
                for (&[qe, pe, dq, dp], fc) in factor.iter() {
                    let mut pw = pw.clone();
                    let mut dv = dv.clone();
                    pw[mode] += qe;
                    pw[modes + mode] += pe;
                    dv[mode] += dq;
                    dv[modes + mode] += dp;
                    next.push((pw, dv, *c * *fc));
                }
            }
            prod = next;
        }
        for (pw, dv, c) in prod {
            let v = Complex64::new(rat_to_f64(&c.re), rat_to_f64(&c.im)) * term.coeff;
            let e = acc.entry((dv, pw)).or_insert((Complex64::new(0.0, 0.0), 0.0));
            e.0 += v;
            e.1 += v.norm();
        }
    }
    let mut real = BTreeMap::new();
    for ((dv, pw), (v, mag)) in acc {
        let cancel = 64.0 * f64::EPSILON * mag;
        if v.im.abs() >= IMAG_TOL && v.im.abs() > cancel {
            let m = Monomial {
                coeff: v.im,
                powers: pw,
                derivs: dv,
            };
            let line = QOperator {
                modes,
                monomials: vec![m],
            }
            .pretty();
            return Err(Error::NonHermitianGenerator {
                residue: v.im.abs(),
                monomial: line.lines().nth(1).unwrap_or_default().to_string(),
            });
        }
        if v.re.abs() > cancel {
            real.insert((dv, pw), v.re);
        }
    }
    Ok(QOperator::from_map(modes, real))
}

fn algebra_one() -> CRational {
    CRational::new(algebra::Rational::from_integer(1), algebra::Rational::from_integer(0))
}

fn rat_to_f64(r: &algebra::Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}
