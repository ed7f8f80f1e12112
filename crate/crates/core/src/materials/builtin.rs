//! Built-in material models: a metal/hydride phase-change model, a
//! regular-solution variant with entropic mixing, and a regularized
//! poroelastic model with plastic strain, porosity, and water content.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Result, SolverError};
use crate::materials::{
    ChemEval, MaterialModel, MechEval, MechHess, StateSample, ThermEval, ZetaCoeffs,
};
use crate::tensor::{Coeff2, Sym2};

/// ζ evaluation in the form the prox handling needs: value, the smooth part
/// of the subdifferential (2b·rate), and the 1-homogeneous coefficient a.
pub fn zeta_eval(coeffs: &ZetaCoeffs, rate: &[f64]) -> (f64, Vec<f64>, f64) {
    let value = super::zeta_value(coeffs, rate);
    let subgrad: Vec<f64> = rate.iter().map(|r| 2.0 * coeffs.b * r).collect();
    (value, subgrad, coeffs.a)
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(SolverError::invalid(format!(
            "material models support dim 1 or 2, got {dim}"
        )))
    }
}

/// Reader over a name→value parameter map that records consumed keys and
/// rejects leftovers, so configuration typos fail loudly.
struct Params<'a> {
    map: &'a BTreeMap<String, f64>,
    used: BTreeSet<&'a str>,
}

impl<'a> Params<'a> {
    fn new(map: &'a BTreeMap<String, f64>) -> Self {
        Params {
            map,
            used: BTreeSet::new(),
        }
    }

    fn get(&mut self, key: &'static str, default: f64) -> f64 {
        if let Some((k, v)) = self.map.get_key_value(key) {
            self.used.insert(k.as_str());
            *v
        } else {
            default
        }
    }

    fn finish(self, model: &str) -> Result<()> {
        let unknown: Vec<&str> = self
            .map
            .keys()
            .map(|k| k.as_str())
            .filter(|k| !self.used.contains(k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            let known: Vec<&str> = self.used.into_iter().collect();
            Err(SolverError::invalid(format!(
                "unknown parameter(s) {unknown:?} for model '{model}'; known: {known:?}"
            )))
        }
    }
}

/// Common scalar parameters shared by all built-ins.
#[derive(Clone, Debug)]
struct Common {
    rho: f64,
    lambda_v: f64,
    mu_v: f64,
    kappa1: f64,
    kappa2: f64,
    zeta_a: f64,
    zeta_b: f64,
    c_v: f64,
    m_mob: f64,
    k_cond: f64,
}

impl Common {
    fn read(p: &mut Params) -> Self {
        Common {
            rho: p.get("rho", 1.0),
            lambda_v: p.get("lambda_v", 0.0),
            mu_v: p.get("mu_v", 0.5),
            kappa1: p.get("kappa1", 1e-2),
            kappa2: p.get("kappa2", 1e-2),
            zeta_a: p.get("zeta_a", 0.1),
            zeta_b: p.get("zeta_b", 0.5),
            c_v: p.get("c_v", 1.0),
            m_mob: p.get("mobility", 1.0),
            k_cond: p.get("conductivity", 1.0),
        }
    }

    fn validate(&self, model: &str) -> Result<()> {
        let positive = [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("zeta_b", self.zeta_b),
            ("c_v", self.c_v),
            ("mobility", self.m_mob),
            ("conductivity", self.k_cond),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(SolverError::invalid(format!(
                    "{model}: parameter {name} must be > 0, got {v}"
                )));
            }
        }
        let nonneg = [
            ("rho", self.rho),
            ("lambda_v", self.lambda_v),
            ("mu_v", self.mu_v),
            ("zeta_a", self.zeta_a),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(SolverError::invalid(format!(
                    "{model}: parameter {name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The heat-equation free-energy part used by all built-ins:
/// φ = c_v θ(1 − ln θ) for θ > 0, extended by 0 for θ ≤ 0 together with
/// all its derivatives (the θ ≤ 0 convention).
fn phi_term_caloric(c_v: f64, n: usize, theta: f64) -> ThermEval {
    if theta > 0.0 {
        ThermEval {
            value: c_v * theta * (1.0 - theta.ln()),
            d_theta: -c_v * theta.ln(),
            d_chi: vec![0.0; n],
            d_theta_theta: -c_v / theta,
            d_chi_theta: vec![0.0; n],
        }
    } else {
        ThermEval {
            value: 0.0,
            d_theta: 0.0,
            d_chi: vec![0.0; n],
            d_theta_theta: 0.0,
            d_chi_theta: vec![0.0; n],
        }
    }
}

// ---------------------------------------------------------------------------
// Hydride model
// ---------------------------------------------------------------------------

/// Metal/hydride phase change: scalar phase fraction χ driving a dilatational
/// eigenstrain, damage-degraded quadratic elasticity, and a quadratic penalty
/// tying χ to the solute concentration:
///
///   φ_mech = (δ + d)(½ C E:E + ½ λ tr(E)²),  φ_chem = ½ k (χ − c)²,
///   φ_term = c_v θ (1 − ln θ).
#[derive(Clone, Debug)]
pub struct HydrideModel {
    dim: usize,
    stiffness: f64,
    lambda: f64,
    delta: f64,
    k_chem: f64,
    common: Common,
    alpha0: f64,
    chi_lo: f64,
    chi_hi: f64,
    coupling: Vec<Sym2>,
}

impl HydrideModel {
    pub fn from_params(dim: usize, map: &BTreeMap<String, f64>) -> Result<Self> {
        check_dim(dim)?;
        let mut p = Params::new(map);
        let common = Common::read(&mut p);
        let model = HydrideModel {
            dim,
            stiffness: p.get("stiffness", 1.0),
            lambda: p.get("lambda", 0.0),
            delta: p.get("delta", 0.1),
            k_chem: p.get("k_chem", 2.0),
            alpha0: p.get("alpha0", 0.5),
            chi_lo: p.get("chi_lo", 0.0),
            chi_hi: p.get("chi_hi", 1.0),
            coupling: vec![Sym2::diag(p.get("e_c", 0.2), dim)],
            common,
        };
        p.finish("hydride")?;
        model.common.validate("hydride")?;
        if !(model.stiffness > 0.0 && model.delta > 0.0 && model.k_chem > 0.0) {
            return Err(SolverError::invalid(
                "hydride: stiffness, delta, k_chem must be > 0".to_string(),
            ));
        }
        if !(model.lambda >= 0.0 && model.alpha0 > 0.0 && model.chi_lo < model.chi_hi) {
            return Err(SolverError::invalid(
                "hydride: need lambda >= 0, alpha0 > 0, chi_lo < chi_hi".to_string(),
            ));
        }
        Ok(model)
    }

    /// Fixed small instance for unit tests: C = 1, δ = 0.1, k = 2, c_v = 2.
    pub fn for_tests(dim: usize) -> Self {
        let mut map = BTreeMap::new();
        map.insert("c_v".to_string(), 2.0);
        HydrideModel::from_params(dim, &map).expect("test model parameters are valid")
    }

    pub fn c_v(&self) -> f64 {
        self.common.c_v
    }

    fn elastic(&self, e: &Sym2) -> (f64, [f64; 3]) {
        // ½ C E:E + ½ λ tr(E)² with plain component partials.
        let t = e.trace();
        let value = 0.5 * self.stiffness * e.norm2() + 0.5 * self.lambda * t * t;
        let grad = [
            self.stiffness * e.xx + self.lambda * t,
            self.stiffness * e.yy + self.lambda * t,
            2.0 * self.stiffness * e.xy,
        ];
        (value, grad)
    }
}

impl MaterialModel for HydrideModel {
    fn name(&self) -> &str {
        "hydride"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn n_phase(&self) -> usize {
        1
    }

    fn rho(&self) -> f64 {
        self.common.rho
    }

    fn kappa1(&self) -> f64 {
        self.common.kappa1
    }

    fn kappa2(&self) -> f64 {
        self.common.kappa2
    }

    fn chi_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![self.chi_lo], vec![self.chi_hi])
    }

    fn coupling(&self) -> &[Sym2] {
        &self.coupling
    }

    fn visc(&self) -> (f64, f64) {
        (self.common.lambda_v, self.common.mu_v)
    }

    fn m_semiconvex(&self) -> f64 {
        // φ_mech has no direct χ dependence and φ_chem is convex in χ:
        // (E, χ) ↦ φ_mechchem is already separately and jointly convex.
        0.0
    }

    fn zeta_b_min(&self) -> f64 {
        self.common.zeta_b
    }

    fn zeta_coeffs(&self, _s: &StateSample) -> ZetaCoeffs {
        ZetaCoeffs {
            a: self.common.zeta_a,
            b: self.common.zeta_b,
        }
    }

    fn phi_mech(&self, e: &Sym2, _chi: &[f64], d: f64) -> Result<MechEval> {
        let (el, g) = self.elastic(e);
        let scale = self.delta + d;
        Ok(MechEval {
            value: scale * el,
            d_e: [scale * g[0], scale * g[1], scale * g[2]],
            d_chi: vec![0.0],
            d_d: el,
        })
    }

    fn phi_mech_hess(&self, _e: &Sym2, _chi: &[f64], d: f64) -> Result<MechHess> {
        let s = self.delta + d;
        let (c, l) = (self.stiffness, self.lambda);
        Ok(MechHess {
            ee: [
                [s * (c + l), s * l, 0.0],
                [s * l, s * (c + l), 0.0],
                [0.0, 0.0, 2.0 * s * c],
            ],
            e_chi: vec![[0.0; 3]],
            chi_chi: vec![0.0],
        })
    }

    fn phi_mech_d2d(&self, e: &Sym2, _chi: &[f64], d: f64) -> Result<(f64, f64, f64)> {
        let (el, _) = self.elastic(e);
        Ok(((self.delta + d) * el, el, 0.0))
    }

    fn phi_chem(&self, chi: &[f64], c: f64) -> Result<ChemEval> {
        let k = self.k_chem;
        let r = chi[0] - c;
        Ok(ChemEval {
            value: 0.5 * k * r * r,
            d_chi: vec![k * r],
            d_c: -k * r,
            d_cc: k,
            d_chi_c: vec![-k],
            d_chi_chi: vec![k],
        })
    }

    fn phi_term(&self, _chi: &[f64], theta: f64) -> Result<ThermEval> {
        Ok(phi_term_caloric(self.common.c_v, 1, theta))
    }

    fn e_term(&self, _chi: &[f64], theta: f64) -> Result<(f64, f64)> {
        Ok((self.common.c_v * theta, self.common.c_v))
    }

    fn alpha(&self, _chi: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        Ok((self.alpha0, vec![0.0], vec![0.0]))
    }

    fn mobility(&self, _s: &StateSample) -> Coeff2 {
        Coeff2::diag(self.common.m_mob, self.dim)
    }

    fn conductivity(&self, _s: &StateSample) -> Coeff2 {
        Coeff2::diag(self.common.k_cond, self.dim)
    }
}

// ---------------------------------------------------------------------------
// Regular-solution model
// ---------------------------------------------------------------------------

/// Hydride model enriched by regular-solution mixing: an enthalpic term
/// B χ(1 − χ) (kept with the chemical part so the θ ≤ 0 convention stays
/// exact), the entropic part A θ (χ ln χ + (1−χ) ln(1−χ)) in φ_term, an
/// affine toughness α(χ) = α₀ + α₁χ, composition-dependent mobility, and a
/// temperature-dependent conductivity.
#[derive(Clone, Debug)]
pub struct RegularSolutionModel {
    base: HydrideModel,
    a_ent: f64,
    b_mix: f64,
    alpha1: f64,
    m_chi: f64,
    k_theta: f64,
}

impl RegularSolutionModel {
    pub fn from_params(dim: usize, map: &BTreeMap<String, f64>) -> Result<Self> {
        check_dim(dim)?;
        let mut p = Params::new(map);
        let common = Common::read(&mut p);
        let base = HydrideModel {
            dim,
            stiffness: p.get("stiffness", 1.0),
            lambda: p.get("lambda", 0.0),
            delta: p.get("delta", 0.1),
            k_chem: p.get("k_chem", 2.0),
            alpha0: p.get("alpha0", 0.5),
            chi_lo: p.get("chi_lo", 0.05),
            chi_hi: p.get("chi_hi", 0.95),
            coupling: vec![Sym2::diag(p.get("e_c", 0.2), dim)],
            common,
        };
        let model = RegularSolutionModel {
            a_ent: p.get("a_ent", 0.2),
            b_mix: p.get("b_mix", 1.5),
            alpha1: p.get("alpha1", 0.2),
            m_chi: p.get("m_chi", 1.0),
            k_theta: p.get("k_theta", 1.0),
            base,
        };
        p.finish("regular_solution")?;
        model.base.common.validate("regular_solution")?;
        let b = &model.base;
        if !(b.chi_lo > 0.0 && b.chi_hi < 1.0 && b.chi_lo < b.chi_hi) {
            return Err(SolverError::invalid(
                "regular_solution: chi box must satisfy 0 < chi_lo < chi_hi < 1".to_string(),
            ));
        }
        if !(model.a_ent >= 0.0 && model.m_chi >= 0.0 && model.k_theta >= 0.0) {
            return Err(SolverError::invalid(
                "regular_solution: a_ent, m_chi, k_theta must be >= 0".to_string(),
            ));
        }
        let alpha_min = (b.alpha0 + model.alpha1 * b.chi_lo).min(b.alpha0 + model.alpha1 * b.chi_hi);
        if !(alpha_min > 0.0) {
            return Err(SolverError::invalid(format!(
                "regular_solution: alpha(chi) must stay > 0 on the chi box (min {alpha_min})"
            )));
        }
        Ok(model)
    }

    fn mixing_entropy(chi: f64) -> Result<(f64, f64)> {
        if !(chi > 0.0 && chi < 1.0) {
            return Err(SolverError::domain(format!(
                "regular_solution: chi = {chi} outside (0,1) in mixing entropy"
            )));
        }
        let s = chi * chi.ln() + (1.0 - chi) * (1.0 - chi).ln();
        let ds = chi.ln() - (1.0 - chi).ln();
        Ok((s, ds))
    }
}

impl MaterialModel for RegularSolutionModel {
    fn name(&self) -> &str {
        "regular_solution"
    }

    fn dim(&self) -> usize {
        self.base.dim
    }

    fn n_phase(&self) -> usize {
        1
    }

    fn rho(&self) -> f64 {
        self.base.common.rho
    }

    fn kappa1(&self) -> f64 {
        self.base.common.kappa1
    }

    fn kappa2(&self) -> f64 {
        self.base.common.kappa2
    }

    fn chi_box(&self) -> (Vec<f64>, Vec<f64>) {
        self.base.chi_box()
    }

    fn coupling(&self) -> &[Sym2] {
        &self.base.coupling
    }

    fn visc(&self) -> (f64, f64) {
        self.base.visc()
    }

    fn m_semiconvex(&self) -> f64 {
        // Only the mixing enthalpy B χ(1−χ) is concave in χ (curvature −2B
        // against the penalty's +k); strain coupling is absent.
        (self.b_mix - 0.5 * self.base.k_chem).max(0.0)
    }

    fn zeta_b_min(&self) -> f64 {
        self.base.common.zeta_b
    }

    fn zeta_coeffs(&self, s: &StateSample) -> ZetaCoeffs {
        self.base.zeta_coeffs(s)
    }

    fn phi_mech(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<MechEval> {
        self.base.phi_mech(e, chi, d)
    }

    fn phi_mech_hess(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<MechHess> {
        self.base.phi_mech_hess(e, chi, d)
    }

    fn phi_mech_d2d(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<(f64, f64, f64)> {
        self.base.phi_mech_d2d(e, chi, d)
    }

    fn phi_chem(&self, chi: &[f64], c: f64) -> Result<ChemEval> {
        let mut eval = self.base.phi_chem(chi, c)?;
        let b = self.b_mix;
        let x = chi[0];
        eval.value += b * x * (1.0 - x);
        eval.d_chi[0] += b * (1.0 - 2.0 * x);
        eval.d_chi_chi[0] += -2.0 * b;
        Ok(eval)
    }

    fn phi_term(&self, chi: &[f64], theta: f64) -> Result<ThermEval> {
        let mut eval = phi_term_caloric(self.base.common.c_v, 1, theta);
        if theta > 0.0 {
            let (s, ds) = Self::mixing_entropy(chi[0])?;
            eval.value += self.a_ent * theta * s;
            eval.d_theta += self.a_ent * s;
            eval.d_chi[0] = self.a_ent * theta * ds;
            eval.d_chi_theta[0] = self.a_ent * ds;
        }
        Ok(eval)
    }

    fn e_term(&self, _chi: &[f64], theta: f64) -> Result<(f64, f64)> {
        // The entropic part is linear in θ and cancels in φ − θ ∂_θφ.
        Ok((self.base.common.c_v * theta, self.base.common.c_v))
    }

    fn alpha(&self, chi: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        Ok((
            self.base.alpha0 + self.alpha1 * chi[0],
            vec![self.alpha1],
            vec![0.0],
        ))
    }

    fn mobility(&self, s: &StateSample) -> Coeff2 {
        let x = s.chi[0].clamp(0.0, 1.0);
        let factor = 1.0 + self.m_chi * x * (1.0 - x);
        Coeff2::diag(self.base.common.m_mob * factor, self.base.dim)
    }

    fn conductivity(&self, s: &StateSample) -> Coeff2 {
        let t = s.theta.max(0.0);
        let factor = 1.0 + self.k_theta * t / (1.0 + t);
        Coeff2::diag(self.base.common.k_cond * factor, self.base.dim)
    }

    fn c_range_hint(&self) -> (f64, f64) {
        (-0.5, 1.5)
    }
}

// ---------------------------------------------------------------------------
// Regularized poroelastic model
// ---------------------------------------------------------------------------

/// Poroelasticity with plastic strain π, porosity p, and water content γ as
/// phase components (χ = (π, p, γ), so N = dim-dependent): square-root
/// regularized Lamé and Biot terms plus unregularized coercive floors,
///
///   φ_mech = ½ λ̄(δ+d) tr²/√(1+ε tr²) + Ḡ(δ+d)|E|²/√(1+ε|E|²)
///          + ½ M_b (β trE − γ + p)²/√(1+ε tr²) + ½ λ₀ tr² + G₀|E|²,
///   φ_chem = ½ k (γ − c)²,  φ_term = c_v θ(1 − ln θ).
///
/// The strain coupling is 𝔼χ = π. Mechanics Hessians are symmetrized central
/// differences of the analytic gradient (the value and gradient stay exact).
#[derive(Clone, Debug)]
pub struct PoroRegularizedModel {
    dim: usize,
    n_pl: usize,
    lambda_bar: f64,
    g_bar: f64,
    m_biot: f64,
    beta: f64,
    eps_reg: f64,
    lambda0: f64,
    g0: f64,
    delta: f64,
    k_chem: f64,
    common: Common,
    alpha0: f64,
    pi_max: f64,
    p_max: f64,
    m_semi: f64,
    coupling: Vec<Sym2>,
}

impl PoroRegularizedModel {
    pub fn from_params(dim: usize, map: &BTreeMap<String, f64>) -> Result<Self> {
        check_dim(dim)?;
        let n_pl = if dim == 1 { 1 } else { 3 };
        let mut p = Params::new(map);
        let common = Common::read(&mut p);
        let m_biot = p.get("m_biot", 0.5);
        let beta = p.get("beta", 0.3);
        let g0 = p.get("g0", 0.1);
        // Generous default: dominate the Biot cross-coupling against the
        // unregularized G0 floor; spot-checked by sampled midpoint convexity.
        let m_semi_default = 2.0 * m_biot * (1.0 + beta) * (1.0 + m_biot * (1.0 + beta) / g0);
        let mut coupling = Vec::new();
        for j in 0..n_pl {
            let mut t = Sym2::ZERO;
            match j {
                0 => t.xx = 1.0,
                1 => t.yy = 1.0,
                _ => t.xy = 1.0,
            }
            coupling.push(t);
        }
        coupling.push(Sym2::ZERO); // porosity
        coupling.push(Sym2::ZERO); // water content
        let model = PoroRegularizedModel {
            dim,
            n_pl,
            lambda_bar: p.get("lambda_bar", 1.0),
            g_bar: p.get("g_bar", 1.0),
            m_biot,
            beta,
            eps_reg: p.get("eps_reg", 0.01),
            lambda0: p.get("lambda0", 0.1),
            g0,
            delta: p.get("delta", 0.1),
            k_chem: p.get("k_chem", 2.0),
            alpha0: p.get("alpha0", 0.5),
            pi_max: p.get("pi_max", 0.5),
            p_max: p.get("p_max", 0.5),
            m_semi: p.get("m_semiconvex", m_semi_default),
            common,
            coupling,
        };
        p.finish("poroelastic_regularized")?;
        model.common.validate("poroelastic_regularized")?;
        if !(model.g0 > 0.0
            && model.lambda0 >= 0.0
            && model.eps_reg > 0.0
            && model.delta > 0.0
            && model.lambda_bar >= 0.0
            && model.g_bar >= 0.0
            && model.m_biot >= 0.0
            && model.k_chem > 0.0
            && model.alpha0 > 0.0
            && model.pi_max > 0.0
            && model.p_max > 0.0)
        {
            return Err(SolverError::invalid(
                "poroelastic_regularized: parameter bounds violated (need g0 > 0, eps_reg > 0, \
                 delta > 0, k_chem > 0, alpha0 > 0, remaining moduli >= 0)"
                    .to_string(),
            ));
        }
        Ok(model)
    }

    fn split_chi<'a>(&self, chi: &'a [f64]) -> (&'a [f64], f64, f64) {
        (&chi[..self.n_pl], chi[self.n_pl], chi[self.n_pl + 1])
    }

    /// Value and plain partials w.r.t. (E comps, p, γ, d) of φ_mech.
    fn mech_parts(&self, e: &Sym2, p: f64, gamma: f64, d: f64) -> (f64, [f64; 3], f64, f64, f64) {
        let eps = self.eps_reg;
        let t = e.trace();
        let n2 = e.norm2();
        let rt = (1.0 + eps * t * t).sqrt();
        let rn = (1.0 + eps * n2).sqrt();
        let q = self.beta * t - gamma + p;
        let scale = self.delta + d;
        let a_l = 0.5 * self.lambda_bar * scale;
        let a_g = self.g_bar * scale;
        let a_m = 0.5 * self.m_biot;

        let value = a_l * t * t / rt
            + a_g * n2 / rn
            + a_m * q * q / rt
            + 0.5 * self.lambda0 * t * t
            + self.g0 * n2;

        // d/dt [t²/rt] = t(2 + εt²)/rt³ ; d/dn2 [n2/rn] = (1 + εn2/2)/rn³.
        let df1_dt = t * (2.0 + eps * t * t) / (rt * rt * rt);
        let df2_dn2 = (1.0 + 0.5 * eps * n2) / (rn * rn * rn);
        // Biot: ∂/∂q [q²/rt] = 2q/rt ; ∂/∂t at fixed q: −q²εt/rt³.
        let dq = 2.0 * q / rt;
        let dbiot_dt = -q * q * eps * t / (rt * rt * rt);

        let dt_dv = [1.0, 1.0, 0.0];
        let dn2_dv = [2.0 * e.xx, 2.0 * e.yy, 4.0 * e.xy];
        let mut d_e = [0.0; 3];
        for i in 0..3 {
            d_e[i] = a_l * df1_dt * dt_dv[i]
                + a_g * df2_dn2 * dn2_dv[i]
                + a_m * (dq * self.beta + dbiot_dt) * dt_dv[i]
                + self.lambda0 * t * dt_dv[i]
                + self.g0 * dn2_dv[i];
        }
        let d_p = a_m * dq;
        let d_gamma = -a_m * dq;
        let d_d = 0.5 * self.lambda_bar * t * t / rt + self.g_bar * n2 / rn;
        (value, d_e, d_p, d_gamma, d_d)
    }
}

impl MaterialModel for PoroRegularizedModel {
    fn name(&self) -> &str {
        "poroelastic_regularized"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn n_phase(&self) -> usize {
        self.n_pl + 2
    }

    fn rho(&self) -> f64 {
        self.common.rho
    }

    fn kappa1(&self) -> f64 {
        self.common.kappa1
    }

    fn kappa2(&self) -> f64 {
        self.common.kappa2
    }

    fn chi_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![-self.pi_max; self.n_pl];
        let mut hi = vec![self.pi_max; self.n_pl];
        lo.push(-self.p_max);
        hi.push(self.p_max);
        lo.push(0.0);
        hi.push(1.0);
        (lo, hi)
    }

    fn coupling(&self) -> &[Sym2] {
        &self.coupling
    }

    fn visc(&self) -> (f64, f64) {
        (self.common.lambda_v, self.common.mu_v)
    }

    fn m_semiconvex(&self) -> f64 {
        self.m_semi
    }

    fn zeta_b_min(&self) -> f64 {
        self.common.zeta_b
    }

    fn zeta_coeffs(&self, _s: &StateSample) -> ZetaCoeffs {
        ZetaCoeffs {
            a: self.common.zeta_a,
            b: self.common.zeta_b,
        }
    }

    fn phi_mech(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<MechEval> {
        let (_, p, gamma) = self.split_chi(chi);
        let (value, d_e, d_p, d_gamma, d_d) = self.mech_parts(e, p, gamma, d);
        let mut d_chi = vec![0.0; self.n_phase()];
        d_chi[self.n_pl] = d_p;
        d_chi[self.n_pl + 1] = d_gamma;
        Ok(MechEval {
            value,
            d_e,
            d_chi,
            d_d,
        })
    }

    fn phi_mech_hess(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<MechHess> {
        // Symmetrized central differences of the analytic gradient in the
        // 3 + N mechanics variables (E comps, χ); derivatives w.r.t. the
        // plastic components vanish because E already is the elastic strain.
        let n = self.n_phase();
        let dofs = 3 + n;
        let grad_at = |e: &Sym2, chi: &[f64]| -> Vec<f64> {
            let (_, p, gamma) = self.split_chi(chi);
            let (_, d_e, d_p, d_gamma, _) = self.mech_parts(e, p, gamma, d);
            let mut g = vec![0.0; dofs];
            g[..3].copy_from_slice(&d_e);
            g[3 + self.n_pl] = d_p;
            g[3 + self.n_pl + 1] = d_gamma;
            g
        };
        let mut h = vec![vec![0.0; dofs]; dofs];
        let mut e_p = *e;
        let mut chi_p = chi.to_vec();
        for j in 0..dofs {
            let base = match j {
                0 => e.xx,
                1 => e.yy,
                2 => e.xy,
                _ => chi[j - 3],
            };
            let step = 1e-6 * (1.0 + base.abs());
            let mut probe = |delta: f64| -> Vec<f64> {
                match j {
                    0 => e_p.xx = base + delta,
                    1 => e_p.yy = base + delta,
                    2 => e_p.xy = base + delta,
                    _ => chi_p[j - 3] = base + delta,
                }
                let g = grad_at(&e_p, &chi_p);
                match j {
                    0 => e_p.xx = base,
                    1 => e_p.yy = base,
                    2 => e_p.xy = base,
                    _ => chi_p[j - 3] = base,
                }
                g
            };
            let gp = probe(step);
            let gm = probe(-step);
            for i in 0..dofs {
                h[i][j] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        let mut ee = [[0.0; 3]; 3];
        for (i, row) in ee.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = 0.5 * (h[i][j] + h[j][i]);
            }
        }
        let mut e_chi = vec![[0.0; 3]; n];
        for (j, block) in e_chi.iter_mut().enumerate() {
            for (i, entry) in block.iter_mut().enumerate() {
                *entry = 0.5 * (h[i][3 + j] + h[3 + j][i]);
            }
        }
        let mut chi_chi = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                chi_chi[i * n + j] = 0.5 * (h[3 + i][3 + j] + h[3 + j][3 + i]);
            }
        }
        Ok(MechHess { ee, e_chi, chi_chi })
    }

    fn phi_mech_d2d(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<(f64, f64, f64)> {
        let (_, p, gamma) = self.split_chi(chi);
        let (value, _, _, _, d_d) = self.mech_parts(e, p, gamma, d);
        Ok((value, d_d, 0.0))
    }

    fn phi_chem(&self, chi: &[f64], c: f64) -> Result<ChemEval> {
        let n = self.n_phase();
        let gamma = chi[self.n_pl + 1];
        let k = self.k_chem;
        let r = gamma - c;
        let mut d_chi = vec![0.0; n];
        d_chi[self.n_pl + 1] = k * r;
        let mut d_chi_c = vec![0.0; n];
        d_chi_c[self.n_pl + 1] = -k;
        let mut d_chi_chi = vec![0.0; n * n];
        d_chi_chi[(self.n_pl + 1) * n + self.n_pl + 1] = k;
        Ok(ChemEval {
            value: 0.5 * k * r * r,
            d_chi,
            d_c: -k * r,
            d_cc: k,
            d_chi_c,
            d_chi_chi,
        })
    }

    fn phi_term(&self, _chi: &[f64], theta: f64) -> Result<ThermEval> {
        Ok(phi_term_caloric(self.common.c_v, self.n_phase(), theta))
    }

    fn e_term(&self, _chi: &[f64], theta: f64) -> Result<(f64, f64)> {
        Ok((self.common.c_v * theta, self.common.c_v))
    }

    fn alpha(&self, _chi: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let n = self.n_phase();
        Ok((self.alpha0, vec![0.0; n], vec![0.0; n * n]))
    }

    fn mobility(&self, _s: &StateSample) -> Coeff2 {
        Coeff2::diag(self.common.m_mob, self.dim)
    }

    fn conductivity(&self, _s: &StateSample) -> Coeff2 {
        Coeff2::diag(self.common.k_cond, self.dim)
    }

    fn c_range_hint(&self) -> (f64, f64) {
        (-0.5, 1.5)
    }
}

/// Construct a built-in model by config name.
pub fn build_model(
    name: &str,
    dim: usize,
    params: &BTreeMap<String, f64>,
) -> Result<Box<dyn MaterialModel>> {
    match name {
        "hydride" => Ok(Box::new(HydrideModel::from_params(dim, params)?)),
        "regular_solution" => Ok(Box::new(RegularSolutionModel::from_params(dim, params)?)),
        "poroelastic_regularized" => {
            Ok(Box::new(PoroRegularizedModel::from_params(dim, params)?))
        }
        other => Err(SolverError::invalid(format!(
            "unknown model '{other}'; built-ins: hydride, regular_solution, \
             poroelastic_regularized"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{legendre_chem, theta_from_w, validate_model, SampleSpec};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
        entries
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect()
    }

    fn builtin_suite() -> Vec<Box<dyn MaterialModel>> {
        vec![
            Box::new(HydrideModel::for_tests(1)),
            Box::new(HydrideModel::from_params(2, &params(&[("lambda", 0.5)])).unwrap()),
            Box::new(RegularSolutionModel::from_params(1, &BTreeMap::new()).unwrap()),
            Box::new(RegularSolutionModel::from_params(2, &BTreeMap::new()).unwrap()),
            Box::new(PoroRegularizedModel::from_params(1, &BTreeMap::new()).unwrap()),
            Box::new(PoroRegularizedModel::from_params(2, &BTreeMap::new()).unwrap()),
        ]
    }

    #[test]
    fn hydride_mech_pinned_values() {
        let m = HydrideModel::for_tests(1);
        // Zero strain.
        let at_zero = m.phi_mech(&Sym2::ZERO, &[0.3], 1.0).unwrap();
        assert_eq!(at_zero.value, 0.0);
        assert_eq!(at_zero.d_e, [0.0; 3]);
        // E = 2, d = 1, C = 1, δ = 0.1: value 1.1·2 = 2.2, ∂_d = ½·4 = 2.
        let e = Sym2::scalar(2.0);
        let ev = m.phi_mech(&e, &[0.0], 1.0).unwrap();
        assert_relative_eq!(ev.value, 2.2, max_relative = 1e-14);
        assert_relative_eq!(ev.d_d, 2.0, max_relative = 1e-14);
        assert_eq!(ev.d_chi, vec![0.0]);
        let (v2, dd, ddd) = m.phi_mech_d2d(&e, &[0.0], 1.0).unwrap();
        assert_relative_eq!(v2, 2.2, max_relative = 1e-14);
        assert_relative_eq!(dd, 2.0, max_relative = 1e-14);
        assert_eq!(ddd, 0.0);
    }

    #[test]
    fn hydride_chem_pinned_values() {
        let m = HydrideModel::for_tests(1);
        let on_manifold = m.phi_chem(&[0.5], 0.5).unwrap();
        assert_eq!(on_manifold.value, 0.0);
        assert_eq!(on_manifold.d_c, 0.0);
        let ev = m.phi_chem(&[0.5], 1.0).unwrap();
        assert_relative_eq!(ev.value, 0.25, max_relative = 1e-14);
        assert_relative_eq!(ev.d_c, 1.0, max_relative = 1e-14);
        assert_relative_eq!(ev.d_cc, 2.0, max_relative = 1e-14);
        assert_relative_eq!(ev.d_chi_c[0], -2.0, max_relative = 1e-14);
    }

    #[test]
    fn caloric_phi_term_pinned_values() {
        let m = HydrideModel::for_tests(1); // c_v = 2
        let at_one = m.phi_term(&[0.2], 1.0).unwrap();
        assert_relative_eq!(at_one.value, 2.0, max_relative = 1e-14);
        assert_eq!(at_one.d_theta, 0.0);
        for theta in [0.37, 1.9] {
            let t = m.phi_term(&[0.2], theta).unwrap();
            assert_relative_eq!(-theta * t.d_theta_theta, 2.0, max_relative = 1e-13);
        }
        let near_zero = m.phi_term(&[0.2], 1e-14).unwrap();
        assert!(near_zero.value.abs() < 1e-12);
        let below = m.phi_term(&[0.2], -0.3).unwrap();
        assert_eq!(below.value, 0.0);
        assert_eq!(below.d_chi, vec![0.0]);
    }

    #[test]
    fn e_term_pinned_values() {
        let m = HydrideModel::for_tests(1); // c_v = 2
        let (w, _) = m.e_term(&[0.1], 3.0).unwrap();
        assert_relative_eq!(w, 6.0, max_relative = 1e-14);
        let (w0, _) = m.e_term(&[0.1], 0.0).unwrap();
        assert_eq!(w0, 0.0);
        // Entropic mixing contributes nothing to the enthalpy.
        let rs = RegularSolutionModel::from_params(1, &BTreeMap::new()).unwrap();
        let theta = 1.3;
        let t = rs.phi_term(&[0.4], theta).unwrap();
        let (w_rs, _) = rs.e_term(&[0.4], theta).unwrap();
        assert_relative_eq!(w_rs, t.value - theta * t.d_theta, max_relative = 1e-12);
    }

    #[test]
    fn theta_from_w_linear_and_quadratic() {
        let m = HydrideModel::for_tests(1); // e_term = 2θ
        assert_relative_eq!(theta_from_w(&m, &[0.1], 6.0).unwrap(), 3.0, epsilon = 1e-10);
        assert_eq!(theta_from_w(&m, &[0.1], 0.0).unwrap(), 0.0);

        // Model with e_term(θ) = θ + θ²/2 via φ_term = θ(1 − ln θ) − θ²/2,
        // exercising the default e_term derivation.
        struct QuadHeat;
        impl MaterialModel for QuadHeat {
            fn name(&self) -> &str {
                "quad-heat"
            }
            fn dim(&self) -> usize {
                1
            }
            fn n_phase(&self) -> usize {
                1
            }
            fn rho(&self) -> f64 {
                0.0
            }
            fn kappa1(&self) -> f64 {
                1.0
            }
            fn kappa2(&self) -> f64 {
                1.0
            }
            fn chi_box(&self) -> (Vec<f64>, Vec<f64>) {
                (vec![0.0], vec![1.0])
            }
            fn coupling(&self) -> &[Sym2] {
                &[]
            }
            fn visc(&self) -> (f64, f64) {
                (0.0, 0.0)
            }
            fn m_semiconvex(&self) -> f64 {
                0.0
            }
            fn zeta_b_min(&self) -> f64 {
                1.0
            }
            fn zeta_coeffs(&self, _s: &StateSample) -> ZetaCoeffs {
                ZetaCoeffs { a: 0.0, b: 1.0 }
            }
            fn phi_mech(&self, _e: &Sym2, _chi: &[f64], _d: f64) -> Result<MechEval> {
                unimplemented!()
            }
            fn phi_mech_hess(&self, _e: &Sym2, _chi: &[f64], _d: f64) -> Result<MechHess> {
                unimplemented!()
            }
            fn phi_mech_d2d(&self, _e: &Sym2, _chi: &[f64], _d: f64) -> Result<(f64, f64, f64)> {
                unimplemented!()
            }
            fn phi_chem(&self, _chi: &[f64], _c: f64) -> Result<ChemEval> {
                unimplemented!()
            }
            fn phi_term(&self, _chi: &[f64], theta: f64) -> Result<ThermEval> {
                if theta > 0.0 {
                    Ok(ThermEval {
                        value: theta * (1.0 - theta.ln()) - 0.5 * theta * theta,
                        d_theta: -theta.ln() - theta,
                        d_chi: vec![0.0],
                        d_theta_theta: -1.0 / theta - 1.0,
                        d_chi_theta: vec![0.0],
                    })
                } else {
                    Ok(ThermEval {
                        value: 0.0,
                        d_theta: 0.0,
                        d_chi: vec![0.0],
                        d_theta_theta: 0.0,
                        d_chi_theta: vec![0.0],
                    })
                }
            }
            fn alpha(&self, _chi: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
                Ok((1.0, vec![0.0], vec![0.0]))
            }
            fn mobility(&self, _s: &StateSample) -> Coeff2 {
                Coeff2::diag(1.0, 1)
            }
            fn conductivity(&self, _s: &StateSample) -> Coeff2 {
                Coeff2::diag(1.0, 1)
            }
        }
        let q = QuadHeat;
        let (w, _) = q.e_term(&[0.0], 2.0).unwrap();
        assert_relative_eq!(w, 4.0, max_relative = 1e-10);
        assert_relative_eq!(theta_from_w(&q, &[0.0], 1.5).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn theta_from_w_roundtrip_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for model in builtin_suite() {
            let chi = vec![0.4; model.n_phase()];
            let mut prev = -1.0;
            for _ in 0..100 {
                let w = rng.gen_range(0.0..10.0);
                let theta = theta_from_w(model.as_ref(), &chi, w).unwrap();
                let (w_back, _) = model.e_term(&chi, theta).unwrap();
                assert!(
                    (w_back - w).abs() <= 1e-10 * (1.0 + w.abs()),
                    "{}: inversion residual {}",
                    model.name(),
                    w_back - w
                );
                let _ = prev;
                prev = theta;
            }
            // Monotonicity on a sorted sweep.
            let mut last = 0.0;
            for i in 0..50 {
                let w = 0.2 * i as f64;
                let theta = theta_from_w(model.as_ref(), &chi, w).unwrap();
                assert!(theta >= last - 1e-12);
                last = theta;
            }
        }
    }

    #[test]
    fn legendre_chem_pinned_values() {
        let m = HydrideModel::for_tests(1); // k = 2
        let chi = [0.5];
        let (conj, c) = legendre_chem(&m, &chi, 0.0).unwrap();
        assert_relative_eq!(c, 0.5, epsilon = 1e-10);
        assert!(conj.abs() < 1e-10);
        let (conj, c) = legendre_chem(&m, &chi, 1.0).unwrap();
        assert_relative_eq!(c, 1.0, epsilon = 1e-10);
        assert_relative_eq!(conj, 0.75, epsilon = 1e-10);
        let (conj, c) = legendre_chem(&m, &chi, -2.0).unwrap();
        assert_relative_eq!(c, -0.5, epsilon = 1e-10);
        assert!(conj.abs() < 1e-10);
    }

    #[test]
    fn legendre_chem_fenchel_young_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for model in builtin_suite() {
            let (lo, hi) = model.chi_box();
            for _ in 0..40 {
                let chi: Vec<f64> = lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h)| {
                        let pad = 1e-3 * (h - l);
                        rng.gen_range(l + pad..h - pad)
                    })
                    .collect();
                let mu = rng.gen_range(-3.0..3.0);
                let (conj, c) = legendre_chem(model.as_ref(), &chi, mu).unwrap();
                let phi = model.phi_chem(&chi, c).unwrap().value;
                assert!(
                    (mu * c - phi - conj).abs() <= 1e-9 * (1.0 + conj.abs()),
                    "{}: Fenchel-Young residual {}",
                    model.name(),
                    mu * c - phi - conj
                );
            }
        }
    }

    #[test]
    fn zeta_eval_examples() {
        let (v, sub, a) = zeta_eval(&ZetaCoeffs { a: 0.0, b: 0.5 }, &[2.0, 0.0]);
        assert_relative_eq!(v, 2.0, max_relative = 1e-15);
        assert_eq!(sub, vec![2.0, 0.0]);
        assert_eq!(a, 0.0);
        let (v, _, _) = zeta_eval(&ZetaCoeffs { a: 1.0, b: 0.5 }, &[1.0, 0.0]);
        assert_relative_eq!(v, 1.5, max_relative = 1e-15);
        let (v0, _, _) = zeta_eval(&ZetaCoeffs { a: 1.0, b: 0.5 }, &[0.0, 0.0]);
        assert_eq!(v0, 0.0);
    }

    /// Central-difference check of every analytic first derivative on random
    /// admissible points (step 1e-6, relative tolerance 1e-5).
    #[test]
    fn builtin_first_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let h = 1e-6;
        let close = |analytic: f64, fd: f64| {
            let scale = 1.0 + analytic.abs().max(fd.abs());
            assert!(
                (analytic - fd).abs() <= 1e-5 * scale,
                "derivative mismatch: analytic {analytic}, fd {fd}"
            );
        };
        for model in builtin_suite() {
            let (lo, hi) = model.chi_box();
            let n = model.n_phase();
            for _ in 0..100 {
                let chi: Vec<f64> = lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h2)| {
                        let pad = 1e-2 * (h2 - l);
                        rng.gen_range(l + pad..h2 - pad)
                    })
                    .collect();
                let e = Sym2 {
                    xx: rng.gen_range(-1.5..1.5),
                    yy: if model.dim() == 2 {
                        rng.gen_range(-1.5..1.5)
                    } else {
                        0.0
                    },
                    xy: if model.dim() == 2 {
                        rng.gen_range(-1.5..1.5)
                    } else {
                        0.0
                    },
                };
                let d = rng.gen_range(0.0..1.0);
                let c = rng.gen_range(-0.4..1.4);
                let theta = rng.gen_range(0.1..3.0);

                // φ_mech strain partials.
                let ev = model.phi_mech(&e, &chi, d).unwrap();
                let comps = [(e.xx, 0), (e.yy, 1), (e.xy, 2)];
                for (base, idx) in comps {
                    if model.dim() == 1 && idx > 0 {
                        continue;
                    }
                    let mut ep = e;
                    let mut em = e;
                    match idx {
                        0 => {
                            ep.xx = base + h;
                            em.xx = base - h;
                        }
                        1 => {
                            ep.yy = base + h;
                            em.yy = base - h;
                        }
                        _ => {
                            ep.xy = base + h;
                            em.xy = base - h;
                        }
                    }
                    let fd = (model.phi_mech(&ep, &chi, d).unwrap().value
                        - model.phi_mech(&em, &chi, d).unwrap().value)
                        / (2.0 * h);
                    close(ev.d_e[idx], fd);
                }
                // φ_mech χ and d partials.
                for j in 0..n {
                    let mut cp = chi.clone();
                    let mut cm = chi.clone();
                    cp[j] += h;
                    cm[j] -= h;
                    let fd = (model.phi_mech(&e, &cp, d).unwrap().value
                        - model.phi_mech(&e, &cm, d).unwrap().value)
                        / (2.0 * h);
                    close(ev.d_chi[j], fd);
                }
                let fd_d = (model.phi_mech(&e, &chi, d + h).unwrap().value
                    - model.phi_mech(&e, &chi, d - h).unwrap().value)
                    / (2.0 * h);
                close(ev.d_d, fd_d);

                // φ_chem partials.
                let ce = model.phi_chem(&chi, c).unwrap();
                let fd_c = (model.phi_chem(&chi, c + h).unwrap().value
                    - model.phi_chem(&chi, c - h).unwrap().value)
                    / (2.0 * h);
                close(ce.d_c, fd_c);
                let fd_cc = (model.phi_chem(&chi, c + h).unwrap().d_c
                    - model.phi_chem(&chi, c - h).unwrap().d_c)
                    / (2.0 * h);
                close(ce.d_cc, fd_cc);
                for j in 0..n {
                    let mut cp = chi.clone();
                    let mut cm = chi.clone();
                    cp[j] += h;
                    cm[j] -= h;
                    let fd = (model.phi_chem(&cp, c).unwrap().value
                        - model.phi_chem(&cm, c).unwrap().value)
                        / (2.0 * h);
                    close(ce.d_chi[j], fd);
                    let fd_cross = (model.phi_chem(&cp, c).unwrap().d_c
                        - model.phi_chem(&cm, c).unwrap().d_c)
                        / (2.0 * h);
                    close(ce.d_chi_c[j], fd_cross);
                }

                // φ_term partials.
                let te = model.phi_term(&chi, theta).unwrap();
                let fd_t = (model.phi_term(&chi, theta + h).unwrap().value
                    - model.phi_term(&chi, theta - h).unwrap().value)
                    / (2.0 * h);
                close(te.d_theta, fd_t);
                let fd_tt = (model.phi_term(&chi, theta + h).unwrap().d_theta
                    - model.phi_term(&chi, theta - h).unwrap().d_theta)
                    / (2.0 * h);
                close(te.d_theta_theta, fd_tt);
                for j in 0..n {
                    let mut cp = chi.clone();
                    let mut cm = chi.clone();
                    cp[j] += h;
                    cm[j] -= h;
                    let fd = (model.phi_term(&cp, theta).unwrap().value
                        - model.phi_term(&cm, theta).unwrap().value)
                        / (2.0 * h);
                    close(te.d_chi[j], fd);
                    let fd_cross = (model.phi_term(&cp, theta).unwrap().d_theta
                        - model.phi_term(&cm, theta).unwrap().d_theta)
                        / (2.0 * h);
                    close(te.d_chi_theta[j], fd_cross);
                }
            }
        }
    }

    /// The Hessian blocks must reproduce directional second differences of
    /// the energy (also covers the finite-difference Hessian of the
    /// poroelastic model, since value and gradient are analytic there).
    #[test]
    fn builtin_hessians_match_second_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let h = 1e-4;
        for model in builtin_suite() {
            let (lo, hi) = model.chi_box();
            let n = model.n_phase();
            for _ in 0..25 {
                let chi: Vec<f64> = lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h2)| {
                        let pad = 5e-2 * (h2 - l);
                        rng.gen_range(l + pad..h2 - pad)
                    })
                    .collect();
                let e = Sym2 {
                    xx: rng.gen_range(-1.0..1.0),
                    yy: if model.dim() == 2 {
                        rng.gen_range(-1.0..1.0)
                    } else {
                        0.0
                    },
                    xy: if model.dim() == 2 {
                        rng.gen_range(-1.0..1.0)
                    } else {
                        0.0
                    },
                };
                let d = rng.gen_range(0.0..1.0);
                let hess = model.phi_mech_hess(&e, &chi, d).unwrap();
                // Random direction in (E, χ).
                let de = Sym2 {
                    xx: rng.gen_range(-1.0..1.0),
                    yy: if model.dim() == 2 {
                        rng.gen_range(-1.0..1.0)
                    } else {
                        0.0
                    },
                    xy: if model.dim() == 2 {
                        rng.gen_range(-1.0..1.0)
                    } else {
                        0.0
                    },
                };
                let dchi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let dv = [de.xx, de.yy, de.xy];
                let mut quad = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        quad += dv[i] * hess.ee[i][j] * dv[j];
                    }
                }
                for (j, block) in hess.e_chi.iter().enumerate() {
                    for (i, entry) in block.iter().enumerate() {
                        quad += 2.0 * entry * dv[i] * dchi[j];
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        quad += dchi[i] * hess.chi_chi[i * n + j] * dchi[j];
                    }
                }
                let value_at = |s: f64| -> f64 {
                    let es = Sym2 {
                        xx: e.xx + s * de.xx,
                        yy: e.yy + s * de.yy,
                        xy: e.xy + s * de.xy,
                    };
                    let chis: Vec<f64> =
                        chi.iter().zip(&dchi).map(|(x, dx)| x + s * dx).collect();
                    model.phi_mech(&es, &chis, d).unwrap().value
                };
                let second = (value_at(h) - 2.0 * value_at(0.0) + value_at(-h)) / (h * h);
                let scale = 1.0 + quad.abs().max(second.abs());
                assert!(
                    (quad - second).abs() <= 2e-4 * scale,
                    "{}: Hessian quadratic form {} vs second difference {}",
                    model.name(),
                    quad,
                    second
                );
            }
        }
    }

    #[test]
    fn validate_model_passes_builtins() {
        for model in builtin_suite() {
            let report = validate_model(model.as_ref(), &SampleSpec::default()).unwrap();
            assert!(
                report.passed(),
                "{} failed validation: {:?}",
                model.name(),
                report
                    .entries
                    .iter()
                    .filter(|e| !e.passed)
                    .collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn validate_model_rejects_broken_models() {
        // Sign-flipped elasticity: φ_mech = ½(d − 1)E:E loses coercivity.
        struct Broken(HydrideModel);
        impl MaterialModel for Broken {
            fn name(&self) -> &str {
                "broken"
            }
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn n_phase(&self) -> usize {
                1
            }
            fn rho(&self) -> f64 {
                self.0.rho()
            }
            fn kappa1(&self) -> f64 {
                self.0.kappa1()
            }
            fn kappa2(&self) -> f64 {
                self.0.kappa2()
            }
            fn chi_box(&self) -> (Vec<f64>, Vec<f64>) {
                self.0.chi_box()
            }
            fn coupling(&self) -> &[Sym2] {
                self.0.coupling()
            }
            fn visc(&self) -> (f64, f64) {
                self.0.visc()
            }
            fn m_semiconvex(&self) -> f64 {
                1e6 // deliberately generous; only coercivity should fail
            }
            fn zeta_b_min(&self) -> f64 {
                self.0.zeta_b_min()
            }
            fn zeta_coeffs(&self, s: &StateSample) -> ZetaCoeffs {
                self.0.zeta_coeffs(s)
            }
            fn phi_mech(&self, e: &Sym2, _chi: &[f64], d: f64) -> Result<MechEval> {
                let n2 = e.norm2();
                Ok(MechEval {
                    value: 0.5 * (d - 1.0) * n2,
                    d_e: [(d - 1.0) * e.xx, (d - 1.0) * e.yy, 2.0 * (d - 1.0) * e.xy],
                    d_chi: vec![0.0],
                    d_d: 0.5 * n2,
                })
            }
            fn phi_mech_hess(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<MechHess> {
                self.0.phi_mech_hess(e, chi, d)
            }
            fn phi_mech_d2d(&self, e: &Sym2, _chi: &[f64], d: f64) -> Result<(f64, f64, f64)> {
                let n2 = e.norm2();
                Ok((0.5 * (d - 1.0) * n2, 0.5 * n2, 0.0))
            }
            fn phi_chem(&self, chi: &[f64], c: f64) -> Result<ChemEval> {
                self.0.phi_chem(chi, c)
            }
            fn phi_term(&self, chi: &[f64], theta: f64) -> Result<ThermEval> {
                self.0.phi_term(chi, theta)
            }
            fn e_term(&self, chi: &[f64], theta: f64) -> Result<(f64, f64)> {
                self.0.e_term(chi, theta)
            }
            fn alpha(&self, chi: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
                self.0.alpha(chi)
            }
            fn mobility(&self, s: &StateSample) -> Coeff2 {
                self.0.mobility(s)
            }
            fn conductivity(&self, s: &StateSample) -> Coeff2 {
                self.0.conductivity(s)
            }
        }
        let broken = Broken(HydrideModel::for_tests(1));
        let report = validate_model(&broken, &SampleSpec::default()).unwrap();
        let coercivity = report
            .entries
            .iter()
            .find(|e| e.name == "coercivity")
            .unwrap();
        assert!(!coercivity.passed, "broken model passed: {coercivity:?}");

        // Degenerate chemical penalty (k = 0, bypassing the constructor
        // guard via a wrapper) loses strong convexity in c.
        struct FlatChem(HydrideModel);
        impl MaterialModel for FlatChem {
            fn name(&self) -> &str {
                "flat-chem"
            }
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn n_phase(&self) -> usize {
                1
            }
            fn rho(&self) -> f64 {
                self.0.rho()
            }
            fn kappa1(&self) -> f64 {
                self.0.kappa1()
            }
            fn kappa2(&self) -> f64 {
                self.0.kappa2()
            }
            fn chi_box(&self) -> (Vec<f64>, Vec<f64>) {
                self.0.chi_box()
            }
            fn coupling(&self) -> &[Sym2] {
                self.0.coupling()
            }
            fn visc(&self) -> (f64, f64) {
                self.0.visc()
            }
            fn m_semiconvex(&self) -> f64 {
                0.0
            }
            fn zeta_b_min(&self) -> f64 {
                self.0.zeta_b_min()
            }
            fn zeta_coeffs(&self, s: &StateSample) -> ZetaCoeffs {
                self.0.zeta_coeffs(s)
            }
            fn phi_mech(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<MechEval> {
                self.0.phi_mech(e, chi, d)
            }
            fn phi_mech_hess(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<MechHess> {
                self.0.phi_mech_hess(e, chi, d)
            }
            fn phi_mech_d2d(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<(f64, f64, f64)> {
                self.0.phi_mech_d2d(e, chi, d)
            }
            fn phi_chem(&self, _chi: &[f64], _c: f64) -> Result<ChemEval> {
                Ok(ChemEval {
                    value: 0.0,
                    d_chi: vec![0.0],
                    d_c: 0.0,
                    d_cc: 0.0,
                    d_chi_c: vec![0.0],
                    d_chi_chi: vec![0.0],
                })
            }
            fn phi_term(&self, chi: &[f64], theta: f64) -> Result<ThermEval> {
                self.0.phi_term(chi, theta)
            }
            fn e_term(&self, chi: &[f64], theta: f64) -> Result<(f64, f64)> {
                self.0.e_term(chi, theta)
            }
            fn alpha(&self, chi: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
                self.0.alpha(chi)
            }
            fn mobility(&self, s: &StateSample) -> Coeff2 {
                self.0.mobility(s)
            }
            fn conductivity(&self, s: &StateSample) -> Coeff2 {
                self.0.conductivity(s)
            }
        }
        let flat = FlatChem(HydrideModel::for_tests(1));
        let report = validate_model(&flat, &SampleSpec::default()).unwrap();
        let convexity = report
            .entries
            .iter()
            .find(|e| e.name == "chem-strong-convexity")
            .unwrap();
        assert!(!convexity.passed);
    }

    #[test]
    fn build_model_rejects_unknown_names_and_params() {
        assert!(build_model("viscoplastic", 1, &BTreeMap::new()).is_err());
        let err = match build_model("hydride", 1, &params(&[("stifness", 2.0)])) {
            Err(e) => e,
            Ok(_) => panic!("typo parameter accepted"),
        };
        let msg = format!("{err}");
        assert!(msg.contains("stifness"), "message: {msg}");
        assert!(build_model("hydride", 3, &BTreeMap::new()).is_err());
        for name in ["hydride", "regular_solution", "poroelastic_regularized"] {
            for dim in [1, 2] {
                let model = build_model(name, dim, &BTreeMap::new()).unwrap();
                assert_eq!(model.dim(), dim);
                assert_eq!(model.coupling().len(), model.n_phase());
                let (lo, hi) = model.chi_box();
                assert_eq!(lo.len(), model.n_phase());
                assert!(lo.iter().zip(&hi).all(|(l, h)| l < h));
            }
        }
    }

    #[test]
    fn poro_structure() {
        let m1 = PoroRegularizedModel::from_params(1, &BTreeMap::new()).unwrap();
        assert_eq!(m1.n_phase(), 3);
        let m2 = PoroRegularizedModel::from_params(2, &BTreeMap::new()).unwrap();
        assert_eq!(m2.n_phase(), 5);
        // Plastic coupling reproduces the identity on symmetric tensors.
        let chi = [0.3, -0.2, 0.1, 0.0, 0.5];
        let mut total = Sym2::ZERO;
        for (j, t) in m2.coupling().iter().enumerate() {
            total = total + t.scale(chi[j]);
        }
        assert_eq!((total.xx, total.yy, total.xy), (0.3, -0.2, 0.1));
        // Damage affects only the regularized Lamé terms.
        let e = Sym2 {
            xx: 0.4,
            yy: -0.3,
            xy: 0.2,
        };
        let chi5 = [0.0, 0.0, 0.0, 0.2, 0.6];
        let (v0, dd, _) = m2.phi_mech_d2d(&e, &chi5, 0.3).unwrap();
        let (v1, _, _) = m2.phi_mech_d2d(&e, &chi5, 0.8).unwrap();
        assert_relative_eq!(v1 - v0, 0.5 * dd, max_relative = 1e-12);
    }
}
