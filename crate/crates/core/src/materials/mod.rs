//! Material models: free-energy contributions with exact first derivatives,
//! dissipation coefficients, transport tensors, and the scalar inversions
//! (chemical Legendre transform, enthalpy-to-temperature) the stepper needs.
//!
//! Derivative convention: strain-like arguments are symmetric tensors
//! ([`Sym2`]); derivative outputs with respect to strain are *plain partials*
//! with respect to the independent components (xx, yy, xy), i.e. the xy slot
//! already accounts for both off-diagonal entries. This keeps the chain rule
//! through nodal dofs free of hidden factors of two.

mod builtin;

pub use builtin::{
    build_model, zeta_eval, HydrideModel, PoroRegularizedModel, RegularSolutionModel,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SolverError};
use crate::minimizers::scalar_root;
use crate::tensor::{Coeff2, Sym2};

/// A full point state, used for coefficients that may depend on everything
/// (dissipation weights, mobility, conductivity).
#[derive(Clone, Copy, Debug)]
pub struct StateSample<'a> {
    pub e: Sym2,
    pub chi: &'a [f64],
    pub c: f64,
    pub d: f64,
    pub theta: f64,
}

/// Coefficients of the phase dissipation ζ(χ̇) = a|χ̇| + b|χ̇|².
#[derive(Clone, Copy, Debug)]
pub struct ZetaCoeffs {
    pub a: f64,
    pub b: f64,
}

/// φ_mech value with first derivatives.
#[derive(Clone, Debug)]
pub struct MechEval {
    pub value: f64,
    /// Plain partials w.r.t. (E.xx, E.yy, E.xy).
    pub d_e: [f64; 3],
    pub d_chi: Vec<f64>,
    pub d_d: f64,
}

/// Second derivatives of φ_mech in (E, χ) at fixed d, as needed by Step 1.
#[derive(Clone, Debug)]
pub struct MechHess {
    pub ee: [[f64; 3]; 3],
    /// Per phase component j: plain ∂²φ/∂χ_j∂E.
    pub e_chi: Vec<[f64; 3]>,
    /// N×N, row-major.
    pub chi_chi: Vec<f64>,
}

/// φ_chem value with the derivatives used by Steps 1–2 and validation.
#[derive(Clone, Debug)]
pub struct ChemEval {
    pub value: f64,
    pub d_chi: Vec<f64>,
    pub d_c: f64,
    pub d_cc: f64,
    pub d_chi_c: Vec<f64>,
    /// N×N, row-major.
    pub d_chi_chi: Vec<f64>,
}

/// φ_term value with the derivatives used by Steps 1, 4 and validation.
/// For θ ≤ 0 every implementation returns all-zero values and derivatives
/// (the convention the temperature-positivity argument relies on).
#[derive(Clone, Debug)]
pub struct ThermEval {
    pub value: f64,
    pub d_theta: f64,
    pub d_chi: Vec<f64>,
    pub d_theta_theta: f64,
    pub d_chi_theta: Vec<f64>,
}

pub trait MaterialModel: Send + Sync {
    fn name(&self) -> &str;
    /// Spatial dimension the instance was built for (1 or 2).
    fn dim(&self) -> usize;
    /// Number of phase components N.
    fn n_phase(&self) -> usize;
    fn rho(&self) -> f64;
    fn kappa1(&self) -> f64;
    fn kappa2(&self) -> f64;
    /// Componentwise box K_χ.
    fn chi_box(&self) -> (Vec<f64>, Vec<f64>);
    /// Columns of the coupling tensor: (𝔼χ) = Σ_j χ_j · coupling()[j].
    fn coupling(&self) -> &[Sym2];
    /// Isotropic viscosity moduli (λ_v, μ_v); (0, 0) means inviscid.
    fn visc(&self) -> (f64, f64);
    /// Semiconvexity constant M: (E,χ) ↦ φ_mechchem + M|χ|² is convex.
    fn m_semiconvex(&self) -> f64;
    /// Declared uniform lower bound for the quadratic ζ coefficient b.
    fn zeta_b_min(&self) -> f64;
    fn zeta_coeffs(&self, s: &StateSample) -> ZetaCoeffs;
    /// Whether ζ's coefficients depend on the elastic strain (must be false
    /// to run the quasistatic mode).
    fn zeta_depends_on_strain(&self) -> bool {
        false
    }
    fn phi_mech(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<MechEval>;
    fn phi_mech_hess(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<MechHess>;
    /// (value, ∂φ/∂d, ∂²φ/∂d²) at fixed (E, χ), for the damage step.
    fn phi_mech_d2d(&self, e: &Sym2, chi: &[f64], d: f64) -> Result<(f64, f64, f64)>;
    fn phi_chem(&self, chi: &[f64], c: f64) -> Result<ChemEval>;
    fn phi_term(&self, chi: &[f64], theta: f64) -> Result<ThermEval>;
    /// Internal (thermal) energy e_term = φ_term − θ ∂_θφ_term and its
    /// θ-derivative, extended linearly through θ ≤ 0 so root finds stay
    /// monotone. Implementations override with closed forms.
    fn e_term(&self, chi: &[f64], theta: f64) -> Result<(f64, f64)> {
        let eps = 1e-12;
        if theta > eps {
            let t = self.phi_term(chi, theta)?;
            Ok((t.value - theta * t.d_theta, -theta * t.d_theta_theta))
        } else {
            let t = self.phi_term(chi, eps)?;
            let w_eps = t.value - eps * t.d_theta;
            let slope = (w_eps / eps).max(0.0);
            Ok((slope * theta, slope))
        }
    }
    /// Damage toughness α(χ): value, gradient, Hessian (N×N row-major).
    fn alpha(&self, chi: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)>;
    fn mobility(&self, s: &StateSample) -> Coeff2;
    fn conductivity(&self, s: &StateSample) -> Coeff2;
    /// Sampling ranges for validation and gradient checks.
    fn c_range_hint(&self) -> (f64, f64) {
        (-2.0, 2.0)
    }
    fn theta_range_hint(&self) -> (f64, f64) {
        (0.05, 4.0)
    }
}

/// ζ(rate) value and the smooth part of its subdifferential (2b·rate); the
/// 1-homogeneous part contributes a·sign selected by the prox.
pub fn zeta_value(coeffs: &ZetaCoeffs, rate: &[f64]) -> f64 {
    let norm: f64 = rate.iter().map(|r| r * r).sum::<f64>().sqrt();
    coeffs.a * norm + coeffs.b * norm * norm
}

/// ∂ζ(χ̇)·χ̇ for the dissipation bookkeeping: by 1-homogeneity of the a-part
/// this equals a|χ̇| + 2b|χ̇|² regardless of the subgradient selection.
pub fn zeta_dissipation_rate(coeffs: &ZetaCoeffs, rate: &[f64]) -> f64 {
    let norm: f64 = rate.iter().map(|r| r * r).sum::<f64>().sqrt();
    coeffs.a * norm + 2.0 * coeffs.b * norm * norm
}

/// Invert e_term(χ, ·) on θ ≥ 0: returns θ with |e_term(χ,θ) − w| small.
/// e_term is strictly increasing (positive heat capacity), so a bracket
/// expansion plus the safeguarded root find is exact.
pub fn theta_from_w(model: &dyn MaterialModel, chi: &[f64], w: f64) -> Result<f64> {
    if !w.is_finite() {
        return Err(SolverError::numeric("theta_from_w", format!("w = {w}")));
    }
    let (e0, _) = model.e_term(chi, 0.0)?;
    if w <= e0 {
        // Enthalpy at or below the zero-temperature level: θ = 0 is the
        // admissible inverse (w < e0 only through roundoff in valid runs).
        return Ok(0.0);
    }
    let mut hi = 1.0;
    for _ in 0..200 {
        let (e, _) = model.e_term(chi, hi)?;
        if e >= w {
            break;
        }
        hi *= 2.0;
    }
    let (e_hi, _) = model.e_term(chi, hi)?;
    if e_hi < w {
        return Err(SolverError::numeric(
            "theta_from_w",
            format!("no bracket: e_term({hi}) = {e_hi} < w = {w}"),
        ));
    }
    let mut f = |theta: f64| model.e_term(chi, theta).map(|(e, _)| e - w).unwrap_or(f64::NAN);
    let theta = scalar_root(&mut f, 0.0, hi, 1e-14 * (1.0 + hi))?;
    let (e, de) = model.e_term(chi, theta)?;
    // One Newton polish; the root find already guarantees the bracket.
    let theta = if de > 0.0 {
        (theta - (e - w) / de).max(0.0)
    } else {
        theta
    };
    let (e, _) = model.e_term(chi, theta)?;
    if (e - w).abs() > 1e-10 * (1.0 + w.abs()) {
        return Err(SolverError::numeric(
            "theta_from_w",
            format!("inversion residual {:.3e} at theta = {theta}", e - w),
        ));
    }
    Ok(theta)
}

/// Legendre transform of φ_chem(χ, ·): returns (φ*_chem(χ, μ), c) with
/// c = argmax (μc − φ_chem) characterized by ∂_cφ_chem(χ, c) = μ.
pub fn legendre_chem(model: &dyn MaterialModel, chi: &[f64], mu: f64) -> Result<(f64, f64)> {
    if !mu.is_finite() {
        return Err(SolverError::numeric("legendre_chem", format!("mu = {mu}")));
    }
    // ∂_cφ is strictly increasing; expand a bracket around 0.
    let mut lo = -1.0;
    let mut hi = 1.0;
    let slope = |c: f64| -> Result<f64> { Ok(model.phi_chem(chi, c)?.d_c - mu) };
    let mut expand = 0;
    while slope(lo)? > 0.0 {
        lo *= 2.0;
        expand += 1;
        if expand > 200 {
            return Err(SolverError::numeric("legendre_chem", "no lower bracket"));
        }
    }
    while slope(hi)? < 0.0 {
        hi *= 2.0;
        expand += 1;
        if expand > 400 {
            return Err(SolverError::numeric("legendre_chem", "no upper bracket"));
        }
    }
    let mut f = |c: f64| slope(c).unwrap_or(f64::NAN);
    let c0 = scalar_root(&mut f, lo, hi, 1e-13 * (1.0 + mu.abs()))?;
    // Newton polish with the strong-convexity modulus.
    let eval = model.phi_chem(chi, c0)?;
    let c = if eval.d_cc > 0.0 {
        c0 - (eval.d_c - mu) / eval.d_cc
    } else {
        c0
    };
    let eval = model.phi_chem(chi, c)?;
    if (eval.d_c - mu).abs() > 1e-9 * (1.0 + mu.abs()) {
        return Err(SolverError::numeric(
            "legendre_chem",
            format!("stationarity residual {:.3e}", eval.d_c - mu),
        ));
    }
    Ok((mu * c - eval.value, c))
}

/// Sampling specification for [`validate_model`].
#[derive(Clone, Copy, Debug)]
pub struct SampleSpec {
    pub n_samples: usize,
    pub seed: u64,
    /// Strain components are drawn from [−e_range, e_range].
    pub e_range: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            n_samples: 200,
            seed: 0x5eed,
            e_range: 2.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValidationEntry {
    pub name: &'static str,
    pub passed: bool,
    /// Worst witness or sampled ratio, human-readable.
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub entries: Vec<ValidationEntry>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    fn push(&mut self, name: &'static str, passed: bool, detail: String) {
        self.entries.push(ValidationEntry {
            name,
            passed,
            detail,
        });
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    dim: usize,
    chi_lo: Vec<f64>,
    chi_hi: Vec<f64>,
    e_range: f64,
    c_range: (f64, f64),
    theta_range: (f64, f64),
}

impl Sampler {
    fn strain(&mut self) -> Sym2 {
        let r = self.e_range;
        Sym2 {
            xx: self.rng.gen_range(-r..r),
            yy: if self.dim == 2 {
                self.rng.gen_range(-r..r)
            } else {
                0.0
            },
            xy: if self.dim == 2 {
                self.rng.gen_range(-r..r)
            } else {
                0.0
            },
        }
    }

    fn chi(&mut self) -> Vec<f64> {
        (0..self.chi_lo.len())
            .map(|j| {
                let (l, h) = (self.chi_lo[j], self.chi_hi[j]);
                // Keep strictly inside for log-type energies.
                let pad = 1e-6 * (h - l);
                self.rng.gen_range(l + pad..h - pad)
            })
            .collect()
    }

    fn c(&mut self) -> f64 {
        self.rng.gen_range(self.c_range.0..self.c_range.1)
    }

    fn d(&mut self) -> f64 {
        self.rng.gen_range(0.0..1.0)
    }

    fn theta(&mut self) -> f64 {
        self.rng.gen_range(self.theta_range.0..self.theta_range.1)
    }
}

/// Sampled verification of the standing model assumptions: coercivity and
/// growth of φ_mech, heat-capacity bounds, strong convexity of φ_chem in c
/// and of φ_mech in E, (E,χ)-semiconvexity with the declared constant,
/// transport definiteness, dissipation coefficient bounds, toughness
/// positivity, and the θ ≤ 0 convention. Growth-type entries report the
/// sampled ratio (they cannot certify a bound).
pub fn validate_model(model: &dyn MaterialModel, spec: &SampleSpec) -> Result<ValidationReport> {
    let (chi_lo, chi_hi) = model.chi_box();
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        dim: model.dim(),
        chi_lo,
        chi_hi,
        e_range: spec.e_range,
        c_range: model.c_range_hint(),
        theta_range: model.theta_range_hint(),
    };
    let n = spec.n_samples.max(8);
    let mut rep = ValidationReport::default();

    // Coercivity: probe quadratic growth along rays, φ_mech(R·Ê)/R² must
    // stay above a positive floor for large R (regularized square-root
    // terms rely on their unregularized quadratic companions here).
    let ray_r = 1e3;
    let (mut q_min, mut worst_at) = (f64::INFINITY, String::new());
    let mut growth_ratio = 0.0f64;
    for _ in 0..n {
        let e = s.strain();
        let chi = s.chi();
        let d = s.d();
        let norm = e.norm2().sqrt();
        if norm > 1e-6 {
            let far = e.scale(ray_r / norm);
            let q = model.phi_mech(&far, &chi, d)?.value / (ray_r * ray_r);
            if q < q_min {
                q_min = q;
                worst_at = format!(
                    "direction ({:.2},{:.2},{:.2}), d = {:.3}",
                    e.xx / norm,
                    e.yy / norm,
                    e.xy / norm,
                    d
                );
            }
        }
        let ev = model.phi_mech(&e, &chi, d)?;
        let grad_norm = (ev.d_e.iter().map(|g| g * g).sum::<f64>()
            + ev.d_chi.iter().map(|g| g * g).sum::<f64>())
        .sqrt();
        growth_ratio = growth_ratio.max(grad_norm / (1.0 + e.norm2().sqrt()));
    }
    rep.push(
        "coercivity",
        q_min.is_finite() && q_min >= 1e-9,
        format!("min ray growth φ/R² = {q_min:.3e} at {worst_at}"),
    );
    rep.push(
        "growth-ratio",
        growth_ratio.is_finite(),
        format!("sampled |∂φ_mech|/(1+|E|) ≤ {growth_ratio:.3e}"),
    );

    // Heat capacity: 0 < −θ ∂²θθ φ_term and 0 < ∂θ e_term, bounded.
    let (mut cap_min, mut cap_max) = (f64::INFINITY, 0.0f64);
    for _ in 0..n {
        let chi = s.chi();
        let theta = s.theta();
        let t = model.phi_term(&chi, theta)?;
        let cap = -theta * t.d_theta_theta;
        let (_, de) = model.e_term(&chi, theta)?;
        cap_min = cap_min.min(cap.min(de));
        cap_max = cap_max.max(cap.max(de));
    }
    rep.push(
        "heat-capacity-bounds",
        cap_min >= 1e-9 && cap_max <= 1e9,
        format!("sampled range [{cap_min:.3e}, {cap_max:.3e}]"),
    );

    // Strong convexity of φ_chem in c (second derivative and midpoints).
    let mut dcc_min = f64::INFINITY;
    let mut chem_mid_worst = f64::INFINITY;
    for _ in 0..n {
        let chi = s.chi();
        let (c1, c2) = (s.c(), s.c());
        let e1 = model.phi_chem(&chi, c1)?;
        let e2 = model.phi_chem(&chi, c2)?;
        let em = model.phi_chem(&chi, 0.5 * (c1 + c2))?;
        dcc_min = dcc_min.min(e1.d_cc);
        let gap = 0.5 * (e1.value + e2.value) - em.value;
        chem_mid_worst = chem_mid_worst.min(gap + 1e-12 * (1.0 + em.value.abs()));
    }
    rep.push(
        "chem-strong-convexity",
        dcc_min >= 1e-9 && chem_mid_worst >= 0.0,
        format!("min ∂²ccφ_chem = {dcc_min:.3e}"),
    );

    // Strong convexity of φ_mech in E at fixed (χ, d).
    let mut mech_mid_worst = f64::INFINITY;
    for _ in 0..n {
        let chi = s.chi();
        let d = s.d();
        let (e1, e2) = (s.strain(), s.strain());
        let em = Sym2 {
            xx: 0.5 * (e1.xx + e2.xx),
            yy: 0.5 * (e1.yy + e2.yy),
            xy: 0.5 * (e1.xy + e2.xy),
        };
        let v1 = model.phi_mech(&e1, &chi, d)?.value;
        let v2 = model.phi_mech(&e2, &chi, d)?.value;
        let vm = model.phi_mech(&em, &chi, d)?.value;
        let gap = 0.5 * (v1 + v2) - vm;
        mech_mid_worst = mech_mid_worst.min(gap + 1e-10 * (1.0 + vm.abs()));
    }
    rep.push(
        "mech-convexity-in-E",
        mech_mid_worst >= 0.0,
        format!("worst midpoint gap {mech_mid_worst:.3e}"),
    );

    // Semiconvexity in (E, χ) of φ_mech and of φ_mechchem with the stored M.
    let m_sc = model.m_semiconvex();
    let mut semi_worst = f64::INFINITY;
    for _ in 0..n {
        let d = s.d();
        let c = s.c();
        let (e1, e2) = (s.strain(), s.strain());
        let (chi1, chi2) = (s.chi(), s.chi());
        let chim: Vec<f64> = chi1
            .iter()
            .zip(&chi2)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let em = Sym2 {
            xx: 0.5 * (e1.xx + e2.xx),
            yy: 0.5 * (e1.yy + e2.yy),
            xy: 0.5 * (e1.xy + e2.xy),
        };
        let aug = |e: &Sym2, chi: &[f64]| -> Result<f64> {
            let chi2sum: f64 = chi.iter().map(|x| x * x).sum();
            Ok(model.phi_mech(e, chi, d)?.value
                + model.phi_chem(chi, c)?.value
                + m_sc * chi2sum)
        };
        let gap = 0.5 * (aug(&e1, &chi1)? + aug(&e2, &chi2)?) - aug(&em, &chim)?;
        semi_worst = semi_worst.min(gap + 1e-10 * (1.0 + gap.abs()));
    }
    rep.push(
        "semiconvexity",
        semi_worst >= 0.0,
        format!("worst midpoint gap {semi_worst:.3e} with M = {m_sc:.3e}"),
    );

    // Transport coefficients SPD with sane spectral bounds.
    let mut transport_ok = true;
    let mut transport_detail = String::from("all samples SPD");
    for _ in 0..n {
        let e = s.strain();
        let chi = s.chi();
        let sample = StateSample {
            e,
            chi: &chi,
            c: s.c(),
            d: s.d(),
            theta: s.theta(),
        };
        for (label, coeff) in [
            ("mobility", model.mobility(&sample)),
            ("conductivity", model.conductivity(&sample)),
        ] {
            let min_eig = if model.dim() == 1 {
                coeff.xx
            } else {
                let t = 0.5 * (coeff.xx + coeff.yy);
                let r = (0.25 * (coeff.xx - coeff.yy).powi(2) + coeff.xy * coeff.xy).sqrt();
                t - r
            };
            if !(min_eig >= 1e-9 && min_eig <= 1e9 && coeff.trace() <= 1e9) {
                transport_ok = false;
                transport_detail = format!("{label} min eigenvalue {min_eig:.3e}");
            }
        }
    }
    rep.push("transport-definiteness", transport_ok, transport_detail);

    // Dissipation coefficients: a ≥ 0, b ≥ declared b_min > 0.
    let b_min_decl = model.zeta_b_min();
    let (mut a_min, mut b_min) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..n {
        let e = s.strain();
        let chi = s.chi();
        let z = model.zeta_coeffs(&StateSample {
            e,
            chi: &chi,
            c: s.c(),
            d: s.d(),
            theta: s.theta(),
        });
        a_min = a_min.min(z.a);
        b_min = b_min.min(z.b);
    }
    rep.push(
        "zeta-coefficients",
        a_min >= 0.0 && b_min_decl > 0.0 && b_min >= b_min_decl - 1e-15,
        format!("min a = {a_min:.3e}, min b = {b_min:.3e}, declared b_min = {b_min_decl:.3e}"),
    );

    // Toughness strictly positive on the box.
    let mut alpha_min = f64::INFINITY;
    for _ in 0..n {
        let chi = s.chi();
        let (a, _, _) = model.alpha(&chi)?;
        alpha_min = alpha_min.min(a);
    }
    rep.push(
        "alpha-positive",
        alpha_min > 0.0,
        format!("min α = {alpha_min:.3e}"),
    );

    // θ ≤ 0 convention: ∂_χφ_term vanishes identically.
    let mut conv_ok = true;
    for theta in [0.0, -0.7] {
        let chi = s.chi();
        let t = model.phi_term(&chi, theta)?;
        if t.d_chi.iter().any(|&g| g != 0.0) {
            conv_ok = false;
        }
    }
    rep.push(
        "theta-convention",
        conv_ok,
        "∂_χφ_term(·, θ≤0) ≡ 0".to_string(),
    );

    // e_term consistency with φ_term − θ∂θφ_term and monotonicity.
    let mut e_worst = 0.0f64;
    let mut de_min = f64::INFINITY;
    for _ in 0..n {
        let chi = s.chi();
        let theta = s.theta();
        let t = model.phi_term(&chi, theta)?;
        let (w, dw) = model.e_term(&chi, theta)?;
        let expected = t.value - theta * t.d_theta;
        e_worst = e_worst.max((w - expected).abs() / (1.0 + expected.abs()));
        de_min = de_min.min(dw);
    }
    rep.push(
        "e-term-consistency",
        e_worst <= 1e-8 && de_min > 0.0,
        format!("max relative mismatch {e_worst:.3e}, min ∂θe = {de_min:.3e}"),
    );

    Ok(rep)
}
