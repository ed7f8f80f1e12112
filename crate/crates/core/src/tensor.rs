//! Small symmetric-tensor type shared by strains, stresses and transport
//! coefficients. One representation serves both spatial dimensions: 1D uses
//! only the `xx` slot. The off-diagonal entry is the tensor component (not the
//! engineering shear), so the Frobenius product carries a factor 2 on `xy`.

use std::ops::{Add, AddAssign, Mul, Sub};

/// Duality weights pairing [`Sym2::comps`] with the Frobenius product.
pub const DOT_WEIGHTS: [f64; 3] = Sym2::DOT_WEIGHTS;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 {
        xx: 0.0,
        yy: 0.0,
        xy: 0.0,
    };

    pub fn scalar(v: f64) -> Sym2 {
        Sym2 {
            xx: v,
            yy: 0.0,
            xy: 0.0,
        }
    }

    pub fn diag(v: f64, dim: usize) -> Sym2 {
        Sym2 {
            xx: v,
            yy: if dim == 2 { v } else { 0.0 },
            xy: 0.0,
        }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Frobenius inner product A : B.
    pub fn dot(&self, other: &Sym2) -> f64 {
        self.xx * other.xx + self.yy * other.yy + 2.0 * self.xy * other.xy
    }

    /// Frobenius norm squared |A|² = A : A.
    pub fn norm2(&self) -> f64 {
        self.dot(self)
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2 {
            xx: s * self.xx,
            yy: s * self.yy,
            xy: s * self.xy,
        }
    }

    /// Components as a Voigt-style slice [xx, yy, xy] (length by dimension).
    pub fn comps(&self, dim: usize) -> [f64; 3] {
        debug_assert!(dim == 1 || dim == 2);
        [self.xx, self.yy, self.xy]
    }

    /// Duality weights pairing `comps` with the Frobenius product: [1, 1, 2].
    pub const DOT_WEIGHTS: [f64; 3] = [1.0, 1.0, 2.0];

    /// Number of independent components for the given dimension.
    pub fn n_comps(dim: usize) -> usize {
        match dim {
            1 => 1,
            2 => 3,
            _ => unreachable!("only dim 1 and 2 are supported"),
        }
    }
}

impl Add for Sym2 {
    type Output = Sym2;
    fn add(self, rhs: Sym2) -> Sym2 {
        Sym2 {
            xx: self.xx + rhs.xx,
            yy: self.yy + rhs.yy,
            xy: self.xy + rhs.xy,
        }
    }
}

impl AddAssign for Sym2 {
    fn add_assign(&mut self, rhs: Sym2) {
        self.xx += rhs.xx;
        self.yy += rhs.yy;
        self.xy += rhs.xy;
    }
}

impl Sub for Sym2 {
    type Output = Sym2;
    fn sub(self, rhs: Sym2) -> Sym2 {
        Sym2 {
            xx: self.xx - rhs.xx,
            yy: self.yy - rhs.yy,
            xy: self.xy - rhs.xy,
        }
    }
}

impl Mul<f64> for Sym2 {
    type Output = Sym2;
    fn mul(self, s: f64) -> Sym2 {
        self.scale(s)
    }
}

/// Symmetric positive (semi-)definite 2×2 coefficient for transport terms
/// (mobility 𝐌, conductivity 𝐊). 1D uses `xx` only.
pub type Coeff2 = Sym2;

impl Coeff2 {
    /// Apply the coefficient to a spatial vector (gradient).
    pub fn apply(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.xx * g[0] + self.xy * g[1],
            self.xy * g[0] + self.yy * g[1],
        ]
    }

    /// Symmetric positive-definiteness check appropriate for the dimension.
    pub fn is_spd(&self, dim: usize) -> bool {
        if dim == 1 {
            self.xx > 0.0
        } else {
            self.xx > 0.0 && self.yy > 0.0 && self.xx * self.yy - self.xy * self.xy > 0.0
        }
    }
}
