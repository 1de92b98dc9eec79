use serde::{Deserialize, Serialize};

/// Arguments of logarithms and reciprocals are kept in `[CLIP, 1 − CLIP]`.
pub const CLIP: f64 = 1e-6;

/// Bulk free-energy density `f(φ)` of the Cahn–Hilliard model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FreeEnergy {
    /// `¼(1 − φ²)²`, pure phases at ±1.
    Polynomial,
    /// `A(φ ln φ + (1−φ) ln(1−φ)) + χ φ(1−φ) + β(1/φ + 1/(1−φ))`, pure phases near 0 and 1.
    FloryHuggins { a: f64, chi: f64, beta: f64 },
}

impl FreeEnergy {
    pub fn flory_huggins_default() -> Self {
        FreeEnergy::FloryHuggins { a: 1.0, chi: 3.0, beta: 0.01 }
    }

    fn clip(phi: f64) -> (f64, bool) {
        let c = phi.clamp(CLIP, 1.0 - CLIP);
        (c, c != phi)
    }

    pub fn f(&self, phi: f64) -> f64 {
        match *self {
            FreeEnergy::Polynomial => {
                let s = 1.0 - phi * phi;
                0.25 * s * s
            }
            FreeEnergy::FloryHuggins { a, chi, beta } => {
                let (c, _) = Self::clip(phi);
                a * (c * c.ln() + (1.0 - c) * (1.0 - c).ln()) + chi * phi * (1.0 - phi) + beta * (1.0 / c + 1.0 / (1.0 - c))
            }
        }
    }

    pub fn df(&self, phi: f64) -> f64 {
        match *self {
            FreeEnergy::Polynomial => phi * phi * phi - phi,
            FreeEnergy::FloryHuggins { a, chi, beta } => {
                let (c, _) = Self::clip(phi);
                let d = 1.0 - c;
                a * (c.ln() - d.ln()) + chi * (1.0 - 2.0 * phi) + beta * (1.0 / (d * d) - 1.0 / (c * c))
            }
        }
    }

    /// Derivative of [`FreeEnergy::df`]; clipped terms contribute zero.
    pub fn d2f(&self, phi: f64) -> f64 {
        match *self {
            FreeEnergy::Polynomial => 3.0 * phi * phi - 1.0,
            FreeEnergy::FloryHuggins { a, chi, beta } => {
                let (c, clipped) = Self::clip(phi);
                let d = 1.0 - c;
                let bounded = if clipped {
                    0.0
                } else {
                    a * (1.0 / c + 1.0 / d) + 2.0 * beta * (1.0 / (c * c * c) + 1.0 / (d * d * d))
                };
                bounded - 2.0 * chi
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn polynomial_wells() {
        let f = FreeEnergy::Polynomial;
        for s in [-1.0, 1.0] {
            assert_eq!(f.f(s), 0.0);
            assert_eq!(f.df(s), 0.0);
        }
        assert_eq!(f.f(0.0), 0.25);
    }

    #[test]
    fn flory_huggins_at_half() {
        let f = FreeEnergy::flory_huggins_default();
        let expect = 0.5f64.ln() + 0.75 + 0.04;
        assert!((f.f(0.5) - expect).abs() < 1e-15);
        assert!((f.f(0.5) - 0.096853).abs() < 1e-6);
        assert!(f.df(0.5).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn flory_huggins_is_finite_with_clipping(phi in -0.5f64..1.5) {
            let f = FreeEnergy::flory_huggins_default();
            prop_assert!(f.f(phi).is_finite() && f.df(phi).is_finite() && f.d2f(phi).is_finite());
        }

        #[test]
        fn flory_huggins_unclipped_derivatives_match_differences(phi in 1e-2f64..(1.0 - 1e-2)) {
            let f = FreeEnergy::flory_huggins_default();
            let h = 1e-6;
            let fd1 = (f.f(phi + h) - f.f(phi - h)) / (2.0 * h);
            let fd2 = (f.df(phi + h) - f.df(phi - h)) / (2.0 * h);
            prop_assert!((fd1 - f.df(phi)).abs() <= 1e-5 * (1.0 + f.df(phi).abs()));
            prop_assert!((fd2 - f.d2f(phi)).abs() <= 1e-5 * (1.0 + f.d2f(phi).abs()));
        }

        #[test]
        fn flory_huggins_is_unclipped_inside(phi in 1e-5f64..(1.0 - 1e-5)) {
            let f = FreeEnergy::flory_huggins_default();
            let FreeEnergy::FloryHuggins { a, chi, beta } = f else { unreachable!() };
            let exact = a * (phi * phi.ln() + (1.0 - phi) * (1.0 - phi).ln())
                + chi * phi * (1.0 - phi)
                + beta * (1.0 / phi + 1.0 / (1.0 - phi));
            prop_assert_eq!(f.f(phi), exact);
        }
    }
}
