//! Closed-form coefficient catalog.
//!
//! All microscale coefficients are chosen from named Y-periodic closed
//! forms so that models are serializable in config files and every
//! assumption constant can be bounded analytically. Volumetric fields wrap
//! their argument into the centered cell before evaluation; surface fields
//! are functions of the position on the hole boundary, most of them through
//! the polar angle about the hole center.

use crate::error::{Error, Result};

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Wrap a coordinate into the centered cell `[-1/2, 1/2)`.
#[inline]
pub fn wrap_cell(t: f64) -> f64 {
    let w = t - (t + 0.5).floor();
    // floor can land exactly on 1/2 through rounding at the seam.
    if w >= 0.5 {
        w - 1.0
    } else if w < -0.5 {
        w + 1.0
    } else {
        w
    }
}

#[inline]
pub fn wrap_point(y: [f64; 2]) -> [f64; 2] {
    [wrap_cell(y[0]), wrap_cell(y[1])]
}

// ---------------------------------------------------------------------------
// Scalar volumetric fields c(y)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarField {
    One,
    Two,
    TwoPlusSin,
    Checkerboard,
}

impl ScalarField {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "one" => Ok(ScalarField::One),
            "two" => Ok(ScalarField::Two),
            "two_plus_sin" => Ok(ScalarField::TwoPlusSin),
            "checkerboard" => Ok(ScalarField::Checkerboard),
            other => Err(Error::config(format!("unknown scalar field '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarField::One => "one",
            ScalarField::Two => "two",
            ScalarField::TwoPlusSin => "two_plus_sin",
            ScalarField::Checkerboard => "checkerboard",
        }
    }

    pub fn eval(self, y: [f64; 2]) -> f64 {
        let y = wrap_point(y);
        match self {
            ScalarField::One => 1.0,
            ScalarField::Two => 2.0,
            ScalarField::TwoPlusSin => 2.0 + (TAU * y[0]).sin() * (TAU * y[1]).sin(),
            ScalarField::Checkerboard => {
                1.5 + 0.5 * (8.0 * (TAU * y[0]).sin() * (TAU * y[1]).sin()).tanh()
            }
        }
    }

    /// Exact infimum over the cell.
    pub fn min_value(self) -> f64 {
        match self {
            ScalarField::One => 1.0,
            ScalarField::Two => 2.0,
            ScalarField::TwoPlusSin => 1.0,
            ScalarField::Checkerboard => 1.5 - 0.5 * 8.0f64.tanh(),
        }
    }

    /// Exact supremum over the cell.
    pub fn max_value(self) -> f64 {
        match self {
            ScalarField::One => 1.0,
            ScalarField::Two => 2.0,
            ScalarField::TwoPlusSin => 3.0,
            ScalarField::Checkerboard => 1.5 + 0.5 * 8.0f64.tanh(),
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix volumetric fields A(y)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixField {
    Identity,
    IsoTwoPlusSin,
    SymAniso,
    Nonsym,
}

impl MatrixField {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(MatrixField::Identity),
            "iso_two_plus_sin" => Ok(MatrixField::IsoTwoPlusSin),
            "sym_aniso" => Ok(MatrixField::SymAniso),
            "nonsym" => Ok(MatrixField::Nonsym),
            other => Err(Error::config(format!("unknown matrix field '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MatrixField::Identity => "identity",
            MatrixField::IsoTwoPlusSin => "iso_two_plus_sin",
            MatrixField::SymAniso => "sym_aniso",
            MatrixField::Nonsym => "nonsym",
        }
    }

    pub fn is_symmetric(self) -> bool {
        !matches!(self, MatrixField::Nonsym)
    }

    /// Row-major 2x2 value.
    pub fn eval(self, y: [f64; 2]) -> [[f64; 2]; 2] {
        let y = wrap_point(y);
        match self {
            MatrixField::Identity => [[1.0, 0.0], [0.0, 1.0]],
            MatrixField::IsoTwoPlusSin => {
                let c = 2.0 + (TAU * y[0]).sin() * (TAU * y[1]).sin();
                [[c, 0.0], [0.0, c]]
            }
            MatrixField::SymAniso => {
                // 2I + s(y) M with M symmetric positive semidefinite of norm
                // 3/2 and |s| <= 1, hence 1/2 I + PSD.
                let s = (TAU * y[0]).sin() * (TAU * y[1]).sin();
                [[2.0 + s, 0.5 * s], [0.5 * s, 2.0 + s]]
            }
            MatrixField::Nonsym => {
                // Symmetric part of sym_aniso plus a constant antisymmetric
                // part, which leaves the coercivity constant unchanged.
                let s = (TAU * y[0]).sin() * (TAU * y[1]).sin();
                [[2.0 + s, 0.5 * s + 0.5], [0.5 * s - 0.5, 2.0 + s]]
            }
        }
    }

    /// Exact coercivity constant: `A(y) xi . xi >= kappa |xi|^2`.
    pub fn kappa(self) -> f64 {
        match self {
            MatrixField::Identity => 1.0,
            MatrixField::IsoTwoPlusSin => 1.0,
            // Symmetric-part eigenvalues are 2 + s/2 and 2 + 3s/2, s in
            // [-1, 1], so the infimum is 1/2 (antisymmetric part drops out
            // of the quadratic form).
            MatrixField::SymAniso | MatrixField::Nonsym => 0.5,
        }
    }

    /// Rigorous upper bound on the spectral norm over the cell.
    pub fn norm_bound(self) -> f64 {
        match self {
            MatrixField::Identity => 1.0,
            MatrixField::IsoTwoPlusSin => 3.0,
            MatrixField::SymAniso => 3.5,
            MatrixField::Nonsym => 4.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Surface fields on the hole boundary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceField {
    Zero,
    One,
    AngleCos,
    AngleSin,
    AngleCos2,
    SinY1,
}

impl SurfaceField {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "zero" => Ok(SurfaceField::Zero),
            "one" => Ok(SurfaceField::One),
            "angle_cos" => Ok(SurfaceField::AngleCos),
            "angle_sin" => Ok(SurfaceField::AngleSin),
            "angle_cos2" => Ok(SurfaceField::AngleCos2),
            "sin_y1" => Ok(SurfaceField::SinY1),
            other => Err(Error::config(format!("unknown surface field '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SurfaceField::Zero => "zero",
            SurfaceField::One => "one",
            SurfaceField::AngleCos => "angle_cos",
            SurfaceField::AngleSin => "angle_sin",
            SurfaceField::AngleCos2 => "angle_cos2",
            SurfaceField::SinY1 => "sin_y1",
        }
    }

    /// Evaluate at a point on the hole boundary; `center` is the hole
    /// center, anchoring the polar angle.
    pub fn eval(self, y: [f64; 2], center: [f64; 2]) -> f64 {
        let theta = || (y[1] - center[1]).atan2(y[0] - center[0]);
        match self {
            SurfaceField::Zero => 0.0,
            SurfaceField::One => 1.0,
            SurfaceField::AngleCos => theta().cos(),
            SurfaceField::AngleSin => theta().sin(),
            SurfaceField::AngleCos2 => (2.0 * theta()).cos(),
            SurfaceField::SinY1 => (TAU * wrap_cell(y[0])).sin(),
        }
    }

    /// Rigorous bound on |field| over any hole boundary.
    pub fn max_abs(self) -> f64 {
        match self {
            SurfaceField::Zero => 0.0,
            _ => 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// State nonlinearity gamma(u)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gamma {
    Identity,
    SoftAbs,
}

impl Gamma {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Gamma::Identity),
            "soft_abs" => Ok(Gamma::SoftAbs),
            other => Err(Error::config(format!("unknown gamma '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Gamma::Identity => "identity",
            Gamma::SoftAbs => "soft_abs",
        }
    }

    pub fn eval(self, u: f64) -> f64 {
        match self {
            Gamma::Identity => u,
            Gamma::SoftAbs => (1.0 + u * u).sqrt(),
        }
    }

    pub fn deriv(self, u: f64) -> f64 {
        match self {
            Gamma::Identity => 1.0,
            Gamma::SoftAbs => u / (1.0 + u * u).sqrt(),
        }
    }

    pub fn second_deriv(self, u: f64) -> f64 {
        match self {
            Gamma::Identity => 0.0,
            Gamma::SoftAbs => (1.0 + u * u).powf(-1.5),
        }
    }

    /// Exact Lipschitz constant of gamma.
    pub fn lipschitz(self) -> f64 {
        1.0
    }

    /// Exact supremum of |gamma'(u) - gamma'(v)| (1 + |u| + |v|) / |u - v|.
    ///
    /// For soft_abs the supremum is sqrt(5), attained in the limit of the
    /// symmetric pair (u, v) = (2, -2); for the identity the quantity is 0.
    pub fn weighted_deriv_lipschitz(self) -> f64 {
        match self {
            Gamma::Identity => 0.0,
            Gamma::SoftAbs => 5.0f64.sqrt(),
        }
    }

    /// |gamma(u)| <= slope |u| + offset for all u, exactly.
    pub fn linear_growth(self) -> (f64, f64) {
        match self {
            Gamma::Identity => (1.0, 0.0),
            Gamma::SoftAbs => (1.0, 1.0),
        }
    }
}

// ---------------------------------------------------------------------------
// Macroscopic sources f(t, x) and trace weights q_x(x)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceField {
    Zero,
    One,
    CosPi,
    /// Source manufactured so that cos(pi x1) cos(pi x2) solves the
    /// unperforated identity-coefficient problem with zero-order
    /// coefficient `lambda` and natural boundary conditions.
    MmsCos {
        lambda: f64,
    },
    DecayCos,
}

impl SourceField {
    pub fn parse(name: &str, lambda: f64) -> Result<Self> {
        match name {
            "zero" => Ok(SourceField::Zero),
            "one" => Ok(SourceField::One),
            "cos_pi" => Ok(SourceField::CosPi),
            "mms_cos" => Ok(SourceField::MmsCos { lambda }),
            "decay_cos" => Ok(SourceField::DecayCos),
            other => Err(Error::config(format!("unknown source field '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceField::Zero => "zero",
            SourceField::One => "one",
            SourceField::CosPi => "cos_pi",
            SourceField::MmsCos { .. } => "mms_cos",
            SourceField::DecayCos => "decay_cos",
        }
    }

    pub fn eval(self, t: f64, x: [f64; 2]) -> f64 {
        use std::f64::consts::PI;
        match self {
            SourceField::Zero => 0.0,
            SourceField::One => 1.0,
            SourceField::CosPi => (PI * x[0]).cos() * (PI * x[1]).cos(),
            SourceField::MmsCos { lambda } => {
                (2.0 * PI * PI + lambda) * (PI * x[0]).cos() * (PI * x[1]).cos()
            }
            SourceField::DecayCos => (-t).exp() * (PI * x[0]).cos(),
        }
    }
}

/// Exact solution paired with `SourceField::MmsCos`.
pub fn mms_exact(x: [f64; 2]) -> f64 {
    use std::f64::consts::PI;
    (PI * x[0]).cos() * (PI * x[1]).cos()
}

pub fn mms_exact_grad(x: [f64; 2]) -> [f64; 2] {
    use std::f64::consts::PI;
    [
        -PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
        -PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacroWeight {
    One,
    OnePlusX2,
}

impl MacroWeight {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "one" => Ok(MacroWeight::One),
            "one_plus_x2" => Ok(MacroWeight::OnePlusX2),
            other => Err(Error::config(format!("unknown macro weight '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MacroWeight::One => "one",
            MacroWeight::OnePlusX2 => "one_plus_x2",
        }
    }

    pub fn eval(self, x: [f64; 2]) -> f64 {
        match self {
            MacroWeight::One => 1.0,
            MacroWeight::OnePlusX2 => 1.0 + x[1],
        }
    }
}
