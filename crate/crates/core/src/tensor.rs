//! Material densities, their quadratic forms at the identity and the reduced
//! plate tensors.
//!
//! Fourth-order tensors acting on symmetric matrices are stored in orthonormal
//! coordinates: 3x3 symmetric matrices use
//! `[F11, F22, F33, sqrt2 F23, sqrt2 F13, sqrt2 F12]`, 2x2 symmetric matrices
//! use the Voigt basis `[G11, G22, sqrt2 G12]`. In both cases the Euclidean
//! norm of the coordinate vector is the Frobenius norm of the matrix.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use std::f64::consts::SQRT_2;

use crate::error::{Result, VkError};

/// Third-order tensor `Z[i][j][k]`, used for second deformation gradients.
pub type Tensor3 = [[[f64; 3]; 3]; 3];

/// Symmetric 2x2 matrix.
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

    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Sym2 { xx, yy, xy }
    }

    /// `sym(a ⊗ b)`
    pub fn sym_outer(a: [f64; 2], b: [f64; 2]) -> Self {
        Sym2 {
            xx: a[0] * b[0],
            yy: a[1] * b[1],
            xy: 0.5 * (a[0] * b[1] + a[1] * b[0]),
        }
    }

    /// Symmetric part of a full 2x2 matrix given row-major.
    pub fn sym_of(m: [[f64; 2]; 2]) -> Self {
        Sym2 {
            xx: m[0][0],
            yy: m[1][1],
            xy: 0.5 * (m[0][1] + m[1][0]),
        }
    }

    pub fn voigt(&self) -> Vector3<f64> {
        Vector3::new(self.xx, self.yy, SQRT_2 * self.xy)
    }

    pub fn from_voigt(v: &Vector3<f64>) -> Self {
        Sym2 {
            xx: v[0],
            yy: v[1],
            xy: v[2] / SQRT_2,
        }
    }

    /// Frobenius inner product.
    pub fn dot(&self, o: &Sym2) -> f64 {
        self.xx * o.xx + self.yy * o.yy + 2.0 * self.xy * o.xy
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self)
    }

    /// Matrix-vector product.
    pub fn apply(&self, a: [f64; 2]) -> [f64; 2] {
        [
            self.xx * a[0] + self.xy * a[1],
            self.xy * a[0] + self.yy * a[1],
        ]
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2 {
            xx: s * self.xx,
            yy: s * self.yy,
            xy: s * self.xy,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.xx.abs().max(self.yy.abs()).max(self.xy.abs())
    }
}

impl std::ops::Add for Sym2 {
    type Output = Sym2;
    fn add(self, o: Sym2) -> Sym2 {
        Sym2 {
            xx: self.xx + o.xx,
            yy: self.yy + o.yy,
            xy: self.xy + o.xy,
        }
    }
}

impl std::ops::Sub for Sym2 {
    type Output = Sym2;
    fn sub(self, o: Sym2) -> Sym2 {
        Sym2 {
            xx: self.xx - o.xx,
            yy: self.yy - o.yy,
            xy: self.xy - o.xy,
        }
    }
}

impl std::ops::AddAssign for Sym2 {
    fn add_assign(&mut self, o: Sym2) {
        self.xx += o.xx;
        self.yy += o.yy;
        self.xy += o.xy;
    }
}

/// Apply a tensor stored in Voigt coordinates to a symmetric 2x2 matrix.
pub fn apply_voigt(c: &Matrix3<f64>, g: &Sym2) -> Sym2 {
    Sym2::from_voigt(&(c * g.voigt()))
}

/// `C[g, g]` for a tensor stored in Voigt coordinates.
pub fn qform2(c: &Matrix3<f64>, g: &Sym2) -> f64 {
    let v = g.voigt();
    v.dot(&(c * v))
}

/// Orthonormal coordinates of `sym F`.
pub fn sym_coords(f: &Matrix3<f64>) -> Vector6<f64> {
    let s = 0.5 * (f + f.transpose());
    Vector6::new(
        s[(0, 0)],
        s[(1, 1)],
        s[(2, 2)],
        SQRT_2 * s[(1, 2)],
        SQRT_2 * s[(0, 2)],
        SQRT_2 * s[(0, 1)],
    )
}

/// Inverse of [`sym_coords`] on symmetric matrices.
pub fn sym_from_coords(c: &Vector6<f64>) -> Matrix3<f64> {
    let (a, b, d) = (c[3] / SQRT_2, c[4] / SQRT_2, c[5] / SQRT_2);
    Matrix3::new(c[0], d, b, d, c[1], a, b, a, c[2])
}

/// Stored energy density `W`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StoredEnergy {
    /// `W(F) = mu |E|^2`, `E = (F^T F - Id)/2`. Zero Poisson ratio.
    SimplifiedStVK { mu: f64 },
    /// `W(F) = mu |E|^2 + lambda/2 (tr E)^2`. Nonzero Poisson ratio for `lambda > 0`;
    /// violates the zero-stretch reduction and is rejected unless explicitly allowed.
    StVK { mu: f64, lambda: f64 },
}

/// Frame-indifferent distance `D` between deformation gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DissipationDistance {
    /// `D(F1, F2) = gamma |F1^T F1 - F2^T F2|`.
    CauchyGreen { gamma: f64 },
}

/// Second-gradient perturbation `P`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Perturbation {
    /// `P(Z) = c_p |Z|^p`, `p > 3`.
    PowerNorm { c_p: f64, p: f64 },
}

/// Direct 2D input bypassing the 3D densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectForms {
    pub cw2: Matrix3<f64>,
    pub cd2: Matrix3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialSpec {
    pub w: StoredEnergy,
    pub d: DissipationDistance,
    pub p: Perturbation,
    /// Scaling exponent of the second-gradient term, in (0, 1).
    pub alpha: f64,
    pub direct: Option<DirectForms>,
    pub allow_nonzero_poisson: bool,
}

/// Which density to evaluate in [`MaterialSpec::eval_density`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DensityKind {
    W,
    D,
    P,
    DP,
}

/// Arguments to [`MaterialSpec::eval_density`].
#[derive(Clone, Copy, Debug)]
pub enum DensityArgs {
    F(Matrix3<f64>),
    Pair(Matrix3<f64>, Matrix3<f64>),
    Z(Tensor3),
}

/// Result of [`MaterialSpec::eval_density`].
#[derive(Clone, Copy, Debug)]
pub enum DensityValue {
    Scalar(f64),
    Tensor(Tensor3),
}

impl DensityValue {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            DensityValue::Scalar(s) => Some(*s),
            DensityValue::Tensor(_) => None,
        }
    }
}

fn tensor3_norm2(z: &Tensor3) -> f64 {
    z.iter().flatten().flatten().map(|x| x * x).sum()
}

impl MaterialSpec {
    /// The catalog material: simplified St. Venant-Kirchhoff energy,
    /// Cauchy-Green distance, power-norm perturbation.
    pub fn catalog(mu: f64, gamma: f64, c_p: f64, p: f64, alpha: f64) -> Result<Self> {
        let spec = MaterialSpec {
            w: StoredEnergy::SimplifiedStVK { mu },
            d: DissipationDistance::CauchyGreen { gamma },
            p: Perturbation::PowerNorm { c_p, p },
            alpha,
            direct: None,
            allow_nonzero_poisson: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Build from catalog tags as they appear in configuration files.
    #[allow(clippy::too_many_arguments)]
    pub fn from_tags(
        w: &str,
        mu: f64,
        lambda: f64,
        d: &str,
        gamma: f64,
        c_p: f64,
        p: f64,
        alpha: f64,
    ) -> Result<Self> {
        let w = match w {
            "stvk_simplified" => StoredEnergy::SimplifiedStVK { mu },
            "stvk_full" => StoredEnergy::StVK { mu, lambda },
            other => {
                return Err(VkError::config(
                    "material.w",
                    format!("unknown stored-energy tag `{other}`"),
                ))
            }
        };
        let d = match d {
            "cauchy_green" => DissipationDistance::CauchyGreen { gamma },
            other => {
                return Err(VkError::config(
                    "material.d",
                    format!("unknown distance tag `{other}`"),
                ))
            }
        };
        let spec = MaterialSpec {
            w,
            d,
            p: Perturbation::PowerNorm { c_p, p },
            alpha,
            direct: None,
            allow_nonzero_poisson: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.w {
            StoredEnergy::SimplifiedStVK { mu } => {
                if !(mu > 0.0 && mu.is_finite()) {
                    return Err(VkError::config("material.mu", "must be positive"));
                }
            }
            StoredEnergy::StVK { mu, lambda } => {
                if !(mu > 0.0 && mu.is_finite()) {
                    return Err(VkError::config("material.mu", "must be positive"));
                }
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(VkError::config("material.lambda", "must be nonnegative"));
                }
            }
        }
        let DissipationDistance::CauchyGreen { gamma } = self.d;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(VkError::config("material.gamma", "must be positive"));
        }
        let Perturbation::PowerNorm { c_p, p } = self.p;
        if !(c_p > 0.0 && c_p.is_finite()) {
            return Err(VkError::config("material.c_p", "must be positive"));
        }
        if !(p > 3.0 && p.is_finite()) {
            return Err(VkError::config("material.p", "exponent must exceed 3"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(VkError::config("material.alpha", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn w(&self, f: &Matrix3<f64>) -> f64 {
        let e = 0.5 * (f.transpose() * f - Matrix3::identity());
        match self.w {
            StoredEnergy::SimplifiedStVK { mu } => mu * e.norm_squared(),
            StoredEnergy::StVK { mu, lambda } => mu * e.norm_squared() + 0.5 * lambda * e.trace().powi(2),
        }
    }

    pub fn d(&self, f1: &Matrix3<f64>, f2: &Matrix3<f64>) -> f64 {
        let DissipationDistance::CauchyGreen { gamma } = self.d;
        gamma * (f1.transpose() * f1 - f2.transpose() * f2).norm()
    }

    pub fn d2(&self, f1: &Matrix3<f64>, f2: &Matrix3<f64>) -> f64 {
        let DissipationDistance::CauchyGreen { gamma } = self.d;
        gamma * gamma * (f1.transpose() * f1 - f2.transpose() * f2).norm_squared()
    }

    pub fn p(&self, z: &Tensor3) -> f64 {
        let Perturbation::PowerNorm { c_p, p } = self.p;
        c_p * tensor3_norm2(z).powf(0.5 * p)
    }

    /// `dP/dZ = c_p p |Z|^{p-2} Z`.
    pub fn dp(&self, z: &Tensor3) -> Tensor3 {
        let Perturbation::PowerNorm { c_p, p } = self.p;
        let n2 = tensor3_norm2(z);
        let s = if n2 == 0.0 {
            0.0
        } else {
            c_p * p * n2.powf(0.5 * (p - 2.0))
        };
        let mut out = *z;
        out.iter_mut()
            .flatten()
            .flatten()
            .for_each(|x| *x *= s);
        out
    }

    pub fn eval_density(&self, which: DensityKind, args: DensityArgs) -> Result<DensityValue> {
        match (which, args) {
            (DensityKind::W, DensityArgs::F(f)) => Ok(DensityValue::Scalar(self.w(&f))),
            (DensityKind::D, DensityArgs::Pair(a, b)) => Ok(DensityValue::Scalar(self.d(&a, &b))),
            (DensityKind::P, DensityArgs::Z(z)) => Ok(DensityValue::Scalar(self.p(&z))),
            (DensityKind::DP, DensityArgs::Z(z)) => Ok(DensityValue::Tensor(self.dp(&z))),
            (k, _) => Err(VkError::Precondition(format!(
                "argument shape does not match density {k:?}"
            ))),
        }
    }

    /// Dissipation potential `R(F, Fdot) = gamma^2 |F^T Fdot + Fdot^T F|^2 / 2`.
    pub fn dissipation_rate_r(&self, f: &Matrix3<f64>, fdot: &Matrix3<f64>) -> Result<f64> {
        if f.determinant() <= 0.0 {
            return Err(VkError::Precondition(
                "dissipation rate needs det F > 0".into(),
            ));
        }
        let DissipationDistance::CauchyGreen { gamma } = self.d;
        let s = f.transpose() * fdot + fdot.transpose() * f;
        Ok(0.5 * gamma * gamma * s.norm_squared())
    }
}

/// Which quadratic form to extract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormKind {
    W,
    D,
}

/// Quadratic form on 3x3 matrices depending only on the symmetric part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadForm3 {
    pub coefficients: Matrix6<f64>,
}

impl QuadForm3 {
    pub fn eval(&self, f: &Matrix3<f64>) -> f64 {
        let c = sym_coords(f);
        c.dot(&(self.coefficients * c))
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.coefficients).eigenvalues.min()
    }
}

/// Second-order expansion of a catalog density at the identity.
///
/// For `W` this is `d^2 W(Id)[F, F]`, for `D` it is `1/2 d^2_{F1} D^2(Id, Id)[F, F]`.
pub fn quadform3_from_density(spec: &MaterialSpec, which: FormKind) -> QuadForm3 {
    let trace = Vector6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0);
    let coefficients = match which {
        FormKind::W => match spec.w {
            StoredEnergy::SimplifiedStVK { mu } => Matrix6::identity() * (2.0 * mu),
            StoredEnergy::StVK { mu, lambda } => {
                Matrix6::identity() * (2.0 * mu) + trace * trace.transpose() * lambda
            }
        },
        FormKind::D => {
            let DissipationDistance::CauchyGreen { gamma } = spec.d;
            Matrix6::identity() * (4.0 * gamma * gamma)
        }
    };
    QuadForm3 { coefficients }
}

/// Second derivative of `t -> g(t)` at `t = 0` by central differences with one
/// Richardson step.
fn second_derivative_at_zero(g: impl Fn(f64) -> f64, step: f64) -> f64 {
    let d = |s: f64| (g(s) - 2.0 * g(0.0) + g(-s)) / (s * s);
    (4.0 * d(0.5 * step) - d(step)) / 3.0
}

/// Finite-difference reconstruction of the quadratic form, independent of the
/// closed forms in [`quadform3_from_density`]. Intended as a test oracle.
pub fn quadform3_finite_difference(spec: &MaterialSpec, which: FormKind, step: f64) -> Result<QuadForm3> {
    let id = Matrix3::<f64>::identity();
    let q = |f: &Matrix3<f64>| -> Result<f64> {
        let val = match which {
            FormKind::W => second_derivative_at_zero(|t| spec.w(&(id + f * t)), step),
            FormKind::D => 0.5 * second_derivative_at_zero(|t| spec.d2(&(id + f * t), &id), step),
        };
        if val.is_finite() {
            Ok(val)
        } else {
            Err(VkError::Numeric("non-finite density during differencing".into()))
        }
    };
    let basis: Vec<Matrix3<f64>> = (0..6)
        .map(|k| {
            let mut c = Vector6::zeros();
            c[k] = 1.0;
            sym_from_coords(&c)
        })
        .collect();
    let mut m = Matrix6::zeros();
    for i in 0..6 {
        m[(i, i)] = q(&basis[i])?;
    }
    for i in 0..6 {
        for j in (i + 1)..6 {
            let qij = q(&(basis[i] + basis[j]))?;
            let off = 0.5 * (qij - m[(i, i)] - m[(j, j)]);
            m[(i, j)] = off;
            m[(j, i)] = off;
        }
    }
    Ok(QuadForm3 { coefficients: m })
}

/// Result of minimizing a 3D form over e3 stretches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reduced2 {
    /// Reduced tensor in Voigt coordinates.
    pub c2: Matrix3<f64>,
    /// Linear map from Voigt coordinates of `G` to the minimizing `a`.
    pub a_map: Matrix3<f64>,
    pub a_is_zero: bool,
}

impl Reduced2 {
    pub fn eval(&self, g: &Sym2) -> f64 {
        qform2(&self.c2, g)
    }

    /// Minimizing stretch vector for `G`.
    pub fn argmin(&self, g: &Sym2) -> Vector3<f64> {
        self.a_map * g.voigt()
    }
}

/// `Q2(G) = min_a Q3(G* + a ⊗ e3 + e3 ⊗ a)`, solved exactly from the stationarity
/// system in `a`.
pub fn reduce_to_2d(q3: &QuadForm3, allow_nonzero_poisson: bool) -> Result<Reduced2> {
    let m = q3.coefficients;
    if q3.smallest_eigenvalue() <= 0.0 {
        return Err(VkError::Precondition(
            "3D quadratic form is not positive definite on symmetric matrices".into(),
        ));
    }
    // G (Voigt) -> symmetric 3x3 coordinates
    let mut embed = nalgebra::Matrix6x3::<f64>::zeros();
    embed[(0, 0)] = 1.0;
    embed[(1, 1)] = 1.0;
    embed[(5, 2)] = 1.0;
    // a -> coordinates of a ⊗ e3 + e3 ⊗ a
    let mut stretch = nalgebra::Matrix6x3::<f64>::zeros();
    stretch[(4, 0)] = SQRT_2;
    stretch[(3, 1)] = SQRT_2;
    stretch[(2, 2)] = 2.0;

    let k = stretch.transpose() * m * stretch;
    let k_inv = k
        .try_inverse()
        .ok_or_else(|| VkError::Numeric("stretch block is singular".into()))?;
    let a_map = -(k_inv * stretch.transpose() * m * embed);
    let c2 = embed.transpose() * m * embed + embed.transpose() * m * stretch * a_map;
    let c2 = 0.5 * (c2 + c2.transpose());

    let max_entry = a_map.abs().max();
    let a_is_zero = max_entry <= 1e-12 * m.abs().max();
    if !a_is_zero && !allow_nonzero_poisson {
        let mut rows = [[0.0; 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = a_map[(i, j)];
            }
        }
        return Err(VkError::AssumptionViolation {
            a_map: rows,
            max_entry,
        });
    }
    Ok(Reduced2 {
        c2,
        a_map,
        a_is_zero,
    })
}

/// Principal square root and its inverse of a symmetric positive definite 3x3 matrix.
pub fn sqrt_spd(c: &Matrix3<f64>) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let asym = (c - c.transpose()).abs().max();
    if asym > 1e-12 * c.abs().max().max(f64::MIN_POSITIVE) {
        return Err(VkError::Precondition("matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(0.5 * (c + c.transpose()));
    let max_eig = eig.eigenvalues.max();
    let min_eig = eig.eigenvalues.min();
    if !(max_eig > 0.0) || min_eig <= 1e-14 * max_eig {
        return Err(VkError::Singular { min_eig, max_eig });
    }
    let q = eig.eigenvectors;
    let root = eig.eigenvalues.map(f64::sqrt);
    let sqrt = q * Matrix3::from_diagonal(&root) * q.transpose();
    let inv_sqrt = q * Matrix3::from_diagonal(&root.map(|r| 1.0 / r)) * q.transpose();
    Ok((sqrt, inv_sqrt))
}

/// Reduced plate tensors with cached roots of the dissipation tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedForms {
    pub cw2: Matrix3<f64>,
    pub cd2: Matrix3<f64>,
    pub sqrt_cd2: Matrix3<f64>,
    pub inv_sqrt_cd2: Matrix3<f64>,
    pub a_min_verified: bool,
}

impl ReducedForms {
    /// Direct 2D tensors; both must be SPD.
    pub fn from_tensors(cw2: Matrix3<f64>, cd2: Matrix3<f64>) -> Result<Self> {
        sqrt_spd(&cw2)?;
        let (sqrt_cd2, inv_sqrt_cd2) = sqrt_spd(&cd2)?;
        Ok(ReducedForms {
            cw2,
            cd2,
            sqrt_cd2,
            inv_sqrt_cd2,
            a_min_verified: true,
        })
    }

    pub fn from_material(spec: &MaterialSpec) -> Result<Self> {
        if let Some(direct) = spec.direct {
            return Self::from_tensors(direct.cw2, direct.cd2);
        }
        let rw = reduce_to_2d(
            &quadform3_from_density(spec, FormKind::W),
            spec.allow_nonzero_poisson,
        )?;
        let rd = reduce_to_2d(
            &quadform3_from_density(spec, FormKind::D),
            spec.allow_nonzero_poisson,
        )?;
        let mut forms = Self::from_tensors(rw.c2, rd.c2)?;
        forms.a_min_verified = rw.a_is_zero && rd.a_is_zero;
        Ok(forms)
    }

    /// Isotropic forms `cw2 = 2 mu I`, `cd2 = 4 gamma^2 I` of the catalog material.
    pub fn catalog(mu: f64, gamma: f64) -> Result<Self> {
        Self::from_material(&MaterialSpec::catalog(mu, gamma, 1.0, 4.0, 0.5)?)
    }

    pub fn qw(&self, g: &Sym2) -> f64 {
        qform2(&self.cw2, g)
    }

    pub fn qd(&self, g: &Sym2) -> f64 {
        qform2(&self.cd2, g)
    }

    pub fn cw(&self, g: &Sym2) -> Sym2 {
        apply_voigt(&self.cw2, g)
    }

    pub fn cd(&self, g: &Sym2) -> Sym2 {
        apply_voigt(&self.cd2, g)
    }
}

/// Embed a 2x2 symmetric matrix into the upper-left block of a 3x3 matrix.
pub fn embed2(g: &Sym2) -> Matrix3<f64> {
    Matrix3::new(g.xx, g.xy, 0.0, g.xy, g.yy, 0.0, 0.0, 0.0, 0.0)
}
