//! Relaxed energy lifted to strain tensors through the invariants
//! `(tr eps, |dev eps - eps_p_n|)`.
//!
//! With `c = sqrt(K / 2mu)` the dimensionless coordinates are
//! `y1 = c tr eps`, `y2 = |dev eps - eps_p_n|`, and the yield radius is the
//! triangle `rho0(tr) = sqrt(beta K) (D/2 - |tr - mid|)_+` spanned by the trace
//! bounds. Energies and stresses are written out branch by branch in tensor
//! form; [`relaxed_energy_3d`] equals `2mu f_c(y1, y2)`.

use std::sync::Arc;

use thiserror::Error;

use crate::energy::{classify, EnergyError, EnvelopeParams, Region};
use crate::material::{InternalState, MaterialError, MaterialParams, Rho};
use crate::tensor::SymTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Model3dError {
    #[error("relaxed energy is only defined for p_n = 0, got p_n = {0}")]
    UnsupportedState(f64),
    #[error("deviatoric strain vanishes in region {0}")]
    DegenerateDeviator(Region),
    #[error("relaxed energy is not differentiable at tr eps = {tr} (trace bound)")]
    NondifferentiablePoint { tr: f64 },
    #[error(transparent)]
    Envelope(#[from] EnergyError),
    #[error(transparent)]
    Material(#[from] MaterialError),
}

/// Elastic moduli, hardening modulus and trace-strain bounds of the relaxed
/// material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedMaterial {
    k: f64,
    mu: f64,
    beta: f64,
    tr_min: f64,
    tr_max: f64,
    envelope: EnvelopeParams,
}

impl RelaxedMaterial {
    pub fn new(k: f64, mu: f64, beta: f64, tr_min: f64, tr_max: f64) -> Result<Self, Model3dError> {
        for (name, v) in [("K", k), ("mu", mu), ("beta", beta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(MaterialError::InvalidParams(format!("{name} must be positive, got {v}")).into());
            }
        }
        let c = (k / (2.0 * mu)).sqrt();
        let envelope = EnvelopeParams::new(beta / (2.0 * mu), c * tr_min, c * tr_max)?;
        Ok(Self { k, mu, beta, tr_min, tr_max, envelope })
    }

    /// Builds the material from the dimensionless envelope: `beta = 2mu b` and
    /// `tr eps_min/max = sqrt(2mu / K) y_min/max`.
    pub fn from_envelope(k: f64, mu: f64, p: &EnvelopeParams) -> Result<Self, Model3dError> {
        let inv = (2.0 * mu / k).sqrt();
        Self::new(k, mu, 2.0 * mu * p.b(), inv * p.y_min(), inv * p.y_max())
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn trace_bounds(&self) -> (f64, f64) {
        (self.tr_min, self.tr_max)
    }

    pub fn envelope(&self) -> &EnvelopeParams {
        &self.envelope
    }

    /// `sqrt(K / 2mu)`, the factor mapping `tr eps` to `y1`.
    pub fn trace_scale(&self) -> f64 {
        (self.k / (2.0 * self.mu)).sqrt()
    }

    fn mid(&self) -> f64 {
        0.5 * (self.tr_min + self.tr_max)
    }

    pub fn rho0(&self, tr: f64) -> f64 {
        let half = 0.5 * (self.tr_max - self.tr_min);
        if tr < self.tr_min || tr > self.tr_max {
            return 0.0;
        }
        ((self.beta * self.k).sqrt() * (half - (tr - self.mid()).abs())).max(0.0)
    }

    /// `rho0'(tr) = sqrt(beta K) sign(mid - tr)` inside the bounds.
    fn rho0_slope(&self, tr: f64) -> f64 {
        if tr <= self.tr_min || tr >= self.tr_max {
            return 0.0;
        }
        let s = self.mid() - tr;
        if s == 0.0 {
            0.0
        } else {
            (self.beta * self.k).sqrt() * s.signum()
        }
    }

    /// Height `A*` of the triangle vertices in units of `|dev eps|`.
    fn a_star(&self) -> f64 {
        self.envelope.y2_star()
    }

    /// The underlying tensorial material with yield radius `rho0`.
    pub fn material_params(&self) -> MaterialParams {
        MaterialParams {
            k: self.k,
            mu: self.mu,
            beta: self.beta,
            rho: Arc::new(TriangleRho { rm: *self }),
        }
    }

    /// Dimensionless coordinates `(y1, y2)` of a strain state.
    pub fn invariants(&self, eps: &SymTensor, s_n: &InternalState) -> (f64, f64) {
        (self.trace_scale() * eps.trace(), (eps.dev() - s_n.eps_p).norm())
    }

    pub fn classify(&self, eps: &SymTensor, s_n: &InternalState) -> Region {
        let (y1, y2) = self.invariants(eps, s_n);
        classify(&self.envelope, y1, y2)
    }
}

#[derive(Debug, Clone, Copy)]
struct TriangleRho {
    rm: RelaxedMaterial,
}

impl Rho for TriangleRho {
    fn value(&self, tr: f64) -> f64 {
        self.rm.rho0(tr)
    }

    fn derivative(&self, tr: f64) -> Option<f64> {
        if tr == self.rm.tr_min || tr == self.rm.tr_max || tr == self.rm.mid() {
            None
        } else {
            Some(self.rm.rho0_slope(tr))
        }
    }

    fn support(&self) -> (f64, f64) {
        (self.rm.tr_min, self.rm.tr_max)
    }
}

fn require_initial(s_n: &InternalState) -> Result<(), Model3dError> {
    if s_n.p != 0.0 {
        return Err(Model3dError::UnsupportedState(s_n.p));
    }
    Ok(())
}

/// Relaxed energy density and the branch it was evaluated on.
pub fn relaxed_energy_3d(
    rm: &RelaxedMaterial,
    eps: &SymTensor,
    s_n: &InternalState,
) -> Result<(f64, Region), Model3dError> {
    require_initial(s_n)?;
    let tr = eps.trace();
    let a = (eps.dev() - s_n.eps_p).norm();
    let region = rm.classify(eps, s_n);
    let (k, mu, beta) = (rm.k, rm.mu, rm.beta);
    let vol = 0.5 * k * tr * tr;
    let soft = mu * beta / (2.0 * mu + beta);
    let psi = match region {
        Region::Tilde => vol + soft * a * a,
        Region::Y1 => vol + mu * a * a,
        Region::Y2(_) => {
            let over = 2.0 * mu * a - rm.rho0(tr);
            vol + mu * a * a - over * over / (2.0 * (2.0 * mu + beta))
        }
        Region::Y3(_) => {
            let rho = rm.rho0(tr);
            let over = 2.0 * mu * a - rho;
            let e = a - rm.a_star() + rho / beta;
            vol + mu * a * a - over * over / (2.0 * (2.0 * mu + beta)) - soft * e * e
        }
        Region::Y4(_) => vol + soft * a * a + 0.5 * k * (tr - rm.tr_min) * (rm.tr_max - tr),
    };
    Ok((psi, region))
}

/// Relaxed stress, the strain derivative of [`relaxed_energy_3d`].
pub fn relaxed_stress_3d(
    rm: &RelaxedMaterial,
    eps: &SymTensor,
    s_n: &InternalState,
) -> Result<SymTensor, Model3dError> {
    require_initial(s_n)?;
    let tr = eps.trace();
    if tr == rm.tr_min || tr == rm.tr_max {
        return Err(Model3dError::NondifferentiablePoint { tr });
    }
    let d = eps.dev() - s_n.eps_p;
    let a = d.norm();
    let region = rm.classify(eps, s_n);
    let (k, mu, beta) = (rm.k, rm.mu, rm.beta);
    let soft = 2.0 * mu * beta / (2.0 * mu + beta);
    let id = SymTensor::IDENTITY;
    let unit = || {
        if a > 0.0 {
            Ok(d.scale(1.0 / a))
        } else {
            Err(Model3dError::DegenerateDeviator(region))
        }
    };
    let sigma = match region {
        Region::Tilde => id.scale(k * tr) + d.scale(soft),
        Region::Y1 => id.scale(k * tr) + d.scale(2.0 * mu),
        Region::Y2(_) => {
            let n = unit()?;
            let rho = rm.rho0(tr);
            let slope = rm.rho0_slope(tr);
            let over = (2.0 * mu * a - rho) / (2.0 * mu + beta);
            id.scale(k * tr + over * slope) + d.scale(2.0 * mu) - n.scale(2.0 * mu * over)
        }
        Region::Y3(_) => {
            let n = unit()?;
            let rho = rm.rho0(tr);
            let slope = rm.rho0_slope(tr);
            let over = (2.0 * mu * a - rho) / (2.0 * mu + beta);
            let e = a - rm.a_star() + rho / beta;
            id.scale(k * tr + over * slope - soft * e * slope / beta) + d.scale(2.0 * mu)
                - n.scale(2.0 * mu * over + soft * e)
        }
        Region::Y4(_) => id.scale(k * tr + k * (rm.mid() - tr)) + d.scale(soft),
    };
    Ok(sigma)
}

/// Consistent tangent `d sigma / d eps` in Voigt form (rows: stress components
/// `[xx, yy, zz, xy, yz, xz]`, columns: engineering strains), computed from
/// central differences of [`relaxed_stress_3d`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent {
    /// Symmetrised matrix.
    pub matrix: [[f64; 6]; 6],
    /// `|C - C^T| / |C|` before symmetrisation (Frobenius norms).
    pub asymmetry: f64,
}

/// Default perturbation step for [`tangent_3d`].
pub fn default_step(eps: &SymTensor) -> f64 {
    1e-7 * (1.0 + eps.norm())
}

pub fn tangent_3d(
    rm: &RelaxedMaterial,
    eps: &SymTensor,
    s_n: &InternalState,
    h: Option<f64>,
) -> Result<Tangent, Model3dError> {
    let h = h.unwrap_or_else(|| default_step(eps));
    let mut c = [[0.0; 6]; 6];
    for j in 0..6 {
        let mut e = [0.0; 6];
        e[j] = h;
        let de = SymTensor::from_voigt_strain(e);
        let plus = relaxed_stress_3d(rm, &(*eps + de), s_n)?;
        let minus = relaxed_stress_3d(rm, &(*eps - de), s_n)?;
        for i in 0..6 {
            c[i][j] = (plus.0[i] - minus.0[i]) / (2.0 * h);
        }
    }
    let mut skew = 0.0;
    let mut total = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            skew += (c[i][j] - c[j][i]).powi(2);
            total += c[i][j].powi(2);
        }
    }
    let asymmetry = if total > 0.0 { skew.sqrt() / total.sqrt() } else { 0.0 };
    let mut sym = c;
    for i in 0..6 {
        for j in 0..6 {
            sym[i][j] = 0.5 * (c[i][j] + c[j][i]);
        }
    }
    Ok(Tangent { matrix: sym, asymmetry })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::relaxed_energy_at;
    use nalgebra::{Matrix3, Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const K: f64 = 3.9e9;
    const MU: f64 = 2.8e9;

    fn material() -> RelaxedMaterial {
        let p = EnvelopeParams::new(0.095, -0.058, 0.00107).unwrap();
        RelaxedMaterial::from_envelope(K, MU, &p).unwrap()
    }

    /// Strain with prescribed invariants `(y1, y2)` and a random deviatoric direction.
    fn strain_at(rm: &RelaxedMaterial, y1: f64, y2: f64, rng: &mut ChaCha8Rng) -> SymTensor {
        let dir = SymTensor(std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).dev();
        let tr = y1 / rm.trace_scale();
        dir.scale(y2 / dir.norm()) + SymTensor::IDENTITY.scale(tr / 3.0)
    }

    #[test]
    fn trace_bounds_and_rho0() {
        let rm = material();
        let c = (K / (2.0 * MU)).sqrt();
        let (lo, hi) = rm.trace_bounds();
        assert!((lo * c + 0.058).abs() < 1e-15);
        assert!((hi * c - 0.00107).abs() < 1e-15);
        let peak = rm.rho0(0.5 * (lo + hi));
        let expect = 2.0 * MU * rm.envelope().apex_height();
        assert!((peak - expect).abs() < 1e-9 * expect);
        assert!((rm.beta() - 2.0 * MU * 0.095).abs() < 1e-3);
    }

    #[test]
    fn elastic_branch_matches_linear_elasticity() {
        let rm = material();
        let eps = SymTensor::new(-1e-3, -1.2e-3, -0.9e-3, 1e-4, -2e-4, 5e-5);
        let (psi, region) = relaxed_energy_3d(&rm, &eps, &InternalState::default()).unwrap();
        assert_eq!(region, Region::Y1);
        let tr = eps.trace();
        let expect = 0.5 * K * tr * tr + MU * eps.dev().dot(&eps.dev());
        assert!((psi - expect).abs() < 1e-12 * expect);
        let sigma = relaxed_stress_3d(&rm, &eps, &InternalState::default()).unwrap();
        let expect = SymTensor::IDENTITY.scale(K * tr) + eps.dev().scale(2.0 * MU);
        assert!((sigma - expect).norm() < 1e-12 * expect.norm());
    }

    #[test]
    fn y4_branch_values() {
        let rm = material();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eps = strain_at(&rm, -0.03, 0.3, &mut rng);
        let (psi, region) = relaxed_energy_3d(&rm, &eps, &InternalState::default()).unwrap();
        assert!(matches!(region, Region::Y4(_)));
        let tr = eps.trace();
        let (lo, hi) = rm.trace_bounds();
        let soft = 2.0 * MU * rm.beta() / (2.0 * MU + rm.beta());
        let dn = eps.dev().dot(&eps.dev());
        let expect = 0.5 * K * tr * tr + 0.5 * soft * dn + 0.5 * K * (tr - lo) * (hi - tr);
        assert!((psi - expect).abs() < 1e-12 * expect);
        let sigma = relaxed_stress_3d(&rm, &eps, &InternalState::default()).unwrap();
        let expect = SymTensor::IDENTITY.scale(K * tr + K * (0.5 * (hi + lo) - tr)) + eps.dev().scale(soft);
        assert!((sigma - expect).norm() < 1e-12 * expect.norm());
    }

    #[test]
    fn substitution_identity() {
        let rm = material();
        let p = *rm.envelope();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5000 {
            let y1 = rng.gen_range(-0.09..0.03);
            let y2 = rng.gen_range(0.0..0.3);
            let eps = strain_at(&rm, y1, y2, &mut rng);
            let (y1, y2) = rm.invariants(&eps, &InternalState::default());
            let (psi, _) = relaxed_energy_3d(&rm, &eps, &InternalState::default()).unwrap();
            let expect = 2.0 * MU * relaxed_energy_at(&p, y1, y2);
            assert!((psi - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{psi} vs {expect}");
        }
    }

    #[test]
    fn shifted_state_uses_relative_deviator() {
        let rm = material();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eps = strain_at(&rm, -0.02, 0.05, &mut rng);
        let eps_p = SymTensor::new(1e-3, -1e-3, 0.0, 2e-3, 0.0, 0.0);
        let s = InternalState::new(eps_p, 0.0);
        let (psi, _) = relaxed_energy_3d(&rm, &eps, &s).unwrap();
        let (y1, y2) = rm.invariants(&eps, &s);
        assert!((psi - 2.0 * MU * relaxed_energy_at(rm.envelope(), y1, y2)).abs() < 1e-12 * psi);
        assert!(matches!(
            relaxed_energy_3d(&rm, &eps, &InternalState::new(eps_p, 1e-3)),
            Err(Model3dError::UnsupportedState(_))
        ));
    }

    #[test]
    fn stress_matches_energy_differences_in_every_region() {
        let rm = material();
        let p = *rm.envelope();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut hits = [0usize; 5];
        let mut tries = 0;
        while hits.iter().any(|&h| h < 50) {
            tries += 1;
            assert!(tries < 100_000);
            let y1 = rng.gen_range(-0.08..0.02);
            let y2 = rng.gen_range(0.0..0.2);
            let region = classify(&p, y1, y2);
            let idx = region.index() as usize;
            if hits[idx] >= 50 || (y1 - p.y_min()).abs() < 1e-4 || (y1 - p.y_max()).abs() < 1e-4 {
                continue;
            }
            let eps = strain_at(&rm, y1, y2, &mut rng);
            let s = InternalState::default();
            let sigma = relaxed_stress_3d(&rm, &eps, &s).unwrap();
            let h = 1e-8;
            for j in 0..6 {
                let mut e = [0.0; 6];
                e[j] = h;
                let de = SymTensor::from_voigt_strain(e);
                let fp = relaxed_energy_3d(&rm, &(eps + de), &s).unwrap().0;
                let fm = relaxed_energy_3d(&rm, &(eps - de), &s).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                let exact = sigma.0[j];
                assert!(
                    (fd - exact).abs() <= 1e-6 * sigma.norm(),
                    "{region}: component {j}: {fd} vs {exact}"
                );
            }
            hits[idx] += 1;
        }
    }

    #[test]
    fn isotropy() {
        let rm = material();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let eps = strain_at(&rm, rng.gen_range(-0.08..0.02), rng.gen_range(0.0..0.2), &mut rng);
            let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let q: Matrix3<f64> = Rotation3::new(axis * 2.0).into_inner();
            let s = InternalState::default();
            let a = relaxed_energy_3d(&rm, &eps, &s).unwrap().0;
            let b = relaxed_energy_3d(&rm, &eps.rotate(&q), &s).unwrap().0;
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn tangent_in_elastic_region_is_isotropic_elasticity() {
        let rm = material();
        let eps = SymTensor::new(-1e-3, -1e-3, -1e-3, 1e-4, 0.0, 0.0);
        let t = tangent_3d(&rm, &eps, &InternalState::default(), None).unwrap();
        let c = t.matrix;
        let scale = K + 4.0 / 3.0 * MU;
        assert!((c[0][0] - scale).abs() < 1e-6 * scale);
        assert!((c[0][1] - (K - 2.0 / 3.0 * MU)).abs() < 1e-6 * scale);
        assert!((c[3][3] - MU).abs() < 1e-6 * scale);
        assert!(c[0][3].abs() < 1e-6 * scale);
        assert!(t.asymmetry < 1e-6);
    }

    #[test]
    fn tangent_is_flat_along_the_affine_triangle() {
        let rm = material();
        let p = *rm.envelope();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // inside the triangle: y1 close to y_mid, y2 between apex and Y*
        let eps = strain_at(&rm, p.y_mid() - 0.005, 0.5 * (p.apex_height() + p.y2_star()), &mut rng);
        let s = InternalState::default();
        assert!(matches!(rm.classify(&eps, &s), Region::Y3(_)));
        let t = tangent_3d(&rm, &eps, &s, None).unwrap();
        assert!(t.asymmetry < 1e-6, "{}", t.asymmetry);
        // along the current strain direction the energy is affine in (tr, |dev|)
        let dir = eps.dev().scale(1.0 / eps.dev().norm()) + SymTensor::IDENTITY.scale(0.01);
        let v = dir.to_voigt_strain();
        let mut curv = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                curv += v[i] * t.matrix[i][j] * v[j];
            }
        }
        assert!(curv.abs() < 1e-6 * (K + MU), "{curv}");
    }
}
