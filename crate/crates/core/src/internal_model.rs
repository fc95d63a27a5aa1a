//! Internal-model synthesis: per-axis (M, N), the Sylvester solution T(σ),
//! the fitted parameterization `Ψ T⁻¹(σ) = E₀ + Σ_j E^j Ω_j(σ)`, and the
//! regressor `ρ` / parameter vector `R(σ, μ)` used by the adaptive law.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Error, Result};
use crate::exosystem::{
    choose_mn, default_poles, solve_sylvester, sylvester_residual, ExosystemDesign, ExosystemStructure,
};
use crate::linalg::{block_diag, from_rows, rank, to_rows};
use crate::plant::{f_terms, split_l, InertiaStructure};

/// Maximum held-out error accepted for the fitted parameterization.
pub const FIT_TOL: f64 = 1e-8;

/// Basis functions `Ω_j(σ) = Π_k σ_k^{e_jk}` given by exponent vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OmegaBasis {
    pub exponents: Vec<Vec<u32>>,
}

impl OmegaBasis {
    /// `Ω_k(σ) = σ_k²` for every unknown frequency.
    pub fn squared(n_sigma: usize) -> Self {
        let exponents = (0..n_sigma)
            .map(|k| {
                let mut e = vec![0; n_sigma];
                e[k] = 2;
                e
            })
            .collect();
        OmegaBasis { exponents }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn validate(&self, n_sigma: usize) -> Result<()> {
        for (j, e) in self.exponents.iter().enumerate() {
            if e.len() != n_sigma {
                return Err(invalid(format!(
                    "basis function {} has {} exponents, expected {n_sigma}",
                    j + 1,
                    e.len()
                )));
            }
            if e.iter().all(|&p| p == 0) {
                return Err(invalid(format!(
                    "basis function {} is constant; constants belong to E0",
                    j + 1
                )));
            }
            if self.exponents[..j].contains(e) {
                return Err(invalid(format!("basis function {} is repeated", j + 1)));
            }
        }
        Ok(())
    }

    pub fn eval(&self, sigma: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.exponents.iter().map(|e| {
                e.iter()
                    .zip(sigma)
                    .map(|(&p, &s)| s.powi(p as i32))
                    .product::<f64>()
            }),
        )
    }

    /// Human-readable tags such as `sigma1^2*sigma2`.
    pub fn tags(&self) -> Vec<String> {
        self.exponents
            .iter()
            .map(|e| {
                let parts: Vec<String> = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0)
                    .map(|(k, &p)| {
                        if p == 1 {
                            format!("sigma{}", k + 1)
                        } else {
                            format!("sigma{}^{p}", k + 1)
                        }
                    })
                    .collect();
                parts.join("*")
            })
            .collect()
    }
}

/// Points at which `Ψ T⁻¹(σ)` is sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaGrid {
    pub points: Vec<Vec<f64>>,
}

const MAX_GRID_POINTS: usize = 200_000;

impl SigmaGrid {
    /// Tensor grid with `per_dim` evenly spaced points on each range.
    pub fn tensor(ranges: &[(f64, f64)], per_dim: usize) -> Result<Self> {
        let axes: Vec<Vec<f64>> = ranges
            .iter()
            .map(|&(lo, hi)| {
                (0..per_dim)
                    .map(|i| {
                        if per_dim == 1 {
                            lo
                        } else {
                            lo + (hi - lo) * i as f64 / (per_dim - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        Self::product(&axes)
    }

    /// Held-out grid of the midpoints between consecutive tensor points.
    pub fn midpoints(ranges: &[(f64, f64)], per_dim: usize) -> Result<Self> {
        let axes: Vec<Vec<f64>> = ranges
            .iter()
            .map(|&(lo, hi)| {
                let h = (hi - lo) / (per_dim.max(2) - 1) as f64;
                (0..per_dim.max(2) - 1).map(|i| lo + h * (i as f64 + 0.5)).collect()
            })
            .collect();
        Self::product(&axes)
    }

    fn product(axes: &[Vec<f64>]) -> Result<Self> {
        let total = axes.iter().map(|a| a.len()).try_fold(1usize, |acc, n| acc.checked_mul(n));
        match total {
            Some(n) if n <= MAX_GRID_POINTS => {}
            _ => return Err(invalid("σ grid too large; reduce grid points or unknown frequencies")),
        }
        let mut points = vec![Vec::new()];
        for axis in axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&s| {
                        let mut q = p.clone();
                        q.push(s);
                        q
                    })
                })
                .collect();
        }
        Ok(SigmaGrid { points })
    }
}

/// `Ψ T⁻¹(σ)` (3 x r) for the per-axis pairs `(M_i, N_i)` and exosystem `exo`.
pub fn psi_tinv(m_axes: &[DMatrix<f64>], n_axes: &[DVector<f64>], exo: &ExosystemDesign) -> Result<DMatrix<f64>> {
    let r = exo.r();
    let mut out = DMatrix::zeros(3, r);
    let mut off = 0;
    for (i, ax) in exo.axes.iter().enumerate() {
        let ri = ax.order();
        if ri == 0 {
            continue;
        }
        let n_col = DMatrix::from_column_slice(ri, 1, n_axes[i].as_slice());
        let t = solve_sylvester(&ax.phi, &m_axes[i], &n_col, &ax.psi)?;
        let t_inv = t.clone().try_inverse().ok_or_else(|| Error::Synthesis {
            matrix: format!("T{}", i + 1),
            reason: "not invertible".into(),
        })?;
        let row = &ax.psi * t_inv;
        out.view_mut((i, off), (1, ri)).copy_from(&row);
        off += ri;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterizationFit {
    pub e0: DMatrix<f64>,
    pub e_blocks: Vec<DMatrix<f64>>,
    /// Max entrywise error on the validation grid.
    pub fit_residual: f64,
}

/// Least-squares fit of `Ψ T⁻¹(σ)` against `[1, Ω_1(σ), …, Ω_ℓ(σ)]`.
///
/// Axes whose block is bitwise constant over the training grid carry no
/// unknown frequency; they are placed in `E₀` exactly and get zero rows in
/// every `E^j`.
pub fn fit_parameterization(
    m_axes: &[DMatrix<f64>],
    n_axes: &[DVector<f64>],
    exo_builder: &dyn Fn(&[f64]) -> Result<ExosystemDesign>,
    basis: &OmegaBasis,
    grid: &SigmaGrid,
    validation: &SigmaGrid,
) -> Result<ParameterizationFit> {
    let ell = basis.len();
    if grid.points.len() < ell + 1 {
        return Err(invalid("σ grid has fewer points than basis functions"));
    }
    let samples: Vec<DMatrix<f64>> = grid
        .points
        .iter()
        .map(|s| psi_tinv(m_axes, n_axes, &exo_builder(s)?))
        .collect::<Result<_>>()?;
    let (rows, r) = samples[0].shape();

    let k = grid.points.len();
    let mut x = DMatrix::zeros(k, ell + 1);
    let mut y = DMatrix::zeros(k, rows * r);
    for (p, (sigma, s)) in grid.points.iter().zip(&samples).enumerate() {
        x[(p, 0)] = 1.0;
        for (j, w) in basis.eval(sigma).iter().enumerate() {
            x[(p, j + 1)] = *w;
        }
        for i in 0..rows {
            for c in 0..r {
                y[(p, i * r + c)] = s[(i, c)];
            }
        }
    }
    if rank(&x, 1e-12) < ell + 1 {
        return Err(invalid("Ω basis is not linearly independent on the σ grid"));
    }
    let coef = x
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| invalid(format!("least-squares fit failed: {e}")))?;

    let mut e0 = DMatrix::zeros(rows, r);
    let mut e_blocks = vec![DMatrix::zeros(rows, r); ell];
    for i in 0..rows {
        let frozen = samples.iter().all(|s| s.row(i) == samples[0].row(i));
        for c in 0..r {
            if frozen {
                e0[(i, c)] = samples[0][(i, c)];
            } else {
                e0[(i, c)] = coef[(0, i * r + c)];
                for (j, e) in e_blocks.iter_mut().enumerate() {
                    e[(i, c)] = coef[(j + 1, i * r + c)];
                }
            }
        }
    }

    let mut worst = (0.0f64, Vec::new());
    for sigma in &validation.points {
        let exact = psi_tinv(m_axes, n_axes, &exo_builder(sigma)?)?;
        let approx = parameterized(&e0, &e_blocks, &basis.eval(sigma));
        let err = (exact - approx).amax();
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, sigma.clone());
        }
    }
    if !(worst.0 <= FIT_TOL) {
        return Err(Error::BasisInadequate {
            residual: worst.0,
            worst_sigma: worst.1,
        });
    }
    Ok(ParameterizationFit {
        e0,
        e_blocks,
        fit_residual: worst.0,
    })
}

fn parameterized(e0: &DMatrix<f64>, e_blocks: &[DMatrix<f64>], omega: &DVector<f64>) -> DMatrix<f64> {
    let mut out = e0.clone();
    for (e, w) in e_blocks.iter().zip(omega.iter()) {
        out += e * *w;
    }
    out
}

/// Synthesis options. Every field has a default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DesignConfig {
    /// Internal-model poles per axis; `None` uses [`default_poles`].
    pub poles: [Option<Vec<Complex64>>; 3],
    pub basis: Option<OmegaBasis>,
    /// Expansion point for the unknown frequencies (default 0).
    pub nominal_sigma: Option<Vec<f64>>,
    /// Fit range per unknown frequency (default `[nominal, nominal + 1.5]`).
    pub grid_range: Option<Vec<(f64, f64)>>,
    /// Grid points per unknown frequency (default `2(ℓ+1) + 1`).
    pub grid_points: Option<usize>,
}

pub const DEFAULT_GRID_WIDTH: f64 = 1.5;

/// Everything the controller synthesizer produces.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalModelDesign {
    pub structure: ExosystemStructure,
    pub poles: [Vec<Complex64>; 3],
    pub m_axes: Vec<DMatrix<f64>>,
    pub n_axes: Vec<DVector<f64>>,
    /// r x r block diagonal.
    pub m: DMatrix<f64>,
    /// r x 3 block diagonal.
    pub n: DMatrix<f64>,
    /// Cached `M N` (r x 3).
    pub mn: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub nominal_sigma: Vec<f64>,
    /// `T` at the nominal σ.
    pub t_nominal: DMatrix<f64>,
    pub e0: DMatrix<f64>,
    pub e_blocks: Vec<DMatrix<f64>>,
    pub basis: OmegaBasis,
    pub fit_residual: f64,
    pub sylvester_residual: f64,
}

fn assemble_mn(m_axes: &[DMatrix<f64>], n_axes: &[DVector<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = block_diag(m_axes);
    let n_blocks: Vec<DMatrix<f64>> = n_axes
        .iter()
        .map(|n| DMatrix::from_column_slice(n.len(), 1, n.as_slice()))
        .collect();
    (m, block_diag(&n_blocks))
}

/// Runs the full chain: exosystem, (M, N), Sylvester at the nominal σ and
/// the parameterization fit.
pub fn synthesize(structure: &ExosystemStructure, config: &DesignConfig) -> Result<InternalModelDesign> {
    let n_sigma = structure.n_sigma();
    let basis = config.basis.clone().unwrap_or_else(|| OmegaBasis::squared(n_sigma));
    basis.validate(n_sigma)?;
    let nominal = config.nominal_sigma.clone().unwrap_or_else(|| vec![0.0; n_sigma]);
    if nominal.len() != n_sigma {
        return Err(dim(format!("nominal σ needs {n_sigma} entries")));
    }
    let ranges = config.grid_range.clone().unwrap_or_else(|| {
        nominal.iter().map(|&s| (s, s + DEFAULT_GRID_WIDTH)).collect()
    });
    if ranges.len() != n_sigma {
        return Err(dim(format!("grid range needs {n_sigma} entries")));
    }
    if ranges.iter().any(|&(lo, hi)| !(hi > lo) || !lo.is_finite() || !hi.is_finite()) {
        return Err(invalid("grid ranges must be finite with hi > lo"));
    }
    let per_dim = config.grid_points.unwrap_or(2 * (basis.len() + 1) + 1);
    if per_dim < 2 * (basis.len() + 1) {
        return Err(invalid(format!(
            "grid needs at least {} points per unknown frequency",
            2 * (basis.len() + 1)
        )));
    }

    let orders = structure.orders();
    let mut poles: [Vec<Complex64>; 3] = Default::default();
    let mut m_axes = Vec::with_capacity(3);
    let mut n_axes = Vec::with_capacity(3);
    for i in 0..3 {
        let ri = orders[i];
        if ri == 0 {
            if config.poles[i].as_ref().is_some_and(|p| !p.is_empty()) {
                return Err(invalid(format!("axis {}: poles given for an empty exosystem", i + 1)));
            }
            m_axes.push(DMatrix::zeros(0, 0));
            n_axes.push(DVector::zeros(0));
            continue;
        }
        let configured = config.poles[i].as_deref();
        let p = configured.map_or_else(|| default_poles(ri), <[_]>::to_vec);
        let (m, n) = choose_mn(ri, configured).map_err(|e| match e {
            Error::InvalidInput(msg) => invalid(format!("axis {}: {msg}", i + 1)),
            other => other,
        })?;
        poles[i] = p;
        m_axes.push(m);
        n_axes.push(n);
    }
    let (m, n) = assemble_mn(&m_axes, &n_axes);

    let exo_nominal = structure.exosystem_unchecked(&nominal)?;
    let t_blocks: Vec<DMatrix<f64>> = (0..3)
        .map(|i| {
            let ax = &exo_nominal.axes[i];
            if ax.order() == 0 {
                return Ok(DMatrix::zeros(0, 0));
            }
            let n_col = DMatrix::from_column_slice(ax.order(), 1, n_axes[i].as_slice());
            solve_sylvester(&ax.phi, &m_axes[i], &n_col, &ax.psi).map_err(|e| match e {
                Error::Synthesis { reason, .. } => Error::Synthesis {
                    matrix: format!("T{}", i + 1),
                    reason,
                },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let t_nominal = block_diag(&t_blocks);
    let sylvester_res = sylvester_residual(&t_nominal, &exo_nominal.phi, &m, &n, &exo_nominal.psi);

    let builder = |s: &[f64]| structure.exosystem_unchecked(s);
    let grid = SigmaGrid::tensor(&ranges, per_dim)?;
    let validation = SigmaGrid::midpoints(&ranges, per_dim)?;
    let fit = fit_parameterization(&m_axes, &n_axes, &builder, &basis, &grid, &validation)?;

    let mn = &m * &n;
    Ok(InternalModelDesign {
        structure: structure.clone(),
        poles,
        m_axes,
        n_axes,
        m,
        n,
        mn,
        psi: exo_nominal.psi,
        nominal_sigma: nominal,
        t_nominal,
        e0: fit.e0,
        e_blocks: fit.e_blocks,
        basis,
        fit_residual: fit.fit_residual,
        sylvester_residual: sylvester_res,
    })
}

impl InternalModelDesign {
    pub fn r(&self) -> usize {
        self.m.nrows()
    }

    /// Number of basis functions ℓ.
    pub fn ell(&self) -> usize {
        self.e_blocks.len()
    }

    pub fn n_sigma(&self) -> usize {
        self.structure.n_sigma()
    }

    /// Length of `R̂` for `n_mu` unknown inertia entries.
    pub fn r_hat_len(&self, n_mu: usize) -> usize {
        n_mu + self.ell() * n_mu + self.ell()
    }

    pub fn exosystem(&self, sigma: &[f64]) -> Result<ExosystemDesign> {
        self.structure.exosystem_unchecked(sigma)
    }

    /// Block-diagonal `T(σ)`.
    pub fn t_of(&self, sigma: &[f64]) -> Result<DMatrix<f64>> {
        let exo = self.exosystem(sigma)?;
        let blocks: Vec<DMatrix<f64>> = exo
            .axes
            .iter()
            .enumerate()
            .map(|(i, ax)| {
                if ax.order() == 0 {
                    return Ok(DMatrix::zeros(0, 0));
                }
                let n_col = DMatrix::from_column_slice(ax.order(), 1, self.n_axes[i].as_slice());
                solve_sylvester(&ax.phi, &self.m_axes[i], &n_col, &ax.psi)
            })
            .collect::<Result<_>>()?;
        Ok(block_diag(&blocks))
    }

    /// Exact `Ψ T⁻¹(σ)` from the Sylvester solution.
    pub fn psi_tinv(&self, sigma: &[f64]) -> Result<DMatrix<f64>> {
        psi_tinv(&self.m_axes, &self.n_axes, &self.exosystem(sigma)?)
    }

    /// `E₀ + Σ_j E^j Ω_j(σ)`.
    pub fn psi_tinv_parameterized(&self, sigma: &[f64]) -> DMatrix<f64> {
        parameterized(&self.e0, &self.e_blocks, &self.basis.eval(sigma))
    }

    pub fn omega(&self, sigma: &[f64]) -> DVector<f64> {
        self.basis.eval(sigma)
    }

    /// Checks that a controller state has the dimensions fixed by the design.
    pub fn check_controller_state(&self, state: &ControllerState, n_mu: usize) -> Result<()> {
        let r = self.r();
        if state.v.len() != r
            || state.zeta.shape() != (r, n_mu)
            || state.r_hat.len() != self.r_hat_len(n_mu)
        {
            return Err(dim(format!(
                "controller state (v {}, ζ {:?}, R̂ {}) does not match design (r {r}, n_mu {n_mu}, ℓ {})",
                state.v.len(),
                state.zeta.shape(),
                state.r_hat.len(),
                self.ell()
            )));
        }
        Ok(())
    }
}

/// `[E¹B, E²B, …, E^ℓB]`: satisfies `(E∘B)(Ω ⊗ c) = E(Ω ⊗ I_r) B c`.
pub fn block_row_product(e_blocks: &[DMatrix<f64>], b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = b.ncols();
    let rows = e_blocks.first().map_or(3, |e| e.nrows());
    let mut out = DMatrix::zeros(rows, e_blocks.len() * m);
    for (j, e) in e_blocks.iter().enumerate() {
        if e.ncols() != b.nrows() || e.nrows() != rows {
            return Err(invalid(format!(
                "block product: E{} is {:?}, B is {:?}",
                j + 1,
                e.shape(),
                b.shape()
            )));
        }
        out.view_mut((0, j * m), (rows, m)).copy_from(&(e * b));
    }
    Ok(out)
}

/// `ρ = [F₁ + E₀(N L₁ + ζ),  E∘(ζ + N L₁),  E∘(N L₀ − v)]`.
pub fn regressor_rho<P: InertiaStructure + ?Sized>(
    omega_e: &Vector3<f64>,
    zeta: &DMatrix<f64>,
    v: &DVector<f64>,
    design: &InternalModelDesign,
    par: &P,
) -> Result<DMatrix<f64>> {
    let r = design.r();
    let n_mu = par.n_mu();
    if zeta.shape() != (r, n_mu) || v.len() != r {
        return Err(invalid(format!(
            "regressor: ζ {:?} / v {} do not match r = {r}, n_mu = {n_mu}",
            zeta.shape(),
            v.len()
        )));
    }
    let (l1, l0) = split_l(omega_e, par);
    let (f1, _) = f_terms(omega_e, par);
    let b = zeta + &design.n * l1;
    let l0 = DVector::from_column_slice(l0.as_slice());
    let c = &design.n * l0 - v;
    let rho1 = f1 + &design.e0 * &b;
    let rho2 = block_row_product(&design.e_blocks, &b)?;
    let rho3 = block_row_product(&design.e_blocks, &DMatrix::from_column_slice(r, 1, c.as_slice()))?;
    let ell = design.ell();
    let mut rho = DMatrix::zeros(3, n_mu + ell * n_mu + ell);
    rho.view_mut((0, 0), (3, n_mu)).copy_from(&rho1);
    rho.view_mut((0, n_mu), (3, ell * n_mu)).copy_from(&rho2);
    rho.view_mut((0, n_mu + ell * n_mu), (3, ell)).copy_from(&rho3);
    Ok(rho)
}

/// `R(σ, μ) = [μ; Ω(σ) ⊗ μ; Ω(σ)]`.
pub fn true_r(sigma: &[f64], mu: &DVector<f64>, basis: &OmegaBasis) -> DVector<f64> {
    let omega = basis.eval(sigma);
    let n_mu = mu.len();
    let ell = omega.len();
    let mut out = DVector::zeros(n_mu + ell * n_mu + ell);
    out.rows_mut(0, n_mu).copy_from(mu);
    for j in 0..ell {
        out.rows_mut(n_mu + j * n_mu, n_mu).copy_from(&(mu * omega[j]));
    }
    out.rows_mut(n_mu + ell * n_mu, ell).copy_from(&omega);
    out
}

/// `v̇ = M v + N u + N F₀(ω_e) − M N L₀(ω_e)`.
pub fn internal_model_rhs<P: InertiaStructure + ?Sized>(
    v: &DVector<f64>,
    u: &Vector3<f64>,
    omega_e: &Vector3<f64>,
    design: &InternalModelDesign,
    par: &P,
) -> DVector<f64> {
    let (_, l0) = split_l(omega_e, par);
    let (_, f0) = f_terms(omega_e, par);
    let forcing = u + f0;
    &design.m * v + &design.n * DVector::from_column_slice(forcing.as_slice())
        - &design.mn * DVector::from_column_slice(l0.as_slice())
}

/// `ζ̇ = M ζ + M N L₁(ω_e) − N F₁(ω_e)`.
pub fn compensator_rhs<P: InertiaStructure + ?Sized>(
    zeta: &DMatrix<f64>,
    omega_e: &Vector3<f64>,
    design: &InternalModelDesign,
    par: &P,
) -> DMatrix<f64> {
    let (l1, _) = split_l(omega_e, par);
    let (f1, _) = f_terms(omega_e, par);
    &design.m * zeta + &design.mn * l1 - &design.n * f1
}

/// Controller states `(v, ζ, R̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub v: DVector<f64>,
    pub zeta: DMatrix<f64>,
    pub r_hat: DVector<f64>,
}

impl ControllerState {
    pub fn zeros(design: &InternalModelDesign, n_mu: usize) -> Self {
        ControllerState {
            v: DVector::zeros(design.r()),
            zeta: DMatrix::zeros(design.r(), n_mu),
            r_hat: DVector::zeros(design.r_hat_len(n_mu)),
        }
    }

    pub fn new(
        v: DVector<f64>,
        zeta: DMatrix<f64>,
        r_hat: DVector<f64>,
        design: &InternalModelDesign,
        n_mu: usize,
    ) -> Result<Self> {
        let s = ControllerState { v, zeta, r_hat };
        design.check_controller_state(&s, n_mu)?;
        Ok(s)
    }
}

/// Version tag of the design export format.
pub const DESIGN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignResiduals {
    pub sylvester: f64,
    pub fit: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisExport {
    pub exponents: Vec<Vec<u32>>,
    pub tags: Vec<String>,
}

/// Serialized form of an [`InternalModelDesign`]. Matrices are row-major
/// and floats are written in shortest round-trip form, so a reload is
/// bit-exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignExport {
    pub schema_version: u32,
    pub structure: ExosystemStructure,
    pub orders: [usize; 3],
    /// `[re, im]` pairs per axis.
    pub poles: [Vec<[f64; 2]>; 3],
    pub nominal_sigma: Vec<f64>,
    pub basis: BasisExport,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    #[serde(rename = "N")]
    pub n: Vec<Vec<f64>>,
    #[serde(rename = "Psi")]
    pub psi: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
    #[serde(rename = "E0")]
    pub e0: Vec<Vec<f64>>,
    #[serde(rename = "E_blocks")]
    pub e_blocks: Vec<Vec<Vec<f64>>>,
    pub residuals: DesignResiduals,
}

impl InternalModelDesign {
    pub fn to_export(&self) -> DesignExport {
        DesignExport {
            schema_version: DESIGN_SCHEMA_VERSION,
            structure: self.structure.clone(),
            orders: self.structure.orders(),
            poles: self.poles.clone().map(|p| p.iter().map(|z| [z.re, z.im]).collect()),
            nominal_sigma: self.nominal_sigma.clone(),
            basis: BasisExport {
                exponents: self.basis.exponents.clone(),
                tags: self.basis.tags(),
            },
            m: to_rows(&self.m),
            n: to_rows(&self.n),
            psi: to_rows(&self.psi),
            t: to_rows(&self.t_nominal),
            e0: to_rows(&self.e0),
            e_blocks: self.e_blocks.iter().map(to_rows).collect(),
            residuals: DesignResiduals {
                sylvester: self.sylvester_residual,
                fit: self.fit_residual,
            },
        }
    }

    pub fn from_export(ex: &DesignExport) -> Result<Self> {
        if ex.schema_version != DESIGN_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "design schema_version {} is not supported (expected {DESIGN_SCHEMA_VERSION})",
                ex.schema_version
            )));
        }
        let orders = ex.structure.orders();
        if orders != ex.orders {
            return Err(Error::Schema("design orders disagree with its structure".into()));
        }
        let basis = OmegaBasis {
            exponents: ex.basis.exponents.clone(),
        };
        basis
            .validate(ex.structure.n_sigma())
            .map_err(|e| Error::Schema(e.to_string()))?;
        let r: usize = orders.iter().sum();
        let m = from_rows(&ex.m, r, "M")?;
        let n = from_rows(&ex.n, 3, "N")?;
        let psi = from_rows(&ex.psi, r, "Psi")?;
        let t = from_rows(&ex.t, r, "T")?;
        let e0 = from_rows(&ex.e0, r, "E0")?;
        if m.nrows() != r || n.nrows() != r || psi.nrows() != 3 || t.nrows() != r || e0.nrows() != 3 {
            return Err(Error::Schema(format!("design matrices must match r = {r}")));
        }
        let e_blocks: Vec<DMatrix<f64>> = ex
            .e_blocks
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let e = from_rows(b, r, &format!("E_blocks[{j}]"))?;
                if e.nrows() != 3 {
                    return Err(Error::Schema(format!("E_blocks[{j}] must have 3 rows")));
                }
                Ok(e)
            })
            .collect::<Result<_>>()?;
        if e_blocks.len() != basis.len() {
            return Err(Error::Schema("E_blocks count must equal the basis size".into()));
        }
        if ex.nominal_sigma.len() != ex.structure.n_sigma() {
            return Err(Error::Schema("nominal_sigma length mismatch".into()));
        }
        let mut m_axes = Vec::with_capacity(3);
        let mut n_axes = Vec::with_capacity(3);
        let mut off = 0;
        for (i, &ri) in orders.iter().enumerate() {
            m_axes.push(m.view((off, off), (ri, ri)).into_owned());
            n_axes.push(DVector::from_iterator(ri, (0..ri).map(|k| n[(off + k, i)])));
            off += ri;
        }
        let poles = ex
            .poles
            .clone()
            .map(|p| p.iter().map(|&[re, im]| Complex64::new(re, im)).collect());
        let mn = &m * &n;
        Ok(InternalModelDesign {
            structure: ex.structure.clone(),
            poles,
            m_axes,
            n_axes,
            m,
            n,
            mn,
            psi,
            nominal_sigma: ex.nominal_sigma.clone(),
            t_nominal: t,
            e0,
            e_blocks,
            basis,
            fit_residual: ex.residuals.fit,
            sylvester_residual: ex.residuals.sylvester,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_export())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ex: DesignExport =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("design JSON: {e}")))?;
        Self::from_export(&ex)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exosystem::{AxisStructure, FrequencySpec};
    use approx::assert_relative_eq;

    fn example_structure() -> ExosystemStructure {
        let tone = |f| AxisStructure {
            has_bias: false,
            tones: vec![f],
        };
        ExosystemStructure {
            axes: [
                tone(FrequencySpec::Known(1.0)),
                tone(FrequencySpec::Known(0.8)),
                tone(FrequencySpec::Unknown(0)),
            ],
        }
    }

    #[test]
    fn omega_basis_tags_and_eval() {
        let b = OmegaBasis {
            exponents: vec![vec![2, 0], vec![1, 1]],
        };
        assert_eq!(b.tags(), vec!["sigma1^2", "sigma1*sigma2"]);
        assert_eq!(b.eval(&[3.0, 2.0]).as_slice(), &[9.0, 6.0]);
        assert!(OmegaBasis { exponents: vec![vec![0]] }.validate(1).is_err());
    }

    #[test]
    fn example_design_recovers_printed_parameterization() {
        let d = synthesize(&example_structure(), &DesignConfig::default()).unwrap();
        let want_e0 = DMatrix::from_row_slice(3, 6, &[
            2.0, 2.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 2.36, 2.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, 3.0, 2.0,
        ]);
        assert!((&d.e0 - want_e0).amax() < 1e-8);
        assert_eq!(d.ell(), 1);
        let mut want_e = DMatrix::zeros(3, 6);
        want_e[(2, 4)] = -1.0;
        assert!((&d.e_blocks[0] - want_e).amax() < 1e-8);
        // known axes have exactly-zero E rows
        assert!(d.e_blocks[0].rows(0, 2).iter().all(|&x| x == 0.0));
        assert!(d.fit_residual <= FIT_TOL);
        assert!(d.sylvester_residual <= 1e-10);
    }

    #[test]
    fn true_r_examples() {
        let b = OmegaBasis::squared(1);
        let r = true_r(&[1.0], &DVector::from_element(1, 20.0), &b);
        assert_eq!(r.as_slice(), &[20.0, 20.0, 1.0]);
        let r = true_r(&[0.2], &DVector::from_element(1, 22.0), &b);
        assert_relative_eq!(r[1], 0.88, epsilon = 1e-14);
        assert_relative_eq!(r[2], 0.04, epsilon = 1e-15);
        let r = true_r(&[0.5], &DVector::zeros(0), &b);
        assert_eq!(r.as_slice(), &[0.25]);
    }

    #[test]
    fn export_roundtrip_is_bit_exact() {
        let d = synthesize(&example_structure(), &DesignConfig::default()).unwrap();
        let text = d.to_json().unwrap();
        let back = InternalModelDesign::from_json(&text).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn inadequate_basis_is_reported() {
        // ΨT⁻¹ is affine in σ², so a basis of σ alone cannot fit it
        let cfg = DesignConfig {
            basis: Some(OmegaBasis { exponents: vec![vec![1]] }),
            ..Default::default()
        };
        match synthesize(&example_structure(), &cfg) {
            Err(Error::BasisInadequate { worst_sigma, .. }) => assert_eq!(worst_sigma.len(), 1),
            other => panic!("expected basis error, got {other:?}"),
        }
    }
}
