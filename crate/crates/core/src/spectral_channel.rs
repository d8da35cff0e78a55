//! ULA channel generation and Fourier dictionaries.
//!
//! Two generators are provided. [`physical_channel`] draws a sum of ULA
//! outer products with off-grid spatial frequencies (spectral leakage
//! included). [`grid_channel`] places exactly block-sparse coefficients on an
//! oversampled Fourier grid and synthesizes the antenna-domain matrix from
//! them, so that the block-sparse model holds exactly.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::block_geometry::{block_index_set, BlockAnchor};
use crate::error::{invalid, Result};
use crate::linalg::thin_svd;
use crate::{CMatrix, CVector};

/// Uniform linear array description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    n_antennas: usize,
    spacing_ratio: f64,
}

impl ArrayGeometry {
    /// `spacing_ratio` is the element spacing over the carrier wavelength.
    pub fn new(n_antennas: usize, spacing_ratio: f64) -> Result<Self> {
        if n_antennas == 0 {
            return Err(invalid("array needs at least one antenna"));
        }
        if !(spacing_ratio > 0.0 && spacing_ratio.is_finite()) {
            return Err(invalid(format!("spacing ratio must be positive, got {spacing_ratio}")));
        }
        Ok(Self {
            n_antennas,
            spacing_ratio,
        })
    }

    /// Half-wavelength spaced array.
    pub fn half_wavelength(n_antennas: usize) -> Result<Self> {
        Self::new(n_antennas, 0.5)
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn spacing_ratio(&self) -> f64 {
        self.spacing_ratio
    }

    /// Spatial frequency `2π (d/λ) sin(angle)`, wrapped into `(-π, π]`.
    pub fn spatial_frequency(&self, angle: f64) -> f64 {
        wrap_phase(2.0 * PI * self.spacing_ratio * angle.sin())
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let w = x.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// One propagation path of a [`MultipathChannel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub gain: Complex64,
    /// Spatial frequency at the base station array.
    pub omega_bs: f64,
    /// Spatial frequency at the user array.
    pub omega_ue: f64,
}

/// The physical paths behind one BS to UE link.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathChannel {
    paths: Vec<PathComponent>,
}

impl MultipathChannel {
    pub fn new(paths: Vec<PathComponent>) -> Result<Self> {
        if paths.is_empty() {
            return Err(invalid("a multipath channel needs at least one path"));
        }
        for path in &paths {
            for omega in [path.omega_bs, path.omega_ue] {
                if !(omega > -PI && omega <= PI) {
                    return Err(invalid(format!("spatial frequency {omega} outside (-pi, pi]")));
                }
            }
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[PathComponent] {
        &self.paths
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// `sqrt(N_u N_b / K) * Σ_k α(k) a_b(k) a_u(k)^H`.
    pub fn matrix(&self, bs: &ArrayGeometry, ue: &ArrayGeometry) -> ChannelMatrix {
        let scale = ((bs.n_antennas() * ue.n_antennas()) as f64 / self.n_paths() as f64).sqrt();
        let mut h = CMatrix::zeros(bs.n_antennas(), ue.n_antennas());
        for path in &self.paths {
            let a_b = ula_response(bs, path.omega_bs);
            let a_u = ula_response(ue, path.omega_ue);
            h += (a_b * a_u.adjoint()) * (path.gain * scale);
        }
        ChannelMatrix(h)
    }

    /// Index of the path with the largest gain magnitude (first on ties).
    pub fn strongest_path(&self) -> usize {
        let mut best = 0;
        for (k, path) in self.paths.iter().enumerate() {
            if path.gain.norm() > self.paths[best].gain.norm() {
                best = k;
            }
        }
        best
    }
}

/// Antenna-domain channel, `N_b` rows by `N_u` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(CMatrix);

impl ChannelMatrix {
    pub fn new(entries: CMatrix) -> Self {
        Self(entries)
    }

    pub fn zeros(n_bs: usize, n_ue: usize) -> Self {
        Self(CMatrix::zeros(n_bs, n_ue))
    }

    pub fn n_bs(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_ue(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    /// Column-major vectorization.
    pub fn vectorize(&self) -> CVector {
        CVector::from_column_slice(self.0.as_slice())
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.0.norm_squared()
    }

    /// Largest singular value squared, the perfect-CSI beamforming gain.
    ///
    /// # Panics
    /// If the SVD fails, which only happens for non-finite entries.
    pub fn max_singular_value_sqr(&self) -> f64 {
        let svd = thin_svd(&self.0).expect("SVD of a finite channel matrix");
        svd.s.get(0).map_or(0.0, |s| s * s)
    }
}

/// Frequency-domain channel on a `P x Q` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralChannel {
    entries: CMatrix,
    oversampling: usize,
    block_size: usize,
    anchors: Vec<BlockAnchor>,
}

impl SpectralChannel {
    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn oversampling(&self) -> usize {
        self.oversampling
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Anchors of the blocks placed by the generator, in draw order.
    pub fn anchors(&self) -> &[BlockAnchor] {
        &self.anchors
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().filter(|z| **z != Complex64::new(0.0, 0.0)).count()
    }
}

/// ULA steering vector: entry `n` is `exp(j n ω) / sqrt(N)`.
pub fn ula_response(geometry: &ArrayGeometry, omega: f64) -> CVector {
    let n = geometry.n_antennas();
    let norm = 1.0 / (n as f64).sqrt();
    CVector::from_fn(n, |k, _| Complex64::from_polar(norm, k as f64 * omega))
}

/// Circularly-symmetric complex Gaussian sample with total variance `variance`.
pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Random multipath channel with i.i.d. `CN(0, gain_variance)` gains and
/// path angles uniform on `angle_range`.
pub fn physical_channel<R: Rng + ?Sized>(
    bs: &ArrayGeometry,
    ue: &ArrayGeometry,
    k_paths: usize,
    gain_variance: f64,
    angle_range: (f64, f64),
    rng: &mut R,
) -> Result<(MultipathChannel, ChannelMatrix)> {
    if k_paths < 1 {
        return Err(invalid("k_paths must be at least 1"));
    }
    if gain_variance.is_nan() || gain_variance <= 0.0 {
        return Err(invalid(format!("gain variance must be positive, got {gain_variance}")));
    }
    let (lo, hi) = angle_range;
    if lo.is_nan() || hi.is_nan() || lo > hi {
        return Err(invalid(format!("empty angle range [{lo}, {hi}]")));
    }
    let mut paths = Vec::with_capacity(k_paths);
    for _ in 0..k_paths {
        let gain = complex_gaussian(rng, gain_variance);
        let phi_bs = lo + (hi - lo) * rng.random::<f64>();
        let phi_ue = lo + (hi - lo) * rng.random::<f64>();
        paths.push(PathComponent {
            gain,
            omega_bs: bs.spatial_frequency(phi_bs),
            omega_ue: ue.spatial_frequency(phi_ue),
        });
    }
    let channel = MultipathChannel::new(paths)?;
    let matrix = channel.matrix(bs, ue);
    Ok((channel, matrix))
}

/// Exactly block-sparse channel on the `ρN_b x ρN_u` Fourier grid.
///
/// Anchors are uniform over the whole torus and overlapping blocks add up.
/// The result is rescaled so that `‖H‖_F² = N_b N_u` for every draw.
pub fn grid_channel<R: Rng + ?Sized>(
    bs: &ArrayGeometry,
    ue: &ArrayGeometry,
    k_blocks: usize,
    block_size: usize,
    oversampling: usize,
    rng: &mut R,
) -> Result<(SpectralChannel, ChannelMatrix)> {
    if k_blocks < 1 {
        return Err(invalid("k_blocks must be at least 1"));
    }
    if oversampling < 1 {
        return Err(invalid("oversampling must be at least 1"));
    }
    let p = oversampling * bs.n_antennas();
    let q = oversampling * ue.n_antennas();
    if block_size < 1 || block_size > p.min(q) {
        return Err(invalid(format!("block size {block_size} must lie in 1..={}", p.min(q))));
    }

    let mut spectral = CMatrix::zeros(p, q);
    let mut anchors = Vec::with_capacity(k_blocks);
    for _ in 0..k_blocks {
        let anchor = BlockAnchor {
            p: rng.random_range(1..=p),
            q: rng.random_range(1..=q),
        };
        let block = block_index_set(anchor.p, anchor.q, block_size, p, q)?;
        for col in block.columns() {
            spectral[col] += complex_gaussian(rng, 1.0);
        }
        anchors.push(anchor);
    }

    let f_bs = fourier_dictionary(bs.n_antennas(), oversampling);
    let f_ue = fourier_dictionary(ue.n_antennas(), oversampling);
    let mut h = synthesize(&f_bs, &spectral, &f_ue);
    let energy = h.norm_squared();
    if energy > 0.0 {
        let scale = ((bs.n_antennas() * ue.n_antennas()) as f64 / energy).sqrt();
        h *= Complex64::from(scale);
        spectral *= Complex64::from(scale);
    }

    Ok((
        SpectralChannel {
            entries: spectral,
            oversampling,
            block_size,
            anchors,
        },
        ChannelMatrix(h),
    ))
}

/// `n x ρn` Fourier dictionary; column `q` is the ULA response at `2πq/(ρn)`.
/// For `ρ = 1` this is the unitary DFT matrix.
pub fn fourier_dictionary(n: usize, oversampling: usize) -> CMatrix {
    let cols = n * oversampling;
    let norm = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, cols, |m, q| {
        // reduce before scaling to keep the phase argument small
        let phase = 2.0 * PI * ((m * q) % cols) as f64 / cols as f64;
        Complex64::from_polar(norm, phase)
    })
}

/// `conj(F_ue) ⊗ F_bs`, so that `vec(F_bs X F_ue^H) = Ψ vec(X)`.
pub fn vec_dictionary(f_ue: &CMatrix, f_bs: &CMatrix) -> CMatrix {
    f_ue.map(|z| z.conj()).kronecker(f_bs)
}

/// `F_bs X F_ue^H`.
pub fn synthesize(f_bs: &CMatrix, spectral: &CMatrix, f_ue: &CMatrix) -> CMatrix {
    f_bs * spectral * f_ue.adjoint()
}

/// Pair of Fourier factors representing `Ψ = conj(F_ue) ⊗ F_bs` without
/// materializing the Kronecker product.
#[derive(Debug, Clone)]
pub struct KroneckerDictionary {
    f_bs: CMatrix,
    f_ue: CMatrix,
}

impl KroneckerDictionary {
    pub fn new(f_bs: CMatrix, f_ue: CMatrix) -> Self {
        Self { f_bs, f_ue }
    }

    /// Oversampled Fourier dictionaries for the two arrays.
    pub fn fourier(bs: &ArrayGeometry, ue: &ArrayGeometry, oversampling: usize) -> Self {
        Self::new(
            fourier_dictionary(bs.n_antennas(), oversampling),
            fourier_dictionary(ue.n_antennas(), oversampling),
        )
    }

    pub fn f_bs(&self) -> &CMatrix {
        &self.f_bs
    }

    pub fn f_ue(&self) -> &CMatrix {
        &self.f_ue
    }

    /// Grid rows `P`.
    pub fn grid_rows(&self) -> usize {
        self.f_bs.ncols()
    }

    /// Grid columns `Q`.
    pub fn grid_cols(&self) -> usize {
        self.f_ue.ncols()
    }

    pub fn n_atoms(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    /// Dense `Ψ`; only sensible for small arrays.
    pub fn matrix(&self) -> CMatrix {
        vec_dictionary(&self.f_ue, &self.f_bs)
    }

    /// Maps a column-major coefficient vector of length `P Q` back to the
    /// antenna domain.
    pub fn synthesize_vec(&self, coefficients: &[Complex64]) -> ChannelMatrix {
        let spectral = CMatrix::from_column_slice(self.grid_rows(), self.grid_cols(), coefficients);
        ChannelMatrix(synthesize(&self.f_bs, &spectral, &self.f_ue))
    }
}
