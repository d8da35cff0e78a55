//! Bernoulli training beams and measurement synthesis.
//!
//! Observations are stored in vectorized-model form. For the downlink that is
//! `(v^T ⊗ u^H) vec(H) = u^H H v`, the complex conjugate of the scalar the UE
//! combiner outputs; noise statistics are unaffected by the conjugation.
//!
//! Sensing matrices are formed row by row with the mixed-product rule
//! `(v^T ⊗ u^H)(conj(F_u) ⊗ F_b) = (v^T conj(F_u)) ⊗ (u^H F_b)`, which avoids
//! materializing the Kronecker dictionary.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::spectral_channel::{complex_gaussian, ChannelMatrix, KroneckerDictionary};
use crate::{CMatrix, CVector};

/// Unit-norm beam with i.i.d. equiprobable entries `±1/sqrt(n)`.
pub fn bernoulli_beam<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVector {
    let a = 1.0 / (n as f64).sqrt();
    CVector::from_fn(n, |_, _| Complex64::new(if rng.random_bool(0.5) { a } else { -a }, 0.0))
}

fn bernoulli_symbol<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

/// Training beams and symbols for `M` measurements.
///
/// `bs_beams[m]` is the BS beam (`u^(m)` downlink, `w_b^(m)` uplink),
/// `ue_beams[m]` the UE beam (`v_i^(m)` or the shared `w_u^(m)`) and
/// `symbols[(m, i)]` the pilot of user `i`. `ue_beams` is empty when the
/// users transmit on fixed weights (second phase of the two-stage strategy).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    bs_beams: Vec<CVector>,
    ue_beams: Vec<CVector>,
    symbols: DMatrix<f64>,
}

impl TrainingSet {
    pub fn new(bs_beams: Vec<CVector>, ue_beams: Vec<CVector>, symbols: DMatrix<f64>) -> Result<Self> {
        let m = bs_beams.len();
        if m == 0 {
            return Err(invalid("training needs at least one measurement"));
        }
        if !ue_beams.is_empty() && ue_beams.len() != m {
            return Err(invalid(format!("{} UE beams for {m} measurements", ue_beams.len())));
        }
        if symbols.nrows() != m || symbols.ncols() == 0 {
            return Err(invalid(format!(
                "symbol matrix is {}x{}, expected {m} rows",
                symbols.nrows(),
                symbols.ncols()
            )));
        }
        for beams in [&bs_beams, &ue_beams] {
            if let Some(first) = beams.first() {
                if beams.iter().any(|b| b.len() != first.len()) {
                    return Err(invalid("beams of one side must share a length"));
                }
            }
        }
        Ok(Self {
            bs_beams,
            ue_beams,
            symbols,
        })
    }

    /// Random BS beams, UE beams and `±1` symbols for `users` users.
    pub fn bernoulli<R: Rng + ?Sized>(n_bs: usize, n_ue: usize, m: usize, users: usize, rng: &mut R) -> Result<Self> {
        if m == 0 || users == 0 {
            return Err(invalid("training needs m >= 1 and users >= 1"));
        }
        let bs = (0..m).map(|_| bernoulli_beam(n_bs, rng)).collect();
        let ue = (0..m).map(|_| bernoulli_beam(n_ue, rng)).collect();
        let symbols = DMatrix::from_fn(m, users, |_, _| bernoulli_symbol(rng));
        Self::new(bs, ue, symbols)
    }

    /// Downlink pilots: one BS beam sequence shared by every user, an
    /// independent UE beam sequence per user, unit symbols.
    pub fn downlink<R: Rng + ?Sized>(
        n_bs: usize,
        n_ue: usize,
        m: usize,
        users: usize,
        rng: &mut R,
    ) -> Result<Vec<Self>> {
        if m == 0 || users == 0 {
            return Err(invalid("training needs m >= 1 and users >= 1"));
        }
        let bs: Vec<CVector> = (0..m).map(|_| bernoulli_beam(n_bs, rng)).collect();
        (0..users)
            .map(|_| {
                let ue = (0..m).map(|_| bernoulli_beam(n_ue, rng)).collect();
                Self::new(bs.clone(), ue, DMatrix::from_element(m, 1, 1.0))
            })
            .collect()
    }

    /// BS beams and `±1` symbols only; the users transmit on fixed weights.
    pub fn fixed_ue_weights<R: Rng + ?Sized>(n_bs: usize, m: usize, users: usize, rng: &mut R) -> Result<Self> {
        if m == 0 || users == 0 {
            return Err(invalid("training needs m >= 1 and users >= 1"));
        }
        let bs = (0..m).map(|_| bernoulli_beam(n_bs, rng)).collect();
        let symbols = DMatrix::from_fn(m, users, |_, _| bernoulli_symbol(rng));
        Self::new(bs, Vec::new(), symbols)
    }

    pub fn len(&self) -> usize {
        self.bs_beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bs_beams.is_empty()
    }

    pub fn users(&self) -> usize {
        self.symbols.ncols()
    }

    pub fn bs_beams(&self) -> &[CVector] {
        &self.bs_beams
    }

    pub fn ue_beams(&self) -> &[CVector] {
        &self.ue_beams
    }

    pub fn symbols(&self) -> &DMatrix<f64> {
        &self.symbols
    }

    fn require_ue_beams(&self, n_ue: usize) -> Result<()> {
        if self.ue_beams.is_empty() {
            return Err(invalid("training set carries no UE beams"));
        }
        if self.ue_beams[0].len() != n_ue {
            return Err(invalid(format!(
                "UE beams have length {}, expected {n_ue}",
                self.ue_beams[0].len()
            )));
        }
        Ok(())
    }

    fn require_bs_len(&self, n_bs: usize) -> Result<()> {
        if self.bs_beams[0].len() != n_bs {
            return Err(invalid(format!(
                "BS beams have length {}, expected {n_bs}",
                self.bs_beams[0].len()
            )));
        }
        Ok(())
    }
}

/// Sensing matrix paired with its observations.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEnsemble {
    /// `Ā`, the measurement rows times the recovery dictionary.
    pub sensing: CMatrix,
    pub observations: CVector,
    pub noise_variance: f64,
}

/// `m` i.i.d. `CN(0, 1)` samples.
pub fn standard_noise<R: Rng + ?Sized>(m: usize, rng: &mut R) -> CVector {
    CVector::from_fn(m, |_, _| complex_gaussian(rng, 1.0))
}

/// `clean + σ · unit_noise`.
pub fn observe(clean: &CVector, unit_noise: &CVector, noise_variance: f64) -> Result<CVector> {
    if clean.len() != unit_noise.len() {
        return Err(invalid(format!(
            "{} observations but {} noise samples",
            clean.len(),
            unit_noise.len()
        )));
    }
    if noise_variance.is_nan() || noise_variance < 0.0 {
        return Err(invalid(format!(
            "noise variance must be nonnegative, got {noise_variance}"
        )));
    }
    Ok(clean + unit_noise * Complex64::from(noise_variance.sqrt()))
}

/// Row `(ue_part ⊗ bs_part)` scaled by `scale`, written into `out`.
fn write_kron_row(out: &mut [Complex64], ue_part: &CVector, bs_part: &CVector, scale: f64) {
    let p = bs_part.len();
    for (q, &a) in ue_part.iter().enumerate() {
        let a = a * scale;
        for (k, &b) in bs_part.iter().enumerate() {
            out[q * p + k] = a * b;
        }
    }
}

/// `v^T conj(F_ue)` as a column vector.
fn ue_projection(dict: &KroneckerDictionary, v: &CVector) -> CVector {
    dict.f_ue().ad_mul(v)
}

/// `u^H F_bs` as a column vector.
fn bs_projection(f_bs: &CMatrix, u: &CVector) -> CVector {
    f_bs.ad_mul(u).map(|z| z.conj())
}

/// Method 1 sensing matrix `A_i Ψ`, row `m` being `(v^(m)T ⊗ u^(m)H) Ψ`.
pub fn method1_sensing(dict: &KroneckerDictionary, training: &TrainingSet) -> Result<CMatrix> {
    training.require_bs_len(dict.f_bs().nrows())?;
    training.require_ue_beams(dict.f_ue().nrows())?;
    let m = training.len();
    let n = dict.n_atoms();
    // fill the transpose so each row is a contiguous column
    let mut rows_t = CMatrix::zeros(n, m);
    for k in 0..m {
        let ue = ue_projection(dict, &training.ue_beams[k]);
        let bs = bs_projection(dict.f_bs(), &training.bs_beams[k]);
        let out = &mut rows_t.as_mut_slice()[k * n..(k + 1) * n];
        write_kron_row(out, &ue, &bs, training.symbols[(k, 0)]);
    }
    Ok(rows_t.transpose())
}

/// Noiseless downlink observations `s^(m) u^(m)H H v^(m)`.
pub fn method1_clean(channel: &ChannelMatrix, training: &TrainingSet) -> Result<CVector> {
    training.require_bs_len(channel.n_bs())?;
    training.require_ue_beams(channel.n_ue())?;
    let h = channel.as_matrix();
    Ok(CVector::from_fn(training.len(), |k, _| {
        let hv = h * &training.ue_beams[k];
        training.bs_beams[k].dotc(&hv) * training.symbols[(k, 0)]
    }))
}

/// Downlink measurements of one user, `z = A_i Ψ h^ω + n`.
pub fn method1_measurements<R: Rng + ?Sized>(
    channel: &ChannelMatrix,
    dict: &KroneckerDictionary,
    training: &TrainingSet,
    noise_variance: f64,
    rng: &mut R,
) -> Result<MeasurementEnsemble> {
    let sensing = method1_sensing(dict, training)?;
    let clean = method1_clean(channel, training)?;
    let observations = observe(&clean, &standard_noise(clean.len(), rng), noise_variance)?;
    Ok(MeasurementEnsemble {
        sensing,
        observations,
        noise_variance,
    })
}

/// Method 2 sensing matrix `B (I_L ⊗ Ψ)`; segment `i` of row `m` is
/// `x_i^(m) (w_u^(m)T ⊗ w_b^(m)H) Ψ`.
pub fn method2_sensing(dict: &KroneckerDictionary, training: &TrainingSet) -> Result<CMatrix> {
    training.require_bs_len(dict.f_bs().nrows())?;
    training.require_ue_beams(dict.f_ue().nrows())?;
    let m = training.len();
    let users = training.users();
    let seg = dict.n_atoms();
    let mut rows_t = CMatrix::zeros(users * seg, m);
    for k in 0..m {
        let ue = ue_projection(dict, &training.ue_beams[k]);
        let bs = bs_projection(dict.f_bs(), &training.bs_beams[k]);
        let out = &mut rows_t.as_mut_slice()[k * users * seg..(k + 1) * users * seg];
        for i in 0..users {
            write_kron_row(&mut out[i * seg..(i + 1) * seg], &ue, &bs, training.symbols[(k, i)]);
        }
    }
    Ok(rows_t.transpose())
}

/// Noiseless uplink observations `Σ_i x_i^(m) w_b^(m)H H_i w_u^(m)`.
pub fn method2_clean(channels: &[ChannelMatrix], training: &TrainingSet) -> Result<CVector> {
    check_users(channels, training)?;
    training.require_bs_len(channels[0].n_bs())?;
    training.require_ue_beams(channels[0].n_ue())?;
    Ok(CVector::from_fn(training.len(), |k, _| {
        channels
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let hw = h.as_matrix() * &training.ue_beams[k];
                training.bs_beams[k].dotc(&hw) * training.symbols[(k, i)]
            })
            .sum()
    }))
}

/// Joint uplink measurements of all users, `y = B Φ h^ω + n`.
pub fn method2_measurements<R: Rng + ?Sized>(
    channels: &[ChannelMatrix],
    dict: &KroneckerDictionary,
    training: &TrainingSet,
    noise_variance: f64,
    rng: &mut R,
) -> Result<MeasurementEnsemble> {
    let sensing = method2_sensing(dict, training)?;
    let clean = method2_clean(channels, training)?;
    let observations = observe(&clean, &standard_noise(clean.len(), rng), noise_variance)?;
    Ok(MeasurementEnsemble {
        sensing,
        observations,
        noise_variance,
    })
}

/// Two-stage sensing matrix `D (I_L ⊗ F_bs)`; segment `i` of row `m` is
/// `x_i^(m) w_b^(m)H F_bs`.
pub fn method3_sensing(f_bs: &CMatrix, training: &TrainingSet) -> Result<CMatrix> {
    training.require_bs_len(f_bs.nrows())?;
    let m = training.len();
    let users = training.users();
    let seg = f_bs.ncols();
    let mut rows_t = CMatrix::zeros(users * seg, m);
    for k in 0..m {
        let bs = bs_projection(f_bs, &training.bs_beams[k]);
        let out = &mut rows_t.as_mut_slice()[k * users * seg..(k + 1) * users * seg];
        for i in 0..users {
            let x = training.symbols[(k, i)];
            for (dst, &b) in out[i * seg..(i + 1) * seg].iter_mut().zip(bs.iter()) {
                *dst = b * x;
            }
        }
    }
    Ok(rows_t.transpose())
}

/// Noiseless second-phase observations `w_b^(m)H Σ_i H_i u_i x_i^(m)`,
/// evaluated on the full channels.
pub fn method3_clean(channels: &[ChannelMatrix], ue_weights: &[CVector], training: &TrainingSet) -> Result<CVector> {
    check_users(channels, training)?;
    if ue_weights.len() != channels.len() {
        return Err(invalid(format!(
            "{} UE weights for {} users",
            ue_weights.len(),
            channels.len()
        )));
    }
    training.require_bs_len(channels[0].n_bs())?;
    let mut effective = Vec::with_capacity(channels.len());
    for (h, u) in channels.iter().zip(ue_weights) {
        if u.len() != h.n_ue() {
            return Err(invalid(format!(
                "UE weight has length {}, expected {}",
                u.len(),
                h.n_ue()
            )));
        }
        effective.push(h.as_matrix() * u);
    }
    Ok(CVector::from_fn(training.len(), |k, _| {
        effective
            .iter()
            .enumerate()
            .map(|(i, c)| training.bs_beams[k].dotc(c) * training.symbols[(k, i)])
            .sum()
    }))
}

/// Second-phase uplink measurements with every user transmitting on its
/// estimated weight.
pub fn method3_phase2_measurements<R: Rng + ?Sized>(
    channels: &[ChannelMatrix],
    ue_weights: &[CVector],
    f_bs: &CMatrix,
    training: &TrainingSet,
    noise_variance: f64,
    rng: &mut R,
) -> Result<MeasurementEnsemble> {
    for u in ue_weights {
        if (u.norm() - 1.0).abs() > 1e-9 {
            return Err(invalid("UE weights must have unit norm"));
        }
    }
    let sensing = method3_sensing(f_bs, training)?;
    let clean = method3_clean(channels, ue_weights, training)?;
    let observations = observe(&clean, &standard_noise(clean.len(), rng), noise_variance)?;
    Ok(MeasurementEnsemble {
        sensing,
        observations,
        noise_variance,
    })
}

fn check_users(channels: &[ChannelMatrix], training: &TrainingSet) -> Result<()> {
    if channels.is_empty() {
        return Err(invalid("at least one user is required"));
    }
    if channels.len() != training.users() {
        return Err(invalid(format!(
            "{} channels but training has symbols for {} users",
            channels.len(),
            training.users()
        )));
    }
    let (nb, nu) = (channels[0].n_bs(), channels[0].n_ue());
    if channels.iter().any(|h| h.n_bs() != nb || h.n_ue() != nu) {
        return Err(invalid("all channels must share dimensions"));
    }
    Ok(())
}
