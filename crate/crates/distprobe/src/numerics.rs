//! Deterministic tensor arithmetic, 2-D FFT, symmetric eigendecomposition,
//! and seeded random streams used by every other module.
//!
//! Conventions: the forward FFT is unnormalized, the inverse divides by M·N.
//! Matrix square roots go through the symmetric eigendecomposition with
//! negative eigenvalues clamped to zero.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{axis} extent {extent} is not a power of two >= 2")]
    NonPowerOfTwo { axis: &'static str, extent: usize },
    #[error("inverse transform left imaginary residue {max:.3e} > 1e-6")]
    ImaginaryResidue { max: f64 },
    #[error("matrix asymmetry {max:.3e} exceeds 1e-10")]
    Asymmetric { max: f64 },
    #[error("covariance has eigenvalue {min:.3e} below PSD tolerance")]
    NotPsd { min: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Row-major tensor of f64 values with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumericsError::DimensionMismatch(format!(
                "shape {:?} implies {} entries, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Complex-valued M×N grid stored as separate real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexGrid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            re: vec![0.0; rows * cols],
            im: vec![0.0; rows * cols],
        }
    }

    pub fn from_real(rows: usize, cols: usize, re: Vec<f64>) -> Self {
        assert_eq!(re.len(), rows * cols);
        let im = vec![0.0; re.len()];
        Self {
            rows,
            cols,
            re,
            im,
        }
    }

    #[inline]
    pub fn idx(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }
}

fn is_pow2(n: usize) -> bool {
    n >= 2 && n.is_power_of_two()
}

/// In-place radix-2 Cooley-Tukey FFT on one complex line.
/// `inverse` flips the twiddle sign; no normalization is applied here.
fn fft_line(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // bit reversal
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * std::f64::consts::TAU / len as f64;
        let (wim, wre) = ang.sin_cos();
        let mut i = 0;
        while i < n {
            let mut cur_re = 1.0;
            let mut cur_im = 0.0;
            for k in 0..len / 2 {
                let a = i + k;
                let b = i + k + len / 2;
                let tre = re[b] * cur_re - im[b] * cur_im;
                let tim = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - tre;
                im[b] = im[a] - tim;
                re[a] += tre;
                im[a] += tim;
                let nre = cur_re * wre - cur_im * wim;
                cur_im = cur_re * wim + cur_im * wre;
                cur_re = nre;
            }
            i += len;
        }
        len <<= 1;
    }
}

fn fft2_complex(grid: &ComplexGrid, inverse: bool) -> ComplexGrid {
    let (m, n) = (grid.rows, grid.cols);
    let mut out = grid.clone();
    let mut row_re = vec![0.0; n];
    let mut row_im = vec![0.0; n];
    for r in 0..m {
        row_re.copy_from_slice(&out.re[r * n..(r + 1) * n]);
        row_im.copy_from_slice(&out.im[r * n..(r + 1) * n]);
        fft_line(&mut row_re, &mut row_im, inverse);
        out.re[r * n..(r + 1) * n].copy_from_slice(&row_re);
        out.im[r * n..(r + 1) * n].copy_from_slice(&row_im);
    }
    let mut col_re = vec![0.0; m];
    let mut col_im = vec![0.0; m];
    for c in 0..n {
        for r in 0..m {
            col_re[r] = out.re[r * n + c];
            col_im[r] = out.im[r * n + c];
        }
        fft_line(&mut col_re, &mut col_im, inverse);
        for r in 0..m {
            out.re[r * n + c] = col_re[r];
            out.im[r * n + c] = col_im[r];
        }
    }
    out
}

/// Unnormalized forward 2-D DFT of a real M×N grid (row-major).
pub fn fft2(rows: usize, cols: usize, values: &[f64]) -> Result<ComplexGrid> {
    if !is_pow2(rows) {
        return Err(NumericsError::NonPowerOfTwo {
            axis: "rows",
            extent: rows,
        });
    }
    if !is_pow2(cols) {
        return Err(NumericsError::NonPowerOfTwo {
            axis: "cols",
            extent: cols,
        });
    }
    if values.len() != rows * cols {
        return Err(NumericsError::DimensionMismatch(format!(
            "expected {} values, got {}",
            rows * cols,
            values.len()
        )));
    }
    Ok(fft2_complex(
        &ComplexGrid::from_real(rows, cols, values.to_vec()),
        false,
    ))
}

/// Normalized inverse 2-D DFT. Fails if the imaginary residue of the
/// reconstruction exceeds 1e-6 (the input was not the transform of a
/// real signal).
pub fn ifft2(grid: &ComplexGrid) -> Result<Vec<f64>> {
    if !is_pow2(grid.rows) {
        return Err(NumericsError::NonPowerOfTwo {
            axis: "rows",
            extent: grid.rows,
        });
    }
    if !is_pow2(grid.cols) {
        return Err(NumericsError::NonPowerOfTwo {
            axis: "cols",
            extent: grid.cols,
        });
    }
    let mut out = fft2_complex(grid, true);
    let scale = 1.0 / (grid.rows * grid.cols) as f64;
    for v in out.re.iter_mut() {
        *v *= scale;
    }
    let mut max_im: f64 = 0.0;
    for v in &out.im {
        max_im = max_im.max((v * scale).abs());
    }
    if max_im > 1e-6 {
        return Err(NumericsError::ImaginaryResidue { max: max_im });
    }
    Ok(out.re)
}

fn roll(grid: &ComplexGrid, dr: usize, dc: usize) -> ComplexGrid {
    let (m, n) = (grid.rows, grid.cols);
    let mut out = ComplexGrid::zeros(m, n);
    for r in 0..m {
        let rr = (r + dr) % m;
        for c in 0..n {
            let cc = (c + dc) % n;
            out.re[rr * n + cc] = grid.re[r * n + c];
            out.im[rr * n + cc] = grid.im[r * n + c];
        }
    }
    out
}

/// Move the DC bin (0,0) to the grid center (⌊M/2⌋, ⌊N/2⌋).
pub fn fftshift(grid: &ComplexGrid) -> ComplexGrid {
    roll(grid, grid.rows / 2, grid.cols / 2)
}

/// Inverse of [`fftshift`] for all even and odd extents.
pub fn ifftshift(grid: &ComplexGrid) -> ComplexGrid {
    roll(grid, grid.rows.div_ceil(2), grid.cols.div_ceil(2))
}

/// Symmetric d×d matrix. Construction symmetrizes exactly and rejects
/// inputs whose asymmetry exceeds 1e-10.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(NumericsError::DimensionMismatch(format!(
                "expected {} entries for dim {}, got {}",
                dim * dim,
                dim,
                entries.len()
            )));
        }
        let mut max_asym: f64 = 0.0;
        for i in 0..dim {
            for j in (i + 1)..dim {
                max_asym = max_asym.max((entries[i * dim + j] - entries[j * dim + i]).abs());
            }
        }
        if max_asym > 1e-10 {
            return Err(NumericsError::Asymmetric { max: max_asym });
        }
        let mut sym = entries;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let v = 0.5 * (sym[i * dim + j] + sym[j * dim + i]);
                sym[i * dim + j] = v;
                sym[j * dim + i] = v;
            }
        }
        Ok(Self { dim, entries: sym })
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        Self { dim, entries }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = diag[i];
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }
}

/// Eigendecomposition of a symmetric matrix. Returns eigenvalues in
/// descending order and the matching orthonormal eigenvectors as columns
/// (`vectors[j]` is the j-th column).
pub fn eig_sym(m: &SymmetricMatrix) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let eig = m.to_dmatrix().symmetric_eigen();
    let d = m.dim;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    if !values.iter().all(|v| v.is_finite()) {
        return Err(NumericsError::NonFinite("eig_sym"));
    }
    Ok((values, vectors))
}

/// PSD square root via eigendecomposition, clamping negative eigenvalues
/// at zero. Rejects matrices with an eigenvalue below -1e-10.
pub fn sqrt_psd(m: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let (values, vectors) = eig_sym(m)?;
    if let Some(&min) = values.last() {
        if min < -1e-10 {
            return Err(NumericsError::NotPsd { min });
        }
    }
    let d = m.dim;
    let mut out = vec![0.0; d * d];
    for (lam, vec) in values.iter().zip(vectors.iter()) {
        let s = lam.max(0.0).sqrt();
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] += s * vec[i] * vec[j];
            }
        }
    }
    // exact symmetrization of rounding noise
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (out[i * d + j] + out[j * d + i]);
            out[i * d + j] = v;
            out[j * d + i] = v;
        }
    }
    Ok(SymmetricMatrix { dim: d, entries: out })
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

/// Fréchet distance between two Gaussians:
/// ‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2}), computed through the
/// symmetric product √Σ₁·Σ₂·√Σ₁ and clamped at zero.
pub fn frechet_gaussian_distance(
    mu1: &[f64],
    sigma1: &SymmetricMatrix,
    mu2: &[f64],
    sigma2: &SymmetricMatrix,
) -> Result<f64> {
    let d = sigma1.dim;
    if sigma2.dim != d || mu1.len() != d || mu2.len() != d {
        return Err(NumericsError::DimensionMismatch(
            "Gaussian parameters disagree on dimension".into(),
        ));
    }
    let s1_half = sqrt_psd(sigma1)?;
    // check PSD of sigma2 explicitly (sqrt of the product would hide it)
    let (vals2, _) = eig_sym(sigma2)?;
    if let Some(&min) = vals2.last() {
        if min < -1e-10 {
            return Err(NumericsError::NotPsd { min });
        }
    }
    let inner = matmul(
        &matmul(&s1_half.entries, &sigma2.entries, d),
        &s1_half.entries,
        d,
    );
    // symmetrize: exact in infinite precision
    let inner = SymmetricMatrix::new(d, {
        let mut v = inner;
        for i in 0..d {
            for j in (i + 1)..d {
                let m = 0.5 * (v[i * d + j] + v[j * d + i]);
                v[i * d + j] = m;
                v[j * d + i] = m;
            }
        }
        v
    })?;
    let (inner_vals, _) = eig_sym(&inner)?;
    let tr_sqrt: f64 = inner_vals.iter().map(|l| l.max(0.0).sqrt()).sum();
    let mean_term: f64 = mu1
        .iter()
        .zip(mu2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let dist = mean_term + sigma1.trace() + sigma2.trace() - 2.0 * tr_sqrt;
    Ok(dist.max(0.0))
}

/// Deterministic, splittable random stream. Identical (master_seed,
/// stream_id) pairs produce identical sequences across runs and platforms;
/// distinct stream ids share no state.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh stream with the same master seed and a derived stream id.
    pub fn substream(&self, tag: u64) -> Self {
        RngStream::new(self.master_seed, mix_stream_id(&[self.stream_id, tag]))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform_usize(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_usize(i + 1);
            items.swap(i, j);
        }
    }
}

/// Stable FNV-1a mix of integer parts into a stream id. Used by the
/// experiment harness so each (kind, abscissa, trial) point gets an
/// independent stream.
pub fn mix_stream_id(parts: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in parts {
        for byte in p.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Stable FNV-1a hash of a string, for seeding from textual labels.
pub fn mix_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for byte in s.as_bytes() {
        h ^= *byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft2(rows: usize, cols: usize, x: &[f64]) -> ComplexGrid {
        let mut out = ComplexGrid::zeros(rows, cols);
        for u in 0..rows {
            for v in 0..cols {
                let mut re = 0.0;
                let mut im = 0.0;
                for r in 0..rows {
                    for c in 0..cols {
                        let ang = -std::f64::consts::TAU
                            * (u as f64 * r as f64 / rows as f64
                                + v as f64 * c as f64 / cols as f64);
                        re += x[r * cols + c] * ang.cos();
                        im += x[r * cols + c] * ang.sin();
                    }
                }
                out.re[u * cols + v] = re;
                out.im[u * cols + v] = im;
            }
        }
        out
    }

    #[test]
    fn fft2_constant_grid_is_dc_only() {
        let c = 2.5;
        let g = fft2(4, 4, &vec![c; 16]).unwrap();
        assert!((g.re[0] - 16.0 * c).abs() < 1e-12);
        assert!(g.im[0].abs() < 1e-12);
        for i in 1..16 {
            assert!(g.re[i].abs() < 1e-10 && g.im[i].abs() < 1e-10);
        }
    }

    #[test]
    fn fft2_unit_impulse_is_flat() {
        let mut x = vec![0.0; 16];
        x[0] = 1.0;
        let g = fft2(4, 4, &x).unwrap();
        for i in 0..16 {
            assert!((g.re[i] - 1.0).abs() < 1e-12);
            assert!(g.im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn fft2_matches_naive_dft() {
        let mut rng = RngStream::new(7, 0);
        for &(m, n) in &[(2usize, 2usize), (4, 4), (8, 8), (2, 8), (8, 4)] {
            let x: Vec<f64> = (0..m * n).map(|_| rng.next_f64() - 0.5).collect();
            let fast = fft2(m, n, &x).unwrap();
            let slow = naive_dft2(m, n, &x);
            for i in 0..m * n {
                assert!((fast.re[i] - slow.re[i]).abs() < 1e-10, "{m}x{n} re[{i}]");
                assert!((fast.im[i] - slow.im[i]).abs() < 1e-10, "{m}x{n} im[{i}]");
            }
        }
    }

    #[test]
    fn fft2_rejects_non_power_of_two() {
        let err = fft2(3, 4, &vec![0.0; 12]).unwrap_err();
        assert!(matches!(
            err,
            NumericsError::NonPowerOfTwo { axis: "rows", extent: 3 }
        ));
        let err = fft2(4, 6, &vec![0.0; 24]).unwrap_err();
        assert!(matches!(
            err,
            NumericsError::NonPowerOfTwo { axis: "cols", extent: 6 }
        ));
    }

    #[test]
    fn ifft2_roundtrip_identity() {
        let mut rng = RngStream::new(3, 1);
        for &(m, n) in &[(8usize, 8usize), (4, 16), (256, 2)] {
            let x: Vec<f64> = (0..m * n).map(|_| rng.next_f64()).collect();
            let back = ifft2(&fft2(m, n, &x).unwrap()).unwrap();
            for i in 0..m * n {
                assert!((back[i] - x[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ifft2_zero_and_dc() {
        let zero = ifft2(&ComplexGrid::zeros(4, 4)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let mut dc = ComplexGrid::zeros(4, 4);
        dc.re[0] = 16.0;
        let ones = ifft2(&dc).unwrap();
        for v in ones {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ifft2_rejects_imaginary_residue() {
        let mut g = ComplexGrid::zeros(4, 4);
        g.im[5] = 100.0; // not conjugate-symmetric
        assert!(matches!(
            ifft2(&g),
            Err(NumericsError::ImaginaryResidue { .. })
        ));
    }

    #[test]
    fn parseval_holds() {
        let mut rng = RngStream::new(11, 2);
        let (m, n) = (16, 8);
        let x: Vec<f64> = (0..m * n).map(|_| rng.next_f64() - 0.5).collect();
        let f = fft2(m, n, &x).unwrap();
        let space: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = f
            .re
            .iter()
            .zip(&f.im)
            .map(|(r, i)| r * r + i * i)
            .sum::<f64>()
            / (m * n) as f64;
        assert!((space - freq).abs() / space < 1e-8);
    }

    #[test]
    fn fftshift_moves_origin_to_center() {
        let mut g = ComplexGrid::zeros(4, 4);
        g.re[0] = 1.0;
        let s = fftshift(&g);
        assert_eq!(s.re[s.idx(2, 2)], 1.0);
        assert_eq!(s.re.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn ifftshift_inverts_fftshift_odd_extents() {
        let mut rng = RngStream::new(5, 3);
        let mut g = ComplexGrid::zeros(5, 6);
        for v in g.re.iter_mut() {
            *v = rng.next_f64();
        }
        for v in g.im.iter_mut() {
            *v = rng.next_f64();
        }
        assert_eq!(ifftshift(&fftshift(&g)), g);
        assert_eq!(fftshift(&ifftshift(&g)), g);
    }

    #[test]
    fn fftshift_twice_is_identity_on_even_dims() {
        let mut rng = RngStream::new(6, 4);
        let mut g = ComplexGrid::zeros(4, 8);
        for v in g.re.iter_mut() {
            *v = rng.next_f64();
        }
        assert_eq!(fftshift(&fftshift(&g)), g);
    }

    #[test]
    fn eig_sym_identity_and_diag() {
        let (vals, _) = eig_sym(&SymmetricMatrix::identity(3)).unwrap();
        for v in vals {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let (vals, vecs) = eig_sym(&SymmetricMatrix::from_diag(&[4.0, 1.0])).unwrap();
        assert!((vals[0] - 4.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        assert!(vecs[0][0].abs() > 0.999); // axis aligned
    }

    #[test]
    fn eig_sym_reconstructs_random_symmetric() {
        let mut rng = RngStream::new(9, 5);
        let d = 8;
        let mut entries = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let v = rng.gaussian();
                entries[i * d + j] = v;
                entries[j * d + i] = v;
            }
        }
        let m = SymmetricMatrix::new(d, entries).unwrap();
        let (vals, vecs) = eig_sym(&m).unwrap();
        // reconstruction
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += vals[k] * vecs[k][i] * vecs[k][j];
                }
                assert!((acc - m.get(i, j)).abs() < 1e-8);
            }
        }
        // orthonormality
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..d).map(|i| vecs[a][i] * vecs[b][i]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn symmetric_matrix_rejects_asymmetry() {
        let entries = vec![1.0, 0.5, 0.7, 1.0];
        assert!(matches!(
            SymmetricMatrix::new(2, entries),
            Err(NumericsError::Asymmetric { .. })
        ));
    }

    #[test]
    fn frechet_identical_gaussians_is_zero() {
        let s = SymmetricMatrix::from_diag(&[1.0, 2.0]);
        let d = frechet_gaussian_distance(&[0.3, -0.7], &s, &[0.3, -0.7], &s).unwrap();
        assert!(d < 1e-9);
    }

    #[test]
    fn frechet_one_dimensional_closed_form() {
        let d = frechet_gaussian_distance(
            &[0.0],
            &SymmetricMatrix::from_diag(&[1.0]),
            &[3.0],
            &SymmetricMatrix::from_diag(&[4.0]),
        )
        .unwrap();
        // (0-3)^2 + (1-2)^2 with sigma entries as variances 1 and 4
        assert!((d - 10.0).abs() < 1e-9);
    }

    #[test]
    fn frechet_commuting_diagonals() {
        let d = frechet_gaussian_distance(
            &[0.0, 0.0],
            &SymmetricMatrix::from_diag(&[1.0, 4.0]),
            &[0.0, 0.0],
            &SymmetricMatrix::from_diag(&[4.0, 1.0]),
        )
        .unwrap();
        assert!((d - 2.0).abs() < 1e-9);
    }

    #[test]
    fn frechet_is_symmetric() {
        let s1 = SymmetricMatrix::new(2, vec![2.0, 0.3, 0.3, 1.0]).unwrap();
        let s2 = SymmetricMatrix::new(2, vec![1.5, -0.2, -0.2, 0.8]).unwrap();
        let a = frechet_gaussian_distance(&[1.0, 2.0], &s1, &[0.0, -1.0], &s2).unwrap();
        let b = frechet_gaussian_distance(&[0.0, -1.0], &s2, &[1.0, 2.0], &s1).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn frechet_rejects_non_psd() {
        let bad = SymmetricMatrix::from_diag(&[1.0, -0.5]);
        let ok = SymmetricMatrix::identity(2);
        assert!(matches!(
            frechet_gaussian_distance(&[0.0, 0.0], &bad, &[0.0, 0.0], &ok),
            Err(NumericsError::NotPsd { .. })
        ));
        assert!(matches!(
            frechet_gaussian_distance(&[0.0, 0.0], &ok, &[0.0, 0.0], &bad),
            Err(NumericsError::NotPsd { .. })
        ));
    }

    #[test]
    fn rng_streams_are_deterministic_and_independent() {
        let mut a = RngStream::new(42, 1);
        let mut b = RngStream::new(42, 1);
        for _ in 0..32 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngStream::new(42, 2);
        let mut d = RngStream::new(42, 1);
        let first: Vec<u64> = (0..16).map(|_| d.next_u64()).collect();
        let other: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_ne!(first, other);
    }

    #[test]
    fn tensor_rejects_bad_shapes_and_nan() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2], vec![f64::NAN, 0.0]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 4]).is_ok());
    }
}
