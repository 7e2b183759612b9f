//! Synthetic benchmark instances: matrix families, compressive sensing
//! with matrix uncertainty (SMV), and structured dictionary learning
//! (MMV), with per-instance SNR calibration.
//!
//! Generators are pure functions of their seed; identical seeds produce
//! bit-identical instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Measurement-matrix families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MatrixFamily {
    IidGaussian { mean: f64, variance: f64 },
    /// `C_L · G · C_R` with Toeplitz factors `ρ^|m−n|`.
    Correlated { rho: f64 },
    /// Geometric singular-value decay with condition number κ, scaled to
    /// unit mean-square singular value.
    IllConditioned { kappa: f64 },
    /// `B·C` with inner dimension `rank`, both factors iid N(0, 1).
    LowRank { rank: usize },
    NonZeroMean { mean: f64, variance: f64 },
}

impl MatrixFamily {
    fn validate(&self, m: usize, n: usize) -> Result<()> {
        match *self {
            MatrixFamily::IidGaussian { variance, .. }
            | MatrixFamily::NonZeroMean { variance, .. } => {
                if !(variance > 0.0) {
                    return Err(Error::Domain("variance must be positive".into()));
                }
            }
            MatrixFamily::Correlated { rho } => {
                if !(0.0..=1.0).contains(&rho) {
                    return Err(Error::Domain(format!("rho must lie in [0, 1], got {rho}")));
                }
            }
            MatrixFamily::IllConditioned { kappa } => {
                if !(kappa >= 1.0) {
                    return Err(Error::Domain(format!("kappa must be at least 1, got {kappa}")));
                }
            }
            MatrixFamily::LowRank { rank } => {
                if rank == 0 || rank > m.min(n) {
                    return Err(Error::Domain(format!(
                        "rank must lie in [1, min(M, N)] = [1, {}], got {rank}",
                        m.min(n)
                    )));
                }
            }
        }
        Ok(())
    }
}

fn gaussian_matrix<R: Rng>(m: usize, n: usize, mean: f64, variance: f64, rng: &mut R) -> DMatrix<f64> {
    let sd = variance.sqrt();
    DMatrix::from_fn(m, n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        mean + sd * z
    })
}

fn toeplitz_corr(size: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(size, size, |i, j| rho.powi((i as i64 - j as i64).unsigned_abs() as i32))
}

/// Haar-distributed orthonormal columns via QR with sign fixing.
fn random_orthonormal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let g = gaussian_matrix(rows, cols, 0.0, 1.0, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            for i in 0..rows {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Draws one M×N matrix from the family, deterministically in `seed`.
pub fn gen_matrix(family: &MatrixFamily, m: usize, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    family.validate(m, n)?;
    let mut rng = seeding::rng(seed, &[0x3a7]);
    Ok(gen_matrix_with(family, m, n, &mut rng))
}

fn gen_matrix_with<R: Rng>(family: &MatrixFamily, m: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    match *family {
        MatrixFamily::IidGaussian { mean, variance }
        | MatrixFamily::NonZeroMean { mean, variance } => gaussian_matrix(m, n, mean, variance, rng),
        MatrixFamily::Correlated { rho } => {
            let g = gaussian_matrix(m, n, 0.0, 1.0, rng);
            if rho == 0.0 {
                return g;
            }
            toeplitz_corr(m, rho) * g * toeplitz_corr(n, rho)
        }
        MatrixFamily::IllConditioned { kappa } => {
            let p = m.min(n);
            let u = random_orthonormal(m, p, rng);
            let v = random_orthonormal(n, p, rng);
            // σ_i / σ_{i+1} = κ^{1/(p−1)}, then unit mean-square value.
            let mut sigma = DVector::zeros(p);
            if p == 1 {
                sigma[0] = 1.0;
            } else {
                let ratio = kappa.powf(1.0 / (p as f64 - 1.0));
                for i in 0..p {
                    sigma[i] = ratio.powi(-(i as i32));
                }
            }
            let scale = (p as f64 / sigma.iter().map(|s| s * s).sum::<f64>()).sqrt();
            sigma *= scale;
            &u * DMatrix::from_diagonal(&sigma) * v.transpose()
        }
        MatrixFamily::LowRank { rank } => {
            let b = gaussian_matrix(m, rank, 0.0, 1.0, rng);
            let c = gaussian_matrix(rank, n, 0.0, 1.0, rng);
            b * c
        }
    }
}

/// Target signal-to-noise ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Snr {
    Db(f64),
    Infinite,
}

impl Snr {
    pub fn linear(&self) -> Option<f64> {
        match *self {
            Snr::Db(db) => Some(10f64.powf(db / 10.0)),
            Snr::Infinite => None,
        }
    }
}

/// Scales a raw noise draw so the realized `‖signal‖²/‖noise‖²` hits the
/// target exactly on this instance; returns (noise, beta).
fn calibrate_noise(signal_sq: f64, mut noise: DMatrix<f64>, snr: Snr) -> (DMatrix<f64>, Option<f64>) {
    match snr.linear() {
        None => {
            noise.fill(0.0);
            (noise, None)
        }
        Some(lin) => {
            let scale = (signal_sq / (noise.norm_squared() * lin)).sqrt();
            noise *= scale;
            let beta = noise.len() as f64 / noise.norm_squared();
            (noise, Some(beta))
        }
    }
}

fn sample_support<R: Rng>(n: usize, s: usize, rng: &mut R) -> Vec<usize> {
    // Partial Fisher-Yates.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..s {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut support = idx[..s].to_vec();
    support.sort_unstable();
    support
}

/// Compressive sensing with matrix uncertainty:
/// `y = Σ_k b_k A_k c + w`, `b_1 = 1`, `b_{2..K} ~ N(0, 1)`, `c` with `S`
/// standard-normal nonzeros on a uniform support.
#[derive(Clone, Debug)]
pub struct CsMuInstance {
    pub blocks: Vec<DMatrix<f64>>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub y: DVector<f64>,
    pub support: Vec<usize>,
    /// Realized noise precision (`None` for the noiseless flag).
    pub beta: Option<f64>,
    pub snr: Snr,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub s: usize,
    pub seed: u64,
    pub family: MatrixFamily,
}

impl CsMuInstance {
    /// The effective measurement matrix `A(b) = Σ_k b_k A_k`.
    pub fn effective_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.m, self.n);
        for (kk, blk) in self.blocks.iter().enumerate() {
            a += blk * self.b[kk];
        }
        a
    }
}

pub fn gen_cs_mu(
    k: usize,
    n: usize,
    m: usize,
    s: usize,
    snr: Snr,
    family: &MatrixFamily,
    seed: u64,
) -> Result<CsMuInstance> {
    if k == 0 {
        return Err(Error::Domain("need at least one block".into()));
    }
    if s > n {
        return Err(Error::Domain(format!("support size {s} exceeds N = {n}")));
    }
    family.validate(m, n)?;
    let mut rng = seeding::rng(seed, &[0xc5]);

    let blocks: Vec<DMatrix<f64>> = (0..k)
        .map(|kk| match family {
            // Non-zero-mean experiments give the known block tenfold more
            // energy than each uncertain one.
            MatrixFamily::NonZeroMean { mean, .. } => {
                let variance = if kk == 0 { 20.0 } else { 1.0 };
                gen_matrix_with(
                    &MatrixFamily::NonZeroMean { mean: *mean, variance },
                    m,
                    n,
                    &mut rng,
                )
            }
            _ => gen_matrix_with(family, m, n, &mut rng),
        })
        .collect();

    let mut b = DVector::zeros(k);
    b[0] = 1.0;
    for i in 1..k {
        b[i] = StandardNormal.sample(&mut rng);
    }
    let support = sample_support(n, s, &mut rng);
    let mut c = DVector::zeros(n);
    for &i in &support {
        c[i] = StandardNormal.sample(&mut rng);
    }

    let mut a = DMatrix::zeros(m, n);
    for (kk, blk) in blocks.iter().enumerate() {
        a += blk * b[kk];
    }
    let signal = &a * &c;
    let w0 = DMatrix::from_fn(m, 1, |_, _| StandardNormal.sample(&mut rng));
    let (w, beta) = calibrate_noise(signal.norm_squared(), w0, snr);
    let y = &signal + w.column(0).clone_owned();

    Ok(CsMuInstance {
        blocks,
        b,
        c,
        y,
        support,
        beta,
        snr,
        m,
        n,
        k,
        s,
        seed,
        family: family.clone(),
    })
}

/// Structured dictionary learning: `Y = Σ_k b_k A_k C + W` with all of `b`
/// standard normal and `S` nonzeros per column of `C`.
#[derive(Clone, Debug)]
pub struct DlInstance {
    pub blocks: Vec<DMatrix<f64>>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub supports: Vec<Vec<usize>>,
    pub beta: Option<f64>,
    pub snr: Snr,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub s: usize,
    pub seed: u64,
    pub family: MatrixFamily,
}

impl DlInstance {
    pub fn effective_matrix(&self) -> DMatrix<f64> {
        self.effective_matrix_for(&self.b)
    }

    pub fn effective_matrix_for(&self, b: &DVector<f64>) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.m, self.n);
        for (kk, blk) in self.blocks.iter().enumerate() {
            a += blk * b[kk];
        }
        a
    }
}

#[allow(clippy::too_many_arguments)]
pub fn gen_dl(
    m: usize,
    n: usize,
    k: usize,
    l: usize,
    s: usize,
    snr: Snr,
    family: &MatrixFamily,
    seed: u64,
) -> Result<DlInstance> {
    if k == 0 || l == 0 {
        return Err(Error::Domain("need at least one block and one column".into()));
    }
    if s > n {
        return Err(Error::Domain(format!("support size {s} exceeds N = {n}")));
    }
    family.validate(m, n)?;
    let mut rng = seeding::rng(seed, &[0xd1]);

    let blocks: Vec<DMatrix<f64>> = (0..k)
        .map(|_| gen_matrix_with(family, m, n, &mut rng))
        .collect();
    let b = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));

    let mut c = DMatrix::zeros(n, l);
    let mut supports = Vec::with_capacity(l);
    for ll in 0..l {
        let support = sample_support(n, s, &mut rng);
        for &i in &support {
            c[(i, ll)] = StandardNormal.sample(&mut rng);
        }
        supports.push(support);
    }

    let mut a = DMatrix::zeros(m, n);
    for (kk, blk) in blocks.iter().enumerate() {
        a += blk * b[kk];
    }
    let signal = &a * &c;
    let w0 = DMatrix::from_fn(m, l, |_, _| StandardNormal.sample(&mut rng));
    let (w, beta) = calibrate_noise(signal.norm_squared(), w0, snr);
    let y = signal + w;

    Ok(DlInstance {
        blocks,
        b,
        c,
        y,
        supports,
        beta,
        snr,
        m,
        n,
        k,
        l,
        s,
        seed,
        family: family.clone(),
    })
}

pub mod io {
    //! Reproducibility bundles: a one-line JSON header (kind, dimensions,
    //! seed, family, SNR) followed by the matrices as little-endian f64 in
    //! row-major order, in the order listed by the header's `payload`
    //! field.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::path::Path;

    use super::*;

    const MAGIC: &str = "BIUT1";

    #[derive(Serialize, Deserialize)]
    struct Header {
        kind: String,
        m: usize,
        n: usize,
        k: usize,
        l: usize,
        s: usize,
        seed: u64,
        family: MatrixFamily,
        snr: Snr,
        beta: Option<f64>,
        support: Vec<Vec<usize>>,
        /// Matrix names and shapes, in file order.
        payload: Vec<(String, usize, usize)>,
    }

    fn write_matrix<W: Write>(w: &mut W, mat: &DMatrix<f64>) -> Result<()> {
        for i in 0..mat.nrows() {
            for j in 0..mat.ncols() {
                w.write_all(&mat[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut buf = [0u8; 8];
        let mut mat = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                r.read_exact(&mut buf)?;
                mat[(i, j)] = f64::from_le_bytes(buf);
            }
        }
        Ok(mat)
    }

    pub fn save_cs_mu(inst: &CsMuInstance, path: &Path) -> Result<()> {
        let mut payload = Vec::new();
        for kk in 0..inst.k {
            payload.push((format!("block_{kk}"), inst.m, inst.n));
        }
        payload.push(("b".into(), inst.k, 1));
        payload.push(("c".into(), inst.n, 1));
        payload.push(("y".into(), inst.m, 1));
        let header = Header {
            kind: "cs_mu".into(),
            m: inst.m,
            n: inst.n,
            k: inst.k,
            l: 1,
            s: inst.s,
            seed: inst.seed,
            family: inst.family.clone(),
            snr: inst.snr,
            beta: inst.beta,
            support: vec![inst.support.clone()],
            payload,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{MAGIC}")?;
        writeln!(
            w,
            "{}",
            serde_json::to_string(&header).map_err(|e| Error::Parse(e.to_string()))?
        )?;
        for blk in &inst.blocks {
            write_matrix(&mut w, blk)?;
        }
        write_matrix(&mut w, &DMatrix::from_column_slice(inst.k, 1, inst.b.as_slice()))?;
        write_matrix(&mut w, &DMatrix::from_column_slice(inst.n, 1, inst.c.as_slice()))?;
        write_matrix(&mut w, &DMatrix::from_column_slice(inst.m, 1, inst.y.as_slice()))?;
        Ok(())
    }

    fn read_header<R: BufRead>(r: &mut R, expect_kind: &str) -> Result<Header> {
        let mut magic = String::new();
        r.read_line(&mut magic)?;
        if magic.trim() != MAGIC {
            return Err(Error::Parse(format!("bad magic {:?}", magic.trim())));
        }
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header =
            serde_json::from_str(line.trim()).map_err(|e| Error::Parse(e.to_string()))?;
        if header.kind != expect_kind {
            return Err(Error::Parse(format!(
                "bundle kind {:?}, expected {expect_kind:?}",
                header.kind
            )));
        }
        Ok(header)
    }

    pub fn load_cs_mu(path: &Path) -> Result<CsMuInstance> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let header = read_header(&mut r, "cs_mu")?;
        let mut blocks = Vec::with_capacity(header.k);
        for _ in 0..header.k {
            blocks.push(read_matrix(&mut r, header.m, header.n)?);
        }
        let b = read_matrix(&mut r, header.k, 1)?.column(0).clone_owned();
        let c = read_matrix(&mut r, header.n, 1)?.column(0).clone_owned();
        let y = read_matrix(&mut r, header.m, 1)?.column(0).clone_owned();
        Ok(CsMuInstance {
            blocks,
            b,
            c,
            y,
            support: header.support.into_iter().next().unwrap_or_default(),
            beta: header.beta,
            snr: header.snr,
            m: header.m,
            n: header.n,
            k: header.k,
            s: header.s,
            seed: header.seed,
            family: header.family,
        })
    }

    pub fn save_dl(inst: &DlInstance, path: &Path) -> Result<()> {
        let mut payload = Vec::new();
        for kk in 0..inst.k {
            payload.push((format!("block_{kk}"), inst.m, inst.n));
        }
        payload.push(("b".into(), inst.k, 1));
        payload.push(("c".into(), inst.n, inst.l));
        payload.push(("y".into(), inst.m, inst.l));
        let header = Header {
            kind: "dl".into(),
            m: inst.m,
            n: inst.n,
            k: inst.k,
            l: inst.l,
            s: inst.s,
            seed: inst.seed,
            family: inst.family.clone(),
            snr: inst.snr,
            beta: inst.beta,
            support: inst.supports.clone(),
            payload,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{MAGIC}")?;
        writeln!(
            w,
            "{}",
            serde_json::to_string(&header).map_err(|e| Error::Parse(e.to_string()))?
        )?;
        for blk in &inst.blocks {
            write_matrix(&mut w, blk)?;
        }
        write_matrix(&mut w, &DMatrix::from_column_slice(inst.k, 1, inst.b.as_slice()))?;
        write_matrix(&mut w, &inst.c)?;
        write_matrix(&mut w, &inst.y)?;
        Ok(())
    }

    pub fn load_dl(path: &Path) -> Result<DlInstance> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let header = read_header(&mut r, "dl")?;
        let mut blocks = Vec::with_capacity(header.k);
        for _ in 0..header.k {
            blocks.push(read_matrix(&mut r, header.m, header.n)?);
        }
        let b = read_matrix(&mut r, header.k, 1)?.column(0).clone_owned();
        let c = read_matrix(&mut r, header.n, header.l)?;
        let y = read_matrix(&mut r, header.m, header.l)?;
        Ok(DlInstance {
            blocks,
            b,
            c,
            y,
            supports: header.support,
            beta: header.beta,
            snr: header.snr,
            m: header.m,
            n: header.n,
            k: header.k,
            l: header.l,
            s: header.s,
            seed: header.seed,
            family: header.family,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::build_lifted;
    use tempfile::tempdir;

    #[test]
    fn generators_are_deterministic() {
        let fam = MatrixFamily::Correlated { rho: 0.35 };
        let a = gen_matrix(&fam, 20, 30, 77).unwrap();
        let b = gen_matrix(&fam, 20, 30, 77).unwrap();
        assert_eq!(a, b);
        let i1 = gen_cs_mu(3, 24, 16, 4, Snr::Db(25.0), &fam, 5).unwrap();
        let i2 = gen_cs_mu(3, 24, 16, 4, Snr::Db(25.0), &fam, 5).unwrap();
        assert_eq!(i1.y, i2.y);
        assert_eq!(i1.c, i2.c);
        assert!(gen_matrix(&fam, 20, 30, 78).unwrap() != a);
    }

    #[test]
    fn correlated_with_zero_rho_is_plain_iid() {
        let a = gen_matrix(&MatrixFamily::Correlated { rho: 0.0 }, 15, 18, 3).unwrap();
        let g = gen_matrix(&MatrixFamily::IidGaussian { mean: 0.0, variance: 1.0 }, 15, 18, 3).unwrap();
        assert_eq!(a, g);
    }

    #[test]
    fn correlated_row_correlation_follows_toeplitz_square() {
        // Rows of C_L·G have covariance C_L², so the adjacent-row
        // correlation tends to 2ρ/(1+ρ²) (not ρ itself).
        let (m, n) = (500, 500);
        let rho = 0.3f64;
        let cl = toeplitz_corr(m, rho);
        let g = gen_matrix(&MatrixFamily::IidGaussian { mean: 0.0, variance: 1.0 }, m, n, 9).unwrap();
        let a = cl * g;
        let mut acc = 0.0;
        let mut count = 0;
        for i in 0..m - 1 {
            let r0 = a.row(i);
            let r1 = a.row(i + 1);
            acc += r0.dot(&r1) / (r0.norm() * r1.norm());
            count += 1;
        }
        let measured = acc / count as f64;
        let expected = 2.0 * rho / (1.0 + rho * rho);
        assert!(
            (measured - expected).abs() < 0.05,
            "adjacent-row correlation {measured:.3} vs {expected:.3}"
        );
    }

    #[test]
    fn ill_conditioned_spectrum() {
        let flat = gen_matrix(&MatrixFamily::IllConditioned { kappa: 1.0 }, 40, 60, 4).unwrap();
        let sv = flat.svd(false, false).singular_values;
        assert!((sv.max() / sv.min() - 1.0).abs() < 1e-10);

        let a = gen_matrix(&MatrixFamily::IllConditioned { kappa: 1e3 }, 150, 256, 5).unwrap();
        let sv = a.svd(false, false).singular_values;
        let kappa = sv.max() / sv.min();
        assert!((kappa - 1e3).abs() <= 1e-6 * 1e3, "measured condition {kappa}");
        // Unit mean-square singular value.
        let ms = sv.iter().map(|s| s * s).sum::<f64>() / sv.len() as f64;
        assert!((ms - 1.0).abs() < 1e-10);
    }

    #[test]
    fn low_rank_has_the_requested_rank() {
        let a = gen_matrix(&MatrixFamily::LowRank { rank: 7 }, 20, 30, 6).unwrap();
        let sv = a.svd(false, false).singular_values;
        assert!(sv[6] > 1e-6);
        for i in 7..sv.len() {
            assert!(sv[i] < 1e-10 * sv[0]);
        }
    }

    #[test]
    fn non_zero_mean_statistics() {
        let a = gen_matrix(&MatrixFamily::NonZeroMean { mean: 10.0, variance: 1.0 }, 100, 120, 7).unwrap();
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((mean - 10.0).abs() < 0.05);
        let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / a.len() as f64;
        assert!((var - 1.0).abs() < 0.1);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(gen_matrix(&MatrixFamily::Correlated { rho: 1.5 }, 4, 4, 0).is_err());
        assert!(gen_matrix(&MatrixFamily::IllConditioned { kappa: 0.5 }, 4, 4, 0).is_err());
        assert!(gen_matrix(&MatrixFamily::LowRank { rank: 9 }, 4, 4, 0).is_err());
        assert!(gen_matrix(&MatrixFamily::IidGaussian { mean: 0.0, variance: 0.0 }, 4, 4, 0).is_err());
        assert!(gen_cs_mu(3, 10, 8, 11, Snr::Db(10.0), &MatrixFamily::Correlated { rho: 0.1 }, 0).is_err());
        assert!(gen_cs_mu(0, 10, 8, 2, Snr::Db(10.0), &MatrixFamily::Correlated { rho: 0.1 }, 0).is_err());
    }

    #[test]
    fn cs_mu_matches_paper_shape_and_snr() {
        let inst = gen_cs_mu(
            11,
            256,
            150,
            10,
            Snr::Db(40.0),
            &MatrixFamily::IidGaussian { mean: 0.0, variance: 1.0 },
            11,
        )
        .unwrap();
        assert_eq!(inst.blocks.len(), 11);
        let lifted = build_lifted(inst.blocks.clone()).unwrap();
        assert_eq!(lifted.a.shape(), (150, 2816));
        assert_eq!(inst.c.iter().filter(|v| **v != 0.0).count(), 10);
        assert_eq!(inst.b[0], 1.0);

        // Realized SNR is exact by construction.
        let signal = inst.effective_matrix() * &inst.c;
        let w = &inst.y - &signal;
        let snr_db = 10.0 * (signal.norm_squared() / w.norm_squared()).log10();
        assert!((snr_db - 40.0).abs() < 1e-9, "realized SNR {snr_db}");
        let beta = inst.beta.unwrap();
        assert!((beta - 150.0 / w.norm_squared()).abs() <= 1e-9 * beta);
    }

    #[test]
    fn noiseless_flag_yields_exact_measurements() {
        let inst = gen_cs_mu(
            4,
            30,
            20,
            5,
            Snr::Infinite,
            &MatrixFamily::Correlated { rho: 0.2 },
            13,
        )
        .unwrap();
        assert!(inst.beta.is_none());
        let signal = inst.effective_matrix() * &inst.c;
        assert_eq!(inst.y, signal);
    }

    #[test]
    fn non_zero_mean_cs_mu_boosts_first_block() {
        let inst = gen_cs_mu(
            4,
            60,
            50,
            5,
            Snr::Db(30.0),
            &MatrixFamily::NonZeroMean { mean: 5.0, variance: 1.0 },
            17,
        )
        .unwrap();
        let var = |m: &DMatrix<f64>| {
            let mean = m.iter().sum::<f64>() / m.len() as f64;
            m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m.len() as f64
        };
        let v0 = var(&inst.blocks[0]);
        let v1 = var(&inst.blocks[1]);
        assert!((v0 - 20.0).abs() < 2.5, "first block variance {v0}");
        assert!((v1 - 1.0).abs() < 0.2, "other block variance {v1}");
    }

    #[test]
    fn dl_column_supports_and_shapes() {
        let inst = gen_dl(
            30,
            40,
            6,
            5,
            8,
            Snr::Db(35.0),
            &MatrixFamily::Correlated { rho: 0.1 },
            19,
        )
        .unwrap();
        assert_eq!(inst.y.shape(), (30, 5));
        assert_eq!(inst.c.shape(), (40, 5));
        for l in 0..5 {
            let nnz = inst.c.column(l).iter().filter(|v| **v != 0.0).count();
            assert_eq!(nnz, 8);
            assert_eq!(inst.supports[l].len(), 8);
        }
        let signal = inst.effective_matrix() * &inst.c;
        let w = &inst.y - &signal;
        let snr_db = 10.0 * (signal.norm_squared() / w.norm_squared()).log10();
        assert!((snr_db - 35.0).abs() < 1e-9);
    }

    #[test]
    fn correlation_raises_column_alignment() {
        // Average |cos| between adjacent columns grows with ρ.
        let score = |rho: f64| -> f64 {
            let mut acc = 0.0;
            let mut count = 0;
            for seed in 0..100u64 {
                let a = gen_matrix(&MatrixFamily::Correlated { rho }, 40, 40, 900 + seed).unwrap();
                for j in 0..39 {
                    let c0 = a.column(j);
                    let c1 = a.column(j + 1);
                    acc += (c0.dot(&c1) / (c0.norm() * c1.norm())).abs();
                    count += 1;
                }
            }
            acc / count as f64
        };
        let s0 = score(0.0);
        let s1 = score(0.1);
        assert!(s1 > s0, "alignment {s1:.4} at rho=0.1 vs {s0:.4} at rho=0");
    }

    #[test]
    fn bundles_round_trip_bit_exactly() {
        let dir = tempdir().unwrap();
        let inst = gen_cs_mu(
            3,
            16,
            12,
            4,
            Snr::Db(20.0),
            &MatrixFamily::IllConditioned { kappa: 50.0 },
            23,
        )
        .unwrap();
        let path = dir.path().join("cs.biut");
        io::save_cs_mu(&inst, &path).unwrap();
        let back = io::load_cs_mu(&path).unwrap();
        assert_eq!(inst.y, back.y);
        assert_eq!(inst.b, back.b);
        assert_eq!(inst.c, back.c);
        assert_eq!(inst.blocks, back.blocks);
        assert_eq!(inst.support, back.support);
        assert_eq!(inst.beta, back.beta);
        assert_eq!(inst.family, back.family);

        let dl = gen_dl(10, 12, 4, 3, 3, Snr::Infinite, &MatrixFamily::LowRank { rank: 5 }, 29).unwrap();
        let path = dir.path().join("dl.biut");
        io::save_dl(&dl, &path).unwrap();
        let back = io::load_dl(&path).unwrap();
        assert_eq!(dl.y, back.y);
        assert_eq!(dl.c, back.c);
        assert_eq!(dl.b, back.b);
        assert_eq!(dl.supports, back.supports);

        assert!(io::load_dl(&dir.path().join("cs.biut")).is_err());
    }
}
