//! 4-bit weight sharing.
//!
//! The device stores per-synapse weights as a 4-bit mask over four base
//! strengths shared by a whole core, plus a sign choosing the excitatory
//! or inhibitory circuit. Quantization therefore picks four nonnegative
//! base values and, per weight, the subset of bases whose sum best matches
//! the magnitude.
//!
//! [`quantize_matrix`] learns the bases with a small autoencoder: a linear
//! encoder reads the magnitude vector and produces the four bases through
//! a softplus, while per-entry mask logits blend the bases into a soft
//! reconstruction. After gradient descent the masks are hardened and the
//! result is polished by alternating exact subset re-selection with a
//! least-squares re-fit of the bases, which never increases the error.
//! [`grid_search_reference`] is the brute-force counterpart used to verify
//! quantization quality; it is exponentially slower but exact on its grid.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapper::HardwareSpec;
use crate::training::Adam;

/// A quantized weight matrix: shared bases plus per-entry mask and sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    /// Shared base strengths, ascending and nonnegative. Units follow the
    /// matrix that was quantized.
    pub base_weights: [f64; 4],
    /// Per-entry 4-bit mask; bit `k` adds `base_weights[k]`.
    pub mask: Array2<u8>,
    /// Per-entry sign, `-1`, `0` or `1`; zero exactly where the mask is
    /// zero.
    pub sign: Array2<i8>,
}

impl QuantSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mask.dim() != self.sign.dim() {
            return Err(Error::dim(
                "quantized mask/sign shape",
                format!("{:?}", self.mask.dim()),
                format!("{:?}", self.sign.dim()),
            ));
        }
        for b in &self.base_weights {
            if !b.is_finite() || *b < 0.0 {
                return Err(Error::invalid("base weights must be finite and nonnegative"));
            }
        }
        if self.base_weights.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::invalid("base weights must be ascending"));
        }
        for (m, s) in self.mask.iter().zip(self.sign.iter()) {
            if *m > 15 {
                return Err(Error::invalid("mask entries must fit in 4 bits"));
            }
            if !matches!(*s, -1 | 0 | 1) {
                return Err(Error::invalid("sign entries must be -1, 0 or 1"));
            }
            if (*m == 0) != (*s == 0) {
                return Err(Error::invalid(
                    "sign must be zero exactly where the mask is zero",
                ));
            }
        }
        Ok(())
    }

    /// The weight matrix this spec encodes.
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.mask.dim());
        for ((o, m), s) in out.iter_mut().zip(self.mask.iter()).zip(self.sign.iter()) {
            *o = *s as f64 * mask_sum(&self.base_weights, *m);
        }
        out
    }
}

/// Mean squared error between a matrix and its quantized reconstruction.
pub fn reconstruction_loss(spec: &QuantSpec, w: &Array2<f64>) -> Result<f64> {
    spec.validate()?;
    if spec.mask.dim() != w.dim() {
        return Err(Error::dim(
            "quantized matrix shape",
            format!("{:?}", w.dim()),
            format!("{:?}", spec.mask.dim()),
        ));
    }
    let recon = spec.reconstruct();
    let n = w.len().max(1) as f64;
    Ok(w.iter().zip(recon.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Settings for [`quantize_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizeConfig {
    /// Gradient steps for the autoencoder phase.
    pub steps: u32,
    pub learning_rate: f64,
    /// Cap on the alternating mask/base polish rounds; the loop also stops
    /// at the first round that fails to improve.
    pub polish_rounds: u32,
    pub seed: u64,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        QuantizeConfig { steps: 2000, learning_rate: 3e-2, polish_rounds: 50, seed: 0 }
    }
}

impl QuantizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("quantizer needs at least one gradient step"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::invalid(format!(
                "quantizer learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantOutcome {
    pub spec: QuantSpec,
    /// MSE against the quantized matrix, in its units.
    pub loss: f64,
}

fn mask_sum(base: &[f64; 4], mask: u8) -> f64 {
    let mut s = 0.0;
    for (k, b) in base.iter().enumerate() {
        if mask & (1 << k) != 0 {
            s += b;
        }
    }
    s
}

fn subset_sums(base: &[f64; 4]) -> [f64; 16] {
    let mut sums = [0.0f64; 16];
    for (m, s) in sums.iter_mut().enumerate() {
        *s = mask_sum(base, m as u8);
    }
    sums
}

/// The loss of the best per-entry subset choice, without materializing the
/// masks; used to score many candidate bases cheaply.
fn best_fit_loss(base: &[f64; 4], magnitudes: &[f64]) -> f64 {
    let sums = subset_sums(base);
    let n = magnitudes.len().max(1) as f64;
    magnitudes
        .iter()
        .map(|&a| {
            let mut best = (sums[0] - a) * (sums[0] - a);
            for &s in &sums[1..] {
                let err = (s - a) * (s - a);
                if err < best {
                    best = err;
                }
            }
            best
        })
        .sum::<f64>()
        / n
}

/// The best mask per entry for fixed bases: exhaustive over the 16 subset
/// sums, ties resolved toward the smaller mask integer.
pub fn refine_masks(base: &[f64; 4], magnitudes: &[f64]) -> Vec<u8> {
    let sums = subset_sums(base);
    magnitudes
        .iter()
        .map(|&a| {
            let mut best = 0u8;
            let mut best_err = (sums[0] - a) * (sums[0] - a);
            for (m, &s) in sums.iter().enumerate().skip(1) {
                let err = (s - a) * (s - a);
                if err < best_err {
                    best_err = err;
                    best = m as u8;
                }
            }
            best
        })
        .collect()
}

fn masks_loss(base: &[f64; 4], masks: &[u8], magnitudes: &[f64]) -> f64 {
    let n = magnitudes.len().max(1) as f64;
    masks
        .iter()
        .zip(magnitudes.iter())
        .map(|(&m, &a)| {
            let d = mask_sum(base, m) - a;
            d * d
        })
        .sum::<f64>()
        / n
}

/// Least-squares re-fit of the bases for fixed masks. Bases no mask uses
/// keep their previous value; solutions driven negative are clamped to
/// zero (the caller guards against a loss increase).
fn least_squares_bases(masks: &[u8], magnitudes: &[f64], previous: &[f64; 4]) -> [f64; 4] {
    let mut mtm = [[0.0f64; 4]; 4];
    let mut mta = [0.0f64; 4];
    for (&m, &a) in masks.iter().zip(magnitudes.iter()) {
        for k in 0..4 {
            if m & (1 << k) == 0 {
                continue;
            }
            mta[k] += a;
            for l in 0..4 {
                if m & (1 << l) != 0 {
                    mtm[k][l] += 1.0;
                }
            }
        }
    }
    let used: Vec<usize> = (0..4).filter(|&k| mtm[k][k] > 0.0).collect();
    let mut out = *previous;
    if used.is_empty() {
        return out;
    }
    // Dense Gaussian elimination with partial pivoting on the used block.
    let n = used.len();
    let mut a = vec![vec![0.0f64; n + 1]; n];
    for (r, &k) in used.iter().enumerate() {
        for (c, &l) in used.iter().enumerate() {
            a[r][c] = mtm[k][l];
        }
        a[r][n] = mta[k];
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        if a[col][col].abs() < 1e-12 {
            return out; // singular block, keep the previous bases
        }
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..=n {
                a[row][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut s = a[row][n];
        for c in row + 1..n {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    for (r, &k) in used.iter().enumerate() {
        out[k] = x[r].max(0.0);
    }
    out
}

/// Alternates exact mask re-selection and base re-fitting until the loss
/// stops dropping. Returns bases, masks, and the final loss.
fn polish(
    mut base: [f64; 4],
    magnitudes: &[f64],
    rounds: u32,
) -> ([f64; 4], Vec<u8>, f64) {
    let mut masks = refine_masks(&base, magnitudes);
    let mut loss = masks_loss(&base, &masks, magnitudes);
    for _ in 0..rounds {
        let base2 = least_squares_bases(&masks, magnitudes, &base);
        let masks2 = refine_masks(&base2, magnitudes);
        let loss2 = masks_loss(&base2, &masks2, magnitudes);
        if loss2 + 1e-18 < loss {
            base = base2;
            masks = masks2;
            loss = loss2;
        } else {
            break;
        }
    }
    (base, masks, loss)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).max(1e-300).ln()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Quantile of a sorted nonempty slice, linear interpolation.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Gradient phase: learns bases through the encoder and soft masks, then
/// returns the hardened candidate bases.
fn autoencoder_bases(an: &[f64], cfg: &QuantizeConfig) -> [f64; 4] {
    let n = an.len();
    let norm_sq: f64 = an.iter().map(|a| a * a).sum();
    let mut nonzero: Vec<f64> = an.iter().copied().filter(|a| *a > 0.0).collect();
    nonzero.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ladder = [
        quantile(&nonzero, 0.25),
        quantile(&nonzero, 0.50),
        quantile(&nonzero, 0.75),
        quantile(&nonzero, 0.99),
    ];

    // Parameters: encoder rows (4 x n) then mask logits (n x 4), flattened.
    let mut theta = vec![0.0f64; 8 * n];
    for k in 0..4 {
        let target = softplus_inv(ladder[k].max(1e-9));
        let scale = target / norm_sq;
        for j in 0..n {
            theta[k * n + j] = scale * an[j];
        }
    }

    let mut opt = Adam::new(theta.len(), cfg.learning_rate, 0.9, 0.999, 1e-8)
        .expect("the config was validated by the caller");
    let mut grad = vec![0.0f64; 8 * n];
    let mut residual = vec![0.0f64; n];

    for _ in 0..cfg.steps {
        // Forward: bases from the encoder, soft masks from the logits.
        let mut pre = [0.0f64; 4];
        for k in 0..4 {
            pre[k] = (0..n).map(|j| theta[k * n + j] * an[j]).sum();
        }
        let b: Vec<f64> = pre.iter().map(|&p| softplus(p)).collect();
        let inv_n = 1.0 / n as f64;
        let mut db = [0.0f64; 4];
        for i in 0..n {
            let mut r = -an[i];
            for k in 0..4 {
                r += logistic(theta[4 * n + i * 4 + k]) * b[k];
            }
            residual[i] = r;
        }
        // Backward.
        for i in 0..n {
            let e = 2.0 * inv_n * residual[i];
            for k in 0..4 {
                let m = logistic(theta[4 * n + i * 4 + k]);
                db[k] += e * m;
                grad[4 * n + i * 4 + k] = e * b[k] * m * (1.0 - m);
            }
        }
        for k in 0..4 {
            let dpre = db[k] * logistic(pre[k]);
            for j in 0..n {
                grad[k * n + j] = dpre * an[j];
            }
        }
        opt.step(&mut theta, &grad).expect("quantizer gradients are finite");
    }

    let mut out = [0.0f64; 4];
    for k in 0..4 {
        let pre: f64 = (0..n).map(|j| theta[k * n + j] * an[j]).sum();
        out[k] = softplus(pre);
    }
    out
}

/// Quantizes one signed matrix to shared bases, masks, and signs.
pub fn quantize_matrix(w: &Array2<f64>, cfg: &QuantizeConfig) -> Result<QuantOutcome> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot quantize non-finite weights"));
    }
    cfg.validate()?;
    let magnitudes: Vec<f64> = w.iter().map(|v| v.abs()).collect();
    let amax = magnitudes.iter().cloned().fold(0.0f64, f64::max);
    if amax == 0.0 || w.is_empty() {
        let spec = QuantSpec {
            base_weights: [0.0; 4],
            mask: Array2::zeros(w.dim()),
            sign: Array2::zeros(w.dim()),
        };
        return Ok(QuantOutcome { spec, loss: 0.0 });
    }

    // Work on magnitudes normalized to a unit maximum so the optimizer
    // sees the same problem at every weight scale.
    let an: Vec<f64> = magnitudes.iter().map(|a| a / amax).collect();

    // Candidate starts for the alternating polish: the learned bases, two
    // fixed ladders, the best tuples of a coarse quantile-grid scan, and a
    // few random magnitude subsets. The subset-sum objective has many
    // local minima, so the polish runs from every start and keeps the
    // winner.
    let mut nonzero: Vec<f64> = an.iter().copied().filter(|a| *a > 0.0).collect();
    nonzero.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut candidates: Vec<[f64; 4]> = vec![
        autoencoder_bases(&an, cfg),
        [
            quantile(&nonzero, 0.25),
            quantile(&nonzero, 0.50),
            quantile(&nonzero, 0.75),
            quantile(&nonzero, 0.99),
        ],
        [1.0 / 15.0, 2.0 / 15.0, 4.0 / 15.0, 8.0 / 15.0],
    ];

    // Grid scan: a linear grid over the magnitude range extended with the
    // distinct magnitudes themselves (a base that hits a magnitude exactly
    // is a frequent optimum), every nondecreasing 4-tuple scored by its
    // best-subset loss, the strongest tuples kept as polish starts. The
    // grid density adapts to the entry count so the scan cost stays
    // bounded on large matrices.
    let lo = nonzero[0];
    let hi = *nonzero.last().expect("nonzero magnitudes exist");
    let mut distinct = nonzero.clone();
    distinct.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());
    let choose4 = |g: usize| (g * (g + 1) * (g + 2) * (g + 3)) / 24;
    let budget = 60_000_000usize; // tuples * entries, roughly 1e9 flops
    let mut pool = Vec::new();
    for linear in [64usize, 56, 48, 40, 32, 24, 16, 12, 8] {
        pool.clear();
        if hi > lo {
            pool.extend((0..linear).map(|t| lo + (hi - lo) * t as f64 / (linear - 1) as f64));
        } else {
            pool.push(lo);
        }
        if distinct.len() <= 16 {
            pool.extend(distinct.iter().copied());
            pool.extend(distinct.iter().map(|m| m / 2.0));
        }
        pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pool.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());
        if choose4(pool.len()).saturating_mul(an.len()) <= budget {
            break;
        }
    }
    let g = pool.len();
    let mut scored: Vec<(f64, [f64; 4])> = (0..g)
        .into_par_iter()
        .flat_map_iter(|i| {
            let pool = &pool;
            let an = &an;
            (i..g).flat_map(move |j| {
                (j..g).flat_map(move |k| {
                    (k..g).map(move |l| {
                        let base = [pool[i], pool[j], pool[k], pool[l]];
                        (best_fit_loss(&base, an), base)
                    })
                })
            })
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    candidates.extend(scored.iter().take(24).map(|(_, base)| *base));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..16 {
        let mut base = [0.0f64; 4];
        for b in &mut base {
            *b = nonzero[rng.gen_range(0..nonzero.len())];
        }
        base.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.push(base);
    }

    let mut best: Option<([f64; 4], Vec<u8>, f64)> = None;
    for start in candidates {
        let cand = polish(start, &an, cfg.polish_rounds);
        if best.as_ref().map_or(true, |b| cand.2 < b.2) {
            best = Some(cand);
        }
    }
    let (base_n, masks, _) = best.expect("at least one candidate was polished");

    // Back to the original scale, bases ascending with the mask bits
    // permuted to match.
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&x, &y| base_n[x].partial_cmp(&base_n[y]).unwrap());
    let mut base = [0.0f64; 4];
    for (p, &k) in order.iter().enumerate() {
        base[p] = base_n[k] * amax;
    }
    let remap = |m: u8| -> u8 {
        let mut out = 0u8;
        for (p, &k) in order.iter().enumerate() {
            if m & (1 << k) != 0 {
                out |= 1 << p;
            }
        }
        out
    };

    let shape = w.dim();
    let mask = Array2::from_shape_vec(shape, masks.iter().map(|&m| remap(m)).collect())
        .expect("mask shape matches the input");
    let mut sign = Array2::zeros(shape);
    for ((s, v), m) in sign.iter_mut().zip(w.iter()).zip(mask.iter()) {
        *s = if *m == 0 { 0 } else if *v < 0.0 { -1i8 } else { 1i8 };
    }

    let spec = QuantSpec { base_weights: base, mask, sign };
    let loss = reconstruction_loss(&spec, w)?;
    Ok(QuantOutcome { spec, loss })
}

/// Exhaustive reference quantizer: tries every nondecreasing 4-tuple of
/// base values on a linear grid spanning the nonzero magnitude range and
/// selects masks exactly. Exponential in the grid size; use it to verify
/// [`quantize_matrix`], not to quantize networks.
pub fn grid_search_reference(w: &Array2<f64>, grid: usize) -> Result<QuantOutcome> {
    if grid < 2 {
        return Err(Error::invalid("the reference search needs a grid of at least 2"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot quantize non-finite weights"));
    }
    let magnitudes: Vec<f64> = w.iter().map(|v| v.abs()).collect();
    let amax = magnitudes.iter().cloned().fold(0.0f64, f64::max);
    if amax == 0.0 || w.is_empty() {
        return quantize_matrix(w, &QuantizeConfig::default());
    }
    let amin = magnitudes.iter().cloned().filter(|a| *a > 0.0).fold(f64::MAX, f64::min);
    let values: Vec<f64> =
        (0..grid).map(|t| amin + (amax - amin) * t as f64 / (grid - 1) as f64).collect();

    let best = (0..grid)
        .into_par_iter()
        .map(|i| {
            let mut local: ([f64; 4], f64) = ([0.0; 4], f64::MAX);
            for j in i..grid {
                for k in j..grid {
                    for l in k..grid {
                        let base = [values[i], values[j], values[k], values[l]];
                        let masks = refine_masks(&base, &magnitudes);
                        let loss = masks_loss(&base, &masks, &magnitudes);
                        if loss < local.1 {
                            local = (base, loss);
                        }
                    }
                }
            }
            local
        })
        .reduce(|| ([0.0; 4], f64::MAX), |a, b| if a.1 <= b.1 { a } else { b });

    let (base, _) = best;
    let masks = refine_masks(&base, &magnitudes);
    let mask = Array2::from_shape_vec(w.dim(), masks).expect("mask shape matches the input");
    let mut sign = Array2::zeros(w.dim());
    for ((s, v), m) in sign.iter_mut().zip(w.iter()).zip(mask.iter()) {
        *s = if *m == 0 { 0 } else if *v < 0.0 { -1i8 } else { 1i8 };
    }
    let spec = QuantSpec { base_weights: base, mask, sign };
    let loss = reconstruction_loss(&spec, w)?;
    Ok(QuantOutcome { spec, loss })
}

/// One cluster's quantization: the stacked input and recurrent columns of
/// its neurons share one base set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuant {
    pub cluster: usize,
    /// Hardware neuron indices (columns) covered by this entry.
    pub neurons: Vec<usize>,
    /// Base strengths as synaptic currents in amperes (weight units times
    /// the cluster's `iw_scale`).
    pub base_amperes: [f64; 4],
    pub iw_scale: f64,
    /// `(n_virtual, n_cluster)` mask and sign for input connections.
    pub mask_in: Array2<u8>,
    pub sign_in: Array2<i8>,
    /// `(n_hw, n_cluster)` mask and sign for recurrent connections.
    pub mask_rec: Array2<u8>,
    pub sign_rec: Array2<i8>,
    /// Reconstruction MSE over the stacked block, in weight units.
    pub loss: f64,
}

/// Quantization of a whole mapped network, one base set per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedSpec {
    pub n_virtual: usize,
    pub n_hw: usize,
    pub dt: f64,
    pub clusters: Vec<ClusterQuant>,
}

impl QuantizedSpec {
    /// Reconstructs the merged weight matrices in weight units.
    pub fn reconstruct_weights(&self) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut w_in = Array2::zeros((self.n_virtual, self.n_hw));
        let mut w_rec = Array2::zeros((self.n_hw, self.n_hw));
        for cq in &self.clusters {
            if cq.iw_scale <= 0.0 {
                return Err(Error::invalid("iw_scale must be positive"));
            }
            // Sum the base currents first and divide once, in the same
            // order the device decode does, so the round trip through a
            // configuration is bit-exact.
            for (col, &j) in cq.neurons.iter().enumerate() {
                for i in 0..self.n_virtual {
                    w_in[[i, j]] = cq.sign_in[[i, col]] as f64
                        * mask_sum(&cq.base_amperes, cq.mask_in[[i, col]])
                        / cq.iw_scale;
                }
                for k in 0..self.n_hw {
                    w_rec[[k, j]] = cq.sign_rec[[k, col]] as f64
                        * mask_sum(&cq.base_amperes, cq.mask_rec[[k, col]])
                        / cq.iw_scale;
                }
            }
        }
        Ok((w_in, w_rec))
    }

    /// Simulates the mapped network with the quantized weights, using the
    /// per-neuron parameters of `spec`.
    pub fn simulate(
        &self,
        spec: &HardwareSpec,
        input: &crate::raster::SpikeRaster,
        constants: &crate::constants::PhysicalConstants,
    ) -> Result<crate::raster::SpikeRaster> {
        if spec.n_hw() != self.n_hw || spec.n_virtual != self.n_virtual {
            return Err(Error::dim(
                "quantized spec shape",
                format!("{}x{}", spec.n_virtual, spec.n_hw()),
                format!("{}x{}", self.n_virtual, self.n_hw),
            ));
        }
        let (w_in, w_rec) = self.reconstruct_weights()?;
        crate::network::evolve_hetero(&w_in, &w_rec, &spec.params_per_neuron(), input, constants)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Quantizes every cluster of a mapped network. The stacked input and
/// recurrent columns of each cluster are quantized together because the
/// base strengths are per-core resources.
pub fn quantize_spec(spec: &HardwareSpec, cfg: &QuantizeConfig) -> Result<QuantizedSpec> {
    let n_virtual = spec.n_virtual;
    let n_hw = spec.n_hw();
    let mut clusters = Vec::with_capacity(spec.clusters.len());
    for (ci, cluster) in spec.clusters.iter().enumerate() {
        let n_c = cluster.neurons.len();
        let mut stacked = Array2::zeros((n_virtual + n_hw, n_c));
        for (col, &j) in cluster.neurons.iter().enumerate() {
            for i in 0..n_virtual {
                stacked[[i, col]] = spec.w_in[[i, j]];
            }
            for k in 0..n_hw {
                stacked[[n_virtual + k, col]] = spec.w_rec[[k, j]];
            }
        }
        let outcome = quantize_matrix(&stacked, cfg)?;
        let mut base_amperes = outcome.spec.base_weights;
        for b in &mut base_amperes {
            *b *= cluster.params.iw_scale;
        }
        let mask = outcome.spec.mask;
        let sign = outcome.spec.sign;
        clusters.push(ClusterQuant {
            cluster: ci,
            neurons: cluster.neurons.clone(),
            base_amperes,
            iw_scale: cluster.params.iw_scale,
            mask_in: mask.slice(ndarray::s![0..n_virtual, ..]).to_owned(),
            sign_in: sign.slice(ndarray::s![0..n_virtual, ..]).to_owned(),
            mask_rec: mask.slice(ndarray::s![n_virtual.., ..]).to_owned(),
            sign_rec: sign.slice(ndarray::s![n_virtual.., ..]).to_owned(),
            loss: outcome.loss,
        });
    }
    Ok(QuantizedSpec { n_virtual, n_hw, dt: spec.dt, clusters })
}
