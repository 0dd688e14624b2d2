//! Monte-Carlo checks of the subspace-recovery bound under a spiked
//! covariance model, and the perturbation-robustness experiment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_prepared, prepare, reference_latent, CodecConfig};
use crate::conditioning::{gain_code, gain_from_code, ls_gain};
use crate::dictionary::{BallTree, Dictionary};
use crate::error::{invalid, ClcError, Result};
use crate::image::Image;
use crate::metrics::{bd_psnr, RdCurve, RdPoint};
use crate::numerics::{cholesky, orthonormalize_columns, sample_gaussian, sin_theta_dist, sym_eig, Matrix, Subspace};
use crate::transforms::Latent;

/// Relative eigenvalue separation below which the top-`r` subspace is
/// reported as ill-defined.
pub const DEGENERATE_GAP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SpikedParams {
    /// Ambient dimension.
    pub d: usize,
    /// Spike rank.
    pub r: usize,
    /// Signal covariance `Σ_s` (r×r).
    pub spike_cov: Matrix,
    /// Noise standard deviation of the original.
    pub sigma: f64,
    /// Noise standard deviation of the reference.
    pub sigma_ref: f64,
    /// Correlation between original and reference factors.
    pub rho: f64,
    pub n: usize,
    pub seed: u64,
}

impl SpikedParams {
    /// `Σ_s = λ_s·I` and equal noise on both sides.
    pub fn isotropic(d: usize, r: usize, lambda_s: f64, sigma: f64, rho: f64, n: usize, seed: u64) -> Self {
        Self {
            d,
            r,
            spike_cov: Matrix::diag(&vec![lambda_s; r]),
            sigma,
            sigma_ref: sigma,
            rho,
            n,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.r == 0 || self.r > self.d {
            return invalid(format!("rank {} must be in 1..={}", self.r, self.d));
        }
        if self.spike_cov.rows() != self.r || self.spike_cov.cols() != self.r {
            return invalid("spike covariance must be r×r");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return invalid(format!("ρ={} outside [0, 1]", self.rho));
        }
        if !(self.sigma >= 0.0) || !(self.sigma_ref >= 0.0) {
            return invalid("noise levels must be non-negative");
        }
        if self.n == 0 {
            return invalid("need at least one sample");
        }
        Ok(())
    }

    pub fn lambda_min(&self) -> Result<f64> {
        let (vals, _) = sym_eig(&self.spike_cov)?;
        Ok(*vals.last().expect("r ≥ 1"))
    }

    pub fn noise_power(&self) -> f64 {
        self.sigma * self.sigma + self.sigma_ref * self.sigma_ref
    }

    /// `λ_min(Σ_s)(1 − ρ) − σ² − σ̃²`.
    pub fn effective_gap(&self) -> Result<f64> {
        Ok(self.lambda_min()? * (1.0 - self.rho) - self.noise_power())
    }
}

#[derive(Debug, Clone)]
pub struct SpikedSample {
    /// Original samples, one per row.
    pub x: Matrix,
    /// Reference samples, one per row.
    pub x_ref: Matrix,
    pub u: Subspace,
    /// Whether the positive-gap condition holds for these parameters.
    pub in_regime: bool,
}

/// Random `d×r` orthonormal basis from the Q factor of a Gaussian matrix.
pub fn random_basis(d: usize, r: usize, rng: &mut impl Rng) -> Result<Subspace> {
    let g = Matrix::new(d, r, sample_gaussian(rng, 0.0, 1.0, d * r)?)?;
    Subspace::new(orthonormalize_columns(&g)?)
}

/// `x = U s + ξ`, `x̃ = U(ρ s + √(1−ρ²) s⊥) + ξ̃` with a seeded random `U`.
pub fn gen_spiked(params: &SpikedParams) -> Result<SpikedSample> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let u = random_basis(params.d, params.r, &mut rng)?;
    gen_spiked_with_basis(params, &u, &mut rng)
}

pub fn gen_spiked_with_basis(params: &SpikedParams, u: &Subspace, rng: &mut impl Rng) -> Result<SpikedSample> {
    params.validate()?;
    let (d, r, n) = (params.d, params.r, params.n);
    if u.ambient_dim() != d || u.rank() != r {
        return invalid("basis does not match (d, r)");
    }
    let l = cholesky(&params.spike_cov)?;
    let ub = u.basis();
    let perp = (1.0 - params.rho * params.rho).max(0.0).sqrt();
    let mut x = Matrix::zeros(n, d);
    let mut x_ref = Matrix::zeros(n, d);
    for i in 0..n {
        let s = l.mul_vec(&sample_gaussian(rng, 0.0, 1.0, r)?)?;
        let s_perp = l.mul_vec(&sample_gaussian(rng, 0.0, 1.0, r)?)?;
        let s_ref: Vec<f64> = s.iter().zip(&s_perp).map(|(a, b)| params.rho * a + perp * b).collect();
        let xi = sample_gaussian(rng, 0.0, params.sigma, d)?;
        let xi_ref = sample_gaussian(rng, 0.0, params.sigma_ref, d)?;
        let us = ub.mul_vec(&s)?;
        let us_ref = ub.mul_vec(&s_ref)?;
        for j in 0..d {
            x.set(i, j, us[j] + xi[j]);
            x_ref.set(i, j, us_ref[j] + xi_ref[j]);
        }
    }
    Ok(SpikedSample {
        x,
        x_ref,
        u: u.clone(),
        in_regime: params.effective_gap()? > 0.0,
    })
}

/// `S = (1/n) Σ x_i x_iᵀ` (uncentered).
pub fn empirical_cov(x: &Matrix) -> Result<Matrix> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 {
        return invalid("empirical covariance needs at least one sample");
    }
    let mut s = Matrix::zeros(d, d);
    for i in 0..n {
        let row = x.row(i);
        for a in 0..d {
            let xa = row[a];
            if xa == 0.0 {
                continue;
            }
            let out = s.row_mut(a);
            for b in a..d {
                out[b] += xa * row[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = s.get(a, b) / n as f64;
            s.set(a, b, v);
            s.set(b, a, v);
        }
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct SubspaceEstimate {
    pub subspace: Subspace,
    /// All eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// `λ_r` and `λ_{r+1}` coincide, so the subspace is not unique.
    pub degenerate: bool,
}

/// Span of the top-`r` eigenvectors of `s`.
pub fn estimate_subspace(s: &Matrix, r: usize) -> Result<SubspaceEstimate> {
    if r == 0 || r > s.rows() {
        return invalid(format!("rank {r} must be in 1..={}", s.rows()));
    }
    let (vals, vecs) = sym_eig(s)?;
    let cols: Vec<usize> = (0..r).collect();
    let degenerate = r < vals.len() && (vals[r - 1] - vals[r]).abs() <= DEGENERATE_GAP * vals[0].abs().max(1.0);
    Ok(SubspaceEstimate {
        subspace: Subspace::new(vecs.select_columns(&cols))?,
        eigenvalues: vals,
        degenerate,
    })
}

/// Top-`r` subspace of the original/reference difference `x − x̃`, whose
/// signal part shrinks with `1 − ρ` while both noises add up.
pub fn residual_subspace(sample: &SpikedSample, r: usize) -> Result<SubspaceEstimate> {
    let diff = sample.x.sub(&sample.x_ref)?;
    estimate_subspace(&empirical_cov(&diff)?, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundValue {
    /// `C(σ²+σ̃²)√(log(d/δ)/n) / (λ_min(1−ρ) − σ² − σ̃²)`.
    pub full: f64,
    /// `C√(r(σ²+σ̃²)log(d/δ)/n) / ((1−ρ)λ_min)`.
    pub simplified: f64,
}

pub fn theorem_bound(params: &SpikedParams, delta: f64, c: f64) -> Result<BoundValue> {
    params.validate()?;
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("δ={delta} outside (0, 1)"));
    }
    let gap = params.effective_gap()?;
    if !(gap > 0.0) {
        return Err(ClcError::Regime(format!(
            "effective gap {gap:.4} ≤ 0 (ρ={}, noise power {})",
            params.rho,
            params.noise_power()
        )));
    }
    let noise = params.noise_power();
    let log_term = (params.d as f64 / delta).ln() / params.n as f64;
    let lmin = params.lambda_min()?;
    Ok(BoundValue {
        full: c * noise * log_term.sqrt() / gap,
        simplified: c * (params.r as f64 * noise * log_term).sqrt() / ((1.0 - params.rho) * lmin),
    })
}

/// Gaussian rate `(r ln(2πe) + ln det Σ_z) / (2 ln 2)` in bits.
pub fn lemma_rate(cov_z: &Matrix) -> Result<f64> {
    let l = cholesky(cov_z)?;
    let log_det: f64 = (0..l.rows()).map(|i| 2.0 * l.get(i, i).ln()).sum();
    let r = cov_z.rows() as f64;
    Ok((r * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + log_det) / (2.0 * std::f64::consts::LN_2))
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for one trial of one configuration.
pub fn trial_seed(master: u64, config: u64, trial: u64) -> u64 {
    mix(mix(mix(master) ^ config) ^ trial)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub d: usize,
    pub r: usize,
    pub lambda_s: f64,
    pub sigma: f64,
    pub ns: Vec<usize>,
    pub rhos: Vec<f64>,
    pub trials: usize,
    pub delta: f64,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            d: 64,
            r: 4,
            lambda_s: 10.0,
            sigma: 0.3,
            ns: vec![100, 400, 1600],
            rhos: vec![0.0, 0.5, 0.9],
            trials: 200,
            delta: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub d: usize,
    pub r: usize,
    pub n: usize,
    pub rho: f64,
    pub sigma: f64,
    pub trial: usize,
    pub sin_theta: f64,
    /// Bound with the fitted constant.
    pub bound: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSummary {
    pub n: usize,
    pub rho: f64,
    pub median: f64,
    pub q95: f64,
    pub bound: f64,
    pub bound_simplified: f64,
    pub violation_rate: f64,
    pub degenerate_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedConfig {
    pub n: usize,
    pub rho: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCheck {
    pub rho: f64,
    pub n_small: usize,
    pub n_large: usize,
    /// `median(n_large) / median(n_small)`.
    pub ratio: f64,
    /// `√(n_small / n_large)`.
    pub expected: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub spec: SweepSpec,
    pub fitted_c: f64,
    pub violation_rate: f64,
    pub configs: Vec<ConfigSummary>,
    pub skipped: Vec<SkippedConfig>,
    pub decay: Vec<DecayCheck>,
    /// Medians never increase with n.
    pub monotone_in_n: bool,
    /// Medians increase with ρ at every n.
    pub monotone_in_rho: bool,
    #[serde(skip)]
    pub trials: Vec<TrialRecord>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violation_rate <= self.spec.delta
            && self.monotone_in_n
            && self.monotone_in_rho
            && self.decay.iter().all(|d| d.within_band)
    }
}

fn median(v: &mut [f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linear-interpolated quantile of `v` (sorted in place).
fn quantile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Allowed band for the decay ratio, relative to `√(n_small/n_large)`:
/// `[0.8, 1.4]×`, i.e. `[0.2, 0.35]` for a 16× increase in n.
pub const DECAY_BAND: (f64, f64) = (0.8, 1.4);

/// Runs every (n, ρ) configuration, fits the smallest `C` that keeps at
/// least `1 − δ` of all trials under the bound, and checks the scalings.
pub fn verify_bound(spec: &SweepSpec) -> Result<BoundReport> {
    if spec.trials == 0 || spec.ns.is_empty() || spec.rhos.is_empty() {
        return invalid("sweep needs trials, sample sizes and correlations");
    }
    if !(spec.delta > 0.0 && spec.delta < 1.0) {
        return invalid("δ must lie in (0, 1)");
    }
    let mut ns = spec.ns.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut rhos = spec.rhos.clone();
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();

    let mut skipped = Vec::new();
    let mut configs = Vec::new();
    for (ci, &n) in ns.iter().enumerate() {
        for (ri, &rho) in rhos.iter().enumerate() {
            let p = SpikedParams::isotropic(spec.d, spec.r, spec.lambda_s, spec.sigma, rho, n, 0);
            match theorem_bound(&p, spec.delta, 1.0) {
                Ok(b) => configs.push(((ci * rhos.len() + ri) as u64, p, b)),
                Err(ClcError::Regime(reason)) => skipped.push(SkippedConfig { n, rho, reason }),
                Err(e) => return Err(e),
            }
        }
    }

    // (config index, trial, sin θ, degenerate)
    let results: Vec<Vec<(f64, bool)>> = configs
        .par_iter()
        .map(|(tag, p, _)| {
            (0..spec.trials)
                .into_par_iter()
                .map(|t| {
                    let params = SpikedParams {
                        seed: trial_seed(spec.seed, *tag, t as u64),
                        ..p.clone()
                    };
                    let sample = gen_spiked(&params)?;
                    let est = residual_subspace(&sample, params.r)?;
                    Ok((sin_theta_dist(&est.subspace, &sample.u)?, est.degenerate))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut ratios: Vec<f64> = configs
        .iter()
        .zip(&results)
        .flat_map(|((_, _, b), res)| res.iter().map(move |(e, _)| e / b.full))
        .collect();
    let fitted_c = if ratios.is_empty() {
        0.0
    } else {
        // smallest C with at most ⌊δ·N⌋ trials strictly above it
        ratios.sort_by(f64::total_cmp);
        let allowed = (spec.delta * ratios.len() as f64).floor() as usize;
        ratios[ratios.len() - 1 - allowed.min(ratios.len() - 1)]
    };

    let mut trials = Vec::new();
    let mut summaries = Vec::new();
    let mut violations = 0usize;
    for ((_, p, b), res) in configs.iter().zip(&results) {
        let bound = fitted_c * b.full;
        let mut errs: Vec<f64> = res.iter().map(|r| r.0).collect();
        let mut v = 0;
        for (t, &(e, _)) in res.iter().enumerate() {
            let violated = e > bound;
            v += violated as usize;
            trials.push(TrialRecord {
                d: p.d,
                r: p.r,
                n: p.n,
                rho: p.rho,
                sigma: p.sigma,
                trial: t,
                sin_theta: e,
                bound,
                violated,
            });
        }
        violations += v;
        let simplified = theorem_bound(p, spec.delta, fitted_c)?.simplified;
        summaries.push(ConfigSummary {
            n: p.n,
            rho: p.rho,
            median: median(&mut errs),
            q95: quantile(&mut errs, 0.95),
            bound,
            bound_simplified: simplified,
            violation_rate: v as f64 / res.len() as f64,
            degenerate_trials: res.iter().filter(|r| r.1).count(),
        });
    }

    let med = |n: usize, rho: f64| summaries.iter().find(|s| s.n == n && s.rho == rho).map(|s| s.median);
    let mut monotone_in_n = true;
    let mut decay = Vec::new();
    for &rho in &rhos {
        let meds: Vec<(usize, f64)> = ns.iter().filter_map(|&n| med(n, rho).map(|m| (n, m))).collect();
        monotone_in_n &= meds.windows(2).all(|w| w[1].1 <= w[0].1);
        if let (Some(&(n0, m0)), Some(&(n1, m1))) = (meds.first(), meds.last()) {
            if n1 > n0 {
                let ratio = m1 / m0;
                let expected = (n0 as f64 / n1 as f64).sqrt();
                decay.push(DecayCheck {
                    rho,
                    n_small: n0,
                    n_large: n1,
                    ratio,
                    expected,
                    within_band: ratio >= DECAY_BAND.0 * expected && ratio <= DECAY_BAND.1 * expected,
                });
            }
        }
    }
    let monotone_in_rho = ns.iter().all(|&n| {
        let meds: Vec<f64> = rhos.iter().filter_map(|&rho| med(n, rho)).collect();
        meds.windows(2).all(|w| w[1] > w[0])
    });
    let total = trials.len().max(1);
    Ok(BoundReport {
        spec: spec.clone(),
        fitted_c,
        violation_rate: violations as f64 / total as f64,
        configs: summaries,
        skipped,
        decay,
        monotone_in_n,
        monotone_in_rho,
        trials,
    })
}

/// `1 − perturbed/clean`.
pub fn performance_reduction(clean_gain: f64, perturbed_gain: f64) -> f64 {
    1.0 - perturbed_gain / clean_gain
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessPoint {
    pub epsilon: f64,
    /// BD-PSNR over the unconditioned anchor, in dB.
    pub gain_db: f64,
    pub pr: f64,
}

/// Replaces each block's match, with probability `epsilon`, by a uniformly
/// random block of a uniformly random dictionary entry, refitting its gain.
/// Block draws depend only on `seed`, so the perturbed sets are nested in ε.
///
/// The records still name the original matches, so the result measures the
/// coding cost of bad conditioning but is not itself decodable.
pub fn perturb_conditioning(
    prep: &mut crate::codec::Prepared,
    entry_latents: &[Latent],
    epsilon: f64,
    seed: u64,
) -> Result<usize> {
    if !(0.0..=0.5).contains(&epsilon) {
        return invalid(format!("ε={epsilon} outside [0, 0.5]"));
    }
    if entry_latents.is_empty() {
        return invalid("no dictionary latents to draw from");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = &prep.latent;
    let mut replaced = 0;
    for rec in prep.cond.records.iter_mut() {
        let u: f64 = rng.random();
        let e = rng.random_range(0..entry_latents.len());
        let src = &entry_latents[e];
        let by = rng.random_range(0..src.blocks_h());
        let bx = rng.random_range(0..src.blocks_w());
        if u >= epsilon {
            continue;
        }
        let cand = src.block(by, bx);
        rec.gain_code = gain_code(ls_gain(y.block(rec.by, rec.bx), cand));
        let g = gain_from_code(rec.gain_code);
        for (dst, &c) in prep.cond.latent.block_mut(rec.by, rec.bx).iter_mut().zip(cand) {
            *dst = g * c;
        }
        replaced += 1;
    }
    Ok(replaced)
}

/// Conditional gain over the unconditioned anchor at each perturbation
/// level, measured as BD-PSNR across `steps` and averaged over `images`.
pub fn robustness_pr(
    dict: &Dictionary,
    tree: &BallTree,
    images: &[Image],
    cfg: &CodecConfig,
    epsilons: &[f64],
    steps: &[f64],
    seed: u64,
) -> Result<Vec<RobustnessPoint>> {
    if images.is_empty() {
        return invalid("robustness needs at least one image");
    }
    if let Some(&e) = epsilons.iter().find(|e| !(0.0..=0.5).contains(*e)) {
        return invalid(format!("ε={e} outside [0, 0.5]"));
    }
    let channels = images[0].channels();
    if images.iter().any(|im| im.channels() != channels) {
        return invalid("robustness images must share a channel count");
    }
    let entry_latents = (0..dict.len())
        .into_par_iter()
        .map(|id| reference_latent(dict, id, channels, cfg.patch))
        .collect::<Result<Vec<_>>>()?;
    let preps = images
        .par_iter()
        .map(|im| prepare(im, dict, tree, None, cfg))
        .collect::<Result<Vec<_>>>()?;
    let plain_cfg = CodecConfig {
        no_cond: true,
        ..cfg.clone()
    };

    let curve = |eps: Option<f64>| -> Result<RdCurve> {
        let mut points = Vec::with_capacity(steps.len());
        for &step in steps {
            let step_cfg = CodecConfig { step, ..cfg.clone() };
            let plain_step = CodecConfig { step, ..plain_cfg.clone() };
            let per_image = images
                .par_iter()
                .zip(&preps)
                .enumerate()
                .map(|(i, (im, prep))| {
                    let enc = match eps {
                        None => {
                            let p = prepare(im, dict, tree, None, &plain_step)?;
                            encode_prepared(im, &p, dict.content_hash, &plain_step)?
                        }
                        Some(e) => {
                            let mut p = prep.clone();
                            perturb_conditioning(&mut p, &entry_latents, e, trial_seed(seed, 0xC0DE, i as u64))?;
                            encode_prepared(im, &p, dict.content_hash, &step_cfg)?
                        }
                    };
                    Ok((enc.stats.bpp(), enc.stats.psnr))
                })
                .collect::<Result<Vec<_>>>()?;
            let k = per_image.len() as f64;
            let rate = per_image.iter().map(|p| p.0).sum::<f64>() / k;
            let q = per_image.iter().map(|p| p.1).sum::<f64>() / k;
            points.push(RdPoint::new(rate, q, format!("step={step}")));
        }
        RdCurve::new(points)
    };

    let anchor = curve(None)?;
    let clean = bd_psnr(&curve(Some(0.0))?, &anchor)?;
    if !(clean > 0.0) {
        return invalid(format!("conditioning gives no gain ({clean:.4} dB) to measure robustness against"));
    }
    epsilons
        .iter()
        .map(|&e| {
            let gain = if e == 0.0 { clean } else { bd_psnr(&curve(Some(e))?, &anchor)? };
            Ok(RobustnessPoint {
                epsilon: e,
                gain_db: gain,
                pr: performance_reduction(clean, gain),
            })
        })
        .collect()
}
