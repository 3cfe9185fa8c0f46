//! Deterministic maximization of the clamped key rate.
//!
//! For a fixed `(η, M)` the search runs a logarithmic grid in `μ`; at every
//! `μ` it scans `ν_th` upward and keeps the best clamped rate. The best grid
//! cell is then refined by golden-section search in `log μ` between its
//! neighbours. No randomness is involved, so identical inputs give
//! bit-identical optima.

use rayon::prelude::*;

use crate::keyrate::{evaluate, KeyRateResult, ParamError, ProtocolParams};

/// How `ν_th` is scanned at each trial `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NuScan {
    /// Stop once the clamped rate has fallen for this many consecutive `ν_th`.
    #[default]
    EarlyStop,
    /// Visit every `ν_th` in `0..L`.
    Full,
}

const EARLY_STOP_RUN: u32 = 3;
/// Grid cells on each side of the best cell searched during refinement.
const REFINE_SPAN: usize = 3;
/// Thresholds on each side of the best grid threshold refined separately.
const REFINE_NU: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub points_per_decade: u32,
    /// Smallest `μ` on the grid. Lowered automatically when a sequence would
    /// otherwise never receive less than about one photon.
    pub mu_floor: f64,
    pub mu_ceiling: f64,
    pub refine_iters: u32,
    pub nu_scan: NuScan,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            points_per_decade: 20,
            mu_floor: 1e-6,
            mu_ceiling: 1.0,
            refine_iters: 60,
            nu_scan: NuScan::EarlyStop,
        }
    }
}

/// Best operating point found for one channel transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optimum {
    pub eta: f64,
    pub mu_opt: f64,
    pub nu_th_opt: u32,
    pub m_opt: u64,
    pub result: KeyRateResult,
    /// Parameters the result was evaluated at.
    pub params: ProtocolParams,
}

/// Transmission grid plus the sequence lengths to trace, one curve per `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSpec {
    pub eta_grid: Vec<f64>,
    pub m_values: Vec<u64>,
    pub base: ProtocolParams,
}

impl CurveSpec {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.eta_grid.is_empty() {
            return Err(ParamError::invalid("eta", "transmission grid is empty"));
        }
        if self.m_values.is_empty() {
            return Err(ParamError::invalid("M", "no sequence lengths given"));
        }
        if let Some(bad) = self.eta_grid.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return Err(ParamError::invalid(
                "eta",
                format!("{bad} is outside (0, 1]"),
            ));
        }
        if self.eta_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ParamError::invalid(
                "eta",
                "grid must be strictly increasing",
            ));
        }
        if self.m_values.contains(&0) {
            return Err(ParamError::invalid("M", "sequence length must be positive"));
        }
        self.base.validate()
    }
}

/// `per_decade` log-spaced points from `min` to `max`, both included when
/// they sit on the lattice `10^(k / per_decade)`.
pub fn log_grid(min: f64, max: f64, per_decade: u32) -> Vec<f64> {
    let per = per_decade.max(1) as f64;
    let lo = (min.log10() * per).round() as i64;
    let hi = (max.log10() * per).round() as i64;
    (lo..=hi)
        .map(|k| {
            if k % per_decade as i64 == 0 {
                format!("1e{}", k / per_decade as i64).parse().unwrap()
            } else {
                10f64.powf(k as f64 / per)
            }
        })
        .collect()
}

/// `{1, 2, 5} x 10^k` for `k = 0..=6`.
pub fn default_m_candidates() -> Vec<u64> {
    (0..=6)
        .flat_map(|k| [1u64, 2, 5].map(|f| f * 10u64.pow(k)))
        .collect()
}

/// Sequence length whose duration matches the initialization gap, `ML ≈ c_d`,
/// rounded half to even and floored at one.
pub fn heuristic_m(block_len: u32, init_pulses: u64) -> u64 {
    let ratio = init_pulses as f64 / block_len.max(1) as f64;
    ratio.round_ties_even().max(1.0) as u64
}

/// Best `(ν_th, result)` for a fixed `μ`. Ties go to the smaller `ν_th`.
fn best_threshold(p: &ProtocolParams, scan: NuScan) -> (u32, KeyRateResult) {
    let mut trial = *p;
    trial.nu_th = 0;
    let mut best = (0, evaluate(&trial));
    let mut prev = best.1.g;
    let mut falling = 0;
    for nu in 1..p.block_len {
        trial.nu_th = nu;
        let r = evaluate(&trial);
        if r.g > best.1.g {
            best = (nu, r);
        }
        if scan == NuScan::EarlyStop && best.1.g > 0.0 {
            falling = if r.g < prev { falling + 1 } else { 0 };
            if falling >= EARLY_STOP_RUN {
                break;
            }
        }
        prev = r.g;
    }
    best
}

#[derive(Clone, Copy)]
struct Candidate {
    mu: f64,
    nu_th: u32,
    result: KeyRateResult,
}

impl Candidate {
    fn at(p: &ProtocolParams, mu: f64, scan: NuScan) -> Self {
        let (nu_th, result) = best_threshold(&ProtocolParams { mu, ..*p }, scan);
        Candidate { mu, nu_th, result }
    }

    fn beats(&self, other: &Candidate) -> bool {
        self.result.g > other.result.g
    }
}

fn mu_grid(p: &ProtocolParams, cfg: &SearchConfig) -> Vec<f64> {
    let per_sequence = p.block_len as f64 * p.blocks_per_seq as f64 * p.eta;
    let floor = if per_sequence > 0.0 {
        cfg.mu_floor.min(1e-2 / per_sequence)
    } else {
        cfg.mu_floor
    };
    log_grid(floor, cfg.mu_ceiling, cfg.points_per_decade)
}

/// Golden-section search for the best `μ` in `[lo, hi]` at fixed `ν_th`.
fn golden_refine(p: &ProtocolParams, nu_th: u32, lo: f64, hi: f64, iters: u32) -> Candidate {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let at = |log_mu: f64| {
        let mu = log_mu.exp();
        Candidate {
            mu,
            nu_th,
            result: evaluate(&ProtocolParams { mu, nu_th, ..*p }),
        }
    };
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = at(c);
    let mut fd = at(d);
    for _ in 0..iters {
        if fc.result.g >= fd.result.g {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = at(d);
        }
    }
    if fd.beats(&fc) {
        fd
    } else {
        fc
    }
}

/// Maximizes the clamped key rate over `(μ, ν_th)` at fixed `(η, M)`.
pub fn optimize_point(base: &ProtocolParams, eta: f64, m: u64) -> Result<Optimum, ParamError> {
    optimize_point_with(base, eta, m, &SearchConfig::default())
}

pub fn optimize_point_with(
    base: &ProtocolParams,
    eta: f64,
    m: u64,
    cfg: &SearchConfig,
) -> Result<Optimum, ParamError> {
    if eta.is_nan() || eta <= 0.0 {
        return Err(ParamError::invalid(
            "eta",
            format!("{eta} must be positive"),
        ));
    }
    let p = ProtocolParams {
        eta,
        blocks_per_seq: m,
        ..*base
    }
    .validated()?;

    let grid = mu_grid(&p, cfg);
    let cells: Vec<Candidate> = grid
        .iter()
        .map(|&mu| Candidate::at(&p, mu, cfg.nu_scan))
        .collect();
    let mut best_idx = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.beats(&cells[best_idx]) {
            best_idx = i;
        }
    }
    let mut best = cells[best_idx];
    if best.result.g > 0.0 {
        // The envelope over ν_th has kinks where the best threshold changes,
        // so each nearby threshold is refined on its own.
        let lo = grid[best_idx.saturating_sub(REFINE_SPAN)];
        let hi = grid[(best_idx + REFINE_SPAN).min(grid.len() - 1)];
        let first = best.nu_th.saturating_sub(REFINE_NU);
        let last = (best.nu_th + REFINE_NU).min(p.block_len - 1);
        for nu in first..=last {
            let cand = golden_refine(&p, nu, lo, hi, cfg.refine_iters);
            if cand.beats(&best) {
                best = cand;
            }
        }
    }

    let params = ProtocolParams {
        mu: best.mu,
        nu_th: best.nu_th,
        ..p
    };
    Ok(Optimum {
        eta,
        mu_opt: best.mu,
        nu_th_opt: best.nu_th,
        m_opt: m,
        result: evaluate(&params),
        params,
    })
}

/// Best optimum across `candidates`; ties keep the earlier candidate.
pub fn optimize_with_m(
    base: &ProtocolParams,
    eta: f64,
    candidates: &[u64],
) -> Result<Optimum, ParamError> {
    optimize_with_m_using(base, eta, candidates, &SearchConfig::default())
}

pub fn optimize_with_m_using(
    base: &ProtocolParams,
    eta: f64,
    candidates: &[u64],
    cfg: &SearchConfig,
) -> Result<Optimum, ParamError> {
    if candidates.is_empty() {
        return Err(ParamError::invalid("M", "candidate list is empty"));
    }
    let optima: Vec<Optimum> = candidates
        .par_iter()
        .map(|&m| optimize_point_with(base, eta, m, cfg))
        .collect::<Result<_, _>>()?;
    let mut best = optima[0];
    for o in &optima[1..] {
        if o.result.g > best.result.g {
            best = *o;
        }
    }
    Ok(best)
}

/// One optimum per `(M, η)`, ordered by `M` then `η`.
pub fn sweep_curves(spec: &CurveSpec) -> Result<Vec<Optimum>, ParamError> {
    sweep_curves_with(spec, &SearchConfig::default())
}

pub fn sweep_curves_with(spec: &CurveSpec, cfg: &SearchConfig) -> Result<Vec<Optimum>, ParamError> {
    spec.validate()?;
    let points: Vec<(u64, f64)> = spec
        .m_values
        .iter()
        .flat_map(|&m| spec.eta_grid.iter().map(move |&eta| (m, eta)))
        .collect();
    points
        .par_iter()
        .map(|&(m, eta)| optimize_point_with(&spec.base, eta, m, cfg))
        .collect()
}
