//! Closed-form secret-key-rate model for round-robin DPS with slow basis choice.
//!
//! A *block* is `L` pulses, a *sequence* is `M` blocks that share one
//! interferometer delay. The channel model is the leading-order one: a
//! sequence yields a sifted block when, after a run of silent blocks, a block
//! carries a single photon in a valid slot or a single dark count.
//!
//! Two detector models are supported. With photon-number-resolving detectors
//! the rate is
//!
//! ```text
//! G = Q / (M L + c_d) * (1 - h(e_bit) - h(e_ph))
//! ```
//!
//! With threshold detectors the multi-photon contribution is bounded from the
//! beam-dump double-count rate `e_mB`:
//!
//! ```text
//! G = Q / (M L + c_d) * (1 - h(e_bit) - e_mB/Q - (1 - e_mB/Q) h(e_ph))
//! ```
//!
//! and the phase error rate uses `Q - e_mB` in place of `Q`.

use std::fmt;
use std::str::FromStr;

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Which key-rate formula applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Detector {
    /// Photon-number-resolving detectors.
    #[default]
    Pnr,
    /// Click/no-click detectors with dead time.
    Threshold,
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Detector::Pnr => f.write_str("pnr"),
            Detector::Threshold => f.write_str("threshold"),
        }
    }
}

impl FromStr for Detector {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pnr" => Ok(Detector::Pnr),
            "threshold" => Ok(Detector::Threshold),
            other => Err(ParamError::invalid(
                "detector",
                format!("unknown detector model {other:?} (expected pnr or threshold)"),
            )),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl ParamError {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ParamError::Invalid {
            field,
            reason: reason.into(),
        }
    }

    pub fn field(&self) -> &'static str {
        match self {
            ParamError::Invalid { field, .. } => field,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum KeyRateError {
    #[error("binary entropy argument {0} is outside [0, 1]")]
    EntropyDomain(f64),
    #[error("detection rate is zero; error rates are undefined")]
    NoDetections,
}

/// The tagged fraction exceeds the usable detection rate, so the phase-error
/// estimate gives no bound and no key can be extracted.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("phase error rate has no valid bound")]
pub struct NoValidBound;

/// Physical and protocol parameters for one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    /// Pulses per block (`L`).
    pub block_len: u32,
    /// Blocks per sequence (`M`).
    pub blocks_per_seq: u64,
    /// Mean photon number per coherent pulse.
    pub mu: f64,
    /// Source photon-number threshold per block.
    pub nu_th: u32,
    /// Channel transmission.
    pub eta: f64,
    /// Intrinsic system error rate.
    pub e_sys: f64,
    /// Dark-count probability per detection slot.
    pub dark_count: f64,
    /// Pulses emitted while the devices are re-initialized after each sequence.
    pub init_pulses: u64,
    pub detector: Detector,
    /// Pulse interval in seconds. Metadata only; no rate formula reads it.
    pub pulse_interval: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            block_len: 128,
            blocks_per_seq: 1,
            mu: 0.01,
            nu_th: 0,
            eta: 1e-3,
            e_sys: 0.03,
            dark_count: 1e-9,
            init_pulses: 0,
            detector: Detector::Pnr,
            pulse_interval: 1e-9,
        }
    }
}

fn unit_interval(field: &'static str, v: f64) -> Result<(), ParamError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ParamError::invalid(field, format!("{v} is outside [0, 1]")))
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.block_len < 2 {
            return Err(ParamError::invalid(
                "L",
                format!("block length {} must be at least 2", self.block_len),
            ));
        }
        if self.blocks_per_seq < 1 {
            return Err(ParamError::invalid(
                "M",
                "sequence must hold at least one block",
            ));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(ParamError::invalid(
                "mu",
                format!("{} is not a finite nonnegative mean photon number", self.mu),
            ));
        }
        if self.nu_th > self.block_len - 1 {
            return Err(ParamError::invalid(
                "nu_th",
                format!("{} exceeds L - 1 = {}", self.nu_th, self.block_len - 1),
            ));
        }
        unit_interval("eta", self.eta)?;
        unit_interval("e_sys", self.e_sys)?;
        unit_interval("d_c", self.dark_count)?;
        if !(self.pulse_interval.is_finite() && self.pulse_interval > 0.0) {
            return Err(ParamError::invalid(
                "T",
                format!("pulse interval {} must be positive", self.pulse_interval),
            ));
        }
        Ok(())
    }

    /// Consumes and returns `self` if every invariant holds.
    pub fn validated(self) -> Result<Self, ParamError> {
        self.validate().map(|_| self)
    }

    /// Mean number of photons reaching Bob per block, `L η μ`.
    pub fn arrivals_per_block(&self) -> f64 {
        self.block_len as f64 * self.eta * self.mu
    }

    /// Pulses consumed per sequence including the initialization gap, `M L + c_d`.
    pub fn pulses_per_sequence(&self) -> f64 {
        self.blocks_per_seq as f64 * self.block_len as f64 + self.init_pulses as f64
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `h(x) = -x log2 x - (1-x) log2 (1-x)`, with `0 log2 0 = 0`.
pub fn binary_entropy(x: f64) -> Result<f64, KeyRateError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(KeyRateError::EntropyDomain(x));
    }
    Ok(entropy(x))
}

fn entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (-x).ln_1p() * std::f64::consts::LOG2_E
}

/// Privacy-amplification cost of a phase error rate bound. `e_ph` is an upper
/// bound, so anything at or above one half costs a full bit.
fn phase_cost(e_ph: f64) -> f64 {
    entropy(e_ph.min(0.5))
}

/// `P(N > threshold)` for `N ~ Poisson(mean)`.
///
/// Terms come from the recurrence `p_k = p_{k-1} mean / k` anchored at a
/// single log-space evaluation. When the threshold sits above the mean the
/// upper tail is summed directly; otherwise the lower tail is summed from the
/// threshold downward and complemented.
pub fn poisson_upper_tail(mean: f64, threshold: u32) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let log_mean = mean.ln();
    let log_pmf = |k: f64| -mean + k * log_mean - ln_gamma(k + 1.0);

    let first = threshold as f64 + 1.0;
    if first > mean {
        let mut term = log_pmf(first).exp();
        let mut acc = CompensatedSum::default();
        let mut k = first;
        while term > 0.0 && term > acc.value() * 1e-18 {
            acc.add(term);
            k += 1.0;
            term *= mean / k;
        }
        acc.value()
    } else {
        let mut k = threshold as f64;
        let mut term = log_pmf(k).exp();
        let mut acc = CompensatedSum::default();
        loop {
            acc.add(term);
            if k == 0.0 || term == 0.0 {
                break;
            }
            term *= k / mean;
            k -= 1.0;
        }
        (1.0 - acc.value()).max(0.0)
    }
}

/// Probability that a block of `block_len` pulses at mean `mu` carries more
/// than `nu_th` photons at the source (`e_src`).
pub fn source_tail(block_len: u32, mu: f64, nu_th: u32) -> f64 {
    poisson_upper_tail(block_len as f64 * mu, nu_th)
}

/// Probability that at least one of `blocks` independent blocks exceeds the
/// photon threshold: `1 - (1 - e_src)^M`, evaluated through `ln_1p`/`exp_m1`.
pub fn sequence_tail(e_src: f64, blocks: u64) -> f64 {
    -(blocks as f64 * (-e_src).ln_1p()).exp_m1()
}

/// `sum_{m=0}^{n-1} r^m` for `r = exp(log_ratio)`, `log_ratio <= 0`.
pub fn geometric_sum_from_log(log_ratio: f64, n: u64) -> f64 {
    if log_ratio == 0.0 {
        return n as f64;
    }
    if log_ratio == f64::NEG_INFINITY {
        return if n == 0 { 0.0 } else { 1.0 };
    }
    (n as f64 * log_ratio).exp_m1() / log_ratio.exp_m1()
}

/// `sum_{m=0}^{n-1} r^m` for `r` in `[0, 1]`.
pub fn geometric_sum(r: f64, n: u64) -> f64 {
    geometric_sum_from_log(r.ln(), n)
}

/// Log of the per-block probability that nothing clicks:
/// `ln(e^{-Lημ} (1 - d_c)^{2L})`.
fn log_silent_block(p: &ProtocolParams) -> f64 {
    -p.arrivals_per_block() + 2.0 * p.block_len as f64 * (-p.dark_count).ln_1p()
}

fn silent_run_weight(p: &ProtocolParams) -> f64 {
    geometric_sum_from_log(log_silent_block(p), p.blocks_per_seq)
}

/// Single photon in a valid slot: `½ Lημ e^{-Lημ}`.
fn single_photon_term(p: &ProtocolParams) -> f64 {
    let x = p.arrivals_per_block();
    0.5 * x * (-x).exp()
}

/// Detection rate per sequence, `Q`.
pub fn detection_rate(p: &ProtocolParams) -> f64 {
    let per_block = single_photon_term(p) + p.block_len as f64 * p.dark_count;
    silent_run_weight(p) * per_block
}

/// Bit error rate. The silent-run weight cancels between numerator and `Q`.
pub fn bit_error_rate(p: &ProtocolParams) -> Result<f64, KeyRateError> {
    let signal = single_photon_term(p);
    let dark = p.block_len as f64 * p.dark_count;
    let per_block = signal + dark;
    if per_block <= 0.0 || silent_run_weight(p) <= 0.0 {
        return Err(KeyRateError::NoDetections);
    }
    Ok((signal * p.e_sys + 0.5 * dark) / per_block)
}

/// Eight times the double-count rate per sequence, `e_mB`. Zero for PNR detectors.
pub fn double_count_bound(p: &ProtocolParams) -> f64 {
    if p.detector == Detector::Pnr {
        return 0.0;
    }
    double_count_bound_unconditional(p)
}

/// `e_mB` evaluated regardless of the detector model.
pub fn double_count_bound_unconditional(p: &ProtocolParams) -> f64 {
    let x = p.arrivals_per_block();
    let slots = 2.0 * p.block_len as f64;
    let d = p.dark_count;
    let decay = (-x).exp();
    let per_block = 0.0625 * x * x * decay
        + 0.5 * x * decay * (slots - 1.0) * d
        + 0.5 * slots * (slots - 1.0) * d * d;
    8.0 * silent_run_weight(p) * per_block
}

fn tagged_phase_error(
    e_src_slow: f64,
    usable_rate: f64,
    nu_th: u32,
    block_len: u32,
) -> Result<f64, NoValidBound> {
    if usable_rate.is_nan() || usable_rate <= 0.0 || e_src_slow > usable_rate {
        return Err(NoValidBound);
    }
    let tagged = e_src_slow / usable_rate;
    Ok(tagged + (1.0 - tagged) * nu_th as f64 / (block_len as f64 - 1.0))
}

/// Phase error rate for photon-number-resolving detectors.
pub fn phase_error_pnr(
    e_src_slow: f64,
    q: f64,
    nu_th: u32,
    block_len: u32,
) -> Result<f64, NoValidBound> {
    tagged_phase_error(e_src_slow, q, nu_th, block_len)
}

/// Phase error rate for threshold detectors: `Q` is reduced by the double-count bound.
pub fn phase_error_threshold(
    e_src_slow: f64,
    q: f64,
    e_mb: f64,
    nu_th: u32,
    block_len: u32,
) -> Result<f64, NoValidBound> {
    if q <= e_mb {
        return Err(NoValidBound);
    }
    tagged_phase_error(e_src_slow, q - e_mb, nu_th, block_len)
}

/// Why a key rate is (or is not) positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RateStatus {
    /// Formula evaluated; `g_raw` may still be negative.
    Valid,
    /// Phase error estimate is vacuous; rate is 0.
    NoValidBound,
    /// Nothing is ever detected; rate is 0.
    NoDetections,
}

/// Channel statistics feeding the rate formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub q: f64,
    pub e_bit: f64,
    pub e_src_slow: f64,
    pub e_mb: f64,
}

/// Output of one of the two rate formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOutcome {
    pub g_raw: f64,
    pub e_ph: Option<f64>,
    pub status: RateStatus,
}

impl RateOutcome {
    fn vacuous() -> Self {
        RateOutcome {
            g_raw: 0.0,
            e_ph: None,
            status: RateStatus::NoValidBound,
        }
    }
}

/// Photon-number-resolving rate formula; `e_mb` in `stats` is ignored.
pub fn pnr_rate(stats: &ChannelStats, nu_th: u32, block_len: u32, pulses: f64) -> RateOutcome {
    match phase_error_pnr(stats.e_src_slow, stats.q, nu_th, block_len) {
        Ok(e_ph) => RateOutcome {
            g_raw: stats.q / pulses * (1.0 - entropy(stats.e_bit) - phase_cost(e_ph)),
            e_ph: Some(e_ph),
            status: RateStatus::Valid,
        },
        Err(NoValidBound) => RateOutcome::vacuous(),
    }
}

/// Threshold-detector rate formula.
pub fn threshold_rate(
    stats: &ChannelStats,
    nu_th: u32,
    block_len: u32,
    pulses: f64,
) -> RateOutcome {
    match phase_error_threshold(stats.e_src_slow, stats.q, stats.e_mb, nu_th, block_len) {
        Ok(e_ph) => {
            let multi = stats.e_mb / stats.q;
            RateOutcome {
                g_raw: stats.q / pulses
                    * (1.0 - entropy(stats.e_bit) - multi - (1.0 - multi) * phase_cost(e_ph)),
                e_ph: Some(e_ph),
                status: RateStatus::Valid,
            }
        }
        Err(NoValidBound) => RateOutcome::vacuous(),
    }
}

/// Every quantity of the rate model at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRateResult {
    /// Clamped key rate per pulse, `max(g_raw, 0)`.
    pub g: f64,
    /// Key rate per pulse before clamping; 0 when no bound exists.
    pub g_raw: f64,
    pub q: f64,
    pub e_bit: Option<f64>,
    pub e_ph: Option<f64>,
    pub e_src: f64,
    pub e_src_slow: f64,
    pub e_mb: f64,
    pub status: RateStatus,
}

/// Channel statistics for `p`, or `None` if nothing is ever detected.
pub fn channel_stats(p: &ProtocolParams) -> Option<ChannelStats> {
    let q = detection_rate(p);
    if q.is_nan() || q <= 0.0 {
        return None;
    }
    let e_bit = bit_error_rate(p).ok()?;
    let e_src = source_tail(p.block_len, p.mu, p.nu_th);
    Some(ChannelStats {
        q,
        e_bit,
        e_src_slow: sequence_tail(e_src, p.blocks_per_seq),
        e_mb: double_count_bound(p),
    })
}

/// Secret key rate per pulse at `p`.
pub fn key_rate(p: &ProtocolParams) -> Result<KeyRateResult, ParamError> {
    p.validate()?;
    Ok(evaluate(p))
}

/// [`key_rate`] without re-validating `p`.
pub(crate) fn evaluate(p: &ProtocolParams) -> KeyRateResult {
    let e_src = source_tail(p.block_len, p.mu, p.nu_th);
    let e_src_slow = sequence_tail(e_src, p.blocks_per_seq);
    let e_mb = double_count_bound(p);
    let q = detection_rate(p);
    let e_bit = match bit_error_rate(p) {
        Ok(e) if q > 0.0 => e,
        _ => {
            return KeyRateResult {
                g: 0.0,
                g_raw: 0.0,
                q,
                e_bit: None,
                e_ph: None,
                e_src,
                e_src_slow,
                e_mb,
                status: RateStatus::NoDetections,
            }
        }
    };
    let stats = ChannelStats {
        q,
        e_bit,
        e_src_slow,
        e_mb,
    };
    let pulses = p.pulses_per_sequence();
    let outcome = match p.detector {
        Detector::Pnr => pnr_rate(&stats, p.nu_th, p.block_len, pulses),
        Detector::Threshold => threshold_rate(&stats, p.nu_th, p.block_len, pulses),
    };
    KeyRateResult {
        g: outcome.g_raw.max(0.0),
        g_raw: outcome.g_raw,
        q,
        e_bit: Some(e_bit),
        e_ph: outcome.e_ph,
        e_src,
        e_src_slow,
        e_mb,
        status: outcome.status,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
    }

    fn fig1(eta: f64, mu: f64, m: u64) -> ProtocolParams {
        ProtocolParams {
            eta,
            mu,
            blocks_per_seq: m,
            ..ProtocolParams::default()
        }
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        // 60-digit evaluation of the definition: 0.49991595816452799...
        assert!((binary_entropy(0.11).unwrap() - 0.499_915_958_164_528).abs() < 1e-12);
        assert_eq!(binary_entropy(1.2), Err(KeyRateError::EntropyDomain(1.2)));
        assert!(binary_entropy(-1e-9).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn source_tail_values() {
        assert_eq!(source_tail(17, 0.0, 3), 0.0);
        let t = source_tail(1, 0.3, 0);
        assert!(close(t, -(-0.3f64).exp_m1(), 1e-14));
        assert!(close(t, 0.259_181_779_318_282, 1e-12));
        // Reference: 0.041125718315457915366...
        assert!(close(
            source_tail(128, 0.01, 3),
            0.041_125_718_315_457_92,
            1e-12
        ));
    }

    #[test]
    fn source_tail_large_threshold_no_overflow() {
        let t = poisson_upper_tail(50.0, 10_000);
        assert_eq!(t, 0.0);
        let t = poisson_upper_tail(9_000.0, 10_000);
        assert!(t > 0.0 && t < 1e-20);
        let t = poisson_upper_tail(12_000.0, 10_000);
        assert!(t > 1.0 - 1e-12 && t <= 1.0);
    }

    #[test]
    fn sequence_tail_values() {
        assert_eq!(sequence_tail(0.37, 1), 0.37);
        assert!(close(sequence_tail(0.1, 3), 0.271, 1e-14));
        // Reference: 9.99999500000666666...e-7
        assert!(close(
            sequence_tail(1e-12, 1_000_000),
            9.999_995_000_006_667e-7,
            1e-9
        ));
        assert_eq!(sequence_tail(1.0, 5), 1.0);
        assert_eq!(sequence_tail(0.0, 5), 0.0);
    }

    #[test]
    fn geometric_limits() {
        assert_eq!(geometric_sum(1.0, 17), 17.0);
        assert_eq!(geometric_sum(0.0, 17), 1.0);
        assert!(close(geometric_sum(0.5, 3), 1.75, 1e-15));
    }

    #[test]
    fn detection_rate_values() {
        let mut p = fig1(1e-3, 0.01, 1);
        p.dark_count = 0.0;
        let x: f64 = 128.0 * 1e-3 * 0.01;
        assert!(close(detection_rate(&p), 0.5 * x * (-x).exp(), 1e-15));

        p.blocks_per_seq = 10;
        // Reference: 10-term summation, 6.3551451760083225...e-3
        assert!((detection_rate(&p) - 6.355e-3).abs() < 1e-6);
        assert!(close(detection_rate(&p), 6.355_145_176_008_322e-3, 1e-12));

        let nothing = ProtocolParams {
            eta: 0.0,
            mu: 0.0,
            dark_count: 0.0,
            blocks_per_seq: 1000,
            ..p
        };
        assert_eq!(detection_rate(&nothing), 0.0);
    }

    #[test]
    fn bit_error_rate_values() {
        let mut p = fig1(1e-3, 0.01, 7);
        p.dark_count = 0.0;
        assert_eq!(bit_error_rate(&p).unwrap(), 0.03);

        let dark_only = ProtocolParams {
            mu: 0.0,
            dark_count: 1e-6,
            ..p
        };
        assert_eq!(bit_error_rate(&dark_only).unwrap(), 0.5);

        let p = fig1(1e-3, 0.01, 1);
        // Reference: 0.030094101552621720
        assert!(close(
            bit_error_rate(&p).unwrap(),
            0.030_094_101_552_621_72,
            1e-12
        ));

        let silent = ProtocolParams {
            mu: 0.0,
            dark_count: 0.0,
            ..p
        };
        assert_eq!(bit_error_rate(&silent), Err(KeyRateError::NoDetections));
    }

    #[test]
    fn double_count_values() {
        let mut p = fig1(1e-3, 0.01, 1);
        p.detector = Detector::Threshold;
        p.dark_count = 0.0;
        let x = p.arrivals_per_block();
        assert!(close(
            double_count_bound(&p),
            0.5 * x * x * (-x).exp(),
            1e-14
        ));

        let dark = ProtocolParams {
            mu: 0.0,
            dark_count: 1e-5,
            ..p
        };
        assert!(close(
            double_count_bound(&dark),
            8.0 * 128.0 * 255.0 * 1e-10,
            1e-12
        ));

        let p = ProtocolParams {
            blocks_per_seq: 1000,
            dark_count: 1e-9,
            ..p
        };
        // Reference: 1000-term summation, 4.6244971347228447e-4
        assert!(close(
            double_count_bound(&p),
            4.624_497_134_722_845e-4,
            1e-3
        ));

        let pnr = ProtocolParams {
            detector: Detector::Pnr,
            ..p
        };
        assert_eq!(double_count_bound(&pnr), 0.0);
    }

    #[test]
    fn phase_error_values() {
        assert!(close(
            phase_error_pnr(0.0, 0.2, 5, 128).unwrap(),
            5.0 / 127.0,
            1e-15
        ));
        assert_eq!(phase_error_pnr(0.01, 0.01, 9, 128).unwrap(), 1.0);
        assert!(close(
            phase_error_pnr(0.001, 0.01, 4, 128).unwrap(),
            0.128_346_456_692_913_4,
            1e-14
        ));
        assert_eq!(phase_error_pnr(0.02, 0.01, 4, 128), Err(NoValidBound));

        assert_eq!(
            phase_error_threshold(0.001, 0.01, 0.0, 4, 128),
            phase_error_pnr(0.001, 0.01, 4, 128)
        );
        assert!(close(
            phase_error_threshold(0.0, 0.2, 0.1, 2, 65).unwrap(),
            2.0 / 64.0,
            1e-15
        ));
        let a = phase_error_threshold(0.001, 0.011, 0.001, 4, 128).unwrap();
        let b = phase_error_pnr(0.001, 0.01, 4, 128).unwrap();
        assert!(close(a, b, 1e-12));
        assert_eq!(
            phase_error_threshold(0.0, 0.01, 0.01, 4, 128),
            Err(NoValidBound)
        );
        assert_eq!(
            phase_error_threshold(0.0095, 0.02, 0.011, 4, 128),
            Err(NoValidBound)
        );
    }

    #[test]
    fn validation_names_the_field() {
        let cases: [(ProtocolParams, &str); 7] = [
            (
                ProtocolParams {
                    block_len: 1,
                    nu_th: 0,
                    ..Default::default()
                },
                "L",
            ),
            (
                ProtocolParams {
                    blocks_per_seq: 0,
                    ..Default::default()
                },
                "M",
            ),
            (
                ProtocolParams {
                    mu: -0.1,
                    ..Default::default()
                },
                "mu",
            ),
            (
                ProtocolParams {
                    nu_th: 128,
                    ..Default::default()
                },
                "nu_th",
            ),
            (
                ProtocolParams {
                    eta: 1.5,
                    ..Default::default()
                },
                "eta",
            ),
            (
                ProtocolParams {
                    e_sys: -0.1,
                    ..Default::default()
                },
                "e_sys",
            ),
            (
                ProtocolParams {
                    dark_count: 2.0,
                    ..Default::default()
                },
                "d_c",
            ),
        ];
        for (p, field) in cases {
            assert_eq!(p.validate().unwrap_err().field(), field);
            assert!(key_rate(&p).is_err());
        }
        assert!(ProtocolParams {
            nu_th: 127,
            ..Default::default()
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn key_rate_without_entropy_costs() {
        let p = ProtocolParams {
            e_sys: 0.0,
            dark_count: 0.0,
            nu_th: 0,
            mu: 0.0,
            ..fig1(1e-2, 0.0, 3)
        };
        // mu = 0 means nothing is detected at all.
        let r = key_rate(&p).unwrap();
        assert_eq!(r.status, RateStatus::NoDetections);
        assert_eq!(r.g, 0.0);

        // e_bit = 0 and e_src_slow = 0 (a source that never exceeds nu_th = 0 is
        // only possible at mu = 0), so force it through the component formula.
        let stats = ChannelStats {
            q: 0.01,
            e_bit: 0.0,
            e_src_slow: 0.0,
            e_mb: 0.0,
        };
        let out = pnr_rate(&stats, 0, 128, 3.0 * 128.0);
        assert_eq!(out.g_raw, 0.01 / 384.0);
    }

    #[test]
    fn threshold_reduces_to_pnr_with_zero_double_counts() {
        let stats = ChannelStats {
            q: 3.2e-3,
            e_bit: 0.031,
            e_src_slow: 1.1e-4,
            e_mb: 0.0,
        };
        let a = pnr_rate(&stats, 3, 128, 128.0 * 10.0);
        let b = threshold_rate(&stats, 3, 128, 128.0 * 10.0);
        assert!(close(a.g_raw, b.g_raw, 1e-12));
        assert_eq!(a.e_ph, b.e_ph);
    }

    #[test]
    fn vacuous_bound_reports_zero() {
        let p = ProtocolParams {
            mu: 0.5,
            nu_th: 0,
            ..fig1(1e-4, 0.5, 100)
        };
        let r = key_rate(&p).unwrap();
        assert_eq!(r.status, RateStatus::NoValidBound);
        assert_eq!(r.g, 0.0);
        assert_eq!(r.g_raw, 0.0);
        assert!(r.e_ph.is_none());
    }

    #[test]
    fn negative_raw_rate_is_clamped() {
        let p = ProtocolParams {
            e_sys: 0.4,
            nu_th: 2,
            ..fig1(1.0, 0.001, 1)
        };
        let r = key_rate(&p).unwrap();
        assert_eq!(r.status, RateStatus::Valid);
        assert!(r.g_raw < 0.0);
        assert_eq!(r.g, 0.0);
    }

    #[test]
    fn init_pulses_only_change_the_denominator() {
        let base = ProtocolParams {
            nu_th: 3,
            ..fig1(1e-2, 0.01, 100)
        };
        let slow = ProtocolParams {
            init_pulses: 128 * 100,
            ..base
        };
        let a = key_rate(&base).unwrap();
        let b = key_rate(&slow).unwrap();
        assert_eq!(a.e_src_slow, b.e_src_slow);
        assert_eq!(a.q, b.q);
        assert!(close(b.g_raw * 2.0, a.g_raw, 1e-14));
    }

    #[test]
    fn phase_error_above_half_costs_a_full_bit() {
        let stats = ChannelStats {
            q: 0.01,
            e_bit: 0.03,
            e_src_slow: 0.0,
            e_mb: 0.0,
        };
        // nu_th = L - 1 gives e_ph = 1 exactly.
        let out = pnr_rate(&stats, 127, 128, 128.0);
        assert_eq!(out.e_ph, Some(1.0));
        assert!(out.g_raw < 0.0);
        let at_half = pnr_rate(&stats, 127, 255, 255.0);
        assert!(close(at_half.e_ph.unwrap(), 0.5, 1e-15));
        assert!(close(at_half.g_raw, -0.01 / 255.0 * entropy(0.03), 1e-12));
    }

    #[test]
    fn pulse_interval_is_metadata() {
        let a = key_rate(&ProtocolParams {
            nu_th: 3,
            ..Default::default()
        })
        .unwrap();
        let b = key_rate(&ProtocolParams {
            nu_th: 3,
            pulse_interval: 5e-7,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(a, b);
    }
}
