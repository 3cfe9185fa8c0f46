//! Event-level Monte Carlo of the slow-basis detection chain.
//!
//! Every sequence is simulated block by block. A block's emitted photon count
//! is the superposition of `L` Poisson(`μ`) pulses; each photon survives the
//! channel independently with probability `η` (binomial thinning). Arriving
//! photons then meet one of two measurement setups:
//!
//! * [`McMode::Standard`]: the variable-delay interferometer. A photon lands in
//!   one of the `L` valid time slots with probability ½ and reports the right
//!   bit with probability `1 - e_sys`; otherwise it clicks in one of the `L`
//!   edge slots, which carry no bit. Dark counts fire in all `2L` slots.
//! * [`McMode::BeamDump`]: the long arm is blocked. A photon is dumped with
//!   probability ½ and otherwise reaches detector A or B with equal odds.
//!   A detector that has clicked stays dead until the sequence ends, so a
//!   photon routed to it is lost.
//!
//! Randomness for trial `i` comes only from the ChaCha stream `(seed, i)`, so
//! serial and parallel runs agree bit for bit.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;

use crate::keyrate::{
    bit_error_rate, detection_rate, double_count_bound_unconditional, Detector, ParamError,
    ProtocolParams,
};
use crate::rng::{substream, CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum McMode {
    #[default]
    Standard,
    BeamDump,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub params: ProtocolParams,
    pub trials: u64,
    pub seed: u64,
    pub mode: McMode,
}

impl McConfig {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.trials == 0 {
            return Err(ParamError::invalid(
                "trials",
                "at least one trial is required",
            ));
        }
        self.params.validate()
    }
}

/// Counters accumulated over simulated sequences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct McStats {
    pub sequences: u64,
    /// Sequences that yielded a sifted block.
    pub detected: u64,
    /// Sifted blocks whose bit disagrees with Alice's.
    pub bit_errors: u64,
    /// Sequences whose first clicked block fired both detectors (beam dump only).
    pub double_counts: u64,
    /// Blocks with at least two photons at Bob's input, counted up to and
    /// including the first clicked block (the blocks that can still be sifted).
    pub multi_photon_blocks: u64,
    /// Sequences containing at least one such block.
    pub multi_photon_sequences: u64,
    /// Double counts that happened in a block carrying at least two photons.
    pub double_counts_in_multi: u64,
    /// Number of clicked blocks per sequence -> number of sequences.
    pub clicks_histogram: BTreeMap<u64, u64>,
}

impl McStats {
    pub fn merge(mut self, other: McStats) -> McStats {
        self.sequences += other.sequences;
        self.detected += other.detected;
        self.bit_errors += other.bit_errors;
        self.double_counts += other.double_counts;
        self.multi_photon_blocks += other.multi_photon_blocks;
        self.multi_photon_sequences += other.multi_photon_sequences;
        self.double_counts_in_multi += other.double_counts_in_multi;
        for (k, v) in other.clicks_histogram {
            *self.clicks_histogram.entry(k).or_default() += v;
        }
        self
    }

    pub fn detection_rate(&self) -> Estimate {
        Estimate::binomial(self.detected, self.sequences)
    }

    pub fn bit_error_rate(&self) -> Estimate {
        Estimate::binomial(self.bit_errors, self.detected)
    }

    pub fn double_count_rate(&self) -> Estimate {
        Estimate::binomial(self.double_counts, self.sequences)
    }

    /// Fraction of sequences that carried a sift-eligible multi-photon block.
    pub fn multi_photon_rate(&self) -> Estimate {
        Estimate::binomial(self.multi_photon_sequences, self.sequences)
    }

    /// `P(double count | block carried >= 2 photons while both detectors were live)`.
    pub fn double_given_multi(&self) -> Estimate {
        Estimate::binomial(self.double_counts_in_multi, self.multi_photon_blocks)
    }

    /// Whether `8 * double-count rate >= multi-photon rate - nsigma * σ`, with
    /// σ the standard error of the difference.
    pub fn double_count_bound_holds(&self, nsigma: f64) -> bool {
        let d = self.double_count_rate();
        let m = self.multi_photon_rate();
        let sigma = (64.0 * d.stderr * d.stderr + m.stderr * m.stderr).sqrt();
        8.0 * d.value >= m.value - nsigma * sigma
    }
}

/// Empirical proportion with its binomial standard error `sqrt(p(1-p)/n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
}

impl Estimate {
    pub fn binomial(hits: u64, n: u64) -> Self {
        if n == 0 {
            return Estimate {
                value: f64::NAN,
                stderr: f64::NAN,
                n,
            };
        }
        let p = hits as f64 / n as f64;
        Estimate {
            value: p,
            stderr: (p * (1.0 - p) / n as f64).sqrt(),
            n,
        }
    }
}

/// Survivors of `n` photons through a channel of transmission `eta`.
pub fn thin<R: Rng + ?Sized>(rng: &mut R, n: u64, eta: f64) -> u64 {
    if n == 0 || eta <= 0.0 {
        return 0;
    }
    if eta >= 1.0 {
        return n;
    }
    Binomial::new(n, eta).expect("eta in (0, 1)").sample(rng)
}

/// Photons from one pulse of mean `mu` that reach Bob.
pub fn sample_pulse_arrivals<R: Rng + ?Sized>(rng: &mut R, mu: f64, eta: f64) -> u64 {
    if mu <= 0.0 {
        return 0;
    }
    let emitted = Poisson::new(mu).expect("mu > 0").sample(rng) as u64;
    thin(rng, emitted, eta)
}

/// What one block looked like, for replaying a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRecord {
    pub arrivals: u64,
    /// Any detector fired during the block.
    pub clicked: bool,
    /// The block passed the sifting rule (only meaningful for the first clicked block).
    pub accepted: bool,
    pub double_count: bool,
}

/// Outcome of one simulated sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SequenceLog {
    pub blocks: Vec<BlockRecord>,
    /// Index of the sifted block and whether its bit was wrong.
    pub sifted: Option<(usize, bool)>,
}

/// Pre-built samplers for one parameter point.
struct Channel {
    params: ProtocolParams,
    mode: McMode,
    emitted: Option<Poisson<f64>>,
    dark: Option<Binomial>,
}

impl Channel {
    fn new(params: ProtocolParams, mode: McMode) -> Self {
        let mean = params.block_len as f64 * params.mu;
        let emitted = (mean > 0.0).then(|| Poisson::new(mean).expect("positive mean"));
        let dark = (params.dark_count > 0.0).then(|| {
            Binomial::new(params.block_len as u64, params.dark_count).expect("d_c in [0, 1]")
        });
        Channel {
            params,
            mode,
            emitted,
            dark,
        }
    }

    fn dark_counts<R: Rng>(&self, rng: &mut R) -> u64 {
        self.dark.as_ref().map_or(0, |d| d.sample(rng))
    }

    fn arrivals<R: Rng>(&self, rng: &mut R) -> u64 {
        let emitted = self.emitted.as_ref().map_or(0, |p| p.sample(rng) as u64);
        thin(rng, emitted, self.params.eta)
    }

    /// Interferometer measurement of one block. Returns (clicked, sifted bit error).
    fn standard_block<R: Rng>(&self, rng: &mut R, arrivals: u64) -> (bool, Option<bool>) {
        let alice_bit = rng.random::<bool>();
        let mut valid_events = 0u64;
        let mut edge_events = 0u64;
        let mut detectors = [0u64; 2];
        for _ in 0..arrivals {
            if rng.random_bool(0.5) {
                let wrong = rng.random_bool(self.params.e_sys);
                detectors[(alice_bit ^ wrong) as usize] += 1;
                valid_events += 1;
            } else {
                edge_events += 1;
            }
        }
        let dark_valid = self.dark_counts(rng);
        edge_events += self.dark_counts(rng);
        for _ in 0..dark_valid {
            detectors[rng.random::<bool>() as usize] += 1;
        }
        valid_events += dark_valid;

        let total = valid_events + edge_events;
        if total == 0 {
            return (false, None);
        }
        let accepted = match self.params.detector {
            Detector::Pnr => total == 1 && valid_events == 1,
            Detector::Threshold => edge_events == 0 && (detectors[0] == 0 || detectors[1] == 0),
        };
        if !accepted {
            return (true, None);
        }
        let bob_bit = detectors[1] > 0;
        (true, Some(bob_bit != alice_bit))
    }

    fn run_sequence<R: Rng>(&self, rng: &mut R, mut log: Option<&mut SequenceLog>) -> McStats {
        let mut stats = McStats {
            sequences: 1,
            ..Default::default()
        };
        let mut clicked_blocks = 0u64;
        let mut first_clicked: Option<usize> = None;
        let mut dead = [false; 2];
        let mut saw_multi = false;

        for block in 0..self.params.blocks_per_seq as usize {
            let arrivals = self.arrivals(rng);
            let eligible = first_clicked.is_none();
            let mut record = BlockRecord {
                arrivals,
                clicked: false,
                accepted: false,
                double_count: false,
            };
            match self.mode {
                McMode::Standard => {
                    let (clicked, sifted) = self.standard_block(rng, arrivals);
                    record.clicked = clicked;
                    if clicked && eligible {
                        if let Some(error) = sifted {
                            record.accepted = true;
                            stats.detected = 1;
                            stats.bit_errors = error as u64;
                            if let Some(l) = log.as_deref_mut() {
                                l.sifted = Some((block, error));
                            }
                        }
                    }
                }
                McMode::BeamDump => {
                    let mut hits = [0u64; 2];
                    for _ in 0..arrivals {
                        if rng.random_bool(0.5) {
                            continue;
                        }
                        let d = rng.random::<bool>() as usize;
                        if !dead[d] {
                            hits[d] += 1;
                        }
                    }
                    for (d, h) in hits.iter_mut().enumerate() {
                        let dark = self.dark_counts(rng);
                        if !dead[d] {
                            *h += dark;
                        }
                    }
                    let fired = [hits[0] > 0, hits[1] > 0];
                    record.clicked = fired[0] || fired[1];
                    if eligible && fired[0] && fired[1] {
                        record.double_count = true;
                        stats.double_counts = 1;
                        if arrivals >= 2 {
                            stats.double_counts_in_multi = 1;
                        }
                    }
                    dead[0] |= fired[0];
                    dead[1] |= fired[1];
                }
            }
            if eligible && arrivals >= 2 {
                stats.multi_photon_blocks += 1;
                saw_multi = true;
            }
            if record.clicked {
                clicked_blocks += 1;
                first_clicked.get_or_insert(block);
            }
            if let Some(l) = log.as_deref_mut() {
                l.blocks.push(record);
            }
        }
        stats.multi_photon_sequences = saw_multi as u64;
        stats.clicks_histogram.insert(clicked_blocks, 1);
        stats
    }
}

/// Runs `cfg.trials` independent sequences and aggregates their counters.
pub fn simulate(cfg: &McConfig) -> Result<McStats, ParamError> {
    cfg.validate()?;
    let channel = Channel::new(cfg.params, cfg.mode);
    let chunks = cfg.trials.div_ceil(CHUNK);
    let stats = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(cfg.trials);
            (start..end).fold(McStats::default(), |acc, trial| {
                let mut rng = substream(cfg.seed, trial);
                acc.merge(channel.run_sequence(&mut rng, None))
            })
        })
        .reduce(McStats::default, McStats::merge);
    Ok(stats)
}

/// Replays trial `trial` of `cfg` and returns its per-block record.
pub fn replay_sequence(cfg: &McConfig, trial: u64) -> Result<SequenceLog, ParamError> {
    cfg.validate()?;
    let channel = Channel::new(cfg.params, cfg.mode);
    let mut rng = substream(cfg.seed, trial);
    let mut log = SequenceLog::default();
    channel.run_sequence(&mut rng, Some(&mut log));
    Ok(log)
}

/// One line of a Monte Carlo vs. closed-form comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub quantity: &'static str,
    pub analytic: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub z: f64,
}

impl ComparisonRow {
    fn new(quantity: &'static str, analytic: f64, est: Estimate, scale: f64) -> Self {
        let empirical = scale * est.value;
        let stderr = scale * est.stderr;
        ComparisonRow {
            quantity,
            analytic,
            empirical,
            stderr,
            z: (empirical - analytic) / stderr,
        }
    }

    /// `|z| > 3`.
    pub fn flagged(&self) -> bool {
        self.z.is_nan() || self.z.abs() > 3.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub stats: McStats,
    pub rows: Vec<ComparisonRow>,
}

/// Double-count probability for a two-photon block: ½ · ¼.
pub const DOUBLE_COUNT_FLOOR: f64 = 0.125;

/// Simulates `cfg` and sets the empirical rates beside their closed forms.
///
/// Standard mode reports `Q` and `e_bit`; beam-dump mode reports `8x` the
/// double-count rate against `e_mB` and the conditional double-count
/// probability of multi-photon blocks against its floor of 1/8.
pub fn compare_to_analytic(cfg: &McConfig) -> Result<ValidationReport, ParamError> {
    let stats = simulate(cfg)?;
    let p = &cfg.params;
    let rows = match cfg.mode {
        McMode::Standard => {
            let mut rows = vec![ComparisonRow::new(
                "Q",
                detection_rate(p),
                stats.detection_rate(),
                1.0,
            )];
            if let Ok(e_bit) = bit_error_rate(p) {
                rows.push(ComparisonRow::new(
                    "e_bit",
                    e_bit,
                    stats.bit_error_rate(),
                    1.0,
                ));
            }
            rows
        }
        McMode::BeamDump => vec![
            ComparisonRow::new(
                "e_mB",
                double_count_bound_unconditional(p),
                stats.double_count_rate(),
                8.0,
            ),
            ComparisonRow::new(
                "double_given_multi",
                DOUBLE_COUNT_FLOOR,
                stats.double_given_multi(),
                1.0,
            ),
        ],
    };
    Ok(ValidationReport { stats, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(params: ProtocolParams, mode: McMode, trials: u64) -> McConfig {
        McConfig {
            params,
            trials,
            seed: 7,
            mode,
        }
    }

    fn small() -> ProtocolParams {
        ProtocolParams {
            block_len: 8,
            blocks_per_seq: 4,
            eta: 0.05,
            mu: 0.02,
            dark_count: 0.0,
            e_sys: 0.03,
            ..Default::default()
        }
    }

    #[test]
    fn dark_and_empty_channel_never_clicks() {
        let p = ProtocolParams {
            mu: 0.0,
            dark_count: 0.0,
            ..small()
        };
        for mode in [McMode::Standard, McMode::BeamDump] {
            let s = simulate(&cfg(p, mode, 2000)).unwrap();
            assert_eq!(s.detected, 0);
            assert_eq!(s.double_counts, 0);
            assert_eq!(s.clicks_histogram, BTreeMap::from([(0, 2000)]));
        }
    }

    #[test]
    fn no_error_mechanism_means_no_errors() {
        let p = ProtocolParams {
            e_sys: 0.0,
            mu: 0.2,
            ..small()
        };
        for detector in [Detector::Pnr, Detector::Threshold] {
            let s = simulate(&cfg(
                ProtocolParams { detector, ..p },
                McMode::Standard,
                20_000,
            ))
            .unwrap();
            assert!(s.detected > 0);
            assert_eq!(s.bit_errors, 0);
        }
    }

    #[test]
    fn counters_are_consistent() {
        let p = ProtocolParams {
            mu: 0.3,
            dark_count: 1e-3,
            ..small()
        };
        for mode in [McMode::Standard, McMode::BeamDump] {
            let s = simulate(&cfg(p, mode, 5000)).unwrap();
            assert_eq!(s.sequences, 5000);
            assert!(s.detected <= s.sequences);
            assert!(s.bit_errors <= s.detected);
            assert!(s.double_counts <= s.sequences);
            assert!(s.double_counts_in_multi <= s.double_counts);
            assert!(s.multi_photon_sequences <= s.multi_photon_blocks);
            assert_eq!(s.clicks_histogram.values().sum::<u64>(), 5000);
        }
    }

    #[test]
    fn same_seed_same_stats() {
        let c = cfg(
            ProtocolParams { mu: 0.2, ..small() },
            McMode::BeamDump,
            3000,
        );
        assert_eq!(simulate(&c).unwrap(), simulate(&c).unwrap());
        let other = McConfig { seed: 8, ..c };
        assert_ne!(simulate(&c).unwrap(), simulate(&other).unwrap());
    }

    #[test]
    fn replay_matches_aggregate() {
        let c = cfg(
            ProtocolParams {
                mu: 0.2,
                dark_count: 1e-3,
                ..small()
            },
            McMode::Standard,
            500,
        );
        let agg = simulate(&c).unwrap();
        let mut detected = 0;
        let mut errors = 0;
        for t in 0..c.trials {
            let log = replay_sequence(&c, t).unwrap();
            if let Some((block, err)) = log.sifted {
                detected += 1;
                errors += err as u64;
                let first = log.blocks.iter().position(|b| b.clicked).unwrap();
                assert_eq!(block, first);
                assert_eq!(log.blocks.iter().filter(|b| b.accepted).count(), 1);
            }
        }
        assert_eq!(detected, agg.detected);
        assert_eq!(errors, agg.bit_errors);
    }

    #[test]
    fn zero_trials_rejected() {
        let c = cfg(small(), McMode::Standard, 0);
        assert_eq!(simulate(&c).unwrap_err().field(), "trials");
    }

    #[test]
    fn estimate_stderr() {
        let e = Estimate::binomial(25, 100);
        assert_eq!(e.value, 0.25);
        assert!((e.stderr - (0.25f64 * 0.75 / 100.0).sqrt()).abs() < 1e-16);
        assert!(Estimate::binomial(0, 0).value.is_nan());
    }
}
