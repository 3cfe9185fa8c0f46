//! Intercept-resend attack on BB84 with a per-sequence measurement basis.
//!
//! Eve keeps `n_measured + n_clean` whole sequences and blocks the rest. She
//! measures every pulse of the first group in Z and resends the outcome, and
//! forwards the second group untouched. Because she controls the loss, every
//! forwarded pulse is detected, so Bob sees the nominal number of detections.
//! Her attack goes unnoticed when Bob happened to pick Z for every measured
//! sequence and X for every clean one.
//!
//! Naive sifting keeps every detection whose basis matches Alice's. The
//! modified rule first discards any sequence with more than one detection,
//! which removes every bunched sequence the attack produces.
//!
//! [`run_attack`] samples each sequence's sifted and error counts from their
//! exact binomial marginals. [`replay_attack_trial`] simulates the same
//! process pulse by pulse with explicit bits and is used to check the
//! per-pulse invariants.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::keyrate::ParamError;
use crate::montecarlo::Estimate;
use crate::rng::{substream, CHUNK};

/// Typical composable-security failure probability, used only as a yardstick.
pub const SECURITY_PARAMETER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackScenario {
    /// Probability of choosing Z, for Bob per sequence and Alice per pulse.
    pub p_z: f64,
    /// Pulses per sequence.
    pub seq_len: u64,
    pub n_sequences: u64,
    /// Sequences Eve measures in Z and resends.
    pub n_measured: u64,
    /// Sequences Eve forwards untouched.
    pub n_clean: u64,
    /// Transmission the forwarded pulse count must reproduce.
    pub eta_nominal: f64,
}

impl Default for AttackScenario {
    /// Desk-scale version of the textbook attack: 10⁴ sequences of 100 pulses
    /// at 1% transmission, 99 measured and 1 clean.
    fn default() -> Self {
        AttackScenario {
            p_z: 0.99,
            seq_len: 100,
            n_sequences: 10_000,
            n_measured: 99,
            n_clean: 1,
            eta_nominal: 1e-2,
        }
    }
}

impl AttackScenario {
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(0.0..=1.0).contains(&self.p_z) {
            return Err(ParamError::invalid(
                "p_z",
                format!("{} is outside [0, 1]", self.p_z),
            ));
        }
        if self.seq_len == 0 {
            return Err(ParamError::invalid(
                "M",
                "sequence must hold at least one pulse",
            ));
        }
        if self.n_sequences == 0 {
            return Err(ParamError::invalid(
                "n_sequences",
                "at least one sequence is required",
            ));
        }
        if !(0.0..=1.0).contains(&self.eta_nominal) {
            return Err(ParamError::invalid(
                "eta_nominal",
                format!("{} is outside [0, 1]", self.eta_nominal),
            ));
        }
        let forwarded = self.forwarded_sequences();
        if forwarded > self.n_sequences {
            return Err(ParamError::invalid(
                "n_measured",
                format!(
                    "n_measured + n_clean = {forwarded} exceeds n_sequences = {}",
                    self.n_sequences
                ),
            ));
        }
        let expected = (self.n_sequences as f64 * self.seq_len as f64 * self.eta_nominal).round();
        let sent = (forwarded * self.seq_len) as f64;
        if sent != expected {
            return Err(ParamError::invalid(
                "n_measured",
                format!(
                    "Eve forwards {sent} pulses but the nominal channel delivers {expected}; \
                     the attack would change the detection rate"
                ),
            ));
        }
        Ok(())
    }

    pub fn forwarded_sequences(&self) -> u64 {
        self.n_measured + self.n_clean
    }
}

/// Probability that Bob's bases line up with Eve's pattern:
/// `p_Z^n_measured * (1 - p_Z)^n_clean`.
pub fn analytic_success(s: &AttackScenario) -> f64 {
    s.p_z.powf(s.n_measured as f64) * (1.0 - s.p_z).powf(s.n_clean as f64)
}

/// Per-trial tallies, summed over trials.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttackTally {
    pub trials: u64,
    /// Trials in which Bob's bases matched Eve's pattern.
    pub successes: u64,
    pub sifted_naive: u64,
    pub sifted_modified: u64,
    /// Sifted-bit errors under naive sifting, in successful trials only.
    pub errors_on_success: u64,
    /// Sifted bits from measured sequences whose value Eve holds.
    pub eve_known_bits: u64,
    /// Total detections at Bob.
    pub detections: u64,
    /// Trials whose modified-rule sifted key was empty.
    pub empty_modified_trials: u64,
    /// Detections per sequence -> number of sequences.
    pub clicks_histogram: BTreeMap<u64, u64>,
}

impl AttackTally {
    fn merge(mut self, other: AttackTally) -> AttackTally {
        self.trials += other.trials;
        self.successes += other.successes;
        self.sifted_naive += other.sifted_naive;
        self.sifted_modified += other.sifted_modified;
        self.errors_on_success += other.errors_on_success;
        self.eve_known_bits += other.eve_known_bits;
        self.detections += other.detections;
        self.empty_modified_trials += other.empty_modified_trials;
        for (k, v) in other.clicks_histogram {
            *self.clicks_histogram.entry(k).or_default() += v;
        }
        self
    }

    pub fn success(&self) -> Estimate {
        Estimate::binomial(self.successes, self.trials)
    }

    pub fn sifted_naive_mean(&self) -> f64 {
        self.sifted_naive as f64 / self.trials as f64
    }

    pub fn sifted_modified_mean(&self) -> f64 {
        self.sifted_modified as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub scenario: AttackScenario,
    pub analytic_success: f64,
    pub tally: AttackTally,
}

impl AttackReport {
    /// `(empirical - analytic) / stderr`.
    pub fn z_score(&self) -> f64 {
        let e = self.tally.success();
        (e.value - self.analytic_success) / e.stderr
    }
}

fn sample_binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("p in (0, 1)").sample(rng)
    }
}

fn attack_trial<R: Rng>(s: &AttackScenario, rng: &mut R) -> AttackTally {
    let mut t = AttackTally {
        trials: 1,
        ..Default::default()
    };
    let mut matched = true;
    let mut errors = 0;
    for seq in 0..s.forwarded_sequences() {
        let measured = seq < s.n_measured;
        let bob_z = rng.random_bool(s.p_z);
        matched &= bob_z == measured;
        // Pulses where Alice's basis equals Bob's.
        let agree = sample_binomial(rng, s.seq_len, if bob_z { s.p_z } else { 1.0 - s.p_z });
        // Eve's Z resend randomizes X-basis bits; everything else arrives intact.
        if measured && !bob_z {
            errors += sample_binomial(rng, agree, 0.5);
        }
        if measured && bob_z {
            t.eve_known_bits += agree;
        }
        t.sifted_naive += agree;
        if s.seq_len == 1 {
            t.sifted_modified += agree;
        }
    }
    let forwarded = s.forwarded_sequences();
    t.detections = forwarded * s.seq_len;
    t.clicks_histogram.insert(s.seq_len, forwarded);
    *t.clicks_histogram.entry(0).or_default() += s.n_sequences - forwarded;
    if matched {
        t.successes = 1;
        t.errors_on_success = errors;
    }
    t.empty_modified_trials = (t.sifted_modified == 0) as u64;
    t
}

fn run_trials<F>(trials: u64, one: F) -> AttackTally
where
    F: Fn(u64) -> AttackTally + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(trials);
            (start..end).fold(AttackTally::default(), |acc, i| acc.merge(one(i)))
        })
        .reduce(AttackTally::default, AttackTally::merge)
}

/// Runs the attack `trials` times and tallies both sifting rules.
pub fn run_attack(s: &AttackScenario, trials: u64, seed: u64) -> Result<AttackReport, ParamError> {
    s.validate()?;
    if trials == 0 {
        return Err(ParamError::invalid(
            "trials",
            "at least one trial is required",
        ));
    }
    let tally = run_trials(trials, |i| attack_trial(s, &mut substream(seed, i)));
    Ok(AttackReport {
        scenario: *s,
        analytic_success: analytic_success(s),
        tally,
    })
}

/// One pulse as seen by all three parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseRecord {
    pub alice_z: bool,
    pub alice_bit: bool,
    /// Eve's Z outcome, for measured sequences.
    pub eve_bit: Option<bool>,
    pub bob_bit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceRecord {
    pub measured: bool,
    pub bob_z: bool,
    pub pulses: Vec<PulseRecord>,
}

impl SequenceRecord {
    /// Pulses kept by naive sifting.
    pub fn sifted(&self) -> impl Iterator<Item = &PulseRecord> {
        self.pulses.iter().filter(move |p| p.alice_z == self.bob_z)
    }
}

/// Pulse-level record of one attack trial; only forwarded sequences are listed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackTrialLog {
    pub sequences: Vec<SequenceRecord>,
}

impl AttackTrialLog {
    pub fn undetected_success(&self) -> bool {
        self.sequences.iter().all(|s| s.bob_z == s.measured)
    }

    pub fn sifted_naive(&self) -> usize {
        self.sequences.iter().map(|s| s.sifted().count()).sum()
    }

    pub fn sifted_modified(&self) -> usize {
        self.sequences
            .iter()
            .filter(|s| s.pulses.len() == 1)
            .map(|s| s.sifted().count())
            .sum()
    }
}

/// Simulates one attack trial bit by bit.
pub fn replay_attack_trial(
    s: &AttackScenario,
    seed: u64,
    trial: u64,
) -> Result<AttackTrialLog, ParamError> {
    s.validate()?;
    let mut rng = substream(seed, trial);
    let sequences = (0..s.forwarded_sequences())
        .map(|seq| {
            let measured = seq < s.n_measured;
            let bob_z = rng.random_bool(s.p_z);
            let pulses = (0..s.seq_len)
                .map(|_| {
                    let alice_z = rng.random_bool(s.p_z);
                    let alice_bit = rng.random::<bool>();
                    // State reaching Bob: (is Z eigenstate, bit).
                    let (eve_bit, sent_z, sent_bit) = if measured {
                        let outcome = if alice_z { alice_bit } else { rng.random() };
                        (Some(outcome), true, outcome)
                    } else {
                        (None, alice_z, alice_bit)
                    };
                    let bob_bit = if sent_z == bob_z {
                        sent_bit
                    } else {
                        rng.random()
                    };
                    PulseRecord {
                        alice_z,
                        alice_bit,
                        eve_bit,
                        bob_bit,
                    }
                })
                .collect();
            SequenceRecord {
                measured,
                bob_z,
                pulses,
            }
        })
        .collect();
    Ok(AttackTrialLog { sequences })
}

/// Sifting without an eavesdropper: single-photon pulses, each detected
/// independently with probability `eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineSettings {
    pub p_z: f64,
    pub seq_len: u64,
    pub n_sequences: u64,
    pub eta: f64,
}

impl BaselineSettings {
    /// `n · M · η · (p_Z² + p_X²)`.
    pub fn expected_sifted(&self) -> f64 {
        let p_x = 1.0 - self.p_z;
        self.n_sequences as f64 * self.seq_len as f64 * self.eta * (self.p_z * self.p_z + p_x * p_x)
    }
}

/// Sifted key length under both rules for one honest run.
pub fn honest_baseline(
    p_z: f64,
    seq_len: u64,
    n_sequences: u64,
    eta: f64,
    seed: u64,
) -> Result<AttackTally, ParamError> {
    if !(0.0..=1.0).contains(&p_z) {
        return Err(ParamError::invalid(
            "p_z",
            format!("{p_z} is outside [0, 1]"),
        ));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(ParamError::invalid(
            "eta",
            format!("{eta} is outside [0, 1]"),
        ));
    }
    if seq_len == 0 {
        return Err(ParamError::invalid(
            "M",
            "sequence must hold at least one pulse",
        ));
    }
    let mut tally = run_trials(n_sequences, |i| {
        let mut rng = substream(seed, i);
        let detections = sample_binomial(&mut rng, seq_len, eta);
        let bob_z = rng.random_bool(p_z);
        let agree = sample_binomial(&mut rng, detections, if bob_z { p_z } else { 1.0 - p_z });
        AttackTally {
            sifted_naive: agree,
            sifted_modified: if detections == 1 { agree } else { 0 },
            detections,
            clicks_histogram: BTreeMap::from([(detections, 1)]),
            ..Default::default()
        }
    });
    tally.trials = 1;
    tally.empty_modified_trials = (tally.sifted_modified == 0) as u64;
    Ok(tally)
}
