//! Flag and config-file settings shared by every subcommand.
//!
//! A config file is a JSON object whose keys are the long flag names without
//! the leading dashes (`"L"`, `"M-list"`, `"e-sys"`, ...). Flags given on the
//! command line take precedence over the file.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use slowbasis::montecarlo::McMode;
use slowbasis::Detector;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorArg {
    Pnr,
    Threshold,
}

impl From<DetectorArg> for Detector {
    fn from(d: DetectorArg) -> Self {
        match d {
            DetectorArg::Pnr => Detector::Pnr,
            DetectorArg::Threshold => Detector::Threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Standard,
    BeamDump,
}

impl From<ModeArg> for McMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Standard => McMode::Standard,
            ModeArg::BeamDump => McMode::BeamDump,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Pulses per block [default: 128]
    #[arg(long = "L")]
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub block_len: Option<u32>,

    /// Blocks per sequence
    #[arg(long = "M")]
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,

    /// Channel transmission
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,

    /// Mean photon number per pulse
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,

    /// Photon-number threshold per block
    #[arg(long = "nu-th")]
    #[serde(rename = "nu-th", skip_serializing_if = "Option::is_none")]
    pub nu_th: Option<u32>,

    /// Detector model [default: pnr]
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorArg>,

    /// Intrinsic error rate of the optical system [default: 0.03]
    #[arg(long = "e-sys")]
    #[serde(rename = "e-sys", skip_serializing_if = "Option::is_none")]
    pub e_sys: Option<f64>,

    /// Dark-count probability per detector per pulse slot [default: 1e-9]
    #[arg(long = "d-c")]
    #[serde(rename = "d-c", skip_serializing_if = "Option::is_none")]
    pub d_c: Option<f64>,

    /// Pulses lost to detector initialization per sequence [default: 0]
    #[arg(long = "c-d")]
    #[serde(rename = "c-d", skip_serializing_if = "Option::is_none")]
    pub c_d: Option<u64>,

    /// Pulse interval in seconds; carried through, not used by the rate [default: 1e-9]
    #[arg(long = "T")]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub pulse_interval: Option<f64>,

    /// Comma-separated sequence lengths, one curve each
    #[arg(long = "M-list", value_delimiter = ',')]
    #[serde(rename = "M-list", skip_serializing_if = "Option::is_none")]
    pub m_list: Option<Vec<u64>>,

    /// Smallest transmission of a curve [default: 1e-7]
    #[arg(long = "eta-min")]
    #[serde(rename = "eta-min", skip_serializing_if = "Option::is_none")]
    pub eta_min: Option<f64>,

    /// Largest transmission of a curve [default: 1]
    #[arg(long = "eta-max")]
    #[serde(rename = "eta-max", skip_serializing_if = "Option::is_none")]
    pub eta_max: Option<f64>,

    /// Transmission grid density [default: 10]
    #[arg(long = "points-per-decade")]
    #[serde(rename = "points-per-decade", skip_serializing_if = "Option::is_none")]
    pub points_per_decade: Option<u32>,

    /// Output CSV path; stdout when absent
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,

    /// Random seed [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Number of simulated trials
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,

    /// Probability of the Z basis [default: 0.99]
    #[arg(long = "p-z")]
    #[serde(rename = "p-z", skip_serializing_if = "Option::is_none")]
    pub p_z: Option<f64>,

    /// Sequences Eve measures and resends [default: 99]
    #[arg(long = "n-measured")]
    #[serde(rename = "n-measured", skip_serializing_if = "Option::is_none")]
    pub n_measured: Option<u64>,

    /// Sequences Eve forwards untouched [default: 1]
    #[arg(long = "n-clean")]
    #[serde(rename = "n-clean", skip_serializing_if = "Option::is_none")]
    pub n_clean: Option<u64>,

    /// Sequences Alice sends [default: 10000]
    #[arg(long = "n-sequences")]
    #[serde(rename = "n-sequences", skip_serializing_if = "Option::is_none")]
    pub n_sequences: Option<u64>,

    /// Transmission the attack has to imitate [default: 0.01]
    #[arg(long = "eta-nominal")]
    #[serde(rename = "eta-nominal", skip_serializing_if = "Option::is_none")]
    pub eta_nominal: Option<f64>,

    /// Simulation mode [default: standard]
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeArg>,
}

fn to_object(s: &Settings) -> Map<String, Value> {
    match serde_json::to_value(s).expect("settings serialize") {
        Value::Object(m) => m,
        _ => unreachable!("settings serialize to an object"),
    }
}

impl Settings {
    /// Reads a config file.
    pub fn load(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config: cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config: {}: {e}", path.display())))
    }

    /// `self` with every field set in `over` replaced.
    pub fn overlay(&self, over: &Settings) -> Settings {
        let mut merged = to_object(self);
        merged.extend(to_object(over));
        serde_json::from_value(Value::Object(merged)).expect("merged settings deserialize")
    }

    /// Names of the fields that are set.
    pub fn given(&self) -> Vec<String> {
        to_object(self).keys().cloned().collect()
    }

    /// Rejects any set field not in `allowed`.
    pub fn restrict(&self, command: &str, allowed: &[&str]) -> Result<(), CliError> {
        match self
            .given()
            .into_iter()
            .find(|k| !allowed.contains(&k.as_str()))
        {
            Some(k) => Err(CliError::Usage(format!("{k}: not used by `{command}`"))),
            None => Ok(()),
        }
    }
}

/// `Some(v)` or a usage error naming the missing flag.
pub fn require<T>(v: Option<T>, field: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("{field}: required (--{field})")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: Settings =
            serde_json::from_str(r#"{"L": 64, "M-list": [1, 10], "e-sys": 0.05}"#).unwrap();
        let flags = Settings {
            e_sys: Some(0.01),
            ..Default::default()
        };
        let merged = file.overlay(&flags);
        assert_eq!(merged.block_len, Some(64));
        assert_eq!(merged.m_list, Some(vec![1, 10]));
        assert_eq!(merged.e_sys, Some(0.01));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<Settings>(r#"{"block_len": 64}"#).unwrap_err();
        assert!(err.to_string().contains("block_len"));
    }

    #[test]
    fn enums_use_flag_spelling() {
        let s: Settings =
            serde_json::from_str(r#"{"detector": "threshold", "mode": "beam-dump"}"#).unwrap();
        assert_eq!(s.detector, Some(DetectorArg::Threshold));
        assert_eq!(s.mode, Some(ModeArg::BeamDump));
    }

    #[test]
    fn restrict_names_the_stray_field() {
        let s = Settings {
            trials: Some(5),
            ..Default::default()
        };
        match s.restrict("keyrate", &["L"]) {
            Err(CliError::Usage(msg)) => assert!(msg.starts_with("trials")),
            other => panic!("{other:?}"),
        }
        assert!(s.restrict("attack", &["trials"]).is_ok());
    }
}
