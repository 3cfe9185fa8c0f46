//! CSV rows and atomic file output.

use std::io::Write;
use std::path::Path;

use slowbasis::attacksim::AttackReport;
use slowbasis::montecarlo::ComparisonRow;
use slowbasis::{KeyRateResult, ProtocolParams};
use tempfile::NamedTempFile;

pub const RATE_HEADER: &str =
    "eta,M,L,detector,c_d,mu_opt,nu_th_opt,Q,e_bit,e_ph,e_src_slow,e_mB,G_raw,G";
pub const ATTACK_HEADER: &str = "p_z,M,n_sequences,n_measured,n_clean,trials,analytic_success,\
empirical_success,stderr,sifted_naive_mean,sifted_modified_mean";
pub const MC_HEADER: &str = "quantity,analytic,empirical,stderr,z";

/// Undefined quantities are left empty.
fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// One rate row; `p` holds the evaluated `μ` and `ν_th`.
pub fn rate_row(p: &ProtocolParams, r: &KeyRateResult) -> String {
    format!(
        "{:e},{},{},{},{},{:e},{},{:e},{},{},{:e},{:e},{:e},{:e}",
        p.eta,
        p.blocks_per_seq,
        p.block_len,
        p.detector,
        p.init_pulses,
        p.mu,
        p.nu_th,
        r.q,
        opt(r.e_bit),
        opt(r.e_ph),
        r.e_src_slow,
        r.e_mb,
        r.g_raw,
        r.g,
    )
}

pub fn attack_row(r: &AttackReport) -> String {
    let s = &r.scenario;
    let t = &r.tally;
    let success = t.success();
    format!(
        "{:e},{},{},{},{},{},{:e},{:e},{:e},{:e},{:e}",
        s.p_z,
        s.seq_len,
        s.n_sequences,
        s.n_measured,
        s.n_clean,
        t.trials,
        r.analytic_success,
        success.value,
        success.stderr,
        t.sifted_naive_mean(),
        t.sifted_modified_mean(),
    )
}

pub fn mc_row(r: &ComparisonRow) -> String {
    format!(
        "{},{:e},{:e},{:e},{:e}",
        r.quantity, r.analytic, r.empirical, r.stderr, r.z
    )
}

pub fn table(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Writes `contents` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use slowbasis::key_rate;

    #[test]
    fn rate_row_matches_header() {
        let p = ProtocolParams::default();
        let row = rate_row(&p, &key_rate(&p).unwrap());
        assert_eq!(
            row.split(',').count(),
            RATE_HEADER.split(',').count(),
            "{row}"
        );
        assert!(row.starts_with("1e-3,1,128,pnr,0,1e-2,0,"));
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1e-300, 3.697296376497268e-3, 0.0] {
            let s = format!("{x:e}");
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(opt(None), "");
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, "a\n").unwrap();
        write_atomic(&path, "b,c\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "b,c\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_directory_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope").join("out.csv");
        assert!(write_atomic(&path, "x").is_err());
        assert!(!path.exists());
    }
}
