//! CSV rows and the per-run seed hash.

use std::io::Write;

use icl_core::numerics::stream_id;
use serde::Serialize;

/// One sweep point. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub experiment: String,
    pub model: String,
    pub d: usize,
    pub n: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub rank: usize,
    pub seed: u64,
    pub risk: f64,
    pub risk_stderr: f64,
    pub theory_risk: Option<f64>,
    pub normalized_risk: f64,
    pub theory_c: Option<f64>,
}

pub const HEADER: &str =
    "experiment,model,d,n,alpha,sigma,rank,seed,risk,risk_stderr,theory_risk,normalized_risk,theory_c";

/// Writes the header and rows with LF line endings.
pub fn write_csv(records: &[RunRecord], out: impl Write) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    if records.is_empty() {
        w.write_record(HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// 64-bit FNV-1a.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Seed of one sweep point: a SplitMix64 fold of the record coordinates.
pub fn run_seed(master: u64, experiment: &str, model: &str, d: usize, n: usize, alpha: f64, rank: usize) -> u64 {
    stream_id(&[master, fnv1a(experiment), fnv1a(model), d as u64, n as u64, alpha.to_bits(), rank as u64])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(theory: Option<f64>) -> RunRecord {
        RunRecord {
            experiment: "fig-iid".into(),
            model: "attn".into(),
            d: 8,
            n: 16,
            alpha: 0.0,
            sigma: 0.0,
            rank: 0,
            seed: 3,
            risk: 2.5,
            risk_stderr: 0.01,
            theory_risk: theory,
            normalized_risk: 0.3125,
            theory_c: None,
        }
    }

    #[test]
    fn header_and_lf() {
        let mut buf = Vec::new();
        write_csv(&[row(Some(2.88)), row(None)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.split('\n').collect();
        assert_eq!(lines[0], HEADER);
        assert_eq!(lines[1], "fig-iid,attn,8,16,0.0,0.0,0,3,2.5,0.01,2.88,0.3125,");
        assert_eq!(lines[2], "fig-iid,attn,8,16,0.0,0.0,0,3,2.5,0.01,,0.3125,");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn empty_table_keeps_header() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{HEADER}\n"));
    }

    #[test]
    fn fnv_reference() {
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
    }
}
