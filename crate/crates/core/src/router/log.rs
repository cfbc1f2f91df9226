use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionLogRow {
    pub request_id: u64,
    pub arrival_ms: f64,
    pub policy: String,
    pub chosen_instance: usize,
    pub feasible: bool,
    #[serde(rename = "estimated_T_ms")]
    pub estimated_t_ms: f64,
    /// Empty unless overhead measurement is on.
    pub decision_latency_us: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationLogRow {
    pub request_id: u64,
    pub time_ms: f64,
    pub src: usize,
    pub dst: usize,
    pub mode: String,
    pub tokens: u64,
    pub cost_ms: f64,
}

pub fn write_csv<W: Write, R: Serialize>(w: W, rows: &[R], header: &[&str]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub const DECISION_COLUMNS: [&str; 7] = [
    "request_id",
    "arrival_ms",
    "policy",
    "chosen_instance",
    "feasible",
    "estimated_T_ms",
    "decision_latency_us",
];

pub const MIGRATION_COLUMNS: [&str; 7] = ["request_id", "time_ms", "src", "dst", "mode", "tokens", "cost_ms"];

pub fn write_decisions<W: Write>(w: W, rows: &[DecisionLogRow]) -> Result<()> {
    write_csv(w, rows, &DECISION_COLUMNS)
}

pub fn write_migrations<W: Write>(w: W, rows: &[MigrationLogRow]) -> Result<()> {
    write_csv(w, rows, &MIGRATION_COLUMNS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_even_when_empty() {
        let mut buf = Vec::new();
        write_decisions(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "request_id,arrival_ms,policy,chosen_instance,feasible,estimated_T_ms,decision_latency_us\n"
        );
    }

    #[test]
    fn rows_round_trip() {
        let row = MigrationLogRow { request_id: 3, time_ms: 1.5, src: 0, dst: 2, mode: "token_ids".into(), tokens: 700, cost_ms: 8.4 };
        let mut buf = Vec::new();
        write_migrations(&mut buf, std::slice::from_ref(&row)).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let back: MigrationLogRow = rdr.deserialize().next().unwrap().unwrap();
        assert_eq!(back, row);
    }
}
