//! Per-round convergence records and their CSV export.

use std::io::{self, Write};

use serde::Serialize;

/// One completed coordination round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    /// 1-based iteration number.
    pub iter: usize,
    /// Prices used during this round [$/kW].
    pub lambda: Vec<f64>,
    /// Exchange residual per MG [kW]: power others bought from m minus m's
    /// offer; the subgradient driving the price update.
    pub residual: Vec<f64>,
    /// Sum of the local subproblem optima [$].
    pub dual_obj: f64,
    /// Objective of the recovered feasible dispatch [$].
    pub primal_obj: f64,
    /// `primal_obj − dual_obj` [$].
    pub gap: f64,
    /// Gap relative to the primal objective, in percent.
    pub gap_pct: f64,
    /// Primal recovery had to scale a seller's exchanges down to its
    /// capability.
    pub clamped: bool,
    /// Some price was negative this round (the update rule may overshoot;
    /// no projection is applied).
    pub negative_price: bool,
}

/// The full convergence history of a distributed run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationTrace {
    n_mgs: usize,
    pub rounds: Vec<RoundRecord>,
}

/// Formats with 6 significant digits, the precision of the CSV trace.
fn sig6(x: f64) -> String {
    format!("{:.5e}", x)
}

impl IterationTrace {
    pub fn new(n_mgs: usize) -> Self {
        Self {
            n_mgs,
            rounds: Vec::new(),
        }
    }

    pub fn n_mgs(&self) -> usize {
        self.n_mgs
    }

    pub fn push(&mut self, record: RoundRecord) {
        debug_assert_eq!(record.lambda.len(), self.n_mgs);
        debug_assert_eq!(record.residual.len(), self.n_mgs);
        self.rounds.push(record);
    }

    /// `iter,lambda_<id>...,residual_<id>...,dual_obj,primal_obj,gap,gap_pct`
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["iter".to_owned()];
        cols.extend((1..=self.n_mgs).map(|id| format!("lambda_{id}")));
        cols.extend((1..=self.n_mgs).map(|id| format!("residual_{id}")));
        for tail in ["dual_obj", "primal_obj", "gap", "gap_pct"] {
            cols.push(tail.to_owned());
        }
        cols.join(",")
    }

    /// Writes the trace as CSV, one row per completed round, floats with six
    /// significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        for r in &self.rounds {
            let mut fields = vec![r.iter.to_string()];
            fields.extend(r.lambda.iter().map(|v| sig6(*v)));
            fields.extend(r.residual.iter().map(|v| sig6(*v)));
            fields.push(sig6(r.dual_obj));
            fields.push(sig6(r.primal_obj));
            fields.push(sig6(r.gap));
            fields.push(sig6(r.gap_pct));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("write to vec");
        String::from_utf8(out).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_matches_contract() {
        let mut trace = IterationTrace::new(2);
        trace.push(RoundRecord {
            iter: 1,
            lambda: vec![0.082, 0.05],
            residual: vec![1.25, -0.5],
            dual_obj: 70.0,
            primal_obj: 70.5,
            gap: 0.5,
            gap_pct: 0.709,
            clamped: false,
            negative_price: false,
        });
        let csv = trace.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,lambda_1,lambda_2,residual_1,residual_2,dual_obj,primal_obj,gap,gap_pct"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("1,8.20000e-2,5.00000e-2,1.25000e0,-5.00000e-1,"));
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(12187.3122), "1.21873e4");
        assert_eq!(sig6(0.0), "0.00000e0");
        assert_eq!(sig6(-0.000123456789), "-1.23457e-4");
    }
}
