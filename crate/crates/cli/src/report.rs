//! Gas reporting: per-label cost rows with optional published baselines and
//! the fiat conversion the comparison tables use (default rate: 1M gas =
//! 0.02 ETH = 0.80 EUR).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::scenario::Conversion;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GasRow {
    pub label: String,
    /// Transactions aggregated under this label (joins of a whole group, for
    /// example, report once).
    pub count: u64,
    pub total_gas: u64,
    pub gas_per_tx: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_gas: Option<u64>,
    /// Per-transaction deviation from the baseline, in percent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation_pct: Option<f64>,
    pub eth: f64,
    pub eur: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GasReport {
    pub scenario: String,
    pub conversion: Conversion,
    pub rows: Vec<GasRow>,
    pub total_gas: u64,
    pub total_eth: f64,
    pub total_eur: f64,
}

/// Label plus raw cost samples, accumulated while a scenario runs.
#[derive(Debug, Default)]
pub struct GasLedger {
    entries: Vec<(String, Option<u64>, u64, u64)>,
}

impl GasLedger {
    pub fn record(&mut self, label: &str, baseline: Option<u64>, gas_used: u64) {
        match self.entries.iter_mut().find(|(l, ..)| l == label) {
            Some((_, row_baseline, count, total)) => {
                *count += 1;
                *total += gas_used;
                if row_baseline.is_none() {
                    *row_baseline = baseline;
                }
            }
            None => self.entries.push((label.to_string(), baseline, 1, gas_used)),
        }
    }

    pub fn gas_for(&self, label: &str) -> Option<u64> {
        self.entries
            .iter()
            .find(|(l, ..)| l == label)
            .map(|(_, _, _, total)| *total)
    }

    pub fn into_report(self, scenario: &str, conversion: Conversion) -> GasReport {
        let mut rows = Vec::new();
        let mut total_gas = 0u64;
        for (label, baseline, count, total) in self.entries {
            total_gas += total;
            let per_tx = total / count;
            rows.push(GasRow {
                label,
                count,
                total_gas: total,
                gas_per_tx: per_tx,
                baseline_gas: baseline,
                deviation_pct: baseline.map(|base| {
                    (per_tx as f64 - base as f64) / base as f64 * 100.0
                }),
                eth: to_rate(per_tx, conversion.eth_per_million_gas),
                eur: to_rate(per_tx, conversion.eur_per_million_gas),
            });
        }
        GasReport {
            scenario: scenario.to_string(),
            conversion,
            rows,
            total_gas,
            total_eth: to_rate(total_gas, conversion.eth_per_million_gas),
            total_eur: to_rate(total_gas, conversion.eur_per_million_gas),
        }
    }
}

fn to_rate(gas: u64, per_million: f64) -> f64 {
    gas as f64 / 1_000_000.0 * per_million
}

impl GasReport {
    pub fn row(&self, label: &str) -> Option<&GasRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Fixed-width text table for terminals and logs.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<28} {:>6} {:>12} {:>12} {:>10} {:>8} {:>10} {:>10}",
            "label", "count", "gas/tx", "total", "baseline", "dev%", "ETH", "EUR"
        );
        for row in &self.rows {
            let baseline = row
                .baseline_gas
                .map(|b| b.to_string())
                .unwrap_or_else(|| "-".into());
            let deviation = row
                .deviation_pct
                .map(|d| format!("{d:+.1}"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<28} {:>6} {:>12} {:>12} {:>10} {:>8} {:>10.6} {:>10.6}",
                row.label,
                row.count,
                row.gas_per_tx,
                row.total_gas,
                baseline,
                deviation,
                row.eth,
                row.eur
            );
        }
        let _ = writeln!(
            out,
            "{:<28} {:>6} {:>12} {:>12} {:>10} {:>8} {:>10.6} {:>10.6}",
            "total", "", "", self.total_gas, "", "", self.total_eth, self.total_eur
        );
        out
    }
}
