//! Localization and separation metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::cyclic_distance_deg;

/// SI-SDR values are clamped to `±SI_SDR_CLAMP_DB`.
pub const SI_SDR_CLAMP_DB: f64 = 60.0;

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // Next lexicographic permutation.
        let Some(i) = (0..n.saturating_sub(1))
            .rev()
            .find(|&i| cur[i] < cur[i + 1])
        else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| cur[j] > cur[i]).expect("exists");
        cur.swap(i, j);
        cur[i + 1..].reverse();
    }
    out
}

/// Mean cyclic error in degrees, minimized over assignments of predictions
/// to references.
pub fn cyclic_mae(preds_deg: &[f64], refs_deg: &[f64]) -> Result<f64> {
    if preds_deg.len() != refs_deg.len() {
        return Err(invalid(format!(
            "{} predictions for {} references",
            preds_deg.len(),
            refs_deg.len()
        )));
    }
    if preds_deg.is_empty() {
        return Err(invalid("no angles to compare"));
    }
    let n = preds_deg.len() as f64;
    Ok(permutations(preds_deg.len())
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(r, &q)| cyclic_distance_deg(preds_deg[q], refs_deg[r]))
                .sum::<f64>()
                / n
        })
        .fold(f64::INFINITY, f64::min))
}

/// Angular-distance subsets for two-source results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeparationBin {
    From10To20,
    From21To45,
    From46To90,
    From91To180,
    Other,
}

impl SeparationBin {
    /// Rounds the separation half-up to whole degrees, then bins it.
    pub fn of(separation_deg: f64) -> Self {
        match (separation_deg + 0.5).floor() as i64 {
            10..=20 => SeparationBin::From10To20,
            21..=45 => SeparationBin::From21To45,
            46..=90 => SeparationBin::From46To90,
            91..=180 => SeparationBin::From91To180,
            _ => SeparationBin::Other,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SeparationBin::From10To20 => "10-20",
            SeparationBin::From21To45 => "21-45",
            SeparationBin::From46To90 => "46-90",
            SeparationBin::From91To180 => "91-180",
            SeparationBin::Other => "other",
        }
    }
}

impl fmt::Display for SeparationBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Predicted and reference azimuths of one utterance, in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub id: String,
    pub pred_deg: Vec<f64>,
    pub ref_deg: Vec<f64>,
}

impl UtteranceResult {
    pub fn mae(&self) -> Result<f64> {
        cyclic_mae(&self.pred_deg, &self.ref_deg)
    }
}

/// Per-utterance permutation-minimized MAE, averaged over the corpus.
pub fn corpus_mae(results: &[UtteranceResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(invalid("no results"));
    }
    let mut total = 0.0;
    for r in results {
        total += r.mae()?;
    }
    Ok(total / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStats {
    pub count: usize,
    pub mae_deg: f64,
}

/// Corpus MAE split by the cyclic separation of each reference pair. Bins
/// without utterances are absent from the map.
pub fn binned_mae(results: &[UtteranceResult]) -> Result<BTreeMap<SeparationBin, BinStats>> {
    let mut sums: BTreeMap<SeparationBin, (usize, f64)> = BTreeMap::new();
    for r in results {
        if r.ref_deg.len() != 2 {
            return Err(invalid(format!("{}: binning needs two references", r.id)));
        }
        let bin = SeparationBin::of(cyclic_distance_deg(r.ref_deg[0], r.ref_deg[1]));
        let e = sums.entry(bin).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += r.mae()?;
    }
    Ok(sums
        .into_iter()
        .map(|(b, (n, s))| {
            (
                b,
                BinStats {
                    count: n,
                    mae_deg: s / n as f64,
                },
            )
        })
        .collect())
}

/// Scale-invariant signal-to-distortion ratio in dB, clamped to ±60 dB.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let rr: f64 = reference.iter().map(|x| x * x).sum();
    if rr == 0.0 {
        return Err(invalid("reference signal is silent"));
    }
    let alpha = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| e * r)
        .sum::<f64>()
        / rr;
    let (mut target, mut residual) = (0.0, 0.0);
    for (e, r) in estimate.iter().zip(reference) {
        let t = alpha * r;
        target += t * t;
        residual += (e - t) * (e - t);
    }
    let db = 10.0 * (target / residual).log10();
    Ok(if db.is_nan() {
        -SI_SDR_CLAMP_DB
    } else {
        db.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB)
    })
}

/// One line of an experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub gamma: Option<u32>,
    pub loss: Option<String>,
    pub pit: Option<bool>,
    pub dev_mae: Option<f64>,
    pub test_mae: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

const HEADER: [&str; 6] = ["method", "gamma", "loss", "pit", "dev_mae", "test_mae"];

impl ReportRow {
    fn cells(&self) -> [String; 6] {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        [
            self.method.clone(),
            opt(self.gamma.map(|g| g.to_string())),
            opt(self.loss.clone()),
            opt(self.pit.map(|p| if p { "on" } else { "off" }.to_string())),
            opt(self.dev_mae.map(|v| format!("{v:.2}"))),
            opt(self.test_mae.map(|v| format!("{v:.2}"))),
        ]
    }
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.cells().join(","));
            out.push('\n');
        }
        out
    }

    /// Columns padded to their widest cell; numbers right-aligned.
    pub fn to_text(&self) -> String {
        let rows: Vec<[String; 6]> = self.rows.iter().map(ReportRow::cells).collect();
        let mut widths = HEADER.map(str::len);
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&HEADER.map(String::from));
        for r in &rows {
            line(r);
        }
        out
    }
}
