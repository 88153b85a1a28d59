//! Purchase rates by relative price level.

use serde::{Deserialize, Serialize};

use super::wilcoxon::midranks;
use super::AnalysisError;
use crate::game::demand::{relative_price, PRICE_LEVELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandRow {
    pub level_index: u8,
    pub purchase: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRate {
    pub level_index: u8,
    pub relative_price: f64,
    pub purchases: u64,
    pub count: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandCurve {
    pub levels: Vec<LevelRate>,
    /// Rank correlation of price level and purchase rate; `None` when the
    /// rates are all equal.
    pub spearman_rho: Option<f64>,
    /// Largest rise in purchase rate from one level to the next (0 if none).
    pub max_adjacent_increase: f64,
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ra, rb) = (midranks(a), midranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Pools valid decisions across products at each of the 11 price levels.
pub fn demand_curve(rows: &[DemandRow]) -> Result<DemandCurve, AnalysisError> {
    let mut purchases = [0u64; PRICE_LEVELS];
    let mut counts = [0u64; PRICE_LEVELS];
    for r in rows {
        let k = usize::from(r.level_index);
        if k >= PRICE_LEVELS {
            return Err(AnalysisError::Input(format!("price level index {k} outside 0..{PRICE_LEVELS}")));
        }
        counts[k] += 1;
        purchases[k] += u64::from(r.purchase);
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(AnalysisError::Input(format!(
            "price level {k} (relative price {:.1}) has no valid decisions",
            relative_price(k as u8)
        )));
    }
    let levels: Vec<LevelRate> = (0..PRICE_LEVELS)
        .map(|k| LevelRate {
            level_index: k as u8,
            relative_price: relative_price(k as u8),
            purchases: purchases[k],
            count: counts[k],
            rate: purchases[k] as f64 / counts[k] as f64,
        })
        .collect();
    let x: Vec<f64> = levels.iter().map(|l| l.relative_price).collect();
    let y: Vec<f64> = levels.iter().map(|l| l.rate).collect();
    let max_adjacent_increase = y.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(DemandCurve {
        spearman_rho: spearman(&x, &y),
        max_adjacent_increase,
        levels,
    })
}

impl DemandCurve {
    /// RFC 4180 CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level_index,relative_price,purchases,count,rate\r\n");
        for l in &self.levels {
            out.push_str(&format!(
                "{},{:.1},{},{},{}\r\n",
                l.level_index, l.relative_price, l.purchases, l.count, l.rate
            ));
        }
        out
    }
}
