//! Exponential demand fitting from transaction counts and renter
//! reconstruction from the fit.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::benefit::BenefitFunction;
use crate::error::{Error, Result};
use crate::market::Renter;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub price: f64,
    pub count: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandFit {
    pub alpha: f64,
    pub beta: f64,
    pub r2: f64,
    pub p_offset: f64,
    pub n_rows_used: usize,
    pub n_rows_dropped: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Subtracted from every price before fitting (a minimum charge).
    pub p_offset: f64,
    /// Add one to every count so empty price levels can be kept.
    pub smoothing: bool,
}

/// Reads `price,count` rows.
pub fn read_transactions<R: Read>(reader: R) -> Result<Vec<TransactionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["price", "count"] {
        return Err(Error::InsufficientData(format!(
            "expected header `price,count`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let rec: TransactionRecord = row?;
        out.push(rec);
    }
    Ok(out)
}

/// Weighted least squares of `ln count` on shifted price, with the counts
/// as weights. `r2` is measured on the log scale.
pub fn fit_exponential_demand(records: &[TransactionRecord], options: FitOptions) -> Result<DemandFit> {
    let mut rows = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for r in records {
        let p = r.price - options.p_offset;
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::Domain(format!(
                "price {} is below the offset {}",
                r.price, options.p_offset
            )));
        }
        if !(r.count.is_finite() && r.count >= 0.0) {
            return Err(Error::Domain(format!("invalid count {}", r.count)));
        }
        let count = if options.smoothing { r.count + 1.0 } else { r.count };
        if count > 0.0 {
            rows.push((p, count.ln(), count));
        } else {
            dropped += 1;
        }
    }
    let distinct = {
        let mut ps: Vec<f64> = rows.iter().map(|r| r.0).collect();
        ps.sort_by(f64::total_cmp);
        ps.dedup();
        ps.len()
    };
    if distinct < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least two distinct prices with positive counts, got {distinct}"
        )));
    }
    let w: f64 = rows.iter().map(|r| r.2).sum();
    let mp = rows.iter().map(|r| r.2 * r.0).sum::<f64>() / w;
    let my = rows.iter().map(|r| r.2 * r.1).sum::<f64>() / w;
    let sxx: f64 = rows.iter().map(|r| r.2 * (r.0 - mp).powi(2)).sum();
    let sxy: f64 = rows.iter().map(|r| r.2 * (r.0 - mp) * (r.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mp;
    let beta = -slope;
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::DegenerateFit(format!(
            "demand does not decrease with price (beta={beta})"
        )));
    }
    let sst: f64 = rows.iter().map(|r| r.2 * (r.1 - my).powi(2)).sum();
    let sse: f64 = rows.iter().map(|r| r.2 * (r.1 - intercept - slope * r.0).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    Ok(DemandFit {
        alpha: intercept.exp(),
        beta,
        r2,
        p_offset: options.p_offset,
        n_rows_used: rows.len(),
        n_rows_dropped: dropped,
    })
}

/// `alpha * exp(-beta * p)` for a price measured after the offset.
pub fn implied_demand(fit: &DemandFit, p: f64) -> f64 {
    fit.alpha * (-fit.beta * p).exp()
}

/// `n` identical renters whose demands add up to the fitted curve.
pub fn build_renters_from_fit(fit: &DemandFit, n: usize) -> Result<Vec<Renter>> {
    if n == 0 {
        return Err(Error::Domain("renter count must be positive".into()));
    }
    let g = BenefitFunction::entropy(fit.alpha, fit.beta, n as f64)?;
    Ok(vec![Renter::new(g); n])
}
