//! CSV and JSON emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sharemkt_core::equilibrium::{EquilibriumState, SweepRow};

/// Formats like C's `%.12g`: 12 significant digits, trailing zeros removed,
/// scientific notation outside `1e-4 <= |x| < 1e12`.
pub fn fmt_g(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub const SWEEP_HEADER: &str = "p,S,D,revenue,welfare,regime,converged,iters,max_residual";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let regime = r.regime.map(|g| g.to_string()).unwrap_or_else(|| "error".into());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            fmt_g(r.price),
            fmt_g(r.supply),
            fmt_g(r.demand),
            fmt_g(r.revenue),
            fmt_g(r.welfare),
            regime,
            r.converged,
            r.iterations,
            fmt_g(r.max_residual)
        );
    }
    out
}

pub const AGENT_HEADER: &str = "role,index,x,s,y";

/// One line per owner (`x`, `s`) and per renter (`y`); unused cells are empty.
pub fn agents_csv(state: &EquilibriumState) -> String {
    let mut out = String::from(AGENT_HEADER);
    out.push('\n');
    for (i, a) in state.actions.iter().enumerate() {
        let _ = writeln!(out, "owner,{i},{},{},", fmt_g(a.x), fmt_g(a.s));
    }
    for (k, y) in state.renter_usages.iter().enumerate() {
        let _ = writeln!(out, "renter,{k},,,{}", fmt_g(*y));
    }
    out
}

/// A report plus the seeds of the populations it was computed on.
#[derive(Serialize)]
pub struct Seeded<T: Serialize> {
    #[serde(flatten)]
    pub result: T,
    pub seed: u64,
    pub block_seeds: Vec<u64>,
}

pub fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Writes `contents` to `dir/name` when an output directory was given.
pub fn write_file(dir: Option<&Path>, name: &str, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), contents)?;
    }
    Ok(())
}
