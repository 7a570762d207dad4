//! Result file formatting.

use std::io::{self, Write};

use mknn_core::TickResult;

pub const RESULTS_HEADER: &str = "tick,query_id,rank,neighbour_id,distance";

/// Formats `v` with 9 significant digits, like C's `%.9g`.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(format!("{v:.decimals$}"))
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

/// One line per neighbour, ranks from 1.
pub fn write_results(out: &mut impl Write, tick: u64, result: &TickResult) -> io::Result<()> {
    for q in &result.queries {
        for (rank, n) in q.neighbours.iter().enumerate() {
            writeln!(out, "{tick},{},{},{},{}", q.query_id, rank + 1, n.id, fmt_sig9(n.dist))?;
        }
    }
    Ok(())
}
