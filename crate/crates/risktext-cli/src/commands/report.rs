//! Re-renders a stored report file as terminal text.

use std::path::Path;

use anyhow::{bail, Result};

use risktext::metrics::EvalReport;

pub fn run(input: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input)?;
    if let Ok(report) = serde_json::from_str::<EvalReport>(&text) {
        print!("{}", report.render_text());
        return Ok(());
    }
    // Fall back to an assessment file.
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(dist) = value.get("distribution") {
        let fractions = dist
            .get("fractions")
            .and_then(|f| f.as_array())
            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect::<Vec<_>>())
            .unwrap_or_default();
        if fractions.len() == 4 {
            println!(
                "risk distribution over {} users",
                value.get("users_assessed").and_then(|v| v.as_u64()).unwrap_or(0)
            );
            for (letter, fraction) in ["a", "b", "c", "d"].iter().zip(&fractions) {
                println!("  {letter} {:.2}%", fraction * 100.0);
            }
            if let (Some(no), Some(any)) = (
                dist.get("no_risk").and_then(|v| v.as_f64()),
                dist.get("any_risk").and_then(|v| v.as_f64()),
            ) {
                println!("  no-risk {:.2}%  any-risk {:.2}%", no * 100.0, any * 100.0);
            }
            return Ok(());
        }
    }
    bail!("{} is neither an eval report nor an assessment", input.display());
}
