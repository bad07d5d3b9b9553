//! Individual-level input: a two-column `arm,value` CSV reduced to summaries.

use std::io::Read;

use hybridctl_core::borrowing::{HybridData, SummaryStat};
use serde::Deserialize;

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Deserialize)]
struct Row {
    arm: String,
    value: f64,
}

/// Reads `arm,value` rows with arms `treatment`, `control` and `historical`.
pub fn read_arms<R: Read>(reader: R) -> ApiResult<HybridData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let (mut t, mut c, mut h) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| ApiError::invalid(format!("data row {}: {e}", i + 1)))?;
        if !row.value.is_finite() {
            return Err(ApiError::invalid(format!("data row {}: value must be finite", i + 1)));
        }
        match row.arm.to_ascii_lowercase().as_str() {
            "treatment" => t.push(row.value),
            "control" => c.push(row.value),
            "historical" => h.push(row.value),
            other => {
                return Err(ApiError::invalid(format!(
                    "data row {}: unknown arm `{other}` (expected treatment, control or historical)",
                    i + 1
                )))
            }
        }
    }
    let arm = |name: &str, values: &[f64]| {
        SummaryStat::from_values(values).map_err(|e| ApiError::invalid(format!("{name} arm: {e}")))
    };
    Ok(HybridData {
        treatment: arm("treatment", &t)?,
        current_control: arm("control", &c)?,
        historical_control: arm("historical", &h)?,
    })
}
