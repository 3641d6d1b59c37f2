use serde::{Deserialize, Serialize};

use super::ScenarioError;

/// Risk of one step. `t` counts from 1 (the first predicted position).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub t: usize,
    pub value: f64,
    pub upper_bound: bool,
    /// Per-mode values when modes are held constant over the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDiagnostics {
    /// Trajectory risk under the other mode-model reading, when it differs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternate_trajectory_risk: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskReport {
    pub method: String,
    pub per_step: Vec<StepRecord>,
    pub trajectory_risk: f64,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<ReportDiagnostics>,
}

impl RiskReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &[u8]) -> Result<Self, ScenarioError> {
        let r: RiskReport = serde_json::from_slice(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
        let probs = r.per_step.iter().map(|s| s.value).chain(std::iter::once(r.trajectory_risk));
        for (i, p) in probs.enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(ScenarioError::validation(format!("per_step[{i}].value"), "probability outside [0, 1]"));
            }
        }
        Ok(r)
    }

    /// Plot-ready rows `t,value,upper_bound,method`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value,upper_bound,method\n");
        for s in &self.per_step {
            out.push_str(&format!("{},{},{},{}\n", s.t, s.value, s.upper_bound, self.method));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let r = RiskReport {
            method: "ltz".into(),
            per_step: vec![StepRecord {
                t: 1,
                value: 0.25,
                upper_bound: false,
                modes: Some(vec![0.5, 0.0]),
                flags: vec![],
            }],
            trajectory_risk: 0.25,
            wall_time_s: 0.001,
            seed: None,
            diagnostics: None,
        };
        assert_eq!(RiskReport::from_json(r.to_json().as_bytes()).unwrap(), r);
        assert!(r.to_csv().ends_with("1,0.25,false,ltz\n"));
    }
}
