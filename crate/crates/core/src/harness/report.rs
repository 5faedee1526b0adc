//! Scenario outputs: the machine-readable report, plot-ready tables and on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scenario::{Scenario, ScenarioKind};
use crate::error::Result;
use crate::estimation::{
    format_value_error, BreathingFit, DepumpFit, Estimate, LoadingFit, LossFit, TemperatureFit,
    WaistFit,
};
use crate::interferometer::{csv_error, ScalingFit};

/// One reported quantity in lab units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub quantity: String,
    pub value: f64,
    pub error: f64,
    pub unit: String,
    pub truth: Option<f64>,
}

impl SummaryEntry {
    pub(crate) fn new(
        quantity: &str,
        estimate: Estimate,
        scale: f64,
        unit: &str,
        truth: Option<f64>,
    ) -> Self {
        SummaryEntry {
            quantity: quantity.into(),
            value: estimate.value * scale,
            error: estimate.error * scale.abs(),
            unit: unit.into(),
            truth: truth.map(|t| t * scale),
        }
    }
}

/// A named self-consistency check evaluated on the scenario output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub(crate) fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseScalingOutcome {
    pub balanced: ScalingFit,
    pub unbalanced: Option<ScalingFit>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DetuningPoint {
    pub detuning_hwhm: f64,
    pub truth_beta: f64,
    pub fit: LossFit,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrequencyPoint {
    pub power: f64,
    pub truth_frequency: f64,
    pub fit: BreathingFit,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrequencyVsPowerOutcome {
    pub points: Vec<FrequencyPoint>,
    pub waist: WaistFit,
}

#[derive(Clone, Debug, Serialize)]
pub struct DepumpingOutcome {
    pub fit: DepumpFit,
    /// Excitation probability per W from the absorption model.
    pub theory_slope: f64,
    pub theory_excitation: Vec<f64>,
    pub effective_branching: f64,
}

/// Typed fit results of a scenario.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    NoiseScaling(NoiseScalingOutcome),
    Loading(LoadingFit),
    Losses(LossFit),
    LossVsDetuning(Vec<DetuningPoint>),
    Breathing(BreathingFit),
    FrequencyVsPower(FrequencyVsPowerOutcome),
    TimeOfFlight(TemperatureFit),
    Depumping(DepumpingOutcome),
}

/// A plot-ready table written as CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub(crate) fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).map_err(csv_error)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(csv_error)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| csv_error(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("CSV of numbers is UTF-8"))
    }
}

/// Machine-readable summary of one scenario run.
#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub run_count: usize,
    /// All fits converged.
    pub converged: bool,
    pub summary: Vec<SummaryEntry>,
    pub checks: Vec<Check>,
    pub diagnostics: Vec<String>,
    pub fit: Outcome,
}

impl ScenarioReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human-readable summary using `value(error)` notation.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "scenario {} (seed {}, {} run{})\n",
            self.scenario,
            self.seed,
            self.run_count,
            if self.run_count == 1 { "" } else { "s" }
        );
        for e in &self.summary {
            let truth = e
                .truth
                .map(|t| format!("  [truth {}]", significant(t)))
                .unwrap_or_default();
            let value = if e.error > 0.0 {
                format_value_error(e.value, e.error)
            } else {
                significant(e.value)
            };
            out += &format!("  {:<28} {} {}{}\n", e.quantity, value, e.unit, truth);
        }
        for c in &self.checks {
            out += &format!(
                "  [{}] {}: {}\n",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        for d in &self.diagnostics {
            out += &format!("  note: {d}\n");
        }
        out += &format!("  converged: {}\n", self.converged);
        out
    }
}

/// Six significant digits, positional for moderate magnitudes and scientific otherwise.
pub fn significant(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-3..6).contains(&mag) {
        let s = format!("{:.*}", (5 - mag).max(0) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.5e}");
        let (mantissa, exp) = s
            .split_once('e')
            .expect("scientific format has an exponent");
        format!(
            "{}e{exp}",
            mantissa.trim_end_matches('0').trim_end_matches('.')
        )
    }
}

/// Everything a scenario run produces.
#[derive(Clone, Debug)]
pub struct ScenarioOutput {
    pub scenario: Scenario,
    pub report: ScenarioReport,
    pub tables: Vec<Table>,
}

impl ScenarioOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// File name and contents of every artifact. Contents depend only on the scenario.
    pub fn artifact_files(&self) -> Result<Vec<(String, String)>> {
        let mut files = vec![
            ("scenario.json".to_string(), self.scenario.to_json()? + "\n"),
            ("report.json".to_string(), self.report.to_json()? + "\n"),
        ];
        for t in &self.tables {
            files.push((format!("{}.csv", t.name), t.to_csv()?));
        }
        Ok(files)
    }

    /// Writes the artifacts into `<root>/<scenario>-<UTC timestamp>/`. Files are staged in
    /// a hidden sibling directory and renamed into place, so a failed run leaves no
    /// partial output directory.
    pub fn write_artifacts(&self, root: &Path) -> Result<PathBuf> {
        fs::create_dir_all(root)?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
        let base = format!("{}-{stamp}", self.scenario.name);
        let mut target = root.join(&base);
        let mut n = 1;
        while target.exists() {
            target = root.join(format!("{base}-{n}"));
            n += 1;
        }
        let staging = root.join(format!(
            ".{}.partial",
            target.file_name().unwrap().to_string_lossy()
        ));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging)?;
        let written = self.artifact_files().and_then(|files| {
            files
                .iter()
                .try_for_each(|(name, body)| Ok(fs::write(staging.join(name), body)?))
        });
        if let Err(e) = written {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
        fs::rename(&staging, &target)?;
        Ok(target)
    }
}
