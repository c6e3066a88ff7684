//! Domain types shared by every stage of the pipeline.
//!
//! Everything here is a plain immutable value: no I/O, no process spawning.
//! Output comparison throughout the crate goes through [`normalize_output`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Language tags understood by the loader and the sandbox.
pub const SUPPORTED_LANGUAGES: &[&str] = &["cpp", "c", "python3", "generator-script"];

/// A program with a stdin -> stdout entry convention.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceProgram {
    pub language_tag: String,
    pub source: String,
}

impl SourceProgram {
    pub fn new(language_tag: impl Into<String>, source: impl Into<String>) -> Result<Self, ModelError> {
        let program = Self {
            language_tag: language_tag.into(),
            source: source.into(),
        };
        program.validate()?;
        Ok(program)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.source.trim().is_empty() {
            return Err(ModelError::EmptySource);
        }
        Ok(())
    }

    /// File extension used when the program is written to disk.
    pub fn extension(&self) -> &'static str {
        extension_for(&self.language_tag)
    }
}

pub fn extension_for(language_tag: &str) -> &'static str {
    match language_tag {
        "cpp" => "cpp",
        "c" => "c",
        "python3" | "generator-script" => "py",
        _ => "txt",
    }
}

/// Inverse of [`extension_for`] for files found in a task directory.
pub fn language_for_extension(ext: &str) -> Option<&'static str> {
    match ext {
        "cpp" | "cc" | "cxx" => Some("cpp"),
        "c" => Some("c"),
        "py" => Some("python3"),
        _ => None,
    }
}

/// One `(input, expected_output)` pair of the existing suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteTestCase {
    pub input: String,
    pub expected_output: String,
}

/// A coding task: specification, program under test and the suite it passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBundle {
    pub task_id: String,
    pub specification: String,
    pub put: SourceProgram,
    pub suite: Vec<SuiteTestCase>,
    pub canonical: Option<SourceProgram>,
    pub checker: Option<SourceProgram>,
    pub difficulty: Option<f64>,
}

impl TaskBundle {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.task_id.is_empty() {
            return Err(ModelError::EmptyTaskId);
        }
        if self.suite.is_empty() {
            return Err(ModelError::EmptySuite(self.task_id.clone()));
        }
        self.put.validate()?;
        if let Some(c) = &self.canonical {
            c.validate()?;
        }
        if let Some(c) = &self.checker {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantOrigin {
    PutGuided,
    SpecOnly,
    DirectChat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStatus {
    Unfiltered,
    PassedSuite,
    FailedSuite,
}

/// A candidate repair of the PUT produced by one language-model sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramVariant {
    pub variant_id: String,
    pub source: SourceProgram,
    pub origin: VariantOrigin,
    /// Cache key of the response the variant was extracted from.
    pub llm_transcript_ref: String,
    pub filter_status: FilterStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Generator { script_ref: String, seed: u64 },
    DirectLlm { transcript_ref: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Unknown,
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedInput {
    pub input_id: String,
    pub payload: String,
    pub provenance: Provenance,
    pub validity: Validity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Timeout,
    Crash,
    CompileError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    pub raw_stdout: String,
    /// `Some` exactly when `status` is [`ExecStatus::Ok`].
    pub normalized_output: Option<String>,
    pub wall_time_ms: u64,
    pub exit_code: Option<i32>,
    /// Short diagnostic for non-ok outcomes (exit code, signal, limit hit).
    pub detail: Option<String>,
}

impl ExecutionOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    pub fn output(&self) -> Option<&str> {
        self.normalized_output.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectionStrategy {
    /// Most frequent output among those that differ from the PUT.
    Diversity,
    /// Most frequent output among the PUT and all voting variants.
    Majority,
}

/// Record of how an oracle was chosen for one input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionTrace {
    pub put_output: String,
    pub variant_outputs: Vec<(String, String)>,
    /// Outputs that differ from the PUT, with multiplicity.
    pub diff_multiset: BTreeMap<String, usize>,
    pub winner: String,
    pub strategy: ElectionStrategy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateTestCase {
    pub input: GeneratedInput,
    pub oracle: String,
    pub election: ElectionTrace,
}

/// Test-case taxonomy for a generated `(input, oracle)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    /// Correct oracle, PUT disagrees: identifies a bug.
    Tc,
    /// Correct oracle, PUT agrees.
    Tr,
    /// Wrong oracle.
    Tw,
    /// Invalid input.
    Terr,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Tc => "Tc",
            Category::Tr => "Tr",
            Category::Tw => "Tw",
            Category::Terr => "Terr",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassFail {
    Passed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalVerdict {
    pub category: Category,
    pub pass_fail: PassFail,
    pub reason: String,
}

impl EvalVerdict {
    pub fn is_true_positive(&self) -> bool {
        self.pass_fail == PassFail::Failed && self.category == Category::Tc
    }

    pub fn is_false_positive(&self) -> bool {
        self.pass_fail == PassFail::Failed && matches!(self.category, Category::Tw | Category::Terr)
    }
}

/// Confusion counts with derived ratios. Zero denominators yield 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

pub(crate) fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    let den = precision + recall;
    if den > 0.0 {
        2.0 * precision * recall / den
    } else {
        0.0
    }
}

/// Canonical form used for every output comparison.
///
/// Trailing whitespace is trimmed per line, runs of spaces/tabs collapse to
/// one space, and trailing blank lines are dropped.
pub fn normalize_output(raw: &str) -> String {
    let mut lines: Vec<String> = raw
        .split('\n')
        .map(|line| {
            let mut out = String::with_capacity(line.len());
            let mut in_run = false;
            for ch in line.trim_end_matches([' ', '\t', '\r']).chars() {
                if ch == ' ' || ch == '\t' {
                    if !in_run {
                        out.push(' ');
                    }
                    in_run = true;
                } else {
                    out.push(ch);
                    in_run = false;
                }
            }
            out
        })
        .collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_output("YES \n\n"), "YES");
        assert_eq!(normalize_output("a\t\t b  c\r\n"), "a b c");
        assert_eq!(normalize_output("\n\nx"), "\n\nx");
        assert_eq!(normalize_output(""), "");
        assert_eq!(normalize_output("1\n2 \n \n"), "1\n2");
    }

    #[test]
    fn normalization_is_idempotent() {
        for s in ["  a  b \n\t\n", "x\r\ny\n\n\n", "", "\t"] {
            let once = normalize_output(s);
            assert_eq!(normalize_output(&once), once);
        }
    }

    #[test]
    fn metrics_zero_denominators() {
        let m = MetricsReport::from_counts(0, 0, 0, 0);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_source_rejected() {
        assert!(SourceProgram::new("cpp", "  \n").is_err());
        assert!(SourceProgram::new("cpp", "int main(){}").is_ok());
    }

    #[test]
    fn bundle_requires_suite() {
        let bundle = TaskBundle {
            task_id: "t".into(),
            specification: "s".into(),
            put: SourceProgram::new("python3", "print(1)").unwrap(),
            suite: vec![],
            canonical: None,
            checker: None,
            difficulty: None,
        };
        assert!(matches!(bundle.validate(), Err(ModelError::EmptySuite(_))));
    }
}
