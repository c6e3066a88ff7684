//! On-disk task bundles, corpora and run artifacts.
//!
//! A task bundle directory looks like:
//!
//! ```text
//! spec.md
//! put.<ext>
//! tests/001.in  tests/001.out  ...
//! canonical.<ext>   (optional)
//! checker.<ext>     (optional)
//! meta.json         (optional: {task_id, language_tag, difficulty?})
//! ```
//!
//! Run artifacts are written with sorted ids and stable JSON key order, so two
//! saves of the same [`RunRecord`] produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ModelError;
use crate::eval::RunConfig;
use crate::model::{
    extension_for, language_for_extension, CandidateTestCase, EvalVerdict, FilterStatus, GeneratedInput, MetricsReport,
    ProgramVariant, Provenance, SourceProgram, SuiteTestCase, TaskBundle, Validity, VariantOrigin, SUPPORTED_LANGUAGES,
};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("test file without a partner: {0}")]
    UnpairedTestFile(PathBuf),
    #[error("unsupported language tag `{0}`")]
    UnsupportedLanguageTag(String),
    #[error("malformed {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("invalid task bundle: {0}")]
    Invalid(#[from] ModelError),
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BundleError + '_ {
    move |source| BundleError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Default, Deserialize)]
struct TaskMeta {
    task_id: Option<String>,
    language_tag: Option<String>,
    difficulty: Option<f64>,
}

/// Finds `<stem>.<ext>` in `dir`. More than one match is ambiguous and rejected.
fn find_program(dir: &Path, stem: &str) -> Result<Option<PathBuf>, BundleError> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() && path.file_stem().and_then(|s| s.to_str()) == Some(stem) {
            found.push(path);
        }
    }
    found.sort();
    match found.len() {
        0 => Ok(None),
        1 => Ok(found.pop()),
        _ => Err(BundleError::Malformed {
            path: dir.to_path_buf(),
            message: format!("more than one `{stem}.*` file"),
        }),
    }
}

fn read_program(path: &Path, tag_override: Option<&str>) -> Result<SourceProgram, BundleError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let tag = match tag_override {
        Some(tag) => tag,
        None => language_for_extension(ext).ok_or_else(|| BundleError::UnsupportedLanguageTag(format!(".{ext}")))?,
    };
    let source = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(SourceProgram::new(tag, source)?)
}

fn read_suite(tests_dir: &Path) -> Result<Vec<SuiteTestCase>, BundleError> {
    let mut inputs = BTreeMap::new();
    let mut outputs = BTreeMap::new();
    for entry in fs::read_dir(tests_dir).map_err(io_err(tests_dir))? {
        let path = entry.map_err(io_err(tests_dir))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
            continue;
        };
        match path.extension().and_then(|e| e.to_str()) {
            Some("in") => inputs.insert(test_order_key(&stem), path),
            Some("out") => outputs.insert(test_order_key(&stem), path),
            _ => continue,
        };
    }
    for (key, path) in inputs.iter().chain(outputs.iter()) {
        if !inputs.contains_key(key) || !outputs.contains_key(key) {
            return Err(BundleError::UnpairedTestFile(path.clone()));
        }
    }
    inputs
        .iter()
        .map(|(key, in_path)| {
            let out_path = &outputs[key];
            Ok(SuiteTestCase {
                input: fs::read_to_string(in_path).map_err(io_err(in_path))?,
                expected_output: fs::read_to_string(out_path).map_err(io_err(out_path))?,
            })
        })
        .collect()
}

/// Numeric stems sort numerically, anything else after them by name.
fn test_order_key(stem: &str) -> (u64, String) {
    (stem.parse::<u64>().unwrap_or(u64::MAX), stem.to_owned())
}

pub fn load_task_bundle(dir: &Path) -> Result<TaskBundle, BundleError> {
    if !dir.is_dir() {
        return Err(BundleError::MissingFile(dir.to_path_buf()));
    }
    let spec_path = dir.join("spec.md");
    if !spec_path.is_file() {
        return Err(BundleError::MissingFile(spec_path));
    }
    let specification = fs::read_to_string(&spec_path).map_err(io_err(&spec_path))?;

    let meta_path = dir.join("meta.json");
    let meta: TaskMeta = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        serde_json::from_str(&text).map_err(|e| BundleError::Malformed {
            path: meta_path.clone(),
            message: e.to_string(),
        })?
    } else {
        TaskMeta::default()
    };
    if let Some(tag) = &meta.language_tag {
        if !SUPPORTED_LANGUAGES.contains(&tag.as_str()) {
            return Err(BundleError::UnsupportedLanguageTag(tag.clone()));
        }
    }

    let put_path = find_program(dir, "put")?.ok_or_else(|| BundleError::MissingFile(dir.join("put.*")))?;
    let put = read_program(&put_path, meta.language_tag.as_deref())?;
    let canonical = find_program(dir, "canonical")?
        .map(|p| read_program(&p, None))
        .transpose()?;
    let checker = find_program(dir, "checker")?
        .map(|p| read_program(&p, None))
        .transpose()?;

    let tests_dir = dir.join("tests");
    if !tests_dir.is_dir() {
        return Err(BundleError::MissingFile(tests_dir));
    }
    let suite = read_suite(&tests_dir)?;

    let task_id = meta.task_id.unwrap_or_else(|| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let bundle = TaskBundle {
        task_id,
        specification,
        put,
        suite,
        canonical,
        checker,
        difficulty: meta.difficulty,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// A set of task directories evaluated together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_id: String,
    pub tasks: Vec<PathBuf>,
    pub format_version: u32,
}

impl CorpusManifest {
    /// Reads `manifest.json` from `dir`, or lists every subdirectory when
    /// there is none. Task paths are resolved against `dir`.
    pub fn discover(dir: &Path) -> Result<Self, BundleError> {
        if !dir.is_dir() {
            return Err(BundleError::MissingFile(dir.to_path_buf()));
        }
        let manifest_path = dir.join("manifest.json");
        let mut manifest = if manifest_path.is_file() {
            let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
            let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| BundleError::Malformed {
                path: manifest_path.clone(),
                message: e.to_string(),
            })?;
            if manifest.format_version != CORPUS_FORMAT_VERSION {
                return Err(BundleError::Malformed {
                    path: manifest_path,
                    message: format!("unsupported format_version {}", manifest.format_version),
                });
            }
            manifest
        } else {
            let mut tasks = Vec::new();
            for entry in fs::read_dir(dir).map_err(io_err(dir))? {
                let path = entry.map_err(io_err(dir))?.path();
                if path.is_dir() {
                    tasks.push(PathBuf::from(path.file_name().unwrap()));
                }
            }
            tasks.sort();
            CorpusManifest {
                corpus_id: dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "corpus".into()),
                tasks,
                format_version: CORPUS_FORMAT_VERSION,
            }
        };
        manifest.tasks = manifest.tasks.iter().map(|t| dir.join(t)).collect();
        Ok(manifest)
    }

    /// Loads every task, keeping per-task failures instead of stopping.
    pub fn load_all(&self) -> Vec<(PathBuf, Result<TaskBundle, BundleError>)> {
        self.tasks
            .iter()
            .map(|path| (path.clone(), load_task_bundle(path)))
            .collect()
    }
}

/// Everything one pipeline run produced for a single task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub config: RunConfig,
    pub variants: Vec<ProgramVariant>,
    pub inputs: Vec<GeneratedInput>,
    pub testcases: Vec<CandidateTestCase>,
    /// Aligned with `testcases`; empty when no ground truth was available.
    pub verdicts: Vec<EvalVerdict>,
    pub metrics: Option<MetricsReport>,
}

impl RunRecord {
    pub fn empty(task_id: impl Into<String>, config: RunConfig) -> Self {
        Self {
            task_id: task_id.into(),
            config,
            variants: Vec::new(),
            inputs: Vec::new(),
            testcases: Vec::new(),
            verdicts: Vec::new(),
            metrics: None,
        }
    }

    /// Sorts every collection by id. Verdicts follow their test cases.
    pub fn sort_by_id(&mut self) {
        self.variants.sort_by(|a, b| a.variant_id.cmp(&b.variant_id));
        self.inputs.sort_by(|a, b| a.input_id.cmp(&b.input_id));
        if self.verdicts.len() == self.testcases.len() {
            let mut paired: Vec<_> = self.testcases.drain(..).zip(self.verdicts.drain(..)).collect();
            paired.sort_by(|a, b| a.0.input.input_id.cmp(&b.0.input.input_id));
            (self.testcases, self.verdicts) = paired.into_iter().unzip();
        } else {
            self.testcases.sort_by(|a, b| a.input.input_id.cmp(&b.input.input_id));
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VariantIndexEntry {
    variant_id: String,
    language_tag: String,
    origin: VariantOrigin,
    llm_transcript_ref: String,
    filter_status: FilterStatus,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct InputIndexEntry {
    input_id: String,
    provenance: Provenance,
    validity: Validity,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportTestCase {
    input_id: String,
    oracle: String,
    put_output: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    verdict: Option<EvalVerdict>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunReport {
    task_id: String,
    config: RunConfig,
    tp: Option<usize>,
    fp: Option<usize>,
    #[serde(rename = "fn")]
    fn_: Option<usize>,
    tn: Option<usize>,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
    testcases: Vec<ReportTestCase>,
}

/// Serializes with two-space indentation and a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("in-memory values always serialize");
    bytes.push(b'\n');
    bytes
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BundleError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, to_json_bytes(value)).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BundleError> {
    if !path.is_file() {
        return Err(BundleError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| BundleError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn reset_dir(dir: &Path) -> Result<(), BundleError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Writes `variants/`, `inputs/`, `testcases.json` and `report.json` under
/// `dir` and returns the report path.
pub fn save_run_artifacts(run: &RunRecord, dir: &Path) -> Result<PathBuf, BundleError> {
    let mut run = run.clone();
    run.sort_by_id();
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let variants_dir = dir.join("variants");
    reset_dir(&variants_dir)?;
    let mut variant_index = Vec::with_capacity(run.variants.len());
    for v in &run.variants {
        let file = format!("{}.{}", v.variant_id, extension_for(&v.source.language_tag));
        let path = variants_dir.join(&file);
        fs::write(&path, &v.source.source).map_err(io_err(&path))?;
        variant_index.push(VariantIndexEntry {
            variant_id: v.variant_id.clone(),
            language_tag: v.source.language_tag.clone(),
            origin: v.origin,
            llm_transcript_ref: v.llm_transcript_ref.clone(),
            filter_status: v.filter_status,
            file,
        });
    }
    write_json(&variants_dir.join("index.json"), &variant_index)?;

    let inputs_dir = dir.join("inputs");
    reset_dir(&inputs_dir)?;
    let mut input_index = Vec::with_capacity(run.inputs.len());
    for input in &run.inputs {
        let file = format!("{}.in", input.input_id);
        let path = inputs_dir.join(&file);
        fs::write(&path, &input.payload).map_err(io_err(&path))?;
        input_index.push(InputIndexEntry {
            input_id: input.input_id.clone(),
            provenance: input.provenance.clone(),
            validity: input.validity,
            file,
        });
    }
    write_json(&inputs_dir.join("index.json"), &input_index)?;

    write_json(&dir.join("testcases.json"), &run.testcases)?;

    let report = RunReport {
        task_id: run.task_id.clone(),
        config: run.config.clone(),
        tp: run.metrics.map(|m| m.tp),
        fp: run.metrics.map(|m| m.fp),
        fn_: run.metrics.map(|m| m.fn_),
        tn: run.metrics.map(|m| m.tn),
        precision: run.metrics.map(|m| m.precision),
        recall: run.metrics.map(|m| m.recall),
        f1: run.metrics.map(|m| m.f1),
        testcases: run
            .testcases
            .iter()
            .enumerate()
            .map(|(i, tc)| ReportTestCase {
                input_id: tc.input.input_id.clone(),
                oracle: tc.oracle.clone(),
                put_output: tc.election.put_output.clone(),
                verdict: run.verdicts.get(i).cloned(),
            })
            .collect(),
    };
    let report_path = dir.join("report.json");
    write_json(&report_path, &report)?;
    Ok(report_path)
}

/// Inverse of [`save_run_artifacts`].
pub fn load_run_artifacts(dir: &Path) -> Result<RunRecord, BundleError> {
    let variants_dir = dir.join("variants");
    let variant_index: Vec<VariantIndexEntry> = read_json(&variants_dir.join("index.json"))?;
    let variants = variant_index
        .into_iter()
        .map(|e| {
            let path = variants_dir.join(&e.file);
            let source = fs::read_to_string(&path).map_err(io_err(&path))?;
            Ok(ProgramVariant {
                variant_id: e.variant_id,
                source: SourceProgram {
                    language_tag: e.language_tag,
                    source,
                },
                origin: e.origin,
                llm_transcript_ref: e.llm_transcript_ref,
                filter_status: e.filter_status,
            })
        })
        .collect::<Result<Vec<_>, BundleError>>()?;

    let inputs_dir = dir.join("inputs");
    let input_index: Vec<InputIndexEntry> = read_json(&inputs_dir.join("index.json"))?;
    let inputs = input_index
        .into_iter()
        .map(|e| {
            let path = inputs_dir.join(&e.file);
            let payload = fs::read_to_string(&path).map_err(io_err(&path))?;
            Ok(GeneratedInput {
                input_id: e.input_id,
                payload,
                provenance: e.provenance,
                validity: e.validity,
            })
        })
        .collect::<Result<Vec<_>, BundleError>>()?;

    let testcases: Vec<CandidateTestCase> = read_json(&dir.join("testcases.json"))?;
    let report: RunReport = read_json(&dir.join("report.json"))?;
    let verdicts: Vec<EvalVerdict> = report.testcases.iter().filter_map(|t| t.verdict.clone()).collect();
    let metrics = match (report.tp, report.fp, report.fn_, report.tn) {
        (Some(tp), Some(fp), Some(fn_), Some(tn)) => Some(MetricsReport {
            tp,
            fp,
            fn_,
            tn,
            precision: report.precision.unwrap_or(0.0),
            recall: report.recall.unwrap_or(0.0),
            f1: report.f1.unwrap_or(0.0),
        }),
        _ => None,
    };
    Ok(RunRecord {
        task_id: report.task_id,
        config: report.config,
        variants,
        inputs,
        testcases,
        verdicts,
        metrics,
    })
}
