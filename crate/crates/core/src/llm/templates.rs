use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::LlmError;

/// Default sampling temperature for variant and generator prompts.
pub const DEFAULT_TEMPERATURE: f64 = 0.8;

/// Few-shot block teaching the `genlib` helper module.
pub const GENERATOR_FEW_SHOT: &str = include_str!("../../assets/generator_few_shot.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    VariantPutGuided,
    VariantSpecOnly,
    InputGenerator,
    DirectInputs,
    DirectTestcase,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::VariantPutGuided,
        TemplateId::VariantSpecOnly,
        TemplateId::InputGenerator,
        TemplateId::DirectInputs,
        TemplateId::DirectTestcase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::VariantPutGuided => "variant_put_guided",
            TemplateId::VariantSpecOnly => "variant_spec_only",
            TemplateId::InputGenerator => "input_generator",
            TemplateId::DirectInputs => "direct_inputs",
            TemplateId::DirectTestcase => "direct_testcase",
        }
    }

    fn builtin_text(self) -> &'static str {
        match self {
            TemplateId::VariantPutGuided => include_str!("../../assets/prompts/variant_put_guided.txt"),
            TemplateId::VariantSpecOnly => include_str!("../../assets/prompts/variant_spec_only.txt"),
            TemplateId::InputGenerator => include_str!("../../assets/prompts/input_generator.txt"),
            TemplateId::DirectInputs => include_str!("../../assets/prompts/direct_inputs.txt"),
            TemplateId::DirectTestcase => include_str!("../../assets/prompts/direct_testcase.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template `{s}`"))
    }
}

/// A fully rendered prompt plus the sampling parameters that key the cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub template_id: TemplateId,
    pub rendered_prompt: String,
    pub temperature: f64,
    pub sample_index: u32,
    /// Task the request belongs to. Informational, not part of the cache key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
}

impl PromptRequest {
    pub fn with_sample(mut self, temperature: f64, sample_index: u32) -> Self {
        self.temperature = temperature;
        self.sample_index = sample_index;
        self
    }

    pub fn for_task(mut self, task_id: impl Into<String>) -> Self {
        self.task_id = Some(task_id.into());
        self
    }
}

/// Editable prompt texts with `{{name}}` placeholders.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    texts: BTreeMap<TemplateId, String>,
    placeholder: Regex,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self {
            texts: TemplateId::ALL
                .into_iter()
                .map(|t| (t, t.builtin_text().to_owned()))
                .collect(),
            placeholder: Regex::new(r"\{\{\s*([A-Za-z0-9_]+)\s*\}\}").unwrap(),
        }
    }

    /// Built-in templates, overridden by any `<template_id>.txt` in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, LlmError> {
        let mut templates = Self::builtin();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.as_str()));
            if path.is_file() {
                let text = fs::read_to_string(&path).map_err(|e| LlmError::Io(e.to_string()))?;
                templates.texts.insert(id, text);
            }
        }
        Ok(templates)
    }

    pub fn set(&mut self, id: TemplateId, text: impl Into<String>) {
        self.texts.insert(id, text.into());
    }

    pub fn text(&self, id: TemplateId) -> &str {
        &self.texts[&id]
    }

    /// Substitutes every placeholder; a placeholder without a binding fails.
    /// Sampling defaults to [`DEFAULT_TEMPERATURE`] and sample 0.
    pub fn render(&self, id: TemplateId, bindings: &BTreeMap<String, String>) -> Result<PromptRequest, LlmError> {
        let template = self.text(id);
        for caps in self.placeholder.captures_iter(template) {
            let name = &caps[1];
            if !bindings.contains_key(name) {
                return Err(LlmError::MissingBinding {
                    template: id,
                    name: name.to_owned(),
                });
            }
        }
        // Single pass, so placeholder-like text inside a binding stays literal.
        let rendered = self
            .placeholder
            .replace_all(template, |caps: &regex::Captures<'_>| bindings[&caps[1]].clone())
            .into_owned();
        Ok(PromptRequest {
            template_id: id,
            rendered_prompt: rendered,
            temperature: DEFAULT_TEMPERATURE,
            sample_index: 0,
            task_id: None,
        })
    }
}

pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v.to_owned())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_guided_contains_spec_and_put() {
        let t = PromptTemplates::builtin();
        let req = t
            .render(
                TemplateId::VariantPutGuided,
                &bindings([
                    ("specification", "SPEC-TEXT"),
                    ("put_source", "int main(){}"),
                    ("language", "cpp"),
                ]),
            )
            .unwrap();
        assert!(req.rendered_prompt.contains("SPEC-TEXT"));
        assert!(req.rendered_prompt.contains("int main(){}"));
        assert!(!req.rendered_prompt.contains("{{"));
    }

    #[test]
    fn missing_few_shot_block() {
        let t = PromptTemplates::builtin();
        let err = t
            .render(TemplateId::InputGenerator, &bindings([("specification", "s")]))
            .unwrap_err();
        assert!(matches!(err, LlmError::MissingBinding { ref name, .. } if name == "few_shot"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = PromptTemplates::builtin();
        let b = bindings([("specification", "s"), ("few_shot", GENERATOR_FEW_SHOT)]);
        let a = t.render(TemplateId::InputGenerator, &b).unwrap();
        let c = t.render(TemplateId::InputGenerator, &b).unwrap();
        assert_eq!(a.rendered_prompt, c.rendered_prompt);
    }

    #[test]
    fn binding_text_is_not_reexpanded() {
        let mut t = PromptTemplates::builtin();
        t.set(TemplateId::DirectInputs, "A {{specification}} B");
        let req = t
            .render(TemplateId::DirectInputs, &bindings([("specification", "{{x}}")]))
            .unwrap();
        assert_eq!(req.rendered_prompt, "A {{x}} B");
    }

    #[test]
    fn template_ids_round_trip_through_strings() {
        for id in TemplateId::ALL {
            assert_eq!(id.as_str().parse::<TemplateId>().unwrap(), id);
        }
    }
}
