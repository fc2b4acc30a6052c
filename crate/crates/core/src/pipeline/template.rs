use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use super::PipelineError;

/// The four generation stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Summarize,
    Structure,
    Guidelines,
    Instances,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Summarize,
        Stage::Structure,
        Stage::Guidelines,
        Stage::Instances,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Summarize => "summarize",
            Stage::Structure => "structure",
            Stage::Guidelines => "guidelines",
            Stage::Instances => "instances",
        }
    }

    /// Placeholders a template for this stage must contain, each exactly once.
    /// A stage may only see the document and the outputs of earlier stages.
    pub fn placeholders(self) -> &'static [Placeholder] {
        use Placeholder::*;
        match self {
            Stage::Summarize => &[Document],
            Stage::Structure => &[Document, Summary],
            Stage::Guidelines => &[Document, Summary, StructuredJson],
            Stage::Instances => &[Document, StructuredJson, Guidelines],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placeholder {
    Document,
    Summary,
    StructuredJson,
    Guidelines,
}

impl Placeholder {
    const ALL: [Placeholder; 4] = [
        Placeholder::Document,
        Placeholder::Summary,
        Placeholder::StructuredJson,
        Placeholder::Guidelines,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Placeholder::Document => "{document}",
            Placeholder::Summary => "{summary}",
            Placeholder::StructuredJson => "{structured_json}",
            Placeholder::Guidelines => "{guidelines}",
        }
    }
}

/// Values bound to placeholders at render time.
#[derive(Debug, Clone, Default)]
pub struct Bindings<'a> {
    pub document: Option<&'a str>,
    pub summary: Option<&'a str>,
    pub structured_json: Option<&'a str>,
    pub guidelines: Option<&'a str>,
}

impl<'a> Bindings<'a> {
    fn get(&self, p: Placeholder) -> Option<&'a str> {
        match p {
            Placeholder::Document => self.document,
            Placeholder::Summary => self.summary,
            Placeholder::StructuredJson => self.structured_json,
            Placeholder::Guidelines => self.guidelines,
        }
    }
}

/// A versioned prompt template for one stage.
///
/// Only the four known placeholder tokens are substituted; any other text in
/// braces (JSON examples, say) is left as written. Substituted values are
/// never rescanned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub stage: Stage,
    pub version: String,
    #[serde(default)]
    pub system: Option<String>,
    #[serde(rename = "template")]
    pub template_text: String,
}

impl PromptTemplate {
    pub fn new(stage: Stage, version: &str, template_text: &str) -> Result<Self, PipelineError> {
        let t = PromptTemplate {
            stage,
            version: version.to_string(),
            system: None,
            template_text: template_text.to_string(),
        };
        t.check()?;
        Ok(t)
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, PipelineError> {
        let t: PromptTemplate = toml::from_str(text).map_err(|e| PipelineError::Template {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        t.check().map_err(|e| match e {
            PipelineError::Template { message, .. } => PipelineError::Template {
                origin: origin.to_string(),
                message,
            },
            other => other,
        })?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Template {
            origin: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// The shipped template for `stage`.
    pub fn builtin(stage: Stage) -> Self {
        let text = match stage {
            Stage::Summarize => include_str!("../../templates/summarize.toml"),
            Stage::Structure => include_str!("../../templates/structure.toml"),
            Stage::Guidelines => include_str!("../../templates/guidelines.toml"),
            Stage::Instances => include_str!("../../templates/instances.toml"),
        };
        Self::from_toml_str(text, stage.as_str()).expect("built-in templates are valid")
    }

    fn check(&self) -> Result<(), PipelineError> {
        let err = |message: String| PipelineError::Template {
            origin: self.stage.to_string(),
            message,
        };
        let required = self.stage.placeholders();
        for p in Placeholder::ALL {
            let count = self.template_text.matches(p.token()).count();
            match (required.contains(&p), count) {
                (true, 1) | (false, 0) => {}
                (true, n) => {
                    return Err(err(format!(
                        "{} must appear exactly once in a {} template, found {n}",
                        p.token(),
                        self.stage
                    )))
                }
                (false, _) => {
                    return Err(err(format!(
                        "{} is not available to the {} stage",
                        p.token(),
                        self.stage
                    )))
                }
            }
        }
        Ok(())
    }

    /// Substitute every required placeholder. Fails if a binding is missing.
    pub fn render(&self, bindings: &Bindings<'_>) -> Result<String, PipelineError> {
        let required = self.stage.placeholders();
        for &p in required {
            if bindings.get(p).is_none() {
                return Err(PipelineError::Template {
                    origin: self.stage.to_string(),
                    message: format!("no value bound for {}", p.token()),
                });
            }
        }
        let text = &self.template_text;
        let mut out = String::with_capacity(text.len());
        let mut rest = text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open..];
            match required.iter().find(|p| tail.starts_with(p.token())) {
                Some(&p) => {
                    out.push_str(bindings.get(p).expect("checked above"));
                    rest = &tail[p.token().len()..];
                }
                None => {
                    out.push('{');
                    rest = &tail[1..];
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// One template per stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<Stage, PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet {
            templates: Stage::ALL
                .into_iter()
                .map(|s| (s, PromptTemplate::builtin(s)))
                .collect(),
        }
    }

    /// Build a set from exactly four templates, one per stage.
    pub fn new(templates: Vec<PromptTemplate>) -> Result<Self, PipelineError> {
        let mut map = BTreeMap::new();
        for t in templates {
            let stage = t.stage;
            if map.insert(stage, t).is_some() {
                return Err(PipelineError::Template {
                    origin: stage.to_string(),
                    message: "more than one template for this stage".into(),
                });
            }
        }
        for stage in Stage::ALL {
            if !map.contains_key(&stage) {
                return Err(PipelineError::Template {
                    origin: stage.to_string(),
                    message: "no template for this stage".into(),
                });
            }
        }
        Ok(TemplateSet { templates: map })
    }

    pub fn get(&self, stage: Stage) -> &PromptTemplate {
        &self.templates[&stage]
    }

    /// Replace the template for its stage.
    pub fn set(&mut self, template: PromptTemplate) {
        self.templates.insert(template.stage, template);
    }

    pub fn versions(&self) -> BTreeMap<String, String> {
        self.templates
            .iter()
            .map(|(s, t)| (s.to_string(), t.version.clone()))
            .collect()
    }
}
