//! Versioned chat prompt templates with `{placeholder}` substitution.
//!
//! A template file starts with `# key: value` header lines (`name`,
//! `version`, `placeholders`), followed by an optional `[system]` section and
//! a `[user]` section.

use std::collections::{BTreeMap, BTreeSet};

use skillmux_core::corpus::{truncate_chars, Skill};
use skillmux_core::forge::QueryStyle;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template `{template}`: {message}")]
    Malformed { template: String, message: String },
    #[error("template `{template}` needs a value for `{placeholder}`")]
    MissingValue { template: String, placeholder: String },
    #[error("template `{template}` has no placeholder `{placeholder}`")]
    UnknownValue { template: String, placeholder: String },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    pub version: u32,
    pub placeholders: BTreeSet<String>,
    pub system: Option<String>,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub template: String,
    pub version: u32,
    pub system: Option<String>,
    pub user: String,
}

const BUILTIN: [(&str, &str); 6] = [
    ("query_generation", include_str!("../templates/query_generation.txt")),
    ("distractor", include_str!("../templates/distractor.txt")),
    ("query_scenario", include_str!("../templates/query_scenario.txt")),
    ("query_developer", include_str!("../templates/query_developer.txt")),
    ("query_indirect", include_str!("../templates/query_indirect.txt")),
    ("equivalence", include_str!("../templates/equivalence.txt")),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

pub fn builtin(name: &str) -> Result<Template, PromptError> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))?;
    Template::parse(text)
}

pub fn style_template(style: QueryStyle) -> &'static str {
    match style {
        QueryStyle::Scenario => "query_scenario",
        QueryStyle::Developer => "query_developer",
        QueryStyle::Indirect => "query_indirect",
    }
}

fn placeholders_in(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if after[..end].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && end > 0 => {
                out.insert(after[..end].to_string());
                rest = &after[end + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

impl Template {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut header = BTreeMap::new();
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            if current.is_none() {
                if let Some(h) = line.strip_prefix("# ") {
                    if let Some((k, v)) = h.split_once(':') {
                        header.insert(k.trim().to_string(), v.trim().to_string());
                    }
                    continue;
                }
            }
            let t = line.trim();
            if t == "[system]" || t == "[user]" {
                current = Some(t.trim_matches(['[', ']']).to_string());
                sections.entry(current.clone().expect("just set")).or_default();
                continue;
            }
            if let Some(sec) = &current {
                sections.get_mut(sec).expect("created on entry").push(line);
            }
        }
        let name = header.get("name").cloned().unwrap_or_default();
        let bad = |message: &str| PromptError::Malformed {
            template: name.clone(),
            message: message.to_string(),
        };
        if name.is_empty() {
            return Err(bad("missing `name` header"));
        }
        let version = header
            .get("version")
            .ok_or_else(|| bad("missing `version` header"))?
            .parse()
            .map_err(|_| bad("`version` is not an integer"))?;
        let join = |lines: &Vec<&str>| lines.join("\n").trim().to_string();
        let user = sections
            .get("user")
            .map(join)
            .ok_or_else(|| bad("missing [user] section"))?;
        let system = sections.get("system").map(join);
        let mut found = placeholders_in(&user);
        if let Some(s) = &system {
            found.extend(placeholders_in(s));
        }
        if let Some(declared) = header.get("placeholders") {
            let declared: BTreeSet<String> = declared
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            if declared != found {
                return Err(bad("declared placeholders differ from those used"));
            }
        }
        Ok(Self {
            name,
            version,
            placeholders: found,
            system,
            user,
        })
    }

    fn fill(&self, text: &str, values: &BTreeMap<&str, String>) -> String {
        let mut out = text.to_string();
        for p in &self.placeholders {
            out = out.replace(&format!("{{{p}}}"), &values[p.as_str()]);
        }
        out
    }

    /// Every placeholder must be given and every given key must be a placeholder.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<Rendered, PromptError> {
        if let Some(p) = self.placeholders.iter().find(|p| !values.contains_key(p.as_str())) {
            return Err(PromptError::MissingValue {
                template: self.name.clone(),
                placeholder: p.clone(),
            });
        }
        if let Some(k) = values.keys().find(|k| !self.placeholders.contains(**k)) {
            return Err(PromptError::UnknownValue {
                template: self.name.clone(),
                placeholder: k.to_string(),
            });
        }
        Ok(Rendered {
            template: self.name.clone(),
            version: self.version,
            system: self.system.as_ref().map(|s| self.fill(s, values)),
            user: self.fill(&self.user, values),
        })
    }
}

/// Body preview length for generation prompts.
pub const BODY_PREVIEW_CHARS: usize = 2000;

/// Placeholder values for a single-skill template.
pub fn skill_values(template: &Template, skill: &Skill) -> BTreeMap<&'static str, String> {
    let body = truncate_chars(&skill.body, BODY_PREVIEW_CHARS).to_string();
    let mut v = BTreeMap::new();
    for (k, val) in [
        ("name", skill.name.clone()),
        ("skill_name", skill.name.clone()),
        ("category", skill.category.clone()),
        ("description", skill.description.clone()),
        ("body", body.clone()),
        ("body_preview", body.clone()),
        ("body_truncated", body),
    ] {
        if template.placeholders.contains(k) {
            v.insert(k, val);
        }
    }
    v
}
