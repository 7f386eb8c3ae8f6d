//! Prompt catalog and rendering.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::normalize_name;
use crate::oracle::OracleContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Existence,
    Listing,
    ListingContinuation,
    Description,
    VerifyInstance,
    VerifyPart,
    VerifySeed,
    VerifySubcat,
    Rename,
    SynonymInterchangeable,
    SynonymDirection,
}

const LISTING: &str = "{lineage}List all of the most important subcategories of {C}. Skip explanations and use a \
comma-separated format like this: important subcategory, another important subcategory, another important \
subcategory, etc.";

impl TemplateName {
    pub const ALL: [TemplateName; 11] = [
        TemplateName::Existence,
        TemplateName::Listing,
        TemplateName::ListingContinuation,
        TemplateName::Description,
        TemplateName::VerifyInstance,
        TemplateName::VerifyPart,
        TemplateName::VerifySeed,
        TemplateName::VerifySubcat,
        TemplateName::Rename,
        TemplateName::SynonymInterchangeable,
        TemplateName::SynonymDirection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Existence => "existence",
            TemplateName::Listing => "listing",
            TemplateName::ListingContinuation => "listing_continuation",
            TemplateName::Description => "description",
            TemplateName::VerifyInstance => "verify_instance",
            TemplateName::VerifyPart => "verify_part",
            TemplateName::VerifySeed => "verify_seed",
            TemplateName::VerifySubcat => "verify_subcat",
            TemplateName::Rename => "rename",
            TemplateName::SynonymInterchangeable => "synonym_interchangeable",
            TemplateName::SynonymDirection => "synonym_direction",
        }
    }

    /// Template text. `{lineage}` expands to the one or two sentences placing
    /// `C` below its discovering superconcept `D` and the seed; `{seed_clause}`
    /// expands to "C is a subcategory of C0. " unless `C` is the seed.
    pub fn body(self) -> String {
        match self {
            TemplateName::Existence => {
                "{lineage}Are there any generally accepted subcategories of {C}? Answer only with yes or no.".into()
            }
            TemplateName::Listing => LISTING.into(),
            TemplateName::ListingContinuation => format!("{LISTING} Start your answer with \"{{t}}\""),
            TemplateName::Description => "{lineage}The list: {items}.\nGive a brief description of every term on \
the list, considered as a subcategory of {C}, without the use of examples, in the following form:\nList element 1: \
brief description for list element 1.\nList element 2: brief description for list element 2.\n..."
                .into(),
            TemplateName::VerifyInstance => "Is {D} a specific instance or a subcategory of the category {C0}? \
Answer only with Instance or Subcategory."
                .into(),
            TemplateName::VerifyPart => {
                "Is {D} a part or a subcategory of the category {C0}? Answer only with Part or Subcategory.".into()
            }
            TemplateName::VerifySeed => {
                "Can {D} be considered a subcategory of {C0}? Answer only with yes or no.".into()
            }
            TemplateName::VerifySubcat => "{seed_clause}Is {D} typically understood as a subcategory of {C}? \
Answer only with yes or no."
                .into(),
            TemplateName::Rename => "{seed_clause}The following description outlines the characteristics of a \
subcategory of {C}. Provide a concise and unambiguous name for it. Provide only the name without any \
explanation.\n{desc}"
                .into(),
            TemplateName::SynonymInterchangeable => "In the context of {C0}, are {D1} and {D2} typically used \
interchangeably? Answer only with yes or no."
                .into(),
            TemplateName::SynonymDirection => "Consider the terms {D1} and {D2}. Which of the terms is a \
subcategory of the other one? Answer in the following scheme: [[X]] is a subcategory of [[Y]]."
                .into(),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template} needs a value for {{{placeholder}}}")]
    Unbound { template: TemplateName, placeholder: String },
    #[error("template {template} has an unterminated placeholder")]
    Malformed { template: TemplateName },
}

/// Values substituted into a template. Letters follow the prompt catalog:
/// in existence and listing `D` is the superconcept `C` was discovered
/// under; in verification `D` is the candidate and `C` its superconcept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings {
    pub c0: Option<String>,
    pub c: Option<String>,
    pub d: Option<String>,
    pub d1: Option<String>,
    pub d2: Option<String>,
    pub t: Option<String>,
    pub items: Option<Vec<String>>,
    pub desc: Option<String>,
}

impl Bindings {
    pub fn seed(c0: &str) -> Self {
        Bindings { c0: Some(c0.to_string()), ..Default::default() }
    }

    pub fn with_c(mut self, c: &str) -> Self {
        self.c = Some(c.to_string());
        self
    }

    pub fn with_d(mut self, d: Option<&str>) -> Self {
        self.d = d.map(str::to_string);
        self
    }

    pub fn with_pair(mut self, d1: &str, d2: &str) -> Self {
        self.d1 = Some(d1.to_string());
        self.d2 = Some(d2.to_string());
        self
    }

    pub fn with_token(mut self, t: &str) -> Self {
        self.t = Some(t.to_string());
        self
    }

    pub fn with_items(mut self, items: &[String]) -> Self {
        self.items = Some(items.to_vec());
        self
    }

    pub fn with_desc(mut self, desc: &str) -> Self {
        self.desc = Some(desc.to_string());
        self
    }

    // Concept names occurring in the prompt, in a fixed order.
    fn concept_names(&self) -> Vec<&str> {
        [&self.c0, &self.d, &self.c, &self.d1, &self.d2]
            .into_iter()
            .flatten()
            .map(String::as_str)
            .collect()
    }
}

fn same(a: &str, b: &str) -> bool {
    normalize_name(a) == normalize_name(b)
}

fn lineage(b: &Bindings, template: TemplateName) -> Result<String, TemplateError> {
    let c0 = require(template, "C0", &b.c0)?;
    let c = require(template, "C", &b.c)?;
    if same(c, c0) {
        return Ok(String::new());
    }
    Ok(match b.d.as_deref() {
        Some(d) if !same(d, c0) => format!("{d} is a subcategory of {c0}. {c} is a subcategory of {d}. "),
        _ => format!("{c} is a subcategory of {c0}. "),
    })
}

fn seed_clause(b: &Bindings, template: TemplateName) -> Result<String, TemplateError> {
    let c0 = require(template, "C0", &b.c0)?;
    let c = require(template, "C", &b.c)?;
    Ok(if same(c, c0) { String::new() } else { format!("{c} is a subcategory of {c0}. ") })
}

fn require<'a>(template: TemplateName, name: &str, value: &'a Option<String>) -> Result<&'a str, TemplateError> {
    value.as_deref().ok_or_else(|| TemplateError::Unbound { template, placeholder: name.to_string() })
}

/// Renders `template`, then appends one `Name: description.` line for every
/// concept in the prompt that has a description in `ctx`.
pub fn render(template: TemplateName, bindings: &Bindings, ctx: &OracleContext) -> Result<String, TemplateError> {
    let body = template.body();
    let mut out = String::with_capacity(body.len() + 64);
    let mut rest = body.as_str();
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start + 1..];
        let end = tail.find('}').ok_or(TemplateError::Malformed { template })?;
        let key = &tail[..end];
        let value = match key {
            "C0" => require(template, key, &bindings.c0)?.to_string(),
            "C" => require(template, key, &bindings.c)?.to_string(),
            "D" => require(template, key, &bindings.d)?.to_string(),
            "D1" => require(template, key, &bindings.d1)?.to_string(),
            "D2" => require(template, key, &bindings.d2)?.to_string(),
            "t" => require(template, key, &bindings.t)?.to_string(),
            "desc" => require(template, key, &bindings.desc)?.to_string(),
            "items" => bindings
                .items
                .as_ref()
                .ok_or_else(|| TemplateError::Unbound { template, placeholder: key.into() })?
                .join(", "),
            "lineage" => lineage(bindings, template)?,
            "seed_clause" => seed_clause(bindings, template)?,
            other => return Err(TemplateError::Unbound { template, placeholder: other.to_string() }),
        };
        out.push_str(&value);
        rest = &tail[end + 1..];
    }
    out.push_str(rest);

    let mut seen = BTreeSet::new();
    let mut block = Vec::new();
    for name in bindings.concept_names() {
        if !seen.insert(normalize_name(name)) {
            continue;
        }
        if let Some(text) = ctx.descriptions.get(name).filter(|t| !t.trim().is_empty()) {
            let text = text.trim();
            let stop = if text.ends_with(['.', '!', '?']) { "" } else { "." };
            block.push(format!("{name}: {text}{stop}"));
        }
    }
    if !block.is_empty() {
        out.push_str("\n\n");
        out.push_str(&block.join("\n"));
    }
    Ok(out)
}
