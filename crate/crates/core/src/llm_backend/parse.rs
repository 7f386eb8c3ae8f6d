//! Reply parsers for the structured answers the prompts ask for.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::hierarchy::normalize_name;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("expected one of {expected:?} in reply {reply:?}")]
    NoChoice { expected: Vec<String>, reply: String },
    #[error("reply {0:?} does not follow the [[X]] is a subcategory of [[Y]] scheme")]
    NoDirection(String),
}

/// Comma-separated list; trims items, drops empties and a trailing "etc.".
pub fn parse_csv_list(text: &str) -> Vec<String> {
    text.split(',')
        .map(|item| item.trim().trim_end_matches('.').trim())
        .filter(|item| !item.is_empty())
        .filter(|item| !item.eq_ignore_ascii_case("etc"))
        .map(str::to_string)
        .collect()
}

fn first_word(text: &str) -> Option<String> {
    let start = text.find(|c: char| c.is_alphabetic())?;
    let word: String = text[start..].chars().take_while(|c| c.is_alphabetic()).collect();
    Some(word.to_lowercase())
}

/// Matches the first alphabetic word of `text` against `choices`,
/// case-insensitively.
pub fn parse_choice<T: Copy>(text: &str, choices: &[(&str, T)]) -> Result<T, ParseError> {
    let word = first_word(text);
    choices
        .iter()
        .find(|(label, _)| word.as_deref() == Some(label.to_lowercase().as_str()))
        .map(|&(_, value)| value)
        .ok_or_else(|| ParseError::NoChoice {
            expected: choices.iter().map(|(l, _)| l.to_string()).collect(),
            reply: text.to_string(),
        })
}

pub fn parse_yes_no(text: &str) -> Result<bool, ParseError> {
    parse_choice(text, &[("yes", true), ("no", false)])
}

/// Extracts `(sub, super)` from "[[X]] is a subcategory of [[Y]]".
pub fn parse_direction(text: &str) -> Result<(String, String), ParseError> {
    let mut spans = Vec::with_capacity(2);
    let mut rest = text;
    while spans.len() < 2 {
        let Some(open) = rest.find("[[") else { break };
        let after = &rest[open + 2..];
        let Some(close) = after.find("]]") else { break };
        let span = after[..close].trim();
        if span.is_empty() {
            break;
        }
        spans.push(span.to_string());
        rest = &after[close + 2..];
    }
    match <[String; 2]>::try_from(spans) {
        Ok([sub, sup]) => Ok((sub, sup)),
        Err(_) => Err(ParseError::NoDirection(text.to_string())),
    }
}

/// A single name from a free-text reply: first non-empty line, stripped of
/// quotes and a trailing period.
pub fn parse_name(text: &str) -> Option<String> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    let name = line
        .trim_end_matches('.')
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '*')
        .trim_end_matches('.')
        .trim();
    (!name.is_empty()).then(|| name.to_string())
}

/// Parses "Name: description" lines and returns an entry for every requested
/// name. Names the reply does not cover map to an empty string.
pub fn parse_descriptions(text: &str, names: &[String]) -> BTreeMap<String, String> {
    let mut found: BTreeMap<String, String> = BTreeMap::new();
    for line in text.lines() {
        let Some((head, body)) = line.split_once(':') else { continue };
        let head = head
            .trim()
            .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | '-' | '*' | ')'))
            .trim_matches(|c: char| c == '*' || c == '"')
            .trim();
        let body = body.trim();
        if !head.is_empty() && !body.is_empty() {
            found.entry(normalize_name(head)).or_insert_with(|| body.to_string());
        }
    }
    names
        .iter()
        .map(|n| (n.clone(), found.get(&normalize_name(n)).cloned().unwrap_or_default()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_drops_trailing_etc() {
        assert_eq!(parse_csv_list("Dairy Goats, Meat Goats, etc."), vec!["Dairy Goats", "Meat Goats"]);
        assert_eq!(parse_csv_list(" , Boer ,, "), vec!["Boer"]);
        assert!(parse_csv_list("").is_empty());
    }

    #[test]
    fn yes_no_variants() {
        assert_eq!(parse_yes_no("Yes."), Ok(true));
        assert_eq!(parse_yes_no("no"), Ok(false));
        assert_eq!(parse_yes_no("  NO, not really"), Ok(false));
        assert_eq!(parse_yes_no("\"Yes\""), Ok(true));
        assert!(parse_yes_no("Maybe").is_err());
        assert!(parse_yes_no("").is_err());
        assert!(parse_yes_no("Yesterday").is_err());
    }

    #[test]
    fn instance_or_subcategory() {
        let choices = [("instance", true), ("subcategory", false)];
        assert_eq!(parse_choice("Instance.", &choices), Ok(true));
        assert_eq!(parse_choice("Subcategory", &choices), Ok(false));
    }

    #[test]
    fn direction_scheme() {
        assert_eq!(
            parse_direction("[[Iced Coffee]] is a subcategory of [[Coffee]]."),
            Ok(("Iced Coffee".to_string(), "Coffee".to_string()))
        );
        assert!(parse_direction("Iced Coffee is a subcategory of Coffee").is_err());
        assert!(parse_direction("[[Iced Coffee]] only").is_err());
    }

    #[test]
    fn rename_reply() {
        assert_eq!(parse_name("\"Apple Tree\".\n"), Some("Apple Tree".to_string()));
        assert_eq!(parse_name("   \n"), None);
    }

    #[test]
    fn descriptions_missing_element_is_flagged_empty() {
        let names = vec!["Chocolate Porters".to_string(), "Chocolaty Porters".to_string(), "Milk Stouts".to_string()];
        let reply = "Chocolate Porters: porters brewed with added chocolate or cocoa.\n\
                     2. Chocolaty Porters: porters with an aroma reminiscent of chocolate.";
        let map = parse_descriptions(reply, &names);
        assert_eq!(map["Chocolate Porters"], "porters brewed with added chocolate or cocoa.");
        assert_eq!(map["Chocolaty Porters"], "porters with an aroma reminiscent of chocolate.");
        assert_eq!(map["Milk Stouts"], "");
    }
}
