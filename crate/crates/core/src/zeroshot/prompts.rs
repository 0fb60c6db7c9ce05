//! Exhaustive prompt search: fill every slot combination of a set of text
//! templates, then pick the prompt whose predicted VA lies closest to an
//! image's VA.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::va_distance;
use crate::par::{self, Exec};
use crate::types::VaVector;

pub const DEFAULT_EXPANSION_CAP: usize = 1_000_000;

/// Templates with `{slot}` placeholders and the candidate fillers per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplateSet {
    pub templates: Vec<String>,
    pub vocab: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_slot_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Splits a template into literal text and `{name}` slots. Braces that do
/// not enclose a valid slot name are literal.
fn parse(template: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut rest = template;
    let mut text_start = 0;
    let mut offset = 0;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_slot_name(&after[..close]) => {
                let abs_open = offset + open;
                if abs_open > text_start {
                    pieces.push(Piece::Text(&template[text_start..abs_open]));
                }
                pieces.push(Piece::Slot(&after[..close]));
                offset = abs_open + close + 2;
                text_start = offset;
                rest = &template[offset..];
            }
            _ => {
                offset += open + 1;
                rest = &template[offset..];
            }
        }
    }
    if text_start < template.len() {
        pieces.push(Piece::Text(&template[text_start..]));
    }
    pieces
}

/// Distinct slot names of a template in order of first appearance.
pub fn template_slots(template: &str) -> Vec<&str> {
    let mut seen = Vec::new();
    for p in parse(template) {
        if let Piece::Slot(s) = p {
            if !seen.contains(&s) {
                seen.push(s);
            }
        }
    }
    seen
}

impl PromptTemplateSet {
    pub fn validate(&self) -> Result<()> {
        for t in &self.templates {
            for slot in template_slots(t) {
                match self.vocab.get(slot) {
                    Some(v) if !v.is_empty() => {}
                    _ => return Err(Error::UnboundSlot(slot.to_owned())),
                }
            }
        }
        Ok(())
    }

    /// Number of fills before deduplication.
    pub fn expansion_count(&self) -> Result<u128> {
        self.validate()?;
        let mut total: u128 = 0;
        for t in &self.templates {
            let mut n: u128 = 1;
            for slot in template_slots(t) {
                n = n.saturating_mul(self.vocab[slot].len() as u128);
            }
            total = total.saturating_add(n);
        }
        Ok(total)
    }
}

pub fn generate_prompts(ts: &PromptTemplateSet) -> Result<Vec<String>> {
    generate_prompts_capped(ts, DEFAULT_EXPANSION_CAP)
}

/// Cartesian expansion of every template, in template order and then vocab
/// order (first slot varies slowest), with duplicates dropped.
pub fn generate_prompts_capped(ts: &PromptTemplateSet, cap: usize) -> Result<Vec<String>> {
    let count = ts.expansion_count()?;
    if count > cap as u128 {
        return Err(Error::ExpansionTooLarge { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut seen = HashSet::with_capacity(count as usize);
    for t in &ts.templates {
        let pieces = parse(t);
        let slots = template_slots(t);
        let vocabs: Vec<&Vec<String>> = slots.iter().map(|s| &ts.vocab[*s]).collect();
        let mut choice = vec![0usize; slots.len()];
        loop {
            let mut s = String::with_capacity(t.len() + 16);
            for p in &pieces {
                match p {
                    Piece::Text(x) => s.push_str(x),
                    Piece::Slot(name) => {
                        let k = slots.iter().position(|n| n == name).expect("slot listed");
                        s.push_str(&vocabs[k][choice[k]]);
                    }
                }
            }
            if seen.insert(s.clone()) {
                out.push(s);
            }
            if !advance(&mut choice, &vocabs) {
                break;
            }
        }
    }
    Ok(out)
}

// Odometer step, last slot fastest; false once every combination is used.
fn advance(choice: &mut [usize], vocabs: &[&Vec<String>]) -> bool {
    for k in (0..choice.len()).rev() {
        choice[k] += 1;
        if choice[k] < vocabs[k].len() {
            return true;
        }
        choice[k] = 0;
    }
    false
}

/// The prompt whose VA is nearest `image_va`; ties go to the
/// lexicographically smallest prompt.
pub fn select_prompt<F>(image_va: &VaVector, prompts: &[String], caption_va: F) -> Result<(String, f64)>
where
    F: Fn(&str) -> Result<VaVector> + Sync + Send,
{
    select_prompt_with(Exec::default(), image_va, prompts, caption_va)
}

pub fn select_prompt_with<F>(exec: Exec, image_va: &VaVector, prompts: &[String], caption_va: F) -> Result<(String, f64)>
where
    F: Fn(&str) -> Result<VaVector> + Sync + Send,
{
    if prompts.is_empty() {
        return Err(Error::EmptyPromptList);
    }
    let distances = par::map_indexed(exec, prompts.len(), |i| caption_va(&prompts[i]).map(|va| va_distance(image_va, &va)));
    let mut best: Option<(f64, &str)> = None;
    for (p, d) in prompts.iter().zip(distances) {
        let d = d?;
        let better = match best {
            None => true,
            Some((bd, bp)) => d < bd || (d == bd && p.as_str() < bp),
        };
        if better {
            best = Some((d, p));
        }
    }
    let (d, p) = best.expect("non-empty");
    Ok((p.to_owned(), d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(templates: &[&str], vocab: &[(&str, &[&str])]) -> PromptTemplateSet {
        PromptTemplateSet {
            templates: templates.iter().map(|s| s.to_string()).collect(),
            vocab: vocab.iter().map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect())).collect(),
        }
    }

    #[test]
    fn slotless_template_expands_to_itself() {
        assert_eq!(generate_prompts(&set(&["plain piano music"], &[])).unwrap(), vec!["plain piano music"]);
    }

    #[test]
    fn single_slot() {
        let p = generate_prompts(&set(&["a {mood} track"], &[("mood", &["happy", "sad"])])).unwrap();
        assert_eq!(p, vec!["a happy track", "a sad track"]);
    }

    #[test]
    fn counts_add_across_templates() {
        let ts = set(
            &["{mood} {genre}", "{tempo} beat"],
            &[("mood", &["calm", "tense"]), ("genre", &["jazz", "rock", "folk"]), ("tempo", &["slow", "mid", "fast", "frantic"])],
        );
        let p = generate_prompts(&ts).unwrap();
        assert_eq!(p.len(), 10);
        assert_eq!(&p[..3], &["calm jazz", "calm rock", "calm folk"]);
        assert_eq!(p[9], "frantic beat");
    }

    #[test]
    fn repeated_slot_uses_one_value_and_duplicates_drop() {
        let ts = set(&["{a} and {a}", "x and x"], &[("a", &["x", "y"])]);
        assert_eq!(generate_prompts(&ts).unwrap(), vec!["x and x", "y and y"]);
    }

    #[test]
    fn literal_braces_survive() {
        assert_eq!(template_slots("{not a slot} {ok}"), vec!["ok"]);
        let ts = set(&["{} {x}"], &[("x", &["1"])]);
        assert_eq!(generate_prompts(&ts).unwrap(), vec!["{} 1"]);
    }

    #[test]
    fn unbound_and_oversized() {
        assert!(matches!(generate_prompts(&set(&["{x}"], &[])), Err(Error::UnboundSlot(s)) if s == "x"));
        assert!(matches!(generate_prompts(&set(&["{x}"], &[("x", &[])])), Err(Error::UnboundSlot(_))));
        let ts = set(&["{a}{b}"], &[("a", &["1", "2", "3"]), ("b", &["1", "2", "3"])]);
        assert!(matches!(generate_prompts_capped(&ts, 8), Err(Error::ExpansionTooLarge { count: 9, cap: 8 })));
    }

    #[test]
    fn select_examples() {
        let img = VaVector::new(0.3, 0.7).unwrap();
        let one = vec!["only".to_string()];
        let (p, d) = select_prompt(&img, &one, |_| VaVector::new(0.3, 0.3)).unwrap();
        assert_eq!(p, "only");
        assert!((d - 0.4).abs() < 1e-15);
        let prompts: Vec<String> = ["b", "exact", "a"].iter().map(|s| s.to_string()).collect();
        let (p, d) = select_prompt(&img, &prompts, |s| if s == "exact" { Ok(img) } else { VaVector::new(0.9, 0.1) }).unwrap();
        assert_eq!((p.as_str(), d), ("exact", 0.0));
        assert!(matches!(select_prompt(&img, &[], |_| Ok(img)), Err(Error::EmptyPromptList)));
        let (p, _) = select_prompt(&img, &prompts, |_| VaVector::new(0.5, 0.5)).unwrap();
        assert_eq!(p, "a");
    }
}
