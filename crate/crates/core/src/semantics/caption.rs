use std::sync::OnceLock;

use regex::Regex;

use super::attributes::{Collar, Fit, GarmentAttributes, Neckline, ShirtLength, Sleeve};
use crate::error::{Error, Result};

/// `a {fit} {color} {pattern} top with {collar}, {neckline} neckline, {sleeve}, {shirt_length} length`
pub fn serialize_caption(a: &GarmentAttributes) -> String {
    format!(
        "a {} {} {} top with {}, {} neckline, {}, {} length",
        a.fit, a.color, a.pattern, a.collar, a.neckline, a.sleeve, a.shirt_length
    )
}

fn alternation(names: &[&str]) -> String {
    // longest first so "deep v-neck" wins over "v-neck"
    let mut v: Vec<&str> = names.to_vec();
    v.sort_by_key(|s| std::cmp::Reverse(s.len()));
    v.iter()
        .map(|s| regex::escape(s))
        .collect::<Vec<_>>()
        .join("|")
}

struct Step {
    slot: &'static str,
    re: Regex,
}

fn steps() -> &'static [Step] {
    static STEPS: OnceLock<Vec<Step>> = OnceLock::new();
    STEPS.get_or_init(|| {
        let tok = "[a-z0-9](?:[a-z0-9-]*[a-z0-9])?";
        let mk = |slot, pat: String| Step {
            slot,
            re: Regex::new(&format!("^(?:{pat})")).expect("static regex"),
        };
        vec![
            mk("fit", format!("a ({}) ", alternation(Fit::NAMES))),
            mk("color", format!("({tok}) ")),
            mk("pattern", format!("({tok}) top with ")),
            mk("collar", format!("({}), ", alternation(Collar::NAMES))),
            mk(
                "neckline",
                format!("({}) neckline, ", alternation(Neckline::NAMES)),
            ),
            mk("sleeve", format!("({}), ", alternation(Sleeve::NAMES))),
            mk(
                "shirt_length",
                format!("({}) length\\.?$", alternation(ShirtLength::NAMES)),
            ),
        ]
    })
}

/// Inverse of [`serialize_caption`]. Case and surrounding whitespace are
/// ignored, and one trailing period is accepted.
pub fn parse_caption(text: &str) -> Result<GarmentAttributes> {
    let norm = text.trim().to_lowercase();
    let mut rest = norm.as_str();
    let mut slots: Vec<&str> = Vec::with_capacity(7);
    for step in steps() {
        let caps = step.re.captures(rest).ok_or_else(|| Error::CaptionParse {
            slot: step.slot,
            detail: format!("cannot read `{}` from {:?}", step.slot, truncate(rest, 40)),
        })?;
        slots.push(caps.get(1).expect("group").as_str());
        rest = &rest[caps.get(0).expect("match").end()..];
    }
    let e = |slot| Error::CaptionParse {
        slot,
        detail: "value outside its closed set".into(),
    };
    Ok(GarmentAttributes {
        fit: Fit::from_name(slots[0]).ok_or_else(|| e("fit"))?,
        color: slots[1].to_string(),
        pattern: slots[2].to_string(),
        collar: Collar::from_name(slots[3]).ok_or_else(|| e("collar"))?,
        neckline: Neckline::from_name(slots[4]).ok_or_else(|| e("neckline"))?,
        sleeve: Sleeve::from_name(slots[5]).ok_or_else(|| e("sleeve"))?,
        shirt_length: ShirtLength::from_name(slots[6]).ok_or_else(|| e("shirt_length"))?,
    })
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

struct Cleaners {
    fence: Regex,
    blocks: Regex,
    role: Regex,
    space_before_punct: Regex,
    spaces: Regex,
    quotes: Regex,
}

fn cleaners() -> &'static Cleaners {
    static C: OnceLock<Cleaners> = OnceLock::new();
    C.get_or_init(|| Cleaners {
        fence: Regex::new(r"```[A-Za-z0-9_-]*").expect("static regex"),
        blocks: Regex::new(r"\([^()]*\)|\[[^\[\]]*\]|\{[^{}]*\}|<[^<>]*>").expect("static regex"),
        role: Regex::new(
            r"(?i)^\s*(?:assistant|system|user|ai|bot|model|caption|answer|description)\s*:\s*",
        )
        .expect("static regex"),
        space_before_punct: Regex::new(r"\s+([.,;:!?])").expect("static regex"),
        spaces: Regex::new(r"\s+").expect("static regex"),
        quotes: Regex::new(r#"^["'`*]+|["'`*]+$"#).expect("static regex"),
    })
}

fn clean_once(s: &str) -> String {
    let c = cleaners();
    let s = c.fence.replace_all(s, " ");
    let s = c.blocks.replace_all(&s, " ");
    let s = c.spaces.replace_all(&s, " ");
    let s = c.role.replace(&s, "");
    let s = c.space_before_punct.replace_all(&s, "$1");
    let s = c.quotes.replace_all(s.trim(), "");
    s.trim().to_string()
}

/// Removes captioner metadata: bracketed or parenthesised blocks, role
/// prefixes such as `Assistant:`, markdown fences, stray quotes and
/// repeated whitespace. Idempotent.
pub fn clean_caption(raw: &str) -> Result<String> {
    let mut cur = clean_once(raw);
    loop {
        let next = clean_once(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    if cur.is_empty() || cur.chars().all(|c| !c.is_alphanumeric()) {
        return Err(Error::EmptyCaption);
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::attributes::{validate_attributes, AttributeCandidate};

    fn example() -> GarmentAttributes {
        validate_attributes(&AttributeCandidate {
            fit: Some("slim".into()),
            pattern: Some("striped".into()),
            color: Some("blue".into()),
            neckline: Some("mid".into()),
            collar: Some("round neck".into()),
            sleeve: Some("short sleeve".into()),
            shirt_length: Some("normal".into()),
        })
        .unwrap()
    }

    #[test]
    fn template_instantiation() {
        assert_eq!(
            serialize_caption(&example()),
            "a slim blue striped top with round neck, mid neckline, short sleeve, normal length"
        );
    }

    #[test]
    fn parse_inverts_serialize() {
        let a = example();
        assert_eq!(parse_caption(&serialize_caption(&a)).unwrap(), a);
        let mut b = a.clone();
        b.collar = Collar::DeepVNeck;
        b.shirt_length = ShirtLength::ExtraLong;
        assert_eq!(
            parse_caption(&format!("{}.", serialize_caption(&b))).unwrap(),
            b
        );
    }

    #[test]
    fn metadata_is_cleaned_before_parsing() {
        let raw = format!("{} (model: x, tokens: 42)", serialize_caption(&example()));
        assert!(parse_caption(&raw).is_err());
        assert_eq!(
            parse_caption(&clean_caption(&raw).unwrap()).unwrap(),
            example()
        );
    }

    #[test]
    fn nonconformant_text_names_first_slot() {
        match parse_caption("hello world") {
            Err(Error::CaptionParse { slot, .. }) => assert_eq!(slot, "fit"),
            other => panic!("{other:?}"),
        }
        match parse_caption(
            "a slim blue striped top with crew neck, mid neckline, short sleeve, normal length",
        ) {
            Err(Error::CaptionParse { slot, .. }) => assert_eq!(slot, "collar"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn role_prefix() {
        assert_eq!(
            clean_caption("Assistant: a slim top.").unwrap(),
            "a slim top."
        );
    }

    #[test]
    fn fence_removed() {
        let c = serialize_caption(&example());
        let raw = format!("```text\n{c}\n```");
        assert_eq!(clean_caption(&raw).unwrap(), c);
    }

    #[test]
    fn empty_after_cleaning() {
        assert!(matches!(
            clean_caption("  [meta] (tokens: 3) "),
            Err(Error::EmptyCaption)
        ));
        assert!(matches!(clean_caption(""), Err(Error::EmptyCaption)));
    }
}
