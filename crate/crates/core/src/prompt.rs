//! Phase-specific prompt construction.
//!
//! Templates are plain text with `{{T1}}`, `{{A1}}`, `{{T2}}`, `{{MESSAGE}}`
//! and `{{CODEBOOK_XML}}` placeholders. Built-in copies are compiled in; a
//! template directory can override any of them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::corpus::{AnnotationUnit, Message, Trio, UnitPayload};

pub const NO_FOLLOW_UP: &str = "[no follow-up message]";
pub const EMPTY_MESSAGE: &str = "[empty message]";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{phase} template needs a {expected} unit")]
    UnitMismatch { phase: Phase, expected: &'static str },
    #[error("{phase} template needs a codebook")]
    MissingCodebook { phase: Phase },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Open,
    Axial,
    Selective,
    Deductive,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Open, Phase::Axial, Phase::Selective, Phase::Deductive];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Open => "open",
            Phase::Axial => "axial",
            Phase::Selective => "selective",
            Phase::Deductive => "deductive",
        }
    }

    /// Trio phases render T1/A1/T2; the deductive phase renders one message.
    pub fn uses_trios(self) -> bool {
        !matches!(self, Phase::Deductive)
    }

    pub fn uses_codebook(self) -> bool {
        matches!(self, Phase::Selective | Phase::Deductive)
    }

    fn builtin_text(self) -> &'static str {
        match self {
            Phase::Open => include_str!("../templates/open.txt"),
            Phase::Axial => include_str!("../templates/axial.txt"),
            Phase::Selective => include_str!("../templates/selective.txt"),
            Phase::Deductive => include_str!("../templates/deductive.txt"),
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown phase {s:?}"))
    }
}

/// Length guard applied to rendered prompts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudget {
    /// Character budget; `None` disables the guard.
    pub max_chars: Option<usize>,
    /// Re-render without code definitions when over budget.
    pub elide_definitions: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub phase: Phase,
    pub text: String,
    pub budget: PromptBudget,
}

impl PromptTemplate {
    pub fn builtin(phase: Phase) -> Self {
        PromptTemplate {
            phase,
            text: phase.builtin_text().to_string(),
            budget: PromptBudget::default(),
        }
    }

    /// `<dir>/<phase>.txt` if present, otherwise the built-in template.
    pub fn load(dir: Option<&Path>, phase: Phase) -> Result<Self, PromptError> {
        let Some(dir) = dir else {
            return Ok(Self::builtin(phase));
        };
        let path = dir.join(format!("{}.txt", phase.as_str()));
        if !path.exists() {
            return Ok(Self::builtin(phase));
        }
        let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(PromptTemplate {
            phase,
            text,
            budget: PromptBudget::default(),
        })
    }

    pub fn with_budget(mut self, budget: PromptBudget) -> Self {
        self.budget = budget;
        self
    }

    /// Renders the prompt for a unit, checking the unit shape and codebook
    /// requirement of the phase.
    pub fn render(&self, unit: &AnnotationUnit, cb: Option<&Codebook>) -> Result<String, PromptError> {
        let cb = match (self.phase.uses_codebook(), cb) {
            (true, None) => return Err(PromptError::MissingCodebook { phase: self.phase }),
            (true, Some(cb)) => Some(cb),
            (false, _) => None,
        };
        match (&unit.payload, self.phase.uses_trios()) {
            (UnitPayload::Trio(t), true) => Ok(self.render_trio(t, cb)),
            (UnitPayload::Message(m), false) => Ok(self.render_message(m, cb)),
            (_, true) => Err(PromptError::UnitMismatch {
                phase: self.phase,
                expected: "trio",
            }),
            (_, false) => Err(PromptError::UnitMismatch {
                phase: self.phase,
                expected: "single-turn",
            }),
        }
    }

    pub fn render_trio(&self, trio: &Trio, cb: Option<&Codebook>) -> String {
        let t2 = trio.t2.as_ref().map_or(NO_FOLLOW_UP.to_string(), |m| segment(&m.text));
        self.fill(cb, |text| {
            text.replace("{{T1}}", &segment(&trio.t1.text))
                .replace("{{A1}}", &segment(&trio.a1.text))
                .replace("{{T2}}", &t2)
                .replace("{{MESSAGE}}", &segment(&trio.t1.text))
        })
    }

    pub fn render_message(&self, msg: &Message, cb: Option<&Codebook>) -> String {
        self.fill(cb, |text| text.replace("{{MESSAGE}}", &segment(&msg.text)))
    }

    fn fill(&self, cb: Option<&Codebook>, units: impl Fn(&str) -> String) -> String {
        // Codebook first so that unit text containing a placeholder is left alone.
        let render = |with_definitions: bool| {
            let xml = cb.map(|cb| encode_codebook_xml_with(cb, with_definitions)).unwrap_or_default();
            units(&self.text.replace("{{CODEBOOK_XML}}", &xml))
        };
        let full = render(true);
        match self.budget.max_chars {
            Some(max) if full.chars().count() > max => {
                if self.budget.elide_definitions && cb.is_some() {
                    let short = render(false);
                    log::warn!(
                        "{} prompt is {} chars (budget {max}); code definitions elided ({} chars)",
                        self.phase,
                        full.chars().count(),
                        short.chars().count()
                    );
                    short
                } else {
                    log::warn!("{} prompt is {} chars (budget {max})", self.phase, full.chars().count());
                    full
                }
            }
            _ => full,
        }
    }
}

fn segment(text: &str) -> String {
    if text.trim().is_empty() {
        EMPTY_MESSAGE.to_string()
    } else {
        text.to_string()
    }
}

fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
    out
}

fn escape_attr(s: &str) -> String {
    escape_text(s).replace('"', "&quot;")
}

/// Element name for a domain: alphanumeric words in CamelCase.
fn tag_name(domain: &str) -> String {
    let tag: String = domain
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| {
            let mut cs = w.chars();
            let first = cs.next().unwrap();
            first.to_uppercase().chain(cs).collect::<String>()
        })
        .collect();
    match tag.chars().next() {
        Some(c) if c.is_alphabetic() => tag,
        _ => format!("Category{tag}"),
    }
}

pub fn encode_codebook_xml(cb: &Codebook) -> String {
    encode_codebook_xml_with(cb, true)
}

/// XML-style codebook block: one element per domain with an instruction
/// and its options, each option rendered as "Group/Item" and the list
/// closed by "Other/Specification".
pub fn encode_codebook_xml_with(cb: &Codebook, with_definitions: bool) -> String {
    let mut out = format!("<Codebook version=\"{}\">\n", cb.version_id);
    for domain in cb.domains() {
        let tag = tag_name(domain);
        let name = escape_text(domain);
        out.push_str(&format!("<{tag}>\n"));
        out.push_str("  <Instruction>\n");
        out.push_str(&format!(
            "    Identify the {name} codes that apply. Match what you find to the closest labels from the {name} Options;\n    if \"Other\" is selected, replace the label text 'Specification' by briefly specifying the context.\n"
        ));
        out.push_str("  </Instruction>\n  <Options>\n");
        for code in cb.active_codes().filter(|c| &c.domain == domain) {
            let label = escape_text(&code.group_item_path());
            if with_definitions && !code.definition.is_empty() {
                out.push_str(&format!(
                    "    <Option definition=\"{}\">{label}</Option>\n",
                    escape_attr(&code.definition)
                ));
            } else {
                out.push_str(&format!("    <Option>{label}</Option>\n"));
            }
        }
        out.push_str("    <Option>Other/Specification</Option>\n");
        out.push_str(&format!("  </Options>\n</{tag}>\n"));
    }
    out.push_str("</Codebook>");
    out
}

pub fn build_open_coding_prompt(trio: &Trio) -> String {
    PromptTemplate::builtin(Phase::Open).render_trio(trio, None)
}

pub fn build_axial_prompt(trio: &Trio) -> String {
    PromptTemplate::builtin(Phase::Axial).render_trio(trio, None)
}

pub fn build_selective_prompt(trio: &Trio, cb: &Codebook) -> String {
    PromptTemplate::builtin(Phase::Selective).render_trio(trio, Some(cb))
}

pub fn build_deductive_prompt(msg: &Message, cb: &Codebook) -> String {
    PromptTemplate::builtin(Phase::Deductive).render_message(msg, Some(cb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{seed_codebook, Code, CodeStatus};
    use crate::corpus::{Author, Stratum, UnitKind};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn msg(id: &str, author: Author, text: &str) -> Message {
        Message {
            message_id: id.into(),
            conversation_id: "c1".into(),
            index: 0,
            author,
            text: text.into(),
            timestamp: Utc.with_ymd_and_hms(2025, 5, 1, 0, 0, 0).unwrap(),
        }
    }

    fn trio(with_t2: bool) -> Trio {
        Trio {
            t1: msg("m0", Author::Teacher, "Make a quiz on fractions for 4th graders"),
            a1: msg("m1", Author::Assistant, "Here is a 5-question quiz..."),
            t2: with_t2.then(|| msg("m2", Author::Teacher, "make it shorter")),
        }
    }

    /// Checks that open/close tags pair up; returns false on any mismatch.
    fn balanced_tags(xml: &str) -> bool {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = xml;
        while let Some(start) = rest.find('<') {
            let Some(end) = rest[start..].find('>') else { return false };
            let tag = &rest[start + 1..start + end];
            rest = &rest[start + end + 1..];
            if let Some(name) = tag.strip_prefix('/') {
                if stack.pop().as_deref() != Some(name) {
                    return false;
                }
            } else {
                let name = tag.split_whitespace().next().unwrap_or("");
                if name.is_empty() {
                    return false;
                }
                stack.push(name.to_string());
            }
        }
        stack.is_empty()
    }

    #[test]
    fn open_prompt_has_segments_and_four_questions() {
        let p = build_open_coding_prompt(&trio(true));
        assert!(p.contains("Teacher request (T1):\nMake a quiz"));
        assert!(p.contains("AI response (A1):\nHere is"));
        assert!(p.contains("Teacher follow-up (T2):\nmake it shorter"));
        assert_eq!(p.matches("\n### Q").count(), 4);
        assert!(p.contains("confidence score"));
    }

    #[test]
    fn missing_follow_up_is_marked() {
        let p = build_open_coding_prompt(&trio(false));
        assert!(p.contains(&format!("Teacher follow-up (T2):\n{NO_FOLLOW_UP}")));
        let mut t = trio(true);
        t.t2.as_mut().unwrap().text = "   ".into();
        assert!(build_open_coding_prompt(&t).contains(EMPTY_MESSAGE));
    }

    #[test]
    fn axial_prompt_dimensions() {
        let p = build_axial_prompt(&trio(true));
        assert!(p.contains(r#""Information", "Explanation", "Guidance", "Question", or "Summarization""#));
        assert!(p.contains("\"Grade_K\""));
        assert!(p.contains("\"Grade_HS\""));
        assert!(p.contains("Learning Progression"));
        assert!(p.contains("Pedagogical Frameworks"));
        assert_eq!(p, build_axial_prompt(&trio(true)));
    }

    #[test]
    fn seed_xml_options() {
        let xml = encode_codebook_xml(&seed_codebook());
        assert!(xml.contains(">Student's Needs/Special Education (SpEd)</Option>"));
        assert!(balanced_tags(&xml));
        for block in xml.split("</Options>").filter(|b| b.contains("<Options>")) {
            let last = block.trim_end().lines().last().unwrap().trim();
            assert_eq!(last, "<Option>Other/Specification</Option>");
        }
        assert_eq!(xml.matches("<Options>").count(), 6);
    }

    #[test]
    fn xml_escapes_special_characters() {
        let cb = seed_codebook()
            .add_code(
                crate::codebook::NewCode::new("Other", "Q&A", "Tips <fast>", "a \"quoted\" & <b>", "t"),
                true,
            )
            .unwrap();
        let xml = encode_codebook_xml(&cb);
        assert!(xml.contains(">Q&amp;A/Tips &lt;fast&gt;</Option>"));
        assert!(xml.contains("definition=\"a &quot;quoted&quot; &amp; &lt;b&gt;\""));
        assert!(balanced_tags(&xml));
    }

    #[test]
    fn selective_prompt_embeds_codebook() {
        let cb = seed_codebook();
        let p = build_selective_prompt(&trio(true), &cb);
        assert!(p.contains(&encode_codebook_xml(&cb)));
        assert!(p.contains("closed-vocabulary"));
        assert!(p.contains("required to include a brief justification"));
        assert_eq!(p, build_selective_prompt(&trio(true), &cb));
    }

    #[test]
    fn deductive_prompt_names_dimensions_and_each_code_once() {
        let cb = seed_codebook();
        let m = msg("m9", Author::Teacher, "continue");
        let p = build_deductive_prompt(&m, &cb);
        for d in [
            "Instructional Practices",
            "Curriculum and Content Focus",
            "Student Needs and Context",
            "Assessment and Feedback",
            "Professional Responsibilities",
            "Other",
        ] {
            assert!(p.contains(d), "{d}");
        }
        for c in cb.active_codes() {
            let needle = format!(">{}</Option>", c.group_item_path());
            assert_eq!(p.matches(&needle).count(), 1, "{needle}");
        }
        assert!(p.ends_with("Message:\ncontinue\n"));
        assert_eq!(p.matches("<Codebook version=").count(), 1);
    }

    #[test]
    fn inactive_codes_are_not_offered() {
        let cb = seed_codebook()
            .merge_codes(
                "ip.collaborative-learning.gallery-walk",
                &["ip.collaborative-learning.group-work"],
            )
            .unwrap();
        let xml = encode_codebook_xml(&cb);
        assert!(!xml.contains("Gallery Walk"));
    }

    #[test]
    fn budget_elides_definitions() {
        let cb = seed_codebook();
        let m = msg("m9", Author::Teacher, "rubric please");
        let t = PromptTemplate::builtin(Phase::Deductive);
        let full = t.render_message(&m, Some(&cb));
        let short = t
            .clone()
            .with_budget(PromptBudget { max_chars: Some(1000), elide_definitions: true })
            .render_message(&m, Some(&cb));
        assert!(short.len() < full.len());
        assert!(!short.contains("definition="));
        for c in cb.active_codes() {
            assert!(short.contains(&c.group_item_path()));
        }
        let warn_only = t
            .with_budget(PromptBudget { max_chars: Some(1000), elide_definitions: false })
            .render_message(&m, Some(&cb));
        assert_eq!(warn_only, full);
    }

    #[test]
    fn render_checks_unit_shape() {
        let cb = seed_codebook();
        let unit = AnnotationUnit {
            unit_id: "m0".into(),
            kind: UnitKind::SingleTurn,
            payload: UnitPayload::Message(msg("m0", Author::Teacher, "hi")),
            stratum: Some(Stratum::Request),
        };
        let sel = PromptTemplate::builtin(Phase::Selective);
        assert!(matches!(sel.render(&unit, Some(&cb)), Err(PromptError::UnitMismatch { .. })));
        let ded = PromptTemplate::builtin(Phase::Deductive);
        assert!(matches!(ded.render(&unit, None), Err(PromptError::MissingCodebook { .. })));
        assert!(ded.render(&unit, Some(&cb)).is_ok());
    }

    #[test]
    fn template_dir_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("open.txt"), "Q: {{T1}} / {{T2}}").unwrap();
        let t = PromptTemplate::load(Some(dir.path()), Phase::Open).unwrap();
        assert_eq!(t.render_trio(&trio(false), None), format!("Q: Make a quiz on fractions for 4th graders / {NO_FOLLOW_UP}"));
        let d = PromptTemplate::load(Some(dir.path()), Phase::Deductive).unwrap();
        assert_eq!(d, PromptTemplate::builtin(Phase::Deductive));
    }

    fn arb_codebook() -> impl Strategy<Value = Codebook> {
        let label = "[A-Za-z&<>\"' /()-]{1,12}";
        proptest::collection::vec((0usize..3, 0usize..3, label, label), 1..15).prop_filter_map(
            "valid codebook",
            |rows| {
                let codes: Vec<Code> = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (d, g, item, def))| Code {
                        code_id: format!("c{i}"),
                        domain: ["Alpha & Co", "Beta<1>", "Other"][d].to_string(),
                        group: format!("G{g}"),
                        item: format!("{item}{i}"),
                        definition: def,
                        aliases: vec![],
                        cross_listed_domains: vec![],
                        status: CodeStatus::Active,
                        merge_targets: vec![],
                        provenance: None,
                    })
                    .collect();
                Codebook::new(1, None, "", vec![], vec![], codes).ok()
            },
        )
    }

    proptest! {
        #[test]
        fn xml_is_balanced_for_random_codebooks(cb in arb_codebook()) {
            let xml = encode_codebook_xml(&cb);
            prop_assert!(balanced_tags(&xml));
            prop_assert_eq!(xml.matches("<Option").count() - xml.matches("<Options>").count(),
                cb.active_codes().count() + cb.domains().len());
        }
    }
}
