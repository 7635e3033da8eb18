//! Line-oriented N-Triples subset: IRIs and literals, no blank nodes.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Term {
    Iri {
        value: String,
    },
    Literal {
        value: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        datatype: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lang: Option<String>,
    },
}

impl Term {
    pub fn iri(value: impl Into<String>) -> Self {
        Term::Iri { value: value.into() }
    }

    pub fn literal(value: impl Into<String>) -> Self {
        Term::Literal {
            value: value.into(),
            datatype: None,
            lang: None,
        }
    }

    pub fn lang_literal(value: impl Into<String>, lang: impl Into<String>) -> Self {
        Term::Literal {
            value: value.into(),
            datatype: None,
            lang: Some(lang.into()),
        }
    }

    pub fn typed_literal(value: impl Into<String>, datatype: impl Into<String>) -> Self {
        Term::Literal {
            value: value.into(),
            datatype: Some(datatype.into()),
            lang: None,
        }
    }

    /// IRI string or literal lexical form.
    pub fn lexical(&self) -> &str {
        match self {
            Term::Iri { value } | Term::Literal { value, .. } => value,
        }
    }

    pub fn is_iri(&self) -> bool {
        matches!(self, Term::Iri { .. })
    }

    pub fn as_iri(&self) -> Option<&str> {
        match self {
            Term::Iri { value } => Some(value),
            Term::Literal { .. } => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri { value } => write_iri(f, value),
            Term::Literal { value, datatype, lang } => {
                f.write_str("\"")?;
                for c in value.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\r' => f.write_str("\\r")?,
                        '\t' => f.write_str("\\t")?,
                        c if (c as u32) < 0x20 => write!(f, "\\u{:04X}", c as u32)?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")?;
                if let Some(lang) = lang {
                    write!(f, "@{lang}")?;
                } else if let Some(dt) = datatype {
                    f.write_str("^^")?;
                    write_iri(f, dt)?;
                }
                Ok(())
            }
        }
    }
}

fn write_iri(f: &mut fmt::Formatter<'_>, iri: &str) -> fmt::Result {
    f.write_str("<")?;
    for c in iri.chars() {
        match c {
            c if (c as u32) <= 0x20 || "<>\"{}|^`\\".contains(c) => write!(f, "\\u{:04X}", c as u32)?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str(">")
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: Term,
}

impl Triple {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: Term) -> Self {
        Self {
            subject: subject.into(),
            predicate: predicate.into(),
            object,
        }
    }

    /// One N-Triples statement line, without the trailing newline.
    pub fn to_ntriples(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_iri(f, &self.subject)?;
        f.write_str(" ")?;
        write_iri(f, &self.predicate)?;
        write!(f, " {} .", self.object)
    }
}

/// Parses N-Triples text into statements in file order. Blank lines and
/// `#` comment lines are skipped.
pub fn parse_ntriples(text: &str) -> Result<Vec<Triple>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let triple = LineParser::new(trimmed)
            .statement()
            .map_err(|message| IngestError::Parse { line: i + 1, message })?;
        out.push(triple);
    }
    Ok(out)
}

struct LineParser<'a> {
    rest: &'a str,
}

impl<'a> LineParser<'a> {
    fn new(line: &'a str) -> Self {
        Self { rest: line }
    }

    fn statement(mut self) -> Result<Triple, String> {
        let subject = self.subject()?;
        self.skip_ws();
        let predicate = self.iri("predicate")?;
        self.skip_ws();
        let object = self.object()?;
        self.skip_ws();
        if !self.eat('.') {
            return Err(format!("expected '.' at `{}`", preview(self.rest)));
        }
        self.skip_ws();
        if !(self.rest.is_empty() || self.rest.starts_with('#')) {
            return Err(format!("trailing content `{}`", preview(self.rest)));
        }
        Ok(Triple {
            subject,
            predicate,
            object,
        })
    }

    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start_matches([' ', '\t']);
    }

    fn eat(&mut self, c: char) -> bool {
        if let Some(r) = self.rest.strip_prefix(c) {
            self.rest = r;
            true
        } else {
            false
        }
    }

    fn subject(&mut self) -> Result<String, String> {
        if self.rest.starts_with("_:") {
            return Err("blank nodes are not supported".into());
        }
        self.iri("subject")
    }

    fn object(&mut self) -> Result<Term, String> {
        match self.rest.chars().next() {
            Some('<') => Ok(Term::Iri {
                value: self.iri("object")?,
            }),
            Some('"') => self.literal(),
            Some('_') => Err("blank nodes are not supported".into()),
            _ => Err(format!("expected object at `{}`", preview(self.rest))),
        }
    }

    fn iri(&mut self, role: &str) -> Result<String, String> {
        if !self.eat('<') {
            return Err(format!("expected <{role} IRI> at `{}`", preview(self.rest)));
        }
        let mut value = String::new();
        let mut chars = self.rest.char_indices();
        loop {
            match chars.next() {
                None => return Err(format!("unterminated {role} IRI")),
                Some((i, '>')) => {
                    self.rest = &self.rest[i + 1..];
                    break;
                }
                Some((_, '\\')) => value.push(unicode_escape(&mut chars)?),
                Some((_, c)) => value.push(c),
            }
        }
        if value.is_empty() || !value.contains(':') {
            return Err(format!("{role} `{value}` is not an absolute IRI"));
        }
        Ok(value)
    }

    fn literal(&mut self) -> Result<Term, String> {
        self.eat('"');
        let mut value = String::new();
        let mut chars = self.rest.char_indices();
        loop {
            match chars.next() {
                None => return Err("unterminated literal".into()),
                Some((i, '"')) => {
                    self.rest = &self.rest[i + 1..];
                    break;
                }
                Some((_, '\\')) => {
                    let c = match chars.clone().next() {
                        Some((_, 'u' | 'U')) => unicode_escape(&mut chars)?,
                        Some((_, e)) => {
                            chars.next();
                            match e {
                                't' => '\t',
                                'b' => '\u{8}',
                                'n' => '\n',
                                'r' => '\r',
                                'f' => '\u{c}',
                                '"' => '"',
                                '\'' => '\'',
                                '\\' => '\\',
                                other => return Err(format!("invalid escape `\\{other}`")),
                            }
                        }
                        None => return Err("unterminated literal".into()),
                    };
                    value.push(c);
                }
                Some((_, c)) => value.push(c),
            }
        }
        if self.eat('@') {
            let end = self
                .rest
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-'))
                .unwrap_or(self.rest.len());
            let lang = &self.rest[..end];
            if lang.is_empty() || !lang.starts_with(|c: char| c.is_ascii_alphabetic()) {
                return Err("invalid language tag".into());
            }
            self.rest = &self.rest[end..];
            return Ok(Term::Literal {
                value,
                datatype: None,
                lang: Some(lang.to_string()),
            });
        }
        if let Some(r) = self.rest.strip_prefix("^^") {
            self.rest = r;
            let dt = self.iri("datatype")?;
            return Ok(Term::Literal {
                value,
                datatype: Some(dt),
                lang: None,
            });
        }
        Ok(Term::Literal {
            value,
            datatype: None,
            lang: None,
        })
    }
}

fn unicode_escape(chars: &mut std::str::CharIndices<'_>) -> Result<char, String> {
    let width = match chars.next() {
        Some((_, 'u')) => 4,
        Some((_, 'U')) => 8,
        Some((_, c)) => return Err(format!("invalid escape `\\{c}`")),
        None => return Err("dangling escape".into()),
    };
    let hex: String = chars.by_ref().take(width).map(|(_, c)| c).collect();
    if hex.len() != width {
        return Err("truncated unicode escape".into());
    }
    u32::from_str_radix(&hex, 16)
        .ok()
        .and_then(char::from_u32)
        .ok_or_else(|| format!("invalid unicode escape `{hex}`"))
}

fn preview(s: &str) -> String {
    s.chars().take(24).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_statement() {
        let t = parse_ntriples("<http://a> <http://p> <http://b> .").unwrap();
        assert_eq!(t, vec![Triple::new("http://a", "http://p", Term::iri("http://b"))]);
    }

    #[test]
    fn language_literal() {
        let t = parse_ntriples("<http://a> <http://p> \"Berlin\"@en .").unwrap();
        assert_eq!(t[0].object, Term::lang_literal("Berlin", "en"));
    }

    #[test]
    fn typed_literal_and_escapes() {
        let text = r#"<http://a> <http://p> "1.78\"\né"^^<http://www.w3.org/2001/XMLSchema#double> ."#;
        let t = parse_ntriples(text).unwrap();
        assert_eq!(
            t[0].object,
            Term::typed_literal("1.78\"\n\u{e9}", "http://www.w3.org/2001/XMLSchema#double")
        );
    }

    #[test]
    fn comments_blank_lines_and_order() {
        let text = "# header\n\n<http://a> <http://p> <http://b> .\n  \n<http://a> <http://q> \"x\" . # trailing\n";
        let t = parse_ntriples(text).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].predicate, "http://q");
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_ntriples("").unwrap().is_empty());
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let cases = [
            "<http://a> <http://p> <http://b>",
            "<http://a> <http://p> .",
            "_:b <http://p> <http://b> .",
            "<http://a> <http://p> \"open .",
            "<a> <http://p> <http://b> .",
            "<http://a> <http://p> <http://b> . junk",
        ];
        for case in cases {
            let text = format!("<http://ok> <http://p> <http://o> .\n{case}\n");
            match parse_ntriples(&text) {
                Err(IngestError::Parse { line, .. }) => assert_eq!(line, 2, "{case}"),
                other => panic!("{case}: {other:?}"),
            }
        }
    }

    fn arb_iri() -> impl Strategy<Value = String> {
        "[a-z]{1,8}://[a-zA-Z0-9_./#%()' -]{0,20}"
    }

    fn arb_term() -> impl Strategy<Value = Term> {
        prop_oneof![
            arb_iri().prop_map(Term::iri),
            any::<String>().prop_map(Term::literal),
            (any::<String>(), "[a-z]{2,3}(-[A-Z]{2})?").prop_map(|(v, l)| Term::lang_literal(v, l)),
            (any::<String>(), arb_iri()).prop_map(|(v, d)| Term::typed_literal(v, d)),
        ]
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(s in arb_iri(), p in arb_iri(), o in arb_term()) {
            let t = Triple::new(s, p, o);
            let line = t.to_ntriples();
            prop_assert!(!line.contains('\n'));
            let back = parse_ntriples(&line).unwrap();
            prop_assert_eq!(back, vec![t]);
        }
    }
}
