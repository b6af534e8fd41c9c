//! A small XML reader/writer covering the tag-based tool dialect.
//!
//! Supports elements, attributes, text, self-closing tags, comments and the
//! five predefined entities plus numeric character references. No DTDs,
//! no namespaces, no CDATA.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed XML at byte {offset}: {message}")]
pub struct XmlError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Element(Element),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Element {
    pub name: String,
    pub attributes: Vec<(String, String)>,
    pub children: Vec<Node>,
}

impl Element {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn with_text(name: impl Into<String>, text: impl Into<String>) -> Self {
        let mut e = Self::new(name);
        e.children.push(Node::Text(text.into()));
        e
    }

    pub fn push(&mut self, child: Element) -> &mut Self {
        self.children.push(Node::Element(child));
        self
    }

    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    pub fn child(&self, name: &str) -> Option<&Element> {
        self.elements().find(|e| e.name == name)
    }

    pub fn attribute(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    /// Concatenated direct text content.
    pub fn text(&self) -> String {
        self.children
            .iter()
            .filter_map(|n| match n {
                Node::Text(t) => Some(t.as_str()),
                Node::Element(_) => None,
            })
            .collect()
    }

    pub fn has_element_children(&self) -> bool {
        self.elements().next().is_some()
    }

    /// Serializes with one element per line; text-only elements stay on one line.
    pub fn write_to(&self, out: &mut String) {
        out.push('<');
        out.push_str(&self.name);
        for (k, v) in &self.attributes {
            out.push(' ');
            out.push_str(k);
            out.push_str("=\"");
            out.push_str(&escape(v));
            out.push('"');
        }
        out.push('>');
        if self.has_element_children() {
            out.push('\n');
            for child in &self.children {
                match child {
                    Node::Element(e) => {
                        e.write_to(out);
                        out.push('\n');
                    }
                    Node::Text(t) if t.trim().is_empty() => {}
                    Node::Text(t) => {
                        out.push_str(&escape(t));
                        out.push('\n');
                    }
                }
            }
        } else {
            out.push_str(&escape(&self.text()));
        }
        out.push_str("</");
        out.push_str(&self.name);
        out.push('>');
    }

    pub fn to_xml_string(&self) -> String {
        let mut s = String::new();
        self.write_to(&mut s);
        s
    }
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str, base: usize) -> Result<String, XmlError> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    let mut consumed = 0;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let after = &rest[amp + 1..];
        let semi = after.find(';').ok_or_else(|| XmlError {
            offset: base + consumed + amp,
            message: "unterminated entity".into(),
        })?;
        let entity = &after[..semi];
        let decoded = match entity {
            "lt" => '<',
            "gt" => '>',
            "amp" => '&',
            "quot" => '"',
            "apos" => '\'',
            e if e.starts_with("#x") || e.starts_with("#X") => u32::from_str_radix(&e[2..], 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| XmlError {
                    offset: base + consumed + amp,
                    message: format!("bad character reference &{e};"),
                })?,
            e if e.starts_with('#') => e[1..]
                .parse::<u32>()
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| XmlError {
                    offset: base + consumed + amp,
                    message: format!("bad character reference &{e};"),
                })?,
            e => {
                return Err(XmlError {
                    offset: base + consumed + amp,
                    message: format!("unknown entity &{e};"),
                })
            }
        };
        out.push(decoded);
        consumed += amp + 1 + semi + 1;
        rest = &after[semi + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

struct Reader<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> XmlError {
        XmlError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn skip_misc(&mut self) -> Result<(), XmlError> {
        loop {
            self.skip_ws();
            if self.rest().starts_with("<!--") {
                let end = self.rest().find("-->").ok_or_else(|| self.err("unterminated comment"))?;
                self.pos += end + 3;
            } else if self.rest().starts_with("<?") {
                let end = self.rest().find("?>").ok_or_else(|| self.err("unterminated declaration"))?;
                self.pos += end + 2;
            } else {
                return Ok(());
            }
        }
    }

    fn name(&mut self) -> Result<String, XmlError> {
        let rest = self.rest();
        let len = rest
            .find(|c: char| !(c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':')))
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(self.err("expected a name"));
        }
        self.pos += len;
        Ok(rest[..len].to_string())
    }

    fn element(&mut self) -> Result<Element, XmlError> {
        if !self.rest().starts_with('<') {
            return Err(self.err("expected `<`"));
        }
        self.pos += 1;
        let mut element = Element::new(self.name()?);
        loop {
            self.skip_ws();
            let rest = self.rest();
            if rest.starts_with("/>") {
                self.pos += 2;
                return Ok(element);
            }
            if rest.starts_with('>') {
                self.pos += 1;
                break;
            }
            let key = self.name()?;
            self.skip_ws();
            if !self.rest().starts_with('=') {
                return Err(self.err("expected `=` after attribute name"));
            }
            self.pos += 1;
            self.skip_ws();
            let quote = self
                .rest()
                .chars()
                .next()
                .filter(|c| *c == '"' || *c == '\'')
                .ok_or_else(|| self.err("expected quoted attribute value"))?;
            self.pos += 1;
            let end = self.rest().find(quote).ok_or_else(|| self.err("unterminated attribute"))?;
            let value = unescape(&self.rest()[..end], self.pos)?;
            self.pos += end + 1;
            element.attributes.push((key, value));
        }
        loop {
            let rest = self.rest();
            if rest.is_empty() {
                return Err(self.err(format!("unclosed element <{}>", element.name)));
            }
            if rest.starts_with("</") {
                self.pos += 2;
                let closing = self.name()?;
                if closing != element.name {
                    return Err(self.err(format!(
                        "mismatched closing tag </{closing}> for <{}>",
                        element.name
                    )));
                }
                self.skip_ws();
                if !self.rest().starts_with('>') {
                    return Err(self.err("expected `>`"));
                }
                self.pos += 1;
                return Ok(element);
            }
            if rest.starts_with("<!--") {
                let end = rest.find("-->").ok_or_else(|| self.err("unterminated comment"))?;
                self.pos += end + 3;
                continue;
            }
            if rest.starts_with('<') {
                let child = self.element()?;
                element.children.push(Node::Element(child));
                continue;
            }
            let end = rest.find('<').unwrap_or(rest.len());
            let text = unescape(&rest[..end], self.pos)?;
            self.pos += end;
            match element.children.last_mut() {
                Some(Node::Text(prev)) => prev.push_str(&text),
                _ => element.children.push(Node::Text(text)),
            }
        }
    }
}

/// Parses a document consisting of exactly one root element.
pub fn parse(src: &str) -> Result<Element, XmlError> {
    let mut reader = Reader { src, pos: 0 };
    reader.skip_misc()?;
    let root = reader.element()?;
    reader.skip_misc()?;
    if !reader.rest().is_empty() {
        return Err(reader.err("trailing content after root element"));
    }
    Ok(root)
}

/// Parses the first `<tag>…</tag>` (or `<tag …>`) block embedded in free text.
pub fn parse_embedded(src: &str, tag: &str) -> Result<Element, XmlError> {
    let open_plain = format!("<{tag}>");
    let open_attr = format!("<{tag} ");
    let start = [src.find(&open_plain), src.find(&open_attr)]
        .into_iter()
        .flatten()
        .min()
        .ok_or_else(|| XmlError {
            offset: 0,
            message: format!("no <{tag}> element found"),
        })?;
    let mut reader = Reader { src, pos: start };
    reader.element()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_elements_and_entities() {
        let doc = "<?xml version=\"1.0\"?>\n<a x='1'><b>one &amp; two</b><c/><!-- skip --><d>&#65;&#x42;</d></a>";
        let root = parse(doc).unwrap();
        assert_eq!(root.attribute("x"), Some("1"));
        assert_eq!(root.child("b").unwrap().text(), "one & two");
        assert!(root.child("c").unwrap().children.is_empty());
        assert_eq!(root.child("d").unwrap().text(), "AB");
    }

    #[test]
    fn rejects_mismatched_and_unclosed_tags() {
        assert!(parse("<a><b></a>").is_err());
        assert!(parse("<a><b>").is_err());
        assert!(parse("<a></a><b></b>").is_err());
        assert!(parse("<a>&bogus;</a>").is_err());
    }

    #[test]
    fn finds_block_inside_prose() {
        let body = "Sure, calling it now.\n<invoke name=\"F\"><x>1</x></invoke>\nDone.";
        let e = parse_embedded(body, "invoke").unwrap();
        assert_eq!(e.attribute("name"), Some("F"));
        assert_eq!(e.child("x").unwrap().text(), "1");
        assert!(parse_embedded("nothing here", "invoke").is_err());
    }

    #[test]
    fn write_then_parse_preserves_text() {
        let mut root = Element::new("r");
        root.push(Element::with_text("t", "a < b & \"c\""));
        let s = root.to_xml_string();
        assert_eq!(s, "<r>\n<t>a &lt; b &amp; &quot;c&quot;</t>\n</r>");
        assert_eq!(parse(&s).unwrap().child("t").unwrap().text(), "a < b & \"c\"");
    }
}
