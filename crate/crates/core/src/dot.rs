//! A small reader for the subset of the DOT language the renderer emits
//! (and a bit more: comments, `graph`/`digraph`, attribute statements,
//! edge chains). Used to check emitted diagrams are well formed.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("DOT parse error at byte {offset}: {message}")]
pub struct DotError {
    pub offset: usize,
    pub message: String,
}

pub type Attrs = BTreeMap<String, String>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DotGraph {
    pub directed: bool,
    pub strict: bool,
    pub name: Option<String>,
    /// Node ids in first-mention order with their merged attributes.
    pub nodes: Vec<(String, Attrs)>,
    pub edges: Vec<(String, String, Attrs)>,
    pub graph_attrs: Attrs,
}

impl DotGraph {
    pub fn node(&self, id: &str) -> Option<&Attrs> {
        self.nodes.iter().find(|(n, _)| n == id).map(|(_, a)| a)
    }

    fn touch(&mut self, id: &str, attrs: Option<&Attrs>) {
        match self.nodes.iter_mut().find(|(n, _)| n == id) {
            Some((_, existing)) => {
                if let Some(a) = attrs {
                    existing.extend(a.iter().map(|(k, v)| (k.clone(), v.clone())));
                }
            }
            None => self.nodes.push((id.to_string(), attrs.cloned().unwrap_or_default())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Id(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Eq,
    Semi,
    Comma,
    Arrow,
    Line,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, DotError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset, message: &str| DotError {
        offset,
        message: message.to_string(),
    };
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'#' if i == 0 || bytes[i - 1] == b'\n' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let end = src[i + 2..].find("*/").ok_or_else(|| err(i, "unterminated comment"))?;
                i += end + 4;
            }
            b'{' => {
                out.push((i, Tok::LBrace));
                i += 1;
            }
            b'}' => {
                out.push((i, Tok::RBrace));
                i += 1;
            }
            b'[' => {
                out.push((i, Tok::LBracket));
                i += 1;
            }
            b']' => {
                out.push((i, Tok::RBracket));
                i += 1;
            }
            b'=' => {
                out.push((i, Tok::Eq));
                i += 1;
            }
            b';' => {
                out.push((i, Tok::Semi));
                i += 1;
            }
            b',' => {
                out.push((i, Tok::Comma));
                i += 1;
            }
            b'-' if bytes.get(i + 1) == Some(&b'>') => {
                out.push((i, Tok::Arrow));
                i += 2;
            }
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                out.push((i, Tok::Line));
                i += 2;
            }
            b'"' => {
                let start = i;
                let mut s = String::new();
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => return Err(err(start, "unterminated string")),
                        Some(b'"') => {
                            i += 1;
                            break;
                        }
                        Some(b'\\') if bytes.get(i + 1) == Some(&b'"') => {
                            s.push('"');
                            i += 2;
                        }
                        Some(_) => {
                            let ch = src[i..].chars().next().expect("in bounds");
                            s.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                out.push((start, Tok::Id(s)));
            }
            c if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' || c == b'-' || c >= 0x80 => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i];
                    let cont = d.is_ascii_alphanumeric() || d == b'_' || d == b'.' || d >= 0x80;
                    let minus = d == b'-' && !matches!(bytes.get(i + 1), Some(b'>') | Some(b'-'));
                    if cont || (minus && i == start) {
                        i += 1;
                    } else {
                        break;
                    }
                }
                if i == start {
                    return Err(err(start, "unexpected character"));
                }
                out.push((start, Tok::Id(src[start..i].to_string())));
            }
            _ => return Err(err(i, "unexpected character")),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, DotError> {
        Err(DotError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), DotError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected {want:?}"))
        }
    }

    fn id(&mut self) -> Result<String, DotError> {
        match self.peek() {
            Some(Tok::Id(_)) => match self.next() {
                Some(Tok::Id(s)) => Ok(s),
                _ => unreachable!(),
            },
            _ => self.fail("expected identifier"),
        }
    }

    fn attr_lists(&mut self) -> Result<Attrs, DotError> {
        let mut attrs = Attrs::new();
        while self.peek() == Some(&Tok::LBracket) {
            self.pos += 1;
            loop {
                match self.peek() {
                    Some(Tok::RBracket) => {
                        self.pos += 1;
                        break;
                    }
                    Some(Tok::Id(_)) => {
                        let k = self.id()?;
                        self.expect(Tok::Eq)?;
                        let v = self.id()?;
                        attrs.insert(k, v);
                        if matches!(self.peek(), Some(Tok::Comma) | Some(Tok::Semi)) {
                            self.pos += 1;
                        }
                    }
                    _ => return self.fail("malformed attribute list"),
                }
            }
        }
        Ok(attrs)
    }
}

pub fn parse(src: &str) -> Result<DotGraph, DotError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
    };
    let mut g = DotGraph::default();
    let mut kw = p.id()?;
    if kw.eq_ignore_ascii_case("strict") {
        g.strict = true;
        kw = p.id()?;
    }
    g.directed = match kw.to_ascii_lowercase().as_str() {
        "digraph" => true,
        "graph" => false,
        _ => return p.fail("expected `graph` or `digraph`"),
    };
    if let Some(Tok::Id(_)) = p.peek() {
        g.name = Some(p.id()?);
    }
    p.expect(Tok::LBrace)?;
    loop {
        match p.peek() {
            Some(Tok::RBrace) => {
                p.pos += 1;
                break;
            }
            Some(Tok::Semi) => p.pos += 1,
            Some(Tok::Id(_)) => statement(&mut p, &mut g)?,
            None => return p.fail("unexpected end of input"),
            _ => return p.fail("unexpected token"),
        }
    }
    if p.peek().is_some() {
        return p.fail("trailing input after graph");
    }
    Ok(g)
}

fn statement(p: &mut Parser, g: &mut DotGraph) -> Result<(), DotError> {
    let first = p.id()?;
    let lower = first.to_ascii_lowercase();
    if matches!(lower.as_str(), "graph" | "node" | "edge") && p.peek() == Some(&Tok::LBracket) {
        let attrs = p.attr_lists()?;
        if lower == "graph" {
            g.graph_attrs.extend(attrs);
        }
        return Ok(());
    }
    match p.peek() {
        Some(Tok::Eq) => {
            p.pos += 1;
            let v = p.id()?;
            g.graph_attrs.insert(first, v);
        }
        Some(Tok::Arrow) | Some(Tok::Line) => {
            let mut chain = vec![first];
            while let Some(op) = p.peek().cloned() {
                let ok = match op {
                    Tok::Arrow => g.directed,
                    Tok::Line => !g.directed,
                    _ => break,
                };
                if !ok {
                    return p.fail("edge operator does not match graph kind");
                }
                p.pos += 1;
                chain.push(p.id()?);
            }
            let attrs = p.attr_lists()?;
            for id in &chain {
                g.touch(id, None);
            }
            for pair in chain.windows(2) {
                g.edges.push((pair[0].clone(), pair[1].clone(), attrs.clone()));
            }
        }
        _ => {
            let attrs = p.attr_lists()?;
            g.touch(&first, Some(&attrs));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_edges_and_attrs() {
        let g = parse(
            r#"/* c */ digraph G { graph [bgcolor="white"]; node [shape=ellipse]; "Erin"; a -> b -> "c d" [label="is", color=red]; x = y }"#,
        )
        .unwrap();
        assert!(g.directed);
        assert_eq!(g.name.as_deref(), Some("G"));
        assert_eq!(g.nodes.len(), 4);
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.edges[1].2["label"], "is");
        assert_eq!(g.graph_attrs["bgcolor"], "white");
        assert_eq!(g.graph_attrs["x"], "y");
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "digraph { a -> }",
            "digraph { a [label=] }",
            "graph { a -> b }",
            "digraph { \"open }",
            "digraph { a }}",
            "tree { }",
        ] {
            assert!(parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn escaped_quotes() {
        let g = parse(r#"graph { "say \"hi\"" -- b }"#).unwrap();
        assert_eq!(g.nodes[0].0, "say \"hi\"");
    }
}
