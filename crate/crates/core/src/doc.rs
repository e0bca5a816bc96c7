//! Indentation-structured text documents, the syntax shared by `.seed` and
//! `.replay` files.
//!
//! The accepted subset is small:
//!
//! ```text
//! # full-line comment
//! key: raw scalar text to end of line
//! quoted: "escapes \" \\ \n \t allowed"
//! nested:
//!   inner: value
//! list:
//!   - plain item
//!   - id: first key of a map item
//!     more: keys aligned with `id`
//! literal: |
//!   kept verbatim, relative to the first line's indentation
//! ```
//!
//! Every node remembers its 1-based line and column for diagnostics.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl DocError {
    pub fn new(line: usize, col: usize, message: impl Into<String>) -> Self {
        DocError { line, col, message: message.into() }
    }
}

impl fmt::Display for DocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.col, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub line: usize,
    pub col: usize,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Scalar(String),
    Map(Vec<Entry>),
    List(Vec<Node>),
    /// `key:` with nothing nested under it.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub line: usize,
    pub col: usize,
    pub node: Node,
}

impl Node {
    fn err(&self, message: impl Into<String>) -> DocError {
        DocError::new(self.line, self.col, message)
    }

    pub fn as_str(&self) -> Result<&str, DocError> {
        match &self.value {
            Value::Scalar(s) => Ok(s),
            Value::Empty => Ok(""),
            _ => Err(self.err("expected a scalar value")),
        }
    }

    pub fn as_map(&self) -> Result<&[Entry], DocError> {
        match &self.value {
            Value::Map(entries) => Ok(entries),
            Value::Empty => Ok(&[]),
            _ => Err(self.err("expected a nested block of `key: value` entries")),
        }
    }

    pub fn as_list(&self) -> Result<&[Node], DocError> {
        match &self.value {
            Value::List(items) => Ok(items),
            Value::Empty => Ok(&[]),
            _ => Err(self.err("expected a list of `- ` items")),
        }
    }

    /// Accepts either a `- ` list of scalars or a single comma-separated
    /// scalar. Blank entries are dropped.
    pub fn as_str_list(&self) -> Result<Vec<String>, DocError> {
        match &self.value {
            Value::List(items) => items.iter().map(|i| i.as_str().map(String::from)).collect(),
            Value::Scalar(s) => Ok(s
                .split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(String::from)
                .collect()),
            Value::Empty => Ok(Vec::new()),
            Value::Map(_) => Err(self.err("expected a list")),
        }
    }

    pub fn as_bool(&self) -> Result<bool, DocError> {
        match self.as_str()? {
            "true" | "yes" => Ok(true),
            "false" | "no" => Ok(false),
            other => Err(self.err(alloc::format!("expected true or false, found {other:?}"))),
        }
    }

    pub fn as_u64(&self) -> Result<u64, DocError> {
        let s = self.as_str()?;
        s.parse().map_err(|_| self.err(alloc::format!("expected a non-negative integer, found {s:?}")))
    }
}

/// Key lookup over a map node that also rejects keys nobody asked for.
pub struct Fields<'a> {
    node: &'a Node,
    entries: &'a [Entry],
    used: Vec<bool>,
}

impl<'a> Fields<'a> {
    pub fn new(node: &'a Node) -> Result<Self, DocError> {
        let entries = node.as_map()?;
        Ok(Fields { node, entries, used: alloc::vec![false; entries.len()] })
    }

    pub fn optional(&mut self, key: &str) -> Option<&'a Entry> {
        let i = self.entries.iter().position(|e| e.key == key)?;
        self.used[i] = true;
        Some(&self.entries[i])
    }

    pub fn required(&mut self, key: &str) -> Result<&'a Entry, DocError> {
        let node = self.node;
        self.optional(key)
            .ok_or_else(|| node.err(alloc::format!("missing required key `{key}`")))
    }

    pub fn finish(self) -> Result<(), DocError> {
        match self.used.iter().position(|u| !u) {
            Some(i) => {
                let e = &self.entries[i];
                Err(DocError::new(e.line, e.col, alloc::format!("unknown key `{}`", e.key)))
            }
            None => Ok(()),
        }
    }
}

struct Line<'a> {
    no: usize,
    indent: usize,
    text: &'a str,
}

struct Parser<'a> {
    raw: Vec<&'a str>,
    pos: usize,
}

fn is_key_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')
}

/// Splits `key: rest` (rest may be empty). Returns `None` when `text` does
/// not start with a key.
fn split_key(text: &str) -> Option<(&str, &str)> {
    let colon = text.find(':')?;
    let key = &text[..colon];
    let rest = &text[colon + 1..];
    if key.is_empty() || !key.chars().all(is_key_char) {
        return None;
    }
    if !rest.is_empty() && !rest.starts_with(' ') {
        return None;
    }
    Some((key, rest.trim()))
}

fn parse_quoted(s: &str, line: usize, col: usize) -> Result<String, DocError> {
    let inner = &s[1..];
    let mut out = String::new();
    let mut chars = inner.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => {
                if !inner[i + 1..].trim().is_empty() {
                    return Err(DocError::new(line, col + i + 2, "text after closing quote"));
                }
                return Ok(out);
            }
            '\\' => match chars.next() {
                Some((_, '"')) => out.push('"'),
                Some((_, '\\')) => out.push('\\'),
                Some((_, 'n')) => out.push('\n'),
                Some((_, 't')) => out.push('\t'),
                Some((j, other)) => {
                    return Err(DocError::new(line, col + j + 1, alloc::format!("unknown escape `\\{other}`")))
                }
                None => break,
            },
            c => out.push(c),
        }
    }
    Err(DocError::new(line, col, "unterminated quoted string"))
}

fn scalar(text: &str, line: usize, col: usize) -> Result<Value, DocError> {
    if text.starts_with('"') {
        parse_quoted(text, line, col).map(Value::Scalar)
    } else {
        Ok(Value::Scalar(text.to_string()))
    }
}

impl<'a> Parser<'a> {
    fn line_at(&self, idx: usize) -> Result<Option<Line<'a>>, DocError> {
        let raw = self.raw[idx];
        let body = raw.trim_start_matches(' ');
        let indent = raw.len() - body.len();
        if body.starts_with('\t') {
            return Err(DocError::new(idx + 1, indent + 1, "tabs are not allowed in indentation"));
        }
        let text = body.trim_end();
        if text.is_empty() || text.starts_with('#') {
            return Ok(None);
        }
        Ok(Some(Line { no: idx + 1, indent, text }))
    }

    /// Next significant line at or after `pos`, skipping blanks and comments.
    fn peek(&mut self) -> Result<Option<Line<'a>>, DocError> {
        while self.pos < self.raw.len() {
            if let Some(line) = self.line_at(self.pos)? {
                return Ok(Some(line));
            }
            self.pos += 1;
        }
        Ok(None)
    }

    fn parse_block(&mut self, indent: usize) -> Result<Node, DocError> {
        let first = match self.peek()? {
            Some(l) => l,
            None => return Ok(Node { line: self.raw.len(), col: 1, value: Value::Empty }),
        };
        if first.text == "-" || first.text.starts_with("- ") {
            self.parse_list(indent)
        } else {
            self.parse_map(indent, None)
        }
    }

    /// `inline` carries the first entry of a map that starts on a `- ` line.
    fn parse_map(&mut self, indent: usize, inline: Option<Line<'a>>) -> Result<Node, DocError> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut start: Option<(usize, usize)> = None;
        let mut pending = inline;
        loop {
            let line = match pending.take() {
                Some(l) => l,
                None => match self.peek()? {
                    Some(l) if l.indent < indent => break,
                    Some(l) if l.indent > indent => {
                        return Err(DocError::new(l.no, l.indent + 1, "unexpected indentation"))
                    }
                    Some(l) if l.text == "-" || l.text.starts_with("- ") => {
                        if entries.is_empty() {
                            return Err(DocError::new(l.no, l.indent + 1, "list item where a key was expected"));
                        }
                        break;
                    }
                    Some(l) => l,
                    None => break,
                },
            };
            self.pos = line.no;
            let col = line.indent + 1;
            let (key, rest) = split_key(line.text)
                .ok_or_else(|| DocError::new(line.no, col, "expected `key: value`"))?;
            if entries.iter().any(|e| e.key == key) {
                return Err(DocError::new(line.no, col, alloc::format!("duplicate key `{key}`")));
            }
            start.get_or_insert((line.no, col));
            let value_col = col + key.len() + 2;
            let node = if rest.is_empty() {
                match self.peek()? {
                    Some(next) if next.indent > indent => self.parse_block(next.indent)?,
                    _ => Node { line: line.no, col: value_col, value: Value::Empty },
                }
            } else if rest == "|" {
                self.literal_block(indent, line.no, value_col)?
            } else {
                Node { line: line.no, col: value_col, value: scalar(rest, line.no, value_col)? }
            };
            entries.push(Entry { key: key.to_string(), line: line.no, col, node });
        }
        let (line, col) = start.unwrap_or((self.pos.max(1), indent + 1));
        Ok(Node { line, col, value: Value::Map(entries) })
    }

    fn parse_list(&mut self, indent: usize) -> Result<Node, DocError> {
        let mut items = Vec::new();
        let mut start = None;
        while let Some(line) = self.peek()? {
            if line.indent < indent {
                break;
            }
            if line.indent > indent {
                return Err(DocError::new(line.no, line.indent + 1, "unexpected indentation"));
            }
            if !(line.text == "-" || line.text.starts_with("- ")) {
                return Err(DocError::new(line.no, line.indent + 1, "expected a `- ` list item"));
            }
            start.get_or_insert((line.no, line.indent + 1));
            let rest = &line.text[1..];
            let content = rest.trim_start();
            let content_indent = line.indent + 1 + (rest.len() - content.len());
            self.pos = line.no;
            let item = if content.is_empty() {
                match self.peek()? {
                    Some(next) if next.indent > indent => self.parse_block(next.indent)?,
                    _ => Node { line: line.no, col: line.indent + 1, value: Value::Empty },
                }
            } else if split_key(content).is_some() && !content.starts_with('"') {
                let inline = Line { no: line.no, indent: content_indent, text: content };
                self.parse_map(content_indent, Some(inline))?
            } else {
                Node {
                    line: line.no,
                    col: content_indent + 1,
                    value: scalar(content, line.no, content_indent + 1)?,
                }
            };
            items.push(item);
        }
        let (line, col) = start.unwrap_or((self.pos.max(1), indent + 1));
        Ok(Node { line, col, value: Value::List(items) })
    }

    /// Lines after a `key: |` that are blank or indented deeper than `indent`.
    fn literal_block(&mut self, indent: usize, line: usize, col: usize) -> Result<Node, DocError> {
        let mut lines: Vec<&str> = Vec::new();
        let mut block_indent: Option<usize> = None;
        while self.pos < self.raw.len() {
            let raw = self.raw[self.pos].trim_end_matches('\r');
            let body = raw.trim_start_matches(' ');
            if body.is_empty() {
                // Whitespace past the block indent is content (a diff context
                // line holding a single space, say).
                lines.push(match block_indent {
                    Some(bi) if raw.len() > bi => &raw[bi..],
                    _ => "",
                });
                self.pos += 1;
                continue;
            }
            let this_indent = raw.len() - body.len();
            if this_indent <= indent {
                break;
            }
            let bi = *block_indent.get_or_insert(this_indent);
            if this_indent < bi {
                return Err(DocError::new(self.pos + 1, this_indent + 1, "literal block line is under-indented"));
            }
            lines.push(&raw[bi..]);
            self.pos += 1;
        }
        while lines.last() == Some(&"") {
            lines.pop();
        }
        let mut text = String::new();
        for l in &lines {
            text.push_str(l);
            text.push('\n');
        }
        Ok(Node { line, col, value: Value::Scalar(text) })
    }
}

/// Parses a whole document. The top level must be a map (or nothing at all).
pub fn parse_document(text: &str) -> Result<Node, DocError> {
    let raw: Vec<&str> = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    let mut p = Parser { raw, pos: 0 };
    let first = match p.peek()? {
        None => return Ok(Node { line: 1, col: 1, value: Value::Map(Vec::new()) }),
        Some(l) => l,
    };
    if first.indent != 0 {
        return Err(DocError::new(first.no, first.indent + 1, "top-level keys must start in column 1"));
    }
    let root = p.parse_map(0, None)?;
    if let Some(l) = p.peek()? {
        return Err(DocError::new(l.no, l.indent + 1, "unexpected content"));
    }
    Ok(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn get<'a>(n: &'a Node, key: &str) -> &'a Node {
        &n.as_map().unwrap().iter().find(|e| e.key == key).unwrap().node
    }

    #[test]
    fn nested_maps_lists_and_literals() {
        let doc = "\
# comment
name: catalog
layers:
  controller: src/controllers/**
  dal: \"src/dal/**\"
rules:
  - id: a
    clause:
      pattern: git\\s+push
  - id: b
tags:
  - x
  - y
patch: |
  --- a/f
  +++ b/f
  @@ -1,2 +1,3 @@
   keep
   
  +add

end: 1
";
        let root = parse_document(doc).unwrap();
        assert_eq!(get(&root, "name").as_str().unwrap(), "catalog");
        assert_eq!(get(get(&root, "layers"), "dal").as_str().unwrap(), "src/dal/**");
        let rules = get(&root, "rules").as_list().unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(get(get(&rules[0], "clause"), "pattern").as_str().unwrap(), "git\\s+push");
        assert_eq!(rules[1].line, 10);
        assert_eq!(get(&root, "tags").as_str_list().unwrap(), ["x", "y"]);
        assert_eq!(
            get(&root, "patch").as_str().unwrap(),
            "--- a/f\n+++ b/f\n@@ -1,2 +1,3 @@\n keep\n \n+add\n"
        );
        assert_eq!(get(&root, "end").as_u64().unwrap(), 1);
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse_document("a: 1\n  b: 2\n").unwrap_err();
        assert_eq!((err.line, err.col), (2, 3));
        let err = parse_document("a: 1\na: 2\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("duplicate"));
        let err = parse_document("a: \"open\n").unwrap_err();
        assert!(err.message.contains("unterminated"));
        let err = parse_document("just text\n").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn empty_document_is_empty_map() {
        let root = parse_document("\n# nothing\n").unwrap();
        assert!(root.as_map().unwrap().is_empty());
    }

    #[test]
    fn fields_reports_unknown_keys() {
        let root = parse_document("a: 1\nzz: 2\n").unwrap();
        let mut f = Fields::new(&root).unwrap();
        assert!(f.required("a").is_ok());
        let err = f.finish().unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("zz"));
    }

    #[test]
    fn comma_lists() {
        let root = parse_document("t: a, b ,, c\n").unwrap();
        assert_eq!(get(&root, "t").as_str_list().unwrap(), ["a", "b", "c"]);
    }
}
