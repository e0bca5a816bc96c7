//! Path globs for layer maps and protected regions.
//!
//! Paths are `/`-separated and workspace-relative. Supported syntax:
//!
//! - `*` any run of characters within one path segment
//! - `?` exactly one character other than `/`
//! - `[abc]`, `[a-z]`, `[!a-z]` / `[^a-z]` character classes
//! - `**` as a whole segment: zero or more segments
//!
//! A leading `./` on either the pattern or the path is ignored.

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GlobError {
    #[error("empty glob")]
    Empty,
    #[error("unclosed character class in {0:?}")]
    UnclosedClass(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Literal(char),
    Star,
    Question,
    Class { negated: bool, ranges: Vec<(char, char)> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    AnyDepth,
    Tokens(Vec<Token>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glob {
    source: String,
    segments: Vec<Segment>,
}

fn strip_dot(s: &str) -> &str {
    let mut s = s;
    while let Some(rest) = s.strip_prefix("./") {
        s = rest;
    }
    s
}

fn parse_segment(seg: &str, source: &str) -> Result<Segment, GlobError> {
    if seg == "**" {
        return Ok(Segment::AnyDepth);
    }
    let mut tokens = Vec::new();
    let mut chars = seg.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '*' => {
                // Runs of stars inside a segment behave like one.
                while chars.peek() == Some(&'*') {
                    chars.next();
                }
                tokens.push(Token::Star);
            }
            '?' => tokens.push(Token::Question),
            '[' => {
                let mut negated = false;
                if matches!(chars.peek(), Some('!') | Some('^')) {
                    negated = true;
                    chars.next();
                }
                let mut ranges = Vec::new();
                let mut closed = false;
                let mut first = true;
                while let Some(c) = chars.next() {
                    if c == ']' && !first {
                        closed = true;
                        break;
                    }
                    first = false;
                    let mut lookahead = chars.clone();
                    if lookahead.next() == Some('-') {
                        if let Some(hi) = lookahead.next() {
                            if hi != ']' {
                                chars.next();
                                chars.next();
                                ranges.push((c, hi));
                                continue;
                            }
                        }
                    }
                    ranges.push((c, c));
                }
                if !closed {
                    return Err(GlobError::UnclosedClass(source.into()));
                }
                tokens.push(Token::Class { negated, ranges });
            }
            c => tokens.push(Token::Literal(c)),
        }
    }
    Ok(Segment::Tokens(tokens))
}

fn match_tokens(tokens: &[Token], text: &[char]) -> bool {
    // Iterative wildcard match with single-star backtracking.
    let (mut t, mut s) = (0usize, 0usize);
    let mut star: Option<(usize, usize)> = None;
    while s < text.len() {
        let advanced = match tokens.get(t) {
            Some(Token::Star) => {
                star = Some((t, s));
                t += 1;
                continue;
            }
            Some(Token::Literal(c)) => *c == text[s],
            Some(Token::Question) => true,
            Some(Token::Class { negated, ranges }) => {
                let hit = ranges.iter().any(|&(lo, hi)| lo <= text[s] && text[s] <= hi);
                hit != *negated
            }
            None => false,
        };
        if advanced {
            t += 1;
            s += 1;
        } else if let Some((st, ss)) = star {
            t = st + 1;
            s = ss + 1;
            star = Some((st, ss + 1));
        } else {
            return false;
        }
    }
    tokens[t..].iter().all(|tok| *tok == Token::Star)
}

fn match_segments(pattern: &[Segment], path: &[Vec<char>]) -> bool {
    match pattern.split_first() {
        None => path.is_empty(),
        Some((Segment::AnyDepth, rest)) => (0..=path.len()).any(|skip| match_segments(rest, &path[skip..])),
        Some((Segment::Tokens(tokens), rest)) => match path.split_first() {
            Some((seg, path_rest)) => match_tokens(tokens, seg) && match_segments(rest, path_rest),
            None => false,
        },
    }
}

impl Glob {
    pub fn new(pattern: &str) -> Result<Self, GlobError> {
        let trimmed = strip_dot(pattern.trim());
        if trimmed.is_empty() {
            return Err(GlobError::Empty);
        }
        let mut segments = Vec::new();
        for seg in trimmed.split('/').filter(|s| !s.is_empty()) {
            let seg = parse_segment(seg, pattern)?;
            // `**/**` is the same as `**`.
            if seg == Segment::AnyDepth && segments.last() == Some(&Segment::AnyDepth) {
                continue;
            }
            segments.push(seg);
        }
        Ok(Glob { source: pattern.into(), segments })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn is_match(&self, path: &str) -> bool {
        let path: Vec<Vec<char>> = strip_dot(path)
            .split('/')
            .filter(|s| !s.is_empty())
            .map(|s| s.chars().collect())
            .collect();
        match_segments(&self.segments, &path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(p: &str, path: &str) -> bool {
        Glob::new(p).unwrap().is_match(path)
    }

    #[test]
    fn double_star_spans_segments() {
        assert!(m("src/controllers/**", "src/controllers/catalog"));
        assert!(m("src/controllers/**", "src/controllers/v2/catalog.ts"));
        assert!(m("src/controllers/**", "src/controllers"));
        assert!(!m("src/controllers/**", "src/dal/catalog"));
        assert!(m("**/*.rs", "a/b/c.rs"));
        assert!(m("**/*.rs", "c.rs"));
        assert!(m("src/**/test_*.py", "src/x/y/test_a.py"));
    }

    #[test]
    fn star_stays_in_segment() {
        assert!(m("src/*", "src/a"));
        assert!(!m("src/*", "src/a/b"));
        assert!(m("*.md", "README.md"));
        assert!(!m("*.md", "docs/README.md"));
    }

    #[test]
    fn classes_and_question() {
        assert!(m("v[0-9].txt", "v3.txt"));
        assert!(!m("v[!0-9].txt", "v3.txt"));
        assert!(m("v[^0-9].txt", "vx.txt"));
        assert!(m("a?c", "abc"));
        assert!(!m("a?c", "a/c"));
        assert!(m("[]]", "]"));
        assert!(m("[a-]", "-"));
    }

    #[test]
    fn leading_dot_slash_ignored() {
        assert!(m("./src/**", "src/x"));
        assert!(m("src/**", "./src/x"));
    }

    #[test]
    fn errors() {
        assert_eq!(Glob::new("  "), Err(GlobError::Empty));
        assert!(matches!(Glob::new("src/[ab"), Err(GlobError::UnclosedClass(_))));
    }
}
