//! Unified diff parsing and application.
//!
//! Accepts plain `diff -u` output and `git diff` output (extended header lines
//! such as `diff --git`, `index` and mode lines are skipped). `/dev/null` on
//! either side marks file creation or deletion.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("diff line {line}: {message}")]
pub struct DiffError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> DiffError {
    DiffError { line, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HunkLine {
    Context(String),
    Added(String),
    Removed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    /// The `@@ ... @@` line as written.
    pub header: String,
    pub lines: Vec<HunkLine>,
}

impl Hunk {
    pub fn added(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter_map(|l| match l {
            HunkLine::Added(s) => Some(s.as_str()),
            _ => None,
        })
    }

    pub fn removed(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter_map(|l| match l {
            HunkLine::Removed(s) => Some(s.as_str()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilePatch {
    /// `None` for `/dev/null` (file creation).
    pub old_path: Option<String>,
    /// `None` for `/dev/null` (file deletion).
    pub new_path: Option<String>,
    pub hunks: Vec<Hunk>,
    /// The old side's last line has no trailing newline.
    pub old_missing_newline: bool,
    /// The new side's last line has no trailing newline.
    pub new_missing_newline: bool,
}

impl FilePatch {
    /// The path this patch is about: the new path, or the old one for deletions.
    pub fn path(&self) -> &str {
        self.new_path.as_deref().or(self.old_path.as_deref()).unwrap_or("")
    }
}

fn parse_path(rest: &str) -> Option<String> {
    // Drop a trailing tab-separated timestamp.
    let raw = rest.split('\t').next().unwrap_or(rest).trim_end();
    let raw = raw.strip_prefix('"').and_then(|r| r.strip_suffix('"')).unwrap_or(raw);
    if raw == "/dev/null" {
        return None;
    }
    let stripped = ["a/", "b/"].iter().find_map(|p| raw.strip_prefix(p)).unwrap_or(raw);
    Some(stripped.to_string())
}

fn parse_range(s: &str, line: usize) -> Result<(usize, usize), DiffError> {
    let (start, len) = match s.split_once(',') {
        Some((a, b)) => (a, Some(b)),
        None => (s, None),
    };
    let start = start.parse().map_err(|_| err(line, "bad hunk range"))?;
    let len = match len {
        Some(l) => l.parse().map_err(|_| err(line, "bad hunk range"))?,
        None => 1,
    };
    Ok((start, len))
}

fn parse_hunk_header(text: &str, line: usize) -> Result<(usize, usize, usize, usize), DiffError> {
    let inner = text
        .strip_prefix("@@ ")
        .and_then(|r| r.split_once(" @@"))
        .map(|(ranges, _)| ranges)
        .ok_or_else(|| err(line, "malformed hunk header"))?;
    let (old, new) = inner.split_once(' ').ok_or_else(|| err(line, "malformed hunk header"))?;
    let old = old.strip_prefix('-').ok_or_else(|| err(line, "malformed hunk header"))?;
    let new = new.strip_prefix('+').ok_or_else(|| err(line, "malformed hunk header"))?;
    let (os, ol) = parse_range(old, line)?;
    let (ns, nl) = parse_range(new, line)?;
    Ok((os, ol, ns, nl))
}

/// Parses every file patch in `text`. Empty input yields no patches.
pub fn parse_unified(text: &str) -> Result<Vec<FilePatch>, DiffError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut patches = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if !line.starts_with("--- ") {
            if line.starts_with("@@ ") || line.starts_with("+++ ") {
                return Err(err(i + 1, "hunk or `+++` line without a `---` file header"));
            }
            // Preamble (`diff --git`, `index`, mode lines, trailing notes).
            i += 1;
            continue;
        }
        let old_path = parse_path(&line[4..]);
        let new_line = lines.get(i + 1).copied().unwrap_or("");
        let new_rest = new_line
            .strip_prefix("+++ ")
            .ok_or_else(|| err(i + 2, "expected `+++` after `---`"))?;
        let new_path = parse_path(new_rest);
        if old_path.is_none() && new_path.is_none() {
            return Err(err(i + 1, "both sides are /dev/null"));
        }
        i += 2;
        let mut patch = FilePatch {
            old_path,
            new_path,
            hunks: Vec::new(),
            old_missing_newline: false,
            new_missing_newline: false,
        };
        while i < lines.len() && lines[i].starts_with("@@ ") {
            let header = lines[i];
            let (old_start, old_len, new_start, new_len) = parse_hunk_header(header, i + 1)?;
            i += 1;
            let mut hunk = Hunk { old_start, old_len, new_start, new_len, header: header.into(), lines: Vec::new() };
            let (mut old_left, mut new_left) = (old_len, new_len);
            // The side the previous line belonged to, for `\ No newline` markers.
            let mut last: Option<char> = None;
            while old_left > 0 || new_left > 0 || lines.get(i).is_some_and(|l| l.starts_with('\\')) {
                let Some(&l) = lines.get(i) else {
                    return Err(err(i, "hunk is shorter than its header claims"));
                };
                match l.chars().next() {
                    Some(' ') | None if old_left > 0 && new_left > 0 => {
                        hunk.lines.push(HunkLine::Context(l.get(1..).unwrap_or("").into()));
                        old_left -= 1;
                        new_left -= 1;
                        last = Some(' ');
                    }
                    Some('-') if old_left > 0 => {
                        hunk.lines.push(HunkLine::Removed(l[1..].into()));
                        old_left -= 1;
                        last = Some('-');
                    }
                    Some('+') if new_left > 0 => {
                        hunk.lines.push(HunkLine::Added(l[1..].into()));
                        new_left -= 1;
                        last = Some('+');
                    }
                    Some('\\') => match last {
                        Some(' ') => {
                            patch.old_missing_newline = true;
                            patch.new_missing_newline = true;
                        }
                        Some('-') => patch.old_missing_newline = true,
                        Some('+') => patch.new_missing_newline = true,
                        _ => return Err(err(i + 1, "stray `\\ No newline` marker")),
                    },
                    _ => return Err(err(i + 1, "hunk body does not match its header counts")),
                }
                i += 1;
            }
            patch.hunks.push(hunk);
        }
        patches.push(patch);
    }
    Ok(patches)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApplyError {
    #[error("patch for {path} expects an existing file")]
    MissingFile { path: String },
    #[error("patch for {path} creates a file that already exists")]
    AlreadyExists { path: String },
    #[error("hunk {hunk} of {path} does not match the file content")]
    Mismatch { path: String, hunk: usize },
}

fn split_content(text: &str) -> (Vec<&str>, bool) {
    if text.is_empty() {
        return (Vec::new(), true);
    }
    let ends_with_newline = text.ends_with('\n');
    let body = text.strip_suffix('\n').unwrap_or(text);
    (body.split('\n').collect(), ends_with_newline)
}

/// Applies one file patch at the exact positions its hunks name.
///
/// `original` is `None` when the file does not exist. Returns `None` when the
/// patch deletes the file.
pub fn apply(original: Option<&str>, patch: &FilePatch) -> Result<Option<String>, ApplyError> {
    let path = patch.path().to_string();
    match (original, &patch.old_path) {
        (None, Some(_)) => return Err(ApplyError::MissingFile { path }),
        (Some(_), None) => return Err(ApplyError::AlreadyExists { path }),
        _ => {}
    }
    let (old_lines, _) = split_content(original.unwrap_or(""));
    let mut out: Vec<&str> = Vec::with_capacity(old_lines.len());
    let mut cursor = 0usize;
    for (n, hunk) in patch.hunks.iter().enumerate() {
        // A zero-length old range starts *after* line `old_start`.
        let start = if hunk.old_len == 0 { hunk.old_start } else { hunk.old_start.saturating_sub(1) };
        if start < cursor || start > old_lines.len() {
            return Err(ApplyError::Mismatch { path, hunk: n + 1 });
        }
        out.extend_from_slice(&old_lines[cursor..start]);
        let mut pos = start;
        for line in &hunk.lines {
            match line {
                HunkLine::Context(s) | HunkLine::Removed(s) => {
                    if old_lines.get(pos) != Some(&s.as_str()) {
                        return Err(ApplyError::Mismatch { path, hunk: n + 1 });
                    }
                    if let HunkLine::Context(_) = line {
                        out.push(s);
                    }
                    pos += 1;
                }
                HunkLine::Added(s) => out.push(s),
            }
        }
        cursor = pos;
    }
    out.extend_from_slice(&old_lines[cursor..]);
    if patch.new_path.is_none() {
        return Ok(None);
    }
    let mut text = out.join("\n");
    if !out.is_empty() && !patch.new_missing_newline {
        text.push('\n');
    }
    Ok(Some(text))
}
