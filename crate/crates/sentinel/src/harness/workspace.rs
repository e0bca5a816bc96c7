use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use similar::{ChangeTag, TextDiff};
use walkdir::WalkDir;

#[derive(Debug, thiserror::Error)]
#[error("path `{path}` resolves outside the workspace root")]
pub struct SandboxEscape {
    pub path: String,
}

/// A directory that confines every write-class effect.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

/// Workspace file contents keyed by `/`-separated relative path.
pub type Snapshot = BTreeMap<String, Vec<u8>>;

impl Workspace {
    pub fn open(root: impl AsRef<Path>) -> io::Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(Workspace { root: fs::canonicalize(root)? })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Maps a workspace-relative path to an absolute one. Rejects absolute
    /// paths, `..` that climbs out, and symlinks pointing outside.
    pub fn resolve(&self, rel: &str) -> Result<PathBuf, SandboxEscape> {
        let escape = || SandboxEscape { path: rel.to_string() };
        let mut parts: Vec<&std::ffi::OsStr> = Vec::new();
        for c in Path::new(rel).components() {
            match c {
                Component::Normal(p) => parts.push(p),
                Component::CurDir => {}
                Component::ParentDir => {
                    parts.pop().ok_or_else(escape)?;
                }
                Component::RootDir | Component::Prefix(_) => return Err(escape()),
            }
        }
        if parts.is_empty() {
            return Err(escape());
        }
        let mut full = self.root.clone();
        full.extend(&parts);
        // The deepest existing ancestor must stay inside the root after
        // following symlinks.
        let mut probe = full.as_path();
        loop {
            if let Ok(real) = fs::canonicalize(probe) {
                if !real.starts_with(&self.root) {
                    return Err(escape());
                }
                break;
            }
            match probe.parent() {
                Some(p) => probe = p,
                None => break,
            }
        }
        Ok(full)
    }

    pub fn snapshot(&self) -> io::Result<Snapshot> {
        let mut snap = Snapshot::new();
        for entry in WalkDir::new(&self.root).sort_by_file_name() {
            let entry = entry.map_err(io::Error::other)?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(&self.root).expect("walkdir stays under root");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            snap.insert(key, fs::read(entry.path())?);
        }
        Ok(snap)
    }

    /// Writes `files` into the workspace, creating directories as needed.
    pub fn populate<'a>(&self, files: impl IntoIterator<Item = (&'a str, &'a str)>) -> anyhow::Result<()> {
        for (path, content) in files {
            let full = self.resolve(path)?;
            if let Some(parent) = full.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(full, content)?;
        }
        Ok(())
    }
}

/// Unified diff of every file that differs between two snapshots, in path
/// order. Creations and deletions use `/dev/null` on the missing side.
pub fn snapshot_diff(before: &Snapshot, after: &Snapshot) -> String {
    let mut paths: Vec<&String> = before.keys().chain(after.keys()).collect();
    paths.sort();
    paths.dedup();
    let mut out = String::new();
    for path in paths {
        let (old, new) = (before.get(path), after.get(path));
        if old == new {
            continue;
        }
        let (Ok(old_text), Ok(new_text)) = (
            std::str::from_utf8(old.map_or(&[][..], Vec::as_slice)),
            std::str::from_utf8(new.map_or(&[][..], Vec::as_slice)),
        ) else {
            out.push_str(&format!("Binary files a/{path} and b/{path} differ\n"));
            continue;
        };
        let old_header = if old.is_some() { format!("a/{path}") } else { "/dev/null".into() };
        let new_header = if new.is_some() { format!("b/{path}") } else { "/dev/null".into() };
        let hunks = unified_hunks(old_text, new_text, 3);
        out.push_str(&format!("--- {old_header}\n+++ {new_header}\n"));
        out.push_str(&hunks);
    }
    out
}

/// Hunks of a line diff. Only the change order is taken from `similar`; line
/// numbers are counted here, since its own hunk headers can disagree with the
/// hunk bodies.
fn unified_hunks(old: &str, new: &str, context: usize) -> String {
    let diff = TextDiff::from_lines(old, new);
    let changes: Vec<(ChangeTag, &str)> = diff.iter_all_changes().map(|c| (c.tag(), c.value())).collect();
    // Position of each change on both sides, 0-based.
    let mut pos = Vec::with_capacity(changes.len());
    let (mut o, mut n) = (0usize, 0usize);
    for (tag, _) in &changes {
        pos.push((o, n));
        match tag {
            ChangeTag::Equal => {
                o += 1;
                n += 1;
            }
            ChangeTag::Delete => o += 1,
            ChangeTag::Insert => n += 1,
        }
    }
    let edits: Vec<usize> = (0..changes.len()).filter(|&i| changes[i].0 != ChangeTag::Equal).collect();
    let mut out = String::new();
    let mut i = 0;
    while i < edits.len() {
        let start = edits[i].saturating_sub(context);
        let mut last = edits[i];
        while i + 1 < edits.len() && edits[i + 1] <= last + 2 * context + 1 {
            i += 1;
            last = edits[i];
        }
        let end = (last + context + 1).min(changes.len());
        i += 1;
        let range = &changes[start..end];
        let old_len = range.iter().filter(|(t, _)| *t != ChangeTag::Insert).count();
        let new_len = range.iter().filter(|(t, _)| *t != ChangeTag::Delete).count();
        let side = |begin: usize, len: usize| match len {
            0 => format!("{begin},0"),
            1 => format!("{}", begin + 1),
            _ => format!("{},{len}", begin + 1),
        };
        out.push_str(&format!("@@ -{} +{} @@\n", side(pos[start].0, old_len), side(pos[start].1, new_len)));
        for (tag, value) in range {
            out.push(match tag {
                ChangeTag::Equal => ' ',
                ChangeTag::Delete => '-',
                ChangeTag::Insert => '+',
            });
            out.push_str(value);
            if !value.ends_with('\n') {
                out.push_str("\n\\ No newline at end of file\n");
            }
        }
    }
    out
}
