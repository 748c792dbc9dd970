use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use chrono::{TimeZone, Utc};

use super::{CommitRecord, FileChange, RemovedLine, Repository};
use crate::error::{Error, Result};

const RECORD_SEP: u8 = 0x1e;
const FIELD_SEP: char = '\u{1f}';

/// A local git clone accessed through the `git` command-line tool.
#[derive(Debug, Clone)]
pub struct GitRepo {
    root: PathBuf,
    rev: String,
}

impl GitRepo {
    pub fn open(root: &Path, branch: Option<&str>) -> Result<Self> {
        let repo = GitRepo {
            root: root.to_path_buf(),
            rev: branch.unwrap_or("HEAD").to_owned(),
        };
        repo.git(&["rev-parse", "--verify", &format!("{}^{{commit}}", repo.rev)])?;
        Ok(repo)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn command(&self) -> Command {
        let mut cmd = Command::new("git");
        cmd.arg("-C")
            .arg(&self.root)
            .args(["-c", "core.quotepath=off", "-c", "color.ui=never"]);
        cmd
    }

    fn git(&self, args: &[&str]) -> Result<Vec<u8>> {
        let output = self.command().args(args).output().map_err(|e| Error::Git {
            command: args.join(" "),
            message: e.to_string(),
        })?;
        if !output.status.success() {
            return Err(Error::Git {
                command: args.join(" "),
                message: String::from_utf8_lossy(&output.stderr).trim().to_owned(),
            });
        }
        Ok(output.stdout)
    }
}

impl Repository for GitRepo {
    fn commits(&self) -> Result<Vec<CommitRecord>> {
        let format = "--format=%x1e%H%x1f%P%x1f%an%x1f%ct%x1f%B%x1f";
        let raw = self.git(&[
            "log",
            "--topo-order",
            "--reverse",
            "--no-renames",
            "--no-ext-diff",
            "--no-color",
            "-p",
            "-U0",
            format,
            &self.rev,
        ])?;
        raw.split(|b| *b == RECORD_SEP)
            .filter(|chunk| !chunk.is_empty())
            .map(|chunk| parse_log_record(&String::from_utf8_lossy(chunk)))
            .collect()
    }

    fn files_at(&self, commit: &str) -> Result<Vec<String>> {
        let raw = self.git(&["ls-tree", "-r", "--name-only", "-z", commit])?;
        let mut paths: Vec<String> = raw
            .split(|b| *b == 0)
            .filter(|p| !p.is_empty())
            .map(|p| String::from_utf8_lossy(p).into_owned())
            .collect();
        paths.sort();
        Ok(paths)
    }

    fn file_at(&self, commit: &str, path: &str) -> Result<Option<Vec<u8>>> {
        let spec = format!("{commit}:{path}");
        let output = self
            .command()
            .args(["cat-file", "blob", &spec])
            .output()
            .map_err(|e| Error::Git {
                command: format!("cat-file blob {spec}"),
                message: e.to_string(),
            })?;
        Ok(output.status.success().then_some(output.stdout))
    }

    fn files_content(&self, commit: &str, paths: &[String]) -> Result<Vec<Option<Vec<u8>>>> {
        if paths.is_empty() {
            return Ok(Vec::new());
        }
        let io_err = |e: std::io::Error| Error::Git {
            command: "cat-file --batch".into(),
            message: e.to_string(),
        };
        let mut child = self
            .command()
            .args(["cat-file", "--batch"])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(io_err)?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let requests: String = paths.iter().map(|p| format!("{commit}:{p}\n")).collect();
        let writer = std::thread::spawn(move || stdin.write_all(requests.as_bytes()));

        let mut reader = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut out = Vec::with_capacity(paths.len());
        for _ in paths {
            let mut header = String::new();
            reader.read_line(&mut header).map_err(io_err)?;
            let fields: Vec<&str> = header.split_whitespace().collect();
            if fields.len() == 3 && fields[1] == "blob" {
                let size: usize = fields[2].parse().map_err(|_| Error::Git {
                    command: "cat-file --batch".into(),
                    message: format!("bad header {header:?}"),
                })?;
                let mut buf = vec![0u8; size + 1];
                reader.read_exact(&mut buf).map_err(io_err)?;
                buf.pop();
                out.push(Some(buf));
            } else {
                out.push(None);
            }
        }
        writer
            .join()
            .expect("cat-file writer thread")
            .map_err(io_err)?;
        child.wait().map_err(io_err)?;
        Ok(out)
    }

    fn blame(&self, commit: &str, path: &str) -> Result<Vec<String>> {
        let raw = self.git(&["blame", "--porcelain", commit, "--", path])?;
        let text = String::from_utf8_lossy(&raw);
        let mut owners: Vec<String> = Vec::new();
        for line in text.lines() {
            if line.starts_with('\t') {
                continue;
            }
            let mut parts = line.split(' ');
            let (Some(hash), Some(_orig), Some(fin)) = (parts.next(), parts.next(), parts.next())
            else {
                continue;
            };
            if hash.len() != 40 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
                continue;
            }
            let Ok(final_line) = fin.parse::<usize>() else {
                continue;
            };
            if owners.len() < final_line {
                owners.resize(final_line, String::new());
            }
            owners[final_line - 1] = hash.to_owned();
        }
        Ok(owners)
    }
}

fn parse_log_record(chunk: &str) -> Result<CommitRecord> {
    let mut fields = chunk.splitn(6, FIELD_SEP);
    let mut next = |what: &str| {
        fields.next().ok_or_else(|| Error::Git {
            command: "log".into(),
            message: format!("truncated record, missing {what}"),
        })
    };
    let id = next("hash")?.trim().to_owned();
    let parents = next("parents")?
        .split_whitespace()
        .map(str::to_owned)
        .collect::<Vec<_>>();
    let author = next("author")?.to_owned();
    let secs: i64 = next("timestamp")?.trim().parse().map_err(|_| Error::Git {
        command: "log".into(),
        message: format!("bad timestamp in {id}"),
    })?;
    let message = next("message")?.trim_end().to_owned();
    let diff = next("diff").unwrap_or("");
    let timestamp = Utc
        .timestamp_opt(secs, 0)
        .single()
        .ok_or_else(|| Error::Git {
            command: "log".into(),
            message: format!("timestamp out of range in {id}"),
        })?;
    let changes = if parents.len() > 1 {
        Vec::new()
    } else {
        parse_unified_diff(diff)
    };
    Ok(CommitRecord {
        id,
        parents,
        author,
        timestamp,
        message,
        changes,
    })
}

/// Parses `git diff -U0` output into per-file changes, sorted by path.
pub(crate) fn parse_unified_diff(diff: &str) -> Vec<FileChange> {
    let mut changes: Vec<FileChange> = Vec::new();
    let mut in_hunk = false;
    let mut old_line = 0usize;
    for line in diff.lines() {
        if let Some(rest) = line.strip_prefix("diff --git a/") {
            // Without rename detection both sides carry the same path: "P b/P".
            let path = if rest.len() >= 3 && (rest.len() - 3) % 2 == 0 {
                rest[..(rest.len() - 3) / 2].to_owned()
            } else {
                rest.split(" b/").next().unwrap_or(rest).to_owned()
            };
            changes.push(FileChange {
                path,
                added: 0,
                removed: Vec::new(),
                binary: false,
            });
            in_hunk = false;
            continue;
        }
        let Some(current) = changes.last_mut() else {
            continue;
        };
        if !in_hunk {
            if let Some(p) = line.strip_prefix("--- a/") {
                current.path = p.to_owned();
            } else if let Some(p) = line.strip_prefix("+++ b/") {
                current.path = p.to_owned();
            } else if line.starts_with("Binary files ") || line == "GIT binary patch" {
                current.binary = true;
            }
        }
        if let Some(header) = line.strip_prefix("@@ -") {
            in_hunk = true;
            let old = header.split(' ').next().unwrap_or("0");
            let start = old.split(',').next().unwrap_or("0");
            old_line = start.parse().unwrap_or(0);
            continue;
        }
        if !in_hunk {
            continue;
        }
        if let Some(text) = line.strip_prefix('-') {
            current.removed.push(RemovedLine {
                line: old_line,
                text: text.to_owned(),
            });
            old_line += 1;
        } else if line.starts_with('+') {
            current.added += 1;
        }
    }
    changes.sort_by(|a, b| a.path.cmp(&b.path));
    changes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_zero_context_hunks() {
        let diff = "\
diff --git a/src/A.java b/src/A.java
index 111..222 100644
--- a/src/A.java
+++ b/src/A.java
@@ -3 +3 @@ class A {
-    getFileChecksum(f);
+    getFileChecksum(res.remainingPath);
@@ -10,2 +9,0 @@
-  a();
-  b();
diff --git a/img.png b/img.png
Binary files a/img.png and b/img.png differ
";
        let changes = parse_unified_diff(diff);
        assert_eq!(changes.len(), 2);
        let a = &changes[1];
        assert_eq!(a.path, "src/A.java");
        assert_eq!(a.added, 1);
        assert_eq!(
            a.removed,
            vec![
                RemovedLine { line: 3, text: "    getFileChecksum(f);".into() },
                RemovedLine { line: 10, text: "  a();".into() },
                RemovedLine { line: 11, text: "  b();".into() },
            ]
        );
        assert_eq!(changes[0].path, "img.png");
        assert!(changes[0].binary);
        assert!(changes[0].removed.is_empty());
    }

    #[test]
    fn path_with_spaces_survives_header_split() {
        let diff = "diff --git a/my dir/x y.txt b/my dir/x y.txt\nnew file mode 100644\n--- /dev/null\n+++ b/my dir/x y.txt\n@@ -0,0 +1 @@\n+hi\n";
        let changes = parse_unified_diff(diff);
        assert_eq!(changes[0].path, "my dir/x y.txt");
        assert_eq!(changes[0].added, 1);
    }
}
