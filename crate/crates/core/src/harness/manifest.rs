//! Content checksums for run directories.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";

fn collect(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect(&path, root, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root").to_path_buf();
            if rel != Path::new(MANIFEST_NAME) {
                out.push(rel);
            }
        }
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Every file under `dir` except the manifest, sorted, with `/` separators.
pub fn list_files(dir: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    Ok(files
        .iter()
        .map(|p| p.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"))
        .collect())
}

/// Writes `manifest.txt` (`<sha256>  <path>` per line) and returns its text.
pub fn write_manifest(dir: &Path) -> Result<String> {
    let mut text = String::new();
    for rel in list_files(dir)? {
        text.push_str(&format!("{}  {rel}\n", sha256_file(&dir.join(&rel))?));
    }
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    Ok(text)
}

/// Files that are missing from the manifest, absent on disk, or whose
/// checksum differs.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut listed = Vec::new();
    let mut problems = Vec::new();
    for line in text.lines() {
        let Some((sum, rel)) = line.split_once("  ") else {
            problems.push(format!("malformed line `{line}`"));
            continue;
        };
        listed.push(rel.to_string());
        match sha256_file(&dir.join(rel)) {
            Ok(actual) if actual == sum => {}
            Ok(_) => problems.push(format!("{rel}: checksum mismatch")),
            Err(_) => problems.push(format!("{rel}: missing")),
        }
    }
    for rel in list_files(dir)? {
        if !listed.contains(&rel) {
            problems.push(format!("{rel}: not in manifest"));
        }
    }
    Ok(problems)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_covers_everything() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("a.csv"), "x").unwrap();
        std::fs::write(dir.path().join("sub/b.svg"), "y").unwrap();
        let text = write_manifest(dir.path()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("  sub/b.svg"));
        assert!(verify_manifest(dir.path()).unwrap().is_empty());

        std::fs::write(dir.path().join("a.csv"), "changed").unwrap();
        std::fs::write(dir.path().join("c.txt"), "new").unwrap();
        let problems = verify_manifest(dir.path()).unwrap();
        assert_eq!(problems.len(), 2, "{problems:?}");
    }
}
