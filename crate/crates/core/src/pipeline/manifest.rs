//! `MANIFEST` files: one `sha256  relative/path` line per file, sorted by path.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "MANIFEST";

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .map_err(|e| Error::Domain(e.to_string()))?
                .to_path_buf();
            if rel != Path::new(MANIFEST_NAME) {
                out.push(rel);
            }
        }
    }
    Ok(())
}

fn rel_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Lists every file below `dir` (except the manifest itself) with its digest.
pub fn entries(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    let mut out = files
        .into_iter()
        .map(|rel| {
            let bytes = fs::read(dir.join(&rel))?;
            Ok((rel_string(&rel), hex::encode(Sha256::digest(&bytes))))
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Writes `dir/MANIFEST` and returns its text.
pub fn write_manifest(dir: &Path) -> Result<String> {
    let text: String = entries(dir)?
        .into_iter()
        .map(|(path, digest)| format!("{digest}  {path}\n"))
        .collect();
    fs::write(dir.join(MANIFEST_NAME), &text)?;
    Ok(text)
}

/// Checks every manifest line against the files on disk. Returns the paths
/// that are missing or whose digest differs.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let mut bad = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (digest, path) = line.split_once("  ").ok_or_else(|| Error::Format {
            path: dir.join(MANIFEST_NAME).display().to_string(),
            reason: format!("malformed line `{line}`"),
        })?;
        match fs::read(dir.join(path)) {
            Ok(bytes) if hex::encode(Sha256::digest(&bytes)) == digest => {}
            _ => bad.push(path.to_string()),
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_nested_files_sorted_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("b")).unwrap();
        fs::write(dir.path().join("b/x.bin"), b"abc").unwrap();
        fs::write(dir.path().join("a.txt"), b"").unwrap();
        let text = write_manifest(dir.path()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].ends_with("  a.txt"));
        assert!(lines[1].starts_with("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad  b/x.bin"));
        assert!(verify_manifest(dir.path()).unwrap().is_empty());

        fs::write(dir.path().join("b/x.bin"), b"abd").unwrap();
        assert_eq!(verify_manifest(dir.path()).unwrap(), vec!["b/x.bin".to_string()]);
    }
}
