//! Embeds a content hash of the library and CLI sources so every manifest
//! names the exact code that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = fs::read_dir(dir) else {
        return;
    };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            collect(&p, out);
        } else if p.extension().is_some_and(|x| x == "rs") {
            out.push(p);
        }
    }
}

fn main() {
    let root = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let dirs = [("abco-cli/src", root.join("src")), ("abco/src", root.join("../abco/src"))];
    let mut keyed: Vec<(String, PathBuf)> = Vec::new();
    for (label, d) in &dirs {
        println!("cargo:rerun-if-changed={}", d.display());
        let mut files = Vec::new();
        collect(d, &mut files);
        for p in files {
            let rel = p.strip_prefix(d).unwrap().to_string_lossy().replace('\\', "/");
            keyed.push((format!("{label}/{rel}"), p));
        }
    }
    keyed.sort();
    // tree-style hash: one "blob <len>\0<bytes>" record per path, in order
    let mut tree = Sha256::new();
    for (name, path) in keyed {
        let bytes = fs::read(&path).unwrap();
        let mut blob = Sha256::new();
        blob.update(format!("blob {}\0", bytes.len()));
        blob.update(&bytes);
        tree.update(name.as_bytes());
        tree.update([0]);
        tree.update(blob.finalize());
    }
    let hex: String = tree.finalize().iter().map(|b| format!("{b:02x}")).collect();
    println!("cargo:rustc-env=ABCO_CODE_HASH={hex}");
}
