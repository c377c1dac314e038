//! Weight checkpoints: a plain-text header (metadata plus a manifest of
//! layer names and shapes) followed by the flat little-endian f64 payload.
//! Round trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use autodiff::{Array, ParamStore};

use crate::CoreError;

const MAGIC: &str = "metamap-checkpoint v1";

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    /// Single-line metadata entries (newlines escaped as `\n`).
    pub meta: Vec<(String, String)>,
    pub arrays: Vec<(String, Array)>,
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        Checkpoint {
            meta: Vec::new(),
            arrays: store.iter().map(|(n, a)| (n.to_string(), a.clone())).collect(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write(&self, path: &Path) -> Result<(), CoreError> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {} {}\n", k, escape(v)));
        }
        header.push_str(&format!("params {}\n", self.arrays.len()));
        for (name, a) in &self.arrays {
            header.push_str(name);
            header.push(' ');
            header.push_str(&a.shape().len().to_string());
            for d in a.shape() {
                header.push(' ');
                header.push_str(&d.to_string());
            }
            header.push('\n');
        }
        header.push_str("---\n");

        let mut file = std::fs::File::create(path)
            .map_err(|e| CoreError::Io(format!("create {}: {e}", path.display())))?;
        file.write_all(header.as_bytes())
            .map_err(|e| CoreError::Io(format!("write header: {e}")))?;
        let mut payload = Vec::new();
        for (_, a) in &self.arrays {
            for v in a.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        file.write_all(&payload).map_err(|e| CoreError::Io(format!("write payload: {e}")))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CoreError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| CoreError::Io(format!("open {}: {e}", path.display())))?
            .read_to_end(&mut bytes)
            .map_err(|e| CoreError::Io(format!("read {}: {e}", path.display())))?;

        let sep = b"---\n";
        let split = bytes
            .windows(sep.len())
            .position(|w| w == sep)
            .ok_or_else(|| CoreError::Io("missing header separator".into()))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|e| CoreError::Io(format!("header not utf-8: {e}")))?;
        let payload = &bytes[split + sep.len()..];

        let mut lines = header.lines();
        let magic = lines.next().unwrap_or_default();
        if magic != MAGIC {
            return Err(CoreError::Io(format!("bad checkpoint magic: {magic}")));
        }
        let mut meta = Vec::new();
        let mut manifest: Vec<(String, Vec<usize>)> = Vec::new();
        let mut n_params: Option<usize> = None;
        for line in lines {
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.push((k.to_string(), unescape(v)));
            } else if let Some(rest) = line.strip_prefix("params ") {
                n_params = Some(
                    rest.parse().map_err(|e| CoreError::Io(format!("bad param count: {e}")))?,
                );
            } else {
                let mut parts = line.split(' ');
                let name = parts
                    .next()
                    .ok_or_else(|| CoreError::Io("empty manifest line".into()))?
                    .to_string();
                let ndims: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| CoreError::Io(format!("bad manifest line: {line}")))?;
                let dims: Vec<usize> = parts
                    .take(ndims)
                    .map(|s| s.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|e| CoreError::Io(format!("bad shape in {line}: {e}")))?;
                if dims.len() != ndims {
                    return Err(CoreError::Io(format!("short manifest line: {line}")));
                }
                manifest.push((name, dims));
            }
        }
        if n_params != Some(manifest.len()) {
            return Err(CoreError::Io(format!(
                "manifest count mismatch: header says {:?}, found {}",
                n_params,
                manifest.len()
            )));
        }

        let mut arrays = Vec::with_capacity(manifest.len());
        let mut off = 0;
        for (name, dims) in manifest {
            let n: usize = dims.iter().product();
            let need = n * 8;
            if off + need > payload.len() {
                return Err(CoreError::Io(format!("payload too short for {name}")));
            }
            let data: Vec<f64> = payload[off..off + need]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            off += need;
            arrays.push((name, Array::new(dims, data)));
        }
        if off != payload.len() {
            return Err(CoreError::Io("trailing bytes in checkpoint payload".into()));
        }
        Ok(Checkpoint { meta, arrays })
    }

    /// Load every array into a parameter store by name.
    pub fn apply(&self, store: &mut ParamStore) -> Result<(), CoreError> {
        for (name, a) in &self.arrays {
            store.load(name, a.clone()).map_err(CoreError::Io)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_roundtrip() {
        let mut store = ParamStore::new();
        store.add("a/w", Array::matrix(2, 3, vec![1.5, -2.25, 1e-300, f64::MIN_POSITIVE, 0.1 + 0.2, -0.0]));
        store.add("a/b", Array::row(vec![std::f64::consts::PI]));
        let ck = Checkpoint::from_store(&store)
            .with_meta("seed", "42")
            .with_meta("config", "line1\nline2");

        let dir = std::env::temp_dir().join("metamap-ck-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("test.ckpt");
        ck.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();

        assert_eq!(back.meta_value("seed"), Some("42"));
        assert_eq!(back.meta_value("config"), Some("line1\nline2"));
        assert_eq!(back.arrays.len(), 2);
        for ((n1, a1), (n2, a2)) in ck.arrays.iter().zip(&back.arrays) {
            assert_eq!(n1, n2);
            assert_eq!(a1.shape(), a2.shape());
            for (x, y) in a1.data().iter().zip(a2.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "bit-exactness violated");
            }
        }

        let mut store2 = ParamStore::new();
        store2.add("a/w", Array::zeros(vec![2, 3]));
        store2.add("a/b", Array::zeros(vec![1, 1]));
        back.apply(&mut store2).unwrap();
        assert_eq!(store2.value(store2.lookup("a/b").unwrap()).item(), std::f64::consts::PI);
    }
}
