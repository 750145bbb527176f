//! Weight checkpoints: a text manifest followed by raw little-endian `f32`s.
//!
//! ```text
//! distg-checkpoint v1
//! entries 3
//! init.weight 8 1 3 3
//! init.bias 8
//! bn.running_mean 8
//! end
//! <binary payload in manifest order>
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::layers::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

const MAGIC: &str = "distg-checkpoint v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

fn entries<T: Element>(store: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
    let mut out: Vec<_> = store
        .params()
        .iter()
        .map(|p| (p.name().to_string(), p.value()))
        .collect();
    for (name, stats) in store.buffers() {
        let st = stats.lock().unwrap_or_else(|p| p.into_inner());
        out.push((format!("{name}.running_mean"), st.mean.clone()));
        out.push((format!("{name}.running_var"), st.var.clone()));
    }
    out
}

pub fn write_checkpoint<T: Element>(store: &ParamStore<T>, w: &mut impl Write) -> std::io::Result<()> {
    let items = entries(store);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "entries {}", items.len())?;
    for (name, t) in &items {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        writeln!(w, "{name} {}", dims.join(" "))?;
    }
    writeln!(w, "end")?;
    for (_, t) in &items {
        for v in t.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint<T: Element>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::format("checkpoint", msg)
}

pub fn read_manifest(r: &mut impl BufRead) -> Result<Vec<ManifestEntry>> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<()> {
        line.clear();
        match r.read_line(line) {
            Ok(0) => Err(bad("truncated manifest")),
            Ok(_) => Ok(()),
            Err(e) => Err(bad(e.to_string())),
        }
    };
    next(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(bad(format!("unknown header {:?}", line.trim_end())));
    }
    next(&mut line)?;
    let count: usize = line
        .trim_end()
        .strip_prefix("entries ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| bad("missing entry count"))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        next(&mut line)?;
        let mut parts = line.split_whitespace();
        let name = parts.next().ok_or_else(|| bad("empty manifest line"))?.to_string();
        let shape = parts
            .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad extent {d:?} for {name}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(ManifestEntry { name, shape });
    }
    next(&mut line)?;
    if line.trim_end() != "end" {
        return Err(bad("manifest not terminated by `end`"));
    }
    Ok(out)
}

pub fn read_checkpoint<T: Element>(store: &ParamStore<T>, r: &mut impl BufRead) -> Result<()> {
    let manifest = read_manifest(r)?;
    let expected = entries(store);
    if manifest.len() != expected.len() {
        return Err(bad(format!(
            "{} entries on disk, model has {}",
            manifest.len(),
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(manifest.len());
    for (entry, (name, t)) in manifest.iter().zip(&expected) {
        if entry.name != *name || entry.shape != t.shape() {
            return Err(bad(format!(
                "expected {name} {:?}, found {} {:?}",
                t.shape(),
                entry.name,
                entry.shape
            )));
        }
        let mut bytes = vec![0u8; 4 * t.len()];
        r.read_exact(&mut bytes).map_err(|_| bad(format!("payload truncated at {name}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        loaded.push(Tensor::new(entry.shape.clone(), data)?);
    }
    if r.fill_buf().map(|b| !b.is_empty()).unwrap_or(false) {
        return Err(bad("trailing bytes after payload"));
    }
    let mut it = loaded.into_iter();
    for p in store.params() {
        p.set_value(it.next().expect("counted above"))?;
    }
    for (_, stats) in store.buffers() {
        let mut st = stats.lock().unwrap_or_else(|p| p.into_inner());
        st.mean = it.next().expect("counted above");
        st.var = it.next().expect("counted above");
    }
    Ok(())
}

pub fn load_checkpoint<T: Element>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(store, &mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::conv::Conv2dSpec;

    fn model(seed: u64) -> ParamStore<f32> {
        let mut s = ParamStore::new(seed);
        s.conv2d("a", Conv2dSpec::new(1, 3, [3, 3]), true).unwrap();
        s.batch_norm("bn", 3).unwrap();
        s
    }

    #[test]
    fn round_trip() {
        let src = model(1);
        src.buffers()[0].1.lock().unwrap().mean.fill(0.25);
        let mut buf = Vec::new();
        write_checkpoint(&src, &mut buf).unwrap();
        let dst = model(2);
        read_checkpoint(&dst, &mut buf.as_slice()).unwrap();
        for (a, b) in src.params().iter().zip(dst.params()) {
            assert_eq!(a.value(), b.value());
        }
        assert_eq!(dst.buffers()[0].1.lock().unwrap().mean.data(), &[0.25; 3]);
    }

    #[test]
    fn manifest_lists_names_in_order() {
        let mut buf = Vec::new();
        write_checkpoint(&model(0), &mut buf).unwrap();
        let names: Vec<_> = read_manifest(&mut buf.as_slice())
            .unwrap()
            .into_iter()
            .map(|e| e.name)
            .collect();
        assert_eq!(
            names,
            ["a.weight", "a.bias", "bn.gamma", "bn.beta", "bn.running_mean", "bn.running_var"]
        );
    }

    #[test]
    fn mismatched_model_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&model(0), &mut buf).unwrap();
        let mut other = ParamStore::<f32>::new(0);
        other.conv2d("a", Conv2dSpec::new(1, 4, [3, 3]), true).unwrap();
        other.batch_norm("bn", 4).unwrap();
        assert!(read_checkpoint(&other, &mut buf.as_slice()).is_err());
        buf.truncate(buf.len() - 1);
        assert!(read_checkpoint(&model(0), &mut buf.as_slice()).is_err());
    }
}
