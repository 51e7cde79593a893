//! Plain-text parameter checkpoints: an optional `@key value` header block
//! followed by named arrays, one `name rows cols` line and one value line each.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.arrays.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::format("checkpoint", format!("missing array `{name}`")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| Error::format("checkpoint", format!("missing key `{key}`")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# checkpoint v1\n");
        for (k, v) in &self.meta {
            let _ = writeln!(s, "@{k} {v}");
        }
        for (name, t) in &self.arrays {
            let _ = writeln!(s, "{name} {} {}", t.rows, t.cols);
            let vals: Vec<String> = t.data.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Checkpoint> {
        let bad = |msg: String| Error::format("checkpoint", msg);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).peekable();
        let mut ck = Checkpoint::default();
        while let Some(line) = lines.next_if(|l| l.starts_with('@')) {
            let (k, v) = line[1..].split_once(' ').unwrap_or((&line[1..], ""));
            ck.meta.insert(k.to_string(), v.to_string());
        }
        while let Some(head) = lines.next() {
            let f: Vec<&str> = head.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(format!("bad array header {head:?}")));
            }
            let rows: usize = f[1].parse().map_err(|_| bad(format!("bad rows in {head:?}")))?;
            let cols: usize = f[2].parse().map_err(|_| bad(format!("bad cols in {head:?}")))?;
            let body = if rows * cols == 0 { "" } else { lines.next().ok_or_else(|| bad(format!("no values for {}", f[0])))? };
            let data = body
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value {v:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            ck.arrays.push((f[0].to_string(), Tensor::from_vec(rows, cols, data)?));
        }
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_exactly() {
        let mut ck = Checkpoint::default();
        ck.meta.insert("latent".into(), "10".into());
        ck.push("w0", Tensor::from_vec(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, 7.0]).unwrap());
        ck.push("b0", Tensor::from_vec(1, 2, vec![f64::MIN_POSITIVE, -0.0]).unwrap());
        let back = Checkpoint::from_text(&ck.to_text()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_truncated_input() {
        assert!(Checkpoint::from_text("w 2 2\n1 2 3\n").is_err());
        assert!(Checkpoint::from_text("w 2\n").is_err());
    }
}
