//! Checkpoint container.
//!
//! ```text
//! grainrl-ckpt-v1
//! step <n>
//! meta <key> <value>          (zero or more)
//! array <name> <rows>x<cols> <byte offset>
//! end
//! <raw little-endian f64 payload>
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::scalar::Scalar;

use super::params::ParamStore;
use super::TensorError;

pub const CHECKPOINT_VERSION: &str = "grainrl-ckpt-v1";

pub type Meta = BTreeMap<String, String>;

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

pub fn write_checkpoint<T: Scalar, W: Write>(store: &ParamStore<T>, meta: &Meta, mut w: W) -> Result<(), TensorError> {
    let io = |e: std::io::Error| bad(e.to_string());
    let mut header = format!("{CHECKPOINT_VERSION}\nstep {}\n", store.step);
    for (k, v) in meta {
        if k.contains(char::is_whitespace) || v.contains('\n') || v.is_empty() {
            return Err(bad(format!("unencodable meta entry `{k}`")));
        }
        header.push_str(&format!("meta {k} {v}\n"));
    }
    let mut offset = 0usize;
    for (_, p) in store.iter() {
        header.push_str(&format!("array {} {}x{} {}\n", p.name, p.rows, p.cols, offset));
        offset += p.values.len() * 8;
    }
    header.push_str("end\n");
    w.write_all(header.as_bytes()).map_err(io)?;
    for (_, p) in store.iter() {
        for v in &p.values {
            w.write_all(&v.as_f64().to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint<T: Scalar, R: BufRead>(mut r: R) -> Result<(ParamStore<T>, Meta), TensorError> {
    let io = |e: std::io::Error| bad(e.to_string());
    let mut line = String::new();
    let mut next_line = |r: &mut R| -> Result<String, TensorError> {
        line.clear();
        if r.read_line(&mut line).map_err(io)? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    let version = next_line(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version `{version}`")));
    }
    let mut step = 0;
    let mut meta = Meta::new();
    let mut arrays: Vec<(String, usize, usize, usize)> = Vec::new();
    loop {
        let l = next_line(&mut r)?;
        let mut parts = l.splitn(2, ' ');
        match (parts.next(), parts.next()) {
            (Some("end"), None) => break,
            (Some("step"), Some(n)) => step = n.parse().map_err(|_| bad("bad step"))?,
            (Some("meta"), Some(kv)) => {
                let (k, v) = kv.split_once(' ').ok_or_else(|| bad("bad meta line"))?;
                meta.insert(k.to_string(), v.to_string());
            }
            (Some("array"), Some(rest)) => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 3 {
                    return Err(bad(format!("bad array line `{l}`")));
                }
                let (rows, cols) = f[1].split_once('x').ok_or_else(|| bad("bad shape"))?;
                let rows = rows.parse().map_err(|_| bad("bad rows"))?;
                let cols = cols.parse().map_err(|_| bad("bad cols"))?;
                let off = f[2].parse().map_err(|_| bad("bad offset"))?;
                arrays.push((f[0].to_string(), rows, cols, off));
            }
            _ => return Err(bad(format!("unrecognised header line `{l}`"))),
        }
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io)?;
    let mut store = ParamStore::new();
    for (name, rows, cols, off) in arrays {
        let end = off + rows * cols * 8;
        let bytes = payload.get(off..end).ok_or_else(|| bad(format!("array `{name}` out of bounds")))?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        store.add(&name, rows, cols, values)?;
    }
    store.step = step;
    Ok((store, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn round_trip_preserves_values_and_meta() {
        let mut s = ParamStore::<f64>::new();
        s.add_glorot("embed", 4, 3, &mut rng_from(2)).unwrap();
        s.add_zeros("b", 1, 3).unwrap();
        s.step = 17;
        let mut meta = Meta::new();
        meta.insert("head".into(), "token_level".into());
        let mut buf = Vec::new();
        write_checkpoint(&s, &meta, &mut buf).unwrap();
        assert!(buf.starts_with(b"grainrl-ckpt-v1\nstep 17\nmeta head token_level\narray embed 4x3 0\narray b 1x3 96\nend\n"));
        let (back, meta2) = read_checkpoint::<f64, _>(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        assert_eq!(meta2, meta);
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        assert!(read_checkpoint::<f64, _>(&b"grainrl-ckpt-v0\nend\n"[..]).is_err());
        assert!(read_checkpoint::<f64, _>(&b"grainrl-ckpt-v1\nstep 0\narray w 2x2 0\nend\n\0\0"[..]).is_err());
    }
}
