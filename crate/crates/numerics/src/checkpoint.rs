//! Parameter checkpoints: a versioned text header naming every array and its
//! shape, followed by the raw little-endian `f64` payload in header order.
//!
//! ```text
//! mpcc-checkpoint 1
//! meta {"free":"form"}
//! arrays 2
//! enc.w 6,64
//! enc.b 64
//! data
//! <bytes>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "mpcc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint header at line {line}: {reason}")]
    Header { line: usize, reason: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint payload truncated")]
    Truncated,
}

pub fn write_checkpoint<W: Write>(mut out: W, params: &ParamStore, meta: &str) -> Result<(), CheckpointError> {
    assert!(!meta.contains('\n'), "checkpoint meta must be a single line");
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    writeln!(out, "meta {meta}")?;
    writeln!(out, "arrays {}", params.len())?;
    for (name, t) in params.iter() {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        writeln!(out, "{name} {}", dims.join(","))?;
    }
    writeln!(out, "data")?;
    for (_, t) in params.iter() {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<(ParamStore, String), CheckpointError> {
    let mut rd = BufReader::new(input);
    let mut line_no = 0;
    let mut next_line = |rd: &mut BufReader<R>| -> Result<(usize, String), CheckpointError> {
        let mut s = String::new();
        line_no += 1;
        if rd.read_line(&mut s)? == 0 {
            return Err(CheckpointError::Header {
                line: line_no,
                reason: "unexpected end of header".into(),
            });
        }
        Ok((line_no, s.trim_end_matches('\n').to_string()))
    };
    let bad = |line: usize, reason: &str| CheckpointError::Header {
        line,
        reason: reason.to_string(),
    };

    let (ln, first) = next_line(&mut rd)?;
    let version = first
        .strip_prefix(CHECKPOINT_MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| bad(ln, "missing magic"))?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let (ln, meta_line) = next_line(&mut rd)?;
    let meta = meta_line
        .strip_prefix("meta ")
        .or_else(|| meta_line.strip_prefix("meta"))
        .ok_or_else(|| bad(ln, "expected meta line"))?
        .to_string();
    let (ln, count_line) = next_line(&mut rd)?;
    let count: usize = count_line
        .strip_prefix("arrays ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| bad(ln, "expected array count"))?;
    let mut layout = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, entry) = next_line(&mut rd)?;
        let (name, dims) = entry.rsplit_once(' ').ok_or_else(|| bad(ln, "expected `name dims`"))?;
        let shape: Vec<usize> = dims
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(ln, "bad dimension"))?;
        layout.push((name.to_string(), shape));
    }
    let (ln, data_line) = next_line(&mut rd)?;
    if data_line != "data" {
        return Err(bad(ln, "expected `data`"));
    }

    let mut store = ParamStore::new();
    let mut buf = [0u8; 8];
    for (name, shape) in layout {
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            rd.read_exact(&mut buf).map_err(|_| CheckpointError::Truncated)?;
            values.push(f64::from_le_bytes(buf));
        }
        store.add(name, Tensor::new(shape, values));
    }
    Ok((store, meta))
}

pub fn save(path: &Path, params: &ParamStore, meta: &str) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(file), params, meta)
}

pub fn load(path: &Path) -> Result<(ParamStore, String), CheckpointError> {
    read_checkpoint(std::fs::File::open(path)?)
}
