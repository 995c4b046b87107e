use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use super::NnError;

/// File layout: a text header listing tensor names and shapes in order,
/// followed by the raw little-endian f64 payload in the same order.
///
/// ```text
/// params v1
/// <count>
/// <name> <d0>[x<d1>]
/// ...
/// data
/// <binary payload>
/// ```
pub fn save_params(path: &Path, entries: &[(String, &Tensor)]) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "params v1")?;
    writeln!(w, "{}", entries.len())?;
    for (name, t) in entries {
        if name.contains(char::is_whitespace) || name.is_empty() {
            return Err(NnError::Checkpoint(format!("invalid tensor name {name:?}")));
        }
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        writeln!(w, "{} {}", name, dims.join("x"))?;
    }
    writeln!(w, "data")?;
    for (_, t) in entries {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |msg: String| NnError::Checkpoint(format!("{}: {}", path.display(), msg));

    let mut line = String::new();
    let read_line = |r: &mut BufReader<File>, line: &mut String| -> Result<String, NnError> {
        line.clear();
        let mut byte = [0u8; 1];
        loop {
            if r.read(&mut byte)? == 0 {
                return Err(NnError::Checkpoint(format!(
                    "{}: truncated header",
                    path.display()
                )));
            }
            if byte[0] == b'\n' {
                return Ok(line.trim_end().to_string());
            }
            line.push(byte[0] as char);
        }
    };

    if read_line(&mut r, &mut line)? != "params v1" {
        return Err(bad("not a parameter file (bad magic)".into()));
    }
    let count: usize = read_line(&mut r, &mut line)?
        .parse()
        .map_err(|_| bad("bad tensor count".into()))?;
    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let l = read_line(&mut r, &mut line)?;
        let (name, dims) = l
            .split_once(' ')
            .ok_or_else(|| bad(format!("bad tensor header {l:?}")))?;
        let shape: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(format!("bad shape in {l:?}")))?;
        headers.push((name.to_string(), shape));
    }
    if read_line(&mut r, &mut line)? != "data" {
        return Err(bad("missing data marker".into()));
    }

    let mut out = Vec::with_capacity(count);
    for (name, shape) in headers {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| bad(format!("truncated payload for {name}")))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after payload".into()));
    }
    Ok(out)
}
