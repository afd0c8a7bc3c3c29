//! JSON Lines dataset I/O: one bag per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mir::Bag;
use crate::scalar::Scalar;

/// Read bags from a JSONL file, validating structure and a consistent
/// feature dimension across lines.
pub fn read_bags<F: Scalar>(path: &Path) -> Result<Vec<Bag<F>>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut bags: Vec<Bag<F>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bag: Bag<F> = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        bag.validate()
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        match dim {
            None => dim = Some(bag.feature_dim()),
            Some(d) if d != bag.feature_dim() => {
                return Err(Error::Data(format!(
                    "{}:{}: feature dim {} differs from {}",
                    path.display(),
                    lineno + 1,
                    bag.feature_dim(),
                    d
                )))
            }
            _ => {}
        }
        bags.push(bag);
    }
    if bags.is_empty() {
        return Err(Error::Data(format!("{} contains no bags", path.display())));
    }
    Ok(bags)
}

/// Write bags as JSONL, one per line, trailing newline included.
pub fn write_bags<F: Scalar>(path: &Path, bags: &[Bag<F>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for bag in bags {
        serde_json::to_writer(&mut w, bag)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
