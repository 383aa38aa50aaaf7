use std::io::BufRead;
use std::path::Path;

use super::vocab::Vocabulary;
use crate::autodiff::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Reads `token v1 v2 …` lines into the rows of an embedding table whose
/// tokens are in the vocabulary. Returns the number of rows overwritten.
pub fn load_pretrained(path: &Path, vocab: &Vocabulary, store: &mut ParamStore, table: ParamId) -> Result<usize> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_pretrained(std::io::BufReader::new(file), vocab, store, table)
}

pub fn read_pretrained<R: BufRead>(
    reader: R,
    vocab: &Vocabulary,
    store: &mut ParamStore,
    table: ParamId,
) -> Result<usize> {
    let dim = store.value(table).cols();
    let mut loaded = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<pretrained>", e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        let idx = vocab.get(&token.to_lowercase()) as usize;
        if idx < 2 {
            continue;
        }
        store.value_mut(table).data_mut()[idx * dim..(idx + 1) * dim].copy_from_slice(&values);
        loaded += 1;
    }
    Ok(loaded)
}
