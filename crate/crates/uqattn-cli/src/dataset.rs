//! JSONL dataset files: one record per line, `{"tokens": [...], "label":
//! n, "split": "train"}`. The split field is provenance; readers return
//! the examples in file order.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use uqattn::bench::Example;
use uqattn::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub tokens: Vec<usize>,
    pub label: usize,
    pub split: String,
}

pub fn write_split(path: &Path, examples: &[Example], split: &str) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for example in examples {
        let record = DatasetRecord {
            tokens: example.tokens.clone(),
            label: example.label,
            split: split.to_string(),
        };
        let line = serde_json::to_string(&record)?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<Example>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        examples.push(Example {
            tokens: record.tokens,
            label: record.label,
        });
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput("dataset file holds no records"));
    }
    Ok(examples)
}
