//! CSV and JSON artifacts with an echoed configuration header.
//!
//! A CSV artifact is a block of `# key = value` comment lines followed by an
//! ordinary CSV table. The table (the "body") depends only on the echoed
//! configuration, so two runs with the same configuration produce identical
//! bodies.

use std::io::Write;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::KeyValues;
use crate::error::Result;

/// Writes `config` as `# key = value` comment lines.
pub fn write_header<W: Write>(mut w: W, config: &KeyValues) -> Result<()> {
    for line in config.render().lines() {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

/// Writes `config` as comment lines and then `rows` as CSV with a header row.
pub fn write_csv<W: Write, R: Serialize>(mut w: W, config: &KeyValues, rows: &[R]) -> Result<()> {
    write_header(&mut w, config)?;
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Like [`write_csv`] for tables whose width is only known at run time.
pub fn write_table<W: Write>(
    mut w: W,
    config: &KeyValues,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    write_header(&mut w, config)?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header)?;
    for r in rows {
        wr.write_record(&r)?;
    }
    wr.flush()?;
    Ok(())
}

/// The CSV table of an artifact with its comment header removed.
pub fn csv_body(text: &str) -> String {
    text.lines()
        .skip_while(|l| l.starts_with('#'))
        .flat_map(|l| [l, "\n"])
        .collect()
}

/// `{"config": {...}, "result": value}`, pretty-printed with a trailing newline.
pub fn write_json<W: Write, T: Serialize>(mut w: W, config: &KeyValues, value: &T) -> Result<()> {
    let echo: Map<String, Value> = config
        .keys()
        .map(|k| {
            (
                k.to_string(),
                Value::String(config.raw(k).unwrap_or_default().to_string()),
            )
        })
        .collect();
    let mut doc = Map::new();
    doc.insert("config".into(), Value::Object(echo));
    doc.insert("result".into(), serde_json::to_value(value)?);
    serde_json::to_writer_pretty(&mut w, &Value::Object(doc))?;
    writeln!(w)?;
    Ok(())
}
