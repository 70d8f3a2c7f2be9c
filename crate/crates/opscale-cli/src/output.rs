//! Output helpers: 17-significant-digit JSON, CSV emission and atomic file
//! writes.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

/// JSON formatter printing every float with 17 significant digits so output
/// bytes are reproducible and round-trip exactly. Non-finite values map to
/// null (JSON has no representation for them).
struct Sci17;

impl serde_json::ser::Formatter for Sci17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json_17<T: Serialize>(value: &T) -> Result<String, String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sci17);
    value
        .serialize(&mut ser)
        .map_err(|e| format!("serialization failed: {e}"))?;
    String::from_utf8(buf).map_err(|e| format!("serialization produced invalid utf-8: {e}"))
}

pub fn instance_json<T: Serialize>(value: &T) -> Result<serde_json::Value, String> {
    serde_json::to_value(value).map_err(|e| format!("serialization failed: {e}"))
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes through a temp file in the same directory, then renames.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<(), String> {
    let tmp = path.with_extension("tmp~");
    fs::write(&tmp, contents).map_err(|e| format!("cannot write {}: {e}", tmp.display()))?;
    fs::rename(&tmp, path)
        .map_err(|e| format!("cannot rename {} to {}: {e}", tmp.display(), path.display()))
}
