//! Canonical JSON output shared by every file format.

use serde::Serialize;

/// Pretty-printed JSON with object keys in lexicographic order and a
/// trailing newline. Equal values always produce equal bytes.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json's default map is a BTreeMap, which sorts keys.
    let value = serde_json::to_value(value).expect("in-memory values serialize");
    let mut out = serde_json::to_string_pretty(&value).expect("values serialize");
    out.push('\n');
    out
}
