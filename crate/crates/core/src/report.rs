//! Small helpers shared by the report writers.

use std::borrow::Cow;

/// Version stamped into every JSON report.
pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Quotes a CSV field when it contains a delimiter, quote or newline.
pub fn csv_field(s: &str) -> Cow<'_, str> {
    if s.contains([',', '"', '\n', '\r']) {
        Cow::Owned(format!("\"{}\"", s.replace('"', "\"\"")))
    } else {
        Cow::Borrowed(s)
    }
}

/// Formats an optional value for CSV; missing values are empty fields.
pub fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
