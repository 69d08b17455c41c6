use serde_json::{Map, Value};

/// Command result rendered either as JSON or as an aligned text table; both views
/// come from the same rows so they cannot disagree.
#[derive(Debug, Default)]
pub struct Report {
    rows: Vec<(String, Value)>,
    /// Payload printed after the table in text mode (e.g. a TSV dump) and stored
    /// under `body` in JSON mode.
    pub body: Option<String>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn row(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.rows.push((key.to_string(), value.into()));
        self
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (k, v) in &self.rows {
            m.insert(k.clone(), v.clone());
        }
        if let Some(b) = &self.body {
            m.insert("body".into(), Value::String(b.clone()));
        }
        Value::Object(m)
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in &self.rows {
            let shown = match v {
                Value::String(s) => s.clone(),
                Value::Number(n) => match n.as_f64() {
                    Some(f) if !n.is_i64() && !n.is_u64() => format_float(f),
                    _ => n.to_string(),
                },
                other => other.to_string(),
            };
            out.push_str(&format!("{k:<width$}  {shown}\n"));
        }
        if let Some(b) = &self.body {
            out.push_str(b);
            if !b.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }
}

fn format_float(f: f64) -> String {
    if f != 0.0 && (f.abs() >= 1e6 || f.abs() < 1e-3) {
        format!("{f:.6e}")
    } else {
        format!("{f:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_views_carry_the_same_rows() {
        let mut r = Report::new();
        r.row("bpb", 8.0).row("docs", 3).row("scheme", "space");
        r.body = Some("a\tb\n".into());
        let j = r.to_json();
        assert_eq!(j["bpb"], 8.0);
        assert_eq!(j["docs"], 3);
        assert_eq!(j["body"], "a\tb\n");
        let t = r.to_text();
        assert!(t.contains("bpb     8.000\n"));
        assert!(t.contains("docs    3\n"));
        assert!(t.ends_with("a\tb\n"));
    }
}
