//! `PCSR-FEATURES v1`: a header line
//! `PCSR-FEATURES v1 n=<n> d=<dim> k=<K> labeled=<0|1>` followed by `n` rows
//! of `dim` space-separated values, with the integer label appended as the
//! last column when `labeled=1`.

use std::fs;
use std::path::Path;

use super::{Dataset, Domain};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::textio::{fmt_f64, header_fields, parse_flag, parse_usize, Lines};

const MAGIC: &str = "PCSR-FEATURES v1";

impl Dataset {
    pub fn to_features_string(&self) -> String {
        let mut out = format!(
            "{MAGIC} n={} d={} k={} labeled={}\n",
            self.len(),
            self.dim(),
            self.class_count,
            u8::from(self.labels.is_some())
        );
        for (i, row) in self.x.iter_rows().enumerate() {
            let mut first = true;
            for &v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                out.push_str(&fmt_f64(v));
            }
            if let Some(labels) = &self.labels {
                if !first {
                    out.push(' ');
                }
                out.push_str(&labels[i].to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save_features(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_features_string())?;
        Ok(())
    }

    /// Loads a feature file. The domain is not stored in the file, so the
    /// result is tagged [`Domain::Unspecified`].
    pub fn load_features(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse_features(path, &text)
    }

    pub fn parse_features(path: &Path, text: &str) -> Result<Dataset> {
        let mut lines = Lines::new(path, text);
        let (ln, header) = lines.next_line("header")?;
        let f = header_fields(&lines, ln, header, MAGIC, &["n", "d", "k", "labeled"])?;
        let n = parse_usize(&lines, ln, "n", f[0])?;
        let d = parse_usize(&lines, ln, "d", f[1])?;
        let k = parse_usize(&lines, ln, "k", f[2])?;
        let labeled = parse_flag(&lines, ln, "labeled", f[3])?;
        if k == 0 {
            return Err(lines.error(ln, "k must be >= 1"));
        }

        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(if labeled { n } else { 0 });
        for _ in 0..n {
            let (ln, row) = lines.next_line("feature row")?;
            if labeled {
                let row = row.trim_end();
                let (values, label) = match row.rsplit_once(char::is_whitespace) {
                    Some((v, l)) => (v, l),
                    None => ("", row),
                };
                let y: usize = label
                    .parse()
                    .map_err(|_| lines.error(ln, format!("invalid label {label:?}")))?;
                if y >= k {
                    return Err(lines.error(ln, format!("label {y} >= k={k}")));
                }
                data.extend(lines.parse_floats(ln, values, d)?);
                labels.push(y);
            } else {
                data.extend(lines.parse_floats(ln, row, d)?);
            }
        }
        lines.expect_end()?;
        let x = Matrix::from_vec(n, d, data)?;
        Dataset::new(x, labeled.then_some(labels), k, Domain::Unspecified)
    }
}
