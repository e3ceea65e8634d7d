//! `PCSR-MODEL v1` checkpoints.
//!
//! ```text
//! PCSR-MODEL v1 input=2 hidden=64,64 d=32 k=6 frozen=1
//! <rows>
//! <row 0 values>
//! ...
//! ```
//!
//! After the header, every parameter tensor follows as a line holding its
//! row count and then that many rows of space-separated values. Order:
//! each extractor layer's weight then bias, then the classifier's weight
//! then bias. A bias is a single row.

use std::fs;
use std::path::Path;

use super::{Dense, Model};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::textio::{header_fields, parse_flag, parse_usize, push_row, Lines};

const MAGIC: &str = "PCSR-MODEL v1";

impl Model {
    pub fn to_checkpoint_string(&self) -> String {
        let hidden: Vec<String> = self.hidden_dims().iter().map(|h| h.to_string()).collect();
        let mut out = format!(
            "{MAGIC} input={} hidden={} d={} k={} frozen={}\n",
            self.input_dim(),
            hidden.join(","),
            self.feature_dim(),
            self.class_count(),
            u8::from(self.classifier_frozen),
        );
        for layer in self.layers() {
            out.push_str(&format!("{}\n", layer.weight.rows()));
            for row in layer.weight.iter_rows() {
                push_row(&mut out, row);
            }
            out.push_str("1\n");
            push_row(&mut out, &layer.bias);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse_checkpoint(path, &text)
    }

    /// Parses checkpoint text; `path` is only used in error messages.
    pub fn parse_checkpoint(path: &Path, text: &str) -> Result<Model> {
        let mut lines = Lines::new(path, text);
        let (ln, header) = lines.next_line("header")?;
        let f = header_fields(&lines, ln, header, MAGIC, &["input", "hidden", "d", "k", "frozen"])?;
        let input = parse_usize(&lines, ln, "input", f[0])?;
        let hidden = if f[1].is_empty() {
            Vec::new()
        } else {
            f[1].split(',')
                .map(|h| parse_usize(&lines, ln, "hidden", h))
                .collect::<Result<Vec<_>>>()?
        };
        let d = parse_usize(&lines, ln, "d", f[2])?;
        let k = parse_usize(&lines, ln, "k", f[3])?;
        let frozen = parse_flag(&lines, ln, "frozen", f[4])?;
        if input == 0 || d == 0 || k == 0 || hidden.contains(&0) {
            return Err(lines.error(ln, "dimensions must be >= 1"));
        }

        let mut dims = vec![input];
        dims.extend_from_slice(&hidden);
        dims.push(d);
        dims.push(k);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            let weight = read_tensor(&mut lines, out_dim, in_dim)?;
            let bias = read_tensor(&mut lines, 1, out_dim)?.into_vec();
            layers.push(Dense { weight, bias });
        }
        lines.expect_end()?;
        let classifier = layers.pop().expect("at least one layer");
        let mut model = Model::from_layers(layers, classifier)?;
        model.classifier_frozen = frozen;
        Ok(model)
    }
}

fn read_tensor(lines: &mut Lines<'_>, rows: usize, cols: usize) -> Result<Matrix> {
    let (ln, count) = lines.next_line("tensor row count")?;
    let n: usize = count
        .trim()
        .parse()
        .map_err(|_| lines.error(ln, format!("invalid row count {count:?}")))?;
    if n != rows {
        return Err(lines.error(ln, format!("expected {rows} rows, header declares {n}")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (ln, row) = lines.next_line("tensor row")?;
        data.extend(lines.parse_floats(ln, row, cols)?);
    }
    Matrix::from_vec(rows, cols, data).map_err(|e| match e {
        Error::NonFinite(_) => lines.error(ln, "non-finite value"),
        other => other,
    })
}
