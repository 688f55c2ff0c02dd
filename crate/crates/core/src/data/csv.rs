//! Plain CSV fallback: one row per sample — label string, then `V * L`
//! values row-major. `V` and `L` come from the caller (CLI flags).

use crate::error::{Error, Result};

use super::TimeSeriesDataset;

pub fn parse_csv(text: &str, v: usize, l: usize) -> Result<TimeSeriesDataset> {
    if v == 0 || l < 2 {
        return Err(Error::Data(format!("invalid CSV dimensions V={v}, L={l}")));
    }
    let expect = v * l;
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let label_str = fields.next().unwrap().trim();
        let label = match class_names.iter().position(|c| c == label_str) {
            Some(i) => i,
            None => {
                class_names.push(label_str.to_string());
                class_names.len() - 1
            }
        };
        let mut values = Vec::with_capacity(expect);
        for tok in fields {
            let x: f32 = tok
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("non-numeric value '{}'", tok.trim()) })?;
            values.push(x);
        }
        if values.len() != expect {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {expect} values (V={v} x L={l}), got {}", values.len()),
            });
        }
        samples.push(values);
        labels.push(label);
    }
    if samples.is_empty() {
        return Err(Error::Data("CSV contains no samples".into()));
    }
    let ds = TimeSeriesDataset {
        samples,
        labels,
        class_names,
        n_variables: v,
        series_length: l,
        origin: "csv".to_string(),
    };
    ds.validate()?;
    Ok(ds)
}
