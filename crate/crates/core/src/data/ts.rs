//! Parser and writer for the `.ts` archive format: `@`-prefixed header
//! directives, `%` comments, then `@data` with one record per line.
//! Dimensions are `:`-separated, values comma-separated, and the class label
//! is the final `:`-field.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::{resample_linear, TimeSeriesDataset};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

struct Header {
    problem_name: String,
    dimensions: Option<usize>,
    class_names: Vec<String>,
    saw_class_label: bool,
}

/// Parse `.ts` text into a dataset. Series are resampled per channel to the
/// maximum observed length; `?` values are linearly interpolated (edge gaps
/// copy the nearest observation).
pub fn parse_ts(text: &str) -> Result<TimeSeriesDataset> {
    let mut header = Header {
        problem_name: String::new(),
        dimensions: None,
        class_names: Vec::new(),
        saw_class_label: false,
    };
    let mut data_line: Option<usize> = None;

    let mut lines = text.lines().enumerate();
    for (idx, raw) in &mut lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if !line.starts_with('@') {
            return Err(parse_err(line_no, format!("expected directive or comment, got '{line}'")));
        }
        let (key, rest) = match line.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (line, ""),
        };
        match key.to_ascii_lowercase().as_str() {
            "@problemname" => header.problem_name = rest.to_string(),
            "@univariate" => {
                if rest.eq_ignore_ascii_case("true") {
                    header.dimensions = Some(1);
                }
            }
            "@dimensions" => {
                let n: usize = rest
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("invalid @dimensions value '{rest}'")))?;
                header.dimensions = Some(n);
            }
            "@classlabel" => {
                header.saw_class_label = true;
                let mut parts = rest.split_whitespace();
                match parts.next() {
                    Some(flag) if flag.eq_ignore_ascii_case("true") => {
                        header.class_names = parts.map(str::to_string).collect();
                        if header.class_names.is_empty() {
                            return Err(parse_err(line_no, "@classLabel true requires a label list"));
                        }
                    }
                    Some(flag) if flag.eq_ignore_ascii_case("false") => {
                        return Err(parse_err(
                            line_no,
                            "@classLabel false: dataset has no class labels, cannot train a classifier",
                        ));
                    }
                    _ => return Err(parse_err(line_no, "malformed @classLabel directive")),
                }
            }
            "@data" => {
                data_line = Some(line_no);
                break;
            }
            // tolerated metadata: @timestamps, @missing, @equallength, @serieslength
            _ => {}
        }
    }

    let data_line = data_line
        .ok_or_else(|| parse_err(text.lines().count().max(1), "missing @data directive"))?;
    if !header.saw_class_label {
        return Err(parse_err(data_line, "missing @classLabel directive before @data"));
    }

    let label_index: HashMap<&str, usize> =
        header.class_names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    // raw per-record channels (possibly ragged) before resampling
    let mut raw: Vec<(Vec<Vec<f64>>, usize, usize)> = Vec::new(); // (channels, label, line)
    let mut declared_v = header.dimensions;
    let mut max_len = 0usize;

    for (idx, raw_line) in lines {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let mut fields: Vec<&str> = line.split(':').collect();
        if fields.len() < 2 {
            return Err(parse_err(line_no, "record must contain at least one dimension and a label"));
        }
        let label_str = fields.pop().unwrap().trim();
        let &label = label_index
            .get(label_str)
            .ok_or_else(|| parse_err(line_no, format!("undeclared class label '{label_str}'")))?;

        let v = declared_v.get_or_insert(fields.len());
        if fields.len() != *v {
            return Err(parse_err(
                line_no,
                format!("record has {} dimensions, expected {}", fields.len(), v),
            ));
        }

        let mut channels = Vec::with_capacity(fields.len());
        for dim in &fields {
            let mut values = Vec::new();
            for tok in dim.split(',') {
                let tok = tok.trim();
                if tok == "?" {
                    values.push(f64::NAN); // interpolated below
                } else {
                    let x: f64 = tok.parse().map_err(|_| {
                        parse_err(line_no, format!("non-numeric value '{tok}'"))
                    })?;
                    values.push(x);
                }
            }
            if values.len() < 2 {
                return Err(parse_err(line_no, "each dimension needs at least 2 observations"));
            }
            interpolate_missing(&mut values)
                .map_err(|msg| parse_err(line_no, msg))?;
            max_len = max_len.max(values.len());
            channels.push(values);
        }
        raw.push((channels, label, line_no));
    }

    if raw.is_empty() {
        return Err(parse_err(data_line, "no records after @data"));
    }

    let v = declared_v.unwrap();
    let l = max_len;
    let mut samples = Vec::with_capacity(raw.len());
    let mut labels = Vec::with_capacity(raw.len());
    for (channels, label, _line) in raw {
        let mut flat = Vec::with_capacity(v * l);
        for ch in channels {
            let resampled = resample_linear(&ch, l)?;
            flat.extend(resampled.iter().map(|&x| x as f32));
        }
        samples.push(flat);
        labels.push(label);
    }

    let ds = TimeSeriesDataset {
        samples,
        labels,
        class_names: header.class_names,
        n_variables: v,
        series_length: l,
        origin: if header.problem_name.is_empty() {
            "ts".to_string()
        } else {
            format!("ts:{}", header.problem_name)
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Replace NaN markers by linear interpolation between the nearest observed
/// neighbors; leading/trailing gaps copy the nearest observation.
fn interpolate_missing(values: &mut [f64]) -> std::result::Result<(), String> {
    let observed: Vec<usize> = (0..values.len()).filter(|&i| !values[i].is_nan()).collect();
    if observed.is_empty() {
        return Err("dimension consists entirely of missing values".into());
    }
    for i in 0..values.len() {
        if !values[i].is_nan() {
            continue;
        }
        let next = observed.iter().find(|&&o| o > i);
        let prev = observed.iter().rev().find(|&&o| o < i);
        values[i] = match (prev, next) {
            (Some(&p), Some(&n)) => {
                let w = (i - p) as f64 / (n - p) as f64;
                values[p] + w * (values[n] - values[p])
            }
            (Some(&p), None) => values[p],
            (None, Some(&n)) => values[n],
            (None, None) => unreachable!("observed is non-empty"),
        };
    }
    Ok(())
}

/// Serialize a dataset back to `.ts` text (equal-length records).
pub fn write_ts(ds: &TimeSeriesDataset, problem_name: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("@problemName {problem_name}\n"));
    if ds.n_variables == 1 {
        out.push_str("@univariate true\n");
    } else {
        out.push_str(&format!("@dimensions {}\n", ds.n_variables));
    }
    out.push_str("@equalLength true\n");
    out.push_str(&format!("@seriesLength {}\n", ds.series_length));
    out.push_str(&format!("@classLabel true {}\n", ds.class_names.join(" ")));
    out.push_str("@data\n");
    let l = ds.series_length;
    for (sample, &label) in ds.samples.iter().zip(&ds.labels) {
        let mut parts = Vec::with_capacity(ds.n_variables + 1);
        for ch in sample.chunks(l) {
            let vals: Vec<String> = ch.iter().map(|v| format!("{v}")).collect();
            parts.push(vals.join(","));
        }
        parts.push(ds.class_names[label].clone());
        out.push_str(&parts.join(":"));
        out.push('\n');
    }
    out
}
