//! CSV and JSON writers.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

pub const CSV_HEADER: &str = "rule,metric,k,estimate,std_err,n_reps,seed";

/// `x` in positional decimal notation with 17 significant digits.
pub fn decimal17(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0.0000000000000000".into();
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let point = exp + 1;
    let body = if point <= 0 {
        format!("0.{}{digits}", "0".repeat((-point) as usize))
    } else if point as usize >= digits.len() {
        format!("{digits}{}", "0".repeat(point as usize - digits.len()))
    } else {
        let (int, frac) = digits.split_at(point as usize);
        format!("{int}.{frac}")
    };
    format!("{sign}{body}")
}

/// One CSV row; `k` and `std_err` are optional.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub rule: String,
    pub metric: &'static str,
    pub k: Option<u64>,
    pub estimate: f64,
    pub std_err: Option<f64>,
    pub n_reps: usize,
}

pub fn render_csv(rows: &[Row], seed: u64) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let seed = seed.to_string();
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for r in rows {
        let k = r.k.map(|k| k.to_string()).unwrap_or_default();
        let se = r.std_err.map(decimal17).unwrap_or_default();
        let n = r.n_reps.to_string();
        w.write_record([r.rule.as_str(), r.metric, &k, &decimal17(r.estimate), &se, &n, &seed])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_stdout(contents: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(contents.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Io(format!("stdout: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_formatting() {
        assert_eq!(decimal17(2.0), "2.0000000000000000");
        assert_eq!(decimal17(0.1), "0.10000000000000001");
        assert_eq!(decimal17(-123.5), "-123.50000000000000");
        assert_eq!(decimal17(1e-3), "0.0010000000000000000");
        assert_eq!(decimal17(1e20), "100000000000000000000");
        for x in [1.0 / 3.0, 2.0 / 3.0, 1e-7, 12345.678, -0.5] {
            assert_eq!(decimal17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_has_header_and_fixed_columns() {
        let rows = [Row { rule: "SR(A=1.4)".into(), metric: "arl2fa", k: None, estimate: 2.0, std_err: Some(0.5), n_reps: 10 }];
        let csv = render_csv(&rows, 3);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("SR(A=1.4),arl2fa,,2.0000000000000000,0.50000000000000000,10,3"));
        let quoted = [Row { rule: "shiryaev(rho=0.1,A=5)".into(), ..rows[0].clone() }];
        assert!(render_csv(&quoted, 3).contains("\"shiryaev(rho=0.1,A=5)\",arl2fa"));
    }
}
