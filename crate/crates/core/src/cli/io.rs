//! File formats: the ScanFile CSV for binned scans and the per-scan fit table.
//!
//! A ScanFile starts with two comment lines, the window field names and their
//! values in MHz, followed by one row of non-negative integer bin counts per
//! scan:
//!
//! ```text
//! # window_lo_mhz,window_hi_mhz,bin_width_mhz
//! # -75.000,75.000,2.000
//! 0,0,1,0,...
//! ```
//!
//! Window values may be absolute laser frequencies; [`ingest`] subtracts the
//! nominal resonance so the core only ever sees detunings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fitting::FitResult;
use crate::lineshape::FrequencyWindow;
use crate::synth::{Provenance, Scan};

pub const SCAN_HEADER: &str = "# window_lo_mhz,window_hi_mhz,bin_width_mhz";

/// Serializes scans sharing one window. MHz values are written with three
/// decimals.
pub fn write_scan_csv(scans: &[Scan]) -> Result<String> {
    let window = match scans.first() {
        Some(s) => s.window,
        None => return Err(Error::EmptySamples),
    };
    if let Some(s) = scans.iter().find(|s| s.window != window) {
        return Err(Error::InvalidParameter(format!("scan {} has a different window", s.index)));
    }
    let mut out = format!(
        "{SCAN_HEADER}\n# {:.3},{:.3},{:.3}\n",
        window.lo, window.hi, window.bin_width
    );
    for s in scans {
        for (i, c) in s.counts.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{c}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses ScanFile text. `path` only labels errors; `nominal_resonance_mhz`
/// is subtracted from the window edges.
pub fn parse_scan_csv(text: &str, path: &Path, nominal_resonance_mhz: f64) -> Result<Vec<Scan>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));

    match lines.next() {
        Some((_, l)) if l.trim() == SCAN_HEADER => {}
        Some((n, l)) => return Err(err(n, format!("expected header `{SCAN_HEADER}`, found `{l}`"))),
        None => return Err(err(1, "empty file".into())),
    }
    let (n, values) = lines.next().ok_or_else(|| err(2, "missing window values".into()))?;
    let values = values
        .strip_prefix('#')
        .ok_or_else(|| err(n, "window values must be a `#` comment line".into()))?;
    let fields: Vec<f64> = values
        .split(',')
        .map(|f| f.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(n, format!("bad window value: {e}")))?;
    let [lo, hi, bw] = fields[..] else {
        return Err(err(n, format!("expected 3 window values, found {}", fields.len())));
    };
    let window = FrequencyWindow::new(lo - nominal_resonance_mhz, hi - nominal_resonance_mhz, bw)
        .map_err(|e| err(n, e.to_string()))?;
    let expected = window.n_bins();

    let mut scans = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let counts: Vec<u32> = line
            .split(',')
            .enumerate()
            .map(|(col, f)| {
                f.trim()
                    .parse::<u32>()
                    .map_err(|_| err(n, format!("column {}: `{}` is not a non-negative integer count", col + 1, f.trim())))
            })
            .collect::<Result<_>>()?;
        if counts.len() != expected {
            return Err(err(n, format!("row has {} bins, header implies {expected}", counts.len())));
        }
        let index = scans.len();
        scans.push(Scan {
            window,
            counts,
            provenance: Provenance::Ingested,
            index,
        });
    }
    Ok(scans)
}

pub fn ingest(path: &Path, nominal_resonance_mhz: f64) -> Result<Vec<Scan>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scan_csv(&text, path, nominal_resonance_mhz)
}

pub const FIT_HEADER: &str =
    "scan,status,accepted,fwhm_mhz,stderr_fwhm_mhz,amplitude,center_mhz,sigma_mhz,gamma_mhz,offset,rss,iterations";

/// One row per scan, in scan order. Unavailable values are empty.
pub fn write_fit_csv(results: &[FitResult]) -> String {
    let mut out = format!("{FIT_HEADER}\n");
    let num = |v: f64, digits: usize| if v.is_finite() { format!("{v:.digits$}") } else { String::new() };
    for (i, r) in results.iter().enumerate() {
        let status = serde_json::to_value(r.status).unwrap();
        let p = &r.params;
        writeln!(
            out,
            "{i},{},{},{},{},{},{},{},{},{},{},{}",
            status.as_str().unwrap_or_default(),
            r.accepted,
            num(r.fwhm, 3),
            r.stderr_fwhm.map_or(String::new(), |s| num(s, 6)),
            num(p.amplitude, 3),
            num(p.center, 3),
            num(p.sigma, 3),
            num(p.gamma, 3),
            num(p.offset, 6),
            num(r.rss, 6),
            r.iterations,
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_batch, ScanModel};

    fn p() -> &'static Path {
        Path::new("scans.csv")
    }

    #[test]
    fn one_zero_row() {
        let text = format!("{SCAN_HEADER}\n# -75,75,2\n{}\n", vec!["0"; 75].join(","));
        let scans = parse_scan_csv(&text, p(), 0.0).unwrap();
        assert_eq!(scans.len(), 1);
        assert_eq!(scans[0].counts, vec![0; 75]);
        assert_eq!(scans[0].provenance, Provenance::Ingested);
    }

    #[test]
    fn short_row_names_its_line() {
        let text = format!(
            "{SCAN_HEADER}\n# -75,75,2\n{}\n{}\n",
            vec!["0"; 75].join(","),
            vec!["1"; 74].join(",")
        );
        match parse_scan_csv(&text, p(), 0.0) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("74"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_values_are_located() {
        let mut row = vec!["0"; 75];
        row[9] = "-1";
        let text = format!("{SCAN_HEADER}\n# -75,75,2\n{}\n", row.join(","));
        let e = parse_scan_csv(&text, p(), 0.0).unwrap_err().to_string();
        assert!(e.contains("scans.csv:3") && e.contains("column 10"), "{e}");
        row[9] = "2.5";
        assert!(parse_scan_csv(&format!("{SCAN_HEADER}\n# -75,75,2\n{}\n", row.join(",")), p(), 0.0).is_err());
        assert!(parse_scan_csv("# wrong\n# -75,75,2\n", p(), 0.0).is_err());
        assert!(parse_scan_csv(&format!("{SCAN_HEADER}\n# -75,75\n"), p(), 0.0).is_err());
        assert!(parse_scan_csv(&format!("{SCAN_HEADER}\n# -75,75,7\n"), p(), 0.0).is_err());
    }

    #[test]
    fn absolute_frequencies_are_recentred() {
        // 470 THz resonance in MHz
        let nu = 470_000_000.0;
        let text = format!("{SCAN_HEADER}\n# {:.3},{:.3},2.000\n{}\n", nu - 75.0, nu + 75.0, vec!["0"; 75].join(","));
        let scans = parse_scan_csv(&text, p(), nu).unwrap();
        assert_eq!(scans[0].window, FrequencyWindow::default());
    }

    #[test]
    fn round_trip_is_identity() {
        let model = ScanModel::new(20.0, 25.0, 6.0, 2.0, 7).unwrap();
        let batch = synth_batch(&model, 300).unwrap();
        let text = write_scan_csv(&batch).unwrap();
        let back = parse_scan_csv(&text, p(), 0.0).unwrap();
        assert_eq!(back.len(), 300);
        for (a, b) in batch.iter().zip(&back) {
            assert_eq!((a.window, &a.counts, a.index), (b.window, &b.counts, b.index));
        }
        assert_eq!(write_scan_csv(&back).unwrap(), text);
    }
}
