//! Plain-text side files: the training history table and the labels sidecar.

use std::fmt::Write as _;

use coda_core::trainer::{EpochRecord, StopReason, TrainHistory};

pub const HISTORY_HEADER: &str = "epoch,reason,mmd2,total";

/// One `epoch,reason,mmd2,total` row per epoch, followed by `#` comment lines
/// for the stop reason, step count and kernel bandwidths. Floats use the
/// shortest representation that parses back to the same value.
pub fn format_history(h: &TrainHistory) -> String {
    let mut s = String::new();
    s.push_str(HISTORY_HEADER);
    s.push('\n');
    for r in &h.records {
        writeln!(s, "{},{},{},{}", r.epoch, r.reason, r.mmd2, r.total).unwrap();
    }
    writeln!(s, "# stop={}", h.stop.as_str()).unwrap();
    writeln!(s, "# steps={}", h.steps).unwrap();
    if let Some(sigmas) = h.kernel.sigmas() {
        writeln!(s, "# sigmas={}", join(sigmas)).unwrap();
    }
    s
}

pub fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedHistory {
    pub records: Vec<EpochRecord>,
    pub stop: Option<StopReason>,
}

/// Reads back the rows and the stop reason written by [`format_history`].
pub fn parse_history(text: &str) -> Result<ParsedHistory, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, HISTORY_HEADER)) => {}
        _ => return Err(format!("history must start with {HISTORY_HEADER:?}")),
    }
    let mut records = Vec::new();
    let mut stop = None;
    for (i, line) in lines {
        if let Some(comment) = line.strip_prefix('#') {
            match comment.trim().strip_prefix("stop=") {
                Some("converged") => stop = Some(StopReason::Converged),
                Some("max_epochs") => stop = Some(StopReason::MaxEpochs),
                Some(other) => return Err(format!("line {}: unknown stop reason {other:?}", i + 1)),
                None => {}
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || format!("line {}: expected epoch,reason,mmd2,total", i + 1);
        if f.len() != 4 {
            return Err(bad());
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
        records.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            reason: num(1)?,
            mmd2: num(2)?,
            total: num(3)?,
        });
    }
    Ok(ParsedHistory { records, stop })
}

pub fn format_labels(labels: &[i64]) -> String {
    labels.iter().map(|y| format!("{y}\n")).collect()
}

/// One integer per line; blank lines are ignored.
pub fn parse_labels(text: &str) -> Result<Vec<i64>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| format!("line {}: {:?} is not an integer", i + 1, l))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use coda_core::KernelSpec;

    #[test]
    fn history_round_trip() {
        let h = TrainHistory {
            records: vec![
                EpochRecord { epoch: 1, reason: 0.1, mmd2: 1.0 / 3.0, total: 0.1 + 1.0 / 3.0 },
                EpochRecord { epoch: 2, reason: 5e-324, mmd2: 0.0, total: 5e-324 },
            ],
            stop: StopReason::Converged,
            kernel: KernelSpec::rbf(vec![0.5, 1.0]).unwrap(),
            steps: 32,
            wall_time_secs: Some(1.0),
        };
        let text = format_history(&h);
        assert!(text.starts_with("epoch,reason,mmd2,total\n1,0.1,0.3333333333333333,"));
        assert!(text.ends_with("# stop=converged\n# steps=32\n# sigmas=0.5,1\n"));
        let back = parse_history(&text).unwrap();
        assert_eq!(back.records, h.records);
        assert_eq!(back.stop, Some(StopReason::Converged));
        assert!(parse_history("epoch,total\n").is_err());
        assert!(parse_history("epoch,reason,mmd2,total\n1,2,3\n").is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(format_labels(&[1, -1, 1]), "1\n-1\n1\n");
        assert_eq!(parse_labels("1\n-1\n\n1\n").unwrap(), vec![1, -1, 1]);
        assert!(parse_labels("1\nx\n").unwrap_err().contains("line 2"));
    }
}
