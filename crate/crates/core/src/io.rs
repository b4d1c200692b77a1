//! CSV formats for count matrices, probability matrices, and trial
//! sequences, plus atomic file writing.
//!
//! Count matrix CSV: one header line `# N=<n> M=<m> tps=<t>`, then one row
//! per stimulus with comma-separated counts. Probability matrices use the
//! same layout without the tps field. Trial sequences use a
//! `trial,stimulus,response` header with one row per trial in presentation
//! order.

use std::fs;
use std::path::Path;

use crate::diag::TrialSequence;
use crate::error::VdrError;
use crate::model::{CountMatrix, ProbMatrix};
use crate::Result;

pub fn count_matrix_to_csv(m: &CountMatrix) -> String {
    let mut out = format!(
        "# N={} M={} tps={}\n",
        m.n_stimuli(),
        m.n_responses(),
        m.tps
    );
    for row in &m.counts {
        let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn count_matrix_from_csv(text: &str) -> Result<CountMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| VdrError::Parse("empty count matrix file".into()))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| VdrError::Parse("count matrix must start with '# N=.. M=.. tps=..'".into()))?;
    let mut n = None;
    let mut m = None;
    let mut tps = None;
    for tok in header.split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            let v: u64 = v
                .parse()
                .map_err(|_| VdrError::Parse(format!("bad header value in '{tok}'")))?;
            match k {
                "N" => n = Some(v as usize),
                "M" => m = Some(v as usize),
                "tps" => tps = Some(v),
                _ => {}
            }
        }
    }
    let (n, m, tps) = match (n, m, tps) {
        (Some(n), Some(m), Some(t)) => (n, m, t),
        _ => return Err(VdrError::Parse("header must carry N, M, and tps".into())),
    };
    let mut counts = Vec::with_capacity(n);
    for line in lines {
        // later '#' lines are provenance comments
        if line.trim_start().starts_with('#') {
            continue;
        }
        let row: std::result::Result<Vec<u64>, _> =
            line.split(',').map(|c| c.trim().parse::<u64>()).collect();
        counts.push(row.map_err(|e| VdrError::Parse(format!("bad count: {e}")))?);
    }
    if counts.len() != n || counts.iter().any(|r| r.len() != m) {
        return Err(VdrError::Parse(format!(
            "expected {n}x{m} counts, found {} rows",
            counts.len()
        )));
    }
    Ok(CountMatrix { counts, tps })
}

pub fn prob_matrix_to_csv(m: &ProbMatrix) -> String {
    let mut out = format!("# N={} M={}\n", m.n_stimuli(), m.n_responses());
    for row in &m.probs {
        let line: Vec<String> = row.iter().map(|p| format!("{p:.10}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn trial_sequence_to_csv(seq: &TrialSequence) -> String {
    let mut out = String::from("trial,stimulus,response\n");
    for (t, (stim, resp)) in seq.trials.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", t + 1, stim, resp));
    }
    out
}

pub fn trial_sequence_from_csv(text: &str) -> Result<TrialSequence> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| VdrError::Parse("empty trial sequence file".into()))?;
    if header.trim() != "trial,stimulus,response" {
        return Err(VdrError::Parse(
            "trial sequence header must be 'trial,stimulus,response'".into(),
        ));
    }
    let mut trials = Vec::new();
    for line in lines {
        let mut parts = line.split(',');
        let _trial = parts.next();
        let stim: usize = parts
            .next()
            .ok_or_else(|| VdrError::Parse("missing stimulus column".into()))?
            .trim()
            .parse()
            .map_err(|e| VdrError::Parse(format!("bad stimulus: {e}")))?;
        let resp: f64 = parts
            .next()
            .ok_or_else(|| VdrError::Parse("missing response column".into()))?
            .trim()
            .parse()
            .map_err(|e| VdrError::Parse(format!("bad response: {e}")))?;
        trials.push((stim, resp));
    }
    if trials.is_empty() {
        return Err(VdrError::Parse("trial sequence has no trials".into()));
    }
    Ok(TrialSequence { trials })
}

/// Write via a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into())
    ));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matrix_round_trip() {
        let m = CountMatrix {
            counts: vec![vec![1, 2, 3], vec![4, 5, 6]],
            tps: 6,
        };
        let csv = count_matrix_to_csv(&m);
        assert!(csv.starts_with("# N=2 M=3 tps=6\n"));
        let back = count_matrix_from_csv(&csv).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn bad_headers_are_rejected() {
        assert!(count_matrix_from_csv("1,2\n3,4\n").is_err());
        assert!(count_matrix_from_csv("# N=2 M=2\n1,2\n3,4\n").is_err());
        assert!(count_matrix_from_csv("# N=2 M=2 tps=2\n1,2\n").is_err());
    }

    #[test]
    fn trial_sequence_round_trip() {
        let seq = TrialSequence {
            trials: vec![(1, 3.0), (2, 1.5), (1, 2.0)],
        };
        let csv = trial_sequence_to_csv(&seq);
        let back = trial_sequence_from_csv(&csv).unwrap();
        assert_eq!(seq.trials, back.trials);
    }
}
