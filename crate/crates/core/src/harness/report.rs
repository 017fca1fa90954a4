use std::fmt::Write;

use super::run::RunManifest;
use super::sweep::mean_stderr;
use crate::filters::MethodConfig;

const LABELS: [(&str, &str); 3] = [("enkf", "EnKF"), ("sir", "SIR"), ("otpf", "OTPF")];

/// A Markdown table with one row per manifest and the mean wall-clock seconds
/// of one run of each method. Methods that were not run show `-`; failed runs
/// are marked with `*`.
pub fn timing_table(manifests: &[RunManifest]) -> String {
    debug_assert_eq!(LABELS.map(|l| l.0), MethodConfig::NAMES);
    let mut out = String::from("| Example |");
    for (_, label) in LABELS {
        write!(out, " {label} |").unwrap();
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(LABELS.len()));
    out.push('\n');
    for m in manifests {
        write!(out, "| {} |", m.experiment).unwrap();
        for (name, _) in LABELS {
            let runs: Vec<_> = m.runs.iter().filter(|r| r.method == name).collect();
            if runs.is_empty() {
                out.push_str(" - |");
                continue;
            }
            let secs: Vec<f64> = runs.iter().map(|r| r.total_seconds).collect();
            let failed = runs.iter().any(|r| r.failure.is_some());
            write!(out, " {:.3}{} |", mean_stderr(&secs).0, if failed { "*" } else { "" }).unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::spec::parse_experiment_spec;
    use crate::harness::run::run_experiment;

    #[test]
    fn table_has_a_row_per_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = serde_json::to_string(dir.path()).unwrap();
        let spec = parse_experiment_spec(&format!(
            r#"{{"experiment":"lin","model":"dynamic_linear","particles":20,"steps":2,"seeds":[0,1],
                "methods":["enkf","sir"],"reference":"none","out_dir":{out}}}"#
        ))
        .unwrap();
        let manifest = run_experiment(&spec).unwrap();
        let table = timing_table(&[manifest]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "| Example | EnKF | SIR | OTPF |");
        assert_eq!(lines[1], "|---|---:|---:|---:|");
        assert!(lines[2].starts_with("| lin | ") && lines[2].ends_with(" - |"), "{}", lines[2]);
        assert_eq!(lines.len(), 3);
    }
}
