//! One pipeline run per value of a configuration axis.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::bounds::{corollary_tv_check, BoundReport, PipelineRun};
use crate::error::{Error, Result};

use super::config::{format_float, format_value, ExperimentConfig};
use super::record::{result_cells, write_table, RESULT_COLUMNS};

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub config: ExperimentConfig,
    pub outcome: std::result::Result<BoundReport, Error>,
    pub runtime_ms: Option<f64>,
}

impl SweepRow {
    pub fn status(&self) -> &'static str {
        match &self.outcome {
            Ok(r) if r.holds() => "PASS",
            Ok(_) => "FAIL",
            Err(_) => "ERROR",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

/// Splits a comma-separated value list, keeping bracketed lists intact.
pub fn split_values(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            _ => {}
        }
        if ch == ',' && depth == 0 {
            out.push(cur.trim().to_string());
            cur.clear();
        } else {
            cur.push(ch);
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// Runs the pipeline for every value of `axis`; rows keep input order.
pub fn sweep(template: &ExperimentConfig, axis: &str, values: &[String]) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Usage("a sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| template.with_overrides(&[format!("{axis}={v}")]))
        .collect::<Result<Vec<_>>>()?;
    let rows = configs
        .into_par_iter()
        .zip(values.par_iter())
        .map(|(config, value)| {
            let started = Instant::now();
            let outcome = run_row(&config);
            let runtime_ms = config.record_timings.then(|| started.elapsed().as_secs_f64() * 1e3);
            SweepRow {
                value: value.clone(),
                config,
                outcome,
                runtime_ms,
            }
        })
        .collect();
    Ok(SweepTable {
        axis: axis.to_string(),
        rows,
    })
}

fn run_row(cfg: &ExperimentConfig) -> Result<BoundReport> {
    let spec = cfg.rate_spec()?;
    let data = cfg.data(spec.space())?;
    let run = PipelineRun::execute(&spec, &data, &cfg.integrator, cfg.perturbation, cfg.start)?;
    corollary_tv_check(&run)
}

impl SweepTable {
    pub fn header(&self) -> Vec<String> {
        let mut keys: Vec<String> = Vec::new();
        for row in &self.rows {
            for (k, _) in row.config.axes() {
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
        }
        keys.extend(RESULT_COLUMNS.iter().map(|s| s.to_string()));
        keys
    }

    pub fn cells(&self) -> Vec<Vec<String>> {
        let header = self.header();
        let n_axes = header.len() - RESULT_COLUMNS.len();
        self.rows
            .iter()
            .map(|row| {
                let axes = row.config.axes();
                let mut cells: Vec<String> = header[..n_axes]
                    .iter()
                    .map(|k| axes.iter().find(|(a, _)| a == k).map(|(_, v)| format_value(v)).unwrap_or_default())
                    .collect();
                let runtime = row.runtime_ms.map(format_float).unwrap_or_default();
                match &row.outcome {
                    Ok(r) => cells.extend(result_cells(
                        r.lhs,
                        r.rhs,
                        r.margin,
                        [Some(r.prior_term), Some(r.loss_term), r.l3_term],
                        &runtime,
                        r.holds(),
                    )),
                    Err(_) => {
                        cells.extend(std::iter::repeat_n(String::new(), RESULT_COLUMNS.len() - 2));
                        cells.push(runtime);
                        cells.push("ERROR".into());
                    }
                }
                cells
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_table(path, &self.header(), &self.cells())
    }

    /// First error or violated bound, in row order.
    pub fn verdict(&self) -> Result<()> {
        for row in &self.rows {
            match &row.outcome {
                Err(e) => return Err(e.clone()),
                Ok(r) if !r.holds() => {
                    return Err(Error::Hypothesis(format!(
                        "{}={}: bound violated with margin {}",
                        self.axis,
                        row.value,
                        format_float(r.margin)
                    )))
                }
                Ok(_) => {}
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for row in &self.rows {
            match &row.outcome {
                Ok(r) => s.push_str(&format!(
                    "{} {}={}: lhs={} rhs={} margin={}\n",
                    row.status(),
                    self.axis,
                    row.value,
                    format_float(r.lhs),
                    format_float(r.rhs),
                    format_float(r.margin)
                )),
                Err(e) => s.push_str(&format!("ERROR {}={}: {e}\n", self.axis, row.value)),
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::RateKind;
    use crate::score::Perturbation;

    #[test]
    fn value_splitting() {
        assert_eq!(split_values("0, 0.1,0.5"), ["0", "0.1", "0.5"]);
        assert_eq!(split_values("[0,1],[1,0]"), ["[0,1]", "[1,0]"]);
    }

    #[test]
    fn epsilon_sweep_is_ordered_and_monotone() {
        let mut cfg = ExperimentConfig::new(3, 2, RateKind::Masked);
        cfg.perturbation = Perturbation::uniform(0.0, 3).unwrap();
        let values = split_values("0,0.1,0.25,0.5");
        let t = sweep(&cfg, "perturbation.epsilon", &values).unwrap();
        assert!(t.verdict().is_ok(), "{}", t.summary());
        let rhs: Vec<f64> = t.rows.iter().map(|r| r.outcome.as_ref().unwrap().rhs).collect();
        assert!(rhs.windows(2).all(|w| w[0] < w[1]), "{rhs:?}");
        let cells = t.cells();
        assert_eq!(cells.len(), 4);
        let col = t.header().iter().position(|h| h == "perturbation.epsilon").unwrap();
        assert_eq!(cells[2][col], format_float(0.25));
    }

    #[test]
    fn vocab_sweep_at_zero_error_has_constant_rhs() {
        let cfg = ExperimentConfig::new(2, 2, RateKind::Uniform);
        let t = sweep(&cfg, "vocab_size", &split_values("2,4,8")).unwrap();
        let rhs: Vec<f64> = t.rows.iter().map(|r| r.outcome.as_ref().unwrap().rhs).collect();
        assert!(rhs.iter().all(|&r| r == rhs[0]));
    }

    #[test]
    fn horizon_sweep_prior_term_decays() {
        let cfg = ExperimentConfig::new(2, 2, RateKind::Uniform);
        let t = sweep(&cfg, "schedule.horizon", &split_values("0.5,1,2")).unwrap();
        let prior: Vec<f64> = t.rows.iter().map(|r| r.outcome.as_ref().unwrap().prior_term).collect();
        for (p, h) in prior.iter().zip([0.5f64, 1.0, 2.0]) {
            assert!((p - 2.0 * (-h).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_axis_is_rejected() {
        let cfg = ExperimentConfig::new(2, 2, RateKind::Uniform);
        assert!(sweep(&cfg, "nope", &["1".into()]).is_err());
        assert!(sweep(&cfg, "seq_len", &[]).is_err());
    }
}
