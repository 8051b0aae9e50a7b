use std::fs;
use std::path::Path;

use super::ablation::AblationEntry;
use super::train::RunResult;
use crate::error::Result;

/// `step,loss,error_expectation,error_argmax`, one line per recorded step.
pub fn trace_csv(result: &RunResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "loss", "error_expectation", "error_argmax"])?;
    for r in &result.rows {
        w.write_record([
            r.step.to_string(),
            r.loss.to_string(),
            r.error_expectation.to_string(),
            r.error_argmax.to_string(),
        ])?;
    }
    finish(w)
}

/// `instance_id,joint,err,decoder` for both decoders at the final step.
pub fn errors_csv(result: &RunResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["instance_id", "joint", "err", "decoder"])?;
    for e in &result.instance_errors {
        w.write_record([
            e.instance_id.to_string(),
            e.joint.to_string(),
            e.err.to_string(),
            e.decoder.name().to_string(),
        ])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `trace.csv`, `errors.csv`, `metrics.json` and `config_echo.json`.
pub fn write_run(dir: impl AsRef<Path>, result: &RunResult) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("trace.csv"), trace_csv(result)?)?;
    fs::write(dir.join("errors.csv"), errors_csv(result)?)?;
    let metrics = serde_json::json!({
        "loss": result.loss,
        "primary_decoder": result.primary_decoder,
        "final_loss": result.final_loss,
        "final_metrics": result.final_metrics,
        "secondary_metrics": result.secondary_metrics,
        "inconsistency_rate": result.trace.inconsistency_rate,
        "secondary_inconsistency_rate": result.secondary_trace.inconsistency_rate,
        "recorded_steps": result.rows.len(),
        "wall_time": result.wall_time,
    });
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
    fs::write(
        dir.join("config_echo.json"),
        serde_json::to_string_pretty(&result.config_echo)? + "\n",
    )?;
    Ok(())
}

/// `label,mean_error,final_loss,inconsistency_rate` per entry.
pub fn ablation_csv(entries: &[AblationEntry]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "mean_error", "final_loss", "inconsistency_rate"])?;
    for e in entries {
        w.write_record([
            e.label.clone(),
            e.result.final_metrics.mean_error.to_string(),
            e.result.final_loss.to_string(),
            e.result.trace.inconsistency_rate.to_string(),
        ])?;
    }
    finish(w)
}

/// `ablation.csv` plus one run directory per entry.
pub fn write_ablation(dir: impl AsRef<Path>, entries: &[AblationEntry]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("ablation.csv"), ablation_csv(entries)?)?;
    for e in entries {
        let name: String = e
            .label
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        write_run(dir.join(name), &e.result)?;
    }
    Ok(())
}
