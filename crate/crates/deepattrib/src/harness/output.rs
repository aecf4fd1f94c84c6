//! Report persistence: one canonical-JSON report per run plus CSV tables
//! for anything tabular. Outputs contain no timestamps or machine state,
//! so a re-run under the same config reproduces them byte for byte.

use std::path::Path;

use super::runs::{ExperimentReport, ExperimentResults};
use super::HarnessError;

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn fmt_opt(v: Option<f32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write `report.json` and the experiment's CSV tables into `out_dir`.
pub fn write_outputs(out_dir: &Path, report: &ExperimentReport) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    write(
        &out_dir.join("report.json"),
        &crate::canonical_json(report)?,
    )?;

    match &report.results {
        ExperimentResults::Benign(r) => {
            write(&out_dir.join("confusion.csv"), &r.confusion.to_csv())?;
            let mut csv = String::from("true_id,winner,margin\n");
            for p in &r.per_image {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    p.true_id,
                    p.winner,
                    fmt_opt(p.margin)
                ));
            }
            write(&out_dir.join("per_image.csv"), &csv)?;
        }
        ExperimentResults::AttemptsSweep(r) => {
            let mut csv = String::from("attempts,error\n");
            for (m, e) in r.attempts_grid.iter().zip(&r.errors) {
                csv.push_str(&format!("{m},{e}\n"));
            }
            write(&out_dir.join("attempts_sweep.csv"), &csv)?;
        }
        ExperimentResults::Augmentation(r) => {
            let mut csv = String::from(
                "augmentation,budget,error,paper_error_3_seeds,paper_error_10_seeds\n",
            );
            for row in &r.rows {
                for (m, e) in &row.errors {
                    csv.push_str(&format!(
                        "{},{m},{e},{},{}\n",
                        row.kind,
                        fmt_opt(row.paper_reference.map(|p| p.0)),
                        fmt_opt(row.paper_reference.map(|p| p.1)),
                    ));
                }
            }
            write(&out_dir.join("augmentation.csv"), &csv)?;
        }
        ExperimentResults::Compression(r) => {
            let mut csv = String::from("quality,error,benign_error,paper_error\n");
            for (q, e, p) in &r.rows {
                csv.push_str(&format!("{q},{e},{},{}\n", r.benign_error, fmt_opt(*p)));
            }
            write(&out_dir.join("compression.csv"), &csv)?;
        }
        ExperimentResults::Adversarial(r) => {
            let mut csv = String::from("attack,param,error,mean_ssim,mean_delta_norm\n");
            for (name, points) in [
                ("fgsm-image-linf", &r.fgsm_image),
                ("fgsm-seed", &r.fgsm_seed),
                ("cw", &r.cw),
            ] {
                for p in points {
                    csv.push_str(&format!(
                        "{name},{},{},{},{}\n",
                        p.param, p.error, p.mean_ssim, p.mean_delta_norm
                    ));
                }
            }
            write(&out_dir.join("adversarial.csv"), &csv)?;
        }
        ExperimentResults::Transfer(r) => {
            let mut csv = String::from(
                "attack,param,clf_accuracy,attribution_accuracy,mean_ssim,mean_delta_norm\n",
            );
            for row in &r.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.attack,
                    row.param,
                    row.clf_accuracy,
                    row.attribution_accuracy,
                    row.mean_ssim,
                    row.mean_delta_norm
                ));
            }
            write(&out_dir.join("transfer.csv"), &csv)?;
        }
        ExperimentResults::Finetune(r) => {
            write(&out_dir.join("finetune_confusion.csv"), &r.confusion.to_csv())?;
            if let Some(loo) = &r.leave_one_out {
                let mut csv = String::from("metric,value\n");
                csv.push_str(&format!("family_accuracy,{}\n", loo.family_accuracy));
                csv.push_str(&format!("random_guess_floor,{}\n", loo.random_guess_floor));
                csv.push_str(&format!(
                    "parent_images_child_wins,{}\n",
                    loo.parent_images_child_wins
                ));
                write(&out_dir.join("leave_one_out.csv"), &csv)?;
            }
        }
        ExperimentResults::TwoArchAnalog(r) => {
            write(&out_dir.join("confusion.csv"), &r.confusion.to_csv())?;
        }
        ExperimentResults::ForceOutputDemo(r) => {
            let mut csv = String::from("metric,value\n");
            csv.push_str(&format!("targets,{}\n", r.targets));
            csv.push_str(&format!("forced_wins,{}\n", r.forced_wins));
            csv.push_str(&format!("baseline_wins,{}\n", r.baseline_wins));
            csv.push_str(&format!("max_pixel_error,{}\n", r.max_pixel_error));
            write(&out_dir.join("force_output.csv"), &csv)?;
        }
    }
    Ok(())
}
