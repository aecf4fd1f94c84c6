use deepattrib::harness::runs::{run_experiment, ExperimentResults};
use deepattrib::harness::{ExperimentConfig, ExperimentKind};
use deepattrib::perturb::{AugmentationKind, SubstituteConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();

    // compression 8/gen, full protocol
    {
        let t = Instant::now();
        let mut cfg = ExperimentConfig::default_for("compression", 42).unwrap();
        cfg.images_per_generator = 8;
        let r = run_experiment(&cfg).unwrap();
        if let ExperimentResults::Compression(c) = &r.results {
            println!("[compression] benign={} rows={:?} ({:?})", c.benign_error, c.rows, t.elapsed());
        }
    }

    // augmentation mirror vs blur, 67/gen, steps 400
    {
        let t = Instant::now();
        let mut cfg = ExperimentConfig::default_for("augmentation", 42).unwrap();
        cfg.images_per_generator = 67;
        cfg.reconstruction.steps = 400;
        cfg.kind = ExperimentKind::Augmentation {
            kinds: vec![AugmentationKind::GaussianBlur, AugmentationKind::Mirror],
            attempt_budgets: vec![3],
        };
        let r = run_experiment(&cfg).unwrap();
        if let ExperimentResults::Augmentation(a) = &r.results {
            for row in &a.rows { println!("[aug] {} errors={:?}", row.kind, row.errors); }
            println!("[aug] ({:?})", t.elapsed());
        }
    }

    // transfer
    {
        let t = Instant::now();
        let mut cfg = ExperimentConfig::default_for("transfer", 42).unwrap();
        cfg.images_per_generator = 12;
        cfg.kind = ExperimentKind::Transfer {
            substitute: SubstituteConfig { steps: 1200, batch_size: 16, lr: 1e-3, rng_seed: 1 },
            train_per_generator: 800,
            test_per_generator: 100,
            fgsm_eps: vec![0.05, 0.1],
            cw_c: 5.0,
            cw_steps: 60,
            cw_lr: 0.01,
        };
        let r = run_experiment(&cfg).unwrap();
        if let ExperimentResults::Transfer(tr) = &r.results {
            println!("[transfer] test_acc={} clean_attr={} ({:?})", tr.substitute_test_accuracy, tr.clean_attribution_accuracy, t.elapsed());
            for row in &tr.rows {
                println!("[transfer] {} {} clf={} attr={} ssim={}", row.attack, row.param, row.clf_accuracy, row.attribution_accuracy, row.mean_ssim);
            }
        }
    }

    // finetune 6/gen
    {
        let t = Instant::now();
        let mut cfg = ExperimentConfig::default_for("finetune", 42).unwrap();
        cfg.images_per_generator = 6;
        let r = run_experiment(&cfg).unwrap();
        if let ExperimentResults::Finetune(f) = &r.results {
            println!("[finetune] acc={} param_dist={:?}", f.accuracy, f.param_distances);
            if let Some(loo) = &f.leave_one_out {
                println!("[finetune] loo_family={} floor={} parent_child={} ({:?})", loo.family_accuracy, loo.random_guess_floor, loo.parent_images_child_wins, t.elapsed());
            }
        }
    }

    // adversarial trend 12/gen (new arch)
    {
        let t = Instant::now();
        let mut cfg = ExperimentConfig::default_for("adversarial", 42).unwrap();
        cfg.images_per_generator = 12;
        cfg.kind = ExperimentKind::Adversarial {
            fgsm_image_eps: vec![0.0, 0.01, 0.0588, 0.1],
            fgsm_seed_eps: vec![0.0169, 0.196],
            cw_c: vec![1.0],
            cw_steps: 100,
            cw_lr: 0.01,
        };
        let r = run_experiment(&cfg).unwrap();
        if let ExperimentResults::Adversarial(a) = &r.results {
            println!("[adv] fgsm_img={:?}", a.fgsm_image.iter().map(|p| (p.param, p.error, p.mean_ssim)).collect::<Vec<_>>());
            println!("[adv] fgsm_seed={:?} cw={:?} ({:?})",
                a.fgsm_seed.iter().map(|p| (p.param, p.error)).collect::<Vec<_>>(),
                a.cw.iter().map(|p| (p.param, p.error, p.mean_delta_norm)).collect::<Vec<_>>(), t.elapsed());
        }
    }

    // benign full 100/gen last
    {
        let t = Instant::now();
        let cfg = ExperimentConfig::default_for("benign", 42).unwrap();
        let r = run_experiment(&cfg).unwrap();
        if let ExperimentResults::Benign(b) = &r.results {
            println!("[benign] acc={} err={} mean_margin={} ({:?})", b.accuracy, b.error_rate, b.mean_margin, t.elapsed());
        }
    }

    println!("CALIBRATION_DONE total {:?}", t0.elapsed());
}
