use crate::config::{materialize_dataset, sequence_dirs, RunConfig};
use crate::{EvaluateArgs, GenDataArgs, InspectArgs, PredictArgs, TrainArgs};
use anyhow::{bail, Context, Result};
use pcpredict_core::data::{
    load_sequence_dir, save_frame_png, save_sequence_dir, side_by_side_grid, SyntheticSceneSpec,
};
use pcpredict_core::filter_design::ratio_stats;
use pcpredict_core::loss::{perceptual_distance, PerceptualBackbone};
use pcpredict_core::metrics::{psnr_capped, ssim};
use pcpredict_core::network::PcNetwork;
use pcpredict_core::train::{curve_csv, Trainer};
use pcpredict_core::{GradMode, Graph};
use rayon::prelude::*;
use std::path::Path;

/// PCPREDICT_SEED overrides the config seed when set.
fn seed_override() -> Result<Option<u64>> {
    match std::env::var("PCPREDICT_SEED") {
        Ok(v) => Ok(Some(v.parse().with_context(|| {
            format!("PCPREDICT_SEED must be an unsigned integer, got '{}'", v)
        })?)),
        Err(_) => Ok(None),
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = seed_override()? {
        cfg.train.seed = seed;
    }
    if let Some(fusion) = args.fusion {
        cfg.network.fusion = fusion.into();
    }
    if args.no_filter {
        cfg.train.filter = false;
        cfg.network.filter_enabled = false;
    }
    if let Some(up) = args.upsample {
        cfg.network.upsample = up.into();
    }
    if args.no_special_init {
        cfg.network.special_init = false;
    }
    if args.no_perceptual {
        cfg.train.perceptual = false;
    }
    if let Some(steps) = args.steps {
        cfg.train.steps = steps;
    }
    cfg.network.t1 = cfg.train.t1;
    cfg.network.t2 = cfg.train.t2;

    let dataset = materialize_dataset(&cfg.data)?;
    let net = PcNetwork::<f32>::init(cfg.network.clone(), cfg.train.seed)?;
    let mut trainer = Trainer::new(net, cfg.train.clone())?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let ckpt_path = args.out.join("checkpoint.pcpk");
    let chunk = if cfg.train.checkpoint_every == 0 {
        cfg.train.steps.max(1)
    } else {
        cfg.train.checkpoint_every
    };
    let mut curve = Vec::new();
    let mut remaining = cfg.train.steps;
    while remaining > 0 {
        let n = chunk.min(remaining);
        let part = trainer.train(&dataset, n)?;
        if let Some(last) = part.last() {
            eprintln!(
                "step {}: L1 {:.5} L2 {:.5} Llpips {:.6} Ltotal {:.5}",
                last.step, last.l1, last.l2, last.lpips, last.total
            );
        }
        curve.extend(part);
        trainer.save_checkpoint(&ckpt_path)?;
        std::fs::write(args.out.join("curve.csv"), curve_csv(&curve))
            .with_context(|| "writing curve.csv")?;
        remaining -= n;
    }
    if curve.is_empty() {
        // Zero-step run still leaves a valid initialization checkpoint.
        trainer.save_checkpoint(&ckpt_path)?;
        std::fs::write(args.out.join("curve.csv"), curve_csv(&curve))
            .with_context(|| "writing curve.csv")?;
    }
    println!(
        "trained {} steps; checkpoint at {}",
        cfg.train.steps,
        ckpt_path.display()
    );
    Ok(())
}

fn load_trainer(path: &Path) -> Result<Trainer<f32>> {
    Trainer::<f32>::from_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let trainer = load_trainer(&args.checkpoint)?;
    let net = &trainer.net;
    let t1 = net.config.t1;
    let dirs = sequence_dirs(&args.input)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for dir in &dirs {
        let seq = load_sequence_dir::<f32>(dir)?;
        if seq.len() < t1 {
            bail!(
                "{}: {} frames, need at least the T1 = {} context",
                dir.display(),
                seq.len(),
                t1
            );
        }
        let context = &seq.frames[..t1];
        let preds = net.predict_frames(context, args.horizon)?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into());
        let seq_out = args.out.join(&name);
        std::fs::create_dir_all(&seq_out)
            .with_context(|| format!("creating {}", seq_out.display()))?;
        for (k, frame) in preds.iter().enumerate() {
            save_frame_png(frame, &seq_out.join(format!("pred_{:03}.png", k)))?;
        }
        // Side-by-side layout as in the qualitative figures: ground truth
        // on top where available, predictions below.
        let gt: Vec<_> = (0..args.horizon)
            .filter_map(|k| seq.frames.get(t1 + k).cloned())
            .collect();
        let grid = side_by_side_grid(&gt, &preds)?;
        save_frame_png(&grid, &seq_out.join("grid.png"))?;
        println!("{}: wrote {} predicted frames", name, preds.len());
    }
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let trainer = load_trainer(&args.checkpoint)?;
    let net = &trainer.net;
    let t1 = net.config.t1;
    // The perceptual column always uses a backbone: the trained one when
    // the checkpoint carries that configuration, otherwise the seeded
    // default (an evaluation-only distance).
    let backbone = trainer
        .backbone
        .clone()
        .unwrap_or_else(|| PerceptualBackbone::init(net.config.input.0, trainer.cfg.seed));
    let dirs = sequence_dirs(&args.input)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    struct SeqResult {
        name: String,
        rows: Vec<(usize, f64, f64, f64)>,
    }
    let results: Vec<Result<SeqResult>> = dirs
        .par_iter()
        .map(|dir| {
            let seq = load_sequence_dir::<f32>(dir)?;
            if seq.len() < t1 + args.horizon {
                bail!(
                    "{}: {} frames, need T1 + horizon = {}",
                    dir.display(),
                    seq.len(),
                    t1 + args.horizon
                );
            }
            let preds = net.predict_frames(&seq.frames[..t1], args.horizon)?;
            let mut rows = Vec::with_capacity(args.horizon);
            for (k, pred) in preds.iter().enumerate() {
                let gt = &seq.frames[t1 + k];
                let s = ssim(gt, pred)?;
                let p = psnr_capped(gt, pred)?;
                let mut g = Graph::<f32>::new(GradMode::Eval);
                let bb = backbone.bind(&mut g);
                let a = g.leaf(gt.clone().into_dyn(), false);
                let b = g.leaf(pred.clone().into_dyn(), false);
                let d = perceptual_distance(&mut g, &bb, a, b)?;
                let lp = g.scalar_value(d) as f64;
                rows.push((t1 + k, s, p, lp));
            }
            Ok(SeqResult {
                name: dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "sequence".into()),
                rows,
            })
        })
        .collect();

    let mut metrics = String::from("sequence_id,t,ssim,psnr,perceptual\n");
    let mut summary = String::from("sequence_id,mean_ssim,mean_psnr,mean_perceptual\n");
    let mut overall = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for r in results {
        let r = r?;
        let mut acc = (0.0, 0.0, 0.0);
        for (t, s, p, lp) in &r.rows {
            metrics.push_str(&format!("{},{},{},{},{}\n", r.name, t, s, p, lp));
            acc.0 += s;
            acc.1 += p;
            acc.2 += lp;
        }
        let n = r.rows.len() as f64;
        summary.push_str(&format!(
            "{},{},{},{}\n",
            r.name,
            acc.0 / n,
            acc.1 / n,
            acc.2 / n
        ));
        overall.0 += acc.0;
        overall.1 += acc.1;
        overall.2 += acc.2;
        overall.3 += r.rows.len();
    }
    let n = overall.3.max(1) as f64;
    summary.push_str(&format!(
        "overall,{},{},{}\n",
        overall.0 / n,
        overall.1 / n,
        overall.2 / n
    ));
    std::fs::write(args.out.join("metrics.csv"), &metrics).context("writing metrics.csv")?;
    std::fs::write(args.out.join("summary.csv"), &summary).context("writing summary.csv")?;
    println!(
        "evaluated {} sequences over {}-frame horizon; metrics in {}",
        dirs.len(),
        args.horizon,
        args.out.display()
    );
    Ok(())
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let spec = SyntheticSceneSpec {
        seed: args.seed,
        n_shapes: args.shapes,
        kinds: args.kind.kinds(),
        height: args.height,
        width: args.width,
        frames: args.frames,
        velocity_min: args.velocity_min,
        velocity_max: args.velocity_max,
        intensity_min: args.intensity_min,
        intensity_max: args.intensity_max,
        size_min: args.size_min,
        size_max: args.size_max,
    };
    spec.validate()?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for k in 0..args.seqs {
        let mut s = spec.clone();
        s.seed = spec.seed.wrapping_add(k as u64);
        let seq = pcpredict_core::data::gen_bouncing_shapes::<f32>(&s)?;
        save_sequence_dir(&seq, &args.out.join(format!("seq_{:03}", k)))?;
    }
    std::fs::write(
        args.out.join("spec.json"),
        serde_json::to_string_pretty(&spec).context("encoding spec")?,
    )
    .context("writing spec.json")?;
    println!(
        "wrote {} sequences of {} frames to {}",
        args.seqs,
        args.frames,
        args.out.display()
    );
    Ok(())
}

pub fn inspect_filters(args: &InspectArgs) -> Result<()> {
    let trainer = load_trainer(&args.checkpoint)?;
    let per_level = trainer.net.cutoffs_by_level();
    let stats = ratio_stats(&per_level)?;
    let mut csv = String::from("level,mean,std\n");
    for (level, (mean, std)) in stats.iter().enumerate() {
        csv.push_str(&format!("{},{},{}\n", level, mean, std));
    }
    print!("{}", csv);
    if let Some(out) = &args.out {
        std::fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}
