use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nbtf::btf::synth::{held_out_pairs, synth_preset, Preset};
use nbtf::btf::{load_btf, load_guidance, save_btf_with, save_gray_png, save_image, Direction, DirectionPair, GuidanceImage};
use nbtf::eval::{evaluate_with_guidance, pca_sweep, visualize_latents};
use nbtf::model::load_checkpoint;
use nbtf::propagate::{export_neural_btf, import_neural_btf, make_multires, make_tileable, propagate as encode, seam_metric};
use nbtf::training::{train as run_training, TrainOptions};
use nbtf::{Error, Result};

use crate::config::RunConfig;
use crate::{Angles, EvalArgs, LatentsArgs, PropagateArgs, RenderArgs, SynthArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn is_nbtf(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("nbtf"))
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let preset = Preset::from(a.preset);
    let full = synth_preset(preset, a.size)?;
    let held = held_out_pairs(preset);
    if a.angles == Angles::HeldOut && held.is_empty() {
        return Err(Error::Config(format!("preset {preset:?} has no held-out pairs")));
    }
    let ds = match a.angles {
        Angles::Preset => full,
        Angles::Train => full.filter(|p| !held.contains(p))?,
        Angles::HeldOut => full.filter(|p| held.contains(p))?,
    };
    save_btf_with(&ds, &a.out, a.precision.into())?;
    println!(
        "wrote {}: {} slices of {}×{} texels",
        a.out.display(),
        ds.len(),
        ds.height(),
        ds.width()
    );
    Ok(())
}

fn effective_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let mut cfg = RunConfig::load(path)?;
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [&mut cfg.dataset, &mut cfg.out_dir] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            cfg
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
    }
    if let Some(btf) = &a.btf {
        cfg.dataset = btf.clone();
    }
    if let Some(out) = &a.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = effective_config(&a)?;
    let text = cfg.to_toml()?;
    println!("# effective configuration\n{text}");
    let dataset = load_btf(&cfg.dataset)?;
    cfg.train.augmentation.check_fits(dataset.height(), dataset.width())?;
    create_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join("config.toml"), &text)?;
    let opts = TrainOptions {
        deterministic: a.deterministic,
        out_dir: Some(cfg.out_dir.clone()),
    };
    let every = a.log_every;
    let out = run_training(&dataset, &cfg.model, &cfg.train, cfg.seed, &opts, |r| {
        if every > 0 && (r.step % every == 0 || r.step == 1) {
            let p = &r.report;
            println!(
                "step {:>6}  total {:.5}  l1_log {:.5}  style {:.5}  freq {:.5}",
                r.step, p.total, p.l1_log, p.style, p.freq
            );
        }
    })?;
    println!(
        "wrote {} and {} after {} steps",
        cfg.out_dir.join("checkpoint.nbck").display(),
        cfg.out_dir.join("loss.csv").display(),
        out.checkpoint.step
    );
    Ok(())
}

fn guidance_from(path: &Path, stride: usize) -> Result<GuidanceImage> {
    if is_nbtf(path) {
        let ds = load_btf(path)?;
        let g = GuidanceImage::from_slice(&ds.slices()[ds.guidance_index()]);
        g.check_stride(stride)?;
        Ok(g)
    } else {
        load_guidance(path, stride)
    }
}

/// Fixed probe pairs for the seam report.
fn seam_pairs() -> Vec<DirectionPair> {
    [(0.0, 0.0, 45.0, 0.0), (30.0, 90.0, 30.0, 270.0), (60.0, 200.0, 15.0, 20.0)]
        .iter()
        .map(|&(tc, pc, tl, pl)| DirectionPair::from_degrees(tc, pc, tl, pl).expect("probe pairs are in range"))
        .collect()
}

pub fn propagate(a: PropagateArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let guidance = guidance_from(&a.guidance, ck.autoencoder.stride())?;
    let nb = if a.scale != 1.0 {
        let m = make_multires(&ck, &guidance, a.scale)?;
        if let Some(w) = &m.warning {
            eprintln!("warning: {w}");
        }
        m.bundle
    } else if a.tileable {
        make_tileable(&ck, &guidance)?
    } else {
        encode(&ck, &guidance)?
    };
    if a.tileable {
        for pair in seam_pairs() {
            println!("seam {pair}: {:.3e}", seam_metric(&nb, &pair)?);
        }
    }
    export_neural_btf(&nb, &a.out, a.precision.into())?;
    println!(
        "wrote {}: {}×{}×{} texture, texel size {} mm",
        a.out.display(),
        nb.height(),
        nb.width(),
        nb.texture().depth(),
        nb.texel_size()
    );
    Ok(())
}

fn rotated(d: Direction, degrees: f32) -> Result<Direction> {
    Direction::new(d.theta(), (d.phi() + degrees).rem_euclid(360.0))
}

pub fn render(a: RenderArgs) -> Result<()> {
    let nb = import_neural_btf(&a.nbtx)?;
    let jobs: Vec<(DirectionPair, PathBuf)> = match (a.sweep, &a.out, &a.out_dir) {
        (Some(0), _, _) => return Err(Error::Config("--sweep needs at least one frame".into())),
        (Some(n), _, Some(dir)) => {
            create_dir(dir)?;
            (0..n)
                .map(|k| {
                    let turn = 360.0 * k as f32 / n as f32;
                    let pair = DirectionPair::new(rotated(a.cam, turn)?, rotated(a.light, turn)?);
                    Ok((pair, dir.join(format!("frame_{k:04}.{}", a.ext))))
                })
                .collect::<Result<_>>()?
        }
        (None, Some(out), _) => vec![(DirectionPair::new(a.cam, a.light), out.clone())],
        _ => return Err(Error::Config("give --out, or --sweep with --out-dir".into())),
    };
    for (pair, path) in &jobs {
        let s = nb.render_slice(pair)?;
        save_image(path, s.height(), s.width(), s.pixels())?;
    }
    println!("wrote {} image(s)", jobs.len());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let ds = load_btf(&a.btf)?;
    let guidance = match &a.guidance {
        Some(p) => guidance_from(p, ck.autoencoder.stride())?,
        None => GuidanceImage::from_slice(&ds.slices()[ds.guidance_index()]),
    };
    let report = evaluate_with_guidance(&ck, &guidance, &ds)?;
    let mut text = report.to_table();
    if !a.pca_ranks.is_empty() {
        text.push_str("\nPCA baseline (linear radiance)\n");
        for r in pca_sweep(&ds, &a.pca_ranks)? {
            writeln!(text, "rank {:>3}  PSNR {:>7.2} dB  {:>10} bytes", r.rank, r.psnr, r.bytes).expect("string write");
        }
    }
    print!("{text}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_text(&dir.join("report.csv"), &report.to_csv())?;
        write_text(&dir.join("report.txt"), &text)?;
    }
    Ok(())
}

pub fn latents(a: LatentsArgs) -> Result<()> {
    let nb = import_neural_btf(&a.nbtx)?;
    create_dir(&a.out_dir)?;
    let images = visualize_latents(nb.texture());
    for (c, img) in images.iter().enumerate() {
        save_gray_png(a.out_dir.join(format!("latent_{c:02}.png")), nb.height(), nb.width(), img)?;
    }
    println!("wrote {} channel images to {}", images.len(), a.out_dir.display());
    Ok(())
}
