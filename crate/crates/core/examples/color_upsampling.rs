//! Trains a learnt-embedding colour upsampler on synthetic images and
//! compares it with the plain Gaussian filter on held-out images.
//!
//! `cargo run --release --example color_upsampling -- [epochs] [out_dir]`

use std::path::PathBuf;

use permlattice::io::write_image;
use permlattice::optim::{OptimConfig, Optimizer};
use permlattice::pipeline::*;
use permlattice::Result;

fn mean_psnr(model: &Model, tasks: &[UpsampleTask]) -> Result<f64> {
    let m = evaluate(model, tasks)?;
    Ok(m.iter().filter_map(|m| m.psnr).sum::<f64>() / m.len() as f64)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let out_dir = args.next().map(PathBuf::from);
    let factor = 4;

    let to_tasks = |imgs: Vec<_>| -> Result<Vec<UpsampleTask>> {
        imgs.into_iter().map(|i| UpsampleTask::from_rgb(i, factor)).collect()
    };
    let train = to_tasks(synth::synthetic_color_images(12, 64, 64, 1))?;
    let test = to_tasks(synth::synthetic_color_images(4, 64, 64, 2))?;
    let mean = dataset_mean(train.iter().map(|t| &t.guidance))?;
    let scale = ScaleConfig::preset(TaskKind::Color, factor).expect("4x preset");

    let basic = Model::init(ModelShape::for_task(TaskKind::Color, 3, 1), scale, mean.clone(), 0)?;
    println!("gaussian filter: {:.3} dB", mean_psnr(&basic, &test)?);

    let mut shape = ModelShape::for_task(TaskKind::Color, 3, 1);
    shape.use_embedding = true;
    let mut model = Model::init(shape, scale, mean, 0)?;
    let mut opt = Optimizer::new(OptimConfig::default())?;
    let cfg = TrainConfig {
        epochs,
        crop_height: 64,
        crop_width: 64,
        batch_size: 4,
        learn_embedding: true,
        learn_kernels: true,
        ..Default::default()
    };
    for rec in train_epochs(&mut model, &mut opt, &train, &cfg, 0, epochs)? {
        println!("epoch {:3}  loss {:.3e}  train {:.3} dB", rec.epoch, rec.loss, rec.metric);
    }
    println!("learnt model:    {:.3} dB", mean_psnr(&model, &test)?);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir)?;
        let pred = model.predict(&test[0])?;
        write_image(dir.join("prediction.png"), &pred.output.map(|v| v.clamp(0.0, 1.0)))?;
        write_image(dir.join("target.png"), test[0].target.as_ref().unwrap())?;
        write_image(dir.join("nearest.png"), &nn_upsample(&test[0].lowres, factor)?)?;
        println!("wrote images to {}", dir.display());
    }
    Ok(())
}
