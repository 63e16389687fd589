//! Searches the spatial and intensity scales of the Gaussian filter on a
//! small synthetic colour set.

use permlattice::pipeline::*;
use permlattice::Result;

fn main() -> Result<()> {
    let factor = 4;
    let tasks: Vec<UpsampleTask> = synth::synthetic_color_images(4, 48, 48, 9)
        .into_iter()
        .map(|i| UpsampleTask::from_rgb(i, factor))
        .collect::<Result<_>>()?;
    let mean = dataset_mean(tasks.iter().map(|t| &t.guidance))?;
    let shape = ModelShape::for_task(TaskKind::Color, 3, 1);

    let lambda_s = [0.2, 0.45, 0.65, 0.9, 1.25];
    let lambda_i = [1.0, 2.5, 5.0, 10.0];
    let res = grid_search_scales(shape, &mean, &tasks, &lambda_s, &lambda_i)?;

    print!("{:>8}", "s \\ i");
    for li in lambda_i {
        print!("{li:>9}");
    }
    println!();
    for row in res.table.chunks(lambda_i.len()) {
        print!("{:>8}", row[0].lambda_s);
        for c in row {
            print!("{:>9.3}", c.metric);
        }
        println!();
    }
    println!("best: lambda_s = {}, lambda_i = {}", res.best.lambda_s, res.best.lambda_i);
    Ok(())
}
