use permlattice::checkpoint::{from_checkpoint, to_checkpoint, Checkpoint};
use permlattice::optim::{OptimConfig, Optimizer};
use permlattice::pipeline::*;
use permlattice::Error;

fn data() -> Vec<UpsampleTask> {
    synth::synthetic_color_images(3, 24, 24, 5).into_iter().map(|i| UpsampleTask::from_rgb(i, 4).unwrap()).collect()
}

fn config() -> TrainConfig {
    TrainConfig {
        crop_height: 16,
        crop_width: 16,
        batch_size: 2,
        learn_embedding: true,
        learn_kernels: true,
        learn_lambda_s: true,
        ..Default::default()
    }
}

fn trained(batch_norm: bool) -> (Model, Optimizer, Vec<UpsampleTask>) {
    let tasks = data();
    let mean = dataset_mean(tasks.iter().map(|t| &t.guidance)).unwrap();
    let mut shape = ModelShape::for_task(TaskKind::Color, 3, 1);
    shape.use_embedding = true;
    shape.batch_norm = batch_norm;
    let mut scale = ScaleConfig::preset(TaskKind::Color, 4).unwrap();
    scale.learn_lambda_s = true;
    let mut model = Model::init(shape, scale, mean, 8).unwrap();
    let mut opt = Optimizer::new(OptimConfig::default()).unwrap();
    train_epochs(&mut model, &mut opt, &tasks, &config(), 0, 1).unwrap();
    (model, opt, tasks)
}

#[test]
fn model_and_optimizer_survive_a_round_trip() {
    for batch_norm in [true, false] {
        let (model, opt, tasks) = trained(batch_norm);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        to_checkpoint(&model, Some(&opt), 1).save(&path).unwrap();
        let state = from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();

        assert_eq!(state.epoch, 1);
        assert_eq!(state.optimizer_steps, opt.steps());
        assert_eq!(&state.moments, opt.moments());
        assert_eq!(state.model.shape, model.shape);
        assert_eq!(state.model.lambda_mult, model.lambda_mult);
        assert_eq!(state.model.mean, model.mean);
        assert_eq!(state.model.kernel, model.kernel);
        assert_eq!(state.model.norm, model.norm);
        let (a, b) = (state.model.embed.as_ref().unwrap(), model.embed.as_ref().unwrap());
        assert_eq!(a.params(), b.params());
        assert_eq!(state.model.predict(&tasks[0]).unwrap().output, model.predict(&tasks[0]).unwrap().output);

        // Continuing from the restored state matches continuing in memory.
        let mut restored = state.model;
        let mut restored_opt = Optimizer::new(OptimConfig::default()).unwrap();
        restored_opt.restore(state.optimizer_steps, state.moments).unwrap();
        let (mut live, mut live_opt) = (model, opt);
        let x = train_epochs(&mut live, &mut live_opt, &tasks, &config(), 1, 1).unwrap();
        let y = train_epochs(&mut restored, &mut restored_opt, &tasks, &config(), 1, 1).unwrap();
        assert_eq!(x[0].loss, y[0].loss);
        assert_eq!(live.kernel, restored.kernel);
    }
}

#[test]
fn damaged_files_are_rejected() {
    let (model, opt, _) = trained(true);
    let bytes = to_checkpoint(&model, Some(&opt), 1).to_bytes();
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Io(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    let mut ck = Checkpoint::from_bytes(&bytes).unwrap();
    ck.tensors.remove("lattice.kernel");
    assert!(matches!(from_checkpoint(&ck), Err(Error::Version(_))));
}
