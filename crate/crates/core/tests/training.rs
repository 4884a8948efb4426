use deepam::cascade::{train, ArchConfig, CascadeModel, Task, TrainOptions};
use deepam::image::Image;
use deepam::nn::SgdConfig;
use deepam::synth::denoise_patches;

pub fn clean_images() -> Vec<Image> {
    (0..3)
        .map(|k| {
            Image::from_fn(24, 24, |y, x| {
                let edge = if (x + k * 3) % 12 < 6 { 60.0 } else { 190.0 };
                edge + 20.0 * ((y as f64 + k as f64) * 0.4).sin()
            })
        })
        .collect()
}

// Light noise: a width-4 network cannot memorize σ = 25 noise, so its loss
// floor would sit near 13% of the initial loss regardless of the optimizer.
#[test]
fn tiny_model_overfits_eight_patches() {
    let data = denoise_patches(&clean_images(), 5.0, 16, 8, 3).unwrap();
    let mut model = CascadeModel::new(ArchConfig::tiny(Task::Denoise), 2).unwrap();
    let sgd = SgdConfig { lr: 0.05, batch_size: 8, epochs: 200, lr_step: 1000, weight_decay: 0.0, ..SgdConfig::default() };
    let run = train(&mut model, &data, &TrainOptions::new(sgd, 1)).unwrap();
    let (first, last) = (run.step_losses[0], *run.step_losses.last().unwrap());
    assert!(last < 0.1 * first, "loss {first} -> {last}");
}
