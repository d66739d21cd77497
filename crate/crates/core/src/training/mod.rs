//! Loss, optimizer, synthetic data, quality metrics and the training and
//! evaluation loops.

mod adam;
mod blur;
mod data;
mod loss;
mod metrics;
mod train;

pub use adam::{Adam, AdamConfig, AdamState};
pub use blur::{sample_blur_specs, synth_blur, total_variation, BlurKernel, BlurSpec};
pub use data::{make_dataset, synthetic_scene, synthetic_sources, Dataset, DatasetConfig, Pair};
pub use loss::{l1_loss, perceptual_proxy, total_loss, LossNodes, PerceptualProxy, DEFAULT_LAMBDA_P};
pub use metrics::{mse, psnr, ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use train::{
    baseline, eval_image, evaluate, metric_csv, run_ablation, train_loop, AblationRow, EvalRow, Evaluation, MetricRow,
    TrainConfig, TrainOutcome, METRIC_CSV_HEADER,
};
