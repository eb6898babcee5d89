//! Noise schedules, forward corruption, implicit sampling, the enhance
//! pipeline and the training loop.

mod pipeline;
mod sampler;
mod schedule;
mod train;

pub use pipeline::{
    bands_to_nchw, check_compatible, denormalize_approx, enhance, nchw_to_band, normalize_approx, EnhanceConfig,
};
pub use sampler::{
    ancestral_step, gaussian_tensor, hop_sigma, implicit_step, predict_x0, sample_from_seed, sample_implicit,
    SamplerConfig,
};
pub use schedule::{forward_sample, make_schedule, make_subsequence, NoiseSchedule, ScheduleConfig};
pub use train::{train, training_graph, LogRecord, NoiseDraw, TrainConfig, TrainEvent, TrainReport};
