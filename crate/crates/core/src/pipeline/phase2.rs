//! Social simulation over accepted blueprints and captioning of real images.

use rayon::prelude::*;
use serde_json::json;

use super::PipelineError;
use crate::actions::ForgeryBlueprint;
use crate::backends::{CognitionBackend, CognitionRequest, CognitionTask};
use crate::manifest::DatasetSample;
use crate::social::{build_sample_pairs, simulate_trajectory, SocialConfig, SocialTrajectory};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SocialOutput {
    /// One trajectory per blueprint, in blueprint order.
    pub trajectories: Vec<SocialTrajectory>,
    pub samples: Vec<DatasetSample>,
}

/// Trajectories are independent, so they run in parallel; results keep blueprint order.
pub fn socialize_blueprints(
    blueprints: &[ForgeryBlueprint],
    cfg: &SocialConfig,
    cognition: &dyn CognitionBackend,
    seed: u64,
) -> Result<SocialOutput, PipelineError> {
    if blueprints.is_empty() {
        return Err(PipelineError::NoBlueprints);
    }
    let per_blueprint: Vec<(SocialTrajectory, Vec<DatasetSample>)> = blueprints
        .par_iter()
        .map(|bp| {
            let trajectory = simulate_trajectory(bp, cfg, cognition, seed)?;
            let samples = build_sample_pairs(bp, &trajectory);
            Ok((trajectory, samples))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut out = SocialOutput::default();
    for (trajectory, samples) in per_blueprint {
        out.trajectories.push(trajectory);
        out.samples.extend(samples);
    }
    Ok(out)
}

/// Captions the first `count` images of the pool.
pub fn caption_real_images(
    pool: &[String],
    count: usize,
    cognition: &dyn CognitionBackend,
) -> Result<Vec<DatasetSample>, PipelineError> {
    pool[..count.min(pool.len())]
        .par_iter()
        .enumerate()
        .map(|(i, image_ref)| {
            let request = CognitionRequest::new(
                CognitionTask::Describe,
                json!({"subject": "real", "image_ref": image_ref}),
            );
            let caption = cognition.call(&request)?.text;
            Ok(DatasetSample::real(i, image_ref, &caption))
        })
        .collect()
}
