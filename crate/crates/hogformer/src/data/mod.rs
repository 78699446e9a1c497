//! Image I/O, synthetic degradations, patch sampling, dataset manifests and
//! procedural fixture images.

pub mod degrade;
pub mod io;
pub mod manifest;
pub mod patches;
pub mod synth;

pub use degrade::{degrade, degrade_at, DegradationKind, DegradationSpec};
pub use io::{load_image, save_image};
pub use manifest::{Manifest, ManifestEntry};
pub use patches::sample_patches;

use crate::tensor::Tensor;

/// One clean/degraded pair with its provenance.
#[derive(Clone, Debug)]
pub struct ImageSample {
    pub id: String,
    pub clean: Tensor<f32>,
    pub degraded: Tensor<f32>,
    pub spec: DegradationSpec,
}

/// The six degradation families used by the profiling corpus, with the
/// documented desk-scale parameters.
pub fn default_degradations(seed: u64) -> Vec<DegradationSpec> {
    vec![
        DegradationSpec::new(DegradationKind::Noise { sigma: 0.1 }, seed),
        DegradationSpec::new(DegradationKind::Blur { sigma: 1.6 }, seed.wrapping_add(1)),
        DegradationSpec::new(
            DegradationKind::Rain {
                count: 90,
                length: 16.0,
                angle_deg: 90.0,
                intensity: 0.28,
                width: 0.7,
            },
            seed.wrapping_add(2),
        ),
        DegradationSpec::new(DegradationKind::Haze { t: 0.55, airlight: 0.85 }, seed.wrapping_add(3)),
        DegradationSpec::new(DegradationKind::Lowlight { gamma: 2.4, gain: 0.8 }, seed.wrapping_add(4)),
        DegradationSpec::new(
            DegradationKind::Snow { density: 0.005, size: 2.2, brightness: 0.95 },
            seed.wrapping_add(5),
        ),
    ]
}
