//! Shared inputs for the benchmarks.

use asgfit::optim::{init_mixture, FitConfig};
use asgfit::synth::SkyScene;
use asgfit::{AsgMixture, EnvMap, GridDims};

/// The studio scene at `height` and an initial mixture of `lobes` lobes.
pub fn studio_setup(height: usize, lobes: usize) -> (EnvMap, AsgMixture) {
    let env = SkyScene::studio()
        .render(GridDims::with_height(height), 1)
        .expect("valid scene");
    let cfg = FitConfig {
        grid_height: height,
        ..FitConfig::desk(lobes)
    };
    let mixture = init_mixture(&cfg, &env).expect("valid init");
    (env, mixture)
}
