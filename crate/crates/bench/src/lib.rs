//! Shared fixtures for the benchmarks.

use lpmm_core::synthetic::{SyntheticFaces, SyntheticSpec};
use lpmm_core::{build_lpmm, init_adaptor, make_surrogate, AdaptorNet, ComponentCount, LandmarkDataset, LpmmModel, RasterConfig, SurrogateStack};

pub struct Fixture {
    pub dataset: LandmarkDataset,
    pub model: LpmmModel,
    pub stack: SurrogateStack,
    pub net: AdaptorNet,
}

/// `samples` synthetic faces, a full model, a `w = 16` surrogate rendering
/// `side x side` rasters and a freshly initialized `k = 8` adaptor.
pub fn fixture(samples: usize, side: usize) -> Fixture {
    let dataset = SyntheticFaces::new(SyntheticSpec {
        samples,
        seed: 1,
        ..Default::default()
    })
    .dataset();
    let model = build_lpmm(&dataset, ComponentCount::Auto).expect("model");
    let raster = RasterConfig {
        height: side,
        width: side,
        ..Default::default()
    };
    let stack = make_surrogate(0, 16, model.n(), raster, &model.mean_landmarks()).expect("surrogate");
    let vbar = stack.mean_latent(&dataset).expect("mean latent");
    let net = init_adaptor(8, 16, vbar, 0).expect("adaptor");
    Fixture {
        dataset,
        model,
        stack,
        net,
    }
}
