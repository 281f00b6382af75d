//! Named, reproducible configurations.

use popbal_core::entropy::GrowthResponse;
use popbal_core::regulatory::ScheduleKind;
use popbal_core::scenarios::{GrowthKind, InitialKind};

use crate::config::{
    EntropyConfig, EpigeneticConfig, HeterogeneousConfig, HysteresisConfig, ModelConfig,
    PopulationConfig, ScenarioConfig,
};

pub const NAMES: &[&str] = &[
    "hysteresis-homogeneous",
    "hysteresis-heterogeneous",
    "epigenetic-short",
    "epigenetic-long",
    "fig3Aii",
    "fig3Aii-150k",
    "fig3Aii-250k",
    "fig3B-175k",
    "fig3B-190k",
    "fig3B-225k",
    "fig3C",
    "fig4-r1",
    "fig4-r2",
    "fig4-r3",
    "fig5-linear",
    "fig5-hill7",
    "fig5-hill8",
    "fig5-hill9",
];

fn population(s0: f64, f: impl FnOnce(&mut PopulationConfig)) -> ModelConfig {
    let mut p = PopulationConfig {
        s0,
        ..PopulationConfig::default()
    };
    f(&mut p);
    ModelConfig::Population(p)
}

fn growth(kind: GrowthKind) -> ModelConfig {
    population(200_000.0, |p| {
        p.growth = kind;
        p.initial = InitialKind::EpiHybMes;
    })
}

fn entropy(response: GrowthResponse) -> ModelConfig {
    ModelConfig::Entropy(EntropyConfig {
        response,
        ..EntropyConfig::default()
    })
}

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let model = match name {
        "hysteresis-homogeneous" => ModelConfig::HysteresisHomogeneous(HysteresisConfig::default()),
        "hysteresis-heterogeneous" => {
            ModelConfig::HysteresisHeterogeneous(HeterogeneousConfig::default())
        }
        "epigenetic-short" => {
            ModelConfig::Epigenetic(EpigeneticConfig::new(ScheduleKind::ShortInduction))
        }
        "epigenetic-long" => {
            ModelConfig::Epigenetic(EpigeneticConfig::new(ScheduleKind::LongInduction))
        }
        "fig3Aii" => population(200_000.0, |_| {}),
        "fig3Aii-150k" => population(150_000.0, |_| {}),
        "fig3Aii-250k" => population(250_000.0, |_| {}),
        "fig3B-175k" => population(175_000.0, |p| p.eta_x = 5_000.0),
        "fig3B-190k" => population(190_000.0, |_| {}),
        "fig3B-225k" => population(225_000.0, |_| {}),
        "fig3C" => population(225_000.0, |_| {}),
        "fig4-r1" => growth(GrowthKind::R1),
        "fig4-r2" => growth(GrowthKind::R2),
        "fig4-r3" => growth(GrowthKind::R3),
        "fig5-linear" => entropy(GrowthResponse::Linear),
        "fig5-hill7" => entropy(GrowthResponse::Hill { theta: 7.0 }),
        "fig5-hill8" => entropy(GrowthResponse::Hill { theta: 8.0 }),
        "fig5-hill9" => entropy(GrowthResponse::Hill { theta: 9.0 }),
        _ => return None,
    };
    Some(ScenarioConfig::new(name, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves_and_validates() {
        for name in NAMES {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.name, *name);
            cfg.validate().unwrap();
        }
        assert!(preset("fig9").is_none());
    }
}
