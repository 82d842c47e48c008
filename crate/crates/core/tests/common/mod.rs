#![allow(dead_code)]

use std::sync::OnceLock;

use frostmap_core::domain::{FoldAssignment, StationId};
use frostmap_core::ensemble::{train_bank, BankConfig, BankTrainingReport, SubmodelBank};
use frostmap_core::evaluate::make_folds;
use frostmap_core::neuralnet::TrainConfig;
use frostmap_core::synth::{generate_world, World, WorldSpec};

pub struct Fixture {
    pub world: World,
    pub folds: FoldAssignment,
    pub bank: SubmodelBank,
    pub report: BankTrainingReport,
}

impl Fixture {
    pub fn test_ids(&self) -> Vec<StationId> {
        self.folds.test_stations(0).unwrap().to_vec()
    }
}

pub fn bank_config() -> BankConfig {
    let tc = TrainConfig {
        epochs: 4,
        patience: 0,
        seed: 5,
        ..TrainConfig::default()
    };
    BankConfig {
        train_stride: 60,
        submodel: tc.clone(),
        baseline: tc,
        ..BankConfig::default()
    }
}

/// 15 stations over one day; fold 0 gives a 12-member bank.
pub fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let world = generate_world(&WorldSpec {
            seed: 5,
            n_stations: 15,
            days: 1,
            lon_max: 149.5,
            lat_max: -35.0,
            ..WorldSpec::default()
        })
        .unwrap();
        let folds = make_folds(&world.station_ids(), 5).unwrap();
        let cfg = bank_config();
        let train = folds.training_stations(0).unwrap();
        let test = folds.test_stations(0).unwrap().to_vec();
        let (bank, report) = train_bank(&world.stations, &train, &test, 0, &cfg).unwrap();
        Fixture {
            world,
            folds,
            bank,
            report,
        }
    })
}
