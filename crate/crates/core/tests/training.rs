use land_core::dataset::{Dataset, StepRecord};
use land_core::model::{train, ModelConfig, ModelParams, TrainConfig};
use land_core::sim::{Action, Observation, GRID_SIDE};
use land_core::world::TerrainClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 4;

/// Episodes of clean sidewalk followed by an obstacle that slides toward
/// the robot along the center column. The obstacle row encodes the number
/// of steps left until the disengagement, so a window contains a
/// disengagement exactly when the obstacle is visible.
fn separable_dataset(episodes: u64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::new();
    for episode in 0..episodes {
        let clean = rng.gen_range(8..16);
        let total = clean + H;
        for i in 0..total {
            let to_disengagement = total - 1 - i;
            let mut obs = Observation::filled(TerrainClass::Sidewalk);
            if to_disengagement < H {
                obs.set(3 * to_disengagement, GRID_SIDE / 2, TerrainClass::Obstacle);
            }
            let disengaged = to_disengagement == 0;
            ds.record_step(StepRecord {
                episode_id: episode,
                step_index: i as u64,
                observation: obs,
                action: Action::new(if disengaged { 0.0 } else { rng.gen_range(-0.4..0.4) }),
                disengaged,
                progress_m: 0.5 * i as f64,
                policy_tag: "synthetic".into(),
                cause: disengaged.then_some(land_core::sim::DisengagementCause::Collision),
            })
            .unwrap();
        }
    }
    ds
}

fn small_model() -> ModelConfig {
    ModelConfig {
        encoder_hidden: vec![16],
        hidden_dim: 8,
        action_embed_dim: 4,
        horizon: H,
        ..ModelConfig::default()
    }
}

fn run(seed: u64) -> Vec<f64> {
    let ds = separable_dataset(40, 1);
    let params = ModelParams::init(small_model(), 2).unwrap();
    let config = TrainConfig {
        steps: 2000,
        seed,
        ..TrainConfig::default()
    };
    train(&params, &ds, &config).unwrap().loss_history
}

#[test]
fn learns_a_separable_rule() {
    let history = run(9);
    let chance = (TrainConfig::default().batch_size * H) as f64 * std::f64::consts::LN_2;
    let last = *history.last().unwrap();
    assert!(last < 0.1 * chance, "final loss {last} vs chance {chance}");
    // Averages over consecutive 100-step blocks never go up.
    let blocks: Vec<f64> = history.chunks(100).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for (k, w) in blocks.windows(2).enumerate() {
        assert!(w[1] <= w[0], "block {} rose: {} -> {}", k + 1, w[0], w[1]);
    }
}

#[test]
fn identical_seed_gives_identical_history() {
    assert_eq!(run(4)[..200], run(4)[..200]);
}
