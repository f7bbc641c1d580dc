use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pcreid_core::encoder::{EncoderConfig, ModelParams};
use pcreid_core::experiment::PipelineConfig;
use pcreid_core::geometry::render_sequence;
use pcreid_core::synthdata::{generate_sequence, identity_label, ScenarioSpec};
use pcreid_core::training::{batch_input, sample_batch, train_step, TrainSequence, TrainSet};

#[test]
fn desk_loss_falls_on_a_fixed_batch() {
    let desk = PipelineConfig::desk();
    let spec = ScenarioSpec {
        min_frames: 10,
        max_frames: 12,
        ..ScenarioSpec::default()
    };
    let bodies = spec.bodies();
    let ring = desk.train.render.ring();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut set = TrainSet {
        identities: (0..desk.train.p).map(identity_label).collect(),
        sequences: Vec::new(),
    };
    for class in 0..desk.train.p {
        for s in 0..desk.train.k {
            let label = identity_label(class);
            let seq = generate_sequence(&bodies[class], &label, &spec, s as f64 * 60.0, &mut rng).unwrap();
            set.sequences.push(TrainSequence {
                class,
                stack: render_sequence(&seq, &ring, true).unwrap(),
            });
        }
    }
    let encoder = EncoderConfig {
        class_count: desk.train.p,
        ..desk.encoder
    };
    let mut params = ModelParams::<f32>::init(encoder, 3).unwrap();
    let batch = sample_batch(&set, &desk.train, &mut rng).unwrap();
    let (input, groups) = batch_input::<f32, _>(&set, &batch, &desk.train.augment, &mut rng);
    let labels = batch.labels();
    let views = desk.train.render.views;

    let losses: Vec<f64> = (0..51)
        .map(|it| {
            train_step(&mut params, input.clone(), &groups, &labels, views, &desk.train, it)
                .unwrap()
                .total
        })
        .collect();
    let falls = losses.windows(2).filter(|w| w[1] < w[0]).count();
    println!("loss {:.4} -> {:.4}, fell in {falls} of 50 steps", losses[0], losses[50]);
    assert!(falls >= 45, "{losses:?}");
}
