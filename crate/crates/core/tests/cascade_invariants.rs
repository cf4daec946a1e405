use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smokecascade::annotations::{generate_fixture, Category, FixtureScript, FrameTruth, ScenarioSpec};
use smokecascade::arch::{DetectorHandle, NoisyDetector, OracleDetector};
use smokecascade::cascade::{process_video, CascadeConfig, CascadeState, Refiner, VideoRun};
use smokecascade::geometry::MatchRule;
use smokecascade::refiner::{build_head, ClipConfig, HeadVariant, TemporalHeadSpec};
use smokecascade::video::MemorySource;

fn run(cfg: &CascadeConfig, truth: &[FrameTruth], frames: &[image::RgbImage], noise_seed: u64, fp_rate: f64) -> VideoRun {
    let mut smoke = NoisyDetector::new(OracleDetector::smoke(truth), noise_seed);
    smoke.score_sigma = 0.2;
    smoke.miss_rate = 0.1;
    smoke.false_positive_rate = fp_rate;
    let vehicle = NoisyDetector::new(OracleDetector::vehicle(truth), noise_seed + 1);
    let refiner = cfg.refiner_enabled.then(|| {
        let spec = TemporalHeadSpec::new(HeadVariant::Suffix3d, 3).with_base_width(2);
        let model = build_head(&spec, &mut ChaCha8Rng::seed_from_u64(noise_seed)).unwrap();
        Refiner::new(
            model,
            ClipConfig {
                min_side: 32.0,
                train_resize: 32,
                train_crop: 32,
                eval_size: 32,
                ..ClipConfig::default()
            },
        )
    });
    let mut state = CascadeState::new(
        cfg.clone(),
        "v",
        DetectorHandle::new(smoke, cfg.smoke_threshold),
        DetectorHandle::new(vehicle, cfg.vehicle_threshold),
        refiner,
    )
    .unwrap();
    process_video(&mut state, &mut MemorySource::new(frames.to_vec()).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stages_only_remove_and_every_detection_is_accounted(
        seed in 0u64..1000,
        noise_seed in 0u64..1000,
        fp_rate in 0.0f64..1.5,
        refine_threshold in 0.0f64..=1.0,
    ) {
        let spec = ScenarioSpec {
            width: 160,
            height: 120,
            num_frames: 36,
            smoke_with_vehicle: 1,
            smoke_without_vehicle: 1,
            shadow_decoys: 1,
        };
        let fx = generate_fixture(&FixtureScript::scenario(&spec, seed).unwrap(), seed).unwrap();
        let full = CascadeConfig { refine_threshold, ..CascadeConfig::default() };
        let matching_only = CascadeConfig { refiner_enabled: false, ..full.clone() };
        let detector_only = CascadeConfig { matching_enabled: false, ..matching_only.clone() };

        let a = run(&full, &fx.truth, &fx.frames, noise_seed, fp_rate);
        let b = run(&matching_only, &fx.truth, &fx.frames, noise_seed, fp_rate);
        let c = run(&detector_only, &fx.truth, &fx.frames, noise_seed, fp_rate);

        prop_assert_eq!(&a.detections.iter().filter(|d| d.category == Category::Smoke).collect::<Vec<_>>(),
                        &b.detections.iter().filter(|d| d.category == Category::Smoke).collect::<Vec<_>>());
        for ((fa, fb), fc) in a.verdicts.iter().zip(&b.verdicts).zip(&c.verdicts) {
            prop_assert!(!fa.verdict || fb.verdict);
            prop_assert!(!fb.verdict || fc.verdict);
            prop_assert!(fa.pairs.len() <= fb.pairs.len() && fb.pairs.len() <= fc.pairs.len());
            let raw = a.detections.iter().filter(|d| d.frame_index == fa.frame && d.category == Category::Smoke).count();
            for f in [fa, fb, fc] {
                prop_assert_eq!(f.raw_count(), raw);
                prop_assert_eq!(f.pairs.len() + f.dropped_by_matching + f.dropped_by_refiner, raw);
                prop_assert_eq!(f.verdict, !f.pairs.is_empty());
            }
            prop_assert_eq!(fb.dropped_by_refiner, 0);
            prop_assert_eq!(fc.dropped_by_matching, 0);
            prop_assert_eq!(fa.dropped_by_matching, fb.dropped_by_matching);
            for p in &fa.pairs {
                prop_assert!(p.vehicle.is_some());
                prop_assert!(p.probability.unwrap() >= refine_threshold);
            }
            for p in &fc.pairs {
                prop_assert_eq!(p.vehicle.is_some(), p.rule != MatchRule::Unmatched);
            }
        }
        let smoky = a.verdicts.iter().filter(|v| v.raw_count() > 0).count() as u64;
        prop_assert_eq!(a.vehicle_invocations, smoky);
        prop_assert_eq!(b.vehicle_invocations, smoky);
    }
}
