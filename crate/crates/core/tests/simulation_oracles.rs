//! Monte-Carlo oracles for the simulator and post-processing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softlabel_core::postprocess::estimate_delta;
use softlabel_core::simulator::{
    annotate_image, delta_pairs, identical_profiles, run_campaign, sample_annotation, AnnotatorProfile, Arm,
    ConfusionSource, Execution, GeneratorParams, GtShape, MethodSpec, SimulationConfig, SyntheticDataset,
    SyntheticImage,
};
use softlabel_core::{ClassDistribution, Method};

fn dataset(params: &GeneratorParams, seed: u64) -> SyntheticDataset {
    SyntheticDataset::generate(params, seed).unwrap()
}

#[test]
fn fair_coin_frequency_is_within_binomial_bounds() {
    let gt = ClassDistribution::new(vec![0.5, 0.5]).unwrap();
    let profile = AnnotatorProfile::new("a", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let zeros = (0..10_000).filter(|_| sample_annotation(&gt, Some(1), &profile, &mut rng) == 0).count();
    // 0.5 ± 0.02 is four standard errors at n = 10,000
    assert!((zeros as f64 / 10_000.0 - 0.5).abs() < 0.02, "{zeros}");
}

#[test]
fn uniform_ground_truth_escalates_at_pinned_seed() {
    let gt = ClassDistribution::uniform(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let set = annotate_image("u", &gt, None, &identical_profiles(5, 0.0), 10, 50, &mut rng).unwrap();
    assert_eq!(set.len(), 50);
}

#[test]
fn law_of_large_numbers_on_one_image() {
    let gt = ClassDistribution::new(vec![0.6, 0.3, 0.1]).unwrap();
    let data = SyntheticDataset::new(vec![SyntheticImage { image_id: "x".into(), gt, proposal: 0 }], 3, 5).unwrap();
    let cfg = SimulationConfig::new(10_000, 10_000, vec![Arm::Plain]);
    let report =
        run_campaign(&data, &identical_profiles(3, 0.0), &cfg, &[MethodSpec::new(Arm::Plain, Method::Raw)]).unwrap();
    assert!(report.per_method_kl["plain/RAW"] < 0.01);
}

#[test]
fn bias_towards_the_proposal_matches_the_acceptance_model() {
    let params = GeneratorParams { n_images: 20, consensus_share: 0.3, ..Default::default() };
    for delta in [0.1143, 0.3, 0.5] {
        let data = dataset(&params, 3);
        let cfg = SimulationConfig::new(10_000, 10_000, vec![Arm::Proposal]);
        let report = run_campaign(&data, &identical_profiles(5, delta), &cfg, &[]).unwrap();
        let bias = report.proposal_bias.unwrap();
        assert!((bias.measured - bias.expected).abs() < 0.02, "{delta}: {bias:?}");
    }
}

#[test]
fn delta_is_recovered_from_paired_arms() {
    let params = GeneratorParams { n_images: 50, consensus_share: 0.0, ..Default::default() };
    let estimates: Vec<f64> = (0..10)
        .map(|seed| {
            let pairs =
                delta_pairs(&dataset(&params, seed), &identical_profiles(5, 0.3), 20, Execution::Parallel).unwrap();
            estimate_delta(&pairs).unwrap()
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    assert!((mean - 0.3).abs() < 0.05, "{mean} from {estimates:?}");
}

#[test]
fn raw_kl_does_not_increase_with_more_annotations() {
    let params = GeneratorParams { n_images: 100, consensus_share: 0.5, ..Default::default() };
    let profiles = identical_profiles(5, 0.0);
    let mut previous = f64::INFINITY;
    for a in [1, 2, 3, 5, 10, 20] {
        let mean = (0..10)
            .map(|seed| {
                let cfg = SimulationConfig::new(a, a, vec![Arm::Plain]);
                run_campaign(&dataset(&params, seed), &profiles, &cfg, &[MethodSpec::new(Arm::Plain, Method::Raw)])
                    .unwrap()
                    .per_method_kl["plain/RAW"]
            })
            .sum::<f64>()
            / 10.0;
        assert!(mean <= previous + 1e-3, "A = {a}: {mean} > {previous}");
        previous = mean;
    }
}

#[test]
fn cleverlabel_beats_plain_aggregation_of_biased_answers() {
    // few annotations of ambiguous images: the regime where correction and blending pay off
    let params = GeneratorParams { consensus_share: 0.5, proposal_accuracy: 0.9, ..Default::default() };
    let methods = [MethodSpec::new(Arm::Proposal, Method::Raw), MethodSpec::new(Arm::Proposal, Method::Cleverlabel)];
    let cfg = SimulationConfig::new(3, 3, vec![Arm::Proposal]);
    let report = run_campaign(&dataset(&params, 9), &identical_profiles(5, 0.3), &cfg, &methods).unwrap();
    assert!(report.per_method_kl["proposal/CLEVERLABEL"] < report.per_method_kl["proposal/RAW"], "{report:?}");
}

#[test]
fn one_hot_truths_without_bias_are_fully_consistent() {
    let params = GeneratorParams { consensus_share: 1.0, n_images: 40, ..Default::default() };
    let cfg = SimulationConfig::new(3, 10, vec![Arm::Plain]);
    let report = run_campaign(&dataset(&params, 1), &identical_profiles(3, 0.0), &cfg, &[]).unwrap();
    assert_eq!(report.measured_consensus_fraction, 1.0);
    assert_eq!(report.total_annotations, 120);
}

#[test]
fn execution_modes_are_indistinguishable() {
    let params = GeneratorParams {
        n_images: 60,
        shape: GtShape::Dirichlet { concentration: 0.7 },
        consensus_share: 0.6,
        ..Default::default()
    };
    let data = dataset(&params, 77);
    let methods = [MethodSpec::new(Arm::Plain, Method::BlendOnly), MethodSpec::new(Arm::Proposal, Method::Cleverlabel)];
    let mut cfg = SimulationConfig::new(3, 8, vec![Arm::Plain, Arm::Proposal]);
    cfg.confusion = ConfusionSource::Campaign;
    let profiles = identical_profiles(4, 0.2);
    cfg.execution = Execution::Sequential;
    let seq = run_campaign(&data, &profiles, &cfg, &methods).unwrap();
    cfg.execution = Execution::Parallel;
    let par = run_campaign(&data, &profiles, &cfg, &methods).unwrap();
    assert_eq!(serde_json::to_string(&seq).unwrap(), serde_json::to_string(&par).unwrap());
}
