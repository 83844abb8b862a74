//! Identities the pipeline must reduce to in degenerate settings, plus
//! determinism of the training jobs.

use ltsoups::data::{exp_decay_counts, split_eval, Benchmark, Dataset, SubsetSchedule, SyntheticSpec};
use ltsoups::merge::{uniform_average, MergeConfig};
use ltsoups::nn::{init_pretrained, BackboneConfig, ModelWeights, TrainConfig, WarmupRule};
use ltsoups::pipeline::{
    baseline_full_ft, baseline_lora, baseline_model_soups, classifier_retrain, finetune, job_data, lt_soups,
    replica_seeds, stage1, LoraConfig, RunArtifacts, RunOptions,
};

struct Setup {
    theta0: ModelWeights,
    train: Dataset,
    val: Dataset,
}

fn setup() -> Setup {
    let counts = exp_decay_counts(5, 120, 12.0).unwrap();
    let spec = SyntheticSpec {
        dim: 8,
        noise_sigma: 0.3,
        seed: 4,
        ..SyntheticSpec::default()
    };
    let bench = Benchmark::generate(&spec, &split_eval(&counts, 10, 6, 4)).unwrap();
    let backbone = BackboneConfig::new(8, vec![12]);
    let theta0 = init_pretrained(&backbone, &bench.means, 5, 0.2, 9).unwrap();
    Setup {
        theta0,
        train: bench.train,
        val: bench.val,
    }
}

fn cfg() -> TrainConfig {
    TrainConfig {
        lr_max: 3e-3,
        batch_size: 16,
        epochs: 2,
        warmup: WarmupRule::Fraction(0.1),
        seed: 21,
        ..TrainConfig::default()
    }
}

fn merge(lambda: f64) -> MergeConfig {
    MergeConfig {
        lambda,
        include_pretrained_as_theta0: true,
    }
}

#[test]
fn lambda_one_keeps_pretrained() {
    let s = setup();
    let schedule = SubsetSchedule::new(vec![2.0, 4.0], 2).unwrap();
    let mut art = RunArtifacts::default();
    let m = stage1(&s.theta0, &s.train, Some(&s.val), &schedule, &merge(1.0), &cfg(), &RunOptions::default(), &mut art)
        .unwrap();
    assert_eq!(m.flat(), s.theta0.flat());
    assert_eq!(art.jobs.len(), 4);
}

#[test]
fn lambda_zero_keeps_last_level() {
    let s = setup();
    let schedule = SubsetSchedule::new(vec![4.0, 2.0], 2).unwrap();
    let mut art = RunArtifacts::default();
    let m = stage1(&s.theta0, &s.train, Some(&s.val), &schedule, &merge(0.0), &cfg(), &RunOptions::default(), &mut art)
        .unwrap();
    assert_eq!(art.levels.iter().map(|l| l.rho).collect::<Vec<_>>(), vec![2.0, 4.0]);
    assert_eq!(m.flat(), art.levels[1].weights.flat());
    let members: Vec<ModelWeights> = art
        .jobs
        .iter()
        .filter(|j| art.levels[1].jobs.contains(&j.job.job_id))
        .map(|j| j.checkpoint.weights.clone())
        .collect();
    assert_eq!(uniform_average(&members).unwrap().flat(), m.flat());
}

#[test]
fn single_replica_is_a_plain_finetune() {
    let s = setup();
    let c = cfg();
    let schedule = SubsetSchedule::new(vec![4.0], 1).unwrap();
    let mut art = RunArtifacts::default();
    let m = stage1(&s.theta0, &s.train, Some(&s.val), &schedule, &merge(0.0), &c, &RunOptions::default(), &mut art)
        .unwrap();
    let data = job_data(&s.train, c.seed, 4.0, 0);
    let direct = finetune(&s.theta0, &data, Some(&s.val), &c.with_seed(replica_seeds(c.seed, 4.0, 0).1)).unwrap();
    assert_eq!(m.flat(), direct.flat());
}

#[test]
fn one_member_soup_is_full_finetuning() {
    let s = setup();
    let soup = baseline_model_soups(&s.theta0, &s.train, Some(&s.val), &cfg(), 1, &RunOptions::default()).unwrap();
    let ft = baseline_full_ft(&s.theta0, &s.train, Some(&s.val), &cfg()).unwrap();
    assert_eq!(soup.flat(), ft.flat());
}

#[test]
fn zero_epochs_returns_init() {
    let s = setup();
    let c = TrainConfig { epochs: 0, ..cfg() };
    assert_eq!(finetune(&s.theta0, &s.train, None, &c).unwrap().flat(), s.theta0.flat());
}

#[test]
fn classifier_retraining_touches_only_prototypes() {
    let s = setup();
    let out = classifier_retrain(&s.theta0, &s.train, Some(&s.val), &cfg()).unwrap();
    let l = s.theta0.layout();
    assert_eq!(out.backbone(), s.theta0.backbone());
    assert_eq!(out.log_temperature().to_bits(), s.theta0.log_temperature().to_bits());
    assert_ne!(out.prototypes(), s.theta0.prototypes());
    assert_eq!(out.flat().len(), l.len());
}

#[test]
fn lora_moves_only_linear_weights() {
    let s = setup();
    let out = baseline_lora(&s.theta0, &s.train, Some(&s.val), &LoraConfig { rank: 2, alpha: 2.0 }, &cfg()).unwrap();
    let l = s.theta0.layout();
    let mut moved = false;
    for i in 0..l.num_layers() {
        assert_eq!(out.flat()[l.bias_range(i)], s.theta0.flat()[l.bias_range(i)]);
        moved |= out.flat()[l.weight_range(i)] != s.theta0.flat()[l.weight_range(i)];
    }
    assert!(moved);
    assert_eq!(out.prototypes(), s.theta0.prototypes());
    assert_eq!(out.log_temperature(), s.theta0.log_temperature());
}

#[test]
fn soup_is_deterministic_across_workers_and_reruns() {
    let s = setup();
    let schedule = SubsetSchedule::new(vec![2.0, 4.0, 8.0], 2).unwrap();
    let run = |workers: usize, seed: u64| {
        let opts = RunOptions {
            workers,
            skip_failed: false,
        };
        lt_soups(&s.theta0, &s.train, Some(&s.val), &schedule, &merge(0.7), &cfg().with_seed(seed), &opts)
            .unwrap()
            .0
    };
    let a = run(1, 3);
    assert_eq!(a.flat(), run(1, 3).flat());
    assert_eq!(a.flat(), run(4, 3).flat());
    assert_ne!(a.flat(), run(1, 4).flat());
}

#[test]
fn replicas_see_distinct_resamples() {
    let s = setup();
    let a = job_data(&s.train, 1, 4.0, 0);
    let b = job_data(&s.train, 1, 4.0, 1);
    assert_eq!(a.class_sizes(), b.class_sizes());
    assert_ne!(a.features(), b.features());
    assert_ne!(replica_seeds(1, 4.0, 0), replica_seeds(1, 4.0, 1));
    assert_ne!(replica_seeds(1, 4.0, 0), replica_seeds(1, 8.0, 0));
}
