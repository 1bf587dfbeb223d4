use pdmd_core::distill::{
    run_phased_dmd, GradNormalization, Method, RunArtifacts, RunOptions, Teacher, TrainerConfig,
};
use pdmd_core::net::{checkpoint, NetConfig};
use pdmd_core::objectives::AnalyticVelocity;
use pdmd_core::sampler::{IntervalMode, PhasePlan};
use pdmd_core::{Net, NoiseSchedule, ToyPrior};

fn teacher() -> Teacher<f64> {
    Teacher::Analytic(AnalyticVelocity {
        prior: ToyPrior::four_atom(),
        schedule: NoiseSchedule::RectifiedFlow,
    })
}

fn init() -> Net {
    Net::new(NetConfig::default().with_width(16).with_layers(2), 3).unwrap()
}

fn cfg(method: Method, plan: PhasePlan, updates: usize) -> TrainerConfig {
    TrainerConfig {
        method,
        plan,
        batch_size: 64,
        generator_updates: updates,
        fake_updates_per_generator_update: 2,
        eval_samples: 500,
        seed: 21,
        ..Default::default()
    }
}

fn run(c: &TrainerConfig) -> RunArtifacts<f64> {
    run_phased_dmd(c, &ToyPrior::four_atom(), &teacher(), &init(), &RunOptions::default()).unwrap()
}

fn bytes(net: &Net) -> Vec<u8> {
    checkpoint::to_bytes(net)
}

#[test]
fn one_phase_one_step_plan_reproduces_vanilla_dmd() {
    for normalization in [GradNormalization::None, GradNormalization::PerSampleMeanAbs] {
        let mut phased = cfg(Method::Phased, PhasePlan::one_step(), 0);
        phased.grad_normalization = normalization;
        let mut dmd = phased.clone();
        dmd.method = Method::Dmd;
        for updates in 1..=10 {
            phased.generator_updates = updates;
            dmd.generator_updates = updates;
            let (a, b) = (run(&phased), run(&dmd));
            assert_eq!(bytes(&a.experts[0]), bytes(&b.experts[0]), "update {updates}");
            assert_eq!(bytes(&a.fakes[0]), bytes(&b.fakes[0]), "update {updates}");
            assert_eq!(a.phases[0].grad_norms, b.phases[0].grad_norms);
        }
    }
}

#[test]
fn earlier_experts_are_frozen() {
    let plan = PhasePlan::uniform(4, 2, IntervalMode::ReverseNested).unwrap();
    let c = cfg(Method::Phased, plan, 4);
    let full = run(&c);
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let first_only = run_phased_dmd(&c, &ToyPrior::four_atom(), &teacher(), &init(), &opts).unwrap();
    let saved = std::fs::read(dir.path().join("expert_0.ckpt")).unwrap();
    assert_eq!(bytes(&full.experts[0]), saved);
    assert_eq!(bytes(&first_only.experts[0]), saved);
    assert_ne!(bytes(&full.experts[1]), bytes(&init()));
}

#[test]
fn noise_times_respect_the_interval_mode() {
    let m = TrainerConfig::default().time_margin;
    for mode in [IntervalMode::ReverseNested, IntervalMode::Disjoint] {
        let plan = PhasePlan::uniform(4, 2, mode).unwrap();
        let a = run(&cfg(Method::Phased, plan.clone(), 5));
        for (k, report) in a.phases.iter().enumerate() {
            let (lo, hi) = plan.phases()[k].noise_interval;
            let (min, max) = report.noise_time_range;
            assert!(min >= lo + m - 1e-12 && max <= hi - m + 1e-12, "{mode} phase {k}: {min}..{max}");
            // a few hundred uniform draws reach close to both ends
            let width = hi - lo;
            assert!(min < lo + 0.1 * width && max > hi - 0.1 * width, "{mode} phase {k}: {min}..{max}");
        }
        let expected_hi = if mode == IntervalMode::Disjoint { 0.5 } else { 1.0 };
        assert_eq!(plan.phases()[1].noise_interval, (0.0, expected_hi));
    }
}

#[test]
fn fixed_time_is_used_verbatim() {
    let mut c = cfg(Method::Dmd, PhasePlan::uniform(4, 1, IntervalMode::ReverseNested).unwrap(), 2);
    c.fixed_t = Some(0.357);
    let a = run(&c);
    assert_eq!(a.phases[0].noise_time_range, (0.357, 0.357));

    let mut bad = cfg(Method::Phased, PhasePlan::uniform(4, 2, IntervalMode::ReverseNested).unwrap(), 1);
    bad.fixed_t = Some(0.3);
    assert!(run_phased_dmd(&bad, &ToyPrior::four_atom(), &teacher(), &init(), &RunOptions::default()).is_err());
}

#[test]
fn truncation_histograms_cover_their_support() {
    let plan = PhasePlan::uniform(4, 2, IntervalMode::ReverseNested).unwrap();
    let a = run(&cfg(Method::PhasedSgts, plan.clone(), 40));
    for report in &a.phases {
        assert_eq!(report.truncation_histogram.len(), 2);
        assert_eq!(report.truncation_histogram.iter().sum::<u64>(), 40);
        assert!(report.truncation_histogram.iter().all(|&c| c > 0));
    }
    let single = PhasePlan::new(plan.grid().to_vec(), &[4], IntervalMode::ReverseNested).unwrap();
    let b = run(&cfg(Method::DmdSgts, single, 80));
    let h = &b.phases[0].truncation_histogram;
    assert_eq!(h.len(), 4);
    assert_eq!(h.iter().sum::<u64>(), 80);
    assert!(h.iter().all(|&c| c > 0), "{h:?}");
    assert!(run(&cfg(Method::Phased, plan, 3)).phases[0].truncation_histogram.is_empty());
}

#[test]
fn runs_are_deterministic_and_seed_sensitive() {
    let plan = PhasePlan::uniform(4, 2, IntervalMode::ReverseNested).unwrap();
    let c = cfg(Method::Phased, plan, 3);
    let (a, b) = (run(&c), run(&c));
    for k in 0..2 {
        assert_eq!(bytes(&a.experts[k]), bytes(&b.experts[k]));
    }
    assert_eq!(a.final_report, b.final_report);
    let other = run(&TrainerConfig { seed: 22, ..c });
    assert_ne!(bytes(&a.experts[1]), bytes(&other.experts[1]));
}

#[test]
fn multi_phase_plans_need_a_phased_method() {
    let c = cfg(Method::Dmd, PhasePlan::uniform(4, 2, IntervalMode::ReverseNested).unwrap(), 1);
    assert!(c.validate().is_err());
}
