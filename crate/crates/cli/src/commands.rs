use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pdmd_core::distill::{
    gate_deviation, pretrain_teacher, run_baselines, run_phased_dmd, BoundaryReport, PhaseReport,
    RunArtifacts, RunOptions, Teacher, TeacherKind, TrainerConfig,
};
use pdmd_core::experiments::{ablate, trajectory_overlap, FlowVariant};
use pdmd_core::net::checkpoint;
use pdmd_core::objectives::AnalyticVelocity;
use pdmd_core::sampler::Trajectory;
use pdmd_core::{Net, Predictor, ToyPrior};
use serde_json::json;

use crate::config::RunConfig;
use crate::plot;
use crate::report::{summarize, Gate, Report};

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    Ok(out)
}

fn finish(report: &Report, cfg: &RunConfig, path: &Path) -> Result<bool> {
    report.write(cfg, path)?;
    let (text, passed) = summarize(&report.to_json(cfg));
    print!("{text}");
    println!("report: {}", path.display());
    Ok(passed)
}

pub fn train_teacher(cfg: &RunConfig) -> Result<bool> {
    let out = prepare_out(cfg)?;
    let prior = cfg.prior()?;
    let tcfg = cfg.teacher_config(prior.dim())?;
    let trained = pretrain_teacher::<f64>(&prior, cfg.schedule()?, &tcfg)?;
    let ckpt = cfg.teacher_checkpoint();
    checkpoint::save(&trained.net, &ckpt)?;

    let grid = out.join("teacher_deviation.csv");
    let mut csv = String::from("t,x,learned,analytic,density\n");
    for p in &trained.map {
        csv.push_str(&format!("{},{},{},{},{}\n", p.t, p.x, p.learned, p.analytic, p.density));
    }
    fs::write(&grid, csv)?;

    let mut report = Report::new("train-teacher");
    report
        .gates
        .push(Gate::at_most("teacher_deviation", trained.deviation, trained.threshold));
    report.insert("checkpoint", ckpt.display().to_string())?;
    report.insert("deviation", trained.deviation)?;
    report.insert("loss_per_100_steps", &trained.losses)?;
    finish(&report, cfg, &out.join("teacher_report.json"))
}

fn load_teacher(cfg: &RunConfig) -> Result<Net> {
    let path = cfg.teacher_checkpoint();
    if !path.exists() {
        bail!(
            "teacher checkpoint {} not found; run `pdmd train-teacher` first",
            path.display()
        );
    }
    Ok(checkpoint::load(&path)?)
}

/// Re-measures the loaded teacher against the gate.
fn teacher_gate(cfg: &RunConfig, net: &Net, prior: &ToyPrior) -> Result<Gate> {
    let tcfg = cfg.teacher_config(prior.dim())?;
    let (deviation, _) = gate_deviation(net, prior, cfg.schedule()?, &tcfg)?;
    Ok(Gate::at_most("teacher_deviation", deviation, tcfg.gate_threshold))
}

fn write_trajectory(traj: &Trajectory<f64>, path: &Path) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    traj.write_csv(BufWriter::new(file))?;
    Ok(())
}

pub fn toy_fig3(cfg: &RunConfig) -> Result<bool> {
    let net = load_teacher(cfg)?;
    let out = prepare_out(cfg)?;
    let prior = cfg.prior()?;
    let ocfg = cfg.overlap_config(prior.dim())?;
    let result = trajectory_overlap(&prior, cfg.schedule()?, Some(&net as &dyn Predictor<f64>), &ocfg)?;

    for v in FlowVariant::ALL {
        write_trajectory(result.trajectory(v), &out.join(format!("fig3_{}.csv", v.name())))?;
    }
    if cfg.plot()? && prior.dim() == 1 {
        let svg = plot::overlay(&[
            ("full", &result.full, "#1f77b4"),
            ("subinterval", &result.subinterval, "#2ca02c"),
            ("biased", &result.biased, "#d62728"),
        ]);
        fs::write(out.join("fig3_overlay.svg"), svg)?;
    }

    let ratio = result.biased_deviation / result.subinterval_deviation;
    let mut report = Report::new("toy-fig3");
    report.gates.push(Gate::at_most(
        "subinterval_deviation",
        result.subinterval_deviation,
        cfg.parse("fig3.max_deviation")?,
    ));
    report
        .gates
        .push(Gate::at_least("biased_to_subinterval_ratio", ratio, cfg.parse("fig3.min_ratio")?));
    report.insert("subinterval_deviation", result.subinterval_deviation)?;
    report.insert("biased_deviation", result.biased_deviation)?;
    report.insert("window", [ocfg.split, 1.0])?;
    let losses: serde_json::Map<String, serde_json::Value> = result
        .losses
        .iter()
        .map(|(v, l)| (v.name().to_string(), json!(l)))
        .collect();
    report.insert("loss_per_100_steps", losses)?;
    finish(&report, cfg, &out.join("fig3_report.json"))
}

fn teacher_for(kind: TeacherKind, net: &Net, prior: &ToyPrior, cfg: &TrainerConfig) -> Teacher<f64> {
    match kind {
        TeacherKind::Learned => Teacher::Learned(net.clone()),
        TeacherKind::Analytic => Teacher::Analytic(AnalyticVelocity {
            prior: prior.clone(),
            schedule: cfg.schedule,
        }),
    }
}

fn run_json(run: &RunArtifacts<f64>) -> serde_json::Value {
    let phases: Vec<&PhaseReport> = run.phases.iter().collect();
    let boundaries: Vec<&BoundaryReport> = run.boundaries.iter().collect();
    json!({
        "final": run.final_report,
        "boundaries": boundaries,
        "phases": phases,
    })
}

pub fn distill(cfg: &RunConfig) -> Result<bool> {
    let net = load_teacher(cfg)?;
    let out = prepare_out(cfg)?;
    let prior = cfg.prior()?;
    let tcfg = cfg.trainer_config()?;
    let mut report = Report::new("distill");
    if tcfg.teacher_kind == TeacherKind::Learned {
        report.gates.push(teacher_gate(cfg, &net, &prior)?);
    }
    let teacher = teacher_for(tcfg.teacher_kind, &net, &prior, &tcfg);
    let options = RunOptions {
        checkpoint_dir: Some(out.clone()),
        start_phase: cfg.parse("distill.start_phase")?,
        continue_expert: cfg.parse("distill.continue_expert")?,
    };
    let run = run_phased_dmd(&tcfg, &prior, &teacher, &net, &options)?;
    report.insert("method", tcfg.method.to_string())?;
    report.insert("final", &run.final_report)?;
    report.insert("run", run_json(&run))?;
    if cfg.parse::<bool>("distill.baselines")? {
        let base = run_baselines(&tcfg, &prior, &teacher, &net)?;
        report.insert("baseline_dmd", &base.dmd.final_report)?;
        report.insert("baseline_dmd_sgts", &base.sgts.final_report)?;
        report.insert(
            "baselines",
            json!({ "dmd": run_json(&base.dmd), "dmd_sgts": run_json(&base.sgts) }),
        )?;
    }
    finish(&report, cfg, &out.join("distill_report.json"))
}

pub fn ablate_cmd(cfg: &RunConfig) -> Result<bool> {
    let net = load_teacher(cfg)?;
    let out = prepare_out(cfg)?;
    let prior = cfg.prior()?;
    let tcfg = cfg.trainer_config()?;
    let mut report = Report::new("ablate");
    if tcfg.teacher_kind == TeacherKind::Learned {
        report.gates.push(teacher_gate(cfg, &net, &prior)?);
    }
    let teacher = teacher_for(tcfg.teacher_kind, &net, &prior, &tcfg);
    let arms = ablate(&tcfg, &prior, &teacher, &net)?;

    println!("{:<20} {:>8} {:>11} mode masses", "arm", "w1", "unassigned");
    for arm in &arms {
        let masses: Vec<String> = arm.report.mode_masses.iter().map(|m| format!("{m:.3}")).collect();
        println!(
            "{:<20} {:>8.4} {:>11.4} [{}]",
            arm.name,
            arm.report.w1,
            arm.report.unassigned,
            masses.join(", ")
        );
        report.insert(&arm.name, &arm.report)?;
    }
    report.insert("arms", &arms)?;
    finish(&report, cfg, &out.join("ablate_report.json"))
}

/// Prints every `*_report.json` under `path` (a file or directory).
pub fn report_cmd(path: &Path) -> Result<bool> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with("_report.json"))
            })
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        bail!("no reports under {}", path.display());
    }
    let mut all = true;
    for f in files {
        let text = fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
        let (summary, passed) = summarize(&value);
        print!("{summary}");
        all &= passed;
    }
    Ok(all)
}
