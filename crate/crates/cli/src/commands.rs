//! The subcommands. Each returns `Ok(true)` when every checked point passes
//! and `Ok(false)` on a domain failure that still produced its outputs.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nlskam::kam::{is_nf_resonant, NfChoice, NfStepDiagnostic};
use nlskam::algebra::PolynomialDocument;
use nlskam::homological::high_modes;
use nlskam::lattice::{build_blocks, Lattice};
use nlskam::nls::{stability_grid, Perturbation, StabilityConfig, StabilityReport};
use nlskam::nonresonance::{estimate_excluded_measure, log_log_slope, MelnikovReport, MeasureEstimate, ParameterPoint};
use nlskam::pipeline::{draw_parameter, first_admissible, first_round_check, run_kam, KamArtifact};

use crate::config::{ExperimentConfig, StabilityMode};
use crate::output::{ints, num, OutputDir};
use crate::CliError;

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: OutputDir,
}

const KAM_RESULT: &str = "kam_result.json";
const NF_RESULT: &str = "nf_result.json";
const STABILITY_SUMMARY: &str = "stability_summary.json";

/// `w` for a single-point command: the explicit values, or the first seed
/// whose first-round check passes. `None` when no seed qualifies.
fn select_parameter(ctx: &Context, lat: &Lattice) -> Result<Option<(Option<u64>, ParameterPoint)>, CliError> {
    if let Some(w) = ctx.cfg.explicit_parameter(lat) {
        return Ok(Some((None, w)));
    }
    if ctx.cfg.seeds.is_empty() {
        return Err(CliError::usage("`seeds` is empty; this command needs at least one draw of w".into()));
    }
    let bx = ctx.cfg.sampling_box().expect("sampled model");
    let found = first_admissible(lat, bx, &ctx.cfg.schedule_params(), ctx.cfg.seeds.iter().copied())?;
    Ok(found.map(|(s, w)| (Some(s), w)))
}

fn seed_field(seed: Option<u64>) -> String {
    seed.map(|s| s.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct CheckEntry {
    seed: Option<u64>,
    report: MelnikovReport,
}

#[derive(Serialize)]
struct CheckDocument {
    points: usize,
    passed: usize,
    reports: Vec<CheckEntry>,
}

pub fn check(ctx: &Context) -> Result<bool, CliError> {
    let lat = ctx.cfg.lattice()?;
    let sched = ctx.cfg.schedule_params();
    let points: Vec<(Option<u64>, ParameterPoint)> = match ctx.cfg.explicit_parameter(&lat) {
        Some(w) => vec![(None, w)],
        None => {
            let bx = ctx.cfg.sampling_box().expect("sampled model");
            ctx.cfg.seeds.iter().map(|&s| (Some(s), draw_parameter(&lat, bx, s))).collect()
        }
    };
    let reports = points
        .par_iter()
        .map(|(_, w)| first_round_check(&lat, w, &sched))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut vrows = Vec::new();
    for ((seed, _), r) in points.iter().zip(&reports) {
        rows.push(vec![seed_field(*seed), r.passed.to_string(), num(r.worst_margin), r.tested.to_string(), r.violations.len().to_string()]);
        for v in &r.violations {
            vrows.push(vec![
                seed_field(*seed),
                format!("{:?}", v.kind),
                ints(&v.k),
                ints(&v.blocks),
                num(v.value),
                num(v.threshold),
            ]);
        }
    }
    ctx.out.write_csv("check.csv", &["seed", "passed", "worst_margin", "tested", "violations"], &rows)?;
    ctx.out.write_csv("check_violations.csv", &["seed", "kind", "k", "blocks", "value", "threshold"], &vrows)?;
    let passed = reports.iter().filter(|r| r.passed).count();
    let doc = CheckDocument {
        points: reports.len(),
        passed,
        reports: points.iter().map(|p| p.0).zip(reports).map(|(seed, report)| CheckEntry { seed, report }).collect(),
    };
    ctx.out.write_json("check_report.json", &doc)?;
    println!("check: {passed}/{} points pass", doc.points);
    Ok(passed == doc.points)
}

#[derive(Serialize, Deserialize)]
struct KamDocument {
    seed: Option<u64>,
    omega_inf: Vec<f64>,
    omega_shift: f64,
    h_shift: f64,
    final_low_norm: f64,
    steps: usize,
    rounds: usize,
    artifact: KamArtifact,
}

pub fn kam(ctx: &Context) -> Result<bool, CliError> {
    let lat = ctx.cfg.lattice()?;
    let sched = ctx.cfg.schedule_params();
    let Some((seed, w)) = select_parameter(ctx, &lat)? else {
        println!("kam: no seed among {} passes the first-round check", ctx.cfg.seeds.len());
        return Ok(false);
    };
    let res = run_kam(&ctx.cfg.spec(), &w, &sched)?;
    let rows: Vec<Vec<String>> = res
        .steps
        .iter()
        .map(|s| {
            vec![
                s.id(),
                s.round.to_string(),
                num(s.low_norm_before),
                num(s.low_norm),
                num(s.high_norm),
                num(s.divisor_margin),
                num(s.omega_shift),
                num(s.h_shift),
                num(s.residual),
                num(s.conjugacy_error),
                s.generator_terms.to_string(),
            ]
        })
        .collect();
    ctx.out.write_csv(
        "kam_steps.csv",
        &["step", "round", "low_norm_before", "low_norm", "high_norm", "divisor_margin", "omega_shift", "h_shift", "residual", "conjugacy_error", "generator_terms"],
        &rows,
    )?;
    let timing: Vec<Vec<String>> = res.steps.iter().map(|s| vec![s.id(), num(s.wall_seconds)]).collect();
    ctx.out.write_csv("kam_timing.csv", &["step", "wall_seconds"], &timing)?;
    let rounds: Vec<Vec<String>> = res
        .rounds
        .iter()
        .map(|r| {
            vec![
                r.plan.m.to_string(),
                num(r.plan.eps_prev),
                num(r.plan.eps_m),
                num(r.plan.kappa),
                num(r.plan.delta_m),
                r.plan.n.to_string(),
                r.steps_taken.to_string(),
                num(r.melnikov_worst_margin),
                num(r.low_norm),
            ]
        })
        .collect();
    ctx.out.write_csv("kam_rounds.csv", &["round", "eps_prev", "eps_m", "kappa", "delta_m", "n", "steps_taken", "melnikov_margin", "low_norm"], &rounds)?;
    let doc = KamDocument {
        seed,
        omega_inf: res.omega_inf.clone(),
        omega_shift: res.omega_shift,
        h_shift: res.h_shift,
        final_low_norm: res.final_low_norm,
        steps: res.steps.len(),
        rounds: res.rounds.len(),
        artifact: KamArtifact::new(&res, &w)?,
    };
    ctx.out.write_json(KAM_RESULT, &doc)?;
    println!("kam: {} steps, |omega_inf - omega| = {:e}, final low-jet norm {:e}", doc.steps, doc.omega_shift, doc.final_low_norm);
    Ok(true)
}

#[derive(Serialize, Deserialize)]
struct NfCounts {
    z: usize,
    p: usize,
    r: usize,
    q: usize,
}

#[derive(Serialize, Deserialize)]
struct NfDocument {
    upstream_hash: String,
    choice: NfChoice,
    n: f64,
    kappa_t: f64,
    delta_t: f64,
    high_modes: usize,
    max_nonresonant: f64,
    nonresonant_check: f64,
    unmodeled_tail: f64,
    counts: NfCounts,
    melnikov_margin: f64,
    melnikov_tested: usize,
    z: PolynomialDocument,
}

#[derive(Deserialize)]
struct Hashed {
    config_hash: String,
}

pub fn nf(ctx: &Context) -> Result<bool, CliError> {
    let upstream: KamDocument = ctx.out.read_json(KAM_RESULT, "kam")?;
    let Hashed { config_hash } = ctx.out.read_json(KAM_RESULT, "kam")?;
    let lat = Arc::new(ctx.cfg.lattice()?);
    let sched = ctx.cfg.schedule_params();
    let settings = ctx.cfg.nf_settings();
    let (choice, res) = match upstream.artifact.normal_form(&lat, &sched, &settings) {
        Ok(x) => x,
        Err(e) if e.is_domain_failure() => {
            println!("nf: {e}");
            return Ok(false);
        }
        Err(e) => return Err(e.into()),
    };
    let n = settings.n.unwrap_or(choice.n);
    let high = high_modes(&lat, n);
    let nonresonant_check = res
        .transformed
        .iter()
        .filter(|(m, _)| m.weighted_degree() <= settings.m + 2 && m.count_on(&high) <= 2 && !is_nf_resonant(m, &high, &lat))
        .filter(|(m, _)| m.k_norm() as f64 <= settings.delta_t.unwrap_or(choice.delta_t))
        .map(|(_, c)| c.norm())
        .fold(0.0, f64::max);
    let rows: Vec<Vec<String>> = res
        .steps
        .iter()
        .map(|s: &NfStepDiagnostic| {
            vec![
                (s.j0 + 1).to_string(),
                num(s.residual),
                num(s.divisor_margin),
                num(s.conjugacy_error),
                s.generator_terms.to_string(),
                s.resonant_terms.to_string(),
            ]
        })
        .collect();
    ctx.out.write_csv("nf_steps.csv", &["degree", "residual", "divisor_margin", "conjugacy_error", "generator_terms", "resonant_terms"], &rows)?;
    let doc = NfDocument {
        upstream_hash: config_hash,
        n,
        kappa_t: settings.kappa_t.unwrap_or(choice.kappa_t),
        delta_t: settings.delta_t.unwrap_or(choice.delta_t),
        choice,
        high_modes: high.iter().filter(|&&h| h).count(),
        max_nonresonant: res.max_nonresonant,
        nonresonant_check,
        unmodeled_tail: res.unmodeled_tail,
        counts: NfCounts { z: res.z.len(), p: res.p.len(), r: res.r.len(), q: res.q.len() },
        melnikov_margin: res.melnikov.worst_margin,
        melnikov_tested: res.melnikov.tested,
        z: res.z.to_records(),
    };
    ctx.out.write_json(NF_RESULT, &doc)?;
    println!("nf: N = {n}, largest non-resonant coefficient {:e}, Z {} P {} R {} Q {}", doc.max_nonresonant, doc.counts.z, doc.counts.p, doc.counts.r, doc.counts.q);
    Ok(true)
}

#[derive(Serialize, Deserialize)]
pub struct StabilityRun {
    pub delta: f64,
    pub seed: u64,
    pub threshold: f64,
    pub horizon: f64,
    pub steps: usize,
    pub max_distance: f64,
    pub verdict: bool,
    pub energy_drift: f64,
    pub mass_drift: f64,
    pub momentum_drift: f64,
    pub error: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct StabilityDocument {
    pub mode: StabilityMode,
    pub w_seed: Option<u64>,
    pub m: u32,
    pub runs: Vec<StabilityRun>,
    pub passed: usize,
}

pub fn stability(ctx: &Context) -> Result<bool, CliError> {
    let cfg = &ctx.cfg;
    let st = &cfg.stability;
    let lat = cfg.lattice()?;
    let (w_seed, w) = match st.mode {
        StabilityMode::Pipeline => {
            let kam: KamDocument = ctx.out.read_json(KAM_RESULT, "kam")?;
            ctx.out.upstream(NF_RESULT, "nf")?;
            (kam.seed, kam.artifact.parameter())
        }
        StabilityMode::Direct => match select_parameter(ctx, &lat)? {
            Some(x) => x,
            None => {
                println!("stability: no seed among {} passes the first-round check", cfg.seeds.len());
                return Ok(false);
            }
        },
    };
    if st.perturbation == Perturbation::PureMode && st.pure_site.is_none() {
        return Err(CliError::usage("stability.pure_site is required for the pure-mode perturbation".into()));
    }
    let mut model = cfg.spec().model(w);
    model.degree_cutoff = st.degree_cutoff;
    let base = StabilityConfig {
        d: cfg.lattice.d,
        tangential: cfg.lattice.tangential.clone(),
        cutoff: cfg.lattice.cutoff,
        model,
        p: st.p,
        delta: st.deltas.first().copied().unwrap_or(0.5),
        m: st.m,
        dt: st.dt,
        seed: 0,
        perturbation: st.perturbation,
        pure_site: st.pure_site.clone(),
        n_samples: st.n_samples,
    };
    base.validate()?;
    let results = stability_grid(&base, &st.deltas, &st.seeds);
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let jobs = st.deltas.iter().flat_map(|&d| st.seeds.iter().map(move |&s| (d, s)));
    for ((delta, seed), r) in jobs.zip(results) {
        match r {
            Ok(r) => {
                for &(t, dist) in &r.samples {
                    rows.push(vec![num(delta), seed.to_string(), num(t), num(dist)]);
                }
                runs.push(run_entry(&r));
            }
            Err(e) if e.is_domain_failure() => runs.push(StabilityRun {
                delta,
                seed,
                threshold: 2.0 * delta,
                horizon: delta.powi(-(st.m as i32)),
                steps: 0,
                max_distance: f64::NAN,
                verdict: false,
                energy_drift: f64::NAN,
                mass_drift: f64::NAN,
                momentum_drift: f64::NAN,
                error: Some(e.to_string()),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    ctx.out.write_csv("stability.csv", &["delta", "seed", "t", "distance"], &rows)?;
    let passed = runs.iter().filter(|r| r.verdict).count();
    let doc = StabilityDocument { mode: st.mode, w_seed, m: st.m, passed, runs };
    ctx.out.write_json(STABILITY_SUMMARY, &doc)?;
    for r in &doc.runs {
        println!(
            "stability: delta {} seed {}: max distance {:.6} vs 2delta {} -> {}",
            r.delta,
            r.seed,
            r.max_distance,
            r.threshold,
            if r.verdict { "pass" } else { "FAIL" }
        );
    }
    Ok(passed == doc.runs.len())
}

fn run_entry(r: &StabilityReport) -> StabilityRun {
    StabilityRun {
        delta: r.delta,
        seed: r.seed,
        threshold: 2.0 * r.delta,
        horizon: r.horizon,
        steps: r.steps,
        max_distance: r.max_distance,
        verdict: r.verdict,
        energy_drift: r.energy_drift,
        mass_drift: r.mass_drift,
        momentum_drift: r.momentum_drift,
        error: None,
    }
}

pub fn measure(ctx: &Context) -> Result<bool, CliError> {
    let lat = ctx.cfg.lattice()?;
    let ms = &ctx.cfg.measure;
    let bx = ctx
        .cfg
        .sampling_box()
        .ok_or_else(|| CliError::usage("measure needs model.v_hat.kind = \"sample\"".into()))?;
    let dec = build_blocks(&lat, ms.delta_prime)?;
    let est: Vec<MeasureEstimate> = ms
        .kappas
        .par_iter()
        .map(|&k| estimate_excluded_measure(&lat, &dec, k, ms.delta_prime, ms.n_samples, bx, ms.seed))
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<String>> = est
        .iter()
        .map(|e| vec![num(e.kappa), num(e.delta_prime), num(e.fraction), num(e.ci_low), num(e.ci_high), e.n_samples.to_string(), e.seed.to_string()])
        .collect();
    ctx.out.write_csv("measure.csv", &["kappa", "delta_prime", "fraction", "ci_low", "ci_high", "n_samples", "seed"], &rows)?;
    for e in &est {
        println!("measure: kappa {} excluded {:.4} [{:.4}, {:.4}]", e.kappa, e.fraction, e.ci_low, e.ci_high);
    }
    Ok(true)
}

#[derive(Serialize)]
struct DeltaLine {
    delta: f64,
    threshold: f64,
    horizon: f64,
}

#[derive(Serialize)]
struct StabilityFigure {
    input: &'static str,
    m: u32,
    deltas: Vec<DeltaLine>,
    passed: usize,
    runs: usize,
}

#[derive(Serialize)]
struct MeasureFigure {
    input: &'static str,
    log_log_slope: Option<f64>,
}

#[derive(Serialize)]
struct DecayFigure {
    input: &'static str,
    steps: usize,
}

#[derive(Serialize)]
struct ReportDocument {
    stability: StabilityFigure,
    measure: MeasureFigure,
    decay: DecayFigure,
}

fn field(row: &BTreeMap<String, String>, key: &str, file: &str) -> Result<f64, CliError> {
    row.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::usage(format!("{file}: column `{key}` missing or not a number")))
}

/// Plot-ready summaries of the stability, measure and KAM outputs.
pub fn report_data(ctx: &Context) -> Result<bool, CliError> {
    let st: StabilityDocument = ctx.out.read_json(STABILITY_SUMMARY, "stability")?;
    let measure = ctx.out.read_csv("measure.csv", "measure")?;
    let steps = ctx.out.read_csv("kam_steps.csv", "kam")?;
    let rounds = ctx.out.read_csv("kam_rounds.csv", "kam")?;

    let mut deltas: Vec<DeltaLine> = Vec::new();
    for r in &st.runs {
        if !deltas.iter().any(|d| d.delta == r.delta) {
            deltas.push(DeltaLine { delta: r.delta, threshold: r.threshold, horizon: r.horizon });
        }
    }
    let points = measure
        .iter()
        .map(|r| Ok((field(r, "kappa", "measure.csv")?, field(r, "fraction", "measure.csv")?)))
        .collect::<Result<Vec<_>, CliError>>()?;

    let eps_of_round: BTreeMap<String, f64> = rounds
        .iter()
        .map(|r| Ok((r.get("round").cloned().unwrap_or_default(), field(r, "eps_m", "kam_rounds.csv")?)))
        .collect::<Result<_, CliError>>()?;
    let mut decay = Vec::new();
    for (i, r) in steps.iter().enumerate() {
        let round = r.get("round").cloned().unwrap_or_default();
        let bound = eps_of_round.get(&round).copied().ok_or_else(|| CliError::usage(format!("kam_rounds.csv: no round {round}")))?;
        decay.push(vec![
            (i + 1).to_string(),
            r.get("step").cloned().unwrap_or_default(),
            round,
            num(field(r, "low_norm", "kam_steps.csv")?),
            num(field(r, "high_norm", "kam_steps.csv")?),
            num(bound),
        ]);
    }
    ctx.out.write_csv("decay.csv", &["index", "step", "round", "low_norm", "high_norm", "eps_m"], &decay)?;
    let doc = ReportDocument {
        stability: StabilityFigure { input: "stability.csv", m: st.m, deltas, passed: st.passed, runs: st.runs.len() },
        measure: MeasureFigure { input: "measure.csv", log_log_slope: log_log_slope(&points) },
        decay: DecayFigure { input: "decay.csv", steps: decay.len() },
    };
    ctx.out.write_json("report.json", &doc)?;
    println!("report-data: stability {}/{} pass, measure slope {:?}, {} KAM steps", doc.stability.passed, doc.stability.runs, doc.measure.log_log_slope, doc.decay.steps);
    Ok(true)
}
