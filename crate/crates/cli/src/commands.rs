use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dtnet::calderon::{
    coverage_sweep, error_decomposition, generate_dataset, linear_dtn_fit, radial_output_basis, train_calderon_direct,
    train_dtn_fixed_a, train_inverse, CalderonDataset, ConductivityFamily, Coverage, DecompositionRow, FixedASamples,
    Provenance, WmuQuadrature,
};
use dtnet::deeponet::{trace_csv, TraceRow};
use dtnet::fem::{dtn_matrix, generate_mesh, DtNMatrix, DtnBasis, Mesh};
use dtnet::hilbert::{frequency, mode_count, DomainBasis};
use dtnet::measures::{kl_basis, sample_boundary_batch, to_jsonl};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::artifacts::{Manifest, RunDir, MANIFEST};
use crate::config::{ExperimentConfig, FamilyConfig, Pipeline, QUADRATURE_SEED, RECHECK_SEED};
use crate::error::{CliError, CliResult};
use crate::svg::{log_chart, Series};

pub const DATASET: &str = "dataset.jsonl";
pub const REPORT: &str = "report.json";

/// Disk spectrum tolerance of the `dtn` command for constant conductivities.
const SPECTRUM_TOL: f64 = 0.01;
const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub dataset_checksums: BTreeMap<String, String>,
    pub losses: BTreeMap<String, f64>,
    pub decomposition: Vec<DecompositionRow>,
    pub coverage: Vec<Coverage>,
}

#[derive(Debug, Serialize)]
struct SpectrumCheck {
    value: f64,
    max_relative_error: f64,
    max_off_diagonal: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct Invariants {
    #[serde(rename = "K")]
    k: usize,
    vertices: usize,
    symmetry_defect: f64,
    symmetric: bool,
    constant_mode_defect: f64,
    /// Extreme eigenvalues of the symmetric part on the non-constant modes, orthonormal basis.
    min_eigenvalue: f64,
    max_eigenvalue: f64,
    positive: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    disk_spectrum: Option<SpectrumCheck>,
}

fn mesh_for(cfg: &ExperimentConfig) -> CliResult<Mesh> {
    Ok(generate_mesh(cfg.mesh.h)?)
}

fn invariants(cfg: &ExperimentConfig, mesh: &Mesh, dtn: &DtNMatrix) -> Invariants {
    let n = mode_count(dtn.k);
    let on = dtn.to_orthonormal().entries;
    let block = on.view((1, 1), (n - 1, n - 1)).into_owned();
    let sym = (&block + block.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym).eigenvalues;
    let min_eigenvalue = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max_eigenvalue = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let disk_spectrum = match cfg.conductivity {
        crate::config::FieldConfig::Constant { value } => {
            let raw = &dtn.entries;
            let mut worst = 0.0f64;
            let mut off = 0.0f64;
            for i in 0..n {
                let want = value * PI * frequency(i) as f64;
                if i > 0 {
                    worst = worst.max((raw[(i, i)] - want).abs() / want);
                }
                for j in 0..n {
                    if i != j {
                        off = off.max(raw[(i, j)].abs());
                    }
                }
            }
            let scale = value * PI * dtn.k as f64;
            Some(SpectrumCheck {
                value,
                max_relative_error: worst,
                max_off_diagonal: off / scale,
                pass: worst <= SPECTRUM_TOL && off / scale <= SPECTRUM_TOL,
            })
        }
        _ => None,
    };
    let symmetry_defect = dtn.symmetry_defect();
    Invariants {
        k: dtn.k,
        vertices: mesh.vertex_count(),
        symmetry_defect,
        symmetric: symmetry_defect <= SYMMETRY_TOL,
        constant_mode_defect: dtn.constant_mode_defect(),
        min_eigenvalue,
        max_eigenvalue,
        positive: min_eigenvalue > 0.0,
        disk_spectrum,
    }
}

/// Assembles `Λ_a` for the configured conductivity and checks its invariants.
pub fn cmd_dtn(cfg: &ExperimentConfig, basis: DtnBasis) -> CliResult<()> {
    let mesh = mesh_for(cfg)?;
    let a = cfg.field(&mesh)?;
    let dtn = dtn_matrix(&mesh, &a, cfg.k())?;
    let inv = invariants(cfg, &mesh, &dtn);
    let mut run = RunDir::open(cfg.output_dir(), &cfg.hash())?;
    run.write_json("mesh.json", &mesh)?;
    let written = match basis {
        DtnBasis::Raw => dtn.clone(),
        DtnBasis::Orthonormal => dtn.to_orthonormal(),
    };
    run.write("dtn.csv", written.to_csv())?;
    run.write_json("dtn.json", &written)?;
    run.write_json("invariants.json", &inv)?;
    run.finish()?;
    println!(
        "dtn: K = {}, {} vertices, symmetry defect {:.2e}, eigenvalues [{:.4}, {:.4}]",
        inv.k, inv.vertices, inv.symmetry_defect, inv.min_eigenvalue, inv.max_eigenvalue
    );
    if let Some(s) = &inv.disk_spectrum {
        println!(
            "dtn: constant conductivity spectrum error {:.2e}, off-diagonal {:.2e}: {}",
            s.max_relative_error,
            s.max_off_diagonal,
            if s.pass { "within 1%" } else { "outside 1%, refine the mesh for this K" }
        );
    }
    if !inv.symmetric || !inv.positive {
        return Err(CliError::Numerical("assembled DtN matrix is not symmetric positive (see invariants.json)".into()));
    }
    Ok(())
}

fn provenance(cfg: &ExperimentConfig, family: ConductivityFamily) -> Provenance {
    Provenance { mesh_h: cfg.mesh.h, k: cfg.k(), base_seed: cfg.seeds.data, count: cfg.dataset.count, family }
}

fn kl_for(cfg: &ExperimentConfig, mesh: &Mesh) -> CliResult<DomainBasis> {
    Ok(kl_basis(mesh, cfg.eta.kl_modes)?)
}

fn generate(cfg: &ExperimentConfig, mesh: &Mesh, kl: &DomainBasis) -> CliResult<CalderonDataset> {
    Ok(generate_dataset(mesh, &cfg.family()?, Some(kl), cfg.k(), cfg.seeds.data, cfg.dataset.count)?)
}

/// Reuses the dataset of an earlier `sample` run after checking its checksum, or
/// generates and stores a fresh one.
fn dataset_for(run: &mut RunDir, cfg: &ExperimentConfig, mesh: &Mesh, kl: &DomainBasis) -> CliResult<CalderonDataset> {
    let want = provenance(cfg, cfg.family()?);
    let recorded = run.manifest.dataset.clone();
    if recorded.is_some() && run.manifest.artifacts.contains_key(DATASET) {
        run.manifest.verify_file(&run.path, DATASET)?;
        if recorded.as_ref() == Some(&want) {
            let text = fs::read_to_string(run.path.join(DATASET))?;
            let ds = CalderonDataset::from_jsonl(&text, want)
                .map_err(|e| CliError::Integrity(format!("{}: {e}", run.path.join(DATASET).display())))?;
            println!("dataset: reusing {} verified samples", ds.len());
            return Ok(ds);
        }
    }
    let ds = generate(cfg, mesh, kl)?;
    run.write(DATASET, ds.to_jsonl())?;
    run.manifest.dataset = Some(ds.provenance.clone());
    println!("dataset: generated {} samples", ds.len());
    Ok(ds)
}

/// Draws the boundary samples and, for the Calderón pipelines, the conductivity dataset.
pub fn cmd_sample(cfg: &ExperimentConfig) -> CliResult<()> {
    let mu = cfg.mu.spec(cfg.k())?;
    let fs = sample_boundary_batch(&mu, cfg.k(), cfg.seeds.data, cfg.samples.n_train)?;
    let mut run = RunDir::open(cfg.output_dir(), &cfg.hash())?;
    run.write("mu_samples.jsonl", to_jsonl(&fs))?;
    println!("sample: {} boundary samples", fs.len());
    if cfg.pipeline.uses_dataset() {
        let mesh = mesh_for(cfg)?;
        let kl = kl_for(cfg, &mesh)?;
        let ds = generate(cfg, &mesh, &kl)?;
        run.write(DATASET, ds.to_jsonl())?;
        run.manifest.dataset = Some(ds.provenance.clone());
        println!("sample: {} conductivity samples", ds.len());
    }
    run.finish()
}

fn loss_plot(trace: &[TraceRow]) -> CliResult<String> {
    let pts = |f: fn(&TraceRow) -> f64| trace.iter().map(|r| (r.iteration as f64, f(r))).collect();
    log_chart(
        "Training loss",
        "epoch",
        "loss",
        &[Series::line("epoch loss", pts(|r| r.loss)), Series::line("best", pts(|r| r.best_loss)).dashed()],
    )
}

fn finish_report(
    mut run: RunDir,
    cfg: &ExperimentConfig,
    losses: BTreeMap<String, f64>,
    decomposition: Vec<DecompositionRow>,
    errors: &[f64],
) -> CliResult<()> {
    if let Some((name, v)) = losses.iter().find(|(_, v)| !v.is_finite()) {
        return Err(CliError::Numerical(format!("{name} is not finite ({v})")));
    }
    let dataset_checksums = run
        .manifest
        .artifacts
        .iter()
        .filter(|(name, _)| name.as_str() == DATASET)
        .map(|(n, s)| (n.clone(), s.clone()))
        .collect();
    let coverage = coverage_sweep(errors);
    let report =
        RunReport { config: cfg.clone(), config_hash: cfg.hash(), dataset_checksums, losses, decomposition, coverage };
    run.write_json(REPORT, &report)?;
    run.finish()?;
    for (name, v) in &report.losses {
        println!("{name}: {v:.6e}");
    }
    for c in &report.coverage {
        println!("coverage: lambda {:.3e}, exceedance {:.3} vs bound {:.3}", c.lambda, c.fraction, c.bound);
    }
    Ok(())
}

fn train_dtn_fixed(cfg: &ExperimentConfig) -> CliResult<()> {
    let mesh = mesh_for(cfg)?;
    let a = cfg.field(&mesh)?;
    let dtn = dtn_matrix(&mesh, &a, cfg.k())?;
    let mu = cfg.mu.spec(cfg.k())?;
    let mut run = RunDir::open(cfg.output_dir(), &cfg.hash())?;
    let (params, rep) = train_dtn_fixed_a(
        &dtn,
        &mu,
        cfg.arch(),
        &cfg.hyper,
        &cfg.seeds,
        cfg.samples.n_train,
        cfg.samples.n_test,
        None,
    )?;
    run.write_json("checkpoint.json", &params)?;
    run.write("trace.csv", trace_csv(&rep.trace))?;
    run.write("loss.svg", loss_plot(&rep.trace)?)?;
    let losses = BTreeMap::from([
        ("train_loss".to_string(), rep.train_loss),
        ("heldout_loss".to_string(), rep.heldout_loss),
        ("heldout_relative".to_string(), rep.heldout_relative),
    ]);
    finish_report(run, cfg, losses, Vec::new(), &rep.heldout_errors)
}

fn quadrature(cfg: &ExperimentConfig, offset: u64) -> CliResult<WmuQuadrature> {
    let mu = cfg.mu.spec(cfg.k())?;
    let fs = sample_boundary_batch(&mu, cfg.k(), cfg.seeds.data.wrapping_add(offset), cfg.samples.wmu)?;
    Ok(WmuQuadrature::new(&fs)?)
}

fn train_direct(cfg: &ExperimentConfig) -> CliResult<()> {
    let mesh = mesh_for(cfg)?;
    let kl = kl_for(cfg, &mesh)?;
    let mut run = RunDir::open(cfg.output_dir(), &cfg.hash())?;
    let ds = dataset_for(&mut run, cfg, &mesh, &kl)?;
    let quad = quadrature(cfg, QUADRATURE_SEED)?;
    let check = quadrature(cfg, RECHECK_SEED)?;
    let (params, rep) =
        train_calderon_direct(&ds, &kl, &quad, &check, cfg.arch(), &cfg.hyper, &cfg.seeds, cfg.dataset.n_train)?;
    run.write_json("checkpoint.json", &params)?;
    run.write("trace.csv", trace_csv(&rep.trace))?;
    run.write("loss.svg", loss_plot(&rep.trace)?)?;
    let losses = BTreeMap::from([
        ("train_loss".to_string(), rep.train_loss),
        ("heldout_relative_wmu".to_string(), rep.heldout_relative),
        ("heldout_relative_wmu_recheck".to_string(), rep.heldout_relative_recheck),
    ]);
    finish_report(run, cfg, losses, Vec::new(), &rep.heldout_errors)
}

#[derive(Serialize)]
struct InverseCheckpoint<'a> {
    params: &'a dtnet::deeponet::DeepOnetParams,
    nn_scale: f64,
    out_basis: &'static str,
}

fn train_inverse_pipeline(cfg: &ExperimentConfig) -> CliResult<()> {
    let mesh = mesh_for(cfg)?;
    let kl = kl_for(cfg, &mesh)?;
    let (out_basis, out_name) = match cfg.dataset.family {
        FamilyConfig::TwoLayer { radius, .. } => (radial_output_basis(&mesh, radius, cfg.eta.kl_modes)?, "radial"),
        _ => (kl.clone(), "kl"),
    };
    let mut run = RunDir::open(cfg.output_dir(), &cfg.hash())?;
    let ds = dataset_for(&mut run, cfg, &mesh, &kl)?;
    let (model, rep) = train_inverse(&ds, &out_basis, cfg.arch(), &cfg.hyper, &cfg.seeds, cfg.dataset.n_train)?;
    run.write_json(
        "checkpoint.json",
        &InverseCheckpoint { params: &model.params, nn_scale: model.nn_scale, out_basis: out_name },
    )?;
    run.write("trace.csv", trace_csv(&rep.trace))?;
    run.write("loss.svg", loss_plot(&rep.trace)?)?;
    let mean_err = rep.heldout_mean_errors.iter().sum::<f64>() / rep.heldout_mean_errors.len().max(1) as f64;
    let losses = BTreeMap::from([
        ("train_loss".to_string(), rep.train_loss),
        ("heldout_relative_l2".to_string(), rep.heldout_relative_l2),
        ("heldout_mean_value_error".to_string(), mean_err),
        ("worst_relative_l2".to_string(), rep.worst.relative_error),
    ]);
    finish_report(run, cfg, losses, Vec::new(), &rep.heldout_errors)
}

#[derive(Serialize)]
struct LinearCheckpoint {
    d: usize,
    theta: DMatrix<f64>,
    residual: f64,
}

/// I1/I2/I3 of least-squares linear models at every requested `d`.
pub fn cmd_decompose(cfg: &ExperimentConfig) -> CliResult<()> {
    let mesh = mesh_for(cfg)?;
    let a = cfg.field(&mesh)?;
    let k = cfg.k();
    let dtn = dtn_matrix(&mesh, &a, k)?;
    let mu = cfg.mu.spec(k)?;
    let mut run = RunDir::open(cfg.output_dir(), &cfg.hash())?;
    let fit_samples = sample_boundary_batch(&mu, k, cfg.seeds.data, cfg.samples.n_train)?;
    let test = FixedASamples::new(&dtn, &mu, cfg.seeds.data.wrapping_add(RECHECK_SEED), cfg.samples.n_test)?;
    let mut csv = String::from("d,i1,i1_se,i2,i2_se,i3,i3_se,total_mse,total_se,bound_holds,tail\n");
    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();
    let mut losses = BTreeMap::new();
    let mut errors = Vec::new();
    let ds = cfg.d_values();
    for &d in &ds {
        let fit = linear_dtn_fit(&dtn, &fit_samples, d)?;
        let dec = error_decomposition(
            &dtn,
            &fit.theta,
            &mu,
            cfg.samples.decomposition,
            cfg.seeds.data.wrapping_add(QUADRATURE_SEED),
        )?;
        let _ = writeln!(
            csv,
            "{d},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e}",
            dec.i1.mean,
            dec.i1.std_error,
            dec.i2.mean,
            dec.i2.std_error,
            dec.i3.mean,
            dec.i3.std_error,
            dec.total_mse.mean,
            dec.total_mse.std_error,
            dec.bound_holds(),
            dec.tail
        );
        println!(
            "d = {d}: I1 {:.3e}, I2 {:.3e}, I3 {:.3e}, total {:.3e}, tail {:.3e}, bound {}",
            dec.i1.mean,
            dec.i2.mean,
            dec.i3.mean,
            dec.total_mse.mean,
            dec.tail,
            if dec.bound_holds() { "holds" } else { "VIOLATED" }
        );
        losses.insert(format!("total_mse_d{d}"), dec.total_mse.mean);
        if d == *ds.iter().max().unwrap_or(&d) {
            let theta = &fit.theta;
            errors = test.squared_errors(d, |x| Ok(theta * x))?.iter().map(|v| v.sqrt()).collect();
        }
        rows.push(dec.row());
        checkpoints.push(LinearCheckpoint { d, theta: fit.theta, residual: fit.residual });
    }
    run.write("decomposition.csv", csv)?;
    run.write("decomposition.svg", decomposition_plot(&rows)?)?;
    run.write_json("checkpoint.json", &checkpoints)?;
    finish_report(run, cfg, losses, rows, &errors)
}

fn decomposition_plot(rows: &[DecompositionRow]) -> CliResult<String> {
    let pts = |f: fn(&DecompositionRow) -> f64| rows.iter().map(|r| (r.d as f64, f(r))).collect();
    log_chart(
        "Error decomposition",
        "latent dimension d",
        "mean square error",
        &[
            Series::line("I1", pts(|r| r.i1)).with_markers(),
            Series::line("I2", pts(|r| r.i2)).with_markers(),
            Series::line("I3", pts(|r| r.i3)).with_markers(),
            Series::line("analytic tail", pts(|r| r.tail)).dashed(),
        ],
    )
}

pub fn cmd_train(cfg: &ExperimentConfig) -> CliResult<()> {
    match cfg.pipeline {
        Pipeline::DtnFixed => train_dtn_fixed(cfg),
        Pipeline::CalderonDirect => train_direct(cfg),
        Pipeline::CalderonInverse => train_inverse_pipeline(cfg),
        Pipeline::Decomposition => cmd_decompose(cfg),
    }
}

struct Row {
    run: String,
    report: RunReport,
}

fn load_run(dir: &Path) -> CliResult<RunReport> {
    let manifest =
        Manifest::load(dir)?.ok_or_else(|| CliError::Integrity(format!("{} has no {MANIFEST}", dir.display())))?;
    manifest.verify(dir)?;
    manifest.verify_file(dir, REPORT)?;
    let text = fs::read_to_string(dir.join(REPORT))?;
    let report: RunReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Integrity(format!("{} is not a valid report: {e}", dir.join(REPORT).display())))?;
    if report.config_hash != manifest.config_hash {
        return Err(CliError::Integrity(format!(
            "{} disagrees with its manifest on the config hash",
            dir.join(REPORT).display()
        )));
    }
    Ok(report)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Tabulates finished runs after checking every artifact against its manifest.
pub fn cmd_report(runs: &[PathBuf], out: &Path) -> CliResult<()> {
    if runs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for dir in runs {
        match load_run(dir) {
            Ok(report) => rows.push(Row { run: dir.display().to_string(), report }),
            Err(e) => problems.push(e),
        }
    }
    if let Some(first) = problems.first() {
        for p in &problems[1..] {
            eprintln!("dtnet: {p}");
        }
        return Err(match first {
            CliError::Io(m) => CliError::Integrity(m.clone()),
            e => CliError::Integrity(e.to_string().trim_start_matches("integrity check failed: ").to_string()),
        });
    }
    let keys: Vec<String> = {
        let mut k: Vec<String> = rows.iter().flat_map(|r| r.report.losses.keys().cloned()).collect();
        k.sort();
        k.dedup();
        k
    };
    let cell = |r: &Row, key: &str| r.report.losses.get(key).map(|v| format!("{v:.6e}")).unwrap_or_default();

    let mut csv = String::from("run,pipeline,config_hash,seed_data,seed_init,seed_train");
    for k in &keys {
        csv.push(',');
        csv.push_str(k);
    }
    csv.push('\n');
    let mut md = String::from("# Run summary\n\n| run | pipeline | config | seeds (data/init/train) |");
    for k in &keys {
        let _ = write!(md, " {k} |");
    }
    md.push_str("\n|---|---|---|---|");
    md.push_str(&"---|".repeat(keys.len()));
    md.push('\n');
    for r in &rows {
        let c = &r.report.config;
        let s = c.seeds;
        let _ =
            write!(csv, "{},{},{},{},{},{}", r.run, c.pipeline.name(), r.report.config_hash, s.data, s.init, s.train);
        let _ = write!(
            md,
            "| {} | {} | `{}` | {}/{}/{} |",
            r.run,
            c.pipeline.name(),
            &r.report.config_hash[..12],
            s.data,
            s.init,
            s.train
        );
        for k in &keys {
            let v = cell(r, k);
            let _ = write!(csv, ",{v}");
            let _ = write!(md, " {v} |");
        }
        csv.push('\n');
        md.push('\n');
    }

    let mut groups: BTreeMap<&str, Vec<&Row>> = BTreeMap::new();
    for r in &rows {
        groups.entry(&r.report.config_hash).or_default().push(r);
    }
    md.push_str("\n## By configuration\n\n| config | runs | metric | mean | sd |\n|---|---|---|---|---|\n");
    for (hash, members) in &groups {
        for k in &keys {
            let vals: Vec<f64> = members.iter().filter_map(|r| r.report.losses.get(k).copied()).collect();
            if vals.is_empty() {
                continue;
            }
            let (m, sd) = mean_sd(&vals);
            let _ = writeln!(md, "| `{}` | {} | {k} | {m:.6e} | {sd:.3e} |", &hash[..12], members.len());
        }
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("summary.csv"), &csv)?;
    fs::write(out.join("summary.md"), &md)?;
    print!("{md}");
    Ok(())
}
