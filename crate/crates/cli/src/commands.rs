//! One function per subcommand. Each prints a short report on stdout and, when it writes
//! files, a manifest next to them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use adareg::denoise::{Denoise, Denoiser, NlmParams};
use adareg::inversion::{
    multiscale_drive, rmse_velocity, snr_db_data, ContinuationPlan, Formulation, InversionProblem, MultiscaleResult,
};
use adareg::model::{
    decode_field, encode_field, make_inclusion_model, parse_list, read_data, read_grid, AcquisitionGeometry, FreqData,
    GridKind, GridShape, InclusionShape, ModelGrid,
};
use adareg::optim::{proximal_newton_solve, CRule, HessianModel, History, Method};
use adareg::toyproblems::{rosenbrock_config, rosenbrock_l1_argmin, RosenbrockOracle};
use adareg::wave::{add_noise, forward, NoiseLevel, WaveOptions};
use anyhow::{Context, Result};

use crate::cli::*;
use crate::config::{DenoiserSpec, InvertConfig, Physics};
use crate::exit::usage;
use crate::external::ExternalDenoiser;
use crate::manifest::{manifest_path_for, write_atomic, RunManifest};
use crate::preview::pgm;

fn load_grid(path: &Path) -> Result<ModelGrid> {
    read_grid(path).with_context(|| format!("cannot load grid {}", path.display()))
}

fn load_data(path: &Path) -> Result<FreqData> {
    read_data(path).with_context(|| format!("cannot load data {}", path.display()))
}

fn load_geometry(path: &Path) -> Result<AcquisitionGeometry> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read geometry {}", path.display()))?;
    AcquisitionGeometry::from_text(&text).with_context(|| format!("bad geometry file {}", path.display()))
}

fn save_grid(grid: &ModelGrid, path: &Path) -> Result<()> {
    write_atomic(path, &grid.to_bytes()?)
}

fn finish(mut manifest: RunManifest, started: Instant, path: &Path) -> Result<()> {
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    manifest.write(path)
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Nista => Method::Nista,
            MethodArg::Nadmm => Method::Nadmm,
        }
    }
}

impl From<HessianArg> for HessianModel {
    fn from(h: HessianArg) -> Self {
        match h {
            HessianArg::Exact => HessianModel::Exact,
            HessianArg::Lbfgs => HessianModel::Lbfgs,
            HessianArg::Identity => HessianModel::Identity,
        }
    }
}

impl From<KindArg> for GridKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Velocity => GridKind::Velocity,
            KindArg::SquaredSlowness => GridKind::SquaredSlowness,
        }
    }
}

impl WaveArgs {
    fn options(&self) -> WaveOptions {
        WaveOptions {
            pml_cells: self.pml_cells,
            free_surface: self.free_surface,
            pml_reflection: self.pml_reflection,
            f_peak: self.f_peak,
        }
    }
}

pub fn rosenbrock(args: &RosenbrockArgs) -> Result<()> {
    let started = Instant::now();
    let start = parse_list(&args.start).map_err(|e| usage(format!("bad --start: {e}")))?;
    if start.len() != 2 {
        return Err(usage("--start needs two values"));
    }
    let method = Method::from(args.method);
    let mut cfg = rosenbrock_config(args.lambda, method);
    cfg.hessian = args.hessian.into();
    if let Some(n) = args.max_outer {
        cfg.max_outer = n;
    }
    if let Some(n) = args.max_inner {
        cfg.max_inner = n;
    }
    if let Some(c) = args.c {
        cfg.c_rule = CRule::Fixed(c);
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let argmin = rosenbrock_l1_argmin(args.lambda).map_err(|e| usage(e.to_string()))?;
    let r = proximal_newton_solve(
        &mut RosenbrockOracle::new(),
        &Denoiser::SoftThreshold,
        GridShape::vector(2),
        &cfg,
        &start,
        method,
    )?;
    let dist = ((r.m[0] - argmin[0]).powi(2) + (r.m[1] - argmin[1]).powi(2)).sqrt();
    println!(
        "method = {:?}, hessian = {:?}, lambda = {}",
        args.method, args.hessian, args.lambda
    );
    println!("iterations = {} ({})", r.iterations, r.reason);
    println!("converged = ({:.10}, {:.10})", r.m[0], r.m[1]);
    println!("argmin = ({:.10}, {:.10})", argmin[0], argmin[1]);
    println!("distance = {dist:.3e}");
    if let Some(out) = &args.out {
        write_atomic(out, r.history.to_csv().as_bytes())?;
        let mut m = RunManifest::for_current_run("rosenbrock")?;
        m.set("lambda", args.lambda);
        m.set("method", format!("{:?}", args.method).to_lowercase());
        m.set("hessian", format!("{:?}", args.hessian).to_lowercase());
        m.set("start", &args.start);
        m.output(out)?;
        finish(m, started, &manifest_path_for(out))?;
    }
    Ok(())
}

pub fn model_gen(args: &ModelGenArgs) -> Result<()> {
    let started = Instant::now();
    let shape = match args.shape {
        ShapeArg::Homogeneous => None,
        ShapeArg::Square => Some(InclusionShape::Square),
        ShapeArg::Disk => Some(InclusionShape::Disk),
        ShapeArg::Ring => Some(InclusionShape::Ring),
        ShapeArg::Cross => Some(InclusionShape::Cross),
        ShapeArg::AllFour => Some(InclusionShape::AllFour),
    };
    let grid = match shape {
        None => ModelGrid::constant(args.nz, args.nx, args.dz, args.dx, GridKind::Velocity, args.vb)?,
        Some(s) => make_inclusion_model(s, args.nz, args.nx, args.dz, args.dx, args.vb, args.vi)?,
    }
    .to_kind(args.kind.into())?;
    save_grid(&grid, &args.out)?;
    println!(
        "wrote {}x{} {:?} grid to {}",
        grid.nz(),
        grid.nx(),
        grid.kind(),
        args.out.display()
    );
    let mut m = RunManifest::for_current_run("model-gen")?;
    m.set("shape", format!("{:?}", args.shape).to_lowercase());
    m.set("vb", args.vb);
    m.set("vi", args.vi);
    m.output(&args.out)?;
    finish(m, started, &manifest_path_for(&args.out))
}

pub fn geometry(args: &GeometryArgs) -> Result<()> {
    let freqs = parse_list(&args.frequencies).map_err(|e| usage(format!("bad --frequencies: {e}")))?;
    let acq = AcquisitionGeometry::surface_sources_boundary_receivers(
        args.nz,
        args.nx,
        args.dz,
        args.dx,
        args.sources,
        args.source_spacing,
        args.receiver_spacing,
        freqs,
    )?;
    write_atomic(&args.out, acq.to_text().as_bytes())?;
    println!(
        "{} sources, {} receivers, {} frequencies -> {}",
        acq.sources.len(),
        acq.receivers.len(),
        acq.frequencies.len(),
        args.out.display()
    );
    Ok(())
}

pub fn forward_cmd(args: &ForwardArgs) -> Result<()> {
    let started = Instant::now();
    let model = load_grid(&args.model)?;
    let acq = load_geometry(&args.geometry)?;
    let wave = args.wave.options();
    let clean = forward(&model.to_kind(GridKind::SquaredSlowness)?, &acq, &wave)?;
    let mut m = RunManifest::for_current_run("forward")?;
    m.input(&args.model)?;
    m.input(&args.geometry)?;
    m.set("pml_cells", wave.pml_cells);
    m.set("free_surface", wave.free_surface);
    m.set("pml_reflection", wave.pml_reflection);
    m.set("f_peak", wave.f_peak);
    let data = match args.snr_db {
        None => clean,
        Some(db) => {
            let (noisy, noise) = add_noise(&clean, NoiseLevel::Db(db), args.seed)?;
            m.seed = Some(args.seed);
            m.set("snr_db", db);
            println!(
                "noise: {:.4} dB SNR, l2 norm {:.6e}",
                snr_db_data(&clean, &noise)?,
                noise.norm()
            );
            if let Some(p) = &args.noise_out {
                write_atomic(p, &noise.to_bytes()?)?;
                m.output(p)?;
            }
            noisy
        }
    };
    write_atomic(&args.out, &data.to_bytes()?)?;
    m.output(&args.out)?;
    println!(
        "{} frequencies x {} receivers x {} sources -> {}",
        data.blocks.len(),
        acq.receivers.len(),
        acq.sources.len(),
        args.out.display()
    );
    finish(m, started, &manifest_path_for(&args.out))
}

/// Batch table and RMSE lines of an inversion report.
fn summary(result: &MultiscaleResult, truth: Option<&ModelGrid>) -> Result<String> {
    let mut s = String::new();
    for (i, b) in result.batches.iter().enumerate() {
        write!(
            s,
            "batch {i} (path {}, {:?} Hz): {} iterations, stop: {}",
            b.path, b.frequencies, b.result.iterations, b.result.reason
        )?;
        if let Some(t) = b.target {
            write!(s, ", discrepancy target {t:.6e}")?;
        }
        if let Some(truth) = truth {
            write!(s, ", rmse {:.4} %", rmse_velocity(&result.batch_model(i)?, truth)?)?;
        }
        s.push('\n');
    }
    if let Some(truth) = truth {
        writeln!(s, "final rmse = {:.6} %", rmse_velocity(&result.model, truth)?)?;
    }
    Ok(s)
}

fn history_csv(result: &MultiscaleResult) -> String {
    let mut out = format!("batch,{}\n", History::CSV_HEADER);
    for (i, b) in result.batches.iter().enumerate() {
        for line in b.result.history.to_csv().lines().skip(1) {
            let _ = writeln!(out, "{i},{line}");
        }
    }
    out
}

pub fn invert(args: &InvertArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = InvertConfig::load(&args.config, &args.set)?;
    let start = load_grid(&cfg.start)?;
    let acq = load_geometry(&cfg.geometry)?;
    let data = load_data(&cfg.data)?;
    let truth = cfg.true_model.as_deref().map(load_grid).transpose()?;

    let mut m = RunManifest::for_current_run("invert")?;
    m.config = cfg.resolved.clone();
    m.seed = Some(cfg.seed);
    m.input(&args.config)?;
    for p in [&cfg.start, &cfg.geometry, &cfg.data] {
        m.input(p)?;
    }
    if let Some(p) = &cfg.true_model {
        m.input(p)?;
    }

    let (observed, noise) = match (&cfg.noise, cfg.noise_db) {
        (Some(p), _) => {
            m.input(p)?;
            (data, Some(load_data(p)?))
        }
        (None, Some(db)) => {
            let (noisy, noise) = add_noise(&data, NoiseLevel::Db(db), cfg.seed)?;
            (noisy, Some(noise))
        }
        (None, None) => (data, None),
    };
    let formulation = match cfg.physics {
        Physics::Fwi => Formulation::Fwi,
        Physics::IrWri => Formulation::Wri(cfg.penalty),
    };
    let problem = InversionProblem {
        acq: &acq,
        observed: &observed,
        noise: noise.as_ref(),
        wave: cfg.wave,
        formulation,
    };
    let plan = cfg
        .plan
        .clone()
        .unwrap_or_else(|| ContinuationPlan::simultaneous(&acq.frequencies));
    let denoiser: Box<dyn Denoise> = match &cfg.denoiser {
        DenoiserSpec::Builtin(d) => Box::new(d.clone()),
        DenoiserSpec::External(cmd) => Box::new(ExternalDenoiser::new(cmd, start.dz(), start.dx())?),
    };
    let result =
        multiscale_drive(&problem, &plan, cfg.algorithm, &*denoiser, &cfg.opt, &start).context("inversion failed")?;

    fs::create_dir_all(&cfg.output).with_context(|| format!("cannot create {}", cfg.output.display()))?;
    for i in 0..result.batches.len() {
        let p = cfg.output.join(format!("batch_{i:02}.grd"));
        save_grid(&result.batch_model(i)?.convert(GridKind::Velocity)?, &p)?;
        m.output(&p)?;
    }
    let final_path = cfg.output.join("final.grd");
    save_grid(&result.model.convert(GridKind::Velocity)?, &final_path)?;
    m.output(&final_path)?;
    let hist = cfg.output.join("history.csv");
    write_atomic(&hist, history_csv(&result).as_bytes())?;
    m.output(&hist)?;
    if let Some(mu) = result.mu {
        m.set("mu_resolved", mu);
    }
    print!("{}", summary(&result, truth.as_ref())?);
    finish(m, started, &cfg.output.join("manifest.txt"))
}

pub fn denoise(args: &DenoiseArgs) -> Result<()> {
    let started = Instant::now();
    let bytes = fs::read(&args.input).with_context(|| format!("cannot read {}", args.input.display()))?;
    let (header, values) = decode_field(&bytes).with_context(|| format!("bad grid file {}", args.input.display()))?;
    let shape = GridShape::new(header.nz, header.nx);
    let d = match args.kind {
        DenoiserArg::Identity => Denoiser::Identity,
        DenoiserArg::L1 => Denoiser::SoftThreshold,
        DenoiserArg::L2sq => Denoiser::Quadratic {
            reference: match &args.reference {
                None => vec![0.0; values.len()],
                Some(p) => {
                    let b = fs::read(p).with_context(|| format!("cannot read {}", p.display()))?;
                    decode_field(&b)?.1
                }
            },
        },
        DenoiserArg::Tv2d => Denoiser::Tv2d {
            weight: args.weight,
            iterations: args.iterations,
        },
        DenoiserArg::Nlm => Denoiser::Nlm(NlmParams {
            patch_radius: args.patch,
            search_radius: args.search,
            h: args.h,
            sigma: args.sigma,
        }),
    };
    let out = d.denoise(&values, shape, args.scale)?;
    write_atomic(&args.output, &encode_field(&header, &out)?)?;
    let mut m = RunManifest::for_current_run("denoise")?;
    m.set("kind", d.name());
    m.set("scale", args.scale);
    m.input(&args.input)?;
    m.output(&args.output)?;
    finish(m, started, &manifest_path_for(&args.output))
}

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    if args.model.is_none() && args.data.is_none() {
        return Err(usage("metrics needs --model/--truth or --data/--noise"));
    }
    if let (Some(a), Some(b)) = (&args.model, &args.truth) {
        println!("rmse = {:.6} %", rmse_velocity(&load_grid(a)?, &load_grid(b)?)?);
    }
    if let (Some(d), Some(n)) = (&args.data, &args.noise) {
        println!("snr = {:.6} dB", snr_db_data(&load_data(d)?, &load_data(n)?)?);
    }
    Ok(())
}

pub fn preview(args: &PreviewArgs) -> Result<()> {
    let started = Instant::now();
    let grid = load_grid(&args.grid)?.to_kind(GridKind::Velocity)?;
    let v = grid.values();
    let vmin = args
        .vmin
        .unwrap_or_else(|| v.iter().copied().fold(f64::INFINITY, f64::min));
    let vmax = args
        .vmax
        .unwrap_or_else(|| v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let img = pgm(v, grid.nz(), grid.nx(), vmin, vmax)?;
    write_atomic(&args.out, &img)?;
    let mut m = RunManifest::for_current_run("preview")?;
    m.set("vmin", vmin);
    m.set("vmax", vmax);
    m.input(&args.grid)?;
    m.output(&args.out)?;
    finish(m, started, &manifest_path_for(&args.out))
}

pub fn verify(args: &VerifyArgs) -> Result<()> {
    let manifest = RunManifest::read(&args.manifest)?;
    let changed = if args.rerun {
        manifest.rerun(&std::env::current_exe()?)?
    } else {
        manifest.changed_outputs()?
    };
    for f in &manifest.outputs {
        let ok = !changed.contains(&f.path);
        println!("{} {}", if ok { "ok     " } else { "CHANGED" }, f.path.display());
    }
    if changed.is_empty() {
        Ok(())
    } else {
        Err(adareg::error::Error::Format(format!("{} output(s) differ from the manifest", changed.len())).into())
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Cmd::Rosenbrock(a) => rosenbrock(a),
        Cmd::ModelGen(a) => model_gen(a),
        Cmd::Geometry(a) => geometry(a),
        Cmd::Forward(a) => forward_cmd(a),
        Cmd::Invert(a) => invert(a),
        Cmd::Denoise(a) => denoise(a),
        Cmd::Metrics(a) => metrics(a),
        Cmd::Preview(a) => preview(a),
        Cmd::Verify(a) => verify(a),
    }
}
