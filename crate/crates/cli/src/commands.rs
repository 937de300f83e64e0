use crate::Failure;
use clap::{Args, ValueEnum};
use qflow::atlas::{estimate_atlas_with, AtlasParams};
use qflow::bfor::{BforBasisSpec, Fitter};
use qflow::evalx::{shell_sq_diff, skl_divergence, DEFAULT_SKL_GRID};
use qflow::field::{group_action, CoefficientField, Grid};
use qflow::io::{
    format_table, read_scheme, read_volume, write_momentum, write_scheme, write_volume, Volume,
};
use qflow::lddmm::{register as run_registration, RegistrationParams, Status};
use qflow::phantom::{hydi_scheme, phantom_template, synthetic_ensemble, EncodingScheme, PhantomKind};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

type Outcome = Result<(), Failure>;

/// Prefix an error with the file it concerns, keeping its class.
fn at<T>(path: &Path, r: qflow::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| match Failure::from(e) {
        Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
        Failure::Numerical(m) => Failure::Numerical(format!("{}: {m}", path.display())),
    })
}

fn load(path: &Path) -> Result<Volume, Failure> {
    at(path, read_volume(path))
}

fn load_bfor(path: &Path) -> Result<CoefficientField, Failure> {
    at(path, load(path)?.into_bfor())
}

fn save(path: &Path, v: &Volume) -> Outcome {
    at(path, write_volume(path, v))
}

fn save_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct FitArgs {
    /// Volume of diffusion-weighted samples (`dwi` kind).
    #[arg(long)]
    dwi: PathBuf,
    /// Scheme file with one `qx qy qz b` row per sample.
    #[arg(long)]
    scheme: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Maximum even harmonic order.
    #[arg(long = "L", default_value_t = 4)]
    order: i64,
    /// Radial basis functions per harmonic.
    #[arg(long = "Nb", default_value_t = 6)]
    radial: usize,
    /// Radius of the q-space ball in mm⁻¹ (default: 1.25 × max q).
    #[arg(long)]
    tau: Option<f64>,
    /// Dimensionless ridge weight on the angular Laplacian.
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
}

pub fn fit(a: FitArgs) -> Outcome {
    let scheme = at(&a.scheme, read_scheme(&a.scheme))?;
    let (grid, k, data) = match load(&a.dwi)? {
        Volume::Dwi { grid, samples, data } => (grid, samples, data),
        other => return Err(Failure::Input(format!("{}: expected a dwi volume, found {}", a.dwi.display(), other.kind()))),
    };
    if k != scheme.len() {
        return Err(Failure::Input(format!(
            "{} has {k} samples per voxel but the scheme {} has {}",
            a.dwi.display(),
            a.scheme.display(),
            scheme.len()
        )));
    }
    let tau = match a.tau {
        Some(t) => t,
        None => BforBasisSpec::for_max_q(scheme.max_q())?.tau(),
    };
    let spec = BforBasisSpec::new(a.order, a.radial, tau)?;
    let fitter = Fitter::new(&spec, &scheme.q_vectors(), a.ridge)?;
    let b0: Vec<usize> = scheme.samples().iter().enumerate().filter(|(_, s)| s.b == 0.0).map(|(i, _)| i).collect();
    let p = spec.len();
    // Signals are normalised by the mean b=0 sample of each voxel.
    let fits: Vec<Option<(Vec<f64>, f64)>> = data
        .par_chunks(k)
        .map(|s| {
            let s0 = if b0.is_empty() { 1.0 } else { b0.iter().map(|&i| s[i]).sum::<f64>() / b0.len() as f64 };
            if !(s0 > 0.0 && s0.is_finite()) {
                return Ok(None);
            }
            let e: Vec<f64> = s.iter().map(|v| v / s0).collect();
            fitter.fit(&e).map(|f| Some((f.coefficients, f.residual_rms)))
        })
        .collect::<qflow::Result<_>>()?;
    let mut coeffs = Vec::with_capacity(grid.len() * p);
    let mut residuals = Vec::new();
    for f in &fits {
        match f {
            Some((c, r)) => {
                coeffs.extend_from_slice(c);
                residuals.push(*r);
            }
            None => coeffs.extend(std::iter::repeat(0.0).take(p)),
        }
    }
    let field = CoefficientField::new(grid, spec, coeffs)?;
    save(&a.out, &Volume::from(field))?;
    let skipped = fits.len() - residuals.len();
    let mean = residuals.iter().sum::<f64>() / residuals.len().max(1) as f64;
    let max = residuals.iter().cloned().fold(0.0, f64::max);
    println!(
        "fitted {} voxels ({skipped} without signal), {p} channels; residual rms mean {} max {}",
        residuals.len(),
        sci(mean),
        sci(max)
    );
    Ok(())
}

/// Optimiser flags shared by `register` and `atlas`.
#[derive(Args, Debug)]
pub struct OptimiserArgs {
    /// Weight of the matching term.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Time samples of the flow.
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Relative change of the objective below which iterations stop.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Control-point stride along each axis.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Objective evaluations per line search (3 to 20).
    #[arg(long, default_value_t = 12)]
    line_search_evals: usize,
}

impl OptimiserArgs {
    fn params(&self, sigma_v: f64, term_b: bool) -> RegistrationParams {
        RegistrationParams {
            sigma_v,
            lambda: self.lambda,
            time_samples: self.steps,
            max_iter: self.max_iter,
            tol: self.tol,
            stride: self.stride,
            term_b,
            line_search_evals: self.line_search_evals,
        }
    }
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct RegisterArgs {
    #[arg(long)]
    atlas: PathBuf,
    #[arg(long)]
    subject: PathBuf,
    /// Output deformation `φ₁` (vec3 volume of mapped positions).
    #[arg(long)]
    out_phi: PathBuf,
    #[arg(long)]
    out_momentum: Option<PathBuf>,
    /// Output atlas deformed onto the subject.
    #[arg(long)]
    out_warped: Option<PathBuf>,
    /// Write the iteration report here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Kernel width in mm.
    #[arg(long, default_value_t = 10.0)]
    sigma_v: f64,
    /// Drop the reorientation term from the gradient.
    #[arg(long)]
    no_term_b: bool,
    #[command(flatten)]
    opt: OptimiserArgs,
}

pub fn register(a: RegisterArgs) -> Outcome {
    let atlas = load_bfor(&a.atlas)?;
    let subject = load_bfor(&a.subject)?;
    let params = a.opt.params(a.sigma_v, !a.no_term_b);
    let reg = run_registration(&atlas, &subject, &params)?;
    let warped = match &a.out_warped {
        Some(_) => Some(group_action(&atlas, &reg.phi)?),
        None => None,
    };
    let rows: Vec<Vec<String>> = reg
        .report
        .iter()
        .map(|r| vec![r.iter.to_string(), sci(r.j), sci(r.metric), sci(r.energy), sci(r.step)])
        .collect();
    let table = format_table(&["iter", "J", "metric", "E", "step"], &rows);
    save(&a.out_phi, &Volume::from(reg.phi.clone()))?;
    if let Some(p) = &a.out_momentum {
        at(p, write_momentum(p, &reg.momentum))?;
    }
    if let (Some(p), Some(w)) = (&a.out_warped, warped) {
        save(p, &Volume::from(w))?;
    }
    if let Some(p) = &a.report {
        save_text(p, &table)?;
    }
    print!("{table}");
    if reg.status == Status::LineSearchFailed {
        eprintln!("warning: line search found no decrease; returning the best iterate");
    }
    Ok(())
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct AtlasArgs {
    /// Text file listing one subject volume per line (relative paths are
    /// taken from the list's directory).
    #[arg(long)]
    subjects: PathBuf,
    /// Starting atlas (default: the first subject).
    #[arg(long)]
    hyperatlas: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Write the per-iteration metrics table here as well as to stdout.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Write the atlas after every iteration into this directory.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Kernel width of the hyperatlas-to-atlas flow (mm).
    #[arg(long, default_value_t = 12.0)]
    sigma_v: f64,
    /// Kernel width of the atlas-to-subject flows (mm).
    #[arg(long, default_value_t = 10.0)]
    sigma_vpi: f64,
    #[command(flatten)]
    opt: OptimiserArgs,
}

fn subject_paths(list: &Path) -> Result<Vec<PathBuf>, Failure> {
    let text = std::fs::read_to_string(list).map_err(|e| Failure::Input(format!("{}: {e}", list.display())))?;
    let base = list.parent().unwrap_or(Path::new("."));
    let paths: Vec<PathBuf> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect();
    if paths.is_empty() {
        return Err(Failure::Input(format!("{}: no subjects listed", list.display())));
    }
    let missing: Vec<String> = paths.iter().filter(|p| !p.is_file()).map(|p| p.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(Failure::Input(format!("missing subject file(s): {}", missing.join(", "))));
    }
    Ok(paths)
}

fn metrics_table(history: &[qflow::atlas::IterationSummary]) -> String {
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|h| vec![h.iteration.to_string(), sci(h.sigma2), sci(h.metric_mean), sci(h.metric_std)])
        .collect();
    format_table(&["iteration", "sigma2", "metric_mean", "metric_std"], &rows)
}

pub fn atlas(a: AtlasArgs) -> Outcome {
    let paths = subject_paths(&a.subjects)?;
    let subjects = paths.iter().map(|p| load_bfor(p)).collect::<Result<Vec<_>, _>>()?;
    let hyperatlas = match &a.hyperatlas {
        Some(p) => load_bfor(p)?,
        None => subjects[0].clone(),
    };
    if let Some(d) = &a.checkpoint_dir {
        std::fs::create_dir_all(d).map_err(|e| Failure::Input(format!("{}: {e}", d.display())))?;
    }
    let params = AtlasParams {
        sigma_v: a.sigma_v,
        sigma_vpi: a.sigma_vpi,
        iters: a.iters,
        registration: a.opt.params(a.sigma_v, true),
    };
    let mut checkpoint_error = None;
    let state = estimate_atlas_with(&subjects, &hyperatlas, &params, |s| {
        let Some(dir) = &a.checkpoint_dir else { return };
        if checkpoint_error.is_some() {
            return;
        }
        let vol = dir.join(format!("atlas_iter{:02}.qf", s.iteration));
        let r = write_volume(&vol, &Volume::from(s.atlas.clone()))
            .and_then(|_| Ok(std::fs::write(dir.join("metrics.tsv"), metrics_table(&s.history))?));
        checkpoint_error = r.err().map(|e| (vol, e));
    })?;
    if let Some((p, e)) = checkpoint_error {
        return at(&p, Err(e));
    }
    let table = metrics_table(&state.history);
    save(&a.out, &Volume::from(state.atlas))?;
    if let Some(p) = &a.metrics {
        save_text(p, &table)?;
    }
    print!("{table}");
    Ok(())
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct EvaluateArgs {
    a: PathBuf,
    b: PathBuf,
    /// Scalar volume; non-zero voxels are evaluated (default: all).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Scheme whose shells are compared (default: the built-in 132-sample scheme).
    #[arg(long)]
    scheme: Option<PathBuf>,
    /// Edge length of the propagator grid used for sKL.
    #[arg(long, default_value_t = DEFAULT_SKL_GRID)]
    skl_grid: usize,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn evaluate(a: EvaluateArgs) -> Outcome {
    let fa = load_bfor(&a.a)?;
    let fb = load_bfor(&a.b)?;
    let scheme = match &a.scheme {
        Some(p) => at(p, read_scheme(p))?,
        None => hydi_scheme(),
    };
    let mask = match &a.mask {
        Some(p) => {
            let v = load(p)?;
            if v.grid() != fa.grid() {
                return Err(Failure::Input(format!("{}: mask grid differs from the volumes", p.display())));
            }
            Some(at(p, v.into_mask())?)
        }
        None => None,
    };
    let shells = shell_sq_diff(&fa, &fb, &scheme, mask.as_deref())?;
    let skl = skl_divergence(&fa, &fb, mask.as_deref(), a.skl_grid)?;
    let mut rows: Vec<Vec<String>> = shells
        .iter()
        .map(|s| vec!["shell_sq_diff".into(), format!("{}", s.b), format!("{:.3}", s.q), sci(s.value)])
        .collect();
    rows.push(vec!["skl".into(), "-".into(), "-".into(), sci(skl)]);
    let table = format_table(&["metric", "b", "q", "value"], &rows);
    if let Some(p) = &a.out {
        save_text(p, &table)?;
    }
    print!("{table}");
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    Single,
    Crossing,
    /// Warped copies of the crossing phantom with ground-truth warps.
    Ensemble,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct PhantomArgs {
    #[arg(long, value_enum, default_value = "crossing")]
    kind: Kind,
    #[arg(long)]
    out_dir: PathBuf,
    /// Ensemble size.
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum ensemble displacement in voxels.
    #[arg(long, default_value_t = 2.0)]
    warp: f64,
    /// Standard deviation of additive coefficient noise in the ensemble.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Voxels along each axis.
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Voxel spacing in mm.
    #[arg(long, default_value_t = 2.0)]
    spacing: f64,
    /// Ridge weight of the compartment fits.
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
}

fn dwi_volume(field: &CoefficientField, scheme: &EncodingScheme) -> qflow::Result<Volume> {
    let qs = scheme.q_vectors();
    let spec = field.spec();
    let data = (0..field.grid().len())
        .into_par_iter()
        .map(|v| qs.iter().map(|q| spec.reconstruct(field.voxel(v), *q)).collect::<qflow::Result<Vec<f64>>>())
        .collect::<qflow::Result<Vec<_>>>()?
        .concat();
    Ok(Volume::Dwi { grid: *field.grid(), samples: qs.len(), data })
}

pub fn phantom(a: PhantomArgs) -> Outcome {
    let grid = Grid::cube(a.size, a.spacing)?;
    let scheme = hydi_scheme();
    let spec = scheme.default_spec()?;
    let geometry = match a.kind {
        Kind::Single => PhantomKind::Single,
        Kind::Crossing | Kind::Ensemble => PhantomKind::Crossing,
    };
    let ph = phantom_template(geometry, grid, &scheme, &spec, a.ridge)?;
    let mask = Volume::Scalar { grid, data: ph.fiber_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect() };
    let mut outputs: Vec<(String, Volume)> = vec![("mask.qf".into(), mask)];
    let mut listing = String::new();
    match a.kind {
        Kind::Single | Kind::Crossing => outputs.push(("dwi.qf".into(), dwi_volume(&ph.field, &scheme)?)),
        Kind::Ensemble => {
            for (i, (s, phi)) in synthetic_ensemble(&ph.field, a.n, a.warp, a.seed, a.noise)?.into_iter().enumerate() {
                let name = format!("subject_{i:02}.qf");
                listing.push_str(&format!("{name}\n"));
                outputs.push((name, Volume::from(s)));
                outputs.push((format!("phi_{i:02}.qf"), Volume::from(phi)));
            }
        }
    }
    outputs.push(("template.qf".into(), Volume::from(ph.field)));
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    let scheme_path = dir.join("scheme.txt");
    at(&scheme_path, write_scheme(&scheme_path, &scheme))?;
    for (name, v) in &outputs {
        save(&dir.join(name), v)?;
    }
    if !listing.is_empty() {
        save_text(&dir.join("subjects.txt"), &listing)?;
    }
    println!("wrote {} volumes to {}", outputs.len(), dir.display());
    Ok(())
}
