//! Population atlas estimation by expectation–maximisation with
//! point-estimate registrations in the E-step.

use crate::error::{Error, Result};
use crate::field::{group_action_with, voxel_rotations, CoefficientField, DeformationField};
use crate::lddmm::{
    flow_forward, kinetic_energy, register_problem, weighted_register, MatchingProblem, MomentumTrajectory, Objective,
    Registration, RegistrationParams,
};
use crate::wigner::{reorient_into, WignerBuilder};

/// EM settings. `registration` supplies everything except the kernel
/// widths.
#[derive(Clone, Debug, PartialEq)]
pub struct AtlasParams {
    /// Kernel width of the hyperatlas-to-atlas flow (mm).
    pub sigma_v: f64,
    /// Kernel width of the atlas-to-subject flows (mm).
    pub sigma_vpi: f64,
    pub iters: usize,
    pub registration: RegistrationParams,
}

impl Default for AtlasParams {
    fn default() -> Self {
        AtlasParams { sigma_v: 12.0, sigma_vpi: 10.0, iters: 10, registration: RegistrationParams::default() }
    }
}

/// Result of registering the current atlas to one subject.
#[derive(Clone, Debug)]
pub struct SubjectFit {
    pub momentum: MomentumTrajectory,
    pub phi: DeformationField,
    /// `sqrt(Σ_k dt⟨α_k, Kα_k⟩)`.
    pub metric: f64,
    pub energy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationSummary {
    pub iteration: usize,
    pub sigma2: f64,
    pub metric_mean: f64,
    pub metric_std: f64,
}

#[derive(Clone, Debug)]
pub struct AtlasState {
    pub hyperatlas: CoefficientField,
    /// Momentum of the hyperatlas-to-atlas flow.
    pub m0: MomentumTrajectory,
    pub atlas: CoefficientField,
    pub sigma2: f64,
    pub iteration: usize,
    pub per_subject: Vec<SubjectFit>,
    pub history: Vec<IterationSummary>,
}

/// Mean matching energy of the atlas deformed onto each subject.
pub fn update_sigma2(subjects: &[CoefficientField], atlas: &CoefficientField, phis: &[DeformationField]) -> Result<f64> {
    if subjects.is_empty() {
        return Err(Error::Empty("subject list"));
    }
    if subjects.len() != phis.len() {
        return Err(Error::Dimension { expected: subjects.len(), got: phis.len() });
    }
    let mut total = 0.0;
    for (s, phi) in subjects.iter().zip(phis) {
        let problem = MatchingProblem::new(atlas.clone(), s.clone(), None)?;
        total += problem.evaluate(phi)?.energy;
    }
    Ok(total / subjects.len() as f64)
}

/// Jacobian-weighted mean of the subjects pulled back into atlas space,
/// `c̄(y) = Σ_i |Dφ_i(y)| M(R_{i,y})ᵀ c_i(φ_i(y)) / Σ_i |Dφ_i(y)|`, and the
/// weight volume `α(y) = Σ_i |Dφ_i(y)|`.
pub fn weighted_mean_field(
    subjects: &[CoefficientField],
    phis: &[DeformationField],
) -> Result<(CoefficientField, Vec<f64>)> {
    if subjects.is_empty() {
        return Err(Error::Empty("subject list"));
    }
    if subjects.len() != phis.len() {
        return Err(Error::Dimension { expected: subjects.len(), got: phis.len() });
    }
    let first = &subjects[0];
    let grid = *first.grid();
    let p = first.channels();
    let builder = WignerBuilder::new(first.spec().order())?;
    let mut acc = vec![0.0; grid.len() * p];
    let mut weights = vec![0.0; grid.len()];
    for (s, phi) in subjects.iter().zip(phis) {
        if s.grid() != &grid || phi.grid() != &grid || s.spec() != first.spec() {
            return Err(Error::InvalidArgument("subjects and deformations must share one grid and spec".into()));
        }
        let rotations = voxel_rotations(phi)?;
        let mut pulled = vec![0.0; p];
        for y in 0..grid.len() {
            let det = phi.jacobian(y).determinant();
            if !(det > 0.0) {
                return Err(Error::Folding(format!("jacobian determinant {det} at voxel {y}")));
            }
            let sampled = s.interpolate(phi.map()[y]);
            let r = rotations[y];
            if r == nalgebra::Matrix3::identity() {
                pulled.copy_from_slice(&sampled);
            } else {
                reorient_into(&sampled, &builder.build_unchecked(&r.transpose()), &mut pulled)?;
            }
            for (a, v) in acc[y * p..(y + 1) * p].iter_mut().zip(&pulled) {
                *a += det * v;
            }
            weights[y] += det;
        }
    }
    for (y, w) in weights.iter().enumerate() {
        for a in acc[y * p..(y + 1) * p].iter_mut() {
            *a /= w;
        }
    }
    Ok((CoefficientField::new(grid, first.spec().clone(), acc)?, weights))
}

/// Hyperatlas-to-mean registration with per-voxel weights `α/σ²`,
/// warm-started from the previous hyperatlas momentum when given.
pub fn modified_register(
    hyperatlas: &CoefficientField,
    target_mean: &CoefficientField,
    weights: &[f64],
    sigma2: f64,
    params: &RegistrationParams,
    init: Option<MomentumTrajectory>,
) -> Result<Registration> {
    weighted_register(hyperatlas, target_mean, weights, sigma2, params, init)
}

/// Register the atlas to one subject. A previous momentum is used as the
/// starting point only if it beats the zero momentum on the new atlas.
fn fit_subject(
    atlas: &CoefficientField,
    subject: &CoefficientField,
    params: &RegistrationParams,
    previous: Option<&MomentumTrajectory>,
) -> Result<SubjectFit> {
    let problem = MatchingProblem::new(atlas.clone(), subject.clone(), None)?;
    let init = match previous {
        Some(m) => {
            let objective = Objective::new(&problem, params.lambda, params.term_b);
            let zero = MomentumTrajectory::strided(*atlas.grid(), params.stride, params.sigma_v, params.time_samples)?;
            let warm = objective.evaluate(m).map(|p| p.j).unwrap_or(f64::INFINITY);
            (warm < objective.evaluate(&zero)?.j).then(|| m.clone())
        }
        None => None,
    };
    let reg = register_problem(&problem, params, init)?;
    let flow = flow_forward(&reg.momentum)?;
    let metric = kinetic_energy(&reg.momentum, &flow)?.max(0.0).sqrt();
    Ok(SubjectFit { energy: reg.final_energy(), momentum: reg.momentum, phi: reg.phi, metric })
}

/// Run the EM loop. Stops early once σ² vanishes (subjects already agree
/// with the atlas).
pub fn estimate_atlas(
    subjects: &[CoefficientField],
    hyperatlas: &CoefficientField,
    params: &AtlasParams,
) -> Result<AtlasState> {
    estimate_atlas_with(subjects, hyperatlas, params, |_| {})
}

/// [`estimate_atlas`] with a callback after every completed iteration.
pub fn estimate_atlas_with(
    subjects: &[CoefficientField],
    hyperatlas: &CoefficientField,
    params: &AtlasParams,
    mut on_iteration: impl FnMut(&AtlasState),
) -> Result<AtlasState> {
    if subjects.is_empty() {
        return Err(Error::Empty("subject list"));
    }
    if !(params.sigma_v > params.sigma_vpi) {
        return Err(Error::InvalidArgument(format!(
            "sigma_v ({}) must exceed sigma_vpi ({})",
            params.sigma_v, params.sigma_vpi
        )));
    }
    for s in subjects {
        if s.grid() != hyperatlas.grid() || s.spec() != hyperatlas.spec() {
            return Err(Error::InvalidArgument("subjects and hyperatlas must share one grid and spec".into()));
        }
    }
    let grid = *hyperatlas.grid();
    let reg = &params.registration;
    let e_params = RegistrationParams { sigma_v: params.sigma_vpi, ..reg.clone() };
    let m_params = RegistrationParams { sigma_v: params.sigma_v, ..reg.clone() };
    let builder = WignerBuilder::new(hyperatlas.spec().order())?;
    let mut state = AtlasState {
        hyperatlas: hyperatlas.clone(),
        m0: MomentumTrajectory::strided(grid, reg.stride, params.sigma_v, reg.time_samples)?,
        atlas: hyperatlas.clone(),
        sigma2: f64::INFINITY,
        iteration: 0,
        per_subject: Vec::new(),
        history: Vec::new(),
    };
    let scale = crate::field::l2_norm(hyperatlas).powi(2).max(f64::MIN_POSITIVE);
    for it in 1..=params.iters {
        let fits = subjects
            .iter()
            .enumerate()
            .map(|(i, s)| fit_subject(&state.atlas, s, &e_params, state.per_subject.get(i).map(|f| &f.momentum)))
            .collect::<Result<Vec<_>>>()?;
        let phis: Vec<DeformationField> = fits.iter().map(|f| f.phi.clone()).collect();
        let (mean, weights) = weighted_mean_field(subjects, &phis)?;
        let sigma2 = update_sigma2(subjects, &state.atlas, &phis)?;
        let metrics: Vec<f64> = fits.iter().map(|f| f.metric).collect();
        let n = metrics.len() as f64;
        let metric_mean = metrics.iter().sum::<f64>() / n;
        let metric_std = (metrics.iter().map(|m| (m - metric_mean).powi(2)).sum::<f64>() / n).sqrt();
        state.per_subject = fits;
        state.sigma2 = sigma2;
        state.iteration = it;
        state.history.push(IterationSummary { iteration: it, sigma2, metric_mean, metric_std });
        if sigma2 <= 1e-12 * scale {
            on_iteration(&state);
            break;
        }
        let init = (it > 1).then(|| state.m0.clone());
        let m = modified_register(hyperatlas, &mean, &weights, sigma2, &m_params, init)?;
        state.atlas = group_action_with(hyperatlas, &m.phi, &builder)?;
        state.m0 = m.momentum;
        on_iteration(&state);
    }
    Ok(state)
}
