//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, NodeId, ParamStore, Tape};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so that near-zero gradients
    /// are compared in absolute terms.
    pub abs_floor: f64,
    /// Parameters with more entries than this are checked on a seeded subsample
    /// of this many entries.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-3,
            max_entries: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Names of parameters with at least one entry above tolerance.
    pub offending: Vec<String>,
    pub checked_entries: usize,
    pub passed: bool,
}

fn eval_loss<E, F>(params: &ParamStore, f: &mut F) -> Result<f64, E>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<NodeId, E>,
{
    let mut tape = Tape::new();
    let loss = f(params, &mut tape)?;
    Ok(tape.value(loss).data()[0])
}

/// Runs one forward/backward pass from zeroed gradients and returns a copy of
/// every parameter gradient.
pub fn analytic_gradients<E, F>(params: &mut ParamStore, f: &mut F) -> Result<Vec<Vec<f64>>, E>
where
    E: From<AutodiffError>,
    F: FnMut(&ParamStore, &mut Tape) -> Result<NodeId, E>,
{
    params.zero_grad();
    let mut tape = Tape::new();
    let loss = f(params, &mut tape)?;
    tape.backward(loss, params)?;
    Ok(params.iter().map(|(_, p)| p.grad.clone()).collect())
}

/// Compares `analytic` (one vector per parameter) against central differences.
pub fn check_gradients<E, F>(
    params: &mut ParamStore,
    analytic: &[Vec<f64>],
    f: &mut F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, E>
where
    E: From<AutodiffError>,
    F: FnMut(&ParamStore, &mut Tape) -> Result<NodeId, E>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut max_rel_err = 0.0f64;
    let mut offending = Vec::new();
    let mut checked = 0;
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    for id in ids {
        let (len, requires_grad, name) = {
            let p = params.get(id);
            (p.len(), p.requires_grad, p.name.clone())
        };
        if !requires_grad || len == 0 {
            continue;
        }
        let entries: Vec<usize> = if len <= cfg.max_entries {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, cfg.max_entries).into_vec();
            v.sort_unstable();
            v
        };
        let mut bad = false;
        for e in entries {
            let orig = params.get(id).value[e];
            params.get_mut(id).value[e] = orig + cfg.step;
            let plus = eval_loss(params, f)?;
            params.get_mut(id).value[e] = orig - cfg.step;
            let minus = eval_loss(params, f)?;
            params.get_mut(id).value[e] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[id.0][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            max_rel_err = max_rel_err.max(rel);
            bad |= rel > cfg.tolerance;
            checked += 1;
        }
        if bad {
            offending.push(name);
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        passed: offending.is_empty(),
        offending,
        checked_entries: checked,
    })
}

/// Analytic-versus-numeric gradient comparison over every trainable parameter.
pub fn grad_check<E, F>(
    params: &mut ParamStore,
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, E>
where
    E: From<AutodiffError>,
    F: FnMut(&ParamStore, &mut Tape) -> Result<NodeId, E>,
{
    let analytic = analytic_gradients(params, &mut f)?;
    check_gradients(params, &analytic, &mut f, cfg)
}
