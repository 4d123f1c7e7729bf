use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::artifact::RunArtifact;
use super::config::{MapSpec, SsuParams};
use super::output::{Cell, Series};
use super::suite::{self, parse_mutation, SuiteLevel};
use super::{CliError, Outcome, RunContext};
use crate::energy::{phi_energy, MapField};
use crate::flow::{gradient_flow, homotopy_shrink, StepRule};
use crate::liouville::{hessian_comparison, lambda_constant, monotonicity_check, volume_integral_condition};
use crate::manifold::{sphere_target, GridModel, PrincipalCurvatures};
use crate::maps::{DomainVectorField, TrigMode};
use crate::ssu::{
    average_variation_from_ssu, average_variation_into_ssu, b1_norm_criterion, ellipsoid_ssu_threshold, hypersurface_p_ssu,
    minimal_submanifold_criterion, minimal_submanifold_sharp_threshold, sphere_is_phi3_ssu, ssu_form_at,
    AverageVariationReport,
};
use crate::variation::{
    conservation_residual, fd_first_variation, first_variation, first_variation_diffeo, first_variation_strong,
    second_variation, AmbientVariation, VariationField,
};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn artifact(ctx: &RunContext, map: &MapField) -> Result<Option<RunArtifact>, CliError> {
    // maps loaded from an artifact carry their own domain and target
    let (domain, target) = match ctx.config.require_map()? {
        MapSpec::Artifact { path } => {
            let h = RunArtifact::read(std::path::Path::new(path))?.header;
            (h.domain, h.target)
        }
        _ => (ctx.config.require_domain()?.clone(), ctx.config.require_target()?.clone()),
    };
    Ok(Some(RunArtifact::new(map, domain, target, &ctx.config_hash)))
}

pub fn energy(ctx: &RunContext) -> Result<Outcome, CliError> {
    let u = ctx.config.build_map(ctx.seed)?;
    let params = &ctx.config.energy;
    let energy = phi_energy(&u, params.k, None)?;
    let mut series;
    match &params.radii {
        Some(radii) => {
            series = Series::new(&["radius", "energy"]);
            for r in radii {
                series.push(vec![(*r).into(), phi_energy(&u, params.k, Some(*r))?.into()]);
            }
        }
        None => {
            series = Series::new(&["k", "energy"]);
            for k in 1..=3u32 {
                series.push(vec![(k as usize).into(), phi_energy(&u, k, None)?.into()]);
            }
        }
    }
    Ok(Outcome {
        summary: json!({
            "k": params.k,
            "energy": energy,
            "nodes": u.len(),
            "constraint_residual": u.constraint_residual(),
        }),
        series: Some(series),
        artifact: artifact(ctx, &u)?,
        pass: energy.is_finite(),
        message: format!("energy (k = {}) = {energy}", params.k),
    })
}

/// A random domain vector field that the grid can carry without boundary terms.
fn random_domain_field(u: &MapField, rng: &mut ChaCha8Rng) -> Option<DomainVectorField> {
    let grid = u.grid();
    match grid.model() {
        GridModel::FlatTorus { dim, .. } => Some(DomainVectorField::Trig(TrigMode::random_set(*dim, *dim, 6, 2, rng.random()))),
        GridModel::RoundSphere { .. } => {
            let q = grid.embedding_dim();
            Some(DomainVectorField::Ambient {
                matrix: DMatrix::from_fn(q, q, |_, _| rng.random_range(-1.0..1.0)),
                offset: nalgebra::DVector::from_fn(q, |_, _| rng.random_range(-1.0..1.0)),
            })
        }
        _ => None,
    }
}

pub fn variation_verify(ctx: &RunContext) -> Result<Outcome, CliError> {
    let u = ctx.config.build_map(ctx.seed)?;
    let p = &ctx.config.variation;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    // first variations that vanish by symmetry are compared on the energy's scale
    let scale = 1e-12 * phi_energy(&u, 3, None)?.max(1.0);
    let (k, q) = (u.grid().embedding_dim(), u.ambient_dim());
    let mut series = Series::new(&["field", "weak", "fd", "strong", "rel_fd", "diffeo_weak", "diffeo", "rel_dual"]);
    let mut fields = Vec::new();
    let (mut worst_fd, mut worst_dual) = (0.0_f64, 0.0_f64);
    let mut conservation = None;
    for i in 0..p.fields.max(1) {
        let v = VariationField::tangential(&u, &AmbientVariation::Trig(TrigMode::random_set(k, q, p.modes, p.max_freq, rng.random())))?;
        let weak = first_variation(&u, &v)?;
        let fd = fd_first_variation(&u, &v)?;
        let strong = first_variation_strong(&u, &v)?;
        let r_fd = rel(weak, fd.value);
        worst_fd = worst_fd.max(r_fd);
        let (mut dw, mut dd, mut r_dual) = (f64::NAN, f64::NAN, f64::NAN);
        if let Some(x) = random_domain_field(&u, &mut rng) {
            dw = first_variation(&u, &VariationField::from_domain_field(&u, &x)?)?;
            dd = first_variation_diffeo(&u, &x)?;
            r_dual = (dd - dw).abs() / dw.abs().max(scale);
            worst_dual = worst_dual.max(r_dual);
            if i == 0 {
                let res = conservation_residual(&u, &x)?;
                conservation = Some(res.iter().fold(0.0_f64, |a, b| a.max(b.abs())));
            }
        }
        series.push(vec![i.into(), weak.into(), fd.value.into(), strong.into(), r_fd.into(), dw.into(), dd.into(), r_dual.into()]);
        fields.push(v);
    }
    let mut symmetry = 0.0_f64;
    if fields.len() >= 2 {
        let vw = second_variation(&u, &fields[0], &fields[1])?;
        let wv = second_variation(&u, &fields[1], &fields[0])?;
        symmetry = rel(vw, wv);
    }
    let pass = worst_fd <= p.fd_tolerance && worst_dual <= p.dual_tolerance && symmetry <= p.symmetry_tolerance;
    Ok(Outcome {
        summary: json!({
            "fields": p.fields,
            "max_rel_fd": worst_fd,
            "fd_tolerance": p.fd_tolerance,
            "max_rel_dual": worst_dual,
            "dual_tolerance": p.dual_tolerance,
            "second_variation_asymmetry": symmetry,
            "symmetry_tolerance": p.symmetry_tolerance,
            "conservation_sup_residual": conservation,
        }),
        series: Some(series),
        artifact: None,
        pass,
        message: format!("first variation vs FD {worst_fd:.3e}, dual forms {worst_dual:.3e}, symmetry {symmetry:.3e}"),
    })
}

fn need<T: Clone>(value: &Option<T>, field: &str) -> Result<T, CliError> {
    value.clone().ok_or_else(|| CliError::Config(format!("missing field `ssu.{field}` for this criterion")))
}

fn ssu_report(criterion: &str, inputs: Value, threshold: f64, value: f64, pass: bool) -> Value {
    json!({"criterion": criterion, "inputs": inputs, "threshold": threshold, "value": value, "pass": pass})
}

pub fn ssu_check(ctx: &RunContext) -> Result<Outcome, CliError> {
    let p: &SsuParams = ctx.config.ssu.as_ref().ok_or_else(|| CliError::Config("missing section `ssu`".into()))?;
    let mut series = None;
    let mut artifact_out = None;
    let (summary, pass) = match p.criterion.as_str() {
        "sphere" => {
            let m = need(&p.m, "m")?;
            let target = sphere_target(m, 1.0)?;
            let mut point = vec![0.0; m + 1];
            point[m] = 1.0;
            let form = ssu_form_at(&target, &point, &target.tangent_frame(&point))?;
            let value = form.max_eigenvalue();
            let pass = form.is_ssu();
            let mut s = ssu_report("sphere", json!({"m": m}), 0.0, value, pass);
            s["eigenvalues"] = json!(form.eigenvalues());
            (s, pass)
        }
        "sphere_family" => {
            let (lo, hi) = (p.m_min.unwrap_or(2), p.m_max.unwrap_or(20));
            let mut table = Series::new(&["m", "max_eigenvalue", "ssu", "expected"]);
            let mut consistent = true;
            for m in lo..=hi {
                let target = sphere_target(m, 1.0)?;
                let mut point = vec![0.0; m + 1];
                point[m] = 1.0;
                let form = ssu_form_at(&target, &point, &target.tangent_frame(&point))?;
                let ssu = sphere_is_phi3_ssu(m);
                consistent &= ssu == form.is_ssu() && ssu == (m > 6);
                table.push(vec![m.into(), form.max_eigenvalue().into(), ssu.into(), (m > 6).into()]);
            }
            series = Some(table);
            (ssu_report("sphere_family", json!({"m_min": lo, "m_max": hi}), 6.0, hi as f64, consistent), consistent)
        }
        "hypersurface" => {
            let lambda = PrincipalCurvatures::new(need(&p.curvatures, "curvatures")?);
            let power = p.p.unwrap_or(6.0);
            let pass = hypersurface_p_ssu(&lambda, power)?;
            let v = lambda.values();
            let last = *v.last().unwrap_or(&0.0);
            let threshold = (lambda.sum() - last) / (power - 1.0);
            (ssu_report("hypersurface", json!({"curvatures": v, "p": power}), threshold, last, pass), pass)
        }
        "ellipsoid" => {
            let axes = need(&p.axes, "axes")?;
            let (ric, k) = (need(&p.ric_min, "ric_min")?, need(&p.k, "k")?);
            let threshold = ellipsoid_ssu_threshold(&axes, k)?;
            let pass = ric > threshold;
            (ssu_report("ellipsoid", json!({"axes": axes, "ric_min": ric, "k": k}), threshold, ric, pass), pass)
        }
        "minimal_submanifold" => {
            let (ric, k) = (need(&p.ric_min, "ric_min")?, need(&p.k, "k")?);
            let lmax = need(&p.lambda_max, "lambda_max")?;
            let pass = minimal_submanifold_criterion(ric, k, lmax)?;
            let threshold = 5.0 / 6.0 * k as f64 * lmax * lmax;
            let mut s = ssu_report("minimal_submanifold", json!({"ric_min": ric, "k": k, "lambda_max": lmax}), threshold, ric, pass);
            if let Some(c) = &p.curvatures {
                s["sharp_threshold"] = json!(minimal_submanifold_sharp_threshold(&PrincipalCurvatures::new(c.clone()), k)?);
            }
            (s, pass)
        }
        "b1" => {
            let (b1, k) = (need(&p.b1_norm_sq, "b1_norm_sq")?, need(&p.k, "k")?);
            let pass = b1_norm_criterion(b1, k)?;
            let kf = k as f64;
            let threshold = (kf - 6.0) / (kf.sqrt() + 6.0);
            (ssu_report("b1", json!({"b1_norm_sq": b1, "k": k}), threshold, b1, pass), pass)
        }
        which @ ("average_into" | "average_from") => {
            let u = ctx.config.build_map(ctx.seed)?;
            let r: AverageVariationReport = if which == "average_into" {
                average_variation_into_ssu(&u)?
            } else {
                average_variation_from_ssu(&u)?
            };
            let pass = r.within_bound && r.total < 0.0;
            let mut table = Series::new(&["axis", "second_variation"]);
            for (l, v) in r.per_axis.iter().enumerate() {
                table.push(vec![l.into(), (*v).into()]);
            }
            series = Some(table);
            artifact_out = artifact(ctx, &u)?;
            let mut s = ssu_report(which, json!({"nodes": u.len()}), r.bound, r.total, pass);
            s["destabilizer_index"] = json!(r.destabilizer_index);
            s["residual"] = json!(r.residual);
            (s, pass)
        }
        other => return Err(CliError::Config(format!("field `ssu.criterion`: unknown criterion `{other}`"))),
    };
    let message = format!("{}: value {} against threshold {}", summary["criterion"], summary["value"], summary["threshold"]);
    Ok(Outcome {
        summary,
        series,
        artifact: artifact_out,
        pass,
        message,
    })
}

pub fn liouville(ctx: &RunContext) -> Result<Outcome, CliError> {
    let p = ctx.config.liouville.as_ref().ok_or_else(|| CliError::Config("missing section `liouville`".into()))?;
    let profile = p.profile.build()?;
    let mut series = Series::new(&["r", "lambda_min", "lambda_max", "condition"]);
    let mut min_condition = f64::INFINITY;
    let n = p.samples.max(2);
    for i in 0..n {
        let r = p.r_min * (p.r_max / p.r_min).powf(i as f64 / (n - 1) as f64);
        let s = hessian_comparison(&profile, r, p.m)?;
        min_condition = min_condition.min(s.condition);
        series.push(vec![r.into(), s.lambda_min.into(), s.lambda_max.into(), s.condition.into()]);
    }
    let (lambda, unmet) = match lambda_constant(&profile, p.m) {
        Ok(l) => (Some(l), None),
        Err(crate::Error::HypothesesUnmet(why)) => (None, Some(why)),
        Err(e) => return Err(e.into()),
    };
    let mut pass = lambda.is_some_and(|l| l <= min_condition + 1e-8);
    let mut summary = json!({
        "m": p.m,
        "profile": p.profile.profile,
        "lambda": lambda,
        "hypotheses_unmet": unmet,
        "min_condition": min_condition,
    });
    let mut artifact_out = None;
    if let (Some(radii), Some(zeta)) = (&p.radii, p.zeta) {
        let u = ctx.config.build_map(ctx.seed)?;
        let r = monotonicity_check(&u, zeta, radii)?;
        pass &= r.pass;
        summary["monotonicity"] = json!({
            "zeta": r.zeta,
            "radii": r.radii,
            "energies": r.energies,
            "normalized": r.normalized,
            "worst_dip": r.worst_dip,
            "condition_violated_at": r.condition_violated_at,
            "radial_term_min": r.radial_term_min,
            "residual": r.residual,
            "pass": r.pass,
        });
        artifact_out = artifact(ctx, &u)?;
    }
    if let Some(radii) = &p.volume_radii {
        let grid = ctx.config.require_domain()?.build()?;
        let r = volume_integral_condition(&grid, p.zeta.or(lambda).unwrap_or(1.0), radii)?;
        pass &= r.pass;
        summary["volume_condition"] = json!({
            "zeta": r.zeta,
            "radii": r.radii,
            "lhs": r.lhs,
            "rhs": r.rhs,
            "slope": r.slope,
            "fitted_constant": r.fitted_constant,
            "pass": r.pass,
        });
    }
    let message = match lambda {
        Some(l) => format!("Lambda = {l}, min condition {min_condition}"),
        None => format!("hypotheses unmet: {}", unmet.unwrap_or_default()),
    };
    Ok(Outcome {
        summary,
        series: Some(series),
        artifact: artifact_out,
        pass,
        message,
    })
}

pub fn flow(ctx: &RunContext) -> Result<Outcome, CliError> {
    let u = ctx.config.build_map(ctx.seed)?;
    let p = &ctx.config.flow;
    let (trace, map, predicted, pass) = match p.mode.as_str() {
        "gradient" => {
            let rule = StepRule {
                initial: p.initial_step,
                residual_tol: p.residual_tolerance,
                ..StepRule::default()
            };
            let (map, trace) = gradient_flow(&u, p.max_steps, rule)?;
            let decreasing = trace.energies.windows(2).all(|w| w[1] < w[0]);
            (trace, map, None, decreasing)
        }
        "shrink" => {
            let run = homotopy_shrink(&u, p.iterations)?;
            let rho = run.trace.empirical_rho();
            let t = &run.trace;
            let ok = t.ratios.iter().all(|r| *r < 1.0) && t.final_energy() <= rho.powi(t.steps() as i32) * t.initial_energy();
            let predicted = run.schedule.map(|s| s.rho);
            (run.trace, run.map, predicted, ok)
        }
        other => return Err(CliError::Config(format!("field `flow.mode`: expected gradient or shrink, got `{other}`"))),
    };
    let mut series = Series::new(&["step", "energy", "residual", "ratio"]);
    for (i, (e, r)) in trace.energies.iter().zip(&trace.residuals).enumerate() {
        let ratio = if i == 0 { f64::NAN } else { trace.ratios[i - 1] };
        series.push(vec![i.into(), (*e).into(), (*r).into(), ratio.into()]);
    }
    let out_art = artifact(ctx, &map)?;
    Ok(Outcome {
        summary: json!({
            "mode": p.mode,
            "steps": trace.steps(),
            "initial_energy": trace.initial_energy(),
            "final_energy": trace.final_energy(),
            "empirical_rho": trace.empirical_rho(),
            "predicted_rho": predicted,
            "descent_axes": trace.descent.iter().map(|(a, s)| json!([a, s])).collect::<Vec<_>>(),
        }),
        series: Some(series),
        artifact: out_art,
        pass,
        message: format!("energy {} -> {} in {} steps", trace.initial_energy(), trace.final_energy(), trace.steps()),
    })
}

pub fn verify_suite(ctx: &RunContext, level: Option<&str>, mutation: Option<&str>) -> Result<Outcome, CliError> {
    let level: SuiteLevel = level.unwrap_or(&ctx.config.suite.level).parse()?;
    let mutation = parse_mutation(mutation.unwrap_or(&ctx.config.suite.mutation))?;
    let report = suite::verify_suite(level, mutation);
    let mut series = Series::new(&["check", "value", "tolerance", "comparison", "order", "pass"]);
    for c in &report.checks {
        let comparison = serde_json::to_value(c.comparison).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        series.push(vec![
            c.name.as_str().into(),
            c.value.into(),
            c.tolerance.into(),
            Cell::Text(comparison),
            c.order.unwrap_or(f64::NAN).into(),
            c.pass.into(),
        ]);
    }
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    let message = if failed.is_empty() {
        format!("{} checks passed in {:.1} s", report.checks.len(), report.elapsed_seconds)
    } else {
        format!("failed checks: {}", failed.join(", "))
    };
    Ok(Outcome {
        summary: serde_json::to_value(&report).map_err(|e| CliError::Io(e.to_string()))?,
        series: Some(series),
        artifact: None,
        pass: report.pass(),
        message,
    })
}
