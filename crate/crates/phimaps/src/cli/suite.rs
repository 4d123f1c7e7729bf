//! Batch of oracle checks over every module, with optional fault injection.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::CliError;
use crate::energy::{phi_energy, MapField};
use crate::flow::{gradient_flow, homotopy_shrink, StepRule};
use crate::liouville::{hessian_comparison, lambda_constant, monotonicity_check, volume_integral_condition};
use crate::manifold::{build_model_grid, sphere_target, CurvatureProfile, DomainGrid, GridModel, PrincipalCurvatures, Target};
use crate::maps::{AmbientMap, AnalyticMap, DomainVectorField, MapSource, TrigMode};
use crate::numeric::convergence_order;
use crate::ssu::{average_variation_into_ssu_with, hypersurface_p_ssu, hypersurface_phi3_ssu, sphere_is_phi3_ssu, ssu_form_at};
use crate::variation::{
    conservation_residual_with, fd_first_variation, fd_second_variation, first_variation, first_variation_diffeo_with,
    first_variation_strong_with, second_variation_with, AmbientVariation, Mutation, VariationField,
};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteLevel {
    /// Coarse grids, well under a minute.
    Quick,
    /// The grids the acceptance criteria are stated on.
    Full,
}

impl std::str::FromStr for SuiteLevel {
    type Err = CliError;

    fn from_str(s: &str) -> std::result::Result<Self, CliError> {
        match s {
            "quick" => Ok(SuiteLevel::Quick),
            "full" => Ok(SuiteLevel::Full),
            other => Err(CliError::Config(format!("field `suite.level`: expected quick or full, got `{other}`"))),
        }
    }
}

pub fn parse_mutation(s: &str) -> std::result::Result<Mutation, CliError> {
    match s {
        "none" => Ok(Mutation::None),
        "flip_stress_coupling" => Ok(Mutation::FlipStressCoupling),
        "flip_tension" => Ok(Mutation::FlipTension),
        _ => s
            .strip_prefix("drop_term_")
            .and_then(|k| k.parse::<u8>().ok())
            .filter(|k| (1..=5).contains(k))
            .map(Mutation::DropSecondVariationTerm)
            .ok_or_else(|| CliError::Config(format!("field `suite.mutation`: unknown mutation `{s}`"))),
    }
}

pub fn mutation_name(m: Mutation) -> String {
    match m {
        Mutation::None => "none".into(),
        Mutation::FlipStressCoupling => "flip_stress_coupling".into(),
        Mutation::FlipTension => "flip_tension".into(),
        Mutation::DropSecondVariationTerm(k) => format!("drop_term_{k}"),
    }
}

/// How a check's value is compared with its tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
    Below,
    Above,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    /// Measured refinement order for convergence checks.
    pub order: Option<f64>,
    pub pass: bool,
    pub detail: String,
}

impl SuiteCheck {
    fn new(name: &str, value: f64, tolerance: f64, comparison: Comparison) -> Self {
        let pass = match comparison {
            Comparison::AtMost => value <= tolerance,
            Comparison::AtLeast => value >= tolerance,
            Comparison::Below => value < tolerance,
            Comparison::Above => value > tolerance,
        };
        SuiteCheck {
            name: name.into(),
            value,
            tolerance,
            comparison,
            order: None,
            pass,
            detail: String::new(),
        }
    }

    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self::new(name, value, tolerance, Comparison::AtMost)
    }

    fn order(name: &str, order: f64, min_order: f64) -> Self {
        let mut c = Self::new(name, order, min_order, Comparison::AtLeast);
        c.order = Some(order);
        c
    }

    fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    /// Also requires `ok`; a false `ok` fails the check.
    fn and(mut self, ok: bool, why: &str) -> Self {
        if !ok {
            self.pass = false;
            if !self.detail.is_empty() {
                self.detail.push_str("; ");
            }
            self.detail.push_str(why);
        }
        self
    }

    fn failed(name: &str, err: &crate::Error) -> Self {
        SuiteCheck {
            name: name.into(),
            value: f64::NAN,
            tolerance: f64::NAN,
            comparison: Comparison::AtMost,
            order: None,
            pass: false,
            detail: format!("error: {err}"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub level: SuiteLevel,
    pub mutation: String,
    pub checks: Vec<SuiteCheck>,
    /// Wall time, kept out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&SuiteCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SuiteCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

type CheckFn = fn(SuiteLevel, Mutation) -> Result<SuiteCheck>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("energy_closed_forms", energy_closed_forms),
    ("first_variation_fd", first_variation_fd),
    ("first_variation_dual", first_variation_dual),
    ("strong_form_order", strong_form_order),
    ("conservation_order", conservation_order),
    ("second_variation_symmetry", second_variation_symmetry),
    ("second_variation_fd", second_variation_fd),
    ("average_variation_s2", average_variation_s2),
    ("average_variation_into_s7", average_variation_into_s7),
    ("ssu_sphere_family", ssu_sphere_family),
    ("ssu_implication", ssu_implication),
    ("lambda_limits", lambda_limits),
    ("lambda_bounds", lambda_bounds),
    ("monotonicity", monotonicity),
    ("monotonicity_sharpness", monotonicity_sharpness),
    ("volume_condition", volume_condition),
    ("gradient_descent", gradient_descent),
    ("shrink_ratios", shrink_ratios),
];

/// Names of every check, in run order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

pub fn verify_suite(level: SuiteLevel, mutation: Mutation) -> SuiteReport {
    verify_checks(level, mutation, |_| true)
}

/// Runs the checks whose names pass `select`.
pub fn verify_checks(level: SuiteLevel, mutation: Mutation, select: impl Fn(&str) -> bool) -> SuiteReport {
    let start = Instant::now();
    let checks = CHECKS
        .iter()
        .filter(|(name, _)| select(name))
        .map(|(name, f)| f(level, mutation).unwrap_or_else(|e| SuiteCheck::failed(name, &e)))
        .collect();
    SuiteReport {
        level,
        mutation: mutation_name(mutation),
        checks,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    }
}

fn sci(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" ")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn torus(nodes: usize) -> Result<Arc<DomainGrid>> {
    Ok(Arc::new(build_model_grid(GridModel::FlatTorus { dim: 2, nodes })?))
}

fn sphere(dim: usize, nodes: usize) -> Result<Arc<DomainGrid>> {
    Ok(Arc::new(build_model_grid(GridModel::RoundSphere { dim, radius: 1.0, nodes })?))
}

fn mode(component: usize, wave: &[f64], phase: f64, amplitude: f64) -> TrigMode {
    TrigMode {
        component,
        wave: wave.to_vec(),
        phase,
        amplitude,
    }
}

/// A smooth periodic map of the flat 2-torus into the unit 2-sphere.
pub fn wavy_sphere_map(grid: &Arc<DomainGrid>) -> Result<MapField> {
    MapField::from_analytic(
        Arc::clone(grid),
        sphere_target(2, 1.0)?,
        AnalyticMap {
            source: MapSource::Wave {
                base: vec![0.2, 0.1, 1.0],
                modes: vec![
                    mode(0, &[1.0, 0.0], 0.1, 0.8),
                    mode(1, &[0.0, 1.0], 0.7, 0.6),
                    mode(0, &[1.0, 1.0], 1.3, 0.3),
                ],
            },
            stages: vec![],
        },
    )
}

/// An integer linear map of the 2-torus to itself, bent by periodic modes.
pub fn perturbed_torus_map(grid: &Arc<DomainGrid>, matrix: [f64; 4], seed: u64) -> Result<MapField> {
    MapField::from_analytic(
        Arc::clone(grid),
        Target::torus(2),
        AnalyticMap::identity()
            .then(AmbientMap::linear(DMatrix::from_row_slice(2, 2, &matrix)))
            .then(AmbientMap::Perturb {
                amplitude: 0.1,
                modes: TrigMode::random_set(2, 2, 3, 2, seed),
            })
            .then(AmbientMap::AnglesToCircles),
    )
}

/// The identity of the round sphere pushed off itself and projected back.
pub fn perturbed_sphere_identity(grid: &Arc<DomainGrid>, amplitude: f64, seed: u64) -> Result<MapField> {
    let q = grid.embedding_dim();
    MapField::from_analytic(
        Arc::clone(grid),
        sphere_target(grid.dim(), 1.0)?,
        AnalyticMap::identity().then(AmbientMap::Perturb {
            amplitude,
            modes: TrigMode::random_set(q, q, 2, 2, seed),
        }),
    )
}

/// The totally geodesic 2-sphere inside the unit sphere `S^n`.
pub fn great_sphere(grid: &Arc<DomainGrid>, n: usize) -> Result<MapField> {
    let incl = DMatrix::from_fn(n + 1, 3, |i, j| if i == j { 1.0 } else { 0.0 });
    MapField::from_analytic(Arc::clone(grid), sphere_target(n, 1.0)?, AnalyticMap::identity().then(AmbientMap::linear(incl)))
}

/// The test maps shared by the first-variation checks, with a domain vector
/// field suited to each domain.
pub fn variation_test_set(level: SuiteLevel) -> Result<Vec<(String, MapField, DomainVectorField)>> {
    // the dual forms agree to rounding on tori but only up to a fast-decaying
    // discretization gap on the two-chart sphere, which is below 1e-6 at 64²
    let (nt, ns) = match level {
        SuiteLevel::Quick => (32, 64),
        SuiteLevel::Full => (64, 64),
    };
    let t = torus(nt)?;
    let s = sphere(2, ns)?;
    // enough modes that no test map's first variation vanishes by orthogonality
    let torus_field = DomainVectorField::Trig(vec![
        mode(0, &[1.0, 1.0], 0.2, 1.0),
        mode(1, &[2.0, 0.0], 1.0, 0.7),
        mode(0, &[1.0, 0.0], 0.4, 0.5),
        mode(1, &[0.0, 1.0], 0.9, 0.5),
        mode(0, &[1.0, -1.0], 1.7, 0.4),
        mode(1, &[2.0, 1.0], 0.3, 0.3),
    ]);
    let sphere_field = DomainVectorField::Ambient {
        matrix: DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.3, -1.0, 0.0, 0.0, 0.2, 0.5, 0.0]),
        offset: DVector::from_vec(vec![0.3, -0.2, 0.9]),
    };
    Ok(vec![
        ("torus_identity".into(), perturbed_torus_map(&t, [1.0, 0.0, 0.0, 1.0], 11)?, torus_field.clone()),
        ("torus_shear".into(), perturbed_torus_map(&t, [1.0, 1.0, 0.0, 1.0], 12)?, torus_field.clone()),
        ("torus_twist".into(), perturbed_torus_map(&t, [2.0, 1.0, -1.0, 1.0], 13)?, torus_field.clone()),
        ("torus_to_sphere".into(), wavy_sphere_map(&t)?, torus_field),
        ("sphere_a".into(), perturbed_sphere_identity(&s, 0.15, 21)?, sphere_field.clone()),
        ("sphere_b".into(), perturbed_sphere_identity(&s, 0.3, 22)?, sphere_field),
    ])
}

fn ambient_trig(u: &MapField, seed: u64) -> AmbientVariation {
    AmbientVariation::Trig(TrigMode::random_set(u.grid().embedding_dim(), u.ambient_dim(), 3, 2, seed))
}

fn energy_closed_forms(level: SuiteLevel, _: Mutation) -> Result<SuiteCheck> {
    let n = if level == SuiteLevel::Quick { 32 } else { 48 };
    let s = sphere(2, n)?;
    let id = MapField::identity(Arc::clone(&s), sphere_target(2, 1.0)?)?;
    let e = phi_energy(&id, 3, None)?;
    let expect = 2.0 / 6.0 * 4.0 * PI;
    let c = MapField::constant(s, sphere_target(2, 1.0)?, vec![0.0, 0.0, 1.0])?;
    let ec = phi_energy(&c, 3, None)?;
    Ok(SuiteCheck::at_most("energy_closed_forms", rel(e, expect), 1e-3)
        .detail(format!("identity energy {e} against {expect}; constant map {ec}"))
        .and(ec == 0.0, "constant map has nonzero energy"))
}

fn first_variation_fd(level: SuiteLevel, _: Mutation) -> Result<SuiteCheck> {
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (i, (name, u, _)) in variation_test_set(level)?.into_iter().enumerate() {
        let v = VariationField::tangential(&u, &ambient_trig(&u, 100 + i as u64))?;
        let exact = first_variation(&u, &v)?;
        let fd = fd_first_variation(&u, &v)?;
        let r = rel(exact, fd.value);
        worst = worst.max(r);
        detail.push(format!("{name}: {r:.2e}"));
    }
    Ok(SuiteCheck::at_most("first_variation_fd", worst, 1e-3).detail(detail.join(", ")))
}

fn first_variation_dual(level: SuiteLevel, mutation: Mutation) -> Result<SuiteCheck> {
    let mut worst: f64 = 0.0;
    let mut smallest = f64::INFINITY;
    let mut detail = Vec::new();
    for (name, u, x) in variation_test_set(level)? {
        let v = VariationField::from_domain_field(&u, &x)?;
        let weak = first_variation(&u, &v)?;
        let diffeo = first_variation_diffeo_with(&u, &x, mutation)?;
        let r = rel(diffeo, weak);
        worst = worst.max(r);
        smallest = smallest.min(weak.abs());
        detail.push(format!("{name}: {r:.2e}"));
    }
    Ok(SuiteCheck::at_most("first_variation_dual", worst, 1e-6)
        .detail(detail.join(", "))
        .and(smallest > 1e-6, "a test map has a vanishing first variation"))
}

fn refinement_levels(level: SuiteLevel, quick: [usize; 3], full: [usize; 3]) -> [usize; 3] {
    if level == SuiteLevel::Quick {
        quick
    } else {
        full
    }
}

fn strong_form_order(level: SuiteLevel, mutation: Mutation) -> Result<SuiteCheck> {
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in refinement_levels(level, [16, 32, 64], [32, 64, 128]) {
        let g = torus(n)?;
        hs.push(g.steps()[0]);
        let u = wavy_sphere_map(&g)?;
        let v = VariationField::tangential_axis(&u, 1)?;
        let weak = first_variation(&u, &v)?;
        errs.push((first_variation_strong_with(&u, &v, mutation)? - weak).abs());
    }
    Ok(SuiteCheck::order("strong_form_order", convergence_order(&hs, &errs), 1.9).detail(format!("differences {}", sci(&errs))))
}

fn conservation_order(level: SuiteLevel, mutation: Mutation) -> Result<SuiteCheck> {
    let x = DomainVectorField::Trig(vec![mode(0, &[1.0, 1.0], 0.2, 1.0), mode(1, &[0.0, 1.0], 0.5, 0.8)]);
    let mut hs = Vec::new();
    let mut sup = Vec::new();
    for n in refinement_levels(level, [48, 96, 192], [64, 128, 256]) {
        let g = torus(n)?;
        hs.push(g.steps()[0]);
        let u = wavy_sphere_map(&g)?;
        let r = conservation_residual_with(&u, &x, mutation)?;
        sup.push(r.iter().fold(0.0_f64, |a, b| a.max(b.abs())));
    }
    Ok(SuiteCheck::order("conservation_order", convergence_order(&hs, &sup), 1.9).detail(format!("sup residuals {}", sci(&sup))))
}

fn second_variation_symmetry(_: SuiteLevel, mutation: Mutation) -> Result<SuiteCheck> {
    let mut worst: f64 = 0.0;
    let s = sphere(2, 24)?;
    let maps = [
        MapField::identity(Arc::clone(&s), sphere_target(2, 1.0)?)?,
        perturbed_sphere_identity(&s, 0.15, 21)?,
        wavy_sphere_map(&torus(24)?)?,
    ];
    for (i, u) in maps.iter().enumerate() {
        let v = VariationField::tangential(u, &ambient_trig(u, 200 + i as u64))?;
        let w = VariationField::tangential(u, &ambient_trig(u, 300 + i as u64))?;
        let vw = second_variation_with(u, &v, &w, mutation)?;
        let wv = second_variation_with(u, &w, &v, mutation)?;
        worst = worst.max(rel(vw, wv));
    }
    Ok(SuiteCheck::at_most("second_variation_symmetry", worst, 1e-8))
}

fn second_variation_fd(level: SuiteLevel, mutation: Mutation) -> Result<SuiteCheck> {
    let mut cases = vec![];
    let s2 = sphere(2, 32)?;
    let u = MapField::identity(Arc::clone(&s2), sphere_target(2, 1.0)?)?;
    let w = VariationField::tangential(&u, &AmbientVariation::Trig(vec![mode(0, &[1.0, 2.0, 0.0], 0.1, 1.0)]))?;
    cases.push(("s2_identity".to_string(), u, w));
    if level == SuiteLevel::Full {
        let s7 = sphere(7, 10)?;
        let u = MapField::identity(s7, sphere_target(7, 1.0)?)?;
        let w = VariationField::tangential_axis(&u, 0)?;
        cases.push(("s7_identity".to_string(), u, w));
    }
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (name, u, w) in cases {
        let i = second_variation_with(&u, &w, &w, mutation)?;
        let fd = fd_second_variation(&u, &w)?;
        let r = rel(i, fd.value);
        worst = worst.max(r);
        detail.push(format!("{name}: I = {i}, fd = {}", fd.value));
    }
    Ok(SuiteCheck::at_most("second_variation_fd", worst, 1e-2).detail(detail.join(", ")))
}

fn axis_sum(u: &MapField, mutation: Mutation) -> Result<f64> {
    (0..u.ambient_dim())
        .map(|l| {
            let v = VariationField::tangential_axis(u, l)?;
            second_variation_with(u, &v, &v, mutation)
        })
        .sum()
}

/// The identity of S² is not SSU: the axis sum is `tr(U³)(6 − m)·Vol = 32π`.
fn average_variation_s2(_: SuiteLevel, mutation: Mutation) -> Result<SuiteCheck> {
    let u = MapField::identity(sphere(2, 32)?, sphere_target(2, 1.0)?)?;
    let total = axis_sum(&u, mutation)?;
    let expect = 32.0 * PI;
    Ok(SuiteCheck::at_most("average_variation_s2", rel(total, expect), 2e-2).detail(format!("axis sum {total}, expected {expect}")))
}

/// Maps into S⁷: the great S² (sum `−8π`), and at full level the identity of
/// S⁷ (sum `−7·Vol(S⁷)`). Both must also respect the certificate bound.
fn average_variation_into_s7(level: SuiteLevel, mutation: Mutation) -> Result<SuiteCheck> {
    let mut cases = vec![("great_s2", great_sphere(&sphere(2, 24)?, 7)?, -8.0 * PI)];
    if level == SuiteLevel::Full {
        let s7 = sphere(7, 10)?;
        cases.push(("s7_identity", MapField::identity(s7, sphere_target(7, 1.0)?)?, -7.0 * PI.powi(4) / 3.0));
    }
    let mut worst: f64 = 0.0;
    let mut bounds_hold = true;
    let mut negative = true;
    let mut detail = Vec::new();
    for (name, u, expect) in cases {
        let r = average_variation_into_ssu_with(&u, mutation)?;
        worst = worst.max(rel(r.total, expect));
        bounds_hold &= r.within_bound;
        negative &= r.total < 0.0;
        detail.push(format!("{name}: total {} bound {} expected {expect}", r.total, r.bound));
    }
    Ok(SuiteCheck::at_most("average_variation_into_s7", worst, 2e-2)
        .detail(detail.join(", "))
        .and(bounds_hold, "certificate bound violated")
        .and(negative, "axis sum is not negative"))
}

fn ssu_sphere_family(_: SuiteLevel, _: Mutation) -> Result<SuiteCheck> {
    let mut worst: f64 = 0.0;
    let mut mismatches = Vec::new();
    for m in 2..=20usize {
        let target = sphere_target(m, 1.0)?;
        let mut p = vec![0.0; m + 1];
        p[0] = 0.6;
        p[m] = 0.8;
        let frame = target.tangent_frame(&p);
        let form = ssu_form_at(&target, &p, &frame)?;
        for ev in form.eigenvalues() {
            worst = worst.max((ev - (6.0 - m as f64)).abs());
        }
        if sphere_is_phi3_ssu(m) != (m > 6) {
            mismatches.push(m);
        }
    }
    Ok(SuiteCheck::at_most("ssu_sphere_family", worst, 1e-10)
        .and(mismatches.is_empty(), &format!("criterion disagrees with m > 6 at {mismatches:?}")))
}

fn ssu_implication(level: SuiteLevel, _: Mutation) -> Result<SuiteCheck> {
    let samples = if level == SuiteLevel::Quick { 1000 } else { 10_000 };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counterexamples = 0usize;
    let mut ssu = 0usize;
    for _ in 0..samples {
        let m = rng.random_range(2..=24usize);
        let spread = 10f64.powf(rng.random_range(-3.0..1.0));
        let lambda = PrincipalCurvatures::new((0..m).map(|_| 1.0 + spread * rng.random::<f64>()).collect());
        if hypersurface_phi3_ssu(&lambda)? {
            ssu += 1;
            for p in [2.0, 3.0, 4.0, 5.0, 6.0] {
                if !hypersurface_p_ssu(&lambda, p)? {
                    counterexamples += 1;
                }
            }
        }
    }
    Ok(SuiteCheck::at_most("ssu_implication", counterexamples as f64, 0.0)
        .detail(format!("{samples} samples, {ssu} satisfy the criterion"))
        .and(ssu > samples / 10, "too few samples satisfy the criterion to be informative"))
}

fn lambda_limits(_: SuiteLevel, _: Mutation) -> Result<SuiteCheck> {
    let mut worst: f64 = 0.0;
    let limits = [
        CurvatureProfile::flat(),
        CurvatureProfile::pinched_negative(0.7, 0.7)?,
        CurvatureProfile::power_decay(0.0, 0.0, 0.5)?,
        CurvatureProfile::inverse_square(0.0, 0.0)?,
    ];
    for m in 7..=12usize {
        for p in &limits {
            worst = worst.max((lambda_constant(p, m)? - (m as f64 - 6.0)).abs());
        }
    }
    Ok(SuiteCheck::at_most("lambda_limits", worst, 0.0))
}

fn lambda_bounds(level: SuiteLevel, _: Mutation) -> Result<SuiteCheck> {
    let samples = if level == SuiteLevel::Quick { 100 } else { 1000 };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = f64::NEG_INFINITY;
    let mut admissible = 0usize;
    while admissible < samples {
        let (x, y, z): (f64, f64, f64) = (rng.random(), rng.random(), rng.random_range(0.05..2.0));
        let m = rng.random_range(7..40usize);
        let profile = match rng.random_range(0..3) {
            0 => CurvatureProfile::pinched_negative(z * (1.0 + 0.3 * x), z)?,
            1 => CurvatureProfile::power_decay(0.5 * x, 1.99 * z * y, z)?,
            _ => CurvatureProfile::inverse_square(x, 0.5 * y)?,
        };
        let Ok(lambda) = lambda_constant(&profile, m) else { continue };
        admissible += 1;
        for i in 0..200 {
            let r = 0.1 * 100f64.powf(i as f64 / 199.0);
            let s = hessian_comparison(&profile, r, m)?;
            worst = worst.max(lambda - s.condition);
        }
    }
    Ok(SuiteCheck::at_most("lambda_bounds", worst, 1e-8).detail(format!("{samples} admissible profiles, 200 radii each")))
}

fn flat_linear_map() -> Result<MapField> {
    let grid = Arc::new(build_model_grid(GridModel::RotationalPole {
        dim: 7,
        profile: CurvatureProfile::flat(),
        extent: 2.0,
        nodes: 20,
        angular_nodes: Some(4),
    })?);
    let a = DMatrix::from_fn(7, 7, |i, j| if i == j { 1.0 + 0.1 * i as f64 } else { 0.05 * (i + 2 * j) as f64 });
    MapField::from_analytic(grid, Target::euclidean(7), AnalyticMap::identity().then(AmbientMap::linear(a)))
}

fn monotonicity_radii() -> Vec<f64> {
    (1..=10).map(|i| 0.18 * i as f64).collect()
}

fn monotonicity(_: SuiteLevel, _: Mutation) -> Result<SuiteCheck> {
    let r = monotonicity_check(&flat_linear_map()?, 1.0, &monotonicity_radii())?;
    Ok(SuiteCheck::at_most("monotonicity", r.worst_dip, 1e-3).and(r.pass, "monotonicity report failed"))
}

/// With ζ = 8 the condition fails and the normalized energy must dip.
fn monotonicity_sharpness(_: SuiteLevel, _: Mutation) -> Result<SuiteCheck> {
    let r = monotonicity_check(&flat_linear_map()?, 8.0, &monotonicity_radii())?;
    Ok(SuiteCheck::new("monotonicity_sharpness", r.worst_dip, 1e-3, Comparison::Above).and(!r.pass, "probe unexpectedly passed"))
}

fn volume_condition(_: SuiteLevel, _: Mutation) -> Result<SuiteCheck> {
    let grid = build_model_grid(GridModel::RotationalPole {
        dim: 7,
        profile: CurvatureProfile::flat(),
        extent: 40.0,
        nodes: 400,
        angular_nodes: Some(4),
    })?;
    let r = volume_integral_condition(&grid, 1.0, &[2.0, 4.0, 8.0, 16.0, 30.0])?;
    // flat R⁷: the integrand decays like ρ^{1 − (m − 1)/5}
    let expect = 1.0 - 6.0 / 5.0;
    Ok(SuiteCheck::at_most("volume_condition", (r.slope - expect).abs(), 5e-3)
        .detail(format!("slope {}", r.slope))
        .and(r.pass, "volume condition failed"))
}

fn gradient_descent(_: SuiteLevel, _: Mutation) -> Result<SuiteCheck> {
    let g = torus(12)?;
    let target = sphere_target(2, 1.0)?;
    let u0 = MapField::from_analytic(
        g,
        target,
        AnalyticMap {
            source: MapSource::Wave {
                base: vec![0.0, 0.0, 1.0],
                modes: vec![mode(0, &[1.0, 0.0], 0.0, 0.3), mode(1, &[0.0, 1.0], 0.5, 0.3)],
            },
            stages: vec![],
        },
    )?;
    let (_, trace) = gradient_flow(
        &u0,
        40,
        StepRule {
            initial: 1.0,
            ..StepRule::default()
        },
    )?;
    let decreasing = trace.energies.windows(2).all(|w| w[1] < w[0]);
    Ok(SuiteCheck::new("gradient_descent", trace.final_energy() / trace.initial_energy(), 1.0, Comparison::Below)
        .detail(format!("{} steps", trace.steps()))
        .and(decreasing, "energy increased along the flow"))
}

fn shrink_ratios(level: SuiteLevel, _: Mutation) -> Result<SuiteCheck> {
    let (n, iterations) = if level == SuiteLevel::Quick { (24, 6) } else { (48, 20) };
    let run = homotopy_shrink(&great_sphere(&sphere(2, n)?, 7)?, iterations)?;
    let t = &run.trace;
    let rho = t.empirical_rho();
    Ok(SuiteCheck::new("shrink_ratios", rho, 1.0, Comparison::Below)
        .detail(format!("E {} -> {}", t.initial_energy(), t.final_energy()))
        .and(t.final_energy() <= rho.powi(iterations as i32) * t.initial_energy(), "final energy above the geometric envelope")
        .and(run.map.constraint_residual() < 1e-10, "flow left the sphere"))
}
