//! Run configuration: one TOML file with flat sections.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::energy::MapField;
use crate::manifold::{
    build_model_grid, ellipsoid_target, sphere_target, CurvatureProfile, DomainGrid, EmbeddedTarget, GridModel, Target,
};
use crate::maps::{AmbientMap, AnalyticMap, MapSource, TrigMode};

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub domain: Option<DomainSpec>,
    pub target: Option<TargetSpec>,
    pub map: Option<MapSpec>,
    #[serde(default)]
    pub energy: EnergyParams,
    #[serde(default)]
    pub variation: VariationParams,
    pub ssu: Option<SsuParams>,
    pub liouville: Option<LiouvilleParams>,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default)]
    pub suite: SuiteParams,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: Option<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    FlatBox {
        dim: usize,
        nodes: usize,
        side: f64,
    },
    FlatTorus {
        dim: usize,
        nodes: usize,
    },
    RoundSphere {
        dim: usize,
        nodes: usize,
        #[serde(default = "unit")]
        radius: f64,
    },
    RotationalPole {
        dim: usize,
        nodes: usize,
        extent: f64,
        angular_nodes: Option<usize>,
        #[serde(flatten)]
        profile: ProfileSpec,
    },
}

fn unit() -> f64 {
    1.0
}

/// A curvature profile as flat keys: `profile` names the case, the rates follow.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
pub struct ProfileSpec {
    #[serde(default = "flat_name")]
    pub profile: String,
    pub max_rate: Option<f64>,
    pub min_rate: Option<f64>,
    pub negative: Option<f64>,
    pub positive: Option<f64>,
    pub decay: Option<f64>,
}

fn flat_name() -> String {
    "flat".into()
}

fn need(value: Option<f64>, field: &'static str) -> Result<f64, CliError> {
    value.ok_or_else(|| CliError::Config(format!("missing field `{field}` for this profile")))
}

impl ProfileSpec {
    pub fn build(&self) -> Result<CurvatureProfile, CliError> {
        Ok(match self.profile.as_str() {
            "flat" => CurvatureProfile::flat(),
            "pinched_negative" => CurvatureProfile::pinched_negative(need(self.max_rate, "max_rate")?, need(self.min_rate, "min_rate")?)?,
            "power_decay" => CurvatureProfile::power_decay(
                need(self.negative, "negative")?,
                need(self.positive, "positive")?,
                need(self.decay, "decay")?,
            )?,
            "inverse_square" => CurvatureProfile::inverse_square(need(self.negative, "negative")?, need(self.positive, "positive")?)?,
            other => return Err(CliError::Config(format!("field `profile`: unknown profile `{other}`"))),
        })
    }
}

impl DomainSpec {
    pub fn model(&self) -> Result<GridModel, CliError> {
        Ok(match self {
            DomainSpec::FlatBox { dim, nodes, side } => GridModel::FlatBox {
                dim: *dim,
                side: *side,
                nodes: *nodes,
            },
            DomainSpec::FlatTorus { dim, nodes } => GridModel::FlatTorus { dim: *dim, nodes: *nodes },
            DomainSpec::RoundSphere { dim, nodes, radius } => GridModel::RoundSphere {
                dim: *dim,
                radius: *radius,
                nodes: *nodes,
            },
            DomainSpec::RotationalPole {
                dim,
                nodes,
                extent,
                angular_nodes,
                profile,
            } => GridModel::RotationalPole {
                dim: *dim,
                profile: profile.build()?,
                extent: *extent,
                nodes: *nodes,
                angular_nodes: *angular_nodes,
            },
        })
    }

    pub fn build(&self) -> Result<Arc<DomainGrid>, CliError> {
        Ok(Arc::new(build_model_grid(self.model()?)?))
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Sphere {
        dim: usize,
        #[serde(default = "unit")]
        radius: f64,
    },
    Ellipsoid {
        axes: Vec<f64>,
    },
    Euclidean {
        dim: usize,
    },
    Torus {
        circles: usize,
    },
}

impl TargetSpec {
    pub fn build(&self) -> Result<Target, CliError> {
        Ok(match self {
            TargetSpec::Sphere { dim, radius } => sphere_target(*dim, *radius)?,
            TargetSpec::Ellipsoid { axes } => ellipsoid_target(axes)?,
            TargetSpec::Euclidean { dim } => Target::euclidean(*dim),
            TargetSpec::Torus { circles } => Target::torus(*circles),
        })
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    /// The domain's canonical embedding, padded with zeros up to the target's ambient dimension.
    Identity {
        #[serde(default, flatten)]
        perturbation: Perturbation,
    },
    Constant {
        point: Vec<f64>,
    },
    /// `x ↦ A x + b`, with `A` given row-major.
    Linear {
        matrix: Vec<f64>,
        offset: Option<Vec<f64>>,
        #[serde(default, flatten)]
        perturbation: Perturbation,
    },
    /// Integer matrix on angles, wrapped onto a product of circles.
    TorusLinear {
        matrix: Vec<f64>,
        #[serde(default, flatten)]
        perturbation: Perturbation,
    },
    /// `base + random trigonometric modes`, projected onto the target.
    Wave {
        base: Vec<f64>,
        #[serde(default = "three")]
        modes: usize,
        #[serde(default = "two")]
        max_freq: i32,
    },
    /// A constant map with seeded random nodal noise, projected onto the target.
    NoisyConstant {
        point: Vec<f64>,
        amplitude: f64,
    },
    Artifact {
        path: String,
    },
}

fn three() -> usize {
    3
}

fn two() -> i32 {
    2
}

/// Optional seeded ambient perturbation applied before projection.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
pub struct Perturbation {
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "three")]
    pub modes: usize,
    #[serde(default = "two")]
    pub max_freq: i32,
}

impl Perturbation {
    fn stage(&self, dim: usize, seed: u64) -> Option<AmbientMap> {
        (self.amplitude != 0.0).then(|| AmbientMap::Perturb {
            amplitude: self.amplitude,
            modes: TrigMode::random_set(dim, dim, self.modes, self.max_freq, seed),
        })
    }
}

fn matrix_from(values: &[f64], rows: usize, field: &'static str) -> Result<DMatrix<f64>, CliError> {
    if rows == 0 || values.len() % rows != 0 {
        return Err(CliError::Config(format!(
            "field `{field}`: {} entries do not fill {rows} rows",
            values.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, values.len() / rows, values))
}

impl MapSpec {
    pub fn build(&self, grid: Arc<DomainGrid>, target: Target, seed: u64) -> Result<MapField, CliError> {
        let q = target.ambient_dim();
        let k = grid.embedding_dim();
        let map = match self {
            MapSpec::Identity { perturbation } => {
                let mut map = AnalyticMap::identity();
                if q != k {
                    map = map.then(AmbientMap::linear(DMatrix::from_fn(q, k, |i, j| if i == j { 1.0 } else { 0.0 })));
                }
                if let Some(stage) = perturbation.stage(q, seed) {
                    map = map.then(stage);
                }
                map
            }
            MapSpec::Constant { point } => AnalyticMap::constant(point.clone()),
            MapSpec::Linear {
                matrix,
                offset,
                perturbation,
            } => {
                let a = matrix_from(matrix, q, "map.matrix")?;
                let b = offset.clone().unwrap_or_else(|| vec![0.0; q]);
                if b.len() != q {
                    return Err(CliError::Config(format!("field `map.offset`: expected {q} entries")));
                }
                let mut map = AnalyticMap::identity().then(AmbientMap::Affine {
                    matrix: a,
                    offset: DVector::from_vec(b),
                });
                if let Some(stage) = perturbation.stage(q, seed) {
                    map = map.then(stage);
                }
                map
            }
            MapSpec::TorusLinear { matrix, perturbation } => {
                let Target::Torus { circles } = &target else {
                    return Err(CliError::Config("field `target.kind`: torus_linear maps need a torus target".into()));
                };
                let circles = *circles;
                let a = matrix_from(matrix, circles, "map.matrix")?;
                if a.iter().any(|x| x.fract() != 0.0) {
                    return Err(CliError::Config("field `map.matrix`: entries must be integers".into()));
                }
                let mut map = AnalyticMap::identity().then(AmbientMap::linear(a));
                if let Some(stage) = perturbation.stage(circles, seed) {
                    map = map.then(stage);
                }
                map.then(AmbientMap::AnglesToCircles)
            }
            MapSpec::Wave { base, modes, max_freq } => AnalyticMap {
                source: MapSource::Wave {
                    base: base.clone(),
                    modes: TrigMode::random_set(k, base.len(), *modes, *max_freq, seed),
                },
                stages: vec![],
            },
            MapSpec::NoisyConstant { point, amplitude } => {
                if point.len() != q {
                    return Err(CliError::Config(format!("field `map.point`: expected {q} entries")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut values = Vec::with_capacity(grid.len() * q);
                for _ in 0..grid.len() {
                    let p: Vec<f64> = point.iter().map(|x| x + amplitude * rng.random_range(-1.0..1.0)).collect();
                    values.extend(target.project(&p)?);
                }
                return Ok(MapField::from_values(grid, target, values)?);
            }
            MapSpec::Artifact { path } => {
                let art = super::artifact::RunArtifact::read(Path::new(path))?;
                return art.into_map();
            }
        };
        Ok(MapField::from_analytic(grid, target, map)?)
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    pub k: u32,
    /// Energies of geodesic balls on pole grids.
    pub radii: Option<Vec<f64>>,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams { k: 3, radii: None }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct VariationParams {
    /// Number of random variation fields.
    pub fields: usize,
    pub modes: usize,
    pub max_freq: i32,
    pub fd_tolerance: f64,
    pub dual_tolerance: f64,
    pub symmetry_tolerance: f64,
}

impl Default for VariationParams {
    fn default() -> Self {
        VariationParams {
            fields: 3,
            modes: 2,
            max_freq: 2,
            fd_tolerance: 1e-3,
            dual_tolerance: 1e-6,
            symmetry_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SsuParams {
    /// `sphere`, `sphere_family`, `hypersurface`, `ellipsoid`,
    /// `minimal_submanifold`, `b1`, `average_into` or `average_from`.
    pub criterion: String,
    pub m: Option<usize>,
    pub m_min: Option<usize>,
    pub m_max: Option<usize>,
    pub curvatures: Option<Vec<f64>>,
    pub p: Option<f64>,
    pub axes: Option<Vec<f64>>,
    pub ric_min: Option<f64>,
    pub k: Option<usize>,
    pub lambda_max: Option<f64>,
    pub b1_norm_sq: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LiouvilleParams {
    pub m: usize,
    #[serde(flatten)]
    pub profile: ProfileSpec,
    #[serde(default = "r_min")]
    pub r_min: f64,
    #[serde(default = "r_max")]
    pub r_max: f64,
    #[serde(default = "samples")]
    pub samples: usize,
    /// Monotonicity radii for the configured map on a pole grid.
    pub radii: Option<Vec<f64>>,
    pub zeta: Option<f64>,
    /// Radii for the volume-growth condition on the configured pole grid.
    pub volume_radii: Option<Vec<f64>>,
}

fn r_min() -> f64 {
    0.1
}

fn r_max() -> f64 {
    10.0
}

fn samples() -> usize {
    100
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    /// `gradient` or `shrink`.
    pub mode: String,
    pub iterations: usize,
    pub max_steps: usize,
    pub initial_step: f64,
    pub residual_tolerance: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            mode: "gradient".into(),
            iterations: 20,
            max_steps: 200,
            initial_step: 1e-2,
            residual_tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteParams {
    pub level: String,
    pub mutation: String,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams {
            level: "quick".into(),
            mutation: "none".into(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let config = Self::parse(&text)?;
        Ok((config, hash_text(&text)))
    }

    /// Checks that every tolerance and step is positive.
    pub fn validate(&self) -> Result<(), CliError> {
        let positive = |v: f64, field: &str| -> Result<(), CliError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("field `{field}` must be positive, got {v}")))
            }
        };
        if self.run.name.trim().is_empty() {
            return Err(CliError::Config("field `run.name` must not be empty".into()));
        }
        positive(self.variation.fd_tolerance, "variation.fd_tolerance")?;
        positive(self.variation.dual_tolerance, "variation.dual_tolerance")?;
        positive(self.variation.symmetry_tolerance, "variation.symmetry_tolerance")?;
        positive(self.flow.initial_step, "flow.initial_step")?;
        positive(self.flow.residual_tolerance, "flow.residual_tolerance")?;
        if let Some(l) = &self.liouville {
            positive(l.r_min, "liouville.r_min")?;
            positive(l.r_max - l.r_min, "liouville.r_max - liouville.r_min")?;
            if let Some(z) = l.zeta {
                positive(z, "liouville.zeta")?;
            }
        }
        if self.run.workers == Some(0) {
            return Err(CliError::Config("field `run.workers` must be at least 1".into()));
        }
        Ok(())
    }

    pub fn require_domain(&self) -> Result<&DomainSpec, CliError> {
        self.domain.as_ref().ok_or_else(|| CliError::Config("missing section `domain`".into()))
    }

    pub fn require_target(&self) -> Result<&TargetSpec, CliError> {
        self.target.as_ref().ok_or_else(|| CliError::Config("missing section `target`".into()))
    }

    pub fn require_map(&self) -> Result<&MapSpec, CliError> {
        self.map.as_ref().ok_or_else(|| CliError::Config("missing section `map`".into()))
    }

    /// Builds the configured map from its domain, target and map sections.
    pub fn build_map(&self, seed: u64) -> Result<MapField, CliError> {
        let map = self.require_map()?;
        if let MapSpec::Artifact { .. } = map {
            return map.build(Arc::new(build_model_grid(GridModel::FlatTorus { dim: 1, nodes: 4 })?), Target::euclidean(1), seed);
        }
        let grid = self.require_domain()?.build()?;
        let target = self.require_target()?.build()?;
        map.build(grid, target, seed)
    }
}

pub fn hash_text(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
