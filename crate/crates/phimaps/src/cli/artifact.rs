//! Binary map artifacts.
//!
//! Layout: the 8-byte magic `PHIMAP01`, a little-endian `u64` header length,
//! a JSON header, then every nodal value followed by every coordinate
//! derivative, each as a little-endian `f64`. Storing the derivatives makes a
//! reloaded map reproduce the original run exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{DomainSpec, TargetSpec};
use super::CliError;
use crate::energy::MapField;

pub const MAGIC: &[u8; 8] = b"PHIMAP01";

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct ArtifactHeader {
    pub version: String,
    pub config_hash: String,
    pub domain: DomainSpec,
    pub target: TargetSpec,
    pub nodes: usize,
    pub dim: usize,
    pub components: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifact {
    pub header: ArtifactHeader,
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
}

impl RunArtifact {
    pub fn new(map: &MapField, domain: DomainSpec, target: TargetSpec, config_hash: &str) -> Self {
        RunArtifact {
            header: ArtifactHeader {
                version: env!("CARGO_PKG_VERSION").into(),
                config_hash: config_hash.into(),
                domain,
                target,
                nodes: map.len(),
                dim: map.domain_dim(),
                components: map.ambient_dim(),
            },
            values: map.values().to_vec(),
            derivatives: map.derivatives().to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let header = serde_json::to_vec(&self.header).map_err(|e| CliError::Io(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * (self.values.len() + self.derivatives.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.values.iter().chain(&self.derivatives) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let bad = |why: &str| CliError::Io(format!("malformed artifact: {why}"));
        let mut cursor = bytes;
        let mut magic = [0u8; 8];
        cursor.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("wrong magic"));
        }
        let mut len = [0u8; 8];
        cursor.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
        let len = u64::from_le_bytes(len) as usize;
        if cursor.len() < len {
            return Err(bad("truncated header"));
        }
        let header: ArtifactHeader = serde_json::from_slice(&cursor[..len]).map_err(|e| bad(&e.to_string()))?;
        let body = &cursor[len..];
        let n_values = header.nodes * header.components;
        if body.len() != 8 * n_values * (1 + header.dim) {
            return Err(bad("value count does not match header"));
        }
        let mut floats: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let derivatives = floats.split_off(n_values);
        Ok(RunArtifact {
            header,
            values: floats,
            derivatives,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut file = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        file.write_all(&self.to_bytes()?).map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the grid and target and wraps the stored jets.
    pub fn into_map(self) -> Result<MapField, CliError> {
        let grid = self.header.domain.build()?;
        let target = self.header.target.build()?;
        Ok(MapField::from_jets(grid, target, self.values, self.derivatives)?)
    }
}
