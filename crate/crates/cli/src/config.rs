//! Model files and discretisation settings.

use std::fs;
use std::path::Path;

use ffdg::model::{ModelConfig, ModelSpec};
use ffdg::stencil::{make_basis, BasisSet, Stencil};

use crate::output::CliError;
use crate::StencilArgs;

pub fn load_model(path: &Path) -> Result<ModelSpec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let cfg: ModelConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
    Ok(cfg.into_model()?)
}

impl StencilArgs {
    pub fn given(&self) -> bool {
        self.k.is_some() || self.nodes.is_some()
    }

    pub fn stencil(&self) -> Result<Stencil<f64>, CliError> {
        match (&self.nodes, self.k, self.h, self.dh) {
            (Some(nodes), None, _, _) => Ok(Stencil::from_nodes(nodes.clone())?),
            (None, Some(k), Some(h), Some(dh)) => Ok(Stencil::omega(k, h, dh)?),
            _ => Err(CliError::Config("give either --nodes or all of --K, --h and --dh".into())),
        }
    }

    pub fn basis(&self) -> Result<BasisSet<f64>, CliError> {
        Ok(make_basis(self.stencil()?, self.degree)?)
    }
}

/// Parses `start:stop:step` into an inclusive grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("grid `{spec}` is not start:stop:step with step > 0"));
    let parts: Vec<f64> =
        spec.split(':').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0 && stop >= start && start >= 0.0) {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}
