use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Variant;
use crate::drl::{Head, Mlp};
use crate::error::Result;

/// Trained networks in a portable JSON form: each net carries its layer
/// sizes, output activation and the flat row-major parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub variant: Variant,
    pub seed: u64,
    pub episodes: usize,
    pub head: Head,
    pub policy: Mlp,
    pub additional: Option<Mlp>,
    pub additional_converged: bool,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ck: Self = serde_json::from_str(&text)?;
        for net in std::iter::once(&ck.policy).chain(ck.additional.as_ref()) {
            Mlp::from_params(net.sizes(), net.output_activation(), net.params().to_vec())?;
        }
        Ok(ck)
    }
}
