use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{scaled_code_dims, AutoEncoder, DeblockNet, DEFAULT_DEBLOCK_WIDTHS};
use crate::nn::Checkpoint;

pub const MANIFEST_FORMAT: &str = "blockcodec-family-1";
pub const DEFAULT_TARGET_PSNR: f64 = 30.0;

/// Three auto-encoders in ascending code length plus an optional deblocker.
/// Indicator symbol `i` names `pairs[i]`.
#[derive(Debug, Clone)]
pub struct NetworkFamily {
    pub pairs: Vec<AutoEncoder>,
    pub deblocker: Option<DeblockNet>,
    pub width_mult: f64,
    pub target_psnr: f64,
}

impl NetworkFamily {
    /// Freshly initialized family with code lengths scaled by `width_mult`.
    pub fn new(width_mult: f64, seed: u64) -> Self {
        Self::with_code_dims(width_mult, scaled_code_dims(width_mult), seed)
    }

    pub fn with_code_dims(width_mult: f64, code_dims: [usize; 3], seed: u64) -> Self {
        let pairs = code_dims
            .iter()
            .enumerate()
            .map(|(i, &dim)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + i as u64));
                AutoEncoder::new(width_mult, dim, &mut rng)
            })
            .collect();
        NetworkFamily {
            pairs,
            deblocker: None,
            width_mult,
            target_psnr: DEFAULT_TARGET_PSNR,
        }
    }

    pub fn from_pairs(pairs: Vec<AutoEncoder>, width_mult: f64) -> Result<Self> {
        let family = NetworkFamily {
            pairs,
            deblocker: None,
            width_mult,
            target_psnr: DEFAULT_TARGET_PSNR,
        };
        family.validate()?;
        Ok(family)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.len() != 3 {
            return Err(Error::Manifest(format!(
                "a family has 3 networks, got {}",
                self.pairs.len()
            )));
        }
        let dims = self.code_dims();
        if !(dims[0] < dims[1] && dims[1] < dims[2]) {
            return Err(Error::Manifest(format!(
                "code lengths must ascend strictly, got {dims:?}"
            )));
        }
        Ok(())
    }

    pub fn code_dims(&self) -> Vec<usize> {
        self.pairs.iter().map(AutoEncoder::code_dim).collect()
    }

    pub fn code_dim(&self, symbol: u8) -> Option<usize> {
        self.pairs.get(symbol as usize).map(AutoEncoder::code_dim)
    }

    /// Writes `family.toml` plus one checkpoint per network into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut networks = Vec::new();
        for (i, pair) in self.pairs.iter().enumerate() {
            let name = format!("net{i}.ntw");
            pair.to_checkpoint()?.save(&dir.join(&name))?;
            networks.push(name);
        }
        let (deblocker, deblock_widths) = match &self.deblocker {
            Some(d) => {
                d.to_checkpoint()?.save(&dir.join("deblock.ntw"))?;
                (Some("deblock.ntw".to_string()), Some(d.widths()))
            }
            None => (None, None),
        };
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            width_mult: self.width_mult,
            code_dims: self.code_dims(),
            target_psnr: self.target_psnr,
            networks,
            deblocker,
            deblock_widths,
        };
        let path = dir.join("family.toml");
        let text = toml::to_string(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Loads a family from a manifest path (or a directory holding `family.toml`).
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join("family.toml")
        } else {
            path.to_path_buf()
        };
        let dir = path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(&path)?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Manifest(format!("unsupported manifest format `{}`", m.format)));
        }
        if m.code_dims.len() != 3 || m.networks.len() != 3 {
            return Err(Error::Manifest("expected three code_dims and three networks".into()));
        }
        let dims = [m.code_dims[0], m.code_dims[1], m.code_dims[2]];
        let mut family = NetworkFamily::with_code_dims(m.width_mult, dims, 0);
        for (pair, file) in family.pairs.iter_mut().zip(&m.networks) {
            pair.load_checkpoint(&Checkpoint::load(&dir.join(file))?)?;
        }
        if let Some(file) = &m.deblocker {
            let widths = m.deblock_widths.unwrap_or(DEFAULT_DEBLOCK_WIDTHS);
            let mut net = DeblockNet::new(widths, &mut ChaCha8Rng::seed_from_u64(0));
            net.load_checkpoint(&Checkpoint::load(&dir.join(file))?)?;
            family.deblocker = Some(net);
        }
        family.target_psnr = m.target_psnr;
        family.validate()?;
        Ok(family)
    }
}

/// On-disk description of a family (`family.toml`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub width_mult: f64,
    pub code_dims: Vec<usize>,
    pub target_psnr: f64,
    pub networks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deblocker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deblock_widths: Option<[usize; 2]>,
}
