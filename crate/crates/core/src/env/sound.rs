//! Spectral sound templates and the heard/unheard library split.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 16;

/// Non-negative, L2-normalized spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSignature", into = "RawSignature")]
pub struct SoundSignature {
    id: String,
    spectrum: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSignature {
    id: String,
    spectrum: Vec<f64>,
}

impl TryFrom<RawSignature> for SoundSignature {
    type Error = Error;

    fn try_from(raw: RawSignature) -> Result<Self> {
        let sig = SoundSignature {
            id: raw.id,
            spectrum: raw.spectrum,
        };
        sig.check()?;
        Ok(sig)
    }
}

impl From<SoundSignature> for RawSignature {
    fn from(s: SoundSignature) -> Self {
        RawSignature {
            id: s.id,
            spectrum: s.spectrum,
        }
    }
}

impl SoundSignature {
    /// Normalizes `raw` to unit L2 norm.
    pub fn new(id: &str, raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!("signature `{id}` has negative or non-finite bins")));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Validation(format!("signature `{id}` is silent")));
        }
        Ok(SoundSignature {
            id: id.to_string(),
            spectrum: raw.iter().map(|v| v / norm).collect(),
        })
    }

    fn check(&self) -> Result<()> {
        if self.spectrum.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!("signature `{}` has negative bins", self.id)));
        }
        let norm = self.spectrum.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "signature `{}` has L2 norm {norm}, expected 1",
                self.id
            )));
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn bins(&self) -> usize {
        self.spectrum.len()
    }

    pub fn l1(&self) -> f64 {
        self.spectrum.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundLibrary {
    pub train: Vec<SoundSignature>,
    pub val: Vec<SoundSignature>,
    pub test: Vec<SoundSignature>,
}

impl SoundLibrary {
    /// Reproducible library with smooth multi-peak spectra. Desk-scale split
    /// is 8/2/4, proportional to 78/11/18.
    pub fn generate(seed: u64, counts: (usize, usize, usize), bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("sound library needs at least one bin".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |prefix: &str, n: usize| -> Result<Vec<SoundSignature>> {
            (0..n)
                .map(|i| {
                    let peaks = rng.random_range(1..=3);
                    let mut raw = vec![0.02; bins];
                    for _ in 0..peaks {
                        let center = rng.random_range(0.0..bins as f64);
                        let width = rng.random_range(0.8..3.0);
                        let amp = rng.random_range(0.3..1.0);
                        for (k, v) in raw.iter_mut().enumerate() {
                            let z = (k as f64 - center) / width;
                            *v += amp * (-0.5 * z * z).exp();
                        }
                    }
                    SoundSignature::new(&format!("{prefix}-{i:02}"), raw)
                })
                .collect()
        };
        let lib = SoundLibrary {
            train: make("train", counts.0)?,
            val: make("val", counts.1)?,
            test: make("test", counts.2)?,
        };
        lib.validate()?;
        Ok(lib)
    }

    pub fn default_split(seed: u64) -> Result<Self> {
        Self::generate(seed, (8, 2, 4), DEFAULT_BINS)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in self.all() {
            s.check()?;
            if !seen.insert(s.id()) {
                return Err(Error::Validation(format!(
                    "signature id `{}` appears more than once across splits",
                    s.id()
                )));
            }
        }
        Ok(())
    }

    pub fn all(&self) -> impl Iterator<Item = &SoundSignature> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn find(&self, id: &str) -> Option<&SoundSignature> {
        self.all().find(|s| s.id() == id)
    }

    /// The single sound used in the heard condition.
    pub fn heard(&self) -> Result<&SoundSignature> {
        self.train
            .first()
            .ok_or_else(|| Error::Validation("library has no training sounds".into()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let lib: SoundLibrary = serde_json::from_str(text)?;
        lib.validate()?;
        Ok(lib)
    }
}
