use serde::{Deserialize, Serialize};

use crate::contour::ContourParams;
use crate::error::{Error, Result};
use crate::resampling::ControlParams;
use crate::tail_sampler::DataLaw;
use crate::test_function::TestFunction;

/// Desk-scale limit on `n·p`.
pub const MAX_ENTRIES: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Auto,
    PhiEqualsNOverP,
    PhiEqualsPOverN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourOverrides {
    pub inner: ContourParams,
    pub outer: ContourParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub law: DataLaw,
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_f")]
    pub f: String,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub convention: Convention,
    #[serde(default)]
    pub contour: Option<ContourOverrides>,
    #[serde(default)]
    pub control: Option<ControlParams>,
    /// Execution knob only; never serialized, so reports do not depend on it.
    #[serde(default = "default_workers", skip_serializing)]
    pub workers: usize,
}

fn default_f() -> String {
    "x^2".into()
}

fn default_replicates() -> usize {
    200
}

fn default_seed() -> u64 {
    42
}

fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(law: DataLaw, n: usize, p: usize) -> Self {
        Self {
            law,
            n,
            p,
            f: default_f(),
            replicates: default_replicates(),
            master_seed: default_seed(),
            convention: Convention::Auto,
            contour: None,
            control: None,
            workers: default_workers(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 2 {
            return Err(Error::InvalidArgument(format!("need n, p >= 2, got n={}, p={}", self.n, self.p)));
        }
        if self.n == self.p {
            return Err(Error::InvalidArgument("n = p is excluded".into()));
        }
        if self.n.saturating_mul(self.p) > MAX_ENTRIES {
            return Err(Error::Guardrail(format!("n*p = {} exceeds {MAX_ENTRIES}", self.n * self.p)));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("replicates must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be positive".into()));
        }
        TestFunction::parse(&self.f)?;
        if let Some(c) = &self.control {
            c.validate()?;
        }
        Ok(())
    }

    /// Fills every defaulted field so the config can be embedded in a report.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        let mut out = self.clone();
        if out.control.is_none() {
            out.control = Some(ControlParams::defaults(self.law.alpha())?);
        }
        Ok(out)
    }

    pub fn test_function(&self) -> Result<TestFunction> {
        TestFunction::parse(&self.f)
    }

    pub fn control_params(&self) -> Result<ControlParams> {
        match self.control {
            Some(c) => Ok(c),
            None => ControlParams::defaults(self.law.alpha()),
        }
    }
}
