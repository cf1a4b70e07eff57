//! Alignment target construction: semantic, replacement and projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psych::N_DIMS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Semantic,
    Replacement,
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetMode {
    pub kind: TargetKind,
    #[serde(default = "default_replace_count")]
    pub replace_count: usize,
    #[serde(default)]
    pub replace_offset: usize,
}

fn default_replace_count() -> usize {
    N_DIMS
}

impl TargetMode {
    pub fn semantic() -> Self {
        Self {
            kind: TargetKind::Semantic,
            replace_count: N_DIMS,
            replace_offset: 0,
        }
    }

    pub fn replacement(replace_count: usize, replace_offset: usize) -> Self {
        Self {
            kind: TargetKind::Replacement,
            replace_count,
            replace_offset,
        }
    }

    pub fn projection() -> Self {
        Self {
            kind: TargetKind::Projection,
            replace_count: N_DIMS,
            replace_offset: 0,
        }
    }

    pub fn uses_psych(&self) -> bool {
        self.kind != TargetKind::Semantic
    }

    /// Length of a target built from a teacher embedding of length `teacher_dim`.
    pub fn target_dim(&self, teacher_dim: usize) -> usize {
        match self.kind {
            TargetKind::Projection => teacher_dim + N_DIMS,
            _ => teacher_dim,
        }
    }

    pub fn validate(&self, teacher_dim: usize) -> Result<()> {
        if self.kind == TargetKind::Replacement
            && self.replace_count + self.replace_offset > teacher_dim
        {
            return Err(Error::InvalidArgument(format!(
                "replacing {} dims at offset {} needs teacher dim >= {}, got {teacher_dim}",
                self.replace_count,
                self.replace_offset,
                self.replace_count + self.replace_offset
            )));
        }
        Ok(())
    }
}

impl Default for TargetMode {
    fn default() -> Self {
        Self::semantic()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetVector {
    pub values: Vec<f64>,
    pub mode: TargetMode,
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what}[{i}] = {}", v[i]))),
        None => Ok(()),
    }
}

pub fn build_semantic_target(teacher: &[f64]) -> Result<TargetVector> {
    check_finite("teacher", teacher)?;
    Ok(TargetVector {
        values: teacher.to_vec(),
        mode: TargetMode::semantic(),
    })
}

/// Overwrite `teacher[offset..offset + count)` with the first `count` scaled
/// psych values; everything else is copied bit-for-bit.
pub fn build_replacement_target(
    teacher: &[f64],
    psych_scaled: &[f64],
    replace_count: usize,
    replace_offset: usize,
) -> Result<TargetVector> {
    let mode = TargetMode::replacement(replace_count, replace_offset);
    mode.validate(teacher.len())?;
    if psych_scaled.len() < replace_count {
        return Err(Error::Shape(format!(
            "{} psych values for {replace_count} replaced dims",
            psych_scaled.len()
        )));
    }
    check_finite("teacher", teacher)?;
    check_finite("psych", psych_scaled)?;
    let mut values = teacher.to_vec();
    values[replace_offset..replace_offset + replace_count]
        .copy_from_slice(&psych_scaled[..replace_count]);
    Ok(TargetVector { values, mode })
}

pub fn build_projection_target(teacher: &[f64], psych_scaled: &[f64]) -> Result<TargetVector> {
    if psych_scaled.len() != N_DIMS {
        return Err(Error::Shape(format!(
            "projection needs {N_DIMS} psych values, got {}",
            psych_scaled.len()
        )));
    }
    check_finite("teacher", teacher)?;
    check_finite("psych", psych_scaled)?;
    let mut values = Vec::with_capacity(teacher.len() + N_DIMS);
    values.extend_from_slice(teacher);
    values.extend_from_slice(psych_scaled);
    Ok(TargetVector {
        values,
        mode: TargetMode::projection(),
    })
}

/// Builds targets for a fixed mode and teacher dimensionality.
#[derive(Debug, Clone, Copy)]
pub struct TargetBuilder {
    pub mode: TargetMode,
    pub teacher_dim: usize,
}

impl TargetBuilder {
    pub fn new(mode: TargetMode, teacher_dim: usize) -> Result<Self> {
        mode.validate(teacher_dim)?;
        Ok(Self { mode, teacher_dim })
    }

    pub fn build(&self, teacher: &[f64], psych_scaled: Option<&[f64]>) -> Result<TargetVector> {
        if teacher.len() != self.teacher_dim {
            return Err(Error::Shape(format!(
                "teacher embedding has {} dims, configured {}",
                teacher.len(),
                self.teacher_dim
            )));
        }
        let psych = || {
            psych_scaled.ok_or_else(|| {
                Error::InvalidArgument("this target mode needs psych dimensions".into())
            })
        };
        match self.mode.kind {
            TargetKind::Semantic => build_semantic_target(teacher),
            TargetKind::Replacement => build_replacement_target(
                teacher,
                psych()?,
                self.mode.replace_count,
                self.mode.replace_offset,
            ),
            TargetKind::Projection => build_projection_target(teacher, psych()?),
        }
    }
}
