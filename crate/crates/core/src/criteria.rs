//! Behavior criteria of an alternative and dataset-level standardization.
//!
//! * `f1`: mean compliance under one common evaluation condition;
//! * `f2`: material volume;
//! * `f3`: height of the material centroid above the domain bottom;
//! * `f4`: height of the material supporting the structure on the leftmost column.
//!
//! The roadway is excluded from `f2`, `f3` and `f4`; it is identical in
//! every alternative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DensityField;
use crate::topo::{Alternative, Problem};

pub const CRITERIA_NAMES: [&str; 4] = ["f1", "f2", "f3", "f4"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportHeightMode {
    /// Density-weighted mean height of the leftmost column.
    Mean,
    /// Centroid height of the highest solid (`x >= 0.5`) element in the leftmost column.
    Highest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    Binary,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriteriaSettings {
    pub eval_condition: String,
    pub support_height: SupportHeightMode,
    /// Which field `f3`/`f4` are measured on; `f1`/`f2` always use the binary field.
    pub geometry_source: FieldSource,
    /// Compliance above this is flagged as an outlier (still reported).
    pub outlier_bound: f64,
}

impl Default for CriteriaSettings {
    fn default() -> Self {
        Self {
            eval_condition: "B5".into(),
            support_height: SupportHeightMode::Mean,
            geometry_source: FieldSource::Binary,
            outlier_bound: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriteriaVector {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
}

impl CriteriaVector {
    pub fn to_array(&self) -> [f64; 4] {
        [self.f1, self.f2, self.f3, self.f4]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            f1: a[0],
            f2: a[1],
            f3: a[2],
            f4: a[3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaRecord {
    pub id: String,
    pub condition_id: String,
    pub volume_fraction: f64,
    pub raw: CriteriaVector,
    pub compliance_outlier: bool,
}

/// `f2`: material volume of the non-roadway elements.
pub fn material_volume(field: &DensityField) -> f64 {
    let g = &field.grid;
    field
        .values
        .iter()
        .enumerate()
        .filter(|(i, _)| !g.is_roadway(*i))
        .map(|(_, v)| v * g.element_size)
        .sum()
}

/// `f3`: density-weighted mean element height, roadway excluded.
pub fn centroid_height(field: &DensityField) -> Result<f64> {
    let g = &field.grid;
    let (mut mass, mut moment) = (0.0, 0.0);
    for (i, &x) in field.values.iter().enumerate() {
        if !g.is_roadway(i) {
            mass += x;
            moment += x * g.row_height(i / g.width);
        }
    }
    if mass <= 0.0 {
        return Err(Error::Invalid("centroid of an empty material distribution".into()));
    }
    Ok(moment / mass)
}

/// `f4`: height of the material on the leftmost column.
pub fn support_height(field: &DensityField, mode: SupportHeightMode, id: &str) -> Result<f64> {
    let g = &field.grid;
    let column = (0..g.height).filter(|&r| r != g.roadway_row).map(|r| (g.row_height(r), field.get(r, 0)));
    match mode {
        SupportHeightMode::Mean => {
            let (mut mass, mut moment) = (0.0, 0.0);
            for (h, x) in column {
                mass += x;
                moment += x * h;
            }
            if mass <= 0.0 {
                return Err(Error::VoidSupportColumn(id.to_string()));
            }
            Ok(moment / mass)
        }
        SupportHeightMode::Highest => column
            .filter(|&(_, x)| x >= 0.5)
            .map(|(h, _)| h)
            .reduce(f64::max)
            .ok_or_else(|| Error::VoidSupportColumn(id.to_string())),
    }
}

/// Criteria of one alternative; `eval` is the evaluation-condition problem
/// (its volume fraction is irrelevant to the analysis).
pub fn compute_criteria(alt: &Alternative, eval: &Problem, settings: &CriteriaSettings) -> Result<CriteriaRecord> {
    let f1 = eval.analyze(&alt.binary_field)?.compliance;
    let f2 = material_volume(&alt.binary_field);
    let geometry = match settings.geometry_source {
        FieldSource::Binary => &alt.binary_field,
        FieldSource::Raw => &alt.raw_field,
    };
    let f3 = centroid_height(geometry)?;
    let f4 = support_height(geometry, settings.support_height, &alt.id)?;
    Ok(CriteriaRecord {
        id: alt.id.clone(),
        condition_id: alt.condition_id.clone(),
        volume_fraction: alt.volume_fraction,
        raw: CriteriaVector { f1, f2, f3, f4 },
        compliance_outlier: !(f1.is_finite() && f1 <= settings.outlier_bound),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; 4],
    /// Population standard deviation.
    pub std: [f64; 4],
}

pub fn fit_normalization(vectors: &[CriteriaVector]) -> Result<NormalizationStats> {
    if vectors.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: vectors.len(),
        });
    }
    let n = vectors.len() as f64;
    let mut mean = [0.0; 4];
    let mut std = [0.0; 4];
    for k in 0..4 {
        let col = vectors.iter().map(|v| v.to_array()[k]);
        mean[k] = col.clone().sum::<f64>() / n;
        std[k] = (col.map(|x| (x - mean[k]).powi(2)).sum::<f64>() / n).sqrt();
        if !(std[k] > 0.0) {
            return Err(Error::ZeroVariance(CRITERIA_NAMES[k]));
        }
    }
    Ok(NormalizationStats { mean, std })
}

pub fn apply_normalization(v: &CriteriaVector, stats: &NormalizationStats) -> [f64; 4] {
    let a = v.to_array();
    std::array::from_fn(|k| (a[k] - stats.mean[k]) / stats.std[k])
}

pub fn invert_normalization(z: &[f64; 4], stats: &NormalizationStats) -> CriteriaVector {
    CriteriaVector::from_array(std::array::from_fn(|k| z[k] * stats.std[k] + stats.mean[k]))
}
