//! Cardiac function indices from end-diastolic and end-systolic lengths.
//!
//! Conventions: LV mass by the ASE cube formula, volumes by Teichholz,
//! FS/EF/RWT as plain ratios. All lengths in centimetres.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::SegmentLengths;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("end-diastolic LV internal diameter must be positive")]
    ZeroDiastolicDiameter,
    #[error("{0} must be positive")]
    NonPositiveLength(&'static str),
    #[error("end-diastolic volume must be positive")]
    ZeroEdv,
}

/// Human-readable formula labels, emitted with every report that carries indices.
pub const LVM_FORMULA: &str = "ASE cube: 0.8*1.04*((IVSd+LVIDd+LVPWd)^3 - LVIDd^3) + 0.6 g";
pub const VOLUME_FORMULA: &str = "Teichholz: 7.0/(2.4+D)*D^3 mL";
pub const FS_FORMULA: &str = "(LVIDd - LVIDs)/LVIDd";
pub const RWT_FORMULA: &str = "2*LVPWd/LVIDd";
pub const EF_FORMULA: &str = "(EDV - ESV)/EDV";

pub fn fractional_shortening(ed_lvid: f64, es_lvid: f64) -> Result<f64, IndexError> {
    if !(ed_lvid > 0.0) {
        return Err(IndexError::ZeroDiastolicDiameter);
    }
    Ok((ed_lvid - es_lvid) / ed_lvid)
}

pub fn relative_wall_thickness(ed_lvpw: f64, ed_lvid: f64) -> Result<f64, IndexError> {
    if !(ed_lvid > 0.0) {
        return Err(IndexError::ZeroDiastolicDiameter);
    }
    Ok(2.0 * ed_lvpw / ed_lvid)
}

/// LV mass in grams from end-diastolic lengths.
///
/// Wall thicknesses may be zero (the mass then reduces to the 0.6 g
/// constant); the cavity diameter must be positive.
pub fn lv_mass(ed: &SegmentLengths) -> Result<f64, IndexError> {
    if !(ed.lvid_cm > 0.0) {
        return Err(IndexError::NonPositiveLength("LVID"));
    }
    if !(ed.ivs_cm >= 0.0) {
        return Err(IndexError::NonPositiveLength("IVS"));
    }
    if !(ed.lvpw_cm >= 0.0) {
        return Err(IndexError::NonPositiveLength("LVPW"));
    }
    let outer = ed.ivs_cm + ed.lvid_cm + ed.lvpw_cm;
    Ok(0.8 * 1.04 * (outer.powi(3) - ed.lvid_cm.powi(3)) + 0.6)
}

/// Teichholz volume in millilitres for an LV internal diameter in cm.
pub fn teichholz_volume(lvid_cm: f64) -> Result<f64, IndexError> {
    if !(lvid_cm > 0.0) {
        return Err(IndexError::NonPositiveLength("LVID"));
    }
    Ok(7.0 / (2.4 + lvid_cm) * lvid_cm.powi(3))
}

pub fn ejection_fraction(edv: f64, esv: f64) -> Result<f64, IndexError> {
    if !(edv > 0.0) {
        return Err(IndexError::ZeroEdv);
    }
    Ok((edv - esv) / edv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedMeasurement {
    pub ed: SegmentLengths,
    pub es: SegmentLengths,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CardiacIndices {
    pub fs_fraction: f64,
    pub rwt_ratio: f64,
    pub lvm_g: f64,
    pub edv_ml: f64,
    pub esv_ml: f64,
    pub ef_fraction: f64,
}

pub const INDEX_NAMES: [&str; 6] = ["fs", "rwt", "lvm", "edv", "esv", "ef"];

impl CardiacIndices {
    pub fn from_pair(p: &PairedMeasurement) -> Result<Self, IndexError> {
        let edv = teichholz_volume(p.ed.lvid_cm)?;
        let esv = teichholz_volume(p.es.lvid_cm)?;
        Ok(Self {
            fs_fraction: fractional_shortening(p.ed.lvid_cm, p.es.lvid_cm)?,
            rwt_ratio: relative_wall_thickness(p.ed.lvpw_cm, p.ed.lvid_cm)?,
            lvm_g: lv_mass(&p.ed)?,
            edv_ml: edv,
            esv_ml: esv,
            ef_fraction: ejection_fraction(edv, esv)?,
        })
    }

    /// Values in the order of [`INDEX_NAMES`].
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.fs_fraction,
            self.rwt_ratio,
            self.lvm_g,
            self.edv_ml,
            self.esv_ml,
            self.ef_fraction,
        ]
    }
}
