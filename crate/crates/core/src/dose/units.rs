//! Radiological quantities with an explicit unit.
//!
//! Absorbed dose (gray) and effective dose (sievert) are numerically close
//! for X-ray photons but mean different things, so every magnitude carries
//! its unit and arithmetic across units is refused.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::DoseError;

/// Radiological unit of a [`DoseQuantity`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DoseUnit {
    /// Absorbed dose, mGy.
    Mgy,
    /// Effective dose, mSv.
    Msv,
    /// Dose-length product, mGy·cm.
    MgyCm,
    /// Dose-area product, mGy·cm².
    MgyCm2,
}

impl DoseUnit {
    pub const ALL: [DoseUnit; 4] = [DoseUnit::Mgy, DoseUnit::Msv, DoseUnit::MgyCm, DoseUnit::MgyCm2];

    pub fn symbol(self) -> &'static str {
        match self {
            DoseUnit::Mgy => "mGy",
            DoseUnit::Msv => "mSv",
            DoseUnit::MgyCm => "mGy·cm",
            DoseUnit::MgyCm2 => "mGy·cm²",
        }
    }

    /// Parses a unit as written on a console or in a form and returns the
    /// canonical unit plus the factor that converts the reading into it.
    ///
    /// Gray-based readings (`Gy`, `Gy*cm`, `Gy*cm2`) are scaled by 1000.
    pub fn parse_reading(text: &str) -> Result<(DoseUnit, f64), DoseError> {
        let norm: String = text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '·' | '.' | '×' => '*',
                '²' => '2',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        let parsed = match norm.as_str() {
            "mgy" => (DoseUnit::Mgy, 1.0),
            "gy" => (DoseUnit::Mgy, 1000.0),
            "msv" => (DoseUnit::Msv, 1.0),
            "sv" => (DoseUnit::Msv, 1000.0),
            "mgy*cm" | "mgycm" => (DoseUnit::MgyCm, 1.0),
            "gy*cm" | "gycm" => (DoseUnit::MgyCm, 1000.0),
            "mgy*cm2" | "mgycm2" | "mgy*cm^2" => (DoseUnit::MgyCm2, 1.0),
            "gy*cm2" | "gycm2" | "gy*cm^2" => (DoseUnit::MgyCm2, 1000.0),
            _ => return Err(DoseError::UnknownUnit(text.to_string())),
        };
        Ok(parsed)
    }
}

impl fmt::Display for DoseUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// A finite, non-negative magnitude in a fixed radiological unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQuantity")]
pub struct DoseQuantity {
    value: f64,
    unit: DoseUnit,
}

#[derive(Deserialize)]
struct RawQuantity {
    value: f64,
    unit: DoseUnit,
}

impl TryFrom<RawQuantity> for DoseQuantity {
    type Error = DoseError;

    fn try_from(raw: RawQuantity) -> Result<Self, Self::Error> {
        DoseQuantity::new(raw.value, raw.unit)
    }
}

impl DoseQuantity {
    pub fn new(value: f64, unit: DoseUnit) -> Result<Self, DoseError> {
        if !value.is_finite() {
            return Err(DoseError::NonFinite);
        }
        if value < 0.0 {
            return Err(DoseError::Negative(value));
        }
        // normalise -0.0 so canonical encodings never print a sign
        Ok(Self { value: value + 0.0, unit })
    }

    pub fn zero(unit: DoseUnit) -> Self {
        Self { value: 0.0, unit }
    }

    pub fn mgy(value: f64) -> Result<Self, DoseError> {
        Self::new(value, DoseUnit::Mgy)
    }

    pub fn msv(value: f64) -> Result<Self, DoseError> {
        Self::new(value, DoseUnit::Msv)
    }

    pub fn mgy_cm(value: f64) -> Result<Self, DoseError> {
        Self::new(value, DoseUnit::MgyCm)
    }

    pub fn mgy_cm2(value: f64) -> Result<Self, DoseError> {
        Self::new(value, DoseUnit::MgyCm2)
    }

    /// Builds a quantity from a console reading such as `0.197 Gy·cm²`.
    pub fn from_reading(value: f64, unit_text: &str) -> Result<Self, DoseError> {
        let (unit, factor) = DoseUnit::parse_reading(unit_text)?;
        Self::new(value * factor, unit)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn unit(&self) -> DoseUnit {
        self.unit
    }

    /// Fails unless the quantity is expressed in `unit`.
    pub fn expect_unit(&self, unit: DoseUnit) -> Result<f64, DoseError> {
        if self.unit == unit {
            Ok(self.value)
        } else {
            Err(DoseError::UnitMismatch { expected: unit, found: self.unit })
        }
    }

    pub fn checked_add(&self, other: &DoseQuantity) -> Result<DoseQuantity, DoseError> {
        let rhs = other.expect_unit(self.unit)?;
        DoseQuantity::new(self.value + rhs, self.unit)
    }

    pub fn checked_sub(&self, other: &DoseQuantity) -> Result<DoseQuantity, DoseError> {
        let rhs = other.expect_unit(self.unit)?;
        DoseQuantity::new(self.value - rhs, self.unit)
    }

    /// Multiplies by a dimensionless, non-negative factor.
    pub fn scale(&self, factor: f64) -> Result<DoseQuantity, DoseError> {
        DoseQuantity::new(self.value * factor, self.unit)
    }
}

impl fmt::Display for DoseQuantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.value, self.unit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_negative_and_non_finite() {
        assert!(matches!(DoseQuantity::msv(-0.1), Err(DoseError::Negative(_))));
        assert!(matches!(DoseQuantity::msv(f64::NAN), Err(DoseError::NonFinite)));
        assert!(matches!(DoseQuantity::msv(f64::INFINITY), Err(DoseError::NonFinite)));
        assert_eq!(DoseQuantity::msv(-0.0).unwrap().value().to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn gray_readings_convert_to_milligray() {
        let q = DoseQuantity::from_reading(0.197, "Gy·cm²").unwrap();
        assert_eq!(q.unit(), DoseUnit::MgyCm2);
        assert!((q.value() - 197.0).abs() < 1e-9);
        let q = DoseQuantity::from_reading(197.0, "mGy*cm2").unwrap();
        assert_eq!(q.value(), 197.0);
        assert!(DoseQuantity::from_reading(1.0, "rem").is_err());
    }

    #[test]
    fn deserialization_enforces_invariants() {
        let ok: DoseQuantity = serde_json::from_str(r#"{"unit":"MGY_CM2","value":197}"#).unwrap();
        assert_eq!(ok.unit(), DoseUnit::MgyCm2);
        assert!(serde_json::from_str::<DoseQuantity>(r#"{"unit":"MSV","value":-1}"#).is_err());
    }

    fn unit() -> impl Strategy<Value = DoseUnit> {
        prop::sample::select(DoseUnit::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn cross_unit_arithmetic_is_rejected(a in 0.0f64..1e6, b in 0.0f64..1e6, ua in unit(), ub in unit()) {
            let x = DoseQuantity::new(a, ua).unwrap();
            let y = DoseQuantity::new(b, ub).unwrap();
            let sum = x.checked_add(&y);
            if ua == ub {
                prop_assert_eq!(sum.unwrap().value(), a + b);
            } else {
                let is_mismatch = matches!(sum, Err(DoseError::UnitMismatch { .. }));
                prop_assert!(is_mismatch);
                let is_mismatch = matches!(x.checked_sub(&y), Err(DoseError::UnitMismatch { .. }));
                prop_assert!(is_mismatch);
            }
        }
    }
}
