//! The seven crop-type classes of the western Kenya field campaign.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Crop type label. Discriminants follow descending label frequency in the
/// source dataset (1462, 829, 487, 172, 160, 98, 78 fields), which is also the
/// order in which classes enter the experiment suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropClass {
    Maize = 0,
    Cassava = 1,
    MaizeCommonBean = 2,
    MaizeCassava = 3,
    MaizeSoybean = 4,
    CommonBean = 5,
    CassavaCommonBean = 6,
}

impl CropClass {
    pub const ALL: [CropClass; 7] = [
        CropClass::Maize,
        CropClass::Cassava,
        CropClass::MaizeCommonBean,
        CropClass::MaizeCassava,
        CropClass::MaizeSoybean,
        CropClass::CommonBean,
        CropClass::CassavaCommonBean,
    ];

    /// Single-crop classes used for band separability plots.
    pub const PURE: [CropClass; 3] = [CropClass::Maize, CropClass::Cassava, CropClass::CommonBean];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CropClass::Maize => "maize",
            CropClass::Cassava => "cassava",
            CropClass::MaizeCommonBean => "maize_common_bean",
            CropClass::MaizeCassava => "maize_cassava",
            CropClass::MaizeSoybean => "maize_soybean",
            CropClass::CommonBean => "common_bean",
            CropClass::CassavaCommonBean => "cassava_common_bean",
        }
    }
}

impl fmt::Display for CropClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown crop class {0:?}")]
pub struct UnknownClass(pub String);

impl FromStr for CropClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_follow_frequency_order() {
        for (i, c) in CropClass::ALL.iter().enumerate() {
            assert_eq!(c.id() as usize, i);
            assert_eq!(CropClass::from_id(i as u8), Some(*c));
            assert_eq!(c.name().parse::<CropClass>().unwrap(), *c);
        }
        assert!("soy".parse::<CropClass>().is_err());
        assert_eq!(CropClass::from_id(7), None);
    }
}
