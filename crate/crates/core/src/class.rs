use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Object category. The declaration order is the positional order used by
/// per-class parameter vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassId {
    Car,
    Pedestrian,
    Bicycle,
    Bus,
    Motorcycle,
    Trailer,
    Truck,
}

impl ClassId {
    pub const ALL: [ClassId; 7] =
        [ClassId::Car, ClassId::Pedestrian, ClassId::Bicycle, ClassId::Bus, ClassId::Motorcycle, ClassId::Trailer, ClassId::Truck];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassId::Car => "car",
            ClassId::Pedestrian => "pedestrian",
            ClassId::Bicycle => "bicycle",
            ClassId::Bus => "bus",
            ClassId::Motorcycle => "motorcycle",
            ClassId::Trailer => "trailer",
            ClassId::Truck => "truck",
        }
    }

    /// Type string used in KITTI tracking files.
    pub fn kitti_name(self) -> &'static str {
        match self {
            ClassId::Car => "Car",
            ClassId::Pedestrian => "Pedestrian",
            ClassId::Bicycle => "Cyclist",
            ClassId::Bus => "Bus",
            ClassId::Motorcycle => "Motorcycle",
            ClassId::Trailer => "Trailer",
            ClassId::Truck => "Truck",
        }
    }

    pub fn from_kitti_name(name: &str) -> Option<ClassId> {
        match name {
            "Car" => Some(ClassId::Car),
            "Pedestrian" => Some(ClassId::Pedestrian),
            "Cyclist" => Some(ClassId::Bicycle),
            "Bus" => Some(ClassId::Bus),
            "Motorcycle" => Some(ClassId::Motorcycle),
            "Trailer" => Some(ClassId::Trailer),
            "Truck" => Some(ClassId::Truck),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<ClassId> {
        Self::ALL.get(index).copied()
    }

    pub fn accepted_names() -> String {
        Self::ALL.map(ClassId::as_str).join(", ")
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| Error::UnknownClass { name: s.to_string(), accepted: Self::accepted_names() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        for c in ClassId::ALL {
            assert_eq!(c.as_str().parse::<ClassId>().unwrap(), c);
            assert_eq!(ClassId::from_index(c.index()), Some(c));
        }
    }

    #[test]
    fn unknown_class_lists_accepted() {
        let err = "tram".parse::<ClassId>().unwrap_err().to_string();
        assert!(err.contains("tram"));
        assert!(err.contains("car, pedestrian, bicycle, bus, motorcycle, trailer, truck"));
    }
}
