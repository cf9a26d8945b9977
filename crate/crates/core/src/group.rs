use std::fmt;

use serde::{Deserialize, Serialize};

/// Binary protected attribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Group {
    Zero,
    One,
}

impl Group {
    pub const BOTH: [Group; 2] = [Group::Zero, Group::One];

    pub fn index(self) -> usize {
        match self {
            Group::Zero => 0,
            Group::One => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Group::Zero),
            1 => Some(Group::One),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Group::Zero => Group::One,
            Group::One => Group::Zero,
        }
    }
}

impl TryFrom<u8> for Group {
    type Error = InvalidGroup;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Group::from_index(v as usize).ok_or(InvalidGroup(v))
    }
}

impl From<Group> for u8 {
    fn from(g: Group) -> u8 {
        g.index() as u8
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("group must be 0 or 1, got {0}")]
pub struct InvalidGroup(pub u8);
