use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Platform,
    Instructor,
    Researcher,
    Admin,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::Platform,
        Role::Instructor,
        Role::Researcher,
        Role::Admin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Platform => "platform",
            Role::Instructor => "instructor",
            Role::Researcher => "researcher",
            Role::Admin => "admin",
        }
    }
}

/// An authenticated caller. `name` keys the caller's privacy budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub name: String,
    pub role: Role,
}

impl Principal {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        Principal {
            name: name.into(),
            role,
        }
    }

    pub fn admin(name: impl Into<String>) -> Self {
        Self::new(name, Role::Admin)
    }

    pub(crate) fn require(&self, allowed: &[Role], what: &str) -> Result<()> {
        if allowed.contains(&self.role) {
            Ok(())
        } else {
            Err(Error::Permission(format!(
                "{} role may not {what}",
                self.role.as_str()
            )))
        }
    }
}
