//! Exit codes and the JSON error printed on stderr.

use orthostitch::ErrorKind;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    /// Bad arguments or option values.
    Input,
    /// Missing or unreadable files.
    Io,
    /// Malformed files or config.
    Schema,
    /// Degenerate numerics (rank deficiency, identical images, ...).
    Numerical,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Input => 2,
            Kind::Io => 3,
            Kind::Schema => 4,
            Kind::Numerical => 5,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Failure {
    #[serde(rename = "error")]
    pub kind: Kind,
    pub exit_code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Failure {
            kind,
            exit_code: kind.exit_code(),
            message: message.into(),
        }
    }
}

impl From<orthostitch::Error> for Failure {
    fn from(e: orthostitch::Error) -> Self {
        let kind = match e.kind() {
            ErrorKind::Io => Kind::Io,
            ErrorKind::Schema => Kind::Schema,
            ErrorKind::Numerical => Kind::Numerical,
            ErrorKind::Input => Kind::Input,
        };
        Failure::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(Kind::Io, e.to_string())
    }
}
