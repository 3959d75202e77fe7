//! Version tags carried by every file this crate writes, in the form
//! `name/MAJOR.MINOR`. Readers accept any minor version of the major they know.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("malformed schema tag `{0}`")]
    Malformed(String),
    #[error("expected schema `{expected}`, found `{found}`")]
    WrongName { expected: String, found: String },
    #[error("unsupported major version {found} for `{name}` (this build reads {supported})")]
    UnsupportedMajor {
        name: String,
        found: u32,
        supported: u32,
    },
}

/// Check that `tag` names `expected` (a `name/MAJOR.MINOR` tag) with the same major version.
pub fn check_schema(tag: &str, expected: &str) -> Result<(), SchemaError> {
    let (want_name, want_major) = split(expected)?;
    let (name, major) = split(tag)?;
    if name != want_name {
        return Err(SchemaError::WrongName {
            expected: want_name.to_string(),
            found: name.to_string(),
        });
    }
    if major != want_major {
        return Err(SchemaError::UnsupportedMajor {
            name: name.to_string(),
            found: major,
            supported: want_major,
        });
    }
    Ok(())
}

fn split(tag: &str) -> Result<(&str, u32), SchemaError> {
    let bad = || SchemaError::Malformed(tag.to_string());
    let (name, version) = tag.split_once('/').ok_or_else(bad)?;
    let (major, minor) = version.split_once('.').ok_or_else(bad)?;
    minor.parse::<u32>().map_err(|_| bad())?;
    Ok((name, major.parse().map_err(|_| bad())?))
}
