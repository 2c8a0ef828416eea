use std::fmt;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    /// Leave one domain out.
    Dg,
    /// Train on one domain, test on the rest.
    Sdg,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DG" => Ok(Protocol::Dg),
            "SDG" => Ok(Protocol::Sdg),
            _ => Err(Error::Config(format!("unknown mode `{s}`; expected DG or SDG"))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Dg => "DG",
            Protocol::Sdg => "SDG",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// For DG, `pivot` is the held-out test domain; for SDG it is the single
/// training domain.
pub fn build_protocol(domains: &[String], mode: Protocol, pivot: &str) -> Result<DomainSplit> {
    ensure!(
        domains.iter().any(|d| d == pivot),
        Error::Config(format!("unknown domain `{pivot}`; available: {}", domains.join(", ")))
    );
    ensure!(
        domains.len() >= 2,
        Error::Config(format!("{mode} needs at least two domains, got {}", domains.len()))
    );
    let (same, rest): (Vec<String>, Vec<String>) = domains.iter().cloned().partition(|d| d == pivot);
    Ok(match mode {
        Protocol::Dg => DomainSplit { train: rest, test: same },
        Protocol::Sdg => DomainSplit { train: same, test: rest },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abcd() -> Vec<String> {
        ["A", "B", "C", "D"].map(String::from).to_vec()
    }

    #[test]
    fn leave_one_out() {
        let s = build_protocol(&abcd(), Protocol::Dg, "D").unwrap();
        assert_eq!(s.train, ["A", "B", "C"]);
        assert_eq!(s.test, ["D"]);
    }

    #[test]
    fn single_domain() {
        let s = build_protocol(&abcd(), Protocol::Sdg, "A").unwrap();
        assert_eq!(s.train, ["A"]);
        assert_eq!(s.test, ["B", "C", "D"]);
    }

    #[test]
    fn invalid_setups() {
        assert!(matches!(
            build_protocol(&["A".into()], Protocol::Dg, "A"),
            Err(Error::Config(_))
        ));
        assert!(matches!(build_protocol(&abcd(), Protocol::Dg, "E"), Err(Error::Config(_))));
    }
}
