//! `--layers` values: `auto`, a single index, a comma list, or a range
//! (`a..b` exclusive, `a..=b` inclusive).

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// Take the selection report's layers.
    Auto,
    Explicit(Vec<usize>),
}

impl std::str::FromStr for LayerSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || CliError::Usage(format!("bad layer spec `{s}`; expected auto, 3, 0,1 or 0..5"));
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        if s == "auto" {
            return Ok(LayerSpec::Auto);
        }
        if s == "none" {
            return Ok(LayerSpec::Explicit(Vec::new()));
        }
        let layers: Vec<usize> = if let Some((a, b)) = s.split_once("..=") {
            (num(a)?..=num(b)?).collect()
        } else if let Some((a, b)) = s.split_once("..") {
            (num(a)?..num(b)?).collect()
        } else {
            s.split(',').map(num).collect::<Result<_, _>>()?
        };
        if layers.is_empty() && !s.is_empty() {
            return Err(bad());
        }
        let mut sorted = layers;
        sorted.sort_unstable();
        sorted.dedup();
        Ok(LayerSpec::Explicit(sorted))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> LayerSpec {
        s.parse().unwrap()
    }

    #[test]
    fn forms() {
        assert_eq!(parse("auto"), LayerSpec::Auto);
        assert_eq!(parse("0"), LayerSpec::Explicit(vec![0]));
        assert_eq!(parse("1"), LayerSpec::Explicit(vec![1]));
        assert_eq!(parse("0..5"), LayerSpec::Explicit(vec![0, 1, 2, 3, 4]));
        assert_eq!(parse("0..=1"), LayerSpec::Explicit(vec![0, 1]));
        assert_eq!(parse("2,0,2"), LayerSpec::Explicit(vec![0, 2]));
        assert_eq!(parse("none"), LayerSpec::Explicit(vec![]));
    }

    #[test]
    fn garbage_is_rejected() {
        for s in ["", "x", "3..1", "1,,2", "-1"] {
            assert!(s.parse::<LayerSpec>().is_err(), "{s}");
        }
    }
}
