//! Parsing of numeric list arguments.

use anyhow::{bail, Context, Result};

/// Parses `a,b,c` or an inclusive range `start:end:step`.
pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            bail!("range must look like start:end:step, got '{s}'");
        }
        let nums = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad number '{p}'")))
            .collect::<Result<Vec<_>>>()?;
        let (start, end, step) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || end < start {
            bail!("range '{s}' needs step > 0 and end >= start");
        }
        return Ok(pi0kit_core::estimators::lambda_grid(start, end, step));
    }
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad number '{t}'")))
        .collect()
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad integer '{t}'")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_f64_list("0.1, 0.5").unwrap(), vec![0.1, 0.5]);
        assert_eq!(parse_f64_list("0.2:0.5:0.05").unwrap().len(), 7);
        assert_eq!(parse_f64_list("0:0.95:0.05").unwrap()[19], 0.95);
        assert!(parse_f64_list("1:0:0.1").is_err());
        assert!(parse_f64_list("x").is_err());
        assert_eq!(parse_usize_list("25,50").unwrap(), vec![25, 50]);
    }
}
