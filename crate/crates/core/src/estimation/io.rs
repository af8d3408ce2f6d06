use std::path::Path;

use super::ForcedStopObservation;
use crate::error::{Error, Result};

/// Reads a comma-separated observation table with header
/// `location,wait,discharged,instance`. `discharged` accepts
/// `1/0/true/false/yes/no`.
pub fn read_observations(path: &Path) -> Result<Vec<ForcedStopObservation>> {
    let text = std::fs::read_to_string(path)?;
    parse_observations(&text, &path.display().to_string())
}

pub fn parse_observations(text: &str, source: &str) -> Result<Vec<ForcedStopObservation>> {
    let fail = |line: u64, message: String| Error::Format {
        path: source.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| fail(1, e.to_string()))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| fail(1, format!("missing column {name:?}")))
    };
    let (cl, cw, cd, ci) = (col("location")?, col("wait")?, col("discharged")?, col("instance")?);
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            fail(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize, what: &str| -> Result<f64> {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| fail(line, format!("{what} {:?} is not a number", field(i))))?;
            if !v.is_finite() || v < 0.0 {
                return Err(fail(line, format!("{what} must be finite and non-negative, got {v}")));
            }
            Ok(v)
        };
        let discharged = match field(cd).to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" => true,
            "0" | "false" | "no" => false,
            other => return Err(fail(line, format!("discharged flag {other:?} not understood"))),
        };
        let instance: u32 = field(ci)
            .parse()
            .ok()
            .filter(|&i| i >= 1)
            .ok_or_else(|| fail(line, format!("instance {:?} must be a positive integer", field(ci))))?;
        out.push(ForcedStopObservation {
            location: num(cl, "location")?,
            wait: num(cw, "wait")?,
            discharged,
            instance,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_lines() {
        let ok = "location,wait,discharged,instance\n12.5,3.0,1,1\n# note\n80,14.2,false,2\n";
        let v = parse_observations(ok, "obs.csv").unwrap();
        assert_eq!(v.len(), 2);
        assert!(v[0].discharged && !v[1].discharged);
        assert_eq!(v[1].instance, 2);

        let bad = "location,wait,discharged,instance\n12.5,3.0,1,1\n80,-1,0,1\n";
        match parse_observations(bad, "obs.csv") {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a format error, got {other:?}"),
        }
        assert!(parse_observations("location,wait\n1,2\n", "x").is_err());
    }
}
