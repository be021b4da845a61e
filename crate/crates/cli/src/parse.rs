//! Text syntax shared by flags and the `[task]` config section.

use stablesde::engine::Domain;

use crate::CliError;

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

/// `"0.1,0,-2"`.
pub fn point(text: &str) -> Result<Vec<f64>, CliError> {
    let v: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(usage(format!("expected comma-separated numbers, got '{text}'"))),
    }
}

/// `"0,0;0.5,0"`.
pub fn points(text: &str) -> Result<Vec<Vec<f64>>, CliError> {
    text.split(';').map(point).collect()
}

/// `ball:R`, `ball:C:R`, `cube:H`, `cube:C:H` or `box:C:H` where `C` is
/// a point and `H` a list of half-widths. Omitted centers are the origin.
pub fn domain(text: &str, d: usize) -> Result<Domain, CliError> {
    let bad = || usage(format!("unrecognized domain '{text}'"));
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let (kind, center, size) = match parts.as_slice() {
        [k, s] => (*k, vec![0.0; d], *s),
        [k, c, s] => (*k, point(c)?, *s),
        _ => return Err(bad()),
    };
    if center.len() != d {
        return Err(usage(format!("domain center has {} coordinates, expected {d}", center.len())));
    }
    let dom = match kind {
        "ball" => Domain::ball(center, size.parse().map_err(|_| bad())?),
        "cube" => Domain::cube(center, size.parse().map_err(|_| bad())?),
        "box" => {
            let h = point(size)?;
            if h.len() != d {
                return Err(bad());
            }
            Domain::boxed(center, h)
        }
        _ => return Err(bad()),
    };
    dom.map_err(CliError::from)
}

pub fn list(text: &str) -> Result<Vec<f64>, CliError> {
    point(text)
}
