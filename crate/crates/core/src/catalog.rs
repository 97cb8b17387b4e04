//! Event catalogs and their text format.
//!
//! A catalog file holds one event per line, `lon_deg,lat_deg[,energy_eV]`,
//! in the frame named by a `# frame=galactic|equatorial` header. Other
//! `#` lines and blank lines are ignored. In memory, directions are kept in
//! the equatorial analysis frame.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sphere::{convert, FrameOfReference, UnitDirection};

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    directions: Vec<UnitDirection>,
    energies: Option<Vec<f64>>,
}

impl Catalog {
    /// Directions must be equatorial.
    pub fn new(directions: Vec<UnitDirection>, energies: Option<Vec<f64>>) -> Result<Self> {
        if let Some(e) = &energies {
            if e.len() != directions.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} energies for {} directions",
                    e.len(),
                    directions.len()
                )));
            }
            if e.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                return Err(Error::InvalidParameter("energies must be positive".into()));
            }
        }
        Ok(Catalog { directions, energies })
    }

    pub fn from_directions(directions: Vec<UnitDirection>) -> Self {
        Catalog { directions, energies: None }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Equatorial directions.
    pub fn directions(&self) -> &[UnitDirection] {
        &self.directions
    }

    pub fn energies(&self) -> Option<&[f64]> {
        self.energies.as_deref()
    }

    pub fn into_directions(self) -> Vec<UnitDirection> {
        self.directions
    }

    /// Parses catalog text. `default_frame` applies when no header is present.
    pub fn parse(text: &str, default_frame: Option<FrameOfReference>) -> Result<Self> {
        let mut frame = None;
        let mut dirs = Vec::new();
        let mut energies: Vec<f64> = Vec::new();
        let mut with_energy: Option<bool> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(value) = comment.trim().strip_prefix("frame=") {
                    if !dirs.is_empty() {
                        return Err(parse_err(line_no, "frame header must precede the events"));
                    }
                    frame = Some(
                        value
                            .parse::<FrameOfReference>()
                            .map_err(|e| parse_err(line_no, &e))?,
                    );
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 2 && fields.len() != 3 {
                return Err(parse_err(line_no, "expected lon,lat[,energy]"));
            }
            let num = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line_no, &format!("invalid {what} '{s}'")))
            };
            let lon = num(fields[0], "longitude")?;
            let lat = num(fields[1], "latitude")?;
            if !(0.0..360.0).contains(&lon) {
                return Err(parse_err(line_no, &format!("longitude {lon} outside [0, 360)")));
            }
            if !(-90.0..=90.0).contains(&lat) {
                return Err(parse_err(line_no, &format!("latitude {lat} outside [-90, 90]")));
            }
            let has_e = fields.len() == 3;
            match with_energy {
                None => with_energy = Some(has_e),
                Some(prev) if prev != has_e => {
                    return Err(parse_err(line_no, "energy column present on some lines only"))
                }
                _ => {}
            }
            if has_e {
                let e = num(fields[2], "energy")?;
                if e <= 0.0 {
                    return Err(parse_err(line_no, "energy must be positive"));
                }
                energies.push(e);
            }
            dirs.push(UnitDirection::from_lon_lat_deg(lon, lat));
        }
        let frame = frame.or(default_frame).ok_or_else(|| Error::CatalogParse {
            line: 1,
            message: "missing '# frame=galactic|equatorial' header".into(),
        })?;
        let dirs = dirs
            .iter()
            .map(|u| convert(u, frame, FrameOfReference::Equatorial))
            .collect();
        let energies = (with_energy == Some(true)).then_some(energies);
        Catalog::new(dirs, energies)
    }

    pub fn read(path: &Path, default_frame: Option<FrameOfReference>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, default_frame)
    }

    /// Renders the catalog in `frame` with full round-trip precision.
    pub fn to_text(&self, frame: FrameOfReference) -> String {
        let mut out = format!("# frame={frame}\n");
        for (i, u) in self.directions.iter().enumerate() {
            let (lon, lat) = convert(u, FrameOfReference::Equatorial, frame).lon_lat_deg();
            // 360 can appear after rounding a longitude just below it.
            let lon = if lon >= 360.0 { 0.0 } else { lon };
            match &self.energies {
                Some(e) => writeln!(out, "{lon},{lat},{}", e[i]),
                None => writeln!(out, "{lon},{lat}"),
            }
            .expect("writing to a string");
        }
        out
    }

    pub fn write(&self, path: &Path, frame: FrameOfReference) -> Result<()> {
        std::fs::write(path, self.to_text(frame))?;
        Ok(())
    }
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::CatalogParse {
        line,
        message: message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::sample_uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_both_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dirs: Vec<_> = (0..200).map(|_| sample_uniform(&mut rng)).collect();
        let energies: Vec<f64> = (0..200).map(|i| 1e19 * (1.0 + i as f64)).collect();
        let cat = Catalog::new(dirs, Some(energies)).unwrap();
        for frame in [FrameOfReference::Galactic, FrameOfReference::Equatorial] {
            let text = cat.to_text(frame);
            let back = Catalog::parse(&text, None).unwrap();
            assert_eq!(back.energies(), cat.energies());
            for (a, b) in back.directions().iter().zip(cat.directions()) {
                let chord = ((a.x() - b.x()).powi(2) + (a.y() - b.y()).powi(2) + (a.z() - b.z()).powi(2)).sqrt();
                assert!(chord < 1e-9);
            }
        }
    }

    #[test]
    fn comments_and_defaults() {
        let text = "# a comment\n\n10,20\n350.5,-45\n";
        assert!(Catalog::parse(text, None).is_err());
        let cat = Catalog::parse(text, Some(FrameOfReference::Equatorial)).unwrap();
        assert_eq!(cat.len(), 2);
        assert!(cat.energies().is_none());
        let (lon, lat) = cat.directions()[0].lon_lat_deg();
        assert!((lon - 10.0).abs() < 1e-12 && (lat - 20.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_lines() {
        let bad = [
            "# frame=galactic\n10\n",
            "# frame=galactic\n400,0\n",
            "# frame=galactic\n10,95\n",
            "# frame=galactic\n10,0,-5\n",
            "# frame=galactic\n10,0,1e20\n20,0\n",
            "# frame=galactic\nabc,0\n",
            "# frame=ecliptic\n10,0\n",
        ];
        for text in bad {
            match Catalog::parse(text, None) {
                Err(Error::CatalogParse { line, .. }) => assert!(line >= 1),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }
}
