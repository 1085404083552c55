//! Plain-text run configuration: `key = value` lines, `#` starts a comment.
//!
//! Every key is optional; omitted keys keep the defaults of
//! [`FlowConfig::default`], the single-bump field flowed to ε = 2.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{field_from_bumps, BumpSpec, ConformalField};
use crate::geodesic::GeodesicParams;
use crate::lattice::{Lattice, DEFAULT_SPACING};
use crate::mobius::{bolza_atlas, DiskPoint};

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub centers: Vec<DiskPoint>,
    pub amplitudes: Vec<f64>,
    pub width: f64,
    pub grid_spacing: f64,
    pub dt_flow: f64,
    pub total_flow_time: f64,
    pub checkpoint_interval: f64,
    pub n_samples: usize,
    pub burn_in: f64,
    pub dt_geodesic: f64,
    /// Time span of half-orbit integrals.
    pub horizon: f64,
    pub seed: u64,
    pub fd_eps_entropy: f64,
    pub fd_eps_kappa: f64,
    /// Bump perturbation direction used by `verify derivative`.
    pub psi_center: DiskPoint,
    pub psi_amplitude: f64,
    pub psi_width: f64,
    /// Unit vectors sampled by `verify identities`.
    pub identity_samples: usize,
    pub jensen_trials: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            centers: vec![DiskPoint::new(0.2, 0.1).expect("inside the disk")],
            amplitudes: vec![0.1],
            width: 0.5,
            grid_spacing: DEFAULT_SPACING,
            dt_flow: 4e-5,
            total_flow_time: 2.0,
            checkpoint_interval: 0.1,
            n_samples: 4000,
            burn_in: 10.0,
            dt_geodesic: 1e-2,
            horizon: 20.0,
            seed: 1,
            fd_eps_entropy: 1e-2,
            fd_eps_kappa: 1e-3,
            psi_center: DiskPoint::new(0.2, 0.1).expect("inside the disk"),
            psi_amplitude: 1.0,
            psi_width: 0.5,
            identity_samples: 50,
            jensen_trials: 100_000,
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

fn parse_point(key: &str, value: &str) -> Result<DiskPoint> {
    match parse_list(key, value)?.as_slice() {
        &[x, y] => DiskPoint::new(x, y).map_err(|e| Error::Config(format!("`{key}`: {e}"))),
        _ => Err(Error::Config(format!("`{key}` expects two coordinates, got `{value}`"))),
    }
}

fn parse_int<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("`{key}` expects a non-negative integer, got `{value}`")))
}

impl FlowConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "centers" => {
                    let coords = parse_list(key, value)?;
                    if coords.len() % 2 != 0 {
                        return Err(Error::Config("`centers` needs coordinate pairs".into()));
                    }
                    c.centers = coords
                        .chunks(2)
                        .map(|p| DiskPoint::new(p[0], p[1]).map_err(|e| Error::Config(format!("`centers`: {e}"))))
                        .collect::<Result<_>>()?;
                }
                "amplitudes" => c.amplitudes = parse_list(key, value)?,
                "width" => c.width = parse_f64(key, value)?,
                "grid_spacing" => c.grid_spacing = parse_f64(key, value)?,
                "dt_flow" => c.dt_flow = parse_f64(key, value)?,
                "total_flow_time" => c.total_flow_time = parse_f64(key, value)?,
                "checkpoint_interval" => c.checkpoint_interval = parse_f64(key, value)?,
                "n_samples" => c.n_samples = parse_int(key, value)?,
                "burn_in" => c.burn_in = parse_f64(key, value)?,
                "dt_geodesic" => c.dt_geodesic = parse_f64(key, value)?,
                "horizon" => c.horizon = parse_f64(key, value)?,
                "seed" => c.seed = parse_int(key, value)?,
                "fd_eps_entropy" => c.fd_eps_entropy = parse_f64(key, value)?,
                "fd_eps_kappa" => c.fd_eps_kappa = parse_f64(key, value)?,
                "psi_center" => c.psi_center = parse_point(key, value)?,
                "psi_amplitude" => c.psi_amplitude = parse_f64(key, value)?,
                "psi_width" => c.psi_width = parse_f64(key, value)?,
                "identity_samples" => c.identity_samples = parse_int(key, value)?,
                "jensen_trials" => c.jensen_trials = parse_int(key, value)?,
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Reads and parses a file; a missing file is reported with its path.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("grid_spacing", self.grid_spacing),
            ("dt_flow", self.dt_flow),
            ("total_flow_time", self.total_flow_time),
            ("checkpoint_interval", self.checkpoint_interval),
            ("burn_in", self.burn_in),
            ("dt_geodesic", self.dt_geodesic),
            ("horizon", self.horizon),
            ("fd_eps_entropy", self.fd_eps_entropy),
            ("fd_eps_kappa", self.fd_eps_kappa),
            ("psi_width", self.psi_width),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{key}` must be positive, got {v}")));
            }
        }
        if self.centers.len() != self.amplitudes.len() {
            return Err(Error::Config(format!(
                "{} centers but {} amplitudes",
                self.centers.len(),
                self.amplitudes.len()
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::Config("`n_samples` must be at least 2".into()));
        }
        if self.checkpoint_interval > self.total_flow_time {
            return Err(Error::Config("`checkpoint_interval` exceeds `total_flow_time`".into()));
        }
        Ok(())
    }

    pub fn geodesic_params(&self) -> GeodesicParams {
        GeodesicParams {
            burn_in: self.burn_in,
            dt: self.dt_geodesic,
            horizon: self.horizon,
            ..GeodesicParams::default()
        }
    }

    /// Initial field; the hyperbolic metric when no bump has non-zero amplitude.
    pub fn initial_field(&self) -> Result<ConformalField> {
        let lattice = Arc::new(Lattice::new(bolza_atlas(), self.grid_spacing)?);
        if self.amplitudes.iter().all(|&a| a == 0.0) {
            return ConformalField::hyperbolic(lattice);
        }
        let spec = BumpSpec::new(lattice.atlas(), self.centers.clone(), self.amplitudes.clone(), self.width)?;
        field_from_bumps(lattice, &spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let c = FlowConfig::parse("# run\nseed = 9  # trailing\n\ncenters = 0.1 0.0; -0.2 0.1\namplitudes = 0.05, 0.02\n")
            .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.centers.len(), 2);
        assert_eq!(c.amplitudes, vec![0.05, 0.02]);
        assert_eq!(c.width, 0.5);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(FlowConfig::parse("colour = red"), Err(Error::Config(_))));
        assert!(matches!(FlowConfig::parse("dt_flow"), Err(Error::Config(_))));
        assert!(matches!(FlowConfig::parse("dt_flow = -1"), Err(Error::Config(_))));
        assert!(matches!(FlowConfig::parse("amplitudes = 0.1 0.2"), Err(Error::Config(_))));
        assert!(matches!(FlowConfig::parse("n_samples = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = FlowConfig::load(Path::new("/no/such/run.cfg")).unwrap_err();
        assert!(err.to_string().contains("/no/such/run.cfg"));
    }

    #[test]
    fn zero_amplitude_gives_the_hyperbolic_field() {
        let c = FlowConfig::parse("amplitudes = 0").unwrap();
        let f = c.initial_field().unwrap();
        assert!(f.values().iter().filter(|v| v.is_finite()).all(|&v| v == 0.0));
    }
}
