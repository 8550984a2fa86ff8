//! Coarse initial state handed to a tracker instance.

use thiserror::Error;

use crate::geometry::{GeometryError, HomographyParams};
use crate::phase::Zeta;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitError {
    #[error("initial rpm must be > 0, got {0}")]
    InvalidRpm(f64),
    #[error("blade count must be >= 1")]
    InvalidBladeCount,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("init line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerInit {
    pub q0: HomographyParams,
    /// Initial shaft RPM guess.
    pub rpm0: f64,
    pub blades: u32,
    /// Estimated from the stream prefix when `None`.
    pub zeta: Option<Zeta>,
}

impl TrackerInit {
    pub fn new(
        q0: HomographyParams,
        rpm0: f64,
        blades: u32,
        zeta: Option<Zeta>,
    ) -> Result<Self, InitError> {
        let init = Self {
            q0,
            rpm0,
            blades,
            zeta,
        };
        init.validate()?;
        Ok(init)
    }

    pub fn validate(&self) -> Result<(), InitError> {
        if !(self.rpm0 > 0.0) || !self.rpm0.is_finite() {
            return Err(InitError::InvalidRpm(self.rpm0));
        }
        if self.blades == 0 {
            return Err(InitError::InvalidBladeCount);
        }
        self.q0.validate()?;
        Ok(())
    }

    /// Blade-phase angular speed (rad/s) implied by `rpm0` and the sign.
    pub fn omega0(&self) -> f64 {
        self.rpm0 * self.blades as f64 * std::f64::consts::TAU / 60.0
    }

    /// `key=value` lines: `blades`, `rpm0`, `zeta` (1, -1 or auto) and
    /// `q = s,psi,tx,ty,p31,p32`.
    pub fn to_text(&self) -> String {
        let q = self.q0.to_array();
        let zeta = match self.zeta {
            Some(z) => (z.sign() as i64).to_string(),
            None => "auto".to_string(),
        };
        format!(
            "blades={}\nrpm0={}\nzeta={}\nq={},{},{},{},{},{}\n",
            self.blades, self.rpm0, zeta, q[0], q[1], q[2], q[3], q[4], q[5]
        )
    }

    pub fn from_text(text: &str) -> Result<Self, InitError> {
        let (mut blades, mut rpm0, mut zeta, mut q) = (None, None, None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| InitError::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key=value"))?;
            let v = v.trim();
            match k.trim() {
                "blades" => blades = Some(v.parse::<u32>().map_err(|_| bad("bad blade count"))?),
                "rpm0" => rpm0 = Some(v.parse::<f64>().map_err(|_| bad("bad rpm0"))?),
                "zeta" => {
                    zeta = Some(match v {
                        "auto" => None,
                        _ => Some(
                            v.parse::<i64>()
                                .ok()
                                .and_then(Zeta::from_sign)
                                .ok_or_else(|| bad("zeta must be 1, -1 or auto"))?,
                        ),
                    })
                }
                "q" => {
                    let a: Vec<f64> = v
                        .split(',')
                        .map(|x| x.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("bad q component"))?;
                    let a: [f64; 6] = a.try_into().map_err(|_| bad("q needs 6 components"))?;
                    q = Some(HomographyParams::new(a[0], a[1], a[2], a[3], a[4], a[5]));
                }
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| InitError::Parse {
            line: 0,
            msg: format!("missing `{k}`"),
        };
        Self::new(
            q.ok_or_else(|| missing("q"))?,
            rpm0.ok_or_else(|| missing("rpm0"))?,
            blades.ok_or_else(|| missing("blades"))?,
            zeta.unwrap_or(None),
        )
    }
}
