use serde::{Deserialize, Serialize};

use super::model::{role_of, LayerNumerics, LayerRole};
use crate::bfp::QuantConfig;
use crate::error::{Error, Result};

/// Mixed-mantissa schedule: a narrow default format everywhere, a wider
/// boost format in the final epochs and (optionally) the first and last
/// layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoosterSchedule {
    pub default_cfg: QuantConfig,
    pub boost_cfg: QuantConfig,
    pub boost_last_epochs: usize,
    pub boost_first_last_layers: bool,
}

impl Default for BoosterSchedule {
    fn default() -> Self {
        Self {
            default_cfg: QuantConfig::hbfp(4, 64).expect("valid"),
            boost_cfg: QuantConfig::hbfp(6, 64).expect("valid"),
            boost_last_epochs: 1,
            boost_first_last_layers: true,
        }
    }
}

impl BoosterSchedule {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        self.default_cfg.validate()?;
        self.boost_cfg.validate()?;
        if self.boost_cfg.mantissa_bits < self.default_cfg.mantissa_bits {
            return Err(Error::InvalidConfig(
                "boost format must not be narrower than the default".into(),
            ));
        }
        if self.boost_last_epochs > epochs {
            return Err(Error::InvalidConfig(format!(
                "boost_last_epochs {} exceeds epochs {epochs}",
                self.boost_last_epochs
            )));
        }
        Ok(())
    }
}

/// Format for one layer in one epoch.
pub fn schedule_lookup(
    s: &BoosterSchedule,
    epoch: usize,
    epochs: usize,
    role: LayerRole,
) -> QuantConfig {
    let late = epoch + s.boost_last_epochs >= epochs;
    let edge = s.boost_first_last_layers && role != LayerRole::Middle;
    if late || edge {
        s.boost_cfg
    } else {
        s.default_cfg
    }
}

/// How GEMMs are computed during a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NumericMode {
    Fp32,
    Hbfp(QuantConfig),
    Booster(BoosterSchedule),
}

impl Default for NumericMode {
    fn default() -> Self {
        Self::Fp32
    }
}

impl NumericMode {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        match self {
            Self::Fp32 => Ok(()),
            Self::Hbfp(c) => c.validate(),
            Self::Booster(s) => s.validate(epochs),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Fp32 => "fp32".into(),
            Self::Hbfp(c) => c.label(),
            Self::Booster(s) => format!("booster({}/{})", s.default_cfg.label(), s.boost_cfg.label()),
        }
    }

    pub fn layer_numerics(&self, epoch: usize, epochs: usize, num_layers: usize) -> Vec<LayerNumerics> {
        (0..num_layers)
            .map(|i| match self {
                Self::Fp32 => None,
                Self::Hbfp(c) => Some(*c),
                Self::Booster(s) => Some(schedule_lookup(s, epoch, epochs, role_of(i, num_layers))),
            })
            .collect()
    }
}

/// Label for one GEMM's numerics in reports and MAC accounting.
pub fn numerics_label(n: &LayerNumerics) -> String {
    n.map_or_else(|| "fp32".into(), |c| c.label())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_examples() {
        let s = BoosterSchedule::default();
        assert_eq!(schedule_lookup(&s, 0, 10, LayerRole::Middle).mantissa_bits, 4);
        assert_eq!(schedule_lookup(&s, 9, 10, LayerRole::Middle).mantissa_bits, 6);
        assert_eq!(schedule_lookup(&s, 8, 10, LayerRole::Middle).mantissa_bits, 4);
        assert_eq!(schedule_lookup(&s, 0, 10, LayerRole::First).mantissa_bits, 6);
        assert_eq!(schedule_lookup(&s, 0, 10, LayerRole::Last).mantissa_bits, 6);
    }

    #[test]
    fn boost_window() {
        let s = BoosterSchedule {
            boost_last_epochs: 10,
            boost_first_last_layers: false,
            ..Default::default()
        };
        let widths: Vec<u8> = (0..100)
            .map(|e| schedule_lookup(&s, e, 100, LayerRole::First).mantissa_bits)
            .collect();
        assert!(widths[..90].iter().all(|&m| m == 4));
        assert!(widths[90..].iter().all(|&m| m == 6));
    }

    #[test]
    fn validation() {
        let s = BoosterSchedule::default();
        assert!(s.validate(1).is_ok());
        assert!(s.validate(0).is_err());
        let narrow = BoosterSchedule {
            boost_cfg: QuantConfig::hbfp(3, 64).unwrap(),
            ..s
        };
        assert!(narrow.validate(5).is_err());
    }

    #[test]
    fn mode_json() {
        let m: NumericMode =
            serde_json::from_str(r#"{"mode":"hbfp","mantissa_bits":6,"block_size":64}"#).unwrap();
        assert_eq!(m, NumericMode::Hbfp(QuantConfig::hbfp(6, 64).unwrap()));
        let b: NumericMode = serde_json::from_str(
            r#"{"mode":"booster","default_cfg":{"mantissa_bits":4,"block_size":64},
                "boost_cfg":{"mantissa_bits":6,"block_size":64},
                "boost_last_epochs":1,"boost_first_last_layers":true}"#,
        )
        .unwrap();
        assert_eq!(b, NumericMode::Booster(BoosterSchedule::default()));
        let back: NumericMode = serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
        assert_eq!(back, b);
    }
}
