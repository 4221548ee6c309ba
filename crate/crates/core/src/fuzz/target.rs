use std::fmt;

use serde::{Deserialize, Serialize};

use super::FuzzError;

/// A program under differential analysis: `cost` must be a pure function of
/// the public input `x` and the secret `z`.
pub trait DifferentialTarget: Send + Sync {
    fn name(&self) -> String;
    fn public_len(&self) -> usize;
    fn secret_len(&self) -> usize;
    fn cost(&self, x: &[u8], z: &[u8]) -> u64;
}

/// Built-in synthetic cost oracles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    /// Cost proportional to the number of set bits in the low `width` bits
    /// of the secret.
    LeakSet { width: u32, unit_cost: u64 },
    /// Early-exit byte comparison of the guess `x` against the secret.
    StringEquals { len: usize, base: u64, per_char: u64 },
    /// Constant cost.
    Straightline { const_cost: u64 },
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::LeakSet { width, unit_cost } => write!(f, "leak_set({width},{unit_cost})"),
            TargetSpec::StringEquals { len, base, per_char } => {
                write!(f, "string_equals({len},{base},{per_char})")
            }
            TargetSpec::Straightline { const_cost } => write!(f, "straightline({const_cost})"),
        }
    }
}

impl TargetSpec {
    pub fn validate(&self) -> Result<(), FuzzError> {
        match *self {
            TargetSpec::LeakSet { width, unit_cost } => {
                if !(12..=32).contains(&width) {
                    return Err(FuzzError::InvalidTarget(format!(
                        "leak_set width must be in 12..=32, got {width}"
                    )));
                }
                if unit_cost == 0 {
                    return Err(FuzzError::InvalidTarget("leak_set unit_cost must be positive".into()));
                }
            }
            TargetSpec::StringEquals { len, per_char, .. } => {
                if len == 0 || per_char == 0 {
                    return Err(FuzzError::InvalidTarget(
                        "string_equals len and per_char must be positive".into(),
                    ));
                }
            }
            TargetSpec::Straightline { .. } => {}
        }
        Ok(())
    }

    /// Largest cost difference the target can produce.
    pub fn max_delta(&self) -> u64 {
        match *self {
            TargetSpec::LeakSet { width, unit_cost } => u64::from(width) * unit_cost,
            TargetSpec::StringEquals { len, per_char, .. } => len as u64 * per_char,
            TargetSpec::Straightline { .. } => 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuiltinTarget {
    spec: TargetSpec,
}

impl BuiltinTarget {
    pub fn spec(&self) -> &TargetSpec {
        &self.spec
    }
}

pub fn builtin_target(spec: &TargetSpec) -> Result<BuiltinTarget, FuzzError> {
    spec.validate()?;
    Ok(BuiltinTarget { spec: spec.clone() })
}

impl DifferentialTarget for BuiltinTarget {
    fn name(&self) -> String {
        self.spec.to_string()
    }

    fn public_len(&self) -> usize {
        match self.spec {
            TargetSpec::StringEquals { len, .. } => len,
            _ => 1,
        }
    }

    fn secret_len(&self) -> usize {
        match self.spec {
            TargetSpec::LeakSet { width, .. } => width.div_ceil(8) as usize,
            TargetSpec::StringEquals { len, .. } => len,
            TargetSpec::Straightline { .. } => 1,
        }
    }

    fn cost(&self, x: &[u8], z: &[u8]) -> u64 {
        match self.spec {
            TargetSpec::LeakSet { width, unit_cost } => {
                let mut bits = 0u64;
                for (i, b) in z.iter().take(4).enumerate() {
                    bits |= u64::from(*b) << (8 * i);
                }
                let mask = (1u64 << width) - 1;
                unit_cost * u64::from((bits & mask).count_ones())
            }
            TargetSpec::StringEquals { len, base, per_char } => {
                let matched = x.iter().zip(z).take(len).take_while(|(a, b)| a == b).count();
                base + per_char * (matched as u64 + 1)
            }
            TargetSpec::Straightline { const_cost } => const_cost,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leak_set_cost() {
        let t = builtin_target(&TargetSpec::LeakSet { width: 12, unit_cost: 100 }).unwrap();
        assert_eq!(t.secret_len(), 2);
        // 0b1_0110_0011 has 5 set bits
        assert_eq!(t.cost(&[0], &[0b0110_0011, 0b0000_0001]), 500);
        // bits above the width are ignored
        assert_eq!(t.cost(&[0], &[0xff, 0xff]), 1200);
        assert_eq!(t.cost(&[0], &[0, 0]), 0);
        assert_eq!(t.spec().max_delta(), 1200);
    }

    #[test]
    fn leak_set_width_range() {
        for w in [11, 33] {
            assert!(builtin_target(&TargetSpec::LeakSet { width: w, unit_cost: 1 }).is_err());
        }
        let t = builtin_target(&TargetSpec::LeakSet { width: 32, unit_cost: 1 }).unwrap();
        assert_eq!(t.cost(&[], &[0xff; 4]), 32);
    }

    #[test]
    fn string_equals_cost() {
        let t = builtin_target(&TargetSpec::StringEquals { len: 32, base: 5, per_char: 3 }).unwrap();
        let z = [7u8; 32];
        assert_eq!(t.cost(&z, &z), 5 + 3 * 33);
        let mut x = z;
        x[0] = 8;
        assert_eq!(t.cost(&x, &z), 5 + 3);
        x = z;
        x[10] = 0;
        assert_eq!(t.cost(&x, &z), 5 + 3 * 11);
    }

    #[test]
    fn straightline_is_flat() {
        let t = builtin_target(&TargetSpec::Straightline { const_cost: 42 }).unwrap();
        assert_eq!(t.cost(&[1], &[2]), t.cost(&[3], &[4]));
    }

    #[test]
    fn spec_json_shape() {
        let s = TargetSpec::LeakSet { width: 12, unit_cost: 100 };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"kind":"leak_set","width":12,"unit_cost":100}"#);
        assert_eq!(serde_json::from_str::<TargetSpec>(&json).unwrap(), s);
        assert_eq!(s.to_string(), "leak_set(12,100)");
    }
}
