//! Machine words of a configurable bit width.
//!
//! The interpreter and the brute-force oracle run at the same reduced widths
//! the solver searches at, so every operation here takes a [`Width`] and
//! keeps values in `0..2^width`.

use std::fmt;

pub use ruint::aliases::U256;

use crate::isa::opcodes::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Width(u32);

impl Width {
    pub const FULL: Width = Width(256);

    pub fn new(bits: u32) -> Option<Width> {
        (1..=256).contains(&bits).then_some(Width(bits))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn mask(self) -> U256 {
        if self.0 == 256 {
            U256::MAX
        } else {
            (U256::from(1u8) << self.0 as usize) - U256::from(1u8)
        }
    }

    /// True when `v` is representable in this width.
    pub fn fits(self, v: U256) -> bool {
        v <= self.mask()
    }

    pub fn truncate(self, v: U256) -> U256 {
        v & self.mask()
    }

    fn sign_bit(self) -> U256 {
        U256::from(1u8) << (self.0 as usize - 1)
    }

    pub fn is_negative(self, v: U256) -> bool {
        v & self.sign_bit() != U256::ZERO
    }

    pub fn neg(self, v: U256) -> U256 {
        self.truncate((!v).wrapping_add(U256::from(1u8)))
    }

    fn abs(self, v: U256) -> U256 {
        if self.is_negative(v) {
            self.neg(v)
        } else {
            v
        }
    }

    /// `2^bits - 1`, i.e. all ones.
    pub fn max_value(self) -> U256 {
        self.mask()
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn bool_word(b: bool) -> U256 {
    if b {
        U256::from(1u8)
    } else {
        U256::ZERO
    }
}

/// Applies an interpreted arithmetic, comparison or bitwise instruction.
/// `a` is the top of the stack, `b` the word below it (ignored by unary
/// instructions). Returns `None` for opcodes that are not of that kind.
pub fn apply(opcode: u8, a: U256, b: U256, w: Width) -> Option<U256> {
    let a = w.truncate(a);
    let b = w.truncate(b);
    let r = match opcode {
        ADD => a.wrapping_add(b),
        SUB => a.wrapping_sub(b),
        MUL => a.wrapping_mul(b),
        DIV => {
            if b == U256::ZERO {
                U256::ZERO
            } else {
                a / b
            }
        }
        SDIV => {
            if b == U256::ZERO {
                U256::ZERO
            } else {
                let q = w.abs(a) / w.abs(b);
                if w.is_negative(a) != w.is_negative(b) {
                    w.neg(q)
                } else {
                    q
                }
            }
        }
        MOD => {
            if b == U256::ZERO {
                U256::ZERO
            } else {
                a % b
            }
        }
        SMOD => {
            if b == U256::ZERO {
                U256::ZERO
            } else {
                let r = w.abs(a) % w.abs(b);
                if w.is_negative(a) {
                    w.neg(r)
                } else {
                    r
                }
            }
        }
        LT => bool_word(a < b),
        GT => bool_word(a > b),
        SLT => bool_word((a ^ w.sign_bit()) < (b ^ w.sign_bit())),
        SGT => bool_word((a ^ w.sign_bit()) > (b ^ w.sign_bit())),
        EQ => bool_word(a == b),
        ISZERO => bool_word(a == U256::ZERO),
        AND => a & b,
        OR => a | b,
        XOR => a ^ b,
        NOT => !a,
        _ => return None,
    };
    Some(w.truncate(r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(v: u64) -> U256 {
        U256::from(v)
    }

    #[test]
    fn wraparound_at_small_width() {
        let w = Width::new(2).unwrap();
        assert_eq!(apply(ADD, u(3), u(1), w), Some(u(0)));
        assert_eq!(apply(SUB, u(0), u(1), w), Some(u(3)));
        assert_eq!(apply(NOT, u(1), u(0), w), Some(u(2)));
        assert_eq!(apply(MUL, u(3), u(3), w), Some(u(1)));
    }

    #[test]
    fn signed_ops_match_twos_complement() {
        // Exhaustive check at width 4 against i8 arithmetic.
        let w = Width::new(4).unwrap();
        let signed = |v: u64| -> i64 {
            if v >= 8 {
                v as i64 - 16
            } else {
                v as i64
            }
        };
        let enc = |v: i64| -> U256 { u(v.rem_euclid(16) as u64) };
        for a in 0..16u64 {
            for b in 0..16u64 {
                let (sa, sb) = (signed(a), signed(b));
                let slt = apply(SLT, u(a), u(b), w).unwrap();
                assert_eq!(slt, bool_word(sa < sb));
                let sgt = apply(SGT, u(a), u(b), w).unwrap();
                assert_eq!(sgt, bool_word(sa > sb));
                let sdiv = apply(SDIV, u(a), u(b), w).unwrap();
                let smod = apply(SMOD, u(a), u(b), w).unwrap();
                if sb == 0 {
                    assert_eq!(sdiv, U256::ZERO);
                    assert_eq!(smod, U256::ZERO);
                } else {
                    // truncating division, overflow wraps
                    assert_eq!(sdiv, enc(sa.wrapping_div(sb)), "{sa}/{sb}");
                    assert_eq!(smod, enc(sa.wrapping_rem(sb)), "{sa}%{sb}");
                }
            }
        }
    }

    #[test]
    fn full_width_edges() {
        let w = Width::FULL;
        assert_eq!(apply(ADD, U256::MAX, u(1), w), Some(U256::ZERO));
        assert_eq!(apply(DIV, u(7), U256::ZERO, w), Some(U256::ZERO));
        let min = U256::from(1u8) << 255;
        assert_eq!(apply(SDIV, min, U256::MAX, w), Some(min));
        assert_eq!(apply(SLT, min, u(0), w), Some(u(1)));
    }
}
