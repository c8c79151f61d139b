//! Counter-based keyed randomness.
//!
//! Every random quantity is a pure function of a key tuple, so one value can
//! be replayed without touching any other. Deviation experiments rely on this:
//! redrawing a single doctor's interview values leaves every other pair's
//! value bit-identical.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const INIT: u64 = 0x243F_6A88_85A3_08D3;
const REDRAW_TAG: u64 = 0x5245_4452_4157_0000;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a key tuple to 64 uniformly distributed bits.
#[inline]
pub fn keyed_bits(words: &[u64]) -> u64 {
    words.iter().fold(INIT, |h, &w| splitmix(h ^ w))
}

/// Hashes a key tuple to a uniform draw in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn keyed_unit(words: &[u64]) -> f64 {
    (keyed_bits(words) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Stream identifiers for ratings.
pub(crate) const STREAM_DOCTOR_RATING: u64 = 1;
pub(crate) const STREAM_HOSPITAL_RATING: u64 = 2;

/// Pairwise value families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueKind {
    /// Doctor's private value for a hospital, known before interviews.
    PrivateDh,
    /// Doctor's interview value for a hospital.
    InterviewDh,
    /// Hospital's interview value for a doctor.
    InterviewHd,
    /// Hospital's private value for a doctor (request-interview grants).
    PrivateHd,
}

impl ValueKind {
    fn tag(self) -> u64 {
        match self {
            ValueKind::PrivateDh => 10,
            ValueKind::InterviewDh => 11,
            ValueKind::InterviewHd => 12,
            ValueKind::PrivateHd => 13,
        }
    }

    pub fn is_interview(self) -> bool {
        matches!(self, ValueKind::InterviewDh | ValueKind::InterviewHd)
    }
}

/// Replays fresh interview values for one doctor's pairs (both directions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redraw {
    pub doctor: usize,
    pub replicate: u64,
}

/// Deterministic map `(seed, run, kind, doctor, hospital) -> [0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueOracle {
    pub seed: u64,
    pub run: u64,
    pub redraw: Option<Redraw>,
}

impl ValueOracle {
    pub fn new(seed: u64, run: u64) -> Self {
        Self { seed, run, redraw: None }
    }

    pub fn value(&self, kind: ValueKind, doctor: usize, hospital: usize) -> f64 {
        match self.redraw {
            Some(r) if r.doctor == doctor && kind.is_interview() => keyed_unit(&[
                self.seed,
                self.run,
                kind.tag(),
                doctor as u64,
                hospital as u64,
                REDRAW_TAG,
                r.replicate,
            ]),
            _ => keyed_unit(&[self.seed, self.run, kind.tag(), doctor as u64, hospital as u64]),
        }
    }
}
