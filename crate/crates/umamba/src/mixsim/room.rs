//! Shoebox room sampling: dimensions, reverberation time, receiver and
//! source placement, and the Sabine inversion from target decay time to a
//! uniform wall absorption coefficient.

use rand::Rng;

use crate::{Error, Result};

/// Sampling intervals for every randomized room quantity. Units: meters,
/// seconds, radians.
#[derive(Clone, Debug)]
pub struct RoomConfig {
    pub length: (f64, f64),
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub t60: (f64, f64),
    /// Receiver offset about the room center, per horizontal axis.
    pub receiver_offset: f64,
    pub receiver_height: (f64, f64),
    pub source_height: (f64, f64),
    pub source_distance: (f64, f64),
}

impl Default for RoomConfig {
    fn default() -> Self {
        RoomConfig {
            length: (5.0, 10.0),
            width: (5.0, 10.0),
            height: (3.0, 4.0),
            t60: (0.2, 0.6),
            receiver_offset: 0.2,
            receiver_height: (0.9, 1.8),
            source_height: (0.9, 1.8),
            source_distance: (0.66, 2.0),
        }
    }
}

/// One concrete room: geometry, target decay time, positions, and the
/// Sabine absorption that seeds impulse-response synthesis.
#[derive(Clone, Debug)]
pub struct RoomInstance {
    /// (length, width, height) in meters.
    pub dims: [f64; 3],
    pub t60: f64,
    pub receiver: [f64; 3],
    pub sources: Vec<[f64; 3]>,
    pub absorption: f64,
}

/// Keep a coordinate this far inside the walls.
pub const WALL_MARGIN: f64 = 0.1;

fn clamp_inside(p: [f64; 3], dims: [f64; 3]) -> [f64; 3] {
    let mut out = p;
    for i in 0..3 {
        out[i] = out[i].clamp(WALL_MARGIN, dims[i] - WALL_MARGIN);
    }
    out
}

/// Uniform absorption from Sabine's formula: alpha = 0.161 V / (S t60).
/// Rooms too small to sustain the requested decay are rejected.
pub fn sabine_absorption(dims: [f64; 3], t60: f64) -> Result<f64> {
    if t60 <= 0.0 {
        return Err(Error::invalid(format!(
            "decay time must be positive, got {t60}"
        )));
    }
    let [l, w, h] = dims;
    let volume = l * w * h;
    let surface = 2.0 * (l * w + l * h + w * h);
    let alpha = 0.161 * volume / (surface * t60);
    if alpha >= 1.0 {
        return Err(Error::invalid(format!(
            "room {l:.2}x{w:.2}x{h:.2} m cannot decay in {t60} s: absorption {alpha:.3} >= 1"
        )));
    }
    Ok(alpha)
}

/// Draw one room with `n_sources` talker positions around the receiver.
/// The draw order is fixed, so a given rng state maps to exactly one room.
pub fn sample_room<R: Rng>(config: &RoomConfig, n_sources: usize, rng: &mut R) -> Result<RoomInstance> {
    let dims = [
        rng.gen_range(config.length.0..config.length.1),
        rng.gen_range(config.width.0..config.width.1),
        rng.gen_range(config.height.0..config.height.1),
    ];
    let t60 = rng.gen_range(config.t60.0..config.t60.1);
    let receiver = clamp_inside(
        [
            dims[0] / 2.0 + rng.gen_range(-config.receiver_offset..config.receiver_offset),
            dims[1] / 2.0 + rng.gen_range(-config.receiver_offset..config.receiver_offset),
            rng.gen_range(config.receiver_height.0..config.receiver_height.1),
        ],
        dims,
    );
    let sources = (0..n_sources)
        .map(|_| {
            let height = rng.gen_range(config.source_height.0..config.source_height.1);
            let distance = rng.gen_range(config.source_distance.0..config.source_distance.1);
            let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
            clamp_inside(
                [
                    receiver[0] + distance * azimuth.cos(),
                    receiver[1] + distance * azimuth.sin(),
                    height,
                ],
                dims,
            )
        })
        .collect();
    let absorption = sabine_absorption(dims, t60)?;
    Ok(RoomInstance {
        dims,
        t60,
        receiver,
        sources,
        absorption,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    #[test]
    fn sabine_known_value_and_scaling() {
        // V = 400, S = 2(100 + 40 + 40) = 360
        let alpha = sabine_absorption([10.0, 10.0, 4.0], 0.2).unwrap();
        assert!((alpha - 0.161 * 400.0 / (360.0 * 0.2)).abs() < 1e-12);
        assert!((alpha - 0.894444).abs() < 1e-5);

        let half = sabine_absorption([10.0, 10.0, 4.0], 0.4).unwrap();
        assert!((alpha - 2.0 * half).abs() < 1e-12);

        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let t = 0.2 + 0.4 * k as f64 / 19.0;
            let a = sabine_absorption([7.0, 6.0, 3.5], t).unwrap();
            assert!(a < prev);
            prev = a;
        }

        assert!(sabine_absorption([1.0, 1.0, 1.0], 0.02).is_err());
        assert!(sabine_absorption([5.0, 5.0, 3.0], 0.0).is_err());
        assert!(sabine_absorption([5.0, 5.0, 3.0], -1.0).is_err());
    }

    #[test]
    fn sampled_rooms_respect_every_interval() {
        let config = RoomConfig::default();
        let mut rng = seeded_rng(7, &[2]);
        for _ in 0..10_000 {
            let room = sample_room(&config, 2, &mut rng).unwrap();
            assert!(room.dims[0] >= 5.0 && room.dims[0] <= 10.0);
            assert!(room.dims[1] >= 5.0 && room.dims[1] <= 10.0);
            assert!(room.dims[2] >= 3.0 && room.dims[2] <= 4.0);
            assert!(room.t60 >= 0.2 && room.t60 <= 0.6);
            assert!(room.absorption > 0.0 && room.absorption < 1.0);
            for p in std::iter::once(&room.receiver).chain(&room.sources) {
                for i in 0..3 {
                    assert!(p[i] >= WALL_MARGIN && p[i] <= room.dims[i] - WALL_MARGIN);
                }
            }
            let dr = room.receiver;
            assert!(dr[2] >= 0.9 && dr[2] <= 1.8);
            assert!((dr[0] - room.dims[0] / 2.0).abs() <= 0.2 + 1e-12);
            assert!((dr[1] - room.dims[1] / 2.0).abs() <= 0.2 + 1e-12);
        }
    }

    #[test]
    fn t60_mean_matches_uniform_law() {
        let config = RoomConfig::default();
        let mut rng = seeded_rng(11, &[2]);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| sample_room(&config, 2, &mut rng).unwrap().t60)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.4).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn fixed_seed_reproduces_the_room_bit_exactly() {
        let config = RoomConfig::default();
        let a = sample_room(&config, 3, &mut seeded_rng(42, &[2])).unwrap();
        let b = sample_room(&config, 3, &mut seeded_rng(42, &[2])).unwrap();
        assert_eq!(a.dims, b.dims);
        assert_eq!(a.t60, b.t60);
        assert_eq!(a.receiver, b.receiver);
        assert_eq!(a.sources, b.sources);
        assert_eq!(a.absorption, b.absorption);
    }
}
