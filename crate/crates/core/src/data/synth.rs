//! Synthetic 12-lead ECGs.
//!
//! Each beat is a sum of Gaussian bumps: a P wave, a Q-R-S triplet and a T
//! wave. Lead amplitudes come from projecting each wave's electrical axis on
//! the lead direction, so the leads are correlated the way real ones are.
//! Rhythm profiles differ in their RR process and wave morphology.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::record::{EcgRecord, LabelSet, Rhythm, Scheme, Superclass, DEFAULT_RATE_HZ};
use crate::error::{Error, Result};
use crate::models::{Demographics, Sex};
use crate::tensor::Tensor;

pub const MIN_LENGTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Profile {
    Sr,
    AfibLike,
    SbLike,
    GsvtLike,
    WideQrs,
}

impl Profile {
    pub const ALL: [Profile; 5] = [
        Profile::Sr,
        Profile::AfibLike,
        Profile::SbLike,
        Profile::GsvtLike,
        Profile::WideQrs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Sr => "SR",
            Profile::AfibLike => "AFIB-like",
            Profile::SbLike => "SB-like",
            Profile::GsvtLike => "GSVT-like",
            Profile::WideQrs => "wide-QRS",
        }
    }

    /// Label of this profile under a task.
    pub fn label(self, scheme: Scheme) -> Result<LabelSet> {
        Ok(match (scheme, self) {
            (Scheme::Binary, p) => LabelSet::Binary {
                abnormal: p != Profile::Sr,
            },
            (Scheme::Multiclass4, Profile::Sr) => LabelSet::Multiclass(Rhythm::Sr),
            (Scheme::Multiclass4, Profile::AfibLike) => LabelSet::Multiclass(Rhythm::Afib),
            (Scheme::Multiclass4, Profile::SbLike) => LabelSet::Multiclass(Rhythm::Sb),
            (Scheme::Multiclass4, Profile::GsvtLike) => LabelSet::Multiclass(Rhythm::Gsvt),
            (Scheme::Multilabel5, Profile::Sr) => LabelSet::multilabel(&[Superclass::Norm])?,
            (Scheme::Multilabel5, Profile::WideQrs) => LabelSet::multilabel(&[Superclass::Cd])?,
            (s, p) => {
                return Err(Error::Parameter(format!("profile {p} has no {s} label")));
            }
        })
    }

    /// Mean RR interval in seconds.
    pub fn mean_rr(self) -> f64 {
        match self {
            Profile::Sr | Profile::WideQrs => 0.8,
            Profile::AfibLike => 0.7,
            Profile::SbLike => 1.3,
            Profile::GsvtLike => 0.42,
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown profile '{s}'; expected one of {}",
                    Profile::ALL.map(Profile::as_str).join(", ")
                ))
            })
    }
}

/// Parses a comma-separated profile list.
pub fn parse_profiles(s: &str) -> Result<Vec<Profile>> {
    let v: Vec<Profile> = s.split(',').map(str::parse).collect::<Result<_>>()?;
    let mut seen = v.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != v.len() {
        return Err(Error::Parameter(format!("duplicate profile in '{s}'")));
    }
    Ok(v)
}

/// Task implied by a profile set: binary when it is SR against one other
/// profile, four-class rhythm when it only holds rhythm profiles.
pub fn infer_scheme(profiles: &[Profile]) -> Result<Scheme> {
    if profiles.len() == 2 && profiles.contains(&Profile::Sr) {
        return Ok(Scheme::Binary);
    }
    if !profiles.contains(&Profile::WideQrs) && !profiles.is_empty() {
        return Ok(Scheme::Multiclass4);
    }
    if profiles.iter().all(|p| matches!(p, Profile::Sr | Profile::WideQrs)) {
        return Ok(Scheme::Binary);
    }
    Err(Error::Parameter(format!(
        "cannot infer a task for profiles {}",
        profiles.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(",")
    )))
}

/// Frontal/horizontal lead directions in degrees and gains for the 12
/// standard leads (I, II, III, aVR, aVL, aVF, V1-V6).
const LEAD_GEOMETRY: [(f64, f64); 12] = [
    (0.0, 1.0),
    (60.0, 1.0),
    (120.0, 1.0),
    (-150.0, 1.0),
    (-30.0, 1.0),
    (90.0, 1.0),
    (-100.0, 0.9),
    (-80.0, 1.2),
    (-40.0, 1.5),
    (0.0, 1.6),
    (30.0, 1.4),
    (50.0, 1.1),
];

#[derive(Debug, Clone, Copy)]
struct Morphology {
    p_amp: f64,
    qrs_width: f64,
    r_amp: f64,
    t_amp: f64,
    /// Electrical axes in degrees for P, QRS and T.
    axes: [f64; 3],
}

fn lead_gain(lead: usize, axis: f64) -> f64 {
    let (dir, g) = LEAD_GEOMETRY[lead % 12];
    (dir - axis).to_radians().cos() * g
}

fn gauss(t: f64, centre: f64, sigma: f64) -> f64 {
    let z = (t - centre) / sigma;
    (-0.5 * z * z).exp()
}

fn rr_process(profile: Profile, rng: &mut ChaCha8Rng, duration: f64) -> (f64, Vec<f64>) {
    let mean = profile.mean_rr() * rng.random_range(0.92..1.08);
    let start = -rng.random_range(0.0..mean);
    let mut beats = vec![start];
    let mut t = start;
    while t < duration + 0.5 {
        let rr = match profile {
            Profile::AfibLike => mean * rng.random_range(0.55..1.45),
            _ => mean * (1.0 + 0.03 * rng.random_range(-1.0..1.0)),
        };
        t += rr;
        beats.push(t);
    }
    (mean, beats)
}

struct Generated {
    record: EcgRecord,
    rr: Vec<f64>,
}

fn generate_one(
    profile: Profile,
    labels: LabelSet,
    id: String,
    leads: usize,
    length: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Generated> {
    let rate = f64::from(DEFAULT_RATE_HZ);
    let duration = length as f64 / rate;
    let (_, beats) = rr_process(profile, rng, duration);
    let rr: Vec<f64> = beats.windows(2).map(|w| w[1] - w[0]).collect();

    let scale = rng.random_range(0.8..1.2);
    let axis_jitter = rng.random_range(-15.0..15.0);
    let morph = Morphology {
        p_amp: if profile == Profile::AfibLike { 0.0 } else { 0.15 * scale },
        qrs_width: if profile == Profile::WideQrs { 2.8 } else { 1.0 },
        r_amp: 1.1 * scale,
        t_amp: 0.3 * scale,
        axes: [50.0 + axis_jitter, 60.0 + axis_jitter, 40.0 + axis_jitter],
    };
    let noise = Normal::new(0.0, 0.03).expect("positive sd");
    let wander_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let wander_freq = rng.random_range(0.15..0.4);
    let fib_freq = rng.random_range(5.0..7.0);
    let fib_phase: Vec<f64> = (0..leads).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();

    let mut signal = Vec::with_capacity(leads * length);
    for lead in 0..leads {
        let gp = lead_gain(lead, morph.axes[0]) * morph.p_amp;
        let gr = lead_gain(lead, morph.axes[1]) * morph.r_amp;
        let gt = lead_gain(lead, morph.axes[2]) * morph.t_amp;
        let w = morph.qrs_width;
        for i in 0..length {
            let t = i as f64 / rate;
            let mut v = 0.0;
            for (k, &b) in beats.iter().enumerate() {
                let d = t - b;
                if d < -0.35 || d > 0.7 {
                    continue;
                }
                let rr_k = rr.get(k).copied().unwrap_or(0.8);
                v += gp * gauss(d, -0.16, 0.025);
                v += gr * (-0.12 * gauss(d, -0.022 * w, 0.007 * w)
                    + gauss(d, 0.0, 0.01 * w)
                    - 0.25 * gauss(d, 0.024 * w, 0.008 * w));
                v += gt * gauss(d, 0.28 * rr_k.sqrt() / 0.9 + 0.02 * (w - 1.0), 0.05);
            }
            if profile == Profile::AfibLike {
                v += 0.05 * (std::f64::consts::TAU * fib_freq * t + fib_phase[lead]).sin();
            }
            v += 0.05 * (std::f64::consts::TAU * wander_freq * t + wander_phase).sin();
            v += noise.sample(rng);
            signal.push(v as f32);
        }
    }

    let age = if rng.random_bool(0.9) {
        Some(f64::from(rng.random_range(18u8..=90)))
    } else {
        None
    };
    let sex = Some(if rng.random_bool(0.5) { Sex::Male } else { Sex::Female });
    let record = EcgRecord::new(id, leads, signal, Demographics::new(age, sex)?, labels)?;
    Ok(Generated { record, rr })
}

fn profile_rng(profile: Profile, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(profile as u64 + 1);
    rng
}

fn generate(profile: Profile, scheme: Scheme, seed: u64, n: usize, length: usize, leads: usize) -> Result<Vec<Generated>> {
    if length < MIN_LENGTH {
        return Err(Error::Parameter(format!("length {length} below minimum {MIN_LENGTH}")));
    }
    let labels = profile.label(scheme)?;
    let mut rng = profile_rng(profile, seed);
    (0..n)
        .map(|i| {
            let id = format!("synth-{}-{i:05}", profile.as_str().to_ascii_lowercase());
            generate_one(profile, labels, id, leads, length, &mut rng)
        })
        .collect()
}

/// `n_records` 12-lead records of one profile, labelled under `scheme`.
pub fn synth_generate(profile: Profile, scheme: Scheme, seed: u64, n_records: usize, length: usize) -> Result<Vec<EcgRecord>> {
    Ok(generate(profile, scheme, seed, n_records, length, 12)?
        .into_iter()
        .map(|g| g.record)
        .collect())
}

/// RR intervals in seconds of the records [`synth_generate`] produces for
/// the same arguments.
pub fn synth_rr_intervals(profile: Profile, seed: u64, n_records: usize, length: usize) -> Result<Vec<Vec<f64>>> {
    Ok(generate(profile, Scheme::Binary, seed, n_records, length, 12)?
        .into_iter()
        .map(|g| g.rr)
        .collect())
}

/// `n_total` records split as evenly as possible over `profiles`, in
/// profile order.
pub fn synth_corpus(profiles: &[Profile], scheme: Scheme, n_total: usize, length: usize, seed: u64) -> Result<Vec<EcgRecord>> {
    if profiles.is_empty() {
        return Err(Error::Parameter("no profiles given".into()));
    }
    if n_total == 0 {
        return Err(Error::Parameter("record count must be positive".into()));
    }
    let k = profiles.len();
    let mut out = Vec::with_capacity(n_total);
    for (i, &p) in profiles.iter().enumerate() {
        let n = n_total / k + usize::from(i < n_total % k);
        out.extend(synth_generate(p, scheme, seed, n, length)?);
    }
    Ok(out)
}

/// A `(count, 1, leads, samples)` batch cycling through the rhythm profiles.
pub fn calibration_batch(leads: usize, samples: usize, count: usize, seed: u64) -> Result<Tensor> {
    let profiles = [Profile::Sr, Profile::AfibLike, Profile::SbLike, Profile::GsvtLike, Profile::WideQrs];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let length = samples.max(MIN_LENGTH);
    let mut data = Vec::with_capacity(count * leads * samples);
    for i in 0..count {
        let p = profiles[i % profiles.len()];
        let g = generate_one(p, p.label(Scheme::Binary)?, String::new(), leads, length, &mut rng)?;
        for l in 0..leads {
            data.extend(g.record.lead(l)[..samples].iter().map(|&v| f64::from(v)));
        }
    }
    Tensor::new(vec![count, 1, leads, samples], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_generate(Profile::Sr, Scheme::Binary, 7, 3, 500).unwrap();
        let b = synth_generate(Profile::Sr, Scheme::Binary, 7, 3, 500).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(Profile::Sr, Scheme::Binary, 8, 3, 500).unwrap();
        assert_ne!(a[0].signal, c[0].signal);
    }

    #[test]
    fn bradycardia_is_slower() {
        let mean = |p| {
            let rr = synth_rr_intervals(p, 1, 20, 5000).unwrap();
            let all: Vec<f64> = rr.into_iter().flatten().collect();
            all.iter().sum::<f64>() / all.len() as f64
        };
        assert!(mean(Profile::SbLike) > mean(Profile::Sr));
    }

    #[test]
    fn profiles_and_schemes() {
        assert_eq!("afib-like".parse::<Profile>().unwrap(), Profile::AfibLike);
        assert!(matches!("VT".parse::<Profile>(), Err(Error::Parameter(_))));
        assert_eq!(infer_scheme(&parse_profiles("SR,wide-QRS").unwrap()).unwrap(), Scheme::Binary);
        assert_eq!(
            infer_scheme(&parse_profiles("SR,AFIB-like,SB-like,GSVT-like").unwrap()).unwrap(),
            Scheme::Multiclass4
        );
        assert!(synth_generate(Profile::Sr, Scheme::Binary, 0, 1, 10).is_err());
        assert!(Profile::WideQrs.label(Scheme::Multiclass4).is_err());
    }

    #[test]
    fn corpus_splits_evenly() {
        let c = synth_corpus(&[Profile::Sr, Profile::AfibLike], Scheme::Binary, 7, 128, 0).unwrap();
        let abnormal = c.iter().filter(|r| r.labels == LabelSet::Binary { abnormal: true }).count();
        assert_eq!((c.len(), abnormal), (7, 3));
    }
}
