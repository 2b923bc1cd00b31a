//! Beating between two unsynchronized transmitters seen by the offline
//! trace detector.

use num_complex::Complex64;
use zerowire::channel::{awgn_sample, superpose_at_receiver, LinkState, ReceiverWindow, Transmission};
use zerowire::signal::{dbm_to_amplitude, dbm_to_mw, substream, ComplexSample, Waveform};
use zerowire::trace::{detect_trace, TraceOptions};

const FS: f64 = 20e6;
const CALIB: usize = 20_000;
const BODY: usize = 600_000;
const PULSE: usize = 60;

/// Back-to-back pulses from two transmitters with a 500 Hz offset, each
/// arriving `snr_db` above the noise, behind a noise-only lead-in.
fn beating_trace(snr_db: f64) -> Waveform {
    let noise = dbm_to_mw(-60.0);
    let carrier = Waveform::new(vec![Complex64::new(1.0, 0.0); BODY], FS, 0).unwrap();
    let amp_db = 20.0 * dbm_to_amplitude(-60.0 + snr_db).log10();
    let tr = [
        Transmission {
            link: LinkState::new(0, 2, amp_db, Complex64::from_polar(1.0, 0.4), 0),
            signal: &carrier,
            cfo_hz: 0.0,
        },
        Transmission {
            link: LinkState::new(1, 2, amp_db, Complex64::from_polar(1.0, 1.9), 0),
            signal: &carrier,
            cfo_hz: 500.0,
        },
    ];
    let window = ReceiverWindow {
        rx: 2,
        start: 0,
        len: BODY,
        cfo_hz: 0.0,
        blanked: vec![],
    };
    let mut rng = substream(7, "beating-trace").unwrap();
    let body = superpose_at_receiver(&window, &tr, FS, Some(-60.0), &mut rng).unwrap();
    let mut samples: Vec<ComplexSample> = (0..CALIB).map(|_| awgn_sample(noise, &mut rng)).collect();
    samples.extend(body.samples);
    Waveform::new(samples, FS, 0).unwrap()
}

/// Brute-force miss count: a pulse window is detected when any group of
/// ten consecutive aligned samples has a strict majority above threshold.
fn oracle_misses(trace: &Waveform, threshold: f64) -> usize {
    trace.samples[CALIB..]
        .chunks_exact(PULSE)
        .filter(|w| {
            !(0..PULSE / 10).any(|g| {
                let above = (0..10).filter(|&k| w[g * 10 + k].norm() > threshold).count();
                above > 5
            })
        })
        .count()
}

fn opts() -> TraceOptions {
    TraceOptions {
        calibration_s: CALIB as f64 / FS,
        ..TraceOptions::default()
    }
}

#[test]
fn beating_near_threshold_causes_misses() {
    let trace = beating_trace(10.0);
    let r = detect_trace(&trace, &opts()).unwrap();
    assert_eq!(r.expected_pulses, BODY / PULSE);
    let misses = r.expected_pulses - r.detected_pulses;
    assert_eq!(misses, oracle_misses(&trace, r.threshold_amplitude));
    assert!(r.ser > 0.0, "no beating-induced misses");
    assert!(r.ser < 0.5, "SER {}", r.ser);
}

#[test]
fn strong_beating_pair_still_misses_in_nulls() {
    // Equal amplitudes cancel completely at the null, whatever the SNR.
    let r = detect_trace(&beating_trace(30.0), &opts()).unwrap();
    assert!(r.ser > 0.0);
    assert!(r.ser < 0.1, "SER {}", r.ser);
}
