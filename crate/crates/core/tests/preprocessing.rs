mod common;

use common::*;
use cyclesense::preprocess::store::{read_buckets, write_buckets, EncodedBucket};
use cyclesense::preprocess::{
    bucketize_and_label, clean_ride, gps_to_velocity, interpolate, prepare_ride, resample_uniform, PreprocessConfig,
    Rejected, UniformRide, BUCKET_LEN, CHANNELS, GRID_MS,
};
use cyclesense::ride_format::{
    parse_ride, write_ride, DatasetPartition, FormatConfig, GpsFix, IncidentRecord, Platform, RawRide, SensorRecord,
    VersionHeader,
};
use cyclesense::spectral::{FrequencySpec, SensorTensorSet};
use cyclesense::synthdata::{generate_ride, SynthSpec};
use proptest::prelude::*;
use rand::Rng;

fn rec(t: i64, gps: Option<GpsFix>) -> SensorRecord {
    SensorRecord {
        timestamp: t,
        gps,
        acc: [0.5 * t as f64 / 1000.0, 1.0, 9.81],
        gyr: Some([0.0, 0.1, 0.2]),
    }
}

fn ride(records: Vec<SensorRecord>, incidents: Vec<IncidentRecord>) -> RawRide {
    RawRide {
        ride_id: "r".into(),
        version: VersionHeader {
            platform: Platform::Android,
            app_version: 84,
            file_version: 1,
        },
        partition: DatasetPartition::AndroidNew,
        incidents,
        records,
    }
}

#[test]
fn gap_rule_boundary() {
    let cfg = PreprocessConfig::default();
    let ok = ride(vec![rec(1000, None), rec(7000, None)], vec![]);
    assert!(clean_ride(ok, &cfg).is_ok());
    let bad = ride(vec![rec(1000, None), rec(7001, None)], vec![]);
    assert_eq!(clean_ride(bad, &cfg).unwrap_err(), Rejected::GapTooLarge { gap_ms: 6001 });
}

#[test]
fn grid_is_exact_and_linear_signals_reproduce() {
    let mut r = rng(10);
    for _ in 0..50 {
        let mut t = 1_000_000i64;
        let mut recs = Vec::new();
        while t < 1_000_000 + 45_000 {
            recs.push(rec(t, None));
            t += r.random_range(150..350);
        }
        let c = clean_ride(ride(recs, vec![]), &PreprocessConfig::default()).unwrap();
        let u = resample_uniform(&c);
        for i in 0..u.samples.len() {
            assert_eq!(u.timestamp(i), u.t0 + GRID_MS * i as i64);
            // acc_x is linear in time, so interpolation is exact.
            let want = 0.5 * u.timestamp(i) as f64 / 1000.0;
            assert!((u.samples[i][0] - want).abs() < 1e-9);
            assert_eq!(u.samples[i][2], 9.81);
        }
    }
}

#[test]
fn interpolation_hits_knots_and_clamps() {
    let knots = [(100, 1.0), (300, 3.0), (400, -1.0)];
    let mut out = vec![0.0; 6];
    interpolate(&knots, 0, 6, &mut out);
    assert_eq!(out, vec![1.0, 1.0, 2.0, 3.0, -1.0, -1.0]);
}

#[test]
fn velocity_telescopes_to_displacement() {
    let mut r = rng(11);
    for _ in 0..100 {
        let n = r.random_range(2..30);
        let mut t = 0i64;
        let fixes: Vec<(i64, GpsFix)> = (0..n)
            .map(|_| {
                t += r.random_range(500..4000);
                (
                    t,
                    GpsFix {
                        lat: 52.0 + r.random_range(-0.01..0.01),
                        lon: 13.0 + r.random_range(-0.01..0.01),
                        accuracy: 5.0,
                    },
                )
            })
            .collect();
        let (vel, degenerate) = gps_to_velocity(&fixes);
        assert_eq!((vel.len(), degenerate), (n - 1, 0));
        let mut sum = [0.0; 2];
        for (v, w) in vel.iter().zip(fixes.windows(2)) {
            let dt = (w[1].0 - w[0].0) as f64 / 1000.0;
            sum[0] += v.vel[0].unwrap() * dt;
            sum[1] += v.vel[1].unwrap() * dt;
        }
        assert!((sum[0] - (fixes[n - 1].1.lat - fixes[0].1.lat)).abs() < 1e-12);
        assert!((sum[1] - (fixes[n - 1].1.lon - fixes[0].1.lon)).abs() < 1e-12);
    }
}

fn uniform(n: usize, t0: i64) -> UniformRide {
    UniformRide {
        ride_id: "u".into(),
        partition: DatasetPartition::AndroidNew,
        t0,
        samples: vec![[0.0; CHANNELS]; n],
    }
}

#[test]
fn buckets_have_exactly_100_rows() {
    for n in [0, 99, 100, 101, 250, 1000] {
        let b = bucketize_and_label(&uniform(n, 0), &[]);
        assert_eq!(b.len(), n / BUCKET_LEN);
        assert!(b.iter().all(|x| x.samples.len() == BUCKET_LEN));
    }
}

#[test]
fn labels_match_oracle_on_random_placements() {
    let mut r = rng(12);
    for _ in 0..1000 {
        let t0 = r.random_range(0..1_000_000i64);
        let n = r.random_range(100..1500);
        let k = r.random_range(0..4);
        let ts: Vec<i64> = (0..k).map(|_| t0 + r.random_range(-5_000..(n as i64 * GRID_MS + 5_000))).collect();
        let incidents: Vec<IncidentRecord> = ts
            .iter()
            .map(|&t| IncidentRecord {
                timestamp: t,
                lat: 0.0,
                lon: 0.0,
                incident_type: 1,
                description: None,
            })
            .collect();
        let got: Vec<u8> = bucketize_and_label(&uniform(n, t0), &incidents).iter().map(|b| b.label).collect();
        assert_eq!(got, label_oracle(t0, n / BUCKET_LEN, &ts));
    }
}

#[test]
fn label_boundaries() {
    let inc = |t| IncidentRecord {
        timestamp: t,
        lat: 0.0,
        lon: 0.0,
        incident_type: 1,
        description: None,
    };
    let u = uniform(200, 0);
    let labels = |t| bucketize_and_label(&u, &[inc(t)]).iter().map(|b| b.label).collect::<Vec<_>>();
    assert_eq!(labels(0), vec![1, 0]);
    assert_eq!(labels(9_999), vec![1, 0]);
    assert_eq!(labels(10_000), vec![0, 1]);
    assert_eq!(labels(20_000), vec![0, 0]);
}

#[test]
fn generated_rides_parse_without_loss() {
    let spec = SynthSpec::default();
    for i in 0..50 {
        let ride = generate_ride(&spec, i);
        let text = write_ride(&ride);
        let parsed = parse_ride(&ride.ride_id, &text, &FormatConfig::default()).unwrap();
        assert!(parsed.report.unparsable.is_empty());
        assert_eq!(parsed.report.missing_accelerometer, 0);
        assert!(parsed.report.unmatched_incidents.is_empty());
        assert_eq!(parsed.ride, ride);
        let prepared = prepare_ride(parsed.ride, &PreprocessConfig::default()).unwrap();
        assert!(!prepared.flags.no_gps);
    }
}

fn arb_record() -> impl Strategy<Value = SensorRecord> {
    (
        1i64..4_000_000_000_000,
        proptest::option::of((-90.0f64..90.0, -180.0f64..180.0, 0.0f64..100.0)),
        proptest::array::uniform3(-50.0f64..50.0),
        proptest::option::of(proptest::array::uniform3(-10.0f64..10.0)),
    )
        .prop_map(|(timestamp, gps, acc, gyr)| SensorRecord {
            timestamp,
            gps: gps.map(|(lat, lon, accuracy)| GpsFix { lat, lon, accuracy }),
            acc,
            gyr,
        })
}

fn arb_ride() -> impl Strategy<Value = RawRide> {
    (
        proptest::collection::vec(arb_record(), 1..40),
        proptest::collection::vec(
            (
                0usize..40,
                -90.0f64..90.0,
                -180.0f64..180.0,
                -1i32..9,
                proptest::option::of("[a-z]([a-z ,\"]{0,10}[a-z])?"),
            ),
            0..4,
        ),
    )
        .prop_map(|(records, inc)| {
            let incidents = inc
                .into_iter()
                .map(|(i, lat, lon, incident_type, description)| IncidentRecord {
                    timestamp: records[i % records.len()].timestamp,
                    lat,
                    lon,
                    incident_type,
                    description,
                })
                .collect();
            ride(records, incidents)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_parse_round_trips(r in arb_ride()) {
        let text = write_ride(&r);
        let parsed = parse_ride("r", &text, &FormatConfig::default()).unwrap();
        prop_assert!(parsed.report.unparsable.is_empty());
        prop_assert_eq!(parsed.ride, r);
    }

    #[test]
    fn parser_never_panics(text in "[-a-z0-9#,.=\n]{0,400}") {
        let _ = parse_ride("r", &text, &FormatConfig::default());
    }

    #[test]
    fn bucket_store_round_trips(
        seed in 0u64..1000,
        n in 0usize..4,
        with_tensors in any::<bool>(),
    ) {
        let spec = FrequencySpec::new(10).unwrap();
        let mut r = rng(seed);
        let buckets: Vec<EncodedBucket> = (0..n)
            .map(|i| {
                let mut t = SensorTensorSet::zeros(spec);
                t.accel.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
                EncodedBucket {
                    ride_hash: r.random(),
                    bucket_index: i as u32,
                    label: r.random_range(0..2),
                    samples: (0..BUCKET_LEN).map(|_| [r.random_range(-1.0f32..1.0); CHANNELS]).collect(),
                    tensors: with_tensors.then_some(t),
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_buckets(&mut buf, &buckets).unwrap();
        prop_assert_eq!(read_buckets(&buf[..]).unwrap(), buckets);
    }
}
