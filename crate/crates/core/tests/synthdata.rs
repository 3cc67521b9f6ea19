use cyclesense::eval::roc_auc;
use cyclesense::pipeline::{heuristic_for, load_rides, prepare_data, DataConfig};
use cyclesense::models::HeuristicConfig;
use cyclesense::ride_format::FormatConfig;
use cyclesense::synthdata::{generate_dataset, generate_rides, ride_dir, SynthSpec};

fn small(n_rides: usize) -> SynthSpec {
    SynthSpec {
        n_rides,
        ..SynthSpec::default()
    }
}

#[test]
fn same_seed_writes_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = small(12);
    let fa = generate_dataset(&spec, a.path()).unwrap();
    let fb = generate_dataset(&spec, b.path()).unwrap();
    assert_eq!(fa.len(), 12);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let other = generate_rides(&SynthSpec { seed: 43, ..spec.clone() }).unwrap();
    assert_ne!(other, generate_rides(&spec).unwrap());
}

#[test]
fn written_files_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small(8);
    generate_dataset(&spec, dir.path()).unwrap();
    assert!(ride_dir(dir.path(), &spec).is_dir());
    let loaded = load_rides(dir.path(), Some(&spec.region), Some(spec.partition), &FormatConfig::default()).unwrap();
    assert_eq!(loaded.len(), 8);
    let mut want = generate_rides(&spec).unwrap();
    let mut got = loaded;
    want.sort_by(|a, b| a.ride_id.cmp(&b.ride_id));
    got.sort_by(|a, b| a.ride_id.cmp(&b.ride_id));
    assert_eq!(got, want);
}

#[test]
fn zero_incident_rate_means_no_positive_buckets() {
    let spec = SynthSpec {
        incident_rate: 0.0,
        ..small(30)
    };
    let rides = generate_rides(&spec).unwrap();
    assert!(rides.iter().all(|r| r.incidents.is_empty()));
    let data = prepare_data(rides, &DataConfig::default()).unwrap();
    for d in [&data.train, &data.val, &data.test] {
        assert!(d.examples.iter().all(|e| e.label == 0));
    }
}

#[test]
fn strong_incidents_are_found_by_the_heuristic() {
    let spec = SynthSpec {
        amplitude_sigma: 10.0,
        ..SynthSpec::default()
    };
    let data = prepare_data(generate_rides(&spec).unwrap(), &DataConfig::default()).unwrap();
    let mut all = data.train.clone();
    all.examples.extend(data.val.examples.iter().cloned());
    all.examples.extend(data.test.examples.iter().cloned());
    let scores = heuristic_for(&all, &HeuristicConfig::default()).unwrap();
    let auc = roc_auc(&scores, &all.labels()).unwrap().auc;
    assert!(auc >= 0.9, "{auc}");
}

#[test]
fn invalid_specs_are_rejected() {
    for bad in [
        SynthSpec { min_duration_s: 10.0, ..SynthSpec::default() },
        SynthSpec { brake_share: 1.5, ..SynthSpec::default() },
        SynthSpec { region: "a/b".into(), ..SynthSpec::default() },
        SynthSpec { row_jitter_ms: 300, ..SynthSpec::default() },
    ] {
        assert!(generate_rides(&bad).is_err());
    }
}
