use ctcprobe_web::{cluster_json, ctc_json, spectrogram_json};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn spectrogram_has_one_phone_per_frame() {
    let v = parse(spectrogram_json(0.2, 12, 3).unwrap());
    let frames = v["frames"].as_u64().unwrap() as usize;
    assert_eq!(v["bins"], 161);
    assert_eq!(v["values"].as_array().unwrap().len(), frames * 161);
    assert_eq!(v["phones"].as_array().unwrap().len(), frames);
    assert_eq!(spectrogram_json(0.2, 12, 3).unwrap(), spectrogram_json(0.2, 12, 3).unwrap());
}

#[test]
fn ctc_demo_agrees_with_enumeration_and_posteriors_normalize() {
    let v = parse(ctc_json("cab", 6, 2.0, 7).unwrap());
    let p = v["probability"].as_f64().unwrap();
    let brute = v["brute_force_probability"].as_f64().unwrap();
    assert!((p - brute).abs() < 1e-9, "{p} vs {brute}");
    for row in v["posterior"].as_array().unwrap() {
        let s: f64 = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
    assert_eq!(v["symbols"].as_array().unwrap().len(), 4);
}

#[test]
fn ctc_demo_rejects_bad_input() {
    assert!(ctc_json("123", 5, 1.0, 0).is_err());
    // three labels cannot fit in two frames
    assert!(ctc_json("abc", 2, 1.0, 0).is_err());
}

#[test]
fn cluster_demo_assigns_every_frame() {
    let v = parse(cluster_json(2, 5, 0.3, 1).unwrap());
    let n = v["phones"].as_array().unwrap().len();
    assert_eq!(v["points"].as_array().unwrap().len(), n);
    assert_eq!(v["assignment"].as_array().unwrap().len(), n);
    assert!(v["centroids"].as_array().unwrap().len() <= 5);
    let hist: Vec<f64> = v["inertia_history"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(hist.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
}
