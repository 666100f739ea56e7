use banner_salience_demo::{analyze_json, salience_gray, sweep_json};
use serde_json::json;

const W: usize = 120;
const H: usize = 80;

fn banner_rgba() -> Vec<u8> {
    let mut px = vec![0u8; W * H * 4];
    for y in 0..H {
        for x in 0..W {
            let c: [u8; 3] = if (10..40).contains(&x) && (60..72).contains(&y) {
                [20, 110, 240]
            } else if y >= 50 {
                [220, 220, 220]
            } else {
                [248, 248, 248]
            };
            px[(y * W + x) * 4..][..4].copy_from_slice(&[c[0], c[1], c[2], 255]);
        }
    }
    px
}

fn boxes() -> String {
    json!({
        "banner": {"x": 0, "y": 50, "w": W, "h": 30},
        "accept": {"x": 10, "y": 60, "w": 30, "h": 12},
        "reject": {"x": 70, "y": 60, "w": 30, "h": 12}
    })
    .to_string()
}

#[test]
fn gray_map_covers_image() {
    let g = salience_gray(&banner_rgba(), W, H).unwrap();
    assert_eq!(g.len(), W * H);
    assert_eq!(*g.iter().max().unwrap(), 255);
}

#[test]
fn wrong_buffer_length_is_error() {
    assert!(salience_gray(&[0; 16], W, H).is_err());
}

#[test]
fn drawn_accept_button_wins() {
    let v = analyze_json(&banner_rgba(), W, H, &boxes(), 0.07).unwrap();
    assert_eq!(v["verdict"]["winner"], "accept");
    assert_eq!(v["baseline"]["flagged"], true);
    assert!(v["scores"]["accept"]["combined"].as_f64() > v["scores"]["reject"]["combined"].as_f64());
}

#[test]
fn sweep_winner_disappears_past_margin() {
    let s = json!({
        "accept": {"role": "accept", "avg": 0.0, "max": 0.0, "combined": 105.0},
        "reject": {"role": "reject", "avg": 0.0, "max": 0.0, "combined": 100.0}
    })
    .to_string();
    let pts = sweep_json(&s, 0.1, 0.01).unwrap();
    let pts = pts.as_array().unwrap();
    assert_eq!(pts.len(), 11);
    for p in pts {
        let t = p["threshold"].as_f64().unwrap();
        let expect = if t <= 0.05 + 1e-12 { json!("accept") } else { json!(null) };
        assert_eq!(p["winner"], expect, "t = {t}");
    }
}
