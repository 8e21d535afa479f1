mod common;

use cfcnet::eval::GroundTruthRecord;
use cfcnet::geometry::RotatedBox;
use cfcnet::ingest::{
    clip_boxes_to_window, parse_dota, read_annotations, read_dump, tile_windows, write_annotations,
    write_dota, write_dump, ClassList, DumpImage, ImageAnnotation, ObjectAnnotation, ScoreRow,
    TileWindow,
};
use proptest::prelude::*;
use rand::Rng;

fn covered(w: u32, h: u32, wins: &[TileWindow]) -> bool {
    let mut hit = vec![false; (w * h) as usize];
    for t in wins {
        for y in t.y..(t.y + t.side).min(h) {
            for x in t.x..(t.x + t.side).min(w) {
                hit[(y * w + x) as usize] = true;
            }
        }
    }
    hit.into_iter().all(|b| b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn windows_cover_every_pixel(w in 1u32..300, h in 1u32..300, side in 8u32..120, frac in 0.05..1.0f64) {
        let stride = ((f64::from(side) * frac) as u32).max(1);
        let wins = tile_windows(w, h, side, stride).unwrap();
        prop_assert!(covered(w, h, &wins));
        for t in &wins {
            prop_assert!(t.x < w && t.y < h);
            prop_assert!(t.x % stride == 0 || t.x + side == w);
            prop_assert!(t.y % stride == 0 || t.y + side == h);
        }
        let mut uniq = wins.clone();
        uniq.sort_by_key(|t| (t.y, t.x));
        uniq.dedup();
        prop_assert_eq!(uniq.len(), wins.len());
    }

    #[test]
    fn clipping_only_moves_centers(seed in any::<u64>(), x in 0u32..200, y in 0u32..200) {
        let mut rng = common::rng(seed);
        let win = TileWindow { x, y, side: 150 };
        let boxes: Vec<GroundTruthRecord> = (0..20)
            .map(|i| GroundTruthRecord {
                image_id: "im".into(),
                bbox: {
                    let b = common::random_box(&mut rng, 200.0, 2.0, 60.0);
                    b.translated(200.0, 200.0)
                },
                class_id: i % 15,
                difficult: rng.gen_bool(0.2),
            })
            .collect();
        let kept = clip_boxes_to_window(&boxes, &win, 0.5);
        let mut j = 0;
        for b in &boxes {
            if j < kept.len() && kept[j].class_id == b.class_id
                && kept[j].bbox.w() == b.bbox.w() && kept[j].bbox.h() == b.bbox.h() {
                let k = &kept[j];
                prop_assert_eq!(k.bbox.theta(), b.bbox.theta());
                prop_assert!((k.bbox.cx() + f64::from(x) - b.bbox.cx()).abs() < 1e-9);
                prop_assert!((k.bbox.cy() + f64::from(y) - b.bbox.cy()).abs() < 1e-9);
                prop_assert_eq!(k.difficult, b.difficult);
                j += 1;
            }
        }
        prop_assert_eq!(j, kept.len());
    }

    #[test]
    fn annotation_serialization_is_a_fixed_point(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let set: Vec<ImageAnnotation> = (0..3)
            .map(|i| {
                let objects = (0..rng.gen_range(0..6))
                    .map(|_| ObjectAnnotation {
                        bbox: common::random_box(&mut rng, 500.0, 0.1, 90.0),
                        class_id: rng.gen_range(0..15),
                        difficult: rng.gen_bool(0.3),
                    })
                    .collect();
                ImageAnnotation::new(format!("img{i}"), 1024, 768, objects)
            })
            .collect();
        let mut first = Vec::new();
        write_annotations(&mut first, &set).unwrap();
        let parsed = read_annotations(first.as_slice()).unwrap();
        prop_assert_eq!(&parsed, &set);
        let mut second = Vec::new();
        write_annotations(&mut second, &parsed).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn dota_parse_serialize_parse(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let classes = ClassList::dota();
        let mut text = String::from("imagesource:GoogleEarth\ngsd:0.5\n");
        for _ in 0..rng.gen_range(1..8) {
            let b = common::random_box(&mut rng, 500.0, 2.0, 90.0).translated(600.0, 600.0);
            for p in b.corners() {
                text.push_str(&format!("{:.1} {:.1} ", p.x, p.y));
            }
            let name = classes.name(rng.gen_range(0..15)).unwrap();
            text.push_str(&format!("{name} {}\n", u8::from(rng.gen_bool(0.2))));
        }
        let first = match parse_dota(&text, "p", &classes) {
            Ok(r) => r,
            // rounding to one decimal can flatten a thin box
            Err(_) => return Ok(()),
        };
        let again = parse_dota(&write_dota(&first, &classes).unwrap(), "p", &classes).unwrap();
        let third = parse_dota(&write_dota(&again, &classes).unwrap(), "p", &classes).unwrap();
        for ((a, b), c) in first.iter().zip(&again).zip(&third) {
            prop_assert_eq!((a.class_id, a.difficult), (b.class_id, b.difficult));
            let s = a.bbox.max_side();
            for ((x, y), z) in a.bbox.to_array().iter().zip(b.bbox.to_array()).zip(c.bbox.to_array()) {
                prop_assert!((x - y).abs() < 1e-9 * s.max(1.0) * 1e3);
                prop_assert!((y - z).abs() < 1e-9 * s.max(1.0) * 1e3);
            }
        }
    }
}

#[test]
fn large_dump_round_trips_bit_equal() {
    let mut rng = common::rng(11);
    let anchors: Vec<RotatedBox> = (0..100_000)
        .map(|_| common::random_box(&mut rng, 1e3, 1.0, 200.0))
        .collect();
    let regressed: Vec<RotatedBox> = anchors
        .iter()
        .map(|a| common::nearby_box(&mut rng, a))
        .collect();
    let mut img = DumpImage::new(
        "big",
        anchors,
        regressed,
        vec![ObjectAnnotation {
            bbox: RotatedBox::new(1.0 / 3.0, 2.0 / 7.0, 10.1, 0.3, -1.2).unwrap(),
            class_id: 3,
            difficult: false,
        }],
    );
    img.scores = Some((0..100_000).map(|_| ScoreRow::Single(rng.gen())).collect());
    let dump = vec![img];

    let mut first = Vec::new();
    write_dump(&mut first, &dump).unwrap();
    let back = read_dump(first.as_slice()).unwrap();
    assert_eq!(back, dump);
    for (a, b) in back[0].anchors.iter().zip(&dump[0].anchors) {
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    let mut second = Vec::new();
    write_dump(&mut second, &back).unwrap();
    assert_eq!(first, second);
}
