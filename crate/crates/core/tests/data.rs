use std::collections::HashSet;

use fragnet::data::{
    byte_entropy, build_corpus, decode_corpus, encode_corpus, extensions, extract_fragments,
    fragment_offsets, group_of, read_corpus, scenario_map, sidecar_path, split, synth_corpus,
    write_corpus, GeneratorKind, ScenarioMap, GROUPS, HEADER_LEN,
};
use fragnet::Error;
use proptest::prelude::*;

#[test]
fn grouping_partition() {
    let sizes: Vec<usize> = GROUPS.iter().map(|(_, e)| e.len()).collect();
    assert_eq!(sizes, [13, 7, 6, 4, 9, 7, 4, 11, 3, 7, 4]);
    let all: Vec<&str> = extensions().collect();
    assert_eq!(all.len(), 75);
    assert_eq!(all.iter().collect::<HashSet<_>>().len(), 75);
    assert_eq!(GROUPS[1].0, "Audio");
    assert_eq!(group_of("MP3").unwrap(), 1);
}

#[test]
fn scenario_images_are_exactly_the_class_ranges() {
    for (s, k) in [(1, 75), (2, 11), (3, 25), (4, 5), (5, 2), (6, 2)] {
        let map = ScenarioMap::new(s).unwrap();
        assert_eq!(map.num_classes(), k);
        let ids: Vec<Option<u16>> = extensions().map(|e| map.class_of(e).unwrap()).collect();
        let image: HashSet<u16> = ids.iter().flatten().copied().collect();
        assert_eq!(image, (0..k as u16).collect());
        if s == 6 {
            assert!(ids.iter().any(|i| i.is_none()));
        } else {
            assert!(ids.iter().all(|i| i.is_some()), "scenario {s} is total");
        }
    }
    let s1: HashSet<u16> = extensions().map(|e| scenario_map(1, e).unwrap().unwrap()).collect();
    assert_eq!(s1.len(), 75);
}

#[test]
fn scenario_three_and_four_partitions() {
    let sizes = |s: u8| {
        let map = ScenarioMap::new(s).unwrap();
        let mut c = vec![0; map.num_classes()];
        for e in extensions() {
            c[map.class_of(e).unwrap().unwrap() as usize] += 1;
        }
        (map, c)
    };
    let (m3, c3) = sizes(3);
    assert_eq!(c3.iter().filter(|&&n| n == 1).count(), 24);
    assert_eq!(c3[m3.class_names.iter().position(|n| n == "other").unwrap()], 51);
    let (m4, c4) = sizes(4);
    let at = |n: &str| c4[m4.class_names.iter().position(|x| x == n).unwrap()];
    assert_eq!([at("jpg"), at("raw"), at("video"), at("bitmap"), at("other")], [1, 11, 7, 5, 51]);
    for e in ["tiff", "heic", "bmp", "gif", "png"] {
        assert_eq!(m4.class_names[m4.class_of(e).unwrap().unwrap() as usize], "bitmap");
    }
}

#[test]
fn scenario_six_membership() {
    let members: Vec<&str> = extensions().filter(|e| scenario_map(6, e).unwrap().is_some()).collect();
    assert_eq!(members.len(), 1 + 11 + 5);
    assert_eq!(scenario_map(6, "jpg").unwrap(), Some(0));
    for e in ["mov", "3gp", "mkv", "tiff", "heic", "arw", "3fr"] {
        assert_eq!(scenario_map(6, e).unwrap(), Some(1), "{e}");
    }
    for e in ["mp4", "png", "pdf", "zip"] {
        assert_eq!(scenario_map(6, e).unwrap(), None, "{e}");
    }
}

#[test]
fn fragment_extraction() {
    let data = vec![7u8; 10_000];
    assert_eq!(extract_fragments(&data, 4096, 4096, false).unwrap().len(), 2);
    assert!(extract_fragments(&data[..4095], 4096, 4096, false).unwrap().is_empty());
    let three: Vec<u8> = (0..3 * 4096).map(|i| (i / 4096) as u8).collect();
    let blocks = extract_fragments(&three, 4096, 4096, true).unwrap();
    assert_eq!(blocks.len(), 2);
    assert_eq!((blocks[0][0], blocks[1][0]), (1, 2));
    assert_eq!(fragment_offsets(three.len(), 4096, 4096, true).unwrap(), [4096, 8192]);
    assert!(extract_fragments(&data, 512, 0, false).is_err());
}

proptest! {
    #[test]
    fn extraction_count_matches_naive_scan(
        len in 0usize..20_000, size in 1usize..5000, stride in 1usize..5000, skip in any::<bool>(),
    ) {
        let data = vec![0u8; len];
        let got = extract_fragments(&data, size, stride, skip).unwrap().len();
        let mut naive = 0;
        let mut o = if skip { stride } else { 0 };
        while o + size <= len {
            naive += 1;
            o += stride;
        }
        prop_assert_eq!(got, naive);
    }

    #[test]
    fn corpus_decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_corpus(&bytes, None);
    }
}

#[test]
fn synthetic_corpus_is_balanced_and_reproducible() {
    let kinds = GeneratorKind::ALL.to_vec();
    let a = synth_corpus(&kinds, 1000, 512, 7).unwrap();
    let b = synth_corpus(&kinds, 1000, 512, 7).unwrap();
    assert_eq!(a.len(), 8000);
    assert_eq!(a.class_counts(), vec![1000; 8]);
    assert_eq!(encode_corpus(&a), encode_corpus(&b));
    let c = synth_corpus(&kinds, 1000, 512, 8).unwrap();
    assert_ne!(encode_corpus(&a), encode_corpus(&c));
    assert!(synth_corpus(&kinds[..1], 10, 512, 0).is_err());
    assert!("zigzag".parse::<GeneratorKind>().is_err());
}

#[test]
fn entropy_ordering() {
    let kinds = [GeneratorKind::ConstantFill, GeneratorKind::PrintableText, GeneratorKind::UniformRandom];
    let c = synth_corpus(&kinds, 200, 512, 3).unwrap();
    let mut mean = [0.0; 3];
    for r in &c.records {
        mean[r.label as usize] += byte_entropy(&r.bytes) / 200.0;
    }
    assert!(mean[0] < mean[1] && mean[1] < mean[2], "{mean:?}");
}

#[test]
fn stratified_split() {
    let c = synth_corpus(&GeneratorKind::ALL, 1000, 64, 1).unwrap();
    let (tr, va, te) = split(&c, [0.8, 0.1, 0.1], 9).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (6400, 800, 800));
    for counts in [tr.class_counts(), va.class_counts(), te.class_counts()] {
        let want = counts.iter().sum::<usize>() / 8;
        assert!(counts.iter().all(|&n| n.abs_diff(want) <= 1));
    }
    let (tr2, va2, _) = split(&c, [0.8, 0.1, 0.1], 9).unwrap();
    assert_eq!(tr.records, tr2.records);
    assert_eq!(va.records, va2.records);

    let labels: Vec<u16> = c.records.iter().map(|r| r.label).collect();
    let parts = fragnet::data::split_indices(&labels, 8, [0.8, 0.1, 0.1], 9).unwrap();
    let sets: Vec<HashSet<usize>> = parts.iter().map(|p| p.iter().copied().collect()).collect();
    for i in 0..3 {
        for j in i + 1..3 {
            assert!(sets[i].is_disjoint(&sets[j]));
        }
    }
    assert_eq!(sets.iter().map(|s| s.len()).sum::<usize>(), 8000);

    let tiny = synth_corpus(&GeneratorKind::ALL[..2], 2, 64, 1).unwrap();
    assert!(split(&tiny, [0.8, 0.1, 0.1], 0).is_err());
    assert!(split(&c, [0.8, 0.3, 0.1], 0).is_err());
}

#[test]
fn corpus_file_round_trip_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let c = synth_corpus(&GeneratorKind::ALL[..3], 20, 512, 4).unwrap();
    let path = dir.path().join("c.ffc");
    write_corpus(&path, &c).unwrap();
    assert!(sidecar_path(&path).exists());
    let back = read_corpus(&path).unwrap();
    assert_eq!(back, c);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), HEADER_LEN + 60 * 514);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_corpus(&bad, None), Err(Error::Format(_))));
    let mut newer = bytes.clone();
    newer[4] = 2;
    assert!(decode_corpus(&newer, None).is_err());
    let mut count = bytes.clone();
    count[10] = 61;
    assert!(decode_corpus(&count, None).is_err());
    assert!(decode_corpus(&bytes[..bytes.len() - 1], None).is_err());
    let mut label = bytes.clone();
    label[HEADER_LEN] = 9;
    assert!(decode_corpus(&label, None).is_err());
}

#[test]
fn build_from_directory() {
    let dir = tempfile::tempdir().unwrap();
    let files = [("a.jpg", 3 * 4096), ("sub/b.PDF", 2 * 4096 + 100), ("c.exe", 4096), ("d.weird", 8192), ("e.nef", 4096)];
    for (name, len) in files {
        let p = dir.path().join(name);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, vec![1u8; len]).unwrap();
    }
    let (c5, s5) = build_corpus(dir.path(), 4096, 5, 4096, false).unwrap();
    assert_eq!(c5.class_counts(), vec![3, 2 + 1 + 1]);
    assert_eq!((s5.files, s5.unknown_files, s5.excluded_files), (5, 1, 0));
    assert!(c5.records.iter().all(|r| r.source_id.is_some()));

    let (c6, s6) = build_corpus(dir.path(), 4096, 6, 4096, false).unwrap();
    assert_eq!(s6.excluded_files, 2, "pdf and exe are not photo/video types");
    assert_eq!(c6.class_counts(), vec![3, 1]);

    let empty = tempfile::tempdir().unwrap();
    assert!(build_corpus(empty.path(), 4096, 5, 4096, false).is_err());
}
