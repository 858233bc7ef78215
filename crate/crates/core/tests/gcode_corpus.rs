mod common;

use fdmscan_core::gcode::{inject_scan_words, parse_program, serialize_program, CommandKind, GCodeError, InjectionConfig};

#[test]
fn corpus_round_trips() {
    let files = common::corpus();
    assert!(files.len() >= 4);
    for path in files {
        let text = std::fs::read_to_string(&path).unwrap();
        let p = parse_program(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(p.len(), text.lines().count(), "{}", path.display());
        let again = parse_program(&serialize_program(&p)).unwrap();
        assert!(p.equivalent(&again), "{}", path.display());
        // a second pass is textually stable
        assert_eq!(serialize_program(&again), serialize_program(&p));
    }
}

#[test]
fn hop_fixture_layers() {
    let text = std::fs::read_to_string(common::data_dir().join("hops_labeled.gcode")).unwrap();
    let p = parse_program(&text).unwrap();
    let expected = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2, 3, 3];
    assert_eq!(p.layer_index(), &expected);
}

#[test]
fn dialect_fixture() {
    let text = std::fs::read_to_string(common::data_dir().join("dialect.gcode")).unwrap();
    let p = parse_program(&text).unwrap();
    assert_eq!(p.scan_word_count(), 1);
    let kinds: Vec<CommandKind> = p.commands().iter().map(|c| c.kind).collect();
    assert_eq!(kinds[0], CommandKind::Comment);
    assert_eq!(kinds[1], CommandKind::Comment);
    assert_eq!(kinds[5], CommandKind::Home);
    assert_eq!(kinds[6], CommandKind::Home);
    let compact = &p.commands()[13];
    assert_eq!(compact.kind, CommandKind::LinearMove);
    assert_eq!(compact.param('E'), Some(0.5));
    assert_eq!(compact.param('F'), Some(1800.0));
    // the M117 message survives verbatim
    assert!(serialize_program(&p).contains("M117 Layer 2 of 3"));
}

#[test]
fn injection_counts_on_thirty_layers() {
    let text = std::fs::read_to_string(common::data_dir().join("square_30_layers.gcode")).unwrap();
    let p = parse_program(&text).unwrap();
    assert_eq!(p.layer_count(), 30);
    for (n, expected) in [(1, 30), (5, 6), (10, 3), (7, 4), (30, 1), (1000, 0)] {
        let out = inject_scan_words(&p, InjectionConfig::new(n, 20).unwrap());
        assert_eq!(out.scan_word_count(), expected, "N = {n}");
        let twice = inject_scan_words(&out, InjectionConfig::new(n, 20).unwrap());
        assert!(twice.equivalent(&out));
        // the injected layers are the multiples of N
        let layers: Vec<u32> = out
            .commands()
            .iter()
            .zip(out.layer_index())
            .filter(|(c, _)| c.kind == CommandKind::ScanCapture)
            .map(|(_, &l)| l)
            .collect();
        assert_eq!(layers, (1..=30).filter(|l| l % n == 0).collect::<Vec<_>>());
    }
}

#[test]
fn malformed_inputs_report_lines() {
    let err = parse_program("G28\nG1 X10\nG1 X1.2.3\n").unwrap_err();
    assert!(matches!(err, GCodeError::MalformedNumber { line: 3, .. }), "{err:?}");
    let err = parse_program("; header\nM102 ; no positions\n").unwrap_err();
    assert_eq!(err.line(), Some(2));
    assert!(err.to_string().contains("scan word requires P"));
}
