//! G-code dialect used by the platform.
//!
//! One source line always becomes one [`GCodeCommand`]. The handful of words
//! the simulator acts on (`G0`/`G1`, `G28`, `M104`, `M140` and the scan word
//! `M102 P<n>`) get their own [`CommandKind`]; everything else is kept
//! verbatim as [`CommandKind::Other`] so vendor words survive a round trip.
//!
//! Layers are not read from slicer comments. A layer starts at the first
//! extruding move whose Z is strictly above every earlier extruding move, so
//! Z-hops and scan descents never open a layer.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GCodeError {
    #[error("line {line}: malformed numeric value {text:?} for word {letter}")]
    MalformedNumber {
        line: usize,
        letter: char,
        text: String,
    },
    #[error("line {line}: unexpected character {found:?}")]
    UnexpectedCharacter { line: usize, found: char },
    #[error("line {line}: scan word requires P")]
    MissingScanPositions { line: usize },
    #[error("line {line}: scan word P must be an integer >= 1, got {value}")]
    InvalidScanPositions { line: usize, value: f64 },
    #[error("invalid injection config: {0}")]
    InvalidInjection(&'static str),
}

impl GCodeError {
    /// Source line the error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            GCodeError::MalformedNumber { line, .. }
            | GCodeError::UnexpectedCharacter { line, .. }
            | GCodeError::MissingScanPositions { line }
            | GCodeError::InvalidScanPositions { line, .. } => Some(*line),
            GCodeError::InvalidInjection(_) => None,
        }
    }
}

/// A single letter/number pair such as `X10.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GCodeWord {
    pub letter: char,
    pub value: f64,
}

impl GCodeWord {
    pub fn new(letter: char, value: f64) -> Self {
        debug_assert!(letter.is_ascii_uppercase());
        debug_assert!(value.is_finite());
        GCodeWord { letter, value }
    }

    fn is(&self, letter: char, value: f64) -> bool {
        self.letter == letter && self.value == value
    }
}

impl fmt::Display for GCodeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // f64's Display is the shortest string that parses back to the same value.
        write!(f, "{}{}", self.letter, self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandKind {
    /// `G0` / `G1`
    LinearMove,
    /// `G28`
    Home,
    /// `M104`
    SetHotendTemp,
    /// `M140`
    SetBedTemp,
    /// `M102 P<n>`: run a scan cycle with `n` bed positions.
    ScanCapture,
    /// Comment-only or blank line.
    Comment,
    /// Anything else, preserved verbatim.
    Other,
}

#[derive(Debug, Clone)]
pub struct GCodeCommand {
    pub kind: CommandKind,
    /// The command word itself (`G1`, `M102`, ...). `None` for comment lines
    /// and for unrecognised lines that do not start with a word.
    pub code: Option<GCodeWord>,
    pub params: Vec<GCodeWord>,
    /// Comment text including its delimiters. For [`CommandKind::Comment`]
    /// this is the whole source line.
    pub comment: Option<String>,
    /// Verbatim code text of an [`CommandKind::Other`] line.
    pub raw: Option<String>,
    /// 1-based source line; 0 for commands synthesized by injection.
    pub source_line: usize,
}

impl GCodeCommand {
    pub fn scan_capture(positions: u32) -> Self {
        GCodeCommand {
            kind: CommandKind::ScanCapture,
            code: Some(GCodeWord::new('M', 102.0)),
            params: vec![GCodeWord::new('P', positions as f64)],
            comment: None,
            raw: None,
            source_line: 0,
        }
    }

    pub fn comment(text: impl Into<String>) -> Self {
        GCodeCommand {
            kind: CommandKind::Comment,
            code: None,
            params: Vec::new(),
            comment: Some(text.into()),
            raw: None,
            source_line: 0,
        }
    }

    /// Value of the first parameter with the given letter.
    pub fn param(&self, letter: char) -> Option<f64> {
        self.params
            .iter()
            .find(|w| w.letter == letter)
            .map(|w| w.value)
    }

    /// Capture count of a scan word.
    pub fn scan_positions(&self) -> Option<u32> {
        match self.kind {
            CommandKind::ScanCapture => self.param('P').map(|p| p as u32),
            _ => None,
        }
    }

    /// True for `G92` (set position), which the extrusion tracker needs.
    pub fn is_set_position(&self) -> bool {
        self.code.is_some_and(|c| c.is('G', 92.0))
    }

    /// Structural equality ignoring where the command came from.
    pub fn equivalent(&self, other: &GCodeCommand) -> bool {
        self.kind == other.kind
            && self.code == other.code
            && self.params == other.params
            && self.comment == other.comment
            && self.raw == other.raw
    }

    fn to_line(&self) -> String {
        if self.kind == CommandKind::Comment {
            return self.comment.clone().unwrap_or_default();
        }
        let mut line = match (&self.raw, self.kind) {
            (Some(raw), CommandKind::Other) => raw.clone(),
            _ => {
                let mut words = Vec::with_capacity(1 + self.params.len());
                if let Some(code) = self.code {
                    words.push(code.to_string());
                }
                words.extend(self.params.iter().map(|w| w.to_string()));
                words.join(" ")
            }
        };
        if let Some(comment) = &self.comment {
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(comment);
        }
        line
    }
}

/// Parsed program plus the derived per-command layer numbers.
#[derive(Debug, Clone, Default)]
pub struct GCodeProgram {
    commands: Vec<GCodeCommand>,
    layer_index: Vec<u32>,
}

impl GCodeProgram {
    pub fn new(commands: Vec<GCodeCommand>) -> Self {
        let layer_index = detect_layers(&commands);
        GCodeProgram {
            commands,
            layer_index,
        }
    }

    pub fn commands(&self) -> &[GCodeCommand] {
        &self.commands
    }

    /// Layer number of each command; 0 before the first extruding move.
    pub fn layer_index(&self) -> &[u32] {
        &self.layer_index
    }

    pub fn layer_count(&self) -> u32 {
        self.layer_index.last().copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn equivalent(&self, other: &GCodeProgram) -> bool {
        self.commands.len() == other.commands.len()
            && self
                .commands
                .iter()
                .zip(&other.commands)
                .all(|(a, b)| a.equivalent(b))
    }

    pub fn scan_word_count(&self) -> usize {
        self.commands
            .iter()
            .filter(|c| c.kind == CommandKind::ScanCapture)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InjectionConfig {
    pub every_n_layers: u32,
    pub positions: u32,
}

impl InjectionConfig {
    pub fn new(every_n_layers: u32, positions: u32) -> Result<Self, GCodeError> {
        if every_n_layers == 0 {
            return Err(GCodeError::InvalidInjection("every_n_layers must be >= 1"));
        }
        if positions == 0 {
            return Err(GCodeError::InvalidInjection("positions must be >= 1"));
        }
        Ok(InjectionConfig {
            every_n_layers,
            positions,
        })
    }
}

pub fn parse_program(text: &str) -> Result<GCodeProgram, GCodeError> {
    let commands = text
        .lines()
        .enumerate()
        .map(|(i, line)| parse_line(line, i + 1))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GCodeProgram::new(commands))
}

/// One line per command, each terminated by `\n`.
pub fn serialize_program(program: &GCodeProgram) -> String {
    let mut out = String::new();
    for cmd in &program.commands {
        out.push_str(&cmd.to_line());
        out.push('\n');
    }
    out
}

/// Splits a line into its code text and collected comment text.
fn split_comments(line: &str) -> (String, Option<String>) {
    let mut code = String::new();
    let mut comments: Vec<String> = Vec::new();
    let mut chars = line.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            ';' => {
                comments.push(line[i..].trim_end().to_string());
                break;
            }
            '(' => {
                let rest = &line[i..];
                let end = rest.find(')').map(|e| e + 1).unwrap_or(rest.len());
                comments.push(rest[..end].to_string());
                // skip the consumed comment
                let consumed = rest[..end].chars().count();
                for _ in 1..consumed {
                    chars.next();
                }
            }
            _ => code.push(c),
        }
    }
    let comment = if comments.is_empty() {
        None
    } else {
        Some(comments.join(" "))
    };
    (code.trim().to_string(), comment)
}

fn tokenize(code: &str, line: usize) -> Result<Vec<GCodeWord>, GCodeError> {
    let mut words = Vec::new();
    let bytes: Vec<char> = code.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if !c.is_ascii_alphabetic() {
            return Err(GCodeError::UnexpectedCharacter { line, found: c });
        }
        let letter = c.to_ascii_uppercase();
        i += 1;
        while i < bytes.len() && bytes[i] == ' ' {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && matches!(bytes[i], '0'..='9' | '.' | '+' | '-') {
            i += 1;
        }
        let text: String = bytes[start..i].iter().collect();
        let trailing_ok = i == bytes.len() || bytes[i].is_whitespace() || bytes[i].is_ascii_alphabetic();
        let value = text
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && trailing_ok && text.chars().any(|c| c.is_ascii_digit()));
        // bare axis flags are only meaningful for homing: `G28 X Y`
        let home_flag = text.is_empty() && trailing_ok && words.first().is_some_and(|w: &GCodeWord| w.is('G', 28.0));
        match value.or(home_flag.then_some(0.0)) {
            Some(value) => words.push(GCodeWord { letter, value }),
            None => {
                let mut text = text;
                if !trailing_ok {
                    text.extend(bytes[i..].iter().take_while(|c| !c.is_whitespace()));
                }
                return Err(GCodeError::MalformedNumber { line, letter, text });
            }
        }
    }
    Ok(words)
}

fn classify_code(code: &GCodeWord) -> CommandKind {
    match (code.letter, code.value) {
        ('G', v) if v == 0.0 || v == 1.0 => CommandKind::LinearMove,
        ('G', 28.0) => CommandKind::Home,
        ('M', 104.0) => CommandKind::SetHotendTemp,
        ('M', 140.0) => CommandKind::SetBedTemp,
        ('M', 102.0) => CommandKind::ScanCapture,
        _ => CommandKind::Other,
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<GCodeCommand, GCodeError> {
    let (code_text, comment) = split_comments(line);
    if code_text.is_empty() {
        return Ok(GCodeCommand {
            source_line: line_no,
            ..GCodeCommand::comment(line)
        });
    }

    // Only the leading word decides whether the line is one we interpret;
    // unknown lines may carry free text (`M117 Printing...`) and are kept as-is.
    let first = tokenize_first(&code_text, line_no);
    let kind = first.as_ref().map(classify_code).unwrap_or(CommandKind::Other);

    if kind == CommandKind::Other {
        let words = tokenize(&code_text, line_no).unwrap_or_default();
        let mut iter = words.into_iter();
        let code = iter.next();
        return Ok(GCodeCommand {
            kind,
            code,
            params: iter.collect(),
            comment,
            raw: Some(code_text),
            source_line: line_no,
        });
    }

    let words = tokenize(&code_text, line_no)?;
    let code = words[0];
    let params = words[1..].to_vec();
    if kind == CommandKind::ScanCapture {
        match params.iter().find(|w| w.letter == 'P') {
            None => return Err(GCodeError::MissingScanPositions { line: line_no }),
            Some(p) if p.value < 1.0 || p.value.fract() != 0.0 || p.value > u32::MAX as f64 => {
                return Err(GCodeError::InvalidScanPositions {
                    line: line_no,
                    value: p.value,
                })
            }
            Some(_) => {}
        }
    }
    Ok(GCodeCommand {
        kind,
        code: Some(code),
        params,
        comment,
        raw: None,
        source_line: line_no,
    })
}

fn tokenize_first(code: &str, line: usize) -> Option<GCodeWord> {
    let first = code.split_whitespace().next()?;
    // Compact forms such as `G1X10` still start with a recognisable word.
    let end = first
        .char_indices()
        .skip(1)
        .find(|(_, c)| c.is_ascii_alphabetic())
        .map(|(i, _)| i)
        .unwrap_or(first.len());
    tokenize(&first[..end], line).ok()?.into_iter().next()
}

/// Tracks extrusion state so moves can be classified as extruding.
///
/// Handles absolute (`M82`, default) and relative (`M83`) E, `G92 E` resets
/// and modal Z.
#[derive(Debug, Clone)]
pub struct ExtrusionTracker {
    relative_e: bool,
    last_e: f64,
    z: f64,
}

impl Default for ExtrusionTracker {
    fn default() -> Self {
        ExtrusionTracker {
            relative_e: false,
            last_e: 0.0,
            z: 0.0,
        }
    }
}

impl ExtrusionTracker {
    /// Feeds one command; returns `Some(z)` if it's an extruding move at `z`.
    pub fn step(&mut self, cmd: &GCodeCommand) -> Option<f64> {
        match cmd.kind {
            CommandKind::LinearMove => {
                if let Some(z) = cmd.param('Z') {
                    self.z = z;
                }
                let e = cmd.param('E')?;
                let extruding = if self.relative_e {
                    e > 0.0
                } else {
                    e > self.last_e
                };
                if !self.relative_e {
                    self.last_e = e;
                }
                extruding.then_some(self.z)
            }
            CommandKind::Home => {
                if cmd.params.is_empty() || cmd.param('Z').is_some() {
                    self.z = 0.0;
                }
                None
            }
            CommandKind::Other => {
                match cmd.code {
                    Some(c) if c.is('M', 82.0) => self.relative_e = false,
                    Some(c) if c.is('M', 83.0) => self.relative_e = true,
                    _ if cmd.is_set_position() => {
                        if let Some(e) = cmd.param('E') {
                            self.last_e = e;
                        }
                        if let Some(z) = cmd.param('Z') {
                            self.z = z;
                        }
                    }
                    _ => {}
                }
                None
            }
            _ => None,
        }
    }
}

/// Layer number of every command (0 until the first extruding move).
pub fn detect_layers(commands: &[GCodeCommand]) -> Vec<u32> {
    let mut tracker = ExtrusionTracker::default();
    let mut top = f64::NEG_INFINITY;
    let mut layer = 0;
    commands
        .iter()
        .map(|cmd| {
            if let Some(z) = tracker.step(cmd) {
                if z > top {
                    top = z;
                    layer += 1;
                }
            }
            layer
        })
        .collect()
}

/// Inserts `M102 P<positions>` right after the last extruding move of every
/// layer whose number is a multiple of `every_n_layers`.
///
/// A layer whose last extruding move is already followed by the same scan
/// word is left alone, which makes the operation idempotent.
pub fn inject_scan_words(program: &GCodeProgram, cfg: InjectionConfig) -> GCodeProgram {
    let commands = program.commands();
    let layers = program.layer_index();
    let mut last_extrusion = vec![None; program.layer_count() as usize + 1];
    let mut tracker = ExtrusionTracker::default();
    for (i, cmd) in commands.iter().enumerate() {
        if tracker.step(cmd).is_some() {
            last_extrusion[layers[i] as usize] = Some(i);
        }
    }
    let mut insert_after = vec![false; commands.len()];
    for (layer, idx) in last_extrusion.iter().enumerate().skip(1) {
        if let Some(i) = *idx {
            let already = commands.get(i + 1).and_then(|c| c.scan_positions()) == Some(cfg.positions);
            if (layer as u32).is_multiple_of(cfg.every_n_layers) && !already {
                insert_after[i] = true;
            }
        }
    }
    let mut out = Vec::with_capacity(commands.len() + (program.layer_count() / cfg.every_n_layers) as usize);
    for (cmd, insert) in commands.iter().zip(insert_after) {
        out.push(cmd.clone());
        if insert {
            out.push(GCodeCommand::scan_capture(cfg.positions));
        }
    }
    GCodeProgram::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(line: &str) -> GCodeCommand {
        parse_program(line).unwrap().commands()[0].clone()
    }

    #[test]
    fn linear_move_words() {
        let cmd = one("G1 X10 Y20 F1200");
        assert_eq!(cmd.kind, CommandKind::LinearMove);
        assert_eq!(cmd.param('X'), Some(10.0));
        assert_eq!(cmd.param('Y'), Some(20.0));
        assert_eq!(cmd.param('F'), Some(1200.0));
        assert_eq!(cmd.param('Z'), None);
    }

    #[test]
    fn scan_word() {
        let cmd = one("M102 P20");
        assert_eq!(cmd.kind, CommandKind::ScanCapture);
        assert_eq!(cmd.scan_positions(), Some(20));
    }

    #[test]
    fn scan_word_without_positions_is_an_error() {
        let err = parse_program("G28\nM102").unwrap_err();
        assert_eq!(err, GCodeError::MissingScanPositions { line: 2 });
        assert!(err.to_string().contains("scan word requires P"));
    }

    #[test]
    fn scan_word_rejects_fractional_and_zero_positions() {
        assert!(matches!(
            parse_program("M102 P0"),
            Err(GCodeError::InvalidScanPositions { .. })
        ));
        assert!(matches!(
            parse_program("M102 P2.5"),
            Err(GCodeError::InvalidScanPositions { .. })
        ));
    }

    #[test]
    fn malformed_number_reports_line() {
        let err = parse_program("G28\nG1 X10\nG1 X1.2.3").unwrap_err();
        assert_eq!(err.line(), Some(3));
        assert!(matches!(parse_program("G1 Xabc"), Err(GCodeError::MalformedNumber { letter: 'X', .. })));
        assert!(matches!(parse_program("G1 X"), Err(GCodeError::MalformedNumber { .. })));
    }

    #[test]
    fn comments_are_preserved() {
        let p = parse_program("; layer 1\n(setup)\n\nG1 X1 ; trailing\n").unwrap();
        let k: Vec<_> = p.commands().iter().map(|c| c.kind).collect();
        assert_eq!(
            k,
            [
                CommandKind::Comment,
                CommandKind::Comment,
                CommandKind::Comment,
                CommandKind::LinearMove
            ]
        );
        assert_eq!(p.commands()[3].comment.as_deref(), Some("; trailing"));
        assert_eq!(serialize_program(&p), "; layer 1\n(setup)\n\nG1 X1 ; trailing\n");
    }

    #[test]
    fn unknown_words_kept_verbatim() {
        let src = "M117 Printing benchy...\nT0\nM107\n";
        let p = parse_program(src).unwrap();
        assert!(p.commands().iter().all(|c| c.kind == CommandKind::Other));
        assert_eq!(serialize_program(&p), src);
    }

    #[test]
    fn compact_words_and_lowercase() {
        let cmd = one("g1x10y-2.5e0.03");
        assert_eq!(cmd.kind, CommandKind::LinearMove);
        assert_eq!(cmd.param('Y'), Some(-2.5));
        assert_eq!(cmd.param('E'), Some(0.03));
    }

    #[test]
    fn serialize_empty_and_scan_word() {
        assert_eq!(serialize_program(&GCodeProgram::default()), "");
        let p = GCodeProgram::new(vec![GCodeCommand::scan_capture(20)]);
        assert_eq!(serialize_program(&p), "M102 P20\n");
    }

    #[test]
    fn serialization_uses_shortest_decimal() {
        let p = parse_program("G1 X10.000 Y0.10 Z-0.0").unwrap();
        assert_eq!(serialize_program(&p), "G1 X10 Y0.1 Z-0\n");
    }

    #[test]
    fn layers_monotone_z() {
        let p = parse_program("G1 Z0.2\nG1 X1 E1\nG1 Z0.4\nG1 X2 E2\nG1 Z0.6\nG1 X3 E3\n").unwrap();
        assert_eq!(p.layer_count(), 3);
        assert_eq!(p.layer_index(), &[0, 1, 1, 2, 2, 3]);
    }

    #[test]
    fn empty_program_has_no_layers() {
        assert_eq!(GCodeProgram::default().layer_count(), 0);
        assert_eq!(parse_program("G28\nG1 X10 Y10").unwrap().layer_count(), 0);
    }

    #[test]
    fn relative_extrusion_and_reset() {
        let p = parse_program(
            "M83\nG1 Z0.2\nG1 X1 E0.5\nG1 X2 E-0.5\nG1 Z0.4\nG1 X2 E0.5\nM82\nG92 E0\nG1 Z0.6\nG1 X1 E0.2\n",
        )
        .unwrap();
        assert_eq!(p.layer_count(), 3);
    }

    #[test]
    fn retraction_at_new_height_does_not_open_layer() {
        // absolute E going backwards is a retraction
        let p = parse_program("G1 Z0.2\nG1 X1 E5\nG1 Z0.4 E4\nG1 X2 E3\n").unwrap();
        assert_eq!(p.layer_count(), 1);
    }

    #[test]
    fn bare_axis_flags_only_on_home() {
        let cmd = one("G28 X Y");
        assert_eq!(cmd.kind, CommandKind::Home);
        assert_eq!(cmd.param('X'), Some(0.0));
        assert_eq!(cmd.param('Z'), None);
        assert!(matches!(parse_program("G1 X Y2"), Err(GCodeError::MalformedNumber { letter: 'X', .. })));
    }

    #[test]
    fn injection_every_layer() {
        let p = parse_program("G1 Z0.2\nG1 X1 E1\nG1 Z0.4\nG1 X2 E2\nG1 Z0.6\nG1 X3 E3\n").unwrap();
        let cfg = InjectionConfig::new(1, 4).unwrap();
        let out = inject_scan_words(&p, cfg);
        assert_eq!(out.scan_word_count(), 3);
        // inserted right before the move that rises to the next layer height
        assert_eq!(out.commands()[2].kind, CommandKind::ScanCapture);
        assert_eq!(out.commands()[8].kind, CommandKind::ScanCapture);
        assert_eq!(inject_scan_words(&out, cfg).len(), out.len());
    }

    #[test]
    fn injection_on_empty_program_is_identity() {
        let p = parse_program("G28\n; nothing printed\n").unwrap();
        let out = inject_scan_words(&p, InjectionConfig::new(1, 20).unwrap());
        assert!(out.equivalent(&p));
    }

    #[test]
    fn injection_config_rejects_zero() {
        assert!(InjectionConfig::new(0, 20).is_err());
        assert!(InjectionConfig::new(10, 0).is_err());
    }
}
