//! Plain-text netlist parser and validated circuit graph.
//!
//! One element per line, `#` starts a comment, `.end` terminates:
//!
//! ```text
//! R<name> n+ n- <ohms>
//! C<name> n+ n- <farads>
//! L<name> n+ n- <henrys>
//! V<name> n+ n- dc <volts> | sin <amp> <freq> [<phase>]
//! I<name> n+ n- dc <amps>  | sin <amp> <freq> [<phase>]
//! D<name> n+ n- <Is> <Vt>
//! F<name> n+ n- lumped <C> | ladder <N> <Ctotal> <Gtotal>
//! ```
//!
//! Node ids are non-negative integers and node 0 is ground. Branch currents
//! are oriented from `n+` through the element to `n-`.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ElementKind {
    Resistor,
    Capacitor,
    Inductor,
    VoltageSource,
    CurrentSource,
    Diode,
    Field,
}

impl ElementKind {
    pub const ALL: [ElementKind; 7] = [
        ElementKind::Resistor,
        ElementKind::Capacitor,
        ElementKind::Inductor,
        ElementKind::VoltageSource,
        ElementKind::CurrentSource,
        ElementKind::Diode,
        ElementKind::Field,
    ];

    fn from_prefix(c: char) -> Option<Self> {
        Some(match c.to_ascii_uppercase() {
            'R' => ElementKind::Resistor,
            'C' => ElementKind::Capacitor,
            'L' => ElementKind::Inductor,
            'V' => ElementKind::VoltageSource,
            'I' => ElementKind::CurrentSource,
            'D' => ElementKind::Diode,
            'F' => ElementKind::Field,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SourceShape {
    Dc,
    Sin,
}

/// Independent source waveform: `dc` constant or `amp * sin(2*pi*freq*t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceSpec {
    pub shape: SourceShape,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl SourceSpec {
    pub fn dc(value: f64) -> Self {
        Self {
            shape: SourceShape::Dc,
            amplitude: value,
            frequency: 0.0,
            phase: 0.0,
        }
    }

    pub fn sin(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Self {
            shape: SourceShape::Sin,
            amplitude,
            frequency,
            phase,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.shape {
            SourceShape::Dc => self.amplitude,
            SourceShape::Sin => {
                self.amplitude * (2.0 * std::f64::consts::PI * self.frequency * t + self.phase).sin()
            }
        }
    }
}

/// Field device description as written in the netlist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FieldSpec {
    Lumped { capacitance: f64 },
    Ladder { segments: usize, capacitance: f64, conductance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ElementParams {
    Resistance(f64),
    Capacitance(f64),
    Inductance(f64),
    Voltage(SourceSpec),
    Current(SourceSpec),
    Diode { saturation_current: f64, thermal_voltage: f64 },
    Field(FieldSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Element {
    pub name: String,
    pub node_plus: NodeId,
    pub node_minus: NodeId,
    pub params: ElementParams,
}

impl Element {
    pub fn kind(&self) -> ElementKind {
        match self.params {
            ElementParams::Resistance(_) => ElementKind::Resistor,
            ElementParams::Capacitance(_) => ElementKind::Capacitor,
            ElementParams::Inductance(_) => ElementKind::Inductor,
            ElementParams::Voltage(_) => ElementKind::VoltageSource,
            ElementParams::Current(_) => ElementKind::CurrentSource,
            ElementParams::Diode { .. } => ElementKind::Diode,
            ElementParams::Field(_) => ElementKind::Field,
        }
    }

    fn check(&self) -> Result<(), ParseErrorKind> {
        if self.node_plus == self.node_minus {
            return Err(ParseErrorKind::SelfLoop(self.name.clone(), self.node_plus));
        }
        if ElementKind::from_prefix(self.name.chars().next().unwrap_or(' ')) != Some(self.kind()) {
            return Err(ParseErrorKind::Syntax(format!(
                "element name '{}' does not match its kind",
                self.name
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let ok = match self.params {
            ElementParams::Resistance(v) | ElementParams::Capacitance(v) | ElementParams::Inductance(v) => {
                positive(v)
            }
            ElementParams::Voltage(s) | ElementParams::Current(s) => {
                s.amplitude.is_finite()
                    && s.phase.is_finite()
                    && (s.shape == SourceShape::Dc || positive(s.frequency))
            }
            ElementParams::Diode {
                saturation_current,
                thermal_voltage,
            } => positive(saturation_current) && positive(thermal_voltage),
            ElementParams::Field(FieldSpec::Lumped { capacitance }) => positive(capacitance),
            ElementParams::Field(FieldSpec::Ladder {
                segments,
                capacitance,
                conductance,
            }) => segments >= 1 && positive(capacitance) && conductance.is_finite() && conductance >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ParseErrorKind::InvalidValue(self.name.clone()))
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} ", self.name, self.node_plus, self.node_minus)?;
        let source = |f: &mut fmt::Formatter<'_>, s: &SourceSpec| match s.shape {
            SourceShape::Dc => write!(f, "dc {:?}", s.amplitude),
            SourceShape::Sin => write!(f, "sin {:?} {:?} {:?}", s.amplitude, s.frequency, s.phase),
        };
        match &self.params {
            ElementParams::Resistance(v) | ElementParams::Capacitance(v) | ElementParams::Inductance(v) => {
                write!(f, "{v:?}")
            }
            ElementParams::Voltage(s) | ElementParams::Current(s) => source(f, s),
            ElementParams::Diode {
                saturation_current,
                thermal_voltage,
            } => write!(f, "{saturation_current:?} {thermal_voltage:?}"),
            ElementParams::Field(FieldSpec::Lumped { capacitance }) => write!(f, "lumped {capacitance:?}"),
            ElementParams::Field(FieldSpec::Ladder {
                segments,
                capacitance,
                conductance,
            }) => write!(f, "ladder {segments} {capacitance:?} {conductance:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown element kind '{0}'")]
    UnknownKind(char),
    #[error("missing ground node 0")]
    MissingGround,
    #[error("duplicate element name '{0}'")]
    DuplicateName(String),
    #[error("element '{0}' connects node {1} to itself")]
    SelfLoop(String, NodeId),
    #[error("element '{0}' has an invalid or non-positive value")]
    InvalidValue(String),
    #[error("{0} field elements; at most one is supported")]
    MultipleFields(usize),
    #[error("node {0} is not connected to ground")]
    Disconnected(NodeId),
    #[error("netlist contains no elements")]
    Empty,
}

/// Netlist error with a 1-based source location when one applies.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ParseError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.kind),
            (Some(l), None) => write!(f, "line {l}: {}", self.kind),
            _ => write!(f, "{}", self.kind),
        }
    }
}

impl From<ParseErrorKind> for ParseError {
    fn from(kind: ParseErrorKind) -> Self {
        Self {
            line: None,
            column: None,
            kind,
        }
    }
}

/// Validated circuit: elements in file order over nodes `0..num_nodes`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircuitGraph {
    num_nodes: usize,
    elements: Vec<Element>,
}

impl CircuitGraph {
    /// Validate a list of elements into a graph.
    pub fn new(elements: Vec<Element>) -> Result<Self, ParseError> {
        Self::validate(elements, &[])
    }

    fn validate(elements: Vec<Element>, lines: &[usize]) -> Result<Self, ParseError> {
        let at = |idx: usize, kind: ParseErrorKind| ParseError {
            line: lines.get(idx).copied(),
            column: None,
            kind,
        };
        if elements.is_empty() {
            return Err(ParseErrorKind::Empty.into());
        }
        let mut names = HashSet::new();
        let mut fields = 0;
        for (idx, e) in elements.iter().enumerate() {
            e.check().map_err(|k| at(idx, k))?;
            if !names.insert(e.name.as_str()) {
                return Err(at(idx, ParseErrorKind::DuplicateName(e.name.clone())));
            }
            if e.kind() == ElementKind::Field {
                fields += 1;
                if fields > 1 {
                    return Err(at(idx, ParseErrorKind::MultipleFields(fields)));
                }
            }
        }
        if !elements.iter().any(|e| e.node_plus == 0 || e.node_minus == 0) {
            return Err(ParseErrorKind::MissingGround.into());
        }
        let num_nodes = elements
            .iter()
            .map(|e| e.node_plus.max(e.node_minus))
            .max()
            .unwrap_or(0)
            + 1;
        let graph = Self { num_nodes, elements };
        if let Some(node) = graph.first_unreachable(|_| true) {
            return Err(ParseErrorKind::Disconnected(node).into());
        }
        Ok(graph)
    }

    /// Number of nodes including ground.
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn elements_of(&self, kind: ElementKind) -> impl Iterator<Item = &Element> {
        self.elements.iter().filter(move |e| e.kind() == kind)
    }

    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }

    pub fn field_element(&self) -> Option<&Element> {
        self.elements_of(ElementKind::Field).next()
    }

    /// Reduced incidence matrix for one element kind (ground row omitted).
    pub fn incidence(&self, kind: ElementKind) -> DMatrix<f64> {
        let cols: Vec<&Element> = self.elements_of(kind).collect();
        let mut a = DMatrix::zeros(self.num_nodes - 1, cols.len());
        for (j, e) in cols.iter().enumerate() {
            if e.node_plus > 0 {
                a[(e.node_plus - 1, j)] = 1.0;
            }
            if e.node_minus > 0 {
                a[(e.node_minus - 1, j)] = -1.0;
            }
        }
        a
    }

    /// First node not reachable from ground through elements accepted by `keep`.
    pub(crate) fn first_unreachable(&self, keep: impl Fn(&Element) -> bool) -> Option<NodeId> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for e in self.elements.iter().filter(|e| keep(e)) {
            adj[e.node_plus].push(e.node_minus);
            adj[e.node_minus].push(e.node_plus);
        }
        let mut seen = vec![false; self.num_nodes];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(n) = queue.pop_front() {
            for &m in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        seen.iter().position(|s| !s)
    }

    /// Copy of this graph with one element swapped for another.
    pub fn replace_element(&self, name: &str, with: Element) -> Result<Self, ParseError> {
        let elements = self
            .elements
            .iter()
            .map(|e| if e.name == name { with.clone() } else { e.clone() })
            .collect();
        Self::new(elements)
    }
}

impl fmt::Display for CircuitGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.elements {
            writeln!(f, "{e}")?;
        }
        writeln!(f, ".end")
    }
}

impl FromStr for CircuitGraph {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_netlist(s)
    }
}

/// Whitespace-separated tokens with their 1-based columns.
fn tokenize(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s, &line[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out.into_iter()
        .map(|(byte, tok)| (line[..byte].chars().count() + 1, tok))
        .collect()
}

struct LineParser<'a> {
    line: usize,
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
    end_column: usize,
}

impl<'a> LineParser<'a> {
    fn err(&self, column: usize, kind: ParseErrorKind) -> ParseError {
        ParseError {
            line: Some(self.line),
            column: Some(column),
            kind,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), ParseError> {
        let tok = self
            .tokens
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(self.end_column, ParseErrorKind::Syntax(format!("expected {what}"))))?;
        self.pos += 1;
        Ok(tok)
    }

    fn number(&mut self, what: &str) -> Result<f64, ParseError> {
        let (col, tok) = self.next(what)?;
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(col, ParseErrorKind::Syntax(format!("expected {what}, found '{tok}'")))),
        }
    }

    fn integer(&mut self, what: &str) -> Result<usize, ParseError> {
        let (col, tok) = self.next(what)?;
        tok.parse::<usize>()
            .map_err(|_| self.err(col, ParseErrorKind::Syntax(format!("expected {what}, found '{tok}'"))))
    }

    fn optional_number(&mut self, what: &str) -> Result<Option<f64>, ParseError> {
        if self.pos < self.tokens.len() {
            self.number(what).map(Some)
        } else {
            Ok(None)
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.tokens.get(self.pos) {
            Some(&(col, tok)) => Err(self.err(col, ParseErrorKind::Syntax(format!("unexpected token '{tok}'")))),
            None => Ok(()),
        }
    }

    fn source(&mut self) -> Result<SourceSpec, ParseError> {
        let (col, shape) = self.next("source shape 'dc' or 'sin'")?;
        match shape.to_ascii_lowercase().as_str() {
            "dc" => Ok(SourceSpec::dc(self.number("source value")?)),
            "sin" => {
                let amp = self.number("amplitude")?;
                let freq = self.number("frequency")?;
                let phase = self.optional_number("phase")?.unwrap_or(0.0);
                Ok(SourceSpec::sin(amp, freq, phase))
            }
            _ => Err(self.err(col, ParseErrorKind::Syntax(format!("unknown source shape '{shape}'")))),
        }
    }

    fn field(&mut self) -> Result<FieldSpec, ParseError> {
        let (col, model) = self.next("field model 'lumped' or 'ladder'")?;
        match model.to_ascii_lowercase().as_str() {
            "lumped" => Ok(FieldSpec::Lumped {
                capacitance: self.number("capacitance")?,
            }),
            "ladder" => Ok(FieldSpec::Ladder {
                segments: self.integer("segment count")?,
                capacitance: self.number("total capacitance")?,
                conductance: self.number("total conductance")?,
            }),
            _ => Err(self.err(col, ParseErrorKind::Syntax(format!("unknown field model '{model}'")))),
        }
    }
}

/// Parse a netlist into a validated [`CircuitGraph`].
pub fn parse_netlist(text: &str) -> Result<CircuitGraph, ParseError> {
    let mut elements = Vec::new();
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens = tokenize(content);
        let Some(&(name_col, name)) = tokens.first() else {
            continue;
        };
        if name.eq_ignore_ascii_case(".end") {
            break;
        }
        let mut p = LineParser {
            line: line_no,
            tokens,
            pos: 1,
            end_column: content.trim_end().chars().count() + 1,
        };
        let prefix = name.chars().next().unwrap_or(' ');
        let kind = ElementKind::from_prefix(prefix)
            .ok_or_else(|| p.err(name_col, ParseErrorKind::UnknownKind(prefix)))?;
        let node_plus = p.integer("node id")?;
        let node_minus = p.integer("node id")?;
        let params = match kind {
            ElementKind::Resistor => ElementParams::Resistance(p.number("resistance")?),
            ElementKind::Capacitor => ElementParams::Capacitance(p.number("capacitance")?),
            ElementKind::Inductor => ElementParams::Inductance(p.number("inductance")?),
            ElementKind::VoltageSource => ElementParams::Voltage(p.source()?),
            ElementKind::CurrentSource => ElementParams::Current(p.source()?),
            ElementKind::Diode => ElementParams::Diode {
                saturation_current: p.number("saturation current")?,
                thermal_voltage: p.number("thermal voltage")?,
            },
            ElementKind::Field => ElementParams::Field(p.field()?),
        };
        p.finish()?;
        elements.push(Element {
            name: name.to_string(),
            node_plus,
            node_minus,
            params,
        });
        lines.push(line_no);
    }
    CircuitGraph::validate(elements, &lines)
}
