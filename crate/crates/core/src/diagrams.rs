//! Tree-level diagrams for the Itô equations written in the diagonal frame,
//!
//! ```text
//! dφ/dt = λ_φ φ + κ_φ ξ + α φ (v + w) ξ,   φ ∈ {u, v, w},
//! ```
//!
//! with propagators Θ(t - t') e^{λ(t - t')} (Θ(0) = 0) and white noise
//! ⟨ξ ξ⟩ = δ. Endings are external fields (or noise) at fixed times; vertices
//! are the initial-value, linear-noise and cubic-noise terms.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::expoly::{ExpPoly, Piecewise};
use crate::model::{DiagonalCoords, DiagonalFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flavor {
    U,
    V,
    W,
    Xi,
}

impl Flavor {
    pub fn parse(s: &str) -> Result<Flavor> {
        match s {
            "u" => Ok(Flavor::U),
            "v" => Ok(Flavor::V),
            "w" => Ok(Flavor::W),
            "xi" | "ξ" => Ok(Flavor::Xi),
            other => Err(Error::UnsupportedDiagram(format!("unknown flavor `{other}`"))),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Flavor::U => "u",
            Flavor::V => "v",
            Flavor::W => "w",
            Flavor::Xi => "xi",
        }
    }

    fn field_index(self) -> usize {
        match self {
            Flavor::U => 0,
            Flavor::V => 1,
            Flavor::W => 2,
            Flavor::Xi => unreachable!("noise has no propagator"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VertexKind {
    InitU,
    InitV,
    InitW,
    CubicUUV,
    CubicUUW,
    CubicVVV,
    CubicVVW,
    CubicWWV,
    CubicWWW,
    LinearU,
    LinearV,
    LinearW,
}

use VertexKind::*;

pub const ALL_VERTEX_KINDS: [VertexKind; 12] = [
    InitU, InitV, InitW, CubicUUV, CubicUUW, CubicVVV, CubicVVW, CubicWWV, CubicWWW, LinearU,
    LinearV, LinearW,
];

const NOISE_KINDS: [VertexKind; 9] = [
    CubicUUV, CubicUUW, CubicVVV, CubicVVW, CubicWWV, CubicWWW, LinearU, LinearV, LinearW,
];

const INIT_KINDS: [VertexKind; 3] = [InitU, InitV, InitW];

impl VertexKind {
    /// Flavor of the conjugate (outgoing) leg.
    pub fn conjugate(self) -> Flavor {
        match self {
            InitU | CubicUUV | CubicUUW | LinearU => Flavor::U,
            InitV | CubicVVV | CubicVVW | LinearV => Flavor::V,
            InitW | CubicWWV | CubicWWW | LinearW => Flavor::W,
        }
    }

    /// Incoming field legs.
    pub fn field_legs(self) -> &'static [Flavor] {
        match self {
            CubicUUV => &[Flavor::U, Flavor::V],
            CubicUUW => &[Flavor::U, Flavor::W],
            CubicVVV => &[Flavor::V, Flavor::V],
            CubicVVW => &[Flavor::V, Flavor::W],
            CubicWWV => &[Flavor::W, Flavor::V],
            CubicWWW => &[Flavor::W, Flavor::W],
            _ => &[],
        }
    }

    pub fn has_noise(self) -> bool {
        !matches!(self, InitU | InitV | InitW)
    }

    pub fn is_cubic(self) -> bool {
        !self.field_legs().is_empty()
    }

    pub fn label(self) -> &'static str {
        match self {
            InitU => "p_u0",
            InitV => "p_v0",
            InitW => "p_w0",
            CubicUUV => "p_u u v xi",
            CubicUUW => "p_u u w xi",
            CubicVVV => "p_v v v xi",
            CubicVVW => "p_v v w xi",
            CubicWWV => "p_w w v xi",
            CubicWWW => "p_w w w xi",
            LinearU => "p_u xi",
            LinearV => "p_v xi",
            LinearW => "p_w xi",
        }
    }

    pub fn weight(self, frame: &DiagonalFrame, initial: &DiagonalCoords) -> C64 {
        match self {
            InitU => initial.u,
            InitV => initial.v,
            InitW => initial.w,
            LinearU => frame.kappa1,
            LinearV => frame.kappa2,
            LinearW => frame.kappa3,
            _ => C64::new(frame.alpha, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ending {
    pub flavor: Flavor,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldSlot {
    Ending(usize),
    Leg { vertex: usize, leg: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseSlot {
    Ending(usize),
    Vertex(usize),
}

/// Propagator from a field slot (later time) to a vertex's conjugate leg (earlier time).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropagatorEdge {
    pub field: FieldSlot,
    pub conjugate: usize,
    pub flavor: Flavor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagram {
    pub endings: Vec<Ending>,
    pub vertices: Vec<VertexKind>,
    pub propagators: Vec<PropagatorEdge>,
    pub noise_pairs: Vec<(NoiseSlot, NoiseSlot)>,
    /// Number of Wick contractions in this equivalence class.
    pub multiplicity: usize,
    /// multiplicity / Π m_k! over repeated vertex kinds.
    pub coefficient: f64,
    /// Power of the small-noise parameter, E + I - V.
    pub nu_order: i64,
    pub loops: usize,
    pub value: Option<C64>,
}

impl Diagram {
    fn empty() -> Self {
        Diagram {
            endings: Vec::new(),
            vertices: Vec::new(),
            propagators: Vec::new(),
            noise_pairs: Vec::new(),
            multiplicity: 1,
            coefficient: 1.0,
            nu_order: 0,
            loops: 0,
            value: Some(C64::new(1.0, 0.0)),
        }
    }

    /// Same topology with new ending times.
    pub fn with_times(&self, times: &[f64]) -> Diagram {
        assert_eq!(times.len(), self.endings.len(), "one time per ending");
        let mut d = self.clone();
        for (e, &t) in d.endings.iter_mut().zip(times) {
            e.time = t;
        }
        d.value = None;
        d
    }

    /// Human-readable listing of vertices, edges, order and value.
    pub fn listing(&self) -> String {
        let mut s = String::new();
        let ends: Vec<String> = self
            .endings
            .iter()
            .enumerate()
            .map(|(i, e)| format!("e{i}={}({})", e.flavor.symbol(), e.time))
            .collect();
        let _ = writeln!(s, "endings: {}", ends.join(" "));
        let verts: Vec<String> = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, k)| format!("V{i}=[{}]", k.label()))
            .collect();
        let _ = writeln!(s, "vertices: {}", verts.join(" "));
        for p in &self.propagators {
            let from = match p.field {
                FieldSlot::Ending(i) => format!("e{i}"),
                FieldSlot::Leg { vertex, leg } => format!("V{vertex}.{leg}"),
            };
            let _ = writeln!(s, "  {} <-{}- V{}", from, p.flavor.symbol(), p.conjugate);
        }
        for (a, b) in &self.noise_pairs {
            let name = |n: &NoiseSlot| match n {
                NoiseSlot::Ending(i) => format!("e{i}"),
                NoiseSlot::Vertex(v) => format!("V{v}"),
            };
            let _ = writeln!(s, "  {} ~xi~ {}", name(a), name(b));
        }
        let _ = write!(
            s,
            "coefficient: {} (contractions {}), nu order: {}, loops: {}",
            self.coefficient, self.multiplicity, self.nu_order, self.loops
        );
        if let Some(v) = self.value {
            let _ = write!(s, ", value: {:.12e} {:+.12e}i", v.re, v.im);
        }
        s
    }
}

/// Multisets of size `k` drawn from `kinds`, as non-decreasing index sequences.
fn multisets(kinds: &[VertexKind], k: usize) -> Vec<Vec<VertexKind>> {
    fn rec(kinds: &[VertexKind], k: usize, start: usize, cur: &mut Vec<VertexKind>, out: &mut Vec<Vec<VertexKind>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..kinds.len() {
            cur.push(kinds[i]);
            rec(kinds, k, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(kinds, k, 0, &mut Vec::new(), &mut out);
    out
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }
    /// Returns false if `a` and `b` were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

struct Skeleton<'a> {
    endings: &'a [Ending],
    vertices: Vec<VertexKind>,
    field_slots: Vec<(FieldSlot, Flavor)>,
    noise_slots: Vec<NoiseSlot>,
}

impl Skeleton<'_> {
    fn node_of_field(&self, slot: FieldSlot) -> usize {
        match slot {
            FieldSlot::Ending(i) => i,
            FieldSlot::Leg { vertex, .. } => self.endings.len() + vertex,
        }
    }

    fn node_of_noise(&self, slot: NoiseSlot) -> usize {
        match slot {
            NoiseSlot::Ending(i) => i,
            NoiseSlot::Vertex(v) => self.endings.len() + v,
        }
    }

    fn n_nodes(&self) -> usize {
        self.endings.len() + self.vertices.len()
    }
}

struct Contraction {
    /// conj[s] = vertex receiving field slot s.
    conj: Vec<usize>,
    noise: Vec<(NoiseSlot, NoiseSlot)>,
}

fn field_assignments(sk: &Skeleton, mut visit: impl FnMut(&[usize])) {
    fn rec(sk: &Skeleton, s: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if s == sk.field_slots.len() {
            visit(cur);
            return;
        }
        let (slot, flavor) = sk.field_slots[s];
        let own = match slot {
            FieldSlot::Leg { vertex, .. } => Some(vertex),
            FieldSlot::Ending(_) => None,
        };
        for v in 0..sk.vertices.len() {
            if used[v] || sk.vertices[v].conjugate() != flavor || Some(v) == own {
                continue;
            }
            used[v] = true;
            cur.push(v);
            rec(sk, s + 1, used, cur, visit);
            cur.pop();
            used[v] = false;
        }
    }
    let mut used = vec![false; sk.vertices.len()];
    rec(sk, 0, &mut used, &mut Vec::new(), &mut visit);
}

fn noise_matchings(slots: &[NoiseSlot]) -> Vec<Vec<(NoiseSlot, NoiseSlot)>> {
    if slots.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for m in 1..slots.len() {
        let mut rest: Vec<NoiseSlot> = slots[1..].to_vec();
        let partner = rest.remove(m - 1);
        for mut tail in noise_matchings(&rest) {
            tail.insert(0, (slots[0], partner));
            out.push(tail);
        }
    }
    out
}

/// Checks that the contraction is a forest in which every component holds an
/// ending, and returns its canonical key.
fn canonical_key(sk: &Skeleton, c: &Contraction) -> Option<String> {
    let n = sk.n_nodes();
    let mut uf = UnionFind::new(n);
    // adjacency: (tag, neighbor)
    let mut adj: Vec<Vec<(String, usize)>> = vec![Vec::new(); n];
    for (s, &(slot, flavor)) in sk.field_slots.iter().enumerate() {
        let a = sk.node_of_field(slot);
        let b = sk.endings.len() + c.conj[s];
        if !uf.union(a, b) {
            return None;
        }
        adj[a].push((format!("f{}", flavor.symbol()), b));
        adj[b].push((format!("c{}", flavor.symbol()), a));
    }
    for &(p, q) in &c.noise {
        let (a, b) = (sk.node_of_noise(p), sk.node_of_noise(q));
        if !uf.union(a, b) {
            return None;
        }
        adj[a].push(("n".into(), b));
        adj[b].push(("n".into(), a));
    }
    let ne = sk.endings.len();
    let mut has_end = vec![false; n];
    for e in 0..ne {
        let r = uf.find(e);
        has_end[r] = true;
    }
    for v in 0..n {
        let r = uf.find(v);
        if !has_end[r] {
            return None;
        }
    }
    fn label(sk: &Skeleton, node: usize) -> String {
        if node < sk.endings.len() {
            format!("e{}{}", node, sk.endings[node].flavor.symbol())
        } else {
            sk.vertices[node - sk.endings.len()].label().replace(' ', "")
        }
    }
    fn walk(sk: &Skeleton, adj: &[Vec<(String, usize)>], node: usize, parent: Option<usize>, seen: &mut [bool]) -> String {
        seen[node] = true;
        let mut kids: Vec<String> = adj[node]
            .iter()
            .filter(|(_, nb)| Some(*nb) != parent)
            .map(|(tag, nb)| format!("{tag}:{}", walk(sk, adj, *nb, Some(node), seen)))
            .collect();
        kids.sort();
        format!("{}[{}]", label(sk, node), kids.join(","))
    }
    let mut seen = vec![false; n];
    let mut parts = Vec::new();
    for e in 0..ne {
        if !seen[e] {
            parts.push(walk(sk, &adj, e, None, &mut seen));
        }
    }
    Some(parts.join("|"))
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// All tree-level diagrams for the given endings, one per equivalence class
/// of Wick contractions.
pub fn enumerate_tree(endings: &[(Flavor, f64)]) -> Result<Vec<Diagram>> {
    if endings.is_empty() {
        return Ok(vec![Diagram::empty()]);
    }
    let ends: Vec<Ending> = endings
        .iter()
        .map(|&(flavor, time)| Ending { flavor, time })
        .collect();
    let ef = ends.iter().filter(|e| e.flavor != Flavor::Xi).count() as i64;
    let ex = ends.len() as i64 - ef;
    let max_noise = 2 * ef + ex - 2;
    let mut classes: BTreeMap<String, Diagram> = BTreeMap::new();
    let mut n_noise = 0i64;
    while n_noise <= max_noise {
        if (n_noise + ex) % 2 != 0 {
            n_noise += 1;
            continue;
        }
        for noise in multisets(&NOISE_KINDS, n_noise as usize) {
            let c = noise.iter().filter(|k| k.is_cubic()).count() as i64;
            let l = noise.len() as i64 - c;
            let n_init = ef + c - l;
            if n_init < 0 {
                continue;
            }
            for inits in multisets(&INIT_KINDS, n_init as usize) {
                let mut vertices = noise.clone();
                vertices.extend(inits);
                collect_classes(&ends, vertices, &mut classes);
            }
        }
        n_noise += 1;
    }
    Ok(classes.into_values().collect())
}

fn collect_classes(ends: &[Ending], vertices: Vec<VertexKind>, classes: &mut BTreeMap<String, Diagram>) {
    let mut field_slots: Vec<(FieldSlot, Flavor)> = ends
        .iter()
        .enumerate()
        .filter(|(_, e)| e.flavor != Flavor::Xi)
        .map(|(i, e)| (FieldSlot::Ending(i), e.flavor))
        .collect();
    for (v, k) in vertices.iter().enumerate() {
        for (leg, &f) in k.field_legs().iter().enumerate() {
            field_slots.push((FieldSlot::Leg { vertex: v, leg }, f));
        }
    }
    // Each field leg needs a conjugate leg of its own flavor.
    for f in [Flavor::U, Flavor::V, Flavor::W] {
        let fields = field_slots.iter().filter(|(_, g)| *g == f).count();
        let conj = vertices.iter().filter(|k| k.conjugate() == f).count();
        if fields != conj {
            return;
        }
    }
    let mut noise_slots: Vec<NoiseSlot> = ends
        .iter()
        .enumerate()
        .filter(|(_, e)| e.flavor == Flavor::Xi)
        .map(|(i, _)| NoiseSlot::Ending(i))
        .collect();
    noise_slots.extend(
        vertices
            .iter()
            .enumerate()
            .filter(|(_, k)| k.has_noise())
            .map(|(v, _)| NoiseSlot::Vertex(v)),
    );
    if !noise_slots.len().is_multiple_of(2) {
        return;
    }
    let sk = Skeleton {
        endings: ends,
        vertices,
        field_slots,
        noise_slots,
    };
    let matchings = noise_matchings(&sk.noise_slots);
    let mut symmetry = 1.0;
    for k in ALL_VERTEX_KINDS {
        symmetry *= factorial(sk.vertices.iter().filter(|&&v| v == k).count());
    }
    field_assignments(&sk, |conj| {
        for noise in &matchings {
            let c = Contraction {
                conj: conj.to_vec(),
                noise: noise.clone(),
            };
            let Some(key) = canonical_key(&sk, &c) else { continue };
            let entry = classes.entry(key).or_insert_with(|| build_diagram(&sk, &c));
            entry.multiplicity += 1;
            entry.coefficient = entry.multiplicity as f64 / symmetry;
        }
    });
}

fn build_diagram(sk: &Skeleton, c: &Contraction) -> Diagram {
    let propagators: Vec<PropagatorEdge> = sk
        .field_slots
        .iter()
        .zip(&c.conj)
        .map(|(&(field, flavor), &v)| PropagatorEdge {
            field,
            conjugate: v,
            flavor,
        })
        .collect();
    let internal_props = propagators
        .iter()
        .filter(|p| matches!(p.field, FieldSlot::Leg { .. }))
        .count();
    let internal_noise = c
        .noise
        .iter()
        .filter(|(a, b)| matches!((a, b), (NoiseSlot::Vertex(_), NoiseSlot::Vertex(_))))
        .count();
    let e = sk.endings.len() as i64;
    let v = sk.vertices.len() as i64;
    let i = (internal_props + internal_noise) as i64;
    Diagram {
        endings: sk.endings.to_vec(),
        vertices: sk.vertices.clone(),
        propagators,
        noise_pairs: c.noise.clone(),
        multiplicity: 0,
        coefficient: 0.0,
        nu_order: e + i - v,
        loops: 0,
        value: None,
    }
}

/// A node of the time tree: endings and vertices identified by noise pairing.
struct TimeTree {
    fixed: Vec<Option<f64>>,
    /// (later node, earlier node, rate)
    edges: Vec<(usize, usize, C64)>,
    adj: Vec<Vec<usize>>,
    ending_node: Vec<usize>,
}

fn build_time_tree(d: &Diagram, frame: &DiagonalFrame) -> Result<Option<TimeTree>> {
    let ne = d.endings.len();
    let n = ne + d.vertices.len();
    let mut uf = UnionFind::new(n);
    let node = |s: NoiseSlot| match s {
        NoiseSlot::Ending(i) => i,
        NoiseSlot::Vertex(v) => ne + v,
    };
    for &(a, b) in &d.noise_pairs {
        if let (NoiseSlot::Ending(i), NoiseSlot::Ending(j)) = (a, b) {
            if d.endings[i].time != d.endings[j].time {
                return Ok(None);
            }
            return Err(Error::UnsupportedDiagram(
                "noise endings paired at equal times give a delta function".into(),
            ));
        }
        uf.union(node(a), node(b));
    }
    let mut id = vec![usize::MAX; n];
    let mut count = 0;
    for x in 0..n {
        let r = uf.find(x);
        if id[r] == usize::MAX {
            id[r] = count;
            count += 1;
        }
        id[x] = id[r];
    }
    let mut fixed: Vec<Option<f64>> = vec![None; count];
    for (i, e) in d.endings.iter().enumerate() {
        fixed[id[i]] = Some(e.time);
    }
    for (v, k) in d.vertices.iter().enumerate() {
        if !k.has_noise() {
            fixed[id[ne + v]] = Some(0.0);
        }
    }
    let mut edges = Vec::new();
    let mut adj = vec![Vec::new(); count];
    for p in &d.propagators {
        let later = match p.field {
            FieldSlot::Ending(i) => id[i],
            FieldSlot::Leg { vertex, .. } => id[ne + vertex],
        };
        let earlier = id[ne + p.conjugate];
        let k = edges.len();
        edges.push((later, earlier, frame.lambda(p.flavor.field_index())));
        adj[later].push(k);
        adj[earlier].push(k);
    }
    Ok(Some(TimeTree {
        fixed,
        edges,
        adj,
        ending_node: (0..ne).map(|i| id[i]).collect(),
    }))
}

impl TimeTree {
    fn product_of_children(&self, node: usize, parent_edge: Option<usize>, seen: &mut [bool]) -> Result<Piecewise> {
        seen[node] = true;
        let mut f = Piecewise::one();
        for &e in &self.adj[node] {
            if Some(e) == parent_edge {
                continue;
            }
            let (a, b, _) = self.edges[e];
            let child = if a == node { b } else { a };
            if seen[child] {
                return Err(Error::UnsupportedDiagram("diagram contains a loop".into()));
            }
            f = f.mul(&self.message(child, e, seen)?);
        }
        Ok(f)
    }

    /// Contribution of the subtree at `node`, as a function of the time of the
    /// node across `edge`.
    fn message(&self, node: usize, edge: usize, seen: &mut [bool]) -> Result<Piecewise> {
        let f = self.product_of_children(node, Some(edge), seen)?;
        let (later, _, lambda) = self.edges[edge];
        let node_is_earlier = later != node;
        match self.fixed[node] {
            Some(t) => {
                let val = f.eval(t);
                Ok(if node_is_earlier {
                    Piecewise::step_up(t, ExpPoly::exp(val * (-lambda * t).exp(), lambda))
                } else {
                    Piecewise::step_down(t, ExpPoly::exp(val * (lambda * t).exp(), -lambda))
                })
            }
            None => {
                if node_is_earlier {
                    Ok(f.integrate_below(lambda))
                } else {
                    f.integrate_above(lambda)
                }
            }
        }
    }
}

/// Value of a diagram including its vertex constants and combinatorial coefficient.
pub fn evaluate_diagram(
    d: &Diagram,
    frame: &DiagonalFrame,
    initial: &DiagonalCoords,
    total_time: f64,
) -> Result<C64> {
    if d.endings.is_empty() {
        return Ok(C64::new(1.0, 0.0));
    }
    for e in &d.endings {
        if !(e.time > 0.0 && e.time <= total_time) {
            return Err(Error::invalid(
                "time",
                format!("ending time {} outside (0, {total_time}]", e.time),
            ));
        }
    }
    if d.loops != 0 {
        return Err(Error::UnsupportedDiagram("only tree diagrams are evaluated".into()));
    }
    let Some(tree) = build_time_tree(d, frame)? else {
        return Ok(C64::new(0.0, 0.0));
    };
    let mut weight = C64::new(d.coefficient, 0.0);
    for k in &d.vertices {
        weight *= k.weight(frame, initial);
    }
    if weight == C64::new(0.0, 0.0) {
        return Ok(weight);
    }
    let mut seen = vec![false; tree.fixed.len()];
    let mut total = weight;
    for &root in &tree.ending_node {
        if seen[root] {
            continue;
        }
        let f = tree.product_of_children(root, None, &mut seen)?;
        let t = tree.fixed[root].expect("endings have fixed times");
        total *= f.eval(t);
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::UnsupportedDiagram(
            "component without an ending".into(),
        ));
    }
    Ok(total)
}
