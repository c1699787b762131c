//! Causal DAGs and the graphical queries behind identification: d-separation,
//! backdoor adjustment sets, and the three instrument conditions.
//!
//! Graphs are immutable after construction and every query is a pure
//! function, so a [`CausalDag`] can be shared freely across threads.

use std::collections::VecDeque;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Node identifier. Names double as dataset column names.
pub type NodeId = String;

/// An effect-modifier annotation: `modifier` changes the strength of the
/// direct effect along `edge`. Modifiers are metadata for estimation; they do
/// not take part in path computations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Modifier {
    pub modifier: NodeId,
    pub edge: (NodeId, NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("graph contains a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<NodeId>),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("edge endpoint {0} is not a declared node")]
    DanglingEdge(NodeId),
    #[error("empty node identifier")]
    EmptyNodeId,
    #[error("modifier {modifier} references missing edge {from} -> {to}")]
    ModifierEdgeMissing {
        modifier: NodeId,
        from: NodeId,
        to: NodeId,
    },
    #[error("modifier {0} must be distinct from the endpoints of its edge")]
    ModifierOnOwnEdge(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("treatment and outcome must differ (both {0})")]
    SameNode(NodeId),
    #[error("node {0} may not appear in the conditioning set of its own query")]
    ConditionedEndpoint(NodeId),
    #[error(
        "no adjustment set exists for {treatment} -> {outcome}: \
         the outcome is a direct cause of the treatment"
    )]
    Unidentifiable {
        treatment: NodeId,
        outcome: NodeId,
    },
}

/// Outcome of a backdoor search for one (treatment, outcome) pair.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct AdjustmentResult {
    /// Minimum-cardinality node set satisfying the backdoor criterion.
    /// Among equally small sets, the one with the fewest unobserved members
    /// wins; remaining ties break lexicographically.
    pub adjustment_set: BTreeSet<NodeId>,
    /// (modifier, treatment) pairs that must appear as product terms in any
    /// faithful estimator of this effect. Populated from modifier
    /// annotations sitting on the (treatment, outcome) edge.
    pub required_interactions: BTreeSet<(NodeId, NodeId)>,
    /// False when the chosen set needs at least one unobserved node, i.e.
    /// the effect is not estimable from the observable columns alone.
    pub feasible: bool,
}

/// One of the three graphical instrument conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstrumentCondition {
    /// No edge between the instrument and any unobserved common cause of
    /// treatment and outcome.
    UnconfoundedInstrument,
    /// The instrument is a direct cause of the treatment.
    InstrumentsTreatment,
    /// No direct edge to the outcome, and every directed path from the
    /// instrument to the outcome passes through the treatment.
    ExclusionRestriction,
}

impl fmt::Display for InstrumentCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::UnconfoundedInstrument => "unconfounded instrument",
            Self::InstrumentsTreatment => "instrument causes treatment",
            Self::ExclusionRestriction => "exclusion restriction",
        };
        f.write_str(name)
    }
}

/// Pass/fail verdict for a single instrument condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentCheck {
    pub condition: InstrumentCondition,
    pub passed: bool,
    pub detail: String,
}

/// Full instrument validation report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentReport {
    pub checks: Vec<InstrumentCheck>,
    /// Non-fatal observations, e.g. indirect instrument-to-treatment paths
    /// that fold into the first-stage coefficient.
    pub warnings: Vec<String>,
}

impl InstrumentReport {
    pub fn valid(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// A validated causal DAG with observability flags and modifier annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalDag {
    nodes: BTreeSet<NodeId>,
    edges: BTreeSet<(NodeId, NodeId)>,
    unobserved: BTreeSet<NodeId>,
    modifiers: BTreeSet<Modifier>,
    // Adjacency caches; derived from `edges` during construction.
    parents: BTreeMap<NodeId, BTreeSet<NodeId>>,
    children: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl CausalDag {
    /// Builds and validates a DAG. Edge endpoints must appear in `nodes`;
    /// the graph must be acyclic; modifiers must reference existing edges
    /// and be distinct from their edge's endpoints.
    pub fn new(
        nodes: BTreeSet<NodeId>,
        edges: BTreeSet<(NodeId, NodeId)>,
        unobserved: BTreeSet<NodeId>,
        modifiers: BTreeSet<Modifier>,
    ) -> Result<Self, GraphError> {
        if nodes.iter().any(|n| n.is_empty()) {
            return Err(GraphError::EmptyNodeId);
        }
        let mut parents: BTreeMap<NodeId, BTreeSet<NodeId>> =
            nodes.iter().map(|n| (n.clone(), BTreeSet::new())).collect();
        let mut children = parents.clone();
        for (from, to) in &edges {
            if from == to {
                return Err(GraphError::SelfLoop(from.clone()));
            }
            for end in [from, to] {
                if !nodes.contains(end) {
                    return Err(GraphError::DanglingEdge(end.clone()));
                }
            }
            children.get_mut(from).unwrap().insert(to.clone());
            parents.get_mut(to).unwrap().insert(from.clone());
        }
        for u in &unobserved {
            if !nodes.contains(u) {
                return Err(GraphError::UnknownNode(u.clone()));
            }
        }
        for m in &modifiers {
            if !nodes.contains(&m.modifier) {
                return Err(GraphError::UnknownNode(m.modifier.clone()));
            }
            if !edges.contains(&m.edge) {
                return Err(GraphError::ModifierEdgeMissing {
                    modifier: m.modifier.clone(),
                    from: m.edge.0.clone(),
                    to: m.edge.1.clone(),
                });
            }
            if m.modifier == m.edge.0 || m.modifier == m.edge.1 {
                return Err(GraphError::ModifierOnOwnEdge(m.modifier.clone()));
            }
        }
        let dag = Self {
            nodes,
            edges,
            unobserved,
            modifiers,
            parents,
            children,
        };
        if let Some(cycle) = dag.find_cycle() {
            return Err(GraphError::Cycle(cycle));
        }
        Ok(dag)
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges
    }

    pub fn unobserved(&self) -> &BTreeSet<NodeId> {
        &self.unobserved
    }

    pub fn modifiers(&self) -> &BTreeSet<Modifier> {
        &self.modifiers
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges
            .contains(&(from.to_string(), to.to_string()))
    }

    pub fn parents(&self, node: &str) -> &BTreeSet<NodeId> {
        static EMPTY: BTreeSet<NodeId> = BTreeSet::new();
        self.parents.get(node).unwrap_or(&EMPTY)
    }

    pub fn children(&self, node: &str) -> &BTreeSet<NodeId> {
        static EMPTY: BTreeSet<NodeId> = BTreeSet::new();
        self.children.get(node).unwrap_or(&EMPTY)
    }

    /// Nodes in parents-before-children order.
    pub fn topological_order(&self) -> Vec<NodeId> {
        // Kahn's algorithm over BTree collections: deterministic output.
        let mut indegree: BTreeMap<&NodeId, usize> = self
            .nodes
            .iter()
            .map(|n| (n, self.parents[n].len()))
            .collect();
        let mut ready: VecDeque<&NodeId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(n, _)| *n)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_front() {
            order.push(n.clone());
            for c in &self.children[n] {
                let d = indegree.get_mut(c).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push_back(c);
                }
            }
        }
        debug_assert_eq!(order.len(), self.nodes.len());
        order
    }

    fn find_cycle(&self) -> Option<Vec<NodeId>> {
        // Iterative DFS with a gray set; on back edge, unwind the stack to
        // recover the offending loop for the error message.
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Gray,
            Black,
        }
        let mut marks: BTreeMap<&NodeId, Mark> =
            self.nodes.iter().map(|n| (n, Mark::White)).collect();
        for start in &self.nodes {
            if marks[start] != Mark::White {
                continue;
            }
            let mut stack: Vec<(&NodeId, Vec<&NodeId>)> =
                vec![(start, self.children[start].iter().collect())];
            marks.insert(start, Mark::Gray);
            while let Some((node, succ)) = stack.last_mut() {
                match succ.pop() {
                    Some(next) => match marks[next] {
                        Mark::White => {
                            marks.insert(next, Mark::Gray);
                            stack.push((next, self.children[next].iter().collect()));
                        }
                        Mark::Gray => {
                            let mut cycle: Vec<NodeId> = stack
                                .iter()
                                .map(|(n, _)| (*n).clone())
                                .skip_while(|n| n != next)
                                .collect();
                            cycle.push(next.clone());
                            return Some(cycle);
                        }
                        Mark::Black => {}
                    },
                    None => {
                        marks.insert(*node, Mark::Black);
                        stack.pop();
                    }
                }
            }
        }
        None
    }

    fn require_node(&self, node: &str) -> Result<(), GraphError> {
        if self.nodes.contains(node) {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(node.to_string()))
        }
    }

    /// Strict ancestors of `node` (excludes the node itself).
    pub fn ancestors(&self, node: &str) -> BTreeSet<NodeId> {
        self.reach(node, |n| &self.parents[n])
    }

    /// Strict descendants of `node` (excludes the node itself).
    pub fn descendants(&self, node: &str) -> BTreeSet<NodeId> {
        self.reach(node, |n| &self.children[n])
    }

    fn reach<'a, F>(&'a self, start: &str, step: F) -> BTreeSet<NodeId>
    where
        F: Fn(&NodeId) -> &'a BTreeSet<NodeId>,
    {
        let mut seen: BTreeSet<NodeId> = BTreeSet::new();
        let start = start.to_string();
        let mut frontier = vec![start.clone()];
        while let Some(n) = frontier.pop() {
            for next in step(&n) {
                if next != &start && seen.insert(next.clone()) {
                    frontier.push(next.clone());
                }
            }
        }
        seen
    }

    /// True iff `a` and `b` are d-separated given `conditioning`: every
    /// undirected path between them is blocked (chains and forks by a
    /// conditioned interior node, colliders unless the collider or one of
    /// its descendants is conditioned).
    ///
    /// Runs in O(nodes + edges) via reachability over (node, direction)
    /// states rather than path enumeration.
    pub fn d_separated(
        &self,
        a: &str,
        b: &str,
        conditioning: &BTreeSet<NodeId>,
    ) -> Result<bool, GraphError> {
        self.require_node(a)?;
        self.require_node(b)?;
        for c in conditioning {
            self.require_node(c)?;
        }
        if a == b {
            return Err(GraphError::SameNode(a.to_string()));
        }
        for end in [a, b] {
            if conditioning.contains(end) {
                return Err(GraphError::ConditionedEndpoint(end.to_string()));
            }
        }

        // Colliders open when they or a descendant is conditioned, i.e. when
        // the collider is an ancestor-or-member of the conditioning set.
        let mut collider_openers: BTreeSet<NodeId> = conditioning.clone();
        for c in conditioning {
            collider_openers.extend(self.ancestors(c));
        }

        // A trail state is (node, arrived-moving-towards-parents?). Starting
        // at `a` we may leave in any direction, which the "up" state covers.
        let mut visited: BTreeSet<(NodeId, bool)> = BTreeSet::new();
        let mut queue: VecDeque<(NodeId, bool)> = VecDeque::new();
        queue.push_back((a.to_string(), true));
        while let Some((node, up)) = queue.pop_front() {
            if !visited.insert((node.clone(), up)) {
                continue;
            }
            if node == b {
                return Ok(false);
            }
            let conditioned = conditioning.contains(&node);
            if up {
                // Arrived from a child (or at the start). Passing through in
                // either direction is a chain or fork: blocked iff conditioned.
                if !conditioned {
                    for p in &self.parents[&node] {
                        queue.push_back((p.clone(), true));
                    }
                    for c in &self.children[&node] {
                        queue.push_back((c.clone(), false));
                    }
                }
            } else {
                // Arrived from a parent. Continuing downward is a chain;
                // turning back up makes this node a collider.
                if !conditioned {
                    for c in &self.children[&node] {
                        queue.push_back((c.clone(), false));
                    }
                }
                if collider_openers.contains(&node) {
                    for p in &self.parents[&node] {
                        queue.push_back((p.clone(), true));
                    }
                }
            }
        }
        Ok(true)
    }

    /// Searches for a minimum-cardinality backdoor adjustment set for the
    /// effect of `treatment` on `outcome`.
    ///
    /// A candidate set is valid when it contains no descendant of the
    /// treatment and d-separates treatment from outcome in the graph with
    /// the treatment's outgoing edges removed. Among valid sets of minimal
    /// size, sets with fewer unobserved members are preferred, with
    /// lexicographic order as the final tie-break, so the result is
    /// deterministic.
    ///
    /// The search is exhaustive over subsets of the candidate pool and is
    /// intended for hand-built models (tens of nodes), not mined graphs.
    pub fn adjustment_set(
        &self,
        treatment: &str,
        outcome: &str,
    ) -> Result<AdjustmentResult, GraphError> {
        self.require_node(treatment)?;
        self.require_node(outcome)?;
        if treatment == outcome {
            return Err(GraphError::SameNode(treatment.to_string()));
        }

        // Backdoor paths live in the graph without treatment's outgoing
        // edges; whatever remains connected there is confounding.
        let backdoor_graph = self.without_outgoing(treatment);

        let forbidden = self.descendants(treatment);
        let pool: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| {
                n.as_str() != treatment && n.as_str() != outcome && !forbidden.contains(*n)
            })
            .cloned()
            .collect();

        for size in 0..=pool.len() {
            let mut best: Option<(usize, BTreeSet<NodeId>)> = None;
            let mut subset_ids = vec![0usize; size];
            let mut more = init_combination(&mut subset_ids, pool.len());
            while more {
                let candidate: BTreeSet<NodeId> =
                    subset_ids.iter().map(|&i| pool[i].clone()).collect();
                if backdoor_graph.d_separated(treatment, outcome, &candidate)? {
                    let unobserved_members = candidate
                        .iter()
                        .filter(|n| self.unobserved.contains(*n))
                        .count();
                    let better = match &best {
                        None => true,
                        Some((cost, set)) => {
                            (unobserved_members, &candidate) < (*cost, set)
                        }
                    };
                    if better {
                        best = Some((unobserved_members, candidate));
                    }
                }
                more = next_combination(&mut subset_ids, pool.len());
            }
            if let Some((unobserved_members, set)) = best {
                let required_interactions = self
                    .modifiers
                    .iter()
                    .filter(|m| m.edge.0 == treatment && m.edge.1 == outcome)
                    .map(|m| (m.modifier.clone(), treatment.to_string()))
                    .collect();
                return Ok(AdjustmentResult {
                    adjustment_set: set,
                    required_interactions,
                    feasible: unobserved_members == 0,
                });
            }
        }
        // Reachable only when the outcome is a parent of the treatment: that
        // backdoor path has no interior node to condition on.
        Err(GraphError::Unidentifiable {
            treatment: treatment.to_string(),
            outcome: outcome.to_string(),
        })
    }

    /// Copy of the graph with `node`'s outgoing edges removed. Modifier
    /// annotations on removed edges are dropped with them.
    fn without_outgoing(&self, node: &str) -> Self {
        let edges: BTreeSet<(NodeId, NodeId)> = self
            .edges
            .iter()
            .filter(|(from, _)| from != node)
            .cloned()
            .collect();
        let modifiers = self
            .modifiers
            .iter()
            .filter(|m| edges.contains(&m.edge))
            .cloned()
            .collect();
        Self::new(
            self.nodes.clone(),
            edges,
            self.unobserved.clone(),
            modifiers,
        )
        .expect("edge removal preserves validity")
    }

    /// Checks the three graphical conditions for using `instrument` to
    /// estimate the effect of `treatment` on `outcome`:
    ///
    /// 1. no edge in either direction between the instrument and any
    ///    unobserved common cause of treatment and outcome;
    /// 2. a direct edge instrument -> treatment;
    /// 3. no direct edge instrument -> outcome, and every directed path from
    ///    instrument to outcome passes through the treatment.
    ///
    /// Indirect instrument-to-treatment paths do not violate any condition
    /// but change what the first-stage coefficient measures, so they are
    /// reported as warnings.
    pub fn validate_instrument(
        &self,
        instrument: &str,
        treatment: &str,
        outcome: &str,
    ) -> Result<InstrumentReport, GraphError> {
        for n in [instrument, treatment, outcome] {
            self.require_node(n)?;
        }
        if instrument == treatment || instrument == outcome || treatment == outcome {
            return Err(GraphError::SameNode(
                if instrument == treatment || instrument == outcome {
                    instrument.to_string()
                } else {
                    treatment.to_string()
                },
            ));
        }

        let treatment_ancestors = self.ancestors(treatment);
        let outcome_ancestors = self.ancestors(outcome);
        let confounders: Vec<&NodeId> = self
            .unobserved
            .iter()
            .filter(|u| treatment_ancestors.contains(*u) && outcome_ancestors.contains(*u))
            .collect();
        let tied: Vec<&NodeId> = confounders
            .iter()
            .filter(|u| self.has_edge(instrument, u) || self.has_edge(u, instrument))
            .copied()
            .collect();
        let check1 = InstrumentCheck {
            condition: InstrumentCondition::UnconfoundedInstrument,
            passed: tied.is_empty(),
            detail: if confounders.is_empty() {
                "no unobserved common cause of treatment and outcome exists".into()
            } else if tied.is_empty() {
                format!(
                    "instrument shares no edge with unobserved common causes [{}]",
                    join(&confounders)
                )
            } else {
                format!(
                    "instrument shares an edge with unobserved common causes [{}]",
                    join(&tied)
                )
            },
        };

        let has_first_stage = self.has_edge(instrument, treatment);
        let check2 = InstrumentCheck {
            condition: InstrumentCondition::InstrumentsTreatment,
            passed: has_first_stage,
            detail: if has_first_stage {
                format!("edge {instrument} -> {treatment} present")
            } else {
                format!("no edge {instrument} -> {treatment}")
            },
        };

        let direct_to_outcome = self.has_edge(instrument, outcome);
        let leaks = self.reaches_avoiding(instrument, outcome, treatment);
        let check3 = InstrumentCheck {
            condition: InstrumentCondition::ExclusionRestriction,
            passed: !direct_to_outcome && !leaks,
            detail: if direct_to_outcome {
                format!("direct edge {instrument} -> {outcome} present")
            } else if leaks {
                format!(
                    "a directed path {instrument} to {outcome} bypasses {treatment}"
                )
            } else {
                format!("every directed path to {outcome} passes through {treatment}")
            },
        };

        let mut warnings = Vec::new();
        if has_first_stage && self.indirect_path_exists(instrument, treatment) {
            warnings.push(format!(
                "directed paths from {instrument} to {treatment} exist besides the direct \
                 edge; the first-stage coefficient measures their combined effect"
            ));
        }

        Ok(InstrumentReport {
            checks: vec![check1, check2, check3],
            warnings,
        })
    }

    /// True iff a directed path start -> ... -> goal exists that does not
    /// visit `avoid`.
    fn reaches_avoiding(&self, start: &str, goal: &str, avoid: &str) -> bool {
        let mut seen = BTreeSet::new();
        let mut frontier = vec![start.to_string()];
        while let Some(n) = frontier.pop() {
            for c in &self.children[&n] {
                if c == goal {
                    return true;
                }
                if c != avoid && seen.insert(c.clone()) {
                    frontier.push(c.clone());
                }
            }
        }
        false
    }

    /// True iff a directed path start -> ... -> goal of length >= 2 exists.
    fn indirect_path_exists(&self, start: &str, goal: &str) -> bool {
        self.children[start]
            .iter()
            .filter(|c| c.as_str() != goal)
            .any(|c| self.descendants(c).contains(goal))
    }

    /// Renders the DAG in the same DOT subset accepted by [`parse_dag`].
    /// Output is deterministic; `parse_dag(serialize(g)) == g`.
    pub fn serialize(&self) -> String {
        let mut out = String::from("digraph g {\n");
        let mut in_edges: BTreeSet<&NodeId> = BTreeSet::new();
        for (from, to) in &self.edges {
            in_edges.insert(from);
            in_edges.insert(to);
        }
        for node in &self.nodes {
            if self.unobserved.contains(node) {
                out.push_str(&format!("  {node} [unobserved=true];\n"));
            } else if !in_edges.contains(node) {
                out.push_str(&format!("  {node};\n"));
            }
        }
        for (from, to) in &self.edges {
            out.push_str(&format!("  {from} -> {to};\n"));
        }
        if !self.modifiers.is_empty() {
            let entries: Vec<String> = self
                .modifiers
                .iter()
                .map(|m| format!("{}:{}->{}", m.modifier, m.edge.0, m.edge.1))
                .collect();
            out.push_str(&format!("  modifiers=\"{}\";\n", entries.join(";")));
        }
        out.push_str("}\n");
        out
    }
}

fn join(nodes: &[&NodeId]) -> String {
    nodes
        .iter()
        .map(|n| n.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Initializes `ids` to the first k-combination {0, 1, ..., k-1}; returns
/// false when no combination of this size exists.
fn init_combination(ids: &mut [usize], n: usize) -> bool {
    if ids.len() > n {
        return false;
    }
    for (i, slot) in ids.iter_mut().enumerate() {
        *slot = i;
    }
    true
}

/// Advances `ids` to the next k-combination of {0..n} in lexicographic
/// order; returns false after the last one.
fn next_combination(ids: &mut [usize], n: usize) -> bool {
    let k = ids.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if ids[i] < n - (k - i) {
            ids[i] += 1;
            for j in i + 1..k {
                ids[j] = ids[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

// ---------------------------------------------------------------------------
// DOT-subset parsing.
//
// Accepted grammar, whitespace-insensitive, with // and /* */ comments:
//
//   digraph [name] { statement* }
//   statement := ident -> ident ;
//              | ident [ unobserved = (true|false) ] ;
//              | ident ;
//              | modifiers = "M:A->B;N:C->D" ;
//
// Unknown attributes are rejected rather than skipped so that typos surface
// instead of silently changing the model.
// ---------------------------------------------------------------------------

struct Scanner<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    column: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Quoted(String),
    Arrow,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Equals,
    Semicolon,
    Eof,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            column: 1,
        }
    }

    fn error(&self, message: impl Into<String>) -> GraphError {
        GraphError::Syntax {
            line: self.line,
            column: self.column,
            message: message.into(),
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = *self.src.get(self.pos)?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_trivia(&mut self) -> Result<(), GraphError> {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'/') => match self.src.get(self.pos + 1) {
                    Some(b'/') => {
                        while let Some(b) = self.bump() {
                            if b == b'\n' {
                                break;
                            }
                        }
                    }
                    Some(b'*') => {
                        self.bump();
                        self.bump();
                        loop {
                            match self.bump() {
                                Some(b'*') if self.peek() == Some(b'/') => {
                                    self.bump();
                                    break;
                                }
                                Some(_) => {}
                                None => return Err(self.error("unterminated block comment")),
                            }
                        }
                    }
                    _ => return Ok(()),
                },
                _ => return Ok(()),
            }
        }
    }

    fn next_token(&mut self) -> Result<Token, GraphError> {
        self.skip_trivia()?;
        let Some(b) = self.peek() else {
            return Ok(Token::Eof);
        };
        match b {
            b'{' => {
                self.bump();
                Ok(Token::LBrace)
            }
            b'}' => {
                self.bump();
                Ok(Token::RBrace)
            }
            b'[' => {
                self.bump();
                Ok(Token::LBracket)
            }
            b']' => {
                self.bump();
                Ok(Token::RBracket)
            }
            b'=' => {
                self.bump();
                Ok(Token::Equals)
            }
            b';' => {
                self.bump();
                Ok(Token::Semicolon)
            }
            b'-' => {
                self.bump();
                if self.peek() == Some(b'>') {
                    self.bump();
                    Ok(Token::Arrow)
                } else {
                    Err(self.error("expected '->'"))
                }
            }
            b'"' => {
                self.bump();
                let mut s = String::new();
                loop {
                    match self.bump() {
                        Some(b'"') => return Ok(Token::Quoted(s)),
                        Some(b'\n') | None => {
                            return Err(self.error("unterminated string literal"))
                        }
                        Some(c) => s.push(c as char),
                    }
                }
            }
            b if b.is_ascii_alphabetic() || b == b'_' => {
                let mut s = String::new();
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || c == b'_' {
                        s.push(c as char);
                        self.bump();
                    } else {
                        break;
                    }
                }
                Ok(Token::Ident(s))
            }
            other => Err(self.error(format!("unexpected character {:?}", other as char))),
        }
    }
}

/// Parses the DOT subset described in the module docs into a validated DAG.
pub fn parse_dag(text: &str) -> Result<CausalDag, GraphError> {
    let mut sc = Scanner::new(text);
    let mut nodes: BTreeSet<NodeId> = BTreeSet::new();
    let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    let mut unobserved: BTreeSet<NodeId> = BTreeSet::new();
    let mut modifiers: BTreeSet<Modifier> = BTreeSet::new();

    match sc.next_token()? {
        Token::Ident(kw) if kw == "digraph" => {}
        _ => return Err(sc.error("expected 'digraph'")),
    }
    let mut tok = sc.next_token()?;
    if let Token::Ident(_) = tok {
        tok = sc.next_token()?; // optional graph name
    }
    if tok != Token::LBrace {
        return Err(sc.error("expected '{'"));
    }

    loop {
        match sc.next_token()? {
            Token::RBrace => break,
            Token::Ident(name) if name == "modifiers" => {
                if sc.next_token()? != Token::Equals {
                    return Err(sc.error("expected '=' after 'modifiers'"));
                }
                let Token::Quoted(value) = sc.next_token()? else {
                    return Err(sc.error("expected quoted modifier list"));
                };
                for entry in value.split(';').filter(|e| !e.trim().is_empty()) {
                    modifiers.insert(parse_modifier_entry(entry, &sc)?);
                }
                if sc.next_token()? != Token::Semicolon {
                    return Err(sc.error("expected ';'"));
                }
            }
            Token::Ident(name) => {
                nodes.insert(name.clone());
                match sc.next_token()? {
                    Token::Semicolon => {} // bare node statement
                    Token::Arrow => {
                        let Token::Ident(to) = sc.next_token()? else {
                            return Err(sc.error("expected node name after '->'"));
                        };
                        nodes.insert(to.clone());
                        edges.insert((name, to));
                        if sc.next_token()? != Token::Semicolon {
                            return Err(sc.error("expected ';'"));
                        }
                    }
                    Token::LBracket => {
                        let Token::Ident(key) = sc.next_token()? else {
                            return Err(sc.error("expected attribute name"));
                        };
                        if key != "unobserved" {
                            return Err(sc.error(format!("unknown attribute '{key}'")));
                        }
                        if sc.next_token()? != Token::Equals {
                            return Err(sc.error("expected '=' in attribute"));
                        }
                        let flag = match sc.next_token()? {
                            Token::Ident(v) if v == "true" => true,
                            Token::Ident(v) if v == "false" => false,
                            _ => return Err(sc.error("expected 'true' or 'false'")),
                        };
                        if flag {
                            unobserved.insert(name);
                        }
                        if sc.next_token()? != Token::RBracket {
                            return Err(sc.error("expected ']'"));
                        }
                        if sc.next_token()? != Token::Semicolon {
                            return Err(sc.error("expected ';'"));
                        }
                    }
                    _ => return Err(sc.error("expected '->', '[', or ';'")),
                }
            }
            Token::Eof => return Err(sc.error("unexpected end of input, missing '}'")),
            _ => return Err(sc.error("expected a statement")),
        }
    }
    // Anything after the closing brace other than trivia is an error.
    if sc.next_token()? != Token::Eof {
        return Err(sc.error("unexpected content after '}'"));
    }

    CausalDag::new(nodes, edges, unobserved, modifiers)
}

fn parse_modifier_entry(entry: &str, sc: &Scanner<'_>) -> Result<Modifier, GraphError> {
    let bad = || sc.error(format!("malformed modifier entry '{entry}', want 'M:A->B'"));
    let entry = entry.trim();
    let (modifier, edge) = entry.split_once(':').ok_or_else(bad)?;
    let (from, to) = edge.split_once("->").ok_or_else(bad)?;
    let (modifier, from, to) = (modifier.trim(), from.trim(), to.trim());
    if modifier.is_empty() || from.is_empty() || to.is_empty() {
        return Err(bad());
    }
    Ok(Modifier {
        modifier: modifier.to_string(),
        edge: (from.to_string(), to.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng as _, SeedableRng as _};

    fn dag(text: &str) -> CausalDag {
        parse_dag(text).expect("valid test graph")
    }

    fn set(names: &[&str]) -> BTreeSet<NodeId> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn driving_sim() -> CausalDag {
        dag(crate::DRIVING_SIM_DAG)
    }

    #[test]
    fn parses_minimal_graph() {
        let g = dag("digraph { X -> Y; }");
        assert_eq!(g.nodes(), &set(&["X", "Y"]));
        assert!(g.has_edge("X", "Y"));
        assert!(g.unobserved().is_empty());
    }

    #[test]
    fn parses_bundled_driving_model() {
        let g = driving_sim();
        assert_eq!(g.nodes().len(), 12);
        assert_eq!(g.edges().len(), 23);
        assert_eq!(g.unobserved(), &set(&["NPCvehicles", "Pedestrians"]));
        let m = g.modifiers().iter().next().unwrap();
        assert_eq!(m.modifier, "OutsideLane");
        assert_eq!(
            m.edge,
            ("CompletionScore".to_string(), "DrivingScore".to_string())
        );
    }

    #[test]
    fn rejects_cycle_with_listing() {
        let err = parse_dag("digraph { X -> Y; Y -> X; }").unwrap_err();
        match err {
            GraphError::Cycle(nodes) => {
                assert!(nodes.len() >= 2, "cycle should list its nodes: {nodes:?}")
            }
            other => panic!("expected cycle error, got {other}"),
        }
    }

    #[test]
    fn rejects_unknown_attribute() {
        let err = parse_dag("digraph { X [color=red]; }").unwrap_err();
        assert!(matches!(err, GraphError::Syntax { .. }), "{err}");
    }

    #[test]
    fn rejects_modifier_without_edge() {
        let err = parse_dag("digraph { X -> Y; Z -> Y; modifiers=\"Z:X->Q\"; }").unwrap_err();
        assert!(matches!(err, GraphError::ModifierEdgeMissing { .. }), "{err}");
    }

    #[test]
    fn reports_error_position() {
        let err = parse_dag("digraph {\n  X -> ;\n}").unwrap_err();
        match err {
            GraphError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("expected syntax error, got {other}"),
        }
    }

    #[test]
    fn comments_are_trivia() {
        let g = dag("digraph { // a comment\n /* block\n comment */ X -> Y; }");
        assert!(g.has_edge("X", "Y"));
    }

    #[test]
    fn bare_statement_declares_isolated_node() {
        let g = dag("digraph { A; X -> Y; }");
        assert!(g.nodes().contains("A"));
        assert!(g.parents("A").is_empty() && g.children("A").is_empty());
    }

    #[test]
    fn serialize_round_trips() {
        for text in [
            "digraph { X -> Y; }",
            "digraph { A; U [unobserved=true]; U -> X; X -> Y; modifiers=\"A:X->Y\"; }",
            crate::DRIVING_SIM_DAG,
        ] {
            let g = dag(text);
            assert_eq!(dag(&g.serialize()), g, "round-trip failed for {text}");
        }
    }

    #[test]
    fn chain_blocked_by_middle() {
        let g = dag("digraph { X -> Z; Z -> Y; }");
        assert!(!g.d_separated("X", "Y", &set(&[])).unwrap());
        assert!(g.d_separated("X", "Y", &set(&["Z"])).unwrap());
    }

    #[test]
    fn fork_blocked_by_root() {
        let g = dag("digraph { Z -> X; Z -> Y; }");
        assert!(!g.d_separated("X", "Y", &set(&[])).unwrap());
        assert!(g.d_separated("X", "Y", &set(&["Z"])).unwrap());
    }

    #[test]
    fn collider_blocks_until_conditioned() {
        let g = dag("digraph { X -> Z; Y -> Z; }");
        assert!(g.d_separated("X", "Y", &set(&[])).unwrap());
        assert!(!g.d_separated("X", "Y", &set(&["Z"])).unwrap());
    }

    #[test]
    fn collider_descendant_also_opens() {
        let g = dag("digraph { X -> Z; Y -> Z; Z -> W; }");
        assert!(!g.d_separated("X", "Y", &set(&["W"])).unwrap());
    }

    #[test]
    fn scenario_inputs_are_independent() {
        // Distinct run inputs only meet at colliders downstream, so they are
        // marginally independent in the model.
        let g = driving_sim();
        assert!(g.d_separated("EgoVehicle", "RouteLength", &set(&[])).unwrap());
        assert!(g.d_separated("EgoVehicle", "Weather", &set(&[])).unwrap());
    }

    #[test]
    fn d_separation_rejects_conditioned_endpoint() {
        let g = dag("digraph { X -> Y; }");
        let err = g.d_separated("X", "Y", &set(&["X"])).unwrap_err();
        assert!(matches!(err, GraphError::ConditionedEndpoint(_)));
    }

    #[test]
    fn score_effect_adjusts_for_infraction() {
        let g = driving_sim();
        let r = g.adjustment_set("CompletionScore", "DrivingScore").unwrap();
        assert_eq!(r.adjustment_set, set(&["Infraction"]));
        assert!(r.feasible);
        assert_eq!(
            r.required_interactions,
            [("OutsideLane".to_string(), "CompletionScore".to_string())]
                .into_iter()
                .collect()
        );
    }

    #[test]
    fn root_treatment_needs_no_adjustment() {
        let g = driving_sim();
        let r = g.adjustment_set("EgoVehicle", "Infraction").unwrap();
        assert!(r.adjustment_set.is_empty());
        assert!(r.feasible);
        assert!(r.required_interactions.is_empty());
    }

    #[test]
    fn timing_effect_needs_unobservable_traffic() {
        let g = driving_sim();
        let r = g.adjustment_set("SimulationTime", "SystemTime").unwrap();
        assert_eq!(
            r.adjustment_set,
            set(&["CARLAversion", "NPCvehicles", "Pedestrians"])
        );
        assert!(!r.feasible);
    }

    #[test]
    fn two_node_graph_has_empty_adjustment() {
        let g = dag("digraph { X -> Y; }");
        let r = g.adjustment_set("X", "Y").unwrap();
        assert!(r.adjustment_set.is_empty());
        assert!(r.feasible);
    }

    #[test]
    fn prefers_observed_adjustment_nodes() {
        // Both U and V close the single backdoor path; V is observed.
        let g = dag(
            "digraph { U [unobserved=true]; U -> V; V -> X; U -> Y; V -> Y; X -> Y; }",
        );
        let r = g.adjustment_set("X", "Y").unwrap();
        assert_eq!(r.adjustment_set, set(&["V"]));
        assert!(r.feasible);
    }

    #[test]
    fn reversed_cause_is_unidentifiable() {
        let g = dag("digraph { Y -> X; }");
        let err = g.adjustment_set("X", "Y").unwrap_err();
        assert!(matches!(err, GraphError::Unidentifiable { .. }));
    }

    #[test]
    fn descendants_never_enter_adjustment_sets() {
        let g = driving_sim();
        for t in g.nodes() {
            for o in g.nodes() {
                if t == o {
                    continue;
                }
                if let Ok(r) = g.adjustment_set(t, o) {
                    let desc = g.descendants(t);
                    assert!(
                        r.adjustment_set.iter().all(|n| !desc.contains(n)),
                        "descendant of {t} in adjustment set for ({t}, {o})"
                    );
                }
            }
        }
    }

    #[test]
    fn classic_instrument_setup_validates() {
        let g = dag(
            "digraph { U [unobserved=true]; Z -> X; X -> Y; U -> X; U -> Y; }",
        );
        let report = g.validate_instrument("Z", "X", "Y").unwrap();
        assert!(report.valid(), "{report:?}");
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn direct_edge_to_outcome_fails_exclusion() {
        let g = dag(
            "digraph { U [unobserved=true]; Z -> X; Z -> Y; X -> Y; U -> X; U -> Y; }",
        );
        let report = g.validate_instrument("Z", "X", "Y").unwrap();
        assert!(!report.valid());
        let exclusion = &report.checks[2];
        assert_eq!(
            exclusion.condition,
            InstrumentCondition::ExclusionRestriction
        );
        assert!(!exclusion.passed);
    }

    #[test]
    fn confounded_instrument_fails_first_condition() {
        let g = dag(
            "digraph { U [unobserved=true]; U -> Z; Z -> X; X -> Y; U -> X; U -> Y; }",
        );
        let report = g.validate_instrument("Z", "X", "Y").unwrap();
        assert!(!report.checks[0].passed, "{report:?}");
    }

    #[test]
    fn route_length_instruments_timing() {
        // The extra RouteLength -> Infraction -> SimulationTime route keeps
        // all three conditions intact but earns a first-stage warning.
        let g = driving_sim();
        let report = g
            .validate_instrument("RouteLength", "SimulationTime", "SystemTime")
            .unwrap();
        assert!(report.valid(), "{report:?}");
        assert_eq!(report.warnings.len(), 1, "{report:?}");
    }

    #[test]
    fn topological_order_respects_edges() {
        let g = driving_sim();
        let order = g.topological_order();
        let index: BTreeMap<&NodeId, usize> =
            order.iter().enumerate().map(|(i, n)| (n, i)).collect();
        for (from, to) in g.edges() {
            assert!(index[from] < index[to], "{from} must precede {to}");
        }
    }

    // Brute-force d-separation oracle: enumerate every simple undirected
    // path and apply the blocking rules to each interior node. Exponential,
    // fine for the small graphs it is used on, and deliberately independent
    // of the reachability implementation above.
    fn d_separated_by_paths(
        g: &CausalDag,
        a: &str,
        b: &str,
        conditioning: &BTreeSet<NodeId>,
    ) -> bool {
        fn path_open(g: &CausalDag, path: &[NodeId], cond: &BTreeSet<NodeId>) -> bool {
            for w in path.windows(3) {
                let (prev, mid, next) = (&w[0], &w[1], &w[2]);
                let into_from_prev = g.has_edge(prev, mid);
                let into_from_next = g.has_edge(next, mid);
                let open = if into_from_prev && into_from_next {
                    // Collider: open iff mid or a descendant is conditioned.
                    cond.contains(mid)
                        || g.descendants(mid).iter().any(|d| cond.contains(d))
                } else {
                    !cond.contains(mid)
                };
                if !open {
                    return false;
                }
            }
            true
        }
        fn walk(
            g: &CausalDag,
            path: &mut Vec<NodeId>,
            goal: &str,
            cond: &BTreeSet<NodeId>,
        ) -> bool {
            let here = path.last().unwrap().clone();
            if here == goal {
                return path_open(g, path, cond);
            }
            let mut neighbors: BTreeSet<NodeId> = g.parents(&here).clone();
            neighbors.extend(g.children(&here).iter().cloned());
            for next in neighbors {
                if path.contains(&next) {
                    continue;
                }
                path.push(next);
                if walk(g, path, goal, cond) {
                    return true;
                }
                path.pop();
            }
            false
        }
        let mut path = vec![a.to_string()];
        !walk(g, &mut path, b, conditioning)
    }

    fn random_dag(rng: &mut impl rand::Rng, max_nodes: usize) -> CausalDag {
        let n = rng.random_range(2..=max_nodes);
        let names: Vec<NodeId> = (0..n).map(|i| format!("N{i}")).collect();
        let mut edges = BTreeSet::new();
        // Edges only from lower to higher index: acyclic by construction.
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.4) {
                    edges.insert((names[i].clone(), names[j].clone()));
                }
            }
        }
        CausalDag::new(names.into_iter().collect(), edges, BTreeSet::new(), BTreeSet::new())
            .unwrap()
    }

    #[test]
    fn d_separation_matches_path_enumeration_oracle() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0x5eed);
        for _ in 0..300 {
            let g = random_dag(&mut rng, 6);
            let nodes: Vec<&NodeId> = g.nodes().iter().collect();
            let a = nodes[rng.random_range(0..nodes.len())].clone();
            let b = nodes[rng.random_range(0..nodes.len())].clone();
            if a == b {
                continue;
            }
            let cond: BTreeSet<NodeId> = nodes
                .iter()
                .filter(|n| ***n != a && ***n != b && rng.random_bool(0.3))
                .map(|n| (*n).clone())
                .collect();
            let fast = g.d_separated(&a, &b, &cond).unwrap();
            let slow = d_separated_by_paths(&g, &a, &b, &cond);
            assert_eq!(fast, slow, "disagreement on {g:?} ({a}, {b} | {cond:?})");
        }
    }

    #[test]
    fn d_separation_is_symmetric() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0xd5ee);
        for _ in 0..200 {
            let g = random_dag(&mut rng, 6);
            let nodes: Vec<&NodeId> = g.nodes().iter().collect();
            let a = nodes[rng.random_range(0..nodes.len())].clone();
            let b = nodes[rng.random_range(0..nodes.len())].clone();
            if a == b {
                continue;
            }
            let cond: BTreeSet<NodeId> = nodes
                .iter()
                .filter(|n| ***n != a && ***n != b && rng.random_bool(0.25))
                .map(|n| (*n).clone())
                .collect();
            assert_eq!(
                g.d_separated(&a, &b, &cond).unwrap(),
                g.d_separated(&b, &a, &cond).unwrap()
            );
        }
    }

    #[test]
    fn adjustment_sets_verify_against_checker() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0xad15);
        let mut checked = 0;
        for _ in 0..200 {
            let g = random_dag(&mut rng, 6);
            let nodes: Vec<&NodeId> = g.nodes().iter().collect();
            let t = nodes[rng.random_range(0..nodes.len())].clone();
            let o = nodes[rng.random_range(0..nodes.len())].clone();
            if t == o {
                continue;
            }
            let Ok(r) = g.adjustment_set(&t, &o) else {
                assert!(g.has_edge(&o, &t), "unidentifiable requires edge {o} -> {t}");
                continue;
            };
            // Independent check: the returned set blocks every backdoor path
            // (per the path-enumeration oracle) and avoids descendants.
            let backdoor = g.without_outgoing(&t);
            assert!(d_separated_by_paths(&backdoor, &t, &o, &r.adjustment_set));
            let desc = g.descendants(&t);
            assert!(r.adjustment_set.iter().all(|n| !desc.contains(n)));
            checked += 1;
        }
        assert!(checked > 50, "too few usable random cases: {checked}");
    }
}
