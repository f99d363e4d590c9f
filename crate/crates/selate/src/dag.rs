//! Causal DAGs with role-tagged nodes, d-separation, graph mutilation, and
//! the selection-adjustment criteria battery.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Treatment,
    Outcome,
    Covariate,
    Selection,
}

impl Role {
    fn parse(s: &str) -> Option<Role> {
        match s {
            "treatment" => Some(Role::Treatment),
            "outcome" => Some(Role::Outcome),
            "covariate" => Some(Role::Covariate),
            "selection" => Some(Role::Selection),
            _ => None,
        }
    }
}

/// Immutable directed acyclic graph over named nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    names: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    roles: Vec<Option<Role>>,
}

impl Dag {
    pub fn build(
        names: Vec<String>,
        edges: &[(usize, usize)],
        roles: Vec<Option<Role>>,
    ) -> Result<Self> {
        let n = names.len();
        let mut index = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate node name {name}")));
            }
        }
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(a, b) in edges {
            if !children[a].contains(&b) {
                children[a].push(b);
                parents[b].push(a);
            }
        }
        let selection_count = roles
            .iter()
            .filter(|r| **r == Some(Role::Selection))
            .count();
        if selection_count > 1 {
            return Err(Error::Data("at most one selection node is allowed".into()));
        }
        let dag = Dag {
            names,
            index,
            parents,
            children,
            roles,
        };
        if dag.has_cycle() {
            return Err(Error::Data("graph contains a directed cycle".into()));
        }
        Ok(dag)
    }

    fn has_cycle(&self) -> bool {
        // Kahn's algorithm: a cycle exists iff not every node drains.
        let n = self.names.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop_front() {
            seen += 1;
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        seen != n
    }

    /// Parse the edge-list grammar: `A -> B` lines, `role A = <role>` lines,
    /// `#` comments. Errors carry the 1-based line number.
    pub fn parse(text: &str) -> Result<Dag> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let mut roles: Vec<(usize, Role, usize)> = Vec::new(); // (node, role, line)

        let mut intern = |name: &str, names: &mut Vec<String>| -> usize {
            if let Some(&i) = index.get(name) {
                return i;
            }
            let i = names.len();
            names.push(name.to_string());
            index.insert(name.to_string(), i);
            i
        };

        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = stripped.split_whitespace().collect();
            match tokens.as_slice() {
                [a, "->", b] => {
                    let ia = intern(a, &mut names);
                    let ib = intern(b, &mut names);
                    edges.push((ia, ib));
                }
                ["role", node, "=", role_name] => {
                    let role = Role::parse(role_name).ok_or_else(|| Error::Parse {
                        line,
                        msg: format!("unknown role `{role_name}`"),
                    })?;
                    let i = intern(node, &mut names);
                    if roles.iter().any(|(n, _, _)| *n == i) {
                        return Err(Error::Parse {
                            line,
                            msg: format!("role of {node} assigned twice"),
                        });
                    }
                    roles.push((i, role, line));
                }
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("cannot parse `{stripped}`"),
                    })
                }
            }
        }

        let mut role_vec = vec![None; names.len()];
        for (i, role, _) in roles {
            role_vec[i] = Some(role);
        }
        Dag::build(names, &edges, role_vec).map_err(|e| match e {
            Error::Data(msg) => Error::Parse { line: 0, msg },
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn node_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Data(format!("unknown node {name}")))
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, cs) in self.children.iter().enumerate() {
            for &b in cs {
                out.push((a, b));
            }
        }
        out
    }

    pub fn role_node(&self, role: Role) -> Result<usize> {
        let matches: Vec<usize> = (0..self.len())
            .filter(|&i| self.roles[i] == Some(role))
            .collect();
        match matches.as_slice() {
            [i] => Ok(*i),
            [] => Err(Error::Data(format!("no node has role {role:?}"))),
            _ => Err(Error::Data(format!("more than one node has role {role:?}"))),
        }
    }

    pub fn role_of(&self, i: usize) -> Option<Role> {
        self.roles[i]
    }

    /// Copy with all incoming edges of `remove_incoming` and all outgoing
    /// edges of `remove_outgoing` removed; the original is untouched.
    pub fn mutilate(&self, remove_incoming: &[usize], remove_outgoing: &[usize]) -> Dag {
        let rin: HashSet<usize> = remove_incoming.iter().copied().collect();
        let rout: HashSet<usize> = remove_outgoing.iter().copied().collect();
        let edges: Vec<(usize, usize)> = self
            .edges()
            .into_iter()
            .filter(|(a, b)| !rin.contains(b) && !rout.contains(a))
            .collect();
        Dag::build(self.names.clone(), &edges, self.roles.clone())
            .expect("edge removal cannot create cycles")
    }

    /// Nodes reachable from `seeds` along directed edges, including seeds.
    pub fn descendants_mask(&self, seeds: &[usize]) -> Vec<bool> {
        self.reach(seeds, |v| &self.children[v])
    }

    /// Nodes that reach `seeds` along directed edges, including seeds.
    pub fn ancestors_mask(&self, seeds: &[usize]) -> Vec<bool> {
        self.reach(seeds, |v| &self.parents[v])
    }

    fn reach<'a>(&'a self, seeds: &[usize], next: impl Fn(usize) -> &'a [usize]) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        let mut stack: Vec<usize> = seeds.to_vec();
        for &s in seeds {
            mask[s] = true;
        }
        while let Some(v) = stack.pop() {
            for &w in next(v) {
                if !mask[w] {
                    mask[w] = true;
                    stack.push(w);
                }
            }
        }
        mask
    }

    /// Reachability-style d-separation: true iff every path between `a` and
    /// `b` is blocked given `z` (collider rules with descendant activation).
    pub fn d_separated(&self, a: &[usize], b: &[usize], z: &[usize]) -> Result<bool> {
        for sets in [(a, b), (a, z), (b, z)] {
            if sets.0.iter().any(|i| sets.1.contains(i)) {
                return Err(Error::Data("d-separation sets must be disjoint".into()));
            }
        }
        for &i in a.iter().chain(b).chain(z) {
            if i >= self.len() {
                return Err(Error::Data(format!("node index {i} out of range")));
            }
        }
        let in_z = {
            let mut m = vec![false; self.len()];
            for &i in z {
                m[i] = true;
            }
            m
        };
        let anc_z = self.ancestors_mask(z);
        let target: HashSet<usize> = b.iter().copied().collect();

        // States: (node, arrived-from-child?); start as if from a child.
        let mut visited = vec![[false; 2]; self.len()];
        let mut queue: VecDeque<(usize, bool)> = a.iter().map(|&i| (i, true)).collect();
        while let Some((v, from_child)) = queue.pop_front() {
            let dir = usize::from(from_child);
            if visited[v][dir] {
                continue;
            }
            visited[v][dir] = true;
            if target.contains(&v) {
                return Ok(false);
            }
            if from_child {
                if !in_z[v] {
                    for &p in &self.parents[v] {
                        queue.push_back((p, true));
                    }
                    for &c in &self.children[v] {
                        queue.push_back((c, false));
                    }
                }
            } else {
                if !in_z[v] {
                    for &c in &self.children[v] {
                        queue.push_back((c, false));
                    }
                }
                // Collider: passing back up requires a conditioned
                // descendant (or the node itself conditioned).
                if anc_z[v] {
                    for &p in &self.parents[v] {
                        queue.push_back((p, true));
                    }
                }
            }
        }
        Ok(true)
    }

    /// All simple paths (over the skeleton) between `a` and `b`, each as a
    /// node sequence.
    pub fn simple_paths(&self, a: usize, b: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut path = vec![a];
        let mut on_path = vec![false; self.len()];
        on_path[a] = true;
        self.paths_rec(b, &mut path, &mut on_path, &mut out);
        out
    }

    fn paths_rec(
        &self,
        goal: usize,
        path: &mut Vec<usize>,
        on_path: &mut Vec<bool>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let v = *path.last().unwrap();
        if v == goal {
            out.push(path.clone());
            return;
        }
        let neighbors: Vec<usize> = self.children[v]
            .iter()
            .chain(&self.parents[v])
            .copied()
            .collect();
        for w in neighbors {
            if !on_path[w] {
                on_path[w] = true;
                path.push(w);
                self.paths_rec(goal, path, on_path, out);
                path.pop();
                on_path[w] = false;
            }
        }
    }

    fn is_edge(&self, a: usize, b: usize) -> bool {
        self.children[a].contains(&b)
    }

    /// Path-blocking rules on a concrete simple path.
    pub fn path_active(&self, path: &[usize], z: &[usize]) -> bool {
        let in_z: HashSet<usize> = z.iter().copied().collect();
        let anc_z = self.ancestors_mask(z);
        for w in path.windows(3) {
            let (a, v, b) = (w[0], w[1], w[2]);
            let collider = self.is_edge(a, v) && self.is_edge(b, v);
            if collider {
                if !anc_z[v] {
                    return false;
                }
            } else if in_z.contains(&v) {
                return false;
            }
        }
        true
    }

    /// An active path between `a` and `b` given `z`, if one exists.
    pub fn find_active_path(&self, a: usize, b: usize, z: &[usize]) -> Option<Vec<usize>> {
        self.simple_paths(a, b)
            .into_iter()
            .find(|p| self.path_active(p, z))
    }

    /// Directed path from `a` to `b` (a "proper causal path" when `a` is the
    /// treatment): every edge points forward.
    fn is_causal_path(&self, path: &[usize]) -> bool {
        path.windows(2).all(|w| self.is_edge(w[0], w[1]))
    }
}

/// Criterion names for [`check_criterion`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    SelectionBackdoor,
    SelectionBackdoorExt,
    Gact1,
    Gact2,
    SId,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selection_backdoor" => Ok(Criterion::SelectionBackdoor),
            "selection_backdoor_ext" => Ok(Criterion::SelectionBackdoorExt),
            "gact1" => Ok(Criterion::Gact1),
            "gact2" => Ok(Criterion::Gact2),
            "s_id" => Ok(Criterion::SId),
            _ => Err(Error::Config(format!("unknown criterion `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub criterion: Criterion,
    pub holds: bool,
    /// Identifier of the first failing clause when `holds` is false.
    pub failed_clause: Option<String>,
    /// An active path witnessing a failed separation clause, when available.
    pub witness_path: Option<Vec<String>>,
}

struct RoleNodes {
    t: usize,
    y: usize,
    s: usize,
}

fn role_nodes(dag: &Dag) -> Result<RoleNodes> {
    Ok(RoleNodes {
        t: dag.role_node(Role::Treatment)?,
        y: dag.role_node(Role::Outcome)?,
        s: dag.role_node(Role::Selection)?,
    })
}

struct ClauseFailure {
    clause: &'static str,
    witness: Option<Vec<usize>>,
}

/// Nodes other than T lying on a proper causal path from T to Y.
fn proper_causal_nodes(dag: &Dag, t: usize, y: usize) -> Vec<usize> {
    let de_t = dag.descendants_mask(&[t]);
    let an_y = dag.ancestors_mask(&[y]);
    (0..dag.len())
        .filter(|&v| v != t && de_t[v] && an_y[v])
        .collect()
}

/// First non-causal T-Y path left open by the conditioning set, if any.
fn open_noncausal_path(dag: &Dag, t: usize, y: usize, cond: &[usize]) -> Option<Vec<usize>> {
    dag.simple_paths(t, y)
        .into_iter()
        .filter(|p| !dag.is_causal_path(p))
        .find(|p| dag.path_active(p, cond))
}

fn evaluate(dag: &Dag, criterion: Criterion, z: &[usize]) -> Result<Option<ClauseFailure>> {
    let RoleNodes { t, y, s } = role_nodes(dag)?;
    for &zi in z {
        if zi == t || zi == y || zi == s {
            return Err(Error::Data(
                "adjustment set must not contain the treatment, outcome, or selection node".into(),
            ));
        }
    }
    let g_tbar = dag.mutilate(&[t], &[]); // incoming edges of T removed
    let g_tunder = dag.mutilate(&[], &[t]); // outgoing edges of T removed
    let with_s = |set: &[usize]| -> Vec<usize> {
        let mut v = set.to_vec();
        v.push(s);
        v
    };
    let with_t = |set: &[usize]| -> Vec<usize> {
        let mut v = set.to_vec();
        v.push(t);
        v
    };

    match criterion {
        Criterion::SelectionBackdoor => {
            // Clauses as in the backdoor-with-selection argument:
            // (1) Z contains no descendant of T;
            // (2) non-causal T-Y paths blocked by Z and S;
            // (3) Y separated from S given T with T's incoming edges removed;
            // (4) when T is an ancestor of S, T separated from Y given Z with
            //     T's outgoing edges removed (read conditionally on Z so the
            //     plain T -> S graph passes, matching the published
            //     classification).
            let de_t = dag.descendants_mask(&[t]);
            if let Some(&bad) = z.iter().find(|&&zi| de_t[zi] && zi != t) {
                return Ok(Some(ClauseFailure {
                    clause: "1",
                    witness: Some(vec![t, bad]),
                }));
            }
            if let Some(p) = open_noncausal_path(dag, t, y, &with_s(z)) {
                return Ok(Some(ClauseFailure {
                    clause: "2",
                    witness: Some(p),
                }));
            }
            if !g_tbar.d_separated(&[y], &[s], &[t])? {
                return Ok(Some(ClauseFailure {
                    clause: "3",
                    witness: g_tbar.find_active_path(y, s, &[t]),
                }));
            }
            let an_s = dag.ancestors_mask(&[s]);
            if an_s[t] && !g_tunder.d_separated(&[t], &[y], z)? {
                return Ok(Some(ClauseFailure {
                    clause: "4",
                    witness: g_tunder.find_active_path(t, y, z),
                }));
            }
            Ok(None)
        }
        Criterion::SelectionBackdoorExt => {
            // (1) Z contains no descendant of T;
            // (2) non-causal T-Y paths blocked by Z and S;
            // (3) Y separated from S given T and Z in the original graph.
            let de_t = dag.descendants_mask(&[t]);
            if let Some(&bad) = z.iter().find(|&&zi| de_t[zi] && zi != t) {
                return Ok(Some(ClauseFailure {
                    clause: "1",
                    witness: Some(vec![t, bad]),
                }));
            }
            if let Some(p) = open_noncausal_path(dag, t, y, &with_s(z)) {
                return Ok(Some(ClauseFailure {
                    clause: "2",
                    witness: Some(p),
                }));
            }
            if !dag.d_separated(&[y], &[s], &with_t(z))? {
                return Ok(Some(ClauseFailure {
                    clause: "3",
                    witness: dag.find_active_path(y, s, &with_t(z)),
                }));
            }
            Ok(None)
        }
        Criterion::Gact1 | Criterion::Gact2 => {
            // (a) no element of Z descends, in the graph with T's incoming
            //     edges removed, from a non-treatment node on a proper causal
            //     path from T to Y.
            let cn = proper_causal_nodes(dag, t, y);
            let de_cn = g_tbar.descendants_mask(&cn);
            if let Some(&bad) = z.iter().find(|&&zi| de_cn[zi]) {
                return Ok(Some(ClauseFailure {
                    clause: "a",
                    witness: Some(vec![bad]),
                }));
            }
            match criterion {
                Criterion::Gact1 => {
                    // (b) non-causal paths blocked by Z and S.
                    if let Some(p) = open_noncausal_path(dag, t, y, &with_s(z)) {
                        return Ok(Some(ClauseFailure {
                            clause: "b",
                            witness: Some(p),
                        }));
                    }
                    // (c) Y separated from S given T under intervention on T.
                    if !g_tbar.d_separated(&[y], &[s], &[t])? {
                        return Ok(Some(ClauseFailure {
                            clause: "c",
                            witness: g_tbar.find_active_path(y, s, &[t]),
                        }));
                    }
                    // (d) T, when an ancestor of S, is independent of Y with
                    //     its outgoing edges removed.
                    let an_s = dag.ancestors_mask(&[s]);
                    if an_s[t] && !g_tunder.d_separated(&[t], &[y], &[])? {
                        return Ok(Some(ClauseFailure {
                            clause: "d",
                            witness: g_tunder.find_active_path(t, y, &[]),
                        }));
                    }
                    Ok(None)
                }
                _ => {
                    // GACT2 (b): non-causal paths blocked by Z alone.
                    if let Some(p) = open_noncausal_path(dag, t, y, z) {
                        return Ok(Some(ClauseFailure {
                            clause: "b",
                            witness: Some(p),
                        }));
                    }
                    // (c) Y separated from S given T and Z.
                    if !dag.d_separated(&[y], &[s], &with_t(z))? {
                        return Ok(Some(ClauseFailure {
                            clause: "c",
                            witness: dag.find_active_path(y, s, &with_t(z)),
                        }));
                    }
                    Ok(None)
                }
            }
        }
        Criterion::SId => {
            // Subpopulation identifiability: T must not be an ancestor of S,
            // and Y must be separated from S given Z under intervention on T.
            let an_s = dag.ancestors_mask(&[s]);
            if an_s[t] {
                return Ok(Some(ClauseFailure {
                    clause: "t_not_ancestor_of_s",
                    witness: None,
                }));
            }
            if !g_tbar.d_separated(&[y], &[s], z)? {
                return Ok(Some(ClauseFailure {
                    clause: "outcome_separated_from_s",
                    witness: g_tbar.find_active_path(y, s, z),
                }));
            }
            Ok(None)
        }
    }
}

/// Evaluate one criterion clause by clause; the report carries the first
/// failing clause and, when a separation failed, an active witness path.
pub fn check_criterion(dag: &Dag, criterion: Criterion, z: &[String]) -> Result<CriterionReport> {
    let z_idx: Vec<usize> = z
        .iter()
        .map(|n| dag.node_index(n))
        .collect::<Result<_>>()?;
    let failure = evaluate(dag, criterion, &z_idx)?;
    Ok(match failure {
        None => CriterionReport {
            criterion,
            holds: true,
            failed_clause: None,
            witness_path: None,
        },
        Some(f) => CriterionReport {
            criterion,
            holds: false,
            failed_clause: Some(f.clause.to_string()),
            witness_path: f
                .witness
                .map(|p| p.into_iter().map(|i| dag.name(i).to_string()).collect()),
        },
    })
}

/// Identifiability from biased data per the graphical framework.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DagFrameworkVerdict {
    Yes,
    YesWithExternal,
    No,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateClassification {
    pub dag_framework: DagFrameworkVerdict,
    pub s_id: bool,
}

/// Classify a four-node template graph (roles X, T, Y, S with the base edges
/// X->T, X->Y, T->Y and S a sink) against the adjustment-criteria battery
/// and the subpopulation rule.
pub fn classify_table1(dag: &Dag) -> Result<TemplateClassification> {
    let t = dag.role_node(Role::Treatment)?;
    let y = dag.role_node(Role::Outcome)?;
    let s = dag.role_node(Role::Selection)?;
    let x = dag.role_node(Role::Covariate)?;
    if dag.len() != 4 {
        return Err(Error::Data("not a Table 1 instance: need exactly 4 nodes".into()));
    }
    let edges: HashSet<(usize, usize)> = dag.edges().into_iter().collect();
    for required in [(x, t), (x, y), (t, y)] {
        if !edges.contains(&required) {
            return Err(Error::Data(
                "not a Table 1 instance: base edges X->T, X->Y, T->Y required".into(),
            ));
        }
    }
    let extra: Vec<(usize, usize)> = edges
        .iter()
        .copied()
        .filter(|e| ![(x, t), (x, y), (t, y)].contains(e))
        .collect();
    if extra.is_empty() || extra.iter().any(|&(a, b)| b != s || a == s) {
        return Err(Error::Data(
            "not a Table 1 instance: remaining edges must point into S".into(),
        ));
    }

    let zx = vec![dag.name(x).to_string()];
    let dag_framework = if check_criterion(dag, Criterion::SelectionBackdoor, &zx)?.holds {
        DagFrameworkVerdict::Yes
    } else if check_criterion(dag, Criterion::SelectionBackdoorExt, &zx)?.holds {
        DagFrameworkVerdict::YesWithExternal
    } else {
        DagFrameworkVerdict::No
    };
    let s_id = check_criterion(dag, Criterion::SId, &zx)?.holds;
    Ok(TemplateClassification { dag_framework, s_id })
}
