//! Symbolic blocks-world: grounding queries, plan generation, and plan
//! validation under a strict token grammar.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::vocab::{
    block_token, ACT_PICK, ACT_PLACEON, ACT_PLACETABLE, EOS, GOAL_TOK, MAX_BLOCKS, NO, PAD,
    PRED_CLEAR, PRED_ON, PRED_ONTABLE, SEP, STACK_TOK, YES,
};

#[derive(Debug)]
pub enum BwError {
    Query(String),
    Solver(String),
}

impl std::fmt::Display for BwError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BwError::Query(m) => write!(f, "query error: {m}"),
            BwError::Solver(m) => write!(f, "solver error: {m}"),
        }
    }
}

impl std::error::Error for BwError {}

/// Stacks of block ids, bottom to top, canonicalized by bottom id.
/// Every block appears exactly once across stacks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockScene {
    pub n_blocks: usize,
    pub stacks: Vec<Vec<u32>>,
    pub colors: Vec<u8>,
}

impl BlockScene {
    pub fn canonicalize(&mut self) {
        self.stacks.retain(|s| !s.is_empty());
        self.stacks.sort_by_key(|s| s[0]);
    }

    pub fn contains(&self, block: u32) -> bool {
        (block as usize) < self.n_blocks
    }

    fn position(&self, block: u32) -> Option<(usize, usize)> {
        for (si, stack) in self.stacks.iter().enumerate() {
            if let Some(pi) = stack.iter().position(|&b| b == block) {
                return Some((si, pi));
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predicate {
    On(u32, u32),
    OnTable(u32),
    Clear(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolicAction {
    Pick(u32),
    PlaceOn(u32, u32),
    PlaceTable(u32),
}

/// Scene plus the (at most one) held block.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanState {
    pub scene: BlockScene,
    pub held: Option<u32>,
}

impl PlanState {
    pub fn new(scene: BlockScene) -> Self {
        PlanState { scene, held: None }
    }
}

/// Truth of a predicate under standard semantics: Clear(a) iff a tops a
/// stack, OnTable(a) iff a is a stack bottom. A held block satisfies no
/// predicate.
pub fn eval_predicate(scene: &BlockScene, p: &Predicate) -> Result<bool, BwError> {
    let check = |b: u32| -> Result<(), BwError> {
        if !scene.contains(b) {
            Err(BwError::Query(format!("unknown block id {b}")))
        } else {
            Ok(())
        }
    };
    match *p {
        Predicate::On(a, b) => {
            check(a)?;
            check(b)?;
            if a == b {
                return Err(BwError::Query("On requires distinct arguments".into()));
            }
            Ok(scene.stacks.iter().any(|s| {
                s.windows(2).any(|w| w[0] == b && w[1] == a)
            }))
        }
        Predicate::OnTable(a) => {
            check(a)?;
            Ok(scene.stacks.iter().any(|s| s[0] == a))
        }
        Predicate::Clear(a) => {
            check(a)?;
            Ok(scene.stacks.iter().any(|s| *s.last().unwrap() == a))
        }
    }
}

/// Apply an action; invalid actions leave the state unchanged and are
/// reported as data, not errors.
pub fn apply_action(state: &PlanState, act: &SymbolicAction) -> (PlanState, bool) {
    let mut next = state.clone();
    let valid = match *act {
        SymbolicAction::Pick(x) => {
            if next.held.is_some() || !next.scene.contains(x) {
                false
            } else if let Some((si, pi)) = next.scene.position(x) {
                if pi + 1 == next.scene.stacks[si].len() {
                    next.scene.stacks[si].pop();
                    next.held = Some(x);
                    next.scene.canonicalize();
                    true
                } else {
                    false
                }
            } else {
                false
            }
        }
        SymbolicAction::PlaceOn(x, y) => {
            if next.held != Some(x) || !next.scene.contains(y) || x == y {
                false
            } else if let Some((si, pi)) = next.scene.position(y) {
                if pi + 1 == next.scene.stacks[si].len() {
                    next.scene.stacks[si].push(x);
                    next.held = None;
                    next.scene.canonicalize();
                    true
                } else {
                    false
                }
            } else {
                false
            }
        }
        SymbolicAction::PlaceTable(x) => {
            if next.held == Some(x) {
                next.scene.stacks.push(vec![x]);
                next.held = None;
                next.scene.canonicalize();
                true
            } else {
                false
            }
        }
    };
    if valid {
        (next, true)
    } else {
        (state.clone(), false)
    }
}

pub fn goal_satisfied(scene: &BlockScene, goals: &[Predicate]) -> bool {
    goals.iter().all(|p| eval_predicate(scene, p).unwrap_or(false))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Want {
    Table,
    OnBlock(u32),
    Free,
}

/// Two-phase solver: unstack every misplaced, non-bottom block to the
/// table, then assemble goal stacks bottom-up. Plans are always valid
/// and reach the goal, or the goal is reported unsatisfiable.
pub fn solve(scene: &BlockScene, goals: &[Predicate]) -> Result<Vec<SymbolicAction>, BwError> {
    let n = scene.n_blocks;
    let mut want = vec![Want::Free; n];
    for g in goals {
        match *g {
            Predicate::On(a, b) => {
                if a == b || a as usize >= n || b as usize >= n {
                    return Err(BwError::Solver("malformed On goal".into()));
                }
                if want[a as usize] != Want::Free {
                    return Err(BwError::Solver(format!("conflicting goals for block {a}")));
                }
                want[a as usize] = Want::OnBlock(b);
            }
            Predicate::OnTable(a) => {
                if a as usize >= n {
                    return Err(BwError::Solver("malformed OnTable goal".into()));
                }
                if want[a as usize] != Want::Free {
                    return Err(BwError::Solver(format!("conflicting goals for block {a}")));
                }
                want[a as usize] = Want::Table;
            }
            Predicate::Clear(_) => {
                return Err(BwError::Solver("Clear goals are not supported".into()));
            }
        }
    }
    // cycle check over the On graph
    for start in 0..n {
        let mut cur = start;
        let mut hops = 0;
        while let Want::OnBlock(b) = want[cur] {
            cur = b as usize;
            hops += 1;
            if hops > n {
                return Err(BwError::Solver("cyclic On goals are unsatisfiable".into()));
            }
        }
    }

    let mut state = PlanState::new(scene.clone());
    let mut plan = Vec::new();
    let push = |state: &mut PlanState, plan: &mut Vec<SymbolicAction>, act: SymbolicAction| -> Result<(), BwError> {
        let (next, ok) = apply_action(state, &act);
        if !ok {
            return Err(BwError::Solver(format!("internal: invalid solver action {act:?}")));
        }
        *state = next;
        plan.push(act);
        Ok(())
    };

    fn in_final(state: &PlanState, want: &[Want], x: u32) -> bool {
        match want[x as usize] {
            Want::Table | Want::Free => state
                .scene
                .stacks
                .iter()
                .any(|s| s[0] == x),
            Want::OnBlock(b) => {
                state
                    .scene
                    .stacks
                    .iter()
                    .any(|s| s.windows(2).any(|w| w[0] == b && w[1] == x))
                    && in_final(state, want, b)
            }
        }
    }

    if goal_satisfied(&state.scene, goals) {
        return Ok(plan);
    }

    // Phase 1: clear out misplaced blocks, top-down.
    loop {
        let victim = state
            .scene
            .stacks
            .iter()
            .filter(|s| s.len() > 1)
            .map(|s| *s.last().unwrap())
            .find(|&top| !in_final(&state, &want, top));
        match victim {
            Some(x) => {
                push(&mut state, &mut plan, SymbolicAction::Pick(x))?;
                push(&mut state, &mut plan, SymbolicAction::PlaceTable(x))?;
            }
            None => break,
        }
    }

    // Phase 2: build goal stacks bottom-up.
    loop {
        if goal_satisfied(&state.scene, goals) {
            return Ok(plan);
        }
        let mut progressed = false;
        for a in 0..n as u32 {
            if let Want::OnBlock(b) = want[a as usize] {
                if in_final(&state, &want, a) {
                    continue;
                }
                let a_clear = eval_predicate(&state.scene, &Predicate::Clear(a)).unwrap_or(false);
                let b_clear = eval_predicate(&state.scene, &Predicate::Clear(b)).unwrap_or(false);
                if a_clear && b_clear && in_final(&state, &want, b) {
                    push(&mut state, &mut plan, SymbolicAction::Pick(a))?;
                    push(&mut state, &mut plan, SymbolicAction::PlaceOn(a, b))?;
                    progressed = true;
                }
            }
        }
        if !progressed {
            return Err(BwError::Solver("no progress; goal unsatisfiable from scene".into()));
        }
    }
}

// ── token serialization ─────────────────────────────────────────────

/// Injective scene serialization over canonical scenes: each stack is
/// STACK followed by its blocks bottom-to-top.
pub fn scene_tokens(scene: &BlockScene) -> Vec<u32> {
    let mut out = Vec::new();
    for stack in &scene.stacks {
        out.push(STACK_TOK);
        for &b in stack {
            out.push(block_token(b));
        }
    }
    out
}

pub fn predicate_tokens(p: &Predicate) -> Vec<u32> {
    match *p {
        Predicate::On(a, b) => vec![PRED_ON, block_token(a), block_token(b)],
        Predicate::OnTable(a) => vec![PRED_ONTABLE, block_token(a)],
        Predicate::Clear(a) => vec![PRED_CLEAR, block_token(a)],
    }
}

fn action_tokens(a: &SymbolicAction) -> Vec<u32> {
    match *a {
        SymbolicAction::Pick(x) => vec![ACT_PICK, block_token(x)],
        SymbolicAction::PlaceOn(x, y) => vec![ACT_PLACEON, block_token(x), block_token(y)],
        SymbolicAction::PlaceTable(x) => vec![ACT_PLACETABLE, block_token(x)],
    }
}

/// Serialize a plan into exactly `slots` tokens: actions separated by
/// SEP, terminated by EOS, padded with PAD.
pub fn plan_tokens(plan: &[SymbolicAction], slots: usize) -> Option<Vec<u32>> {
    let mut out = Vec::with_capacity(slots);
    for (i, a) in plan.iter().enumerate() {
        if i > 0 {
            out.push(SEP);
        }
        out.extend(action_tokens(a));
    }
    out.push(EOS);
    if out.len() > slots {
        return None;
    }
    out.resize(slots, PAD);
    Some(out)
}

fn parse_block(tok: u32) -> Option<u32> {
    if (crate::vocab::BLOCK_BASE..crate::vocab::BLOCK_BASE + MAX_BLOCKS).contains(&tok) {
        Some(tok - crate::vocab::BLOCK_BASE)
    } else {
        None
    }
}

/// Strict grammar parse. Returns the leading well-formed actions and
/// whether the whole answer region was well-formed (actions separated by
/// single SEPs, EOS present, only PAD afterwards).
pub fn parse_plan(tokens: &[u32]) -> (Vec<SymbolicAction>, bool) {
    let mut actions = Vec::new();
    let mut pos = 0;
    let mut valid = true;
    loop {
        if pos >= tokens.len() {
            valid = false; // ran out before EOS
            break;
        }
        if tokens[pos] == EOS {
            pos += 1;
            break;
        }
        let action = match tokens[pos] {
            t if t == ACT_PICK => {
                let b = tokens.get(pos + 1).copied().and_then(parse_block);
                pos += 2;
                b.map(SymbolicAction::Pick)
            }
            t if t == ACT_PLACEON => {
                let x = tokens.get(pos + 1).copied().and_then(parse_block);
                let y = tokens.get(pos + 2).copied().and_then(parse_block);
                pos += 3;
                match (x, y) {
                    (Some(x), Some(y)) => Some(SymbolicAction::PlaceOn(x, y)),
                    _ => None,
                }
            }
            t if t == ACT_PLACETABLE => {
                let b = tokens.get(pos + 1).copied().and_then(parse_block);
                pos += 2;
                b.map(SymbolicAction::PlaceTable)
            }
            _ => None,
        };
        match action {
            Some(a) => actions.push(a),
            None => {
                valid = false;
                break;
            }
        }
        // expect SEP before another action, or EOS
        match tokens.get(pos) {
            Some(&t) if t == SEP => pos += 1,
            Some(&t) if t == EOS => {}
            _ => {
                valid = false;
                break;
            }
        }
    }
    if valid {
        // only padding may follow EOS
        if tokens[pos..].iter().any(|&t| t != PAD) {
            valid = false;
        }
    }
    (actions, valid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub task_success: bool,
    pub action_validity: f32,
    pub grammar_valid: bool,
}

/// Parse and replay a generated plan against a scene and goal. Execution
/// stops as soon as the goal holds; invalid actions leave the scene
/// unchanged and count against validity.
pub fn validate_plan(scene: &BlockScene, goals: &[Predicate], tokens: &[u32]) -> PlanResult {
    let (actions, grammar_valid) = parse_plan(tokens);
    let mut state = PlanState::new(scene.clone());
    let mut attempted = 0u32;
    let mut valid_count = 0u32;
    let mut task_success = goal_satisfied(&state.scene, goals);
    for a in &actions {
        if task_success {
            break;
        }
        let (next, ok) = apply_action(&state, a);
        attempted += 1;
        if ok {
            valid_count += 1;
        }
        state = next;
        task_success = goal_satisfied(&state.scene, goals);
    }
    let action_validity = if attempted == 0 {
        1.0
    } else {
        valid_count as f32 / attempted as f32
    };
    PlanResult { task_success, action_validity, grammar_valid }
}

/// Iterative evaluation protocol: each round a planner proposes a plan
/// for the current state and only the first action executes. Stops when
/// the goal holds, the planner emits no action, or `max_iters` is hit.
pub fn iterative_replay(
    scene: &BlockScene,
    goals: &[Predicate],
    mut planner: impl FnMut(&PlanState) -> Vec<SymbolicAction>,
    max_iters: usize,
) -> PlanResult {
    let mut state = PlanState::new(scene.clone());
    let mut attempted = 0u32;
    let mut valid_count = 0u32;
    let mut task_success = goal_satisfied(&state.scene, goals);
    for _ in 0..max_iters {
        if task_success {
            break;
        }
        let plan = planner(&state);
        let Some(first) = plan.first() else { break };
        let (next, ok) = apply_action(&state, first);
        attempted += 1;
        if ok {
            valid_count += 1;
        }
        state = next;
        task_success = goal_satisfied(&state.scene, goals);
    }
    let action_validity = if attempted == 0 {
        1.0
    } else {
        valid_count as f32 / attempted as f32
    };
    PlanResult { task_success, action_validity, grammar_valid: true }
}

// ── instance generation ─────────────────────────────────────────────

pub fn random_scene(n_blocks: usize, rng: &mut ChaCha8Rng) -> BlockScene {
    assert!(n_blocks >= 2 && n_blocks <= MAX_BLOCKS as usize);
    let mut order: Vec<u32> = (0..n_blocks as u32).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut scene = BlockScene {
        n_blocks,
        stacks: Vec::new(),
        colors: (0..n_blocks as u8).map(|i| i % 3).collect(),
    };
    for &b in &order {
        if scene.stacks.is_empty() || rng.gen_bool(0.5) {
            scene.stacks.push(vec![b]);
        } else {
            let si = rng.gen_range(0..scene.stacks.len());
            scene.stacks[si].push(b);
        }
    }
    scene.canonicalize();
    scene
}

fn random_predicate(n_blocks: usize, rng: &mut ChaCha8Rng) -> Predicate {
    let a = rng.gen_range(0..n_blocks as u32);
    match rng.gen_range(0..3) {
        0 => {
            let mut b = rng.gen_range(0..n_blocks as u32);
            while b == a {
                b = rng.gen_range(0..n_blocks as u32);
            }
            Predicate::On(a, b)
        }
        1 => Predicate::OnTable(a),
        _ => Predicate::Clear(a),
    }
}

/// Balanced grounding pairs: alternate target labels and rejection-sample
/// a (scene, query) with that truth value.
pub fn make_grounding_examples(
    n: usize,
    n_blocks: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<u32>, Vec<u32>, bool)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let want_yes = i % 2 == 0;
        'search: loop {
            let scene = random_scene(n_blocks, rng);
            for _ in 0..40 {
                let p = random_predicate(n_blocks, rng);
                if eval_predicate(&scene, &p).unwrap() == want_yes {
                    let mut prompt = scene_tokens(&scene);
                    prompt.push(SEP);
                    prompt.extend(predicate_tokens(&p));
                    let answer = vec![if want_yes { YES } else { NO }];
                    out.push((prompt, answer, want_yes));
                    break 'search;
                }
            }
        }
    }
    out
}

/// A planning instance: random scene plus a single On goal.
pub fn sample_planning_instance(
    n_blocks: usize,
    rng: &mut ChaCha8Rng,
) -> (BlockScene, Vec<Predicate>) {
    let scene = random_scene(n_blocks, rng);
    let a = rng.gen_range(0..n_blocks as u32);
    let mut b = rng.gen_range(0..n_blocks as u32);
    while b == a {
        b = rng.gen_range(0..n_blocks as u32);
    }
    (scene, vec![Predicate::On(a, b)])
}

pub fn planning_prompt(scene: &BlockScene, goals: &[Predicate]) -> Vec<u32> {
    let mut prompt = scene_tokens(scene);
    prompt.push(SEP);
    prompt.push(GOAL_TOK);
    for g in goals {
        prompt.extend(predicate_tokens(g));
    }
    prompt
}

/// Planning pairs: solver plans serialized into a fixed-width answer.
pub fn make_planning_examples(
    n: usize,
    n_blocks: usize,
    plan_slots: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<u32>, Vec<u32>)> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (scene, goals) = sample_planning_instance(n_blocks, rng);
        let plan = solve(&scene, &goals).expect("single On goal is always satisfiable");
        if let Some(answer) = plan_tokens(&plan, plan_slots) {
            out.push((planning_prompt(&scene, &goals), answer));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use std::collections::HashSet;

    fn scene_ab() -> BlockScene {
        // stack [A,B]: B on top of A
        BlockScene { n_blocks: 2, stacks: vec![vec![0, 1]], colors: vec![0, 1] }
    }

    #[test]
    fn predicate_basics() {
        let s = scene_ab();
        assert!(eval_predicate(&s, &Predicate::On(1, 0)).unwrap());
        assert!(!eval_predicate(&s, &Predicate::On(0, 1)).unwrap());
        assert!(!eval_predicate(&s, &Predicate::Clear(0)).unwrap());
        assert!(eval_predicate(&s, &Predicate::Clear(1)).unwrap());
        assert!(eval_predicate(&s, &Predicate::OnTable(0)).unwrap());
        assert!(!eval_predicate(&s, &Predicate::OnTable(1)).unwrap());
        assert!(eval_predicate(&s, &Predicate::On(1, 5)).is_err());
    }

    /// Independent oracle: recompute predicates from a flat support map.
    fn oracle_eval(scene: &BlockScene, p: &Predicate) -> bool {
        let mut below: Vec<Option<u32>> = vec![None; scene.n_blocks];
        let mut above: Vec<Option<u32>> = vec![None; scene.n_blocks];
        for stack in &scene.stacks {
            for i in 0..stack.len() {
                if i > 0 {
                    below[stack[i] as usize] = Some(stack[i - 1]);
                }
                if i + 1 < stack.len() {
                    above[stack[i] as usize] = Some(stack[i + 1]);
                }
            }
        }
        match *p {
            Predicate::On(a, b) => below[a as usize] == Some(b),
            Predicate::OnTable(a) => below[a as usize].is_none(),
            Predicate::Clear(a) => above[a as usize].is_none(),
        }
    }

    #[test]
    fn predicates_agree_with_oracle_on_random_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = rng.gen_range(2..=6usize);
            let scene = random_scene(n, &mut rng);
            for _ in 0..6 {
                let p = random_predicate(n, &mut rng);
                assert_eq!(eval_predicate(&scene, &p).unwrap(), oracle_eval(&scene, &p));
            }
        }
    }

    #[test]
    fn pick_and_place_table_create_singleton_stack() {
        let s = PlanState::new(scene_ab());
        let (s1, ok) = apply_action(&s, &SymbolicAction::Pick(1));
        assert!(ok);
        assert_eq!(s1.held, Some(1));
        let (s2, ok) = apply_action(&s1, &SymbolicAction::PlaceTable(1));
        assert!(ok);
        assert_eq!(s2.scene.stacks, vec![vec![0], vec![1]]);
    }

    #[test]
    fn covered_pick_is_invalid_and_keeps_scene() {
        let s = PlanState::new(scene_ab());
        let (s1, ok) = apply_action(&s, &SymbolicAction::Pick(0));
        assert!(!ok);
        assert_eq!(s1, s);
    }

    /// Independent validity oracle from first principles.
    fn oracle_valid(state: &PlanState, act: &SymbolicAction) -> bool {
        match *act {
            SymbolicAction::Pick(x) => {
                state.held.is_none()
                    && state.scene.contains(x)
                    && state.scene.stacks.iter().any(|s| *s.last().unwrap() == x)
            }
            SymbolicAction::PlaceOn(x, y) => {
                state.held == Some(x)
                    && x != y
                    && state.scene.contains(y)
                    && state.scene.stacks.iter().any(|s| *s.last().unwrap() == y)
            }
            SymbolicAction::PlaceTable(x) => state.held == Some(x),
        }
    }

    #[test]
    fn random_action_sequences_match_validity_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let n = rng.gen_range(2..=6usize);
            let mut state = PlanState::new(random_scene(n, &mut rng));
            for _ in 0..20 {
                let act = match rng.gen_range(0..3) {
                    0 => SymbolicAction::Pick(rng.gen_range(0..n as u32)),
                    1 => SymbolicAction::PlaceOn(
                        rng.gen_range(0..n as u32),
                        rng.gen_range(0..n as u32),
                    ),
                    _ => SymbolicAction::PlaceTable(rng.gen_range(0..n as u32)),
                };
                let expect = if let SymbolicAction::PlaceOn(x, y) = act {
                    if x == y { false } else { oracle_valid(&state, &act) }
                } else {
                    oracle_valid(&state, &act)
                };
                let (next, ok) = apply_action(&state, &act);
                assert_eq!(ok, expect, "{act:?} on {state:?}");
                state = next;
            }
        }
    }

    #[test]
    fn solver_empty_plan_when_satisfied() {
        let plan = solve(&scene_ab(), &[Predicate::On(1, 0)]).unwrap();
        assert!(plan.is_empty());
    }

    /// Breadth-first search oracle for minimal plan length.
    fn bfs_min_plan(scene: &BlockScene, goals: &[Predicate]) -> usize {
        use std::collections::VecDeque;
        let mut seen = HashSet::new();
        let mut q = VecDeque::new();
        let start = PlanState::new(scene.clone());
        q.push_back((start.clone(), 0usize));
        seen.insert(format!("{start:?}"));
        while let Some((state, depth)) = q.pop_front() {
            if goal_satisfied(&state.scene, goals) {
                return depth;
            }
            let n = state.scene.n_blocks as u32;
            let mut acts = Vec::new();
            for x in 0..n {
                acts.push(SymbolicAction::Pick(x));
                acts.push(SymbolicAction::PlaceTable(x));
                for y in 0..n {
                    if x != y {
                        acts.push(SymbolicAction::PlaceOn(x, y));
                    }
                }
            }
            for a in acts {
                let (next, ok) = apply_action(&state, &a);
                if ok {
                    let key = format!("{next:?}");
                    if seen.insert(key) {
                        q.push_back((next, depth + 1));
                    }
                }
            }
        }
        usize::MAX
    }

    #[test]
    fn solver_matches_bfs_optimum_on_swap_case() {
        let goals = [Predicate::On(0, 1)];
        let plan = solve(&scene_ab(), &goals).unwrap();
        assert_eq!(
            plan,
            vec![
                SymbolicAction::Pick(1),
                SymbolicAction::PlaceTable(1),
                SymbolicAction::Pick(0),
                SymbolicAction::PlaceOn(0, 1),
            ]
        );
        assert_eq!(bfs_min_plan(&scene_ab(), &goals), 4);
    }

    #[test]
    fn solver_reaches_goal_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let n = rng.gen_range(2..=6usize);
            let (scene, goals) = sample_planning_instance(n, &mut rng);
            let plan = solve(&scene, &goals).unwrap();
            let mut state = PlanState::new(scene);
            for a in &plan {
                let (next, ok) = apply_action(&state, a);
                assert!(ok, "solver emitted invalid action {a:?}");
                state = next;
            }
            assert!(goal_satisfied(&state.scene, &goals));
        }
    }

    #[test]
    fn cyclic_goals_rejected() {
        let scene = random_scene(3, &mut ChaCha8Rng::seed_from_u64(4));
        assert!(solve(&scene, &[Predicate::On(0, 1), Predicate::On(1, 0)]).is_err());
    }

    #[test]
    fn scene_tokens_injective_on_canonical_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut token_to_scene: std::collections::HashMap<Vec<u32>, BlockScene> =
            std::collections::HashMap::new();
        for _ in 0..2000 {
            let scene = random_scene(4, &mut rng);
            let toks = scene_tokens(&scene);
            if let Some(prev) = token_to_scene.get(&toks) {
                assert_eq!(prev, &scene, "two scenes share one serialization");
            } else {
                token_to_scene.insert(toks, scene);
            }
        }
    }

    #[test]
    fn plan_round_trip_and_grammar() {
        let plan = vec![
            SymbolicAction::Pick(1),
            SymbolicAction::PlaceTable(1),
            SymbolicAction::Pick(0),
            SymbolicAction::PlaceOn(0, 1),
        ];
        let toks = plan_tokens(&plan, 24).unwrap();
        let (parsed, ok) = parse_plan(&toks);
        assert!(ok);
        assert_eq!(parsed, plan);

        // truncate before EOS
        let cut = &toks[..5];
        let (_, ok) = parse_plan(cut);
        assert!(!ok);

        // junk after EOS
        let mut bad = toks.clone();
        *bad.last_mut().unwrap() = STACK_TOK;
        let (_, ok) = parse_plan(&bad);
        assert!(!ok);

        // empty plan
        let empty = plan_tokens(&[], 8).unwrap();
        let (parsed, ok) = parse_plan(&empty);
        assert!(ok);
        assert!(parsed.is_empty());
    }

    #[test]
    fn solver_plans_validate_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let (scene, goals) = sample_planning_instance(4, &mut rng);
            let plan = solve(&scene, &goals).unwrap();
            let toks = plan_tokens(&plan, 36).unwrap();
            let res = validate_plan(&scene, &goals, &toks);
            assert!(res.task_success);
            assert_eq!(res.action_validity, 1.0);
            assert!(res.grammar_valid);
        }
    }

    #[test]
    fn iterative_tail_replanning_equals_single_shot() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (scene, goals) = sample_planning_instance(4, &mut rng);
            let plan = solve(&scene, &goals).unwrap();
            let toks = plan_tokens(&plan, 36).unwrap();
            let single = validate_plan(&scene, &goals, &toks);
            // replanner that re-emits the remaining tail each round
            let mut idx = 0usize;
            let iter = iterative_replay(
                &scene,
                &goals,
                |_| {
                    let tail: Vec<_> = plan[idx..].to_vec();
                    idx += 1;
                    tail
                },
                64,
            );
            assert_eq!(single.task_success, iter.task_success);
            assert_eq!(single.action_validity, iter.action_validity);
        }
    }

    #[test]
    fn grounding_labels_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let examples = make_grounding_examples(10_000, 4, &mut rng);
        let yes = examples.iter().filter(|(_, _, y)| *y).count();
        let frac = yes as f64 / examples.len() as f64;
        assert!((0.45..=0.55).contains(&frac), "yes fraction {frac}");
        for (_, answer, want_yes) in examples.iter().take(50) {
            assert_eq!(answer[0], if *want_yes { YES } else { NO });
        }
    }
}
