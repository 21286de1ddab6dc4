"""Joint training of all category ensembles under a global part budget.

Every iteration fits one tree per category. Which response columns a tree may
split on is decided by the sampler:

* ``MaxExploit``: trees are restricted to the selected pool P until the
  category-averaged error of the current exploitation range stops
  decreasing; then one exploration iteration searches P plus a random
  candidate set and admits the new parts it uses.
* ``TieuViola``: every iteration each category adds one new part until the
  budget is spent.
* ``Uniform``: random candidates from all parts until the budget is spent.
* ``EpsilonGreedy``: explore with a fixed probability per iteration.

The pool never exceeds the budget. When the trees of one exploration iteration
would overflow it, budget slots are handed out round-robin over categories in
order of split gain and the affected trees are refit on P plus the admitted
parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .boosting import (
    DEFAULT_DEPTH,
    EXPLOIT,
    EXPLORE,
    CategoryEnsemble,
    DecisionTree,
    LabelMatrix,
    WeakLearner,
    check_weights,
    clamp_error,
    fit_tree,
    learner_weight,
    normalized_scores,
    raw_scores,
    uniform_weights,
    update_weights,
)
from .errors import BudgetTooSmall, DimensionMismatch, InfeasibleExploration

DEFAULT_CANDIDATES = 250
DEFAULT_EPSILON = 0.1

MAX_EXPLOIT = "max-exploit"
TIEU_VIOLA = "tieu-viola"
UNIFORM = "uniform"
EPS_GREEDY = "eps-greedy"
STRATEGIES = (MAX_EXPLOIT, TIEU_VIOLA, UNIFORM, EPS_GREEDY)


@dataclass(frozen=True)
class SamplerStrategy:
    kind: str = MAX_EXPLOIT
    candidates: int = DEFAULT_CANDIDATES
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {STRATEGIES}")
        if self.candidates < 1:
            raise ValueError("candidate pool size must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    @classmethod
    def max_exploit(cls, candidates=DEFAULT_CANDIDATES):
        return cls(MAX_EXPLOIT, candidates)

    @classmethod
    def tieu_viola(cls, candidates=DEFAULT_CANDIDATES):
        return cls(TIEU_VIOLA, candidates)

    @classmethod
    def uniform(cls, candidates=DEFAULT_CANDIDATES):
        return cls(UNIFORM, candidates)

    @classmethod
    def epsilon_greedy(cls, epsilon=DEFAULT_EPSILON, candidates=DEFAULT_CANDIDATES):
        return cls(EPS_GREEDY, candidates, epsilon)


@dataclass
class SharedPartPool:
    budget: int
    universe_size: int
    selected: List[int] = field(default_factory=list)

    def __post_init__(self):
        self._members = set(self.selected)

    def __contains__(self, part) -> bool:
        return part in self._members

    def __len__(self) -> int:
        return len(self.selected)

    @property
    def room(self) -> int:
        return self.budget - len(self.selected)

    @property
    def full(self) -> bool:
        return len(self.selected) >= self.budget

    def add(self, parts) -> None:
        for p in parts:
            p = int(p)
            if p in self._members:
                continue
            if not 0 <= p < self.universe_size:
                raise ValueError(f"part {p} outside universe of size {self.universe_size}")
            if self.full:
                raise BudgetTooSmall(f"adding part {p} would exceed the budget of {self.budget}")
            self.selected.append(p)
            self._members.add(p)

    def sorted(self) -> np.ndarray:
        return np.array(sorted(self.selected), dtype=np.int64)


class SaturationTracker:
    """Bookkeeping for the current exploitation range [u, v].

    ``partial_scores`` accumulates the range's weighted votes per image and
    category; ``eps_current`` / ``eps_previous`` are the range errors after
    the latest and the preceding exploitation iteration.
    """

    def __init__(self, num_images: int, num_categories: int):
        self.partial_scores = np.zeros((num_images, num_categories))
        self.range_start = 0
        self.current = 0
        self.steps = 0
        self.eps_current = float("nan")
        self.eps_previous = float("nan")

    def reset(self, iteration: int) -> None:
        self.partial_scores[:] = 0.0
        self.range_start = iteration
        self.current = iteration
        self.steps = 0
        self.eps_current = float("nan")
        self.eps_previous = float("nan")

    def record(self, iteration: int, votes: np.ndarray, labels: np.ndarray) -> float:
        """Add one exploitation iteration's weighted votes (N x L)."""
        self.partial_scores += votes
        self.current = iteration
        self.steps += 1
        self.eps_previous = self.eps_current
        self.eps_current = saturation_error(self.partial_scores, labels)
        return self.eps_current


def saturation_error(partial_scores: np.ndarray, labels) -> float:
    """Category-averaged unweighted miss-classification rate of the range votes.

    A vote sum of exactly zero counts as a -1 prediction.
    """
    y = labels.labels if isinstance(labels, LabelMatrix) else np.asarray(labels)
    s = np.asarray(partial_scores, dtype=np.float64)
    if s.shape != y.shape:
        raise DimensionMismatch(f"scores {s.shape} and labels {y.shape} disagree")
    pred = np.where(s > 0, 1, -1)
    per_category = (pred != y).sum(axis=0) / y.shape[0]
    return float(per_category.mean())


def should_explore(tracker: SaturationTracker) -> bool:
    if tracker.steps < 2:
        return False
    return tracker.eps_current >= tracker.eps_previous


@dataclass
class SharedPartsModel:
    ensembles: List[CategoryEnsemble]
    pool: SharedPartPool
    mode: str = "multiclass"
    detectors: Optional[np.ndarray] = None
    part_ids: Optional[List[str]] = None
    part_images: Optional[List[str]] = None
    part_boxes: Optional[list] = None
    initial_weights: Optional[np.ndarray] = None
    training_log: List[dict] = field(default_factory=list)
    config: Dict = field(default_factory=dict)

    @property
    def num_categories(self) -> int:
        return len(self.ensembles)

    @property
    def selected(self) -> List[int]:
        return list(self.pool.selected)

    def parts_used(self) -> frozenset:
        out = set()
        for ens in self.ensembles:
            out |= ens.parts_used
        return frozenset(out)

    def lift(self, pool_responses: np.ndarray) -> np.ndarray:
        """Place responses given in pool order into universe-indexed columns."""
        r = np.atleast_2d(np.asarray(pool_responses, dtype=np.float64))
        if r.shape[1] != len(self.pool.selected):
            raise DimensionMismatch(
                f"expected {len(self.pool.selected)} pool responses, got {r.shape[1]}"
            )
        width = max(self.pool.selected, default=-1) + 1
        full = np.full((r.shape[0], width), np.nan)
        if width:
            full[:, self.pool.selected] = r
        return full

    def pool_responses(self, images) -> np.ndarray:
        from .part_model import encode_matrix

        if not self.pool.selected:
            return np.zeros((len(images), 0))
        return encode_matrix(self.detectors, images)

    def scores(self, responses: np.ndarray, normalized: Optional[bool] = None) -> np.ndarray:
        """Per-category scores from universe-indexed responses."""
        if normalized is None:
            normalized = self.mode == "multiclass"
        if normalized:
            return normalized_scores(self.ensembles, responses)
        return raw_scores(self.ensembles, responses)

    def predict(self, responses: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(responses, normalized=True), axis=1)


def _used_gain(tree: DecisionTree) -> Dict[int, float]:
    gains: Dict[int, float] = {}
    for f, g in zip(tree.feature, tree.gain):
        if f >= 0:
            gains[int(f)] = gains.get(int(f), 0.0) + float(g)
    return gains


class _JointTrainer:
    def __init__(self, responses, labels: LabelMatrix, strategy: SamplerStrategy, budget: int,
                 iterations: int, depth: int, seed, initial_weights):
        self.r = np.asarray(responses, dtype=np.float64)
        if self.r.ndim != 2:
            raise DimensionMismatch(f"responses must be (N, M), got {self.r.shape}")
        if not np.all(np.isfinite(self.r)):
            raise ValueError("responses must be finite")
        if self.r.shape[0] != labels.num_images:
            raise DimensionMismatch(
                f"{self.r.shape[0]} response rows but {labels.num_images} labelled images"
            )
        if budget < 1:
            raise BudgetTooSmall(f"part budget must be >= 1, got {budget}")
        if iterations < 1:
            raise ValueError("iterations must be >= 1")
        self.labels = labels
        self.y = labels.labels.astype(np.float64)
        self.n, self.m = self.r.shape
        self.num_cat = labels.num_categories
        self.strategy = strategy
        self.depth = depth
        self.iterations = iterations
        self.rng = np.random.default_rng(seed)
        self.pool = SharedPartPool(budget=int(budget), universe_size=self.m)
        self._pool_columns = set()
        if initial_weights is None:
            w0 = np.tile(uniform_weights(self.n), (self.num_cat, 1))
        else:
            w0 = np.atleast_2d(np.asarray(initial_weights, dtype=np.float64))
            if w0.shape != (self.num_cat, self.n):
                raise DimensionMismatch(
                    f"initial weights must be ({self.num_cat}, {self.n}), got {w0.shape}"
                )
            w0 = np.stack([check_weights(row) / row.sum() for row in w0])
        self.initial = w0
        self.weights = w0.copy()
        self.ensembles = [CategoryEnsemble(l) for l in range(self.num_cat)]
        self.scores = np.zeros((self.n, self.num_cat))
        self.bound = np.ones(self.num_cat)
        self.tracker = SaturationTracker(self.n, self.num_cat)
        self.log: List[dict] = []
        self.explore_next = True
        self.trained_any = False

    # -- candidate handling -------------------------------------------------

    def _column_key(self, j: int) -> bytes:
        return self.r[:, j].tobytes()

    def _admit(self, parts) -> None:
        for p in sorted(parts):
            if p not in self.pool:
                self.pool.add([p])
                self._pool_columns.add(self._column_key(p))

    def _unselected(self) -> np.ndarray:
        # columns that exactly duplicate a selected column carry no new information
        return np.array(
            [j for j in range(self.m)
             if j not in self.pool and self._column_key(j) not in self._pool_columns],
            dtype=np.int64,
        )

    def _draw(self, population: np.ndarray) -> np.ndarray:
        k = min(self.strategy.candidates, population.size)
        if k == 0:
            return population[:0]
        return np.sort(self.rng.choice(population, size=k, replace=False))

    # -- per-category fitting -----------------------------------------------

    def _fit(self, l: int, allowed) -> tuple:
        return fit_tree(self.r, self.y[:, l], self.weights[l], allowed, self.depth)

    def _explore_pool(self) -> Optional[List[int]]:
        """Candidate columns for one exploration iteration, or None if exhausted."""
        fresh = self._unselected()
        if fresh.size == 0:
            return None
        return sorted(set(self.pool.selected) | set(self._draw(fresh).tolist()))

    def _iteration_explore(self, t: int) -> List[tuple]:
        allowed = self._explore_pool()
        if allowed is None:
            return self._iteration_exploit(t, reason_exhausted=True)
        fits = [self._fit(l, allowed) for l in range(self.num_cat)]
        return [(tree, eps, EXPLORE) for tree, eps in self._settle(fits)]

    def _settle(self, fits: List[tuple]) -> List[tuple]:
        """Admit the new parts of simultaneously fitted trees within the budget.

        Budget slots are handed out round-robin over categories, each category
        offering its new parts in order of decreasing split gain. Trees using
        parts that did not get a slot are refit on P plus the admitted parts.
        """
        ranked = []
        for tree, _ in fits:
            gains = _used_gain(tree)
            new = [p for p in tree.parts_used if p not in self.pool]
            ranked.append(sorted(new, key=lambda p: (-gains[p], p)))
        granted = set()
        room = self.pool.room
        for r in range(max((len(x) for x in ranked), default=0)):
            for parts in ranked:
                if r < len(parts) and parts[r] not in granted and len(granted) < room:
                    granted.add(parts[r])
        allowed = sorted(set(self.pool.selected) | granted)
        out = []
        for l, (tree, eps) in enumerate(fits):
            if not tree.parts_used <= set(allowed):
                tree, eps = self._fit(l, allowed)
            out.append((tree, eps))
        for tree, _ in out:
            self._admit(tree.parts_used)
        return out

    def _iteration_exploit(self, t: int, reason_exhausted=False) -> List[tuple]:
        allowed = self.pool.sorted()
        if allowed.size == 0:
            raise InfeasibleExploration("no parts selected and no candidates left to explore")
        return [(*self._fit(l, allowed), EXPLOIT) for l in range(self.num_cat)]

    def _iteration_tieu_viola(self, t: int) -> List[tuple]:
        out = []
        for l in range(self.num_cat):
            if self.pool.full:
                out.append((*self._fit(l, self.pool.sorted()), EXPLOIT))
                continue
            fresh = self._unselected()
            if fresh.size == 0:
                if not self.pool.selected:
                    raise InfeasibleExploration("universe exhausted before any part was selected")
                out.append((*self._fit(l, self.pool.sorted()), EXPLOIT))
                continue
            cands = self._draw(fresh)
            stump, _ = fit_tree(self.r, self.y[:, l], self.weights[l], cands, 1)
            if not stump.parts_used:
                # no candidate separates anything; fall back to the pool if possible
                allowed = self.pool.sorted() if self.pool.selected else cands[:1]
            else:
                allowed = [next(iter(stump.parts_used))]
            tree, eps = self._fit(l, allowed)
            self._admit(tree.parts_used)
            out.append((tree, eps, EXPLORE))
        return out

    def _iteration_uniform(self, t: int) -> List[tuple]:
        # candidates ignore the pool, so selected parts are only reused by chance
        everything = np.arange(self.m, dtype=np.int64)
        fits = [self._fit(l, self._draw(everything)) for l in range(self.num_cat)]
        return [(tree, eps, EXPLORE) for tree, eps in self._settle(fits)]

    # -- main loop ------------------------------------------------------------

    def _choose_phase(self) -> str:
        kind = self.strategy.kind
        if self.pool.full:
            return EXPLOIT
        if not self.pool.selected:
            return EXPLORE
        if kind == MAX_EXPLOIT:
            return EXPLORE if self.explore_next else EXPLOIT
        if kind == EPS_GREEDY:
            return EXPLORE if self.rng.random() < self.strategy.epsilon else EXPLOIT
        return EXPLORE

    def run(self) -> SharedPartsModel:
        kind = self.strategy.kind
        for t in range(self.iterations):
            phase = self._choose_phase()
            if phase == EXPLOIT:
                results = self._iteration_exploit(t)
            elif kind in (MAX_EXPLOIT, EPS_GREEDY):
                results = self._iteration_explore(t)
            elif kind == TIEU_VIOLA:
                results = self._iteration_tieu_viola(t)
            else:
                results = self._iteration_uniform(t)
            self._commit(t, results)
        return SharedPartsModel(
            ensembles=self.ensembles,
            pool=self.pool,
            mode=self.labels.mode,
            initial_weights=self.initial,
            training_log=self.log,
        )

    def _commit(self, t: int, results: List[tuple]) -> None:
        votes = np.zeros((self.n, self.num_cat))
        phases = []
        for l, (tree, eps, phase) in enumerate(results):
            alpha = learner_weight(eps)
            self.ensembles[l].append(WeakLearner(tree, alpha, eps, l, t, phase))
            pred = tree.predict(self.r)
            votes[:, l] = alpha * pred
            self.weights[l] = update_weights(self.weights[l], pred, self.y[:, l], alpha)
            ec = clamp_error(eps)
            self.bound[l] *= 2.0 * math.sqrt(ec * (1.0 - ec))
            phases.append(phase)
        self.scores += votes
        self.trained_any = True
        explored = any(p == EXPLORE for p in phases)
        if explored:
            self.tracker.reset(t)
            eps_uv = float("nan")
        else:
            eps_uv = self.tracker.record(t, votes, self.labels.labels)
        if self.strategy.kind == MAX_EXPLOIT:
            self.explore_next = (not explored) and should_explore(self.tracker)
        pred_all = np.where(self.scores > 0, 1.0, -1.0)
        for l, (tree, eps, phase) in enumerate(results):
            learner = self.ensembles[l].learners[-1]
            mistakes = pred_all[:, l] != self.y[:, l]
            self.log.append({
                "iteration": t,
                "phase": phase,
                "category": l,
                "eps": eps,
                "alpha": learner.alpha,
                "pool_size": len(self.pool),
                "eps_uv": eps_uv,
                "train_error": math.fsum(self.initial[l][mistakes]),
                "bound": self.bound[l],
            })


def train_shared(responses, labels: LabelMatrix, strategy: Optional[SamplerStrategy] = None,
                 budget: int = 1, iterations: int = 100, depth: int = DEFAULT_DEPTH, seed=0,
                 initial_weights=None) -> SharedPartsModel:
    """Train all one-vs-rest ensembles jointly with at most ``budget`` parts.

    ``responses`` is the N x |P_train| matrix of max-pooled detector responses
    of the training images. ``initial_weights`` (L x N) replaces the uniform
    starting distribution, as used by bootstrap fusion.
    """
    strategy = strategy or SamplerStrategy()
    trainer = _JointTrainer(responses, labels, strategy, budget, iterations, depth, seed, initial_weights)
    model = trainer.run()
    model.config = {
        "strategy": strategy.kind,
        "candidates": strategy.candidates,
        "epsilon": strategy.epsilon,
        "budget": int(budget),
        "iterations": int(iterations),
        "depth": int(depth),
        "seed": seed if isinstance(seed, (int, type(None))) else str(seed),
    }
    return model


def train_independent(responses, labels: LabelMatrix, budget: int, iterations: int,
                      depth: int = DEFAULT_DEPTH, seed=0, strategy: Optional[SamplerStrategy] = None,
                      initial_weights=None) -> SharedPartsModel:
    """Per-category part selection: each category gets ``budget // L`` parts of its own.

    Baseline for the benefit of sharing; categories never see each other's parts.
    """
    strategy = strategy or SamplerStrategy()
    num_cat = labels.num_categories
    per_cat = budget // num_cat
    if per_cat < 1:
        raise BudgetTooSmall(f"budget {budget} gives less than one part per category")
    seeds = np.random.SeedSequence(seed).spawn(num_cat)
    ensembles, log = [], []
    pool = SharedPartPool(budget=budget, universe_size=np.asarray(responses).shape[1])
    for l in range(num_cat):
        w0 = None if initial_weights is None else np.asarray(initial_weights)[l:l + 1]
        sub = train_shared(responses, labels.subset([l]), strategy, per_cat, iterations, depth,
                           np.random.default_rng(seeds[l]), w0)
        ens = sub.ensembles[0]
        ens.category = l
        ens.learners = [
            WeakLearner(x.tree, x.alpha, x.eps, l, x.iteration, x.phase) for x in ens.learners
        ]
        ensembles.append(ens)
        pool.add(sub.pool.selected)
        for row in sub.training_log:
            log.append({**row, "category": l})
    return SharedPartsModel(
        ensembles=ensembles,
        pool=pool,
        mode=labels.mode,
        training_log=log,
        config={"strategy": "independent", "budget": budget, "iterations": iterations, "depth": depth},
    )


def attach_parts(model: SharedPartsModel, universe) -> SharedPartsModel:
    """Copy detectors and source-part metadata of the selected parts from a PartUniverse."""
    sel = model.pool.selected
    model.detectors = universe.detectors[sel] if sel else np.zeros((0, universe.detectors.shape[1]))
    model.part_ids = [universe.part_ids[j] for j in sel]
    model.part_images = [universe.image_ids[j] for j in sel]
    model.part_boxes = [universe.boxes[j] for j in sel]
    return model


def write_training_log(log: Sequence[dict], path) -> None:
    import csv

    fields = ["iteration", "phase", "category", "eps", "alpha", "pool_size", "eps_uv", "train_error", "bound"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in log:
            writer.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in fields})
