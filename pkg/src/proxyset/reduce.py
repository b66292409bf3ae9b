"""Subset-selection algorithms that shrink a set of m local surrogate
models to k proxies.

Coverage of a subset S at tolerance eps is the fraction of items whose
best model in S has loss <= eps.  The mean-min loss of S is the average
over items of the lowest loss any model in S attains.  Coverage gain is
submodular and mean-min loss is supermodular, which is what makes the
greedy algorithms here well-behaved.

All tie-breaks go to the lowest model index, so every algorithm is
deterministic given its seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, LocalModelSet, ProxySet, ReductionConfig, loss_array

DEFAULT_MAX_EXACT_MODELS = 120
DEFAULT_MAX_EXACT_K = 6

KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 100


class ExactBudgetError(RuntimeError):
    """Raised when an exact solve would exceed the enumeration budget."""


DEFAULT_MAX_EXACT_NODES = 3_000_000


class _NodeBudget:
    """Counts branch-and-bound nodes and aborts runaway searches."""

    def __init__(self, limit: int):
        self.limit = limit
        self.used = 0

    def tick(self):
        self.used += 1
        if self.used > self.limit:
            raise ExactBudgetError(
                f"exact search exceeded {self.limit} nodes; the instance "
                "resists pruning, use the greedy variant instead"
            )


@dataclass(frozen=True)
class TraceStep:
    """One greedy iteration: what was added and what it bought."""

    chosen: int
    coverage_gain: float | None
    loss_decrease: float | None
    coverage: float | None
    objective: float


@dataclass
class ReductionTrace:
    steps: list[TraceStep] = field(default_factory=list)

    def add(self, **kwargs):
        self.steps.append(TraceStep(**kwargs))

    def __len__(self):
        return len(self.steps)

    def objectives(self) -> list[float]:
        return [s.objective for s in self.steps]

    def coverages(self) -> list[float | None]:
        return [s.coverage for s in self.steps]


def _check_k(k: int, m: int):
    if not 1 <= k <= m:
        raise ValueError(f"k must lie in [1, {m}], got {k}")


def _check_epsilon(epsilon: float):
    if not epsilon > 0.0:
        raise ValueError("epsilon must be > 0")


def coverage_of(L: np.ndarray, S, epsilon: float) -> float:
    """Fraction of items with at least one model in S at loss <= epsilon."""
    rows = np.asarray(tuple(S), dtype=int)
    return float((L[rows].min(axis=0) <= epsilon).mean())


def mean_min_loss(L: np.ndarray, S) -> float:
    rows = np.asarray(tuple(S), dtype=int)
    return float(L[rows].min(axis=0).mean())


def greedy_max_coverage(loss, epsilon: float, k: int) -> tuple[ProxySet, ReductionTrace]:
    """Iteratively add the model with the largest marginal coverage gain.

    Runs for exactly k iterations; once every remaining gain is zero it
    keeps adding the lowest-index remaining model so that |S| = k.  On the
    training matrix the result is guaranteed at least
    ``1 - ((k-1)/k)**k`` times the optimal coverage.
    """
    L = loss_array(loss)
    m, n = L.shape
    _check_k(k, m)
    _check_epsilon(epsilon)

    covers = L <= epsilon
    covered = np.zeros(n, dtype=bool)
    colmin = np.full(n, np.inf)
    chosen: list[int] = []
    taken = np.zeros(m, dtype=bool)
    trace = ReductionTrace()
    prev_obj = float(L.max(axis=0).mean())  # finite empty-set baseline

    for _ in range(k):
        gains = (covers & ~covered).sum(axis=1)
        gains[taken] = -1
        i = int(gains.argmax())  # first max: lowest index on ties
        chosen.append(i)
        taken[i] = True
        covered |= covers[i]
        colmin = np.minimum(colmin, L[i])
        cov = float(covered.mean())
        obj = float(colmin.mean())
        trace.add(
            chosen=i,
            coverage_gain=float(gains[i]) / n,
            loss_decrease=prev_obj - obj,
            coverage=cov,
            objective=cov,
        )
        prev_obj = obj

    config = ReductionConfig(method="greedy-max-coverage", k=k, epsilon=float(epsilon))
    proxies = ProxySet(tuple(chosen), config, achieved_coverage=float(covered.mean()))
    return proxies, trace


def greedy_min_loss(loss, k: int) -> tuple[ProxySet, ReductionTrace]:
    """Iteratively add the model with the largest mean-min loss decrease.

    The first pick minimises the plain row mean; marginal decreases are
    measured against a per-column maximum baseline so they stay finite.
    """
    L = loss_array(loss)
    m, n = L.shape
    _check_k(k, m)

    colmin = L.max(axis=0)  # empty-set baseline
    prev_obj = float(colmin.mean())
    chosen: list[int] = []
    taken = np.zeros(m, dtype=bool)
    trace = ReductionTrace()

    for _ in range(k):
        cand = np.minimum(colmin, L).mean(axis=1)
        cand[taken] = np.inf
        i = int(cand.argmin())  # first min: lowest index on ties
        chosen.append(i)
        taken[i] = True
        colmin = np.minimum(colmin, L[i])
        obj = float(cand[i])
        trace.add(
            chosen=i,
            coverage_gain=None,
            loss_decrease=prev_obj - obj,
            coverage=None,
            objective=obj,
        )
        prev_obj = obj

    config = ReductionConfig(method="greedy-min-loss", k=k)
    return ProxySet(tuple(chosen), config), trace


def greedy_const_min_loss(
    loss, epsilon: float, min_coverage: float, k: int
) -> tuple[ProxySet, ReductionTrace]:
    """Loss-minimising selection under a soft coverage constraint.

    The first pick minimises the plain row mean, exactly like the
    unconstrained variant.  Then, while coverage is below
    ``min_coverage``, candidates are scored by the coverage-normalised
    loss they would leave behind, f(S+i) / C(S+i); candidates that do not
    grow coverage rank below all that do, among themselves by their loss
    decrease.  Once the constraint is met, scoring falls back to the
    plain loss decrease.  Always returns k models; ``constraint_met``
    records whether the target coverage was reached (soft constraint).
    """
    L = loss_array(loss)
    m, n = L.shape
    _check_k(k, m)
    _check_epsilon(epsilon)
    if not (0.0 < min_coverage <= 1.0):
        raise ValueError("min_coverage must lie in (0, 1]")

    covers = L <= epsilon
    covered = np.zeros(n, dtype=bool)
    colmin = L.max(axis=0)
    prev_obj = float(colmin.mean())
    chosen: list[int] = []
    taken = np.zeros(m, dtype=bool)
    trace = ReductionTrace()

    for step in range(k):
        cand_obj = np.minimum(colmin, L).mean(axis=1)
        if step > 0 and float(covered.mean()) < min_coverage:
            new_cov = (covers | covered).mean(axis=1)
            grows = (new_cov > covered.mean()) & ~taken
            if grows.any():
                # Coverage-normalised loss among coverage-growing
                # candidates; everyone else is demoted behind them.
                score = np.where(grows, cand_obj / np.where(grows, new_cov, 1.0), np.inf)
            else:
                score = np.where(taken, np.inf, cand_obj)
        else:
            score = np.where(taken, np.inf, cand_obj)
        i = int(score.argmin())
        chosen.append(i)
        taken[i] = True
        gain = float((covers[i] & ~covered).mean())
        covered |= covers[i]
        colmin = np.minimum(colmin, L[i])
        obj = float(cand_obj[i])
        trace.add(
            chosen=i,
            coverage_gain=gain,
            loss_decrease=prev_obj - obj,
            coverage=float(covered.mean()),
            objective=obj,
        )
        prev_obj = obj

    achieved = float(covered.mean())
    config = ReductionConfig(
        method="const-min-loss", k=k, epsilon=float(epsilon), min_coverage=float(min_coverage)
    )
    proxies = ProxySet(
        tuple(chosen), config, achieved_coverage=achieved, constraint_met=achieved >= min_coverage
    )
    return proxies, trace


def _exact_budget(m: int, k: int, max_models: int, max_k: int):
    if m > max_models or k > max_k:
        raise ExactBudgetError(
            f"exact solve over C({m}, {k}) subsets exceeds the enumeration budget "
            f"(m <= {max_models}, k <= {max_k}); use the greedy variant instead"
        )


def _cover_suffix(covers: np.ndarray) -> np.ndarray:
    m, n = covers.shape
    suffix = np.zeros((m + 1, n), dtype=bool)
    for i in range(m - 1, -1, -1):
        suffix[i] = suffix[i + 1] | covers[i]
    return suffix


def _min_suffix(L: np.ndarray) -> np.ndarray:
    m, n = L.shape
    suffix = np.full((m + 1, n), np.inf)
    for i in range(m - 1, -1, -1):
        suffix[i] = np.minimum(suffix[i + 1], L[i])
    return suffix


def _chain_value(L: np.ndarray, S) -> float:
    # Same minimum-chain + row-mean route as the searches, so seed values
    # are bit-identical to search leaf values for the same subset.
    colmin = np.full(L.shape[1], np.inf)
    for i in S:
        colmin = np.minimum(colmin, L[i])
    return float(colmin[None, :].mean(axis=1)[0])


def exact_max_coverage(
    loss,
    epsilon: float,
    k: int,
    max_models: int = DEFAULT_MAX_EXACT_MODELS,
    max_k: int = DEFAULT_MAX_EXACT_K,
    max_nodes: int = DEFAULT_MAX_EXACT_NODES,
) -> ProxySet:
    """Provably coverage-maximal subset of cardinality k.

    Two branch-and-bound passes over subset prefixes: a value search with
    promising rows first (seeded with the greedy solution), then a
    corridor search in ascending index order that returns the
    lexicographically smallest subset attaining the optimum.  Children are
    bounded by the coverage of everything still selectable and by the sum
    of the r largest single-row gains, whichever is tighter.  Runtime
    depends on instance structure; ``max_nodes`` aborts searches the
    bounds cannot tame.
    """
    L = loss_array(loss)
    m, n = L.shape
    _check_k(k, m)
    _check_epsilon(epsilon)
    _exact_budget(m, k, max_models, max_k)

    covers = L <= epsilon
    greedy, _ = greedy_max_coverage(L, epsilon, k)
    best = int(round(greedy.achieved_coverage * n))
    budget = _NodeBudget(max_nodes)

    order = np.argsort(-covers.sum(axis=1), kind="stable")
    cs = covers[order]
    suffix = _cover_suffix(cs)

    def search(start: int, picks: int, covered: np.ndarray):
        nonlocal best
        budget.tick()
        slots = k - picks
        stop = m - slots + 1
        cand = cs[start:stop]
        uncov = ~covered
        counts = int(covered.sum()) + (cand & uncov).sum(axis=1)
        if slots == 1:
            top = int(counts.max())
            if top > best:
                best = top
            return
        gains = (cs[start:] & uncov).sum(axis=1)
        top_cap = int(np.sort(gains)[-(slots - 1):].sum()) if slots > 1 else 0
        allrem = (covered | suffix[start:stop]).sum(axis=1)
        ub = np.minimum(allrem, counts + top_cap)
        # best-gain children first so the bar tightens early
        for j in np.argsort(-counts, kind="stable"):
            if ub[j] <= best:
                continue
            search(start + int(j) + 1, picks + 1, covered | cand[j])

    search(0, 0, np.zeros(n, dtype=bool))

    suffix0 = _cover_suffix(covers)
    found: list[tuple[int, ...]] = []

    def corridor(start: int, chosen: list[int], covered: np.ndarray):
        if found:
            return
        budget.tick()
        slots = k - len(chosen)
        stop = m - slots + 1
        cand = covers[start:stop]
        uncov = ~covered
        counts = int(covered.sum()) + (cand & uncov).sum(axis=1)
        if slots == 1:
            hits = np.flatnonzero(counts == best)
            if hits.size:
                found.append(tuple(chosen + [start + int(hits[0])]))
            return
        gains = (covers[start:] & uncov).sum(axis=1)
        top_cap = int(np.sort(gains)[-(slots - 1):].sum())
        allrem = (covered | suffix0[start:stop]).sum(axis=1)
        ub = np.minimum(allrem, counts + top_cap)
        for j in range(len(cand)):
            if ub[j] < best:
                continue
            chosen.append(start + j)
            corridor(start + j + 1, chosen, covered | cand[j])
            chosen.pop()
            if found:
                return

    corridor(0, [], np.zeros(n, dtype=bool))
    assert found, "corridor search must recover the optimal subset"
    config = ReductionConfig(method="exact-max-coverage", k=k, epsilon=float(epsilon))
    return ProxySet(found[0], config, achieved_coverage=best / n)


def exact_min_loss(
    loss,
    k: int,
    max_models: int = DEFAULT_MAX_EXACT_MODELS,
    max_k: int = DEFAULT_MAX_EXACT_K,
    max_nodes: int = DEFAULT_MAX_EXACT_NODES,
) -> ProxySet:
    """Globally mean-min-loss-optimal subset of cardinality k.

    Same two-pass scheme as :func:`exact_max_coverage`; children are
    bounded by the objective after adding every remaining model and by
    the sum of the r largest single-row improvements.  Column minima are
    order-exact, so objective values agree bit-for-bit across passes.
    """
    L = loss_array(loss)
    m, n = L.shape
    _check_k(k, m)
    _exact_budget(m, k, max_models, max_k)

    greedy, _ = greedy_min_loss(L, k)
    best = _chain_value(L, greedy.S)
    budget = _NodeBudget(max_nodes)

    order = np.argsort(L.mean(axis=1), kind="stable")
    Ls = L[order]
    suffix = _min_suffix(Ls)

    def search(start: int, picks: int, colmin: np.ndarray):
        nonlocal best
        budget.tick()
        slots = k - picks
        stop = m - slots + 1
        cand_min = np.minimum(colmin, Ls[start:stop])
        means = cand_min.mean(axis=1)
        if slots == 1:
            low = float(means.min())
            if low < best:
                best = low
            return
        imps = np.maximum(0.0, colmin - Ls[start:]).mean(axis=1)
        top_cap = float(np.sort(imps)[-(slots - 1):].sum())
        allrem = np.minimum(colmin, suffix[start:stop]).mean(axis=1)
        # The improvement cap is only valid up to rounding; pad it well
        # beyond any accumulated float error so no true optimum is pruned.
        slack = 1e-11 * (1.0 + np.abs(means))
        lb = np.maximum(allrem, means - top_cap - slack)
        for j in np.argsort(means, kind="stable"):
            if lb[j] >= best:
                continue
            search(start + int(j) + 1, picks + 1, cand_min[j])

    search(0, 0, np.full(n, np.inf))

    suffix0 = _min_suffix(L)
    found: list[tuple[int, ...]] = []

    def corridor(start: int, chosen: list[int], colmin: np.ndarray):
        if found:
            return
        budget.tick()
        slots = k - len(chosen)
        stop = m - slots + 1
        cand_min = np.minimum(colmin, L[start:stop])
        means = cand_min.mean(axis=1)
        if slots == 1:
            hits = np.flatnonzero(means == best)
            if hits.size:
                found.append(tuple(chosen + [start + int(hits[0])]))
            return
        # Only the add-all-remaining bound is exact in floats (minimum is
        # exact and the mean is monotone), so the corridor relies on it
        # alone and can never prune the subset attaining ``best``.
        allrem = np.minimum(colmin, suffix0[start:stop]).mean(axis=1)
        for j in range(len(means)):
            if allrem[j] > best:
                continue
            chosen.append(start + j)
            corridor(start + j + 1, chosen, cand_min[j])
            chosen.pop()
            if found:
                return

    corridor(0, [], np.full(n, np.inf))
    assert found, "corridor search must recover the optimal subset"
    config = ReductionConfig(method="exact-min-loss", k=k)
    return ProxySet(found[0], config)


def _normalise_rows(V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0  # zero vectors stay zero: distance 1 to everything
    return V / norms


def _distances_to(V: np.ndarray, centroids: np.ndarray, metric: str) -> np.ndarray:
    if metric == "cosine":
        return 1.0 - V @ centroids.T
    diff = V[:, None, :] - centroids[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def _kmeans_once(V: np.ndarray, k: int, rng: np.random.Generator, metric: str):
    n = V.shape[0]
    # k-means++ seeding, weighted by squared metric distance.
    centers = np.empty((k, V.shape[1]))
    first = int(rng.integers(n))
    centers[0] = V[first]
    d = _distances_to(V, centers[:1], metric).min(axis=1)
    for c in range(1, k):
        w = d**2
        total = w.sum()
        if total <= 0.0:
            # All points coincide with a centre; take the lowest-index one
            # that is not already an exact copy of a chosen centre.
            idx = int(np.argmax(d == d.min()))
        else:
            idx = int(rng.choice(n, p=w / total))
        centers[c] = V[idx]
        d = np.minimum(d, _distances_to(V, centers[c : c + 1], metric)[:, 0])

    labels = np.full(n, -1, dtype=int)
    for _ in range(KMEANS_MAX_ITER):
        dist = _distances_to(V, centers, metric)
        new_labels = dist.argmin(axis=1)
        # Deterministic empty-cluster rule: reseed from the farthest point.
        for c in range(k):
            if not (new_labels == c).any():
                far = int(dist[np.arange(n), new_labels].argmax())
                centers[c] = V[far]
                dist = _distances_to(V, centers, metric)
                new_labels = dist.argmin(axis=1)
        if (new_labels == labels).all():
            break
        labels = new_labels
        for c in range(k):
            members = V[labels == c]
            if members.size:
                mean = members.mean(axis=0)
                if metric == "cosine":
                    norm = np.linalg.norm(mean)
                    if norm > 0.0:
                        mean = mean / norm
                centers[c] = mean
    dist = _distances_to(V, centers, metric)
    inertia = float((dist[np.arange(n), labels] ** 2).sum())
    return labels, centers, inertia


def _kmeans(V: np.ndarray, k: int, seed: int, metric: str):
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(KMEANS_RESTARTS):
        labels, centers, inertia = _kmeans_once(V, k, rng, metric)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return best[0], best[1]


def cluster_reduce(
    basis: str,
    k: int,
    seed: int,
    *,
    models: LocalModelSet | None = None,
    data: Dataset | None = None,
    loss=None,
) -> ProxySet:
    """Pick one representative model per k-means cluster.

    ``basis`` selects what gets clustered: ``"x"`` the anchor items'
    feature vectors (Euclidean; requires ``models.origin`` and ``data``),
    ``"b"`` the model coefficient rows (cosine), ``"l"`` the loss-matrix
    rows (Euclidean).  Each cluster contributes the model whose basis
    vector is closest to the centroid; duplicates collapse, so the result
    may hold fewer than k models.
    """
    if basis == "x":
        if models is None or data is None:
            raise ValueError("basis 'x' requires models and data")
        if models.origin is None:
            raise ValueError("basis 'x' requires anchor indices linking items to models")
        V = data.X[models.origin]
        metric = "euclidean"
        method = "cluster-x"
    elif basis == "b":
        if models is None:
            raise ValueError("basis 'b' requires models")
        V = models.B
        metric = "cosine"
        method = "cluster-b"
    elif basis == "l":
        if loss is None:
            raise ValueError("basis 'l' requires a loss matrix")
        V = loss_array(loss)
        metric = "euclidean"
        method = "cluster-l"
    else:
        raise ValueError(f"unknown clustering basis {basis!r}")

    V = np.asarray(V, dtype=float)
    m = V.shape[0]
    _check_k(k, m)
    if metric == "cosine":
        V = _normalise_rows(V)

    labels, centers = _kmeans(V, k, seed, metric)
    dist = _distances_to(V, centers, metric)
    chosen: list[int] = []
    for c in range(k):
        i = int(dist[:, c].argmin())  # scan over all models; lowest index on ties
        if i not in chosen:
            chosen.append(i)
    chosen.sort()

    config = ReductionConfig(method=method, k=k, seed=seed)
    return ProxySet(tuple(chosen), config)


def random_baseline(m: int, k: int, seed: int) -> ProxySet:
    """Uniform sample of k distinct model indices."""
    _check_k(k, m)
    rng = np.random.default_rng(seed)
    S = np.sort(rng.choice(m, size=k, replace=False))
    config = ReductionConfig(method="random", k=k, seed=seed)
    return ProxySet(tuple(int(i) for i in S), config)


def run_reduction(
    loss,
    config: ReductionConfig,
    *,
    models: LocalModelSet | None = None,
    data: Dataset | None = None,
) -> tuple[ProxySet, ReductionTrace | None]:
    """Dispatch a ReductionConfig to the matching algorithm.

    Returns the proxy set (re-tagged with the caller's config so seeds and
    distance settings survive serialisation) and the greedy trace when the
    method produces one.
    """
    L = loss_array(loss)
    m = L.shape[0]
    _check_k(config.k, m)

    needs_epsilon = config.method in ("greedy-max-coverage", "exact-max-coverage", "const-min-loss")
    if needs_epsilon and config.epsilon is None:
        raise ValueError(f"method {config.method!r} requires epsilon")
    if config.method == "const-min-loss" and config.min_coverage is None:
        raise ValueError("method 'const-min-loss' requires min_coverage")

    trace: ReductionTrace | None = None
    if config.method == "greedy-max-coverage":
        proxies, trace = greedy_max_coverage(L, config.epsilon, config.k)
    elif config.method == "exact-max-coverage":
        proxies = exact_max_coverage(L, config.epsilon, config.k)
    elif config.method == "greedy-min-loss":
        proxies, trace = greedy_min_loss(L, config.k)
    elif config.method == "exact-min-loss":
        proxies = exact_min_loss(L, config.k)
    elif config.method == "const-min-loss":
        proxies, trace = greedy_const_min_loss(L, config.epsilon, config.min_coverage, config.k)
    elif config.method in ("cluster-x", "cluster-b", "cluster-l"):
        proxies = cluster_reduce(
            config.method.split("-")[1], config.k, config.seed, models=models, data=data, loss=L
        )
    elif config.method == "random":
        proxies = random_baseline(m, config.k, config.seed)
    else:  # pragma: no cover - ReductionConfig already validates
        raise ValueError(f"unknown reduction method {config.method!r}")

    achieved = proxies.achieved_coverage
    if config.epsilon is not None:
        achieved = coverage_of(L, proxies.S, config.epsilon)
    proxies = ProxySet(
        proxies.S,
        config,
        achieved_coverage=achieved,
        constraint_met=proxies.constraint_met,
    )
    return proxies, trace
