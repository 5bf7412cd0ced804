"""Greedy tensor-train cross interpolation for maximizing black-box tensors.

A function f on {0,1}^d is viewed as a d-way tensor and approximated from a
small set of evaluated entries by the interpolation chain

    f(g) ~ F_1[g_1] A_1^{-1} F_2[g_2] A_2^{-1} ... F_d[g_d]

where F_k collects fibers over nested prefix sets (left of bond k) and
suffix sets (right of it) and A_k = f(prefixes x suffixes) is the cross
matrix at bond k.  Sweeps over bonds enlarge the sets one greedily chosen
pivot at a time; the pivot is the largest residual entry found by a rook
search on the 2r x 2r subtensor spanned by neighbouring sets.  Because
residuals vanish on already-interpolated rows and columns, the largest
residual both improves the approximation and steers evaluations toward the
maximal entry, which is tracked as a side effect.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

# crossing this many modes makes materializing the interpolant (2^d entries)
# more expensive than the search itself, so the final argmax harvest skips it
ARGMAX_ENUM_LIMIT = 20


@dataclass(frozen=True)
class CrossConfig:
    """Knobs of the greedy cross optimizer.

    r_max bounds every bond rank; n_max bounds objective evaluations;
    delta stops once the largest sweep residual drops below delta times
    the best value seen; rook_max_iters bounds the alternating row/column
    maximization; max_sweeps, when set, bounds the number of sweeps.
    Pivots whose residual is below pivot_rtol times the entry's own
    magnitude are floating-point noise and are not admitted.
    """

    r_max: int = 10
    n_max: int = 10_000
    delta: float = 0.0
    rook_max_iters: int = 3
    seed: int = 0
    max_sweeps: int | None = None
    alternate_directions: bool = True
    pivot_rtol: float = 1e-14

    def __post_init__(self):
        if self.r_max < 1:
            raise ValueError(f"r_max must be >= 1, got {self.r_max}")
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise ValueError(f"delta must be finite and >= 0, got {self.delta}")
        if self.rook_max_iters < 1:
            raise ValueError(f"rook_max_iters must be >= 1, got {self.rook_max_iters}")
        if self.max_sweeps is not None and self.max_sweeps < 1:
            raise ValueError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        if not (math.isfinite(self.pivot_rtol) and self.pivot_rtol >= 0):
            raise ValueError(f"pivot_rtol must be finite and >= 0, got {self.pivot_rtol}")


class FunctionCache:
    """Memoizing adapter giving a bare callable the counting/argmax surface
    the optimizer needs (n_evaluations, n_hits, argmax, max_value).

    Ties in argmax go to the lexicographically smallest index tuple.
    Not thread-safe; likelihood objectives bring their own locked cache.
    """

    def __init__(self, fn):
        self.fn = fn
        self.values: dict[tuple, float] = {}
        self.n_evaluations = 0
        self.n_hits = 0
        self._best: tuple | None = None
        self._best_value = -math.inf

    def __call__(self, bits) -> float:
        key = tuple(int(b) for b in bits)
        if key in self.values:
            self.n_hits += 1
            return self.values[key]
        value = float(self.fn(key))
        if math.isnan(value):
            raise ValueError(f"objective returned NaN at {key}")
        self.values[key] = value
        self.n_evaluations += 1
        if value > self._best_value or (value == self._best_value
                                        and (self._best is None or key < self._best)):
            self._best, self._best_value = key, value
        return value

    def argmax(self) -> tuple[tuple, float]:
        if self._best is None:
            raise ValueError("no evaluations recorded")
        return self._best, self._best_value

    @property
    def max_value(self) -> float:
        return self._best_value if self._best is not None else 0.0


def _as_adapter(objective):
    if all(hasattr(objective, a) for a in ("n_evaluations", "argmax", "max_value")):
        return objective
    return FunctionCache(objective)


class SubtensorView:
    """Lazy window onto one bond: entries come from the objective, the
    interpolant prediction is precomputed, residual = entry - prediction."""

    def __init__(self, shape, entry, approx, counter):
        self.shape = shape
        self._entry = entry
        self._approx = approx
        self._counter = counter

    @classmethod
    def from_matrix(cls, matrix, approx, counter=None):
        """Wrap a dense matrix (testing convenience); counts entry accesses
        itself when no counter is given."""
        m = np.asarray(matrix, dtype=float)
        state = {"n": 0}

        def entry(i, j):
            state["n"] += 1
            return float(m[i, j])

        return cls(m.shape, entry, np.asarray(approx, dtype=float),
                   counter if counter is not None else (lambda: state["n"]))

    def value(self, i: int, j: int) -> float:
        return self._entry(i, j)

    def residual(self, i: int, j: int) -> float:
        return self._entry(i, j) - float(self._approx[i, j])

    def scale(self, i: int, j: int) -> float:
        """Magnitude of entry (i, j): reference for deciding whether its
        residual is genuine or cancellation noise."""
        return max(abs(self._entry(i, j)), abs(float(self._approx[i, j])))

    @property
    def n_evaluations(self) -> int:
        return self._counter()


@dataclass(frozen=True)
class RookResult:
    pivot: tuple[int, int] | None
    max_error: float
    evals_used: int
    converged: bool


def matrix_cross_step(view: SubtensorView, row_set, col_set, rng,
                      rook_max_iters: int = 3,
                      eval_budget: int | None = None) -> RookResult:
    """One greedy pivot search on a matrix view.

    Seeds from the largest-residual entry among min(M, N) probes drawn
    uniformly without replacement from the grid of unused rows x unused
    columns, then alternates column/row argmax (a rook search) for at most
    rook_max_iters rounds.  Rows in row_set and columns in col_set are
    already interpolated (residual zero by construction) and excluded.
    Returns no pivot when nothing is free or every probed residual is
    exactly zero.  Ties break toward the smallest row-major linear index.
    The search stops early once view.n_evaluations reaches eval_budget.
    """
    n_rows, n_cols = view.shape
    free_rows = sorted(set(range(n_rows)) - set(row_set))
    free_cols = sorted(set(range(n_cols)) - set(col_set))
    ev0 = view.n_evaluations
    if not free_rows or not free_cols:
        return RookResult(None, 0.0, 0, False)

    def out_of_budget():
        return eval_budget is not None and view.n_evaluations >= eval_budget

    n_free = len(free_rows) * len(free_cols)
    n_probe = min(min(n_rows, n_cols), n_free)
    flat = rng.choice(n_free, size=n_probe, replace=False)
    probes = sorted((free_rows[f // len(free_cols)], free_cols[f % len(free_cols)])
                    for f in flat)
    best = 0.0
    seed = None
    for i, j in probes:
        if out_of_budget():
            break
        r = abs(view.residual(i, j))
        if r > best:
            best, seed = r, (i, j)
    if seed is None:
        return RookResult(None, 0.0, view.n_evaluations - ev0, False)

    i_star, j_star = seed
    converged = False
    for _ in range(rook_max_iters):
        if out_of_budget():
            break
        col = [abs(view.residual(i, j_star)) for i in free_rows]
        i_star = free_rows[int(np.argmax(col))]
        if out_of_budget():
            break
        row = [abs(view.residual(i_star, j)) for j in free_cols]
        j_new = free_cols[int(np.argmax(row))]
        if j_new == j_star:
            converged = True
            break
        j_star = j_new
    max_error = abs(view.residual(i_star, j_star))
    return RookResult((i_star, j_star), max_error, view.n_evaluations - ev0, converged)


class CrossInterpolant:
    """Nested-index cross interpolant of a function on {0,1}^d.

    State per bond k (1 <= k <= d-1): prefix set left[k] (tuples of length
    k), suffix set right[k] (tuples covering bits k..d-1), both of size
    r_k, with left[k] nested in left[k-1] x {0,1} and right[k] in
    {0,1} x right[k+1].  fiber[k] holds f on left[k-1] x {0,1} x right[k];
    the cross matrix A_k = f(left[k] x right[k]) is kept LU-factored.
    Initialized at rank one from a pivot index g0, which must have a
    nonzero objective value.
    """

    def __init__(self, objective, d: int, g0):
        self.objective = objective
        self.d = int(d)
        g0 = tuple(int(b) for b in g0)
        if len(g0) != self.d or any(b not in (0, 1) for b in g0):
            raise ValueError(f"g0 must be a 0/1 tuple of length {self.d}")
        if self.d < 1:
            raise ValueError("need at least one dimension")
        self.g0 = g0

        f0 = objective(g0)
        if not f0 > 0:
            raise ValueError(
                f"objective must be positive at the initial index, got {f0}")

        self.left = [[g0[:k]] for k in range(self.d)]
        self.right = [None] + [[g0[k:]] for k in range(1, self.d + 1)]
        self.left_pos = [{g0[:k]: 0} for k in range(self.d)]
        self.right_pos = [None] + [{g0[k:]: 0} for k in range(1, self.d + 1)]
        self.fibers = [None] * (self.d + 1)
        for k in range(1, self.d + 1):
            fib = np.empty((1, 2, 1))
            for b in (0, 1):
                fib[0, b, 0] = objective(g0[:k - 1] + (b,) + g0[k:])
            self.fibers[k] = fib
        self._lu = [None] * self.d
        for k in range(1, self.d):
            self._refresh_cross(k)
        self.pivot_log: list[tuple[int, tuple, tuple]] = []

    # -- bookkeeping -------------------------------------------------------

    def rank(self, k: int) -> int:
        """Bond rank r_k; r_0 = r_d = 1."""
        if k == 0 or k == self.d:
            return 1
        return len(self.left[k])

    def ranks(self) -> list[int]:
        return [self.rank(k) for k in range(self.d + 1)]

    def _cross_matrix(self, k: int) -> np.ndarray:
        a = np.empty((len(self.left[k]), len(self.right[k])))
        for i, q in enumerate(self.left[k]):
            a[i, :] = self.fibers[k][self.left_pos[k - 1][q[:-1]], q[-1], :]
        return a

    def _refresh_cross(self, k: int) -> None:
        self._lu[k] = lu_factor(self._cross_matrix(k))

    # -- evaluation --------------------------------------------------------

    def eval(self, bits) -> float:
        """Interpolated value; uses stored fibers only, no objective calls."""
        bits = tuple(int(b) for b in bits)
        if len(bits) != self.d:
            raise ValueError(f"index must have length {self.d}")
        v = self.fibers[1][0, bits[0], :]
        for k in range(2, self.d + 1):
            v = lu_solve(self._lu[k - 1], v, trans=1)
            v = v @ self.fibers[k][:, bits[k - 1], :]
        return float(v[0])

    # -- bond access -------------------------------------------------------

    def bond_view(self, k: int) -> tuple[SubtensorView, set, set]:
        """View of the objective on (left[k-1] x {0,1}) x ({0,1} x right[k+1])
        at bond k, with the current interpolant as prediction.

        Row i maps to prefix left[k-1][i // 2] + (i % 2,), column j to
        suffix (j // r_{k+1},) + right[k+1][j % r_{k+1}].
        """
        if not 1 <= k <= self.d - 1:
            raise ValueError(f"bond index {k} out of range 1..{self.d - 1}")
        r_next = len(self.right[k + 1])
        f_left = self.fibers[k].reshape(-1, len(self.right[k]))
        # near the double-range ceiling the prediction may overflow to inf;
        # that only marks the entry as a maximal residual, and evaluating it
        # triggers the clean overflow abort, so silence the warning
        with np.errstate(over="ignore"):
            growth = lu_solve(self._lu[k],
                              self.fibers[k + 1].reshape(len(self.left[k]), -1))
            approx = f_left @ growth

        def entry(i, j):
            prefix = self.left[k - 1][i // 2] + (i % 2,)
            suffix = (j // r_next,) + self.right[k + 1][j % r_next]
            return self.objective(prefix + suffix)

        view = SubtensorView(approx.shape, entry, approx,
                             lambda: self.objective.n_evaluations)
        row_set = {self.left_pos[k - 1][q[:-1]] * 2 + q[-1] for q in self.left[k]}
        col_set = {q[0] * r_next + self.right_pos[k + 1][q[1:]] for q in self.right[k]}
        return view, row_set, col_set

    def bond_index(self, k: int, i: int, j: int) -> tuple:
        """Full index addressed by entry (i, j) of bond k's view."""
        r_next = len(self.right[k + 1])
        return (self.left[k - 1][i // 2] + (i % 2,)
                + (j // r_next,) + self.right[k + 1][j % r_next])

    def admit(self, k: int, i: int, j: int) -> None:
        """Grow bond k by the pivot at view entry (i, j).

        Appends the pivot's prefix to left[k] and suffix to right[k],
        extends the two adjacent fibers and refactors A_k.  All new
        objective values are gathered before any state is mutated, so a
        failed evaluation leaves the interpolant unchanged.
        """
        r_next = len(self.right[k + 1])
        prefix = self.left[k - 1][i // 2] + (i % 2,)
        suffix = (j // r_next,) + self.right[k + 1][j % r_next]
        if prefix in self.left_pos[k] or suffix in self.right_pos[k]:
            raise ValueError(f"pivot ({i}, {j}) at bond {k} reuses an index")

        new_col = np.empty((len(self.left[k - 1]), 2, 1))
        for p, pre in enumerate(self.left[k - 1]):
            for b in (0, 1):
                new_col[p, b, 0] = self.objective(pre + (b,) + suffix)
        new_row = np.empty((1, 2, len(self.right[k + 1])))
        for b in (0, 1):
            for s, suf in enumerate(self.right[k + 1]):
                new_row[0, b, s] = self.objective(prefix + (b,) + suf)

        self.left_pos[k][prefix] = len(self.left[k])
        self.left[k].append(prefix)
        self.right_pos[k][suffix] = len(self.right[k])
        self.right[k].append(suffix)
        self.fibers[k] = np.concatenate([self.fibers[k], new_col], axis=2)
        self.fibers[k + 1] = np.concatenate([self.fibers[k + 1], new_row], axis=0)
        self._refresh_cross(k)
        self.pivot_log.append((k, prefix, suffix))

    def bond_saturated(self, k: int) -> bool:
        """No free rows or no free columns left at bond k."""
        r_k = self.rank(k)
        return r_k == 2 * self.rank(k - 1) or r_k == 2 * self.rank(k + 1)

    def tensor_train(self) -> "TensorTrain":
        """Explicit TT cores of the current interpolant:
        core_k = F_k A_k^{-1} for k < d and core_d = F_d."""
        cores = []
        for k in range(1, self.d):
            r_prev = self.fibers[k].shape[0]
            flat = self.fibers[k].reshape(-1, len(self.right[k]))
            solved = lu_solve(self._lu[k], flat.T, trans=1).T
            cores.append(solved.reshape(r_prev, 2, -1).copy())
        cores.append(self.fibers[self.d].copy())
        return TensorTrain(cores)


@dataclass
class TensorTrain:
    """Tensor in TT form: cores[k] has shape (r_k, 2, r_{k+1}), r_0 = r_d = 1."""

    cores: list[np.ndarray]

    def __post_init__(self):
        if not self.cores:
            raise ValueError("tensor train needs at least one core")
        self.cores = [np.asarray(c, dtype=float) for c in self.cores]
        for k, c in enumerate(self.cores):
            if c.ndim != 3 or c.shape[1] != 2:
                raise ValueError(f"core {k} must have shape (r, 2, r'), got {c.shape}")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for a, b in zip(self.cores, self.cores[1:]):
            if a.shape[2] != b.shape[0]:
                raise ValueError("core ranks do not chain")

    @property
    def d(self) -> int:
        return len(self.cores)

    def ranks(self) -> list[int]:
        return [1] + [c.shape[2] for c in self.cores]

    def eval(self, bits) -> float:
        bits = tuple(int(b) for b in bits)
        if len(bits) != self.d:
            raise ValueError(f"index must have length {self.d}")
        v = self.cores[0][:, bits[0], :]
        for k in range(1, self.d):
            v = v @ self.cores[k][:, bits[k], :]
        return float(v[0, 0])


def tensor_argmax(tt: TensorTrain, limit: int = 20) -> tuple[int, ...]:
    """Exact argmax index of the materialized tensor.

    Enumerates all 2^d entries by blockwise contraction (d is capped at
    `limit` to bound time and memory); ties go to the lexicographically
    smallest index."""
    if tt.d > limit:
        raise ValueError(f"{tt.d} modes exceed the enumeration limit {limit}")
    with np.errstate(over="ignore"):
        block = tt.cores[0].reshape(2, -1)
        for core in tt.cores[1:]:
            block = (block @ core.reshape(core.shape[0], -1))
            block = block.reshape(-1, core.shape[2])
    # row index has bit k at weight 2^(d-1-k), so numeric order of rows is
    # lexicographic order of indices and argmax's first-hit rule breaks ties
    idx = int(np.argmax(block[:, 0]))
    return tuple((idx >> (tt.d - 1 - k)) & 1 for k in range(tt.d))


def save_tt_cores(tt: TensorTrain, path) -> None:
    """Text format: a line with d, then per core a shape line `r 2 r'`
    followed by its entries row-major, 17 significant digits."""
    with open(path, "w") as fh:
        fh.write(f"{tt.d}\n")
        for core in tt.cores:
            r0, _, r1 = core.shape
            fh.write(f"{r0} 2 {r1}\n")
            for i in range(r0):
                for b in range(2):
                    fh.write(" ".join(f"{v:.17g}" for v in core[i, b, :]) + "\n")


def load_tt_cores(path) -> TensorTrain:
    with open(path) as fh:
        tokens = fh.read().split()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(tokens):
            raise ValueError("truncated tensor-train file")
        out = tokens[pos:pos + n]
        pos += n
        return out

    d = int(take(1)[0])
    if d < 1:
        raise ValueError(f"bad dimension count {d}")
    cores = []
    for _ in range(d):
        r0, two, r1 = (int(t) for t in take(3))
        if two != 2:
            raise ValueError("mode size must be 2")
        vals = np.array([float(t) for t in take(r0 * 2 * r1)])
        cores.append(vals.reshape(r0, 2, r1))
    if pos != len(tokens):
        raise ValueError("trailing data in tensor-train file")
    return TensorTrain(cores)


@dataclass(frozen=True)
class SweepReport:
    direction: str
    bond_errors: dict[int, float]
    max_error: float
    pivots_added: int
    bonds_skipped: int
    evals_used: int
    budget_exhausted: bool


def sweep(interp: CrossInterpolant, direction: str, rng, config: CrossConfig) -> SweepReport:
    """One pass over all bonds, admitting at most one pivot per bond.

    direction is "lr" (bond 1 to d-1) or "rl" (reverse).  Bonds already at
    r_max are skipped and excluded from the error report; searched bonds
    without a pivot record an error of zero.  Pivots whose residual falls
    below the noise floor of their own entry are searched but not
    admitted.  The pass stops early when the evaluation budget is
    exhausted.
    """
    if direction not in ("lr", "rl"):
        raise ValueError(f"direction must be 'lr' or 'rl', got {direction!r}")
    bonds = range(1, interp.d) if direction == "lr" else range(interp.d - 1, 0, -1)
    errors: dict[int, float] = {}
    added = 0
    skipped = 0
    ev0 = interp.objective.n_evaluations
    exhausted = False
    for k in bonds:
        if interp.objective.n_evaluations >= config.n_max:
            exhausted = True
            break
        if interp.rank(k) >= config.r_max:
            skipped += 1
            continue
        view, row_set, col_set = interp.bond_view(k)
        step = matrix_cross_step(view, row_set, col_set, rng,
                                 rook_max_iters=config.rook_max_iters,
                                 eval_budget=config.n_max)
        if step.pivot is None:
            errors[k] = 0.0
            continue
        errors[k] = step.max_error
        # residuals below the pivot's own floating-point scale are
        # cancellation noise; admitting them buys nothing and risks a
        # singular cross matrix
        if step.max_error <= config.pivot_rtol * view.scale(*step.pivot):
            continue
        interp.admit(k, *step.pivot)
        added += 1
    max_error = max(errors.values(), default=0.0)
    return SweepReport(direction=direction, bond_errors=errors, max_error=max_error,
                       pivots_added=added, bonds_skipped=skipped,
                       evals_used=interp.objective.n_evaluations - ev0,
                       budget_exhausted=exhausted)


@dataclass
class SweepRecord:
    sweep: int
    n_evaluations: int
    max_error: float
    g_max: tuple
    value: float
    cpu_seconds: float


@dataclass
class CrossResult:
    """Outcome of cross_optimize: the best index seen, diagnostics per
    sweep, and the final interpolant in TT form (None if the very first
    evaluations already failed)."""

    g_max: tuple
    value: float
    n_evaluations: int
    termination: str
    history: list[SweepRecord]
    ranks: list[int]
    tensor: TensorTrain | None


def cross_optimize(objective, d: int, g0, config: CrossConfig) -> CrossResult:
    """Maximize a nonnegative function on {0,1}^d by greedy cross sweeps.

    `objective` is either a bare callable on index tuples (it will be
    wrapped in a FunctionCache) or an adapter exposing n_evaluations,
    argmax() and max_value, such as a TemperedObjective.  Sweeps alternate
    direction and stop on the first of: residual below delta * best value
    ("converged"), every bond capped or saturated ("rank_saturated"), a
    sweep admitting no pivot ("stalled"), the evaluation budget ("budget"),
    the sweep cap ("max_sweeps"), or a tempered-likelihood overflow
    ("overflow", best-so-far still reported).
    """
    from .likelihood import TemperOverflowError

    obj = _as_adapter(objective)
    rng = np.random.default_rng(config.seed)
    t0 = time.perf_counter()
    history: list[SweepRecord] = []

    def result(termination, interp):
        tensor = interp.tensor_train() if interp is not None else None
        ranks = interp.ranks() if interp is not None else []
        if (tensor is not None and termination != "overflow"
                and tensor.d <= ARGMAX_ENUM_LIMIT
                and obj.n_evaluations < config.n_max):
            # the sweeps only ever sample crosses, so an exactly interpolated
            # objective can stall with its maximizer never evaluated; when the
            # index space is enumerable, claim the interpolant's argmax too
            try:
                obj(tensor_argmax(tensor))
            except TemperOverflowError as err:
                return CrossResult(g_max=tuple(int(c) for c in err.g),
                                   value=math.inf,
                                   n_evaluations=obj.n_evaluations,
                                   termination="overflow", history=history,
                                   ranks=ranks, tensor=tensor)
        try:
            g_best, value = obj.argmax()
        except ValueError:
            g_best, value = tuple(int(b) for b in g0), math.nan
        except TemperOverflowError as err:
            # the best network itself overflows the tempered scale; still
            # report it, with an inf stand-in for the unrepresentable value
            g_best, value = tuple(int(c) for c in err.g), math.inf
        return CrossResult(g_max=g_best, value=value, n_evaluations=obj.n_evaluations,
                           termination=termination, history=history, ranks=ranks,
                           tensor=tensor)

    try:
        interp = CrossInterpolant(obj, d, g0)
    except TemperOverflowError:
        return result("overflow", None)

    sweeps_done = 0
    while True:
        if obj.n_evaluations >= config.n_max:
            return result("budget", interp)
        if config.max_sweeps is not None and sweeps_done >= config.max_sweeps:
            return result("max_sweeps", interp)
        direction = "rl" if (config.alternate_directions and sweeps_done % 2) else "lr"
        try:
            report = sweep(interp, direction, rng, config)
        except TemperOverflowError:
            return result("overflow", interp)
        sweeps_done += 1
        g_best, value = obj.argmax()
        history.append(SweepRecord(sweep=sweeps_done, n_evaluations=obj.n_evaluations,
                                   max_error=report.max_error, g_max=g_best,
                                   value=value,
                                   cpu_seconds=time.perf_counter() - t0))
        if report.budget_exhausted or obj.n_evaluations >= config.n_max:
            return result("budget", interp)
        if not report.bond_errors:
            return result("rank_saturated", interp)
        if report.max_error <= config.delta * value:
            return result("converged", interp)
        if all(interp.rank(k) >= config.r_max or interp.bond_saturated(k)
               for k in range(1, d)):
            return result("rank_saturated", interp)
        if report.pivots_added == 0:
            return result("stalled", interp)
