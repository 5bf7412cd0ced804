"""Networks, epsilon-SIS dynamics and transition probabilities.

A contact network on N nodes is handled as a binary vector of length
d = N(N-1)/2 listing the upper triangle of the adjacency matrix column by
column: (g_12, g_13, g_23, g_14, g_24, g_34, ...).  Epidemic states live on
{0,1}^N and are enumerated by the linear index sum_n x_n 2^(n-1), so node 1
sits in the least significant bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import expm


class CapacityError(RuntimeError):
    """Requested operation exceeds the configured size limit."""


def pair_order(n_nodes: int) -> list[tuple[int, int]]:
    """Return the (m, n) node pairs, 0-based, in adjacency-vector order."""
    if n_nodes < 1:
        raise ValueError(f"need at least one node, got {n_nodes}")
    return [(m, n) for n in range(1, n_nodes) for m in range(n)]


def nodes_from_pair_count(d: int) -> int:
    """Invert d = N(N-1)/2, raising if d is not of that form."""
    n = (1 + math.isqrt(1 + 8 * d)) // 2
    if n * (n - 1) // 2 != d:
        raise ValueError(f"{d} is not N(N-1)/2 for any integer N")
    return n


@dataclass(frozen=True)
class AdjacencyVector:
    """Upper-triangle bit vector of a simple undirected graph.

    Parameters
    ----------
    bits : tuple of int
        Edge indicators in column-wise upper-triangle order, length
        N(N-1)/2.
    """

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError("adjacency bits must be 0 or 1")
        nodes_from_pair_count(len(bits))  # raises on impossible length
        object.__setattr__(self, "bits", bits)

    @property
    def n_nodes(self) -> int:
        return nodes_from_pair_count(len(self.bits))

    @property
    def n_pairs(self) -> int:
        return len(self.bits)

    @property
    def bitstring(self) -> str:
        return "".join(str(b) for b in self.bits)

    @classmethod
    def from_bitstring(cls, s: str) -> "AdjacencyVector":
        s = s.strip()
        if not s or set(s) - {"0", "1"}:
            raise ValueError(f"not a 01-string: {s!r}")
        return cls(tuple(int(c) for c in s))

    @classmethod
    def empty(cls, n_nodes: int) -> "AdjacencyVector":
        return cls((0,) * (n_nodes * (n_nodes - 1) // 2))

    @classmethod
    def from_edges(cls, n_nodes: int, edges) -> "AdjacencyVector":
        """Build from an iterable of 0-based (m, n) pairs, any order."""
        pos = {p: i for i, p in enumerate(pair_order(n_nodes))}
        bits = [0] * len(pos)
        for m, n in edges:
            m, n = int(m), int(n)
            if m > n:
                m, n = n, m
            if m == n or not (0 <= m < n < n_nodes):
                raise ValueError(f"invalid edge ({m}, {n}) for {n_nodes} nodes")
            bits[pos[(m, n)]] = 1
        return cls(tuple(bits))

    def edges(self) -> list[tuple[int, int]]:
        return [p for p, b in zip(pair_order(self.n_nodes), self.bits) if b]

    def flip(self, k: int) -> "AdjacencyVector":
        bits = list(self.bits)
        bits[k] ^= 1
        return AdjacencyVector(tuple(bits))


def chain_network(n_nodes: int) -> AdjacencyVector:
    """Linear chain 1-2-3-...-N."""
    return AdjacencyVector.from_edges(n_nodes, [(i, i + 1) for i in range(n_nodes - 1)])


def pack_adjacency(matrix) -> AdjacencyVector:
    """Convert a symmetric binary adjacency matrix to an AdjacencyVector."""
    a = np.asarray(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency matrix must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency matrix must be symmetric")
    if np.any(np.diag(a) != 0):
        raise ValueError("adjacency matrix must have zero diagonal")
    if not np.isin(a, (0, 1)).all():
        raise ValueError("adjacency matrix must be binary")
    n = a.shape[0]
    return AdjacencyVector(tuple(int(a[m, n_]) for m, n_ in pair_order(n)))


def unpack_adjacency(g: AdjacencyVector) -> np.ndarray:
    """Expand an AdjacencyVector into a full symmetric 0/1 matrix."""
    n = g.n_nodes
    a = np.zeros((n, n), dtype=np.int64)
    for (m, n_), b in zip(pair_order(n), g.bits):
        a[m, n_] = a[n_, m] = b
    return a


def network_error(g: AdjacencyVector, g_star: AdjacencyVector) -> int:
    """Hamming distance between two adjacency vectors of equal length."""
    if len(g.bits) != len(g_star.bits):
        raise ValueError("adjacency vectors have different lengths")
    return sum(a != b for a, b in zip(g.bits, g_star.bits))


@dataclass(frozen=True)
class EpidemicParams:
    """Rates of the epsilon-SIS model: infection beta per infected neighbour,
    recovery gamma, and spontaneous (self) infection epsilon."""

    beta: float
    gamma: float
    eps: float

    def __post_init__(self):
        for name in ("beta", "gamma", "eps"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class NetworkState:
    """Infection pattern x in {0,1}^N; node n occupies bit n-1 of the index."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if not bits or any(b not in (0, 1) for b in bits):
            raise ValueError("state bits must be a nonempty 0/1 tuple")
        object.__setattr__(self, "bits", bits)

    @property
    def n_nodes(self) -> int:
        return len(self.bits)

    @property
    def linear_index(self) -> int:
        return sum(b << i for i, b in enumerate(self.bits))

    @classmethod
    def from_index(cls, idx: int, n_nodes: int) -> "NetworkState":
        if not 0 <= idx < (1 << n_nodes):
            raise ValueError(f"index {idx} out of range for {n_nodes} nodes")
        return cls(tuple((idx >> i) & 1 for i in range(n_nodes)))


@dataclass(frozen=True)
class RateMatrix:
    """Infinitesimal generator of the epidemic CTMC, column convention:
    q[y, x] is the rate of jumping from state x to state y."""

    dim: int
    q: sparse.csc_array

    def dense(self) -> np.ndarray:
        return self.q.toarray()

    def exit_rates(self) -> np.ndarray:
        return -self.q.diagonal()


def build_generator(g: AdjacencyVector, params: EpidemicParams) -> RateMatrix:
    """Assemble the 2^N x 2^N generator of the epsilon-SIS chain on network g.

    A susceptible node n flips up at rate I_n(x) beta + eps where I_n counts
    its infected neighbours; an infected node flips down at rate gamma.
    Columns sum to zero.
    """
    n = g.n_nodes
    dim = 1 << n
    adj = unpack_adjacency(g)
    states = np.arange(dim, dtype=np.int64)
    bits = (states[:, None] >> np.arange(n)) & 1          # (dim, n)
    n_inf = bits @ adj
    flip_rate = np.where(bits == 0, n_inf * params.beta + params.eps, params.gamma)
    targets = states[:, None] ^ (np.int64(1) << np.arange(n))

    rows = targets.ravel()
    cols = np.repeat(states, n)
    data = flip_rate.ravel().astype(float)
    keep = data > 0
    diag = -flip_rate.sum(axis=1)
    q = sparse.csc_array(
        (np.concatenate([data[keep], diag]),
         (np.concatenate([rows[keep], states]), np.concatenate([cols[keep], states]))),
        shape=(dim, dim),
    )
    return RateMatrix(dim=dim, q=q)


@dataclass(frozen=True)
class TransitionMatrix:
    """Column-stochastic matrix of step probabilities over a fixed interval."""

    dim: int
    dt: float
    probs: np.ndarray


def transition_matrix(rate: RateMatrix, dt: float,
                      dense_limit: int = 4096,
                      allow_uniformization: bool = False) -> TransitionMatrix:
    """Matrix exponential exp(Q dt) with validation of stochasticity.

    Uses a dense scaling-and-squaring exponential up to `dense_limit`
    states.  Beyond that the full matrix is only formed on request via
    uniformization (memory grows as dim^2); otherwise a CapacityError
    points the caller at transition_columns.
    """
    dt = float(dt)
    if not math.isfinite(dt) or dt <= 0:
        raise ValueError(f"dt must be finite and positive, got {dt}")
    if rate.dim <= dense_limit:
        p = expm(rate.dense() * dt)
    elif allow_uniformization:
        p = transition_columns(rate, dt, np.arange(rate.dim))
    else:
        raise CapacityError(
            f"dim {rate.dim} exceeds dense limit {dense_limit}; "
            "use transition_columns or pass allow_uniformization=True")
    col_sums = p.sum(axis=0)
    if np.max(np.abs(col_sums - 1.0)) > 1e-10:
        raise ArithmeticError("transition matrix columns do not sum to 1")
    if p.min() < -1e-12 or p.max() > 1 + 1e-12:
        raise ArithmeticError("transition matrix entries outside [0, 1]")
    return TransitionMatrix(dim=rate.dim, dt=dt, probs=np.clip(p, 0.0, 1.0))


def transition_columns(rate: RateMatrix, dt: float, cols,
                       tail: float = 1e-12) -> np.ndarray:
    """Selected columns of exp(Q dt) by uniformization.

    The jump chain P = I + Q/lam with lam the largest exit rate is applied
    to indicator vectors and summed with Poisson(lam dt) weights until the
    neglected tail mass drops below `tail`.  Large lam dt is split into
    substeps so the Poisson mean stays moderate.
    """
    dt = float(dt)
    if not math.isfinite(dt) or dt < 0:
        raise ValueError(f"dt must be finite and nonnegative, got {dt}")
    cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
    if cols.size and (cols.min() < 0 or cols.max() >= rate.dim):
        raise ValueError("column indices out of range")
    v = np.zeros((rate.dim, cols.size))
    v[cols, np.arange(cols.size)] = 1.0
    lam = float(rate.exit_rates().max(initial=0.0))
    if lam == 0.0 or dt == 0.0:
        return v

    n_sub = max(1, math.ceil(lam * dt / 200.0))
    mu = lam * dt / n_sub
    jump = (sparse.identity(rate.dim, format="csc") + rate.q / lam).tocsr()
    j_cap = int(mu + 40.0 * math.sqrt(mu + 1.0) + 100.0)
    for _ in range(n_sub):
        w = math.exp(-mu)
        term = v
        acc = w * v
        cum = w
        j = 0
        while 1.0 - cum > tail and j < j_cap:
            j += 1
            term = jump @ term
            w *= mu / j
            acc += w * term
            cum += w
        v = acc
    return np.clip(v, 0.0, 1.0)


def step_probability(m: TransitionMatrix, x_prev: NetworkState,
                     x_next: NetworkState) -> float:
    """Probability of observing x_next a time m.dt after x_prev."""
    if (1 << x_prev.n_nodes) != m.dim or (1 << x_next.n_nodes) != m.dim:
        raise ValueError("state size does not match transition matrix")
    return float(m.probs[x_next.linear_index, x_prev.linear_index])


@dataclass
class Trajectory:
    """States observed on a regular time grid.

    Attributes
    ----------
    times : (K+1,) float array, strictly increasing.
    states : (K+1, N) 0/1 array; row k is the state at times[k].
    """

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states)
        if self.times.ndim != 1 or self.states.ndim != 2:
            raise ValueError("times must be 1-d and states 2-d")
        if self.times.shape[0] != self.states.shape[0]:
            raise ValueError("times and states have mismatched lengths")
        if self.times.size == 0:
            raise ValueError("trajectory must contain at least one observation")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("observation times must be strictly increasing")
        if not np.isin(self.states, (0, 1)).all():
            raise ValueError("states must be binary")
        self.states = self.states.astype(np.int8)

    @property
    def n_nodes(self) -> int:
        return self.states.shape[1]

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    def state_indices(self) -> np.ndarray:
        weights = np.int64(1) << np.arange(self.n_nodes, dtype=np.int64)
        return self.states.astype(np.int64) @ weights


def ssa_simulate(g: AdjacencyVector, params: EpidemicParams, dt: float,
                 t_max: float, x0: NetworkState, seed) -> Trajectory:
    """Gillespie simulation of the epsilon-SIS chain, sampled on a grid.

    Runs the exact stochastic simulation algorithm from state x0 and
    records the state at times 0, dt, 2dt, ..., K dt with K = floor(t_max/dt).
    Grid points coinciding with an event time get the post-event state.
    """
    if x0.n_nodes != g.n_nodes:
        raise ValueError("initial state size does not match network")
    dt = float(dt)
    t_max = float(t_max)
    if dt <= 0 or not math.isfinite(dt):
        raise ValueError(f"dt must be positive, got {dt}")
    if t_max < dt:
        raise ValueError("t_max must cover at least one step")
    n = g.n_nodes
    k_steps = int(math.floor(t_max / dt + 1e-9))
    grid = np.arange(k_steps + 1) * dt
    adj = unpack_adjacency(g)
    rng = np.random.default_rng(seed)

    x = np.array(x0.bits, dtype=np.int64)
    out = np.empty((k_steps + 1, n), dtype=np.int8)
    out[0] = x
    t = 0.0
    k = 1
    while k <= k_steps:
        rates = np.where(x == 1, params.gamma,
                         (adj @ x) * params.beta + params.eps).astype(float)
        total = rates.sum()
        if total <= 0.0:
            out[k:] = x
            break
        t_event = t + rng.exponential(1.0 / total)
        while k <= k_steps and grid[k] < t_event:
            out[k] = x
            k += 1
        if k > k_steps:
            break
        u = rng.random() * total
        node = min(int(np.searchsorted(np.cumsum(rates), u, side="right")), n - 1)
        x[node] ^= 1
        t = t_event
    return Trajectory(times=grid, states=out)


# ---------------------------------------------------------------------------
# file formats

def write_network(g: AdjacencyVector, path) -> None:
    """Edge-list text format: a header line `N <n>` then one `m n` line per
    edge with 1-based endpoints, m < n."""
    with open(path, "w") as fh:
        fh.write(f"N {g.n_nodes}\n")
        for m, n in g.edges():
            fh.write(f"{m + 1} {n + 1}\n")


def read_network(path) -> AdjacencyVector:
    """Read the edge-list format of write_network.

    Lines starting with `#` are ignored.  As an alternative to the edge
    list, a single line `bits <01string>` gives the adjacency vector
    directly.
    """
    lines = []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if line:
                lines.append(line)
    if not lines:
        raise ValueError(f"empty network file: {path}")
    head = lines[0].split()
    if head[0] == "bits":
        if len(head) != 2 or len(lines) > 1:
            raise ValueError("bits form must be a single `bits <01string>` line")
        return AdjacencyVector.from_bitstring(head[1])
    if head[0] != "N" or len(head) != 2:
        raise ValueError(f"expected `N <int>` or `bits <01string>`, got {lines[0]!r}")
    n_nodes = int(head[1])
    edges = []
    for line in lines[1:]:
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"malformed edge line: {line!r}")
        m, n = int(parts[0]), int(parts[1])
        if not (1 <= m < n <= n_nodes):
            raise ValueError(f"edge ({m}, {n}) out of range, need 1 <= m < n <= {n_nodes}")
        edges.append((m - 1, n - 1))
    return AdjacencyVector.from_edges(n_nodes, edges)


def write_trajectory(traj: Trajectory, path) -> None:
    """CSV with header t,x1,...,xN; times carry full double precision."""
    n = traj.n_nodes
    with open(path, "w") as fh:
        fh.write("t," + ",".join(f"x{i + 1}" for i in range(n)) + "\n")
        for t, row in zip(traj.times, traj.states):
            fh.write(f"{t:.17g}," + ",".join(str(int(b)) for b in row) + "\n")


def read_trajectory(path) -> Trajectory:
    with open(path) as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        if not cols or cols[0] != "t" or any(c != f"x{i + 1}" for i, c in enumerate(cols[1:])):
            raise ValueError(f"bad trajectory header: {header!r}")
        n = len(cols) - 1
        if n == 0:
            raise ValueError("trajectory file has no state columns")
        times = []
        states = []
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != n + 1:
                raise ValueError(f"row has {len(parts)} fields, expected {n + 1}")
            times.append(float(parts[0]))
            states.append([int(p) for p in parts[1:]])
    return Trajectory(times=np.array(times), states=np.array(states))
