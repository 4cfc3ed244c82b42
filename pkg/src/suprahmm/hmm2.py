"""First- and second-order HMMs with diagonal Gaussian-mixture emissions.

Second-order chains condition each transition on the two previous states:
``a[i, j, k] = P(q_{t+1} = k | q_{t-1} = i, q_t = j)``.  The first step
(t = 1 -> 2) has no older state, so it goes through a separate first-order
``bootstrap`` matrix.  Forward and backward lattices for second-order
models are indexed by state pairs ``(previous, current)`` from the second
frame on; the first frame carries a single-index layer.

All recursions run in log space with an exact log-sum-exp per target
state, so sequences of tens of thousands of frames stay finite and states
whose scores differ by thousands of nats do not underflow each other.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DimensionMismatchError, DocumentError, EmptyInputError, NonFiniteObservationError
from .features import FeatureSequence

log = logging.getLogger(__name__)

MODEL_SCHEMA = "suprahmm-model v1"
VARIANCE_FLOOR = 1e-4
PROB_TOL = 1e-9
LOG_2PI = np.log(2.0 * np.pi)

Observations = Union[FeatureSequence, np.ndarray]


# -- structure -----------------------------------------------------------

@dataclass(frozen=True)
class Topology:
    order: int = 2
    shape: str = "circular"
    n_states: int = 6

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ConfigError(f"order must be 1 or 2, got {self.order}")
        if self.shape not in ("linear", "circular"):
            raise ConfigError(f"shape must be 'linear' or 'circular', got {self.shape!r}")
        if self.n_states < 1:
            raise ConfigError("a topology needs at least one state")

    def successors(self, j: int) -> Tuple[int, ...]:
        n = self.n_states
        if self.shape == "circular":
            return tuple(sorted({(j - 1) % n, j, (j + 1) % n}))
        return (j, j + 1) if j + 1 < n else (j,)

    def adjacency(self) -> np.ndarray:
        """Boolean ``(N, N)`` mask of allowed ``current -> next`` moves."""
        mask = np.zeros((self.n_states, self.n_states), dtype=bool)
        for j in range(self.n_states):
            mask[j, list(self.successors(j))] = True
        return mask

    @property
    def name(self) -> str:
        prefix = "C" if self.shape == "circular" else "LTR"
        return f"{prefix}HMM{self.order}"


@dataclass(frozen=True)
class GmmEmission:
    """Per-state diagonal Gaussian mixtures.

    weights: (N, M), means: (N, M, D), variances: (N, M, D)
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        mu = _frozen(self.means)
        var = _frozen(self.variances)
        if w.ndim != 2 or mu.ndim != 3 or mu.shape != var.shape or mu.shape[:2] != w.shape:
            raise ConfigError("inconsistent mixture parameter shapes")
        if np.any(w < 0) or not np.allclose(w.sum(axis=1), 1.0, atol=PROB_TOL, rtol=0):
            raise ConfigError("mixture weights must be non-negative and sum to one per state")
        if np.any(var < VARIANCE_FLOOR * (1 - 1e-12)) or not np.all(np.isfinite(mu)):
            raise ConfigError("variances must respect the floor and means must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def n_states(self) -> int:
        return self.weights.shape[0]

    @property
    def n_mix(self) -> int:
        return self.weights.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    def component_log_density(self, x: np.ndarray) -> np.ndarray:
        """log(w_m * N(x_t; mu_m, var_m)) for every frame, state and component: (T, N, M)."""
        n, m, d = self.means.shape
        prec = (1.0 / self.variances).reshape(n * m, d)
        mu = self.means.reshape(n * m, d)
        quad = (x * x) @ prec.T - 2.0 * x @ (mu * prec).T + np.sum(mu * mu * prec, axis=1)
        const = -0.5 * (d * LOG_2PI + np.sum(np.log(self.variances), axis=2))
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return (-0.5 * quad).reshape(-1, n, m) + (const + logw)[None]

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Per-frame, per-state log emission density: (T, N)."""
        return _logsumexp(self.component_log_density(x), axis=2)


@dataclass(frozen=True)
class TrainingInfo:
    iterations: int = 0
    log_likelihoods: Tuple[float, ...] = ()
    converged: bool = False
    variance_floored: bool = False

    @property
    def final_log_likelihood(self) -> Optional[float]:
        return self.log_likelihoods[-1] if self.log_likelihoods else None


@dataclass(frozen=True)
class Hmm2Model:
    """A first- or second-order HMM.

    ``transitions`` is ``(N, N)`` for order 1 and ``(N, N, N)`` for order 2;
    ``bootstrap`` is the ``(N, N)`` first-step matrix of order-2 models and
    ``None`` otherwise.  Instances are immutable; training returns a new one.
    """

    topology: Topology
    initial: np.ndarray
    transitions: np.ndarray
    emission: GmmEmission
    bootstrap: Optional[np.ndarray] = None
    info: TrainingInfo = field(default_factory=TrainingInfo)

    def __post_init__(self):
        topo = self.topology
        n = topo.n_states
        v = _frozen(self.initial)
        a = _frozen(self.transitions)
        if v.shape != (n,) or np.any(v < 0) or abs(v.sum() - 1.0) > PROB_TOL:
            raise ConfigError("initial distribution must be a probability vector over the states")
        if self.emission.n_states != n:
            raise ConfigError("emission state count does not match the topology")
        adj = topo.adjacency()
        if topo.order == 1:
            if self.bootstrap is not None:
                raise ConfigError("first-order models have no bootstrap matrix")
            _check_stochastic(a, (n, n), adj, "transition matrix")
            object.__setattr__(self, "transitions", a)
        else:
            if self.bootstrap is None:
                raise ConfigError("second-order models need a bootstrap matrix")
            boot = _frozen(self.bootstrap)
            _check_stochastic(boot, (n, n), adj, "bootstrap matrix")
            _check_stochastic(a, (n, n, n), np.broadcast_to(adj, (n, n, n)), "transition tensor")
            object.__setattr__(self, "bootstrap", boot)
            object.__setattr__(self, "transitions", a)
        object.__setattr__(self, "initial", v)

    @property
    def n_states(self) -> int:
        return self.topology.n_states

    @property
    def order(self) -> int:
        return self.topology.order

    @property
    def dim(self) -> int:
        return self.emission.dim


@dataclass(frozen=True)
class Lattice:
    """Log-domain forward or backward lattice.

    ``head`` is the ``(N,)`` layer of the first frame.  ``body`` holds the
    remaining ``T - 1`` frames: ``(T-1, N)`` for order 1, or ``(T-1, N, N)``
    indexed ``[t - 1, previous, current]`` for order 2.
    """

    head: np.ndarray
    body: np.ndarray

    @property
    def length(self) -> int:
        return 1 + self.body.shape[0]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


def _check_stochastic(a: np.ndarray, shape, support: np.ndarray, what: str):
    if a.shape != shape:
        raise ConfigError(f"{what} has shape {a.shape}, expected {shape}")
    if np.any(a < 0) or not np.allclose(a.sum(axis=-1), 1.0, atol=PROB_TOL, rtol=0):
        raise ConfigError(f"{what} rows must be probability vectors")
    if np.any(a[~support] != 0.0):
        raise ConfigError(f"{what} has mass outside the topology's adjacency")


def _logsumexp(x: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


def _log(a: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(a)


def _observations(model: Hmm2Model, obs: Observations) -> np.ndarray:
    x = obs.frames if isinstance(obs, FeatureSequence) else np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if x.ndim != 2 or x.shape[0] < 1:
        raise EmptyInputError("need at least one observation frame")
    if x.shape[1] != model.dim:
        raise DimensionMismatchError(f"observations have dimension {x.shape[1]}, model expects {model.dim}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteObservationError("observations contain NaN or infinite values")
    return x


def emission_log_likelihoods(model: Hmm2Model, obs: Observations) -> np.ndarray:
    return model.emission.log_density(_observations(model, obs))


# -- construction --------------------------------------------------------

def uniform_transitions(topology: Topology) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Uniform mass over each state's successor set (1/3 for interior
    circular states).  Returns (transitions, bootstrap)."""
    adj = topology.adjacency().astype(np.float64)
    first = adj / adj.sum(axis=1, keepdims=True)
    if topology.order == 1:
        return first, None
    n = topology.n_states
    return np.broadcast_to(first, (n, n, n)).copy(), first.copy()


def init_model(topology: Topology, dim: int, m: int, seed: int) -> Hmm2Model:
    """Starting point for training: uniform initial and transition
    probabilities over the topology, seeded standard-normal means, unit
    variances and equal mixture weights."""
    if m < 1 or dim < 1:
        raise ConfigError(f"need m >= 1 and dim >= 1 (got m={m}, dim={dim})")
    n = topology.n_states
    rng = np.random.default_rng(seed)
    trans, boot = uniform_transitions(topology)
    emission = GmmEmission(np.full((n, m), 1.0 / m), rng.standard_normal((n, m, dim)), np.ones((n, m, dim)))
    return Hmm2Model(topology, np.full(n, 1.0 / n), trans, emission, boot)


def random_model(topology: Topology, dim: int, m: int, seed: int, mean_scale: float = 1.0,
                 concentration: float = 1.0) -> Hmm2Model:
    """Model with Dirichlet-drawn probabilities restricted to the topology."""
    rng = np.random.default_rng(seed)
    n = topology.n_states
    adj = topology.adjacency()

    def rows(shape):
        out = np.zeros(shape + (n,))
        for idx in np.ndindex(*shape):
            allowed = np.flatnonzero(adj[idx[-1]])
            out[idx + (slice(None),)][allowed] = rng.dirichlet(np.full(allowed.size, concentration))
        return out

    v = rng.dirichlet(np.full(n, concentration))
    boot = rows((n,))
    trans = rows((n, n)) if topology.order == 2 else boot
    emission = GmmEmission(
        rng.dirichlet(np.full(m, 2.0), size=n),
        mean_scale * rng.standard_normal((n, m, dim)),
        rng.uniform(0.5, 1.5, size=(n, m, dim)),
    )
    return Hmm2Model(topology, v, trans, emission, boot if topology.order == 2 else None)


def init_from_data(topology: Topology, corpus: Sequence[Observations], m: int, seed: int) -> Hmm2Model:
    """Like :func:`init_model`, but emissions are seeded from the data.

    Pooled frames are clustered into N groups with k-means; groups are
    assigned to states in order of their mean relative position within
    the utterance, so left-to-right chains start roughly aligned.  Each
    state's mixture is then seeded by a second k-means over its group.
    """
    if not corpus:
        raise EmptyInputError("cannot initialise from an empty corpus")
    from .vq import kmeans

    frames = [obs.frames if isinstance(obs, FeatureSequence) else np.atleast_2d(obs) for obs in corpus]
    x = np.vstack(frames)
    pos = np.concatenate([(np.arange(f.shape[0]) + 0.5) / f.shape[0] for f in frames])
    dim = x.shape[1]
    n = topology.n_states
    base = init_model(topology, dim, m, seed)
    if x.shape[0] < n * m:
        return base
    _, labels, _ = kmeans(x, n, seed)
    order = np.argsort([pos[labels == c].mean() if np.any(labels == c) else 1.0 for c in range(n)],
                       kind="stable")
    weights = np.full((n, m), 1.0 / m)
    means = np.empty((n, m, dim))
    variances = np.empty((n, m, dim))
    for j, c in enumerate(order):
        pool = x[labels == c]
        pool_var = np.maximum(pool.var(axis=0), VARIANCE_FLOOR) if pool.shape[0] > 1 else np.var(x, axis=0)
        if pool.shape[0] < m:
            means[j] = pool[np.arange(m) % pool.shape[0]]
            variances[j] = np.maximum(pool_var, VARIANCE_FLOOR)
            continue
        centroids, sub, _ = kmeans(pool, m, seed + j + 1)
        means[j] = centroids
        counts = np.bincount(sub, minlength=m).astype(np.float64)
        weights[j] = counts / counts.sum()
        for c2 in range(m):
            members = pool[sub == c2]
            v = members.var(axis=0) if members.shape[0] > 1 else pool_var
            variances[j, c2] = np.maximum(v, VARIANCE_FLOOR)
    return replace(base, emission=GmmEmission(weights, means, variances))


def init_from_alignment(topology: Topology, corpus: Sequence[Observations],
                        alignments: Sequence[Sequence[int]], m: int, seed: int) -> Hmm2Model:
    """Seed each state's mixture from the frames a known alignment assigns
    to it.  States without frames keep the :func:`init_model` defaults."""
    from .vq import kmeans

    frames = [obs.frames if isinstance(obs, FeatureSequence) else np.atleast_2d(obs) for obs in corpus]
    if not frames or len(frames) != len(alignments):
        raise EmptyInputError("need one alignment per non-empty sequence")
    x = np.vstack(frames)
    labels = np.concatenate([np.asarray(a, dtype=np.intp) for a in alignments])
    if labels.shape[0] != x.shape[0]:
        raise DimensionMismatchError("alignment lengths do not match the sequences")
    base = init_model(topology, x.shape[1], m, seed)
    weights = np.array(base.emission.weights)
    means = np.array(base.emission.means)
    variances = np.array(base.emission.variances)
    global_var = np.maximum(x.var(axis=0), VARIANCE_FLOOR) if x.shape[0] > 1 else np.ones(x.shape[1])
    for j in range(topology.n_states):
        pool = x[labels == j]
        if pool.shape[0] == 0:
            means[j] = x.mean(axis=0) + np.sqrt(global_var) * base.emission.means[j]
            variances[j] = global_var
            continue
        pool_var = np.maximum(pool.var(axis=0), VARIANCE_FLOOR) if pool.shape[0] > 1 else global_var
        if pool.shape[0] < m:
            means[j] = pool[np.arange(m) % pool.shape[0]]
            variances[j] = pool_var
            continue
        centroids, sub, _ = kmeans(pool, m, seed + j + 1)
        means[j] = centroids
        counts = np.bincount(sub, minlength=m).astype(np.float64)
        weights[j] = counts / counts.sum()
        for c in range(m):
            members = pool[sub == c]
            variances[j, c] = np.maximum(members.var(axis=0), VARIANCE_FLOOR) if members.shape[0] > 1 else pool_var
    return replace(base, emission=GmmEmission(weights, means, variances))


def collapse_to_first_order(model: Hmm2Model) -> Hmm2Model:
    """The first-order model equivalent to an order-2 model whose tensor
    ignores the oldest state and whose bootstrap equals that matrix."""
    if model.order == 1:
        return model
    a = model.transitions[0]
    if not (np.all(model.transitions == a[None]) and np.array_equal(model.bootstrap, a)):
        raise ConfigError("tensor depends on the oldest state; no first-order equivalent")
    topo = replace(model.topology, order=1)
    return Hmm2Model(topo, model.initial, a, model.emission, None, model.info)


# -- inference -----------------------------------------------------------

def forward(model: Hmm2Model, obs: Observations) -> Tuple[Lattice, float]:
    """Forward lattice and total log-likelihood of ``obs``."""
    logb = emission_log_likelihoods(model, obs)
    return _forward(model, logb)


def log_likelihood(model: Hmm2Model, obs: Observations) -> float:
    return forward(model, obs)[1]


def _forward(model: Hmm2Model, logb: np.ndarray) -> Tuple[Lattice, float]:
    T, n = logb.shape
    head = _log(model.initial) + logb[0]
    logA = _log(model.transitions)
    if model.order == 1:
        body = np.empty((T - 1, n))
        prev = head
        for t in range(1, T):
            prev = body[t - 1] = _logsumexp(prev[:, None] + logA, axis=0) + logb[t]
    else:
        body = np.empty((T - 1, n, n))
        if T >= 2:
            body[0] = head[:, None] + _log(model.bootstrap) + logb[1][None, :]
        for p in range(1, T - 1):
            body[p] = _logsumexp(body[p - 1][:, :, None] + logA, axis=0) + logb[p + 1][None, :]
    last = body[-1] if T >= 2 else head
    return Lattice(head, body), float(_logsumexp(last))


def backward(model: Hmm2Model, obs: Observations) -> Lattice:
    """Backward lattice with a terminal layer of ones (log 0)."""
    return _backward(model, emission_log_likelihoods(model, obs))


def _backward(model: Hmm2Model, logb: np.ndarray) -> Lattice:
    T, n = logb.shape
    logA = _log(model.transitions)
    if model.order == 1:
        body = np.zeros((T - 1, n))
        nxt = np.zeros(n)
        for t in range(T - 2, -1, -1):
            nxt = _logsumexp(logA + (logb[t + 1] + nxt)[None, :], axis=1)
            if t >= 1:
                body[t - 1] = nxt
        head = nxt if T >= 2 else np.zeros(n)
        return Lattice(head, body)
    body = np.zeros((T - 1, n, n))
    for p in range(T - 3, -1, -1):
        body[p] = _logsumexp(logA + (logb[p + 2][None, :] + body[p + 1])[None, :, :], axis=2)
    if T >= 2:
        head = _logsumexp(_log(model.bootstrap) + logb[1][None, :] + body[0], axis=1)
    else:
        head = np.zeros(n)
    return Lattice(head, body)


def layer_log_totals(alpha: Lattice, beta: Lattice) -> np.ndarray:
    """log sum(alpha_t * beta_t) for every frame t; constant in t and equal
    to the log-likelihood when both lattices are correct."""
    axes = tuple(range(1, alpha.body.ndim))
    first = _logsumexp(alpha.head + beta.head)
    rest = _logsumexp(alpha.body + beta.body, axis=axes) if alpha.body.shape[0] else np.empty(0)
    return np.concatenate([[first], np.atleast_1d(rest)])


def viterbi_align(model: Hmm2Model, obs: Observations) -> Tuple[np.ndarray, float]:
    """Most likely state path and its joint log-probability."""
    logb = emission_log_likelihoods(model, obs)
    T, n = logb.shape
    delta = _log(model.initial) + logb[0]
    if T == 1:
        best = int(np.argmax(delta))
        return np.array([best]), float(delta[best])
    logA = _log(model.transitions)
    if model.order == 1:
        back = np.empty((T - 1, n), dtype=np.intp)
        for t in range(1, T):
            scores = delta[:, None] + logA
            back[t - 1] = np.argmax(scores, axis=0)
            delta = scores[back[t - 1], np.arange(n)] + logb[t]
        path = np.empty(T, dtype=np.intp)
        path[-1] = int(np.argmax(delta))
        for t in range(T - 1, 0, -1):
            path[t - 1] = back[t - 1, path[t]]
        return path, float(delta[path[-1]])

    pair = delta[:, None] + _log(model.bootstrap) + logb[1][None, :]
    back = np.empty((max(T - 2, 0), n, n), dtype=np.intp)
    jj, kk = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    for p in range(1, T - 1):
        scores = pair[:, :, None] + logA
        back[p - 1] = np.argmax(scores, axis=0)
        pair = scores[back[p - 1], jj, kk] + logb[p + 1][None, :]
    flat = int(np.argmax(pair))
    j, k = divmod(flat, n)
    path = np.empty(T, dtype=np.intp)
    path[-2], path[-1] = j, k
    for t in range(T - 1, 1, -1):
        path[t - 2] = back[t - 2, path[t - 1], path[t]]
    return path, float(pair[j, k])


# -- training ------------------------------------------------------------

@dataclass
class _Stats:
    initial: np.ndarray
    bootstrap: Optional[np.ndarray]
    transitions: np.ndarray
    occ: np.ndarray
    sx: np.ndarray
    sxx: np.ndarray
    loglik: float = 0.0

    @classmethod
    def zeros(cls, model: Hmm2Model) -> "_Stats":
        n, m, d = model.emission.means.shape
        return cls(
            np.zeros(n),
            np.zeros((n, n)) if model.order == 2 else None,
            np.zeros(model.transitions.shape),
            np.zeros((n, m)), np.zeros((n, m, d)), np.zeros((n, m, d)),
        )


def _accumulate(model: Hmm2Model, x: np.ndarray, stats: _Stats) -> None:
    cld = model.emission.component_log_density(x)
    logb = _logsumexp(cld, axis=2)
    alpha, ll = _forward(model, logb)
    if not np.isfinite(ll):
        raise ConfigError("sequence has zero likelihood under the current model")
    beta = _backward(model, logb)
    T, n = logb.shape
    logA = _log(model.transitions)
    gamma = np.empty((T, n))
    gamma[0] = np.exp(alpha.head + beta.head - ll)
    if model.order == 1:
        if T >= 2:
            gamma[1:] = np.exp(alpha.body + beta.body - ll)
            prev = np.concatenate([alpha.head[None], alpha.body[:-1]])
            xi = prev[:, :, None] + logA[None] + (logb[1:] + beta.body)[:, None, :] - ll
            stats.transitions += np.exp(xi).sum(axis=0)
    else:
        if T >= 2:
            pair_post = np.exp(alpha.body + beta.body - ll)
            gamma[1:] = pair_post.sum(axis=1)
            stats.bootstrap += pair_post[0]
        if T >= 3:
            xi = (alpha.body[:-1, :, :, None] + logA[None]
                  + (logb[2:, None, :] + beta.body[1:])[:, None, :, :] - ll)
            stats.transitions += np.exp(xi).sum(axis=0)
    stats.initial += gamma[0]
    with np.errstate(invalid="ignore"):
        within = np.exp(cld - logb[:, :, None])
    resp = gamma[:, :, None] * np.nan_to_num(within)
    stats.occ += resp.sum(axis=0)
    stats.sx += np.einsum("tnm,td->nmd", resp, x)
    stats.sxx += np.einsum("tnm,td->nmd", resp, x * x)
    stats.loglik += ll


def _normalise_rows(counts: np.ndarray, old: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=-1, keepdims=True)
    safe = np.where(totals > 0, totals, 1.0)
    return np.where(totals > 0, counts / safe, old)


def _maximise(model: Hmm2Model, stats: _Stats) -> Tuple[Hmm2Model, bool]:
    em = model.emission
    v = stats.initial / stats.initial.sum()
    trans = _normalise_rows(stats.transitions, model.transitions)
    boot = _normalise_rows(stats.bootstrap, model.bootstrap) if model.order == 2 else None

    occ = stats.occ
    state_occ = occ.sum(axis=1, keepdims=True)
    weights = np.where(state_occ > 0, occ / np.where(state_occ > 0, state_occ, 1.0), em.weights)
    live = occ > 0
    denom = np.where(live, occ, 1.0)[:, :, None]
    means = np.where(live[:, :, None], stats.sx / denom, em.means)
    raw_var = stats.sxx / denom - means * means
    floored = bool(np.any(live[:, :, None] & (raw_var < VARIANCE_FLOOR)))
    variances = np.where(live[:, :, None], np.maximum(raw_var, VARIANCE_FLOOR), em.variances)
    new = Hmm2Model(model.topology, v, trans, GmmEmission(weights, means, variances), boot, model.info)
    return new, floored


def corpus_log_likelihood(model: Hmm2Model, corpus: Sequence[Observations]) -> float:
    """Total log-likelihood of a corpus (sequences scored in order)."""
    return float(sum(log_likelihood(model, obs) for obs in corpus))


def train(model: Hmm2Model, corpus: Sequence[Observations], max_iters: int = 20,
          tol: float = 1e-4) -> Hmm2Model:
    """Baum-Welch re-estimation over pair-state posteriors.

    Transition counts come from triple posteriors (pair posteriors for
    first-order models and for the bootstrap step); mixture statistics from
    per-state occupancies.  Transitions with zero probability receive zero
    counts, so the topology survives training.  Stops after ``max_iters``
    updates or once the relative log-likelihood gain drops below ``tol``.
    The recorded history is evaluated before each update plus once for the
    returned parameters.
    """
    if not corpus:
        raise EmptyInputError("training corpus is empty")
    xs = [_observations(model, obs) for obs in corpus]
    history: List[float] = []
    floored_any = False
    converged = False
    current = model
    for it in range(max_iters + 1):
        stats = _Stats.zeros(current)
        for x in xs:
            _accumulate(current, x, stats)
        history.append(stats.loglik)
        if len(history) >= 2:
            gain = history[-1] - history[-2]
            if gain < -1e-6 * max(1.0, abs(history[-2])):
                log.warning("log-likelihood decreased by %.3g at iteration %d", -gain, it)
            if abs(gain) <= tol * abs(history[-2]):
                converged = True
                break
        if it == max_iters:
            break
        current, floored = _maximise(current, stats)
        floored_any |= floored
    if floored_any:
        log.warning("variance floor of %g applied during training", VARIANCE_FLOOR)
    info = TrainingInfo(len(history) - 1, tuple(history), converged, floored_any)
    return replace(current, info=info)


# -- sampling ------------------------------------------------------------

def _draw(rng: np.random.Generator, p: np.ndarray) -> int:
    return int(min(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"), p.size - 1))


def sample_sequence(model: Hmm2Model, t: int, seed: Union[int, np.random.Generator]
                    ) -> Tuple[FeatureSequence, np.ndarray]:
    """Draw a state path and its observations; deterministic per seed."""
    if t < 1:
        raise ConfigError("sequence length must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    path = np.empty(t, dtype=np.intp)
    path[0] = _draw(rng, model.initial)
    for s in range(1, t):
        if model.order == 1:
            row = model.transitions[path[s - 1]]
        elif s == 1:
            row = model.bootstrap[path[0]]
        else:
            row = model.transitions[path[s - 2], path[s - 1]]
        path[s] = _draw(rng, row)
    em = model.emission
    comps = np.array([_draw(rng, em.weights[q]) for q in path])
    noise = rng.standard_normal((t, em.dim))
    x = em.means[path, comps] + np.sqrt(em.variances[path, comps]) * noise
    return FeatureSequence(x), path


# -- serialization -------------------------------------------------------

def to_document(model: Hmm2Model) -> dict:
    """JSON-ready dict; floats survive a round trip bit-for-bit."""
    topo = model.topology
    info = model.info
    return {
        "schema": MODEL_SCHEMA,
        "kind": "hmm",
        "topology": {"order": topo.order, "shape": topo.shape, "n_states": topo.n_states},
        "initial": model.initial.tolist(),
        "bootstrap": None if model.bootstrap is None else model.bootstrap.tolist(),
        "transitions": model.transitions.tolist(),
        "emission": {
            "weights": model.emission.weights.tolist(),
            "means": model.emission.means.tolist(),
            "variances": model.emission.variances.tolist(),
        },
        "training": {
            "iterations": info.iterations,
            "log_likelihoods": list(info.log_likelihoods),
            "converged": info.converged,
            "variance_floored": info.variance_floored,
        },
    }


def from_document(doc: dict) -> Hmm2Model:
    if doc.get("kind") != "hmm" or doc.get("schema", MODEL_SCHEMA) != MODEL_SCHEMA:
        raise DocumentError(f"document is not a '{MODEL_SCHEMA}' HMM")
    try:
        topo = Topology(**doc["topology"])
        em = doc["emission"]
        tr = doc.get("training", {})
        info = TrainingInfo(tr.get("iterations", 0), tuple(tr.get("log_likelihoods", ())),
                            tr.get("converged", False), tr.get("variance_floored", False))
        return Hmm2Model(
            topo, np.array(doc["initial"]), np.array(doc["transitions"]),
            GmmEmission(np.array(em["weights"]), np.array(em["means"]), np.array(em["variances"])),
            None if doc.get("bootstrap") is None else np.array(doc["bootstrap"]), info,
        )
    except (KeyError, TypeError) as exc:
        raise DocumentError(f"malformed HMM document: {exc}") from exc
