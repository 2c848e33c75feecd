"""Event-driven GI/GI/n FCFS simulator with the pathwise decomposition,
law-of-large-numbers and Monte Carlo tail diagnostics."""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dist import ServiceDist
from .grids import GridPath, conv_trap
from .paths import ModelParams

__all__ = [
    "ScalingRegime",
    "QueueTrace",
    "DecompositionReport",
    "simulate",
    "flow_balance_residuals",
    "decomposition",
    "lln_check",
    "mc_tail",
    "spawn_streams",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScalingRegime:
    """Moderate-deviations scaling: server count n and the b_n rule.

    rule: ("power", gamma) gives b_n = n^gamma with gamma in (0, 1/2);
          ("log", c) gives b_n = c * ln(n).
    The traffic intensity follows from beta via sqrt(n)/b_n (1 - rho_n) = beta.
    """

    n: int
    rule: tuple
    beta: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        kind, par = self.rule
        if kind == "power":
            if not (0.0 < par < 0.5):
                raise ValueError("power rule needs gamma in (0, 1/2)")
        elif kind == "log":
            if par <= 0:
                raise ValueError("log rule needs c > 0")
        else:
            raise ValueError(f"unknown b rule {kind!r}")

    @property
    def b(self) -> float:
        kind, par = self.rule
        if kind == "power":
            return float(self.n**par)
        return float(par * math.log(self.n))

    @property
    def rho(self) -> float:
        r = 1.0 - self.beta * self.b / math.sqrt(self.n)
        if r <= 0:
            raise ValueError(f"rho_n = {r} not positive at n = {self.n}")
        if r >= 1.0 + 1e-9 and self.beta >= 0:
            log.warning("rho_n = %.4f >= 1 at n = %d", r, self.n)
        return r

    def arrival_rate(self, mu: float) -> float:
        return self.n * mu * self.rho

    @property
    def condition_value(self) -> float:
        """b_n^3 n^{1/b_n^2 - 1/2}: must tend to 0 along the regime."""
        b = self.b
        return b**3 * self.n ** (1.0 / b**2 - 0.5)

    def scale(self) -> float:
        """Centering scale b_n sqrt(n)."""
        return self.b * math.sqrt(self.n)


@dataclass(frozen=True)
class QueueTrace:
    """Event-level record of one simulated GI/GI/n path."""

    n: int
    b: float
    q0_count: int
    horizon: float
    seed_key: tuple
    arrival_times: np.ndarray  # exogenous arrivals, increasing
    tau_hat: np.ndarray  # service-start times after 0, nondecreasing
    eta: np.ndarray  # matched service durations for tau_hat
    eta0: np.ndarray  # residual durations of initially in-service customers
    event_times: np.ndarray  # all state-change times, increasing
    q_values: np.ndarray  # Q_n right after each event (integers)
    event_types: np.ndarray = None  # 0 = arrival, 1 = departure
    event_ids: np.ndarray = None  # customer index, in order of system entry

    def q_at(self, t) -> np.ndarray:
        """Right-continuous Q_n(t)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.event_times, t, side="right") - 1
        vals = np.concatenate([[self.q0_count], self.q_values])
        return vals[idx + 1]

    def arrivals_by(self, t) -> np.ndarray:
        return np.searchsorted(self.arrival_times, np.asarray(t, dtype=float), side="right")

    def starts_by(self, t) -> np.ndarray:
        return np.searchsorted(self.tau_hat, np.asarray(t, dtype=float), side="right")


def spawn_streams(seed: int, count: int) -> list[np.random.Generator]:
    """Independent splittable streams from a master seed, one per replication."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _interarrivals(rng: np.random.Generator, lam: float, count: int, family: str, shape: int) -> np.ndarray:
    if family == "exponential":
        return rng.exponential(1.0 / lam, size=count)
    if family == "erlang":
        return rng.gamma(shape, 1.0 / (lam * shape), size=count)
    raise ValueError(f"unsupported interarrival family {family!r}")


def simulate(
    pm: ModelParams,
    d: ServiceDist,
    sr: ScalingRegime,
    horizon: float,
    rng: np.random.Generator,
    arrival_family: str = "exponential",
    arrival_shape: int = 1,
    seed_key: tuple = (),
) -> QueueTrace:
    """Simulate one GI/GI/n FCFS path on [0, horizon].

    Q_n(0) = round(n + q0 * b_n * sqrt(n)) clamped at 0; initially in-service
    customers carry residual times from F0, everyone entering service after 0
    draws from F.  Ties are broken arrivals-first, then by customer index
    (they occur with probability zero but must be deterministic).
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    n = sr.n
    q0_count = max(0, int(round(n + pm.q0 * sr.scale())))
    lam = sr.arrival_rate(pm.mu)

    in_service = min(q0_count, n)
    eta0 = np.atleast_1d(d.sample_equilibrium(rng, size=in_service)) if in_service else np.empty(0)

    if horizon == 0:
        return QueueTrace(
            n=n, b=sr.b, q0_count=q0_count, horizon=0.0, seed_key=seed_key,
            arrival_times=np.empty(0), tau_hat=np.empty(0), eta=np.empty(0),
            eta0=eta0, event_times=np.empty(0), q_values=np.empty(0, dtype=np.int64),
            event_types=np.empty(0, dtype=np.int8), event_ids=np.empty(0, dtype=np.int64),
        )

    # pre-draw arrivals past the horizon
    chunk = max(64, int(lam * horizon * 1.2) + 64)
    gaps = _interarrivals(rng, lam, chunk, arrival_family, arrival_shape)
    arr = np.cumsum(gaps)
    while arr[-1] <= horizon:
        gaps = _interarrivals(rng, lam, chunk, arrival_family, arrival_shape)
        arr = np.concatenate([arr, arr[-1] + np.cumsum(gaps)])
    arrivals = arr[arr <= horizon]

    # departure heap: initially in-service customers
    dep_heap = [(float(r), i) for i, r in enumerate(eta0)]
    heapq.heapify(dep_heap)

    busy = in_service
    waiting = q0_count - in_service
    q = q0_count

    # initially queued customers (and later arrivals) draw service at service start
    svc_pool: list[float] = []

    def next_service() -> float:
        if not svc_pool:
            svc_pool.extend(d.sample(rng, size=256)[::-1])
        return svc_pool.pop()

    tau_hat: list[float] = []
    eta: list[float] = []
    ev_t: list[float] = []
    ev_q: list[int] = []
    ev_type: list[int] = []
    ev_id: list[int] = []

    # FCFS: the i-th post-0 service start goes to customer in_service + i
    # (customers numbered in order of system entry)
    assert waiting == 0 or busy == n

    ia = 0
    n_arr = len(arrivals)
    push, pop = heapq.heappush, heapq.heappop
    while True:
        t_arr = arrivals[ia] if ia < n_arr else math.inf
        t_dep = dep_heap[0][0] if dep_heap else math.inf
        if t_arr == math.inf and (t_dep == math.inf or t_dep > horizon):
            break
        if t_arr <= t_dep:  # arrivals first on ties
            t = t_arr
            cid = q0_count + ia
            ia += 1
            q += 1
            if busy < n:
                s = next_service()
                tau_hat.append(t)
                eta.append(s)
                busy += 1
                push(dep_heap, (t + s, in_service + len(tau_hat) - 1))
            else:
                waiting += 1
            ev_type.append(0)
            ev_id.append(cid)
        else:
            if t_dep > horizon:
                break
            t, cid = pop(dep_heap)
            q -= 1
            busy -= 1
            if waiting > 0:
                waiting -= 1
                s = next_service()
                tau_hat.append(t)
                eta.append(s)
                busy += 1
                push(dep_heap, (t + s, in_service + len(tau_hat) - 1))
            ev_type.append(1)
            ev_id.append(cid)
        ev_t.append(t)
        ev_q.append(q)

    return QueueTrace(
        n=n,
        b=sr.b,
        q0_count=q0_count,
        horizon=horizon,
        seed_key=seed_key,
        arrival_times=arrivals,
        tau_hat=np.array(tau_hat),
        eta=np.array(eta),
        eta0=eta0,
        event_times=np.array(ev_t),
        q_values=np.array(ev_q, dtype=np.int64),
        event_types=np.array(ev_type, dtype=np.int8),
        event_ids=np.array(ev_id, dtype=np.int64),
    )


def flow_balance_residuals(trace: QueueTrace) -> np.ndarray:
    """(Q(t)-n)^+ + Ahat(t) - (Q(0)-n)^+ - A(t) at every event time, exact integers."""
    if len(trace.event_times) == 0:
        return np.zeros(0, dtype=np.int64)
    t = trace.event_times
    qp = np.maximum(trace.q_values - trace.n, 0)
    ahat = trace.starts_by(t).astype(np.int64)
    a = trace.arrivals_by(t).astype(np.int64)
    q0p = max(trace.q0_count - trace.n, 0)
    return qp + ahat - q0p - a


@dataclass(frozen=True)
class DecompositionReport:
    """Pathwise decomposition terms on a uniform grid, plus the identity residual."""

    grid: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    X0: np.ndarray
    H: np.ndarray
    Theta: np.ndarray
    J: np.ndarray
    M: np.ndarray
    conv_Xplus: np.ndarray
    residual: np.ndarray
    quadrature_bound: float

    @property
    def sup_residual(self) -> float:
        return float(np.max(np.abs(self.residual))) if len(self.residual) else 0.0


def decomposition(trace: QueueTrace, d: ServiceDist, n_steps: int) -> DecompositionReport:
    """Rebuild the decomposition from event data and evaluate its defect.

    All terms except the two convolutions are computed exactly from events;
    the residual therefore isolates the trapezoid error of the convolutions,
    which shrinks like dt.  quadrature_bound is the a-priori total-variation
    bound on that error for this trace and grid.
    """
    mu = d.mu
    scale = trace.b * math.sqrt(trace.n)
    T = trace.horizon
    t = np.linspace(0.0, T, n_steps + 1) if T > 0 else np.zeros(1)
    dt = T / n_steps if T > 0 else 0.0

    X = (trace.q_at(t) - trace.n) / scale
    A = trace.arrivals_by(t)
    Y = (A / trace.n - mu * t) * math.sqrt(trace.n) / trace.b

    q0_surv = (
        np.sum(trace.eta0[None, :] > t[:, None], axis=1) if len(trace.eta0) else np.zeros(len(t))
    )
    X0 = (q0_surv / trace.n - (1.0 - d.eq_cdf(t))) * math.sqrt(trace.n) / trace.b

    fprime = d.pdf(t)
    H = Y - conv_trap(Y, fprime, dt) if T > 0 else np.zeros(1)

    # Theta: exact sum over service starts
    Theta = np.zeros(len(t))
    J = np.zeros(len(t))
    if len(trace.tau_hat):
        tau = trace.tau_hat[None, :]
        served = trace.eta[None, :]
        started = tau <= t[:, None]
        done = (tau + served) <= t[:, None]
        lagF = d.cdf(np.maximum(t[:, None] - tau, 0.0))
        Theta = -np.sum(started * (done.astype(float) - lagF), axis=1) / scale

        # J(t) = int_0^t U(t-x, x) / (1 - F(x)) dF(x), trapezoid in x
        surv = 1.0 - d.cdf(t)
        U_at = np.zeros((len(t), len(t)))  # U(t - x_j, x_j) on the grid
        for j, x in enumerate(t):
            cnt = trace.starts_by(x)
            if cnt == 0:
                continue
            etas = trace.eta[:cnt]
            xarg = np.maximum(t - x, 0.0)
            below = np.searchsorted(np.sort(etas), xarg, side="right")
            U_at[:, j] = (below - cnt * d.cdf(xarg)) / scale
        integrand = U_at * (fprime / surv)[None, :]
        for i in range(1, len(t)):
            tw = np.full(i + 1, dt)
            tw[0] = tw[-1] = dt / 2
            J[i] = float(tw @ integrand[i, : i + 1])

    conv_Xplus = conv_trap(np.maximum(X, 0.0), fprime, dt) if T > 0 else np.zeros(1)
    X0plus = max(trace.q0_count - trace.n, 0) / scale
    F = d.cdf(t)
    residual = X - ((1.0 - F) * X0plus + X0 + conv_Xplus + H + Theta)

    def tv(vals):
        return float(np.sum(np.abs(np.diff(vals))))

    supf = float(np.max(fprime))
    tvf = tv(fprime)
    bound = dt * (
        supf * tv(Y) + float(np.max(np.abs(Y))) * tvf
        + supf * tv(np.maximum(X, 0.0)) + float(np.max(np.abs(X))) * tvf
    )
    return DecompositionReport(
        grid=t, X=X, Y=Y, X0=X0, H=H, Theta=Theta, J=J, M=J - Theta,
        conv_Xplus=conv_Xplus, residual=residual, quadrature_bound=bound,
    )


def lln_sup_stat(trace: QueueTrace, mu: float, t_max: float) -> float:
    """Exact sup over [0, t_max] of |Ahat(s)/n - mu s|."""
    tau = trace.tau_hat[trace.tau_hat <= t_max]
    n = trace.n
    m = len(tau)
    if m == 0:
        return mu * t_max
    i = np.arange(1, m + 1)
    cand = np.abs(i / n - mu * tau)  # just after each jump
    cand_pre = np.abs((i - 1) / n - mu * tau)  # just before each jump
    tail = abs(m / n - mu * t_max)
    head = mu * tau[0]
    return float(max(cand.max(), cand_pre.max(), tail, head))


@dataclass(frozen=True)
class LLNReport:
    stats: dict  # n -> np.ndarray of per-replication sup statistics
    percentile: float

    def percentiles(self) -> dict:
        return {n: float(np.percentile(s, self.percentile)) for n, s in self.stats.items()}

    @property
    def monotone_decreasing(self) -> bool:
        p = [v for _, v in sorted(self.percentiles().items())]
        return all(b < a for a, b in zip(p, p[1:]))


def lln_check(traces_by_n: dict, mu: float, t_max: float, percentile: float = 99.0) -> LLNReport:
    stats = {
        n: np.array([lln_sup_stat(tr, mu, t_max) for tr in traces])
        for n, traces in traces_by_n.items()
    }
    return LLNReport(stats=stats, percentile=percentile)


def _wilson(hits: int, reps: int, z: float = 1.96) -> tuple[float, float]:
    p = hits / reps
    denom = 1 + z**2 / reps
    centre = (p + z**2 / (2 * reps)) / denom
    half = z * math.sqrt(p * (1 - p) / reps + z**2 / (4 * reps**2)) / denom
    return centre - half, centre + half


@dataclass(frozen=True)
class TailRow:
    n: int
    b: float
    reps: int
    hits: int
    p_hat: float | None
    wilson: tuple | None
    slope: float | None  # -ln p_hat / b_n^2
    censored: bool


def mc_tail(
    pm: ModelParams,
    d: ServiceDist,
    regimes: list[ScalingRegime],
    event: dict,
    reps: int,
    seed: int,
    horizon: float,
    arrival_family: str = "exponential",
    arrival_shape: int = 1,
) -> list[TailRow]:
    """Monte Carlo tail probabilities under the scaling ladder.

    event: {"kind": "sup" | "terminal", "t": time, "a": level}.  A trend
    diagnostic only: the regime's limiting constants are far beyond what naive
    Monte Carlo can certify, so no threshold ties the estimates to the rate
    function.
    """
    kind, t_ev, a = event["kind"], float(event["t"]), float(event["a"])
    if kind not in ("sup", "terminal"):
        raise ValueError(f"unknown event kind {kind!r}")
    rows = []
    for ridx, sr in enumerate(regimes):
        streams = spawn_streams(seed + ridx, reps)
        hits = 0
        for rep, rng in enumerate(streams):
            tr = simulate(
                pm, d, sr, horizon, rng,
                arrival_family=arrival_family, arrival_shape=arrival_shape,
                seed_key=(seed + ridx, rep),
            )
            scale = sr.scale()
            if kind == "terminal":
                x = (int(tr.q_at(t_ev)) - sr.n) / scale
                hit = x >= a
            else:
                mask = tr.event_times <= t_ev
                vals = (tr.q_values[mask] - sr.n) / scale
                x0 = (tr.q0_count - sr.n) / scale
                hit = max([x0, *vals.tolist()]) >= a
            hits += bool(hit)
        if hits == 0:
            rows.append(TailRow(sr.n, sr.b, reps, 0, None, None, None, censored=True))
        else:
            p = hits / reps
            rows.append(
                TailRow(
                    sr.n, sr.b, reps, hits, p, _wilson(hits, reps),
                    -math.log(p) / sr.b**2, censored=False,
                )
            )
    return rows
