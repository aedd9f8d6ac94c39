"""Random instances, channel models, alignment checks and parameter sweeps."""

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .problem import NetworkInstance, build_affine_system
from .rank_search import SOLVERS, extract_beamformers, minimize_rank
from .solvers import SolverOptions

__all__ = [
    "MODELS",
    "PATHLOSS_NOISE",
    "CSV_COLUMNS",
    "ChannelRealization",
    "SweepConfig",
    "SweepResult",
    "random_topology",
    "sample_channels",
    "pathloss_db",
    "verify_alignment",
    "interference_leakage",
    "sum_rate",
    "run_sweep",
    "sweep_solver_options",
]

MODELS = ("generic-gaussian", "pathloss-rayleigh")
# -120 dB relative to unit power
PATHLOSS_NOISE = 1e-12
GENERIC_NOISE = 1.0
CSV_COLUMNS = (
    "sweep_var",
    "value",
    "solver",
    "trial",
    "rank",
    "dof",
    "residual",
    "leakage",
    "sum_rate",
    "iters",
    "seconds",
)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Channel gains ``h[k, j]`` from transmitter ``j`` to receiver ``k``.

    Entries off the edge set are exactly zero.
    """

    h: np.ndarray
    model: str
    noise: float
    edges: frozenset

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError(f"channel matrix must be square, got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ValueError("channel gains must be finite")
        if self.model not in MODELS:
            raise ValueError(f"unknown channel model {self.model!r}")
        if not self.noise > 0:
            raise ValueError("noise variance must be positive")
        mask = np.zeros(h.shape, dtype=bool)
        for k, j in self.edges:
            mask[k, j] = True
        if np.any(h[~mask] != 0):
            raise ValueError("channel gains must vanish off the edge set")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)


def random_topology(K, p, q, d=1, seed=None):
    """Random connectivity and message sharing.

    Off-diagonal links appear with probability `p` and transmitter ``j``
    holds message ``i != j`` with probability `q`; diagonal links and own
    messages are always present. The uniforms are drawn before thresholding,
    so one seed gives nested edge and sharing sets as `p` and `q` grow.
    """
    if not (0 <= p <= 1 and 0 <= q <= 1):
        raise ValueError(f"p and q must lie in [0, 1], got p={p}, q={q}")
    rng = np.random.default_rng(seed)
    u_edge = rng.random((K, K))
    u_share = rng.random((K, K))
    edges = [(k, j) for k in range(K) for j in range(K) if k == j or u_edge[k, j] < p]
    sharing = [{i for i in range(K) if i == j or u_share[j, i] < q} for j in range(K)]
    return NetworkInstance.from_lists(K, d, edges, sharing)


def pathloss_db(distance_km):
    """Path loss ``128.1 + 37.6 log10(d)`` in dB for distance in km."""
    return 128.1 + 37.6 * np.log10(distance_km)


def sample_channels(inst, model="generic-gaussian", seed=None):
    """Draw channel gains on the edge set of `inst`.

    ``generic-gaussian``: ``h ~ CN(0, 1)`` with unit noise variance.
    ``pathloss-rayleigh``: ``h = 10^(-L(d)/20) c`` with ``c ~ CN(0, 1)``,
    ``d ~ U[0.1, 0.2]`` km per link, and noise variance ``1e-12``.
    """
    if model not in MODELS:
        raise ValueError(f"unknown channel model {model!r}; choose from {MODELS}")
    K = inst.K
    rng = np.random.default_rng(seed)
    c = (rng.standard_normal((K, K)) + 1j * rng.standard_normal((K, K))) / np.sqrt(2)
    if model == "generic-gaussian":
        h, noise = c, GENERIC_NOISE
    else:
        dist = rng.uniform(0.1, 0.2, size=(K, K))
        h, noise = 10 ** (-pathloss_db(dist) / 20) * c, PATHLOSS_NOISE
    mask = np.zeros((K, K), dtype=bool)
    for k, j in inst.edges:
        mask[k, j] = True
    return ChannelRealization(np.where(mask, h, 0), model, noise, inst.edges)


def _serving(inst, k, i):
    """Transmitters that reach receiver `k` and hold message `i`."""
    return [j for j in range(inst.K) if (k, j) in inst.edges and i in inst.sharing[j]]


def verify_alignment(inst, ch, bf, tol=1e-6):
    """Check the channel-dependent alignment conditions.

    For every receiver ``k`` the combined desired term
    ``D_k = sum_j h_kj U_k^H V_jk`` must satisfy
    ``|det D_k| > tol * s_k^{d_k}`` with ``s_k = sum_j |h_kj| ||U_k|| ||V_jk||``,
    and every interfering term ``h_kj U_k^H V_ji`` (``i != k``) must have
    norm below ``tol * |h_kj| ||U_k|| ||V_j||``, where ``||V_j||`` is the
    total precoder norm of transmitter ``j``. Checking each interfering term
    separately implies the summed condition.
    """
    power = {j: np.sqrt(bf.transmitter_power(j)) for j in range(inst.K)}
    for k in range(inst.K):
        Uk = bf.receive[k]
        nu = np.linalg.norm(Uk)
        D = np.zeros((inst.d[k], inst.d[k]), dtype=complex)
        scale = 0.0
        for j in _serving(inst, k, k):
            V = bf.precoders[(j, k)]
            D += ch.h[k, j] * (Uk.conj().T @ V)
            scale += abs(ch.h[k, j]) * nu * np.linalg.norm(V)
        if not abs(np.linalg.det(D)) > tol * scale ** inst.d[k]:
            return False
        for i in range(inst.K):
            if i == k:
                continue
            for j in _serving(inst, k, i):
                term = np.linalg.norm(ch.h[k, j] * (Uk.conj().T @ bf.precoders[(j, i)]))
                if term > tol * abs(ch.h[k, j]) * nu * power[j]:
                    return False
    return True


def interference_leakage(inst, ch, bf):
    """``sum ||M M^H||_F^2`` over interfering terms ``M = h_kj U_k^H V_ji``."""
    total = 0.0
    for k in range(inst.K):
        Uh = bf.receive[k].conj().T
        for i in range(inst.K):
            if i == k:
                continue
            for j in _serving(inst, k, i):
                M = ch.h[k, j] * (Uh @ bf.precoders[(j, i)])
                total += float(np.linalg.norm(M @ M.conj().T) ** 2)
    return total


def sum_rate(inst, ch, bf, P=1.0):
    """Sum rate per channel use in bits, with precoders scaled by ``sqrt(P)``.

    ``SINR_k = |sum_j h_kj u_k^H v_jk|^2 /
    (sum_{i != k} |sum_j h_kj u_k^H v_ji|^2 + ||u_k||^2 noise)`` and the
    rate is ``(1/r) sum_k log2(1 + SINR_k)``.
    """
    if any(dk != 1 for dk in inst.d):
        raise ValueError("sum rate is defined for single-stream instances only")
    if not P > 0:
        raise ValueError("transmit power must be positive")
    amp = np.sqrt(P)
    total = 0.0
    for k in range(inst.K):
        u = bf.receive[k][:, 0]

        def combined(i):
            return amp * sum(ch.h[k, j] * np.vdot(u, bf.precoders[(j, i)][:, 0]) for j in _serving(inst, k, i))

        signal = abs(combined(k)) ** 2
        interference = sum(abs(combined(i)) ** 2 for i in range(inst.K) if i != k)
        noise = float(np.vdot(u, u).real) * ch.noise
        total += math.log2(1.0 + signal / (interference + noise))
    return total / bf.r


def sweep_solver_options():
    """Per-solver budgets for sweeps: progress-stall exits sized so that a
    search at ten users finishes in seconds.

    An RCG iteration costs a small fraction of an RTR or AltMin iteration,
    so it gets a proportionally longer budget.
    """
    return {
        "rtr": SolverOptions(stall_window=15, tcg_max_inner=100, tcg_theta=0.5),
        "rcg": SolverOptions(max_iters=2500, stall_window=150),
        "altmin": SolverOptions(stall_window=5),
    }


@dataclass
class SweepConfig:
    """One-dimensional parameter sweep.

    `var` names the swept quantity (``p``, ``q`` or ``P``); the other two
    take the fixed values given here. `opts` maps solver names to option
    overrides (dicts or SolverOptions) applied on top of
    :func:`sweep_solver_options`.
    """

    K: int
    var: str
    values: tuple
    d: int = 1
    p: float = 0.3
    q: float = 1.0
    P: float = 1.0
    trials: int = 50
    solvers: tuple = SOLVERS
    restarts: int = 3
    seed: int = 0
    model: str = "generic-gaussian"
    opts: dict = field(default_factory=dict)
    timing: bool = False

    def __post_init__(self):
        self.values = tuple(float(v) for v in self.values)
        self.solvers = tuple(self.solvers)
        if self.var not in ("p", "q", "P"):
            raise ValueError(f"sweep variable must be p, q or P, got {self.var!r}")
        if not self.values:
            raise ValueError("sweep needs at least one grid value")
        if self.K < 1 or self.d < 1:
            raise ValueError("K and d must be positive")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        for name in ("p", "q"):
            vals = self.values if self.var == name else (getattr(self, name),)
            if any(not 0 <= v <= 1 for v in vals):
                raise ValueError(f"{name} values must lie in [0, 1]")
        pw = self.values if self.var == "P" else (self.P,)
        if any(not v > 0 for v in pw):
            raise ValueError("transmit power must be positive")
        unknown = set(self.solvers) - set(SOLVERS)
        if unknown:
            raise ValueError(f"unknown solver(s) {sorted(unknown)}; choose from {SOLVERS}")
        if self.model not in MODELS:
            raise ValueError(f"unknown channel model {self.model!r}")
        for name in self.opts:
            if name not in SOLVERS:
                raise ValueError(f"options given for unknown solver {name!r}")

    def solver_options(self, solver):
        base = sweep_solver_options()[solver]
        extra = self.opts.get(solver, {})
        if isinstance(extra, SolverOptions):
            return extra
        return SolverOptions.from_dict({**base.to_dict(), **extra})

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown sweep field(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self):
        out = asdict(self)
        out["opts"] = {k: (v.to_dict() if isinstance(v, SolverOptions) else v) for k, v in self.opts.items()}
        out["values"] = list(self.values)
        out["solvers"] = list(self.solvers)
        return out


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list
    summary: list

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow(["" if row[c] is None else _fmt(row[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def summary_json(self):
        return json.dumps({"config": self.config.to_dict(), "points": self.summary}, indent=2, sort_keys=True)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _trial_seeds(seed, trial):
    """Topology, channel and solver seeds for one trial.

    They do not depend on the grid value or the solver, so every grid point
    and solver sees the same random draws (common random numbers).
    """
    ss = np.random.SeedSequence([int(seed), int(trial)])
    topo, chan, solve = ss.spawn(3)
    return topo, chan, int(solve.generate_state(1)[0])


def _run_trial(cfg, value, trial):
    """All solvers on one (grid value, trial); returns a list of row dicts."""
    params = {"p": cfg.p, "q": cfg.q, "P": cfg.P}
    powers = [params["P"]]
    if cfg.var == "P":
        powers = list(cfg.values)
    else:
        params[cfg.var] = value
    topo_seed, chan_seed, solve_seed = _trial_seeds(cfg.seed, trial)
    inst = random_topology(cfg.K, params["p"], params["q"], cfg.d, topo_seed)
    system = build_affine_system(inst)
    ch = sample_channels(inst, cfg.model, chan_seed)
    rows = []
    for solver in cfg.solvers:
        start = time.perf_counter()
        try:
            res = minimize_rank(
                inst,
                solver,
                cfg.solver_options(solver),
                restarts=cfg.restarts,
                seed=solve_seed,
                system=system,
                stop_early=True,
            )
        except Exception as exc:  # recorded, not fatal
            res, error = None, repr(exc)
        else:
            error = None
        seconds = time.perf_counter() - start
        base = {"solver": solver, "trial": trial, "rank": None, "dof": None, "residual": None}
        base.update({"leakage": None, "iters": None, "seconds": round(seconds, 3) if cfg.timing else None})
        rates = [None] * len(powers)
        if res is not None and res.success:
            bf = extract_beamformers(res.X, inst, res.rank)
            base.update(
                rank=res.rank,
                dof=min(inst.d) / res.rank,
                residual=res.residual,
                leakage=interference_leakage(inst, ch, bf),
                iters=res.iterations,
            )
            if cfg.d == 1:
                rates = [sum_rate(inst, ch, bf, P) for P in powers]
        elif res is not None:
            base["iters"] = res.iterations
        if error is not None:
            base["error"] = error
        if cfg.var == "P":
            for P, rate in zip(powers, rates):
                rows.append({"sweep_var": "P", "value": P, **base, "sum_rate": rate})
        else:
            rows.append({"sweep_var": cfg.var, "value": value, **base, "sum_rate": rates[0]})
    return rows


def _trial_task(args):
    cfg, value, trial = args
    return _run_trial(cfg, value, trial)


def _mean_stderr(xs):
    xs = [x for x in xs if x is not None]
    if not xs:
        return None, None
    mean = float(np.mean(xs))
    if len(xs) < 2:
        return mean, None
    return mean, float(np.std(xs, ddof=1) / np.sqrt(len(xs)))


def _summarize(cfg, rows):
    summary = []
    for value in cfg.values:
        for solver in cfg.solvers:
            sel = [r for r in rows if r["value"] == value and r["solver"] == solver]
            point = {"sweep_var": cfg.var, "value": value, "solver": solver}
            point["trials"] = len(sel)
            point["failures"] = sum(r["rank"] is None for r in sel)
            for key in ("dof", "rank", "residual", "leakage", "sum_rate", "iters"):
                mean, se = _mean_stderr([r[key] for r in sel])
                point[f"{key}_mean"] = mean
                point[f"{key}_stderr"] = se
            summary.append(point)
    return summary


def run_sweep(cfg, jobs=1):
    """Run every (grid value, trial) and collect per-trial rows and a summary.

    Output is independent of `jobs`: rows are ordered by grid value, trial
    and solver regardless of completion order. For a power sweep the
    topology and beamformers do not depend on ``P``, so each trial is solved
    once and evaluated at every power.
    """
    grid = [None] if cfg.var == "P" else list(cfg.values)
    tasks = [(cfg, value, trial) for value in grid for trial in range(cfg.trials)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_task, tasks))
    else:
        results = [_trial_task(t) for t in tasks]
    rows = [row for chunk in results for row in chunk]
    order = {v: n for n, v in enumerate(cfg.values)}
    rank_solver = {s: n for n, s in enumerate(cfg.solvers)}
    rows.sort(key=lambda r: (order[r["value"]], r["trial"], rank_solver[r["solver"]]))
    return SweepResult(cfg, rows, _summarize(cfg, rows))
