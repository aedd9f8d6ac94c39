import json
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum


class Status(str, Enum):
    CONVERGED_GRADIENT = "converged-gradient"
    CONVERGED_COST = "converged-cost"
    MAX_ITERS = "max-iters"
    STALLED = "stalled"


@dataclass(frozen=True)
class SolverOptions:
    """Tuning knobs shared by the three solvers.

    Defaults follow common trust-region and line-search practice. JSON option
    files use the field names as keys; unknown keys are rejected.
    """

    max_iters: int = 500
    grad_tol: float = 1e-8
    cost_tol: float = 1e-16
    # Armijo backtracking
    armijo_c1: float = 1e-4
    armijo_backtrack: float = 0.5
    armijo_initial_step: float = 1.0
    armijo_max_backtracks: int = 30
    # conjugate gradient update: "hs" (Hestenes-Stiefel) or "none" (steepest descent)
    beta_rule: str = "hs"
    # trust region
    tr_delta0: float = 1.0
    tr_delta_max: float = 100.0
    tr_rho_accept: float = 0.1
    tr_rho_shrink: float = 0.25
    tr_rho_expand: float = 0.75
    tr_shrink_factor: float = 0.25
    tr_expand_factor: float = 2.0
    # truncated CG; None means 3 * N * r
    tcg_kappa: float = 0.1
    tcg_theta: float = 1.0
    tcg_max_inner: int | None = None
    # alternating minimization half-steps
    altmin_inner_iters: int = 100
    altmin_inner_tol_ratio: float = 1e-2
    # optional early exits, off by default: stop once f <= cost_target, or
    # report "stalled" when f fails to drop below stall_ratio times its value
    # stall_window iterations earlier
    cost_target: float | None = None
    stall_window: int | None = None
    stall_ratio: float = 0.5

    def __post_init__(self):
        if not 0 < self.armijo_c1 < 1:
            raise ValueError("armijo_c1 must lie in (0, 1)")
        if not 0 < self.armijo_backtrack < 1:
            raise ValueError("armijo_backtrack must lie in (0, 1)")
        if self.armijo_initial_step <= 0:
            raise ValueError("armijo_initial_step must be positive")
        if not 0 < self.tr_delta0 <= self.tr_delta_max:
            raise ValueError("need 0 < tr_delta0 <= tr_delta_max")
        if self.tcg_kappa <= 0 or self.tcg_theta <= 0:
            raise ValueError("tcg_kappa and tcg_theta must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.stall_window is not None and self.stall_window < 1:
            raise ValueError("stall_window must be a positive count")
        if not 0 < self.stall_ratio < 1:
            raise ValueError("stall_ratio must lie in (0, 1)")
        if self.beta_rule not in ("hs", "none"):
            raise ValueError(f"unknown beta_rule {self.beta_rule!r}")

    def early_exit(self, objective):
        """Status for an optional early exit given the objective trace, else None."""
        f = objective[-1]
        if self.cost_target is not None and f <= self.cost_target:
            return Status.CONVERGED_COST
        w = self.stall_window
        if w is not None and len(objective) > w and f > self.stall_ratio * objective[-1 - w]:
            return Status.STALLED
        return None

    def updated(self, **changes):
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown solver option(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)


@dataclass
class SolverReport:
    """Per-iteration traces of one solver run.

    All traces have ``iterations + 1`` entries; entry 0 describes the start
    point. `steps` holds the accepted step size (line-search solvers) or the
    trust-region radius in force at each iterate.
    """

    solver: str
    iterations: int = 0
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    status: Status = Status.MAX_ITERS
    wall_time: float = 0.0
    inner_iterations: int = 0

    def record(self, f, gn, step):
        self.objective.append(float(f))
        self.grad_norm.append(float(gn))
        self.steps.append(float(step))

    def to_dict(self):
        out = asdict(self)
        out["status"] = self.status.value
        return out
