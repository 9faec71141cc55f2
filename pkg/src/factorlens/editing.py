"""Expert edits to a fitted model: marginal effects, exclusion, ratio tuning.

Coefficients live in log-odds space; experts think in probability points.
The bridge is the average marginal effect (AME) of a factor: the change in
outcome probability when the factor flips 0 -> 1, averaged over every
configuration of the other factors.  Edits are expressed against AMEs and
solved back into coefficients:

  - exclude_factor zeroes a factor's main effect and drops its interactions,
    which removes its influence identically (not just on average);
  - calibrate_ratio re-optimizes all of theta so the target factor's AME is
    a chosen multiple of an anchor factor's, while holding the mean logit
    fixed and disturbing the remaining AMEs as little as possible.

Every edit yields an EditRecord whose pre-edit snapshot restores the exact
parameters, and models carry their edit history for replay and audit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache

import numpy as np

from .core import (
    MAX_FACTORS,
    DecisionParams,
    all_configs,
    design_matrix,
    feature_dim,
    params_from_vector,
    params_to_vector,
    sigmoid,
)
from .em import TrainedModel
from .errors import (
    DimensionError,
    InfeasibleEditError,
    LineageError,
    SolverNonConvergenceError,
    ValidationError,
)

EDIT_KINDS = ("exclude", "ratio", "manual-set", "revert")

# Constraints are driven to 1e-8 internally so the reported 1e-6 bound holds
# with margin even after the final exact re-evaluation.
CONSTRAINT_TOL_INTERNAL = 1e-8
CONSTRAINT_TOL_REPORTED = 1e-6
MAX_MAJOR_ITERATIONS = 500
WEIGHT_SUM_TOL = 1e-9
ANCHOR_FLOOR = 1e-12


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# --- weighting ---------------------------------------------------------------


def _as_distribution(weights, size: int, what: str) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (size,):
        raise DimensionError(f"{what} must have shape ({size},), got {w.shape}")
    if (w < 0).any():
        raise ValidationError(f"{what} has negative entries")
    if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOL:
        raise ValidationError(
            f"{what} must sum to 1 within {WEIGHT_SUM_TOL}, got {float(w.sum())!r}"
        )
    return w


def _complement_weights(weighting, n: int, k: int) -> np.ndarray:
    """Resolve a weighting argument into a distribution over the 2^(N-1)
    complements of factor k.

    None means uniform.  A vector of length 2^(N-1) is taken as-is (ordered
    like all_configs(n-1) over the non-k factors, ascending).  A vector of
    length 2^N is a distribution over full configurations and is marginalized
    over f_k.
    """
    m = 1 << (n - 1)
    if weighting is None:
        return np.full(m, 1.0 / m)
    w = np.asarray(weighting, dtype=float)
    if w.shape == (m,):
        return _as_distribution(w, m, "complement weighting")
    full = _as_distribution(w, 1 << n, "configuration weighting")
    configs = all_configs(n)
    others = [j for j in range(n) if j != k]
    index = configs[:, others].astype(int) @ (1 << np.arange(n - 1))
    marginal = np.zeros(m)
    np.add.at(marginal, index, full)
    return marginal


@lru_cache(maxsize=128)
def _complement_designs(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Design matrices over all complements of factor k, with f_k set to 1
    and to 0.  Complement row order matches all_configs(n-1) over the
    remaining factors in ascending id order."""
    comps = all_configs(n - 1)
    others = [j for j in range(n) if j != k]
    full = np.zeros((comps.shape[0], n))
    full[:, others] = comps
    f1 = full.copy()
    f1[:, k] = 1.0
    return design_matrix(f1), design_matrix(full)


# --- average marginal effects -------------------------------------------------


def _check_factor(params: DecisionParams, k) -> int:
    n = params.n
    if n > MAX_FACTORS:
        raise ValidationError(f"exhaustive enumeration capped at N={MAX_FACTORS}, got {n}")
    if not isinstance(k, (int, np.integer)) or not 0 <= int(k) < n:
        raise ValidationError(f"factor id must be in 0..{n - 1}, got {k!r}")
    return int(k)


def average_marginal_effect(params: DecisionParams, k, weighting=None) -> float:
    """Mean probability change when factor k flips 0 -> 1, over complements."""
    k = _check_factor(params, k)
    w = _complement_weights(weighting, params.n, k)
    x1, x0 = _complement_designs(params.n, k)
    theta = params_to_vector(params)
    return float(w @ (sigmoid(x1 @ theta) - sigmoid(x0 @ theta)))


def ame_gradient(params: DecisionParams, k, weighting=None) -> np.ndarray:
    """Analytic gradient of AME_k with respect to the packed theta vector.

    d/dtheta sigmoid(x.theta) = sigmoid'(x.theta) x, so the gradient is the
    weighted difference of sigmoid'-scaled design rows at f_k=1 and f_k=0.
    """
    k = _check_factor(params, k)
    w = _complement_weights(weighting, params.n, k)
    x1, x0 = _complement_designs(params.n, k)
    theta = params_to_vector(params)
    s1 = sigmoid(x1 @ theta)
    s0 = sigmoid(x0 @ theta)
    return x1.T @ (w * s1 * (1.0 - s1)) - x0.T @ (w * s0 * (1.0 - s0))


@dataclass(frozen=True)
class AmeReport:
    """Per-factor AMEs in probability points, with the enumeration context."""

    values: tuple[float, ...]
    enumeration_size: int
    weighting: str

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        for k, v in enumerate(self.values):
            if not -1.0 <= v <= 1.0:
                raise ValidationError(f"AME for factor {k} outside [-1, 1]: {v}")

    def to_dict(self) -> dict:
        return {
            "values": list(self.values),
            "enumeration_size": self.enumeration_size,
            "weighting": self.weighting,
        }


def ame_report(params: DecisionParams, weighting=None,
               weighting_label: str | None = None) -> AmeReport:
    values = tuple(
        average_marginal_effect(params, k, weighting) for k in range(params.n)
    )
    if weighting_label is None:
        weighting_label = "uniform" if weighting is None else "custom"
    return AmeReport(
        values=values,
        enumeration_size=1 << (params.n - 1),
        weighting=weighting_label,
    )


# --- edit records ---------------------------------------------------------------


@dataclass(frozen=True)
class RatioConstraint:
    """Expert requirement AME_target = rho * AME_anchor."""

    anchor: int
    target: int
    rho: float

    def __post_init__(self):
        if self.anchor == self.target:
            raise ValidationError("anchor and target factors must differ")
        if self.anchor < 0 or self.target < 0:
            raise ValidationError("factor ids must be non-negative")
        if not self.rho > 0:
            raise ValidationError(f"rho must be > 0, got {self.rho}")

    def to_dict(self) -> dict:
        return {"anchor": self.anchor, "target": self.target, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "RatioConstraint":
        return cls(anchor=d["anchor"], target=d["target"], rho=d["rho"])


@dataclass(frozen=True)
class EditRecord:
    """One applied edit: what changed, how exactly, and how to undo it."""

    edit_id: str
    kind: str
    pre_params: DecisionParams
    post_params: DecisionParams
    constraint_residuals: dict[str, float]
    side_effect: float
    timestamp: str
    author: str
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise ValidationError(f"edit kind must be one of {EDIT_KINDS}, got {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "edit_id": self.edit_id,
            "kind": self.kind,
            "pre_params": self.pre_params.to_dict(),
            "post_params": self.post_params.to_dict(),
            "constraint_residuals": dict(self.constraint_residuals),
            "side_effect": self.side_effect,
            "timestamp": self.timestamp,
            "author": self.author,
            "details": dict(self.details),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EditRecord":
        return cls(
            edit_id=d["edit_id"],
            kind=d["kind"],
            pre_params=DecisionParams.from_dict(d["pre_params"]),
            post_params=DecisionParams.from_dict(d["post_params"]),
            constraint_residuals=dict(d["constraint_residuals"]),
            side_effect=d["side_effect"],
            timestamp=d["timestamp"],
            author=d["author"],
            details=dict(d.get("details", {})),
        )


def _edit_id(kind: str, pre: DecisionParams, post: DecisionParams,
             details: dict, position: int) -> str:
    """Deterministic id: same edit at the same history position hashes the
    same on replay (timestamps deliberately excluded)."""
    blob = json.dumps(
        {
            "kind": kind,
            "pre": pre.to_dict(),
            "post": post.to_dict(),
            "details": details,
            "position": position,
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _side_effect_metric(pre: DecisionParams, post: DecisionParams,
                        touched: set[int], weighting=None) -> float:
    return float(
        sum(
            (average_marginal_effect(post, j, weighting)
             - average_marginal_effect(pre, j, weighting)) ** 2
            for j in range(pre.n)
            if j not in touched
        )
    )


def _make_record(model: TrainedModel, kind: str, post: DecisionParams,
                 residuals: dict, side_effect: float, author: str,
                 details: dict) -> EditRecord:
    return EditRecord(
        edit_id=_edit_id(kind, model.params, post, details, len(model.edit_history)),
        kind=kind,
        pre_params=model.params,
        post_params=post,
        constraint_residuals=residuals,
        side_effect=side_effect,
        timestamp=_now(),
        author=author,
        details=details,
    )


# --- exclusion -------------------------------------------------------------------


def exclude_factor(model: TrainedModel, k,
                   author: str = "expert") -> tuple[TrainedModel, EditRecord]:
    """Remove factor k's influence exactly: beta_k = 0 and every interaction
    involving k dropped.  The logit then contains no term reading f_k, so
    predictions are bitwise identical across its toggle."""
    k = _check_factor(model.params, k)
    pre = model.params
    beta = list(pre.beta)
    beta[k] = 0.0
    gamma = {pair: v for pair, v in pre.gamma.items() if k not in pair}
    post = DecisionParams(alpha=pre.alpha, beta=tuple(beta), gamma=gamma)
    record = _make_record(
        model, "exclude", post,
        residuals={"ame_excluded": average_marginal_effect(post, k)},
        side_effect=_side_effect_metric(pre, post, touched={k}),
        author=author,
        details={"factor": k},
    )
    return model.with_params(post, record.to_dict()), record


def effect_reduction_ratio(model_before: TrainedModel, model_after: TrainedModel,
                           k) -> float:
    """1 - (mean |deltaP| after) / (mean |deltaP| before) over complements.

    |deltaP| rather than signed deltaP, so opposite-sign swings cannot cancel
    into a spurious "no effect".
    """
    if model_before.factor_set != model_after.factor_set:
        raise ValidationError("effect reduction ratio needs models over the same factors")
    k = _check_factor(model_before.params, k)
    x1, x0 = _complement_designs(model_before.params.n, k)

    def mean_abs_delta(params: DecisionParams) -> float:
        theta = params_to_vector(params)
        return float(np.abs(sigmoid(x1 @ theta) - sigmoid(x0 @ theta)).mean())

    before = mean_abs_delta(model_before.params)
    if before == 0.0:
        raise ValidationError(
            f"effect reduction ratio undefined: factor {k} has no effect pre-edit"
        )
    return 1.0 - mean_abs_delta(model_after.params) / before


# --- ratio calibration ------------------------------------------------------------


def _ratio_residuals(theta: np.ndarray, constraint: RatioConstraint, n: int,
                     weighting, mean_features: np.ndarray,
                     mean_logit_0: float) -> tuple[float, float]:
    params = params_from_vector(theta, n)
    ratio = (
        average_marginal_effect(params, constraint.target, weighting)
        - constraint.rho * average_marginal_effect(params, constraint.anchor, weighting)
    )
    return ratio, float(mean_features @ theta) - mean_logit_0


def calibrate_ratio(model: TrainedModel, constraint: RatioConstraint,
                    weighting=None, author: str = "expert",
                    ) -> tuple[TrainedModel, EditRecord]:
    """Re-optimize theta so AME_target = rho * AME_anchor.

    Minimizes the sum of squared AME shifts over the untouched factors
    subject to (a) the ratio constraint and (b) the mean logit over the
    weighting distribution staying fixed.  Solved by sequential quadratic
    steps on a Gauss-Newton model with an l1 merit line search; a quadratic
    penalty pass plus Newton constraint restoration covers the rare stalls.
    """
    n = model.params.n
    i = _check_factor(model.params, constraint.anchor)
    j = _check_factor(model.params, constraint.target)
    if weighting is not None:
        weighting = _as_distribution(weighting, 1 << n, "configuration weighting")

    d = feature_dim(n)
    w0 = params_to_vector(model.params)
    config_weights = (
        np.full(1 << n, 1.0 / (1 << n)) if weighting is None else weighting
    )
    # E[z] is linear in theta, so this constraint is exactly a fixed dot product.
    mean_features = config_weights @ design_matrix(all_configs(n))
    mean_logit_0 = float(mean_features @ w0)

    baseline = np.array(
        [average_marginal_effect(model.params, q, weighting) for q in range(n)]
    )
    if abs(baseline[i]) < ANCHOR_FLOOR:
        raise InfeasibleEditError(
            f"anchor factor {i} has AME {baseline[i]!r}; the ratio constraint is ill-posed"
        )
    untouched = [q for q in range(n) if q not in (i, j)]

    def residuals(theta: np.ndarray) -> tuple[float, float]:
        return _ratio_residuals(theta, constraint, n, weighting,
                                mean_features, mean_logit_0)

    def objective(theta: np.ndarray) -> float:
        params = params_from_vector(theta, n)
        return float(
            sum(
                (average_marginal_effect(params, q, weighting) - baseline[q]) ** 2
                for q in untouched
            )
        )

    start_ratio, start_mean = residuals(w0)
    if max(abs(start_ratio), abs(start_mean)) < 1e-12:
        # feasible start with objective exactly 0: already optimal
        record = _make_record(
            model, "ratio", model.params,
            residuals={"ratio": start_ratio, "mean_logit": start_mean},
            side_effect=0.0, author=author,
            details=constraint.to_dict() | {"iterations": 0},
        )
        return model.with_params(model.params, record.to_dict()), record

    theta, iterations, best_residual = _solve_ratio_edit(
        w0, constraint, n, weighting, mean_features, mean_logit_0,
        baseline, untouched,
    )

    post = params_from_vector(theta, n)
    final_ratio, final_mean = residuals(theta)
    worst = max(abs(final_ratio), abs(final_mean))
    if worst > CONSTRAINT_TOL_REPORTED:
        raise SolverNonConvergenceError(
            f"ratio edit stopped at constraint residual {worst:.3e} "
            f"(> {CONSTRAINT_TOL_REPORTED}) after {iterations} iterations",
            best_residual=min(worst, best_residual),
        )
    anchor_ame = average_marginal_effect(post, i, weighting)
    if abs(anchor_ame) < ANCHOR_FLOOR:
        raise InfeasibleEditError(
            f"anchor factor {i} AME collapsed to {anchor_ame!r} during the edit; "
            "the ratio constraint is ill-posed"
        )
    record = _make_record(
        model, "ratio", post,
        residuals={"ratio": final_ratio, "mean_logit": final_mean},
        side_effect=objective(theta),
        author=author,
        details=constraint.to_dict() | {"iterations": iterations},
    )
    return model.with_params(post, record.to_dict()), record


def _solve_ratio_edit(w0: np.ndarray, constraint: RatioConstraint, n: int,
                      weighting, mean_features: np.ndarray, mean_logit_0: float,
                      baseline: np.ndarray, untouched: list[int],
                      ) -> tuple[np.ndarray, int, float]:
    """Equality-constrained least squares on AME shifts.

    Returns (theta, major iterations used, best constraint residual seen).
    Raises SolverNonConvergenceError only from the caller after exact
    re-evaluation; here we track progress and fall back to a quadratic
    penalty + constraint-restoration pass when SQP stalls.
    """
    i, j, rho = constraint.anchor, constraint.target, constraint.rho
    d = w0.shape[0]

    def parts(theta: np.ndarray):
        """Objective residual vector/Jacobian and constraint values/Jacobian."""
        params = params_from_vector(theta, n)
        r = np.array(
            [average_marginal_effect(params, q, weighting) - baseline[q]
             for q in untouched]
        )
        jac_r = (
            np.stack([ame_gradient(params, q, weighting) for q in untouched])
            if untouched else np.zeros((0, d))
        )
        c = np.array([
            average_marginal_effect(params, j, weighting)
            - rho * average_marginal_effect(params, i, weighting),
            float(mean_features @ theta) - mean_logit_0,
        ])
        jac_c = np.stack([
            ame_gradient(params, j, weighting) - rho * ame_gradient(params, i, weighting),
            mean_features,
        ])
        return r, jac_r, c, jac_c

    def merit(theta: np.ndarray, nu: float) -> float:
        params = params_from_vector(theta, n)
        f = sum(
            (average_marginal_effect(params, q, weighting) - baseline[q]) ** 2
            for q in untouched
        )
        c_ratio = (
            average_marginal_effect(params, j, weighting)
            - rho * average_marginal_effect(params, i, weighting)
        )
        c_mean = float(mean_features @ theta) - mean_logit_0
        return float(f + nu * (abs(c_ratio) + abs(c_mean)))

    theta = w0.copy()
    damping = 1e-6
    nu = 1.0
    best = np.inf
    best_theta = theta.copy()
    iteration = 0

    for iteration in range(1, MAX_MAJOR_ITERATIONS + 1):
        r, jac_r, c, jac_c = parts(theta)
        grad_f = 2.0 * jac_r.T @ r
        cmax = float(np.abs(c).max())
        if cmax < best:
            best, best_theta = cmax, theta.copy()

        # KKT step on the Gauss-Newton model with Levenberg damping
        accepted = False
        for _ in range(12):
            B = 2.0 * jac_r.T @ jac_r + damping * np.eye(d)
            kkt = np.zeros((d + 2, d + 2))
            kkt[:d, :d] = B
            kkt[:d, d:] = jac_c.T
            kkt[d:, :d] = jac_c
            rhs = np.concatenate([-grad_f, -c])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            p, lam = sol[:d], sol[d:]
            nu = max(nu, 10.0 * float(np.abs(lam).max()) + 1.0)
            m0 = merit(theta, nu)
            # directional derivative of the merit along p
            descent = float(grad_f @ p) - nu * float(np.abs(c).sum())
            step = 1.0
            for _ in range(40):
                trial = theta + step * p
                if merit(trial, nu) <= m0 + 1e-4 * step * min(descent, 0.0):
                    theta = trial
                    accepted = True
                    break
                step *= 0.5
            if accepted:
                damping = max(damping / 3.0, 1e-10)
                break
            damping *= 10.0
        if not accepted:
            break  # stalled; penalty fallback below

        # converged: feasible at the new iterate and the accepted step was tiny
        _, _, c_new, _ = parts(theta)
        c_new_max = float(np.abs(c_new).max())
        if c_new_max <= CONSTRAINT_TOL_INTERNAL \
                and float(np.linalg.norm(step * p)) <= 1e-9:
            return theta, iteration, min(best, c_new_max)

    theta = _penalty_fallback(best_theta, parts, untouched, baseline, n, weighting)
    theta = _restore_constraints(theta, parts)
    _, _, c, _ = parts(theta)
    return theta, iteration, float(np.abs(c).max())


def _penalty_fallback(theta: np.ndarray, parts, untouched, baseline, n, weighting,
                      ) -> np.ndarray:
    """Escalating quadratic penalty with backtracking gradient steps."""
    theta = theta.copy()
    for penalty in (1e2, 1e4, 1e6, 1e8):
        for _ in range(200):
            r, jac_r, c, jac_c = parts(theta)
            grad = 2.0 * jac_r.T @ r + 2.0 * penalty * jac_c.T @ c
            value = float(r @ r + penalty * c @ c)
            gnorm = float(np.linalg.norm(grad))
            if gnorm < 1e-12:
                break
            step = 1.0 / (1.0 + gnorm)
            improved = False
            for _ in range(30):
                trial = theta - step * grad
                r_t, _, c_t, _ = parts(trial)
                if float(r_t @ r_t + penalty * c_t @ c_t) < value:
                    theta = trial
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
    return theta


def _restore_constraints(theta: np.ndarray, parts) -> np.ndarray:
    """Gauss-Newton on the constraints alone: minimum-norm steps onto the
    feasible manifold, quadratically convergent from a near-feasible point
    and second-order small in the objective."""
    theta = theta.copy()
    for _ in range(50):
        _, _, c, jac_c = parts(theta)
        if float(np.abs(c).max()) <= CONSTRAINT_TOL_INTERNAL:
            break
        gram = jac_c @ jac_c.T
        try:
            step = jac_c.T @ np.linalg.solve(gram, -c)
        except np.linalg.LinAlgError:
            break
        theta = theta + step
    return theta


# --- manual set and revert ----------------------------------------------------------


def manual_set(model: TrainedModel, params: DecisionParams,
               author: str = "expert") -> tuple[TrainedModel, EditRecord]:
    """Replace coefficients wholesale (the escape hatch for direct expert
    input); recorded with the same reversible bookkeeping as solver edits."""
    if params.n != model.params.n:
        raise DimensionError(
            f"replacement params are for N={params.n}, model has N={model.params.n}"
        )
    record = _make_record(
        model, "manual-set", params,
        residuals={},
        side_effect=_side_effect_metric(model.params, params, touched=set()),
        author=author,
        details={},
    )
    return model.with_params(params, record.to_dict()), record


def revert(model: TrainedModel, edit: EditRecord, author: str = "expert") -> TrainedModel:
    """Restore the exact pre-edit parameters; the reversal is itself logged."""
    entries = {e.get("edit_id"): e for e in model.edit_history}
    if edit.edit_id not in entries:
        raise LineageError(f"edit {edit.edit_id} is not in this model's lineage")
    for e in model.edit_history:
        if e.get("kind") == "revert" and e.get("details", {}).get("of") == edit.edit_id:
            raise LineageError(f"edit {edit.edit_id} was already reverted")
    restored = edit.pre_params
    record = _make_record(
        model, "revert", restored,
        residuals={},
        side_effect=_side_effect_metric(model.params, restored, touched=set()),
        author=author,
        details={"of": edit.edit_id},
    )
    return model.with_params(restored, record.to_dict())


def replay_edit_log(initial: DecisionParams, records) -> DecisionParams:
    """Walk an edit log from a snapshot, verifying every link bit-exactly.

    Each record's pre-params must equal the params produced so far and its id
    must match the deterministic recomputation; any break means the log does
    not describe a lineage of ``initial`` and raises LineageError.
    """
    params = initial
    for position, raw in enumerate(records):
        record = raw if isinstance(raw, EditRecord) else EditRecord.from_dict(raw)
        if record.pre_params != params:
            raise LineageError(
                f"edit {record.edit_id} at position {position} does not chain: "
                "its pre-edit params differ from the replayed state"
            )
        expected = _edit_id(record.kind, record.pre_params, record.post_params,
                            record.details, position)
        if record.edit_id != expected:
            raise LineageError(
                f"edit at position {position} carries id {record.edit_id}, "
                f"expected {expected}"
            )
        params = record.post_params
    return params
