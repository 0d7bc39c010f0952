"""Core records shared across the package.

Holds the dataset container, the feasible-set description for target
vectors (linear equalities/inequalities, nonnegativity, and an optional
big-M cardinality restriction), the loss variants, and the feasibility
checker that every solver and benchmark relies on.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

# Default tolerance for feasibility checks. A coordinate counts as nonzero
# for cardinality purposes when its magnitude exceeds the same tolerance.
DEFAULT_FEAS_TOL = 1e-6

STATUS_OPTIMAL = "optimal"
STATUS_ITER_LIMIT = "iter_limit"


class InfeasibleSetError(Exception):
    """The constraint system admits no feasible point."""


class UnsupportedError(Exception):
    """No solver is provided for this loss/feasible-set combination."""


@dataclass(frozen=True)
class Cardinality:
    """At most ``max_support`` coordinates may be nonzero, each at most ``big_m``."""

    max_support: int
    big_m: float

    def __post_init__(self) -> None:
        if self.max_support < 1:
            raise ValueError("max_support must be a positive integer")
        if not np.isfinite(self.big_m) or self.big_m <= 0:
            raise ValueError("big_m must be a positive real")


def _as_rows(rows: Sequence[tuple[Sequence[float], float]], dim: int, label: str):
    """Normalize a list of (coefficients, rhs) pairs into dense arrays."""
    if not rows:
        return np.zeros((0, dim)), np.zeros(0)
    a = np.asarray([np.asarray(r[0], dtype=float) for r in rows], dtype=float)
    b = np.asarray([float(r[1]) for r in rows], dtype=float)
    if a.ndim != 2 or a.shape[1] != dim:
        raise ValueError(f"{label} rows must have {dim} coefficients each")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError(f"{label} rows must be finite")
    return a, b


class FeasibleSet:
    """Feasible region for target vectors.

    The region is the set of y in R^dim with

        a.T y  = b   for every equality row,
        a.T y <= b   for every inequality row,
        y_k   >= 0   wherever the nonnegativity mask is set,

    optionally intersected with a cardinality restriction: at most
    ``max_support`` coordinates nonzero, each bounded above by ``big_m``.
    The set is convex exactly when the cardinality restriction is absent.
    """

    def __init__(
        self,
        dim: int,
        eq: Sequence[tuple[Sequence[float], float]] = (),
        ineq: Sequence[tuple[Sequence[float], float]] = (),
        nonneg: bool | Sequence[bool] = True,
        cardinality: Cardinality | None = None,
    ):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self.A_eq, self.b_eq = _as_rows(eq, self.dim, "equality")
        self.A_in, self.b_in = _as_rows(ineq, self.dim, "inequality")
        if isinstance(nonneg, (bool, np.bool_)):
            mask = np.full(self.dim, bool(nonneg))
        else:
            mask = np.asarray(nonneg, dtype=bool)
            if mask.shape != (self.dim,):
                raise ValueError("nonneg mask length must equal dim")
        self.nonneg = mask
        if cardinality is not None and cardinality.max_support > self.dim:
            raise ValueError("max_support cannot exceed dim")
        self.cardinality = cardinality
        for arr in (self.A_eq, self.b_eq, self.A_in, self.b_in, self.nonneg):
            arr.flags.writeable = False

    @property
    def is_convex(self) -> bool:
        return self.cardinality is None

    @property
    def n_eq(self) -> int:
        return len(self.b_eq)

    @property
    def n_ineq(self) -> int:
        return len(self.b_in)

    def inequality_system(self, include_nonneg: bool = True):
        """Stacked (A, b) with a.T y <= b rows; nonnegativity as -y_k <= 0."""
        blocks_a = [self.A_in]
        blocks_b = [self.b_in]
        if include_nonneg and self.nonneg.any():
            idx = np.flatnonzero(self.nonneg)
            rows = np.zeros((len(idx), self.dim))
            rows[np.arange(len(idx)), idx] = -1.0
            blocks_a.append(rows)
            blocks_b.append(np.zeros(len(idx)))
        return np.vstack(blocks_a), np.concatenate(blocks_b)

    def with_rows(
        self,
        extra_eq: Sequence[tuple[Sequence[float], float]] = (),
        extra_ineq: Sequence[tuple[Sequence[float], float]] = (),
    ) -> "FeasibleSet":
        """Copy of this (convex) set with extra linear rows appended."""
        if self.cardinality is not None:
            raise UnsupportedError("cannot append rows to a cardinality-restricted set")
        a_e, b_e = _as_rows(extra_eq, self.dim, "extra equality")
        a_i, b_i = _as_rows(extra_ineq, self.dim, "extra inequality")
        out = FeasibleSet.__new__(FeasibleSet)
        out.dim = self.dim
        out.A_eq = np.vstack([self.A_eq, a_e])
        out.b_eq = np.concatenate([self.b_eq, b_e])
        out.A_in = np.vstack([self.A_in, a_i])
        out.b_in = np.concatenate([self.b_in, b_i])
        out.nonneg = self.nonneg.copy()
        out.cardinality = None
        for arr in (out.A_eq, out.b_eq, out.A_in, out.b_in, out.nonneg):
            arr.flags.writeable = False
        return out

    def restricted_to_support(self, support: Sequence[int]) -> "FeasibleSet":
        """Convex restriction to a candidate support of a cardinality set.

        Off-support coordinates are fixed at zero, so constraint rows keep
        only their on-support coefficients; the big-M bound becomes a plain
        upper bound on every kept coordinate.
        """
        if self.cardinality is None:
            raise ValueError("restricted_to_support requires a cardinality set")
        sup = np.asarray(sorted(support), dtype=int)
        m = self.cardinality.big_m
        a_in = self.A_in[:, sup] if self.n_ineq else np.zeros((0, len(sup)))
        bounds_a = np.eye(len(sup))
        bounds_b = np.full(len(sup), m)
        return FeasibleSet(
            dim=len(sup),
            eq=list(zip(self.A_eq[:, sup], self.b_eq)),
            ineq=list(zip(np.vstack([a_in, bounds_a]), np.concatenate([self.b_in, bounds_b]))),
            nonneg=self.nonneg[sup],
            cardinality=None,
        )

    def uniform_sum_structure(self) -> tuple[float, float] | None:
        """(total, upper) when the set is {sum(y) = total, 0 <= y <= upper}.

        Detects the single-aggregate structure that admits closed-form
        projections: exactly one equality row with identical positive
        coefficients, no general inequality rows, and full nonnegativity.
        The upper bound is big_m for cardinality sets and +inf otherwise.
        """
        if self.n_eq != 1 or self.n_ineq != 0 or not self.nonneg.all():
            return None
        row = self.A_eq[0]
        c = row[0]
        if c <= 0 or not np.allclose(row, c, rtol=0, atol=1e-12):
            return None
        total = self.b_eq[0] / c
        upper = self.cardinality.big_m if self.cardinality is not None else np.inf
        return float(total), float(upper)

    def to_json_dict(self) -> dict[str, Any]:
        card = None
        if self.cardinality is not None:
            card = {"s": self.cardinality.max_support, "M": self.cardinality.big_m}
        return {
            "dim": self.dim,
            "eq": [{"a": list(a), "b": float(b)} for a, b in zip(self.A_eq, self.b_eq)],
            "ineq": [{"a": list(a), "b": float(b)} for a, b in zip(self.A_in, self.b_in)],
            "nonneg": [bool(v) for v in self.nonneg],
            "cardinality": card,
        }

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "FeasibleSet":
        card = doc.get("cardinality")
        cardinality = None
        if card is not None:
            cardinality = Cardinality(int(card["s"]), float(card["M"]))
        return cls(
            dim=int(doc["dim"]),
            eq=[(row["a"], row["b"]) for row in doc.get("eq", [])],
            ineq=[(row["a"], row["b"]) for row in doc.get("ineq", [])],
            nonneg=doc.get("nonneg", True),
            cardinality=cardinality,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "FeasibleSet":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ViolationReport:
    """Worst-case constraint violations of a candidate prediction."""

    feasible: bool
    max_abs_eq_violation: float
    max_ineq_violation: float
    support_size: int | None
    tol: float


def check_feasibility(
    y: np.ndarray, fset: FeasibleSet, tol: float = DEFAULT_FEAS_TOL
) -> ViolationReport:
    """Evaluate y against the feasible set, reporting worst violations."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape != (fset.dim,):
        raise ValueError(f"expected length-{fset.dim} vector, got shape {y.shape}")

    eq_v = 0.0
    if fset.n_eq:
        eq_v = float(np.max(np.abs(fset.A_eq @ y - fset.b_eq)))

    a_in, b_in = fset.inequality_system()
    ineq_v = float(np.max(a_in @ y - b_in, initial=0.0))
    ineq_v = max(ineq_v, 0.0)

    support_size = None
    support_ok = True
    if fset.cardinality is not None:
        support_size = int(np.sum(np.abs(y) > tol))
        support_ok = support_size <= fset.cardinality.max_support
        # y_k <= M z_k binds only above: nonzero coordinates must stay below M.
        ineq_v = max(ineq_v, float(np.max(y - fset.cardinality.big_m, initial=0.0)))

    feasible = eq_v <= tol and ineq_v <= tol and support_ok
    return ViolationReport(feasible, eq_v, ineq_v, support_size, tol)


@dataclass(frozen=True, eq=False)
class Loss:
    """Tagged loss variant.

    kind is one of "mse", "mad", "poisson", "weighted", "regret".
    The weighted variant carries a weight vector; the regret variant carries
    a downstream-problem handle exposing solve(y) -> allocation.
    """

    kind: str
    weights: np.ndarray | None = None
    downstream: Any = None

    KINDS = ("mse", "mad", "poisson", "weighted", "regret")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown loss kind: {self.kind!r}")
        if self.kind == "weighted":
            if self.weights is None:
                raise ValueError("weighted loss requires a weight vector")
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or not np.any(w != 0):
                raise ValueError("weight vector must be 1-D and not all-zero")
            object.__setattr__(self, "weights", w)
        if self.kind == "regret" and self.downstream is None:
            raise ValueError("regret loss requires a downstream handle")

    @classmethod
    def mse(cls) -> "Loss":
        return cls("mse")

    @classmethod
    def mad(cls) -> "Loss":
        return cls("mad")

    @classmethod
    def poisson(cls) -> "Loss":
        return cls("poisson")

    @classmethod
    def weighted_linear(cls, weights) -> "Loss":
        return cls("weighted", weights=np.asarray(weights, dtype=float))

    @classmethod
    def downstream_regret(cls, downstream) -> "Loss":
        return cls("regret", downstream=downstream)


def loss_eval(loss: Loss, yhat: np.ndarray, targets: np.ndarray) -> float:
    """Mean-over-rows loss of a single prediction against target rows.

    The squared-error variant carries a 1/2 factor, i.e.
    (1/(2m)) sum_i ||yhat - y_i||^2, so the decomposition
    loss(yhat) = loss(mean) + ||yhat - mean||^2 / 2 holds exactly.
    Benchmark reports multiply by 2 to recover the conventional MSE.
    """
    yhat = np.asarray(yhat, dtype=float).reshape(-1)
    y = np.atleast_2d(np.asarray(targets, dtype=float))
    if y.shape[0] == 0:
        raise ValueError("targets must contain at least one row")
    if y.shape[1] != yhat.shape[0]:
        raise ValueError("prediction and target dimensions disagree")
    m = y.shape[0]

    if loss.kind == "mse":
        return float(np.sum((y - yhat) ** 2) / (2.0 * m))
    if loss.kind == "mad":
        return float(np.sum(np.abs(y - yhat)) / m)
    if loss.kind == "poisson":
        if np.any(yhat <= 0):
            raise ValueError("poisson deviance requires strictly positive predictions")
        if np.any(y < 0):
            raise ValueError("poisson deviance requires nonnegative targets")
        with np.errstate(divide="ignore", invalid="ignore"):
            log_term = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / yhat), 0.0)
        return float(np.sum(log_term + yhat - y) / m)
    if loss.kind == "weighted":
        w = loss.weights
        if w.shape[0] != yhat.shape[0]:
            raise ValueError("weight vector dimension disagrees with prediction")
        return float(np.mean((y @ w - float(yhat @ w)) ** 2))
    if loss.kind == "regret":
        ds = loss.downstream
        q_hat = ds.solve(yhat)
        gaps = np.array([row @ ds.solve(row) - row @ q_hat for row in y])
        return float(np.mean(gaps**2))
    raise ValueError(f"unknown loss kind: {loss.kind!r}")


@dataclass(frozen=True, eq=False)
class PredictionResult:
    """Solver output: feasible prediction, its objective, and status."""

    yhat: np.ndarray
    objective: float
    support: tuple[int, ...] | None = None
    status: str = STATUS_OPTIMAL


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix (n x p) paired with a target matrix (n x K)."""

    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...] = ()
    target_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        if x.ndim != 2 or y.ndim != 2:
            raise ValueError("features and targets must be 2-D")
        if x.shape[0] != y.shape[0]:
            raise ValueError("features and targets must have the same number of rows")
        if x.shape[0] < 1 or x.shape[1] < 1 or y.shape[1] < 1:
            raise ValueError("need n >= 1, p >= 1, K >= 1")
        if not np.isfinite(x).all() or not np.isfinite(y).all():
            raise ValueError("features and targets must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "targets", y)
        fnames = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        tnames = tuple(self.target_names) or tuple(f"y{k + 1}" for k in range(y.shape[1]))
        if len(fnames) != x.shape[1] or len(tnames) != y.shape[1]:
            raise ValueError("name lists must match matrix widths")
        object.__setattr__(self, "feature_names", fnames)
        object.__setattr__(self, "target_names", tnames)
        self.features.flags.writeable = False
        self.targets.flags.writeable = False

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_targets(self) -> int:
        return self.targets.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx], self.targets[idx], self.feature_names, self.target_names
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(self.feature_names) + list(self.target_names))
            for xr, yr in zip(self.features, self.targets):
                writer.writerow([repr(float(v)) for v in xr] + [repr(float(v)) for v in yr])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [list(map(float, row)) for row in reader if row]
        fcols = [i for i, name in enumerate(header) if name.startswith("x")]
        tcols = [i for i, name in enumerate(header) if name.startswith("y")]
        if not fcols or not tcols or len(fcols) + len(tcols) != len(header):
            raise ValueError("header must be x1..xp followed by y1..yK")
        data = np.asarray(rows, dtype=float)
        return cls(
            data[:, fcols],
            data[:, tcols],
            tuple(header[i] for i in fcols),
            tuple(header[i] for i in tcols),
        )
