"""Data model: weighted point clouds, embedding plans, maps, perturbations, cost families.

All types are immutable after construction (arrays are set non-writeable) and
canonicalized on the way in: weights renormalize, zero-mass atoms are dropped,
near-coincident atoms inside one plan row are merged.
"""

from __future__ import annotations

import csv
import math

import numpy as np

MERGE_TOL = 1e-12        # max-norm tolerance for merging coincident atoms
MASS_TOL = 1e-12         # tolerance on mass bookkeeping invariants
WEIGHT_SUM_TOL = 1e-6    # tolerated deviation of raw weight sums from 1


class InputError(ValueError):
    """Bad user-supplied data (dimension mismatch, malformed file, bad mass)."""


class NumericalError(RuntimeError):
    """Non-finite values or a numeric routine that failed to make progress."""


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _as_matrix(points, name: str) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InputError(f"{name} must be a non-empty 2-d array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite entries")
    return arr


class PointCloud:
    """A discrete probability measure: atoms in R^d with positive weights summing to 1."""

    def __init__(self, points, weights=None):
        pts = _as_matrix(points, "points")
        n = pts.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
            if w.shape[0] != n:
                raise InputError(f"{n} points but {w.shape[0]} weights")
            if not np.isfinite(w).all() or (w < 0).any():
                raise InputError("weights must be finite and nonnegative")
            total = math.fsum(w)
            if total <= 0:
                raise InputError("weights sum to zero")
            if abs(total - 1.0) > WEIGHT_SUM_TOL:
                raise InputError(f"weights sum to {total!r}, outside tolerance {WEIGHT_SUM_TOL}")
            w = w / total
        keep = w > 0.0
        if not keep.all():
            pts = pts[keep]
            w = w[keep]
            w = w / math.fsum(w)
        if pts.shape[0] == 0:
            raise InputError("all atoms had zero weight")
        self.points = pts
        self.weights = w
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim_d(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j + 1}" for j in range(self.dim_d)] + ["w"])
            for p, w in zip(self.points, self.weights):
                writer.writerow([_fmt(v) for v in p] + [_fmt(w)])

    @classmethod
    def load_csv(cls, path) -> "PointCloud":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise InputError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            has_w = bool(header) and header[-1] == "w"
            d = len(header) - (1 if has_w else 0)
            if d < 1:
                raise InputError(f"{path}: header {header!r} declares no coordinates")
            points, weights = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if len(row) != len(header):
                    raise InputError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
                try:
                    vals = [float(v) for v in row]
                except ValueError as exc:
                    raise InputError(f"{path}:{lineno}: {exc}") from None
                points.append(vals[:d])
                if has_w:
                    weights.append(vals[d])
            if not points:
                raise InputError(f"{path}: no data rows")
            return cls(points, weights if has_w else None)


class DeterministicMap:
    """One embedded image per source atom: the graph of a map T: R^d -> R^m."""

    def __init__(self, images):
        self.images = _as_matrix(images, "images")
        self.images.setflags(write=False)

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def dim_m(self) -> int:
        return self.images.shape[1]


def _merge_row(masses, atoms):
    """Merge atoms closer than MERGE_TOL in max-norm; masses add up."""
    masses = np.asarray(masses, dtype=float).reshape(-1)
    atoms = _as_matrix(atoms, "atoms")
    if masses.shape[0] != atoms.shape[0]:
        raise InputError("row masses and atoms disagree in length")
    out_m: list[float] = []
    out_a: list[np.ndarray] = []
    for q, y in zip(masses, atoms):
        for k, yk in enumerate(out_a):
            if np.max(np.abs(y - yk)) <= MERGE_TOL:
                out_m[k] += q
                break
        else:
            out_m.append(float(q))
            out_a.append(y)
    return np.array(out_m), np.array(out_a)


class EmbeddingPlan:
    """A coupling with fixed source marginal: per source atom, a sub-distribution in R^m.

    ``rows`` is a sequence of (masses, atoms) pairs, one per source index.
    """

    def __init__(self, rows):
        if len(rows) == 0:
            raise InputError("plan needs at least one row")
        row_masses: list[np.ndarray] = []
        row_atoms: list[np.ndarray] = []
        dim_m = None
        for i, (masses, atoms) in enumerate(rows):
            m_arr, a_arr = _merge_row(masses, atoms)
            if (m_arr <= 0).any():
                raise InputError(f"row {i}: nonpositive atom mass after merging")
            if dim_m is None:
                dim_m = a_arr.shape[1]
            elif a_arr.shape[1] != dim_m:
                raise InputError(f"row {i}: atom dimension {a_arr.shape[1]} != {dim_m}")
            row_masses.append(m_arr)
            row_atoms.append(a_arr)
        total = math.fsum(float(m) for arr in row_masses for m in arr)
        if abs(total - 1.0) > MASS_TOL:
            raise InputError(f"plan total mass {total!r} differs from 1 beyond {MASS_TOL}")
        self.row_masses = row_masses
        self.row_atoms = row_atoms
        self.dim_m = int(dim_m)
        for arr in row_masses:
            arr.setflags(write=False)
        for arr in row_atoms:
            arr.setflags(write=False)
        idx = np.concatenate([np.full(len(m), i, dtype=int) for i, m in enumerate(row_masses)])
        self._flat = (
            idx,
            np.concatenate(row_masses),
            np.concatenate(row_atoms, axis=0),
        )
        for arr in self._flat:
            arr.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return len(self.row_masses)

    @property
    def atom_count(self) -> int:
        return self._flat[0].shape[0]

    def flat(self):
        """(source_index, mass, atom) arrays over all atoms, in row order."""
        return self._flat

    def row_weight(self, i: int) -> float:
        return math.fsum(self.row_masses[i])

    def validate_against(self, cloud: PointCloud, tol: float = MASS_TOL) -> None:
        if self.n_rows != cloud.n:
            raise InputError(f"plan has {self.n_rows} rows but cloud has {cloud.n} atoms")
        for i in range(self.n_rows):
            if abs(self.row_weight(i) - cloud.weights[i]) > tol:
                raise InputError(f"row {i} mass {self.row_weight(i)!r} != weight {cloud.weights[i]!r}")

    def barycenter(self) -> np.ndarray:
        _, mass, atoms = self._flat
        return mass @ atoms

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "mass"] + [f"y{j + 1}" for j in range(self.dim_m)])
            for i, (masses, atoms) in enumerate(zip(self.row_masses, self.row_atoms)):
                for q, y in zip(masses, atoms):
                    writer.writerow([str(i), _fmt(q)] + [_fmt(v) for v in y])

    @classmethod
    def load_csv(cls, path) -> "EmbeddingPlan":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise InputError(f"{path}: empty file") from None
            if len(header) < 3 or header[0].strip() != "i" or header[1].strip() != "mass":
                raise InputError(f"{path}: expected header i,mass,y1,...; got {header!r}")
            m = len(header) - 2
            by_row: dict[int, list] = {}
            for lineno, row in enumerate(reader, start=2):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if len(row) != len(header):
                    raise InputError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
                try:
                    i = int(row[0])
                    q = float(row[1])
                    y = [float(v) for v in row[2:]]
                except ValueError as exc:
                    raise InputError(f"{path}:{lineno}: {exc}") from None
                by_row.setdefault(i, []).append((q, y))
            if not by_row:
                raise InputError(f"{path}: no data rows")
            n = max(by_row) + 1
            if sorted(by_row) != list(range(n)):
                raise InputError(f"{path}: source indices must cover 0..{n - 1} without gaps")
            rows = []
            for i in range(n):
                qs = [q for q, _ in by_row[i]]
                ys = [y for _, y in by_row[i]]
                rows.append((qs, np.array(ys).reshape(len(ys), m)))
            return cls(rows)


class Perturbation:
    """A signed redistribution of mass that leaves every source marginal untouched.

    ``rows`` maps source index -> (delta_masses, atoms); omitted rows are zero.
    """

    def __init__(self, rows: dict):
        clean: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        dim_m = None
        for i, (dmass, atoms) in rows.items():
            d_arr = np.asarray(dmass, dtype=float).reshape(-1)
            a_arr = _as_matrix(atoms, f"perturbation atoms (row {i})")
            if d_arr.shape[0] != a_arr.shape[0]:
                raise InputError(f"row {i}: delta masses and atoms disagree in length")
            if abs(math.fsum(d_arr)) > MASS_TOL:
                raise InputError(f"row {i}: delta masses sum to {math.fsum(d_arr)!r}, not 0")
            if dim_m is None:
                dim_m = a_arr.shape[1]
            elif a_arr.shape[1] != dim_m:
                raise InputError(f"row {i}: atom dimension mismatch")
            clean[int(i)] = (d_arr, a_arr)
        self.rows = clean
        self.dim_m = dim_m

    @classmethod
    def needle(cls, i: int, mass: float, y_from, y_to) -> "Perturbation":
        """Move ``mass`` at source ``i`` from y_from to y_to."""
        y_from = np.asarray(y_from, dtype=float).reshape(-1)
        y_to = np.asarray(y_to, dtype=float).reshape(-1)
        return cls({i: ([mass, -mass], np.stack([y_to, y_from]))})


# ---------------------------------------------------------------------------
# Cost families
# ---------------------------------------------------------------------------

def _sqdist_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n2a = np.sum(A * A, axis=1)
    n2b = np.sum(B * B, axis=1)
    out = n2a[:, None] + n2b[None, :] - 2.0 * (A @ B.T)
    np.maximum(out, 0.0, out=out)
    return out


class CostFamily:
    """A second-order cost c(x,x',y,y') = profile(base(x,x'), t(y,y')).

    ``kind`` selects the embedded-variable statistic t: "IP" uses <y,y'>,
    "N2" uses |y-y'|^2.  Subclasses supply the scalar/vectorized profile and
    the base statistic of the feature pair, plus capability flags.
    """

    name = "abstract"
    kind = "N2"
    convex_in_t = False
    unique_min_at_zero = False
    has_closed_form_marginal = False

    # --- feature-pair statistic -------------------------------------------------
    def base_matrix(self, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def base(self, x, xp) -> float:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xp = np.atleast_2d(np.asarray(xp, dtype=float))
        return float(self.base_matrix(x, xp)[0, 0])

    # --- embedded-pair statistic -------------------------------------------------
    def t_matrix(self, Y1: np.ndarray, Y2: np.ndarray) -> np.ndarray:
        if self.kind == "IP":
            return Y1 @ Y2.T
        return _sqdist_matrix(Y1, Y2)

    def t_value(self, y, yp) -> float:
        y = np.asarray(y, dtype=float).reshape(-1)
        yp = np.asarray(yp, dtype=float).reshape(-1)
        if self.kind == "IP":
            return float(np.dot(y, yp))
        d = y - yp
        return float(np.dot(d, d))

    # --- profile and t-derivatives ----------------------------------------------
    def profile(self, a, t):
        raise NotImplementedError

    def profile_dt(self, a, t):
        raise NotImplementedError

    def profile_dtt(self, a, t):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"name": self.name, "kind": self.kind}


class QuadraticIP(CostFamily):
    """(<x,x'> - t)^2 with t = <y,y'>: inner-product matching (classical MDS/PCA)."""

    name = "quadratic-ip"
    kind = "IP"
    convex_in_t = True
    unique_min_at_zero = False
    has_closed_form_marginal = True

    def base_matrix(self, X1, X2):
        return X1 @ X2.T

    def profile(self, a, t):
        return (a - t) ** 2

    def profile_dt(self, a, t):
        return -2.0 * (a - t)

    def profile_dtt(self, a, t):
        return 2.0 * np.ones_like(np.asarray(a, dtype=float) + np.asarray(t, dtype=float))


class KernelIP(CostFamily):
    """(kappa(x,x') - t)^2 with t = <y,y'>: kernel PCA style matching."""

    name = "kernel-ip"
    kind = "IP"
    convex_in_t = True
    unique_min_at_zero = False
    has_closed_form_marginal = True

    def __init__(self, kernel: str = "rbf", sigma: float = 1.0, degree: int = 2, offset: float = 1.0):
        if kernel not in ("rbf", "polynomial"):
            raise InputError(f"unknown kernel {kernel!r}")
        if kernel == "rbf" and sigma <= 0:
            raise InputError("rbf kernel needs sigma > 0")
        self.kernel = kernel
        self.sigma = float(sigma)
        self.degree = int(degree)
        self.offset = float(offset)

    def base_matrix(self, X1, X2):
        if self.kernel == "rbf":
            return np.exp(-_sqdist_matrix(X1, X2) / (2.0 * self.sigma**2))
        return (X1 @ X2.T + self.offset) ** self.degree

    def profile(self, a, t):
        return (a - t) ** 2

    def profile_dt(self, a, t):
        return -2.0 * (a - t)

    def profile_dtt(self, a, t):
        return 2.0 * np.ones_like(np.asarray(a, dtype=float) + np.asarray(t, dtype=float))

    def describe(self):
        d = super().describe()
        d.update(kernel=self.kernel, sigma=self.sigma, degree=self.degree, offset=self.offset)
        return d


class QMDS(CostFamily):
    """(|x-x'|^2 - t)^2 with t = |y-y'|^2: the quartic squared-distance cost."""

    name = "qmds"
    kind = "N2"
    convex_in_t = True
    unique_min_at_zero = True
    has_closed_form_marginal = True

    def base_matrix(self, X1, X2):
        return _sqdist_matrix(X1, X2)

    def profile(self, a, t):
        return (a - t) ** 2

    def profile_dt(self, a, t):
        return -2.0 * (a - t)

    def profile_dtt(self, a, t):
        return 2.0 * np.ones_like(np.asarray(a, dtype=float) + np.asarray(t, dtype=float))


class QSammon(CostFamily):
    """(|x-x'|^2 - t)^2 / (|x-x'|^2 + eps): quartic Sammon-style weighting.

    eps regularizes the coincident-input singularity.
    """

    name = "qsammon"
    kind = "N2"
    convex_in_t = True
    unique_min_at_zero = True
    has_closed_form_marginal = False

    def __init__(self, eps: float = 1e-9):
        if eps <= 0:
            raise InputError("qsammon eps must be positive")
        self.eps = float(eps)

    def base_matrix(self, X1, X2):
        return _sqdist_matrix(X1, X2)

    def profile(self, a, t):
        return (a - t) ** 2 / (a + self.eps)

    def profile_dt(self, a, t):
        return -2.0 * (a - t) / (a + self.eps)

    def profile_dtt(self, a, t):
        return 2.0 / (np.asarray(a, dtype=float) + self.eps) * np.ones_like(np.asarray(t, dtype=float))

    def describe(self):
        d = super().describe()
        d.update(eps=self.eps)
        return d


class Elastic(CostFamily):
    """t*exp(-|x-x'|^2/2 sigma^2) + beta*|x-x'|^2*exp(-t): elastic embedding cost.

    Convex-in-t flag is off: the second derivative vanishes at coincident inputs,
    so strict convexity fails.
    """

    name = "elastic"
    kind = "N2"
    convex_in_t = False
    unique_min_at_zero = True
    has_closed_form_marginal = False

    def __init__(self, sigma: float = 1.0, beta: float = 1.0):
        if sigma <= 0 or beta < 0:
            raise InputError("elastic needs sigma > 0 and beta >= 0")
        self.sigma = float(sigma)
        self.beta = float(beta)

    def base_matrix(self, X1, X2):
        return _sqdist_matrix(X1, X2)

    def profile(self, a, t):
        return t * np.exp(-a / (2.0 * self.sigma**2)) + self.beta * a * np.exp(-t)

    def profile_dt(self, a, t):
        return np.exp(-a / (2.0 * self.sigma**2)) - self.beta * a * np.exp(-t)

    def profile_dtt(self, a, t):
        return self.beta * a * np.exp(-t)

    def describe(self):
        d = super().describe()
        d.update(sigma=self.sigma, beta=self.beta)
        return d


BUILTIN_COSTS = {
    "qmds": QMDS,
    "qsammon": QSammon,
    "quadratic-ip": QuadraticIP,
    "kernel-ip": KernelIP,
    "elastic": Elastic,
}


def make_cost(name: str, **params) -> CostFamily:
    try:
        cls = BUILTIN_COSTS[name]
    except KeyError:
        raise InputError(f"unknown cost {name!r}; choose from {sorted(BUILTIN_COSTS)}") from None
    return cls(**params)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def evaluate_cost(cost: CostFamily, x, xp, y, yp) -> float:
    """c(x, x', y, y') for a single tuple."""
    x = np.asarray(x, dtype=float).reshape(-1)
    xp = np.asarray(xp, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    yp = np.asarray(yp, dtype=float).reshape(-1)
    if x.shape != xp.shape:
        raise InputError(f"feature dimension mismatch: {x.shape} vs {xp.shape}")
    if y.shape != yp.shape:
        raise InputError(f"embedding dimension mismatch: {y.shape} vs {yp.shape}")
    return float(cost.profile(cost.base(x, xp), cost.t_value(y, yp)))


def profile_derivatives(cost: CostFamily, x, xp, t: float):
    """(value, d/dt, d^2/dt^2) of the scalar profile at the feature pair (x, x')."""
    x = np.asarray(x, dtype=float).reshape(-1)
    xp = np.asarray(xp, dtype=float).reshape(-1)
    if x.shape != xp.shape:
        raise InputError(f"feature dimension mismatch: {x.shape} vs {xp.shape}")
    a = cost.base(x, xp)
    return (
        float(cost.profile(a, t)),
        float(cost.profile_dt(a, t)),
        float(cost.profile_dtt(a, t)),
    )


def center_plan(plan: EmbeddingPlan) -> EmbeddingPlan:
    """Translate all atoms so the mass-weighted atom mean is zero."""
    mean = plan.barycenter()
    rows = [(m.copy(), a - mean[None, :]) for m, a in zip(plan.row_masses, plan.row_atoms)]
    return EmbeddingPlan(rows)


def plan_from_map(cloud: PointCloud, mapping: DeterministicMap) -> EmbeddingPlan:
    """The deterministic plan with mass w_i on (x_i, T(x_i))."""
    if mapping.n != cloud.n:
        raise InputError(f"map has {mapping.n} images but cloud has {cloud.n} atoms")
    rows = [(np.array([w]), img.reshape(1, -1)) for w, img in zip(cloud.weights, mapping.images)]
    return EmbeddingPlan(rows)
