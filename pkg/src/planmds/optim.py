"""Optimizers: particle gradient descent, the marginal-sweep descent, and PCA.

The marginal sweep repeatedly moves each plan atom toward the current global
minimizer of its marginal problem.  For squared-distance costs whose profile
is uniquely minimized at zero, the full reassignment is applied outright (the
move can only lower the energy); otherwise a clamped optimal step along the
needle direction is used, so the energy is non-increasing in every case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CostFamily,
    DeterministicMap,
    EmbeddingPlan,
    InputError,
    MERGE_TOL,
    NumericalError,
    PointCloud,
    plan_from_map,
)
from .energy import (
    _marginal_grad_arrays,
    _marginal_hessian_arrays,
    _marginal_value_arrays,
    _pair_energy,
)
from .quartic import (
    MarginalSolution,
    minimize_quartic,
    moments_from_arrays,
    quartic_at,
    select_minimizer,
)

GAIN_TOL = 1e-9    # per-unit-mass marginal gain below which a move is skipped


@dataclass
class DescentConfig:
    """Shared knobs for both optimizers.

    init may be "random", "pca", a DeterministicMap, or an EmbeddingPlan.
    """

    max_sweeps: int = 100
    rel_tol: float = 1e-10
    seed: int = 0
    init: object = "random"
    init_scale: float = 1.0
    dim_m: int = 1
    candidate_budget: int = 8
    step_size: float = 1.0
    armijo_c: float = 1e-4
    max_halvings: int = 40

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise InputError("max_sweeps must be >= 1")
        if self.rel_tol <= 0:
            raise InputError("rel_tol must be positive")


class IterationTrace:
    """Per-sweep record of energy, split mass, and moved mass."""

    def __init__(self):
        self.energies: list[float] = []
        self.split_mass: list[float] = []
        self.moved_mass: list[float] = []
        self.max_delta: list[float] = []
        self.final_grad_norm: float | None = None

    def add(self, energy: float, split: float, moved: float, max_delta: float = 0.0) -> None:
        self.energies.append(float(energy))
        self.split_mass.append(float(split))
        self.moved_mass.append(float(moved))
        self.max_delta.append(float(max_delta))

    @property
    def n_sweeps(self) -> int:
        return max(len(self.energies) - 1, 0)

    def save_csv(self, path) -> None:
        from .core import _fmt

        with open(path, "w", newline="") as fh:
            fh.write("sweep,energy,split_mass,moved_mass\n")
            for k, (e, s, m) in enumerate(zip(self.energies, self.split_mass, self.moved_mass)):
                fh.write(f"{k},{_fmt(e)},{_fmt(s)},{_fmt(m)}\n")


def _initial_images(cloud: PointCloud, config: DescentConfig) -> np.ndarray:
    init = config.init
    if isinstance(init, DeterministicMap):
        if init.n != cloud.n:
            raise InputError("initial map size does not match the cloud")
        return np.array(init.images, dtype=float)
    if isinstance(init, EmbeddingPlan):
        raise InputError("particle descent needs a map-style init, not a plan")
    if init == "pca":
        return np.array(pca_solve(cloud, config.dim_m).images)
    if init == "random":
        rng = np.random.default_rng(config.seed)
        return config.init_scale * rng.standard_normal((cloud.n, config.dim_m))
    raise InputError(f"unknown init {init!r}")


def particle_descent(cloud: PointCloud, cost: CostFamily,
                     config: DescentConfig) -> tuple[DeterministicMap, IterationTrace]:
    """Gradient descent on particle positions with Armijo backtracking."""
    Y = _initial_images(cloud, config)
    X = cloud.points
    w = cloud.weights
    M = np.outer(w, w)
    A = cost.base_matrix(X, X)

    def energy(Yc):
        return float(np.sum(M * cost.profile(A, cost.t_matrix(Yc, Yc))))

    def gradient(Yc):
        T = cost.t_matrix(Yc, Yc)
        G = M * cost.profile_dt(A, T)
        if cost.kind == "IP":
            return 2.0 * G @ Yc
        return 4.0 * (np.sum(G, axis=1)[:, None] * Yc - G @ Yc)

    trace = IterationTrace()
    E = energy(Y)
    if not np.isfinite(E):
        raise NumericalError("non-finite energy at initialization")
    trace.add(E, 0.0, 0.0)
    grad = gradient(Y)
    for it in range(config.max_sweeps):
        gnorm2 = float(np.sum(grad * grad))
        if gnorm2 == 0.0:
            break
        eta = config.step_size
        accepted = False
        for _ in range(config.max_halvings):
            Y_new = Y - eta * grad
            E_new = energy(Y_new)
            if not np.isfinite(E_new):
                raise NumericalError(f"non-finite energy at iteration {it}")
            if E_new <= E - config.armijo_c * eta * gnorm2:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        moved = float(np.sum(w * np.linalg.norm(Y_new - Y, axis=1)))
        Y = Y_new
        improvement = E - E_new
        E = E_new
        trace.add(E, 0.0, moved)
        grad = gradient(Y)
        if improvement <= config.rel_tol * (1.0 + abs(E)):
            break
    trace.final_grad_norm = float(np.sqrt(np.sum(gradient(Y) ** 2)))
    return DeterministicMap(Y), trace


# ---------------------------------------------------------------------------
# Marginal minimization (dispatch per cost)
# ---------------------------------------------------------------------------

def _quadratic_ip_solution(X, mass, atoms, cost, x) -> MarginalSolution:
    G = (atoms.T * mass) @ atoms
    rhs = (atoms.T * mass) @ X @ np.asarray(x, dtype=float).reshape(-1)
    y, _, rank, _ = np.linalg.lstsq(G, rhs, rcond=None)
    value = _marginal_value_arrays(X, mass, atoms, cost, x, y)
    kind = "unique" if rank == atoms.shape[1] else "continuum"
    return MarginalSolution(minimizers=[y], value=value, multiplicity_kind=kind, certified=True)


def _generic_solution(X, mass, atoms, cost, x, config: DescentConfig,
                      extra_starts=()) -> MarginalSolution:
    from scipy.optimize import minimize as _sp_minimize

    m = atoms.shape[1]
    order = np.argsort(mass)[::-1]
    starts = [atoms[j] for j in order[: config.candidate_budget]]
    starts.extend(np.asarray(s, dtype=float) for s in extra_starts)
    rng = np.random.default_rng(config.seed)
    scale = 1.0 + float(np.max(np.abs(atoms))) if atoms.size else 1.0
    for _ in range(max(2, config.candidate_budget // 2)):
        starts.append(scale * rng.standard_normal(m))
    best_y, best_v = None, np.inf
    for y0 in starts:
        res = _sp_minimize(
            lambda y: _marginal_value_arrays(X, mass, atoms, cost, x, y),
            np.asarray(y0, dtype=float),
            jac=lambda y: _marginal_grad_arrays(X, mass, atoms, cost, x, y),
            method="L-BFGS-B",
            options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 500},
        )
        if res.fun < best_v:
            best_v, best_y = float(res.fun), np.asarray(res.x, dtype=float)
    return MarginalSolution(minimizers=[best_y], value=best_v,
                            multiplicity_kind="unique", certified=False)


def _solve_marginal_arrays(X, mass, atoms, cost, x, config: DescentConfig,
                           moments=None, extra_starts=()) -> MarginalSolution:
    if cost.name == "qmds":
        if moments is None:
            moments = moments_from_arrays(X, mass, atoms)
        return minimize_quartic(quartic_at(moments, x))
    if cost.name == "quadratic-ip":
        return _quadratic_ip_solution(X, mass, atoms, cost, x)
    return _generic_solution(X, mass, atoms, cost, x, config, extra_starts)


def minimize_marginal(plan: EmbeddingPlan, cloud: PointCloud, cost: CostFamily, x,
                      config: DescentConfig = None) -> MarginalSolution:
    """Global (closed form where available, else best-effort) marginal minimizer."""
    plan.validate_against(cloud)
    if config is None:
        config = DescentConfig()
    idx, mass, atoms = plan.flat()
    return _solve_marginal_arrays(cloud.points[idx], mass, atoms, cost, x, config)


# ---------------------------------------------------------------------------
# Marginal sweep
# ---------------------------------------------------------------------------

class _SweepState:
    """Mutable flat-array view of a plan during a sweep.

    Atoms of one source stay contiguous; single-atom replacement is O(1),
    splits and merges rebuild the arrays.
    """

    def __init__(self, plan: EmbeddingPlan, cloud: PointCloud):
        plan.validate_against(cloud)
        idx, mass, atoms = plan.flat()
        self.idx = np.array(idx)
        self.mass = np.array(mass)
        self.atoms = np.array(atoms)
        self.cloud = cloud
        self.X = cloud.points[self.idx]

    def row_positions(self, i: int) -> np.ndarray:
        return np.nonzero(self.idx == i)[0]

    def replace_atom(self, pos: int, y_new: np.ndarray) -> None:
        i = self.idx[pos]
        self.atoms[pos] = y_new
        for p in self.row_positions(i):
            if p != pos and np.max(np.abs(self.atoms[p] - y_new)) <= MERGE_TOL:
                self.mass[p] += self.mass[pos]
                self._delete(pos)
                return

    def split_atom(self, pos: int, frac_mass: float, y_new: np.ndarray) -> None:
        i = self.idx[pos]
        self.mass[pos] -= frac_mass
        drop = self.mass[pos] <= 1e-15
        for p in self.row_positions(i):
            if p != pos and np.max(np.abs(self.atoms[p] - y_new)) <= MERGE_TOL:
                self.mass[p] += frac_mass
                if drop:
                    self._delete(pos)
                return
        row = self.row_positions(i)
        at = int(row[-1]) + 1
        self.idx = np.insert(self.idx, at, i)
        self.mass = np.insert(self.mass, at, frac_mass)
        self.atoms = np.insert(self.atoms, at, y_new, axis=0)
        self.X = np.insert(self.X, at, self.cloud.points[i], axis=0)
        if drop:
            self._delete(pos)

    def _delete(self, pos: int) -> None:
        self.idx = np.delete(self.idx, pos)
        self.mass = np.delete(self.mass, pos)
        self.atoms = np.delete(self.atoms, pos, axis=0)
        self.X = np.delete(self.X, pos, axis=0)

    def energy(self, cost: CostFamily) -> float:
        return _pair_energy(self.X, self.atoms, self.mass, cost)

    def split_fraction(self) -> float:
        total = 0.0
        counts = np.bincount(self.idx, minlength=self.cloud.n)
        for i in np.nonzero(counts > 1)[0]:
            row = self.mass[self.idx == i]
            total += math.fsum(row) - float(np.max(row))
        return total

    def to_plan(self) -> EmbeddingPlan:
        rows = []
        for i in range(self.cloud.n):
            sel = self.idx == i
            rows.append((self.mass[sel], self.atoms[sel]))
        return EmbeddingPlan(rows)


def marginal_sweep(plan: EmbeddingPlan, cloud: PointCloud, cost: CostFamily,
                   config: DescentConfig) -> tuple[EmbeddingPlan, IterationTrace]:
    """Needle descent toward the minimal graph of the marginal problem.

    Each atom is offered a move to the selected global marginal minimizer.
    With a squared-distance cost uniquely minimized at zero the full move is
    always energy-decreasing; otherwise the step along the needle is clamped
    to the minimizing epsilon in [0, 1].
    """
    state = _SweepState(plan, cloud)
    full_move = cost.kind == "N2" and cost.unique_min_at_zero
    qmds = cost.name == "qmds"
    moments = moments_from_arrays(state.X, state.mass, state.atoms) if qmds else None

    trace = IterationTrace()
    E = state.energy(cost)
    trace.add(E, state.split_fraction(), 0.0)

    for _ in range(config.max_sweeps):
        moved = 0.0
        max_delta = -math.inf
        any_accepted = False
        for i in range(cloud.n):
            x = cloud.points[i]
            snapshot = [np.array(state.atoms[p]) for p in state.row_positions(i)]
            for y_old in snapshot:
                row = state.row_positions(i)
                pos = None
                for p in row:
                    if np.max(np.abs(state.atoms[p] - y_old)) <= MERGE_TOL:
                        pos = int(p)
                        break
                if pos is None:
                    continue  # merged away earlier in this row's pass
                q = float(state.mass[pos])
                sol = _solve_marginal_arrays(state.X, state.mass, state.atoms, cost, x,
                                             config, moments=moments,
                                             extra_starts=(y_old,))
                y_new = select_minimizer(sol)
                j_old = _marginal_value_arrays(state.X, state.mass, state.atoms, cost, x, y_old)
                j_new = _marginal_value_arrays(state.X, state.mass, state.atoms, cost, x, y_new)
                if j_old - j_new <= GAIN_TOL * (1.0 + abs(j_new)):
                    continue
                L = q * (j_new - j_old)
                base = cost.base(x, x)
                Q = q * q * (cost.profile(base, cost.t_value(y_new, y_new))
                             - 2.0 * cost.profile(base, cost.t_value(y_old, y_new))
                             + cost.profile(base, cost.t_value(y_old, y_old)))
                if full_move:
                    eps = 1.0
                elif Q > 0.0:
                    eps = min(max(-L / Q, 0.0), 1.0)
                    if eps <= 0.0 or 2.0 * eps * L + eps * eps * Q >= 0.0:
                        continue
                elif 2.0 * L + Q < 0.0:
                    eps = 1.0
                else:
                    continue
                delta = 2.0 * eps * L + eps * eps * Q
                if eps >= 1.0:
                    state.replace_atom(pos, y_new)
                else:
                    state.split_atom(pos, eps * q, y_new)
                if qmds:
                    moments = moments_from_arrays(state.X, state.mass, state.atoms)
                moved += eps * q
                max_delta = max(max_delta, delta)
                any_accepted = True
            if full_move:
                # consolidation: with a profile uniquely minimized at zero, moving
                # a row atom onto its best-valued sibling always lowers the energy,
                # so split rows collapse to a single atom.
                while True:
                    row = state.row_positions(i)
                    if len(row) <= 1:
                        break
                    jvals = [_marginal_value_arrays(state.X, state.mass, state.atoms,
                                                    cost, x, state.atoms[p]) for p in row]
                    order = np.argsort(jvals)  # ties still yield distinct slots
                    dst = int(row[order[0]])
                    src = int(row[order[-1]])
                    q = float(state.mass[src])
                    y_old = np.array(state.atoms[src])
                    y_new = np.array(state.atoms[dst])
                    L = q * (jvals[order[0]] - jvals[order[-1]])
                    base = cost.base(x, x)
                    Q = 2.0 * q * q * (cost.profile(base, 0.0)
                                       - cost.profile(base, cost.t_value(y_old, y_new)))
                    state.replace_atom(src, y_new)
                    if qmds:
                        moments = moments_from_arrays(state.X, state.mass, state.atoms)
                    moved += q
                    max_delta = max(max_delta, 2.0 * L + Q)
                    any_accepted = True
        E_new = state.energy(cost)
        trace.add(E_new, state.split_fraction(), moved,
                  max_delta if any_accepted else 0.0)
        improvement = E - E_new
        E = E_new
        if not any_accepted:
            break
        if improvement <= config.rel_tol * (1.0 + abs(E)):
            break
    return state.to_plan(), trace


def pca_solve(cloud: PointCloud, m: int) -> DeterministicMap:
    """Project onto the top-m eigenvectors of the weighted covariance."""
    if m > cloud.dim_d:
        raise InputError(f"cannot embed into {m} dimensions from {cloud.dim_d}")
    if m < 1:
        raise InputError("embedding dimension must be >= 1")
    Xc = cloud.points - cloud.mean()
    C = (Xc.T * cloud.weights) @ Xc
    vals, vecs = np.linalg.eigh(C)
    V = vecs[:, ::-1][:, :m]
    # fix eigenvector signs so output is stable across runs
    for j in range(m):
        k = int(np.argmax(np.abs(V[:, j])))
        if V[k, j] < 0:
            V[:, j] = -V[:, j]
    return DeterministicMap(Xc @ V)
