"""Absolute start position from one snapshot of inter-microphone phases.

The pairwise phase differences fix range differences only up to whole
wavelengths.  We search the start point P and the integer wraps N jointly:

    min_{P, N}  sum_{i<j} ( lam * (n_ij + theta_ij / 2pi) - (|P - m_i| - |P - m_j|) )^2

with a genetic algorithm.  A brute-force enumeration over the wraps serves as
the reference solver for small arrays.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded, InsufficientData, InvalidArgument
from .signal_core import Medium, wrap_phase
from .sim import WORKSPACE_RANGE

MIN_PAIRS = 6


@dataclass
class PhaseDifferenceSet:
    pairs: np.ndarray  # (n_pairs, 2) mic indices, i < j
    theta: np.ndarray  # (n_pairs,) radians in [-pi, pi)
    wavelength: object  # metres, scalar or one per pair
    geometry: object

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=int).reshape(-1, 2)
        self.theta = np.asarray(self.theta, dtype=float)
        if len(self.theta) != len(self.pairs):
            raise InvalidArgument("one theta per pair")
        if np.any(self.pairs[:, 0] == self.pairs[:, 1]):
            raise InvalidArgument("pair with i == j")
        if self.pairs.min() < 0 or self.pairs.max() >= self.geometry.n_mics:
            raise InvalidArgument("pair index outside geometry")
        if np.ndim(self.wavelength):
            self.wavelength = np.asarray(self.wavelength, dtype=float)
            if self.wavelength.shape != self.theta.shape:
                raise InvalidArgument("one wavelength per pair")
        if np.any(np.asarray(self.wavelength) <= 0):
            raise InvalidArgument("wavelength must be > 0")

    @classmethod
    def combine(cls, sets):
        """Stack phase sets of one geometry taken at different wavelengths."""
        sets = list(sets)
        if not sets:
            raise InvalidArgument("nothing to combine")
        lam = np.concatenate([np.broadcast_to(s.wavelength, (s.n_pairs,)) for s in sets])
        return cls(np.vstack([s.pairs for s in sets]), np.concatenate([s.theta for s in sets]),
                   lam, sets[0].geometry)

    @property
    def n_pairs(self):
        return len(self.pairs)

    def baseline(self):
        m = self.geometry.mic_positions
        return np.linalg.norm(m[self.pairs[:, 0]] - m[self.pairs[:, 1]], axis=1)

    def wrap_bounds(self):
        """Largest |n_ij|; |d_i - d_j| <= baseline caps n + theta/2pi."""
        return np.floor(self.baseline() / self.wavelength + 0.5).astype(int)

    def theta_matrix(self):
        n = self.geometry.n_mics
        t = np.full((n, n), np.nan)
        for (i, j), th in zip(self.pairs, self.theta):
            t[i, j] = th
            t[j, i] = -th
        return t

    def subset(self, mics):
        """Phases restricted to the given microphones (re-indexed)."""
        mics = list(mics)
        keep = [k for k, (i, j) in enumerate(self.pairs) if i in mics and j in mics]
        pairs = np.array([[mics.index(i), mics.index(j)] for i, j in self.pairs[keep]])
        lam = self.wavelength[keep] if np.ndim(self.wavelength) else self.wavelength
        return PhaseDifferenceSet(pairs, self.theta[keep], lam, self.geometry.subset(mics))


@dataclass
class StartFix:
    position: np.ndarray
    wraps: np.ndarray
    residual: float
    converged: bool
    generations: int = 0
    ambiguous: bool = False
    alternatives: list = field(default_factory=list)

    def header(self):
        x, y, z = self.position
        return (f"# StartFix x={x:.6f} y={y:.6f} z={z:.6f} residual={self.residual:.6e} "
                f"converged={int(self.converged)} wraps={' '.join(str(int(n)) for n in self.wraps)}")


@dataclass(frozen=True)
class Workspace:
    max_range: float = WORKSPACE_RANGE
    min_range: float = 0.02
    min_z: float = 0.0
    center: tuple = (0.0, 0.0, 0.0)

    def contains(self, p):
        p = np.asarray(p, dtype=float)
        r = np.linalg.norm(p - np.asarray(self.center), axis=-1)
        return (p[..., 2] >= self.min_z - 1e-12) & (r <= self.max_range) & (r >= self.min_range)

    def sample(self, rng, n):
        out = np.empty((0, 3))
        c = np.asarray(self.center)
        while len(out) < n:
            p = rng.uniform(-1, 1, (2 * n, 3)) * self.max_range
            p[:, 2] = np.abs(p[:, 2])
            p = p + c
            p[:, 2] = np.maximum(p[:, 2], self.min_z)
            out = np.vstack([out, p[self.contains(p)]])
        return out[:n]

    def project(self, p):
        c = np.asarray(self.center)
        p = np.array(p, dtype=float)
        p[..., 2] = np.maximum(p[..., 2], self.min_z)
        v = p - c
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        scale = np.clip(r, self.min_range, self.max_range) / np.maximum(r, 1e-12)
        return c + v * scale


def pairwise_phase_differences(wrapped_phase, geometry, wavelength, secondary_wavelength=None,
                               low_snr=None, medium=Medium()):
    """Range-difference phases for every usable microphone pair.

    ``wrapped_phase`` holds one propagation phase per mic from a single slot.
    That phase also carries the secondary tone's path from the fixed source,
    which is known and removed here when ``secondary_wavelength`` is given.
    """
    phase = np.asarray(wrapped_phase, dtype=float)
    n = geometry.n_mics
    if phase.shape != (n,):
        raise InvalidArgument(f"expected {n} phases")
    if secondary_wavelength is not None:
        ds = np.linalg.norm(geometry.secondary_source_position - geometry.mic_positions, axis=1)
        phase = phase + 2 * np.pi * ds / secondary_wavelength
    ok = np.isfinite(phase)
    if low_snr is not None:
        ok &= ~np.asarray(low_snr, dtype=bool)
    pairs = [(i, j) for i, j in itertools.combinations(range(n), 2) if ok[i] and ok[j]]
    if len(pairs) < MIN_PAIRS:
        raise InsufficientData(f"only {len(pairs)} usable mic pairs (need {MIN_PAIRS})")
    pairs = np.array(pairs)
    theta = wrap_phase(phase[pairs[:, 0]] - phase[pairs[:, 1]])
    return PhaseDifferenceSet(pairs, theta, wavelength, geometry)


def _range_differences(points, phases):
    m = phases.geometry.mic_positions
    d = np.linalg.norm(np.asarray(points)[..., None, :] - m, axis=-1)
    return d[..., phases.pairs[:, 0]] - d[..., phases.pairs[:, 1]]


def tdoa_objective(position, wraps, phases, medium=None):
    """Sum of squared misfits between wrapped-phase and geometric range differences."""
    lam = phases.wavelength
    meas = lam * (np.asarray(wraps) + phases.theta / (2 * np.pi))
    r = meas - _range_differences(position, phases)
    return np.sum(r * r, axis=-1)


def implied_wraps(position, phases):
    """Per pair, the integer wrap that best explains ``position``."""
    lam = phases.wavelength
    n = np.round(_range_differences(position, phases) / lam - phases.theta / (2 * np.pi))
    b = phases.wrap_bounds()
    return np.clip(n, -b, b).astype(int)


def _gauss_newton(points, wraps, phases, workspace, iterations=10):
    """Vectorised damped Gauss-Newton on P with wraps held fixed."""
    m = phases.geometry.mic_positions
    i, j = phases.pairs[:, 0], phases.pairs[:, 1]
    meas = phases.wavelength * (wraps + phases.theta / (2 * np.pi))
    p = np.array(points, dtype=float)
    for _ in range(iterations):
        v = p[..., None, :] - m
        d = np.linalg.norm(v, axis=-1)
        u = v / np.maximum(d[..., None], 1e-12)
        r = meas - (d[..., i] - d[..., j])
        jac = u[..., i, :] - u[..., j, :]
        jtj = np.einsum("...ki,...kj->...ij", jac, jac) + 1e-12 * np.eye(3)
        jtr = np.einsum("...ki,...k->...i", jac, r)
        step = np.linalg.solve(jtj, jtr[..., None])[..., 0]
        step_n = np.linalg.norm(step, axis=-1, keepdims=True)
        step = step * np.minimum(1.0, 0.05 / np.maximum(step_n, 1e-15))
        p = workspace.project(p + step)
    return p


def _polish(p, phases, workspace, rounds=3):
    n = implied_wraps(p, phases)
    for _ in range(rounds):
        p = _gauss_newton(p, n, phases, workspace)
        n_new = implied_wraps(p, phases)
        if np.array_equal(n_new, n):
            break
        n = n_new
    return p, n


def convergence_threshold(phases):
    lam = np.broadcast_to(phases.wavelength, (phases.n_pairs,))
    return float(np.sum(lam ** 2) / 400.0)


def solve_start_point(phases, workspace=Workspace(), seed=None, population=200,
                      generations=500, tournament=3, mutation_rate=0.05, elitism=2,
                      blend_alpha=0.5, position_sigma=0.05, repair_rate=1.0, patience=60,
                      n_refine=10, immigrants=0.1, threshold=None, n_alternatives=4):
    """Genetic search over (P, N).

    Genome: continuous P and bounded integer wraps.  Tournament selection,
    blend crossover on P, uniform crossover plus random-reset mutation on N,
    Gaussian jitter on P, a share of random immigrants to keep the population
    from collapsing onto a replica minimum, and elitism.  Offspring are repaired with probability
    ``repair_rate`` by snapping N to the wraps P implies, and the best
    ``n_refine`` individuals are refined by Gauss-Newton each generation.
    Stops once the best residual is under ``threshold`` and has not halved for
    ``patience`` generations, or after ``generations``.
    """
    rng = np.random.default_rng(seed)
    bounds = phases.wrap_bounds()
    thr = convergence_threshold(phases) if threshold is None else threshold
    n_p = phases.n_pairs

    pos = workspace.sample(rng, population)
    wr = implied_wraps(pos, phases)
    fit = tdoa_objective(pos, wr, phases)
    best_hist = np.inf
    stall = 0
    gen = 0
    for gen in range(1, generations + 1):
        order = np.argsort(fit)
        pos, wr, fit = pos[order], wr[order], fit[order]
        # refine the best few in place (Lamarckian)
        ep, en = _polish(pos[:n_refine], phases, workspace)
        pos[:n_refine], wr[:n_refine] = ep, en
        fit[:n_refine] = tdoa_objective(ep, en, phases)
        order = np.argsort(fit)
        pos, wr, fit = pos[order], wr[order], fit[order]

        if fit[0] < 0.5 * best_hist:
            best_hist = fit[0]
            stall = 0
        else:
            stall += 1
        if best_hist < thr and stall >= patience:
            break

        n_child = population - elitism
        cand = rng.integers(0, population, (2, n_child, tournament))
        parents = cand[np.arange(2)[:, None], np.arange(n_child)[None, :],
                       np.argmin(fit[cand], axis=2)]
        pa, pb = parents
        u = rng.uniform(-blend_alpha, 1 + blend_alpha, (n_child, 3))
        child_p = pos[pa] + u * (pos[pb] - pos[pa])
        child_p += rng.normal(0, position_sigma, child_p.shape) * (rng.random((n_child, 1)) < 0.3)
        fresh = rng.random(n_child) < immigrants
        child_p[fresh] = workspace.sample(rng, int(fresh.sum()))
        child_p = workspace.project(child_p)
        mask = rng.random((n_child, n_p)) < 0.5
        child_n = np.where(mask, wr[pa], wr[pb])
        mut = rng.random((n_child, n_p)) < mutation_rate
        child_n = np.where(mut, rng.integers(-bounds, bounds + 1, (n_child, n_p)), child_n)
        rep = rng.random(n_child) < repair_rate
        child_n[rep] = implied_wraps(child_p[rep], phases)
        child_f = tdoa_objective(child_p, child_n, phases)

        pos = np.vstack([pos[:elitism], child_p])
        wr = np.vstack([wr[:elitism], child_n])
        fit = np.concatenate([fit[:elitism], child_f])

    k = int(np.argmin(fit))
    p, n = _polish(pos[k], phases, workspace)
    res = float(tdoa_objective(p, n, phases))
    if res > fit[k]:
        p, n, res = pos[k], wr[k], float(fit[k])
    ok = bool(res < thr and workspace.contains(p))
    # runner-up basins left in the final population (distinct points)
    order = np.argsort(fit)[:n_alternatives * 4]
    alts = []
    for q, f in zip(pos[order], fit[order]):
        if len(alts) >= n_alternatives or f > max(thr, 10 * res):
            break
        if np.linalg.norm(q - p) > 1e-3 and all(np.linalg.norm(q - a) > 1e-3 for a in alts):
            alts.append(np.asarray(q, dtype=float))
    return StartFix(np.asarray(p, dtype=float), np.asarray(n, dtype=int), res, ok, gen,
                    alternatives=alts)


def _grid_starts(workspace, step):
    c = np.asarray(workspace.center)
    ax = np.arange(-workspace.max_range, workspace.max_range + 1e-9, step)
    az = np.arange(max(workspace.min_z, 0.0) + step / 2, workspace.max_range + 1e-9, step)
    g = np.stack(np.meshgrid(ax, ax, az, indexing="ij"), axis=-1).reshape(-1, 3) + c
    return g[workspace.contains(g)]


def _reference_solutions(ref_phases, combos, ref_mic, workspace):
    """Start points implied by each wrap combination on the reference pairs.

    For a planar array (all mics at one height) with the reference mic as
    origin, ``|m_j|^2 - 2 m_j.P = 2 d_0 r_j + r_j^2`` is linear in
    ``(x, y, d_0)``; z then follows from ``d_0`` on the upper side.
    """
    m = ref_phases.geometry.mic_positions
    lam = ref_phases.wavelength
    others = np.where(ref_phases.pairs[:, 0] == ref_mic, ref_phases.pairs[:, 1],
                      ref_phases.pairs[:, 0])
    sign = np.where(ref_phases.pairs[:, 0] == ref_mic, -1.0, 1.0)
    # r_j = d_j - d_ref
    r = sign * lam * (combos + ref_phases.theta / (2 * np.pi))
    mj = m[others] - m[ref_mic]
    a = np.empty(r.shape + (3,))
    a[..., 0] = -2 * mj[:, 0]
    a[..., 1] = -2 * mj[:, 1]
    a[..., 2] = -2 * r
    rhs = r ** 2 - np.sum(mj ** 2, axis=1)
    ata = np.einsum("...ki,...kj->...ij", a, a)
    atb = np.einsum("...ki,...k->...i", a, rhs)
    sol = np.linalg.solve(ata + 1e-15 * np.eye(3), atb[..., None])[..., 0]
    x, y, d0 = sol[:, 0], sol[:, 1], sol[:, 2]
    z2 = d0 ** 2 - x ** 2 - y ** 2
    feasible = (d0 > 0) & (z2 > -(lam / 4) ** 2)
    p = np.stack([x, y, np.sqrt(np.maximum(z2, 0.0))], axis=1) + m[ref_mic]
    return p, feasible & workspace.contains(workspace.project(p))


def brute_force_start_point(phases, workspace=Workspace(), grid_step=0.15, budget=2_000_000,
                            tol=None, separation=1e-3, max_candidates=5000):
    """Reference solver: enumerate every wrap of the pairs through mic 0.

    Those wraps fix all independent range differences.  Each combination
    yields a start point (closed form for a planar array, otherwise
    Gauss-Newton from every ``grid_step`` grid start); the remaining pairs
    take the wraps that point implies and all pairs are polished by least
    squares.  The minimum over everything is returned.  When a distinct point
    (farther than ``separation``) reaches the same residual within ``tol`` the
    fix is flagged ambiguous and the other minimisers are listed.
    """
    ref_mic = 0
    ref = np.array([k for k, (i, j) in enumerate(phases.pairs) if ref_mic in (i, j)])
    if len(ref) < 3:
        raise InsufficientData("need three pairs through the reference microphone")
    bounds = phases.wrap_bounds()[ref]
    m = phases.geometry.mic_positions
    planar = np.ptp(m[:, 2]) < 1e-12
    starts = None if planar else _grid_starts(workspace, grid_step)
    n_combo = int(np.prod((2 * bounds + 1).astype(float)))
    cost = n_combo * (1 if planar else len(starts))
    if cost > budget:
        raise BudgetExceeded(f"{n_combo} wrap combinations (work {cost}) exceeds budget {budget}")
    lam = phases.wavelength[ref] if np.ndim(phases.wavelength) else phases.wavelength
    ref_phases = PhaseDifferenceSet(phases.pairs[ref], phases.theta[ref], lam, phases.geometry)
    combos = np.array(list(itertools.product(*[range(-b, b + 1) for b in bounds])))
    if planar:
        cand, ok = _reference_solutions(ref_phases, combos, ref_mic, workspace)
        cand, nn = cand[ok], combos[ok]
        r = tdoa_objective(cand, nn, ref_phases)
    else:
        cand_p, cand_n = [], []
        chunk = max(1, 200_000 // max(len(starts), 1))
        for s in range(0, len(combos), chunk):
            cb = combos[s:s + chunk]
            p = np.broadcast_to(starts, (len(cb),) + starts.shape).copy()
            p = _gauss_newton(p, cb[:, None, :], ref_phases, workspace, iterations=12)
            cand_p.append(p.reshape(-1, 3))
            cand_n.append(np.repeat(cb, len(starts), axis=0))
        cand, nn = np.concatenate(cand_p), np.concatenate(cand_n)
        r = tdoa_objective(cand, nn, ref_phases)
    if len(cand) == 0:
        p0 = workspace.project(np.array([0.0, 0.0, workspace.max_range / 2]))
        return StartFix(p0, implied_wraps(p0, phases), np.inf, False)
    if len(cand) > max_candidates:
        keep = np.argsort(r)[:max_candidates]
        cand = cand[keep]
    # merge near duplicates before the all-pair polish
    cand = np.unique(np.round(cand, 4), axis=0)
    q = cand
    n = implied_wraps(q, phases)
    for _ in range(3):
        q = _gauss_newton(q, n, phases, workspace)
        n = implied_wraps(q, phases)
    r = tdoa_objective(q, n, phases)
    order = np.argsort(r)
    q, n, r = q[order], n[order], r[order]
    best_p, best_n, best_r = q[0], n[0], float(r[0])
    if tol is None:
        tol = max(1e-12, 1e-3 * convergence_threshold(phases))
    near = (r <= best_r + tol) & (np.linalg.norm(q - best_p, axis=1) > separation)
    alts = []
    for p in q[near]:
        if all(np.linalg.norm(p - a) > separation for a in alts):
            alts.append(p)
    thr = convergence_threshold(phases)
    return StartFix(best_p, best_n, best_r, bool(best_r < thr), 0, ambiguous=bool(alts),
                    alternatives=alts)


def residual_map(phases, plane_points):
    """Objective over arbitrary points with the best wraps at each (for plots)."""
    n = implied_wraps(plane_points, phases)
    return tdoa_objective(plane_points, n, phases)
