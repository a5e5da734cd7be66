"""Registration driver: L-BFGS inner solver and the annealed MM outer loop.

Each outer iteration freezes the closest-point targets and Gaussian weights,
then minimizes the resulting quadratic-plus-rotation surrogate with L-BFGS.
The kernel widths start wide and are halved between stages until the
alignment width reaches its floor, which trades off coarse alignment against
outlier suppression.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .correspond import (DEFAULT_EPS_D, DEFAULT_THETA_DEG, SpatialIndex,
                         find_correspondences, lift_rigid_to_state,
                         rigid_icp_init)
from .energy import EnergyParams, assemble_surrogate, total_energy
from .errors import InvalidInputError, SolverError
from .graph import DEFAULT_RADIUS_FACTOR, build_graph, transform_points
from .mesh import Surface, mean_edge_length

CURVATURE_EPS = 1e-12
MIN_STEP = 1e-12
MAX_INNER_ITERS = 500


@dataclass
class SolverParams:
    """All solver knobs, with the defaults used throughout."""

    m: int = 5                      # L-BFGS history size
    gamma: float = 0.3              # sufficient-decrease constant
    eps1: float = 1e-3              # inner energy-decrease tolerance
    eps2: float = 1e-3              # outer max-displacement tolerance
    i_max: int = 100                # outer iteration cap per annealing stage
    k_alpha: float = 1.0
    k_beta: float = 1.0
    nu_a_max_factor: float = 10.0   # x median initial correspondence distance
    nu_a_min_factor: float = 0.5    # x mean source edge length
    nu_r_max_factor: float = 40.0   # x mean source edge length
    fixed_nu: bool = False          # skip annealing (run once at the floor values)
    sampler: str = "pca"
    radius_factor: float = DEFAULT_RADIUS_FACTOR
    kernel: str = "welsch"
    eps_d: float = DEFAULT_EPS_D
    theta: float = DEFAULT_THETA_DEG
    icp_iters: int = 15

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise InvalidInputError("gamma must lie in (0, 1)")
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise InvalidInputError("tolerances must be positive")
        if self.nu_a_max_factor < self.nu_a_min_factor or self.nu_a_min_factor <= 0:
            raise InvalidInputError("need nu_a_max >= nu_a_min > 0")


class LbfgsHistory:
    """Ring buffer of (state difference, gradient difference) pairs."""

    def __init__(self, m):
        self.m = m
        self.pairs = []   # (S, T, rho), oldest first

    def push(self, S, T):
        rho = float(np.sum(T * S))
        # curvature safeguard: the recursion divides by rho
        if abs(rho) <= CURVATURE_EPS * np.linalg.norm(S) * np.linalg.norm(T):
            return False
        self.pairs.append((S, T, rho))
        if len(self.pairs) > self.m:
            self.pairs.pop(0)
        return True

    def clear(self):
        self.pairs = []

    def __len__(self):
        return len(self.pairs)


def two_loop_direction(hist: LbfgsHistory, grad, h0_solve):
    """L-BFGS descent direction from the two-loop recursion.

    ``h0_solve`` applies the inverse of the initial Hessian approximation.
    With an empty history this is a plain ``-H0^{-1} grad`` step.
    """
    Q = -grad
    xis = []
    for S, T, rho in reversed(hist.pairs):
        xi = float(np.sum(S * Q)) / rho
        Q = Q - xi * T
        xis.append(xi)
    xis.reverse()               # align with oldest-first iteration below
    R = h0_solve(Q)
    for (S, T, rho), xi in zip(hist.pairs, xis):
        eta = float(np.sum(T * R)) / rho
        R = R + S * (xi - eta)
    return R


def line_search(energy_fn, X, d, E0, g_dot_d, gamma):
    """Backtracking from step 1, halving until sufficient decrease holds.

    Returns ``(lam, X_new, E_new)`` or ``None`` if no step above the floor is
    accepted.
    """
    lam = 1.0
    while lam >= MIN_STEP:
        X_new = X + lam * d
        E_new = energy_fn(X_new)
        if E_new <= E0 + gamma * lam * g_dot_d:
            return lam, X_new, E_new
        lam *= 0.5
    return None


def solve_inner(sys, X_k, params: SolverParams):
    """Minimize one surrogate with L-BFGS; H0 is factored once and reused."""
    H0 = sys.assemble_H0()
    try:
        factor = splu(H0)
    except RuntimeError as exc:
        raise SolverError(f"H0 factorization failed: {exc}") from exc
    h0_solve = factor.solve     # multi-column right-hand sides solved together

    hist = LbfgsHistory(params.m)
    X = X_k
    E = sys.energy(X)
    G = sys.gradient(X)
    for _ in range(MAX_INNER_ITERS):
        d = two_loop_direction(hist, G, h0_solve)
        gd = float(np.sum(G * d))
        if gd >= 0.0:
            hist.clear()
            d = -h0_solve(G)
            gd = float(np.sum(G * d))
            if gd >= 0.0:
                d = -G
                gd = float(np.sum(G * d))
                if gd >= 0.0:   # zero gradient: already stationary
                    break
        step = line_search(sys.energy, X, d, E, gd, params.gamma)
        if step is None:
            # one steepest-descent retry, then give up on this surrogate
            d = -G
            gd = float(np.sum(G * d))
            step = line_search(sys.energy, X, d, E, gd, params.gamma)
            if step is None:
                break
        _, X_new, E_new = step
        G_new = sys.gradient(X_new)
        hist.push(X_new - X, G_new - G)
        decrease = E - E_new
        X, E, G = X_new, E_new, G_new
        if decrease < params.eps1:
            break
    return X


@dataclass
class TraceRow:
    stage: int
    outer_iter: int
    nu_a: float
    nu_r: float
    energy: float
    max_disp: float
    elapsed_seconds: float


@dataclass
class RegistrationResult:
    final_state: np.ndarray
    transformed_source: np.ndarray
    energy_trace: list[TraceRow]
    termination_reasons: list[str]
    graph: object = None
    rigid_init: object = None

    def write_trace_csv(self, path, include_timing=False):
        """One row per outer iteration.  Timing is off by default so that
        identical runs produce byte-identical files."""
        cols = "stage,outer_iter,nu_a,nu_r,energy,max_disp"
        if include_timing:
            cols += ",elapsed_seconds"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(cols + "\n")
            for row in self.energy_trace:
                line = (f"{row.stage},{row.outer_iter},{row.nu_a:.12g},"
                        f"{row.nu_r:.12g},{row.energy:.12g},{row.max_disp:.12g}")
                if include_timing:
                    line += f",{row.elapsed_seconds:.6f}"
                fh.write(line + "\n")


def anneal_stage_count(nu_max, nu_min):
    """Number of stages of the halving schedule from nu_max down to nu_min."""
    if nu_max <= nu_min:
        return 1
    return int(np.ceil(np.log2(nu_max / nu_min))) + 1


def register(source: Surface, target: Surface, params: SolverParams | None = None,
             graph=None, initial_state=None, seed_pairs=None):
    """Align the source surface to the target point set.

    Both surfaces are expected preprocessed: normalized to the common unit
    frame, with normals present.  Returns the final node transforms, the
    deformed source points, and the per-outer-iteration trace.
    """
    if params is None:
        params = SolverParams()
    if source.n_vertices == 0 or target.n_vertices == 0:
        raise InvalidInputError("empty surface")

    t_start = time.perf_counter()
    l_bar = mean_edge_length(source)
    if graph is None:
        graph = build_graph(source, R=params.radius_factor * l_bar,
                            sampler=params.sampler)
    if graph.n_nodes == 0:
        raise InvalidInputError("empty deformation graph")

    rigid = None
    if initial_state is None:
        rigid = rigid_icp_init(source, target, iters=params.icp_iters,
                               eps_d=params.eps_d, theta=params.theta,
                               seed_pairs=seed_pairs)
        X = lift_rigid_to_state(rigid, graph)
    else:
        X = np.array(initial_state, dtype=np.float64)

    index = SpatialIndex(target.vertices)
    moved = transform_points(graph, X)
    corr0 = find_correspondences(moved, target, index)
    d_bar = float(np.median(corr0.distances))

    nu_a_min = params.nu_a_min_factor * l_bar
    nu_a_max = max(params.nu_a_max_factor * d_bar, nu_a_min)
    nu_r_max = params.nu_r_max_factor * l_bar

    n = source.n_vertices
    n_edges = max(len(graph.node_edges), 1)
    alpha = params.k_alpha * n / n_edges
    beta = params.k_beta * n / graph.n_nodes

    if params.fixed_nu and params.kernel == "welsch":
        # ablation mode: single stage at the values annealing would end with
        halvings = anneal_stage_count(nu_a_max, nu_a_min) - 1
        nu_a = nu_a_min
        nu_r = nu_r_max * 0.5 ** halvings
        single_stage = True
    else:
        nu_a = nu_a_max
        nu_r = nu_r_max
        single_stage = params.kernel == "l2"

    trace = []
    reasons = []
    stage = 0
    while True:
        eparams = EnergyParams(nu_a, nu_r, alpha, beta, params.kernel)
        moved = transform_points(graph, X)
        reason = "i_max"
        for k in range(params.i_max):
            corr = find_correspondences(moved, target, index)
            sys = assemble_surrogate(graph, X, corr, eparams)
            X = solve_inner(sys, X, params)
            moved_new = transform_points(graph, X)
            max_disp = float(np.max(np.linalg.norm(moved_new - moved, axis=1)))
            corr_new = find_correspondences(moved_new, target, index)
            energy = total_energy(graph, X, corr_new, eparams)
            trace.append(TraceRow(stage, k, nu_a, nu_r, energy, max_disp,
                                  time.perf_counter() - t_start))
            moved = moved_new
            if max_disp < params.eps2:
                reason = "converged"
                break
        reasons.append(f"stage {stage}: {reason}")
        if single_stage or nu_a <= nu_a_min:
            break
        nu_a = max(0.5 * nu_a, nu_a_min)
        nu_r = 0.5 * nu_r
        stage += 1

    return RegistrationResult(
        final_state=X,
        transformed_source=transform_points(graph, X),
        energy_trace=trace,
        termination_reasons=reasons,
        graph=graph,
        rigid_init=rigid,
    )
