"""
Levenberg-Marquardt minimization of the robustified pose graph objective

    sum_e rho_huber(d_e^T Sigma_e^-1 d_e)

over the spline knots, the anchor pose and the per-segment IMU biases. Huber
enters through IRLS weights on the squared Mahalanobis norm. The normal
equations are assembled block-sparse (knots by time, then anchor, then
biases) and solved with ``scipy.sparse.linalg.spsolve``.
"""

from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from tools_georef.common.exceptions import GraphError
from tools_georef.common.logger_ import setup_logger
from tools_georef.common.models import OptimizerOptions
from tools_georef.common.types import EdgeKind, FloatArray, Vector3
from tools_georef.trajectory.imu import DEFAULT_GRAVITY
from tools_georef.trajectory.spline import KNOT_DOF, AnchorState, SplineTrajectory

from .edges import ANCHOR, BlockKey, GraphEdge, Linearization, huber, knot, linearize

logger = setup_logger(__name__)

_DAMPING_FLOOR = 1e-6


@dataclass
class PoseGraph:
    """Vertices (spline knots, anchor and biases) and the edges between them."""

    spline: SplineTrajectory
    anchor: AnchorState
    edges: list[GraphEdge] = field(default_factory=list)
    gravity: Vector3 = field(default_factory=lambda: DEFAULT_GRAVITY.copy())

    def add(self, edge: GraphEdge) -> None:
        self.edges.append(edge)

    def extend(self, edges: Iterable[GraphEdge]) -> None:
        self.edges.extend(edges)

    @property
    def has_absolute(self) -> bool:
        return any(
            e.kind in (EdgeKind.ABSOLUTE_POSE, EdgeKind.ABSOLUTE_POSITION)
            for e in self.edges
        )

    def edge_counts(self) -> dict[str, int]:
        counts: dict[str, int] = defaultdict(int)
        for edge in self.edges:
            counts[edge.kind.value] += 1
        return dict(sorted(counts.items()))


@dataclass(frozen=True)
class OptimizationReport:
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    termination: str
    initial_costs: dict[str, float]
    final_costs: dict[str, float]
    edge_counts: dict[str, int]

    def lines(self) -> list[str]:
        """``key = value`` lines of the text report."""
        out = [
            f"initial_cost = {self.initial_cost!r}",
            f"final_cost = {self.final_cost!r}",
            f"iterations = {self.iterations}",
            f"converged = {str(self.converged).lower()}",
            f"termination = {self.termination}",
        ]
        out += [f"edges.{kind} = {n}" for kind, n in self.edge_counts.items()]
        out += [
            f"initial_cost.{kind} = {cost!r}"
            for kind, cost in self.initial_costs.items()
        ]
        out += [
            f"final_cost.{kind} = {cost!r}" for kind, cost in self.final_costs.items()
        ]
        return out


@dataclass(frozen=True)
class OptimizationResult:
    spline: SplineTrajectory
    anchor: AnchorState
    report: OptimizationReport


class _Layout:
    """Column offsets of the free parameter blocks."""

    def __init__(self, graph: PoseGraph, options: OptimizerOptions) -> None:
        spline, anchor = graph.spline, graph.anchor
        touched: set[BlockKey] = set()
        for edge in graph.edges:
            touched.update(_touched_blocks(edge, spline))

        fix_anchor = options.fix_anchor
        if fix_anchor is None:
            fix_anchor = not graph.has_absolute

        ordered: list[BlockKey] = [knot(k) for k in range(spline.n_knots)]
        ordered.append(ANCHOR)
        ordered += [("bias", s) for s in range(anchor.n_segments)]

        fixed: set[BlockKey] = set()
        if options.fix_first_knot:
            fixed.add(knot(0))
        if fix_anchor:
            fixed.add(ANCHOR)
        untouched_knots = [
            key[1]
            for key in ordered
            if key[0] == "knot" and key not in touched and key not in fixed
        ]
        if untouched_knots:
            raise GraphError(
                f"knots not constrained by any edge: {untouched_knots}",
                details={"knots": untouched_knots},
            )
        fixed.update(key for key in ordered if key not in touched)

        self.offsets: dict[BlockKey, int] = {}
        size = 0
        for key in ordered:
            if key in fixed:
                continue
            self.offsets[key] = size
            size += KNOT_DOF
        self.size = size
        self.fixed = fixed

    def split(
        self, delta: FloatArray, spline: SplineTrajectory, anchor: AnchorState
    ) -> tuple[FloatArray, FloatArray, FloatArray]:
        knots = np.zeros((spline.n_knots, KNOT_DOF))
        anchor_delta = np.zeros(6)
        biases = np.zeros((anchor.n_segments, 6))
        for key, offset in self.offsets.items():
            block = delta[offset : offset + KNOT_DOF]
            if key[0] == "knot":
                knots[key[1]] = block
            elif key[0] == "anchor":
                anchor_delta = block
            else:
                biases[key[1]] = block
        return knots, anchor_delta, biases


def _touched_blocks(edge: GraphEdge, spline: SplineTrajectory) -> set[BlockKey]:
    blocks: set[BlockKey] = {("bias", s) for s in edge.segments}
    for t in edge.stamps:
        i, _ = spline.segment(t)
        blocks.update(knot(i + j) for j in range(spline.order))
    if edge.kind in (EdgeKind.ABSOLUTE_POSE, EdgeKind.ABSOLUTE_POSITION):
        blocks.add(ANCHOR)
    return blocks


@dataclass
class _System:
    cost: float
    costs: dict[str, float]
    hessian: sparse.csc_matrix
    gradient: FloatArray


def _evaluate(
    graph: PoseGraph,
    spline: SplineTrajectory,
    anchor: AnchorState,
    layout: _Layout,
    threads: int,
    with_system: bool = True,
) -> _System:
    def run(edge: GraphEdge) -> Linearization:
        return linearize(edge, spline, anchor, graph.gravity)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            linearizations = list(pool.map(run, graph.edges))
    else:
        linearizations = [run(edge) for edge in graph.edges]

    cost = 0.0
    costs: dict[str, float] = defaultdict(float)
    gradient = np.zeros(layout.size)
    blocks: dict[tuple[int, int], FloatArray] = {}
    for edge, lin in zip(graph.edges, linearizations):
        whitened = edge.sqrt_information @ lin.residual
        robust, weight = huber(float(whitened @ whitened), edge.huber_delta)
        cost += robust
        costs[edge.kind.value] += robust
        if not with_system:
            continue
        free = [
            (layout.offsets[key], edge.sqrt_information @ jac)
            for key, jac in lin.jacobians.items()
            if key in layout.offsets
        ]
        for col, jac in free:
            gradient[col : col + KNOT_DOF] += weight * (jac.T @ whitened)
            for col_b, jac_b in free:
                if col_b < col:
                    continue
                block = weight * (jac.T @ jac_b)
                if (col, col_b) in blocks:
                    blocks[(col, col_b)] = blocks[(col, col_b)] + block
                else:
                    blocks[(col, col_b)] = block

    rows: list[FloatArray] = []
    cols: list[FloatArray] = []
    vals: list[FloatArray] = []
    grid_r, grid_c = np.meshgrid(
        np.arange(KNOT_DOF), np.arange(KNOT_DOF), indexing="ij"
    )
    for (col_a, col_b), block in blocks.items():
        rows.append((col_a + grid_r).ravel())
        cols.append((col_b + grid_c).ravel())
        vals.append(block.ravel())
        if col_a != col_b:
            rows.append((col_b + grid_c).ravel())
            cols.append((col_a + grid_r).ravel())
            vals.append(block.ravel())
    if rows:
        hessian = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(layout.size, layout.size),
        ).tocsc()
    else:
        hessian = sparse.csc_matrix((layout.size, layout.size))
    return _System(cost, dict(sorted(costs.items())), hessian, gradient)


def normal_equations(
    graph: PoseGraph, options: Optional[OptimizerOptions] = None
) -> tuple[sparse.csc_matrix, FloatArray]:
    """Gauss-Newton Hessian and gradient of the free parameters at the current state."""
    options = options or OptimizerOptions()
    layout = _Layout(graph, options)
    system = _evaluate(graph, graph.spline, graph.anchor, layout, options.threads)
    return system.hessian, system.gradient


def _gradient_small(gradient: FloatArray, tolerance: float) -> bool:
    return bool(np.max(np.abs(gradient), initial=0.0) < tolerance)


def optimize(
    graph: PoseGraph, options: Optional[OptimizerOptions] = None
) -> OptimizationResult:
    """
    Minimize the graph objective.

    Terminates on a relative cost decrease below ``options.relative_decrease``,
    a gradient infinity-norm below ``options.gradient_tolerance``, no descent
    at maximum damping, or ``options.max_iterations`` accepted steps.

    Raises:
        GraphError: Unconstrained knots, or no finite step up to the maximum damping
    """
    options = options or OptimizerOptions()
    layout = _Layout(graph, options)
    spline, anchor = graph.spline, graph.anchor
    system = _evaluate(graph, spline, anchor, layout, options.threads)
    initial_cost, initial_costs = system.cost, system.costs
    logger.info(
        "Optimizing %d parameters over %d edges %s, initial cost %.6g",
        layout.size,
        len(graph.edges),
        graph.edge_counts(),
        initial_cost,
    )

    damping = options.initial_damping
    iterations = 0
    converged = False
    termination = "max_iterations"
    if layout.size == 0 or _gradient_small(
        system.gradient, options.gradient_tolerance
    ):
        converged, termination = True, "gradient"

    while not converged and iterations < options.max_iterations:
        diagonal = np.maximum(system.hessian.diagonal(), _DAMPING_FLOOR)
        damped = (system.hessian + sparse.diags(damping * diagonal)).tocsc()
        step = np.asarray(spsolve(damped, -system.gradient)).reshape(-1)
        if not np.all(np.isfinite(step)):
            damping *= 10.0
            if damping > options.max_damping:
                raise GraphError(
                    "normal equations stay indefinite after damping escalation",
                    details={"damping": damping, "iterations": iterations},
                )
            continue

        knots, anchor_delta, biases = layout.split(step, spline, anchor)
        candidate_spline = spline.retract(knots)
        candidate_anchor = anchor.retract(anchor_delta, biases)
        trial = _evaluate(
            graph,
            candidate_spline,
            candidate_anchor,
            layout,
            options.threads,
            with_system=False,
        )
        if trial.cost <= system.cost:
            decrease = (system.cost - trial.cost) / max(system.cost, 1e-300)
            spline, anchor = candidate_spline, candidate_anchor
            system = _evaluate(graph, spline, anchor, layout, options.threads)
            iterations += 1
            damping = max(damping / 10.0, 1e-15)
            logger.debug(
                "LM iteration %d: cost %.9g, damping %.1e, |step| %.3e",
                iterations,
                system.cost,
                damping,
                float(np.linalg.norm(step)),
            )
            if decrease < options.relative_decrease:
                converged, termination = True, "relative_decrease"
            elif _gradient_small(system.gradient, options.gradient_tolerance):
                converged, termination = True, "gradient"
        else:
            damping *= 10.0
            if damping > options.max_damping:
                converged, termination = True, "no_descent"

    report = OptimizationReport(
        initial_cost=initial_cost,
        final_cost=system.cost,
        iterations=iterations,
        converged=converged,
        termination=termination,
        initial_costs=initial_costs,
        final_costs=system.costs,
        edge_counts=graph.edge_counts(),
    )
    logger.info(
        "Optimization finished after %d iterations (%s): cost %.6g -> %.6g",
        iterations,
        termination,
        initial_cost,
        system.cost,
    )
    return OptimizationResult(spline, anchor, report)
