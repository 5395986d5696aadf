"""A control problem bundles everything needed to map controls to a cost."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cost import CostSpec, evaluate_cost, reduced_gradient
from .grid import Domain
from .potentials import PotentialSpec
from .sensitivity import solve_adjoint
from .state import Controls, ModelParams, SolverOptions, StateSnapshot, TimeGrid, solve_state


@dataclass
class ControlProblem:
    domain: Domain
    params: ModelParams
    potential: PotentialSpec
    timegrid: TimeGrid
    initial: StateSnapshot
    cost: CostSpec
    options: SolverOptions = field(default_factory=SolverOptions)

    @property
    def control_shape(self) -> tuple[int, int]:
        return (self.timegrid.steps, self.domain.size)

    @property
    def measure(self) -> float:
        """Weight tau*|cell| of one control unknown in the L2(Q) inner product."""
        return self.timegrid.tau * self.domain.cell_volume

    def zero_controls(self) -> Controls:
        return Controls.constant(self.domain, self.timegrid)

    def solve(self, controls: Controls):
        return solve_state(self.params, self.potential, controls, self.initial,
                           self.timegrid, self.domain, self.options)

    def reduced_cost(self, controls: Controls) -> float:
        return evaluate_cost(self.solve(controls), controls, self.cost)

    def cost_and_gradient(self, controls: Controls):
        """Returns (J, exact gradient, trajectory, adjoint)."""
        traj = self.solve(controls)
        adj = solve_adjoint(traj, self.cost)
        grad = reduced_gradient(traj, adj, controls, self.cost)
        return evaluate_cost(traj, controls, self.cost), grad, traj, adj

    def riesz(self, grad: Controls) -> Controls:
        """L2(Q) representative of an exact gradient (divides out tau*|cell|)."""
        return grad * (1.0 / self.measure)

    def l2q_norm(self, c: Controls) -> float:
        return float(np.sqrt(self.measure * (np.sum(c.u**2) + np.sum(c.w**2))))

    def with_timegrid(self, timegrid: TimeGrid, cost: CostSpec | None = None) -> "ControlProblem":
        return ControlProblem(self.domain, self.params, self.potential, timegrid,
                              self.initial, cost or self.cost, self.options)
