"""Time loop coupling the flow solver and the level-set transport.

Each macro step solves the flow once for the current phase distribution and
then sub-cycles the explicit level-set update with its own stable step.
Prescribed-velocity benchmarks skip the flow solve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .diagnostics import DiagnosticsRecord, SteadyStateDetector, global_ink_volume, strand_cross_section
from .flow import FlowSolver, FlowStats, cosine_ramp, max_pressure
from .levelset import (LevelSetParams, advance_levelset, area_of_indicator, blend_properties,
                       phi_stats, stable_dt)
from .scenario import Case

log = logging.getLogger(__name__)


@dataclass
class StepLog:
    """One macro step; ``phi_min``/``phi_max`` are extremes over its level-set sub-steps."""

    time: float
    dt: float
    P_max: float
    max_div: float
    iterations: dict
    phi_sum: float
    phi_min: float
    phi_max: float
    substeps: int


@dataclass
class RunResult:
    records: list[DiagnosticsRecord] = field(default_factory=list)
    steps: list[StepLog] = field(default_factory=list)
    steady_time: float | None = None
    final_time: float = 0.0


class Simulation:
    """Advance a :class:`Case` in time.

    ``flow_dt`` is the macro step between flow solves; by default the
    interface may move half a cell per macro step at the case's reference
    speed.  ``cfl_adv`` and ``cfl_diff`` bound the level-set sub-steps.
    """

    def __init__(self, case: Case, params: LevelSetParams | None = None, flow_dt: float | None = None,
                 cfl_adv: float = 0.5, cfl_diff: float = 0.5):
        self.case = case
        self.grid = case.grid
        self.fields = case.fields
        self.params = params or case.params
        if self.params is None:
            raise ValueError("level-set parameters are required")
        self.cfl_adv = cfl_adv
        self.cfl_diff = cfl_diff
        self.t = 0.0
        self.solver = None
        if not case.prescribed:
            self.solver = FlowSolver(self.grid, case.boundary, case.flow_config)
        self.flow_dt = flow_dt or self._default_flow_dt()

    def _default_flow_dt(self) -> float:
        if self.case.prescribed:
            return math.inf
        sc = self.case.scenario
        speed = max(sc.v_bar_x, sc.v_p) if sc is not None else 1.0
        return 0.5 * self.grid.m_min / speed

    def _levelset_substeps(self, span: float) -> tuple[int, float]:
        dt = stable_dt(self.fields, self.params, self.grid, self.cfl_adv, self.cfl_diff, dt_max=span)
        n = max(1, math.ceil(span / dt * (1.0 - 1e-12)))
        return n, span / n

    def step(self, span: float) -> StepLog:
        """Advance by ``span`` seconds: one flow solve, then level-set sub-steps."""
        stats = FlowStats()
        lo, hi = math.inf, -math.inf
        if self.case.prescribed:
            n, dt = self._levelset_substeps(span)
            for _ in range(n):
                u, v = self.case.velocity(self.t + 0.5 * dt)
                self.fields.u[...] = u
                self.fields.v[...] = v
                advance_levelset(self.fields, self.params, dt, self.grid, self.case.phi_bc)
                lo, hi = self._track(lo, hi)
                self.t += dt
        else:
            rho, mu = blend_properties(self.fields.phi, self.case.props)
            ramp = cosine_ramp(self.t + 0.5 * span, self.case.ramp_time)
            stats = self.solver.advance(self.fields, rho, mu, span, ramp)
            n, dt = self._levelset_substeps(span)
            for _ in range(n):
                advance_levelset(self.fields, self.params, dt, self.grid, self.case.phi_bc)
                lo, hi = self._track(lo, hi)
            self.t += span
        s = phi_stats(self.fields.phi, self.grid)
        return StepLog(self.t, span, max_pressure(self.fields, self.grid), stats.max_divergence,
                       dict(stats.iterations), s["phi_sum"], lo, hi, n)

    def _track(self, lo: float, hi: float) -> tuple[float, float]:
        fluid = self.fields.phi[self.grid.fluid]
        return min(lo, float(fluid.min())), max(hi, float(fluid.max()))

    def measure(self) -> DiagnosticsRecord:
        """Diagnostics of the current state; the station section needs a deposition case."""
        case = self.case
        ink = global_ink_volume(self.fields.phi, self.grid)
        p_max = max_pressure(self.fields, self.grid)
        if case.station_x is not None:
            sec = strand_cross_section(self.fields.phi, self.grid, case.station_x)
            h_f = case.oracle["h_f"]
            return DiagnosticsRecord(self.t, sec["thickness"], h_f, p_max, ink, H=sec["top"])
        area = case.oracle.get("area", float("nan"))
        return DiagnosticsRecord(self.t, area_of_indicator(self.fields.phi, self.grid), area, p_max, ink)

    def run(self, duration: float | None = None, sample_interval: float | None = None,
            steady: SteadyStateDetector | None = None,
            on_sample: Callable[["Simulation", DiagnosticsRecord], None] | None = None,
            stop_when_steady: bool = False) -> RunResult:
        """Run to ``duration`` (default: the case's), sampling every ``sample_interval``."""
        end = self.case.duration if duration is None else duration
        if sample_interval is None:
            sample_interval = end / 50.0
        macro = min(self.flow_dt, sample_interval)
        result = RunResult()
        next_sample = self.t + sample_interval
        while self.t < end * (1.0 - 1e-12):
            span = min(macro, end - self.t, max(next_sample - self.t, 1e-15))
            if self.t < self.case.ramp_time:
                # keep the start-up ramp resolved whatever the macro step
                span = min(span, self.case.ramp_time / 8.0)
            result.steps.append(self.step(span))
            if self.t >= next_sample * (1.0 - 1e-12) or self.t >= end * (1.0 - 1e-12):
                next_sample += sample_interval
                rec = self.measure()
                result.records.append(rec)
                if on_sample is not None:
                    on_sample(self, rec)
                if steady is not None and steady.update(self.t, rec.A_s) and result.steady_time is None:
                    result.steady_time = self.t
                    log.info("steady at t = %.4g s", self.t)
                    if stop_when_steady:
                        break
        result.final_time = self.t
        return result


def profile_deviation(phi: np.ndarray, profile: np.ndarray) -> float:
    return float(np.abs(phi - profile).max())
