"""
Integrating-factor RK4 (Lawson) stepper for the periodic Navier-Stokes system

    d/dt u^ = -|xi|^2 u^ - P div(u (x) u)^,

used only as an independent oracle for the Picard construction.
"""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from core.exceptions import ConfigurationError, StepSizeError
from core.services.mild_solver import TimeGrid, Trajectory, _project_data, nonlinear_spectrum
from core.utils.fields import Field, Grid, fft, ifft

logger = logging.getLogger(__name__)

# halvings attempted when adapt=True
MAX_REDUCTIONS = 6


def _rhs(spec: np.ndarray, grid: Grid, nonlinear: bool) -> np.ndarray:
    if not nonlinear:
        return np.zeros_like(spec)
    u = Field(grid, ifft(spec, grid).real)
    return -nonlinear_spectrum(u, u)


def _cfl(spec: np.ndarray, grid: Grid, dt: float) -> float:
    u = ifft(spec, grid).real
    return dt * float(np.sqrt(np.sum(u ** 2, axis=0)).max()) / grid.h


def reference_solve(u0: Field, T: float, steps: int, grid: Optional[Grid] = None, nonlinear: bool = True,
                    save_every: Optional[int] = None, adapt: bool = False) -> Trajectory:
    """
    Integrates from 0 to T with `steps` uniform steps.

    Stores the state every `save_every` steps (only the final state when
    None). The CFL number dt max|u| / h must stay <= 1; otherwise a
    StepSizeError is raised, or with adapt=True the step is halved (logged)
    up to MAX_REDUCTIONS times.
    """
    u0 = _project_data(u0)
    if grid is not None and grid != u0.grid:
        raise ConfigurationError(f"initial data lives on {u0.grid}, not {grid}", key='grid')
    grid = u0.grid
    if not T > 0 or steps < 1:
        raise ConfigurationError(f"need T > 0 and steps >= 1, got T={T}, steps={steps}", key='steps')
    save_every = save_every or steps

    for _ in range(MAX_REDUCTIONS + 1):
        dt = T / steps
        cfl = _cfl(fft(u0.values, grid), grid, dt)
        if cfl <= 1.0:
            break
        if not adapt:
            raise StepSizeError(f"CFL number {cfl:.3g} > 1 with dt={dt:g}; increase steps")
        logger.warning("reference solver: CFL %.3g at dt=%g, halving the step", cfl, dt)
        steps *= 2
        save_every *= 2
    else:
        raise StepSizeError(f"CFL still violated after {MAX_REDUCTIONS} step reductions")

    kappa = grid.xi_norm ** 2
    E = np.exp(-kappa * dt)
    E2 = np.exp(-kappa * dt / 2.0)
    spec = fft(u0.values, grid)
    times, fields = [], []
    for step in range(1, steps + 1):
        k1 = _rhs(spec, grid, nonlinear)
        k2 = _rhs(E2 * (spec + dt / 2.0 * k1), grid, nonlinear)
        k3 = _rhs(E2 * spec + dt / 2.0 * k2, grid, nonlinear)
        k4 = _rhs(E * spec + dt * E2 * k3, grid, nonlinear)
        spec = E * spec + dt / 6.0 * (E * k1 + 2.0 * E2 * (k2 + k3) + k4)
        if nonlinear:
            cfl = _cfl(spec, grid, dt)
            if cfl > 1.0:
                raise StepSizeError(f"CFL number {cfl:.3g} > 1 at t={step * dt:g}")
        if step % save_every == 0 or step == steps:
            times.append(step * dt if step < steps else T)
            fields.append(Field(grid, ifft(spec, grid).real))
    logger.info("reference solve to T=%g in %d steps (dt=%g)", T, steps, dt)
    return Trajectory(TimeGrid.from_times(times), tuple(fields), status='reference',
                      meta={'steps': steps, 'dt': dt, 'nonlinear': nonlinear})
