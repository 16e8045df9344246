"""Hookean spring-mass dynamics over flat or rugged ground.

Semi-implicit Euler with exponential velocity damping:

    v <- (v + dt * (F / m + g)) * exp(-dt * damping)

followed by a per-mass time-of-impact ground contact and a position update.
Two friction models: ``no_slip`` zeroes the velocity at impact, ``rugged``
removes min(|v_n|, |v_t|) from the tangential speed and cancels inward
normal velocity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .controller import CPG_OMEGA, ControllerParams
from .lattice import Morphology
from .terrain import Terrain, line_table

FRICTION_MODES = {"no_slip": K.NO_SLIP, "rugged": K.RUGGED}


class DegenerateSpring(RuntimeError):
    """A spring collapsed to zero length."""


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.004
    steps: int = 1000
    stiffness: float = 10000.0
    gravity: float = 9.8
    damping: float = 15.0
    act_amplitude: float = 0.1
    mass: float = 1.0

    def __post_init__(self):
        if self.dt <= 0 or self.steps < 1 or self.stiffness <= 0 or self.mass <= 0:
            raise ValueError(f"invalid simulation config: {self}")
        if not 0 <= self.act_amplitude < 1:
            raise ValueError("act_amplitude must lie in [0, 1)")

    def vector(self) -> np.ndarray:
        return np.array(
            [self.dt, self.stiffness, self.gravity, self.damping, self.act_amplitude, self.mass, CPG_OMEGA]
        )


@dataclass
class SimState:
    positions: np.ndarray
    velocities: np.ndarray
    step: int = 0

    def copy(self) -> "SimState":
        return SimState(self.positions.copy(), self.velocities.copy(), self.step)

    @property
    def com(self) -> np.ndarray:
        return self.positions.mean(axis=0)


@dataclass
class RolloutResult:
    loss: float
    com_trace: np.ndarray  # (n + 1, 2)
    final_state: SimState
    unstable: bool
    positions: np.ndarray | None = field(default=None, repr=False)

    @property
    def displacement(self) -> float:
        return -self.loss


def initial_state(morphology: Morphology) -> SimState:
    return SimState(np.array(morphology.positions, dtype=np.float64), np.zeros((morphology.n_masses, 2)))


def friction_code(friction_mode: str) -> int:
    try:
        return FRICTION_MODES[friction_mode]
    except KeyError:
        raise ValueError(f"unknown friction mode {friction_mode!r}") from None


def default_friction(terrain: Terrain | None) -> str:
    return "no_slip" if terrain is None or terrain.kind == "flat" else "rugged"


def _arrays(morphology: Morphology, params: ControllerParams):
    if params.w2.shape[0] != morphology.n_active:
        raise ValueError(
            f"controller drives {params.w2.shape[0]} springs but the body has {morphology.n_active} active"
        )
    if params.w1.shape[1] != 10 + 4 * morphology.n_masses:
        raise ValueError(
            f"controller expects {params.w1.shape[1]} inputs, body provides {10 + 4 * morphology.n_masses}"
        )
    act_idx = np.full(morphology.n_springs, -1, dtype=np.int64)
    act_idx[morphology.active] = np.arange(morphology.n_active)
    return (
        np.ascontiguousarray(params.w1, dtype=np.float64),
        np.ascontiguousarray(params.b1, dtype=np.float64),
        np.ascontiguousarray(params.w2, dtype=np.float64).reshape(morphology.n_active, params.w1.shape[0]),
        np.ascontiguousarray(params.b2, dtype=np.float64),
        np.ascontiguousarray(morphology.springs, dtype=np.int64).reshape(-1, 2),
        np.ascontiguousarray(morphology.rest_lengths, dtype=np.float64),
        act_idx,
    )


def _ground(terrain: Terrain | None):
    if terrain is None:
        return np.array([[-np.inf, np.inf, 0.0, 0.0, 0.0]]), False
    return line_table(terrain), True


def spring_forces(positions, morphology: Morphology, actuations, stiffness=10000.0, amplitude=0.1) -> np.ndarray:
    """Per-mass force from all springs, given actuations of the active springs.

    Raises:
        DegenerateSpring: if a spring has (near) zero length. Its force is
            left at zero in the kernel.
    """
    act_idx = np.full(morphology.n_springs, -1, dtype=np.int64)
    act_idx[morphology.active] = np.arange(morphology.n_active)
    actuations = np.asarray(actuations, dtype=np.float64)
    if actuations.shape != (morphology.n_active,):
        raise ValueError("actuation vector length must equal the active spring count")
    F = np.zeros((morphology.n_masses, 2))
    status = K.spring_forces(
        np.ascontiguousarray(positions, dtype=np.float64),
        np.ascontiguousarray(morphology.springs, dtype=np.int64).reshape(-1, 2),
        np.ascontiguousarray(morphology.rest_lengths, dtype=np.float64),
        act_idx,
        actuations,
        float(stiffness),
        float(amplitude),
        F,
    )
    if status == K.DEGENERATE:
        raise DegenerateSpring("spring shorter than 1e-9")
    return F


def resolve_contact_flat(position, velocity, dt: float):
    """No-slip impact against y = 0 for a single mass with pre-contact velocity."""
    lines = np.array([[-np.inf, np.inf, 0.0, 0.0, 0.0]])
    x, y, vx, vy, _ = K.contact(float(position[0]), float(position[1]), float(velocity[0]),
                                float(velocity[1]), float(dt), lines, K.NO_SLIP)
    return np.array([x, y]), np.array([vx, vy])


def resolve_contact_rugged(position, velocity, terrain: Terrain, dt: float):
    """Impact against the local terrain segment with min(|v_n|, |v_t|) friction."""
    x, y, vx, vy, _ = K.contact(float(position[0]), float(position[1]), float(velocity[0]),
                                float(velocity[1]), float(dt), line_table(terrain), K.RUGGED)
    return np.array([x, y]), np.array([vx, vy])


def integrate_step(
    state: SimState,
    morphology: Morphology,
    actuations,
    terrain: Terrain | None,
    config: SimConfig = SimConfig(),
    friction_mode: str | None = None,
) -> tuple[SimState, bool]:
    """Advance one physics step for given actuations of the active springs.

    Returns the new state and an instability flag (degenerate spring or a
    non-finite value).
    """
    act_idx = np.full(morphology.n_springs, -1, dtype=np.int64)
    act_idx[morphology.active] = np.arange(morphology.n_active)
    actuations = np.ascontiguousarray(actuations, dtype=np.float64)
    if actuations.shape != (morphology.n_active,):
        raise ValueError("actuation vector length must equal the active spring count")
    lines, ground = _ground(terrain)
    mode = friction_code(friction_mode or default_friction(terrain))
    M = morphology.n_masses
    F, xo, vo = np.zeros((M, 2)), np.zeros((M, 2)), np.zeros((M, 2))
    status = K.advance(
        np.ascontiguousarray(state.positions, dtype=np.float64),
        np.ascontiguousarray(state.velocities, dtype=np.float64),
        actuations, config.vector(),
        np.ascontiguousarray(morphology.springs, dtype=np.int64).reshape(-1, 2),
        np.ascontiguousarray(morphology.rest_lengths, dtype=np.float64),
        act_idx, lines, ground, mode, F, xo, vo,
    )
    return SimState(xo, vo, state.step + 1), status != K.OK


def rollout(
    morphology: Morphology,
    params: ControllerParams,
    terrain: Terrain | None,
    config: SimConfig = SimConfig(),
    friction_mode: str | None = None,
    keep_positions: bool = False,
) -> RolloutResult:
    """Simulate from rest for ``config.steps`` steps.

    ``terrain=None`` disables the ground. On the first non-finite value or
    degenerate spring the rollout stops, ``unstable`` is set and the loss is
    NaN.
    """
    w1, b1, w2, b2, springs, rest, act_idx = _arrays(morphology, params)
    lines, ground = _ground(terrain)
    mode = friction_code(friction_mode or default_friction(terrain))
    M = morphology.n_masses
    X = np.zeros((config.steps + 1, M, 2))
    V = np.zeros((config.steps + 1, M, 2))
    x0 = np.ascontiguousarray(morphology.positions, dtype=np.float64)
    n, status = K.simulate(x0, config.steps, config.vector(), w1, b1, w2, b2,
                           springs, rest, act_idx, lines, ground, mode, X, V)
    unstable = status != K.OK
    X, V = X[: n + 1], V[: n + 1]
    com = X.mean(axis=1)
    loss = float("nan") if unstable else -float(com[-1, 0] - com[0, 0])
    return RolloutResult(
        loss=loss,
        com_trace=com,
        final_state=SimState(X[-1].copy(), V[-1].copy(), n),
        unstable=unstable,
        positions=X if keep_positions else None,
    )


def branch_signature(
    morphology: Morphology,
    params: ControllerParams,
    terrain: Terrain | None,
    config: SimConfig = SimConfig(),
    friction_mode: str | None = None,
) -> np.ndarray:
    """Contact branch taken per (step, mass); all zeros without ground."""
    w1, b1, w2, b2, springs, rest, act_idx = _arrays(morphology, params)
    M = morphology.n_masses
    if terrain is None:
        return np.zeros((config.steps, M), dtype=np.int64)
    lines, _ = _ground(terrain)
    mode = friction_code(friction_mode or default_friction(terrain))
    X = np.zeros((config.steps + 1, M, 2))
    V = np.zeros((config.steps + 1, M, 2))
    x0 = np.ascontiguousarray(morphology.positions, dtype=np.float64)
    n, status = K.simulate(x0, config.steps, config.vector(), w1, b1, w2, b2,
                           springs, rest, act_idx, lines, True, mode, X, V)
    return K.branch_codes(X[: n + 1], V[: n + 1], n, config.vector(), w1, b1, w2, b2,
                          springs, rest, act_idx, lines, mode)


def structural_branches(signature: np.ndarray) -> np.ndarray:
    """Contact flag, friction case and segment index of a branch signature.

    Drops the "impact time clipped" and "final clamp" bits, which flip under
    rounding for masses already resting on the surface.
    """
    return np.asarray(signature) & ~np.int64(0b1010)


def kinetic_energy(state: SimState, mass: float = 1.0) -> float:
    return 0.5 * mass * float((state.velocities**2).sum())


def export_trajectory(result: RolloutResult, path, per_mass: bool = False, header: str | None = None) -> None:
    """CSV with ``step, com_x, com_y`` and optionally ``x{i}, y{i}`` per mass."""
    if per_mass and result.positions is None:
        raise ValueError("rollout was run without keep_positions")
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        cols = ["step", "com_x", "com_y"]
        if per_mass:
            M = result.positions.shape[1]
            cols += [f"{ax}{i}" for i in range(M) for ax in ("x", "y")]
        w.writerow(cols)
        for t, (cx, cy) in enumerate(result.com_trace):
            row = [t, repr(float(cx)), repr(float(cy))]
            if per_mass:
                row += [repr(float(v)) for v in result.positions[t].ravel()]
            w.writerow(row)
