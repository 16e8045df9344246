"""CPG bank, proprioceptive sensors and the tanh MLP policy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_CPG = 10
CPG_OMEGA = 0.08 * np.pi  # radians per time step
N_HIDDEN = 32


@dataclass(frozen=True)
class CpgBank:
    n: int = N_CPG
    omega: float = CPG_OMEGA

    @property
    def phases(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n) / self.n


def cpg_signals(bank: CpgBank, step: int) -> np.ndarray:
    """Sine outputs at an integer time step; period is 2*pi/omega steps."""
    return np.sin(bank.omega * step + bank.phases)


def n_inputs(n_masses: int) -> int:
    return N_CPG + 4 * n_masses


def sense(
    positions: np.ndarray,
    velocities: np.ndarray,
    initial_positions: np.ndarray,
    step: int,
    bank: CpgBank = CpgBank(),
) -> np.ndarray:
    """Build the sensor vector: CPGs, then (vx, vy, dx, dy) per mass.

    Displacements are center-of-mass relative and measured against the
    center-of-mass relative initial pose.
    """
    rel = positions - positions.mean(axis=0)
    rel0 = initial_positions - initial_positions.mean(axis=0)
    per_mass = np.concatenate([velocities, rel - rel0], axis=1)
    return np.concatenate([cpg_signals(bank, step), per_mass.ravel()])


@dataclass(eq=False)
class ControllerParams:
    w1: np.ndarray  # (hidden, n_in)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (n_active, hidden)
    b2: np.ndarray  # (n_active,)

    @property
    def n_in(self) -> int:
        return self.w1.shape[1]

    @property
    def n_out(self) -> int:
        return self.w2.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def with_flat(self, vec: np.ndarray) -> "ControllerParams":
        vec = np.asarray(vec, dtype=np.float64)
        h, n_in, n_out = self.w1.shape[0], self.n_in, self.n_out
        sizes = np.cumsum([h * n_in, h, n_out * h, n_out])
        if vec.size != sizes[-1]:
            raise ValueError(f"expected {sizes[-1]} values, got {vec.size}")
        w1, b1, w2, b2 = np.split(vec, sizes[:-1])
        return ControllerParams(
            w1.reshape(h, n_in).copy(), b1.copy(), w2.reshape(n_out, h).copy(), b2.copy()
        )

    def copy(self) -> "ControllerParams":
        return ControllerParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.flat()).all())

    def save(self, path, header: str | None = None) -> None:
        """Write ``n_in n_active`` then row-major w1, b1, w2, b2 as float64 text."""
        with open(path, "w") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write(f"{self.n_in} {self.n_out}\n")
            for v in self.flat():
                fh.write(f"{float(v)!r}\n")

    @classmethod
    def load(cls, path) -> "ControllerParams":
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
        if not lines:
            raise ValueError(f"{path}: empty parameter file")
        header = lines[0].split()
        if len(header) != 2:
            raise ValueError(f"{path}: expected header 'n_in n_active', got {lines[0].strip()!r}")
        values = np.array([float(line) for line in lines[1:]])
        return zeros_params(int(header[0]), int(header[1])).with_flat(values)


def zeros_params(n_in: int, n_active: int, n_hidden: int = N_HIDDEN) -> ControllerParams:
    return ControllerParams(
        np.zeros((n_hidden, n_in)),
        np.zeros(n_hidden),
        np.zeros((n_active, n_hidden)),
        np.zeros(n_active),
    )


def forward(params: ControllerParams, sensors: np.ndarray) -> np.ndarray:
    hidden = np.tanh(params.w1 @ sensors + params.b1)
    return np.tanh(params.w2 @ hidden + params.b2)


def xavier_normal(rng: np.random.Generator, fan_out: int, fan_in: int, gain: float = 1.0) -> np.ndarray:
    std = gain * np.sqrt(2.0 / (fan_in + fan_out))
    return rng.standard_normal((fan_out, fan_in)) * std


def init_params(
    rng: np.random.Generator,
    n_in: int,
    n_active: int,
    gain: float = 1.0,
    n_hidden: int = N_HIDDEN,
) -> ControllerParams:
    """Scaled Xavier-normal weights and zero biases.

    ``n_active`` may be 0 for a robot without motors; the output layer is
    then empty.
    """
    w1 = xavier_normal(rng, n_hidden, n_in, gain)
    w2 = xavier_normal(rng, n_active, n_hidden, gain) if n_active else np.zeros((0, n_hidden))
    return ControllerParams(w1, np.zeros(n_hidden), w2, np.zeros(n_active))
