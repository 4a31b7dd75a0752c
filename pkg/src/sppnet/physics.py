"""Metal permittivity and surface-plasmon dispersion.

Ground-truth data source for the training grid: a Drude dielectric
function for the metal plus the insulator-metal-insulator (IMI)
transcendental dispersion relation, solved with a damped complex Newton
iteration seeded from the closed-form single-interface wavevector.

All lengths are in metres; permittivities are dimensionless.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact SI

MODE_ANTISYMMETRIC = "antisymmetric"
MODE_SYMMETRIC = "symmetric"
FILM_MODES = (MODE_ANTISYMMETRIC, MODE_SYMMETRIC)

_RESIDUAL_TOL = 1e-12  # well inside the 1e-10 contract
_MAX_NEWTON_ATTEMPTS = 200


class PhysicsError(ValueError):
    """Invalid physical input or unattainable dispersion solution."""


class ResonancePoleError(PhysicsError):
    """Raised when eps_d + eps_m = 0 (surface-plasmon-resonance pole)."""


class GainMediumError(PhysicsError):
    """Raised for Im[beta] < 0; amplifying media are unsupported."""


class SolverError(PhysicsError):
    """Newton iteration failed; carries the last residual magnitude."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class DrudeParams:
    """Free-electron dielectric model eps(w) = eps_inf - wp^2/(w^2 + i*g*w)."""

    plasma_frequency: float  # rad/s
    collision_rate: float  # rad/s
    epsilon_inf: float = 1.0

    def __post_init__(self) -> None:
        if self.plasma_frequency <= 0:
            raise PhysicsError("plasma_frequency must be > 0")
        if self.collision_rate < 0:
            raise PhysicsError("collision_rate must be >= 0")
        if self.epsilon_inf < 1:
            raise PhysicsError("epsilon_inf must be >= 1")

    @classmethod
    def from_wavenumbers(
        cls, plasma_cm: float, collision_cm: float, epsilon_inf: float = 1.0
    ) -> "DrudeParams":
        """Build from spectroscopic wavenumbers in 1/cm (common in metal-optics tables)."""
        to_rad_s = 2.0 * math.pi * SPEED_OF_LIGHT * 100.0
        return cls(plasma_cm * to_rad_s, collision_cm * to_rad_s, epsilon_inf)


# Molybdenum free-electron parameters: plasma wavenumber 60200 1/cm,
# collision wavenumber 412 1/cm (Ordal et al., Appl. Opt. 24, 4493 (1985),
# Table I). Gives Re[eps] < 0 across the whole 400-700 nm band.
MOLYBDENUM = DrudeParams.from_wavenumbers(60200.0, 412.0)


@dataclass(frozen=True)
class Wavevector:
    """In-plane SPP wavevector: beta complex (1/m), k0 = 2*pi/lambda0."""

    beta: complex
    k0: float
    bound: bool = True
    residual: float = 0.0


@dataclass(frozen=True)
class SppObservables:
    """Plasmon wavelength and 1/e intensity propagation distance, metres."""

    wavelength: float
    propagation_length: float  # math.inf for lossless solutions


def angular_frequency(lambda0: float) -> float:
    if lambda0 <= 0:
        raise PhysicsError(f"wavelength must be > 0, got {lambda0}")
    return 2.0 * math.pi * SPEED_OF_LIGHT / lambda0


def drude_permittivity(lambda0: float, params: DrudeParams) -> complex:
    """Complex metal permittivity at free-space wavelength lambda0."""
    w = angular_frequency(lambda0)
    return params.epsilon_inf - params.plasma_frequency**2 / (
        w * w + 1j * params.collision_rate * w
    )


class TabulatedPermittivity:
    """Permittivity from a measured table, linearly interpolated in wavelength.

    CSV schema: header ``lambda_nm,eps_real,eps_imag``, rows sorted or
    unsorted; queries outside the tabulated range raise.
    """

    def __init__(self, lambda_nm: np.ndarray, eps: np.ndarray):
        order = np.argsort(lambda_nm)
        self.lambda_nm = np.asarray(lambda_nm, dtype=float)[order]
        self.eps = np.asarray(eps, dtype=complex)[order]
        if self.lambda_nm.size < 2:
            raise PhysicsError("permittivity table needs at least 2 rows")
        if np.any(np.diff(self.lambda_nm) <= 0):
            raise PhysicsError("permittivity table has duplicate wavelengths")

    @classmethod
    def from_csv(cls, path: str | Path) -> "TabulatedPermittivity":
        path = Path(path)
        with path.open() as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
        if not lines or lines[0].replace(" ", "") != "lambda_nm,eps_real,eps_imag":
            raise PhysicsError(f"{path}: expected header 'lambda_nm,eps_real,eps_imag'")
        lam, eps = [], []
        for i, ln in enumerate(lines[1:], start=2):
            parts = ln.split(",")
            if len(parts) != 3:
                raise PhysicsError(f"{path}:{i}: expected 3 columns, got {len(parts)}")
            try:
                lam.append(float(parts[0]))
                eps.append(complex(float(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise PhysicsError(f"{path}:{i}: {exc}") from exc
        return cls(np.array(lam), np.array(eps))

    def __call__(self, lambda0: float) -> complex:
        lam_nm = lambda0 * 1e9
        if lam_nm < self.lambda_nm[0] or lam_nm > self.lambda_nm[-1]:
            raise PhysicsError(
                f"wavelength {lam_nm:.1f} nm outside tabulated range "
                f"[{self.lambda_nm[0]:.1f}, {self.lambda_nm[-1]:.1f}] nm"
            )
        re = float(np.interp(lam_nm, self.lambda_nm, self.eps.real))
        im = float(np.interp(lam_nm, self.lambda_nm, self.eps.imag))
        return complex(re, im)


def _forward_branch(z: complex) -> complex:
    """Pick the sign giving Re > 0 (or Im >= 0 on the imaginary axis)."""
    if z.real < 0 or (z.real == 0 and z.imag < 0):
        return -z
    return z


def _is_bound(eps_d: float, eps_m: complex) -> bool:
    # Bound single-interface mode: eps_d + Re[eps_m] < 0 and |eps_m| > eps_d.
    return (eps_d + eps_m.real) < 0 and abs(eps_m) > eps_d


def single_interface_beta(eps_d: float, eps_m: complex, lambda0: float) -> Wavevector:
    """SPP wavevector of a single metal-dielectric interface.

    beta = k0*sqrt(eps_d*eps_m/(eps_d + eps_m)), branch fixed so that
    Re[beta] > 0. Unbound parameter combinations still return a value
    with ``bound=False``.
    """
    if eps_d <= 0:
        raise PhysicsError(f"eps_d must be > 0, got {eps_d}")
    eps_m = complex(eps_m)
    denom = eps_d + eps_m
    if denom == 0:
        raise ResonancePoleError("eps_d + eps_m = 0: surface-plasmon resonance pole")
    k0 = 2.0 * math.pi / lambda0 if lambda0 > 0 else None
    if k0 is None:
        raise PhysicsError(f"wavelength must be > 0, got {lambda0}")
    u = _forward_branch(cmath.sqrt(eps_d * eps_m / denom))
    return Wavevector(beta=u * k0, k0=k0, bound=_is_bound(eps_d, eps_m))


def _film_residual(
    u: complex, eps_d: float, eps_m: complex, x: float, mode: str
) -> tuple[complex, complex]:
    """Residual f(u) and derivative f'(u) of the IMI dispersion equation.

    Nondimensional: u = beta/k0, x = pi*t/lambda0 (= k0*t/2). Transverse
    decay constants q_j = sqrt(u^2 - eps_j) with Re[q] >= 0 enforced.
    """
    qd = _forward_branch(cmath.sqrt(u * u - eps_d))
    qm = _forward_branch(cmath.sqrt(u * u - eps_m))
    th = cmath.tanh(qm * x)
    dth = (1.0 - th * th) * x * u / qm  # d/du tanh(qm*x)
    if mode == MODE_ANTISYMMETRIC:
        f = th + (qd * eps_m) / (qm * eps_d)
        df = dth + (eps_m / eps_d) * u * (eps_d - eps_m) / (qd * qm**3)
    else:
        f = th + (qm * eps_d) / (qd * eps_m)
        df = dth + (eps_d / eps_m) * u * (eps_m - eps_d) / (qm * qd**3)
    return f, df


def thin_film_beta(
    eps_d: float,
    eps_m: complex,
    thickness: float,
    lambda0: float,
    mode: str = MODE_ANTISYMMETRIC,
) -> Wavevector:
    """Coupled-SPP wavevector of a metal film in a symmetric dielectric cladding.

    Solves tanh(q_m*x) = -q_d*eps_m/(q_m*eps_d) (antisymmetric, the
    long-range-like branch) or its reciprocal counterpart (symmetric,
    short-range-like) by damped Newton iteration, seeded from the
    single-interface solution. The damping factor is halved whenever a
    trial step increases the residual and reset after each accepted step.
    """
    if thickness <= 0:
        raise PhysicsError(f"thickness must be > 0, got {thickness}")
    if mode not in FILM_MODES:
        raise PhysicsError(f"mode must be one of {FILM_MODES}, got {mode!r}")
    seed = single_interface_beta(eps_d, eps_m, lambda0)
    if not seed.bound:
        return Wavevector(beta=seed.beta, k0=seed.k0, bound=False, residual=math.nan)
    eps_m = complex(eps_m)
    x = math.pi * thickness / lambda0
    u = seed.beta / seed.k0

    f, df = _film_residual(u, eps_d, eps_m, x, mode)
    damping = 1.0
    for _ in range(_MAX_NEWTON_ATTEMPTS):
        if abs(f) < _RESIDUAL_TOL:
            break
        if df == 0:
            raise SolverError("Newton derivative vanished", abs(f))
        trial = u - damping * f / df
        ft, dft = _film_residual(trial, eps_d, eps_m, x, mode)
        if abs(ft) > abs(f):
            damping *= 0.5
            if damping < 1e-12:
                raise SolverError("Newton damping underflow", abs(f))
            continue
        u, f, df = trial, ft, dft
        damping = 1.0
    else:
        raise SolverError("Newton iteration did not converge", abs(f))

    u = _forward_branch(u)
    if u.imag < 0:
        raise SolverError("converged to a gain (Im[beta] < 0) branch", abs(f))
    return Wavevector(beta=u * seed.k0, k0=seed.k0, bound=True, residual=abs(f))


def spp_wavelength(wv: Wavevector) -> float:
    """Plasmon wavelength 2*pi/Re[beta]."""
    if wv.beta.real <= 0:
        raise PhysicsError(f"Re[beta] must be > 0, got {wv.beta.real}")
    return 2.0 * math.pi / wv.beta.real


def propagation_length(wv: Wavevector) -> float:
    """Propagation distance 1/Im[beta]; exactly lossless solutions map to inf."""
    if wv.beta.imag < 0:
        raise GainMediumError(f"Im[beta] must be >= 0, got {wv.beta.imag}")
    if wv.beta.imag == 0:
        return math.inf
    return 1.0 / wv.beta.imag


def observables(wv: Wavevector) -> SppObservables:
    return SppObservables(spp_wavelength(wv), propagation_length(wv))


@dataclass(frozen=True)
class SppModel:
    """Material + geometry configuration used by the dataset generator."""

    metal: DrudeParams | TabulatedPermittivity = MOLYBDENUM
    eps_dielectric: float = 1.0
    mode: str = MODE_ANTISYMMETRIC

    def permittivity(self, lambda0: float) -> complex:
        if isinstance(self.metal, DrudeParams):
            return drude_permittivity(lambda0, self.metal)
        return self.metal(lambda0)

    def solve(self, lambda0: float, thickness: float) -> Wavevector:
        eps_m = self.permittivity(lambda0)
        return thin_film_beta(self.eps_dielectric, eps_m, thickness, lambda0, self.mode)

    def describe(self) -> str:
        if isinstance(self.metal, DrudeParams):
            metal = (
                f"drude(wp={self.metal.plasma_frequency:.6e},"
                f"g={self.metal.collision_rate:.6e},einf={self.metal.epsilon_inf:g})"
            )
        else:
            metal = "tabulated"
        return f"metal={metal};eps_d={self.eps_dielectric:g};mode={self.mode}"
