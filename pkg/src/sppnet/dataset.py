"""Training-grid synthesis, normalization, splitting, and CSV persistence.

A dataset is a fixed four-column table (lambda0_nm, t_nm, lambda_spp_nm,
L_spp_nm). The propagation-length column is normalized in log10 space
because it spans orders of magnitude across the visible band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import physics

COLUMNS = ("lambda0_nm", "t_nm", "lambda_spp_nm", "L_spp_nm")
LOG10_COLUMNS = ("L_spp_nm",)
CSV_HEADER = ",".join(COLUMNS)
EXCLUSION_HEADER = "lambda0_nm,t_nm,reason"

# default production grid: visible band, nine film thicknesses
DEFAULT_THICKNESSES_NM = (36.0, 42.0, 48.0, 54.0, 60.0, 72.0, 84.0, 96.0, 128.0)
DEFAULT_LAMBDA_MIN_NM = 400.0
DEFAULT_LAMBDA_MAX_NM = 700.0
DEFAULT_N_LAMBDA = 101

_FMT = "%.17g"


class DatasetError(ValueError):
    """Invalid dataset contents or schema."""


class GridError(DatasetError):
    """Grid generation failed on too many points."""


@dataclass(frozen=True)
class Sample:
    lambda0_nm: float
    t_nm: float
    lambda_spp_nm: float
    L_spp_nm: float


@dataclass(frozen=True)
class Exclusion:
    lambda0_nm: float
    t_nm: float
    reason: str


@dataclass(frozen=True)
class NormalizationState:
    """Per-column affine map to [-1, 1]; log10 columns are transformed first."""

    minima: tuple[float, ...]
    maxima: tuple[float, ...]
    log10_columns: tuple[str, ...] = LOG10_COLUMNS

    def __post_init__(self) -> None:
        for name, lo, hi in zip(COLUMNS, self.minima, self.maxima):
            if not hi > lo:
                raise DatasetError(f"column {name}: max must exceed min ({lo} vs {hi})")

    def _premap(self, values: np.ndarray) -> np.ndarray:
        out = np.array(values, dtype=float)
        for name in self.log10_columns:
            c = COLUMNS.index(name)
            if np.any(out[:, c] <= 0):
                raise DatasetError(f"column {name} must be positive for log10 normalization")
            out[:, c] = np.log10(out[:, c])
        return out

    def apply(self, values: np.ndarray) -> np.ndarray:
        pre = self._premap(values)
        lo = np.asarray(self.minima)
        hi = np.asarray(self.maxima)
        return 2.0 * (pre - lo) / (hi - lo) - 1.0

    def invert(self, normalized: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.minima)
        hi = np.asarray(self.maxima)
        out = (np.asarray(normalized, dtype=float) + 1.0) / 2.0 * (hi - lo) + lo
        for name in self.log10_columns:
            c = COLUMNS.index(name)
            out[:, c] = 10.0 ** out[:, c]
        return out

    def invert_column(self, column: str, normalized: np.ndarray | float):
        c = COLUMNS.index(column)
        raw = (np.asarray(normalized, dtype=float) + 1.0) / 2.0 * (
            self.maxima[c] - self.minima[c]
        ) + self.minima[c]
        if column in self.log10_columns:
            raw = 10.0**raw
        return raw

    def to_meta(self) -> dict[str, str]:
        meta = {}
        for i, name in enumerate(COLUMNS):
            kind = "log10" if name in self.log10_columns else "linear"
            meta[f"norm.{name}"] = "%s %s %s" % (_FMT % self.minima[i], _FMT % self.maxima[i], kind)
        return meta

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "NormalizationState":
        minima, maxima, logs = [], [], []
        for name in COLUMNS:
            key = f"norm.{name}"
            if key not in meta:
                raise DatasetError(f"missing normalization entry for column {name}")
            lo, hi, kind = meta[key].split()
            minima.append(float(lo))
            maxima.append(float(hi))
            if kind == "log10":
                logs.append(name)
        return cls(tuple(minima), tuple(maxima), tuple(logs))


@dataclass
class Dataset:
    """Immutable-by-convention table of samples plus provenance metadata."""

    values: np.ndarray  # (n, 4) float64, column order = COLUMNS
    normalization: NormalizationState | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(COLUMNS):
            raise DatasetError(f"expected (n, {len(COLUMNS)}) values, got {self.values.shape}")

    def __len__(self) -> int:
        return self.values.shape[0]

    def sample(self, i: int) -> Sample:
        return Sample(*self.values[i])

    @property
    def inputs(self) -> np.ndarray:
        return self.values[:, :2]

    @property
    def targets(self) -> np.ndarray:
        return self.values[:, 2:]


@dataclass(frozen=True)
class GenerationResult:
    dataset: Dataset
    exclusions: list[Exclusion]


def generate_grid(
    thicknesses_nm=DEFAULT_THICKNESSES_NM,
    lambda_min_nm: float = DEFAULT_LAMBDA_MIN_NM,
    lambda_max_nm: float = DEFAULT_LAMBDA_MAX_NM,
    n_lambda: int = DEFAULT_N_LAMBDA,
    model: physics.SppModel | None = None,
    max_failure_fraction: float = 0.10,
) -> GenerationResult:
    """Solve the dispersion on the full (wavelength x thickness) grid.

    Grid points whose solve fails or yields an unbound/lossless mode are
    excluded and reported; more than `max_failure_fraction` of the grid
    failing is an error.
    """
    if n_lambda < 1:
        raise DatasetError(f"n_lambda must be >= 1, got {n_lambda}")
    if not lambda_min_nm < lambda_max_nm:
        raise DatasetError(
            f"need lambda_min < lambda_max, got {lambda_min_nm} >= {lambda_max_nm}"
        )
    thicknesses_nm = tuple(float(t) for t in thicknesses_nm)
    if not thicknesses_nm:
        raise DatasetError("thickness list is empty")
    if any(t <= 0 for t in thicknesses_nm):
        raise DatasetError("thicknesses must be positive")
    model = model or physics.SppModel()

    lambdas_nm = np.linspace(lambda_min_nm, lambda_max_nm, n_lambda)
    rows: list[tuple[float, float, float, float]] = []
    exclusions: list[Exclusion] = []
    for t_nm in thicknesses_nm:
        for lam_nm in lambdas_nm:
            try:
                wv = model.solve(lam_nm * 1e-9, t_nm * 1e-9)
            except physics.PhysicsError as exc:
                exclusions.append(Exclusion(lam_nm, t_nm, f"solver: {exc}"))
                continue
            if not wv.bound:
                exclusions.append(Exclusion(lam_nm, t_nm, "unbound mode"))
                continue
            obs = physics.observables(wv)
            if math.isinf(obs.propagation_length):
                exclusions.append(Exclusion(lam_nm, t_nm, "infinite propagation length"))
                continue
            rows.append((lam_nm, t_nm, obs.wavelength * 1e9, obs.propagation_length * 1e9))

    total = n_lambda * len(thicknesses_nm)
    if len(exclusions) > max_failure_fraction * total:
        raise GridError(
            f"{len(exclusions)}/{total} grid points failed "
            f"(> {max_failure_fraction:.0%} allowed)"
        )
    metadata = {
        "generator.thicknesses_nm": ",".join("%g" % t for t in thicknesses_nm),
        "generator.lambda_min_nm": "%g" % lambda_min_nm,
        "generator.lambda_max_nm": "%g" % lambda_max_nm,
        "generator.n_lambda": str(n_lambda),
        "generator.model": model.describe(),
    }
    ds = Dataset(np.array(rows, dtype=float).reshape(len(rows), 4), metadata=metadata)
    return GenerationResult(ds, exclusions)


def normalize(ds: Dataset) -> Dataset:
    """Map every column affinely onto [-1, 1] (log10 first for L_spp_nm)."""
    if ds.normalization is not None:
        raise DatasetError("dataset is already normalized")
    if len(ds) == 0:
        raise DatasetError("cannot normalize an empty dataset")
    pre = np.array(ds.values, dtype=float)
    for name in LOG10_COLUMNS:
        c = COLUMNS.index(name)
        if np.any(pre[:, c] <= 0):
            raise DatasetError(f"column {name} must be positive for log10 normalization")
        pre[:, c] = np.log10(pre[:, c])
    minima = pre.min(axis=0)
    maxima = pre.max(axis=0)
    for i, name in enumerate(COLUMNS):
        if maxima[i] == minima[i]:
            raise DatasetError(f"column {name} is constant; cannot normalize")
    state = NormalizationState(tuple(minima), tuple(maxima))
    return Dataset(state.apply(ds.values), normalization=state, metadata=dict(ds.metadata))


def denormalize(ds: Dataset) -> Dataset:
    if ds.normalization is None:
        raise DatasetError("dataset has no normalization state")
    return Dataset(ds.normalization.invert(ds.values), metadata=dict(ds.metadata))


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic seeded shuffle, then partition ceil(f*n) / remainder."""
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(ds)
    if n == 0:
        raise DatasetError("cannot split an empty dataset")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.ceil(train_fraction * n)
    meta = dict(ds.metadata)
    meta["split.seed"] = str(seed)
    meta["split.train_fraction"] = "%g" % train_fraction
    train = Dataset(ds.values[perm[:n_train]], ds.normalization, dict(meta, **{"split.part": "train"}))
    held = Dataset(ds.values[perm[n_train:]], ds.normalization, dict(meta, **{"split.part": "eval"}))
    return train, held


def save_csv(ds: Dataset, path: str | Path) -> None:
    """Write metadata comments, the fixed header, then rows at 17 significant digits."""
    path = Path(path)
    lines = [f"# {k}={v}" for k, v in sorted(ds.metadata.items())]
    lines.append(CSV_HEADER)
    for row in ds.values:
        lines.append(",".join(_FMT % v for v in row))
    path.write_text("\n".join(lines) + "\n")


def load_csv(path: str | Path) -> Dataset:
    path = Path(path)
    metadata: dict[str, str] = {}
    rows: list[list[float]] = []
    header_seen = False
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    metadata[k.strip()] = v.strip()
                continue
            if not header_seen:
                if line.replace(" ", "") != CSV_HEADER:
                    raise DatasetError(
                        f"{path}:{lineno}: expected header '{CSV_HEADER}', got '{line}'"
                    )
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != len(COLUMNS):
                raise DatasetError(
                    f"{path}:{lineno}: expected {len(COLUMNS)} columns, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    if not header_seen:
        raise DatasetError(f"{path}: missing header row")
    values = np.array(rows, dtype=float).reshape(len(rows), len(COLUMNS))
    return Dataset(values, metadata=metadata)


def save_exclusions(
    exclusions: list[Exclusion], path: str | Path, metadata: dict[str, str] | None = None
) -> None:
    lines = [f"# {k}={v}" for k, v in sorted((metadata or {}).items())]
    lines.append(EXCLUSION_HEADER)
    for e in exclusions:
        lines.append("%s,%s,%s" % (_FMT % e.lambda0_nm, _FMT % e.t_nm, e.reason))
    Path(path).write_text("\n".join(lines) + "\n")
