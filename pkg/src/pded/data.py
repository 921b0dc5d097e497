"""Synthetic ground truth, noise, point sampling and dataset files."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DatasetFormatError, TooManyRequested, UnstableSolve


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 2 or not self.hi > self.lo:
            raise ValueError(f"axis {self.name}: need n >= 2 and hi > lo")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)


@dataclass
class GridDataset:
    """Field values on a regular grid; ``fields[var]`` has shape ``(n_x..., n_t)``."""

    axes: tuple[Axis, ...]
    fields: dict[str, np.ndarray]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = tuple(a.n for a in self.axes)
        for v, arr in self.fields.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"field {v} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"field {v} has non-finite values")
            self.fields[v] = arr

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(self.fields)

    @property
    def axis_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.n for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def points(self) -> np.ndarray:
        """All grid points, row-major, as ``(size, n_axes)``."""
        mesh = np.meshgrid(*(a.values for a in self.axes), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def values(self, var: str | None = None) -> np.ndarray:
        return self.fields[var or self.variables[0]].ravel()

    @property
    def lower(self) -> list[float]:
        return [a.lo for a in self.axes]

    @property
    def upper(self) -> list[float]:
        return [a.hi for a in self.axes]

    @property
    def spacing(self) -> list[float]:
        return [a.step for a in self.axes]


@dataclass
class ObservationSet:
    points: np.ndarray
    values: np.ndarray
    indices: np.ndarray
    sigma: float = 0.0

    def __len__(self) -> int:
        return len(self.indices)

    def take(self, sel: np.ndarray) -> "ObservationSet":
        return ObservationSet(self.points[sel], self.values[sel], self.indices[sel], self.sigma)

    def split(self, train_fraction: float = 0.8, seed: int = 0) -> tuple["ObservationSet", "ObservationSet"]:
        """Disjoint random train/validation split."""
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(self))
        k = int(round(train_fraction * len(self)))
        return self.take(np.sort(perm[:k])), self.take(np.sort(perm[k:]))


# ---------------------------------------------------------------------------
# solvers


def _rk4(rhs: Callable[[np.ndarray], np.ndarray], u0: np.ndarray, t_out: np.ndarray, dt_max: float) -> np.ndarray:
    out = np.empty((len(u0), len(t_out)))
    u = u0.copy()
    out[:, 0] = u
    for j in range(1, len(t_out)):
        span = t_out[j] - t_out[j - 1]
        m = max(1, math.ceil(span / dt_max - 1e-12))
        h = span / m
        for _ in range(m):
            k1 = rhs(u)
            k2 = rhs(u + 0.5 * h * k1)
            k3 = rhs(u + 0.5 * h * k2)
            k4 = rhs(u + h * k3)
            u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(u)):
            raise UnstableSolve(f"non-finite state at t={t_out[j]}")
        out[:, j] = u
    return out


def _integrate(rhs, u0, t_out, dt_bound):
    dt = dt_bound / 4
    for _ in range(3):
        try:
            return _rk4(rhs, u0, t_out, dt)
        except (UnstableSolve, FloatingPointError):
            dt /= 4
    raise UnstableSolve("solver diverged after reducing the substep")


def _gauss_ic(x):
    return np.exp(-((x + 1.0) ** 2))


def solve_burgers(
    nu: float = 0.1,
    x_axis: Axis = Axis("x", -8.0, 8.0, 256),
    t_axis: Axis = Axis("t", 0.0, 10.0, 101),
    ic: Callable[[np.ndarray], np.ndarray] | None = None,
    bc: str = "periodic",
) -> GridDataset:
    """``u_t = -u u_x + nu u_xx`` by second-order central differences and RK4.

    ``bc='periodic'`` wraps the sampled grid (the last point neighbours the
    first).
    """
    if bc != "periodic":
        raise ValueError("Burgers solver supports periodic boundaries only")
    x = x_axis.values
    dx = x_axis.step
    u0 = (ic or _gauss_ic)(x).astype(np.float64)

    def rhs(u):
        up, um = np.roll(u, -1), np.roll(u, 1)
        return -u * (up - um) / (2 * dx) + nu * (up - 2 * u + um) / dx**2

    umax = max(float(np.max(np.abs(u0))), 1e-12)
    bound = min(dx**2 / (2 * nu) if nu > 0 else math.inf, dx / umax)
    with np.errstate(over="raise", invalid="raise"):
        U = _integrate(rhs, u0, t_axis.values, bound)
    prov = {"generator": "burgers", "nu": nu, "ic": "exp(-(x+1)^2)" if ic is None else "custom", "bc": bc}
    return GridDataset((x_axis, t_axis), {"u": U}, prov)


def solve_fisher_kpp(
    D: float = 0.02,
    r: float = 10.0,
    k: float = 1.0,
    nonlinear: bool = False,
    x_axis: Axis = Axis("x", -0.99, 0.99, 199),
    t_axis: Axis = Axis("t", 0.01, 0.99, 99),
    ic: Callable[[np.ndarray], np.ndarray] | None = None,
    bc: str = "neumann",
) -> GridDataset:
    """Fisher-KPP ``u_t = D u_xx + r u (1 - u / k)``.

    With ``nonlinear=True`` the diffusion becomes ``D (u u_xx + u_x^2)``.
    Zero-flux boundaries use mirrored ghost points.  The initial condition is
    applied at the first output time.
    """
    if bc != "neumann":
        raise ValueError("Fisher-KPP solver supports zero-flux boundaries only")
    x = x_axis.values
    dx = x_axis.step
    u0 = (ic or (lambda s: 0.5 * np.exp(-25.0 * s**2)))(x).astype(np.float64)

    def rhs(u):
        g = np.concatenate(([u[1]], u, [u[-2]]))
        uxx = (g[2:] - 2 * u + g[:-2]) / dx**2
        if nonlinear:
            ux = (g[2:] - g[:-2]) / (2 * dx)
            diff = D * (u * uxx + ux**2)
        else:
            diff = D * uxx
        return diff + r * u - (r / k) * u**2

    d_eff = D * max(1.0, float(np.max(np.abs(u0))), k) if nonlinear else D
    bound = min(dx**2 / (2 * d_eff), 1.0 / r)
    with np.errstate(over="raise", invalid="raise"):
        U = _integrate(rhs, u0, t_axis.values, bound)
    prov = {"generator": "fisher_kpp_nonlinear" if nonlinear else "fisher_kpp", "D": D, "r": r, "k": k, "bc": bc}
    return GridDataset((x_axis, t_axis), {"u": U}, prov)


GENERATORS = {
    "burgers": lambda: solve_burgers(),
    "fisher_kpp": lambda: solve_fisher_kpp(),
    "fisher_kpp_nonlinear": lambda: solve_fisher_kpp(nonlinear=True),
}

TRUTH = {
    "burgers": "u_t = -1*u*u_x + 0.1*u_xx",
    "fisher_kpp": "u_t = 0.02*u_xx + 10*u - 10*u^2",
    "fisher_kpp_nonlinear": "u_t = 0.02*u*u_xx + 0.02*u_x^2 + 10*u - 10*u^2",
}


def generate(name: str) -> GridDataset:
    try:
        return GENERATORS[name]()
    except KeyError:
        raise ValueError(f"unknown equation {name!r}; choose from {sorted(GENERATORS)}") from None


# ---------------------------------------------------------------------------
# noise and sampling


def add_noise(data: GridDataset, sigma: float, seed: int = 0) -> GridDataset:
    """``u + sigma * std(u) * N(0, 1)`` with ``std`` over the whole clean field."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    fields = {}
    for v, arr in data.fields.items():
        if sigma == 0:
            fields[v] = arr.copy()
        else:
            fields[v] = arr + sigma * float(np.std(arr)) * rng.standard_normal(arr.shape)
    prov = dict(data.provenance, sigma=sigma, noise_seed=seed)
    return GridDataset(data.axes, fields, prov)


def sample_observations(data: GridDataset, n: int, seed: int = 0, var: str | None = None) -> ObservationSet:
    """``n`` distinct grid points drawn uniformly without replacement."""
    if n > data.size:
        raise TooManyRequested(f"requested {n} observations from a grid of {data.size}")
    if n < 1:
        raise ValueError("need at least one observation")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(data.size, size=n, replace=False))
    pts = data.points()[idx]
    return ObservationSet(pts, data.values(var)[idx], idx, float(data.provenance.get("sigma", 0.0)))


def sample_collocation(lower: Sequence[float], upper: Sequence[float], n: int, seed: int = 0) -> np.ndarray:
    """``n`` points uniform in the open box ``(lower, upper)``."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lower, float), np.asarray(upper, float)
    u = rng.random((n, len(lo)))
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return lo + u * (hi - lo)


def sample_local(points: np.ndarray, per_point: int, widths: Sequence[float], seed: int = 0) -> np.ndarray:
    """``per_point`` uniform draws in an axis-aligned box of side ``widths`` around each point."""
    rng = np.random.default_rng(seed)
    P = np.repeat(np.asarray(points, float), per_point, axis=0)
    w = np.asarray(widths, float)
    return P + (rng.random(P.shape) - 0.5) * w


# ---------------------------------------------------------------------------
# files

_MAGIC = b"PDEDGRID1\n"


def _header(data: GridDataset) -> str:
    axes = ", ".join(f"{a.name}:{a.lo!r}:{a.hi!r}:{a.n}" for a in data.axes)
    prov = data.provenance
    extra = "; ".join(f"{k}: {prov[k]}" for k in sorted(prov) if k not in ("sigma", "noise_seed"))
    head = f"# axes: {axes}; vars: {','.join(data.variables)}; sigma: {prov.get('sigma', 0.0)!r}; seed: {prov.get('noise_seed', '')}"
    return head + (f"; {extra}" if extra else "")


def _parse_header(line: str) -> tuple[tuple[Axis, ...], list[str], dict]:
    if not line.startswith("# axes:"):
        raise DatasetFormatError("missing '# axes:' header")
    fields = {}
    for part in line[1:].split(";"):
        if ":" not in part:
            continue
        k, _, v = part.partition(":")
        fields[k.strip()] = v.strip()
    try:
        axes = []
        for ax in fields.pop("axes").split(","):
            name, lo, hi, n = ax.strip().split(":")
            axes.append(Axis(name, float(lo), float(hi), int(n)))
        names = [v for v in fields.pop("vars").split(",") if v]
    except (KeyError, ValueError) as e:
        raise DatasetFormatError(f"bad header: {e}") from None
    prov: dict = {}
    if "sigma" in fields:
        prov["sigma"] = float(fields.pop("sigma"))
    seed = fields.pop("seed", "")
    if seed:
        prov["noise_seed"] = int(seed)
    for k, v in fields.items():
        prov[k] = _coerce(v)
    return tuple(axes), names, prov


def _coerce(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def write_dataset(data: GridDataset, path, binary: bool | None = None) -> Path:
    """Write CSV (default) or the binary variant (``.bin`` suffix or ``binary=True``)."""
    path = Path(path)
    if binary is None:
        binary = path.suffix == ".bin"
    head = _header(data)
    pts = data.points()
    cols = np.column_stack([pts] + [data.values(v) for v in data.variables])
    if binary:
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(head.encode() + b"\n")
            f.write(struct.pack("<q", cols.size))
            f.write(np.ascontiguousarray(cols, dtype="<f8").tobytes())
    else:
        with open(path, "w") as f:
            f.write(head + "\n")
            f.write(",".join(data.axis_names + data.variables) + "\n")
            np.savetxt(f, cols, fmt="%.17g", delimiter=",")
    return path


def read_dataset(path) -> GridDataset:
    path = Path(path)
    with open(path, "rb") as f:
        first = f.readline()
        if first == _MAGIC:
            axes, names, prov = _parse_header(f.readline().decode().rstrip("\n"))
            (count,) = struct.unpack("<q", f.read(8))
            cols = np.frombuffer(f.read(), dtype="<f8")
            if cols.size != count:
                raise DatasetFormatError("truncated binary dataset")
            cols = cols.reshape(-1, len(axes) + len(names))
        else:
            axes, names, prov = _parse_header(first.decode().rstrip("\n"))
            f.readline()
            try:
                cols = np.loadtxt(f, delimiter=",", ndmin=2)
            except ValueError as e:
                raise DatasetFormatError(f"bad data rows: {e}") from None
    shape = tuple(a.n for a in axes)
    if cols.shape != (int(np.prod(shape)), len(axes) + len(names)):
        raise DatasetFormatError(f"expected {int(np.prod(shape))} rows of {len(axes) + len(names)} values")
    fields = {v: cols[:, len(axes) + i].reshape(shape).copy() for i, v in enumerate(names)}
    return GridDataset(axes, fields, prov)


def with_provenance(data: GridDataset, **kw) -> GridDataset:
    return replace(data, provenance=dict(data.provenance, **kw))
