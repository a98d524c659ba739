import math
import re
from dataclasses import dataclass, field

import numpy as np

from errors import ClassMError, ConfigError, ConvolutionError

M_FUNCTION = "m-function"
F_FUNCTION = "f-function"

DEFAULT_ALPHA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))
DEFAULT_CLASS_M_THRESHOLD = 1e6
C0_MARGIN = 0.99

PRESET_PATTERN = re.compile(r"^\s*(exp|stretched|power)\s*\(([^)]*)\)\s*$")


@dataclass(frozen=True, eq=False)
class DecayFunction:
    """Nonnegative table on ``start..start+len(values)-1``.

    m-functions start at r = 1, F-functions at r = 0.
    """

    values: np.ndarray
    kind: str = M_FUNCTION

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        if values.ndim != 1 or values.size == 0:
            raise ValueError("decay table must be a non-empty 1d array")
        if (values < 0).any():
            raise ValueError("decay table must be nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.kind not in (M_FUNCTION, F_FUNCTION):
            raise ValueError(f"unknown decay kind {self.kind!r}")

    @property
    def start(self):
        return 1 if self.kind == M_FUNCTION else 0

    @property
    def r_max(self):
        return self.start + self.values.size - 1

    @property
    def radii(self):
        return np.arange(self.start, self.r_max + 1)

    def __call__(self, r):
        if r < self.start or r > self.r_max:
            raise ValueError(f"r={r} outside tabulated range {self.start}..{self.r_max}")
        return float(self.values[r - self.start])

    def is_non_increasing(self):
        return bool((np.diff(self.values) <= 0).all())


@dataclass(frozen=True)
class ClassMReport:
    alpha_grid: tuple
    per_alpha: dict
    polynomial_flags: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FFunctionReport:
    c_f: float
    c_f_prime: float


def _preset_values(name, args, radii):
    r = radii.astype(float)
    if name == "exp":
        (a,) = args
        return np.exp(-a * r)
    if name == "stretched":
        a, alpha = args
        return np.exp(-a * r ** alpha)
    if name == "power":
        (p,) = args
        return 1.0 / np.maximum(r, 1.0) ** p
    raise ConfigError(f"unknown decay preset {name!r}")


def tabulate(spec, r_max, kind=M_FUNCTION):
    """Decay table from a preset string such as ``"exp(1.0)"`` or an inline list."""
    start = 1 if kind == M_FUNCTION else 0
    if isinstance(spec, DecayFunction):
        return spec
    if isinstance(spec, (list, tuple, np.ndarray)):
        values = [float(v) for v in spec]
        if len(values) < r_max - start + 1:
            raise ConfigError(f"inline decay table needs {r_max - start + 1} values, got {len(values)}")
        return DecayFunction(np.array(values[: r_max - start + 1]), kind)
    match = PRESET_PATTERN.match(str(spec))
    if not match:
        raise ConfigError(f"cannot parse decay function {spec!r}")
    name, raw_args = match.groups()
    try:
        args = [float(part) for part in raw_args.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"bad arguments in decay function {spec!r}") from None
    expected = 2 if name == "stretched" else 1
    if len(args) != expected:
        raise ConfigError(f"{name} takes {expected} argument(s), got {len(args)}")
    radii = np.arange(start, r_max + 1)
    return DecayFunction(_preset_values(name, args, radii), kind)


def check_class_m(f, alpha_grid=DEFAULT_ALPHA_GRID, threshold=DEFAULT_CLASS_M_THRESHOLD):
    if f.kind != M_FUNCTION:
        raise ValueError("check_class_m expects an m-function tabulated from r = 1")
    if f.values.size < 2:
        raise ValueError("class-M check needs r_max >= 2")
    steps = np.diff(f.values)
    if (steps > 0).any():
        r = int(np.argmax(steps > 0)) + f.start + 1
        raise ClassMError(f"not in class M: monotonicity fails at r={r}")
    radii = f.radii.astype(float)
    per_alpha = {}
    flags = {}
    for alpha in alpha_grid:
        c_alpha = float(np.max(f.values * np.exp(radii ** alpha)))
        per_alpha[alpha] = c_alpha
        flags[alpha] = c_alpha > threshold
    return ClassMReport(alpha_grid=tuple(alpha_grid), per_alpha=per_alpha, polynomial_flags=flags)


def _f_on_distances(f, graph):
    diam = graph.diameter()
    if f.kind != F_FUNCTION:
        raise ValueError("expected an F-function tabulated from r = 0")
    if f.r_max < diam:
        raise ValueError(f"F tabulated to {f.r_max}, graph diameter is {diam}")
    return f.values[graph.distance]


def check_f_function(f, graph):
    table = _f_on_distances(f, graph)
    conv = table @ table
    positive = table > 0
    if ((~positive) & (conv > 0)).any():
        raise ConvolutionError("convolution property unattainable")
    ratios = np.where(positive, conv / np.where(positive, table, 1.0), 0.0)
    c_f = float(ratios.max())
    c_f_prime = float(table.sum(axis=1).max())
    return FFunctionReport(c_f=c_f, c_f_prime=c_f_prime)


def superadditive_envelope(f):
    """Smallest log-superadditive majorant built from compositions of r."""
    if f.kind != M_FUNCTION:
        raise ValueError("envelope is defined on 1..r_max")
    values = f.values
    n = values.size
    envelope = np.zeros(n)
    for i in range(n):
        best = values[i]
        for k in range(1, i + 1):
            # split r = k + (r - k); ties keep the smaller k
            candidate = envelope[k - 1] * values[i - k]
            if candidate > best:
                best = candidate
        envelope[i] = best
    return DecayFunction(envelope, M_FUNCTION)


def f_from_m(m, dim_fit):
    check_class_m(m, alpha_grid=())
    d = dim_fit.d
    # table runs r = 0..r_max(m) - 1, using m(r + 1)
    shifted = m.values
    radii = np.arange(shifted.size, dtype=float)
    weight = 1.0 + radii ** (d + 2)
    unscaled = weight * shifted
    if shifted.size < 2:
        raise ValueError("m needs at least two tabulated values")
    peak = float(unscaled[1:].max())
    c0 = C0_MARGIN / peak if peak >= 1.0 else 1.0

    f_prime = DecayFunction(c0 * unscaled[1:], M_FUNCTION)
    envelope = superadditive_envelope(f_prime).values
    values = np.empty(shifted.size)
    values[1:] = envelope / (c0 * weight[1:])
    # F(0) = max(F(1), m(1))
    values[0] = max(values[1], shifted[0])
    return DecayFunction(values, F_FUNCTION)


def m_from_f(f, dim_fit):
    if f.kind != F_FUNCTION:
        raise ValueError("m_from_f expects an F-function")
    d = dim_fit.d
    c_gamma = dim_fit.c_gamma_cap
    n = f.values.size
    ks = np.arange(n, dtype=float)
    c0 = float(np.sum(1.0 / (1.0 + ks ** 2)))
    # g(r) for r = 1..n uses F(r - 1)
    shift = np.arange(n, dtype=float)
    g = c0 * (1.0 + shift ** 2) * (1.0 + c_gamma * shift ** d) ** 2 * f.values
    suffix = np.maximum.accumulate(g[::-1])[::-1]
    return DecayFunction(suffix, M_FUNCTION)


def decay_exponent(d, d_gamma):
    return 1.0 / (d + d_gamma + 2.0)


def decay_scale(R, d, d_gamma):
    """Ball radius ``r = R^p`` and shrink ``k = r/2`` at which the decay is stated."""
    p = decay_exponent(d, d_gamma)
    r = max(1, int(math.floor(R ** p)))
    return r, r // 2


def beta_grid(start=0.1, stop=1.0, step=0.05):
    count = int(round((stop - start) / step)) + 1
    return tuple(round(start + i * step, 10) for i in range(count))


def fit_stretched_exponent(distances, values, betas=None, min_rows=4):
    """Least-squares fit of ``log y = log A - R^beta`` over a beta grid.

    Returns ``None`` when fewer than ``min_rows`` positive rows exist.
    """
    betas = beta_grid() if betas is None else betas
    R = np.asarray(distances, dtype=float)
    y = np.asarray(values, dtype=float)
    keep = y > 0
    if keep.sum() < min_rows:
        return None
    R, logy = R[keep], np.log(y[keep])
    best = None
    for beta in betas:
        log_a = float(np.mean(logy + R ** beta))
        residual = float(np.sqrt(np.mean((logy - (log_a - R ** beta)) ** 2)))
        if best is None or residual < best["residual"] - 1e-15:
            best = {"beta": float(beta), "amplitude": math.exp(log_a), "residual": residual}
    best["rows"] = int(keep.sum())
    return best
