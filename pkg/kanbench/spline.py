"""Uniform B-spline bases: knot construction, Cox-de Boor evaluation, derivatives."""

from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np

from kanbench.errors import ContractError, ParameterError
from kanbench.tensor import Tensor, basis_eval

DEFAULT_DOMAIN = (-1.0, 1.0)
DEFAULT_GRID_SIZE = 5
DEFAULT_DEGREE = 3


@dataclass(frozen=True, eq=False)
class SplineSpec:
    """Uniform knot vector of a degree-k spline with G intervals on [a, b]."""

    domain: Tuple[float, float]
    degree: int
    grid_size: int
    knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = self.grid_size + 2 * self.degree + 1
        if len(self.knots) != expected:
            raise ParameterError(f"expected {expected} knots, got {len(self.knots)}")
        if np.any(np.diff(self.knots) < 0):
            raise ParameterError("knots must be non-decreasing")

    @property
    def basis_count(self) -> int:
        return self.grid_size + self.degree


@dataclass(frozen=True, eq=False)
class SplineCoeffs:
    c: np.ndarray

    def check(self, spec: SplineSpec) -> None:
        if len(self.c) != spec.basis_count:
            raise ContractError(
                f"spline has {spec.basis_count} basis functions but {len(self.c)} coefficients"
            )


def make_uniform_knots(
    domain: Tuple[float, float] = DEFAULT_DOMAIN,
    grid_size: int = DEFAULT_GRID_SIZE,
    degree: int = DEFAULT_DEGREE,
) -> SplineSpec:
    """G+1 uniform knots on [a, b] plus ``degree`` continuation knots on each side."""
    a, b = float(domain[0]), float(domain[1])
    if not a < b:
        raise ParameterError(f"degenerate spline domain [{a}, {b}]")
    if grid_size < 1:
        raise ParameterError(f"grid size must be >= 1, got {grid_size}")
    if degree < 0:
        raise ParameterError(f"degree must be >= 0, got {degree}")

    step = (b - a) / grid_size
    interior = np.linspace(a, b, grid_size + 1)
    before = a - step * np.arange(degree, 0, -1)
    after = b + step * np.arange(1, degree + 1)
    knots = np.concatenate([before, interior, after])
    return SplineSpec(domain=(a, b), degree=degree, grid_size=grid_size, knots=knots)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # 0/0 (and anything over a zero-length knot span) is 0
    den = np.broadcast_to(den, num.shape)
    out = np.zeros(num.shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def _cox_de_boor(x: np.ndarray, knots: np.ndarray, degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """Return (B_degree, B_{degree-1}) evaluated at x, shapes [..., n] and [..., n+1]."""
    xs = np.asarray(x, dtype=np.float64)[..., None]
    basis = ((xs >= knots[:-1]) & (xs < knots[1:])).astype(np.float64)
    # close the last interval so the right end of the knot vector is covered
    basis[..., -1] = np.where(xs[..., 0] == knots[-1], 1.0, basis[..., -1])

    lower = basis
    for d in range(1, degree + 1):
        n = len(knots) - d - 1
        left = _safe_div(xs - knots[:n], knots[d:d + n] - knots[:n])
        right = _safe_div(knots[d + 1:d + 1 + n] - xs, knots[d + 1:d + 1 + n] - knots[1:1 + n])
        lower = basis
        basis = left * basis[..., :n] + right * basis[..., 1:n + 1]
    return basis, lower


def cox_de_boor(x: Union[float, np.ndarray], knots: np.ndarray, degree: int) -> np.ndarray:
    """Plain recursion on an arbitrary knot vector, no extrapolation."""
    knots = np.asarray(knots, dtype=np.float64)
    return _cox_de_boor(x, knots, degree)[0]


def _derivative_from_lower(lower: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    n = len(knots) - degree - 1
    first = _safe_div(lower[..., :n], knots[degree:degree + n] - knots[:n])
    second = _safe_div(lower[..., 1:n + 1], knots[degree + 1:degree + 1 + n] - knots[1:1 + n])
    return degree * (first - second)


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ParameterError("spline inputs must be finite")


def _slope_points(x: np.ndarray, spec: SplineSpec) -> np.ndarray:
    # at and beyond b use the last interval inside [a, b], whose basis set is complete
    a, b = spec.domain
    return np.where(x >= b, np.nextafter(b, a), np.clip(x, a, b))


def bspline_basis(x: Union[float, np.ndarray], spec: SplineSpec) -> np.ndarray:
    """Evaluate all G+k basis functions at x (scalar or array, output gains a last axis).

    Inputs outside [a, b] are linearly extrapolated from the nearest boundary.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    a, b = spec.domain
    clipped = np.clip(x, a, b)
    basis, _ = _cox_de_boor(clipped, spec.knots, spec.degree)
    if spec.degree >= 1:
        offset = x - clipped
        if np.any(offset != 0):
            _, lower = _cox_de_boor(_slope_points(x, spec), spec.knots, spec.degree)
            slope = _derivative_from_lower(lower, spec.knots, spec.degree)
            basis = basis + offset[..., None] * slope
    return basis


def bspline_basis_derivative(x: Union[float, np.ndarray], spec: SplineSpec) -> np.ndarray:
    """d/dx of :func:`bspline_basis`; zero everywhere for degree 0."""
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x)
    if spec.degree == 0:
        return np.zeros(x.shape + (spec.basis_count,))
    _, lower = _cox_de_boor(_slope_points(x, spec), spec.knots, spec.degree)
    return _derivative_from_lower(lower, spec.knots, spec.degree)


def _coeff_vector(coeffs: Union[SplineCoeffs, np.ndarray], spec: SplineSpec) -> np.ndarray:
    if not isinstance(coeffs, SplineCoeffs):
        coeffs = SplineCoeffs(np.asarray(coeffs, dtype=np.float64))
    coeffs.check(spec)
    return coeffs.c


def spline_eval(
    x: Union[float, np.ndarray],
    spec: SplineSpec,
    coeffs: Union[SplineCoeffs, np.ndarray],
) -> Union[float, np.ndarray]:
    """S(x) = sum_i c_i B_i(x)."""
    c = _coeff_vector(coeffs, spec)
    value = bspline_basis(x, spec) @ c
    return float(value) if np.ndim(value) == 0 else value


def fit_coeffs(xs: np.ndarray, ys: np.ndarray, spec: SplineSpec) -> SplineCoeffs:
    """Least-squares spline coefficients for samples (xs, ys)."""
    design = bspline_basis(np.asarray(xs, dtype=np.float64), spec)
    solution, *_ = np.linalg.lstsq(design, np.asarray(ys, dtype=np.float64), rcond=None)
    return SplineCoeffs(solution)


def basis_tensor(x: Tensor, spec: SplineSpec) -> Tensor:
    """Differentiable basis expansion of a [m, n] tensor into [m, n * (G+k)]."""
    return basis_eval(
        x,
        lambda v: bspline_basis(v, spec),
        lambda v: bspline_basis_derivative(v, spec),
    )
