"""Temperature sweeps, peak extraction and interaction-shift fits.

The fitting steps are scikit-learn estimators so they validate input the usual
way and expose ``get_params``/``set_params``:

* :class:`PeakFinder` locates the temperature of maximal ``std(N_0)``.
* :class:`LinearShiftRegressor` fits ``dT_p = c * x`` through the origin.
* :class:`PowerLawShiftRegressor` fits ``dT_p = A * N**alpha_n * g**alpha_g``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted, column_or_1d

from .modes import DEFAULT_CUTOFF_FACTOR
from .oracle import ideal_fluctuation_curve

__all__ = [
    "ConcaveFitError",
    "EdgeMaximumError",
    "LinearShiftRegressor",
    "PeakEstimate",
    "PeakFinder",
    "PowerLawShiftRegressor",
    "ShiftFit",
    "SweepResult",
    "default_temperature_grid",
    "find_peak",
    "fit_linear_shift_3d",
    "fit_power_law_2d",
    "gas_parameter_to_coupling",
    "matched_ideal_peak",
    "normalize_sweep",
    "refine_grid",
    "relative_shift",
]


class EdgeMaximumError(ValueError):
    """The largest fluctuation sits at an end of the sweep; widen the temperature range."""


class ConcaveFitError(ValueError):
    """The local quadratic opens upward, so it has no maximum."""


@dataclass(frozen=True)
class SweepResult:
    """``std(N_0)`` versus temperature for one ``(dim, N, g)`` and ensemble.

    ``se_std`` may be ``None`` for exact curves.
    """

    temperatures: np.ndarray
    std_n0: np.ndarray
    se_std: np.ndarray | None = None
    config_tag: tuple = ()
    normalization: tuple | None = None

    def __post_init__(self):
        t = np.asarray(self.temperatures, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("temperatures must be a non-empty 1D array")
        if np.any(np.diff(t) <= 0):
            raise ValueError("temperatures must be strictly increasing")
        y = np.asarray(self.std_n0, dtype=float)
        check_consistent_length(t, y)
        object.__setattr__(self, "temperatures", t)
        object.__setattr__(self, "std_n0", y)
        if self.se_std is not None:
            se = np.asarray(self.se_std, dtype=float)
            check_consistent_length(t, se)
            if np.any(se <= 0):
                raise ValueError("standard errors must be positive")
            object.__setattr__(self, "se_std", se)

    def __len__(self) -> int:
        return self.temperatures.size


@dataclass(frozen=True)
class PeakEstimate:
    t_p: float
    t_p_err: float
    peak_value: float
    peak_err: float
    window: tuple


def _vertex(t, y, w, t_ref):
    # y = a + b u + c u^2 with u = t - t_ref
    c, b, a = np.polyfit(t - t_ref, y, 2, w=w)
    if c >= 0:
        raise ConcaveFitError("local quadratic is not concave; cannot locate a maximum")
    u = -b / (2 * c)
    return t_ref + u, a + b * u + c * u * u, (c, b, a)


class PeakFinder(BaseEstimator):
    """Vertex of a weighted quadratic fitted around the largest sweep point.

    Parameters
    ----------
    window : int
        Number of points nearest the discrete maximum used in the fit (5 to 9).
    n_bootstrap : int
        Parametric resamples of the point noise used for the error bars.
    random_state : int
        Seed of the bootstrap.

    Attributes
    ----------
    t_p_ : float
        Temperature of the fitted maximum.
    t_p_err_ : float
        Bootstrap standard error of ``t_p_``; without point errors, the spread
        of the vertex over 5, 7 and 9 point windows instead.
    peak_value_, peak_err_ : float
        Height of the fitted maximum and its error.
    """

    def __init__(self, window: int = 7, n_bootstrap: int = 500, random_state: int = 0):
        self.window = window
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state

    def _select(self, t, y, width):
        i = int(np.argmax(y))
        order = np.argsort(np.abs(t - t[i]), kind="stable")[:width]
        return np.sort(order)

    def fit(self, X, y, se=None):
        t = column_or_1d(check_array(np.asarray(X, dtype=float).reshape(-1, 1), ensure_min_samples=7))
        y = column_or_1d(np.asarray(y, dtype=float))
        check_consistent_length(t, y)
        if not 5 <= self.window <= 9:
            raise ValueError(f"window must be between 5 and 9 points, got {self.window}")
        order = np.argsort(t)
        t, y = t[order], y[order]
        se = None if se is None else np.asarray(se, dtype=float)[order]
        i = int(np.argmax(y))
        if i == 0 or i == t.size - 1:
            raise EdgeMaximumError(f"maximum at T={t[i]:g} is at the edge of the sweep")

        idx = self._select(t, y, min(self.window, t.size))
        w = None if se is None else 1.0 / se[idx]
        t_ref = t[i]
        t_p, peak, coef = _vertex(t[idx], y[idx], w, t_ref)
        if not t[0] < t_p < t[-1]:
            raise EdgeMaximumError(f"fitted maximum T={t_p:g} lies outside the sweep")

        if se is not None and self.n_bootstrap > 0:
            rng = np.random.default_rng(self.random_state)
            ts, ps = [], []
            for _ in range(self.n_bootstrap):
                yb = y[idx] + se[idx] * rng.standard_normal(idx.size)
                try:
                    tb, pb, _ = _vertex(t[idx], yb, w, t_ref)
                except ConcaveFitError:
                    continue
                ts.append(tb)
                ps.append(pb)
            if len(ts) < 0.9 * self.n_bootstrap:
                warnings.warn(f"{self.n_bootstrap - len(ts)} bootstrap fits were not concave", RuntimeWarning)
            t_err = float(np.std(ts, ddof=1))
            p_err = float(np.std(ps, ddof=1))
        else:
            alt_t, alt_p = [], []
            for width in (5, 7, 9):
                if width > t.size:
                    continue
                j = self._select(t, y, width)
                try:
                    tb, pb, _ = _vertex(t[j], y[j], None, t_ref)
                except ConcaveFitError:
                    continue
                alt_t.append(tb)
                alt_p.append(pb)
            t_err = float(np.ptp(alt_t)) / 2 if alt_t else 0.0
            p_err = float(np.ptp(alt_p)) / 2 if alt_p else 0.0

        self.t_p_ = float(t_p)
        self.t_p_err_ = t_err
        self.peak_value_ = float(peak)
        self.peak_err_ = p_err
        self.window_ = (float(t[idx[0]]), float(t[idx[-1]]))
        self.t_ref_ = float(t_ref)
        self.coef_ = np.asarray(coef)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        t = np.asarray(X, dtype=float).ravel()
        return np.polyval(self.coef_, t - self.t_ref_)

    def to_estimate(self) -> PeakEstimate:
        check_is_fitted(self, "t_p_")
        return PeakEstimate(self.t_p_, self.t_p_err_, self.peak_value_, self.peak_err_, self.window_)


def find_peak(sweep: SweepResult, window: int = 7, n_bootstrap: int = 500,
              random_state: int = 0) -> PeakEstimate:
    finder = PeakFinder(window=window, n_bootstrap=n_bootstrap, random_state=random_state)
    return finder.fit(sweep.temperatures, sweep.std_n0, se=sweep.se_std).to_estimate()


def matched_ideal_peak(n_atoms: int, temperatures, t_p: float, *, dim: int = 3, aspect=None,
                       cutoff_factor: float = DEFAULT_CUTOFF_FACTOR, window: int = 7,
                       rtol: float = 1e-10, max_iter: int = 50) -> PeakEstimate:
    """Ideal-gas reference peak extracted with the same estimator as a sampled sweep.

    A quadratic vertex over a finite window is biased on an asymmetric peak,
    and the bias depends on where the grid points fall.  If the interacting
    curve is the ideal one stretched in temperature by ``s = 1 + dT_p``, its
    sweep on ``temperatures`` sees the ideal curve on ``temperatures / s``.
    The exact ideal curve is therefore evaluated on that rescaled grid and
    ``s`` iterated to a fixed point, so the bias cancels in the shift.

    Returns the estimate on the rescaled grid (zero errors); its ``t_p`` is
    the reference for :func:`relative_shift`.
    """
    t = np.asarray(temperatures, dtype=float)

    def reference(scale):
        grid = t / scale
        curve = ideal_fluctuation_curve(n_atoms, grid, dim=dim, aspect=aspect, cutoff_factor=cutoff_factor)
        return find_peak(SweepResult(grid, curve.std_n0), window=window, n_bootstrap=0)

    ref = reference(1.0)
    scale = t_p / ref.t_p
    for _ in range(max_iter):
        ref = reference(scale)
        new = t_p / ref.t_p
        if abs(new - scale) <= rtol * scale:
            break
        scale = new
    return replace(ref, t_p_err=0.0, peak_err=0.0)


def relative_shift(interacting: PeakEstimate, ideal: PeakEstimate) -> tuple[float, float]:
    """``(T_p - T_p0) / T_p0`` and its error from both peak errors in quadrature."""
    t1, e1 = interacting.t_p, interacting.t_p_err
    t0, e0 = ideal.t_p, ideal.t_p_err
    shift = (t1 - t0) / t0
    err = math.hypot(e1 / t0, t1 * e0 / t0**2)
    return shift, err


def gas_parameter_to_coupling(gas_param: float, n_atoms: int, aspect=None) -> float:
    """Dimensionless 3D coupling for a gas parameter ``a rho^(1/3)``.

    ``g = (4 pi hbar^2 a / m) / V`` in units of ``2 pi^2 hbar^2 / (m L^2)`` is
    ``2 a / (pi L vol)`` with ``vol = V / L^3``; eliminating ``a`` gives
    ``(2 / pi) x N^(-1/3) vol^(-2/3)``.
    """
    if gas_param < 0:
        raise ValueError("gas parameter must be non-negative")
    vol = math.prod(aspect) if aspect is not None else 1.0
    return 2.0 / math.pi * gas_param * n_atoms ** (-1.0 / 3.0) * vol ** (-2.0 / 3.0)


def normalize_sweep(sweep: SweepResult, ideal_ref: tuple) -> SweepResult:
    """Divide temperatures by ``T_p0`` and fluctuations by the ideal-gas peak height."""
    t_p0, peak0 = ideal_ref
    se = None if sweep.se_std is None else sweep.se_std / peak0
    return replace(
        sweep,
        temperatures=sweep.temperatures / t_p0,
        std_n0=sweep.std_n0 / peak0,
        se_std=se,
        normalization=(float(t_p0), float(peak0)),
    )


def default_temperature_grid(t_p_estimate: float, n_points: int = 15, span=(0.6, 1.4)) -> np.ndarray:
    return t_p_estimate * np.linspace(span[0], span[1], n_points)


def refine_grid(temperatures, values, n_new: int = 6) -> np.ndarray:
    """New temperatures evenly spaced between the neighbours of the current maximum."""
    t = np.asarray(temperatures, dtype=float)
    y = np.asarray(values, dtype=float)
    order = np.argsort(t)
    t, y = t[order], y[order]
    i = int(np.argmax(y))
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, t.size - 1)]
    new = np.linspace(lo, hi, n_new + 2)[1:-1]
    return new[~np.isclose(new[:, None], t[None, :], rtol=1e-9, atol=0).any(axis=1)]


@dataclass
class ShiftFit:
    kind: str
    coefficients: dict
    errors: dict
    n_points: int
    excluded: list = field(default_factory=list)

    def to_json(self, **kwargs) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "coefficients": self.coefficients,
                "errors": self.errors,
                "n_points": self.n_points,
                "excluded": self.excluded,
            },
            **kwargs,
        )


class LinearShiftRegressor(RegressorMixin, BaseEstimator):
    """Weighted least squares of ``y = c * x`` through the origin.

    ``sample_error`` gives per-point standard errors.  The error on ``c`` is
    inflated by ``sqrt(chi2 / dof)`` when the scatter exceeds the error bars.
    """

    def __init__(self, min_distinct: int = 3):
        self.min_distinct = min_distinct

    def fit(self, X, y, sample_error=None):
        x = column_or_1d(check_array(np.asarray(X, dtype=float).reshape(len(X), -1)))
        y = column_or_1d(np.asarray(y, dtype=float))
        check_consistent_length(x, y)
        if np.unique(x).size < self.min_distinct:
            raise ValueError(f"need at least {self.min_distinct} distinct gas parameters, got {np.unique(x).size}")
        w = np.ones_like(x) if sample_error is None else 1.0 / np.asarray(sample_error, dtype=float) ** 2
        sxx = float(np.sum(w * x * x))
        if sxx == 0:
            raise ValueError("degenerate design: all gas parameters are zero")
        c = float(np.sum(w * x * y) / sxx)
        resid = y - c * x
        dof = max(x.size - 1, 1)
        chi2 = float(np.sum(w * resid**2))
        if sample_error is None:
            err = math.sqrt(chi2 / dof / sxx)
        else:
            err = math.sqrt(1.0 / sxx) * max(1.0, math.sqrt(chi2 / dof))
        self.coef_ = c
        self.coef_err_ = err
        self.chi2_ = chi2
        self.n_points_ = int(x.size)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self.coef_ * np.asarray(X, dtype=float).ravel()


class PowerLawShiftRegressor(RegressorMixin, BaseEstimator):
    """Fit of ``y = A * N**alpha_n * g**alpha_g`` by linear least squares in log space.

    ``X`` has columns ``(N, g)``.  Points with ``y <= exclude_sigma * error``
    (or ``y <= 0``) are dropped and listed in ``excluded_``.
    """

    def __init__(self, exclude_sigma: float = 2.0, min_distinct: int = 3):
        self.exclude_sigma = exclude_sigma
        self.min_distinct = min_distinct

    def fit(self, X, y, sample_error=None):
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns: atom number and coupling")
        y = column_or_1d(np.asarray(y, dtype=float))
        check_consistent_length(X, y)
        err = None if sample_error is None else np.asarray(sample_error, dtype=float)
        keep = y > 0
        if err is not None:
            keep &= y > self.exclude_sigma * err
        keep &= np.all(X > 0, axis=1)
        self.excluded_ = [
            {"N": float(X[i, 0]), "g": float(X[i, 1]), "shift": float(y[i])} for i in np.flatnonzero(~keep)
        ]
        if self.excluded_:
            warnings.warn(f"excluded {len(self.excluded_)} points with non-significant shifts", RuntimeWarning)
        Xk, yk = X[keep], y[keep]
        for col, name in ((0, "atom numbers"), (1, "couplings")):
            if np.unique(Xk[:, col]).size < self.min_distinct:
                raise ValueError(f"need at least {self.min_distinct} distinct {name} after exclusions")
        A = np.column_stack((np.ones(yk.size), np.log(Xk[:, 0]), np.log(Xk[:, 1])))
        b = np.log(yk)
        if err is None:
            sw = np.ones(yk.size)
        else:
            sw = yk / err[keep]  # 1 / sigma of log y
        coef, *_ = np.linalg.lstsq(A * sw[:, None], b * sw, rcond=None)
        resid = (b - A @ coef) * sw
        dof = max(yk.size - 3, 1)
        chi2 = float(resid @ resid)
        cov = np.linalg.inv((A * sw[:, None]).T @ (A * sw[:, None]))
        if err is None:
            cov *= chi2 / dof
        else:
            cov *= max(1.0, chi2 / dof)
        se = np.sqrt(np.diag(cov))
        self.log_prefactor_ = float(coef[0])
        self.prefactor_ = float(math.exp(coef[0]))
        self.alpha_n_ = float(coef[1])
        self.alpha_g_ = float(coef[2])
        self.prefactor_err_ = self.prefactor_ * float(se[0])
        self.alpha_n_err_ = float(se[1])
        self.alpha_g_err_ = float(se[2])
        self.chi2_ = chi2
        self.n_points_ = int(yk.size)
        return self

    def predict(self, X):
        check_is_fitted(self, "alpha_n_")
        X = check_array(X, dtype=float)
        return self.prefactor_ * X[:, 0] ** self.alpha_n_ * X[:, 1] ** self.alpha_g_


def fit_linear_shift_3d(points) -> ShiftFit:
    """Points are ``(gas_param, shift, error)``; error may be ``None`` for all points."""
    pts = list(points)
    x = [p[0] for p in pts]
    y = [p[1] for p in pts]
    e = [p[2] for p in pts]
    err = None if any(v is None for v in e) else e
    reg = LinearShiftRegressor().fit(np.asarray(x).reshape(-1, 1), y, sample_error=err)
    return ShiftFit("linear-3d", {"c": reg.coef_}, {"c": reg.coef_err_}, reg.n_points_)


def fit_power_law_2d(points) -> ShiftFit:
    """Points are ``(N, g, shift, error)``; error may be ``None`` for all points."""
    pts = list(points)
    X = np.asarray([[p[0], p[1]] for p in pts], dtype=float)
    y = [p[2] for p in pts]
    e = [p[3] for p in pts]
    err = None if any(v is None for v in e) else e
    reg = PowerLawShiftRegressor().fit(X, y, sample_error=err)
    return ShiftFit(
        "power-2d",
        {"A": reg.prefactor_, "alpha_N": reg.alpha_n_, "alpha_g": reg.alpha_g_},
        {"A": reg.prefactor_err_, "alpha_N": reg.alpha_n_err_, "alpha_g": reg.alpha_g_err_},
        reg.n_points_,
        reg.excluded_,
    )
