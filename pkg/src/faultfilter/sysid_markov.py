"""Identification of predictor Markov parameters from input/output data.

The predictor form makes the plant output a finite regression on past
inputs and outputs once the predictor transient has died out:

    y(k) ~ H_0^u u(k) + sum_{i=1..p} [H_i^u u(k-i) + H_i^y y(k-i)] + e(k)

because Phi = A - K C is stable even when A is not.  Stacking the
coefficient blocks into one wide matrix and solving a single least
squares problem over all usable samples recovers the Markov parameters
directly from data; the truncation bias decays like the p-th power of
the predictor spectral radius, so a past window around p = 100 makes it
negligible for the plants in scope.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lstsq

from .errors import ExcitationError, ValidationError
from .lti_core import IOData, MarkovSequence, PredictorModel, markov_parameters

__all__ = ["IdentifiedXi", "xi_from_predictor", "identify_xi", "xi_residuals"]

_FMT = "%.17g"


@dataclass
class IdentifiedXi:
    """Estimated predictor Markov parameters up to lag p.

    ``Hu`` holds H_0^u .. H_p^u (index equals the lag); ``Hy`` holds
    H_1^y .. H_p^y, so ``Hy[i]`` is the lag i+1 block and the implicit
    H_0^y = 0 is not stored.  ``residual_variance`` is the sample
    covariance of the regression residuals, an estimate of the
    innovation covariance.
    """

    Hu: MarkovSequence
    Hy: MarkovSequence
    past_horizon: int
    residual_variance: np.ndarray = None

    def __post_init__(self):
        if not isinstance(self.Hu, MarkovSequence):
            self.Hu = MarkovSequence(np.asarray(self.Hu, dtype=float))
        if not isinstance(self.Hy, MarkovSequence):
            self.Hy = MarkovSequence(np.asarray(self.Hy, dtype=float))
        p = self.past_horizon
        if p < 1:
            raise ValidationError("past horizon must be at least 1")
        if len(self.Hu) != p + 1:
            raise ValidationError(f"expected {p + 1} input blocks, got {len(self.Hu)}")
        if len(self.Hy) != p:
            raise ValidationError(f"expected {p} output blocks, got {len(self.Hy)}")
        ny = self.Hu.block_shape[0]
        if self.Hy.block_shape != (ny, ny):
            raise ValidationError(
                f"output blocks must be {ny} x {ny}, got {self.Hy.block_shape}")
        if self.residual_variance is None:
            self.residual_variance = np.zeros((ny, ny))
        else:
            self.residual_variance = np.atleast_2d(
                np.asarray(self.residual_variance, dtype=float))
            if self.residual_variance.shape != (ny, ny):
                raise ValidationError("residual variance must be n_y x n_y")

    @property
    def p(self) -> int:
        return self.past_horizon

    @property
    def n_u(self) -> int:
        return self.Hu.block_shape[1]

    @property
    def n_y(self) -> int:
        return self.Hu.block_shape[0]

    def markov_u(self, L: int = None) -> MarkovSequence:
        """Input channel blocks H_0^u .. H_(L-1)^u."""
        L = self.p + 1 if L is None else L
        return self.Hu.truncated(L)

    def markov_y(self, L: int = None) -> MarkovSequence:
        """Output channel blocks with the zero H_0^y made explicit."""
        L = self.p + 1 if L is None else L
        if L > self.p + 1:
            raise ValidationError(f"only {self.p + 1} output blocks available")
        ny = self.n_y
        return MarkovSequence(np.concatenate(
            [np.zeros((1, ny, ny)), self.Hy.blocks[:L - 1]]))

    def stacked(self) -> np.ndarray:
        """Coefficient row [H_p^u H_p^y ... H_1^u H_1^y H_0^u].

        This is the matrix the LS regression actually solves for, with
        the deepest lag first and the feedthrough block last.
        """
        cols = []
        for lag in range(self.p, 0, -1):
            cols.append(self.Hu[lag])
            cols.append(self.Hy[lag - 1])
        cols.append(self.Hu[0])
        return np.hstack(cols)

    @classmethod
    def from_stacked(cls, xi, p: int, n_u: int, n_y: int,
                     residual_variance=None) -> "IdentifiedXi":
        """Rebuild the block sequences from the stacked coefficient row."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        w = n_u + n_y
        if xi.shape != (n_y, p * w + n_u):
            raise ValidationError(
                f"stacked shape {xi.shape} does not match p={p}, n_u={n_u}, n_y={n_y}")
        Hu = np.empty((p + 1, n_y, n_u))
        Hy = np.empty((p, n_y, n_y))
        Hu[0] = xi[:, p * w:]
        for lag in range(1, p + 1):
            start = (p - lag) * w
            Hu[lag] = xi[:, start:start + n_u]
            Hy[lag - 1] = xi[:, start + n_u:start + w]
        return cls(MarkovSequence(Hu), MarkovSequence(Hy), p, residual_variance)

    def to_csv(self, path) -> None:
        """Write the estimate with a small manifest header.

        Layout: manifest line, the stacked coefficient rows, then the
        residual covariance rows.
        """
        xi = self.stacked()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p", "n_u", "n_y"])
            w.writerow([self.p, self.n_u, self.n_y])
            for row in xi:
                w.writerow([_FMT % v for v in row])
            for row in self.residual_variance:
                w.writerow([_FMT % v for v in row])

    @classmethod
    def from_csv(cls, path) -> "IdentifiedXi":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2 or rows[0] != ["p", "n_u", "n_y"]:
            raise ValidationError(f"{path}: expected a 'p,n_u,n_y' manifest header")
        try:
            p, n_u, n_y = (int(v) for v in rows[1])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: malformed manifest row {rows[1]}") from exc
        if len(rows) != 2 + 2 * n_y:
            raise ValidationError(
                f"{path}: expected {2 * n_y} data rows, got {len(rows) - 2}")
        xi = np.array([[float(v) for v in r] for r in rows[2:2 + n_y]])
        cov = np.array([[float(v) for v in r] for r in rows[2 + n_y:]])
        return cls.from_stacked(xi, p, n_u, n_y, residual_variance=cov)


def xi_from_predictor(pred: PredictorModel, p: int) -> IdentifiedXi:
    """Exact Markov parameter blocks of a known predictor.

    The noise free reference point: identification on clean, long data
    converges to this object.
    """
    Hu = markov_parameters(pred, "u", p + 1)
    Hy = markov_parameters(pred, "y", p + 1)
    return IdentifiedXi(Hu, MarkovSequence(Hy.blocks[1:]), p,
                        residual_variance=pred.SigmaE)


def _regression_arrays(data: IOData, p: int, assume_delay: bool):
    """Target and regressor matrices of the VARX problem.

    Rows are samples k = p .. N-1; regressor columns follow the stacked
    block layout (deepest lag first).  With ``assume_delay`` the lag 0
    input columns are dropped (one sample actuation delay, H_0^u = 0),
    which removes the simultaneity bias that static output feedback
    would otherwise induce.
    """
    N = data.n_samples
    u, y = data.u, data.y
    cols = [np.hstack([u[p - lag:N - lag], y[p - lag:N - lag]])
            for lag in range(p, 0, -1)]
    if not assume_delay:
        cols.append(u[p:N])
    return y[p:N], np.hstack(cols), N - p


def identify_xi(data: IOData, p: int, ridge: float = 0.0,
                assume_delay: bool = False) -> IdentifiedXi:
    """Least squares estimate of the predictor Markov parameters.

    Args:
        data: recorded experiment; inputs must be persistently exciting
            (not checked beyond a rank test on the regressors).
        p: past window length; the truncation bias scales with the p-th
            power of the predictor spectral radius.
        ridge: optional Tikhonov weight on the coefficients.
        assume_delay: treat the plant as strictly causal from u, pinning
            H_0^u = 0 and excluding u(k) from the regressors.  Use this
            when data were collected under output feedback, where u(k)
            and e(k) are correlated through y(k).

    Returns:
        IdentifiedXi with all blocks and the residual covariance.

    Raises:
        ExcitationError: fewer usable rows than coefficients, or the
            regressor matrix is rank deficient with ridge = 0.
    """
    if p < 1:
        raise ValidationError("past window p must be at least 1")
    if data.n_samples <= p:
        raise ExcitationError(
            f"insufficient excitation: need more than p={p} samples, "
            f"got {data.n_samples}")
    Y, Z, rows = _regression_arrays(data, p, assume_delay)
    ncols = Z.shape[1]
    if rows < ncols:
        raise ExcitationError(
            f"insufficient excitation: {rows} regression rows cannot determine "
            f"{ncols} coefficient columns; record more samples or lower p")
    if ridge < 0:
        raise ValidationError("ridge weight must be nonnegative")
    if ridge > 0:
        Zr = np.vstack([Z, np.sqrt(ridge) * np.eye(ncols)])
        Yr = np.vstack([Y, np.zeros((ncols, data.n_outputs))])
    else:
        Zr, Yr = Z, Y
    sol, _, rank, _ = lstsq(Zr, Yr, lapack_driver="gelsy")
    if ridge == 0 and rank < ncols:
        raise ExcitationError(
            f"insufficient excitation: regressor matrix rank {rank} < {ncols} "
            "at this window length")
    res = Y - Z @ sol
    cov = res.T @ res / rows
    xi = sol.T
    if assume_delay:
        xi = np.hstack([xi, np.zeros((data.n_outputs, data.n_inputs))])
    return IdentifiedXi.from_stacked(xi, p, data.n_inputs, data.n_outputs,
                                     residual_variance=cov)


def xi_residuals(xi: IdentifiedXi, data: IOData) -> np.ndarray:
    """One step prediction errors of an identified model on a record.

    Returns residuals for samples p .. N-1 as an (N - p, n_y) array.  On
    fault free data these approximate the innovations; on faulty data
    they carry the convolution of the fault with its Markov parameters,
    which is what the moving horizon estimator consumes.
    """
    if data.n_inputs != xi.n_u or data.n_outputs != xi.n_y:
        raise ValidationError("data dimensions do not match the identified model")
    if data.n_samples <= xi.p:
        raise ValidationError(f"record shorter than the past window p={xi.p}")
    Y, Z, _ = _regression_arrays(data, xi.p, assume_delay=False)
    return Y - Z @ xi.stacked().T
