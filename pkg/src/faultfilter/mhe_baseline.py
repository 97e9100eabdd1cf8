"""Moving horizon least squares fault estimation over residual windows.

Over a window of L residual samples the innovation filter output obeys

    r_window = O x(k0) + Tf f_window + e_window

with O the extended observability matrix of the residual dynamics and
Tf the block Toeplitz matrix of the fault channel Markov parameters.
Estimating (x, f) jointly by ordinary least squares and eliminating the
state via the Schur complement gives a single linear map from the
residual window to the fault window:

    f_hat = [Gp + Mp (I - Tf Gp)] r_window

where Gp = (Tf' Tf)^-1 Tf' and, from the back substitution
f = Gp (r - O x), x = Delta^+ O' (I - Tf Gp) r, the state correction
enters with a minus sign: Mp = -Gp O Delta^+ O' with
Delta = O' O - O' Tf Gp O.  The pseudo-inverse handles the rank
deficient Delta that occurs whenever state and fault contributions are
not separately identifiable; any minimizer yields the same fitted
residual.

Unlike the recursive inversion filter this estimator touches the whole
window every step, and Gp, Mp are dense rather than block Toeplitz, so
its per sample cost grows with L.  It serves as the accuracy and cost
baseline.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError, WindowRankError
from .lti_core import (
    MarkovSequence,
    PredictorModel,
    block_toeplitz,
    extended_observability,
    markov_parameters,
)

__all__ = ["MheProblem", "build_mhe", "mhe_estimate", "run_mhe"]


@dataclass
class MheProblem:
    """Precomputed matrices of the windowed least squares estimator.

    ``gain`` is the composite map from a stacked residual window to the
    stacked fault window; its last block row estimates the newest
    sample, which is what the sliding runner emits.
    """

    O: np.ndarray
    Tf: np.ndarray
    Psi: np.ndarray
    Gp: np.ndarray
    Mp: np.ndarray
    Delta: np.ndarray
    L: int
    gain: np.ndarray = field(repr=False, default=None)

    @property
    def n_outputs(self) -> int:
        return self.Tf.shape[0] // self.L

    @property
    def n_faults(self) -> int:
        return self.Tf.shape[1] // self.L

    @property
    def n_states(self) -> int:
        return self.O.shape[1]


def build_mhe(source, L: int) -> MheProblem:
    """Assemble the window estimator from a predictor or Markov data.

    Args:
        source: either a PredictorModel with a fault channel (O and Tf
            are generated from it), or a pair (Hf, O) with Hf the fault
            channel MarkovSequence (at least L blocks) and O the
            L-block extended observability matrix of the residual
            dynamics; the pair form is how identified quantities enter.
        L: window length in samples.

    Returns:
        MheProblem with all matrices precomputed, including the
        composite residual-to-fault gain.

    Raises:
        WindowRankError: the fault Toeplitz matrix lost column rank, so
            no left inverse of the fault stack exists.
    """
    if L < 1:
        raise ValidationError("window length must be positive")
    if isinstance(source, PredictorModel):
        if source.n_faults == 0:
            raise ValidationError("predictor has no fault channel")
        Hf = markov_parameters(source, "f", L)
        O = extended_observability(source.Phi, source.C, L)
    else:
        Hf, O = source
        if not isinstance(Hf, MarkovSequence):
            Hf = MarkovSequence(np.asarray(Hf, dtype=float))
        O = np.atleast_2d(np.asarray(O, dtype=float))
    if len(Hf) < L:
        raise ValidationError(f"need {L} fault blocks, have {len(Hf)}")
    Tf = block_toeplitz(Hf, L)
    if O.shape[0] != Tf.shape[0]:
        raise ValidationError(
            f"observability matrix has {O.shape[0]} rows, expected {Tf.shape[0]}")

    s = np.linalg.svd(Tf, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        raise WindowRankError(
            f"window inversion rank failure: fault Toeplitz matrix has "
            f"numerical rank below {Tf.shape[1]} (smallest singular value "
            f"{s[-1]:.3g})")
    Gp = np.linalg.solve(Tf.T @ Tf, Tf.T)
    Delta = O.T @ O - O.T @ Tf @ Gp @ O
    # Delta = O' (I - P) O with P an orthogonal projector, so it is PSD
    # and bounded by O' O.  Cut its spectrum relative to that bound: a
    # direction the window cannot identify produces Delta = 0 up to
    # rounding, and a cutoff relative to Delta's own noise floor (what a
    # plain pinv uses) would amplify that rounding into the gain.
    w, V = np.linalg.eigh(0.5 * (Delta + Delta.T))
    scale = max(np.linalg.norm(O.T @ O, 2), np.finfo(float).tiny)
    inv_w = np.where(w > 1e-12 * scale, 1.0 / np.maximum(w, scale * 1e-300), 0.0)
    # Minus sign from back substitution: f = Gp (r - O x) once the state
    # estimate x = Delta^+ O' (I - Tf Gp) r is plugged in.
    Mp = -Gp @ O @ ((V * inv_w) @ V.T) @ O.T
    gain = Gp + Mp @ (np.eye(Tf.shape[0]) - Tf @ Gp)
    return MheProblem(O=O, Tf=Tf, Psi=np.hstack([O, Tf]), Gp=Gp, Mp=Mp,
                      Delta=Delta, L=L, gain=gain)


def mhe_estimate(problem: MheProblem, r_window) -> np.ndarray:
    """Stacked fault estimates for one full residual window.

    The window covers samples k0 .. k0+L-1 oldest first; the returned
    vector stacks the per sample estimates the same way, so the last
    n_f entries estimate the newest sample.
    """
    r = np.asarray(r_window, dtype=float).reshape(-1)
    if r.shape[0] != problem.Tf.shape[0]:
        raise ValidationError(
            f"window must stack {problem.Tf.shape[0]} residual entries, "
            f"got {r.shape[0]}")
    return problem.gain @ r


def run_mhe(problem: MheProblem, residuals) -> np.ndarray:
    """Slide the window over a residual series, one step at a time.

    Returns an (N, n_f) array whose row k is the newest-sample estimate
    from the window ending at k.  The first L-1 rows are warm-up and
    carry NaN, the window not being filled yet.
    """
    R = np.atleast_2d(np.asarray(residuals, dtype=float))
    ny, nf, L = problem.n_outputs, problem.n_faults, problem.L
    if R.shape[1] != ny:
        raise ValidationError(f"residuals must have {ny} columns, got {R.shape[1]}")
    N = R.shape[0]
    out = np.full((N, nf), np.nan)
    if N < L:
        return out
    # Every window is the flattened series shifted by one sample, so a
    # strided view turns the whole sweep into a single matrix product.
    flat = np.ascontiguousarray(R).reshape(-1)
    windows = np.lib.stride_tricks.sliding_window_view(flat, L * ny)[::ny]
    out[L - 1:] = windows @ problem.gain[-nf:].T
    return out
