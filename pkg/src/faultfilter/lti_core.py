"""Core LTI types and constructions.

Plant model with process/measurement noise and additive faults:

    x(k+1) = A x(k) + B u(k) + E f(k) + F w(k)
    y(k)   = C x(k) + D u(k) + G f(k) + v(k)

with w ~ N(0, Q) and v ~ N(0, R) white and mutually independent.
The one step ahead (predictor) form replaces the state recursion by

    xh(k+1) = Phi xh(k) + Bt u(k) + K y(k),   Phi = A - K C,  Bt = B - K D

where K is the steady state Kalman gain, so that y(k) = C xh(k) + D u(k)
+ e(k) with white innovation e.  Everything downstream (identification,
inversion, window estimators) is phrased in terms of the predictor
Markov parameters, which this module computes and stacks into block
Toeplitz / Hankel / observability matrices.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import RiccatiError, ValidationError

__all__ = [
    "MarkovSequence",
    "StateSpaceModel",
    "PredictorModel",
    "LinearSystem",
    "IOData",
    "dare_fixed_point",
    "solve_dare",
    "to_predictor",
    "sensor_fault_plant",
    "sensor_fault_channel",
    "simulate",
    "markov_parameters",
    "markov_from_ss",
    "block_toeplitz",
    "block_hankel",
    "extended_observability",
    "spectral_radius",
    "psd_factor",
]

_FMT = "%.17g"


def _as_matrix(M, rows=None, cols=None, name="matrix"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if rows is not None and M.shape[0] != rows:
        raise ValidationError(f"{name} must have {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        raise ValidationError(f"{name} must have {cols} columns, got {M.shape[1]}")
    return M


def _check_symmetric_psd(M, name):
    if not np.allclose(M, M.T, atol=1e-10 * max(1.0, np.abs(M).max(initial=0.0))):
        raise ValidationError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    if w.min(initial=0.0) < -1e-10 * max(1.0, w.max(initial=0.0)):
        raise ValidationError(f"{name} must be positive semidefinite")


def spectral_radius(A) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def psd_factor(M) -> np.ndarray:
    """Square root factor S of a PSD matrix, M = S S^T.

    Uses the eigendecomposition so that exactly singular covariances
    (including the zero matrix) are handled without a Cholesky failure.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    _check_symmetric_psd(M, "covariance")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)


@dataclass
class MarkovSequence:
    """Ordered sequence of equally sized matrix blocks H_0, H_1, ...

    Stored as one array of shape (length, rows, cols).  The index is the
    Markov order, i.e. ``seq[i]`` is the coefficient of the i samples
    delayed input channel.
    """

    blocks: np.ndarray

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=float)
        if self.blocks.ndim != 3:
            raise ValidationError("MarkovSequence expects an array of shape (L, rows, cols)")

    @classmethod
    def from_blocks(cls, blocks) -> "MarkovSequence":
        blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
        if not blocks:
            raise ValidationError("empty Markov sequence")
        shape = blocks[0].shape
        for b in blocks:
            if b.shape != shape:
                raise ValidationError("all Markov blocks must share one shape")
        return cls(np.stack(blocks))

    def __len__(self) -> int:
        return self.blocks.shape[0]

    def __getitem__(self, i):
        return self.blocks[i]

    def __iter__(self):
        return iter(self.blocks)

    @property
    def block_shape(self):
        return self.blocks.shape[1:]

    def truncated(self, L: int) -> "MarkovSequence":
        if L > len(self):
            raise ValidationError(f"requested {L} blocks, sequence has {len(self)}")
        return MarkovSequence(self.blocks[:L])


@dataclass
class StateSpaceModel:
    """Discrete time plant with noise channels and fault directions."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = None
    E: np.ndarray = None
    G: np.ndarray = None
    F: np.ndarray = None
    Q: np.ndarray = None
    R: np.ndarray = None

    def __post_init__(self):
        self.A = _as_matrix(self.A, name="A")
        n = self.A.shape[0]
        if self.A.shape[1] != n:
            raise ValidationError("A must be square")
        self.B = _as_matrix(self.B, rows=n, name="B")
        self.C = _as_matrix(self.C, cols=n, name="C")
        ny = self.C.shape[0]
        nu = self.B.shape[1]
        self.D = (np.zeros((ny, nu)) if self.D is None
                  else _as_matrix(self.D, rows=ny, cols=nu, name="D"))
        if self.E is None and self.G is None:
            self.E = np.zeros((n, 0))
            self.G = np.zeros((ny, 0))
        else:
            if self.G is None:
                raise ValidationError("E given without G")
            self.G = _as_matrix(self.G, rows=ny, name="G")
            nf = self.G.shape[1]
            self.E = (np.zeros((n, nf)) if self.E is None
                      else _as_matrix(self.E, rows=n, cols=nf, name="E"))
        self.F = np.eye(n) if self.F is None else _as_matrix(self.F, rows=n, name="F")
        nw = self.F.shape[1]
        self.Q = np.zeros((nw, nw)) if self.Q is None else _as_matrix(self.Q, rows=nw, cols=nw, name="Q")
        self.R = np.zeros((ny, ny)) if self.R is None else _as_matrix(self.R, rows=ny, cols=ny, name="R")
        _check_symmetric_psd(self.Q, "Q")
        _check_symmetric_psd(self.R, "R")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def n_faults(self) -> int:
        return self.G.shape[1]


@dataclass
class PredictorModel:
    """Steady state one step ahead predictor of a plant.

    Fields follow the innovation form: Phi = A - K C, Bt = B - K D and,
    for the fault channel, Et = E - K G.  SigmaE is the innovation
    covariance C P C^T + R.
    """

    Phi: np.ndarray
    Bt: np.ndarray
    K: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Et: np.ndarray = None
    G: np.ndarray = None
    SigmaE: np.ndarray = None

    def __post_init__(self):
        self.Phi = _as_matrix(self.Phi, name="Phi")
        n = self.Phi.shape[0]
        if self.Phi.shape[1] != n:
            raise ValidationError("Phi must be square")
        self.C = _as_matrix(self.C, cols=n, name="C")
        ny = self.C.shape[0]
        self.Bt = _as_matrix(self.Bt, rows=n, name="Bt")
        self.K = _as_matrix(self.K, rows=n, cols=ny, name="K")
        self.D = _as_matrix(self.D, rows=ny, cols=self.Bt.shape[1], name="D")
        if self.G is None:
            self.G = np.zeros((ny, 0))
            self.Et = np.zeros((n, 0))
        else:
            self.G = _as_matrix(self.G, rows=ny, name="G")
            self.Et = _as_matrix(self.Et, rows=n, cols=self.G.shape[1], name="Et")
        self.SigmaE = (np.eye(ny) if self.SigmaE is None
                       else _as_matrix(self.SigmaE, rows=ny, cols=ny, name="SigmaE"))

    @property
    def n_states(self) -> int:
        return self.Phi.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.Bt.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def n_faults(self) -> int:
        return self.G.shape[1]


@dataclass
class LinearSystem:
    """Plain deterministic state space quadruple (A, B, C, D)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.A = _as_matrix(self.A, name="A")
        n = self.A.shape[0]
        self.B = _as_matrix(self.B, rows=n, name="B")
        self.C = _as_matrix(self.C, cols=n, name="C")
        self.D = _as_matrix(self.D, rows=self.C.shape[0], cols=self.B.shape[1], name="D")

    def run(self, inputs, x0=None) -> np.ndarray:
        """Simulate the system over an (N, n_in) input array."""
        U = np.atleast_2d(np.asarray(inputs, dtype=float))
        if U.shape[1] != self.B.shape[1]:
            raise ValidationError(
                f"input width {U.shape[1]} does not match B ({self.B.shape[1]} columns)")
        n = self.A.shape[0]
        x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
        out = np.empty((U.shape[0], self.C.shape[0]))
        for k in range(U.shape[0]):
            out[k] = self.C @ x + self.D @ U[k]
            x = self.A @ x + self.B @ U[k]
        return out

    def markov(self, L: int) -> MarkovSequence:
        return markov_from_ss(self.A, self.B, self.C, self.D, L)


@dataclass
class IOData:
    """Sampled input/output record of one experiment."""

    u: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.u.shape[0] != self.y.shape[0]:
            raise ValidationError("u and y must have the same number of samples")

    @property
    def n_samples(self) -> int:
        return self.u.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.u.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.y.shape[1]

    def to_csv(self, path) -> None:
        """Write samples as rows k,u1..u_nu,y1..y_ny with full precision."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"]
                       + [f"u{i+1}" for i in range(self.n_inputs)]
                       + [f"y{i+1}" for i in range(self.n_outputs)])
            for k in range(self.n_samples):
                w.writerow([k] + [_FMT % v for v in self.u[k]] + [_FMT % v for v in self.y[k]])

    @classmethod
    def from_csv(cls, path) -> "IOData":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "k":
            raise ValidationError(f"{path}: expected header starting with 'k'")
        nu = sum(1 for h in rows[0] if h.startswith("u"))
        ny = sum(1 for h in rows[0] if h.startswith("y"))
        if 1 + nu + ny != len(rows[0]):
            raise ValidationError(f"{path}: malformed header {rows[0]}")
        data = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(data[:, :nu], data[:, nu:nu + ny])


def dare_fixed_point(A, C, Q, R, F=None, tol=1e-12, max_iter=100000):
    """Steady state filter Riccati equation by fixed point iteration.

    Iterates P <- A P A^T - A P C^T (C P C^T + R)^-1 C P A^T + F Q F^T
    from P0 = F Q F^T + I until the relative update drops below ``tol``.
    The identity offset in P0 avoids the spurious fixed point P = 0 that
    exists when unstable modes carry no process noise.

    Args:
        A, C: system and output matrices of the pair to filter.
        Q: process noise covariance (in the F channel).
        R: measurement noise covariance, positive definite.
        F: process noise input matrix, identity when omitted.

    Returns:
        Tuple (P, K, SigmaE) with the stabilizing solution P, the Kalman
        gain K = A P C^T (C P C^T + R)^-1 and SigmaE = C P C^T + R.

    Raises:
        RiccatiError: iteration diverged or hit ``max_iter`` without
            meeting the tolerance (typically a non detectable pair).
    """
    A = _as_matrix(A, name="A")
    n = A.shape[0]
    C = _as_matrix(C, cols=n, name="C")
    F = np.eye(n) if F is None else _as_matrix(F, rows=n, name="F")
    Q = _as_matrix(Q, rows=F.shape[1], cols=F.shape[1], name="Q")
    R = _as_matrix(R, rows=C.shape[0], cols=C.shape[0], name="R")
    _check_symmetric_psd(Q, "Q")
    w = np.linalg.eigvalsh(0.5 * (R + R.T))
    if w.size == 0 or w.min() <= 0:
        raise ValidationError("R must be positive definite")

    Qt = F @ Q @ F.T
    P = Qt + np.eye(n)
    for _ in range(int(max_iter)):
        S = C @ P @ C.T + R
        APC = A @ P @ C.T
        Pn = A @ P @ A.T - APC @ np.linalg.solve(S, APC.T) + Qt
        Pn = 0.5 * (Pn + Pn.T)
        norm = np.linalg.norm(Pn)
        if not np.isfinite(norm) or norm > 1e100:
            raise RiccatiError("Riccati divergence: iterates are unbounded")
        if np.linalg.norm(Pn - P) <= tol * max(1.0, norm):
            P = Pn
            break
        P = Pn
    else:
        raise RiccatiError(
            f"Riccati iteration did not reach tolerance {tol:g} in {int(max_iter)} steps")
    S = C @ P @ C.T + R
    K = np.linalg.solve(S.T, (A @ P @ C.T).T).T
    return P, K, S


def solve_dare(model: StateSpaceModel, tol=1e-12, max_iter=100000):
    """Riccati solution (P, K, SigmaE) for a plant's one step predictor.

    Thin wrapper around :func:`dare_fixed_point` that pulls the matrices
    out of the model.  Requires a detectable (A, C) pair and positive
    definite R; divergence raises RiccatiError.
    """
    return dare_fixed_point(model.A, model.C, model.Q, model.R, model.F,
                            tol=tol, max_iter=max_iter)


def to_predictor(model: StateSpaceModel, tol=1e-12, max_iter=100000) -> PredictorModel:
    """Kalman predictor form of a plant model.

    Solves the plant's filter Riccati equation and assembles Phi, Bt and
    the fault channel Et = E - K G.
    """
    P, K, SigmaE = solve_dare(model, tol=tol, max_iter=max_iter)
    return PredictorModel(
        Phi=model.A - K @ model.C,
        Bt=model.B - K @ model.D,
        K=K,
        C=model.C,
        D=model.D,
        Et=model.E - K @ model.G,
        G=model.G,
        SigmaE=SigmaE,
    )


def _sensor_list(sensors, n_y):
    """Normalize a sensor index or index collection to a sorted list."""
    if np.isscalar(sensors):
        sensors = [sensors]
    out = []
    for j in sensors:
        j = int(j)
        if not 0 <= j < n_y:
            raise ValidationError(f"sensor index {j} outside [0, {n_y})")
        out.append(j)
    if len(set(out)) != len(out):
        raise ValidationError(f"duplicate sensor indices in {out}")
    return sorted(out)


def sensor_fault_plant(model: StateSpaceModel, sensors) -> StateSpaceModel:
    """Copy of a plant with additive faults on the given sensors.

    Sensor faults act on the output only: E = 0 and G collects the
    corresponding identity columns.  Indices are zero based.
    """
    J = _sensor_list(sensors, model.n_outputs)
    return StateSpaceModel(
        A=model.A, B=model.B, C=model.C, D=model.D,
        E=np.zeros((model.n_states, len(J))),
        G=np.eye(model.n_outputs)[:, J],
        F=model.F, Q=model.Q, R=model.R,
    )


def sensor_fault_channel(pred: PredictorModel, sensors) -> PredictorModel:
    """Attach a sensor fault channel to a predictor without one.

    In predictor coordinates a fault on sensor j enters with G = I[:, j]
    and Et = -K[:, j], which is all the later inversion steps need.  This
    is how a predictor realized from identified Markov parameters gets
    its fault directions.
    """
    J = _sensor_list(sensors, pred.n_outputs)
    return PredictorModel(
        Phi=pred.Phi, Bt=pred.Bt, K=pred.K, C=pred.C, D=pred.D,
        Et=-pred.K[:, J],
        G=np.eye(pred.n_outputs)[:, J],
        SigmaE=pred.SigmaE,
    )


def simulate(model: StateSpaceModel, u, f=None, x0=None, seed=0) -> IOData:
    """Simulate the plant under known inputs and an optional fault series.

    Noise is drawn from a seeded generator through square root factors of
    Q and R, so identical arguments reproduce identical trajectories.

    Args:
        model: plant to simulate.
        u: input array of shape (N, n_u).
        f: optional fault array of shape (N, n_f); zeros when omitted.
        x0: initial state, zero when omitted.
        seed: PRNG seed for the process and measurement noise.

    Returns:
        IOData with the applied inputs and the measured outputs.
    """
    U = np.atleast_2d(np.asarray(u, dtype=float))
    if U.shape[1] != model.n_inputs:
        raise ValidationError(f"u must have {model.n_inputs} columns, got {U.shape[1]}")
    N = U.shape[0]
    nf = model.n_faults
    if f is None:
        Fser = np.zeros((N, nf))
    else:
        Fser = np.atleast_2d(np.asarray(f, dtype=float))
        if Fser.shape != (N, nf):
            raise ValidationError(f"f must have shape ({N}, {nf}), got {Fser.shape}")
    rng = np.random.default_rng(seed)
    Sq = psd_factor(model.Q)
    Sr = psd_factor(model.R)
    W = rng.standard_normal((N, Sq.shape[1])) @ Sq.T
    V = rng.standard_normal((N, Sr.shape[1])) @ Sr.T
    n = model.n_states
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    Y = np.empty((N, model.n_outputs))
    for k in range(N):
        Y[k] = model.C @ x + model.D @ U[k] + model.G @ Fser[k] + V[k]
        x = model.A @ x + model.B @ U[k] + model.E @ Fser[k] + model.F @ W[k]
    return IOData(U, Y)


def markov_from_ss(A, B, C, D, L: int) -> MarkovSequence:
    """Markov parameters D, CB, CAB, ..., CA^(L-2)B of a quadruple."""
    if L < 1:
        raise ValidationError("need at least one Markov block")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    blocks = np.empty((L, C.shape[0], B.shape[1]))
    blocks[0] = D
    cur = C.copy()
    for i in range(1, L):
        blocks[i] = cur @ B
        cur = cur @ A
    return MarkovSequence(blocks)


def markov_parameters(pred: PredictorModel, channel: str, L: int) -> MarkovSequence:
    """Predictor Markov parameters of one input channel.

    Channel 'u' gives D, C Phi^(i-1) Bt; channel 'y' gives 0, C Phi^(i-1) K;
    channel 'f' gives G, C Phi^(i-1) Et.
    """
    if channel == "u":
        return markov_from_ss(pred.Phi, pred.Bt, pred.C, pred.D, L)
    if channel == "y":
        return markov_from_ss(pred.Phi, pred.K, pred.C,
                              np.zeros((pred.n_outputs, pred.n_outputs)), L)
    if channel == "f":
        if pred.n_faults == 0:
            raise ValidationError("predictor has no fault channel")
        return markov_from_ss(pred.Phi, pred.Et, pred.C, pred.G, L)
    raise ValidationError(f"unknown channel {channel!r}, expected 'u', 'y' or 'f'")


def block_toeplitz(seq: MarkovSequence, L: int = None) -> np.ndarray:
    """Lower block triangular Toeplitz matrix of the first L blocks.

    Block (i, j) equals H_(i-j) for i >= j and zero above the diagonal.
    """
    L = len(seq) if L is None else L
    if L > len(seq):
        raise ValidationError(f"need {L} blocks, sequence has {len(seq)}")
    p, q = seq.block_shape
    T = np.zeros((L * p, L * q))
    for d in range(L):
        blk = seq[d]
        for i in range(d, L):
            T[i * p:(i + 1) * p, (i - d) * q:(i - d + 1) * q] = blk
    return T


def block_hankel(seq: MarkovSequence, l: int, m: int) -> np.ndarray:
    """Block Hankel matrix with block (i, j) = seq[i + j].

    The first supplied block lands in the top left corner; callers that
    realize a system from Markov parameters pass the sequence starting
    at the first block after the feedthrough.
    """
    if l < 1 or m < 1:
        raise ValidationError("Hankel block counts must be positive")
    if len(seq) < l + m - 1:
        raise ValidationError(
            f"need {l + m - 1} blocks for a {l} x {m} block Hankel matrix, have {len(seq)}")
    p, q = seq.block_shape
    H = np.empty((l * p, m * q))
    for i in range(l):
        for j in range(m):
            H[i * p:(i + 1) * p, j * q:(j + 1) * q] = seq[i + j]
    return H


def extended_observability(A, C, L: int) -> np.ndarray:
    """Stacked maps C, CA, ..., CA^(L-1)."""
    if L < 1:
        raise ValidationError("need at least one block row")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    ny, n = C.shape
    O = np.empty((L * ny, n))
    cur = C.copy()
    for i in range(L):
        O[i * ny:(i + 1) * ny] = cur
        cur = cur @ A
    return O
