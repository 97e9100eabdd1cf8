"""Shared generators for randomized tests.

Everything is seeded through numpy Generators passed in by the tests,
so failures reproduce from the printed seed.
"""
import numpy as np
import pytest

from faultfilter import (
    PredictorModel,
    StateSpaceModel,
    spectral_radius,
)


def random_stable(rng, n, rho=0.8):
    """Random n x n matrix scaled to spectral radius rho."""
    A = rng.standard_normal((n, n))
    r = spectral_radius(A)
    return A * (rho / max(r, 1e-12))


def random_model(rng, n=4, n_u=2, n_y=2, rho=0.8, q=1e-3, r=1e-2,
                 unstable=False):
    """Random plant with full-rank C and noise intensities q, r.

    With ``unstable`` one eigenvalue is pushed outside the unit circle
    while (A, C) stays observable with probability one.
    """
    A = random_stable(rng, n, rho)
    if unstable:
        w, V = np.linalg.eig(A)
        w = np.where(np.abs(w) == np.abs(w).max(), 1.1 * w / np.abs(w), w)
        A = np.real(V @ np.diag(w) @ np.linalg.inv(V))
    B = rng.standard_normal((n, n_u))
    C = rng.standard_normal((n_y, n))
    return StateSpaceModel(A, B, C, Q=q * np.eye(n), R=r * np.eye(n_y))


def random_predictor(rng, n=4, n_u=2, n_y=2, sensors=(0,), rho=0.75,
                     k_scale=0.3, with_d=False):
    """Random sensor-fault predictor with a stable Phi.

    Builds the predictor directly (Phi stable by scaling, K random) so
    tests control the fault channel without running a Riccati solve.
    """
    J = list(sensors)
    Phi = random_stable(rng, n, rho)
    K = k_scale * rng.standard_normal((n, n_y))
    C = rng.standard_normal((n_y, n))
    D = rng.standard_normal((n_y, n_u)) if with_d else np.zeros((n_y, n_u))
    Bt = rng.standard_normal((n, n_u))
    G = np.eye(n_y)[:, J]
    return PredictorModel(Phi=Phi, Bt=Bt, K=K, C=C, D=D,
                          Et=-K[:, J], G=G)


def stable_invertible_predictor(rng, n=4, n_u=2, n_y=2, sensors=(0,),
                                max_tries=200):
    """Random predictor whose open-loop inverse is already stable.

    Rejection-samples until rho(Phi1) < 0.98, which also guarantees a
    stabilizing gain exists and keeps matched-init inversion tests well
    conditioned.
    """
    from faultfilter import open_loop_inverse
    for _ in range(max_tries):
        pred = random_predictor(rng, n, n_u, n_y, sensors, rho=0.6,
                                k_scale=0.15)
        if spectral_radius(open_loop_inverse(pred).Phi1) < 0.98:
            return pred
    raise AssertionError("no stably invertible predictor found")


def planted_zero_predictor(rng, lam, n=4, n_u=2, n_y=2):
    """Sensor-fault predictor whose fault subsystem has a zero at lam.

    Construction for the single-fault channel J = [0]: make e_1 an
    eigenvector of Phi1 at lam and blind the healthy outputs to it
    (C[1:, 0] = 0), so (Phi1, C2) has an unobservable mode at lam,
    which is an invariant zero of the fault subsystem.  Phi is
    recovered from Phi = Phi1 + Etilde Gminus C and kept stable by
    rescaling the remaining dynamics.
    """
    J = [0]
    for _ in range(200):
        Phi1 = random_stable(rng, n, 0.6)
        Phi1[:, 0] = 0.0
        Phi1[0, 0] = lam
        C = rng.standard_normal((n_y, n))
        C[1:, 0] = 0.0
        K = 0.3 * rng.standard_normal((n, n_y))
        Et = -K[:, J]
        G = np.eye(n_y)[:, J]
        Gm = np.linalg.pinv(G)
        Phi = Phi1 + Et @ Gm @ C
        if spectral_radius(Phi) < 1.0:
            Bt = rng.standard_normal((n, n_u))
            return PredictorModel(Phi=Phi, Bt=Bt, K=K, C=C,
                                  D=np.zeros((n_y, n_u)), Et=Et, G=G)
    raise AssertionError(f"no stable predictor with planted zero {lam}")


def pencil_zeros(Phi, Et, C, G):
    """Invariant zeros of the fault subsystem, independent oracle.

    Square channel (n_y == n_f): finite generalized eigenvalues of the
    Rosenbrock pencil ([[Phi, Et], [C, G]], blockdiag(I, 0)).  Tall
    channel: rank sweep of the same pencil over the candidate set
    eig(Phi - Et pinv(G) C); a value is a zero when the pencil loses
    column rank there.  Neither branch shares code with the library's
    PBH test.
    """
    import scipy.linalg as sla
    n = Phi.shape[0]
    ny, nf = G.shape
    if ny == nf:
        M = np.block([[Phi, Et], [C, G]])
        N = np.zeros_like(M)
        N[:n, :n] = np.eye(n)
        a, b = sla.eig(M, N, right=False, homogeneous_eigvals=True)
        finite = np.abs(b) > 1e-9 * max(np.abs(b).max(), 1e-300)
        return np.sort_complex(a[finite] / b[finite])
    cands = np.linalg.eigvals(Phi - Et @ np.linalg.pinv(G) @ C)
    zeros = []
    for lam in cands:
        P = np.block([[Phi - lam * np.eye(n), Et], [C, G]])
        if np.linalg.matrix_rank(P, tol=1e-8 * max(1.0, np.abs(lam))) < n + nf:
            zeros.append(lam)
    return np.sort_complex(np.array(zeros))


def assert_same_zeros(got, want, tol=1e-6):
    """Multiset comparison of complex zero lists (sort order of
    conjugate pairs is roundoff dependent)."""
    got = list(np.asarray(got, dtype=complex))
    want = list(np.asarray(want, dtype=complex))
    assert len(got) == len(want), f"{len(got)} zeros vs {len(want)}"
    for z in got:
        dists = [abs(z - w) for w in want]
        j = int(np.argmin(dists))
        assert dists[j] < tol, f"zero {z} unmatched (closest {want[j]})"
        want.pop(j)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
