import numpy as np
import pytest

from transfer_da.dynamics import L63Params, ObservationModel, Trajectory, integrate_l63, make_training_set
from transfer_da.dato import dato_fit
from transfer_da.kernels import sinkhorn_normalize, vb_bandwidths, vb_sparse_kernel
from transfer_da.qmda import (
    QmdaModel,
    build_koopman,
    build_partition,
    build_projectors,
    qmda_evolve,
    qmda_fit,
    qmda_init_state,
    qmda_probabilities,
    qmda_update,
)
from transfer_da.spectral import sparse_leading_eig

DT = 0.025


def l63_states(steps, dt=DT, x0=(1.0, 1.0, 1.0), spinup=2000):
    p = L63Params()
    start = integrate_l63(p, x0, dt, spinup).states[-1]
    return integrate_l63(p, start, dt, steps).states


def full_basis(N, seed=0):
    Y = l63_states(N - 1, dt=0.01, x0=(1.0 + seed, 1.0, 1.0))
    K = sinkhorn_normalize(vb_sparse_kernel(Y, vb_bandwidths(Y, 8), N - 1))
    return Y, sparse_leading_eig(K, N).vectors


def toy_model(basis, h, S, q):
    part = build_partition(h, S)
    return QmdaModel(basis, np.ones(basis.shape[1]), build_koopman(basis, q), build_projectors(basis, part), part, q)


def full_basis_cycle_gap(N=40, S=5, q=2, cycles=3, seed=0):
    """Max probability gap between the eigenbasis cycle and the sample-space cycle."""
    Y, Phi = full_basis(N, seed)
    model = toy_model(Phi, Y[:, 0], S, q)
    W = Phi / np.sqrt(N)
    shift = np.zeros((N, N))
    shift[np.arange(N - q), np.arange(q, N)] = 1.0
    D = [np.diag((model.partition.membership == i).astype(float)) for i in range(S)]
    rho = qmda_init_state(N)
    R = np.eye(N) / N
    gap = 0.0
    bins = np.random.default_rng(seed).integers(S, size=cycles)
    for b in bins:
        rho = qmda_evolve(model, rho)
        R = shift.T @ R @ shift
        R /= np.trace(R)
        P = qmda_probabilities(model, rho)
        P_s = np.array([np.trace(Di @ R) for Di in D])
        gap = max(gap, float(np.max(np.abs(P - P_s))))
        if P_s[b] <= 1e-12:
            b = int(np.argmax(P_s))
        rho = qmda_update(model, rho, int(b))
        R = D[b] @ R @ D[b]
        R /= np.trace(R)
        gap = max(gap, float(np.max(np.abs(W @ rho.rho @ W.T - R))))
    return gap


@pytest.fixture(scope="session")
def l63_pairs_200():
    traj = Trajectory(l63_states(200), DT)
    return make_training_set(traj, 0.0)


@pytest.fixture(scope="session")
def obs_yz():
    return ObservationModel.isotropic((1, 2), 0.5, noise_seed=1)


@pytest.fixture(scope="session")
def dato_small(l63_pairs_200, obs_yz):
    X, Y = l63_pairs_200
    return dato_fit(X, Y, 2.0, 1e-5, 120, 6, obs_yz)


@pytest.fixture(scope="session")
def qmda_small():
    states = l63_states(1199, dt=0.01)
    return qmda_fit(states, states[:, 0], L=30, r=120, S_qmda=8, q=5)
