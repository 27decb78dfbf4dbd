"""Pure-numpy propagation kernels (interface-compatible with ``_kernels``)."""
import numpy as np

# Bounds peak memory of the batched eigendecomposition on long grids.
CHUNK = 4096


def hermitian_expm_raw(h, dt):
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * dt)) @ v.conj().T


def _step_exponentials(hams, dt):
    w, v = np.linalg.eigh(hams)
    return (v * np.exp(-1j * w * dt)[:, None, :]) @ v.conj().transpose(0, 2, 1)


def _ordered_product(mats):
    # Pairwise reduction keeps time order: later steps multiply from the left.
    while mats.shape[0] > 1:
        if mats.shape[0] % 2:
            mats = np.concatenate([mats, np.eye(4, dtype=complex)[None]], axis=0)
        mats = mats[1::2] @ mats[0::2]
    return mats[0]


def propagate_steps(hams, dt):
    hams = np.asarray(hams, dtype=np.complex128)
    if hams.ndim != 3 or hams.shape[1:] != (4, 4):
        raise ValueError("expected an (n, 4, 4) stack")
    u = np.eye(4, dtype=np.complex128)
    for start in range(0, hams.shape[0], CHUNK):
        block = _step_exponentials(hams[start:start + CHUNK], dt)
        u = _ordered_product(block) @ u
    return u
