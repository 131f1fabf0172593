import numpy as np
import pytest

from cfisac.precoding import (DegenerateNullspaceError, join_per_ap, orthonormal_basis,
                              precoder_set, rzf_precoders, split_per_ap, zf_sensing_precoder)


def cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_rzf_rows_have_unit_norm():
    rng = np.random.default_rng(0)
    W = rzf_precoders(cplx(rng, 3, 8), 0.1)
    assert np.allclose(np.linalg.norm(W, axis=1), 1)


def test_rzf_matches_direct_inverse():
    rng = np.random.default_rng(1)
    Hhat = cplx(rng, 3, 6)
    H = Hhat.T
    direct = np.linalg.solve(H @ H.conj().T + 0.5 * np.eye(6), H)
    direct /= np.linalg.norm(direct, axis=0)
    assert np.allclose(rzf_precoders(Hhat, 0.5), direct.T)


def test_rzf_small_regularisation_nulls_other_users():
    rng = np.random.default_rng(2)
    Hhat = cplx(rng, 3, 8)
    W = rzf_precoders(Hhat, 1e-10)
    G = Hhat.conj() @ W.T
    off = G - np.diag(np.diag(G))
    assert np.abs(off).max() < 1e-8


def test_rzf_large_regularisation_is_matched_filter():
    rng = np.random.default_rng(3)
    Hhat = cplx(rng, 2, 5)
    W = rzf_precoders(Hhat, 1e9)
    mrt = Hhat / np.linalg.norm(Hhat, axis=1, keepdims=True)
    assert np.allclose(W, mrt, atol=1e-7)


def test_rzf_rejects_nonpositive_regularisation():
    with pytest.raises(ValueError):
        rzf_precoders(np.ones((1, 2)), 0.0)


def test_sensing_precoder_is_orthogonal_to_estimates():
    rng = np.random.default_rng(4)
    for _ in range(20):
        Hhat = cplx(rng, 3, 8)
        w0 = zf_sensing_precoder(Hhat, cplx(rng, 8))
        assert np.linalg.norm(w0) == pytest.approx(1)
        assert np.abs(Hhat.conj() @ w0).max() <= 1e-10 * np.linalg.norm(Hhat, axis=1).max()


def test_sensing_precoder_maximises_projection():
    rng = np.random.default_rng(5)
    Hhat = cplx(rng, 2, 6)
    h0 = cplx(rng, 6)
    w0 = zf_sensing_precoder(Hhat, h0)
    U = orthonormal_basis(Hhat)
    v = h0 - U @ (U.conj().T @ h0)
    assert abs(np.vdot(h0, w0)) == pytest.approx(np.linalg.norm(v))


def test_sensing_precoder_degenerate_span():
    rng = np.random.default_rng(6)
    Hhat = cplx(rng, 2, 4)
    with pytest.raises(DegenerateNullspaceError):
        zf_sensing_precoder(Hhat, 0.3 * Hhat[0] - 2j * Hhat[1])
    with pytest.raises(DegenerateNullspaceError):
        zf_sensing_precoder(cplx(rng, 4, 4), cplx(rng, 4))


def test_orthonormal_basis_rank():
    rng = np.random.default_rng(7)
    a = cplx(rng, 5)
    U = orthonormal_basis(np.vstack([a, 2 * a, cplx(rng, 5)]))
    assert U.shape == (5, 2)
    assert np.allclose(U.conj().T @ U, np.eye(2))
    assert orthonormal_basis(np.zeros((2, 3))).shape == (3, 0)


def test_sensing_precoder_without_users():
    h0 = np.array([3.0, 4.0j])
    assert np.allclose(zf_sensing_precoder(np.zeros((1, 2)), h0), h0 / 5)


def test_per_ap_split_round_trip():
    rng = np.random.default_rng(8)
    w = cplx(rng, 3, 12)
    blocks = split_per_ap(w, 4)
    assert blocks.shape == (3, 4, 3)
    assert np.array_equal(blocks[1, :, 2], w[2, 4:8])
    assert np.array_equal(join_per_ap(blocks), w)
    with pytest.raises(ValueError):
        split_per_ap(w, 5)


def test_precoder_set_layout():
    rng = np.random.default_rng(9)
    Hhat = cplx(rng, 2, 8)
    P = precoder_set(Hhat, cplx(rng, 8), 0.1, 2)
    assert P.w.shape == (3, 8)
    assert np.abs(Hhat.conj() @ P.w[0]).max() < 1e-10
    assert P.per_ap_blocks.shape == (4, 2, 3)
