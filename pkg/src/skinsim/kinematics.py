"""Skinning kinematics in handle coordinates.

A configuration is a flat vector z of length 12*m: handle j owns rows
z[12j : 12j+12], the row-major 3x4 transform Z_j = [A_j | t_j]. The
deformation map, its spatial gradient F, and the linear handle-space
Jacobian J (vec(F) = vec(I) + J z, row-major vec) are all evaluated from an
LBS weight network via one forward pass plus reverse-mode input gradients.
"""

import numpy as np

from ._validation import check_handle_vector, check_points
from .errors import InputError
from .neural import _forward_cached, forward, gradient

_EYE34 = np.zeros((3, 4))
_EYE34[:, :3] = np.eye(3)


def _check_lbs_model(model):
    if model.input_dim != 3:
        raise InputError("LBS model must take raw 3-vector inputs")
    return model.output_dim


def _handles(z, m):
    return z.reshape(m, 3, 4)


def _homogeneous(X):
    return np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)


def lbs_weights(model, X):
    """Skinning weights, shape (n, m)."""
    _check_lbs_model(model)
    return forward(model, check_points(X))


def lbs_weight_gradients(model, X):
    """Spatial weight gradients grad_X w_j, shape (n, m, 3).

    One reverse-mode pass per handle over the whole batch, sharing a single
    forward tape.
    """
    m = _check_lbs_model(model)
    X = check_points(X)
    n = X.shape[0]
    _, cache = _forward_cached(model, X)
    grads = np.empty((n, m, 3))
    upstream = np.zeros((n, m))
    for j in range(m):
        upstream[:, j] = 1.0
        _, din = gradient(model, X, upstream, _cache=cache)
        grads[:, j, :] = din
        upstream[:, j] = 0.0
    return grads


def deform(model, X, z):
    """x = X + sum_j w_j(X) Z_j [X; 1]."""
    m = _check_lbs_model(model)
    X = check_points(X)
    z = check_handle_vector(z, m)
    w = forward(model, X)
    Z = _handles(z, m)
    h = _homogeneous(X)
    Zh = np.einsum("jab,nb->nja", Z, h)
    return X + np.einsum("nj,nja->na", w, Zh)


def deformation_gradient(model, X, z):
    """F = I + sum_j [w_j A_j + (Z_j [X; 1]) grad w_j^T], shape (n, 3, 3)."""
    m = _check_lbs_model(model)
    X = check_points(X)
    z = check_handle_vector(z, m)
    w = forward(model, X)
    g = lbs_weight_gradients(model, X)
    Z = _handles(z, m)
    h = _homogeneous(X)
    Zh = np.einsum("jab,nb->nja", Z, h)
    F = np.broadcast_to(np.eye(3), (X.shape[0], 3, 3)).copy()
    F += np.einsum("nj,jab->nab", w, Z[:, :, :3])
    F += np.einsum("nja,njb->nab", Zh, g)
    return F


def exact_jacobian(model, X):
    """Closed-form handle-space Jacobian, shape (n, 9, 12m).

    Row index 3a+b addresses F_ab; column index 12j+4p+q addresses
    Z_j[p, q]. The entry is nonzero only for p == a:
    dF_ab/dZ_j[a, q] = w_j [q == b, q < 3] + (grad w_j)_b h_q with
    h = (X_0, X_1, X_2, 1).
    """
    m = _check_lbs_model(model)
    X = check_points(X)
    n = X.shape[0]
    w = forward(model, X)
    g = lbs_weight_gradients(model, X)
    h = _homogeneous(X)
    # block[n, b, j, q] applies at rows 3a+b, columns 12j+4a+q for every a
    block = np.einsum("njb,nq->nbjq", g, h)
    block += w[:, None, :, None] * _EYE34[None, :, None, :]
    J = np.zeros((n, 3, 3, m, 3, 4))
    for a in range(3):
        J[:, a, :, :, a, :] = block
    return J.reshape(n, 9, 12 * m)


def neural_jacobian(model, X):
    """Predicted handle-space Jacobian from a Jacobian network, (n, 9, 12m)."""
    m = model.n_handles
    if m < 1:
        raise InputError("Jacobian model has no handle-count annotation")
    if model.output_dim != 9 * 12 * m:
        raise InputError(
            f"Jacobian model output width {model.output_dim} does not match "
            f"9*12*{m} = {9 * 12 * m}"
        )
    X = check_points(X)
    return forward(model, X).reshape(X.shape[0], 9, 12 * m)
