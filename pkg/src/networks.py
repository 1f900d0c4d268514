"""
Unrolled sparse coding networks: LISTA, LFISTA and FacNet.

Signals are batched one per row (X is N x n, codes are N x m). Gradients are
derived by hand for these three architectures; the soft-threshold Jacobian is
diag(1{|u_i| > theta_i}) and its derivative in theta is -sign(u_i) 1{|u_i| > theta_i}.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

try:
    from .exceptions import InvalidArgumentError, DimensionMismatchError
    from .factorization import factorized_kernel
    from .lasso_core import soft_threshold, spectral_norm
    from .models import Dictionary, NetworkParams, ListaLayer, LfistaLayer, FacnetLayer
    from .solvers import fista_momentum_weights
except ImportError:
    from exceptions import InvalidArgumentError, DimensionMismatchError
    from factorization import factorized_kernel
    from lasso_core import soft_threshold, spectral_norm
    from models import Dictionary, NetworkParams, ListaLayer, LfistaLayer, FacnetLayer
    from solvers import fista_momentum_weights


logger = logging.getLogger(__name__)

Gradients = List[Dict[str, np.ndarray]]


@dataclass
class ForwardPass:
    """Network output with every intermediate needed for backprop."""
    codes: List[np.ndarray]
    pre_activations: List[np.ndarray]
    rotated: List[np.ndarray]
    gradients: List[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.codes[-1]


def init_network(kind: str, dictionary: Dictionary, lam: float, K: int, mu: float = 1.0) -> NetworkParams:
    """
    Parameters under which the network reproduces K classic iterations:
    ISTA for LISTA and FacNet (A = I, S = L 1), FISTA for LFISTA.
    """
    if K < 0:
        raise InvalidArgumentError(f"depth must be non-negative, got {K}")
    D = dictionary.entries
    B = D.T @ D
    B = 0.5 * (B + B.T)
    L = spectral_norm(B)
    m = dictionary.m
    W_g = np.eye(m) - B / L
    W_e = D.T / L
    theta = np.full(m, lam / L)

    if kind == "lista":
        layers = [ListaLayer(W_g=W_g.copy(), W_e=W_e.copy(), theta=theta.copy()) for _ in range(K)]
    elif kind == "lfista":
        layers = [
            LfistaLayer(W_g=(1.0 + w) * W_g, W_m=-w * W_g, W_e=W_e.copy(), theta=theta.copy())
            for w in fista_momentum_weights(K)
        ]
    elif kind == "facnet":
        layers = [FacnetLayer(A=np.eye(m), s=np.full(m, np.log(L))) for _ in range(K)]
    else:
        raise InvalidArgumentError(f"unknown network kind: {kind}")
    return NetworkParams(kind=kind, layers=layers, lam=float(lam), mu=mu if kind == "facnet" else 0.0)


def extend_network(params: NetworkParams, dictionary: Dictionary) -> NetworkParams:
    """Append one classically initialized layer (greedy layer-wise training)."""
    fresh = init_network(params.kind, dictionary, params.lam, params.depth + 1, params.mu)
    extended = params.copy()
    extended.layers.append(fresh.layers[-1])
    return extended


def _gram(D: np.ndarray, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    B = D.T @ D
    return 0.5 * (B + B.T), X @ D


def _as_batch(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(1, -1) if X.ndim == 1 else X


def lista_forward(params: NetworkParams, X: np.ndarray, m: Optional[int] = None) -> ForwardPass:
    """z_{k+1} = h_theta(W_g z_k + W_e x), z_0 = 0; m sizes the output of a depth-0 net."""
    X = _as_batch(X)
    m = params.layers[0].W_g.shape[0] if params.layers else (m or 0)
    z = np.zeros((X.shape[0], m))
    codes, pre = [z], []
    for layer in params.layers:
        u = z @ layer.W_g.T + X @ layer.W_e.T
        z = soft_threshold(u, layer.theta)
        pre.append(u)
        codes.append(z)
    return ForwardPass(codes=codes, pre_activations=pre, rotated=[], gradients=[])


def lfista_forward(params: NetworkParams, X: np.ndarray, m: Optional[int] = None) -> ForwardPass:
    """z_{k+1} = h_theta(W_g z_k + W_m z_{k-1} + W_e x), z_0 = z_{-1} = 0."""
    X = _as_batch(X)
    m = params.layers[0].W_g.shape[0] if params.layers else (m or 0)
    z = np.zeros((X.shape[0], m))
    z_prev = z
    codes, pre = [z], []
    for layer in params.layers:
        u = z @ layer.W_g.T + z_prev @ layer.W_m.T + X @ layer.W_e.T
        z_prev, z = z, soft_threshold(u, layer.theta)
        pre.append(u)
        codes.append(z)
    return ForwardPass(codes=codes, pre_activations=pre, rotated=[], gradients=[])


def facnet_forward(params: NetworkParams, X: np.ndarray, D: np.ndarray) -> ForwardPass:
    """z_{k+1} = A^T h_{lam/S}(A z_k - S^{-1} A (B z_k - D^T x)), z_0 = 0."""
    X = _as_batch(X)
    B, dtx = _gram(D, X)
    z = np.zeros((X.shape[0], D.shape[1]))
    codes, pre, rotated, grads = [z], [], [], []
    for layer in params.layers:
        z, u, w, grad = factorized_kernel(z, B, dtx, layer.A, layer.S, params.lam)
        pre.append(u)
        rotated.append(w)
        grads.append(grad)
        codes.append(z)
    return ForwardPass(codes=codes, pre_activations=pre, rotated=rotated, gradients=grads)


def forward(params: NetworkParams, X: np.ndarray, D: np.ndarray) -> ForwardPass:
    if params.kind == "lista":
        return lista_forward(params, X, D.shape[1])
    if params.kind == "lfista":
        return lfista_forward(params, X, D.shape[1])
    return facnet_forward(params, X, D)


def unitarity_penalty(params: NetworkParams) -> float:
    """(mu / K) sum_k ||I - A_k^T A_k||_F^2 for FacNet, 0 otherwise."""
    if params.kind != "facnet" or params.depth == 0 or params.mu == 0:
        return 0.0
    m = params.layers[0].A.shape[0]
    total = sum(float(np.sum((np.eye(m) - layer.A.T @ layer.A) ** 2)) for layer in params.layers)
    return params.mu * total / params.depth


def batch_costs(Z: np.ndarray, X: np.ndarray, D: np.ndarray, lam: float) -> np.ndarray:
    """Per-row lasso cost."""
    residual = X - Z @ D.T
    return 0.5 * np.sum(residual * residual, axis=1) + lam * np.sum(np.abs(Z), axis=1)


def loss(params: NetworkParams, X: np.ndarray, D: np.ndarray, include_penalty: bool = True) -> float:
    """Mean lasso cost of the network outputs, plus the FacNet unitarity penalty."""
    X = _as_batch(X)
    if X.shape[1] != D.shape[0]:
        raise DimensionMismatchError(f"signals of length {X.shape[1]} for a dictionary with n={D.shape[0]}")
    out = forward(params, X, D).output
    value = float(np.mean(batch_costs(out, X, D, params.lam)))
    if include_penalty:
        value += unitarity_penalty(params)
    return value


def _threshold_backward(g_out: np.ndarray, u: np.ndarray, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    active = np.abs(u) > theta
    g_u = np.where(active, g_out, 0.0)
    g_theta = -np.sum(np.sign(u) * g_u, axis=0)
    return g_u, g_theta


def backward(params: NetworkParams, X: np.ndarray, D: np.ndarray,
             upstream: Optional[np.ndarray] = None) -> Tuple[float, Gradients]:
    """
    Exact reverse-mode gradients of `loss`.

    Args:
        upstream: gradient w.r.t. the network output to propagate instead of the
            loss gradient; the unitarity penalty is only added when it is None

    Returns:
        (loss value, one dict of gradients per layer keyed like the layer fields)
    """
    X = _as_batch(X)
    fp = forward(params, X, D)
    N = X.shape[0]
    out = fp.output
    value = float(np.mean(batch_costs(out, X, D, params.lam)))
    B, dtx = _gram(D, X)

    if upstream is None:
        g_z = (out @ B - dtx + params.lam * np.sign(out)) / N
    else:
        g_z = np.asarray(upstream, dtype=np.float64).reshape(out.shape)

    K = params.depth
    grads: Gradients = [None] * K

    if params.kind == "lista":
        for k in reversed(range(K)):
            layer = params.layers[k]
            g_u, g_theta = _threshold_backward(g_z, fp.pre_activations[k], layer.theta)
            grads[k] = {"W_g": g_u.T @ fp.codes[k], "W_e": g_u.T @ X, "theta": g_theta}
            g_z = g_u @ layer.W_g

    elif params.kind == "lfista":
        g_codes = [np.zeros_like(c) for c in fp.codes]
        g_codes[K] = g_z
        for k in reversed(range(K)):
            layer = params.layers[k]
            z_prev = fp.codes[k - 1] if k > 0 else np.zeros_like(fp.codes[0])
            g_u, g_theta = _threshold_backward(g_codes[k + 1], fp.pre_activations[k], layer.theta)
            grads[k] = {"W_g": g_u.T @ fp.codes[k], "W_m": g_u.T @ z_prev, "W_e": g_u.T @ X, "theta": g_theta}
            g_codes[k] += g_u @ layer.W_g
            if k > 0:
                g_codes[k - 1] += g_u @ layer.W_m

    else:
        for k in reversed(range(K)):
            layer = params.layers[k]
            A, S = layer.A, layer.S
            theta = params.lam / S
            u, w, grad = fp.pre_activations[k], fp.rotated[k], fp.gradients[k]
            z = fp.codes[k]
            # z_next = w A
            g_A = w.T @ g_z
            g_w = g_z @ A.T
            g_u, g_theta = _threshold_backward(g_w, u, theta)
            # theta = lam exp(-s)
            g_s = -theta * g_theta
            # u = z A^T - q / S with q = grad A^T
            q = grad @ A.T
            g_s = g_s + np.sum(g_u * q, axis=0) / S
            g_q = -g_u / S
            g_A = g_A + g_u.T @ z + g_q.T @ grad
            g_grad = g_q @ A
            g_z = g_u @ A + g_grad @ B
            grads[k] = {"A": g_A, "s": g_s}

        if upstream is None and params.mu != 0 and K > 0:
            m = D.shape[1]
            for k, layer in enumerate(params.layers):
                A = layer.A
                grads[k]["A"] = grads[k]["A"] + (4.0 * params.mu / K) * A @ (A.T @ A - np.eye(m))

    if upstream is None:
        value += unitarity_penalty(params)
    return value, grads
