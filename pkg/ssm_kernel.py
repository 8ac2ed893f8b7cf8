"""
ShadowMamba Desk v1.0 · Selective Scan Kernel
Input-dependent state-space recurrence over 1D sequences:

    delta_t = softplus(W_dt · dt_low_t + dt_bias)
    h_t     = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t,   h_{-1} = 0
    y_t     = <C_t, h_t> + D * u_t

plus the four-direction run-and-merge used by the mixers.
"""

import logging
import math

import numpy as np

from config import SSM_CONFIG
from errors import ConfigError, ShapeError, UsageError
from layers import Module, uniform
from tensor_core import (
    _track, parameter, matmul, add, scale, exp, softplus, reshape, gather, sum as tsum,
)
import scan_orders


# ===================================================================
# PARAMETERS
# ===================================================================

class SSMParams(Module):
    """
    Shared parameters of one selective scan (all four directions).

    x_proj : (dt_rank + 2N, D)  token -> [dt_low; B; C]
    dt_proj: (D, dt_rank)       dt_low -> per-channel delta (pre-softplus)
    dt_bias: (D,)
    A_log  : (D, N)             A = -exp(A_log) < 0
    D      : (D,)               skip
    """

    def __init__(self, d_inner, rng, state_dim=SSM_CONFIG["state_dim"], dt_rank=0, dtype=np.float64):
        if not 1 <= state_dim <= SSM_CONFIG["max_state_dim"]:
            raise ConfigError(f"state_dim {state_dim} outside 1..{SSM_CONFIG['max_state_dim']}")
        dt_rank = dt_rank or math.ceil(d_inner / 16)
        self.d_inner = d_inner
        self.state_dim = state_dim
        self.dt_rank = dt_rank

        self.x_proj = parameter(uniform(rng, (dt_rank + 2 * state_dim, d_inner), d_inner ** -0.5, dtype))
        self.dt_proj = parameter(uniform(rng, (d_inner, dt_rank), dt_rank ** -0.5, dtype))

        # initial delta log-uniform in [dt_min, dt_max]; bias = softplus^-1(delta)
        lo, hi = math.log(SSM_CONFIG["dt_min"]), math.log(SSM_CONFIG["dt_max"])
        dt = np.exp(rng.uniform(lo, hi, size=d_inner))
        self.dt_bias = parameter((dt + np.log(-np.expm1(-dt))).astype(dtype))

        self.A_log = parameter(np.tile(np.log(np.arange(1, state_dim + 1, dtype=np.float64)), (d_inner, 1)).astype(dtype))
        self.D = parameter(np.ones(d_inner, dtype=dtype))

    def A(self):
        return scale(exp(self.A_log), -1.0)


def init_ssm_params(d_inner, state_dim, dt_rank, rng, dtype=np.float64):
    return SSMParams(d_inner, rng, state_dim=state_dim, dt_rank=dt_rank, dtype=dtype)


# ===================================================================
# SCAN CORE (one tape op, adjoint backward)
# ===================================================================

def _chunk_terms(u, delta, A, B, s, e):
    """exp(delta*A) and delta*B*u for tokens s..e-1, shape (D, K, c, N)."""
    d = delta[:, :, s:e, None]
    dA = np.exp(d * A[:, None, None, :])
    Bt = B[:, :, s:e].transpose(1, 2, 0)[None]
    dBu = d * Bt * u[:, :, s:e, None]
    return dA, dBu


def _forward(u, delta, A, B, C, Dskip, chunk, keep_states=False):
    """Returns y (D, K, L), chunk-start states and optionally all states (D, K, L, N)."""
    Dn, K, L = u.shape
    N = A.shape[1]
    h = np.zeros((Dn, K, N), dtype=u.dtype)
    y = np.empty_like(u)
    starts = []
    states = np.empty((Dn, K, L, N), dtype=u.dtype) if keep_states else None

    for s in range(0, L, chunk):
        e = min(s + chunk, L)
        starts.append(h.copy())
        dA, dBu = _chunk_terms(u, delta, A, B, s, e)
        Ct = C[:, :, s:e].transpose(1, 2, 0)          # K, c, N
        for j in range(e - s):
            h = dA[:, :, j] * h + dBu[:, :, j]
            y[:, :, s + j] = (h * Ct[None, :, j]).sum(axis=-1)
            if keep_states:
                states[:, :, s + j] = h
    y += Dskip[:, None, None] * u
    return y, starts, states


def scan_core(u, delta, A, B, C, D, chunk_size=SSM_CONFIG["chunk_size"]):
    """
    Selective scan over a batch of K sequences.

    Args:
        u:     Tensor (D, K, L) inputs
        delta: Tensor (D, K, L) step sizes (> 0)
        A:     Tensor (D, N), negative
        B, C:  Tensor (N, K, L)
        D:     Tensor (D,)

    Returns:
        Tensor (D, K, L)
    """
    Dn, K, L = u.shape
    N = A.shape[1]
    if L < 1:
        raise UsageError("selective scan needs a non-empty sequence")
    if delta.shape != u.shape or A.shape != (Dn, N) or B.shape != (N, K, L) or C.shape != (N, K, L) \
            or D.shape != (Dn,):
        raise ShapeError(
            f"scan_core: u {u.shape}, delta {delta.shape}, A {A.shape}, B {B.shape}, C {C.shape}, D {D.shape}"
        )
    uu, dd, AA, BB, CC, DD = u.data, delta.data, A.data, B.data, C.data, D.data
    y, starts, _ = _forward(uu, dd, AA, BB, CC, DD, chunk_size)

    def bw(gy):
        gu = gy * DD[:, None, None]
        gdelta = np.zeros_like(dd)
        gA = np.zeros_like(AA)
        gB = np.zeros_like(BB)
        gC = np.zeros_like(CC)
        gD = (gy * uu).sum(axis=(1, 2))
        carry = np.zeros((Dn, K, N), dtype=uu.dtype)

        for ci in reversed(range(len(starts))):
            s = ci * chunk_size
            e = min(s + chunk_size, L)
            c = e - s
            dA, dBu = _chunk_terms(uu, dd, AA, BB, s, e)

            # recompute states of this chunk from its saved start
            H = np.empty((Dn, K, c, N), dtype=uu.dtype)
            Hprev = np.empty_like(H)
            h = starts[ci]
            for j in range(c):
                Hprev[:, :, j] = h
                h = dA[:, :, j] * h + dBu[:, :, j]
                H[:, :, j] = h

            Ct = CC[:, :, s:e].transpose(1, 2, 0)[None]   # 1, K, c, N
            Bt = BB[:, :, s:e].transpose(1, 2, 0)[None]
            g = gy[:, :, s:e, None]
            GH = np.empty_like(H)
            for j in reversed(range(c)):
                carry = carry + g[:, :, j] * Ct[:, :, j]
                GH[:, :, j] = carry
                carry = carry * dA[:, :, j]

            d = dd[:, :, s:e, None]
            uc = uu[:, :, s:e, None]
            g_dA = GH * Hprev * dA
            gdelta[:, :, s:e] = (g_dA * AA[:, None, None, :]).sum(axis=-1) + (GH * Bt * uc).sum(axis=-1)
            gA += (g_dA * d).sum(axis=(1, 2))
            gu[:, :, s:e] += (GH * d * Bt).sum(axis=-1)
            gB[:, :, s:e] = (GH * d * uc).sum(axis=0).transpose(2, 0, 1)
            gC[:, :, s:e] = (g * H).sum(axis=0).transpose(2, 0, 1)

        return gu, gdelta, gA, gB, gC, gD

    return _track("scan_core", (u, delta, A, B, C, D), y, bw)


# ===================================================================
# SELECTIVE SCAN
# ===================================================================

def ssm_inputs(u, p):
    """
    Token-dependent (delta, A, B, C) for inputs u of shape (D, K, L).
    """
    Dn, K, L = u.shape
    if Dn != p.d_inner:
        raise ShapeError(f"selective scan expects {p.d_inner} channels, got {Dn}")
    R, N = p.dt_rank, p.state_dim
    xdbl = matmul(p.x_proj, reshape(u, (Dn, K * L)))                # R+2N, KL
    dt_low = xdbl[:R]
    B = reshape(xdbl[R:R + N], (N, K, L))
    C = reshape(xdbl[R + N:], (N, K, L))
    delta = softplus(add(matmul(p.dt_proj, dt_low), reshape(p.dt_bias, (Dn, 1))))
    return reshape(delta, (Dn, K, L)), p.A(), B, C


def selective_scan_batch(u, p, chunk_size=SSM_CONFIG["chunk_size"]):
    """Scan K sequences at once with shared parameters: (D, K, L) -> (D, K, L)."""
    if u.shape[-1] < 1:
        raise UsageError("selective scan needs a non-empty sequence")
    delta, A, B, C = ssm_inputs(u, p)
    return scan_core(u, delta, A, B, C, p.D, chunk_size=chunk_size)


def selective_scan(x, p, chunk_size=SSM_CONFIG["chunk_size"]):
    """One sequence per channel: x (C, L) -> y (C, L)."""
    if x.ndim != 2:
        raise ShapeError(f"selective_scan expects (C, L), got {x.shape}")
    if x.shape[1] < 1:
        raise UsageError("selective scan needs a non-empty sequence")
    Cn, L = x.shape
    y = selective_scan_batch(reshape(x, (Cn, 1, L)), p, chunk_size)
    return reshape(y, (Cn, L))


def scan_states(x, p):
    """Hidden states h_t of selective_scan, shape (C, L, N). No gradient."""
    Cn, L = x.shape
    delta, A, B, C = ssm_inputs(reshape(x, (Cn, 1, L)), p)
    u = x.data.reshape(Cn, 1, L)
    _, _, states = _forward(u, delta.data, A.data, B.data, C.data, p.D.data, L, keep_states=True)
    return states[:, 0]


def state_bound(x, p):
    """
    Geometric-series bound on |h_t| for input x (C, L):
    max |delta*B*x| / (1 - max exp(delta*A)).
    """
    Cn, L = x.shape
    delta, A, B, _ = ssm_inputs(reshape(x, (Cn, 1, L)), p)
    d = delta.data[:, 0]                                  # C, L
    drive = np.abs(d[:, :, None] * B.data[:, 0].T[None] * x.data[:, :, None]).max()
    decay = np.exp(d.min() * A.data.max())
    return float(drive / (1.0 - decay))


# ===================================================================
# FOUR-DIRECTION SCAN
# ===================================================================

def directional_ssm(x, orders, p, chunk_size=SSM_CONFIG["chunk_size"]):
    """
    Run the shared selective scan along every order and sum the unscanned outputs.

    Args:
        x: Tensor (C, H, W)
        orders: ScanOrders over H x W sharing one strategy
        p: SSMParams

    Returns:
        Tensor (C, H, W)
    """
    if not orders:
        raise UsageError("directional_ssm needs at least one scan order")
    Cn = x.shape[0]
    shape = tuple(x.shape[1:])
    if any(o.shape != shape for o in orders):
        raise ShapeError(f"orders {[o.shape for o in orders]} do not match feature map {shape}")
    if len({o.strategy for o in orders}) != 1:
        raise UsageError(f"orders mix strategies {sorted({o.strategy for o in orders})}")

    K = len(orders)
    L = shape[0] * shape[1]
    perm = np.stack([o.perm for o in orders])                          # K, L
    inv = np.stack([k * L + o.inv for k, o in enumerate(orders)])      # K, L

    seqs = gather(reshape(x, (Cn, L)), perm)                           # C, K, L
    ys = selective_scan_batch(seqs, p, chunk_size)
    back = gather(reshape(ys, (Cn, K * L)), inv)                       # C, K, L
    merged = tsum(back, axis=1)
    logging.debug(f"[SSM] {K} direction(s) over {shape[0]}x{shape[1]}, {Cn} channel(s)")
    return reshape(merged, (Cn,) + shape)


def cross_directional_ssm(x, p):
    """directional_ssm over the four cross-scan orders of x's full map."""
    H, W = x.shape[1:]
    return directional_ssm(x, scan_orders.build_orders("cross", H, W), p)
