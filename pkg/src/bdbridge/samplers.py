"""Exact samplers and log-pmf evaluators for the discrete laws the bridge needs.

Every sampler here is exact (no normal approximations): Poisson uses
chop-down inversion below mean 30 and Hormann's transformed rejection (PTRS)
above; Binomial uses chop-down inversion while ``n*min(p,1-p) <= 30`` and
Hormann's BTRS rejection above; Hypergeometric and the Bessel slack law use
mode-centered two-sided chop-down inversion.  Log-pmfs of impossible outcomes
return ``-inf`` rather than raising, so callers can sum in log space.

All samplers accept scalars or arrays for their parameters (numpy
broadcasting) plus an optional ``size``; scalar parameters with ``size=None``
return a plain int.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .rng import RngState

NEG_INF = float("-inf")

# Hard stop for chop-down walks; in practice termination happens within a few
# standard deviations of the mode.
_MAX_CHOP_ITERS = 100_000


@dataclass(frozen=True)
class BesselParams:
    """Parameters of the slack posterior pi(m) ~ lambda_prod^m / ((m+nu)! m!).

    ``nu`` is the absolute displacement |d|; ``lambda_prod`` is the product of
    the cumulative birth and death intensities at the conditioning time.
    ``lambda_prod == 0`` degenerates to a point mass at zero slack.
    """

    nu: int
    lambda_prod: float

    def __post_init__(self):
        if self.nu < 0 or int(self.nu) != self.nu:
            raise ValueError(f"nu must be a nonnegative integer, got {self.nu}")
        if not np.isfinite(self.lambda_prod) or self.lambda_prod < 0:
            raise ValueError(f"lambda_prod must be finite and >= 0, got {self.lambda_prod}")


def _prep(*arrays, size=None):
    """Broadcast parameters to a common flat shape; report scalarness."""
    bcast = np.broadcast(*[np.asarray(a) for a in arrays])
    shape = bcast.shape if size is None else (size,)
    scalar = shape == () and size is None
    out = [np.broadcast_to(np.asarray(a), shape).reshape(-1).copy() for a in arrays]
    return out, shape, scalar


def _finish(values: np.ndarray, shape, scalar: bool):
    if scalar:
        return int(values[0])
    return values.reshape(shape)


# ---------------------------------------------------------------------------
# Modified Bessel function of the first kind, in log space
# ---------------------------------------------------------------------------

def log_mod_bessel_i(order, argument):
    """log I_order(argument) by log-sum-exp over the ascending series.

    The series I_v(x) = sum_k (x/2)^(2k+v) / (k! (k+v)!) increases to a peak
    near k* = (sqrt(v^2 + x^2) - v - 2)/2 and then decays super-geometrically;
    the term grid extends far enough past the peak that the truncated tail is
    below 1e-14 relative.

    Accepts scalars or arrays; ``order`` must be a nonnegative integer,
    ``argument`` nonnegative.  Returns ``-inf`` where the function vanishes
    (argument 0 with positive order).
    """
    order_a = np.atleast_1d(np.asarray(order))
    arg_a = np.atleast_1d(np.asarray(argument, dtype=float))
    if np.any(order_a < 0) or np.any(order_a != np.floor(order_a)):
        raise ValueError("order must be a nonnegative integer")
    if np.any(~np.isfinite(arg_a)) or np.any(arg_a < 0):
        raise ValueError("argument must be finite and >= 0")
    order_b, arg_b = np.broadcast_arrays(order_a, arg_a)
    nu = order_b.reshape(-1).astype(np.int64)
    x = arg_b.reshape(-1)

    out = np.empty(x.shape, dtype=float)
    zero = x == 0
    out[zero] = np.where(nu[zero] == 0, 0.0, NEG_INF)

    pos = ~zero
    if pos.any():
        nup, xp = nu[pos], x[pos]
        k_star = np.maximum((np.sqrt(nup.astype(float) ** 2 + xp**2) - nup - 2.0) / 2.0, 0.0)
        k_max = int(np.max(np.ceil(k_star + 12.0 * np.sqrt(k_star + 4.0) + 40.0)))
        k = np.arange(k_max + 1, dtype=float)
        # (n_terms, n_points) matrix of log terms
        log_terms = (
            (2.0 * k[:, None] + nup[None, :]) * np.log(xp / 2.0)[None, :]
            - gammaln(k + 1.0)[:, None]
            - gammaln(k[:, None] + nup[None, :] + 1.0)
        )
        m = np.max(log_terms, axis=0)
        out[pos] = m + np.log(np.sum(np.exp(log_terms - m[None, :]), axis=0))

    if np.isscalar(order) and np.isscalar(argument):
        return float(out[0])
    return out.reshape(order_b.shape)


# ---------------------------------------------------------------------------
# Bessel slack posterior
# ---------------------------------------------------------------------------

def _bessel_logpmf_arrays(nu: np.ndarray, lam: np.ndarray, m: np.ndarray) -> np.ndarray:
    """log pi(m | nu, lam) with broadcasting; -inf outside the support."""
    nu, lam, m = np.broadcast_arrays(nu, lam, m)
    nu = nu.astype(np.int64)
    m = np.asarray(m)
    out = np.full(m.shape, NEG_INF, dtype=float)
    valid = (m >= 0) & (m == np.floor(m))
    mi = np.where(valid, m, 0).astype(np.int64)

    zero = lam == 0
    out[valid & zero & (mi == 0)] = 0.0

    pos = valid & ~zero
    if pos.any():
        lnorm = log_mod_bessel_i(nu[pos], 2.0 * np.sqrt(lam[pos]))
        out[pos] = (
            (mi[pos] + nu[pos] / 2.0) * np.log(lam[pos])
            - gammaln(mi[pos] + 1.0)
            - gammaln(mi[pos] + nu[pos] + 1.0)
            - lnorm
        )
    return out


def bessel_logpmf(params: BesselParams, m) -> float | np.ndarray:
    """Log-pmf of the slack posterior, normalizer included.

    pi(m) = lambda_prod^m / ((m+nu)! m!) / Z with
    Z = lambda_prod^(-nu/2) I_nu(2 sqrt(lambda_prod)); evaluated in log space.
    Impossible outcomes (m > 0 at lambda_prod = 0, or non-integer m) give -inf.
    """
    m_arr = np.atleast_1d(np.asarray(m, dtype=float))
    out = _bessel_logpmf_arrays(
        np.full(m_arr.shape, params.nu), np.full(m_arr.shape, float(params.lambda_prod)), m_arr
    )
    if np.isscalar(m) or np.ndim(m) == 0:
        return float(out[0])
    return out


def _bessel_mode(nu: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Mode of pi(m): largest m with lam >= m (m + nu)."""
    mode = np.floor((np.sqrt(nu.astype(float) ** 2 + 4.0 * lam) - nu) / 2.0).astype(np.int64)
    mode = np.maximum(mode, 0)
    # Guard against floating-point boundary slips in either direction.
    up = lam > (mode + 1.0) * (mode + 1.0 + nu)
    mode = np.where(up, mode + 1, mode)
    dn = (mode >= 1) & (lam < mode.astype(float) * (mode + nu))
    return np.where(dn, mode - 1, mode)


def _bessel_sample_arrays(gen: np.random.Generator, nu: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Vectorized exact slack draws: mode-centered two-sided chop-down."""
    nu = nu.astype(np.int64)
    lam = np.asarray(lam, dtype=float)
    n = nu.shape[0]
    result = np.zeros(n, dtype=np.int64)
    live = lam > 0
    if not live.any():
        return result

    mode = _bessel_mode(nu, np.where(live, lam, 1.0))
    logp0 = _bessel_logpmf_arrays(nu, np.where(live, lam, 1.0), mode)
    p_mode = np.where(live, np.exp(logp0), 1.0)

    u = gen.random(n)
    acc = p_mode.copy()
    result = np.where(live, mode, result)
    active = live & (u > acc)

    lam_safe = np.where(live, lam, 1.0)
    m_up = mode + 1
    p_up = p_mode * lam_safe / (m_up * (m_up + nu))
    m_dn = mode - 1
    with np.errstate(invalid="ignore"):
        p_dn = np.where(mode >= 1, p_mode * mode * (mode + nu) / lam_safe, 0.0)

    iters = 0
    while active.any():
        take = active & (p_up > 0)
        acc = np.where(take, acc + p_up, acc)
        hit = take & (u <= acc)
        result = np.where(hit, m_up, result)
        active &= ~hit
        p_up = p_up * lam_safe / ((m_up + 1.0) * (m_up + 1.0 + nu))
        m_up += 1

        take = active & (m_dn >= 0) & (p_dn > 0)
        acc = np.where(take, acc + p_dn, acc)
        hit = take & (u <= acc)
        result = np.where(hit, m_dn, result)
        active &= ~hit
        with np.errstate(invalid="ignore"):
            p_dn = np.where(m_dn >= 1, p_dn * m_dn * (m_dn + nu) / lam_safe, 0.0)
        m_dn -= 1

        # Mass exhausted (float residue): land on the mode.
        dead = active & (p_up <= 0) & ((p_dn <= 0) | (m_dn < 0))
        result = np.where(dead, mode, result)
        active &= ~dead

        iters += 1
        if iters > _MAX_CHOP_ITERS:  # pragma: no cover
            result = np.where(active, mode, result)
            break
    return result


def bessel_sample(rng: RngState, params: BesselParams, size=None):
    """Exact draw of the slack M from pi(m) ~ lambda_prod^m / ((m+nu)! m!)."""
    shape = () if size is None else (size,)
    n = 1 if size is None else int(size)
    nu = np.full(n, params.nu, dtype=np.int64)
    lam = np.full(n, float(params.lambda_prod))
    vals = _bessel_sample_arrays(rng.generator, nu, lam)
    return _finish(vals, shape, size is None)


# ---------------------------------------------------------------------------
# Poisson
# ---------------------------------------------------------------------------

def _poisson_inversion(gen, mu, out, mask):
    """Chop-down inversion from 0; exact for the masked lanes (mu <= 30)."""
    if not mask.any():
        return
    u = gen.random(mu.shape[0])
    mu_m = np.where(mask, mu, 1.0)
    p = np.exp(-mu_m)
    acc = p.copy()
    k = np.zeros(mu.shape[0], dtype=np.int64)
    active = mask & (u > acc)
    iters = 0
    while active.any():
        k = np.where(active, k + 1, k)
        p = np.where(active, p * mu_m / np.maximum(k, 1), p)
        acc = np.where(active, acc + p, acc)
        active &= (u > acc) & (p > 0)
        iters += 1
        if iters > _MAX_CHOP_ITERS:  # pragma: no cover
            break
    out[mask] = k[mask]


def _poisson_ptrs(gen, mu, out, mask):
    """Hormann's transformed rejection with squeeze; exact for mu > 10."""
    if not mask.any():
        return
    idx = np.flatnonzero(mask)
    mu_s = mu[idx]
    b = 0.931 + 2.53 * np.sqrt(mu_s)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    log_mu = np.log(mu_s)

    res = np.zeros(idx.shape[0], dtype=np.int64)
    active = np.ones(idx.shape[0], dtype=bool)
    while active.any():
        m = active.sum()
        uu = gen.random(m) - 0.5
        vv = gen.random(m)
        us = 0.5 - np.abs(uu)
        sub = np.flatnonzero(active)
        k = np.floor((2.0 * a[sub] / us + b[sub]) * uu + mu_s[sub] + 0.43).astype(np.int64)

        accept = (us >= 0.07) & (vv <= v_r[sub])
        reject = (k < 0) | ((us < 0.013) & (vv > us))
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.log(vv) + np.log(inv_alpha[sub]) - np.log(a[sub] / (us * us) + b[sub])
        rhs = k * log_mu[sub] - mu_s[sub] - gammaln(k + 1.0)
        accept |= (~reject) & (lhs <= rhs)

        res[sub[accept]] = k[accept]
        active[sub[accept]] = False
    out[idx] = res


def poisson_sample(rng: RngState, mean, size=None):
    """Exact Poisson(mean) variate(s); mean = 0 returns 0."""
    (mu,), shape, scalar = _prep(np.asarray(mean, dtype=float), size=size)
    if np.any(~np.isfinite(mu)) or np.any(mu < 0):
        raise ValueError("mean must be finite and >= 0")
    out = np.zeros(mu.shape[0], dtype=np.int64)
    gen = rng.generator
    small = (mu > 0) & (mu <= 30.0)
    _poisson_inversion(gen, mu, out, small)
    _poisson_ptrs(gen, mu, out, mu > 30.0)
    return _finish(out, shape, scalar)


# ---------------------------------------------------------------------------
# Binomial
# ---------------------------------------------------------------------------

def _binomial_inversion(gen, n, p, out, mask):
    """Chop-down inversion from 0 for n*p <= 30 (callers pass p <= 1/2)."""
    if not mask.any():
        return
    u = gen.random(n.shape[0])
    n_m = np.where(mask, n, 1)
    p_m = np.where(mask, p, 0.25)
    q = 1.0 - p_m
    ratio = p_m / q
    t = np.exp(n_m * np.log1p(-p_m))
    acc = t.copy()
    k = np.zeros(n.shape[0], dtype=np.int64)
    active = mask & (u > acc) & (k < n_m)
    iters = 0
    while active.any():
        t = np.where(active, t * (n_m - k) / (k + 1.0) * ratio, t)
        k = np.where(active, k + 1, k)
        acc = np.where(active, acc + t, acc)
        active &= (u > acc) & (k < n_m) & (t > 0)
        iters += 1
        if iters > _MAX_CHOP_ITERS:  # pragma: no cover
            break
    out[mask] = k[mask]


def _binomial_btrs(gen, n, p, out, mask):
    """Hormann's BTRS transformed rejection; exact for n*p >= 10, p <= 1/2."""
    if not mask.any():
        return
    idx = np.flatnonzero(mask)
    n_s = n[idx].astype(float)
    p_s = p[idx]
    q_s = 1.0 - p_s
    spq = np.sqrt(n_s * p_s * q_s)
    b = 1.15 + 2.53 * spq
    a = -0.0873 + 0.0248 * b + 0.01 * p_s
    c = n_s * p_s + 0.5
    v_r = 0.92 - 4.2 / b
    urvr = 0.86 * v_r
    alpha = (2.83 + 5.1 / b) * spq
    lpq = np.log(p_s / q_s)
    m = np.floor((n_s + 1.0) * p_s)
    h = gammaln(m + 1.0) + gammaln(n_s - m + 1.0)

    res = np.zeros(idx.shape[0], dtype=np.int64)
    active = np.ones(idx.shape[0], dtype=bool)
    while active.any():
        cnt = active.sum()
        sub = np.flatnonzero(active)
        v = gen.random(cnt)
        u = np.empty(cnt)
        fast = v <= urvr[sub]
        u[fast] = v[fast] / v_r[sub][fast] - 0.43
        hi = v >= v_r[sub]
        need = hi.sum()
        extra = gen.random(need) if need else np.empty(0)
        u[hi] = extra - 0.5
        mid = ~fast & ~hi
        um = v[mid] / v_r[sub][mid] - 0.93
        u[mid] = np.sign(um) * 0.5 - um
        nmid = mid.sum()
        vmid = gen.random(nmid) if nmid else np.empty(0)
        v = v.copy()
        v[mid] = v_r[sub][mid] * vmid

        us = 0.5 - np.abs(u)
        k = np.floor((2.0 * a[sub] / us + b[sub]) * u + c[sub]).astype(np.int64)

        accept = fast & (k >= 0) & (k <= n[idx][sub])
        domain = (~fast) & (k >= 0) & (k <= n[idx][sub])
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.log(v * alpha[sub] / (a[sub] / (us * us) + b[sub]))
        rhs = h[sub] - gammaln(k + 1.0) - gammaln(n_s[sub] - k + 1.0) + (k - m[sub]) * lpq[sub]
        accept |= domain & (lhs <= rhs)

        res[sub[accept]] = k[accept]
        active[sub[accept]] = False
    out[idx] = res


def binomial_sample(rng: RngState, n, p, size=None):
    """Exact Bin(n, p) variate(s); p = 0 -> 0, p = 1 -> n, n = 0 -> 0."""
    (n_a, p_a), shape, scalar = _prep(
        np.asarray(n, dtype=np.int64), np.asarray(p, dtype=float), size=size
    )
    if np.any(n_a < 0):
        raise ValueError("n must be >= 0")
    if np.any(~np.isfinite(p_a)) or np.any((p_a < 0) | (p_a > 1)):
        raise ValueError("p must lie in [0, 1]")
    gen = rng.generator
    out = np.zeros(n_a.shape[0], dtype=np.int64)

    flip = p_a > 0.5
    p_eff = np.where(flip, 1.0 - p_a, p_a)
    nontrivial = (n_a > 0) & (p_eff > 0)
    work = n_a * p_eff
    small = nontrivial & (work <= 30.0)
    large = nontrivial & (work > 30.0)
    _binomial_inversion(gen, n_a, p_eff, out, small)
    _binomial_btrs(gen, n_a, p_eff, out, large)
    out = np.where(flip, n_a - out, out)
    return _finish(out, shape, scalar)


# ---------------------------------------------------------------------------
# Hypergeometric
# ---------------------------------------------------------------------------

def _hyp_logpmf(N, K, n, k):
    return (
        gammaln(K + 1.0) - gammaln(k + 1.0) - gammaln(K - k + 1.0)
        + gammaln(N - K + 1.0) - gammaln(n - k + 1.0) - gammaln(N - K - n + k + 1.0)
        - (gammaln(N + 1.0) - gammaln(n + 1.0) - gammaln(N - n + 1.0))
    )


def _hypergeometric_arrays(gen, N, K, n):
    """Vectorized exact draws via mode-centered two-sided chop-down."""
    N = N.astype(np.int64)
    K = K.astype(np.int64)
    n = n.astype(np.int64)
    lo = np.maximum(0, n - (N - K))
    hi = np.minimum(K, n)
    result = lo.copy()
    live = hi > lo
    if not live.any():
        return result

    mode = ((n + 1).astype(float) * (K + 1) / (N + 2)).astype(np.int64)
    mode = np.clip(mode, lo, hi)
    p_mode = np.where(live, np.exp(_hyp_logpmf(N, K, n, np.where(live, mode, lo))), 1.0)

    u = gen.random(N.shape[0])
    acc = p_mode.copy()
    result = np.where(live, mode, result)
    active = live & (u > acc)

    def r_up(k):
        # pmf(k+1)/pmf(k)
        num = (K - k).astype(float) * (n - k)
        den = (k + 1.0) * (N - K - n + k + 1.0)
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    def r_dn(k):
        # pmf(k-1)/pmf(k)
        num = k.astype(float) * (N - K - n + k)
        den = (K - k + 1.0) * (n - k + 1.0)
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    m_up = mode + 1
    p_up = np.where(m_up <= hi, p_mode * r_up(mode), 0.0)
    m_dn = mode - 1
    p_dn = np.where(m_dn >= lo, p_mode * r_dn(mode), 0.0)

    iters = 0
    while active.any():
        take = active & (m_up <= hi) & (p_up > 0)
        acc = np.where(take, acc + p_up, acc)
        hit = take & (u <= acc)
        result = np.where(hit, m_up, result)
        active &= ~hit
        p_up = np.where(m_up + 1 <= hi, p_up * r_up(m_up), 0.0)
        m_up += 1

        take = active & (m_dn >= lo) & (p_dn > 0)
        acc = np.where(take, acc + p_dn, acc)
        hit = take & (u <= acc)
        result = np.where(hit, m_dn, result)
        active &= ~hit
        p_dn = np.where(m_dn - 1 >= lo, p_dn * r_dn(m_dn), 0.0)
        m_dn -= 1

        dead = active & ((m_up > hi) | (p_up <= 0)) & ((m_dn < lo) | (p_dn <= 0))
        result = np.where(dead, mode, result)
        active &= ~dead

        iters += 1
        if iters > _MAX_CHOP_ITERS:  # pragma: no cover
            result = np.where(active, mode, result)
            break
    return result


def hypergeometric_sample(rng: RngState, population, successes, draws, size=None):
    """Exact Hyp(population, successes, draws) variate(s).

    Returns the number of marked items in a uniform without-replacement draw
    of ``draws`` items from ``population`` of which ``successes`` are marked.
    """
    (N, K, n), shape, scalar = _prep(
        np.asarray(population, dtype=np.int64),
        np.asarray(successes, dtype=np.int64),
        np.asarray(draws, dtype=np.int64),
        size=size,
    )
    if np.any(N < 0) or np.any((K < 0) | (K > N)) or np.any((n < 0) | (n > N)):
        raise ValueError("need 0 <= successes <= population and 0 <= draws <= population")
    vals = _hypergeometric_arrays(rng.generator, N, K, n)
    return _finish(vals, shape, scalar)


# ---------------------------------------------------------------------------
# Skellam
# ---------------------------------------------------------------------------

def skellam_logpmf(lambda_plus, lambda_minus, d):
    """Log-pmf of a difference of independent Poissons at displacement d.

    log[ exp(-L+ - L-) (L+/L-)^(d/2) I_|d|(2 sqrt(L+ L-)) ], with the
    degenerate rates handled analytically: a vanishing death rate leaves a
    pure Poisson law on d >= 0 (and -inf below), and symmetrically for a
    vanishing birth rate.
    """
    lp = np.atleast_1d(np.asarray(lambda_plus, dtype=float))
    lm = np.atleast_1d(np.asarray(lambda_minus, dtype=float))
    d_a = np.atleast_1d(np.asarray(d))
    if np.any(~np.isfinite(lp)) or np.any(lp < 0) or np.any(~np.isfinite(lm)) or np.any(lm < 0):
        raise ValueError("rates must be finite and >= 0")
    lp, lm, d_b = np.broadcast_arrays(lp, lm, d_a)
    dv = d_b.astype(np.int64)
    out = np.full(dv.shape, NEG_INF, dtype=float)

    both_zero = (lp == 0) & (lm == 0)
    out[both_zero & (dv == 0)] = 0.0

    pois_up = (lm == 0) & (lp > 0) & (dv >= 0)
    if pois_up.any():
        out[pois_up] = -lp[pois_up] + dv[pois_up] * np.log(lp[pois_up]) - gammaln(dv[pois_up] + 1.0)
    pois_dn = (lp == 0) & (lm > 0) & (dv <= 0)
    if pois_dn.any():
        k = -dv[pois_dn]
        out[pois_dn] = -lm[pois_dn] + k * np.log(lm[pois_dn]) - gammaln(k + 1.0)

    full = (lp > 0) & (lm > 0)
    if full.any():
        prod = lp[full] * lm[full]
        out[full] = (
            -lp[full] - lm[full]
            + 0.5 * dv[full] * (np.log(lp[full]) - np.log(lm[full]))
            + log_mod_bessel_i(np.abs(dv[full]), 2.0 * np.sqrt(prod))
        )

    if np.ndim(d) == 0 and np.ndim(lambda_plus) == 0 and np.ndim(lambda_minus) == 0:
        return float(out.reshape(-1)[0])
    return out
