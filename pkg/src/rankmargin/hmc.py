"""No-U-Turn Hamiltonian Monte Carlo with step-size and diagonal-metric adaptation.

The target is any callable ``theta -> (log density, gradient)`` on R^d.

Transitions use multinomial sampling over the trajectory with biased
progressive sampling between doublings and the generalized U-turn criterion
(including the checks across merged subtrees).  Warmup follows the usual
three-phase schedule: a fast initial buffer, a series of doubling slow
windows that re-estimate the diagonal inverse metric, and a fast terminal
buffer.  Step size is tuned throughout warmup by dual averaging, restarted
after every metric update except the last.

Each chain draws its randomness from a Philox stream keyed by
``(seed, chain)``, so results do not depend on how chains are scheduled.
"""

from __future__ import annotations

import logging
import math
import os
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

Target = Callable[[np.ndarray], "tuple[float, np.ndarray]"]

DIVERGENCE_THRESHOLD = 1000.0
INIT_ATTEMPTS = 100
THREADS_ENV = "RANKMARGIN_THREADS"


class SamplerError(RuntimeError):
    """Sampling could not start (e.g. no finite initial point)."""


@dataclass
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    samples: int = 1000
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    adapt: bool = True
    # used as-is when adapt is False
    step_size: float = 0.1
    inv_metric: Sequence[float] | None = None
    n_jobs: int | None = None

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.adapt and self.warmup < 150:
            raise ValueError("adaptation needs warmup >= 150")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_treedepth < 1:
            raise ValueError("max_treedepth must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")


@dataclass
class PosteriorDraws:
    """Post-warmup draws with shape ``(chains, samples, dimension)``."""

    names: list[str]
    draws: np.ndarray
    divergences: np.ndarray = None
    treedepth_hits: np.ndarray = None
    step_size: np.ndarray = None
    inv_metric: np.ndarray = None
    accept_stat: np.ndarray = None
    n_leapfrog: np.ndarray = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.names):
            raise ValueError("draws must have shape (chains, samples, len(names))")
        n_chains = self.draws.shape[0]
        if self.divergences is None:
            self.divergences = np.zeros(n_chains, dtype=int)
        if self.treedepth_hits is None:
            self.treedepth_hits = np.zeros(n_chains, dtype=int)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_samples(self) -> int:
        return self.draws.shape[1]

    def column(self, name: str) -> np.ndarray:
        """Draws of one parameter, shape ``(chains, samples)``."""
        return self.draws[:, :, self.names.index(name)]

    def pooled(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[2])


def kinetic(p: np.ndarray, inv_metric: np.ndarray) -> float:
    return 0.5 * float(p @ (inv_metric * p))


def leapfrog(target: Target, theta, p, grad, step: float, inv_metric):
    """One leapfrog step; returns ``(theta, p, logp, grad)``."""
    p = p + 0.5 * step * grad
    theta = theta + step * inv_metric * p
    logp, grad = target(theta)
    p = p + 0.5 * step * grad
    return theta, p, logp, grad


@dataclass(slots=True)
class _Tree:
    theta_l: np.ndarray
    p_l: np.ndarray
    grad_l: np.ndarray
    theta_r: np.ndarray
    p_r: np.ndarray
    grad_r: np.ndarray
    theta: np.ndarray
    logp: float
    grad: np.ndarray
    log_w: float
    rho: np.ndarray
    n_steps: int = 0
    sum_accept: float = 0.0
    valid: bool = True
    divergent: bool = False

    def edge(self, direction: int):
        if direction > 0:
            return self.theta_r, self.p_r, self.grad_r
        return self.theta_l, self.p_l, self.grad_l


def _turning(ps_left, ps_right, rho) -> bool:
    return ps_left.dot(rho) <= 0.0 or ps_right.dot(rho) <= 0.0


class _Chain:
    def __init__(self, target: Target, dim: int, config: SamplerConfig, chain: int):
        self.target = target
        self.dim = dim
        self.config = config
        seq = np.random.SeedSequence(entropy=config.seed, spawn_key=(chain,))
        self.rng = np.random.Generator(np.random.Philox(seq))
        if config.inv_metric is not None:
            self.inv_metric = np.array(config.inv_metric, dtype=float)
            if self.inv_metric.shape != (dim,):
                raise ValueError("inv_metric has the wrong dimension")
        else:
            self.inv_metric = np.ones(dim)
        self.step = config.step_size

    # -- NUTS ---------------------------------------------------------------
    def _evaluate(self, theta):
        try:
            logp, grad = self.target(theta)
        except (ValueError, ArithmeticError):
            return -math.inf, np.zeros(self.dim)
        return logp, grad

    def _leaf(self, theta, p, grad, direction, H0) -> _Tree:
        p = p + 0.5 * direction * self.step * grad
        theta = theta + direction * self.step * self.inv_metric * p
        logp, grad = self._evaluate(theta)
        p = p + 0.5 * direction * self.step * grad
        H = -logp + 0.5 * p.dot(self.inv_metric * p)
        if not math.isfinite(H + grad.sum()):
            H = math.inf
        delta = H - H0
        divergent = delta > DIVERGENCE_THRESHOLD
        accept = math.exp(min(0.0, -delta)) if math.isfinite(delta) else 0.0
        return _Tree(
            theta, p, grad, theta, p, grad, theta, logp, grad,
            log_w=-delta, rho=p, n_steps=1, sum_accept=accept,
            valid=not divergent, divergent=divergent,
        )

    def _build(self, theta, p, grad, direction, depth, H0) -> _Tree:
        if depth == 0:
            return self._leaf(theta, p, grad, direction, H0)
        inner = self._build(theta, p, grad, direction, depth - 1, H0)
        if not inner.valid:
            return inner
        outer = self._build(*inner.edge(direction), direction, depth - 1, H0)
        n_steps = inner.n_steps + outer.n_steps
        sum_accept = inner.sum_accept + outer.sum_accept
        if not outer.valid:
            outer.n_steps, outer.sum_accept = n_steps, sum_accept
            return outer
        return self._merge(inner, outer, direction, n_steps, sum_accept, biased=False)

    def _merge(self, old: _Tree, new: _Tree, direction, n_steps, sum_accept, biased) -> _Tree:
        log_w = float(np.logaddexp(old.log_w, new.log_w))
        # inside a subtree: multinomial; across doublings: biased progressive
        log_accept = new.log_w - (old.log_w if biased else log_w)
        if log_accept >= 0 or math.log(self.rng.random()) < log_accept:
            theta, logp, grad = new.theta, new.logp, new.grad
        else:
            theta, logp, grad = old.theta, old.logp, old.grad
        left, right = (old, new) if direction > 0 else (new, old)
        rho = left.rho + right.rho
        im = self.inv_metric
        turning = (
            _turning(im * left.p_l, im * right.p_r, rho)
            or _turning(im * left.p_l, im * right.p_l, left.rho + right.p_l)
            or _turning(im * left.p_r, im * right.p_r, left.p_r + right.rho)
        )
        return _Tree(
            left.theta_l, left.p_l, left.grad_l,
            right.theta_r, right.p_r, right.grad_r,
            theta, logp, grad, log_w, rho, n_steps, sum_accept,
            valid=not turning,
        )

    def transition(self, theta, logp, grad):
        p = self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)
        H0 = -logp + kinetic(p, self.inv_metric)
        tree = _Tree(theta, p, grad, theta, p, grad, theta, logp, grad, 0.0, p)
        n_steps, sum_accept, depth, divergent = 0, 0.0, 0, False
        while depth < self.config.max_treedepth:
            direction = 1 if self.rng.random() < 0.5 else -1
            new = self._build(*tree.edge(direction), direction, depth, H0)
            n_steps += new.n_steps
            sum_accept += new.sum_accept
            depth += 1
            if not new.valid:
                divergent = new.divergent
                break
            tree = self._merge(tree, new, direction, n_steps, sum_accept, biased=True)
            if not tree.valid:
                break
        stats = {
            "accept_stat": sum_accept / max(n_steps, 1),
            "n_leapfrog": n_steps,
            "depth": depth,
            "divergent": divergent,
            "saturated": depth >= self.config.max_treedepth and tree.valid and not divergent,
        }
        return tree.theta, tree.logp, tree.grad, stats

    # -- adaptation -------------------------------------------------------
    def _init_step_size(self, theta, logp, grad):
        """Double or halve the step until one leapfrog step crosses 80% acceptance."""
        with np.errstate(over="ignore", invalid="ignore"):
            self._search_step(theta, logp, grad)

    def _search_step(self, theta, logp, grad):
        direction = 0
        for _ in range(100):
            p = self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)
            H0 = -logp + kinetic(p, self.inv_metric)
            _, p1, logp1, _ = leapfrog(self._evaluate, theta, p, grad, self.step, self.inv_metric)
            H1 = -logp1 + kinetic(p1, self.inv_metric)
            delta = H0 - H1 if math.isfinite(H1) else -math.inf
            up = delta > math.log(0.8)
            if direction == 0:
                direction = 1 if up else -1
            elif (direction == 1) != up:
                break
            self.step = self.step * 2.0 if direction == 1 else self.step / 2.0
            if not 1e-12 < self.step < 1e7:
                self.step = min(max(self.step, 1e-12), 1e7)
                break

    def initial_point(self):
        r = self.config.init_radius
        for _ in range(INIT_ATTEMPTS):
            theta = self.rng.uniform(-r, r, size=self.dim)
            logp, grad = self._evaluate(theta)
            if math.isfinite(logp) and np.all(np.isfinite(grad)):
                return theta, logp, np.asarray(grad, dtype=float)
        raise SamplerError(f"no finite initial point after {INIT_ATTEMPTS} attempts")

    def run(self) -> dict:
        cfg = self.config
        theta, logp, grad = self.initial_point()
        draws = np.empty((cfg.samples, self.dim))
        accept = np.empty(cfg.samples)
        n_leap = np.empty(cfg.samples, dtype=int)
        divergences = hits = 0

        if cfg.adapt:
            self._init_step_size(theta, logp, grad)
            da = DualAveraging(cfg.target_accept, self.step)
            windows = {end: start for start, end in slow_windows(cfg.warmup)}
            starts = set(windows.values())
            last_end = max(windows, default=None)
            acc = None
        for it in range(cfg.warmup):
            theta, logp, grad, st = self.transition(theta, logp, grad)
            if not cfg.adapt:
                continue
            self.step = da.update(st["accept_stat"])
            if it in starts:
                acc = WelfordVariance(self.dim)
            if acc is not None:
                acc.add(theta)
            if it + 1 in windows:
                self.inv_metric = acc.regularized()
                acc = None
                # the final update keeps the step-size state: a fresh restart
                # has only the terminal buffer to settle and ends up too small
                if it + 1 != last_end:
                    self._init_step_size(theta, logp, grad)
                    da.restart(self.step)
        if cfg.adapt and cfg.warmup:
            self.step = da.final()

        for i in range(cfg.samples):
            theta, logp, grad, st = self.transition(theta, logp, grad)
            draws[i] = theta
            accept[i] = st["accept_stat"]
            n_leap[i] = st["n_leapfrog"]
            divergences += st["divergent"]
            hits += st["saturated"]
        return {
            "draws": draws,
            "accept_stat": accept,
            "n_leapfrog": n_leap,
            "divergences": divergences,
            "treedepth_hits": hits,
            "step_size": self.step,
            "inv_metric": self.inv_metric.copy(),
        }


class DualAveraging:
    """Dual-averaging step-size tuner with the standard constants."""

    gamma = 0.05
    t0 = 10.0
    kappa = 0.75

    def __init__(self, target: float, step: float):
        self.target = target
        self.restart(step)

    def restart(self, step: float) -> None:
        self.mu = math.log(10.0 * step)
        self.count = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.count += 1
        eta = 1.0 / (self.count + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.count) / self.gamma
        w = self.count ** (-self.kappa)
        self.x_bar = w * x + (1.0 - w) * self.x_bar
        return math.exp(x)

    def final(self) -> float:
        return math.exp(self.x_bar)


class WelfordVariance:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x: np.ndarray) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def regularized(self) -> np.ndarray:
        """Variance shrunk toward 1e-3 for short windows, clamped to [1e-10, 1e10]."""
        n = self.n
        var = self.m2 / max(n - 1, 1)
        var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
        return np.clip(var, 1e-10, 1e10)


def slow_windows(warmup: int, init_buffer: int = 75, term_buffer: int = 50, base: int = 25):
    """``(start, end)`` iteration ranges of the metric-estimation windows."""
    end_slow = warmup - term_buffer
    start, size, out = init_buffer, base, []
    while start < end_slow:
        end = start + size
        if end + 2 * size > end_slow:
            end = end_slow
        out.append((start, end))
        start, size = end, 2 * size
    return out


def _run_chain(args):
    target, dim, config, chain = args
    return _Chain(target, dim, config, chain).run()


def _n_jobs(config: SamplerConfig) -> int:
    n = config.n_jobs
    env = os.environ.get(THREADS_ENV)
    if n is None:
        n = int(env) if env else 1
    elif env:
        n = min(n, int(env))
    return max(1, min(n, config.chains))


def sample(
    target: Target,
    config: SamplerConfig,
    dim: int | None = None,
    names: Sequence[str] | None = None,
) -> PosteriorDraws:
    """Run ``config.chains`` NUTS chains on ``target``.

    ``dim`` defaults to ``target.dimension`` when the target defines it.
    Chains run in worker processes when more than one job is allowed
    (``config.n_jobs``, capped by the ``RANKMARGIN_THREADS`` environment
    variable) and the target can be pickled; output is identical either way.
    Draws are returned on the target's own (unconstrained) scale.
    """
    if dim is None:
        dim = getattr(target, "dimension", None)
        if dim is None:
            raise ValueError("dim is required for targets without a dimension attribute")
    names = list(names) if names is not None else [f"x[{i}]" for i in range(dim)]
    jobs = [(target, dim, config, c) for c in range(config.chains)]
    n_jobs = _n_jobs(config)
    if n_jobs > 1:
        try:
            pickle.dumps(target)
        except Exception:
            log.warning("target is not picklable; running chains serially")
            n_jobs = 1
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_chain, jobs))
    else:
        results = [_run_chain(j) for j in jobs]

    return PosteriorDraws(
        names=names,
        draws=np.stack([r["draws"] for r in results]),
        divergences=np.array([r["divergences"] for r in results]),
        treedepth_hits=np.array([r["treedepth_hits"] for r in results]),
        step_size=np.array([r["step_size"] for r in results]),
        inv_metric=np.stack([r["inv_metric"] for r in results]),
        accept_stat=np.stack([r["accept_stat"] for r in results]),
        n_leapfrog=np.stack([r["n_leapfrog"] for r in results]),
    )
