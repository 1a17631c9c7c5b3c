"""Constraint-filtered Gibbs sampler for the hierarchical Gaussian model

    z | y            ~ N(y, sigma2 I) restricted to {CPE < kappa}
    y = X beta + w,  w | tau2, b ~ N(0, tau2 H(b)),  H(b) = exp(-b * dist)
    beta ~ N(0, v I),  tau2 ~ IG(shape, rate),  b ~ pi(b) on a finite grid

Each constrained block (beta, tau2, b) proposes from its unconstrained full
conditional and rejects proposals whose BLUP-form CPE exceeds kappa; an
exhausted rejection budget retains the current constraint-satisfying value
(a "stall"). The w block is unconstrained because the CPE does not depend
on w. kappa = inf recovers the untruncated model.
"""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from .criteria import CpeEvaluator
from .statcore import chol_factor, percentile, rng_stream

_BLOCKS = ("w", "beta", "tau2", "b")


class InitializationExhausted(Exception):
    """Could not find a starting state inside {CPE < kappa}; kappa is likely
    too small (a near-inadmissible truncation set)."""


@dataclass(frozen=True)
class ModelSpec:
    """Model inputs: design, locations, known noise variance, decay grid."""

    design: np.ndarray
    locs: object  # SpatialLocations
    sigma2: float
    b_levels: tuple
    b_prior: tuple = None
    beta_prior_var: float = 10.0
    tau2_prior: tuple = (1.0, 0.01)

    def __post_init__(self):
        design = np.asarray(self.design, dtype=float)
        if not np.all(np.isfinite(design)):
            raise ValueError("design contains NaN/Inf")
        if design.shape[0] != self.locs.n:
            raise ValueError("design rows must match the number of locations")
        if not (self.sigma2 > 0):
            raise ValueError("sigma2 must be positive")
        levels = tuple(float(b) for b in self.b_levels)
        if not levels:
            raise ValueError("b_levels is empty")
        prior = self.b_prior
        if prior is None:
            prior = tuple(1.0 / len(levels) for _ in levels)
        else:
            prior = tuple(float(p) for p in prior)
        if len(prior) != len(levels) or any(p <= 0 for p in prior):
            raise ValueError("b_prior must be positive and match b_levels")
        if abs(sum(prior) - 1.0) > 1e-12:
            raise ValueError("b_prior must sum to 1")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "b_levels", levels)
        object.__setattr__(self, "b_prior", prior)

    @property
    def n(self):
        return self.design.shape[0]

    @property
    def p(self):
        return self.design.shape[1]


@dataclass(frozen=True)
class GibbsConfig:
    total_iterations: int = 12000
    burn_in: int = 2000
    kappa: float = math.inf
    max_rejections: int = 1000
    seed: int = 0
    fixed_tau2: float = None  # skip the tau2 block when set
    tau2_grid: tuple = None  # discrete tau2 support (detailed-balance checks)

    def __post_init__(self):
        if not (0 <= self.burn_in < self.total_iterations):
            raise ValueError("need 0 <= burn_in < total_iterations")
        if not (self.kappa > 0):
            raise ValueError("kappa must be positive")
        if self.max_rejections < 1:
            raise ValueError("max_rejections must be >= 1")


@dataclass(frozen=True)
class ChainState:
    beta: np.ndarray
    w: np.ndarray
    tau2: float
    b: float
    cpe: float


@dataclass
class Chain:
    """Post-burn-in states plus per-state CPE and block diagnostics."""

    states: list
    spec: ModelSpec
    config: GibbsConfig
    stall_count: int
    acceptance_rates: dict

    @property
    def cpe_trace(self):
        return np.array([s.cpe for s in self.states])

    def beta_matrix(self):
        return np.stack([s.beta for s in self.states])

    def tau2_trace(self):
        return np.array([s.tau2 for s in self.states])

    def b_trace(self):
        return np.array([s.b for s in self.states])

    def y_samples(self):
        """One row per stored state: X beta + w."""
        return np.stack([self.spec.design @ s.beta + s.w for s in self.states])

    def save(self, path):
        """Columnar file: iteration index, beta coordinates, tau2, b, cpe."""
        p = self.spec.p
        header = ["iteration"] + [f"beta_{j}" for j in range(p)] + ["tau2", "b", "cpe"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i, s in enumerate(self.states):
                row = [str(i)]
                row += [format(v, ".17g") for v in s.beta]
                row += [format(s.tau2, ".17g"), format(s.b, ".17g"), format(s.cpe, ".17g")]
                writer.writerow(row)


def load_chain_table(path):
    """Reload a saved chain file as {column name: float array}."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows) if rows else np.empty((0, len(header)))
    return {name: data[:, j] for j, name in enumerate(header)}


class SamplerContext:
    """Per-spec precomputation shared by all blocks.

    Holds, for every decay level, the eigendecomposition of the correlation
    matrix H(b) (which also gives its log-determinant), the CPE evaluator
    built on the same factorizations, and the Cholesky factor of the beta
    full-conditional precision.
    """

    def __init__(self, spec):
        self.spec = spec
        self.cpe = CpeEvaluator(spec.design, spec.locs, spec.b_levels, spec.sigma2)
        self.eig = {b: self.cpe._eig[float(b)] for b in spec.b_levels}
        self.logdet = {
            b: float(np.sum(np.log(np.clip(lam, 1e-300, None))))
            for b, (lam, _) in self.eig.items()
        }
        x = spec.design
        prec = x.T @ x / spec.sigma2 + np.eye(spec.p) / spec.beta_prior_var
        self._beta_prec_chol, _ = chol_factor(prec)
        self.log_b_prior = {
            b: math.log(p) for b, p in zip(spec.b_levels, spec.b_prior)
        }

    def quad_form(self, w, b):
        """w' H(b)^{-1} w via the eigendecomposition."""
        lam, q = self.eig[float(b)]
        t = q.T @ w
        return float(np.sum(t * t / lam))

    def beta_moments(self, z, w):
        rhs = self.spec.design.T @ (z - w) / self.spec.sigma2
        mu = cho_solve((self._beta_prec_chol, True), rhs)
        return mu

    def draw_beta(self, mu, rng):
        xi = rng.standard_normal(self.spec.p)
        return mu + solve_triangular(self._beta_prec_chol.T, xi, lower=False)


def _new_stats():
    return {blk: {"proposals": 0, "accepted": 0, "stalls": 0} for blk in _BLOCKS}


def _constrained_draw(propose, cpe_of, state_value, state_cpe, config, stats, block):
    """Rejection-sample one block against the CPE indicator.

    Returns (value, cpe). On budget exhaustion the current value (which
    satisfies the constraint) is retained and the stall is recorded.
    """
    rec = stats[block]
    if not math.isfinite(config.kappa):
        value = propose()
        rec["proposals"] += 1
        rec["accepted"] += 1
        return value, cpe_of(value)
    for _ in range(config.max_rejections):
        value = propose()
        rec["proposals"] += 1
        cpe = cpe_of(value)
        if cpe < config.kappa:
            rec["accepted"] += 1
            return value, cpe
    rec["stalls"] += 1
    return state_value, state_cpe


def sample_w_fullcond(state, z, spec, rng, ctx=None):
    """Draw w from N(mu_w, Sigma_w), Sigma_w = [(1/sigma2) I + (1/tau2) H(b)^{-1}]^{-1}.

    No CPE rejection: the BLUP-form CPE does not depend on w.
    """
    ctx = ctx or SamplerContext(spec)
    lam, q = ctx.eig[float(state.b)]
    dvec = 1.0 / (1.0 / spec.sigma2 + 1.0 / (state.tau2 * lam))
    resid = z - spec.design @ state.beta
    mean_coef = dvec * (q.T @ resid) / spec.sigma2
    xi = rng.standard_normal(spec.n)
    return q @ (mean_coef + np.sqrt(dvec) * xi)


def sample_beta_fullcond(state, z, spec, config, rng, ctx=None, stats=None):
    """Draw beta from N(mu_beta, Sigma_beta) I{CPE < kappa} by rejection.

    Sigma_beta = [X'X/sigma2 + I/v]^{-1}, mu_beta = Sigma_beta X'(z - w)/sigma2.
    """
    ctx = ctx or SamplerContext(spec)
    stats = stats if stats is not None else _new_stats()
    mu = ctx.beta_moments(z, state.w)
    return _constrained_draw(
        propose=lambda: ctx.draw_beta(mu, rng),
        cpe_of=lambda beta: ctx.cpe.cpe(z, beta, state.tau2, state.b),
        state_value=state.beta,
        state_cpe=state.cpe,
        config=config,
        stats=stats,
        block="beta",
    )


def sample_tau2_fullcond(state, z, spec, config, rng, ctx=None, stats=None):
    """Draw tau2 from IG(n/2 + a0, b0 + w' H(b)^{-1} w / 2) I{CPE < kappa}.

    With config.tau2_grid set, the inverse-gamma step is replaced by a
    categorical draw over the grid with the matching conditional weights.
    """
    ctx = ctx or SamplerContext(spec)
    stats = stats if stats is not None else _new_stats()
    quad = ctx.quad_form(state.w, state.b)
    if config.tau2_grid is not None:
        grid = np.asarray(config.tau2_grid, dtype=float)
        logw = -(spec.n / 2.0) * np.log(grid) - quad / (2.0 * grid)
        prob = np.exp(logw - logsumexp(logw))

        def propose():
            return float(grid[_categorical(prob, rng)])

    else:
        a0, b0 = spec.tau2_prior
        shape = spec.n / 2.0 + a0
        rate = b0 + 0.5 * quad

        def propose():
            return float(rate / rng.gamma(shape))

    return _constrained_draw(
        propose=propose,
        cpe_of=lambda tau2: ctx.cpe.cpe(z, state.beta, tau2, state.b),
        state_value=state.tau2,
        state_cpe=state.cpe,
        config=config,
        stats=stats,
        block="tau2",
    )


def _categorical(prob, rng):
    return int(np.searchsorted(np.cumsum(prob), rng.random(), side="right").clip(0, prob.size - 1))


def sample_b_fullcond(state, z, spec, config, rng, ctx=None, stats=None):
    """Draw the decay level with masses proportional to
    exp(-w' H(k)^{-1} w / 2 tau2) |H(k)|^{-1/2} pi(k), CPE-rejected.

    Prior masses are included for generality; a uniform prior cancels.
    """
    ctx = ctx or SamplerContext(spec)
    stats = stats if stats is not None else _new_stats()
    levels = spec.b_levels
    logw = np.array(
        [
            -ctx.quad_form(state.w, k) / (2.0 * state.tau2)
            - 0.5 * ctx.logdet[k]
            + ctx.log_b_prior[k]
            for k in levels
        ]
    )
    if not np.any(np.isfinite(logw)):
        raise FloatingPointError("all decay levels have numerically zero weight")
    prob = np.exp(logw - logsumexp(logw))

    return _constrained_draw(
        propose=lambda: levels[_categorical(prob, rng)],
        cpe_of=lambda b: ctx.cpe.cpe(z, state.beta, state.tau2, b),
        state_value=state.b,
        state_cpe=state.cpe,
        config=config,
        stats=stats,
        block="b",
    )


def init_state(spec, z, config, rng, ctx=None):
    """Whole-state prior initialization, repeated until CPE < kappa.

    Budget is 10 * max_rejections attempts; exhaustion signals that kappa
    truncates to a near-inadmissible set.
    """
    ctx = ctx or SamplerContext(spec)
    budget = 1 if not math.isfinite(config.kappa) else config.max_rejections * 10
    for _ in range(budget):
        b = spec.b_levels[_categorical(np.asarray(spec.b_prior), rng)]
        if config.fixed_tau2 is not None:
            tau2 = float(config.fixed_tau2)
        elif config.tau2_grid is not None:
            tau2 = float(config.tau2_grid[rng.integers(len(config.tau2_grid))])
        else:
            a0, b0 = spec.tau2_prior
            tau2 = float(b0 / rng.gamma(a0))
        beta = rng.standard_normal(spec.p) * math.sqrt(spec.beta_prior_var)
        lam, q = ctx.eig[float(b)]
        w = q @ (np.sqrt(np.clip(tau2 * lam, 0.0, None)) * rng.standard_normal(spec.n))
        cpe = ctx.cpe.cpe(z, beta, tau2, b)
        if cpe < config.kappa:
            return ChainState(beta=beta, w=w, tau2=tau2, b=b, cpe=cpe)
    raise InitializationExhausted(
        f"no prior draw satisfied CPE < kappa={config.kappa:g} in {budget} attempts"
    )


def run_gibbs(spec, z, config, rng=None, initial_state=None):
    """Systematic-scan Gibbs (w, beta, tau2, b per iteration).

    Returns the post-burn-in Chain with per-state CPE, per-block acceptance
    rates, and the total stall count. Identical (spec, z, config, rng seed)
    produce bit-identical chains.

    initial_state warm-starts the chain (e.g. from an untruncated run whose
    CPE trace calibrated kappa); prior-draw initialization cannot reach
    tight posterior-percentile constraint sets in any reasonable budget.
    The warm state must itself satisfy the constraint.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.size != spec.n:
        raise ValueError("z length does not match the model spec")
    if rng is None:
        rng = rng_stream(config.seed, "gibbs")
    ctx = SamplerContext(spec)
    if initial_state is not None:
        cpe = ctx.cpe.cpe(z, initial_state.beta, initial_state.tau2, initial_state.b)
        if not cpe < config.kappa:
            raise InitializationExhausted(
                f"warm-start state has CPE {cpe:g} >= kappa {config.kappa:g}"
            )
        state = replace(initial_state, cpe=cpe)
    else:
        state = init_state(spec, z, config, rng, ctx=ctx)
    stats = _new_stats()
    states = []
    for it in range(config.total_iterations):
        w = sample_w_fullcond(state, z, spec, rng, ctx=ctx)
        stats["w"]["proposals"] += 1
        stats["w"]["accepted"] += 1
        state = replace(state, w=w)
        beta, cpe = sample_beta_fullcond(state, z, spec, config, rng, ctx=ctx, stats=stats)
        state = replace(state, beta=beta, cpe=cpe)
        if config.fixed_tau2 is None:
            tau2, cpe = sample_tau2_fullcond(state, z, spec, config, rng, ctx=ctx, stats=stats)
            state = replace(state, tau2=tau2, cpe=cpe)
        if len(spec.b_levels) > 1:
            b, cpe = sample_b_fullcond(state, z, spec, config, rng, ctx=ctx, stats=stats)
            state = replace(state, b=b, cpe=cpe)
        if it >= config.burn_in:
            states.append(state)
    rates = {
        blk: (rec["accepted"] / rec["proposals"] if rec["proposals"] else 1.0)
        for blk, rec in stats.items()
    }
    stall_count = sum(rec["stalls"] for rec in stats.values())
    return Chain(
        states=states,
        spec=spec,
        config=config,
        stall_count=stall_count,
        acceptance_rates=rates,
    )


def warm_state(chain, kappa=math.inf):
    """Minimum-CPE stored state, for warm-starting a truncated chain."""
    if not chain.states:
        raise ValueError("chain has no stored states")
    best = min(chain.states, key=lambda s: s.cpe)
    if not best.cpe < kappa:
        raise InitializationExhausted(
            f"no stored state satisfies CPE < kappa={kappa:g} (min CPE {best.cpe:g})"
        )
    return best


def kappa_from_percentile(chain, d):
    """d-th percentile of an (untruncated) chain's post-burn-in CPE trace."""
    trace = chain.cpe_trace
    if trace.size == 0:
        raise ValueError("chain has no stored states")
    return percentile(trace, d)
