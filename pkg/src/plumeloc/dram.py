"""Delayed Rejection Adaptive Metropolis over theta = [x_c, y_c, m_c].

The observation model treats the 18 measured counts as the transport +
sensing forward response plus iid Gaussian errors with unknown variance:

    log p(y | theta, sigma2) = -(n/2) ln(2 pi sigma2) - SS(theta) / (2 sigma2)

with SS the sum of squared residuals and a uniform prior over the
parameter box. The sampler is random-walk Metropolis with

* a delayed-rejection second stage (proposal covariance shrunk by a fixed
  factor, accepted with the full two-stage ratio so the stationary
  distribution is preserved),
* covariance adaptation from the chain history (scaled empirical
  covariance plus a small ridge), and
* a conjugate inverse-gamma resample of sigma2 every iteration.

The chain is initialized from a coarse SS grid search over the prior box.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .fileio import fmt, read_json, write_json
from .sensing import PhysicsConstants, expected_array_for_scenario
from .seeds import as_rng
from .transport import GridConfig, Scenario

PARAM_BOUNDS = ((-500.0, 0.0), (-250.0, 250.0), (0.0, 5.0))
PARAM_NAMES = ("x_c", "y_c", "m_c")

GRID_SEARCH_SHAPE = (21, 21, 20)  # x, y inclusive endpoints; mass cell-centered

_AM_SCALE = 2.38 ** 2 / 3.0  # optimal random-walk scaling for 3 parameters


def _accept(log_ratio: float, rng) -> bool:
    """Metropolis coin flip: always accept when the ratio is >= 1."""
    if log_ratio >= 0.0:
        return True
    u = rng.uniform()
    return u > 0.0 and np.log(u) < log_ratio


def _log1m_exp(d: float) -> float:
    """log(1 - exp(d)) for d < 0, stable as d -> 0- and at d = -inf."""
    if d == -np.inf:
        return 0.0
    if d > -1e-12:
        return float(np.log(max(-d, 1e-300)))
    return float(np.log1p(-np.exp(d)))


@dataclass(frozen=True)
class InferenceProblem:
    """Observed counts plus everything the forward model needs."""

    observations: np.ndarray          # (18,) measured counts
    detectors: tuple                  # DetectorSpec sequence
    pc: PhysicsConstants
    u: float
    v: float
    k_x: float = 5.0
    k_y: float = 5.0
    t_obs: float = 500.0
    bounds: tuple = PARAM_BOUNDS
    grid_cfg: GridConfig = field(default_factory=GridConfig)

    @property
    def n_obs(self) -> int:
        return len(self.observations)

    def scenario(self, theta) -> Scenario:
        return Scenario(x_c=float(theta[0]), y_c=float(theta[1]), m_c=float(theta[2]),
                        u=self.u, v=self.v, k_x=self.k_x, k_y=self.k_y, t_obs=self.t_obs)

    def in_bounds(self, theta) -> bool:
        return all(lo <= t <= hi for t, (lo, hi) in zip(theta, self.bounds))


def forward_model(theta, problem: InferenceProblem) -> np.ndarray:
    """Expected counts per detector for theta (no Poisson draw), on a grid
    recentered on theta's plume center. Zero mass gives pure background."""
    theta = np.asarray(theta, dtype=float)
    if theta[2] == 0.0:
        return np.array([d.background_rate * d.dwell_time for d in problem.detectors])
    return expected_array_for_scenario(problem.scenario(theta), problem.detectors,
                                       problem.pc, problem.grid_cfg)


def sum_squares(theta, problem: InferenceProblem) -> float:
    """Sum over detectors of (observed - expected)^2."""
    resid = np.asarray(problem.observations, dtype=float) - forward_model(theta, problem)
    return float(resid @ resid)


def log_posterior(theta, sigma2: float, problem: InferenceProblem) -> float:
    """Unnormalized log posterior; -inf outside the prior box."""
    if sigma2 <= 0.0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    if not problem.in_bounds(theta):
        return -np.inf
    ss = sum_squares(theta, problem)
    return _log_likelihood(ss, sigma2, problem.n_obs)


def _log_likelihood(ss: float, sigma2: float, n: int) -> float:
    return -(n / 2.0) * np.log(2.0 * np.pi * sigma2) - ss / (2.0 * sigma2)


def grid_search_init(problem: InferenceProblem):
    """Coarse SS minimization over a 21 x 21 x 20 lattice of the prior box.

    x and y lattices include their endpoints; the 20 mass values are
    cell-centered so zero mass is never evaluated. The forward response is
    affine in the released mass, so each (x, y) needs one unit-mass
    transport solve and the 20 mass values reuse it. Returns
    (theta0, info) with info carrying the minimum SS and the lattice size.
    """
    nx, ny, nm = GRID_SEARCH_SHAPE
    (x_lo, x_hi), (y_lo, y_hi), (m_lo, m_hi) = problem.bounds
    xs = np.linspace(x_lo, x_hi, nx)
    ys = np.linspace(y_lo, y_hi, ny)
    ms = m_lo + (np.arange(nm) + 0.5) * (m_hi - m_lo) / nm

    y_obs = np.asarray(problem.observations, dtype=float)
    background = np.array([d.background_rate * d.dwell_time for d in problem.detectors])

    best = (np.inf, None)
    for x in xs:
        for yv in ys:
            unit_signal = forward_model((x, yv, 1.0), problem) - background
            # residuals for all masses at once: y - bg - m * unit_signal
            resid = (y_obs - background)[None, :] - ms[:, None] * unit_signal[None, :]
            ss_per_mass = (resid * resid).sum(axis=1)
            j = int(np.argmin(ss_per_mass))
            if ss_per_mass[j] < best[0]:
                best = (float(ss_per_mass[j]), np.array([x, yv, ms[j]]))
    info = {"ss_min": best[0], "n_evaluations": nx * ny * nm}
    return best[1], info


@dataclass
class DramConfig:
    iterations: int = 20_000
    burn_in: int = 10_000
    adapt_start: int = 500        # first adaptation after this many iterations
    adapt_interval: int = 100
    dr_scale: float = 0.2         # second-stage covariance = dr_scale * first-stage
    initial_cov: np.ndarray | None = None  # default diag([5^2, 5^2, 0.25^2])
    eps_cov: float = 1e-8         # ridge keeping adapted covariance positive definite
    sample_sigma2: bool = True
    n0: float = 1.0               # inverse-gamma prior weight for sigma2

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError(
                f"burn_in must be < iterations, got {self.burn_in} vs {self.iterations}")
        if not 0.0 < self.dr_scale < 1.0:
            raise ConfigError(f"dr_scale must be in (0, 1), got {self.dr_scale}")


@dataclass
class Chain:
    """Recorded DRAM trajectory; stage is 1 or 2 for the accepting stage
    and 0 for iterations where both proposals were rejected."""

    thetas: np.ndarray      # (iterations, 3)
    sigma2s: np.ndarray     # (iterations,)
    accepted: np.ndarray    # (iterations,) bool
    stages: np.ndarray      # (iterations,) int8
    theta0: np.ndarray
    acceptance_rate: float
    config: DramConfig

    def __len__(self) -> int:
        return len(self.thetas)


def _default_initial_cov():
    return np.diag([25.0, 25.0, 0.0625])


def dram_run(target, cfg: DramConfig, rng, theta0=None, sigma2_init: float | None = None) -> Chain:
    """Run the sampler against `target`.

    `target` is either an InferenceProblem (Gaussian likelihood with
    sampled sigma2; requires cfg.sample_sigma2) or, for validation against
    known distributions, any object with `log_density(theta)` and `bounds`
    (used with cfg.sample_sigma2 = False).
    """
    rng = as_rng(rng)
    if cfg.sample_sigma2:
        if not isinstance(target, InferenceProblem):
            raise ConfigError("sigma2 sampling requires an InferenceProblem target")
        if theta0 is None:
            theta0, info = grid_search_init(target)
            if sigma2_init is None:
                sigma2_init = max(info["ss_min"] / target.n_obs, 1e-12)
        elif sigma2_init is None:
            sigma2_init = max(sum_squares(theta0, target) / target.n_obs, 1e-12)
        n_obs = target.n_obs
        ss_eval = lambda th: (sum_squares(th, target) if target.in_bounds(th) else np.inf)
    else:
        if theta0 is None:
            raise ConfigError("theta0 is required when sigma2 sampling is disabled")
        logdens = target.log_density
        bounds = target.bounds
        in_bounds = lambda th: all(lo <= v <= hi for v, (lo, hi) in zip(th, bounds))

    theta0 = np.asarray(theta0, dtype=float)
    dim = len(theta0)
    sigma2 = float(sigma2_init) if cfg.sample_sigma2 else 1.0
    sigma2_prior_scale = sigma2

    def logpost(th, ss=None):
        """(log posterior, ss); ss reused by the sigma2 update."""
        if cfg.sample_sigma2:
            if ss is None:
                ss = ss_eval(th)
            if not np.isfinite(ss):
                return -np.inf, ss
            return _log_likelihood(ss, sigma2, n_obs), ss
        if not in_bounds(th):
            return -np.inf, None
        return float(logdens(th)), None

    lp_cur, ss_cur = logpost(theta0)
    if not np.isfinite(lp_cur):
        raise ConfigError("log posterior is not finite at the initial point")

    cov = cfg.initial_cov if cfg.initial_cov is not None else _default_initial_cov()
    chol = np.linalg.cholesky(cov)

    thetas = np.empty((cfg.iterations, dim))
    sigma2s = np.empty(cfg.iterations)
    accepted = np.zeros(cfg.iterations, dtype=bool)
    stages = np.zeros(cfg.iterations, dtype=np.int8)

    theta = theta0.copy()
    n_accept = 0
    for k in range(cfg.iterations):
        # First stage: symmetric Gaussian random walk.
        z1 = theta + chol @ rng.standard_normal(dim)
        lp_z1, ss_z1 = logpost(z1)
        if _accept(lp_z1 - lp_cur, rng):
            theta, lp_cur, ss_cur = z1, lp_z1, ss_z1
            accepted[k], stages[k] = True, 1
            n_accept += 1
        else:
            # Second stage: shrunken proposal, two-stage acceptance ratio.
            chol2 = np.sqrt(cfg.dr_scale) * chol
            z2 = theta + chol2 @ rng.standard_normal(dim)
            lp_z2, ss_z2 = logpost(z2)
            # The ratio needs 1 - alpha1(z2 -> z1) > 0, i.e. lp_z1 < lp_z2.
            if np.isfinite(lp_z2) and lp_z1 < lp_z2:
                # q1 density ratio N(z1; z2, C) / N(z1; theta, C)
                cinv_d2 = np.linalg.solve(chol, z1 - z2)
                cinv_d1 = np.linalg.solve(chol, z1 - theta)
                log_q = -0.5 * (cinv_d2 @ cinv_d2 - cinv_d1 @ cinv_d1)
                log_num = lp_z2 + log_q + _log1m_exp(lp_z1 - lp_z2)
                log_den = lp_cur + _log1m_exp(lp_z1 - lp_cur)
                if _accept(log_num - log_den, rng):
                    theta, lp_cur, ss_cur = z2, lp_z2, ss_z2
                    accepted[k], stages[k] = True, 2
                    n_accept += 1

        # Conjugate inverse-gamma resample of the observation variance.
        if cfg.sample_sigma2:
            shape = 0.5 * (cfg.n0 + n_obs)
            scale = 0.5 * (cfg.n0 * sigma2_prior_scale + ss_cur)
            sigma2 = scale / rng.gamma(shape)
            lp_cur = _log_likelihood(ss_cur, sigma2, n_obs)

        thetas[k] = theta
        sigma2s[k] = sigma2

        # Covariance adaptation from the full history so far.
        done = k + 1
        if done >= max(cfg.adapt_start, 10) and done % cfg.adapt_interval == 0:
            hist_cov = np.cov(thetas[:done].T)
            adapted = _AM_SCALE * (hist_cov + cfg.eps_cov * np.eye(dim))
            try:
                chol = np.linalg.cholesky(adapted)
            except np.linalg.LinAlgError:
                pass  # keep previous proposal covariance

    return Chain(thetas=thetas, sigma2s=sigma2s, accepted=accepted, stages=stages,
                 theta0=theta0, acceptance_rate=n_accept / cfg.iterations, config=cfg)


def burn_and_summarize(chain: Chain, burn_in: int | None = None) -> dict:
    """Discard the burn-in and report mean, std, and central 95% interval
    per parameter."""
    from .density import credible_interval

    burn_in = chain.config.burn_in if burn_in is None else burn_in
    if burn_in >= len(chain):
        raise ConfigError(f"burn_in {burn_in} >= chain length {len(chain)}")
    kept = chain.thetas[burn_in:]
    summary = {"n_kept": len(kept), "burn_in": burn_in, "parameters": {}}
    for j, name in enumerate(PARAM_NAMES[:kept.shape[1]]):
        lo, hi = credible_interval(kept[:, j], 0.95)
        summary["parameters"][name] = {
            "mean": float(kept[:, j].mean()),
            "std": float(kept[:, j].std(ddof=1)) if len(kept) > 1 else 0.0,
            "ci95": [lo, hi],
        }
    return summary


def write_chain(path, chain: Chain, meta: dict) -> None:
    """Chain CSV (iter,x_c,y_c,m_c,sigma2,stage,accepted) plus sidecar."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "x_c", "y_c", "m_c", "sigma2", "stage", "accepted"])
        for k in range(len(chain)):
            writer.writerow([
                k, fmt(chain.thetas[k, 0]), fmt(chain.thetas[k, 1]), fmt(chain.thetas[k, 2]),
                fmt(chain.sigma2s[k]), int(chain.stages[k]), int(chain.accepted[k]),
            ])
    sidecar = dict(meta)
    sidecar.setdefault("format_version", 1)
    sidecar.setdefault("kind", "dram-chain")
    sidecar["iterations"] = chain.config.iterations
    sidecar["burn_in"] = chain.config.burn_in
    sidecar["acceptance_rate"] = chain.acceptance_rate
    sidecar["theta0"] = [float(v) for v in chain.theta0]
    write_json(_sidecar_path(path), sidecar)


def read_chain(path):
    """Read a chain CSV; returns (thetas, sigma2s, meta)."""
    thetas, sigma2s = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            thetas.append((float(row["x_c"]), float(row["y_c"]), float(row["m_c"])))
            sigma2s.append(float(row["sigma2"]))
    try:
        meta = read_json(_sidecar_path(path))
    except FileNotFoundError:
        meta = {}
    return np.asarray(thetas), np.asarray(sigma2s), meta


def _sidecar_path(path) -> str:
    path = str(path)
    stem = path[:-4] if path.endswith(".csv") else path
    return stem + ".meta.json"
