"""Monte Carlo validators for the guarantees behind the robust aggregator.

Three numeric checks back the library's design:

* the error bound of the coordinate-wise trimmed mean under adversarial
  corruption (via a winsorized companion estimator),
* the probability bound on a dimension's sign consistency falling below a
  vote-count threshold,
* the sign of the expected per-client gradient as a function of the weight
  and the feature-label correlation, and its federation-level consequence
  for the trigger dimension's consistency.

Each checker draws seeded trials, measures the failure frequency or sign,
and reports it against the closed-form prediction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .model import sigmoid
from .synthdata import GaussianClientSpec, ScenarioConfig

__all__ = [
    "BoundCheckReport",
    "SignCheckResult",
    "ConsistencyCase",
    "ConsistencyCheckResult",
    "winsorized_mean",
    "check_trimmed_mean_bound",
    "mask_failure_bound",
    "check_mask_failure_bound",
    "expected_gradient_sign",
    "check_gradient_sign",
    "gradient_sign_grid",
    "check_scenario_consistency",
    "first_order_gain",
    "first_order_terms",
]

_TRIAL_STREAM = 311
_CLIENT_SIGN_STREAM = 313


@dataclass
class BoundCheckReport:
    """Outcome of a Monte Carlo bound check, serializable for CI assertions."""

    check: str
    trials: int
    violations: int
    violation_rate: float
    empirical_quantile: float
    theoretical_bound: float
    passed: bool
    parameters: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class SignCheckResult:
    """Measured vs. predicted sign of one client's expected gradient entry."""

    measured_mean: float
    standard_error: float
    measured_sign: int          # 0 when inconclusive (|mean| <= 3 SE)
    predicted_sign: int | None  # None when the theory makes no prediction
    conclusive: bool
    agrees: bool | None         # None when inconclusive or no prediction

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class ConsistencyCase:
    """Predicted federation-level consistency for one (w_k, mu_k) regime."""

    w_k: float
    mu_k: float
    expected_consistency: float
    comparison: str  # "exact" or "lower_bound"


@dataclass
class ConsistencyCheckResult:
    """Measured trigger-dimension consistency q against its case prediction."""

    q: float
    case: ConsistencyCase
    client_signs: list[int]
    inconclusive_clients: list[int]
    passed: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "q": self.q,
                "case": asdict(self.case),
                "client_signs": self.client_signs,
                "inconclusive_clients": self.inconclusive_clients,
                "passed": self.passed,
            },
            sort_keys=True,
        )


def winsorized_mean(xs, ys, alpha: float) -> float:
    """Mean of xs clamped into thresholds taken from ys' order statistics.

    With k = ceil(alpha * N), the thresholds are the k-th smallest and k-th
    largest of ys; every x outside [a, b] is replaced by the nearer bound.
    This companion estimator is used only inside the trimmed-mean bound
    check, not as a production aggregator.
    """
    xs_arr = np.asarray(xs, dtype=float)
    ys_arr = np.asarray(ys, dtype=float)
    if xs_arr.ndim != 1 or xs_arr.shape != ys_arr.shape:
        raise ValueError("xs and ys must be 1-d sequences of equal length")
    n = xs_arr.size
    k = math.ceil(alpha * n)
    if k < 1 or 2 * k >= n:
        raise ValueError("alpha must satisfy 0 < ceil(alpha*N) < N/2")
    ys_sorted = np.sort(ys_arr)
    a, b = ys_sorted[k - 1], ys_sorted[n - k]
    return float(np.clip(xs_arr, a, b).mean())


def check_trimmed_mean_bound(
    N: int,
    eta: float,
    delta: float,
    c: float,
    trials: int,
    seed: int,
    mean: float = 0.0,
    std: float = 1.0,
) -> BoundCheckReport:
    """Stress the trimmed-mean error bound under adversarial corruption.

    Per trial, N Gaussian samples have ceil(eta*N) entries replaced by huge
    values of alternating sign (+-1e6). With alpha = 8*eta + 12*log(4/delta)/N
    the trimmed mean must satisfy

        |mean_hat - mean| <= 10*sqrt(alpha)*std + 2*c*std + alpha*|a + b - 2*mean_hat|

    except with probability at most 1 - c^-4 * (1 - 4*exp(-alpha*N/12)).
    a and b are the k-th smallest / k-th largest order statistics of the
    corrupted sample with k = ceil(alpha*N); std is the true population std.
    """
    if N < 2 or trials < 1:
        raise ValueError("need N >= 2 and trials >= 1")
    if c <= 1:
        raise ValueError("c must exceed 1 for an informative bound")
    if not 0 <= eta:
        raise ValueError("eta must be nonnegative")
    alpha = 8.0 * eta + 12.0 * math.log(4.0 / delta) / N
    k = math.ceil(alpha * N)
    if k < 1 or N - 2 * k < 1:
        raise ValueError(f"alpha={alpha:.4f} out of range: trimming {k} per tail of {N}")
    num_corrupt = math.ceil(eta * N)

    rng = np.random.default_rng(np.random.SeedSequence([seed, _TRIAL_STREAM]))
    X = rng.normal(mean, std, size=(trials, N))
    if num_corrupt > 0:
        spikes = np.where(np.arange(num_corrupt) % 2 == 0, 1e6, -1e6)
        X[:, :num_corrupt] = spikes
    S = np.sort(X, axis=1)
    trimmed = S[:, k:N - k].mean(axis=1)
    a = S[:, k - 1]
    b = S[:, N - k]
    rhs = 10.0 * math.sqrt(alpha) * std + 2.0 * c * std + alpha * np.abs(a + b - 2.0 * trimmed)
    err = np.abs(trimmed - mean)
    violations = int((err > rhs).sum())
    allowed = 1.0 - c ** (-4) * (1.0 - 4.0 * math.exp(-alpha * N / 12.0))
    rate = violations / trials
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, err / rhs, np.where(err > 0, np.inf, 0.0))
    quantile = float(np.quantile(ratio, min(1.0, max(0.0, 1.0 - allowed))))
    return BoundCheckReport(
        check="trimmed_mean_error_bound",
        trials=trials,
        violations=violations,
        violation_rate=rate,
        empirical_quantile=quantile,
        theoretical_bound=allowed,
        passed=rate <= allowed,
        parameters={
            "N": N,
            "eta": eta,
            "delta": delta,
            "c": c,
            "alpha": alpha,
            "trim_per_tail": k,
            "corrupted_per_trial": num_corrupt,
            "mean": mean,
            "std": std,
            "seed": seed,
        },
    )


def mask_failure_bound(
    N: int,
    num_malicious: int,
    tau_count: int,
    phi: float = None,
    flip_prob: float = None,
) -> tuple[float, float]:
    """Upper bound on P(sign consistency below tau), in raw vote counts.

    Evaluates sum_{i=N-2N'-tau}^{min(N, N-2N'+tau)} C(N-N', i) * p^i with
    p = phi^-2 for a nonzero expectation-to-std ratio phi. When phi is zero
    the caller must instead supply ``flip_prob``, the probability that a
    benign estimate's sign matches the adversarial one. Returns the raw sum
    and its clamp into [0, 1].
    """
    if not 0 <= num_malicious < N / 2:
        raise ValueError("need 0 <= num_malicious < N/2")
    if tau_count < 0:
        raise ValueError("tau_count must be a nonnegative vote count")
    if (phi is None) == (flip_prob is None):
        raise ValueError("supply exactly one of phi or flip_prob")
    if phi is not None:
        if phi == 0:
            raise ValueError("phi must be nonzero; pass flip_prob for the zero-mean case")
        p = float(phi) ** (-2)
    else:
        if not 0 <= flip_prob <= 1:
            raise ValueError("flip_prob must lie in [0, 1]")
        p = float(flip_prob)
    lo = N - 2 * num_malicious - tau_count
    hi = min(N, N - 2 * num_malicious + tau_count)
    raw = sum(math.comb(N - num_malicious, i) * p ** i for i in range(max(0, lo), hi + 1))
    return raw, min(1.0, raw)


def check_mask_failure_bound(
    N: int,
    num_malicious: int,
    tau_count: int,
    trials: int,
    seed: int,
    phi: float = None,
    flip_prob: float = None,
) -> BoundCheckReport:
    """Monte Carlo check of the sign-consistency failure bound.

    Benign per-client values are drawn from Normal(phi, 1) (ratio of mean to
    std equal to phi); with ``flip_prob`` they are drawn as +-1 votes with
    that sign-flip probability instead. The N' adversarial values always
    vote the opposite sign. The empirical frequency of
    |sum_i sign(g_i)| < tau_count must not exceed the clamped bound whenever
    that bound is informative (< 1).
    """
    raw, clamped = mask_failure_bound(N, num_malicious, tau_count, phi=phi, flip_prob=flip_prob)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _TRIAL_STREAM]))
    benign = N - num_malicious
    if phi is not None:
        values = rng.normal(phi, 1.0, size=(trials, benign))
        votes = np.sign(values)
    else:
        flips = rng.random(size=(trials, benign)) < flip_prob
        votes = np.where(flips, -1.0, 1.0)
    counts = votes.sum(axis=1) - num_malicious
    below = np.abs(counts) < tau_count
    violations = int(below.sum())
    rate = violations / trials
    passed = clamped >= 1.0 or rate <= clamped
    return BoundCheckReport(
        check="sign_consistency_failure_bound",
        trials=trials,
        violations=violations,
        violation_rate=rate,
        empirical_quantile=rate,
        theoretical_bound=clamped,
        passed=passed,
        parameters={
            "N": N,
            "num_malicious": num_malicious,
            "tau_count": tau_count,
            "phi": phi,
            "flip_prob": flip_prob,
            "raw_bound": raw,
            "sum_lower_limit": N - 2 * num_malicious - tau_count,
            "sum_upper_limit": min(N, N - 2 * num_malicious + tau_count),
            "seed": seed,
        },
    )


def expected_gradient_sign(mu_k: float, w_k: float) -> int | None:
    """Predicted sign of the expected gradient entry for one client.

    Under the label-flipping Gaussian data model the expected logistic-loss
    gradient w.r.t. w_k points opposite the feature-label correlation
    whenever w_k * mu_k <= 0 (so descent grows w_k toward alignment), and
    carries the sign of w_k itself when mu_k = 0 (so descent shrinks w_k).
    The aligned regime w_k * mu_k > 0 is indefinite: returns None.
    """
    if mu_k == 0:
        return int(np.sign(w_k))
    if w_k * mu_k <= 0:
        return -int(np.sign(mu_k))
    return None


def check_gradient_sign(
    spec: GaussianClientSpec, w, k: int, n_samples: int, seed
) -> SignCheckResult:
    """Monte Carlo estimate of sign(E[grad_k]) for one client at weights w.

    The estimate is conclusive when |mean| > 3 standard errors; otherwise
    the measured sign is reported as 0 and no pass/fail verdict is given
    unless the prediction itself is 0 (where inconclusive-by-construction
    counts as agreement).
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    w_arr = np.asarray(w, dtype=float)
    rng = np.random.default_rng(seed)
    y = (rng.random(n_samples) < spec.label_balance).astype(int)
    X = rng.standard_normal((n_samples, spec.mu.shape[0])) * spec.sigma
    X += (2 * y[:, None] - 1) * spec.mu
    g = X[:, k] * (sigmoid(X @ w_arr) - y)
    mean = float(g.mean())
    se = float(g.std(ddof=1) / math.sqrt(n_samples))
    conclusive = abs(mean) > 3 * se
    measured = int(np.sign(mean)) if conclusive else 0
    predicted = expected_gradient_sign(float(spec.mu[k]), float(w_arr[k]))
    if predicted is None:
        agrees = None
    elif predicted == 0:
        agrees = not conclusive
    elif not conclusive:
        agrees = None
    else:
        agrees = measured == predicted
    return SignCheckResult(
        measured_mean=mean,
        standard_error=se,
        measured_sign=measured,
        predicted_sign=predicted,
        conclusive=conclusive,
        agrees=agrees,
    )


def gradient_sign_grid(
    mu_values, w_values, n_samples: int, seed: int, sigma: float = 1.0
) -> list[tuple[float, float, SignCheckResult]]:
    """Sign checks over a (mu_k, w_k) grid, restricted to the predicted cases.

    Only cells with mu_k = 0 or w_k * mu_k <= 0 are evaluated (elsewhere the
    sign is genuinely indefinite). Uses a single-feature client model.
    """
    results = []
    cell = 0
    for mu in mu_values:
        for w in w_values:
            if not (mu == 0 or w * mu <= 0):
                continue
            spec = GaussianClientSpec(client_id=0, mu=[float(mu)], sigma=[float(sigma)])
            res = check_gradient_sign(
                spec, [float(w)], 0, n_samples,
                np.random.SeedSequence([seed, _TRIAL_STREAM, cell]),
            )
            results.append((float(mu), float(w), res))
            cell += 1
    return results


def _consistency_case(scenario: ScenarioConfig, w_k: float) -> ConsistencyCase:
    k = scenario.trigger.feature_index
    mal = [c for c in scenario.clients if c.is_malicious]
    if not mal:
        raise ValueError("scenario has no malicious clients to analyze")
    benign = scenario.benign_clients()
    if any(c.mu[k] != 0 for c in benign):
        raise ValueError("consistency analysis expects benign trigger-feature mu = 0")
    mu_k = float(mal[0].mu[k])
    frac = scenario.num_malicious / scenario.num_clients
    if w_k == 0:
        return ConsistencyCase(w_k, mu_k, frac, "exact")
    if w_k * mu_k < 0:
        return ConsistencyCase(w_k, mu_k, 1.0, "exact")
    return ConsistencyCase(w_k, mu_k, 1.0 - frac, "lower_bound")


def check_scenario_consistency(
    scenario: ScenarioConfig, w, n_samples: int, seed: int
) -> ConsistencyCheckResult:
    """Measure the trigger dimension's consistency q across a federation.

    Each client's expected gradient sign is estimated by Monte Carlo on
    fresh draws from its data model (|mean| <= 3 SE votes 0), then
    q = |mean of signs| is compared with the regime prediction: exactly
    N'/N at w_k = 0, exactly 1 when w_k opposes the trigger correlation,
    and at least 1 - N'/N in the aligned regime.
    """
    w_arr = np.asarray(w, dtype=float)
    k = scenario.trigger.feature_index
    case = _consistency_case(scenario, float(w_arr[k]))
    signs: list[int] = []
    inconclusive: list[int] = []
    for i, spec in enumerate(scenario.clients):
        res = check_gradient_sign(
            spec, w_arr, k, n_samples,
            np.random.SeedSequence([seed, _CLIENT_SIGN_STREAM, i]),
        )
        signs.append(res.measured_sign)
        if not res.conclusive:
            inconclusive.append(spec.client_id)
    q = abs(sum(signs)) / len(signs)
    if case.comparison == "exact":
        passed = abs(q - case.expected_consistency) < 1e-12
    else:
        passed = q >= case.expected_consistency - 1e-12
    return ConsistencyCheckResult(
        q=q,
        case=case,
        client_signs=signs,
        inconclusive_clients=inconclusive,
        passed=passed,
    )


def first_order_gain(update, expected_gradient) -> float:
    """First-order loss change of applying ``update``: grad . update.

    Negative values mean the update is a descent direction for the client
    whose expected gradient is supplied.
    """
    u = np.asarray(update, dtype=float)
    g = np.asarray(expected_gradient, dtype=float)
    if u.shape != g.shape:
        raise ValueError("update and gradient must share a shape")
    return float(g @ u)


def first_order_terms(update, expected_gradient) -> np.ndarray:
    """Per-dimension products grad_k * update_k, for sign diagnostics."""
    u = np.asarray(update, dtype=float)
    g = np.asarray(expected_gradient, dtype=float)
    if u.shape != g.shape:
        raise ValueError("update and gradient must share a shape")
    return g * u
