"""Two-parameter logistic ability model over (model, environment) respondents.

P(correct) = sigmoid(a_i * (theta_j - b_i)) with hierarchical priors:
theta_j ~ N(mu_model + nu_environment, sigma_theta^2), b_i ~ N(0, 2^2),
log a_i ~ N(0, 0.5^2). The location split between theta, mu and nu is a
gauge freedom; a soft penalty keeps sum(mu) and sum(nu) near zero during
optimization and the reported parameters are shifted to make both sums
exactly zero, which leaves every predicted probability unchanged.

Each item set is fit on its own; abilities are only comparable within one.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

B_PRIOR_SD = 2.0
LOG_A_PRIOR_SD = 0.5
CENTERING_SD = 0.1

CSV_COLUMNS = (
    "respondent_model",
    "respondent_environment",
    "item_id",
    "item_set",
    "outcome",
)


class FitError(RuntimeError):
    """Optimization produced a non-finite value; carries the iteration index."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class Respondent:
    model: str
    environment: str


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    item_set: str
    respondents: tuple[Respondent, ...]
    items: tuple[str, ...]
    outcomes: np.ndarray  # (J, I) float; NaN marks an unattempted item

    def __post_init__(self) -> None:
        j, i = self.outcomes.shape
        if j != len(self.respondents) or i != len(self.items):
            raise ValueError("outcome matrix shape does not match labels")
        observed = self.outcomes[~np.isnan(self.outcomes)]
        if not np.isin(observed, (0.0, 1.0)).all():
            raise ValueError("outcomes must be 0, 1 or missing")

    @property
    def models(self) -> tuple[str, ...]:
        seen = dict.fromkeys(r.model for r in self.respondents)
        return tuple(seen)

    @property
    def environments(self) -> tuple[str, ...]:
        seen = dict.fromkeys(r.environment for r in self.respondents)
        return tuple(seen)


def response_matrix(records: Iterable[Mapping], item_set: str) -> ResponseMatrix:
    """Assemble one item set's matrix from row records.

    Respondent and item order follow first appearance. The same
    (respondent, item) pair twice is an error rather than a silent overwrite.
    """
    respondents: dict[Respondent, int] = {}
    items: dict[str, int] = {}
    cells: dict[tuple[int, int], float] = {}
    for row in records:
        if row["item_set"] != item_set:
            continue
        who = Respondent(row["respondent_model"], row["respondent_environment"])
        j = respondents.setdefault(who, len(respondents))
        i = items.setdefault(row["item_id"], len(items))
        if (j, i) in cells:
            raise ValueError(
                f"duplicate outcome for {who} on item {row['item_id']!r} "
                f"in item set {item_set!r}"
            )
        outcome = float(row["outcome"])
        cells[(j, i)] = outcome
    matrix = np.full((len(respondents), len(items)), np.nan)
    for (j, i), value in cells.items():
        matrix[j, i] = value
    return ResponseMatrix(
        item_set=item_set,
        respondents=tuple(respondents),
        items=tuple(items),
        outcomes=matrix,
    )


def load_responses(source) -> dict[str, ResponseMatrix]:
    """Read outcome rows from a CSV path, file object or line iterable."""
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            rows = list(csv.DictReader(fh))
    elif isinstance(source, io.TextIOBase):
        rows = list(csv.DictReader(source))
    else:
        rows = list(csv.DictReader(iter(source)))
    if rows and not set(CSV_COLUMNS) <= set(rows[0]):
        missing = sorted(set(CSV_COLUMNS) - set(rows[0]))
        raise ValueError(f"response CSV is missing columns: {missing}")
    item_sets = dict.fromkeys(row["item_set"] for row in rows)
    return {name: response_matrix(rows, name) for name in item_sets}


# --- posterior --------------------------------------------------------------


def _indexers(matrix: ResponseMatrix):
    models = matrix.models
    environments = matrix.environments
    model_idx = np.array([models.index(r.model) for r in matrix.respondents])
    env_idx = np.array([environments.index(r.environment) for r in matrix.respondents])
    return models, environments, model_idx, env_idx


def _split(vector: np.ndarray, j: int, i: int, m: int, e: int):
    theta = vector[:j]
    b = vector[j : j + i]
    log_a = vector[j + i : j + 2 * i]
    mu = vector[j + 2 * i : j + 2 * i + m]
    nu = vector[j + 2 * i + m :]
    return theta, b, log_a, mu, nu


def neg_log_posterior(
    matrix: ResponseMatrix, vector: np.ndarray, sigma_theta: float = 1.0
) -> tuple[float, np.ndarray]:
    """Objective value and gradient at one packed parameter vector.

    Packing order: theta (per respondent), b (per item), log a (per item),
    mu (per model), nu (per environment).
    """
    j, i = matrix.outcomes.shape
    models, environments, model_idx, env_idx = _indexers(matrix)
    theta, b, log_a, mu, nu = _split(vector, j, i, len(models), len(environments))

    mask = ~np.isnan(matrix.outcomes)
    y = np.nan_to_num(matrix.outcomes)
    a = np.exp(log_a)
    z = a[None, :] * (theta[:, None] - b[None, :])
    point = np.where(mask, np.logaddexp(0.0, z) - y * z, 0.0)

    prior_mean = mu[model_idx] + nu[env_idx]
    resid = (theta - prior_mean) / sigma_theta**2
    value = (
        point.sum()
        + 0.5 * (((theta - prior_mean) / sigma_theta) ** 2).sum()
        + 0.5 * ((b / B_PRIOR_SD) ** 2).sum()
        + 0.5 * ((log_a / LOG_A_PRIOR_SD) ** 2).sum()
        + 0.5 * (mu.sum() / CENTERING_SD) ** 2
        + 0.5 * (nu.sum() / CENTERING_SD) ** 2
    )

    r = np.where(mask, _sigmoid(z) - y, 0.0)
    g_theta = (r * a[None, :]).sum(axis=1) + resid
    g_b = -(r * a[None, :]).sum(axis=0) + b / B_PRIOR_SD**2
    g_log_a = (r * z).sum(axis=0) + log_a / LOG_A_PRIOR_SD**2
    g_mu = np.bincount(model_idx, weights=-resid, minlength=len(models))
    g_mu = g_mu + mu.sum() / CENTERING_SD**2
    g_nu = np.bincount(env_idx, weights=-resid, minlength=len(environments))
    g_nu = g_nu + nu.sum() / CENTERING_SD**2
    gradient = np.concatenate([g_theta, g_b, g_log_a, g_mu, g_nu])
    return float(value), gradient


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    expz = np.exp(z[~pos])
    out[~pos] = expz / (1.0 + expz)
    return out


def prob_correct(a, b, theta):
    """Success probability of the two-parameter curve."""
    return _sigmoid(np.asarray(a * (np.asarray(theta) - b), dtype=float))


# --- fitting ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IRTFit:
    item_set: str
    respondents: tuple[Respondent, ...]
    items: tuple[str, ...]
    models: tuple[str, ...]
    environments: tuple[str, ...]
    theta: np.ndarray
    difficulty: np.ndarray
    discrimination: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    converged: bool
    n_iter: int
    grad_max: float

    @property
    def theta_by_respondent(self) -> dict[Respondent, float]:
        return dict(zip(self.respondents, self.theta.tolist()))

    @property
    def mu_by_model(self) -> dict[str, float]:
        return dict(zip(self.models, self.mu.tolist()))

    @property
    def nu_by_environment(self) -> dict[str, float]:
        return dict(zip(self.environments, self.nu.tolist()))

    @property
    def item_params(self) -> dict[str, tuple[float, float]]:
        return {
            item: (float(a), float(b))
            for item, a, b in zip(self.items, self.discrimination, self.difficulty)
        }


def fit_map(
    matrix: ResponseMatrix,
    *,
    sigma_theta: float = 1.0,
    max_iter: int = 20000,
    tol: float = 1e-6,
) -> IRTFit:
    """Maximum a posteriori fit by full-batch gradient descent.

    Steps are backtracked until the objective decreases (Armijo
    sufficient-decrease rule); convergence is declared when the gradient
    max-norm falls under ``tol``. All parameters start at zero. A non-finite
    objective or gradient raises FitError with the iteration it appeared at.
    """
    j, i = matrix.outcomes.shape
    if j == 0 or i == 0:
        raise ValueError("response matrix is empty")
    models, environments, _, _ = _indexers(matrix)
    vector = np.zeros(j + 2 * i + len(models) + len(environments))

    value, gradient = neg_log_posterior(matrix, vector, sigma_theta)
    step = 1.0
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        if not np.isfinite(value) or not np.isfinite(gradient).all():
            raise FitError(f"non-finite objective at iteration {iteration}", iteration)
        if np.abs(gradient).max() < tol:
            converged = True
            break
        step = min(step * 2.0, 1.0)
        slope = float(gradient @ gradient)
        while True:
            candidate = vector - step * gradient
            trial_value, trial_gradient = neg_log_posterior(
                matrix, candidate, sigma_theta
            )
            if np.isfinite(trial_value) and trial_value <= value - 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-14:
                break
        if step < 1e-14:
            break
        vector, value, gradient = candidate, trial_value, trial_gradient

    theta, b, log_a, mu, nu = _split(vector, j, i, len(models), len(environments))
    theta, b, mu, nu = theta.copy(), b.copy(), mu.copy(), nu.copy()
    # fix the location gauge exactly; theta - b and theta - mu - nu unchanged
    shift_mu = mu.mean()
    shift_nu = nu.mean()
    mu -= shift_mu
    nu -= shift_nu
    theta -= shift_mu + shift_nu
    b -= shift_mu + shift_nu
    return IRTFit(
        item_set=matrix.item_set,
        respondents=matrix.respondents,
        items=matrix.items,
        models=models,
        environments=environments,
        theta=theta,
        difficulty=b,
        discrimination=np.exp(log_a),
        mu=mu,
        nu=nu,
        converged=converged,
        n_iter=iteration,
        grad_max=float(np.abs(gradient).max()),
    )


def fit_all(
    matrices: Mapping[str, ResponseMatrix], **kwargs
) -> dict[str, IRTFit]:
    """Independent fits, one per item set."""
    return {name: fit_map(matrix, **kwargs) for name, matrix in matrices.items()}


def standardize(values) -> np.ndarray:
    """Center and scale by the population standard deviation."""
    array = np.asarray(values, dtype=float)
    spread = array.std()
    if spread == 0.0:
        raise ValueError("cannot standardize values with no variance")
    return (array - array.mean()) / spread
