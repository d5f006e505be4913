"""Synthetic ability-model data with known ground truth, shared by tests."""

import numpy as np


def spearman(x, y):
    def ranks(values):
        order = np.argsort(values)
        out = np.empty(len(values))
        out[order] = np.arange(len(values))
        return out

    rx = ranks(np.asarray(x, dtype=float))
    ry = ranks(np.asarray(y, dtype=float))
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx * ry).sum() / np.sqrt((rx**2).sum() * (ry**2).sum()))


def synthetic_responses(seed=1234, n_models=10, n_envs=5, n_items=30):
    """Bernoulli outcomes from a known two-parameter curve.

    Returns (records, theta_true, a_true, b_true) where records are CSV-style
    dicts covering every (model, environment) respondent crossed with every
    item, and theta_true maps (model, environment) to the generating ability.
    """
    rng = np.random.default_rng(seed)
    models = [f"m{k:02d}" for k in range(n_models)]
    environments = [f"env{k}" for k in range(n_envs)]
    mu = rng.normal(0.0, 0.8, n_models)
    mu -= mu.mean()
    nu = rng.normal(0.0, 0.5, n_envs)
    nu -= nu.mean()
    b_true = rng.normal(0.0, 1.0, n_items)
    a_true = np.exp(rng.normal(0.0, 0.3, n_items))

    records = []
    theta_true = {}
    for mi, model in enumerate(models):
        for ei, environment in enumerate(environments):
            ability = mu[mi] + nu[ei] + rng.normal(0.0, 0.6)
            theta_true[(model, environment)] = ability
            for ii in range(n_items):
                p = 1.0 / (1.0 + np.exp(-a_true[ii] * (ability - b_true[ii])))
                records.append(
                    {
                        "respondent_model": model,
                        "respondent_environment": environment,
                        "item_id": f"item{ii:02d}",
                        "item_set": "main",
                        "outcome": "1" if rng.random() < p else "0",
                    }
                )
    return records, theta_true, a_true, b_true
