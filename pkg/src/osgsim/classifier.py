"""Spin-region assignment from atom locations.

A K-component 2D Gaussian mixture is fitted to the measured locations with
expectation-maximization; assignment cells are the highest-weighted-density
regions, region fidelities come from the density overlap (Monte-Carlo
integrated), and errors from bootstrap resampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .rng import TAG_BOOTSTRAP, TAG_GMM, make_rng

ABS_LABELS = ("9/2", "7/2", "5/2", "3/2+1/2")
# Covariance eigenvalue floor, m^2: one object pixel (16 um / 47.8) squared.
# Localized positions are quantized to that grid, so narrower components are
# artifacts; pixel-coincident points would otherwise drive EM into singular
# sliver components that outscore the real cluster structure.
COV_FLOOR = (16e-6 / 47.8) ** 2

# Separation axis of the spin regions in the imaging plane (y).
SEPARATION_AXIS = np.array([0.0, 1.0])


@dataclass
class MixtureModel:
    weights: np.ndarray                  # (K,), sum to 1
    means: np.ndarray                    # (K, 2) meters
    covariances: np.ndarray              # (K, 2, 2)
    log_likelihood: float
    labels: tuple[str, ...] | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.weights.size

    def validate(self) -> None:
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-10:
            raise ValueError("mixture weights do not sum to 1")
        for cov in self.covariances:
            if np.min(np.linalg.eigvalsh(cov)) < COV_FLOOR / 2:
                raise ValueError("covariance below the SPD floor")

    def log_component_densities(self, points: np.ndarray) -> np.ndarray:
        """log(w_k N_k(x)) for (n,2) points -> (n, K)."""
        points = np.atleast_2d(points)
        out = np.empty((points.shape[0], self.k))
        for k in range(self.k):
            out[:, k] = np.log(self.weights[k]) + _log_gauss(
                points, self.means[k], self.covariances[k])
        return out

    def label_order(self) -> np.ndarray:
        """Component indices sorted by descending projection on the separation axis."""
        proj = self.means @ SEPARATION_AXIS
        return np.argsort(-proj, kind="stable")


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = x - mean
    cov_inv = np.linalg.inv(cov)
    _, logdet = np.linalg.slogdet(cov)
    q = np.einsum("ni,ij,nj->n", d, cov_inv, d)
    return -0.5 * (q + logdet + 2 * np.log(2 * np.pi))


def _floor_cov(cov: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, COV_FLOOR)
    return (evecs * evals) @ evecs.T


def _farthest_point_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [points[int(rng.integers(points.shape[0]))]]
    for _ in range(k - 1):
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centers], axis=0)
        centers.append(points[int(np.argmax(d2))])
    return np.array(centers)


def _quantile_init(points: np.ndarray, k: int) -> np.ndarray:
    """Means of k equal-count groups along the separation axis."""
    order = np.argsort(points @ SEPARATION_AXIS, kind="stable")
    return np.array([points[grp].mean(axis=0)
                     for grp in np.array_split(order, k)])


def _em_once(points: np.ndarray, k: int, init_means: np.ndarray,
             max_iter: int, tol_per_point: float) -> MixtureModel:
    n = points.shape[0]
    means = init_means
    cov0 = _floor_cov(np.cov(points.T) / max(k, 1))
    covs = np.array([cov0] * k)
    weights = np.full(k, 1.0 / k)
    ll_prev = -np.inf
    ll_history = []
    model = MixtureModel(weights, means, covs, -np.inf)
    for it in range(max_iter):
        log_wd = model.log_component_densities(points)
        log_norm = logsumexp(log_wd, axis=1)
        ll = float(np.sum(log_norm))
        if ll < ll_prev - 1e-9 * max(abs(ll_prev), 1.0):
            model.diagnostics["monotonicity_violation"] = (ll_prev, ll)
        ll_history.append(ll)
        # Converged when the per-point change stayed below tol for 5 iterations.
        if len(ll_history) > 5 and all(
                abs(ll_history[-i] - ll_history[-i - 1]) < tol_per_point * n
                for i in range(1, 6)):
            break
        resp = np.exp(log_wd - log_norm[:, None])
        nk = resp.sum(axis=0)
        weights = nk / n
        means = (resp.T @ points) / nk[:, None]
        covs = np.empty((k, 2, 2))
        for j in range(k):
            d = points - means[j]
            covs[j] = _floor_cov((resp[:, j, None] * d).T @ d / nk[j])
        model = MixtureModel(weights, means, covs, ll)
        ll_prev = ll
    model.log_likelihood = ll_history[-1]
    model.diagnostics["n_iterations"] = len(ll_history)
    model.diagnostics["ll_history"] = ll_history
    degenerate = [int(j) for j in range(k)
                  if weights[j] < 1e-3
                  or np.min(np.linalg.eigvalsh(covs[j])) <= COV_FLOOR * 1.01]
    if degenerate:
        model.diagnostics["degenerate_components"] = degenerate
    return model


def fit_gmm(locations, k: int, seed: int, n_init: int = 10,
            max_iter: int = 500, tol_per_point: float = 1e-8) -> MixtureModel:
    """EM fit with seeded restarts; keeps the highest-likelihood solution."""
    points = np.atleast_2d(np.asarray(locations, dtype=float))
    if points.shape[0] < 50 * k:
        raise ValueError(f"need at least {50 * k} points for K = {k}")
    best = None
    for restart in range(n_init):
        if restart == 0:
            init = _quantile_init(points, k)
        else:
            rng = make_rng(seed, TAG_GMM, restart)
            init = _farthest_point_init(points, k, rng)
        model = _em_once(points, k, init, max_iter, tol_per_point)
        # Degenerate solutions (vanishing weight or floored covariance) win
        # the likelihood race by collapsing onto coincident points; keep them
        # only if nothing healthy converged.
        if best is None:
            best = model
            continue
        bad = "degenerate_components" in model.diagnostics
        best_bad = "degenerate_components" in best.diagnostics
        if (best_bad and not bad) or (
                bad == best_bad and model.log_likelihood > best.log_likelihood):
            best = model
    best.diagnostics.pop("ll_history", None)
    if k == len(ABS_LABELS):
        order = best.label_order()
        inverse = np.empty(k, dtype=int)
        inverse[order] = np.arange(k)
        best.labels = tuple(ABS_LABELS[inverse[j]] for j in range(k))
    return best


def assign(model: MixtureModel, location) -> str:
    """|m| label of the highest weighted density; ties break toward larger |m|."""
    log_wd = model.log_component_densities(np.atleast_2d(location))[0]
    order = model.label_order()
    best = order[int(np.argmax(log_wd[order]))]
    if model.labels is None:
        return str(best)
    return model.labels[best]


def assign_indices(model: MixtureModel, points: np.ndarray) -> np.ndarray:
    """Component indices of the assignment cells for (n,2) points."""
    log_wd = model.log_component_densities(points)
    order = model.label_order()
    return order[np.argmax(log_wd[:, order], axis=1)]


@dataclass
class RegionReport:
    label: str
    fidelity: float
    mc_stderr: float
    weight: float
    center: tuple[float, float]
    center_distance: float               # from the reference (tweezer) position
    sigma_major: float
    sigma_minor: float
    bootstrap_err: float | None = None


@dataclass
class FidelityReport:
    regions: list[RegionReport]
    n_samples: int
    reference_position: tuple[float, float] = (0.0, 0.0)

    def by_label(self, label: str) -> RegionReport:
        for r in self.regions:
            if r.label == label:
                return r
        raise KeyError(label)


def _sample_mixture(model: MixtureModel, n: int, rng: np.random.Generator):
    comp = rng.choice(model.k, size=n, p=model.weights)
    points = np.empty((n, 2))
    for j in range(model.k):
        sel = comp == j
        if np.any(sel):
            points[sel] = rng.multivariate_normal(
                model.means[j], model.covariances[j], size=int(np.sum(sel)))
    return points, comp


def fidelity(model: MixtureModel, seed: int = 0, n_samples: int = 2_000_000,
             max_samples: int = 32_000_000, target_stderr: float = 1e-4,
             reference_position=(0.0, 0.0)) -> FidelityReport:
    """Per-region fidelity = 1 - (missed + false positives) / region weight.

    Monte-Carlo integration over model samples; the sample count doubles until
    every region's standard error is below ``target_stderr``.
    """
    model.validate()
    rng = make_rng(seed, TAG_GMM, 10_000)
    n_total = 0
    confusion = np.zeros((model.k, model.k))
    n = int(n_samples)
    while True:
        points, true_comp = _sample_mixture(model, n, rng)
        assigned = assign_indices(model, points)
        for j in range(model.k):
            sel = true_comp == j
            confusion[j] += np.bincount(assigned[sel], minlength=model.k)
        n_total += n
        # SE of (missed_k + false_k)/w_k, binomial on the misassigned mass.
        worst = np.max([
            np.sqrt(max(_region_mis(confusion, j) / n_total, 1.0 / n_total)
                    / n_total) / model.weights[j]
            for j in range(model.k)])
        if worst < target_stderr or n_total >= max_samples:
            break
        n = n_total
    regions = []
    ref = np.asarray(reference_position, dtype=float)
    order = model.label_order()
    for rank, j in enumerate(order):
        mis = _region_mis(confusion, j) / n_total
        fid = float(np.clip(1.0 - mis / model.weights[j], 0.0, 1.0))
        se = float(np.sqrt(max(mis / n_total, 1.0 / n_total**2)) / model.weights[j])
        evals = np.linalg.eigvalsh(model.covariances[j])
        label = model.labels[j] if model.labels else str(j)
        regions.append(RegionReport(
            label=label, fidelity=fid, mc_stderr=se, weight=float(model.weights[j]),
            center=tuple(map(float, model.means[j])),
            center_distance=float(np.linalg.norm(model.means[j] - ref)),
            sigma_major=float(np.sqrt(evals[1])), sigma_minor=float(np.sqrt(evals[0]))))
    return FidelityReport(regions=regions, n_samples=n_total,
                          reference_position=tuple(map(float, ref)))


def _region_mis(confusion: np.ndarray, j: int) -> float:
    missed = confusion[j].sum() - confusion[j, j]
    false = confusion[:, j].sum() - confusion[j, j]
    return float(missed + false)


def classification_rate(model: MixtureModel, seed: int = 0,
                        n_samples: int = 1_000_000) -> dict[str, float]:
    """Brute-force per-region fidelity from labeled samples (oracle cross-check)."""
    rng = make_rng(seed, TAG_GMM, 20_000)
    points, true_comp = _sample_mixture(model, int(n_samples), rng)
    assigned = assign_indices(model, points)
    out = {}
    for j in range(model.k):
        missed = np.sum((true_comp == j) & (assigned != j))
        false = np.sum((true_comp != j) & (assigned == j))
        w = np.sum(true_comp == j)
        label = model.labels[j] if model.labels else str(j)
        out[label] = float(1.0 - (missed + false) / max(w, 1))
    return out


def bootstrap_errors(locations, k: int, n_resamples: int, seed: int,
                     n_init: int = 4, fidelity_samples: int = 200_000) -> dict[str, float]:
    """Bootstrap standard errors of the per-region fidelities.

    Components of each refit are matched to the full-data model by nearest
    mean.  Aborts if more than 10% of the refits fail.
    """
    if n_resamples < 100:
        raise ValueError("need at least 100 bootstrap resamples")
    points = np.atleast_2d(np.asarray(locations, dtype=float))
    reference = fit_gmm(points, k, seed, n_init=n_init)
    ref_order = reference.label_order()
    fids: dict[str, list[float]] = {reference.labels[j] if reference.labels else str(j): []
                                    for j in ref_order}
    failures = 0
    for r in range(n_resamples):
        rng = make_rng(seed, TAG_BOOTSTRAP, r)
        idx = rng.integers(points.shape[0], size=points.shape[0])
        try:
            model = fit_gmm(points[idx], k, seed + r + 1, n_init=n_init)
            report = fidelity(model, seed=seed + r + 1, n_samples=fidelity_samples,
                              max_samples=fidelity_samples, target_stderr=np.inf)
        except (ValueError, np.linalg.LinAlgError):
            failures += 1
            continue
        # Nearest-mean matching against the reference fit.
        for region in report.regions:
            d = np.linalg.norm(reference.means - np.asarray(region.center), axis=1)
            jref = int(np.argmin(d))
            label = reference.labels[jref] if reference.labels else str(jref)
            fids[label].append(region.fidelity)
    if failures > 0.1 * n_resamples:
        raise RuntimeError(f"{failures}/{n_resamples} bootstrap refits failed")
    return {label: float(np.std(vals)) if vals else float("nan")
            for label, vals in fids.items()}
