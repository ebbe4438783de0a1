"""Evaluation protocol: ROC/AUC, k-nn over the learned distance, a
PCA+Euclidean baseline, and permutation tests, with per-site breakdowns.

Distances come from the trained network (1 - similarity, eval mode) over
every unordered pair of test subjects. The baseline projects vectorized
connectivity profiles onto a PCA basis fit on training subjects only and
measures plain Euclidean distance there.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model import SiameseModel, siamese_forward
from .spectral import symmetric_eig
from .training import all_test_pairs

REPORT_SCHEMA_VERSION = 1


def roc_auc(scores, labels) -> tuple[float, np.ndarray]:
    """AUC by the rank (Mann-Whitney) statistic, ties counted 1/2.

    Returns (auc, points) where points rows are (threshold, fpr, tpr) for
    a sweep over the distinct scores, descending; predictions are
    positive where score >= threshold. Higher scores must mean label 1.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValidationError("scores and labels must be equal-length vectors")
    n_pos = int(y.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("labels must contain both classes")

    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    auc = (ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    thresholds = np.unique(s)[::-1]
    points = [(np.inf, 0.0, 0.0)]
    tp = fp = 0
    desc = np.argsort(-s, kind="stable")
    pos_cum = np.cumsum(y[desc])
    all_cum = np.arange(1, s.size + 1)
    idx = 0
    for thr in thresholds:
        while idx < s.size and s[desc[idx]] >= thr:
            idx += 1
        tp = int(pos_cum[idx - 1]) if idx else 0
        fp = (all_cum[idx - 1] - tp) if idx else 0
        points.append((float(thr), fp / n_neg, tp / n_pos))
    return float(auc), np.array(points, dtype=np.float64)


def knn_classify(distances, reference_labels, k: int) -> np.ndarray:
    """Majority vote over the k nearest references for each query row.

    Distance ties break toward the lower reference index; a split vote
    (possible only for even k) falls to label 0.
    """
    d = np.asarray(distances, dtype=np.float64)
    ref = np.asarray(reference_labels).astype(int)
    if d.ndim != 2 or d.shape[1] != ref.size:
        raise ValidationError("distance matrix columns must match reference labels")
    if not 1 <= k <= ref.size:
        raise ValidationError(f"k must be in [1, {ref.size}]")
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    votes = ref[nearest].sum(axis=1)
    return (votes > k - votes).astype(int)


def learned_distance(model: SiameseModel, signal_a, signal_b, same_site: int) -> float:
    """1 - similarity in eval mode; symmetric, in (0, 1)."""
    sim, _ = siamese_forward(model, signal_a, signal_b, same_site, mode="eval")
    return 1.0 - sim


def profile_feature_vectors(signals) -> np.ndarray:
    """Vectorized upper-triangular profiles, one row per subject."""
    r = signals[0].features.shape[0]
    iu, ju = np.triu_indices(r, k=1)
    return np.array([sig.features[iu, ju] for sig in signals])


def pca_euclidean_baseline(train_features, test_features, variance_keep: float = 0.99) -> np.ndarray:
    """Pairwise Euclidean distances between test subjects after PCA.

    The basis is fit on the training features only (mean centering +
    covariance eigendecomposition); enough leading components are kept to
    explain at least variance_keep of the training variance. When the
    feature dimension exceeds the sample count the decomposition runs on
    the Gram matrix, which carries the same nonzero spectrum.
    """
    train = np.asarray(train_features, dtype=np.float64)
    test = np.asarray(test_features, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] < 2:
        raise ValidationError("need at least 2 training subjects for PCA")
    if not 0.0 < variance_keep <= 1.0:
        raise ValidationError("variance_keep must be in (0, 1]")
    n, d = train.shape
    mean = train.mean(axis=0)
    xc = train - mean

    if d <= n:
        cov = xc.T @ xc / (n - 1)
        decomp = symmetric_eig(cov)
        vals = decomp.eigenvalues[::-1]
        vecs = decomp.eigenvectors[:, ::-1]
    else:
        gram = xc @ xc.T / (n - 1)
        decomp = symmetric_eig(gram)
        vals = decomp.eigenvalues[::-1]
        u = decomp.eigenvectors[:, ::-1]
        keep = vals > 1e-12 * max(vals[0], 1.0)
        vals = vals[keep]
        vecs = xc.T @ u[:, keep] / np.sqrt((n - 1) * vals)

    vals = np.clip(vals, 0.0, None)
    total = vals.sum()
    if total <= 0.0:
        raise ValidationError("training features have zero variance")
    cum = np.cumsum(vals) / total
    n_keep = int(np.searchsorted(cum, variance_keep - 1e-12) + 1)
    n_keep = min(n_keep, vecs.shape[1])

    proj = (test - mean) @ vecs[:, :n_keep]
    diff = proj[:, None, :] - proj[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def permutation_test(dists_matching, dists_nonmatching, n_perm: int = 10000, seed: int = 0) -> float:
    """Two-group permutation test on |mean difference|.

    p = (1 + #{permuted statistic >= observed}) / (n_perm + 1).
    """
    a = np.asarray(dists_matching, dtype=np.float64)
    b = np.asarray(dists_nonmatching, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValidationError("both groups must be non-empty")
    if n_perm < 1:
        raise ValidationError("n_perm must be >= 1")
    observed = abs(a.mean() - b.mean())
    pooled = np.concatenate([a, b])
    rng = np.random.default_rng(seed)
    n_a = a.size
    count = 0
    for _ in range(n_perm):
        perm = rng.permutation(pooled)
        stat = abs(perm[:n_a].mean() - perm[n_a:].mean())
        if stat >= observed:
            count += 1
    return (1.0 + count) / (n_perm + 1.0)


@dataclass
class EvalReport:
    """All evaluation outputs; serializes to a versioned JSON document."""

    n_test: int
    n_pairs: int
    n_matching: int
    n_non_matching: int
    auc: dict = field(default_factory=dict)  # metric -> {"all": x, "per_site": {...}}
    knn_accuracy: dict = field(default_factory=dict)
    permutation_p: dict = field(default_factory=dict)
    roc_points: dict = field(default_factory=dict)  # metric -> [[thr, fpr, tpr], ...]
    pairs_table: list = field(default_factory=list)  # rows for the distances CSV

    def to_dict(self) -> dict:
        # the leading ROC threshold is +inf; JSON gets null there
        roc = {
            metric: {
                curve: [
                    [None if not np.isfinite(t) else t, fpr, tpr] for t, fpr, tpr in points
                ]
                for curve, points in curves.items()
            }
            for metric, curves in self.roc_points.items()
        }
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "counts": {
                "n_test": self.n_test,
                "n_pairs": self.n_pairs,
                "n_matching": self.n_matching,
                "n_non_matching": self.n_non_matching,
            },
            "auc": self.auc,
            "knn_accuracy": self.knn_accuracy,
            "permutation_p": self.permutation_p,
            "roc_points": roc,
        }


def _group_metrics(scores, match, n_perm, seed, higher_is_match):
    """AUC + permutation p for one pair grouping; None when degenerate."""
    match = np.asarray(match, dtype=bool)
    if match.all() or not match.any():
        return None, None, None
    oriented = scores if higher_is_match else -scores
    auc, points = roc_auc(oriented, match.astype(int))
    p = permutation_test(scores[match], scores[~match], n_perm=n_perm, seed=seed)
    return auc, points, p


def evaluate(
    model: SiameseModel,
    test_signals,
    train_signals,
    knn_k: int = 3,
    variance_keep: float = 0.99,
    n_perm: int = 10000,
    seed: int = 0,
) -> EvalReport:
    """Full protocol over every unordered pair of test subjects.

    Reports ROC/AUC of matching-vs-non-matching discrimination (learned
    metric and PCA/Euclidean baseline), leave-one-out k-nn classification
    of test subjects under both distances (per site both restricted to
    same-site neighbours and unrestricted), and permutation tests of the
    matching / non-matching distance gap. Pair groupings with a single
    class and sites with too few subjects are skipped with a warning.
    """
    n = len(test_signals)
    if n < 2:
        raise ValidationError("need at least 2 test subjects")
    pair_set = all_test_pairs(test_signals, np.arange(n))
    rows = pair_set.pairs
    labels = np.array([s.label for s in test_signals])
    sites = np.array([s.site_id for s in test_signals])

    sims = np.empty(len(rows))
    for row_no, (i, j, _, same_site) in enumerate(rows):
        sim, _ = siamese_forward(
            model, test_signals[i].features, test_signals[j].features, same_site, mode="eval"
        )
        sims[row_no] = sim
    learned = 1.0 - sims

    baseline_full = pca_euclidean_baseline(
        profile_feature_vectors(train_signals),
        profile_feature_vectors(test_signals),
        variance_keep=variance_keep,
    )
    baseline = np.array([baseline_full[i, j] for i, j, _, _ in rows])

    match = rows[:, 2] == 1
    report = EvalReport(
        n_test=n,
        n_pairs=len(rows),
        n_matching=int(match.sum()),
        n_non_matching=int((~match).sum()),
    )

    if match.all() or not match.any():
        raise ValidationError(
            "test pairs are single-class (matching vs non-matching); "
            "the ROC protocol is undefined for this split"
        )

    for metric, scores, higher_is_match in (
        ("learned", sims, True),
        ("baseline", baseline, False),
    ):
        auc_all, points, p_all = _group_metrics(scores, match, n_perm, seed, higher_is_match)
        report.auc[metric] = {"all": auc_all, "per_site": {}}
        report.permutation_p[metric] = {"all": p_all, "per_site": {}}
        report.roc_points[metric] = {"all": points.tolist()}
        for site in sorted(set(sites)):
            site_rows = np.flatnonzero(
                (sites[rows[:, 0]] == site) & (sites[rows[:, 1]] == site)
            )
            if site_rows.size == 0:
                warnings.warn(f"site {str(site)!r} has < 2 test subjects; skipped")
                continue
            auc_s, _, p_s = _group_metrics(
                scores[site_rows], match[site_rows], n_perm, seed, higher_is_match
            )
            if auc_s is None:
                warnings.warn(f"site {str(site)!r} has single-class test pairs; skipped")
                continue
            report.auc[metric]["per_site"][site] = auc_s
            report.permutation_p[metric]["per_site"][site] = p_s

    # distance matrices for leave-one-out k-nn (diagonal excluded via inf)
    learned_mat = np.zeros((n, n))
    for (i, j, _, _), d in zip(rows, learned):
        learned_mat[i, j] = learned_mat[j, i] = d
    np.fill_diagonal(learned_mat, np.inf)
    baseline_mat = baseline_full.copy()
    np.fill_diagonal(baseline_mat, np.inf)

    for metric, mat in (("learned", learned_mat), ("baseline", baseline_mat)):
        preds = knn_classify(mat, labels, knn_k)
        entry = {
            "all": float(np.mean(preds == labels)),
            "per_site": {},
            "per_site_same_site_neighbors": {},
        }
        for site in sorted(set(sites)):
            members = np.flatnonzero(sites == site)
            if members.size == 0:
                continue
            entry["per_site"][site] = float(np.mean(preds[members] == labels[members]))
            if members.size - 1 >= knn_k:
                sub = mat[np.ix_(members, members)]
                sub_preds = knn_classify(sub, labels[members], knn_k)
                entry["per_site_same_site_neighbors"][site] = float(
                    np.mean(sub_preds == labels[members])
                )
            else:
                warnings.warn(
                    f"site {str(site)!r}: too few subjects for same-site {knn_k}-nn; skipped"
                )
        report.knn_accuracy[metric] = entry

    report.pairs_table = [
        {
            "subject_a": test_signals[i].subject_id,
            "subject_b": test_signals[j].subject_id,
            "learned_distance": float(ld),
            "baseline_distance": float(bd),
            "match": int(m),
            "same_site": int(ss),
        }
        for (i, j, m, ss), ld, bd in zip(rows, learned, baseline)
    ]
    return report


def write_report_json(report: EvalReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_roc_csv(report: EvalReport, path) -> None:
    """One row per ROC point: metric, curve, threshold, fpr, tpr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "curve", "threshold", "fpr", "tpr"])
        for metric, curves in sorted(report.roc_points.items()):
            for curve, points in sorted(curves.items()):
                for thr, fpr, tpr in points:
                    writer.writerow(
                        [metric, curve]
                        + [format(v, ".17g") for v in (thr, fpr, tpr)]
                    )


def write_distances_csv(report: EvalReport, path) -> None:
    cols = ["subject_a", "subject_b", "learned_distance", "baseline_distance", "match", "same_site"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in report.pairs_table:
            writer.writerow(
                [
                    row["subject_a"],
                    row["subject_b"],
                    format(row["learned_distance"], ".17g"),
                    format(row["baseline_distance"], ".17g"),
                    row["match"],
                    row["same_site"],
                ]
            )
