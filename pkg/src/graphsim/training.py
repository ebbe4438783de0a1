"""Pair sampling, cohort splitting, and the training loop.

Pairs carry (index_a, index_b, match, same_site) where match means the
two subjects share a class label. The sampler balances matching against
non-matching pairs and keeps every subject's appearance count within a
spread of 2, mirroring a training regime where every graph is fed to the
network the same number of times.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError, ValidationError
from .model import SiameseModel, save_checkpoint, siamese_backward, siamese_forward
from .objective import AdamState, LossConfig, adam_step, global_loss, l2_penalty


@dataclass
class PairSet:
    """Subject index pairs with match / same-site flags and usage counts."""

    pairs: np.ndarray  # (N, 4) int: idx_a, idx_b, match, same_site
    usage: np.ndarray  # per-subject appearance counts

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 4)
        self.usage = np.asarray(self.usage, dtype=np.int64)

    def __len__(self) -> int:
        return self.pairs.shape[0]

    @property
    def n_matching(self) -> int:
        return int(self.pairs[:, 2].sum()) if len(self) else 0

    @property
    def n_non_matching(self) -> int:
        return len(self) - self.n_matching


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 200
    learning_rate: float = 0.001
    dropout_keep: float = 0.8
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    checkpoint_interval: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2")


def default_pair_budget(n_subjects: int) -> int:
    """Pairs-per-subject ratio of the reference regime (43000 for 720)."""
    return int(round(43000.0 / 720.0 * n_subjects))


def _labels_sites(cohort) -> tuple[np.ndarray, np.ndarray]:
    labels = np.array([rec.label for rec in cohort], dtype=np.int64)
    sites = np.array([rec.site_id for rec in cohort])
    return labels, sites


def sample_pairs(cohort, pair_budget: int, seed: int = 0) -> PairSet:
    """Greedy balanced pair sampling with uniform subject usage.

    Repeatedly picks the least-used subject and pairs it with the
    least-used eligible partner of whichever pair class (matching or
    non-matching) currently lags, skipping duplicates. Yields a
    matching:non-matching ratio within ~1:1 and a max-minus-min usage
    spread of at most 2 for feasible budgets.
    """
    labels, sites = _labels_sites(cohort)
    n = labels.size
    if pair_budget < 0:
        raise ValidationError("pair_budget must be >= 0")
    if pair_budget == 0:
        return PairSet(pairs=np.empty((0, 4), dtype=np.int64), usage=np.zeros(n, dtype=np.int64))
    for cls in (0, 1):
        if np.sum(labels == cls) < 2:
            raise ValidationError(f"need at least 2 subjects of class {cls}")
    max_pairs = n * (n - 1) // 2
    if pair_budget > max_pairs:
        raise ValidationError(
            f"budget {pair_budget} exceeds the {max_pairs} distinct pairs of {n} subjects"
        )

    rng = np.random.default_rng(seed)
    same_label = labels[:, None] == labels[None, :]
    used = np.zeros((n, n), dtype=bool)
    np.fill_diagonal(used, True)
    usage = np.zeros(n, dtype=np.int64)
    pairs = []
    n_match = 0
    n_non = 0

    def pick_min_usage(mask):
        cand = np.flatnonzero(mask)
        if cand.size == 0:
            return -1
        best = cand[usage[cand] == usage[cand].min()]
        return int(best[rng.integers(best.size)]) if best.size > 1 else int(best[0])

    subj_alive = np.ones(n, dtype=bool)  # still has any unused partner
    while len(pairs) < pair_budget:
        want_match = n_match <= n_non
        placed = False
        blocked = np.zeros(n, dtype=bool)
        while not placed:
            a = pick_min_usage(subj_alive & ~blocked)
            if a < 0:
                raise ValidationError("no eligible pair left; budget infeasible")
            for as_match in (want_match, not want_match):
                eligible = ~used[a] & (same_label[a] == as_match)
                b = pick_min_usage(eligible)
                if b >= 0:
                    used[a, b] = used[b, a] = True
                    usage[a] += 1
                    usage[b] += 1
                    pairs.append((a, b, int(as_match), int(sites[a] == sites[b])))
                    if as_match:
                        n_match += 1
                    else:
                        n_non += 1
                    placed = True
                    break
            if not placed:
                subj_alive[a] = False
                blocked[a] = True

    return PairSet(pairs=np.array(pairs, dtype=np.int64), usage=usage)


def split_cohort(cohort, test_fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Site- and label-stratified train/test split.

    The global test count is round(test_fraction * N), apportioned across
    sites by largest remainder; every site with >= 2 subjects contributes
    to both partitions. Sites with a single subject go wholly to training
    with a warning. Within a site, test slots are spread across labels by
    largest remainder. Deterministic under the seed.
    """
    if not 0.0 <= test_fraction <= 1.0:
        raise ValidationError("test_fraction must be in [0, 1]")
    labels, sites = _labels_sites(cohort)
    n = labels.size
    all_idx = np.arange(n)
    if test_fraction == 0.0:
        return all_idx, np.array([], dtype=np.int64)
    if test_fraction == 1.0:
        return np.array([], dtype=np.int64), all_idx

    rng = np.random.default_rng(seed)
    site_names = sorted(set(sites))
    eligible = []
    for s in site_names:
        members = all_idx[sites == s]
        if members.size < 2:
            warnings.warn(f"site {s!r} has {members.size} subject(s); kept in training")
        else:
            eligible.append((s, members))

    n_eligible = sum(m.size for _, m in eligible)
    target = int(round(test_fraction * n))
    target = min(max(target, len(eligible)), n_eligible - len(eligible))

    quotas = np.array([test_fraction * m.size for _, m in eligible])
    counts = np.floor(quotas).astype(int)
    counts = np.clip(counts, 1, [m.size - 1 for _, m in eligible])
    # largest-remainder adjustment toward the global target
    while counts.sum() != target:
        if counts.sum() < target:
            room = np.array([m.size - 1 - c for (_, m), c in zip(eligible, counts)])
            frac = np.where(room > 0, quotas - counts, -np.inf)
            counts[int(np.argmax(frac))] += 1
        else:
            slack = counts - 1
            frac = np.where(slack > 0, quotas - counts, np.inf)
            counts[int(np.argmin(frac))] -= 1

    test_idx = []
    picked_per_label = np.zeros(2, dtype=int)  # balances remainder ties across sites
    for (s, members), n_test in zip(eligible, counts):
        member_labels = labels[members]
        chosen = []
        label_groups = [members[member_labels == c] for c in (0, 1)]
        lq = np.array([n_test * g.size / members.size for g in label_groups])
        lc = np.floor(lq).astype(int)
        lc = np.minimum(lc, [g.size for g in label_groups])
        picked_per_label += lc
        while lc.sum() < n_test:
            room = np.array([g.size - c for g, c in zip(label_groups, lc)])
            frac = lq - lc
            order = sorted(
                (c for c in (0, 1) if room[c] > 0),
                key=lambda c: (-frac[c], picked_per_label[c], c),
            )
            lc[order[0]] += 1
            picked_per_label[order[0]] += 1
        for g, c in zip(label_groups, lc):
            if c > 0:
                chosen.extend(rng.permutation(g)[:c].tolist())
        test_idx.extend(chosen)

    test_idx = np.array(sorted(test_idx), dtype=np.int64)
    train_idx = np.setdiff1d(all_idx, test_idx)
    return train_idx, test_idx


def all_test_pairs(cohort, test_indices) -> PairSet:
    """All unordered pairs among the given subjects: n(n-1)/2 of them."""
    test_indices = np.asarray(test_indices, dtype=np.int64)
    if test_indices.size < 2:
        raise ValidationError("need at least 2 test subjects")
    labels, sites = _labels_sites(cohort)
    pairs = []
    for pos, i in enumerate(test_indices):
        for j in test_indices[pos + 1 :]:
            pairs.append((i, j, int(labels[i] == labels[j]), int(sites[i] == sites[j])))
    usage = np.zeros(len(cohort), dtype=np.int64)
    usage[test_indices] = test_indices.size - 1
    return PairSet(pairs=np.array(pairs, dtype=np.int64), usage=usage)


def _assemble_batches(pair_set: PairSet, batch_size: int, rng) -> list[np.ndarray]:
    """Stratified batches: every batch holds both pair classes.

    Matching and non-matching pairs are shuffled separately and dealt to
    batches by largest remainder, so the loss stays defined everywhere.
    """
    rows = pair_set.pairs
    match_rows = np.flatnonzero(rows[:, 2] == 1)
    non_rows = np.flatnonzero(rows[:, 2] == 0)
    n_batches = max(1, int(np.ceil(len(pair_set) / batch_size)))
    if min(match_rows.size, non_rows.size) < n_batches:
        raise ValidationError(
            f"cannot give all {n_batches} batches both pair classes "
            f"({match_rows.size} matching, {non_rows.size} non-matching); "
            "use a larger batch_size or more pairs"
        )
    match_rows = rng.permutation(match_rows)
    non_rows = rng.permutation(non_rows)
    batches = [[] for _ in range(n_batches)]
    for group in (match_rows, non_rows):
        base, extra = divmod(group.size, n_batches)
        pos = 0
        for b in range(n_batches):
            take = base + (1 if b < extra else 0)
            batches[b].extend(group[pos : pos + take].tolist())
            pos += take
    return [rng.permutation(np.array(b, dtype=np.int64)) for b in batches]


def train(
    model: SiameseModel,
    signals,
    pair_set: PairSet,
    config: TrainConfig,
    checkpoint_dir=None,
    graph_hash: str = "",
) -> tuple[SiameseModel, list[float]]:
    """Mini-batch training with Adam; returns the model and per-epoch loss.

    Pairs are re-shuffled every epoch (stratified so each batch sees both
    classes). Gradients are reduced sequentially in pair order, keeping
    runs bit-reproducible under a fixed seed. Checkpoints are written
    every config.checkpoint_interval epochs and at the end when
    checkpoint_dir is given.
    """
    if len(pair_set) == 0:
        raise ValidationError("pair set is empty")
    rng = np.random.default_rng(config.seed)
    params = model.parameter_arrays()
    state = AdamState.for_params(params, learning_rate=config.learning_rate)
    trace: list[float] = []
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(config.epochs):
        batch_losses = []
        for batch_no, batch in enumerate(_assemble_batches(pair_set, config.batch_size, rng)):
            rows = pair_set.pairs[batch]
            sims, tapes = [], []
            for idx_a, idx_b, _, same_site in rows:
                sim, tape = siamese_forward(
                    model,
                    signals[idx_a].features,
                    signals[idx_b].features,
                    same_site,
                    mode="train",
                    rng=rng,
                    dropout_keep=config.dropout_keep,
                )
                sims.append(sim)
                tapes.append(tape)
            loss, dloss = global_loss(sims, rows[:, 2] == 1, config.loss)
            l2, dl2 = l2_penalty(model.fc_weights, config.loss.l2_coeff)
            total = loss + l2
            if not np.isfinite(total):
                norms = [float(np.linalg.norm(p)) for p in model.parameter_arrays()]
                raise NumericError(
                    f"non-finite loss {total} at epoch {epoch} batch {batch_no}; "
                    f"parameter norms {norms}"
                )
            grads = [np.zeros_like(p) for p in params]
            for tape, d in zip(tapes, dloss):
                g = siamese_backward(model, tape, float(d))
                for acc, part in zip(grads, g.as_arrays()):
                    acc += part
            grads[-2] += dl2
            params = adam_step(params, grads, state)
            model.set_parameter_arrays(params)
            batch_losses.append(total)
        trace.append(float(np.mean(batch_losses)))
        if ckpt_dir is not None and (epoch + 1) % config.checkpoint_interval == 0:
            save_checkpoint(
                model, ckpt_dir / f"ckpt_epoch{epoch + 1:04d}.json", graph_hash, config.seed
            )
    if ckpt_dir is not None:
        save_checkpoint(model, ckpt_dir / "model.json", graph_hash, config.seed)
    return model, trace


def write_loss_trace(path, trace) -> None:
    """Loss trace CSV: epoch, mean_loss (17 significant digits)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, value in enumerate(trace, start=1):
            writer.writerow([epoch, format(value, ".17g")])
