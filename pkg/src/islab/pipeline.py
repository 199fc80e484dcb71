"""The iterative protocol: encoder training, GAN training, mining, evaluation.

Each round ``i`` (1-based) draws from its own generator seeded by
``(seed, i)``, so resuming from the checkpoint of round ``i - 1`` replays
round ``i`` exactly.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import AugmentSpec, Dataset, augment, gen_manifold, load_cifar10
from .evaluation import (
    EvalReport, additions_precision, default_knn_k, euclidean_precision, knn_accuracy,
    linear_probe, mining_precision,
)
from .gan import GanPair, init_gan, train_gan
from .losses import hard_positive_indices, total_loss
from .mining import MiningReport, mine_all
from .nn import (
    ConfigurationError, Net, OptimizerState, backward, build_mlp, forward,
    l2_normalize, l2_normalize_backward, load_arrays, net_from_arrays, net_to_arrays,
    opt_from_arrays, opt_step, opt_to_arrays, save_arrays, sgd,
)
from .similarity import MemoryBank, SimilarityState, init_identity

logger = logging.getLogger(__name__)

TEST_SEED_OFFSET = 1_000_003


def load_datasets(config: RunConfig) -> tuple[Dataset, Dataset]:
    """Training set and a held-out evaluation set drawn from a separate seed."""
    if config.dataset == "cifar10":
        return load_cifar10(config.cifar_dir, "train"), load_cifar10(config.cifar_dir, "test")
    train = gen_manifold(config.dataset, config.n_per_class, config.noise, config.seed)
    test = gen_manifold(config.dataset, config.n_test_per_class, config.noise,
                        config.seed + TEST_SEED_OFFSET)
    return train, test


def round_rng(seed: int, round_index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, round_index, stream])


@dataclass
class Run:
    """Everything that evolves during training."""

    config: RunConfig
    encoder: Net
    encoder_opt: OptimizerState
    gan: GanPair
    state: SimilarityState
    bank: MemoryBank
    input_mean: np.ndarray
    input_std: np.ndarray
    round: int = 0

    def prepare(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.input_mean) / self.input_std

    def encode(self, X, chunk: int = 4096) -> np.ndarray:
        """Unit-norm features for raw inputs ``X`` with the current encoder."""
        Xp = self.prepare(X)
        return np.vstack([l2_normalize(self.encoder(Xp[s:s + chunk]))
                          for s in range(0, len(Xp), chunk)])


def init_run(config: RunConfig, train: Dataset) -> Run:
    rng = round_rng(config.seed, 0)
    X = train.samples
    if config.standardize_inputs:
        mean, std = X.mean(axis=0), X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
    else:
        mean, std = np.zeros(X.shape[1]), np.ones(X.shape[1])
    encoder = build_mlp([train.dim, *config.encoder_hidden, config.feature_dim], rng=rng)
    gan = init_gan(config.feature_dim, rng, config.gan_hidden, config.alpha,
                   config.gan_lr, config.non_saturating)
    bank = MemoryBank.random(train.N, config.feature_dim, rng, config.eta, config.renorm_bank)
    state = init_identity(train.N, symmetric=config.symmetric)
    return Run(config, encoder, sgd(config.base_lr, config.momentum), gan, state, bank,
               mean, std)


# ------------------------------------------------------------------ phases


def train_encoder(run: Run, X, rng, log=None) -> list[dict]:
    """One round of minibatch SGD on ``L1 + lam * L2`` with bank updates."""
    cfg = run.config
    schedule = cfg.lr_schedule()
    aug = AugmentSpec("vector_jitter", jitter_sigma=cfg.augment_sigma)
    Xp = run.prepare(X)
    N = len(Xp)
    rows = []
    for epoch in range(cfg.epochs_per_round):
        run.encoder_opt.lr = schedule.lr_at(epoch, cfg.epochs_per_round)
        order = rng.permutation(N)
        sums = np.zeros(3)
        for start in range(0, N, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            z, tape = forward(run.encoder, Xp[idx])
            F = l2_normalize(z)
            bank = run.bank.features
            F_hard = aug_rows = None
            if cfg.hpe_enabled:
                hard = hard_positive_indices(F, idx, run.state, bank)
                aug_rows = np.flatnonzero(hard < 0)
                F_hard = bank[np.maximum(hard, 0)].copy()
                if len(aug_rows):
                    z_aug, tape_aug = forward(run.encoder, augment(Xp[idx[aug_rows]], aug, rng))
                    F_hard[aug_rows] = l2_normalize(z_aug)
            total, l1, l2, dF, dH = total_loss(F, idx, run.state, bank, cfg.tau, cfg.lam,
                                               F_hard, reduction="mean")
            grads, _ = backward(run.encoder, tape, l2_normalize_backward(z, dF))
            if dH is not None and len(aug_rows):
                g_aug, _ = backward(run.encoder, tape_aug,
                                    l2_normalize_backward(z_aug, dH[aug_rows]))
                grads = [a + b for a, b in zip(grads, g_aug)]
            opt_step(run.encoder_opt, run.encoder.params(), grads, run.encoder)
            run.bank.update(idx, F)
            sums += np.array([l1, l2, total]) * len(idx)
        l1, l2, total = sums / N
        row = {"round": run.round, "epoch": epoch, "l1": l1, "l2": l2, "total": total,
               "lr": run.encoder_opt.lr}
        rows.append(row)
        if log is not None:
            log(row)
    return rows


def run_round(run: Run, train: Dataset, train_log=None, gan_log=None) -> MiningReport:
    """Encoder phase, then GAN on a frozen bank snapshot, then mining."""
    cfg = run.config
    run.round += 1
    if cfg.reset_encoder_opt:
        run.encoder_opt = sgd(cfg.base_lr, cfg.momentum)
    if cfg.reinit_similarity:
        run.state = init_identity(run.state.N, symmetric=cfg.symmetric)
    train_encoder(run, train.samples, round_rng(cfg.seed, run.round, 0), train_log)

    snapshot = run.bank.snapshot()
    gan_rng = round_rng(cfg.seed, run.round, 1)
    if cfg.gan_reinit:
        run.gan = init_gan(cfg.feature_dim, gan_rng, cfg.gan_hidden, cfg.alpha,
                           cfg.gan_lr, cfg.non_saturating)
    log = None if gan_log is None else (lambda e, d, g: gan_log(run.round, e, d, g))
    train_gan(run.gan, run.state, snapshot, cfg.gan_config(), gan_rng, log)

    run.state.round = run.round
    if run.gan.opt_d.step_count == 0:
        # an untrained discriminator's confidence carries no information
        report = MiningReport(round=run.round)
    else:
        _, report = mine_all(run.state, snapshot, run.gan, cfg.m, cfg.r, cfg.h,
                             round_rng(cfg.seed, run.round, 2), frozen=cfg.frozen_pass,
                             max_add=cfg.max_add_per_anchor)
    report.round = run.round
    return report


def evaluate(run: Run, train: Dataset, test: Dataset) -> EvalReport:
    """kNN and linear-probe accuracy on held-out data, plus positive-set precision."""
    cfg = run.config
    y_train, y_test = train.eval_labels(), test.eval_labels()
    f_train, f_test = run.encode(train.samples), run.encode(test.samples)
    k = cfg.knn_k or default_knn_k(len(f_train))
    lin = None
    if cfg.probe_epochs > 0:
        lin = linear_probe(f_train, y_train, f_test, y_test, cfg.probe_epochs, cfg.probe_lr,
                           seed=cfg.seed)
    return EvalReport(
        round=run.round,
        knn_accuracy=knn_accuracy(f_train, y_train, f_test, y_test, k, cfg.knn_tau),
        linear_accuracy=lin,
        mining_precision_by_setsize=mining_precision(run.state, y_train),
        euclidean_precision=euclidean_precision(run.bank.features, y_train, cfg.euclid_k),
        mean_positive_set_size=float(run.state.sizes().mean()),
    )


# -------------------------------------------------------------- checkpoints


def save_run(run: Run, path) -> None:
    arrays, meta = {}, {"config": run.config.to_dict(), "round": run.round,
                        "state_round": run.state.round}
    for prefix, net in (("encoder", run.encoder), ("G", run.gan.G), ("D", run.gan.D)):
        a, meta[prefix] = net_to_arrays(net, prefix)
        arrays.update(a)
    for prefix, opt in (("encoder_opt", run.encoder_opt), ("G_opt", run.gan.opt_g),
                        ("D_opt", run.gan.opt_d)):
        a, meta[prefix] = opt_to_arrays(opt, prefix)
        arrays.update(a)
    arrays["state"] = np.packbits(run.state.matrix, axis=1)
    arrays["bank"] = run.bank.features
    arrays["input_mean"] = run.input_mean
    arrays["input_std"] = run.input_std
    save_arrays(path, arrays, meta)


def load_run(path) -> Run:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    arrays, meta = load_arrays(path)
    cfg = RunConfig.from_dict(meta["config"])
    nets = {p: net_from_arrays(arrays, meta[p], p) for p in ("encoder", "G", "D")}
    opts = {p: opt_from_arrays(arrays, meta[p], p) for p in ("encoder_opt", "G_opt", "D_opt")}
    bank = np.array(arrays["bank"])
    N = len(bank)
    matrix = np.unpackbits(arrays["state"], axis=1, count=N).astype(bool)
    state = SimilarityState(matrix, meta["state_round"], cfg.symmetric)
    gan = GanPair(nets["G"], nets["D"], cfg.alpha, opts["G_opt"], opts["D_opt"],
                  cfg.non_saturating)
    return Run(cfg, nets["encoder"], opts["encoder_opt"], gan, state,
               MemoryBank(bank, cfg.eta, cfg.renorm_bank),
               np.array(arrays["input_mean"]), np.array(arrays["input_std"]), meta["round"])


# ------------------------------------------------------------- entry points


@dataclass
class TrainResult:
    run: Run
    reports: list[EvalReport] = field(default_factory=list)
    mining: list[MiningReport] = field(default_factory=list)
    train_log: list[dict] = field(default_factory=list)
    gan_log: list[tuple] = field(default_factory=list)


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _csv_appender(path, header):
    new = not os.path.exists(path)
    fh = open(path, "a", newline="")
    writer = csv.writer(fh)
    if new:
        writer.writerow(header)
    return fh, writer


def run_train(config: RunConfig, out_dir=None, resume_from=None,
              stop_after: int | None = None) -> TrainResult:
    """Run the full protocol; writes artifacts under ``out_dir`` when given.

    ``resume_from`` is a round checkpoint written by an earlier call; training
    continues with the next round. ``stop_after`` ends the run early after
    that many rounds (used to simulate interruption).
    """
    train, test = load_datasets(config)
    if resume_from is not None:
        run = load_run(resume_from)
        if run.config != config:
            raise ConfigurationError("checkpoint was written with a different config")
    else:
        run = init_run(config, train)
    result = TrainResult(run)

    handles = []
    train_writer = gan_writer = None
    if out_dir is not None:
        for sub in ("metrics", "logs", "mining", "checkpoints"):
            os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
        config.save(os.path.join(out_dir, "config.json"))
        fh, train_writer = _csv_appender(os.path.join(out_dir, "logs", "train.csv"),
                                         ["round", "epoch", "l1", "l2", "total", "lr"])
        handles.append(fh)
        fh, gan_writer = _csv_appender(os.path.join(out_dir, "logs", "gan.csv"),
                                       ["round", "epoch", "d_loss", "g_loss"])
        handles.append(fh)

    def train_log(row):
        result.train_log.append(row)
        if train_writer:
            train_writer.writerow([row["round"], row["epoch"], repr(row["l1"]),
                                   repr(row["l2"]), repr(row["total"]), repr(row["lr"])])

    def gan_log(rnd, epoch, d_loss, g_loss):
        result.gan_log.append((rnd, epoch, d_loss, g_loss))
        if gan_writer:
            gan_writer.writerow([rnd, epoch, repr(d_loss), repr(g_loss)])

    try:
        while run.round < config.rounds:
            if stop_after is not None and run.round >= stop_after:
                break
            report = run_round(run, train, train_log, gan_log)
            evald = evaluate(run, train, test)
            result.mining.append(report)
            result.reports.append(evald)
            logger.info("round %d: knn=%.4f precision=%s added=%d", run.round,
                        evald.knn_accuracy, evald.mining_precision_by_setsize,
                        report.total_added)
            if out_dir is not None:
                i = run.round
                _write_json(os.path.join(out_dir, "metrics", f"round_{i}.json"),
                            evald.to_dict())
                _write_json(os.path.join(out_dir, "mining", f"round_{i}.json"),
                            report.summary(additions_precision(report, train.eval_labels())))
                save_run(run, os.path.join(out_dir, "checkpoints", f"round_{i}.npz"))
                for fh in handles:
                    fh.flush()
    finally:
        for fh in handles:
            fh.close()
    if out_dir is not None:
        write_precision_table(result.reports, os.path.join(out_dir, "metrics", "precision.csv"))
    return result


def write_precision_table(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "setsize", "precision"])
        for rep in reports:
            for bucket, value in sorted(rep.mining_precision_by_setsize.items()):
                writer.writerow([rep.round, bucket, repr(value)])
            if rep.euclidean_precision is not None:
                writer.writerow([rep.round, "euclid_knn", repr(rep.euclidean_precision)])


def run_eval(checkpoint, dataset: tuple[Dataset, Dataset] | None = None) -> EvalReport:
    """Re-evaluate a saved round checkpoint with its frozen encoder."""
    run = load_run(checkpoint)
    train, test = dataset if dataset is not None else load_datasets(run.config)
    if train.dim != run.encoder.in_dim or train.N != run.state.N:
        raise ConfigurationError(
            f"checkpoint expects {run.state.N} samples of dim {run.encoder.in_dim}, "
            f"dataset has {train.N} of dim {train.dim}"
        )
    return evaluate(run, train, test)


def run_mine(checkpoint, out_path=None, seed_stream: int = 3, **overrides) -> MiningReport:
    """One extra mining pass from a checkpoint; optionally saves the updated run."""
    run = load_run(checkpoint)
    cfg = run.config.replace(**overrides) if overrides else run.config
    _, report = mine_all(run.state, run.bank.snapshot(), run.gan, cfg.m, cfg.r, cfg.h,
                         round_rng(cfg.seed, run.round, seed_stream), frozen=cfg.frozen_pass,
                         max_add=cfg.max_add_per_anchor)
    report.round = run.round
    if out_path is not None:
        save_run(run, out_path)
    return report


def export_embeddings(run: Run, dataset: Dataset, path) -> None:
    feats = run.encode(dataset.samples)
    labels = dataset.eval_labels() if dataset.has_labels else None
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(feats.shape[1])] + ["label"])
        for i, row in enumerate(feats):
            writer.writerow([repr(float(v)) for v in row]
                            + ["" if labels is None else int(labels[i])])


SWEEP_PARAMS = ("h", "r", "m")


def run_sweep(config: RunConfig, grid: dict, out_path=None, vary_seed: bool = True) -> list[dict]:
    """One training run per point of the product grid over ``h``, ``r`` and ``m``.

    Cell ``i`` uses seed ``config.seed + i`` unless ``vary_seed`` is off. A
    failing cell is recorded with its error and the sweep continues.
    """
    bad = set(grid) - set(SWEEP_PARAMS)
    if bad:
        raise ConfigurationError(f"sweep supports {SWEEP_PARAMS}, got {sorted(bad)}")
    names = [n for n in SWEEP_PARAMS if n in grid]
    rows = []
    for i, values in enumerate(itertools.product(*(grid[n] for n in names))):
        changes = dict(zip(names, values))
        seed = config.seed + i if vary_seed else config.seed
        row = {"param": ",".join(names), "value": ",".join(str(v) for v in values),
               "seed": seed, "knn_accuracy": float("nan"), "precision": float("nan"),
               "error": ""}
        try:
            res = run_train(config.replace(seed=seed, **changes))
            last = res.reports[-1]
            row["knn_accuracy"] = last.knn_accuracy
            row["precision"] = last.mining_precision_by_setsize["all"]
        except Exception as exc:  # noqa: BLE001 - a failed cell must not end the sweep
            logger.exception("sweep cell %s failed", changes)
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, ["param", "value", "knn_accuracy", "precision",
                                         "seed", "error"])
            writer.writeheader()
            writer.writerows(rows)
    return rows
