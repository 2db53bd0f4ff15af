"""Training loop, the two prediction tasks, metrics, and checkpoints.

Training iterates batches of consecutive interactions (each internally
organized into t-batches), one Adam step per batch; steady embeddings are
recomputed once per epoch. Evaluation is strictly sequential: each test
interaction is scored against the state built from everything before it,
then applied as the true update before the next one.
"""

from __future__ import annotations

import dataclasses
import json
import zipfile
from dataclasses import dataclass

import numpy as np

from graphtpp.autodiff import Adam, precision
from graphtpp.config import TrainConfig, config_from_pairs
from graphtpp.data import TemporalNetwork, chrono_split, rescale_time
from graphtpp.model import Model, batch_nll, draw_mc_plan

CHECKPOINT_FORMAT = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    mrr: float
    recall_at_10: float
    rmse: float
    ranks: tuple
    truncated_time_predictions: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "mrr": self.mrr,
            "recall_at_10": self.recall_at_10,
            "rmse": self.rmse,
            "interactions": len(self.ranks),
            "truncated_time_predictions": self.truncated_time_predictions,
        }, sort_keys=True)


@dataclass
class TrainResult:
    model: Model
    epoch_losses: list
    time_scale: float
    aborted: bool = False
    abort_reason: str = ""
    stopped_epoch: int | None = None


def metrics(ranks, predicted_intervals=None, true_intervals=None,
            truncated: int = 0) -> EvalReport:
    """MRR, Recall@10, and interval RMSE from per-interaction results."""
    ranks = list(ranks)
    if not ranks:
        raise ValueError("metrics need at least one ranked interaction")
    if any(r < 1 for r in ranks):
        raise ValueError("ranks are 1-based")
    mrr = float(np.mean([1.0 / r for r in ranks]))
    recall = float(np.mean([1.0 if r <= 10 else 0.0 for r in ranks]))
    if predicted_intervals is None and true_intervals is None:
        rmse = 0.0
    else:
        predicted = np.asarray(predicted_intervals, dtype=np.float64)
        actual = np.asarray(true_intervals, dtype=np.float64)
        if predicted.shape != actual.shape:
            raise ValueError(f"interval length mismatch {predicted.shape} vs {actual.shape}")
        rmse = float(np.sqrt(np.mean((predicted - actual) ** 2)))
    return EvalReport(mrr=mrr, recall_at_10=recall, rmse=rmse,
                      ranks=tuple(ranks), truncated_time_predictions=truncated)


def expected_interval(intensity_profile, t_start: float, mean_interval: float,
                      points_per_interval: int = 1024,
                      survival_threshold: float = 1e-6,
                      cap_multiplier: float = 50.0) -> tuple[float, bool]:
    """Expected waiting time from t_start under an intensity: the integral of
    (t - t_start) * S(t) * lambda(t) by composite trapezoid.

    `intensity_profile(taus)` evaluates the intensity on an array of query
    times. Integration proceeds one mean interval (of `points_per_interval`
    grid points) at a time until the survival drops below
    `survival_threshold` or the span hits `cap_multiplier` mean intervals;
    the omitted tail is closed with its lower bound (t_max - t_start) *
    S(t_max). Returns (interval, truncated) where truncated marks hitting
    the cap with survival still above threshold.
    """
    if mean_interval <= 0:
        raise ValueError("mean interval must be positive")
    step = mean_interval / points_per_interval
    cap = cap_multiplier * mean_interval
    offsets = step * np.arange(1, points_per_interval + 1)
    t_prev = t_start
    lam_prev = float(intensity_profile(np.array([t_start]))[0])
    surv_prev = 1.0
    f_prev = 0.0  # (t - t_start) * S * lam vanishes at t_start
    acc = 0.0
    while True:
        taus = t_prev + offsets
        lams = intensity_profile(taus)
        lam_path = np.concatenate(([lam_prev], lams))
        surv = surv_prev * np.exp(-np.cumsum(0.5 * step * (lam_path[:-1] + lam_path[1:])))
        f_path = np.concatenate(([f_prev], (taus - t_start) * surv * lams))
        pieces = 0.5 * step * (f_path[:-1] + f_path[1:])
        below = np.nonzero(surv < survival_threshold)[0]
        if below.size:
            k = int(below[0])
            acc += float(pieces[: k + 1].sum())
            return acc + (taus[k] - t_start) * float(surv[k]), False
        acc += float(pieces.sum())
        t_prev = float(taus[-1])
        lam_prev = float(lams[-1])
        surv_prev = float(surv[-1])
        f_prev = float(f_path[-1])
        if t_prev - t_start >= cap:
            return acc + (t_prev - t_start) * surv_prev, True


def pair_expected_interval(model: Model, user: int, item: int, t_start: float,
                           mean_interval: float) -> tuple[float, bool]:
    """Time-prediction task: expected wait until (user, item) interacts again
    after t_start, with steady embeddings frozen at t_start's snapshot and
    dynamic embeddings shifted from each node's last event."""
    cfg = model.cfg
    m = model.snapshot_id(t_start)
    return expected_interval(
        lambda taus: model.intensity_profile(user, item, taus, m),
        t_start, mean_interval,
        points_per_interval=cfg.quad_points,
        survival_threshold=cfg.survival_threshold,
        cap_multiplier=cfg.horizon_cap)


def train(raw_net: TemporalNetwork, cfg: TrainConfig, log=None) -> TrainResult:
    """Maximum-likelihood training over the chronological training split.

    Per epoch: steady embeddings are recomputed, the dynamic cache is reset,
    and batches of `batch_size` consecutive interactions are scored (log
    intensity of happened interactions minus the Monte Carlo estimate of the
    total-intensity integral over each user's inter-event interval), followed
    by one Adam step. Divergence aborts with the last end-of-epoch snapshot
    restored. All randomness flows from cfg.seed.
    """
    cfg.validate()
    log = log or (lambda record: None)
    with precision(cfg.precision):
        net = rescale_time(raw_net)
        train_split, valid_split, _ = chrono_split(net)
        if len(train_split) == 0:
            raise ValueError("training split is empty")
        rng = np.random.default_rng(cfg.seed)
        model = Model(net, cfg, rng)
        model.set_snapshot_prefix(len(train_split))
        opt = Adam(model.params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)

        result = TrainResult(model=model, epoch_losses=[], time_scale=net.time_scale)
        last_good = model.params.state_arrays()
        best_valid = -np.inf
        stale_epochs = 0
        for epoch in range(cfg.epochs):
            model.reset_dynamic()
            model.refresh_steady()
            total = 0.0
            count = 0
            aborted = False
            for start in range(0, len(train_split), cfg.batch_size):
                batch = train_split.interactions[start:start + cfg.batch_size]
                plans = draw_mc_plan(train_split, batch, rng, cfg)
                try:
                    loss, _ = batch_nll(model, batch, plans)
                except ValueError as err:
                    result.aborted = True
                    result.abort_reason = str(err)
                    model.params.load_state_arrays(last_good)
                    aborted = True
                    break
                model.params.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.data)
                count += len(batch)
            if aborted:
                break
            mean_loss = total / count
            result.epoch_losses.append(mean_loss)
            log({"epoch": epoch, "mean_nll": mean_loss})
            last_good = model.params.state_arrays()
            if cfg.early_stop_patience > 0 and len(valid_split) > 0:
                report = evaluate(model, len(train_split),
                                  len(train_split) + len(valid_split),
                                  predict_times=False)
                log({"epoch": epoch, "valid_mrr": report.mrr})
                if report.mrr > best_valid:
                    best_valid = report.mrr
                    stale_epochs = 0
                else:
                    stale_epochs += 1
                    if stale_epochs >= cfg.early_stop_patience:
                        result.stopped_epoch = epoch
                        break
        return result


def evaluate(model: Model, start: int, end: int, predict_times: bool = True) -> EvalReport:
    """Sequential next-item/next-time evaluation over interactions
    [start, end) of the model's network.

    Snapshots cover the prefix before `start`. For each interaction the true
    item's rank among all items is recorded, and the expected wait for the
    true pair is measured from the user's previous event time; then the true
    interaction updates the dynamic state. Interval errors are in rescaled
    time units (mean training inter-event interval = 1).
    """
    cfg = model.cfg
    net = model.net
    if not 0 <= start < end <= len(net.interactions):
        raise ValueError(f"bad evaluation range [{start}, {end})")
    with precision(cfg.precision):
        model.set_snapshot_prefix(start)
        model.refresh_steady()
        model.reset_dynamic()
        for inter in net.interactions[:start]:
            model.apply_event(inter.user, inter.item, inter.time)
        mean_interval = net.mean_interval()
        ranks = []
        predicted, actual = [], []
        truncated_count = 0
        for inter in net.interactions[start:end]:
            order, _ = model.rank_items(inter.user, inter.time)
            ranks.append(order.index(inter.item) + 1)
            if predict_times:
                t_prev = model.state.last_time("user", inter.user)
                delta, truncated = pair_expected_interval(
                    model, inter.user, inter.item, t_prev, mean_interval)
                predicted.append(delta)
                actual.append(inter.time - t_prev)
                truncated_count += int(truncated)
            model.apply_event(inter.user, inter.item, inter.time)
        if predict_times:
            return metrics(ranks, predicted, actual, truncated=truncated_count)
        return metrics(ranks)


# -- checkpointing ---------------------------------------------------------------


def save_checkpoint(path: str, result: TrainResult) -> None:
    """Versioned binary container: parameter blobs, id mapping, time scale,
    and full configuration."""
    model = result.model
    payload = {
        "format_version": np.array(CHECKPOINT_FORMAT),
        "config_json": np.array(json.dumps(model.cfg.to_dict(), sort_keys=True)),
        "time_scale": np.array(result.time_scale),
        "user_ids": np.array(model.net.user_ids, dtype=str),
        "item_ids": np.array(model.net.item_ids, dtype=str),
        "epoch_losses": np.array(result.epoch_losses, dtype=np.float64),
    }
    for name, arr in model.params.state_arrays().items():
        payload[f"param::{name}"] = arr
    np.savez(path, **payload)


@dataclass(frozen=True)
class Checkpoint:
    cfg: TrainConfig
    arrays: dict
    user_ids: tuple
    item_ids: tuple
    time_scale: float
    epoch_losses: tuple


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as blob:
            if "format_version" not in blob:
                raise CheckpointError(f"{path}: not a model checkpoint")
            version = int(blob["format_version"])
            if version != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: unsupported checkpoint format {version}")
            cfg = config_from_pairs(json.loads(str(blob["config_json"])))
            arrays = {key.split("::", 1)[1]: blob[key]
                      for key in blob.files if key.startswith("param::")}
            return Checkpoint(
                cfg=cfg,
                arrays=arrays,
                user_ids=tuple(blob["user_ids"]),
                item_ids=tuple(blob["item_ids"]),
                time_scale=float(blob["time_scale"]),
                epoch_losses=tuple(float(x) for x in blob["epoch_losses"]),
            )
    except (OSError, zipfile.BadZipFile, KeyError, ValueError) as err:
        if isinstance(err, CheckpointError):
            raise
        raise CheckpointError(f"{path}: cannot read checkpoint ({err})") from err


def restore_model(raw_net: TemporalNetwork, ckpt: Checkpoint) -> Model:
    """Rebuild a model from a checkpoint against a (re-read) data file.

    The stored time scale is re-applied to the raw timestamps so snapshot
    boundaries and shift intervals match training exactly; mismatched node
    tables mean the checkpoint belongs to different data.
    """
    scaled = _apply_scale(raw_net, ckpt.time_scale)
    if (scaled.n_users, scaled.n_items) != (len(ckpt.user_ids), len(ckpt.item_ids)):
        raise CheckpointError(
            f"checkpoint tables ({len(ckpt.user_ids)} users, {len(ckpt.item_ids)} items) "
            f"do not match data ({scaled.n_users} users, {scaled.n_items} items)")
    model = Model(scaled, ckpt.cfg)
    model.params.load_state_arrays(ckpt.arrays)
    return model


def _apply_scale(net: TemporalNetwork, scale: float) -> TemporalNetwork:
    if scale == 1.0:
        return net
    inters = tuple(dataclasses.replace(it, time=it.time * scale) for it in net.interactions)
    horizon = float(np.nextafter(inters[-1].time, np.inf)) if inters else 0.0
    return dataclasses.replace(net, interactions=inters, horizon=horizon,
                               time_scale=scale, _user_hist=None)
