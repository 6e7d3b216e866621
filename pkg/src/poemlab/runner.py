"""Epoch loop: mine outliers, train one epoch, refresh the feature queue and the posterior."""

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import metrics as M
from .errors import ConfigError
from .mining import MinedSet, SamplerKind, mine
from .model import (DEFAULT_BETA, DEFAULT_M_IN, DEFAULT_M_OUT, Batch, SGDNesterov, backward_and_step,
                    encode, energy, forward, init_model)
from .posterior import FeatureQueue, TargetScheme, isotropic_prior, posterior_update, prior_state
from .synthdata import (Dataset, TheoryConfig, ToyConfig, gen_generalized, gen_theory_pair, gen_toy,
                        orthogonal_labels)

log = logging.getLogger(__name__)

DATASETS = ("toy", "theory", "generalized")


@dataclass
class RunConfig:
    dataset: str = "toy"
    sampler: str = "thompson"
    epochs: int = 30
    pool_size: int = 5000
    mined: int = 500
    batch_size: int = 64
    queue_capacity: int = 0  # 0 means 4 epochs of enqueues (8 * mined)
    hidden: tuple = (32, 32)
    lr: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 1e-4
    m_in: float = DEFAULT_M_IN
    m_out: float = DEFAULT_M_OUT
    beta: float = DEFAULT_BETA
    prior_scale: float = 1.0
    noise_var: float = 1.0
    seed: int = 0
    id_train: int = 1500
    id_test: int = 1500
    ood_test: int = 1500
    aux_size: int = 20000
    toy_aux_box: float = 16.0  # half-width of the auxiliary outlier box; test OOD uses the 8.0 box
    standardize: bool = True
    theory_d: int = 8
    theory_r0: float = 2.0
    theory_sigma: float = 1.0
    stop_epoch: int = -1  # -1: mining and posterior updates never stop
    snapshot_epochs: tuple = ()  # empty means (1, 4, epochs)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.snapshot_epochs = tuple(int(e) for e in self.snapshot_epochs)

    @property
    def capacity(self):
        return self.queue_capacity or 8 * self.mined

    @property
    def snapshots(self):
        if self.snapshot_epochs:
            return tuple(sorted(set(e for e in self.snapshot_epochs if 1 <= e <= self.epochs)))
        return tuple(sorted(set(e for e in (1, 4, self.epochs) if 1 <= e <= self.epochs)))

    def validate(self):
        def bad(name, why):
            raise ConfigError(f"{name}: {why}", field=name)

        if self.dataset not in DATASETS:
            bad("dataset", f"must be one of {', '.join(DATASETS)}, got {self.dataset!r}")
        try:
            self.sampler = SamplerKind.parse(self.sampler).value
        except ValueError as exc:
            bad("sampler", str(exc))
        for name in ("epochs", "pool_size", "mined", "batch_size", "id_train", "id_test", "ood_test",
                     "aux_size", "theory_d"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                bad(name, f"must be an integer, got {value!r}")
            minimum = 0 if name == "epochs" else 1
            if value < minimum:
                bad(name, f"must be >= {minimum}")
        if self.mined > self.pool_size:
            bad("mined", f"N={self.mined} exceeds pool size S={self.pool_size}")
        if self.pool_size > self.aux_size:
            bad("pool_size", f"S={self.pool_size} exceeds auxiliary set size {self.aux_size}")
        if self.queue_capacity and self.queue_capacity < 2 * self.mined:
            bad("queue_capacity", f"M={self.queue_capacity} must hold one epoch of enqueues (>= {2 * self.mined})")
        if not self.noise_var > 0:
            bad("noise_var", "must be > 0")
        if not self.prior_scale > 0:
            bad("prior_scale", "must be > 0")
        if self.beta < 0:
            bad("beta", "must be >= 0")
        if self.dataset == "toy" and self.toy_aux_box < 8.0:
            bad("toy_aux_box", "must be >= 8.0 so the auxiliary box covers the test box")
        if self.lr < 0:
            bad("lr", "must be >= 0")
        if not self.hidden or any(h < 1 for h in self.hidden):
            bad("hidden", "needs at least one positive width")
        if self.stop_epoch > self.epochs:
            bad("stop_epoch", f"must be <= epochs ({self.epochs})")
        return self

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["snapshot_epochs"] = list(self.snapshot_epochs)
        return d

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Data:
    train: Dataset
    aux: np.ndarray
    test_id: Dataset
    test_ood: np.ndarray
    num_classes: int


def build_data(cfg, rng):
    if cfg.dataset == "toy":
        toy = ToyConfig()
        aux_toy = ToyConfig(box_low=-cfg.toy_aux_box, box_high=cfg.toy_aux_box)
        train, _ = gen_toy(toy, cfg.id_train, 0, rng)
        _, aux = gen_toy(aux_toy, 0, cfg.aux_size, rng)
        test_id, test_ood = gen_toy(toy, cfg.id_test, cfg.ood_test, rng)
        return Data(train, aux.x, test_id, test_ood.x, toy.num_classes)

    d = cfg.theory_d
    base = TheoryConfig.from_snr(d, cfg.theory_r0, sigma=cfg.theory_sigma)
    if cfg.dataset == "theory":
        def draw(n_in, n_aux):
            tc = TheoryConfig(mu=base.mu, sigma=base.sigma, n=n_aux, n_prime=n_in)
            return gen_theory_pair(tc, rng)
        x_tr, aux = draw(cfg.id_train, cfg.aux_size)
        x_te, ood = draw(cfg.id_test, cfg.ood_test)
    else:
        cap = base.mu_norm / 4.0
        v = rng.standard_normal(d)
        v *= 0.5 * cap / np.linalg.norm(v)

        def draw(n_in, n_aux):
            tc = TheoryConfig(mu=base.mu, sigma=base.sigma, n=n_aux, n_prime=n_in, v=v,
                              s_range=0.5 * cap, g_range=0.5 * cap)
            return gen_generalized(tc, rng, n_test=cfg.ood_test)
        x_tr, aux, _ = draw(cfg.id_train, cfg.aux_size)
        x_te, _, ood = draw(cfg.id_test, 1)
    return Data(Dataset(x_tr, orthogonal_labels(x_tr, base.mu)), aux,
                Dataset(x_te, orthogonal_labels(x_te, base.mu)), ood, 2)


def blr_features(model, x):
    """Encoder output with a constant 1 appended (bias term for the Bayesian head)."""
    phi = encode(model, x)
    return np.concatenate([phi, np.ones((phi.shape[0], 1))], axis=1)


@dataclass
class Snapshot:
    epoch: int
    model: object
    mined_x: np.ndarray
    gamma: float


@dataclass
class RunResult:
    model: object
    logs: list
    data: Data = None
    queue: FeatureQueue = None
    snapshots: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.model, self.logs))


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _train_epoch(model, optim, train, mined_x, batch_size, rng):
    n_id = len(train)
    steps = math.ceil(n_id / batch_size)
    perm = rng.permutation(n_id)
    # outlier stream cycles through fresh permutations of the mined set
    reps = math.ceil(steps * batch_size / max(len(mined_x), 1))
    out_order = np.concatenate([rng.permutation(len(mined_x)) for _ in range(reps)]) if len(mined_x) else None
    losses = []
    for step in range(steps):
        idx = perm[step * batch_size:(step + 1) * batch_size]
        if out_order is not None:
            oidx = out_order[step * batch_size:step * batch_size + len(idx)]
            out_x = mined_x[oidx]
        else:
            out_x = np.zeros((0, train.x.shape[1]))
        batch = Batch(train.x[idx], train.labels[idx], out_x)
        losses.append(backward_and_step(model, optim, batch))
    return float(np.mean(losses)) if losses else float("nan")


def evaluate(model, data):
    _, id_logits = forward(model, data.test_id.x)
    _, ood_logits = forward(model, data.test_ood)
    return M.evaluate(-energy(id_logits), -energy(ood_logits), id_logits, data.test_id.labels)


def run(cfg, keep_snapshots=False):
    """Run the mining/training loop for `cfg.epochs` epochs.

    Returns a RunResult, which also unpacks as ``(model, logs)``. Each epoch
    log is a JSON-ready dict. With `stop_epoch` >= 0, mining and posterior
    updates happen only in epochs < stop_epoch (0-based), except that the
    first epoch always mines; later epochs reuse the last mined set.
    """
    cfg.validate()
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(6)]
    rng_data, rng_init, rng_pool, rng_mine, rng_train, rng_queue = streams

    data = build_data(cfg, rng_data)
    d = data.train.x.shape[1]
    shift, scale = None, None
    if cfg.standardize:
        shift, scale = data.train.x.mean(axis=0), data.train.x.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
    model = init_model((d,) + cfg.hidden, data.num_classes, rng_init,
                       m_in=cfg.m_in, m_out=cfg.m_out, beta=cfg.beta, input_shift=shift, input_scale=scale)
    optim = SGDNesterov(model, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    m = cfg.hidden[-1] + 1
    prior_cov = isotropic_prior(m, cfg.prior_scale)
    scheme = TargetScheme(noise_sd=math.sqrt(cfg.noise_var))
    queue = FeatureQueue(cfg.capacity, dim=m)
    posterior = prior_state(prior_cov, cfg.noise_var)
    sampler = SamplerKind.parse(cfg.sampler)
    features = lambda x: blr_features(model, x)  # noqa: E731 - closes over the live model

    result = RunResult(model=model, logs=[], data=data, queue=queue)
    mined_x, mined = None, None
    for epoch in range(cfg.epochs):
        active = cfg.stop_epoch < 0 or epoch < cfg.stop_epoch
        if active or mined is None:
            pool_idx = rng_pool.choice(len(data.aux), size=cfg.pool_size, replace=False)
            pool = data.aux[pool_idx]
            mined = mine(pool, features, sampler, posterior, cfg.mined, rng_mine)
            mined_x = pool[mined.indices]
            mined_now = True
        else:
            mined_now = False

        train_loss = _train_epoch(model, optim, data.train, mined_x, cfg.batch_size, rng_train)

        if active:
            queue.enqueue(features(mined_x), True, scheme, rng_queue)
            id_pick = rng_queue.choice(len(data.train), size=min(cfg.mined, len(data.train)), replace=False)
            queue.enqueue(features(data.train.x[id_pick]), False, scheme, rng_queue)
            posterior = posterior_update(queue, prior_cov, cfg.noise_var)

        report = evaluate(model, data)
        result.logs.append(_epoch_log(epoch + 1, mined, mined_now, train_loss, model, data, mined_x,
                                      report, len(queue)))
        if keep_snapshots and epoch + 1 in cfg.snapshots:
            result.snapshots.append(Snapshot(epoch + 1, model.copy(), mined_x.copy(), report.gamma))
        log.debug("epoch %d fpr95=%.4f", epoch + 1, report.fpr95)
    return result


def _epoch_log(epoch, mined, mined_now, train_loss, model, data, mined_x, report, queue_len):
    s = mined.summary() if isinstance(mined, MinedSet) else {}
    return {
        "epoch": epoch,
        "mined_this_epoch": mined_now,
        "mined_score_mean": s.get("mean"),
        "mined_score_min": s.get("min"),
        "mined_score_max": s.get("max"),
        "train_loss": _json_float(train_loss),
        "id_energy_mean": _json_float(np.mean(energy(forward(model, data.train.x)[1]))),
        "mined_energy_mean": _json_float(np.mean(energy(forward(model, mined_x)[1]))),
        "queue_len": queue_len,
        "metrics": {k: _json_float(v) for k, v in report.to_dict().items()},
    }


def early_stop_variant(cfg, stop_epoch, **kw):
    """`run` with mining and posterior updates frozen from `stop_epoch` on."""
    if stop_epoch > cfg.epochs:
        raise ConfigError(f"stop_epoch: must be <= epochs ({cfg.epochs})", field="stop_epoch")
    return run(RunConfig(**{**cfg.to_dict(), "stop_epoch": stop_epoch}), **kw)
