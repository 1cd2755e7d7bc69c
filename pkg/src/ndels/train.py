"""Optimization loops, schedules, checkpointing, and evaluation.

Learning rate follows a stepped decay: initial / factor^floor(epoch / every),
the default being 1e-4 divided by 10 every 14 epochs over 42 epochs. The two
networks are trained separately: the low-light net maps dark-hazy to
bright-hazy, the dehazing net maps bright-hazy to the bright target with an
optional adversarial term.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (
    NetworkParams,
    arrays_from_params,
    load_checkpoint,
    load_into_module,
    params_from_arrays,
    save_checkpoint,
    snapshot_module,
)
from .dehaze import (
    DhmParams,
    build_dhm,
    build_disc,
    dhm_arch,
    disc_arch,
    dhm_module_from_params,
    snapshot_dhm,
)
from .errors import ConfigError, DataError, NumericalError
from .image import resize
from .losses import (
    IdentityExtractor,
    LossWeights,
    RandomFeatureExtractor,
    dhm_total,
    l_discriminator,
    llm_total,
)
from .lowlight import build_llm, llm_arch, module_from_params
from .metrics import QualityReport, max_ms_ssim_levels, ms_ssim, psnr, ssim
from .retinex import RetinexConfig, ndels_infer
from .synth import ImageTriplet, augment

COLLAPSE_STEPS = 50
COLLAPSE_MARGIN = 1e-3

EXTRACTORS = {
    "random-conv": lambda seed: RandomFeatureExtractor(seed=seed),
    "identity": lambda seed: IdentityExtractor(),
}


@dataclass
class TrainConfig:
    initial_lr: float = 1e-4
    decay_every: int = 14
    decay_factor: float = 10.0
    total_epochs: int = 42
    crop: int = 256
    batch_size: int = 4
    seed: int = 0
    loss_weights: LossWeights | None = None
    augment: bool = True
    resize_to: tuple[int, int] = (512, 256)
    msfd_scales: int = 3
    ms_levels: int = 5
    smooth_beta: float = 1.0
    extractor: str = "random-conv"
    llm: dict = field(default_factory=llm_arch)
    dhm: dict = field(default_factory=dhm_arch)
    disc_channels: int = 64

    def __post_init__(self):
        if self.initial_lr < 0:
            raise ConfigError(f"initial_lr must be >= 0, got {self.initial_lr}")
        if self.decay_every < 1:
            raise ConfigError(f"decay_every must be >= 1, got {self.decay_every}")
        if self.decay_factor <= 0:
            raise ConfigError(f"decay_factor must be > 0, got {self.decay_factor}")
        if self.total_epochs < 0:
            raise ConfigError(f"total_epochs must be >= 0, got {self.total_epochs}")
        if self.crop < 1:
            raise ConfigError(f"crop must be >= 1, got {self.crop}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.extractor not in EXTRACTORS:
            raise ConfigError(f"extractor must be one of {sorted(EXTRACTORS)}, got {self.extractor!r}")

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        kwargs = dict(d)
        if "loss_weights" in kwargs and kwargs["loss_weights"] is not None:
            try:
                kwargs["loss_weights"] = LossWeights(**kwargs["loss_weights"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid loss_weights: {exc}") from exc
        if "resize_to" in kwargs:
            kwargs["resize_to"] = tuple(kwargs["resize_to"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def to_json_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["loss_weights"] = None if self.loss_weights is None else self.loss_weights.to_json_dict()
        d["resize_to"] = list(self.resize_to)
        return d


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Stepped-decay learning rate for a 0-based epoch index."""
    if not 0 <= epoch < cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    return cfg.initial_lr / cfg.decay_factor ** (epoch // cfg.decay_every)


def overfit_config(module: str, steps: int = 200) -> TrainConfig:
    """Desk-scale overfit preset: 8-sample batches, one step per epoch, and
    the stepped decay compressed to thirds of the run."""
    weights = LossWeights.llm_defaults() if module == "llm" else LossWeights.dhm_defaults()
    return TrainConfig(
        initial_lr=2e-3,
        decay_every=max(1, round(steps * 0.35)),
        decay_factor=10.0,
        total_epochs=steps,
        crop=64,
        batch_size=8,
        seed=0,
        loss_weights=weights,
        augment=False,
        msfd_scales=3,
        ms_levels=3,
        llm=llm_arch(scales=3, base_channels=16, resblocks=2),
        dhm=dhm_arch(base_channels=16, lower_width=32, rcam_count=2, rcab_per_module=2),
        disc_channels=32,
    )


def apply_determinism_env() -> None:
    """Honor NDELS_DETERMINISTIC=1 by pinning single-threaded deterministic math."""
    if os.environ.get("NDELS_DETERMINISTIC") == "1":
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def _child_seed(*key: int) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.default_rng(_child_seed(seed, epoch, 11))
    return rng.permutation(n)


def _prepare_views(dataset, cfg: TrainConfig, epoch: int):
    """Per-epoch training views of the dataset (augmented or raw)."""
    views = []
    for idx, t in enumerate(dataset):
        if cfg.augment:
            views.append(augment(t, crop=cfg.crop, rng_seed=_child_seed(cfg.seed, epoch, idx, 7),
                                 resize_to=cfg.resize_to))
        else:
            views.append(t)
    return views


def _stack(images) -> torch.Tensor:
    arrs = [np.ascontiguousarray(img, dtype=np.float32).transpose(2, 0, 1) for img in images]
    return torch.from_numpy(np.stack(arrs))


def _check_finite(value: torch.Tensor, what: str, epoch: int, step: int) -> None:
    if not torch.isfinite(value).all():
        raise NumericalError(f"non-finite {what} at epoch {epoch}, step {step}: {value}")


def _optimizer_arrays(opt: torch.optim.Optimizer, prefix: str) -> dict[str, np.ndarray]:
    arrays = {}
    for pid, state in opt.state_dict()["state"].items():
        for key, val in state.items():
            if isinstance(val, torch.Tensor):
                arrays[f"{prefix}/{pid}/{key}"] = val.detach().cpu().numpy().copy()
    return arrays


def _load_optimizer_arrays(opt: torch.optim.Optimizer, arrays: dict[str, np.ndarray], prefix: str) -> None:
    state: dict[int, dict] = {}
    pfx = prefix + "/"
    for key, arr in arrays.items():
        if not key.startswith(pfx):
            continue
        pid_str, name = key[len(pfx):].split("/", 1)
        state.setdefault(int(pid_str), {})[name] = torch.from_numpy(np.asarray(arr).copy())
    if not state:
        return
    sd = opt.state_dict()
    sd["state"] = state
    opt.load_state_dict(sd)


def train_llm(
    dataset,
    cfg: TrainConfig,
    out_dir: str | os.PathLike | None = None,
    resume: str | os.PathLike | None = None,
    log=None,
) -> NetworkParams:
    """Minimize the low-light objective mapping dark-hazy to bright-hazy.

    Deterministic given the config seed; writes epoch checkpoints when
    out_dir is given; returns the final parameters.
    """
    if len(dataset) == 0:
        raise DataError("empty dataset")
    apply_determinism_env()
    weights = cfg.loss_weights or LossWeights.llm_defaults()

    start_epoch = 0
    if resume is not None:
        meta, arrays = load_checkpoint(resume)
        params = params_from_arrays(meta, arrays, "net")
        module = build_llm(params.arch)
        load_into_module(module, params)
        start_epoch = int(meta["extra"].get("epoch", 0))
        arch = params.arch
    else:
        arch = dict(cfg.llm)
        with torch.random.fork_rng():
            torch.manual_seed(_child_seed(cfg.seed, 101))
            module = build_llm(arch)
        arrays = {}
    module.train()
    opt = torch.optim.Adam(module.parameters(), lr=cfg.initial_lr)
    if resume is not None:
        _load_optimizer_arrays(opt, arrays, "opt")

    def save_epoch(epoch: int) -> None:
        if out_dir is None:
            return
        params = snapshot_module(module, arch)
        save_checkpoint(
            Path(out_dir) / f"epoch_{epoch}.ckpt",
            {"net": params.arch},
            {**arrays_from_params(params, "net"), **_optimizer_arrays(opt, "opt")},
            extra_meta={"epoch": epoch, "module": "llm"},
        )

    if start_epoch == 0:
        save_epoch(0)

    n = len(dataset)
    for epoch in range(start_epoch, cfg.total_epochs):
        lr = lr_at(epoch, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        views = _prepare_views(dataset, cfg, epoch)
        order = _epoch_order(n, cfg.seed, epoch)
        losses = []
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idxs = order[start : start + cfg.batch_size]
            x = _stack([views[i].dark_hazy for i in idxs])
            y = _stack([views[i].bright_hazy for i in idxs])
            loss = llm_total(module(x), y, weights, msfd_scales=cfg.msfd_scales)
            _check_finite(loss, "loss", epoch, step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.item()))
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.total_epochs} lr {lr:.6e} loss {np.mean(losses):.6f}")
        save_epoch(epoch + 1)

    return snapshot_module(module, arch)


def train_dhm(
    dataset,
    cfg: TrainConfig,
    out_dir: str | os.PathLike | None = None,
    resume: str | os.PathLike | None = None,
    log=None,
) -> tuple[DhmParams, NetworkParams]:
    """Minimize the dehazing objective mapping bright-hazy to bright, with
    alternating discriminator updates when the adversarial weight is nonzero.

    Returns (generator params, discriminator params).
    """
    if len(dataset) == 0:
        raise DataError("empty dataset")
    apply_determinism_env()
    weights = cfg.loss_weights or LossWeights.dhm_defaults()
    adversarial = weights.gamma4 > 0

    start_epoch = 0
    if resume is not None:
        meta, arrays = load_checkpoint(resume)
        gen_arch = meta["arches"]["upper"]["parent"]
        gen = build_dhm(gen_arch)
        for name in ("upper", "lower", "head"):
            load_into_module(getattr(gen, name), params_from_arrays(meta, arrays, name))
        d_arch = meta["arches"]["disc"]
        disc = build_disc(d_arch)
        load_into_module(disc, params_from_arrays(meta, arrays, "disc"))
        start_epoch = int(meta["extra"].get("epoch", 0))
    else:
        gen_arch = dict(cfg.dhm)
        d_arch = disc_arch(cfg.disc_channels)
        with torch.random.fork_rng():
            torch.manual_seed(_child_seed(cfg.seed, 202))
            gen = build_dhm(gen_arch)
            disc = build_disc(d_arch)
        arrays = {}
    gen.train()
    extractor = EXTRACTORS[cfg.extractor](_child_seed(cfg.seed, 303))
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.initial_lr)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.initial_lr)
    if resume is not None:
        _load_optimizer_arrays(opt_g, arrays, "opt_g")
        _load_optimizer_arrays(opt_d, arrays, "opt_d")

    def save_epoch(epoch: int) -> None:
        if out_dir is None:
            return
        gen_params = snapshot_dhm(gen, gen_arch)
        disc_params = snapshot_module(disc, d_arch)
        arches = {name: getattr(gen_params, name).arch for name in ("upper", "lower", "head")}
        arches["disc"] = disc_params.arch
        payload = {}
        for name in ("upper", "lower", "head"):
            payload.update(arrays_from_params(getattr(gen_params, name), name))
        payload.update(arrays_from_params(disc_params, "disc"))
        payload.update(_optimizer_arrays(opt_g, "opt_g"))
        payload.update(_optimizer_arrays(opt_d, "opt_d"))
        save_checkpoint(Path(out_dir) / f"epoch_{epoch}.ckpt", arches, payload,
                        extra_meta={"epoch": epoch, "module": "dhm"})

    if start_epoch == 0:
        save_epoch(0)

    n = len(dataset)
    collapse_run = 0
    collapse_warned = False
    for epoch in range(start_epoch, cfg.total_epochs):
        lr = lr_at(epoch, cfg)
        for opt in (opt_g, opt_d):
            for group in opt.param_groups:
                group["lr"] = lr
        views = _prepare_views(dataset, cfg, epoch)
        order = _epoch_order(n, cfg.seed, epoch)
        losses = []
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idxs = order[start : start + cfg.batch_size]
            x = _stack([views[i].bright_hazy for i in idxs])
            y = _stack([views[i].bright for i in idxs])
            fake = gen(x)

            scores = None
            if adversarial:
                disc.train()
                real_scores = disc(y)
                fake_scores = disc(fake.detach())
                d_loss = l_discriminator(real_scores, fake_scores)
                _check_finite(d_loss, "discriminator loss", epoch, step)
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
                scores = disc(fake)
                saturated = (
                    float(real_scores.mean()) > 1.0 - COLLAPSE_MARGIN
                    and float(fake_scores.mean()) < COLLAPSE_MARGIN
                )
                collapse_run = collapse_run + 1 if saturated else 0
                if collapse_run >= COLLAPSE_STEPS and not collapse_warned:
                    warnings.warn(
                        f"discriminator scores saturated for {collapse_run} consecutive steps",
                        RuntimeWarning,
                    )
                    collapse_warned = True

            g_loss = dhm_total(fake, y, scores, weights, extractor,
                               smooth_beta=cfg.smooth_beta, ms_levels=cfg.ms_levels)
            _check_finite(g_loss, "loss", epoch, step)
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()
            losses.append(float(g_loss.item()))
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.total_epochs} lr {lr:.6e} loss {np.mean(losses):.6f}")
        save_epoch(epoch + 1)

    return snapshot_dhm(gen, gen_arch), snapshot_module(disc, d_arch)


def evaluate(
    llm_params,
    dhm_params,
    dataset,
    use_emsr: bool = False,
    use_enhance: bool = True,
    retinex_cfg: RetinexConfig = RetinexConfig(),
    alpha: float = 0.5,
    resize_to: tuple[int, int] | None = None,
) -> tuple[list[QualityReport], list[str]]:
    """Per-image quality of pipeline outputs versus bright targets.

    Items without ground truth are skipped with a note. Returns
    (reports, skip_notes).
    """
    apply_determinism_env()
    reports: list[QualityReport] = []
    notes: list[str] = []
    for i, t in enumerate(dataset):
        name = getattr(t, "name", None) or f"item_{i:05d}"
        if t.bright is None:
            notes.append(f"{name}: no ground truth, skipped")
            continue
        img, target = t.dark_hazy, t.bright
        if resize_to is not None:
            img = resize(img, *resize_to)
            target = resize(target, *resize_to)
        out = ndels_infer(img, llm_params, dhm_params, cfg=retinex_cfg,
                          use_emsr=use_emsr, alpha=alpha, use_enhance=use_enhance)
        levels = max_ms_ssim_levels(out.shape[0], out.shape[1])
        reports.append(QualityReport(
            psnr=psnr(out, target),
            ssim=ssim(out, target),
            ms_ssim=ms_ssim(out, target, levels=levels),
            file=name,
        ))
    return reports, notes


def mean_report(reports: list[QualityReport]) -> QualityReport:
    if not reports:
        raise ValueError("no reports to average")
    return QualityReport(
        psnr=float(np.mean([r.psnr for r in reports])),
        ssim=float(np.mean([r.ssim for r in reports])),
        ms_ssim=float(np.mean([r.ms_ssim for r in reports])),
        file="mean",
    )
