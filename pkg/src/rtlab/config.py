"""INI run configuration: model/trainer presets plus validated overrides.

All width constraints (residual merge rule, dense width law, projection =
recurrent feature width) are checked while parsing, before any compute.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, replace
from pathlib import Path

from .extractor import ExtractorConfig, extractor_config_for_variant
from .recurrent import (ConfigError, RecurrentModuleConfig,
                        recurrent_config_for_variant, VARIANTS)
from .trainer import (DESK_SCHEDULE, LrSchedule, PAPER_SCHEDULE, TrainerConfig,
                      trainer_config_for, CurriculumState, TrainerError)

DATA_ROOT_ENV = "RTLAB_DATA_ROOT"


@dataclass
class RunConfig:
    variant: str
    scale: str
    seed: int
    data: str                     # suite directory, or "synthetic" for generated data
    out: str
    trainer: TrainerConfig
    extractor_config: ExtractorConfig
    recurrent_config: RecurrentModuleConfig

    def checkpoint_path(self) -> Path:
        return Path(self.out) / "checkpoint.rtlb"

    def trainlog_path(self) -> Path:
        return Path(self.out) / "trainlog.csv"


def data_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, "."))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.replace(" ", "").split(",") if p)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if "run" not in parser:
        raise ConfigError(f"config {path} lacks a [run] section")
    run = parser["run"]

    variant = run.get("variant", "plain").strip().lower()
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    scale = run.get("scale", "desk").strip().lower()
    if scale not in ("paper", "desk"):
        raise ConfigError(f"unknown scale {scale!r}")
    seed = run.getint("seed", fallback=1)
    data = run.get("data", "synthetic").strip()
    out = run.get("out", "runs/latest").strip()

    recurrent = recurrent_config_for_variant(variant, scale)
    extractor = extractor_config_for_variant(variant, scale)
    if "model" in parser:
        model = parser["model"]
        fw = model.getint("feature_width", fallback=0)
        hw = model.get("hidden_widths", fallback="").strip()
        gw = model.getint("growth_width", fallback=0)
        kwargs = {}
        if fw:
            kwargs["feature_width"] = fw
        if hw:
            kwargs["hidden_widths"] = _ints(hw)
        if gw:
            kwargs["growth_width"] = gw
        if kwargs:
            base = dict(variant=variant,
                        feature_width=recurrent.feature_width,
                        hidden_widths=recurrent.hidden_widths,
                        growth_width=recurrent.growth_width)
            base.update(kwargs)
            recurrent = RecurrentModuleConfig(**base)   # validates width laws
            extractor = replace(extractor, projection_width=recurrent.feature_width)

    trainer = trainer_config_for(variant, scale, seed=seed)
    if "train" in parser:
        section = parser["train"]
        trainer = replace(
            trainer,
            max_iterations=section.getint("max_iterations",
                                          fallback=trainer.max_iterations),
            batch0=section.getint("batch0", fallback=trainer.batch0),
            unrolls0=section.getint("unrolls0", fallback=trainer.unrolls0),
            plateau_window=section.getint("plateau_window",
                                          fallback=trainer.plateau_window),
            min_rel_improve=section.getfloat("min_rel_improve",
                                             fallback=trainer.min_rel_improve),
            p_flip=section.getfloat("p_flip", fallback=trainer.p_flip),
            noise_amplitude=section.getfloat("noise_amplitude",
                                             fallback=trainer.noise_amplitude),
            batch_floor=section.getint("batch_floor",
                                       fallback=trainer.batch_floor),
            bn_freeze_below=section.getint("bn_freeze_below",
                                           fallback=trainer.bn_freeze_below),
            checkpoint_every=section.getint("checkpoint_every",
                                            fallback=trainer.checkpoint_every),
            smooth_window=section.getint("smooth_window",
                                         fallback=trainer.smooth_window),
            target_loss=(section.getfloat("target_loss")
                         if section.get("target_loss", "").strip() else None),
        )
    if "schedule" in parser:
        section = parser["schedule"]
        base = trainer.schedule
        mode = section.get("mode", fallback=base.mode).strip().lower()
        if mode not in ("variant", "iteration", "plateau"):
            raise ConfigError(f"unknown schedule mode {mode!r}")
        try:
            schedule = LrSchedule(
                plain_levels=(_floats(section.get("plain_levels", ""))
                              or base.plain_levels),
                plain_drops=(_ints(section.get("plain_drops", ""))
                             or base.plain_drops),
                plateau_levels=(_floats(section.get("plateau_levels", ""))
                                or base.plateau_levels),
                extractor_scale=section.getfloat("extractor_scale",
                                                 fallback=base.extractor_scale),
                mode=mode,
            )
        except TrainerError as exc:
            raise ConfigError(str(exc)) from exc
        trainer = replace(trainer, schedule=schedule)
    trainer = replace(trainer, variant=variant, seed=seed)

    # front-loaded validation: widths already checked by the config dataclasses;
    # curriculum invariants checked by constructing the initial state
    if extractor.projection_width != recurrent.feature_width:
        raise ConfigError(
            f"extractor projects to {extractor.projection_width} but the recurrent "
            f"module expects {recurrent.feature_width}"
        )
    try:
        CurriculumState(batch=trainer.batch0, unrolls=trainer.unrolls0)
    except TrainerError as exc:
        raise ConfigError(f"invalid curriculum start: {exc}") from exc
    if trainer.bn_freeze_below < 2:
        raise ConfigError(
            f"bn_freeze_below must be >= 2, got {trainer.bn_freeze_below}")
    if trainer.batch_floor < 1:
        raise ConfigError(
            f"batch_floor must be >= 1, got {trainer.batch_floor}")
    if variant != "plain" and trainer.batch0 < trainer.bn_freeze_below:
        raise ConfigError(
            f"batch0 {trainer.batch0} starts below bn_freeze_below "
            f"{trainer.bn_freeze_below}: normalization statistics would "
            f"freeze before ever being estimated")

    return RunConfig(variant=variant, scale=scale, seed=seed, data=data, out=out,
                     trainer=replace(trainer,
                                     checkpoint_path=str(Path(out) / "checkpoint.rtlb")),
                     extractor_config=extractor, recurrent_config=recurrent)


def build_model(config: RunConfig):
    from .tracker import TrackerModel
    return TrackerModel(config.variant, config.scale, seed=config.seed,
                        extractor_config=config.extractor_config,
                        recurrent_config=config.recurrent_config)
