"""Stage configuration: flat key=value text with one section per stage.

Every training constant has an explicit default here (lr 1e-5, dropout
0.5, alpha 10, lambda1 10, lambda2 1, batch 30 for two-stream and fusion,
24 for joint), so a config file diff documents every deviation.
"""

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .encoder import EncoderConfig, toy_encoder_config
from .errors import ConfigError
from .losses import LossConfig
from .synthproxy import ProxyConfig

STAGES = ("baseline-ga", "baseline-synth", "joint", "fusion")

SEED_ENV_VAR = "XVIEW_SEED"

_DEFAULTS = {
    "batch": 30,
    "lr": 1e-5,
    "dropout": 0.5,
    "alpha": 10.0,
    "lambda1": 10.0,
    "lambda2": 1.0,
    "margin": 0.0,
    "distance": "euclidean",
    "steps_exhaustive": 2000,
    "steps_hard_negative": 1000,
    "eval_every": 0,
    "embed_dim": 64,
    "seed": 0,
    "query_channels": 3,
    "query_h": 16,
    "query_w": 64,
    "reference_channels": 3,
    "reference_h": 32,
    "reference_w": 32,
    "multiscale": True,
    "use_gap": False,
    "share_weights": False,
    "rho": 1.0,
    "noise_std": 0.3,
    "complement_channels": "",
    "proxy_seed": 0,
}

_STAGE_OVERRIDES = {"joint": {"batch": 24}}

_BOOL_KEYS = {"multiscale", "use_gap", "share_weights"}
_INT_KEYS = {"batch", "steps_exhaustive", "steps_hard_negative", "eval_every",
             "embed_dim", "seed", "query_channels", "query_h", "query_w",
             "reference_channels", "reference_h", "reference_w", "proxy_seed"}
_FLOAT_KEYS = {"lr", "dropout", "alpha", "lambda1", "lambda2", "margin",
               "rho", "noise_std"}


@dataclass
class StageConfig:
    stage: str
    batch: int
    steps_exhaustive: int
    steps_hard_negative: int
    lr: float
    seed: int
    eval_every: int
    loss: LossConfig
    query_encoder: EncoderConfig
    reference_encoder: EncoderConfig
    share_weights: bool = False
    proxy: ProxyConfig = field(default_factory=ProxyConfig)
    dropout: float = 0.5

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.batch < 2:
            raise ConfigError(f"batch must be >= 2, got {self.batch}")
        if self.steps_exhaustive < 0 or self.steps_hard_negative < 0:
            raise ConfigError("step counts must be non-negative")


def default_config_text() -> str:
    """Render the full default configuration, one section per stage."""
    out = io.StringIO()
    for stage in STAGES:
        out.write(f"[{stage}]\n")
        values = dict(_DEFAULTS)
        values.update(_STAGE_OVERRIDES.get(stage, {}))
        for key, val in values.items():
            out.write(f"{key} = {val}\n")
        out.write("\n")
    return out.getvalue()


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if key in _BOOL_KEYS:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r}") from None
    return raw


def _stage_values(text: str, stage: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    values = dict(_DEFAULTS)
    values.update(_STAGE_OVERRIDES.get(stage, {}))
    if parser.has_section(stage):
        for key, raw in parser.items(stage):
            if key not in _DEFAULTS:
                raise ConfigError(f"unknown config key {key!r} in section [{stage}]")
            values[key] = _coerce(key, raw)
    return values


def _parse_channel_list(raw) -> tuple[int, ...]:
    if isinstance(raw, tuple):
        return raw
    raw = str(raw).strip()
    if not raw:
        return ()
    try:
        return tuple(int(c) for c in raw.split(","))
    except ValueError:
        raise ConfigError(f"complement_channels must be a comma list of ints, got {raw!r}") from None


def stage_config_from_values(stage: str, values: dict) -> StageConfig:
    loss = LossConfig(margin=values["margin"], alpha=values["alpha"],
                      lambda1=values["lambda1"], lambda2=values["lambda2"],
                      distance=values["distance"])
    seed = int(values["seed"])
    if os.environ.get(SEED_ENV_VAR):
        try:
            seed = int(os.environ[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(
                f"{SEED_ENV_VAR} must be an integer, got "
                f"{os.environ[SEED_ENV_VAR]!r}") from None
    common = dict(embed_dim=values["embed_dim"],
                  dropout_p=values["dropout"],
                  multiscale=bool(values["multiscale"]),
                  use_gap=bool(values["use_gap"]))
    q_cfg = toy_encoder_config(values["query_channels"], values["query_h"],
                               values["query_w"], seed=seed, **common)
    r_cfg = toy_encoder_config(values["reference_channels"], values["reference_h"],
                               values["reference_w"], seed=seed + 1, **common)
    if stage == "baseline-synth":
        # the query view is a synthesized reference image
        q_cfg = replace(r_cfg, init=replace(r_cfg.init, seed=seed))
    proxy = ProxyConfig(rho=values["rho"], noise_std=values["noise_std"],
                        complement_channels=_parse_channel_list(values["complement_channels"]),
                        seed=values["proxy_seed"])
    return StageConfig(
        stage=stage, batch=values["batch"],
        steps_exhaustive=values["steps_exhaustive"],
        steps_hard_negative=values["steps_hard_negative"],
        lr=values["lr"], seed=seed, eval_every=values["eval_every"],
        loss=loss, query_encoder=q_cfg, reference_encoder=r_cfg,
        share_weights=bool(values["share_weights"]), proxy=proxy,
        dropout=values["dropout"])


def load_stage_config(path, stage: str) -> StageConfig:
    if stage not in STAGES:
        raise ConfigError(f"stage must be one of {STAGES}, got {stage!r}")
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return stage_config_from_values(stage, _stage_values(text, stage))


def stage_config_from_text(text: str, stage: str) -> StageConfig:
    return stage_config_from_values(stage, _stage_values(text, stage))


def canonical_text(cfg: StageConfig) -> str:
    """Stable key=value dump of a resolved stage config (digest source)."""
    enc_q, enc_r = cfg.query_encoder, cfg.reference_encoder
    items = {
        "stage": cfg.stage, "batch": cfg.batch,
        "steps_exhaustive": cfg.steps_exhaustive,
        "steps_hard_negative": cfg.steps_hard_negative,
        "lr": repr(cfg.lr), "seed": cfg.seed, "eval_every": cfg.eval_every,
        "margin": repr(cfg.loss.margin), "alpha": repr(cfg.loss.alpha),
        "lambda1": repr(cfg.loss.lambda1), "lambda2": repr(cfg.loss.lambda2),
        "distance": cfg.loss.distance, "share_weights": cfg.share_weights,
        "dropout": repr(cfg.dropout),
        "rho": repr(cfg.proxy.rho), "noise_std": repr(cfg.proxy.noise_std),
        "complement_channels": ",".join(map(str, cfg.proxy.complement_channels)),
        "proxy_seed": cfg.proxy.seed,
    }
    for tag, enc in (("query", enc_q), ("reference", enc_r)):
        items[f"{tag}_input"] = f"{enc.in_channels}x{enc.in_h}x{enc.in_w}"
        items[f"{tag}_blocks"] = ";".join(
            f"{b.out_channels},{b.kernel},{b.stride},{b.padding}" for b in enc.blocks)
        items[f"{tag}_taps"] = ",".join(map(str, enc.taps()))
        items[f"{tag}_embed"] = enc.embed_dim
        items[f"{tag}_gap"] = enc.use_gap
        items[f"{tag}_init"] = f"{enc.init.kind}:{enc.init.seed}"
    return "".join(f"{k} = {items[k]}\n" for k in sorted(items))


def config_digest(cfg: StageConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()[:16]


def parse_canonical(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"bad canonical config line: {line!r}")
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    return out


def encoder_configs_from_canonical(text: str) -> tuple[EncoderConfig, EncoderConfig]:
    """Rebuild the two encoder architectures recorded in a checkpoint's
    canonical config dump."""
    from .encoder import ConvBlock  # local import to avoid cycle confusion
    from .params import InitSpec

    vals = parse_canonical(text)
    configs = []
    for tag in ("query", "reference"):
        try:
            c, h, w = (int(x) for x in vals[f"{tag}_input"].split("x"))
            blocks = tuple(
                ConvBlock(*(int(p) for p in blk.split(",")))
                for blk in vals[f"{tag}_blocks"].split(";"))
            taps = tuple(int(t) for t in vals[f"{tag}_taps"].split(","))
            embed = int(vals[f"{tag}_embed"])
            use_gap = vals[f"{tag}_gap"] == "True"
            kind, seed = vals[f"{tag}_init"].rsplit(":", 1)
            dropout = float(vals["dropout"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"checkpoint config is missing or malformed: {exc}") from exc
        configs.append(EncoderConfig(
            c, h, w, blocks, embed_dim=embed, tap_layers=taps,
            dropout_p=dropout, multiscale=True, use_gap=use_gap,
            init=InitSpec(kind, seed=int(seed))))
    return configs[0], configs[1]
