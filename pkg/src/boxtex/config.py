"""Run configuration: profiles, key=value config files, JSON sidecars.

A config is one flat dataclass. The `desk` profile is sized for a single
CPU core; `paper` carries the full-scale hyperparameters for reference and
is not expected to finish on a desktop. Config files are plain text, one
`key = value` per line, `#` comments; values are parsed by the field's
declared type.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields


@dataclass
class RunConfig:
    category: str = "chair"
    profile: str = "desk"
    seed: int = 0
    # atlas / geometry
    patch: int = 64              # face edge length l; atlas is 4l x 3l
    grid_n: int = 4              # box subdivision per face edge
    tau: float = 0.03            # bake hit tolerance, fraction of bbox diagonal
    fit_iters: int = 20
    # texture model
    tvae_channels: int = 32
    codebook_size: int = 128
    embed_dim: int = 32
    beta1: float = 0.25
    tvae_iters: int = 1200
    tvae_lr: float = 2e-3
    tvae_batch: int = 4
    seam_every: int = 8
    seam_weight: float = 1.0
    # geometry models
    part_z: int = 16
    pvae_hidden: int = 128
    pvae_iters: int = 700
    spvae_latent: int = 32
    spvae_hidden: int = 256
    spvae_iters: int = 700
    vae_lr: float = 1e-3
    kl_weight: float = 1e-3
    # index-grid models
    prior_channels: int = 32
    prior_blocks: int = 4
    prior_cond_channels: int = 8
    prior_iters: int = 600
    prior_lr: float = 1e-3
    prior_batch: int = 8
    prior_attention: bool = False
    temperature: float = 1.0
    # paths
    data_dir: str = ""
    run_dir: str = ""

    def __post_init__(self):
        if self.patch < 8 or self.patch % 8:
            raise ValueError("patch must be a multiple of 8 and >= 8")
        if self.patch % self.grid_n:
            raise ValueError("patch must be divisible by grid_n")
        if self.patch // 8 < 2:
            raise ValueError("patch too small for the two-level encoder")


PROFILES: dict[str, dict] = {
    "desk": {},
    "paper": {
        "patch": 256,
        "grid_n": 8,
        "tvae_channels": 128,
        "codebook_size": 512,
        "embed_dim": 64,
        "tvae_iters": 200_000,
        "part_z": 128,
        "pvae_hidden": 1024,
        "pvae_iters": 120_000,
        "spvae_latent": 256,
        "spvae_hidden": 2048,
        "spvae_iters": 120_000,
        "prior_channels": 128,
        "prior_blocks": 8,
        "prior_iters": 200_000,
        "prior_attention": True,
    },
}

_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name: str, text: str):
    f = _FIELDS.get(name)
    if f is None:
        raise ValueError(f"unknown config key {name!r}")
    text = text.strip()
    if f.type in ("bool", bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    if f.type in ("int", int):
        return int(text)
    if f.type in ("float", float):
        return float(text)
    return text


def parse_config_text(text: str) -> dict:
    """key = value lines -> typed overrides dict."""
    out: dict = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected key = value, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = _parse_value(key.strip(), val)
    return out


def load_config_file(path: str | os.PathLike) -> dict:
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def make_config(profile: str = "desk", **overrides) -> RunConfig:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; known: {sorted(PROFILES)}")
    kv = dict(PROFILES[profile])
    kv["profile"] = profile
    kv.update(overrides)
    return RunConfig(**kv)


def config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def save_config(cfg: RunConfig, path: str | os.PathLike) -> None:
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        json.dump(config_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path: str | os.PathLike) -> RunConfig:
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        return RunConfig(**json.load(fh))
