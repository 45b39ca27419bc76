"""End-to-end workflows: baking, the seven training stages, and the
texture / generate / interpolate / render / eval commands.

Artifacts live under a run directory:

    run_dir/
      config.json                     run configuration
      baked/
        bake_meta.json                tau, l, grid_n
        index.json                    shape ids and part labels
        <shape_id>/<label>.png        baked RGBA atlas
        <shape_id>/<label>.box.npy    fitted box displacements
      checkpoints/
        pvae.bxck spvae.bxck tvae.bxck
        seed_latents.npz other_latents.npz
        prior_seed.bxck prior_other.bxck prior_bottom.bxck
      outputs/...                     command results

Each training stage refuses to run until the artifact of the stage before
it exists, enforcing the staged order (geometry models, texture model,
latent extraction, code-grid models).
"""

from __future__ import annotations

import glob
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import geomvae, prior, texturevae, vq
from .atlas import AtlasImage, AtlasLayout, build_layout, load_png, save_png, split_patches
from .autodiff import Tensor, parameter
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .bake import bake_part
from .config import RunConfig, config_dict, save_config
from .geom import (DeformedBox, LoadedShape, PartMesh, category_spec,
                   fit_deformed_box, geometry_vector, load_shape,
                   save_manifest, save_obj, seed_label, template_box)
from .render import TexturedPart, default_viewpoints, render, save_image, shape_bbox
from .render import compatibility_score as _compat
from .render import multiview_ssim as _mv_ssim
from .render import seam_consistency as _seam
from .texturevae import TvaeSpec, seed_feature


class StageError(RuntimeError):
    pass


STAGES: tuple[tuple[str, str], ...] = (
    ("pvae", "train one geometry autoencoder per part label"),
    ("spvae", "train the shape-level autoencoder over part latents + structure"),
    ("tvae", "train the texture autoencoder and both codebooks"),
    ("seed_latents", "extract seed-part latents and code grids"),
    ("prior_seed", "train the seed-part coarse code-grid model"),
    ("other_latents", "extract non-seed latents with seed texture features"),
    ("prior_other", "train the non-seed coarse model and the fine model"),
)


@dataclass
class RunPaths:
    run_dir: str
    config: str
    baked: str
    bake_meta: str
    index: str
    ck: str
    outputs: str
    stage_artifacts: dict = field(default_factory=dict)


def run_paths(cfg: RunConfig) -> RunPaths:
    rd = cfg.run_dir or "."
    ck = os.path.join(rd, "checkpoints")
    p = RunPaths(
        run_dir=rd,
        config=os.path.join(rd, "config.json"),
        baked=os.path.join(rd, "baked"),
        bake_meta=os.path.join(rd, "baked", "bake_meta.json"),
        index=os.path.join(rd, "baked", "index.json"),
        ck=ck,
        outputs=os.path.join(rd, "outputs"),
    )
    p.stage_artifacts = {
        "bake": p.index,
        "pvae": os.path.join(ck, "pvae.bxck"),
        "spvae": os.path.join(ck, "spvae.bxck"),
        "tvae": os.path.join(ck, "tvae.bxck"),
        "seed_latents": os.path.join(ck, "seed_latents.npz"),
        "prior_seed": os.path.join(ck, "prior_seed.bxck"),
        "other_latents": os.path.join(ck, "other_latents.npz"),
        "prior_other": os.path.join(ck, "prior_other.bxck"),
    }
    return p


def _require(paths: RunPaths, stage: str) -> None:
    """Every stage needs all earlier artifacts; name the first one missing."""
    order = ["bake"] + [s for s, _ in STAGES]
    for prev in order[:order.index(stage)]:
        art = paths.stage_artifacts[prev]
        if not os.path.exists(art):
            raise StageError(
                f"stage {stage!r} needs the artifact of stage {prev!r}: "
                f"{art} is missing; run that stage first")


def _layout(cfg: RunConfig) -> AtlasLayout:
    return build_layout(cfg.patch, cfg.grid_n)


def _tvae_spec(cfg: RunConfig) -> TvaeSpec:
    return TvaeSpec(patch=cfg.patch, channels=cfg.tvae_channels,
                    embed_dim=cfg.embed_dim, codebook_size=cfg.codebook_size,
                    beta1=cfg.beta1)


def _top_spec(cfg: RunConfig, cond_dim: int) -> prior.PriorSpec:
    tg = cfg.patch // 8
    return prior.PriorSpec(k=cfg.codebook_size, height=6 * tg, width=tg,
                           channels=cfg.prior_channels, blocks=cfg.prior_blocks,
                           cond_dim=cond_dim,
                           cond_channels=cfg.prior_cond_channels,
                           use_attention=cfg.prior_attention)


def _bottom_spec(cfg: RunConfig) -> prior.PriorSpec:
    bg = cfg.patch // 4
    return prior.PriorSpec(k=cfg.codebook_size, height=6 * bg, width=bg,
                           channels=cfg.prior_channels, blocks=cfg.prior_blocks,
                           cond_codes=cfg.codebook_size,
                           cond_channels=cfg.prior_cond_channels,
                           use_attention=cfg.prior_attention)


# ---------------------------------------------------------------------------
# baking

def cmd_bake(cfg: RunConfig, log=print) -> dict:
    """Fits boxes and bakes atlases for every manifest under data_dir."""
    paths = run_paths(cfg)
    manifests = sorted(glob.glob(os.path.join(cfg.data_dir, "*", "manifest.json")))
    if os.path.isfile(cfg.data_dir):
        manifests = [cfg.data_dir]
    if not manifests:
        raise StageError(f"no */manifest.json under {cfg.data_dir!r}")
    os.makedirs(paths.baked, exist_ok=True)
    os.makedirs(paths.run_dir, exist_ok=True)
    save_config(cfg, paths.config)
    layout = _layout(cfg)
    index = {"category": cfg.category, "patch": cfg.patch,
             "grid_n": cfg.grid_n, "shapes": []}
    for mpath in manifests:
        shape = load_shape(mpath)
        if shape.category != cfg.category:
            raise StageError(f"{mpath}: category {shape.category!r} does not "
                             f"match configured {cfg.category!r}")
        sid = os.path.basename(os.path.dirname(mpath))
        sdir = os.path.join(paths.baked, sid)
        os.makedirs(sdir, exist_ok=True)
        labels = []
        for part in shape.parts:
            box = fit_deformed_box(part, cfg.grid_n, iters=cfg.fit_iters)
            atlas = bake_part(part, box, layout, tau=cfg.tau)
            save_png(atlas, os.path.join(sdir, f"{part.label}.png"))
            np.save(os.path.join(sdir, f"{part.label}.box.npy"),
                    box.displacements.astype(np.float32))
            labels.append(part.label)
        index["shapes"].append({"id": sid, "labels": labels})
        log(f"baked {sid}: {len(labels)} parts")
    with open(paths.bake_meta, "w", encoding="utf-8") as fh:
        json.dump({"tau": cfg.tau, "l": cfg.patch, "grid_n": cfg.grid_n}, fh)
    with open(paths.index, "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2)
    return index


@dataclass
class BakedSet:
    category: str
    ids: list
    labels: dict            # id -> [label]
    root: str
    grid_n: int

    def box(self, sid: str, label: str) -> DeformedBox:
        disp = np.load(os.path.join(self.root, sid, f"{label}.box.npy"))
        return DeformedBox(template=template_box(self.grid_n),
                           displacements=disp.astype(np.float64))

    def atlas(self, sid: str, label: str) -> AtlasImage:
        return load_png(os.path.join(self.root, sid, f"{label}.png"))


def load_baked(cfg: RunConfig, paths: RunPaths) -> BakedSet:
    with open(paths.index, "r", encoding="utf-8") as fh:
        index = json.load(fh)
    if index["patch"] != cfg.patch or index["grid_n"] != cfg.grid_n:
        raise StageError("baked dataset was made with a different patch/grid_n")
    return BakedSet(category=index["category"],
                    ids=[s["id"] for s in index["shapes"]],
                    labels={s["id"]: s["labels"] for s in index["shapes"]},
                    root=paths.baked, grid_n=index["grid_n"])


# ---------------------------------------------------------------------------
# checkpoint helpers

def _wrap(arrs: dict, prefix: str) -> dict:
    out = {}
    plen = len(prefix)
    for name, arr in arrs.items():
        if name.startswith(prefix):
            out[name[plen:]] = parameter(arr.copy())
    return out


def _save_params(path, named: dict, meta: dict) -> None:
    tensors = {}
    for prefix, params in named.items():
        for k, t in params.items():
            arr = t.data if isinstance(t, Tensor) else t
            tensors[f"{prefix}.{k}"] = arr
    save_checkpoint(path, tensors, meta)


def _codebook_tensors(prefix: str, cb: vq.Codebook) -> dict:
    return {f"{prefix}.codebook": cb.entries,
            f"{prefix}.codebook.counts": cb.ema_counts,
            f"{prefix}.codebook.sums": cb.ema_sums}


def _codebook_from(tensors: dict, prefix: str) -> vq.Codebook:
    return vq.Codebook(entries=tensors[f"{prefix}.codebook"].copy(),
                       ema_counts=tensors[f"{prefix}.codebook.counts"].copy(),
                       ema_sums=tensors[f"{prefix}.codebook.sums"].copy())


# ---------------------------------------------------------------------------
# training stages

def _part_latent(pvae: dict, box: DeformedBox) -> np.ndarray:
    gv = geometry_vector(box)
    mu, _ = geomvae.encode_mean(pvae, gv.values.reshape(1, -1))
    return mu[0].astype(np.float32)


def stage_pvae(cfg: RunConfig, paths: RunPaths, log=print) -> None:
    _require(paths, "pvae")
    baked = load_baked(cfg, paths)
    rng = np.random.default_rng(cfg.seed)
    by_label: dict[str, list] = {}
    for sid in baked.ids:
        for label in baked.labels[sid]:
            gv = geometry_vector(baked.box(sid, label))
            by_label.setdefault(label, []).append(gv.values)
    named = {}
    for label in category_spec(cfg.category).parts:
        if label not in by_label:
            continue
        data = np.stack(by_label[label]).astype(np.float32)
        params, hist = geomvae.train_vae(
            data, cfg.pvae_hidden, cfg.part_z, rng, iters=cfg.pvae_iters,
            lr=cfg.vae_lr, kl_weight=cfg.kl_weight)
        named[f"pvae.{label}"] = params
        log(f"pvae[{label}]: n={data.shape[0]} recon {hist.recon[0]:.4f} "
            f"-> {hist.recon[-1]:.4f}")
    in_dim = next(iter(by_label.values()))[0].shape[0]
    _save_params(os.path.join(paths.ck, "pvae.bxck"), named,
                 {"labels": sorted(k[5:] for k in named),
                  "in_dim": in_dim, "z_dim": cfg.part_z,
                  "hidden": cfg.pvae_hidden, "config": config_dict(cfg)})


def load_pvae(paths: RunPaths) -> tuple[dict, dict]:
    tensors, meta = load_checkpoint(paths.stage_artifacts["pvae"])
    return ({label: _wrap(tensors, f"pvae.{label}.")
             for label in meta["labels"]}, meta)


def stage_spvae(cfg: RunConfig, paths: RunPaths, log=print) -> None:
    _require(paths, "spvae")
    baked = load_baked(cfg, paths)
    pvae, _ = load_pvae(paths)
    rng = np.random.default_rng(cfg.seed + 1)
    rows = []
    for sid in baked.ids:
        boxes = {lbl: baked.box(sid, lbl) for lbl in baked.labels[sid]}
        latents = {lbl: _part_latent(pvae[lbl], box)
                   for lbl, box in boxes.items()}
        sc = geomvae.structure_code(cfg.category, boxes)
        rows.append(geomvae.spvae_input(cfg.category, latents, sc, cfg.part_z))
    data = np.stack(rows).astype(np.float32)
    slots = len(category_spec(cfg.category).parts)
    params, hist = geomvae.train_spvae(
        data, slots, cfg.part_z, cfg.spvae_hidden, cfg.spvae_latent, rng,
        iters=cfg.spvae_iters, lr=cfg.vae_lr, kl_weight=cfg.kl_weight)
    log(f"spvae: n={data.shape[0]} recon {hist.recon[0]:.4f} -> {hist.recon[-1]:.4f}")
    _save_params(os.path.join(paths.ck, "spvae.bxck"), {"spvae": params},
                 {"slots": slots, "z_dim": cfg.part_z,
                  "latent": cfg.spvae_latent, "hidden": cfg.spvae_hidden,
                  "config": config_dict(cfg)})


def load_spvae(paths: RunPaths) -> tuple[dict, dict]:
    tensors, meta = load_checkpoint(paths.stage_artifacts["spvae"])
    return _wrap(tensors, "spvae."), meta


def stage_tvae(cfg: RunConfig, paths: RunPaths, log=print,
               target_l1: float | None = None) -> None:
    _require(paths, "tvae")
    baked = load_baked(cfg, paths)
    patches = []
    for sid in baked.ids:
        for label in baked.labels[sid]:
            patches.append(split_patches(baked.atlas(sid, label).pixels,
                                         cfg.patch))
    dataset = np.stack(patches).astype(np.float32)
    rng = np.random.default_rng(cfg.seed + 2)
    trained = texturevae.train_texturevae(
        dataset, _tvae_spec(cfg), _layout(cfg), rng, iters=cfg.tvae_iters,
        lr=cfg.tvae_lr, batch_parts=cfg.tvae_batch, seam_every=cfg.seam_every,
        seam_weight=cfg.seam_weight, target_l1=target_l1,
        log_every=max(1, cfg.tvae_iters // 10) if log is print else 0)
    log(f"tvae: n={dataset.shape[0]} parts, l1 {trained.history.l1[0]:.4f} "
        f"-> {trained.history.l1[-1]:.4f} in {trained.iterations_run} iters")
    tensors = {f"tvae.{k}": (t.data if isinstance(t, Tensor) else t)
               for k, t in trained.params.items()}
    tensors.update(_codebook_tensors("top", trained.cb_top))
    tensors.update(_codebook_tensors("bottom", trained.cb_bottom))
    save_checkpoint(os.path.join(paths.ck, "tvae.bxck"), tensors,
                    {"patch": cfg.patch, "config": config_dict(cfg),
                     "final_l1": float(trained.history.l1[-1])})


def load_tvae(paths: RunPaths) -> tuple[dict, vq.Codebook, vq.Codebook, dict]:
    tensors, meta = load_checkpoint(paths.stage_artifacts["tvae"])
    params = _wrap(tensors, "tvae.")
    return params, _codebook_from(tensors, "top"), \
        _codebook_from(tensors, "bottom"), meta


def stage_seed_latents(cfg: RunConfig, paths: RunPaths, log=print) -> None:
    _require(paths, "seed_latents")
    baked = load_baked(cfg, paths)
    pvae, _ = load_pvae(paths)
    tvae_params, cb_top, cb_bottom, _ = load_tvae(paths)
    ids, zs, tops, bottoms, seeds = [], [], [], [], []
    for sid in baked.ids:
        labels = baked.labels[sid]
        boxes = {lbl: baked.box(sid, lbl) for lbl in labels}
        centers = {lbl: np.asarray(b.vertices).mean(axis=0)
                   for lbl, b in boxes.items()}
        seed = seed_label(cfg.category, labels, centers)
        idx = texturevae.encode_atlas(tvae_params, cb_top, cb_bottom,
                                      baked.atlas(sid, seed))
        ids.append(sid)
        seeds.append(seed)
        zs.append(_part_latent(pvae[seed], boxes[seed]))
        tops.append(idx.top)
        bottoms.append(idx.bottom)
    np.savez(paths.stage_artifacts["seed_latents"],
             ids=np.array(ids), seeds=np.array(seeds),
             z=np.stack(zs), top=np.stack(tops).astype(np.int32),
             bottom=np.stack(bottoms).astype(np.int32))
    log(f"seed latents: {len(ids)} shapes")


def stage_prior_seed(cfg: RunConfig, paths: RunPaths, log=print) -> None:
    _require(paths, "prior_seed")
    data = np.load(paths.stage_artifacts["seed_latents"], allow_pickle=False)
    rng = np.random.default_rng(cfg.seed + 3)
    spec = _top_spec(cfg, cond_dim=cfg.part_z)
    params, hist = prior.train_prior(
        data["top"], spec, rng, conds=data["z"].astype(np.float32),
        iters=cfg.prior_iters, lr=cfg.prior_lr, batch=cfg.prior_batch)
    log(f"prior seed: ce {hist.ce[0]:.3f} -> {hist.ce[-1]:.4f}")
    _save_params(os.path.join(paths.ck, "prior_seed.bxck"),
                 {"prior.top.seed": params},
                 {"cond_dim": cfg.part_z, "config": config_dict(cfg)})


def stage_other_latents(cfg: RunConfig, paths: RunPaths, log=print) -> None:
    _require(paths, "other_latents")
    baked = load_baked(cfg, paths)
    pvae, _ = load_pvae(paths)
    tvae_params, cb_top, cb_bottom, _ = load_tvae(paths)
    seed_data = np.load(paths.stage_artifacts["seed_latents"], allow_pickle=False)
    seed_by_id = {str(i): (str(s), t) for i, s, t in
                  zip(seed_data["ids"], seed_data["seeds"], seed_data["top"])}
    sids, labels_out, zs, feats, tops, bottoms = [], [], [], [], [], []
    for sid in baked.ids:
        seed, seed_top = seed_by_id[sid]
        feat = seed_feature(cb_top, seed_top)
        for label in baked.labels[sid]:
            if label == seed:
                continue
            idx = texturevae.encode_atlas(tvae_params, cb_top, cb_bottom,
                                          baked.atlas(sid, label))
            sids.append(sid)
            labels_out.append(label)
            zs.append(_part_latent(pvae[label], baked.box(sid, label)))
            feats.append(feat.astype(np.float32))
            tops.append(idx.top)
            bottoms.append(idx.bottom)
    if not sids:
        raise StageError(
            "no non-seed parts in the baked set; single-part categories "
            "stop after 'prior_seed' (run --stages up to that point)")
    np.savez(paths.stage_artifacts["other_latents"],
             ids=np.array(sids), labels=np.array(labels_out),
             z=np.stack(zs), feat=np.stack(feats),
             top=np.stack(tops).astype(np.int32),
             bottom=np.stack(bottoms).astype(np.int32))
    log(f"other latents: {len(sids)} parts")


def stage_prior_other(cfg: RunConfig, paths: RunPaths, log=print) -> None:
    _require(paths, "prior_other")
    other = np.load(paths.stage_artifacts["other_latents"], allow_pickle=False)
    seed = np.load(paths.stage_artifacts["seed_latents"], allow_pickle=False)
    rng = np.random.default_rng(cfg.seed + 4)
    cond = np.concatenate([other["z"], other["feat"]], axis=1).astype(np.float32)
    spec_o = _top_spec(cfg, cond_dim=cond.shape[1])
    params_o, hist_o = prior.train_prior(
        other["top"], spec_o, rng, conds=cond, iters=cfg.prior_iters,
        lr=cfg.prior_lr, batch=cfg.prior_batch)
    log(f"prior other: ce {hist_o.ce[0]:.3f} -> {hist_o.ce[-1]:.4f}")
    _save_params(os.path.join(paths.ck, "prior_other.bxck"),
                 {"prior.top.other": params_o},
                 {"cond_dim": cond.shape[1], "config": config_dict(cfg)})
    # the fine-level model sees every part: coarse grid in, fine grid out
    bottoms = np.concatenate([seed["bottom"], other["bottom"]], axis=0)
    tops = np.concatenate([seed["top"], other["top"]], axis=0)
    spec_b = _bottom_spec(cfg)
    params_b, hist_b = prior.train_prior(
        bottoms, spec_b, rng, coarse=tops, iters=cfg.prior_iters,
        lr=cfg.prior_lr, batch=max(2, cfg.prior_batch // 2))
    log(f"prior bottom: ce {hist_b.ce[0]:.3f} -> {hist_b.ce[-1]:.4f}")
    _save_params(os.path.join(paths.ck, "prior_bottom.bxck"),
                 {"prior.bottom": params_b}, {"config": config_dict(cfg)})


_STAGE_FN = {
    "pvae": stage_pvae,
    "spvae": stage_spvae,
    "tvae": stage_tvae,
    "seed_latents": stage_seed_latents,
    "prior_seed": stage_prior_seed,
    "other_latents": stage_other_latents,
    "prior_other": stage_prior_other,
}


def cmd_train(cfg: RunConfig, stages: list[str] | None = None,
              dry_run: bool = False, log=print) -> list[str]:
    """Runs the requested stages in canonical order; returns what ran."""
    order = [s for s, _ in STAGES]
    todo = order if stages is None else stages
    bad = [s for s in todo if s not in order]
    if bad:
        raise StageError(f"unknown stage(s) {bad}; valid: {order}")
    todo = [s for s in order if s in todo]
    if dry_run:
        for i, (name, desc) in enumerate(STAGES, 1):
            mark = "*" if name in todo else " "
            log(f" {mark} {i}. {name}: {desc}")
        return []
    paths = run_paths(cfg)
    os.makedirs(paths.ck, exist_ok=True)
    save_config(cfg, paths.config)
    for name in todo:
        log(f"-- stage {name}")
        _STAGE_FN[name](cfg, paths, log=log)
    return todo


# ---------------------------------------------------------------------------
# trained-model container and sampling

@dataclass
class Trained:
    cfg: RunConfig
    layout: AtlasLayout
    pvae: dict               # label -> params
    spvae: dict
    spvae_meta: dict
    tvae: dict
    cb_top: vq.Codebook
    cb_bottom: vq.Codebook
    prior_seed: dict
    prior_other: dict
    prior_bottom: dict
    seed_cond_dim: int
    other_cond_dim: int


def load_trained(cfg: RunConfig) -> Trained:
    paths = run_paths(cfg)
    for stage in ("pvae", "spvae", "tvae", "prior_seed", "prior_other"):
        if not os.path.exists(paths.stage_artifacts[stage]):
            raise StageError(f"missing checkpoint for stage {stage!r}: "
                             f"{paths.stage_artifacts[stage]}")
    pvae, _ = load_pvae(paths)
    spvae, spvae_meta = load_spvae(paths)
    tvae_params, cb_top, cb_bottom, _ = load_tvae(paths)
    ts, meta_s = load_checkpoint(paths.stage_artifacts["prior_seed"])
    to, meta_o = load_checkpoint(paths.stage_artifacts["prior_other"])
    tb, _ = load_checkpoint(os.path.join(paths.ck, "prior_bottom.bxck"))
    return Trained(cfg=cfg, layout=_layout(cfg), pvae=pvae, spvae=spvae,
                   spvae_meta=spvae_meta, tvae=tvae_params, cb_top=cb_top,
                   cb_bottom=cb_bottom,
                   prior_seed=_wrap(ts, "prior.top.seed."),
                   prior_other=_wrap(to, "prior.top.other."),
                   prior_bottom=_wrap(tb, "prior.bottom."),
                   seed_cond_dim=meta_s["cond_dim"],
                   other_cond_dim=meta_o["cond_dim"])


@dataclass
class TextureSet:
    """One sampled texture assignment for a shape."""
    seed: str
    atlases: dict            # label -> AtlasImage
    tops: dict               # label -> (Ht, Wt) int32
    bottoms: dict            # label -> (Hb, Wb) int32


def _sample_level_pair(tp: Trained, top_params: dict, spec_top: prior.PriorSpec,
                       cond: np.ndarray, count: int, temperature: float,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    tops = prior.sample_prior(top_params, spec_top, count, rng, cond=cond,
                              temperature=temperature)
    bottoms = prior.sample_prior(tp.prior_bottom, _bottom_spec(tp.cfg), count,
                                 rng, coarse=tops, temperature=temperature)
    return tops, bottoms


def texture_shape(tp: Trained, boxes: dict, latents: dict, num_samples: int,
                  temperature: float, rng: np.random.Generator,
                  log=print) -> list[TextureSet]:
    """Samples num_samples texture sets for one shape.

    The seed part is textured first from its geometry latent; its pooled
    coarse codes then condition every other part, tying the set together.
    """
    labels = list(boxes)
    known = category_spec(tp.cfg.category).parts
    for lbl in labels:
        if lbl not in known:
            raise StageError(f"unknown part slot {lbl!r} for category "
                             f"{tp.cfg.category!r}")
    centers = {lbl: np.asarray(b.vertices).mean(axis=0)
               for lbl, b in boxes.items()}
    seed = seed_label(tp.cfg.category, labels, centers)
    cfg = tp.cfg
    spec_seed = _top_spec(cfg, tp.seed_cond_dim)
    spec_other = _top_spec(cfg, tp.other_cond_dim)
    cond = np.tile(latents[seed], (num_samples, 1)).astype(np.float32)
    tops_s, bottoms_s = _sample_level_pair(tp, tp.prior_seed, spec_seed, cond,
                                           num_samples, temperature, rng)
    sets = [TextureSet(seed=seed, atlases={}, tops={}, bottoms={})
            for _ in range(num_samples)]
    for k in range(num_samples):
        sets[k].tops[seed] = tops_s[k]
        sets[k].bottoms[seed] = bottoms_s[k]
    feats = np.stack([seed_feature(tp.cb_top, tops_s[k])
                      for k in range(num_samples)]).astype(np.float32)
    for label in labels:
        if label == seed:
            continue
        cond = np.concatenate(
            [np.tile(latents[label], (num_samples, 1)), feats],
            axis=1).astype(np.float32)
        tops_o, bottoms_o = _sample_level_pair(tp, tp.prior_other, spec_other,
                                               cond, num_samples, temperature,
                                               rng)
        for k in range(num_samples):
            sets[k].tops[label] = tops_o[k]
            sets[k].bottoms[label] = bottoms_o[k]
    for k, ts in enumerate(sets):
        for label in labels:
            idx = texturevae.IndexMatrices(top=ts.tops[label],
                                           bottom=ts.bottoms[label])
            ts.atlases[label] = texturevae.decode_indices(
                tp.tvae, tp.cb_top, tp.cb_bottom, idx, cfg.patch)
        log(f"sample {k}: textured {len(labels)} parts (seed {seed})")
    return sets


def _obj_uvs(layout: AtlasLayout) -> np.ndarray:
    """Per-corner texture coordinates in OBJ convention (v up, unit square)."""
    uv = np.asarray(layout.tri_uv, dtype=np.float64).copy()
    uv[:, :, 0] /= layout.width
    uv[:, :, 1] = 1.0 - uv[:, :, 1] / layout.height
    return uv


def write_textured_shape(out_dir: str, category: str, boxes: dict,
                         atlases: dict, layout: AtlasLayout) -> str:
    """Writes per-part OBJ + atlas PNG and a manifest; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    uvs = _obj_uvs(layout)
    entries = []
    for label, box in boxes.items():
        png = f"{label}.png"
        save_png(atlases[label], os.path.join(out_dir, png))
        save_obj(os.path.join(out_dir, f"{label}.obj"),
                 box.vertices, box.template.faces, uvs=uvs, texture_file=png)
        entries.append({"label": label, "mesh": f"{label}.obj", "texture": png})
    mpath = os.path.join(out_dir, "manifest.json")
    save_manifest(mpath, category, entries)
    return mpath


def _encode_shape(tp: Trained, shape: LoadedShape
                  ) -> tuple[dict, dict]:
    """Fits boxes and encodes geometry latents for every part."""
    boxes, latents = {}, {}
    for part in shape.parts:
        box = fit_deformed_box(part, tp.cfg.grid_n, iters=tp.cfg.fit_iters)
        boxes[part.label] = box
        latents[part.label] = _part_latent(tp.pvae[part.label], box)
    return boxes, latents


def cmd_texture(cfg: RunConfig, manifest: str, num_samples: int = 1,
                temperature: float | None = None, seed: int | None = None,
                out_dir: str | None = None, log=print) -> list[str]:
    """Textures an existing shape; returns one manifest path per sample."""
    tp = load_trained(cfg)
    shape = load_shape(manifest)
    if shape.category != cfg.category:
        raise StageError(f"shape category {shape.category!r} does not match "
                         f"configured {cfg.category!r}")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    temp = cfg.temperature if temperature is None else temperature
    boxes, latents = _encode_shape(tp, shape)
    sets = texture_shape(tp, boxes, latents, num_samples, temp, rng, log=log)
    root = out_dir or os.path.join(run_paths(cfg).outputs, "texture")
    out = []
    for k, ts in enumerate(sets):
        out.append(write_textured_shape(os.path.join(root, f"sample_{k:02d}"),
                                        cfg.category, boxes, ts.atlases,
                                        tp.layout))
    return out


def cmd_generate(cfg: RunConfig, num_samples: int = 1,
                 temperature: float | None = None, seed: int | None = None,
                 out_dir: str | None = None, log=print) -> list[str]:
    """Samples new shapes from the shape-level model and textures them."""
    tp = load_trained(cfg)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    temp = cfg.temperature if temperature is None else temperature
    meta = tp.spvae_meta
    root = out_dir or os.path.join(run_paths(cfg).outputs, "generate")
    out = []
    for k in range(num_samples):
        spec = geomvae.sample_shape(tp.spvae, tp.pvae, cfg.category,
                                    cfg.grid_n, meta["z_dim"], meta["latent"],
                                    rng)
        if not spec.labels:
            log(f"sample {k}: no parts decoded, skipping")
            continue
        sets = texture_shape(tp, spec.boxes, spec.latents, 1, temp, rng,
                             log=log)
        out.append(write_textured_shape(os.path.join(root, f"shape_{k:02d}"),
                                        cfg.category, spec.boxes,
                                        sets[0].atlases, tp.layout))
        log(f"generated shape {k}: parts {spec.labels}")
    return out


def _encode_textures(tp: Trained, shape: LoadedShape, boxes: dict
                     ) -> dict:
    """Per part: continuous feature maps plus their quantized indices."""
    from .autodiff import no_grad
    out = {}
    layout = tp.layout
    for part in shape.parts:
        atlas = bake_part(part, boxes[part.label], layout, tau=tp.cfg.tau)
        x = np.ascontiguousarray(
            split_patches(atlas.pixels, tp.cfg.patch).transpose(0, 3, 1, 2))
        with no_grad():
            z_e_t, z_e_b = texturevae.encode_patch(tp.tvae, Tensor(x))
        _, it = texturevae.quantize_maps(tp.cb_top, z_e_t.data)
        _, ib = texturevae.quantize_maps(tp.cb_bottom, z_e_b.data)
        out[part.label] = {"z_e_t": z_e_t.data, "z_e_b": z_e_b.data,
                           "top": _stack_patch_grid(it),
                           "bottom": _stack_patch_grid(ib)}
    return out


def _stack_patch_grid(idx: np.ndarray) -> np.ndarray:
    """(6, g, g) per-patch index maps -> (6g, g) stacked grid."""
    return idx.reshape(idx.shape[0] * idx.shape[1], idx.shape[2]).astype(np.int32)


def _quantize_stacked(cb: vq.Codebook, z_e: np.ndarray) -> np.ndarray:
    _, idx = texturevae.quantize_maps(cb, z_e)
    return _stack_patch_grid(idx)


def cmd_interpolate(cfg: RunConfig, manifest_a: str, manifest_b: str,
                    steps: int = 5, out_dir: str | None = None,
                    log=print) -> list[str]:
    """Walks shape latents and texture feature maps between two shapes.

    Endpoints decode from their own quantized code grids, so step 0 and the
    last step reproduce the two reconstructions exactly.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    tp = load_trained(cfg)
    sa, sb = load_shape(manifest_a), load_shape(manifest_b)
    if sa.labels() != sb.labels():
        raise StageError(f"part slots differ: {sa.labels()} vs {sb.labels()}")
    if sa.category != cfg.category or sb.category != cfg.category:
        raise StageError("shapes do not match the configured category")
    boxes_a, lat_a = _encode_shape(tp, sa)
    boxes_b, lat_b = _encode_shape(tp, sb)
    tex_a = _encode_textures(tp, sa, boxes_a)
    tex_b = _encode_textures(tp, sb, boxes_b)
    meta = tp.spvae_meta
    slots, z_dim = meta["slots"], meta["z_dim"]

    def shape_latent(shape, boxes, latents):
        sc = geomvae.structure_code(cfg.category, boxes)
        row = geomvae.spvae_input(cfg.category, latents, sc, z_dim)
        mu, _ = geomvae.encode_mean(tp.spvae, row.reshape(1, -1))
        return mu[0].astype(np.float32)

    za = shape_latent(sa, boxes_a, lat_a)
    zb = shape_latent(sb, boxes_b, lat_b)
    root = out_dir or os.path.join(run_paths(cfg).outputs, "interpolate")
    out = []
    for k in range(steps):
        t = k / (steps - 1)
        dec = geomvae.spvae_decode_vec(tp.spvae, (1 - t) * za + t * zb,
                                       slots, z_dim)
        boxes, atlases = {}, {}
        for i, label in enumerate(category_spec(cfg.category).parts):
            if label not in tex_a:
                continue
            if dec.raw_flags[i] < 0.5:
                continue
            boxes[label] = geomvae.realize_box(
                tp.pvae[label], dec.part_latents[i], cfg.grid_n,
                dec.structure.centers[i], dec.structure.half_extents[i])
            if t == 0.0:
                top, bottom = tex_a[label]["top"], tex_a[label]["bottom"]
            elif t == 1.0:
                top, bottom = tex_b[label]["top"], tex_b[label]["bottom"]
            else:
                ze_t = (1 - t) * tex_a[label]["z_e_t"] + t * tex_b[label]["z_e_t"]
                ze_b = (1 - t) * tex_a[label]["z_e_b"] + t * tex_b[label]["z_e_b"]
                top = _quantize_stacked(tp.cb_top, ze_t)
                bottom = _quantize_stacked(tp.cb_bottom, ze_b)
            idx = texturevae.IndexMatrices(top=top, bottom=bottom)
            atlases[label] = texturevae.decode_indices(
                tp.tvae, tp.cb_top, tp.cb_bottom, idx, cfg.patch)
        out.append(write_textured_shape(os.path.join(root, f"step_{k:02d}"),
                                        cfg.category, boxes, atlases,
                                        tp.layout))
        log(f"interpolate t={t:.2f}: {len(boxes)} parts")
    return out


# ---------------------------------------------------------------------------
# rendering and evaluation of textured outputs

def load_textured(manifest: str, patch: int, grid_n: int) -> list[TexturedPart]:
    """Rebuilds renderable parts from an emitted manifest directory."""
    with open(manifest, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    base = os.path.dirname(manifest)
    layout = build_layout(patch, grid_n)
    tmpl = template_box(grid_n)
    parts = []
    for entry in doc["parts"]:
        if "texture" not in entry:
            raise StageError(f"{manifest}: part {entry['label']!r} has no atlas")
        from .geom import load_obj
        mesh = load_obj(os.path.join(base, entry["mesh"]), label=entry["label"])
        if mesh.vertices.shape[0] != tmpl.vertices.shape[0]:
            raise StageError(f"{entry['mesh']}: not a grid_n={grid_n} box")
        box = DeformedBox(template=tmpl,
                          displacements=mesh.vertices - tmpl.vertices)
        atlas = load_png(os.path.join(base, entry["texture"]))
        if atlas.l != patch:
            raise StageError(f"{entry['texture']}: atlas size {atlas.l} != {patch}")
        parts.append(TexturedPart(box=box, atlas=atlas, layout=layout))
    return parts


def cmd_render(cfg: RunConfig, manifest: str, out_dir: str | None = None,
               views: int = 12, size: int = 256, log=print) -> list[str]:
    parts = load_textured(manifest, cfg.patch, cfg.grid_n)
    cams = default_viewpoints(shape_bbox(parts), count=views, size=size)
    root = out_dir or os.path.join(run_paths(cfg).outputs, "render")
    os.makedirs(root, exist_ok=True)
    from .render import build_scene
    scene = build_scene(parts)
    out = []
    for i, cam in enumerate(cams):
        img = render(parts, cam, scene=scene)
        path = os.path.join(root, f"view_{i:02d}.png")
        save_image(img, path)
        out.append(path)
        log(f"rendered view {i:2d} -> {path}")
    return out


def cmd_eval(cfg: RunConfig, manifest: str, against: str | None = None,
             views: int = 12, log=print) -> dict:
    """Seam / compatibility metrics, plus multiview SSIM when compared."""
    parts = load_textured(manifest, cfg.patch, cfg.grid_n)
    layout = build_layout(cfg.patch, cfg.grid_n)
    with open(manifest, "r", encoding="utf-8") as fh:
        labels = [e["label"] for e in json.load(fh)["parts"]]
    seams = {lbl: _seam(p.atlas, layout) for lbl, p in zip(labels, parts)}
    result = {
        "seam_consistency": seams,
        "seam_consistency_mean": float(np.mean(list(seams.values()))),
        "compatibility_score": _compat([p.atlas for p in parts], layout),
    }
    if against:
        other = load_textured(against, cfg.patch, cfg.grid_n)
        cams = default_viewpoints(shape_bbox(parts), count=views)
        result["multiview_ssim"] = _mv_ssim(parts, other, cameras=cams)
    log(json.dumps(result, indent=2, sort_keys=True))
    return result


def image_guided(*_args, **_kwargs):
    """Placeholder for conditioning on a photograph."""
    raise NotImplementedError(
        "image-guided generation requires external shape-prediction and "
        "perceptual feature networks; provide a precomputed condition "
        "vector to the samplers instead")
