import json
import os
from types import SimpleNamespace

import numpy as np
import pytest

from boxtex import pipeline
from boxtex.atlas import load_png
from boxtex.cli import main as cli_main
from boxtex.config import load_config, make_config
from boxtex.pipeline import StageError
from boxtex.synthetic import write_toy_dataset

_silent = lambda *a, **k: None

# small enough to train in seconds, big enough to exercise every stage
TINY = {
    "patch": 16, "fit_iters": 8,
    "tvae_channels": 8, "codebook_size": 16, "embed_dim": 4,
    "tvae_iters": 150, "tvae_batch": 2, "seam_every": 4,
    "part_z": 4, "pvae_hidden": 32, "pvae_iters": 80,
    "spvae_latent": 8, "spvae_hidden": 48, "spvae_iters": 200,
    "prior_channels": 8, "prior_blocks": 2, "prior_cond_channels": 4,
    "prior_iters": 50, "prior_batch": 4,
}


def _set_flags():
    out = []
    for k, v in TINY.items():
        out += ["--set", f"{k} = {v}"]
    return out


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_run")
    data, run = str(root / "data"), str(root / "run")
    assert cli_main(["toy-data", "--out-dir", data, "--category", "chair",
                     "--count", "8", "--seed", "1"]) == 0
    common = ["--run-dir", run, "--data-dir", data, "--category", "chair",
              "--seed", "0"] + _set_flags()
    assert cli_main(["bake"] + common) == 0
    assert cli_main(["train"] + common) == 0
    cfg = make_config(run_dir=run, data_dir=data, category="chair", **TINY)
    return SimpleNamespace(root=root, data=data, run=run, common=common,
                           cfg=cfg, paths=pipeline.run_paths(cfg))


def test_bake_artifacts(tiny):
    with open(tiny.paths.index) as fh:
        index = json.load(fh)
    assert index["patch"] == 16 and index["grid_n"] == 4
    assert len(index["shapes"]) == 8
    for entry in index["shapes"]:
        assert len(entry["labels"]) == 6
        sdir = os.path.join(tiny.paths.baked, entry["id"])
        for label in entry["labels"]:
            atlas = load_png(os.path.join(sdir, f"{label}.png"))
            assert atlas.pixels.shape == (48, 64, 4)
            assert atlas.pixels[:, :, 3].max() == 1.0
            disp = np.load(os.path.join(sdir, f"{label}.box.npy"))
            assert disp.shape[1] == 3
    with open(tiny.paths.bake_meta) as fh:
        meta = json.load(fh)
    assert meta["l"] == 16
    saved = load_config(tiny.paths.config)
    assert saved.patch == 16 and saved.category == "chair"


def test_train_leaves_all_checkpoints(tiny):
    for stage, art in tiny.paths.stage_artifacts.items():
        assert os.path.exists(art), f"missing artifact for {stage}"
    assert os.path.exists(os.path.join(tiny.paths.ck, "prior_bottom.bxck"))


def test_trained_models_load(tiny):
    tp = pipeline.load_trained(tiny.cfg)
    assert set(tp.pvae) == {"back", "seat", "leg_front_left",
                            "leg_front_right", "leg_back_left",
                            "leg_back_right"}
    assert tp.cb_top.entries.shape == (16, 4)
    assert tp.cb_bottom.entries.shape == (16, 4)
    assert tp.seed_cond_dim == 4          # geometry latent only
    assert tp.other_cond_dim == 4 + 4     # latent + pooled seed feature


def test_texture_render_eval(tiny, tmp_path):
    manifest = os.path.join(tiny.data, "shape_0000", "manifest.json")
    out = str(tmp_path / "tex")
    rc = cli_main(["texture"] + tiny.common
                  + ["--manifest", manifest, "--num-samples", "2",
                     "--out-dir", out])
    assert rc == 0
    sample_manifests = [os.path.join(out, f"sample_{k:02d}", "manifest.json")
                        for k in range(2)]
    for mp in sample_manifests:
        parts = pipeline.load_textured(mp, 16, 4)
        assert len(parts) == 6
        for p in parts:
            assert p.atlas.pixels.shape == (48, 64, 4)
    # the two samples draw from the same models but different prior draws
    imgs = [load_png(os.path.join(out, f"sample_{k:02d}", "seat.png")).pixels
            for k in range(2)]
    renders = pipeline.cmd_render(tiny.cfg, sample_manifests[0],
                                  out_dir=str(tmp_path / "rend"), views=2,
                                  size=48, log=_silent)
    assert len(renders) == 2 and all(os.path.exists(p) for p in renders)
    result = pipeline.cmd_eval(tiny.cfg, sample_manifests[0],
                               against=sample_manifests[1], views=2,
                               log=_silent)
    assert set(result) >= {"seam_consistency", "seam_consistency_mean",
                           "compatibility_score", "multiview_ssim"}
    assert len(result["seam_consistency"]) == 6
    assert np.isfinite(result["seam_consistency_mean"])
    assert -1.0 <= result["multiview_ssim"] <= 1.0


def test_generate_writes_shapes(tiny, tmp_path):
    out = str(tmp_path / "gen")
    rc = cli_main(["generate"] + tiny.common
                  + ["--num-samples", "2", "--out-dir", out])
    assert rc == 0
    made = sorted(os.listdir(out)) if os.path.isdir(out) else []
    assert made, "no shapes generated"
    for d in made:
        parts = pipeline.load_textured(os.path.join(out, d, "manifest.json"),
                                       16, 4)
        assert len(parts) >= 1


def test_interpolate_steps(tiny, tmp_path):
    ma = os.path.join(tiny.data, "shape_0000", "manifest.json")
    mb = os.path.join(tiny.data, "shape_0001", "manifest.json")
    out = str(tmp_path / "interp")
    rc = cli_main(["interpolate"] + tiny.common
                  + ["--manifest-a", ma, "--manifest-b", mb,
                     "--steps", "3", "--out-dir", out])
    assert rc == 0
    for k in range(3):
        mp = os.path.join(out, f"step_{k:02d}", "manifest.json")
        parts = pipeline.load_textured(mp, 16, 4)
        assert len(parts) >= 5


def test_dry_run_lists_stages():
    lines = []
    ran = pipeline.cmd_train(make_config(patch=16), dry_run=True,
                             log=lines.append)
    assert ran == []
    assert len(lines) == 7
    names = [ln.split(".", 1)[1].split(":")[0].strip() for ln in lines]
    assert names == [s for s, _ in pipeline.STAGES]
    assert all(ln.lstrip().startswith("*") for ln in lines)
    # a subset only stars the requested stage
    lines.clear()
    pipeline.cmd_train(make_config(patch=16), stages=["tvae"], dry_run=True,
                       log=lines.append)
    starred = [ln for ln in lines if ln.lstrip().startswith("*")]
    assert len(starred) == 1 and "tvae" in starred[0]


def test_stage_order_enforced(tmp_path):
    cfg = make_config(run_dir=str(tmp_path / "run"), data_dir="unused",
                      category="chair", patch=16)
    with pytest.raises(StageError, match="'bake'"):
        pipeline.cmd_train(cfg, stages=["pvae"], log=_silent)


def test_stage_order_names_first_missing(tmp_path, rng):
    data = tmp_path / "data"
    write_toy_dataset(data, "chair", 2, rng)
    cfg = make_config(run_dir=str(tmp_path / "run"), data_dir=str(data),
                      category="chair", patch=16, fit_iters=4)
    pipeline.cmd_bake(cfg, log=_silent)
    with pytest.raises(StageError, match="'pvae'"):
        pipeline.cmd_train(cfg, stages=["spvae"], log=_silent)
    # a baked set at one resolution refuses a config at another
    cfg32 = make_config(run_dir=cfg.run_dir, data_dir=cfg.data_dir,
                        category="chair", patch=32)
    with pytest.raises(StageError, match="patch"):
        pipeline.cmd_train(cfg32, stages=["pvae"], log=_silent)


def test_unknown_stage_rejected():
    with pytest.raises(StageError, match="unknown stage"):
        pipeline.cmd_train(make_config(patch=16), stages=["warmup"],
                           log=_silent)


def test_cli_error_exit_codes(tmp_path):
    empty = tmp_path / "nodata"
    empty.mkdir()
    run = str(tmp_path / "run")
    base = ["--run-dir", run, "--data-dir", str(empty), "--set", "patch = 16"]
    assert cli_main(["bake"] + base) == 2
    assert cli_main(["texture"] + base + ["--manifest", "missing.json"]) == 2
    assert cli_main(["texture"] + base + ["--manifest", "m.json",
                                          "--from-image", "photo.png"]) == 2
    assert cli_main(["interpolate"] + base + ["--manifest-a", "a.json",
                                              "--manifest-b", "b.json",
                                              "--steps", "1"]) == 2
    assert cli_main(["train"] + base + ["--stages", "warp"]) == 2


def test_bake_category_mismatch(tmp_path, rng):
    data = tmp_path / "data"
    write_toy_dataset(data, "chair", 1, rng)
    rc = cli_main(["bake", "--run-dir", str(tmp_path / "run"),
                   "--data-dir", str(data), "--category", "table",
                   "--set", "patch = 16"])
    assert rc == 2


def test_config_file_then_set_overrides(tmp_path, rng):
    data = tmp_path / "data"
    write_toy_dataset(data, "table", 2, rng)
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("patch = 24\nfit_iters = 5\n# comment\n")
    run = tmp_path / "run"
    rc = cli_main(["bake", "--run-dir", str(run), "--data-dir", str(data),
                   "--category", "table", "--config", str(cfgfile),
                   "--set", "patch = 16"])
    assert rc == 0
    saved = load_config(run / "config.json")
    assert saved.patch == 16       # --set beats the config file
    assert saved.fit_iters == 5    # config file beats the profile default
    assert saved.category == "table"
