import pytest

from boxtex.config import (PROFILES, RunConfig, load_config, make_config,
                           parse_config_text, save_config)


def test_default_config_is_desk_profile():
    cfg = make_config()
    assert cfg.profile == "desk"
    assert cfg.patch == 64
    assert cfg.patch % cfg.grid_n == 0
    assert cfg.codebook_size > 0 and cfg.embed_dim > 0


def test_paper_profile_scales_up():
    cfg = make_config("paper")
    assert cfg.patch == 256
    assert cfg.codebook_size == 512
    assert cfg.prior_attention is True
    desk = make_config("desk")
    assert cfg.tvae_iters > desk.tvae_iters
    assert set(PROFILES) == {"desk", "paper"}


def test_make_config_overrides_win():
    cfg = make_config("paper", patch=32, seed=7)
    assert cfg.patch == 32 and cfg.seed == 7
    assert cfg.codebook_size == 512  # untouched profile value stays


def test_unknown_profile_raises():
    with pytest.raises(ValueError, match="profile"):
        make_config("laptop")


def test_patch_validation():
    with pytest.raises(ValueError):
        RunConfig(patch=20)  # not a multiple of 8
    with pytest.raises(ValueError):
        RunConfig(patch=8)   # too small for the two-level encoder
    with pytest.raises(ValueError):
        RunConfig(patch=64, grid_n=5)  # not divisible


def test_parse_config_text_types_and_comments():
    out = parse_config_text(
        "# a comment\n"
        "patch = 32\n"
        "tau = 0.05  # inline comment\n"
        "prior_attention = true\n"
        "category = table\n"
        "\n")
    assert out == {"patch": 32, "tau": 0.05, "prior_attention": True,
                   "category": "table"}


def test_parse_config_text_errors():
    with pytest.raises(ValueError, match="unknown config key"):
        parse_config_text("warp_drive = 9")
    with pytest.raises(ValueError, match="key = value"):
        parse_config_text("just some words")
    with pytest.raises(ValueError, match="boolean"):
        parse_config_text("prior_attention = maybe")


def test_save_load_roundtrip(tmp_path):
    cfg = make_config("desk", patch=32, category="table", seed=3,
                      seam_weight=0.5)
    path = tmp_path / "run.json"
    save_config(cfg, path)
    back = load_config(path)
    assert back == cfg
