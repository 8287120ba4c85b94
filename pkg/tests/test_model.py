"""Architecture invariants: shapes, identity-at-init, ablation pruning."""
import numpy as np
import pytest

from deeplight import engine as E
from deeplight import model as M
from deeplight.checkpoint import read_checkpoint, write_checkpoint
from deeplight.engine import Tensor
from deeplight.errors import ConfigError, DataError
from deeplight.losses import LossConfig, composite_loss


def make_inputs(cfg: M.ModelConfig, n=1, seed=0):
    rng = np.random.default_rng(seed)
    h, w = cfg.lr_size
    hr_h, hr_w = h * cfg.scale_r, w * cfg.scale_r
    lr = rng.uniform(0, 1, (n, 1, h, w)).astype(np.float32)
    dmo = rng.uniform(0, 1, (n, cfg.dmo_bands, hr_h, hr_w)).astype(np.float32)
    dem = rng.uniform(0, 1, (n, 1, hr_h, hr_w)).astype(np.float32)
    hr = rng.uniform(0, 1, (n, 1, hr_h, hr_w)).astype(np.float32)
    isp = (rng.uniform(0, 1, (n, 1, hr_h, hr_w)) > 0.9).astype(np.float32)
    return lr, dmo, dem, hr, isp


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def test_parameter_count_matches_hand_tally():
    cfg = M.ModelConfig()
    state = M.build(cfg, seed=0)
    c, d, k, blocks, m = (cfg.base_channels, cfg.dmo_bands, 3,
                          cfg.num_res_blocks, cfg.num_scales_m)

    def conv(cout, cin, kk):
        return cout * cin * kk * kk + cout

    caa = (conv(c, d, k) + (m - 1) * conv(c, c, k)          # dmo pyramid
           + conv(c, 1, k) + (m - 1) * conv(c, c, k)        # dem pyramid
           + conv(c, 1, k) + conv(c, c, k) + conv(6, c, 1)  # localization
           + conv(2 * 9, 1, 3)                              # offsets
           + conv(c, 1, 3) + conv(c, c, 3)                  # defconv + recon
           + 4 * conv(c, c, 3))                             # calibrations
    branch = (blocks * conv(c, c, 1)                        # cross projections
              + conv(c, c, 3) + (blocks - 1) * conv(c, 2 * c, 3)  # conv1
              + blocks * conv(c, c, 3))                     # conv2
    cmfm = 2 * conv(c, c, 1) + 2 * branch + conv(c, 2 * c, 3) + conv(c, c, 3)
    aer = m * conv(4 * c, c, 1) + m * conv(1, c, 1) + conv(1, 1, 3)
    expected = caa + 2 * cmfm + aer

    assert state.num_parameters() == expected
    assert expected == 476647  # frozen for the default config


def test_build_deterministic():
    a = M.build(M.ModelConfig(), seed=7)
    b = M.build(M.ModelConfig(), seed=7)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    c = M.build(M.ModelConfig(), seed=8)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data)
               for k in a.params)


@pytest.mark.parametrize("field,value", [
    ("scale_r", 7), ("base_channels", 2), ("dmo_bands", 0),
    ("num_res_blocks", 0), ("ablation", "no-such"),
])
def test_config_validation_names_field(field, value):
    kwargs = {field: value}
    if field == "scale_r":
        kwargs["num_scales_m"] = 3
    with pytest.raises(ConfigError, match=field.split("_")[0]):
        M.ModelConfig(**kwargs)


def test_r4_config_valid():
    cfg = M.ModelConfig(scale_r=4, num_scales_m=2, lr_size=(64, 64))
    state = M.build(cfg, seed=0)
    assert any(k.startswith("aer.up2") for k in state.params)
    assert not any(k.startswith("aer.up3") for k in state.params)


# ---------------------------------------------------------------------------
# identity at initialization
# ---------------------------------------------------------------------------

def test_theta_is_identity_at_init():
    cfg = M.ModelConfig(lr_size=(32, 32))
    state = M.build(cfg, seed=3)
    lr, dmo, dem, _, _ = make_inputs(cfg, n=2, seed=1)
    theta = M.localization_theta(state, Tensor(lr))
    ident = np.tile(np.array([[[1, 0, 0], [0, 1, 0]]], dtype=np.float32), (2, 1, 1))
    np.testing.assert_array_equal(theta.data, ident)
    grid = E.affine_grid(theta, 32, 32)
    expect = E.identity_grid(2, 32, 32, dtype=np.float32)
    assert float(np.abs(grid.data - expect).max()) == 0.0


def test_ntl_features_equal_plain_conv_path_at_init():
    cfg = M.ModelConfig(lr_size=(32, 32))
    state = M.build(cfg, seed=5)
    lr, dmo, dem, _, _ = make_inputs(cfg, n=1, seed=2)
    feats = M.caa_forward(state, Tensor(lr), Tensor(dmo), Tensor(dem))

    # pure convolutional path on the unwarped input, same kernels
    d = E.leaky_relu(E.conv2d(Tensor(lr), state.params["caa.defconv.w"],
                              state.params["caa.defconv.b"], padding=1), 0.1)
    plain = E.leaky_relu(E.conv2d(d, state.params["caa.ntl_recon.w"],
                                  state.params["caa.ntl_recon.b"], padding=1), 0.1)
    assert float(np.abs(feats["ntl"].data - plain.data).max()) < 1e-5


# ---------------------------------------------------------------------------
# shape contract
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("r,m,lr_sz", [(8, 3, 32), (4, 2, 32), (8, 3, 16)])
def test_pyramid_shapes(r, m, lr_sz):
    cfg = M.ModelConfig(scale_r=r, num_scales_m=m, lr_size=(lr_sz, lr_sz))
    state = M.build(cfg, seed=0)
    lr, dmo, dem, _, _ = make_inputs(cfg, n=2)
    out = M.forward(state, Tensor(lr), Tensor(dmo), Tensor(dem))
    assert len(out.sr_pyramid) == m
    for j, level in enumerate(out.sr_pyramid):
        s = lr_sz * 2 ** (j + 1)
        assert level.shape == (2, 1, s, s), f"level {j}: {level.shape}"
    assert out.isp_logits.shape == out.sr_pyramid[-1].shape


def test_forward_rejects_wrong_shapes():
    cfg = M.ModelConfig(lr_size=(16, 16))
    state = M.build(cfg, seed=0)
    lr, dmo, dem, _, _ = make_inputs(cfg)
    with pytest.raises(DataError, match="dmo"):
        M.forward(state, Tensor(lr), Tensor(dem), Tensor(dem))
    with pytest.raises(DataError, match="lr_ntl"):
        M.forward(state, Tensor(dmo), Tensor(dmo), Tensor(dem))


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

def test_ablation_variants_forward_and_prune():
    cfg0 = M.ModelConfig(lr_size=(16, 16))
    lr, dmo, dem, hr, isp = make_inputs(cfg0, n=1, seed=4)
    for ab in M.ABLATIONS:
        cfg = M.ModelConfig(lr_size=(16, 16), ablation=ab)
        state = M.build(cfg, seed=0)
        out = M.forward(state, Tensor(lr), Tensor(dmo), Tensor(dem))
        if ab == "no-aer":
            assert len(out.sr_pyramid) == 1
        else:
            assert len(out.sr_pyramid) == cfg.num_scales_m
        if ab in ("no-isp", "no-aer"):
            assert out.isp_logits is None
        else:
            assert out.isp_logits is not None
        names = state.params.keys()
        if ab == "no-dmo":
            assert not any("dmo" in k for k in names)
        if ab == "no-caa":
            assert not any("floc" in k or "offset" in k for k in names)
        if ab == "no-amff":
            assert not any("cross" in k for k in names)


def test_every_parameter_receives_grad_in_each_variant():
    cfg0 = M.ModelConfig(lr_size=(16, 16))
    lr, dmo, dem, hr, isp = make_inputs(cfg0, n=1, seed=6)
    for ab in M.ABLATIONS:
        cfg = M.ModelConfig(lr_size=(16, 16), ablation=ab)
        state = M.build(cfg, seed=1)
        out = M.forward(state, Tensor(lr), Tensor(dmo), Tensor(dem))
        loss = composite_loss(out.sr_pyramid, out.isp_logits, Tensor(hr),
                              Tensor(isp), LossConfig())
        loss["total"].backward()
        for name, p in state.params.items():
            assert p.grad is not None, f"{ab}: no grad for {name}"
            assert np.isfinite(p.grad).all(), f"{ab}: non-finite grad for {name}"
            p.grad = None


def test_no_dmo_output_insensitive_to_dmo_input():
    cfg = M.ModelConfig(lr_size=(16, 16), ablation="no-dmo")
    state = M.build(cfg, seed=2)
    lr, dmo, dem, _, _ = make_inputs(cfg, n=1, seed=7)
    out1 = M.forward(state, Tensor(lr), Tensor(dmo), Tensor(dem))
    dmo2 = np.random.default_rng(99).uniform(0, 1, dmo.shape).astype(np.float32)
    out2 = M.forward(state, Tensor(lr), Tensor(dmo2), Tensor(dem))
    for a, b in zip(out1.sr_pyramid, out2.sr_pyramid):
        np.testing.assert_array_equal(a.data, b.data)


def test_cmfm_zeroed_second_input_has_exactly_zero_sensitivity():
    cfg = M.ModelConfig(lr_size=(16, 16))
    state = M.build(cfg, seed=3)
    state.params["amff.cmfm1.proj_b.w"].data[:] = 0
    state.params["amff.cmfm1.proj_b.b"].data[:] = 0
    rng = np.random.default_rng(8)
    fa = Tensor(np.ones((1, 32, 16, 16), dtype=np.float32))
    fb1 = Tensor(np.zeros((1, 32, 16, 16), dtype=np.float32))
    fb2 = Tensor(rng.normal(size=(1, 32, 16, 16)).astype(np.float32))
    y1 = M.cmfm(state, "amff.cmfm1", fa, fb1)
    y2 = M.cmfm(state, "amff.cmfm1", fa, fb2)
    np.testing.assert_array_equal(y1.data, y2.data)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = M.ModelConfig(lr_size=(16, 16))
    state = M.build(cfg, seed=9)
    path = tmp_path / "model.dlck"
    write_checkpoint(path, state.arrays(), cfg.to_dict())
    config, records = read_checkpoint(path)
    assert config["ablation"] == "none"
    assert set(records) == set(state.params)
    for k, arr in records.items():
        np.testing.assert_array_equal(arr, state.params[k].data)
    fresh = M.build(M.ModelConfig.from_dict(config), seed=0)
    fresh.load_arrays(records)
    for k in fresh.params:
        np.testing.assert_array_equal(fresh.params[k].data, state.params[k].data)


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    from deeplight.errors import FormatError
    p = tmp_path / "bad.dlck"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError, match="magic"):
        read_checkpoint(p)
    cfg = M.ModelConfig(lr_size=(16, 16))
    state = M.build(cfg, seed=0)
    good = tmp_path / "good.dlck"
    write_checkpoint(good, state.arrays(), cfg.to_dict())
    blob = good.read_bytes()
    trunc = tmp_path / "trunc.dlck"
    trunc.write_bytes(blob[:len(blob) // 2])
    with pytest.raises(FormatError, match="truncated"):
        read_checkpoint(trunc)


def test_checkpoint_shape_mismatch_is_explicit(tmp_path):
    cfg = M.ModelConfig(lr_size=(16, 16))
    state = M.build(cfg, seed=0)
    arrays = dict(state.arrays())
    arrays["caa.defconv.w"] = np.zeros((2, 2, 3, 3), dtype=np.float32)
    path = tmp_path / "m.dlck"
    write_checkpoint(path, arrays, cfg.to_dict())
    _, records = read_checkpoint(path)
    fresh = M.build(cfg, seed=1)
    with pytest.raises(DataError, match="caa.defconv.w"):
        fresh.load_arrays(records)
