"""Release gate. One test per stated criterion, one PASS/FAIL line each.

Criteria 3 and 4 train real models on the default 64-scene dataset and
dominate the suite's runtime (criterion 3 is one 2000-step run, criterion 4
is eight; a couple of hours on one core). Run with -s to see the line per
criterion as it lands.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

import test_metrics as oracles
from deeplight import engine as E
from deeplight import model as M
from deeplight.cli import main
from deeplight.engine import Tensor
from deeplight.metrics import cc, evaluate_pair, psnr, sam, ssim, uiqi
from deeplight.train import (load_for_inference, load_split, train,
                             RunConfig, evaluate_scenes)

GEN_ARGS = ("--scenes", "64", "--seed", "0")  # defaults: hr 256, r 8
TRAIN_STEPS = 2000
# the variants need the same budget the headline run gets: at short budgets
# none of them has learned to read the optical texture yet and the ranking
# is start-up noise
ABLATE_STEPS = 2000
ABLATE_EVAL_EVERY = 250


def report(num: int, name: str, ok: bool, detail: str):
    print(f"\n[criterion {num}] {name}: {'PASS' if ok else 'FAIL'} :: {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept") / "data"
    t0 = time.perf_counter()
    assert run_cli("gen", "--out", out, *GEN_ARGS) == 0
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def trained(dataset, tmp_path_factory):
    data, gen_wall = dataset
    out = tmp_path_factory.mktemp("accept") / "run"
    t0 = time.perf_counter()
    code = run_cli("train", "--data", data, "--out", out,
                   "--steps", TRAIN_STEPS, "--eval-every", 250, "--seed", 0)
    assert code == 0
    return out, gen_wall + (time.perf_counter() - t0)


# ------------------------------------------------------------- criterion 1

def test_criterion_1_gradient_suite():
    """Finite differences vs analytic grads for every differentiable op,
    at the production 32-bit dtype, <= 1e3-element tensors, < 30 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)

    def leaf(shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, size=shape).astype(np.float32),
                      requires_grad=True)

    worst, cases = 0.0, 0

    def check(fn, wrt):
        nonlocal worst, cases
        err = E.gradcheck(fn, wrt, eps=1e-3)
        worst = max(worst, err)
        cases += 1
        assert err < 1e-3, f"rel err {err:.2e}"

    a, b = leaf((3, 4)), leaf((3, 4))
    check(lambda: E.add(E.mul(a, b), E.sub(a, b)), [a, b])
    c = leaf((2, 3, 4, 4))
    check(lambda: E.leaky_relu(c), [c])
    check(lambda: E.sigmoid(c), [c])
    d = leaf((3, 3), lo=0.2, hi=2.0)
    check(lambda: E.log(d), [d])
    check(lambda: E.clip(d, 0.3, 1.8), [d])
    check(lambda: E.abs_(a), [a])
    check(lambda: E.neg(E.mean(E.reshape(c, (6, 16)))), [c])
    check(lambda: E.sum_(E.concat([a, b], axis=1)), [a, b])

    x = leaf((2, 3, 6, 6))
    w = leaf((4, 3, 3, 3))
    bias = leaf((4,))
    check(lambda: E.conv2d(x, w, bias, stride=1, padding=1), [x, w, bias])
    check(lambda: E.conv2d(x, w, bias, stride=2, padding=0), [x, w, bias])
    w1 = leaf((5, 3, 1, 1))
    b1 = leaf((5,))
    check(lambda: E.conv2d(x, w1, b1), [x, w1, b1])

    xd = leaf((1, 2, 5, 5))
    wd = leaf((3, 2, 3, 3))
    bd = leaf((3,))
    # keep sampling coords clear of integer lattice kinks
    off = Tensor((rng.uniform(0.1, 0.4, size=(1, 18, 5, 5))
                  .astype(np.float32)), requires_grad=True)
    check(lambda: E.deformable_conv2d(xd, off, wd, bd), [xd, off, wd, bd])

    theta = Tensor(np.array([[[1.02, 0.03, 0.01], [-0.02, 0.97, -0.01]]],
                            dtype=np.float32), requires_grad=True)
    xs = leaf((1, 2, 6, 6))
    check(lambda: E.grid_sample(xs, E.affine_grid(theta, 6, 6)), [theta, xs])

    ps = leaf((1, 8, 3, 3))
    check(lambda: E.pixel_shuffle(ps, 2), [ps])
    pu = leaf((1, 2, 6, 6))
    check(lambda: E.pixel_unshuffle(pu, 2), [pu])
    rz = leaf((1, 2, 5, 5))
    check(lambda: E.resize_bilinear(rz, 8, 7), [rz])
    check(lambda: E.resize_bilinear(rz, 3, 4), [rz])

    wall = time.perf_counter() - t0
    report(1, "gradient suite", wall < 30.0,
           f"{cases} op checks, worst rel err {worst:.2e}, {wall:.1f}s")


# ------------------------------------------------------------- criterion 2

def test_criterion_2_metric_oracles():
    """Six metrics vs brute-force reimplementations on 10 random 32x32
    pairs; scalar-formula metrics to 1e-9, windowed to 1e-6; < 10 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10):
        p = rng.uniform(0, 1, (32, 32))
        t = rng.uniform(0, 1, (32, 32))
        for got, want, tol in (
            (psnr(p, t), oracles.psnr_brute(p, t), 1e-9),
            (sam(p, t), oracles.sam_brute(p, t), 1e-9),
            (cc(p, t), oracles.cc_brute(p, t), 1e-9),
            (ssim(p, t), oracles.ssim_brute(p, t), 1e-6),
            (uiqi(p, t), oracles.uiqi_brute(p, t)[0], 1e-6),
            (evaluate_pair(p, t).piqe, oracles.piqe_brute(p)[0], 1e-6),
        ):
            err = abs(got - want)
            worst = max(worst, err)
            assert err <= tol, f"{got} vs {want}"
        # identities
        assert psnr(t, t) == math.inf
        assert ssim(t, t) == pytest.approx(1.0, abs=1e-12)
        assert sam(t, t) == pytest.approx(0.0, abs=1e-6)
        assert uiqi(t, t) == pytest.approx(1.0, abs=1e-9)
        assert cc(t, t) == pytest.approx(1.0, abs=1e-12)
    wall = time.perf_counter() - t0
    report(2, "metric oracle suite", wall < 10.0,
           f"10 pairs x 6 metrics, worst abs err {worst:.2e}, {wall:.1f}s")


# ------------------------------------------------------------- criterion 3

def test_criterion_3_end_to_end_learning(dataset, trained):
    """64 scenes (hr 256, r 8): 2000 Adam steps halve the composite loss
    and beat bicubic x8 by >= 1.0 dB val PSNR, all inside 30 min."""
    data, _ = dataset
    out, wall = trained
    rows = [json.loads(l) for l in open(out / "train_log.jsonl")]
    steps = [r for r in rows if "total" in r and "event" not in r]
    loss0, lossN = steps[0]["total"], steps[-1]["total"]

    state, _ = load_for_inference(out / "best.dlck")
    scenes = load_split(data, "val")
    _, agg = evaluate_scenes(state, scenes)

    from deeplight.baselines import bicubic_upsample
    breps = [evaluate_pair(np.clip(bicubic_upsample(sc.lr[0], 8), 0, 1),
                           sc.hr[0]) for sc in scenes]
    bic = float(np.mean([r.psnr_db for r in breps]))

    ok = (lossN < 0.5 * loss0) and (agg["psnr"] >= bic + 1.0) and (wall < 1800)
    report(3, "end-to-end learning", ok,
           f"loss {loss0:.4f}->{lossN:.4f} ({lossN / loss0:.1%}), "
           f"val PSNR {agg['psnr']:.3f} vs bicubic {bic:.3f} "
           f"(+{agg['psnr'] - bic:.3f} dB), {wall / 60:.1f} min")


# ------------------------------------------------------------- criterion 4

def test_criterion_4_ablation_ordering(dataset, tmp_path_factory):
    """Shared-budget matrix: full >= every ablation on val PSNR (ties
    within 0.05 dB), with no-LR-NTL and no-DMO in the bottom three."""
    data, _ = dataset
    out = tmp_path_factory.mktemp("accept") / "ablate"
    assert run_cli("ablate", "--data", data, "--out", out,
                   "--steps", ABLATE_STEPS,
                   "--eval-every", ABLATE_EVAL_EVERY, "--seed", 0) == 0
    doc = json.loads((out / "ablation.json").read_text())
    rows = {r["ablation"]: r for r in doc["rows"]}
    assert not any("error" in r for r in doc["rows"]), doc["rows"]

    full = rows["none"]["psnr"]
    ablations = {k: v["psnr"] for k, v in rows.items() if k != "none"}
    dominated = all(full >= v - 0.05 for v in ablations.values())
    bottom3 = sorted(ablations, key=ablations.get)[:3]
    # membership also gets the tie tolerance: within 0.05 dB of the
    # third-lowest counts as ranking in the bottom three
    cutoff = sorted(ablations.values())[2] + 0.05
    weakest_ok = all(ablations[k] <= cutoff for k in ("no-lr-ntl", "no-dmo"))

    detail = ("full %.3f | " % full) + " ".join(
        f"{k} {v:.3f}" for k, v in sorted(ablations.items(),
                                          key=lambda kv: kv[1]))
    report(4, "ablation ordering", dominated and weakest_ok,
           detail + f" | bottom3={bottom3}")


# ------------------------------------------------------------- criterion 5

def test_criterion_5_architecture_invariants():
    """Identity warp at init, pyramid shapes, zero-offset deformable ==
    plain conv, exact no-DMO insensitivity. All exact."""
    cfg = M.ModelConfig()
    state = M.build(cfg, seed=0)
    n_params = state.num_parameters()

    rng = np.random.default_rng(0)
    n_l = rng.uniform(0, 1, (1, 1, 32, 32)).astype(np.float32)
    dmo = rng.uniform(0, 1, (1, 7, 256, 256)).astype(np.float32)
    dem = rng.uniform(0, 1, (1, 1, 256, 256)).astype(np.float32)

    theta = M.localization_theta(state, Tensor(n_l))
    ident = np.tile(np.array([[1, 0, 0], [0, 1, 0]], np.float32), (1, 1, 1))
    warp_exact = np.array_equal(theta.data, ident)

    outp = M.forward(state, Tensor(n_l), Tensor(dmo), Tensor(dem))
    shapes = [t.shape[2:] for t in outp.sr_pyramid]
    shapes_ok = shapes == [(64, 64), (128, 128), (256, 256)]

    x = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)).astype(np.float32))
    w = Tensor(rng.uniform(-1, 1, (4, 3, 3, 3)).astype(np.float32))
    b = Tensor(rng.uniform(-1, 1, (4,)).astype(np.float32))
    zero_off = Tensor(np.zeros((1, 18, 8, 8), np.float32))
    defo = E.deformable_conv2d(x, zero_off, w, b)
    plain = E.conv2d(x, w, b, padding=1)
    def_eq = np.array_equal(defo.data, plain.data)

    nod = M.build(M.ModelConfig(ablation="no-dmo"), seed=0)
    o1 = M.forward(nod, Tensor(n_l), Tensor(dmo), Tensor(dem))
    o2 = M.forward(nod, Tensor(n_l), Tensor(rng.uniform(
        0, 1, dmo.shape).astype(np.float32)), Tensor(dem))
    dmo_invariant = all(
        np.array_equal(p.data, q.data)
        for p, q in zip(o1.sr_pyramid, o2.sr_pyramid))

    ok = warp_exact and shapes_ok and def_eq and dmo_invariant
    report(5, "architecture invariants", ok,
           f"params={n_params}, warp_identity={warp_exact}, "
           f"pyramid={shapes_ok}, defconv_eq={def_eq}, "
           f"no_dmo_invariant={dmo_invariant}")


# ------------------------------------------------------------- criterion 6

def test_criterion_6_reproducibility(tmp_path_factory):
    """gen byte-identical; train trace-identical (modulo wall time);
    resume within 1e-5 per-step loss."""
    import hashlib
    base = tmp_path_factory.mktemp("accept")
    args = ("--scenes", 4, "--seed", 5, "--hr-size", 64, "--scale", 4,
            "--fractions", 0.5, 0.5, 0.0)

    def digest(root: Path):
        return {str(p.relative_to(root)):
                hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted(root.rglob("*")) if p.is_file()}

    assert run_cli("gen", "--out", base / "d1", *args) == 0
    assert run_cli("gen", "--out", base / "d2", *args) == 0
    gen_identical = digest(base / "d1") == digest(base / "d2")

    cfg = RunConfig(steps=30, batch_size=2, seed=2, data_dir=str(base / "d1"),
                    eval_every=15)
    r1 = train(cfg, base / "t1")
    r2 = train(cfg, base / "t2")

    def trace(path):
        return [{k: v for k, v in json.loads(l).items() if k != "wall_s"}
                for l in open(path)]

    train_identical = trace(r1.log_path) == trace(r2.log_path)

    import dataclasses
    half = train(dataclasses.replace(cfg, steps=15), base / "half")
    res = train(cfg, base / "resumed", resume=half.last_ckpt)
    full = {r["step"]: r["total"] for r in map(json.loads, open(r1.log_path))
            if "total" in r and "event" not in r}
    tail = {r["step"]: r["total"] for r in map(json.loads, open(res.log_path))
            if "total" in r and "event" not in r}
    dev = max(abs(tail[s] - full[s]) / max(1.0, abs(full[s])) for s in tail)
    resume_ok = sorted(tail) == list(range(15, 30)) and dev <= 1e-5

    ok = gen_identical and train_identical and resume_ok
    report(6, "reproducibility", ok,
           f"gen_identical={gen_identical}, train_identical={train_identical}, "
           f"resume max rel dev {dev:.2e}")
