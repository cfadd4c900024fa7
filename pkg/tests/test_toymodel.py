import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cffont.errors import ImageFormatError, ShapeMismatchError, TrainingDivergedError, ValidationError
from cffont.gradcheck import check_model
from cffont.pcl import PclConfig
from cffont.toymodel import (CONTENT_ENCODER, PARAM_ORDER, Batch, Schedule, TrainingSet, batch_loss,
                             content_preactivation, decode, decode_flat, encode_content, encode_style,
                             init_decoder_bias, init_params, load_checkpoint, loss_and_grad, make_optimizer,
                             save_checkpoint, style_preactivation, train_stage, zero_params)

SIZE = 12


def logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def reference_decode(p, c, s):
    # straight transcription of the decoder formula
    gamma = p.Gw @ s + p.gb
    beta = p.Bw @ s + p.bb
    return logistic(p.Wd @ (c * gamma + beta) + p.bd)


def tiny_training_set(n_fonts=4, n_chars=20, seed=0, size=SIZE):
    rng = np.random.default_rng(seed)
    imgs = (rng.uniform(size=(n_fonts, n_chars, size * size)) < 0.3) * rng.uniform(0.5, 1.0, (n_fonts, n_chars, size * size))
    return TrainingSet([f"f{i}" for i in range(n_fonts)], [f"c{k}" for k in range(n_chars)], imgs,
                       np.arange(16), size, size)


def test_zero_params_give_zero_features_and_half_image():
    p = zero_params(SIZE, SIZE, 5, 3)
    img = np.random.default_rng(0).uniform(size=(SIZE, SIZE))
    assert np.all(encode_content(p, img) == 0.0)
    assert np.all(encode_style(p, img) == 0.0)
    out = decode(p, np.ones(5), np.ones(3))
    assert np.all(out.pixels == 0.5)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_encoder_outputs_inside_open_interval(seed):
    rng = np.random.default_rng(seed)
    p = init_params(SIZE, SIZE, 6, 4, seed=seed % 1000)
    img = rng.uniform(size=(SIZE, SIZE))
    for v in (encode_content(p, img), encode_style(p, img)):
        assert np.all(np.abs(v) < 1.0)


def test_preactivation_is_affine():
    rng = np.random.default_rng(2)
    p = init_params(SIZE, SIZE, 6, 4, seed=2)
    p.bc[:] = rng.normal(size=6)
    p.bs[:] = rng.normal(size=4)
    x, z = rng.uniform(size=(2, SIZE, SIZE))
    for pre, b in ((content_preactivation, p.bc), (style_preactivation, p.bs)):
        np.testing.assert_allclose(pre(p, x + z), pre(p, x) + pre(p, z) - b, rtol=0, atol=1e-12)


def test_encoder_shape_mismatch():
    p = init_params(SIZE, SIZE, 6, 4)
    with pytest.raises(ShapeMismatchError):
        encode_content(p, np.zeros((SIZE + 1, SIZE)))
    with pytest.raises(ShapeMismatchError):
        decode(p, np.zeros(5), np.zeros(4))
    with pytest.raises(ValidationError):
        decode(p, np.full(6, np.nan), np.zeros(4))


def test_decode_matches_formula_and_range():
    rng = np.random.default_rng(3)
    p = init_params(SIZE, SIZE, 6, 4, seed=3)
    p.Wd[:] = rng.normal(0, 2, p.Wd.shape)
    c, s = rng.uniform(-1, 1, 6), rng.uniform(-1, 1, 4)
    out = decode(p, c, s).pixels.reshape(-1)
    np.testing.assert_allclose(out, reference_decode(p, c, s), rtol=0, atol=1e-14)
    assert out.min() > 0.0 and out.max() < 1.0


def test_decode_jvp_in_style_matches_fd():
    rng = np.random.default_rng(4)
    p = init_params(SIZE, SIZE, 6, 4, seed=4)
    for name in ("Wd", "Gw", "Bw"):
        getattr(p, name)[:] = rng.normal(0, 0.5, getattr(p, name).shape)
    c, s, d = rng.uniform(-1, 1, 6), rng.uniform(-1, 1, 4), rng.normal(size=4)
    y = reference_decode(p, c, s)
    # analytic J d: y(1-y) * Wd (c * Gw d + Bw d)
    jvp = y * (1 - y) * (p.Wd @ (c * (p.Gw @ d) + p.Bw @ d))
    h = 1e-6
    fd = (decode_flat(p, c, s + h * d)[0] - decode_flat(p, c, s - h * d)[0]) / (2 * h)
    rel = np.abs(jvp - fd) / np.maximum(np.abs(jvp), 1e-8)
    assert np.all(rel < 1e-4)


def test_decode_lipschitz_in_style_across_seeds():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        p = init_params(SIZE, SIZE, 6, 4, seed=seed)
        for name in ("Wd", "Gw", "Bw"):
            getattr(p, name)[:] = rng.normal(0, 0.5, getattr(p, name).shape)
        # |c| <= 1 so |dy| <= 1/4 |Wd| (|Gw| + |Bw|) |ds|
        bound = 0.25 * np.linalg.norm(p.Wd, 2) * (np.linalg.norm(p.Gw, 2) + np.linalg.norm(p.Bw, 2))
        for _ in range(50):
            c = rng.uniform(-1, 1, 6)
            s = rng.uniform(-1, 1, 4)
            delta = rng.normal(size=4) * rng.uniform(1e-4, 1.0)
            change = np.linalg.norm(decode_flat(p, c, s + delta) - decode_flat(p, c, s))
            assert change <= bound * np.linalg.norm(delta) * (1 + 1e-12)


@pytest.mark.parametrize("variant", ["wdl", "kl"])
def test_backward_matches_finite_differences(variant):
    result = check_model(n_cases=20, size=16, variant=variant)
    # up to 8 sampled coordinates of every parameter group plus c and s
    per_case = 8 * 6 + 6 * 3 + 4 + 8 + 8
    assert result.n_coords == 20 * per_case
    assert result.fraction_ok >= 0.99


def test_zero_loss_gives_zero_l1_gradient():
    p = init_params(SIZE, SIZE, 6, 4, seed=1)
    c = np.random.default_rng(1).uniform(-1, 1, (3, 6))
    s = np.zeros((1, 4))
    targets = decode_flat(p, c, np.repeat(s, 3, axis=0))
    batch = Batch(targets, np.zeros(3, dtype=int), content_features=c, style_vectors=s)
    g = loss_and_grad(p, batch, 0.0, PclConfig.for_size(SIZE, SIZE))
    assert g.stats.total == 0.0
    for name in PARAM_ORDER:
        assert np.all(g.params[name] == 0.0)


def _image_batch(rng, n=4, size=SIZE):
    hw = size * size
    return Batch(targets=rng.uniform(0.05, 1, (n, hw)), style_index=rng.integers(0, 2, n),
                 content_images=rng.uniform(size=(n, hw)), style_refs=rng.uniform(size=(2, 3, hw)))


def test_frozen_content_encoder_gets_exact_zero():
    rng = np.random.default_rng(5)
    p = init_params(SIZE, SIZE, 6, 4, seed=5)
    g = loss_and_grad(p, _image_batch(rng), 0.01, PclConfig.for_size(SIZE, SIZE), frozen=CONTENT_ENCODER)
    assert np.all(g.params["Wc"] == 0.0) and np.all(g.params["bc"] == 0.0)
    assert np.any(g.params["Wd"] != 0.0)


@pytest.mark.parametrize("opt", ["sgd", "adam"])
def test_optimizer_leaves_frozen_params_untouched(opt):
    rng = np.random.default_rng(6)
    p = init_params(SIZE, SIZE, 6, 4, seed=6)
    before = p.copy()
    o = make_optimizer(opt, 0.1, 1e-4)
    cfg = PclConfig.for_size(SIZE, SIZE)
    for _ in range(3):
        g = loss_and_grad(p, _image_batch(rng), 0.01, cfg, frozen=CONTENT_ENCODER)
        o.step(p, g.params, CONTENT_ENCODER)
    assert np.array_equal(p.Wc, before.Wc) and np.array_equal(p.bc, before.bc)
    assert not np.array_equal(p.Wd, before.Wd)


def test_unknown_optimizer():
    with pytest.raises(ValidationError):
        make_optimizer("rmsprop", 0.1)


def test_non_finite_loss_raises_divergence():
    rng = np.random.default_rng(7)
    p = init_params(SIZE, SIZE, 6, 4)
    batch = _image_batch(rng)
    batch.targets[0, 0] = np.nan
    with pytest.raises(TrainingDivergedError):
        loss_and_grad(p, batch, 0.0, PclConfig.for_size(SIZE, SIZE))


def test_training_divergence_reports_iteration():
    data = tiny_training_set()
    p = init_params(SIZE, SIZE, 6, 4)
    sched = Schedule(stage1_iters=50, batch_size=4, lr=0.1, lam=0.0)

    def poison(it, stage, params):
        if it == 7:
            params.Wd[:] = np.nan

    with pytest.raises(TrainingDivergedError) as info:
        train_stage(p, data, sched, 1, source_font=0, callback=poison)
    assert info.value.stage == 1 and info.value.iteration == 8


def test_stage_one_reduces_loss():
    data = tiny_training_set()
    p = init_params(SIZE, SIZE, 8, 4, seed=0)
    init_decoder_bias(p, data.images)
    sched = Schedule(stage1_iters=300, batch_size=8, lr=1.0, log_every=10)
    log = train_stage(p, data, sched, 1, source_font=0)
    totals = log.totals(1)
    assert np.mean(totals[-5:]) < totals[0]


def test_training_is_deterministic(tmp_path):
    data = tiny_training_set()
    logs = []
    params = []
    for run in range(2):
        p = init_params(SIZE, SIZE, 6, 4, seed=11)
        sched = Schedule(stage1_iters=40, stage2_iters=20, batch_size=5, lr=0.5, log_every=5, seed=3)
        log = train_stage(p, data, sched, 1, source_font=1)
        fused = np.random.default_rng(0).uniform(-1, 1, (4, 20, 6))
        train_stage(p, data, sched, 2, fused_content=fused, log=log)
        log.write(tmp_path / f"log{run}.tsv")
        logs.append((tmp_path / f"log{run}.tsv").read_bytes())
        params.append(p)
    assert logs[0] == logs[1]
    assert params[0].equals(params[1])
    assert logs[0].splitlines()[0] == b"iteration\tstage\tL1\tPCL\ttotal"


def test_stage_two_keeps_content_encoder_bit_identical():
    data = tiny_training_set()
    p = init_params(SIZE, SIZE, 6, 4, seed=1)
    sched = Schedule(stage1_iters=20, stage2_iters=30, batch_size=4, lr=0.5)
    train_stage(p, data, sched, 1, source_font=0)
    wc, bc = p.Wc.copy(), p.bc.copy()
    fused = np.random.default_rng(1).uniform(-1, 1, (4, 20, 6))
    seen = []
    train_stage(p, data, sched, 2, fused_content=fused,
                callback=lambda it, st, prm: seen.append(np.array_equal(prm.Wc, wc) and np.array_equal(prm.bc, bc)))
    assert len(seen) == 30 and all(seen)


def test_stage_preconditions():
    data = tiny_training_set()
    p = init_params(SIZE, SIZE, 6, 4)
    with pytest.raises(ValidationError):
        train_stage(p, data, Schedule(), 1)
    with pytest.raises(ValidationError):
        train_stage(p, data, Schedule(), 2)
    with pytest.raises(ValidationError):
        train_stage(p, data, Schedule(), 3, source_font=0)


# --- checkpoints ---------------------------------------------------------------------

def test_checkpoint_round_trip_and_layout(tmp_path):
    p = init_params(5, 7, 3, 2, seed=9)
    path = tmp_path / "m.cfkt"
    save_checkpoint(p, path)
    buf = path.read_bytes()
    assert buf[:4] == b"CFKT"
    assert struct.unpack_from("<5I", buf, 4) == (1, 5, 7, 3, 2)
    # first array is Wc with 3 * 35 elements
    assert struct.unpack_from("<Q", buf, 24)[0] == 105
    assert np.frombuffer(buf[32:40], "<f8")[0] == p.Wc.reshape(-1)[0]
    sizes = [3 * 35, 3, 2 * 35, 2, 6, 3, 6, 3, 35 * 3, 35]
    assert len(buf) == 24 + sum(8 + 8 * n for n in sizes)
    assert load_checkpoint(path).equals(p)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<I", 2) + b[8:],
    lambda b: b[:-8],
    lambda b: b + b"\x00",
    lambda b: b[:24] + struct.pack("<Q", 5) + b[32:],
    lambda b: b[:20],
])
def test_corrupt_checkpoints_rejected(tmp_path, mutate):
    path = tmp_path / "m.cfkt"
    save_checkpoint(init_params(4, 4, 2, 2), path)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(ImageFormatError):
        load_checkpoint(path)


def test_params_validation():
    p = init_params(4, 4, 2, 2)
    arrays = p.arrays()
    arrays["Gw"] = np.zeros((3, 3))
    with pytest.raises(ShapeMismatchError):
        type(p)(4, 4, **arrays)
    arrays = p.arrays()
    arrays["bd"] = np.full(16, np.inf)
    with pytest.raises(ValidationError):
        type(p)(4, 4, **arrays)


def test_decoder_bias_init_reproduces_mean_image():
    data = tiny_training_set()
    p = zero_params(SIZE, SIZE, 4, 2)
    init_decoder_bias(p, data.images)
    mean = np.clip(data.images.mean(axis=(0, 1)), 0.01, 0.99)
    np.testing.assert_allclose(decode_flat(p, np.zeros(4), np.zeros(2))[0], mean, rtol=1e-12)


def test_batch_requires_one_source_each():
    z = np.zeros((1, 4))
    with pytest.raises(ValidationError):
        Batch(z, np.zeros(1, int), style_vectors=z)
    with pytest.raises(ValidationError):
        Batch(z, np.zeros(1, int), content_features=z)


def test_batch_loss_matches_manual():
    rng = np.random.default_rng(12)
    p = init_params(SIZE, SIZE, 6, 4, seed=12)
    c = rng.uniform(-1, 1, (3, 6))
    s = rng.uniform(-1, 1, (2, 4))
    idx = np.array([0, 1, 1])
    t = rng.uniform(0.1, 1, (3, SIZE * SIZE))
    batch = Batch(t, idx, content_features=c, style_vectors=s)
    y = np.stack([reference_decode(p, c[i], s[idx[i]]) for i in range(3)])
    assert abs(batch_loss(p, batch, 0.0, PclConfig.for_size(SIZE, SIZE)) - np.abs(y - t).mean()) < 1e-14
