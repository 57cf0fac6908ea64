"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import contextlib
import time

import numpy as np
import pytest

from keystego import attack, pipeline, training
from keystego.diffcore import Tensor
from keystego.inn import Model, ModelConfig, checkpoint_bytes, model_forward, model_from_bytes, model_inverse
from keystego.keying import decode_array, derive_seed, encode_array, generate_schedule, schedule_from_passphrase
from keystego.metrics import apd, psnr, ssim
from keystego.wavelet import dwt, idwt

from conftest import ACCEPTANCE_LINES, DESK, eval_pairs
from gradhelpers import block_errors, small_model, subnet_errors
from oracles import reference_ssim, ssim_pairs

ATTACK_BUDGET = 2000
ABLATION_STEPS = 30


@contextlib.contextmanager
def criterion(n, title):
    start = time.perf_counter()
    details = []
    try:
        yield details
    except BaseException:
        line = f"criterion {n} FAIL  {title}  {'; '.join(details)}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    line = f"criterion {n} PASS  {title}  {'; '.join(details)} ({time.perf_counter() - start:.1f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_criterion_1_invertibility():
    with criterion(1, "invertibility") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(1)
        worst = 0.0
        for n_blocks in (4, 8):
            for r in (1.0, 0.6):
                model = Model(ModelConfig(n_blocks=n_blocks, decay_rate=r), seed=n_blocks).randomize(n_blocks, 0.05)
                sched = schedule_from_passphrase(f"key-{n_blocks}-{r}", n_blocks, (12, 32, 32))
                x_h = Tensor(rng.uniform(-1, 1, (2, 12, 32, 32)))
                x_s = Tensor(rng.uniform(-1, 1, (2, 12, 32, 32)))
                c, missing = model_forward(x_h, x_s, sched, model)
                h, s = model_inverse(c, missing, sched, model)
                worst = max(worst, np.abs(h.data - x_h.data).max(), np.abs(s.data - x_s.data).max())
        seconds = time.perf_counter() - t0
        info.append(f"max abs err {worst:.2e}")
        assert worst < 1e-3
        assert seconds < 10


def test_criterion_2_key_round_trip():
    with criterion(2, "key round trip") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2)
        shape = (12, 32, 32)  # coefficient tensor of a 64x64 desk crop
        worst_differ = 1.0
        for _ in range(1000):
            right, wrong = (generate_schedule(derive_seed(rng.bytes(16)), 1, shape)[0] for _ in range(2))
            x = rng.normal(size=(1,) + shape).astype(np.float32)
            e = encode_array(x, right)
            assert np.array_equal(decode_array(e, right), x)
            probe = decode_array(e, wrong)
            assert not np.array_equal(probe, x)
            worst_differ = min(worst_differ, float(np.mean(probe != x)))
        seconds = time.perf_counter() - t0
        info.append(f"min wrong-key differing fraction {worst_differ:.3f}")
        assert worst_differ >= 0.9
        assert seconds < 5


def test_criterion_3_wavelet():
    with criterion(3, "wavelet") as info:
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 3, 32, 48)).astype(np.float32)
        w = dwt(Tensor(x)).data
        err = np.abs(idwt(Tensor(w)).data - x).max()
        ex, ew = np.sum(x.astype(np.float64) ** 2), np.sum(w.astype(np.float64) ** 2)
        example = dwt(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))).data.reshape(-1).tolist()
        info.append(f"round trip {err:.1e}, energy rel {abs(ew - ex) / ex:.1e}, example {example}")
        assert err < 1e-5
        assert abs(ew - ex) / ex < 1e-3
        assert example == [5.0, -1.0, -2.0, 0.0]


def test_criterion_4_gradients():
    with criterion(4, "gradient correctness") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(4)
        model = small_model(seed=4, decay_rate=0.6)
        errs = [e for name in ("f", "g", "h") for e in subnet_errors(model.blocks[0].subnets[name], rng)]
        errs += block_errors(model, rng)
        seconds = time.perf_counter() - t0
        info.append(f"max rel err {max(errs):.2e} over {len(errs)} checks")
        assert max(errs) < 1e-3
        assert seconds < 30


def test_criterion_5_metrics():
    with criterion(5, "metrics oracle") as info:
        z = np.zeros((16, 16, 3))
        p = psnr(z, z + 1)
        a = apd(z, z + 255)
        diffs = [abs(ssim(x, y) - reference_ssim(x, y)) for x, y in ssim_pairs()]
        info.append(f"PSNR(MSE=1) {p:.4f}, APD {a}, max SSIM dev {max(diffs):.1e} on {len(diffs)} pairs")
        assert p == pytest.approx(48.1308, abs=1e-4)
        assert a == 255.0
        assert len(diffs) == 10 and max(diffs) < 1e-3


@pytest.mark.slow
def test_criterion_6_desk_training(desk_run, images):
    with criterion(6, "desk-scale training") as info:
        model, hist, cfg = desk_run
        hosts, secrets = eval_pairs(images)
        rep = training.evaluate_pairs(model, hosts, secrets, training.EVAL_PASSPHRASE, z_seed=0,
                                      wrong_passphrase=training.EVAL_PASSPHRASE + training.WRONG_SUFFIX)
        info.append(f"{len(images)} images, {hist.steps} steps, {hist.seconds:.0f}s, "
                    f"loss {hist.initial_loss:.1f} -> {hist.final_loss:.1f}, PSNR-C {rep.psnr_c:.2f}, "
                    f"PSNR-S {rep.psnr_s:.2f}, PSNR-S' {rep.psnr_s_prime:.2f}, SSIM-S' {rep.ssim_s_prime:.4f}")
        assert cfg.crop_size == 64 and cfg.n_blocks == 4 and hist.steps <= 1000
        assert hist.final_loss <= 0.5 * hist.initial_loss
        assert rep.psnr_s - rep.psnr_s_prime >= 10
        assert rep.ssim_s_prime < 0.1
        assert hist.seconds < 15 * 60


@pytest.mark.slow
def test_criterion_7_ablation_harness(images, tmp_path):
    with criterion(7, "ablation harness") as info:
        base = training.TrainConfig(**{**DESK, "max_steps": ABLATION_STEPS})
        rows = training.ablate(images, base)
        table = training.ablation_table(rows)
        print(table)
        training.write_ablation_csv(rows, tmp_path / "ablation.csv")
        labels = [r.decay_label for r in rows if r.preprocess == "standardize"]
        info.append(f"{len(rows)} rows, {ABLATION_STEPS} steps per cell")
        assert labels == ["x", "0.9", "0.8", "0.7", "0.6", "0.5"]
        assert all(np.isfinite([r.psnr_c, r.psnr_s, r.ssim_c, r.ssim_s, r.loss]).all() for r in rows)
        assert len(table.splitlines()) == len(rows) + 1


@pytest.mark.slow
def test_criterion_8_attack(desk_run, images):
    with criterion(8, "attack simulation") as info:
        model = desk_run[0]
        free = attack.attack_sim(model, images, "extraction", "none", budget=ATTACK_BUDGET)
        keyed = attack.attack_sim(model, images, "extraction", "random", budget=ATTACK_BUDGET)
        print(attack.attack_table([free, keyed]))
        info.append(f"budget {ATTACK_BUDGET}: key-free {free.psnr:.2f} dB, random keys {keyed.psnr:.2f} dB, "
                    f"gap {free.psnr - keyed.psnr:.2f} dB")
        assert free.psnr - keyed.psnr >= 10


@pytest.mark.slow
def test_criterion_9_determinism(desk_run, images, tmp_path):
    with criterion(9, "determinism") as info:
        blob = checkpoint_bytes(desk_run[0])
        path = tmp_path / "m.ckpt"
        path.write_bytes(blob)
        runs = []
        for _ in range(2):
            model = model_from_bytes(path.read_bytes())
            host, secret = eval_pairs(images, n=1)
            container, _ = pipeline.embed(host[0], secret[0], "determinism", model)
            runs.append((container, pipeline.extract(container, "determinism", model, z_seed=11),
                         checkpoint_bytes(model)))
        info.append(f"checkpoint {len(blob)} bytes")
        assert np.array_equal(runs[0][0], runs[1][0])
        assert np.array_equal(runs[0][1], runs[1][1])
        assert runs[0][2] == runs[1][2] == blob
