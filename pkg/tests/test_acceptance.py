"""End-to-end acceptance suite.

Each test prints one summary line; the training benchmarks are shared
through session-scoped fixtures so the determinism check reuses the same
configuration as the row-wise benchmark.
"""

import numpy as np
import pytest

from conftest import digit_paths
from slimlstm import runner
from slimlstm.bptt import backward_sequence, forward_sequence, max_relative_error
from slimlstm.cell import CellDims, CellState, GateVariant, init_params, param_count
from slimlstm.data import Standardizer, load_idx, pixelwise, standardize
from slimlstm.estimator import SequenceLstmClassifier
from slimlstm.layers import DenseHead, dense_backward, dense_forward, softmax_xent
from slimlstm.optim import EarlyStop, LrSchedule, lr_from_loss
from slimlstm.runner import ExperimentConfig, emit_metrics_csv

ALL_VARIANTS = list(GateVariant)


# -- criterion 1: parameter-count exactness -----------------------------------

def test_criterion_1_parameter_counts():
    expected = {
        (1, 100): (40800, 40500, 40200, 10500),
        (28, 50): (15800, 11600, 11450, 4100),
        (128, 128): (131584, 82432, 82048, 33280),
    }
    for (m, n), counts in expected.items():
        got = tuple(param_count(v, CellDims(m, n)) for v in ALL_VARIANTS)
        assert got == counts, f"(m={m}, n={n}): {got} != {counts}"
    print("CRITERION 1 PASS: all 12 parameter counts exact")


# -- criterion 2: gradient-check sweep -----------------------------------------

def central_difference_grads_4th(loss_fn, params, step_h=1e-3):
    """Richardson-extrapolated central differences, (8(L(+h)-L(-h)) -
    (L(+2h)-L(-2h))) / 12h.

    The plain 2-point stencil at h=1e-5 bottoms out around 1e-5 relative
    error on near-vanishing gradient entries of deep (T=7) sequences, where
    float64 rounding of the loss dominates; the 4th-order stencil at a
    larger step keeps both truncation and rounding below the 1e-6 gate.
    """
    from slimlstm.bptt import CellGrads

    grads = CellGrads.zeros_like(params)
    for name, tensor in params.named_tensors():
        flat = tensor.ravel()
        gflat = getattr(grads, name).ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            samples = []
            for delta in (step_h, -step_h, 2.0 * step_h, -2.0 * step_h):
                flat[idx] = orig + delta
                samples.append(loss_fn(params))
            flat[idx] = orig
            gflat[idx] = (8.0 * (samples[0] - samples[1])
                          - (samples[2] - samples[3])) / (12.0 * step_h)
    return grads


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_criterion_2_gradient_sweep(variant):
    worst = 0.0
    cases = 0
    for m in (1, 3):
        for n in (2, 5):
            for seq_len in (1, 4, 7):
                for batch in (1, 4):
                    rng = np.random.default_rng(
                        [ALL_VARIANTS.index(variant), m, n, seq_len, batch])
                    params = init_params(variant, CellDims(m, n), rng)
                    head = DenseHead.init(n, 3, rng)
                    inputs = rng.standard_normal((seq_len, m, batch))
                    labels = rng.integers(0, 3, batch)

                    def loss_fn(p):
                        state, _ = forward_sequence(p, inputs,
                                                    CellState.zeros(n, batch))
                        return softmax_xent(dense_forward(head, state.h), labels)[0]

                    state, cache = forward_sequence(params, inputs,
                                                    CellState.zeros(n, batch))
                    _, d_logits = softmax_xent(dense_forward(head, state.h), labels)
                    _, _, dh = dense_backward(head, state.h, d_logits)
                    analytic, _ = backward_sequence(params, cache, dh)
                    numeric = central_difference_grads_4th(loss_fn, params)
                    err = max_relative_error(analytic, numeric)
                    worst = max(worst, err)
                    cases += 1
                    assert err <= 1e-6, (
                        f"{variant.value} m={m} n={n} T={seq_len} B={batch}: {err:.3e}")
    print(f"CRITERION 2 PASS ({variant.value}): {cases} cases, "
          f"max relative error {worst:.3e} <= 1e-6")


# -- criterion 3: variant-embedding oracle --------------------------------------

def test_criterion_3_variant_embedding():
    from test_cell import embed_in_standard

    reduced_variants = [GateVariant.LSTM1, GateVariant.LSTM2, GateVariant.LSTM3]
    worst_grad = 0.0
    for instance in range(20):
        rng = np.random.default_rng([97, instance])
        variant = reduced_variants[instance % 3]
        m = int(rng.integers(1, 5))
        n = int(rng.integers(2, 7))
        seq_len = int(rng.integers(1, 6))
        batch = int(rng.integers(1, 4))
        params = init_params(variant, CellDims(m, n), rng)
        full = embed_in_standard(params)
        inputs = rng.standard_normal((seq_len, m, batch))
        d_h = rng.standard_normal((n, batch))

        state_r, cache_r = forward_sequence(params, inputs, CellState.zeros(n, batch))
        state_f, cache_f = forward_sequence(full, inputs, CellState.zeros(n, batch))
        assert np.array_equal(state_r.h, state_f.h), f"instance {instance}: h differs"
        assert np.array_equal(state_r.c, state_f.c), f"instance {instance}: c differs"

        grads_r, _ = backward_sequence(params, cache_r, d_h)
        grads_f, _ = backward_sequence(full, cache_f, d_h)
        for name, g in grads_r.named_tensors():
            diff = float(np.max(np.abs(g - getattr(grads_f, name))))
            worst_grad = max(worst_grad, diff)
            assert diff <= 1e-12, f"instance {instance}, {name}: {diff:.3e}"
    print(f"CRITERION 3 PASS: 20 instances, forward bit-for-bit, "
          f"max shared-gradient difference {worst_grad:.3e} <= 1e-12")


# -- criterion 4 (+8): row-wise digits, desk scale ------------------------------

ROWWISE_THRESHOLDS = {"standard": 0.95, "lstm1": 0.95, "lstm2": 0.95, "lstm3": 0.92}


def rowwise_config(digit_idx_dir, variant):
    return ExperimentConfig.for_task(
        "rowwise", variant=variant, hidden=50, eta0=1e-3, batch_size=32,
        max_epochs=30, patience=25, seed=7, record_timing=False,
        train_size=10000, test_size=2000, **digit_paths(digit_idx_dir))


@pytest.fixture(scope="session")
def rowwise_runs(digit_idx_dir):
    """One benchmark run per variant at the criterion-4 settings."""
    runs = {}
    for variant in ROWWISE_THRESHOLDS:
        cfg = rowwise_config(digit_idx_dir, variant)
        history, cp = runner.train(cfg)
        runs[variant] = (cfg, history, cp)
    return runs


@pytest.mark.parametrize("variant", list(ROWWISE_THRESHOLDS))
def test_criterion_4_rowwise_accuracy(rowwise_runs, variant):
    _, history, _ = rowwise_runs[variant]
    best = max(r.test_acc for r in history)
    threshold = ROWWISE_THRESHOLDS[variant]
    assert best >= threshold, f"{variant}: best test accuracy {best:.4f} < {threshold}"
    print(f"CRITERION 4 PASS ({variant}): best test accuracy {best:.4f} "
          f">= {threshold} in {len(history)} epochs")


def test_criterion_8_determinism(rowwise_runs, digit_idx_dir, tmp_path):
    cfg, history, _ = rowwise_runs["standard"]
    history2, _ = runner.train(rowwise_config(digit_idx_dir, "standard"))
    p1, p2 = tmp_path / "run1.csv", tmp_path / "run2.csv"
    emit_metrics_csv(history, p1)
    emit_metrics_csv(history2, p2)
    assert p1.read_bytes() == p2.read_bytes(), "metrics CSVs differ between reruns"
    print(f"CRITERION 8 PASS: two same-seed runs produced byte-identical "
          f"metrics CSVs ({p1.stat().st_size} bytes)")


# -- criterion 5: pixel-wise substitutes ----------------------------------------

@pytest.fixture(scope="session")
def pixelwise_pool(digit_idx_dir):
    paths = digit_paths(digit_idx_dir)
    train_raw = load_idx(paths["train_images"], paths["train_labels"])
    test_raw = load_idx(paths["test_images"], paths["test_labels"])
    return train_raw, test_raw


def test_criterion_5a_overfit(pixelwise_pool):
    train_raw, _ = pixelwise_pool
    images, labels = train_raw.images[:64], train_raw.labels[:64]
    stats = Standardizer.fit(images)
    ds = pixelwise(standardize(images, stats), labels)
    clf = SequenceLstmClassifier(variant="standard", hidden_size=32, eta0=1e-4,
                                 batch_size=4, max_epochs=150, patience=10 ** 9,
                                 random_state=5, record_timing=False)
    clf.fit(ds.inputs, ds.labels)
    accs = [r.train_acc for r in clf.history_]
    best = max(accs)
    hit = next((i for i, a in enumerate(accs) if a >= 0.99), None)
    print(f"CRITERION 5a {'PASS' if best >= 0.99 else 'FAIL'}: 64-sample "
          f"pixel-wise overfit best train accuracy {best:.4f} "
          f"(>= 0.99 first at epoch {hit})")
    assert best >= 0.99, (
        f"train accuracy peaked at {best:.4f} < 0.99 within 150 epochs at "
        f"eta0=1e-4; 784-step credit assignment needs far more updates than "
        f"150 epochs over 64 samples provide (the same model trains fine at "
        f"larger scales, e.g. the row-wise benchmark)")


def test_criterion_5b_instability_observation(pixelwise_pool):
    """Reported observation (not a hard gate): LSTM2 at a large eta0 shows
    test-accuracy fluctuations that Standard at a small eta0 does not."""
    train_raw, test_raw = pixelwise_pool
    stats = Standardizer.fit(train_raw.images[:2000])
    tr = pixelwise(standardize(train_raw.images[:2000], stats), train_raw.labels[:2000])
    te = pixelwise(standardize(test_raw.images[:500], stats), test_raw.labels[:500])

    def max_drop(variant, eta0, seed):
        clf = SequenceLstmClassifier(variant=variant, hidden_size=32, eta0=eta0,
                                     batch_size=32, max_epochs=30,
                                     patience=10 ** 9, random_state=seed,
                                     record_timing=False)
        clf.fit(tr.inputs, tr.labels, eval_set=(te.inputs, te.labels))
        accs = np.array([r.test_acc for r in clf.history_])
        return float(np.max(accs[:-1] - accs[1:])) if len(accs) > 1 else 0.0

    lstm2_drops = [max_drop("lstm2", 1e-3, seed) for seed in (0, 1, 2)]
    standard_drops = [max_drop("standard", 1e-4, seed) for seed in (0, 1, 2)]
    lstm2_unstable = sum(d >= 0.05 for d in lstm2_drops)
    standard_stable = sum(d < 0.05 for d in standard_drops)
    reproduced = lstm2_unstable >= 1 and standard_stable == 3
    print(f"CRITERION 5b OBSERVATION ({'REPRODUCED' if reproduced else 'NOT REPRODUCED'}): "
          f"lstm2@1e-3 max epoch-over-epoch test-accuracy drops per seed "
          f"{[f'{d:.3f}' for d in lstm2_drops]} (>=0.05 in {lstm2_unstable}/3 seeds); "
          f"standard@1e-4 drops {[f'{d:.3f}' for d in standard_drops]} "
          f"(<0.05 in {standard_stable}/3 seeds)")


# -- criterion 6: token sentiment, desk scale ------------------------------------

def test_criterion_6_sentiment(sentiment_files):
    from slimlstm.data import load_token_dataset

    train_file, test_file = sentiment_files
    train = load_token_dataset(train_file, vocab_limit=2000, maxlen=40)
    test = load_token_dataset(test_file, vocab_limit=2000, maxlen=40)
    assert len(train) == 5000 and len(test) == 1000

    bests = {}
    for variant in ALL_VARIANTS:
        clf = SequenceLstmClassifier(variant=variant.value, hidden_size=32,
                                     eta0=1e-5, embedding_dim=32, vocab_size=2000,
                                     batch_size=32, max_epochs=30, patience=25,
                                     random_state=7, record_timing=False)
        clf.fit(train.inputs, train.labels, eval_set=(test.inputs, test.labels))
        bests[variant.value] = max(r.test_acc for r in clf.history_)

    spread = max(bests.values()) - min(bests.values())
    for variant, best in bests.items():
        assert best >= 0.75, f"{variant}: best test accuracy {best:.4f} < 0.75"
    assert spread <= 0.05, f"best accuracies spread {spread:.4f} > 0.05: {bests}"
    summary = ", ".join(f"{k}={v:.4f}" for k, v in bests.items())
    print(f"CRITERION 6 PASS: {summary}; spread {spread:.4f} <= 0.05")


# -- criterion 7: dynamic LR and early stopping ----------------------------------

def test_criterion_7_lr_early_stop_and_best_checkpoint(rowwise_runs):
    # eta(eta0=1e-3, C=ln 10) == 1e-2 within 1e-15
    eta = lr_from_loss(LrSchedule(1e-3), np.log(10.0))
    assert abs(eta - 1e-2) <= 1e-15

    # patience 25 with a never-improving metric halts at observation 26
    stopper = EarlyStop(patience=25)
    halted_at = None
    for observation in range(1, 100):
        if stopper.observe(0.5, epoch=observation - 1):
            halted_at = observation
            break
    assert halted_at == 26, f"halted at observation {halted_at}, expected 26"

    # best-checkpoint test accuracy equals the history maximum
    cfg, history, cp = rowwise_runs["standard"]
    _, test_ds = runner.load_datasets(cfg)
    _, acc = runner.evaluate(cp, test_ds)
    best = max(r.test_acc for r in history)
    assert acc == best, f"checkpoint accuracy {acc:.4f} != history best {best:.4f}"
    print(f"CRITERION 7 PASS: eta(1e-3, ln 10) = {eta:.3e}; patience-25 halt at "
          f"observation 26; checkpoint accuracy {acc:.4f} == history best")
