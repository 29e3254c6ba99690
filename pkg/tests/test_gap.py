import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ergopipe.core import SCHEMA_VERSION, SchemaVersionMismatch, ShapeMismatch
from ergopipe.gap import autodiff as ad
from ergopipe.gap.autodiff import Tensor
from ergopipe.gap.checkpoint import MAGIC, load_model, read_checkpoint, save_checkpoint
from ergopipe.gap.data import FIGURE_LEVEL, J, N_STICK, STICK_SEGMENTS, generate_dataset, identity_look, \
    to_batch
from ergopipe.gap.nets import Constant, ConvAutoencoder, Identity, TaskNet
from ergopipe.gap.optim import AdamW, AdamWConfig, AdamWState, adamw_step, step_lr
from ergopipe.gap.trainer import FailedToConverge, GapConfig, deobf_loss, evaluate_privacy_utility, \
    gradient_check, obf_loss, obf_terms, pose_task_loss, predict, rmse, train_adversarial, \
    train_task_network

SIZE = 12


def tiny_batch(seed=0, n=2, size=SIZE):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.1, 0.9, size=(n, 1, size, size))
    Y = rng.uniform(0.1, 0.9, size=(n, 2 * N_STICK))
    return X, Y


def frozen_nets(size=SIZE):
    O = ConvAutoencoder(seed=1)
    D = ConvAutoencoder(seed=2)
    T = TaskNet(N_STICK, size, seed=3)
    D.freeze()
    T.freeze()
    return O, D, T


# ---------------------------------------------------------------- data

def test_dataset_deterministic():
    a = generate_dataset(6, seed=4)
    b = generate_dataset(6, seed=4)
    for s, t in zip(a, b):
        assert s.image.data.tobytes() == t.image.data.tobytes()
        assert s.keypoints.tobytes() == t.keypoints.tobytes()
        assert (s.identity_id, s.identity_patch_region) == (t.identity_id, t.identity_patch_region)


def test_dataset_empty_and_invalid():
    assert generate_dataset(0) == []
    with pytest.raises(ValueError):
        generate_dataset(-1)
    with pytest.raises(ValueError):
        generate_dataset(3, n_identities=0)


def test_identity_look_fixed_per_identity():
    bg1, tex1 = identity_look(5)
    bg2, tex2 = identity_look(5)
    assert bg1 == bg2 and np.array_equal(tex1, tex2)
    bg3, tex3 = identity_look(6)
    assert (bg1, tex1.tobytes()) != (bg3, tex3.tobytes())


def test_keypoints_lie_on_drawn_figure():
    fig = int(np.floor(FIGURE_LEVEL * 255 + 0.5))
    used = {J[a] for s in STICK_SEGMENTS for a in s}
    for scene in generate_dataset(25, seed=9):
        img = scene.image.data[:, :, 0]
        size = img.shape[0]
        assert np.all((scene.keypoints >= 0) & (scene.keypoints <= 1))
        yy, xx = np.mgrid[0:size, 0:size]
        centers = np.stack([xx + 0.5, yy + 0.5], axis=-1)
        for j in used | {J["head"]}:
            p = scene.keypoints[j] * size
            near = np.linalg.norm(centers - p, axis=-1) <= 1.0
            assert np.any(img[near] == fig), f"joint {j} not on a drawn pixel"


def test_to_batch_shapes():
    X, Y = to_batch(generate_dataset(3, seed=1))
    assert X.shape == (3, 1, 48, 48) and Y.shape == (3, 2 * N_STICK)
    assert X.min() >= 0 and X.max() <= 1


# ---------------------------------------------------------------- losses

def test_deobf_loss_examples():
    X, _ = tiny_batch()
    assert deobf_loss(X, X)[0] == 0.0
    assert deobf_loss(X, X + 0.1)[0] == pytest.approx(0.01, abs=1e-15)


def test_deobf_loss_matches_scalar_oracle():
    rng = np.random.default_rng(7)
    X, R = rng.random((3, 1, 4, 5)), rng.random((3, 1, 4, 5))
    vals = [(float(a) - float(b)) ** 2 for a, b in zip(X.ravel(), R.ravel())]
    value, grad = deobf_loss(X, R)
    assert value == pytest.approx(sum(vals) / len(vals), rel=1e-14)
    np.testing.assert_allclose(grad, 2 * (R - X) / X.size, rtol=1e-14)


def test_pose_task_loss_examples():
    rng = np.random.default_rng(8)
    gt = rng.random((4, 2 * N_STICK))
    assert pose_task_loss(gt, gt)[0] == 0.0
    assert pose_task_loss(gt + 0.05, gt)[0] == pytest.approx(0.0025, abs=1e-15)
    pred = rng.random(gt.shape)
    oracle = sum((p - g) ** 2 for p, g in zip(pred.ravel(), gt.ravel())) / gt.size
    assert pose_task_loss(pred, gt)[0] == pytest.approx(oracle, rel=1e-14)


def test_losses_reject_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        deobf_loss(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 5)))
    with pytest.raises(ShapeMismatch):
        pose_task_loss(np.zeros((2, 26)), np.zeros((2, 24)))


def test_obf_loss_alpha_zero_is_pose_loss():
    X, Y = tiny_batch()
    O, D, T = frozen_nets()
    value, grads = obf_loss(X, Y, O, D, T, 0.0)
    ref, _ = pose_task_loss(predict(T, predict(O, X)), Y)
    assert value == pytest.approx(ref, rel=1e-13)
    assert [g.shape for g in grads] == [p.data.shape for p in O.params]


def test_obf_loss_identity_networks():
    X, Y = tiny_batch()
    T = TaskNet(N_STICK, SIZE, seed=3)
    T.freeze()
    total, l_pose, l_deobf = obf_terms(X, Y, Identity(), Identity(), T, 1.0)
    assert l_deobf.item() == 0.0
    assert total.item() == pytest.approx(pose_task_loss(predict(T, X), Y)[0], rel=1e-13)


@settings(max_examples=25)
@given(st.floats(0, 5), st.floats(0, 5))
def test_obf_loss_linear_in_alpha(a1, a2):
    X, Y = tiny_batch(seed=2)
    O, D, T = frozen_nets()
    l1, _, d1 = obf_terms(X, Y, O, D, T, a1)
    l2, _, _ = obf_terms(X, Y, O, D, T, a2)
    assert l1.item() - l2.item() == pytest.approx((a2 - a1) * d1.item(), abs=1e-12)


def test_obf_loss_requires_frozen_and_nonnegative_alpha():
    X, Y = tiny_batch()
    O, D, T = frozen_nets()
    with pytest.raises(ValueError):
        obf_loss(X, Y, O, D, T, -0.5)
    D.unfreeze()
    with pytest.raises(ValueError):
        obf_loss(X, Y, O, D, T, 1.0)


def test_obfuscator_update_leaves_frozen_networks_untouched():
    X, Y = tiny_batch()
    O, D, T = frozen_nets()
    before = [p.data.tobytes() for p in D.params + T.params]
    o_before = [p.data.copy() for p in O.params]
    opt = AdamW(O.params, 1e-2)
    obf_loss(X, Y, O, D, T, 1.0)
    opt.step()
    assert [p.data.tobytes() for p in D.params + T.params] == before
    assert all(p.grad is None for p in D.params + T.params)
    assert any(not np.array_equal(a, p.data) for a, p in zip(o_before, O.params))


# ---------------------------------------------------------------- optimizer

def test_adamw_zero_grad_no_decay_is_noop():
    p = [np.array([1.5, -2.0]), np.ones((2, 2))]
    new, state = adamw_step(p, [np.zeros(2), np.zeros((2, 2))], AdamWState(), 1e-3,
                            AdamWConfig(weight_decay=0.0))
    assert all(np.array_equal(a, b) for a, b in zip(p, new))
    assert state.step == 1


def test_adamw_first_step():
    new, _ = adamw_step([np.array([0.7])], [np.array([1.0])], AdamWState(), 1e-3, AdamWConfig(weight_decay=0.0))
    # m_hat = 1, v_hat = 1 at t = 1, so the step is lr / (1 + eps)
    assert new[0][0] - 0.7 == pytest.approx(-1e-3, abs=1e-9)


def test_adamw_decay_shrinks_parameters():
    rng = np.random.default_rng(0)
    p0 = rng.normal(size=(20,))
    grads = [rng.normal(size=(20,)) for _ in range(15)]
    runs = {}
    for wd in (0.0, 0.1):
        p, state = [p0.copy()], AdamWState()
        for g in grads:
            p, state = adamw_step(p, [g], state, 1e-2, AdamWConfig(weight_decay=wd))
        runs[wd] = p[0]
    # decoupled decay subtracts lr * wd * p each step on an otherwise identical trajectory
    assert np.linalg.norm(runs[0.1]) < np.linalg.norm(runs[0.0])


def test_adamw_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adamw_step([np.zeros(3)], [np.zeros(4)], AdamWState(), 1e-3)
    with pytest.raises(ShapeMismatch):
        adamw_step([np.zeros(3)], [], AdamWState(), 1e-3)


def test_step_lr_schedule():
    assert step_lr(1e-3, 9) == 1e-3
    assert step_lr(1e-3, 10) == pytest.approx(1e-4)
    assert step_lr(1e-3, 25) == pytest.approx(1e-5)


# ---------------------------------------------------------------- gradients

def test_gradient_check_linear_mse():
    rng = np.random.default_rng(1)
    x, y = Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(5, 3)))
    W = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    assert gradient_check([W, b], lambda: ad.mse(ad.linear(x, W, b), y)) < 1e-9


def test_gradient_check_steps_off_kinks():
    # pre-activation 2e-6 sits inside the +-1e-5 step, so the fixed-step difference straddles the kink
    x = Tensor(np.array([[1.0]]))
    w = Tensor(np.array([[2e-6]]), requires_grad=True)
    b = Tensor(np.zeros(1))
    loss = lambda: ad.mse(ad.leaky_relu(ad.linear(x, w, b), 0.1), Tensor(np.array([[-1.0]])))
    st = {}
    err = gradient_check([w], loss, stats=st)
    assert st["refined"] == 1 and st["unresolved"] == 0
    assert st["max_rel_error_plain"] > 1e-2
    assert err < 1e-9


def test_record_branches_only_inside_context():
    a = Tensor(np.array([-1.0, 0.5, 2.0]))
    with ad.record_branches() as log:
        ad.leaky_relu(a)
        ad.clamp(a, 0.0, 1.0)
    assert [m.tolist() for m in log] == [[False, True, True], [-2.0, 0.0, 2.0]]
    ad.leaky_relu(a)
    assert len(log) == 2


def test_gradient_check_obfuscator_objective():
    X, Y = tiny_batch(seed=5)
    O, D, T = frozen_nets()
    err = gradient_check(O.params, lambda: obf_terms(X, Y, O, D, T, 1.0)[0])
    assert err < 1e-4


def test_gradient_check_deobfuscator_objective():
    X, _ = tiny_batch(seed=6)
    O, D, _ = frozen_nets()
    O.freeze()
    D.unfreeze()
    err = gradient_check(D.params, lambda: ad.mse(Tensor(X), D(O(Tensor(X)))))
    assert err < 1e-4


def test_gradient_check_task_network():
    X, Y = tiny_batch(seed=7)
    T = TaskNet(N_STICK, SIZE, seed=4)
    assert gradient_check(T.params, lambda: ad.mse(T(Tensor(X)), Tensor(Y))) < 1e-4


# ---------------------------------------------------------------- training

SMALL = GapConfig(task_epochs=1, task_fail_rmse=10.0, epochs=2, batch=8, adversary_epochs=1)


def test_task_network_deterministic_and_frozen():
    ds = generate_dataset(40, seed=2)
    T1, e1 = train_task_network(ds, SMALL)
    T2, e2 = train_task_network(ds, SMALL)
    assert e1 == e2
    assert [p.data.tobytes() for p in T1.params] == [p.data.tobytes() for p in T2.params]
    assert not any(p.requires_grad for p in T1.params)


def test_task_network_errors():
    with pytest.raises(ValueError):
        train_task_network([], SMALL)
    with pytest.raises(FailedToConverge):
        train_task_network(generate_dataset(10, seed=2), GapConfig(task_epochs=0, task_fail_rmse=1e-3))


def test_adversarial_training_deterministic():
    ds = generate_dataset(24, seed=3)
    T = TaskNet(N_STICK, 48, seed=0)
    T.freeze()
    t_bytes = [p.data.tobytes() for p in T.params]
    seen = []
    O1, log1 = train_adversarial(ds, T, SMALL, on_epoch=seen.append)
    O2, log2 = train_adversarial(ds, T, SMALL)
    assert log1 == log2 == seen
    assert [p.data.tobytes() for p in O1.params] == [p.data.tobytes() for p in O2.params]
    assert [p.data.tobytes() for p in T.params] == t_bytes
    assert all(np.isfinite([r.l_obf, r.l_pose, r.l_deobf]).all() for r in log1)
    for r in log1:
        assert r.l_obf == pytest.approx(r.l_pose - SMALL.alpha * r.l_deobf, rel=1e-12)


def test_adversarial_training_requires_frozen_task():
    with pytest.raises(ValueError):
        train_adversarial(generate_dataset(2, seed=0), TaskNet(N_STICK, 48), SMALL)


@pytest.fixture(scope="module")
def eval_setup():
    ds = generate_dataset(400, seed=11)
    T = TaskNet(N_STICK, 48, seed=0)
    T.freeze()
    return ds, T


def test_identity_obfuscator_report(eval_setup):
    ds, T = eval_setup
    rep = evaluate_privacy_utility(Identity(), ds, T, GapConfig(adversary_epochs=10))
    assert rep.task_rmse == rep.clean_rmse
    assert rep.ssim == 1.0
    # Best achievable MSE for an adversary that sees no information is the per-pixel variance.
    # With nothing hidden the adversary must do far better; its own capacity keeps it above zero.
    X, _ = to_batch(ds)
    blind = float(X[len(X) // 2:].var(axis=0).mean())
    assert rep.adversary_mse < 0.5 * blind


def test_constant_obfuscator_report(eval_setup):
    ds, T = eval_setup
    rep = evaluate_privacy_utility(Constant(), ds[:60], T, GapConfig(adversary_epochs=1))
    _, Y = to_batch(ds[:60])
    chance = rmse(np.broadcast_to(Y.mean(0), Y.shape), Y)
    # any constant prediction is at least as bad as predicting the mean pose
    assert rep.task_rmse >= chance - 1e-12
    # flat backgrounds keep the luminance term high, so SSIM stays well above 0
    assert rep.ssim < 0.5


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    X, _ = tiny_batch(size=48)
    for model, kind, meta in ((ConvAutoencoder(seed=3), "obfuscator", {}),
                              (TaskNet(N_STICK, 48, seed=3), "task", {"n_keypoints": N_STICK, "image_size": 48})):
        path = tmp_path / f"{kind}.ckpt"
        save_checkpoint(path, model, kind, **meta)
        loaded, header = load_model(path)
        assert header["kind"] == kind
        assert np.array_equal(predict(loaded, X), predict(model, X))


def test_checkpoint_layout(tmp_path):
    m = ConvAutoencoder(seed=0)
    path = tmp_path / "o.ckpt"
    save_checkpoint(path, m, "obfuscator")
    buf = path.read_bytes()
    assert buf[:8] == MAGIC
    (hlen,) = struct.unpack_from("<Q", buf, 8)
    pos = 16 + hlen
    (n,) = struct.unpack_from("<Q", buf, pos)
    assert n == len(m.params)
    pos += 8
    (ndim,) = struct.unpack_from("<Q", buf, pos)
    shape = struct.unpack_from(f"<{ndim}Q", buf, pos + 8)
    first = np.frombuffer(buf, "<f8", int(np.prod(shape)), pos + 8 + 8 * ndim).reshape(shape)
    assert np.array_equal(first, m.params[0].data)
    _, arrays = read_checkpoint(path)
    assert len(buf) == pos + sum(8 * (1 + a.ndim + a.size) for a in arrays)


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT")
    with pytest.raises(ValueError):
        read_checkpoint(bad)
    future = tmp_path / "future.ckpt"
    major = int(SCHEMA_VERSION.split(".")[0]) + 1
    save_checkpoint(future, ConvAutoencoder(), "obfuscator", schema_version=f"{major}.0")
    with pytest.raises(SchemaVersionMismatch):
        read_checkpoint(future)


# ---------------------------------------------------------------- calibrated runs

@pytest.mark.slow
def test_alpha_zero_keeps_task_accuracy():
    from gap_runs import SEEDS, directional_runs
    runs = directional_runs()
    for seed in SEEDS:
        rep = runs.reports[0.0, seed]
        assert rep.task_rmse <= 1.2 * rep.clean_rmse, seed
