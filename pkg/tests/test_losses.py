import math

import pytest
import torch

from ct2ctpa.losses import adversarial_loss, classifier_supervision_loss, cycle_loss, ssim_torch
from ct2ctpa.models import ClassifierConfig, build_classifier, param_fingerprint


def test_mse_adversarial_exact_match_is_zero():
    logits = torch.ones(1, 1, 4, 4)
    assert float(adversarial_loss("mse", logits, True)) == 0.0
    assert float(adversarial_loss("mse", torch.zeros(1, 1, 4, 4), False)) == 0.0


def test_bce_adversarial_at_zero_logits_is_ln2():
    logits = torch.zeros(1, 1, 8, 8)
    for target in (True, False):
        assert float(adversarial_loss("bce", logits, target)) == pytest.approx(math.log(2), abs=1e-6)


def test_mse_real_plus_fake_minimized_at_half():
    # loss(l, real) + loss(l, fake) = mean((l-1)^2 + l^2), minimum 0.5 at l = 0.5
    def combined(value):
        logits = torch.full((1, 1, 4, 4), value)
        return float(adversarial_loss("mse", logits, True) + adversarial_loss("mse", logits, False))

    assert combined(0.5) == pytest.approx(0.5, abs=1e-7)
    for other in (0.0, 0.25, 0.75, 1.0):
        assert combined(other) > combined(0.5)


def test_adversarial_rejects_bad_kind_and_nonfinite():
    with pytest.raises(ValueError, match="kind"):
        adversarial_loss("hinge", torch.zeros(1), True)
    with pytest.raises(FloatingPointError):
        adversarial_loss("bce", torch.tensor([float("nan")]), True)


def test_cycle_loss_identical_images_zero():
    img = torch.rand(1, 1, 16, 16) * 2 - 1
    assert float(cycle_loss("l1", img, img)) == 0.0
    assert float(cycle_loss("ssim", img, img)) == pytest.approx(0.0, abs=1e-5)


def test_cycle_l1_constant_offset():
    a = torch.zeros(1, 1, 16, 16)
    b = torch.full((1, 1, 16, 16), 0.25)
    assert float(cycle_loss("l1", a, b)) == pytest.approx(0.25, abs=1e-7)


def test_cycle_loss_shape_mismatch_and_kind():
    with pytest.raises(ValueError, match="shape"):
        cycle_loss("l1", torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 5))
    with pytest.raises(ValueError, match="kind"):
        cycle_loss("l2", torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 4))


def test_ssim_cycle_gradient_matches_finite_differences():
    torch.manual_seed(0)
    x = (torch.rand(1, 1, 8, 8, dtype=torch.float64) * 2 - 1).requires_grad_(True)
    y = torch.rand(1, 1, 8, 8, dtype=torch.float64) * 2 - 1
    loss = cycle_loss("ssim", x, y, window_size=7)
    loss.backward()
    grad = x.grad.clone()
    eps = 1e-6
    for idx in [(0, 0, 2, 3), (0, 0, 5, 5), (0, 0, 0, 7), (0, 0, 4, 1), (0, 0, 7, 0)]:
        xp, xm = x.detach().clone(), x.detach().clone()
        xp[idx] += eps
        xm[idx] -= eps
        fd = (
            float(cycle_loss("ssim", xp, y, window_size=7))
            - float(cycle_loss("ssim", xm, y, window_size=7))
        ) / (2 * eps)
        assert fd == pytest.approx(float(grad[idx]), rel=1e-4, abs=1e-9)


def test_ssim_torch_window_too_large():
    with pytest.raises(ValueError, match="window"):
        ssim_torch(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 8), window_size=11)


def test_classifier_supervision_matches_label_near_zero():
    clf = build_classifier(ClassifierConfig(depth=2, base_channels=4), seed=0)
    with torch.no_grad():
        clf.head.weight.zero_()
        clf.head.bias.fill_(40.0)  # probability ~= 1
    img = torch.rand(1, 1, 32, 32) * 2 - 1
    assert float(classifier_supervision_loss(clf, img, True)) == pytest.approx(0.0, abs=1e-6)
    with torch.no_grad():
        clf.head.bias.fill_(-40.0)  # probability ~= 0
    assert float(classifier_supervision_loss(clf, img, False)) == pytest.approx(0.0, abs=1e-6)


def test_classifier_supervision_missing_label():
    clf = build_classifier(ClassifierConfig(depth=2, base_channels=4), seed=0)
    with pytest.raises(ValueError, match="label"):
        classifier_supervision_loss(clf, torch.zeros(1, 1, 32, 32), None)


def test_supervision_gradient_reaches_image_not_frozen_classifier():
    clf = build_classifier(ClassifierConfig(depth=2, base_channels=4), seed=0)
    for p in clf.parameters():
        p.requires_grad_(False)
    fp_before = param_fingerprint(clf)
    img = (torch.rand(1, 1, 32, 32) * 2 - 1).requires_grad_(True)
    loss = classifier_supervision_loss(clf, img, True)
    loss.backward()
    assert img.grad is not None and torch.isfinite(img.grad).all()
    assert all(p.grad is None for p in clf.parameters())
    assert param_fingerprint(clf) == fp_before
