import json
from pathlib import Path

import numpy as np
import pytest
import torch

from ct2ctpa.models import (
    ClassifierConfig,
    DiscriminatorConfig,
    GeneratorConfig,
    build_classifier,
    build_discriminator,
    build_generator,
    count_parameters,
    freeze,
    load_checkpoint,
    param_fingerprint,
    save_checkpoint,
)

GOLDEN = json.loads((Path(__file__).parent / "golden_param_counts.json").read_text())


def rand_image(size=64, seed=0, channels=1):
    g = torch.Generator().manual_seed(seed)
    return (torch.rand(1, channels, size, size, generator=g) * 2 - 1).clamp(-1, 1)


# ---------------------------------------------------------------------------
# generators


@pytest.mark.parametrize(
    "cfg",
    [
        GeneratorConfig(backbone="resnet", n_residual_blocks=9, base_channels=4),
        GeneratorConfig(backbone="resnet", n_residual_blocks=34, base_channels=4),
        GeneratorConfig(backbone="resnet", n_residual_blocks=50, base_channels=4),
        GeneratorConfig(backbone="unet", base_channels=4),
    ],
)
def test_generator_preserves_shape_and_range(cfg):
    gen = build_generator(cfg, seed=1)
    x = rand_image(64)
    with torch.no_grad():
        y = gen(x)
    assert y.shape == x.shape
    assert float(y.min()) >= -1.0 and float(y.max()) <= 1.0


def test_generator_shape_at_256():
    gen = build_generator(GeneratorConfig(backbone="unet", base_channels=4), seed=1)
    with torch.no_grad():
        y = gen(rand_image(256))
    assert y.shape == (1, 1, 256, 256)


def test_generator_param_count_monotone_in_blocks():
    counts = [
        count_parameters(build_generator(GeneratorConfig(n_residual_blocks=n), seed=0))
        for n in (9, 34, 50)
    ]
    assert counts[0] < counts[1] < counts[2]


def test_generator_rejects_bad_blocks_and_backbone():
    with pytest.raises(ValueError, match="n_residual_blocks"):
        build_generator(GeneratorConfig(n_residual_blocks=12))
    with pytest.raises(ValueError, match="backbone"):
        build_generator(GeneratorConfig(backbone="vgg"))


def test_unet_rejects_indivisible_input():
    gen = build_generator(GeneratorConfig(backbone="unet", base_channels=4), seed=0)
    with pytest.raises(ValueError, match="divisible"):
        gen(rand_image(48))


def test_golden_parameter_counts():
    unet = build_generator(GeneratorConfig(backbone="unet", base_channels=64), seed=0)
    res9 = build_generator(GeneratorConfig(backbone="resnet", n_residual_blocks=9, base_channels=64), seed=0)
    assert count_parameters(unet) == GOLDEN["unet_base64"]
    assert count_parameters(res9) == GOLDEN["resnet9_base64"]


# ---------------------------------------------------------------------------
# discriminators


def test_pixel_discriminator_per_pixel_logits():
    d = build_discriminator(DiscriminatorConfig(kind="pixel", base_channels=8), seed=2)
    with torch.no_grad():
        out = d(rand_image(256))
    assert out.shape == (1, 1, 256, 256)


def test_patch_discriminator_grid_sizes():
    d3 = build_discriminator(DiscriminatorConfig(kind="patch", n_layers=3, base_channels=8), seed=2)
    d4 = build_discriminator(DiscriminatorConfig(kind="patch", n_layers=4, base_channels=8), seed=2)
    x = rand_image(256)
    with torch.no_grad():
        g3, g4 = d3(x), d4(x)
    assert g3.shape == (1, 1, 30, 30)
    assert g4.shape[-1] < g3.shape[-1] and g4.shape[-2] < g3.shape[-2]


def test_patch_discriminator_rejects_bad_layers():
    with pytest.raises(ValueError, match="n_layers"):
        build_discriminator(DiscriminatorConfig(kind="patch", n_layers=5))


def test_conditional_discriminator_accepts_two_channels():
    d = build_discriminator(DiscriminatorConfig(kind="patch", n_layers=3, base_channels=8), seed=0, in_channels=2)
    with torch.no_grad():
        out = d(rand_image(64, channels=2))
    assert out.shape[1] == 1


# ---------------------------------------------------------------------------
# classifier


def test_classifier_probability_range_and_two_way():
    clf = build_classifier(ClassifierConfig(depth=2, base_channels=8), seed=3)
    x = rand_image(64)
    with torch.no_grad():
        p = clf.probability(x)
        scores = clf.two_way_scores(x)
    assert 0.0 <= float(p) <= 1.0
    assert float(scores.sum()) == pytest.approx(1.0, abs=1e-6)


def test_classifier_any_input_size():
    clf = build_classifier(ClassifierConfig(depth=2, base_channels=8), seed=3)
    with torch.no_grad():
        assert clf(rand_image(64)).shape == (1, 1)
        assert clf(rand_image(128)).shape == (1, 1)


# ---------------------------------------------------------------------------
# determinism, counting, gradient flow


def test_build_deterministic_for_fixed_seed():
    for build, cfg in (
        (build_generator, GeneratorConfig(base_channels=4)),
        (build_discriminator, DiscriminatorConfig(kind="patch", base_channels=4)),
        (build_classifier, ClassifierConfig(depth=2, base_channels=4)),
    ):
        a, b = build(cfg, seed=11), build(cfg, seed=11)
        assert param_fingerprint(a) == param_fingerprint(b)
        c = build(cfg, seed=12)
        assert param_fingerprint(a) != param_fingerprint(c)


def test_count_parameters_stable_and_freeze_zeroes_trainable():
    clf = build_classifier(ClassifierConfig(depth=2, base_channels=4), seed=0)
    n1, n2 = count_parameters(clf), count_parameters(clf)
    assert n1 == n2 > 0
    freeze(clf)
    assert count_parameters(clf) == 0
    assert count_parameters(clf, trainable_only=False) == n1


@pytest.mark.parametrize(
    "build,cfg",
    [
        (build_generator, GeneratorConfig(backbone="resnet", n_residual_blocks=9, base_channels=4)),
        (build_generator, GeneratorConfig(backbone="unet", base_channels=4)),
        (build_discriminator, DiscriminatorConfig(kind="patch", n_layers=3, base_channels=4)),
        (build_discriminator, DiscriminatorConfig(kind="pixel", base_channels=4)),
        (build_classifier, ClassifierConfig(depth=2, base_channels=4)),
    ],
)
def test_gradient_flow_at_init(build, cfg):
    model = build(cfg, seed=5)
    out = model(rand_image(64, seed=9))
    out.sum().backward()
    for name, p in model.named_parameters():
        assert p.grad is not None, name
        assert torch.isfinite(p.grad).all(), name
        assert p.grad.abs().sum() > 0, f"gradient identically zero for {name}"


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg = GeneratorConfig(backbone="resnet", n_residual_blocks=9, base_channels=4)
    gen = build_generator(cfg, seed=7)
    x = rand_image(64, seed=13)
    with torch.no_grad():
        before = gen(x)
    save_checkpoint(tmp_path / "g", gen, "generator", cfg, seed=7)
    loaded, manifest = load_checkpoint(tmp_path / "g")
    with torch.no_grad():
        after = loaded(x)
    assert torch.equal(before, after)
    assert manifest["fingerprint"] == param_fingerprint(gen)
    assert manifest["config"]["n_residual_blocks"] == 9


def test_checkpoint_detects_tampering(tmp_path):
    cfg = ClassifierConfig(depth=2, base_channels=4)
    clf = build_classifier(cfg, seed=1)
    save_checkpoint(tmp_path / "c", clf, "classifier", cfg)
    victim = next((tmp_path / "c").glob("*.weight.npy"))
    arr = np.load(victim)
    np.save(victim, arr + 1.0)
    with pytest.raises(ValueError, match="fingerprint"):
        load_checkpoint(tmp_path / "c")


def test_checkpoint_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest"):
        load_checkpoint(tmp_path)
