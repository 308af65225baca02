import sys
from pathlib import Path

import numpy as np
import torch
from torch import nn

PROJECT_ROOT = Path(__file__).resolve().parents[2]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from refinegan.app.models import ErrorMasks, one_hot_array  # noqa: E402
from refinegan.app.schemas import NetConfig  # noqa: E402
from refinegan.app.services import losses  # noqa: E402
from refinegan.app.services.nets import (  # noqa: E402
    backward,
    build_discriminator,
    build_generator,
    build_refinement,
    forward,
)

STEP = 1e-5
FLOOR = 1e-5
TOLERANCE = 1e-4
SAMPLES = 200


def _config(**overrides) -> NetConfig:
    values = dict(height=8, width=8, in_channels=2, class_count=2, depth=2, base_filters=4)
    values.update(overrides)
    return NetConfig(**values)


def _double(net):
    net.module.double()
    return net


def _inputs(seed=0):
    rng = np.random.default_rng(seed)
    images = torch.from_numpy(rng.standard_normal((3, 8, 8, 2)))
    labels = rng.integers(0, 2, size=(3, 8, 8))
    truth = torch.from_numpy(one_hot_array(labels, 2).astype(np.float64))
    return images, truth


class _KinkMonitor:
    """Records which side of zero every rectifier input falls on."""

    def __init__(self, *modules: nn.Module) -> None:
        self.masks: list[torch.Tensor] = []
        self.handles = [
            layer.register_forward_hook(self._record)
            for module in modules
            for layer in module.modules()
            if isinstance(layer, (nn.ReLU, nn.LeakyReLU))
        ]

    def _record(self, module, inputs, output) -> None:
        self.masks.append((inputs[0] > 0).detach().clone())

    def capture(self, fn) -> tuple[float, list[torch.Tensor]]:
        self.masks = []
        with torch.no_grad():
            value = float(fn())
        return value, self.masks

    def close(self) -> None:
        for handle in self.handles:
            handle.remove()


def _same_signs(left: list[torch.Tensor], right: list[torch.Tensor]) -> bool:
    return len(left) == len(right) and all(torch.equal(a, b) for a, b in zip(left, right))


def _max_relative_error(net, loss_fn, monitored, seed=0) -> tuple[float, int]:
    grads = backward(net, loss_fn())
    monitor = _KinkMonitor(*monitored)
    try:
        _, base = monitor.capture(loss_fn)
        candidates = [
            (name, param, index)
            for name, param in net.named_parameters()
            for index in range(param.numel())
        ]
        order = np.random.default_rng(seed).permutation(len(candidates))

        worst = 0.0
        checked = 0
        for position in order:
            name, param, index = candidates[position]
            flat = param.data.view(-1)
            original = float(flat[index])
            flat[index] = original + STEP
            plus, plus_signs = monitor.capture(loss_fn)
            flat[index] = original - STEP
            minus, minus_signs = monitor.capture(loss_fn)
            flat[index] = original
            # a rectifier crossing zero makes the central difference meaningless
            if not (_same_signs(plus_signs, base) and _same_signs(minus_signs, base)):
                continue

            numeric = (plus - minus) / (2 * STEP)
            analytic = float(grads[name].reshape(-1)[index])
            error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)
            worst = max(worst, error)
            checked += 1
            if checked == SAMPLES:
                break
    finally:
        monitor.close()
    return worst, checked


def test_generator_segmentation_loss_gradient_matches_finite_differences():
    generator = _double(build_generator(_config(seed=1)))
    discriminator = _double(build_discriminator(_config(seed=2)))
    images, truth = _inputs()

    def loss_fn():
        fake = forward(generator, images)
        d_fake = forward(discriminator, torch.cat([images, fake], dim=-1))
        return losses.seg_loss(losses.g_adv_loss(d_fake), losses.l1_loss(fake, truth))

    worst, checked = _max_relative_error(
        generator, loss_fn, (generator.module, discriminator.module)
    )

    assert checked == SAMPLES
    assert worst < TOLERANCE


def test_discriminator_loss_gradient_matches_finite_differences():
    generator = _double(build_generator(_config(seed=1)))
    discriminator = _double(build_discriminator(_config(seed=2)))
    images, truth = _inputs(seed=1)
    with torch.no_grad():
        fake = forward(generator, images)

    def loss_fn():
        d_real = forward(discriminator, torch.cat([images, truth], dim=-1))
        d_fake = forward(discriminator, torch.cat([images, fake], dim=-1))
        return losses.d_loss(d_real, d_fake)

    worst, checked = _max_relative_error(
        discriminator, loss_fn, (discriminator.module,), seed=1
    )

    assert checked == SAMPLES
    assert worst < TOLERANCE


def test_refinement_loss_gradient_matches_finite_differences():
    refinement = _double(build_refinement(_config(seed=3)))
    images, _ = _inputs(seed=2)
    rng = np.random.default_rng(4)
    probs = torch.from_numpy(rng.dirichlet(np.ones(2), size=(3, 8, 8)))
    targets = ErrorMasks(
        fp=rng.integers(0, 2, size=(3, 8, 8, 2)).astype(np.float64),
        fn=rng.integers(0, 2, size=(3, 8, 8, 2)).astype(np.float64),
    )

    def loss_fn():
        masks = forward(refinement, torch.cat([images, probs], dim=-1))
        return losses.refinement_bce(masks, targets)

    worst, checked = _max_relative_error(refinement, loss_fn, (refinement.module,), seed=2)

    assert checked == SAMPLES
    assert worst < TOLERANCE
