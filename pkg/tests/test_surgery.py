import numpy as np
import pytest
import torch

from advprune.graph import check_structure, post_activation_index
from advprune.metrics import count_flops, count_params
from advprune.model_zoo import build
from advprune.surgery import (
    PrunePlan,
    SurgeryError,
    apply_plan,
    plan,
    pruned_descriptor,
)


def random_masks(descriptor, rng, keep_prob=0.6):
    masks = {}
    for layer in descriptor.prunable_layers:
        n = descriptor.layers[layer].out_channels
        mask = rng.random(n) < keep_prob
        if not mask.any():
            mask[rng.integers(n)] = True
        masks[layer] = mask
    return masks


def full_masks(descriptor):
    return {l: np.ones(descriptor.layers[l].out_channels, dtype=bool)
            for l in descriptor.prunable_layers}


class TestPlanValidation:
    def test_missing_layer_rejected(self):
        d = build("vgg_small", seed=0).descriptor
        masks = full_masks(d)
        masks.pop(d.prunable_layers[0])
        with pytest.raises(SurgeryError, match="missing"):
            plan(d, masks)

    def test_extra_layer_rejected(self):
        d = build("vgg_small", seed=0).descriptor
        masks = full_masks(d)
        masks[999] = np.ones(4, dtype=bool)
        with pytest.raises(SurgeryError, match="extra"):
            plan(d, masks)

    def test_wrong_length_rejected(self):
        d = build("vgg_small", seed=0).descriptor
        masks = full_masks(d)
        masks[d.prunable_layers[0]] = np.ones(3, dtype=bool)
        with pytest.raises(SurgeryError, match="length"):
            plan(d, masks)

    def test_empty_mask_rejected(self):
        d = build("vgg_small", seed=0).descriptor
        masks = full_masks(d)
        masks[d.prunable_layers[0]][:] = False
        with pytest.raises(SurgeryError, match="keeps no channels"):
            plan(d, masks)

    def test_non_boolean_mask_rejected(self):
        d = build("vgg_small", seed=0).descriptor
        masks = full_masks(d)
        masks[d.prunable_layers[0]] = np.ones(16, dtype=np.float64)
        with pytest.raises(SurgeryError, match="boolean"):
            plan(d, masks)


class TestIdentityPlan:
    def test_full_masks_change_nothing(self):
        net = build("vgg_small", seed=0)
        p = plan(net.descriptor, full_masks(net.descriptor))
        assert pruned_descriptor(net.descriptor, p) == net.descriptor
        pruned = apply_plan(net, p)
        x = torch.randn(2, 3, 32, 32, generator=torch.Generator().manual_seed(1))
        net.eval()
        pruned.eval()
        with torch.no_grad():
            assert torch.equal(net(x), pruned(x))


class TestRandomMaskProperty:
    @pytest.mark.parametrize("arch,kwargs", [
        ("vgg_small", {}),
        ("resnet_basic", {"depth": 20}),
        ("inception_small", {}),
    ])
    def test_random_masks_stay_structurally_sound(self, arch, kwargs):
        net = build(arch, seed=0, **kwargs)
        d = net.descriptor
        rng = np.random.default_rng(42)
        for _ in range(25):
            p = plan(d, random_masks(d, rng))
            new_d = pruned_descriptor(d, p)
            assert check_structure(new_d) == []
            pruned = apply_plan(net, p)
            out = pruned(torch.randn(2, *d.input_shape))
            assert out.shape == (2, d.num_classes)
            assert torch.isfinite(out).all()
            torch_count = sum(q.numel() for q in pruned.parameters())
            assert torch_count == count_params(new_d)

    def test_pruning_shrinks_params_and_flops(self):
        net = build("vgg_small", seed=0)
        d = net.descriptor
        rng = np.random.default_rng(3)
        p = plan(d, random_masks(d, rng, keep_prob=0.5))
        new_d = pruned_descriptor(d, p)
        assert count_params(new_d) < count_params(d)
        assert count_flops(new_d) < count_flops(d)

    def test_non_prunable_convs_keep_all_outputs(self):
        net = build("resnet_basic", depth=20, seed=0)
        d = net.descriptor
        rng = np.random.default_rng(5)
        p = plan(d, random_masks(d, rng))
        prunable = set(d.prunable_layers)
        for i, spec in enumerate(d.layers):
            if spec.kind == "conv" and i not in prunable:
                assert p.layer_plans[i].kept_out == tuple(range(spec.out_channels))

    def test_concat_inputs_stay_complete(self):
        # prunable streams never reach a junction, so concats keep full width
        net = build("inception_small", seed=0)
        d = net.descriptor
        rng = np.random.default_rng(9)
        p = plan(d, random_masks(d, rng))
        for i, spec in enumerate(d.layers):
            if spec.kind == "concat":
                assert p.layer_plans[i].kept_in == tuple(range(spec.out_channels))


class TestWeightSlicing:
    def test_surviving_slices_are_copied(self):
        net = build("vgg_small", seed=0, plan=(4, "M", 6, "M"), num_classes=3,
                    input_shape=(3, 8, 8))
        d = net.descriptor
        conv1, conv2 = d.prunable_layers
        masks = full_masks(d)
        masks[conv1] = np.array([True, False, True, False])
        p = plan(d, masks)
        pruned = apply_plan(net, p)

        src1 = net.blocks[str(conv1)]
        dst1 = pruned.blocks[str(conv1)]
        assert torch.equal(dst1.weight, src1.weight[[0, 2]])
        assert torch.equal(dst1.bias, src1.bias[[0, 2]])

        bn1 = conv1 + 1
        assert torch.equal(pruned.blocks[str(bn1)].weight, net.blocks[str(bn1)].weight[[0, 2]])
        assert torch.equal(pruned.blocks[str(bn1)].running_mean,
                           net.blocks[str(bn1)].running_mean[[0, 2]])

        src2 = net.blocks[str(conv2)]
        dst2 = pruned.blocks[str(conv2)]
        assert torch.equal(dst2.weight, src2.weight[:, [0, 2]])

    def test_linear_keeps_all_rows(self):
        net = build("vgg_small", seed=0, plan=(4, "M"), num_classes=5,
                    input_shape=(3, 8, 8))
        d = net.descriptor
        masks = {d.prunable_layers[0]: np.array([False, True, True, False])}
        p = plan(d, masks)
        pruned = apply_plan(net, p)
        linear = next(i for i, s in enumerate(d.layers) if s.kind == "linear")
        src, dst = net.blocks[str(linear)], pruned.blocks[str(linear)]
        assert dst.weight.shape == (5, 2)
        assert torch.equal(dst.weight, src.weight[:, [1, 2]])
        assert torch.equal(dst.bias, src.bias)


class TestFunctionPreservation:
    @pytest.mark.parametrize("arch,kwargs", [
        ("vgg_small", {}),
        ("resnet_basic", {"depth": 14}),
    ])
    def test_removing_silenced_channel_keeps_logits(self, arch, kwargs):
        # silence one channel (zero bn scale and shift), prune exactly that
        # channel, and the logits must not move
        net = build(arch, seed=0, **kwargs).double()
        d = net.descriptor
        target = d.prunable_layers[len(d.prunable_layers) // 2]
        bn = d.layers[post_activation_index(d, target)].inputs[0]
        channel = 1
        with torch.no_grad():
            net.blocks[str(bn)].weight[channel] = 0.0
            net.blocks[str(bn)].bias[channel] = 0.0
        masks = full_masks(d)
        masks[target][channel] = False
        pruned = apply_plan(net, plan(d, masks))
        net.eval()
        pruned.eval()
        x = torch.randn(8, *d.input_shape, generator=torch.Generator().manual_seed(2),
                        dtype=torch.float64)
        with torch.no_grad():
            diff = (net(x) - pruned(x)).abs().max().item()
        assert diff < 1e-12


class TestPlanSerialization:
    def test_text_round_trip(self):
        d = build("vgg_small", seed=0).descriptor
        rng = np.random.default_rng(1)
        p = plan(d, random_masks(d, rng))
        back = PrunePlan.from_text(p.to_text())
        assert back == p
        assert back.kept_counts() == p.kept_counts()

    def test_from_text_rejects_other_documents(self):
        with pytest.raises(SurgeryError):
            PrunePlan.from_text("{\"format\": \"other\", \"layers\": []}")

    def test_plan_descriptor_mismatch_rejected(self):
        d_small = build("vgg_small", seed=0, plan=(4, "M")).descriptor
        d_big = build("vgg_small", seed=0).descriptor
        p = plan(d_small, full_masks(d_small))
        with pytest.raises(SurgeryError):
            pruned_descriptor(d_big, p)
