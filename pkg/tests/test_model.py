import numpy as np
import pytest

from xdhs import model as M
from xdhs import ops
from xdhs.rng import Rng
from xdhs.tensor import Tape, backward

# Frozen operation counts for the reference configuration (145 x 145 scene,
# 200 bands, 9 classes), derived independently by per-layer hand expansion.
FLOPS_BACKBONE_K3 = 31_783_072_000
FLOPS_CONTEXTUAL_K2 = 43_925_766_400


def _small_cube(rng, H=6, W=6, B=4):
    return rng.gaussian(H * W * B).reshape(H, W, B).astype(np.float32)


# ---------------------------------------------------------------------------
# layer specs / depth / flops

@pytest.mark.parametrize("k", [1, 2, 3, 4, 5, 6])
def test_depth_formula(k):
    bb = M.build_backbone(10, 4, k, Rng(0))
    assert bb.depth == 2 + 2 * k + 1
    convs = [s for s in M.backbone_layer_specs(10, 4, k) if s.kind == "conv"]
    assert len(convs) == bb.depth


def test_backbone_spec_channels():
    specs = M.backbone_layer_specs(200, 9, 3)
    convs = [s for s in specs if s.kind == "conv"]
    assert (convs[0].kernel, convs[0].in_channels, convs[0].out_channels) == (5, 200, 128)
    assert all(s.kernel == 1 for s in convs[1:])
    assert convs[-1].out_channels == 9
    assert all(s.out_channels == 128 for s in convs[1:-1])


def test_flops_reference_values():
    assert M.flops(M.backbone_layer_specs(200, 9, 3), 145, 145) == FLOPS_BACKBONE_K3
    assert M.flops(M.contextual_layer_specs(200, 9, 2), 145, 145) == FLOPS_CONTEXTUAL_K2


def test_flops_additivity_in_k():
    base = M.flops(M.backbone_layer_specs(200, 9, 1), 145, 145)
    per_module = 2 * 145 * 145 * 128 * 128 * 2  # two 1x1 convs, x2 ops each mac
    for k in (2, 3, 5):
        got = M.flops(M.backbone_layer_specs(200, 9, k), 145, 145)
        assert got == base + (k - 1) * per_module


def test_flops_scales_with_area():
    s = M.backbone_layer_specs(30, 5, 2)
    assert M.flops(s, 20, 20) * 4 == M.flops(s, 40, 20) * 2 == M.flops(s, 40, 40)


def test_conv_spec_pad_validation():
    with pytest.raises(ValueError, match="pad"):
        M.LayerSpec("conv", kernel=5, in_channels=1, out_channels=1, pad=1)


# ---------------------------------------------------------------------------
# forward shapes and modes

def test_backbone_forward_shape():
    rng = Rng(1)
    bb = M.build_backbone(4, 3, 2, Rng(2))
    cube = _small_cube(rng)
    out = bb.forward(Tape(), cube, mode="train")
    assert out.shape == (3, 6, 6)


def test_backbone_band_mismatch():
    bb = M.build_backbone(4, 3, 1, Rng(2))
    with pytest.raises(ValueError, match="band mismatch"):
        bb.forward(Tape(), np.zeros((6, 6, 5), dtype=np.float32))


def test_cross_domain_forward_shapes():
    rng = Rng(3)
    cdm = M.build_cross_domain([(4, 3), (7, 5)], 1, Rng(4))
    out0 = cdm.forward_domain(Tape(), 0, _small_cube(rng, B=4), mode="train")
    out1 = cdm.forward_domain(Tape(), 1, _small_cube(rng, B=7), mode="train")
    assert out0.shape == (3, 6, 6)
    assert out1.shape == (5, 6, 6)
    with pytest.raises(ValueError, match="band mismatch"):
        cdm.forward_domain(Tape(), 0, _small_cube(rng, B=7))


def test_build_validation():
    with pytest.raises(ValueError):
        M.build_backbone(0, 3, 1, Rng(0))
    with pytest.raises(ValueError):
        M.build_backbone(4, 1, 1, Rng(0))
    with pytest.raises(ValueError):
        M.build_backbone(4, 3, 0, Rng(0))
    with pytest.raises(ValueError):
        M.build_cross_domain([], 1, Rng(0))


def test_parameter_count_backbone():
    h = 16
    bb = M.build_backbone(4, 3, 2, Rng(5), hidden=h)
    n = sum(p.data.size for p in bb.named_parameters().values())
    expect = (4 * h * 25 + h * h) + 2 * 2 * h  # data convs + 2 BN affine pairs
    expect += 2 * (2 * h * h + 2 * 2 * h)      # two residual modules
    expect += h * 3                            # task head
    assert n == expect


# ---------------------------------------------------------------------------
# K = 1 cross-domain model matches the plain backbone

def test_k1_cross_domain_equals_backbone():
    seed = 42
    bb = M.build_backbone(5, 4, 2, Rng(seed))
    cdm = M.build_cross_domain([(5, 4)], 2, Rng(seed))
    cube = _small_cube(Rng(9), B=5)
    out_b = bb.forward(Tape(), cube, mode="train").data
    out_c = cdm.forward_domain(Tape(), 0, cube, mode="train").data
    assert np.array_equal(out_b, out_c)


# ---------------------------------------------------------------------------
# trunk sharing

def test_trunk_physically_shared():
    cdm = M.build_cross_domain([(4, 3), (6, 3)], 1, Rng(6))
    names = cdm.named_parameters()
    w = names["shared/res0/conv1/weight"]
    before = cdm.forward_domain(Tape(), 1, _small_cube(Rng(7), B=6)).data.copy()
    w.data += 0.05
    after = cdm.forward_domain(Tape(), 1, _small_cube(Rng(7), B=6)).data
    assert not np.array_equal(before, after)  # both domains see the same trunk


def test_shared_gradients_sum_over_domains():
    cdm = M.build_cross_domain([(4, 3), (6, 3)], 1, Rng(8), dtype=np.float64)
    for p in cdm.named_parameters().values():  # well-scaled weights for signal
        p.data[...] = Rng(11).gaussian(p.data.size, std=0.1).reshape(p.shape)
    cubes = [_small_cube(Rng(12), B=4).astype(np.float64),
             _small_cube(Rng(13), B=6).astype(np.float64)]
    labels = np.ones((6, 6), dtype=int)
    rows, cols = np.nonzero(labels)
    w = cdm.named_parameters()["shared/res0/conv1/weight"]

    def domain_grad(d):
        tape = Tape()
        logits = cdm.forward_domain(tape, d, cubes[d], mode="train")
        loss = ops.softmax_ce_loss(tape, logits, labels, rows, cols)
        return backward(tape, loss)[w]

    tape = Tape()
    losses = [ops.softmax_ce_loss(tape, cdm.forward_domain(tape, d, cubes[d], mode="train"),
                                  labels, rows, cols) for d in (0, 1)]
    total = ops.add(tape, losses[0], losses[1])
    joint = backward(tape, total)[w]
    np.testing.assert_allclose(joint, domain_grad(0) + domain_grad(1), rtol=1e-9)


# ---------------------------------------------------------------------------
# residual behaviour

def test_residual_identity_when_branch_zero():
    rm = M.ResModule("m", 4, None, np.float64)  # zero-init convs
    x_data = np.abs(Rng(14).gaussian(4 * 5 * 5).reshape(4, 5, 5)) + 0.1
    from xdhs.tensor import Tensor
    y = rm.forward(Tape(), Tensor(x_data, dtype=np.float64), mode="eval")
    # zero conv branch + BN(0) = 0, so output is relu(x) = x for positive x
    np.testing.assert_allclose(y.data, x_data, atol=1e-12)


# ---------------------------------------------------------------------------
# transplant

def test_transplant_copies_trunk_bitwise():
    cdm = M.build_cross_domain([(4, 3), (6, 5)], 2, Rng(15))
    for b in cdm.named_buffers().values():
        b += 0.25  # make running stats distinctive
    target = M.build_backbone(9, 4, 2, Rng(16))
    data_before = {n: p.data.copy() for n, p in target.named_parameters().items()
                   if target.section_of(n) != "shared"}
    M.transplant_shared(cdm, target)
    src_p = cdm.named_parameters()
    src_b = cdm.named_buffers()
    for n, p in target.named_parameters().items():
        if target.section_of(n) == "shared":
            assert np.array_equal(p.data, src_p[n].data), n
        else:
            assert np.array_equal(p.data, data_before[n]), n
    for n, b in target.named_buffers().items():
        if target.section_of(n) == "shared":
            assert np.array_equal(b, src_b[n]), n


def test_transplant_idempotent():
    cdm = M.build_cross_domain([(4, 3)], 1, Rng(17))
    target = M.build_backbone(7, 3, 1, Rng(18))
    M.transplant_shared(cdm, target)
    snap = {n: p.data.copy() for n, p in target.named_parameters().items()}
    M.transplant_shared(cdm, target)
    for n, p in target.named_parameters().items():
        assert np.array_equal(p.data, snap[n])


def test_transplant_k_mismatch_rejected():
    cdm = M.build_cross_domain([(4, 3)], 2, Rng(19))
    with pytest.raises(ValueError, match="k mismatch"):
        M.transplant_shared(cdm, M.build_backbone(4, 3, 3, Rng(20)))


# ---------------------------------------------------------------------------
# param groups

def _group_of(groups, param_name):
    for g in groups:
        if param_name in g.params:
            return g
    raise AssertionError(f"{param_name} not in any group")


def test_param_groups_pretrain_one_over_n():
    cdm = M.build_cross_domain([(4, 3), (6, 4), (8, 5)], 1, Rng(21))
    groups = M.param_groups(cdm, "pretrain", N=3)
    assert _group_of(groups, "shared/res0/conv1/weight").lr_multiplier == 1.0 / 3
    assert _group_of(groups, "inlet0/conv1/weight").lr_multiplier == 1.0
    assert _group_of(groups, "head2/conv/weight").lr_multiplier == 1.0


def test_param_groups_finetune_ten_x():
    bb = M.build_backbone(4, 3, 1, Rng(22))
    groups = M.param_groups(bb, "finetune")
    assert _group_of(groups, "data/conv1/weight").lr_multiplier == 10.0
    assert _group_of(groups, "shared/res0/conv1/weight").lr_multiplier == 1.0
    assert _group_of(groups, "task/conv/weight").lr_multiplier == 1.0


def test_param_groups_scratch_uniform():
    bb = M.build_backbone(4, 3, 1, Rng(23))
    assert all(g.lr_multiplier == 1.0 for g in M.param_groups(bb, "scratch"))


def test_param_groups_cover_all_params_once():
    cdm = M.build_cross_domain([(4, 3), (6, 4)], 2, Rng(24))
    groups = M.param_groups(cdm, "pretrain", N=2)
    seen = [n for g in groups for n in g.params]
    assert sorted(seen) == sorted(cdm.named_parameters())


def test_param_groups_bn_no_weight_decay():
    bb = M.build_backbone(4, 3, 1, Rng(25))
    for g in M.param_groups(bb, "finetune"):
        for n in g.params:
            is_bn = n.endswith("/gamma") or n.endswith("/beta")
            assert g.weight_decay_enabled == (not is_bn)


def test_param_groups_validation():
    bb = M.build_backbone(4, 3, 1, Rng(26))
    with pytest.raises(ValueError):
        M.param_groups(bb, "warmup")
    with pytest.raises(ValueError):
        M.param_groups(bb, "pretrain", N=0)
