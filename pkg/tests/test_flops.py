from dataclasses import replace

import numpy as np
import pytest

from tokenadapt import flops as fl
from tokenadapt import ilsa
from tokenadapt import model as tm
from tokenadapt import numerics as nx

UNIT = fl.FlopsArchAssumptions(
    num_layers=1, d_model=1, num_heads=1, ffn_dim=1, tokens_per_view=1, views=1, text_tokens=0, frames=1,
    encoder=fl.VisionEncoder(layers=1, width=1, mlp_dim=1, heads=1, patch=1, image=1, channels=1),
    adapter_hidden=1,
)
BIG = fl.FlopsArchAssumptions()


def test_unit_scale_hand_count():
    r = fl.dense_flops(UNIT)
    # one token: q,k,v,o (4) + scores (1) + values (1) + gate,up,down (3) multiply-adds, doubled
    layer = r.layers[0]
    assert (layer.projections, layer.attention, layer.ffn) == (8, 4, 6)
    # softmax over one score (5) + two norms over one element (2 * 4)
    assert layer.elementwise == 13 and layer.eager_overhead == 0
    assert r.llm_total == 31
    # ViT on 1 image: 2 tokens (patch + class): qkvo 8, attention 8, mlp 4, patchify 1 -> 21 MACs
    # fusion: qkvo 4, attention 2, ffn 6, weighted sum 1 -> 13; adapter: 1 + 1 -> 2
    assert r.frontend == {"vision_encoder": 42, "temporal_fusion": 26, "adapter": 4}
    assert r.total == 31 + 72


def test_attention_term_quadratic():
    a = fl.dense_flops(replace(BIG, text_tokens=0, tokens_per_view=100, views=1)).layers[0]
    b = fl.dense_flops(replace(BIG, text_tokens=0, tokens_per_view=200, views=1)).layers[0]
    assert b.attention == 4 * a.attention
    assert b.projections == 2 * a.projections and b.ffn == 2 * a.ffn


def test_zero_rate_costs_only_overhead():
    d = fl.dense_flops(BIG)
    p = fl.pruned_flops(BIG, ilsa.PruneConfig(0.0, 0.1, (4,)))
    assert p.eager_overhead > 0
    assert p.total == d.total + p.eager_overhead
    assert fl.reduction_ratio(d, d) == 1.0


def test_monotone_in_rate():
    totals = [fl.pruned_flops(BIG, ilsa.PruneConfig(r, 0.1, (4,))).total for r in np.arange(0.05, 1, 0.05)]
    assert all(b < a for a, b in zip(totals, totals[1:]))


def test_earlier_layer_is_cheaper():
    for r in (0.2, 0.35, 0.6, 0.85):
        costs = [fl.pruned_flops(BIG, ilsa.PruneConfig(r, 0.1, (i,))).total for i in range(32)]
        assert all(a <= b for a, b in zip(costs, costs[1:]))


def test_post_sparse_attention_independent_of_length():
    # fixed budget: pick rates so B stays at 200 while |V| grows
    for views in (2, 4, 8):
        a = replace(BIG, views=views, tokens_per_view=500, text_tokens=0)
        rate = 1 - 200 / a.visual_tokens
        p = fl.pruned_flops(a, ilsa.PruneConfig(rate, 0.1, (0,)))
        assert p.layers[1].length == 200
        assert p.layers[1].attention == 4 * 200 * 200 * BIG.d_model


def test_sparse_layer_out_of_range():
    with pytest.raises(ValueError):
        fl.pruned_flops(BIG, ilsa.PruneConfig(0.3, 0.1, (32,)))


def test_summary_reports_calibration():
    s = fl.summary(BIG, [((4,), 0.35)])
    c = s["calibration"]
    assert c["reference_dense_gflops"] == 9105.0
    assert c["residual_gflops"] == pytest.approx(s["dense"]["total_gflops"] - 9105.0)
    assert set(fl.text_sensitivity(BIG, [((4,), 0.35)])) == {32, 64, 128}


def desk_inputs(rng, spec, views=3, per_view=10, n_text=5):
    recs = [("visual", v, 0) for v in range(views) for _ in range(per_view)] + [("text", None, None)] * n_text
    lay = tm.SequenceLayout.build(recs)
    return rng.normal(size=(len(lay), spec.d_model)), lay


@pytest.mark.parametrize("rate, layers", [(0.35, (2,)), (0.6, (1, 3)), (0.0, (0,))])
def test_instrumented_counts_match(backend, rng, rate, layers):
    spec = tm.ArchSpec(num_layers=5, d_model=16, num_heads=2, ffn_dim=24, sparse_layers=layers)
    cfg = ilsa.PruneConfig(rate, 0.1, layers)
    x, lay = desk_inputs(rng, spec)
    with nx.count_macs() as counted:
        tm.model_forward(x, lay, spec, tm.init_weights(spec, 0), sparsifier=ilsa.make_sparsifier(cfg))
    assert dict(counted) == fl.model_macs(spec, 30, 5, cfg=cfg)


def test_instrumented_dense_counts_match(backend, rng):
    spec = tm.ArchSpec(num_layers=3, d_model=8, num_heads=2, ffn_dim=12, sparse_layers=())
    x, lay = desk_inputs(rng, spec, views=2, per_view=7, n_text=3)
    with nx.count_macs() as counted:
        tm.model_forward(x, lay, spec, tm.init_weights(spec, 0))
    assert dict(counted) == fl.model_macs(spec, 14, 3)
