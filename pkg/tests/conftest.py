import numpy as np
import pytest

from matchplane import bundle, fallback, trace


def small_weights(rng, n_classes=3, ev_width=3, h_width=4):
    return bundle.random_weights(
        rng,
        n_classes=n_classes,
        ev_width=ev_width,
        h_width=h_width,
        len_embed_width=4,
        ipd_embed_width=4,
        len_input_bits=6,
        ipd_input_bits=6,
    )


def small_bundle(
    seed=3,
    S=4,
    n_classes=3,
    ev_width=3,
    h_width=4,
    reset_period=16,
    t_conf=(8, 8, 8),
    t_esc=3,
    merged=True,
    with_tree=True,
):
    rng = np.random.default_rng(seed)
    weights = small_weights(rng, n_classes, ev_width, h_width)
    b = bundle.compile_bundle(
        weights,
        S=S,
        n_classes=n_classes,
        merged=merged,
        len_embed_width=4,
        ipd_embed_width=4,
        len_input_bits=6,
        ipd_input_bits=6,
        len_shift=3,
        ipd_shift=10,
        reset_period=reset_period,
    )
    b.t_conf_fx = tuple(t_conf)[:n_classes]
    b.t_esc = t_esc
    if with_tree:
        b.fallback_tree = fallback.TreeModel(
            n_classes=n_classes,
            max_depth=2,
            trees=[
                [
                    fallback.TreeNode(0, 500, 1, 2),
                    fallback.TreeLeaf(tuple(3 if c == 0 else 0 for c in range(n_classes))),
                    fallback.TreeLeaf(tuple(3 if c == 1 else 0 for c in range(n_classes))),
                ]
            ],
        )
    return b


def three_class_specs(flow_len=(3, 25)):
    lo, hi = flow_len
    return [
        trace.ClassSpec(100, 20, 2_000, 300, 6, lo, hi),
        trace.ClassSpec(900, 100, 30_000, 5_000, 17, lo, hi),
        trace.ClassSpec(400, 50, 8_000, 1_000, 6, lo, hi),
    ]


@pytest.fixture(scope="session")
def demo_bundle():
    return small_bundle()
