import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tokpress.estimators import (
    BipartiteMerger,
    DiversityPruner,
    DominantContextualReducer,
    GptqQuantizer,
    RtnQuantizer,
    TemporalReducer,
    TopKPruner,
    WindowMerger,
)
from tokpress.model import AttentionBundle

from conftest import make_tokens


@pytest.fixture
def image_tokens(rng):
    return make_tokens(rng.normal(size=(16, 8)).astype(np.float32), frames=1, grid=(4, 4))


@pytest.fixture
def cls_bundle(rng):
    return AttentionBundle(cls_to_patch=rng.dirichlet(np.ones(16)))


def test_get_set_params_and_clone():
    est = TopKPruner(k=4, score_source="redundancy")
    params = est.get_params()
    assert params["k"] == 4 and params["score_source"] == "redundancy"
    est.set_params(k=8)
    assert est.k == 8
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()


def test_topk_pruner_with_cls(image_tokens, cls_bundle):
    est = TopKPruner(k=4, score_source="cls")
    out = est.fit(image_tokens, bundle=cls_bundle).transform(image_tokens)
    assert out.n_tokens == 4
    assert est.plan_.n_kept == 4


def test_topk_pruner_redundancy_needs_no_bundle(image_tokens):
    out = TopKPruner(k=6, score_source="redundancy").fit_transform(image_tokens)
    assert out.n_tokens == 6


def test_transform_before_fit_raises(image_tokens):
    with pytest.raises(NotFittedError):
        DiversityPruner(k=4).transform(image_tokens)


def test_diversity_pruner(image_tokens):
    out = DiversityPruner(k=5).fit_transform(image_tokens)
    assert out.n_tokens == 5


def test_bipartite_merger(image_tokens):
    out = BipartiteMerger(r_per_step=3, steps=2).fit_transform(image_tokens)
    assert out.n_tokens == 10
    assert out.weights.sum() == pytest.approx(16)


def test_window_merger():
    t = make_tokens(np.ones((16, 4)), frames=1, grid=(4, 4))
    out = WindowMerger(window_h=2, window_w=2, sim_threshold=0.8).fit_transform(t)
    assert out.n_tokens == 4


def test_dominant_contextual_reducer(image_tokens, cls_bundle):
    est = DominantContextualReducer(k_dominant=4, k_contextual=2, score_source="cls")
    out = est.fit(image_tokens, bundle=cls_bundle).transform(image_tokens)
    assert out.n_tokens == 6


def test_temporal_reducer(rng):
    frame = rng.normal(size=(4, 6)).astype(np.float32)
    video = make_tokens(
        np.concatenate([frame, frame, frame, frame]), frames=4, grid=(2, 2)
    )
    est = TemporalReducer(segmentation="fixed", segment_length=2, merge_rate=0.5)
    out = est.fit_transform(video)
    assert out.n_tokens == 12  # two segments, one non-anchor frame each, half folds
    assert est.partition_.segments == ((0, 2), (2, 4))

    pruned = TemporalReducer(
        segmentation="dp", max_segments=2, merge_rate=0.5, reduce="prune"
    ).fit_transform(video)
    assert pruned.weights.tolist() == [1.0] * pruned.n_tokens


def test_plain_array_coerced(rng):
    data = rng.normal(size=(6, 3))
    out = DiversityPruner(k=3).fit_transform(data)
    assert out.n_tokens == 3


def test_rtn_quantizer(rng):
    w = rng.normal(size=(8, 4))
    est = RtnQuantizer(bits=8, granularity="per-channel")
    w_hat = est.fit().transform(w)
    assert w_hat.shape == w.shape
    assert est.quantized_.spec.bits == 8


def test_gptq_quantizer_requires_fit(rng):
    w = rng.normal(size=(8, 4))
    with pytest.raises(NotFittedError):
        GptqQuantizer().transform(w)
    x = rng.normal(size=(32, 8))
    w_hat = GptqQuantizer(bits=4).fit(x).transform(w)
    assert w_hat.shape == w.shape
