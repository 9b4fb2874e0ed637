import os

import numpy as np
import pytest

from advpipe import glyphs, harness, nn
from advpipe.pipeline import RegionSpec

# Trained weights are cached on disk so a full pytest run trains at most
# once; delete the file (or set ADVPIPE_PARAMS_CACHE) to force a retrain.
_CACHE = os.environ.get("ADVPIPE_PARAMS_CACHE",
                        os.path.join(os.path.dirname(__file__), ".params_cache.kosn"))


@pytest.fixture(scope="session")
def trained_params():
    if os.path.exists(_CACHE):
        params = nn.load_params(_CACHE)
        if harness.heldout_accuracy(params) >= harness.GATE_ACCURACY:
            return params
    params = harness.train_recognizer()
    nn.save_params(params, _CACHE)
    return params


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


class IdentityPipelineHandle:
    """Test double whose detector is the identity: the whole document is
    the window, so re-insertion is a plain replacement and the domain
    never changes."""

    def __init__(self, params):
        self.params = params
        self.h1_queries = 0
        self.h2_queries = 0

    def detect_region(self, doc):
        self.h1_queries += 1
        return RegionSpec(top=0, left=0)

    def recognize(self, window):
        self.h2_queries += 1
        return nn.decode_logits(nn.forward(self.params, window))

    def run_pipeline(self, doc):
        region = self.detect_region(doc)
        return self.recognize(doc[:region.height, :region.width]), region


@pytest.fixture()
def identity_handle():
    return IdentityPipelineHandle(nn.init_params(99))


@pytest.fixture(scope="session")
def sample_doc():
    return glyphs.render_document("079.12", 41)
