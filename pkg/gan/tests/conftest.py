import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# The toy corpus is produced by the optimizer package; this is test-only usage
# of the dataset contract's canonical writer.  Runtime code never imports it.
from greencap import wesp  # noqa: E402
from greencap.codec import emit_dataset  # noqa: E402
from greencap.instance import no_op_plan  # noqa: E402

sys.path.insert(0, str(Path(__file__).parent.parent.parent / "tests"))
from _family import comfortable_instance  # noqa: E402


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Small solved-artifact corpus: (dataset dir, list of solve artifacts)."""
    root = tmp_path_factory.mktemp("toyds")
    artifacts = []
    for seed in range(6):
        inst, clusters = comfortable_instance(seed, sizes=(1, 1, 2, 3))
        cl = clusters[0]
        x = no_op_plan(inst)
        rep = wesp.run_cg(inst, cl, x, wesp.OPTIMALITY)
        artifacts.append((x, inst, cl, rep))
    manifest = emit_dataset([(x, i, c, r.distribution) for x, i, c, r in artifacts],
                            root, images_per_item=8, rows=20, seed=3)
    return root, artifacts, manifest


@pytest.fixture(scope="session")
def trained(toy_corpus, tmp_path_factory):
    from scenariogan.train import TrainConfig, train

    root, artifacts, _ = toy_corpus
    out = tmp_path_factory.mktemp("train")
    summary = train(root, out, TrainConfig(epochs=120, batch_size=24, lr=5e-4,
                                           checkpoint_every=20, fid_samples=64),
                    seed=0)
    return root, artifacts, out, summary
