import json

import pytest

import octgan


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("gan")
    code, _, err = octgan.run_cli(["phantom", "gen", "--out", str(root / "data"), "--n", "16", "--size", "16"])
    assert code == 0, err
    config = {
        "train": {
            "fid_sample_count": 8,
            "generator": {"resolution": 16, "latent_dim": 16, "mapping_depth": 2, "max_channels": 16, "min_channels": 8},
        }
    }
    (root / "config.json").write_text(json.dumps(config))
    code, _, err = octgan.run_cli([
        "train", "--config", str(root / "config.json"), "--data", str(root / "data"),
        "--out", str(root / "run"), "--iterations", "2", "--checkpoint-every", "2",
    ])
    assert code == 0, err
    return root / "run" / "checkpoints" / "iter_0000002.ckpt"
