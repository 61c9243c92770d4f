import numpy as np
import pytest

from physio_forge.models import ArchitectureConfig
from physio_forge.synthbench import BenchmarkSpec, gen_dataset, load_benchmark

# a few hundred short samples: fast to generate and to train on
SMALL_BENCH = BenchmarkSpec(seed=5, samples_per_class=8, K=3, T=96, frames_min=90, frames_max=100)

TINY_ARCH = ArchitectureConfig(
    block_channels=(4, 4), feature_dim=6, mst_input=(7, 16), wav_input=(16, 8), app_input=(8, 8), n_shared=1
)


@pytest.fixture(scope="session")
def small_bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("small_bench")
    gen_dataset(SMALL_BENCH, out)
    return out


@pytest.fixture(scope="session")
def small_bench(small_bench_dir):
    return load_benchmark(small_bench_dir)


@pytest.fixture(scope="session")
def default_bench_dir(tmp_path_factory):
    """The full default benchmark; generated once per session for the slow tests."""
    out = tmp_path_factory.mktemp("default_bench")
    gen_dataset(BenchmarkSpec(), out)
    return out


@pytest.fixture
def tiny_arch():
    return TINY_ARCH


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


GEN_CONFIG = """\
# a tiny benchmark
samples_per_class = 8
K = 3
T = 96
frames_min = 90
frames_max = 100
"""

TRAIN_CONFIG = """\
# a tiny model and a two-epoch recipe
block_channels = 4,4
feature_dim = 6
mst_input = 7x16
wav_input = 16x8
app_input = 8x8
n_shared = 1
epochs = 2
lr_decay_epoch = 2
batch_size = 8
lr = 0.01
"""


@pytest.fixture(scope="session")
def tiny_configs(tmp_path_factory):
    """Config files for the CLI: a tiny benchmark and a tiny two-epoch training run."""
    root = tmp_path_factory.mktemp("configs")
    (root / "gen.cfg").write_text(GEN_CONFIG)
    (root / "train.cfg").write_text(TRAIN_CONFIG)
    return {"gen": root / "gen.cfg", "train": root / "train.cfg"}
